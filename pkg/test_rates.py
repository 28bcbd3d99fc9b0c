#!/usr/bin/env python3
"""
Test script for convergence-rate experiments
Slope fits, theory verdicts, end-to-end runs and report files
"""

import sys
import os
sys.path.append(os.path.dirname(__file__))

import tempfile

import numpy as np
import pytest

from measures import cantor_product_for_dimension, geometric_lattice, uniform_cube
from rates import (RateReport, compare_to_theory, fit_loglog_slope, load_raw_values, load_report,
                   raw_csv_path, resolve_dstar, run_rate_experiment, save_report)
from utils import CapExceededError, DegenerateGridError, ValidationError

LINE_GRID = [32, 64, 128, 256, 512, 1024, 2048]


def stub_report(slope: float) -> RateReport:
    return RateReport(measure={}, metric="w1", n_grid=[], trials=10, seed=0, ref_factor=16, reference={},
                      values=[], means=[], sds=[], slope=slope, slope_stderr=0.0, intercept=0.0, fit_window=[])


def test_fit_loglog_slope():
    """Exact power laws are recovered to rounding"""
    ns = [2 ** k for k in range(7, 14)]
    slope, stderr = fit_loglog_slope([(n, 3.0 * n ** -0.5) for n in ns])
    assert slope == pytest.approx(-0.5, abs=1e-10)
    assert stderr == pytest.approx(0.0, abs=1e-6)
    assert fit_loglog_slope([(n, 0.7) for n in ns])[0] == pytest.approx(0.0, abs=1e-12)

    noise = np.random.default_rng(0).standard_normal(len(ns))
    slope, _ = fit_loglog_slope([(n, 2.0 * n ** -0.4 * (1 + 0.01 * e)) for n, e in zip(ns, noise)])
    assert slope == pytest.approx(-0.4, abs=0.02)

    with pytest.raises(DegenerateGridError):
        fit_loglog_slope([(1, 1.0), (2, 0.5), (4, 0.25)])
    with pytest.raises(ValidationError):
        fit_loglog_slope([(1, 1.0), (2, 0.0), (4, 0.25), (8, 0.1)])


def test_theory_verdicts():
    verdict = compare_to_theory(stub_report(-0.52), dstar=2.0, beta=1.0, tolerance=0.1)
    assert verdict['verdict'] == "PASS"
    assert verdict['theory_slope'] == pytest.approx(-0.5)
    assert verdict['margin'] == pytest.approx(0.12)
    report = stub_report(-0.2)
    assert compare_to_theory(report, 2.0, 1.0, 0.1)['verdict'] == "FAIL"
    assert report.theory['verdict'] == "FAIL"
    with pytest.raises(ValidationError):
        compare_to_theory(report, 0.0)


def test_resolve_dstar():
    assert resolve_dstar(uniform_cube(2), 1.0) == pytest.approx(2.0)
    assert resolve_dstar(uniform_cube(3), 1.0) == pytest.approx(3.0)
    assert resolve_dstar(geometric_lattice(3), 1.0) == pytest.approx(2.0)
    assert resolve_dstar(uniform_cube(1), 1.0, "2.5") == 2.5
    with pytest.raises(ValidationError):
        resolve_dstar(uniform_cube(1), 1.0, -1)


def test_grid_checks():
    spec = uniform_cube(1)
    with pytest.raises(ValidationError):
        run_rate_experiment(spec, [64, 32, 128, 2048], trials=10)
    with pytest.raises(DegenerateGridError):
        run_rate_experiment(spec, [32, 320, 3200], trials=10)
    with pytest.raises(DegenerateGridError):
        run_rate_experiment(spec, [100, 200, 400, 800], trials=10)
    with pytest.raises(ValidationError):
        run_rate_experiment(spec, LINE_GRID, trials=5)
    with pytest.raises(ValidationError):
        run_rate_experiment(spec, LINE_GRID, trials=10, metric="tv")


def test_uniform_line_rate():
    """E W1 on the line decays like n^(-1/2)"""
    report = run_rate_experiment(uniform_cube(1), LINE_GRID, trials=10, seed=5, reference="exact", n0=32)
    assert report.slope == pytest.approx(-0.5, abs=0.15)
    assert report.checks['means_nonincreasing']
    assert set(report.reference.values()) == {"exact"}
    assert report.fit_window == LINE_GRID
    assert compare_to_theory(report, resolve_dstar(uniform_cube(1), 1.0))['verdict'] == "PASS"
    assert all(len(v) == 10 for v in report.values)
    assert all(sd >= 0 for sd in report.sds)


def test_reports_do_not_depend_on_threads():
    grid = [8, 16, 32, 64, 128, 256]
    a = run_rate_experiment(uniform_cube(1), grid, trials=10, seed=2, threads=1)
    b = run_rate_experiment(uniform_cube(1), grid, trials=10, seed=2, threads=4)
    assert a.values == b.values
    assert a.config['ref_sizes']['8'] == 128
    assert any("biased upward" in note for note in a.notes)
    # fewer than four sizes above the default n0 = 128
    assert any("fitting all sizes" in note for note in a.notes)


def test_one_reference_mode_per_experiment():
    """Sizes that would fit the exact solver still share the two-sample estimator"""
    report = run_rate_experiment(uniform_cube(2), [16, 32, 64, 128, 256, 512], trials=10, seed=3)
    assert len(set(report.reference.values())) == 1
    assert report.reference['16'] == "twosample"
    assert report.config['ref_sizes']['16'] == 16
    small = run_rate_experiment(uniform_cube(2), [4, 8, 16, 32, 64, 128], trials=10, seed=3)
    assert set(small.reference.values()) == {"sample"}


PRIMARY_GRID = [2 ** k for k in range(7, 14)]


@pytest.mark.slow
def test_uniform_square_rate():
    report = run_rate_experiment(uniform_cube(2), PRIMARY_GRID, trials=20, seed=0)
    assert len(set(report.reference.values())) == 1
    assert report.slope == pytest.approx(-0.5, abs=0.15)


@pytest.mark.slow
def test_geometric_lattice_rate():
    report = run_rate_experiment(geometric_lattice(3), PRIMARY_GRID, trials=20, seed=0)
    assert report.slope <= -0.4


@pytest.mark.slow
def test_cantor_product_rate():
    report = run_rate_experiment(cantor_product_for_dimension(2.5), PRIMARY_GRID, trials=20, seed=0)
    assert len(set(report.reference.values())) == 1
    assert report.slope == pytest.approx(-0.4, abs=0.1)


def test_holder_ipm_rate():
    grid = [2, 4, 8, 16, 32, 64]
    report = run_rate_experiment(uniform_cube(1), grid, trials=10, seed=1, metric="holder_ipm",
                                 ref_factor=2, n0=1)
    assert report.metric == "holder_ipm"
    assert report.slope < 0
    assert report.config['ref_sizes']['64'] == 128
    assert all(v >= -1e-9 for row in report.values for v in row)
    with pytest.raises(CapExceededError):
        run_rate_experiment(uniform_cube(1), [8, 16, 32, 64, 128, 256], trials=10, metric="holder_ipm")


def test_report_files():
    report = run_rate_experiment(uniform_cube(1), LINE_GRID, trials=10, seed=9, reference="exact")
    compare_to_theory(report, 2.0)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "rate.json")
        csv_path = save_report(path, report)
        assert csv_path == raw_csv_path(path) == os.path.join(tmp, "rate.csv")
        loaded = load_report(path)
        frame = load_raw_values(csv_path)
    assert loaded.slope == report.slope
    assert loaded.theory['verdict'] == report.theory['verdict']
    assert len(frame) == len(LINE_GRID) * 10
    assert list(frame.columns) == ['n', 'trial', 'value', 'reference']
    assert frame.groupby('n')['value'].mean().tolist() == pytest.approx(report.means)
    with pytest.raises(ValidationError):
        RateReport.from_dict({'schema': "other/0"})


def run_comprehensive_test():
    """Run all tests and provide summary"""
    print("🚀 WASSDIM RATES - TEST SUITE")
    print("=" * 70)

    tests = [
        ("Log-log slope", test_fit_loglog_slope),
        ("Theory verdicts", test_theory_verdicts),
        ("Reference dimension", test_resolve_dstar),
        ("Grid checks", test_grid_checks),
        ("Uniform line rate", test_uniform_line_rate),
        ("Thread independence", test_reports_do_not_depend_on_threads),
        ("Single reference mode", test_one_reference_mode_per_experiment),
        ("Uniform square rate", test_uniform_square_rate),
        ("Geometric lattice rate", test_geometric_lattice_rate),
        ("Cantor product rate", test_cantor_product_rate),
        ("Hölder IPM rate", test_holder_ipm_rate),
        ("Report files", test_report_files),
    ]

    passed = 0
    for test_name, test_func in tests:
        try:
            test_func()
            passed += 1
            print(f"✅ {test_name}: PASSED")
        except Exception as e:
            print(f"❌ {test_name}: FAILED - {str(e)}")

    print(f"\n🎯 TEST SUMMARY: {passed}/{len(tests)} tests passed")
    return passed == len(tests)


if __name__ == "__main__":
    success = run_comprehensive_test()
    exit(0 if success else 1)
