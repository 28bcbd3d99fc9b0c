#!/usr/bin/env python3
"""
Test script for shared utilities
Regression, thread pools, seeding, parsing and file formats
"""

import sys
import os
sys.path.append(os.path.dirname(__file__))

import json
import tempfile

import numpy as np
import pytest

from utils import (DegenerateGridError, EmptyInputError, ValidationError, WassdimError,
                   dump_json, linear_regression, load_point_cloud_csv, make_rng, parse_int_list,
                   parse_int_range, parse_number, parse_scale_grid, resolve_threads, run_parallel,
                   save_point_cloud_csv, to_jsonable)


def test_linear_regression_exact_line():
    """A perfect line has zero slope error"""
    fit = linear_regression([1, 2, 3, 4], [3, 5, 7, 9])
    assert fit['slope'] == pytest.approx(2.0)
    assert fit['intercept'] == pytest.approx(1.0)
    assert fit['r_squared'] == pytest.approx(1.0)
    assert fit['stderr'] == pytest.approx(0.0, abs=1e-6)


def test_linear_regression_matches_polyfit():
    rng = np.random.default_rng(5)
    x = np.linspace(0.0, 3.0, 12)
    y = -0.4 * x + 1.0 + 0.05 * rng.standard_normal(12)
    fit = linear_regression(x, y)
    slope, intercept = np.polyfit(x, y, 1)
    assert fit['slope'] == pytest.approx(slope)
    assert fit['intercept'] == pytest.approx(intercept)
    assert 0.0 < fit['stderr'] < 0.05
    flat = linear_regression([1, 2, 3], [0.7, 0.7, 0.7])
    assert flat['slope'] == pytest.approx(0.0, abs=1e-12)
    assert flat['r_squared'] == 1.0
    assert linear_regression([1, 2], [1, 3])['stderr'] == 0.0


def test_linear_regression_rejects_flat_regressor():
    with pytest.raises(DegenerateGridError):
        linear_regression([2, 2, 2], [1, 2, 3])
    with pytest.raises(ValidationError):
        linear_regression([1], [1])


def test_error_hierarchy():
    assert issubclass(DegenerateGridError, ValidationError)
    assert issubclass(EmptyInputError, WassdimError)


def test_run_parallel_preserves_order():
    """Thread pool results come back in item order"""
    items = list(range(25))
    serial = run_parallel(lambda x: x * x, items, threads=1)
    parallel = run_parallel(lambda x: x * x, items, threads=4)
    assert serial == parallel == [x * x for x in items]


def test_run_parallel_reraises_first_failure():
    def fail_on_odd(x):
        if x % 2:
            raise ValidationError(f"odd {x}")
        return x

    with pytest.raises(ValidationError, match="odd 1"):
        run_parallel(fail_on_odd, list(range(6)), threads=3)


def test_resolve_threads_env(monkeypatch):
    monkeypatch.setenv("WASSDIM_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.delenv("WASSDIM_THREADS")
    assert resolve_threads(None) == 1
    with pytest.raises(ValidationError):
        resolve_threads(0)


def test_make_rng_reproducible():
    a = make_rng([7, 128, 3, 0]).random(5)
    b = make_rng([7, 128, 3, 0]).random(5)
    c = make_rng([7, 128, 3, 1]).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_number_and_grid_parsing():
    assert parse_number("2^-6") == pytest.approx(1 / 64)
    assert parse_number("0.25") == 0.25
    grid = parse_scale_grid("2^-3..2^-6")
    assert grid == pytest.approx([1 / 8, 1 / 16, 1 / 32, 1 / 64])
    assert parse_scale_grid("0.5,0.25") == [0.5, 0.25]
    assert parse_int_range("2..5") == (2, 5)
    assert parse_int_list("128,256,...,8192") == [128, 256, 512, 1024, 2048, 4096, 8192]
    with pytest.raises(ValidationError):
        parse_number("two")
    with pytest.raises(ValidationError):
        parse_int_list("100,200,...,500")


def test_json_conversion_is_sorted_and_plain():
    payload = {'b': np.float64(1.5), 'a': np.arange(3), 'c': float('inf'), 'd': np.bool_(True)}
    text = dump_json(payload)
    assert list(json.loads(text)) == ['a', 'b', 'c', 'd']
    assert to_jsonable(payload)['c'] == "inf"
    assert json.loads(text)['a'] == [0, 1, 2]


def test_point_cloud_csv_round_trip():
    points = np.array([[0.1, 0.2], [0.3, 0.4], [1.0, 0.0]])
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "points.csv")
        save_point_cloud_csv(path, points)
        assert np.allclose(load_point_cloud_csv(path), points)

        empty = os.path.join(tmp, "empty.csv")
        open(empty, 'w').close()
        with pytest.raises(EmptyInputError):
            load_point_cloud_csv(empty)

        labelled = os.path.join(tmp, "labelled.csv")
        with open(labelled, 'w') as f:
            f.write("x,y\n0.5,0.5\n")
        with pytest.raises(ValidationError):
            load_point_cloud_csv(labelled)
        assert load_point_cloud_csv(labelled, header=True).shape == (1, 2)


def run_comprehensive_test():
    """Run all tests and provide summary"""
    print("🚀 WASSDIM UTILITIES - TEST SUITE")
    print("=" * 70)

    tests = [
        ("Linear regression", test_linear_regression_exact_line),
        ("Regression against polyfit", test_linear_regression_matches_polyfit),
        ("Regression degenerate grid", test_linear_regression_rejects_flat_regressor),
        ("Error hierarchy", test_error_hierarchy),
        ("Parallel order", test_run_parallel_preserves_order),
        ("Parallel failure", test_run_parallel_reraises_first_failure),
        ("Seed streams", test_make_rng_reproducible),
        ("Parsing", test_number_and_grid_parsing),
        ("JSON conversion", test_json_conversion_is_sorted_and_plain),
        ("Point cloud CSV", test_point_cloud_csv_round_trip),
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
