#!/usr/bin/env python3
"""
Test script for the measure zoo
Sampling, exact box masses, truncation and the measure mini-language
"""

import sys
import os
sys.path.append(os.path.dirname(__file__))

import math
import tempfile

import numpy as np
import pytest

from measures import (Box, MeasureKind, box_mass, box_mass_with_error, box_masses, builtin_pushforward,
                      cantor_alpha_for_dimension, cantor_cdf, cantor_dimension, cantor_product,
                      cantor_product_for_dimension, describe, discrete_atoms, empirical_measure,
                      geometric_lattice, lattice_tail_numerator, make_discrete, parse_measure,
                      reciprocal_lattice, sample, truncate, uniform_cube)
from utils import CapExceededError, DimensionMismatchError, DomainError, ValidationError, save_point_cloud_csv


def test_sampling_is_seeded():
    """Equal seeds give equal samples, other seeds differ"""
    for spec in (uniform_cube(3), geometric_lattice(2), cantor_product(1 / 3, 1, 1)):
        a = sample(spec, 200, seed=11)
        b = sample(spec, 200, seed=11)
        c = sample(spec, 200, seed=12)
        assert a.shape == (200, spec.dim)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert a.min() >= 0.0 and a.max() <= 1.0


def test_cantor_samples_avoid_removed_gaps():
    X = sample(cantor_product(1 / 3, 1), 5000, seed=0)[:, 0]
    assert not np.any((X > 1 / 3 + 1e-9) & (X < 2 / 3 - 1e-9))
    assert not np.any((X > 1 / 9 + 1e-9) & (X < 2 / 9 - 1e-9))


def test_lattice_samples_on_atoms():
    X = sample(geometric_lattice(2), 2000, seed=1)
    levels = -np.log2(1.0 - X[X < 1.0])
    assert np.allclose(levels, np.round(levels))
    Y = sample(reciprocal_lattice(1), 2000, seed=1)[:, 0]
    assert np.allclose(1.0 / Y, np.round(1.0 / Y))
    # weight 2^-n on level n
    assert np.mean(Y == 1.0) == pytest.approx(0.5, abs=0.05)


def test_pushforward_samples_follow_generator():
    spec = builtin_pushforward("parabola")
    X = sample(spec, 500, seed=2)
    assert spec.dim == 2
    assert np.allclose(X[:, 1], X[:, 0] ** 2)
    seg = parse_measure("pushforward:gen=segment,d=4")
    Y = sample(seg, 50, seed=2)
    assert np.allclose(Y, Y[:, :1])


def test_exact_box_masses():
    assert box_mass(uniform_cube(2), Box([0.1, 0.2], [0.6, 0.4])) == pytest.approx(0.1)
    assert box_mass(cantor_product(1 / 3, 1), Box([0.0], [0.5])) == pytest.approx(0.5)
    # geometric lattice atoms 1/2, 3/4, ...; only 1/2 lies below 0.6
    assert box_mass(geometric_lattice(1), Box([0.0], [0.6])) == pytest.approx(0.5)
    # reciprocal lattice atoms 1 and 1/2 lie in [0.4, 1]
    assert box_mass(reciprocal_lattice(1), Box([0.4], [1.0])) == pytest.approx(0.75)
    assert box_mass(geometric_lattice(3), Box.unit(3)) == pytest.approx(1.0)
    padded = cantor_product(1 / 3, 1, 1, pad=1)
    assert box_mass(padded, Box([0, 0, 0.1], [1, 1, 1])) == 0.0


def test_box_masses_batch_matches_single():
    spec = cantor_product(0.5, 1, 1)
    los = np.array([[0.0, 0.0], [0.2, 0.5], [0.7, 0.1]])
    his = np.array([[0.3, 1.0], [0.9, 0.75], [1.0, 0.2]])
    batch = box_masses(spec, los, his)
    single = [box_mass(spec, Box(lo, hi)) for lo, hi in zip(los, his)]
    assert batch == pytest.approx(single)


def test_cantor_cdf_against_samples():
    ratio = cantor_product(0.5, 1).cantor_ratio
    X = sample(cantor_product(0.5, 1), 20000, seed=4)[:, 0]
    for t in (0.1, 0.3, 0.8):
        assert np.mean(X < t) == pytest.approx(float(cantor_cdf(t, ratio)), abs=0.02)


def test_pushforward_mass_has_error_bar():
    spec = builtin_pushforward("parabola")
    mass, se = box_mass_with_error(spec, Box([0.0, 0.0], [0.5, 1.0]), draws=20000)
    assert mass == pytest.approx(0.5, abs=4 * se + 1e-3)
    assert se > 0


def test_truncation_captures_mass():
    for spec in (geometric_lattice(2), reciprocal_lattice(1)):
        dm = truncate(spec, 0.01)
        assert dm.captured_mass >= 0.99
        assert math.fsum(dm.weights) == pytest.approx(1.0)
        assert dm.tail_mass == pytest.approx(1.0 - dm.captured_mass)
    atoms = discrete_atoms(np.array([[0.1], [0.5], [0.9]]), [0.6, 0.3, 0.1])
    dm = truncate(atoms, 0.2)
    assert dm.size == 2
    assert dm.captured_mass == pytest.approx(0.9)


def test_lattice_truncation_tracks_exact_tail():
    """Tails below double resolution are reached without running into the atom cap"""
    assert lattice_tail_numerator(3, 2) == 4
    assert lattice_tail_numerator(3, 1) == 1
    dm = truncate(geometric_lattice(1), 1 / 8)
    assert dm.size == 3
    assert dm.tail_mass == 1 / 8
    for d in (2, 3):
        dm = truncate(geometric_lattice(d), 5e-16)
        assert 0.0 < dm.tail_mass <= 5e-16
        assert dm.size < 100000
        assert math.fsum(dm.weights) == pytest.approx(1.0)


def test_truncation_needs_surrogate_for_continuous():
    with pytest.raises(ValidationError):
        truncate(uniform_cube(2), 0.1)
    dm = truncate(uniform_cube(2), 0.1, surrogate_depth=3)
    assert dm.size == 64
    with pytest.raises(CapExceededError):
        truncate(uniform_cube(3), 0.1, surrogate_depth=8, max_atoms=1000)


def test_make_discrete_merges_duplicates():
    dm = make_discrete(np.array([[0.2, 0.2], [0.5, 0.5], [0.2, 0.2]]))
    assert dm.size == 2
    assert dm.weights == pytest.approx([2 / 3, 1 / 3])
    assert empirical_measure(np.array([0.1, 0.1, 0.4])).size == 2
    with pytest.raises(DimensionMismatchError):
        make_discrete(np.zeros((3, 1)), [1, 2])


def test_cantor_dimension_helpers():
    assert cantor_dimension(1 / 3) == pytest.approx(math.log(2) / math.log(3))
    assert cantor_dimension(cantor_alpha_for_dimension(0.5)) == pytest.approx(0.5)
    spec = cantor_product_for_dimension(2.5)
    assert (spec.cantor_factors, spec.uniform_factors, spec.dim) == (1, 2, 3)
    assert describe(spec)['cantor_dimension'] == pytest.approx(0.5)
    assert cantor_product_for_dimension(1.5, ambient=4).padding == 2


def test_parse_measure_forms():
    assert parse_measure("uniform:d=2").kind is MeasureKind.UNIFORM_CUBE
    assert parse_measure("geomlattice:d=1").dim == 1
    assert parse_measure("reciplattice:d=2").kind is MeasureKind.RECIPROCAL_LATTICE
    spec = parse_measure("cantor:alpha=0.3333,cantor=1,unif=2")
    assert (spec.cantor_factors, spec.uniform_factors) == (1, 2)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "atoms.csv")
        save_point_cloud_csv(path, np.array([[0.25, 0.75], [0.5, 0.5]]))
        atoms = parse_measure(f"atoms:file={path}")
        assert atoms.kind is MeasureKind.DISCRETE_ATOMS and atoms.atoms.shape == (2, 2)
    with pytest.raises(ValidationError):
        parse_measure("gaussian:d=2")
    with pytest.raises(ValidationError):
        parse_measure("uniform:d")
    with pytest.raises(ValidationError):
        parse_measure("uniform:")


def test_domain_checks():
    with pytest.raises(DomainError):
        discrete_atoms(np.array([[1.5]]))
    with pytest.raises(DomainError):
        box_mass(uniform_cube(1), Box([-0.5], [0.5]))
    with pytest.raises(ValidationError):
        sample(uniform_cube(1), 0)
    assert "flags" in describe(reciprocal_lattice(2))
    assert describe(reciprocal_lattice(2))['flags']


def run_comprehensive_test():
    """Run all tests and provide summary"""
    print("🚀 WASSDIM MEASURES - TEST SUITE")
    print("=" * 70)

    tests = [
        ("Seeded sampling", test_sampling_is_seeded),
        ("Cantor gaps", test_cantor_samples_avoid_removed_gaps),
        ("Lattice atoms", test_lattice_samples_on_atoms),
        ("Pushforward sampling", test_pushforward_samples_follow_generator),
        ("Exact box masses", test_exact_box_masses),
        ("Batch box masses", test_box_masses_batch_matches_single),
        ("Cantor distribution function", test_cantor_cdf_against_samples),
        ("Pushforward masses", test_pushforward_mass_has_error_bar),
        ("Truncation", test_truncation_captures_mass),
        ("Exact lattice tails", test_lattice_truncation_tracks_exact_tail),
        ("Continuous truncation", test_truncation_needs_surrogate_for_continuous),
        ("Discrete measures", test_make_discrete_merges_duplicates),
        ("Cantor dimensions", test_cantor_dimension_helpers),
        ("Mini-language", test_parse_measure_forms),
        ("Domain checks", test_domain_checks),
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
