#!/usr/bin/env python3
"""
Test script for the Hölder-class machinery
Taylor covers, IPM programs, bump witnesses, codes, minimax families and cell hierarchies
"""

import sys
import os
sys.path.append(os.path.dirname(__file__))

import itertools
import math

import numpy as np
import pytest

from holder import (BoxSet, HolderSpec, bump_witness, boxes_pairwise_disjoint, builtin_function,
                    check_vg_code, dyadic_hierarchy, family_separation, grid_holder_norm_1d,
                    hierarchy_rate_bound, holder_cover, holder_entropy_profile, holder_ipm_lp,
                    ipm_cover_estimate, mass_defect_trials, mcshane_extension, minimax_family,
                    multi_indices, parse_function, total_variation, vg_code)
from measures import make_discrete, uniform_cube
from transport import w1_exact
from utils import CapExceededError, DimensionMismatchError, RegimeError, ValidationError

SEPARATED = np.array([[0.1, 0.1], [0.5, 0.1], [0.9, 0.1], [0.1, 0.6], [0.6, 0.7]])


def random_pair(rng, k=5, d=2):
    P = make_discrete(rng.random((k, d)), rng.random(k) + 0.1)
    Q = make_discrete(rng.random((k, d)), rng.random(k) + 0.1)
    return P, Q


def test_holder_spec_validation():
    """Parameters must be positive and the dimension integral"""
    for bad in ((0.0, 1.0, 2), (1.0, -1.0, 2), (1.0, 1.0, 0), (1.0, 1.0, 1.5)):
        with pytest.raises(ValidationError):
            HolderSpec(*bad)
    hs = HolderSpec(1.5, 2.0, 2)
    assert (hs.degree, hs.gamma) == (1, pytest.approx(0.5))
    assert multi_indices(2, 1) == [(0, 0), (0, 1), (1, 0)]
    assert len(multi_indices(3, 2)) == 10


def test_builtin_functions():
    assert parse_function("builtin:xy").dim == 2
    sin = builtin_function("sin", 2)
    X = np.array([[0.2, 0.3]])
    assert sin.partial(X, (1, 0))[0] == pytest.approx(math.cos(0.5))
    assert sin.partial(X, (1, 1))[0] == pytest.approx(-math.sin(0.5))
    with pytest.raises(ValidationError):
        parse_function("xy")
    with pytest.raises(DimensionMismatchError):
        sin(np.zeros((2, 3)))


def test_cover_members_approximate_smooth_functions():
    """The closest member sits within the cover radius of the target"""
    X = np.random.default_rng(4).random((5000, 2))
    func = builtin_function("sin", 2)
    for eps in (2.0 ** -3, 2.0 ** -4):
        lipschitz = holder_cover(HolderSpec(1.0, 2.0, 2), eps)
        err = np.max(np.abs(lipschitz.evaluate(lipschitz.member(func), X) - func(X)))
        assert err <= 3 * eps
        quadratic = holder_cover(HolderSpec(2.0, 2.0, 2), eps)
        err = np.max(np.abs(quadratic.evaluate(quadratic.member(func), X) - func(X)))
        assert err <= 3 * eps ** 2


def test_cover_counts_and_flags():
    cls = holder_cover(HolderSpec(1.0, 1.0, 1), 0.25)
    assert cls.n_cells == 2
    assert cls.levels == 9
    assert cls.log_members == pytest.approx(2 * math.log(9))
    assert cls.flags == []
    assert holder_cover(HolderSpec(1.5, 1.0, 2), 0.25).flags

    # members vanish off the occupied cells
    sparse_cls = holder_cover(HolderSpec(1.0, 1.0, 2), 0.1, np.array([[0.05, 0.05]]))
    coeffs = np.ones((sparse_cls.n_cells, 1))
    assert sparse_cls.evaluate(coeffs, np.array([[0.9, 0.9], [0.05, 0.05]])).tolist() == [0.0, 1.0]


def test_entropy_grows_like_inverse_scale():
    profile = holder_entropy_profile(HolderSpec(1.0, 1.0, 1), [2.0 ** -k for k in range(3, 9)])
    assert 1.0 <= profile['slope_in_inverse_eps'] <= 1.5
    logs = [row['log_members'] for row in profile['rows']]
    assert logs == sorted(logs)


def test_ipm_two_point_masses():
    """Closed form 2 rho / (2 + rho) for the unit Lipschitz ball"""
    hs = HolderSpec(1.0, 1.0, 1)
    out = holder_ipm_lp(np.array([[0.1]]), np.array([[0.5]]), hs)
    assert out['value'] == pytest.approx(1 / 3, abs=1e-7)
    far = holder_ipm_lp(np.array([[0.0]]), np.array([[1.0]]), hs)
    assert far['value'] == pytest.approx(2 / 3, abs=1e-7)


def test_ipm_bounded_by_transport_and_symmetric():
    rng = np.random.default_rng(12)
    hs = HolderSpec(1.0, 1.5, 2)
    for _ in range(20):
        P, Q = random_pair(rng)
        pq = holder_ipm_lp(P, Q, hs)['value']
        assert pq == pytest.approx(holder_ipm_lp(Q, P, hs)['value'], abs=1e-7)
        assert pq <= hs.C * w1_exact(P, Q, "linf")[0] + 1e-7
        assert holder_ipm_lp(P, P, hs)['value'] == pytest.approx(0.0, abs=1e-9)


def test_mcshane_extension_reproduces_values():
    P, Q = random_pair(np.random.default_rng(6))
    hs = HolderSpec(0.7, 1.0, 2)
    out = holder_ipm_lp(P, Q, hs)
    ext = mcshane_extension(out['atoms'], out['values'], out['L'], out['t0'], hs.beta, out['atoms'])
    assert ext == pytest.approx(out['values'], abs=1e-6)


def test_jet_relaxation_and_limits():
    P, Q = random_pair(np.random.default_rng(9), k=4)
    out = holder_ipm_lp(P, Q, HolderSpec(1.5, 1.0, 2))
    assert out['method'] == "jet_relaxation"
    assert out['value'] >= -1e-9
    assert out['gradients'].shape == (out['atoms'].shape[0], 2)
    with pytest.raises(RegimeError):
        holder_ipm_lp(P, Q, HolderSpec(2.5, 1.0, 2))
    big = make_discrete(np.random.default_rng(0).random((300, 2)))
    with pytest.raises(CapExceededError):
        holder_ipm_lp(big, Q, HolderSpec(1.5, 1.0, 2))


def test_cover_estimate_within_gap_bound():
    rng = np.random.default_rng(21)
    hs = HolderSpec(1.0, 1.0, 2)
    for eps in (2.0 ** -4, 2.0 ** -6):
        P, Q = random_pair(rng, k=6)
        est = ipm_cover_estimate(P, Q, hs, eps)
        assert est.measured_c <= 4.0
        assert abs(est.value - est.lp_value) <= est.prior_gap_bound + 1e-9
        # the class sits inside the 1-Lipschitz ball for C = 1
        assert est.value <= w1_exact(P, Q, "linf")[0] + 2 * 4.0 * eps + 1e-9
        assert est.to_dict()['cover']['eps'] == eps
    with pytest.raises(RegimeError):
        ipm_cover_estimate(P, Q, HolderSpec(3.0, 1.0, 2), 0.1)


def test_cover_estimate_between_point_masses():
    """delta_0 against delta_t is seen as t up to 2 c eps"""
    hs = HolderSpec(1.0, 1.0, 1)
    eps = 2.0 ** -5
    for t in (0.01, 0.05, 0.2):
        P, Q = make_discrete([[0.0]]), make_discrete([[t]])
        est = ipm_cover_estimate(P, Q, hs, eps)
        assert est.lp_value == pytest.approx(2 * t / (2 + t), abs=1e-7)
        assert est.measured_c <= 4.0
        assert abs(est.value - t) <= 2 * 4.0 * eps + t * t / 2
        assert ipm_cover_estimate(P, P, hs, eps).value == pytest.approx(0.0, abs=1e-12)


def test_bump_witness_identity():
    """Disjoint bumps give exactly twice the peak times the total variation"""
    rng = np.random.default_rng(17)
    hs = HolderSpec(1.0, 1.0, 2)
    for _ in range(30):
        p = rng.dirichlet(np.ones(5))
        q = rng.dirichlet(np.ones(5))
        w = bump_witness(SEPARATED, p, q, hs)
        assert w.value == pytest.approx(2 * w.peak * total_variation(p, q), rel=1e-9, abs=1e-15)
        assert w.delta <= w.separation / 3
    with pytest.raises(ValidationError):
        bump_witness(SEPARATED, p, q, hs, delta=0.2)
    with pytest.raises(DimensionMismatchError):
        bump_witness(SEPARATED, p[:3], q, hs)


def test_bump_witness_stays_in_the_ball():
    xs = np.linspace(0.0, 1.0, 4001)
    atoms = np.array([0.2, 0.5, 0.8])
    p, q = np.array([0.6, 0.1, 0.3]), np.array([0.2, 0.5, 0.3])
    for beta in (0.5, 1.0):
        hs = HolderSpec(beta, 1.0, 1)
        w = bump_witness(atoms.reshape(-1, 1), p, q, hs)
        assert grid_holder_norm_1d(w(xs.reshape(-1, 1)), xs, beta) <= hs.C


def test_vg_codes():
    for m in (8, 16, 32, 64):
        checks = check_vg_code(vg_code(m, seed=m), m)
        assert checks['contains_zero']
        assert checks['size'] >= checks['required_size']
        assert checks['min_distance'] >= checks['required_distance']
    assert np.array_equal(vg_code(32, seed=5), vg_code(32, seed=5))
    with pytest.raises(ValidationError):
        vg_code(7)


def test_minimax_family():
    theta = np.linspace(0.0, 1.0, 64).reshape(-1, 1)
    family = minimax_family(theta, n=64 * 64, seed=1)
    assert np.all(family.probs >= 0)
    assert family.probs.sum(axis=1) == pytest.approx(np.ones(family.codewords.shape[0]))
    for a, b in itertools.combinations(range(4), 2):
        hamming = int(np.sum(family.codewords[a] != family.codewords[b]))
        assert family.tv(a, b) == pytest.approx(hamming * family.delta_k / family.k)

    sep = family_separation(family, HolderSpec(1.0, 1.0, 1))
    assert sep['min_value'] == pytest.approx(sep['predicted'], rel=1e-9)
    assert sep['hamming'] >= math.ceil(family.half / 8)

    with pytest.raises(RegimeError):
        minimax_family(theta[:32], n=10 ** 6)
    with pytest.raises(RegimeError):
        minimax_family(theta, n=1000)


def test_box_set_operations():
    unit = BoxSet.from_box([0.0, 0.0], [1.0, 1.0])
    ring = unit.subtract_box(np.array([0.25, 0.25]), np.array([0.75, 0.75]))
    assert ring.volume() == pytest.approx(0.75)
    pieces = [BoxSet(ring.lo[i:i + 1], ring.hi[i:i + 1]) for i in range(ring.n_boxes)]
    assert boxes_pairwise_disjoint(pieces)
    assert ring.contains(np.array([[0.5, 0.5], [0.1, 0.1]])).tolist() == [False, True]
    corner = ring.intersect(BoxSet.from_box([0.5, 0.5], [1.0, 1.0]))
    assert corner.volume() == pytest.approx(0.1875)
    assert corner.mass(uniform_cube(2))[0] == pytest.approx(0.1875)
    assert ring.meets(corner)
    assert BoxSet.from_box([0.3, 0.3], [0.3, 0.9]).is_empty


def test_dyadic_hierarchy_on_uniform_line():
    spec = uniform_cube(1)
    h = dyadic_hierarchy(spec, (0, 1), beta=1.0)
    assert h.dprime == pytest.approx(3.0)
    assert all(h.checks.values())
    for row in h.to_dict()['per_level']:
        assert row['max_diameter'] <= row['diameter_bound'] * (1 + 1e-9)
        assert row['cells'] <= row['cell_bound']
    assert all(p >= 0 for p in h.parent[1])

    defect = mass_defect_trials(h, spec, level=1, n=500, trials=10, seed=3)
    assert defect['mean'] <= defect['bound'] + 3 * defect['sd'] / math.sqrt(10)
    terms = hierarchy_rate_bound(h, 500, HolderSpec(1.0, 1.0, 1))
    assert set(terms) == {'approximation', 'residual', 'coarse', 'chaining', 'total'}
    assert terms['total'] == pytest.approx(sum(v for k, v in terms.items() if k != 'total'))


def test_hierarchy_validation():
    with pytest.raises(RegimeError):
        dyadic_hierarchy(uniform_cube(1), (0, 1), beta=1.0, dprime=2.0)
    with pytest.raises(ValidationError):
        dyadic_hierarchy(uniform_cube(1), (2, 1))


def run_comprehensive_test():
    """Run all tests and provide summary"""
    print("🚀 WASSDIM HÖLDER CLASSES - TEST SUITE")
    print("=" * 70)

    tests = [
        ("Hölder spec", test_holder_spec_validation),
        ("Builtin functions", test_builtin_functions),
        ("Cover approximation", test_cover_members_approximate_smooth_functions),
        ("Cover counts", test_cover_counts_and_flags),
        ("Entropy profile", test_entropy_grows_like_inverse_scale),
        ("IPM point masses", test_ipm_two_point_masses),
        ("IPM vs transport", test_ipm_bounded_by_transport_and_symmetric),
        ("McShane extension", test_mcshane_extension_reproduces_values),
        ("Jet relaxation", test_jet_relaxation_and_limits),
        ("Cover IPM estimate", test_cover_estimate_within_gap_bound),
        ("Cover IPM point masses", test_cover_estimate_between_point_masses),
        ("Bump identity", test_bump_witness_identity),
        ("Bump norm", test_bump_witness_stays_in_the_ball),
        ("VG codes", test_vg_codes),
        ("Minimax family", test_minimax_family),
        ("Box sets", test_box_set_operations),
        ("Cell hierarchy", test_dyadic_hierarchy_on_uniform_line),
        ("Hierarchy validation", test_hierarchy_validation),
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
