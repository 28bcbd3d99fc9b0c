#!/usr/bin/env python3
"""
Test script for ReLU networks
Building blocks, partitions of unity, Taylor approximators and generator networks
"""

import sys
import os
sys.path.append(os.path.dirname(__file__))

import itertools
import tempfile

import numpy as np
import pytest

from holder import HolderSpec, SmoothFunction, builtin_function
from measures import uniform_cube
from relunet import (RELUNET_CONFIG, Activation, ReluNetwork, build_bump_xi, build_clip,
                     build_partition_unity, build_prod2, build_prodd, build_pushforward_generator,
                     build_sq, build_taylor_approximator, builtin_generator, compose, expanded_cells,
                     from_json, generator_w1_gap, identity_embed, load_network, make_layer,
                     parallel_stack, parse_generator, save_network, to_json, unity_defect)
from utils import DimensionMismatchError, RegimeError, ValidationError


def test_network_validation():
    """Widths must compose and the last layer is affine"""
    with pytest.raises(ValidationError):
        ReluNetwork([make_layer([[1.0]], [0.0])])
    with pytest.raises(DimensionMismatchError):
        ReluNetwork([make_layer([[1.0, 1.0]], [0.0]), make_layer([[1.0, 1.0]], [0.0], Activation.IDENTITY)])
    with pytest.raises(DimensionMismatchError):
        build_sq(3).eval(np.zeros((4, 2)))


def test_square_network():
    for m in (2, 4, 6):
        net = build_sq(m)
        dyadic = np.arange(2 ** m + 1) / 2 ** m
        assert net.eval(dyadic.reshape(-1, 1))[:, 0] == pytest.approx(dyadic ** 2, abs=1e-15)
        x = np.linspace(0.0, 1.0, 10001)
        err = np.max(np.abs(net.eval(x.reshape(-1, 1))[:, 0] - x ** 2))
        assert err <= 2.0 ** -(2 * m + 2) + 1e-12
        assert net.stats().max_magnitude <= 4.0
    with pytest.raises(ValidationError):
        build_sq(0)


def test_product_networks():
    rng = np.random.default_rng(1)
    m = 6
    X = rng.uniform(-1, 1, (5000, 2))
    err = np.max(np.abs(build_prod2(m).eval(X)[:, 0] - X[:, 0] * X[:, 1]))
    assert err <= 2 * 2.0 ** -(2 * m + 2) + 1e-12
    axes = np.column_stack([np.zeros(50), rng.uniform(-1, 1, 50)])
    assert np.all(build_prod2(m).eval(axes)[:, 0] == 0.0)
    assert np.all(build_prod2(m).eval(axes[:, ::-1])[:, 0] == 0.0)

    m, d = 8, 3
    X = rng.uniform(-1, 1, (5000, d))
    err = np.max(np.abs(build_prodd(m, d).eval(X)[:, 0] - np.prod(X, axis=1)))
    assert err <= d / 2.0 ** (2 * m - 1)
    with pytest.raises(ValidationError):
        build_prodd(1, 3)


def test_bump_and_clip():
    xi = build_bump_xi(0.3, 0.1)
    x = np.array([-0.4, -0.3, -0.2, 0.0, 0.1, 0.25, 0.5])
    assert xi.eval(x.reshape(-1, 1))[:, 0] == pytest.approx([0.0, 0.0, 0.5, 1.0, 1.0, 0.25, 0.0])
    with pytest.raises(ValidationError):
        build_bump_xi(0.1, 0.3)
    clip = build_clip(2.0, dim=2)
    assert clip.eval(np.array([[-5.0, 1.5]]))[0].tolist() == [-2.0, 1.5]


def test_assembly_preserves_functions():
    xi = build_bump_xi(0.3, 0.1)
    deep = identity_embed(xi, 5)
    x = np.linspace(-0.5, 0.5, 101).reshape(-1, 1)
    assert deep.depth == 5
    assert deep.eval(x) == pytest.approx(xi.eval(x))
    both = parallel_stack([xi, build_sq(3)], shared_input=True)
    assert both.eval(np.array([[0.5]]))[0] == pytest.approx([0.0, 0.25])
    with pytest.raises(DimensionMismatchError):
        compose(build_sq(2), build_clip(1.0, dim=2))


def test_partition_of_unity():
    """Bumps on the (2i+1) eps grid sum to one between the outer plateaus"""
    eps = 0.125
    axis = (2 * np.arange(4) + 1) * eps
    centers = np.array(list(itertools.product(axis, axis)))
    X = np.random.default_rng(3).uniform(0.5 * eps, 1 - 0.5 * eps, (2000, 2))
    assert unity_defect(eps, centers, X) <= 1e-12
    assert unity_defect(eps, centers, X, exact_product=False) <= 1e-3
    assert len(build_partition_unity(eps, centers)) == 16
    with pytest.raises(ValidationError):
        unity_defect(eps, centers + 0.01, X)
    with pytest.raises(ValidationError):
        unity_defect(eps, centers, X, delta=eps)


def test_expanded_cells_reach_outer_ring():
    cells = expanded_cells(np.array([[0.5 / 32]]), 1 / 32, 1)
    assert cells.ravel().tolist() == [-1, 0, 1]


def test_taylor_approximator_identity():
    """Piecewise-linear blending of the identity is within a quarter of eps"""
    hs = HolderSpec(1.0, 2.0, 1)
    for eps in (2.0 ** -4, 2.0 ** -5):
        approx = build_taylor_approximator(builtin_function("identity", 1), hs, eps, uniform_cube(1),
                                           error_draws=5000)
        assert approx.error <= eps / 4 + 1e-9
        assert approx.grid_scale == pytest.approx(eps / 2)
        report = approx.to_dict()
        assert set(report['constants']) == {'a_depth', 'a_weights', 'a_magnitude'}
        assert report['stats']['R'] == 2 * hs.C


def test_taylor_approximator_in_two_dimensions():
    hs = HolderSpec(1.0, 2.0, 2)
    eps = 2.0 ** -4
    approx = build_taylor_approximator(builtin_function("sum", 2), hs, eps, uniform_cube(2), error_draws=4000)
    assert approx.error <= eps
    assert approx.terms > 0 and approx.cells >= approx.terms


def test_taylor_approximator_rejects_bad_inputs():
    cube = SmoothFunction("cube", 1, lambda X: X[:, 0] ** 3)
    hs = HolderSpec(1.0, 1.0, 1)
    with pytest.raises(ValidationError):
        build_taylor_approximator(cube, hs, 2.0 ** -4, uniform_cube(1))
    approx = build_taylor_approximator(cube, hs, 2.0 ** -4, uniform_cube(1), allow_finite_differences=True,
                                       error_draws=2000)
    assert approx.flags
    with pytest.raises(RegimeError):
        build_taylor_approximator(builtin_function("identity", 1), hs, 0.9, uniform_cube(1))
    with pytest.raises(DimensionMismatchError):
        build_taylor_approximator(builtin_function("xy"), hs, 2.0 ** -4, uniform_cube(1))


def test_pushforward_generator():
    G = builtin_generator("parabola")
    latent = uniform_cube(1)
    eps = 2.0 ** -5
    approx = build_pushforward_generator(G, alpha=1.0, C=2.0, eps=eps, latent=latent)
    assert approx.net.output_dim == 2
    gap = generator_w1_gap(approx, G, latent, n=300, seed=4)
    assert gap['w1'] <= gap['shared_coupling_bound'] + 1e-9
    assert gap['shared_coupling_bound'] <= gap['bound']
    assert len(parse_generator("builtin:square_identity")) == 2
    with pytest.raises(ValidationError):
        parse_generator("parabola")
    with pytest.raises(DimensionMismatchError):
        build_pushforward_generator(G, 1.0, 2.0, eps, uniform_cube(2))


def test_network_files():
    net = build_prodd(6, 3)
    X = np.random.default_rng(2).uniform(-1, 1, (100, 3))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "prod3.json")
        save_network(path, net)
        loaded = load_network(path)
    assert loaded.depth == net.depth
    assert np.array_equal(loaded.eval(X), net.eval(X))
    assert to_json(net)['schema'] == "wassdim/1"


def test_sparse_layers_in_json(monkeypatch):
    monkeypatch.setitem(RELUNET_CONFIG, 'dense_json_limit', 4)
    net = build_prod2(4)
    payload = to_json(net)
    assert any('w_sparse' in layer for layer in payload['layers'])
    X = np.random.default_rng(8).uniform(-1, 1, (20, 2))
    assert np.array_equal(from_json(payload).eval(X), net.eval(X))


def run_comprehensive_test():
    """Run all tests and provide summary"""
    print("🚀 WASSDIM RELU NETWORKS - TEST SUITE")
    print("=" * 70)

    tests = [
        ("Network validation", test_network_validation),
        ("Squaring network", test_square_network),
        ("Product networks", test_product_networks),
        ("Bump and clip", test_bump_and_clip),
        ("Assembly", test_assembly_preserves_functions),
        ("Partition of unity", test_partition_of_unity),
        ("Expanded cells", test_expanded_cells_reach_outer_ring),
        ("Taylor identity", test_taylor_approximator_identity),
        ("Taylor in 2-D", test_taylor_approximator_in_two_dimensions),
        ("Taylor input checks", test_taylor_approximator_rejects_bad_inputs),
        ("Pushforward generator", test_pushforward_generator),
        ("Network files", test_network_files),
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
