import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctmcgp.ctmc import ObservationSequence, RateMatrix, build_rate_matrix, matrix_exponential, normalize
from ctmcgp.errors import GuardError, InputError, StateError
from ctmcgp.likelihood import (
    TipData, brute_force_tree_loglik, loglik_fully_observed, loglik_sequential,
    preorder_partials, tree_loglik, tree_loglik_sites,
)
from ctmcgp.tree import Phylogeny, caterpillar_tree, random_tree, yule_tree

from conftest import random_generator

HALF = np.array([0.5, 0.5])


def sym2():
    return normalize(build_rate_matrix(np.zeros(2)))


def random_rates(S, rng):
    pi = rng.dirichlet(np.ones(S))
    return normalize(RateMatrix(random_generator(S, rng), pi, rng.dirichlet(np.ones(S))))


def test_fully_observed_single_observation():
    path = ObservationSequence((0,), (0.0,), fully_observed=True)
    assert loglik_fully_observed(path, sym2()) == pytest.approx(-0.6931472, abs=1e-7)


def test_fully_observed_one_jump():
    path = ObservationSequence((0, 1), (0.0, 0.3), fully_observed=True, horizon=0.3)
    assert loglik_fully_observed(path, sym2()) == pytest.approx(-0.9931472, abs=1e-7)


def test_fully_observed_rejects_discrete_sequence():
    with pytest.raises(InputError):
        loglik_fully_observed(ObservationSequence((0, 1), (0.0, 1.0)), sym2())


def test_sequential_single_observation():
    assert loglik_sequential(ObservationSequence((0,), (0.0,)), sym2()) == pytest.approx(-0.6931472, abs=1e-7)


def test_sequential_two_state_example():
    ll = loglik_sequential(ObservationSequence((0, 0), (0.0, 1.0)), sym2())
    assert ll == pytest.approx(-1.2593664, abs=1e-6)


def test_sequential_chains_transition_matrices(rng):
    r = random_rates(3, rng)
    obs = ObservationSequence((2, 0, 1), (0.0, 0.4, 1.5))
    P1 = matrix_exponential(r.normalized, 0.4).P
    P2 = matrix_exponential(r.normalized, 1.1).P
    expected = math.log(r.pi_init[2] * P1[2, 0] * P2[0, 1])
    assert loglik_sequential(obs, r) == pytest.approx(expected, abs=1e-12)


def test_sequential_impossible_is_minus_inf():
    r = normalize(RateMatrix(np.array([[-1.0, 1, 0], [1, -1, 0], [0, 0, 0]]), np.ones(3) / 3, np.ones(3) / 3))
    assert loglik_sequential(ObservationSequence((0, 2), (0.0, 1.0)), r) == -math.inf


def test_tree_zero_branches_consistent_tips():
    tree = Phylogeny([2, 2, -1], [[-1, -1], [-1, -1], [0, 1]], [0.0, 0.0, 0.0], ("a", "b"))
    ll, _ = tree_loglik(tree, [0, 0], sym2(), root_dist=HALF)
    assert ll == pytest.approx(math.log(0.5), abs=1e-15)


def test_tree_three_tip_example():
    tree = Phylogeny.from_clades([(0, 1), (2, 3)], [0.4, 0.4, 0.8, 0.3, 0.0], ("a", "b", "c"))
    for tips in ([0, 0, 0], [0, 1, 0], [1, 1, 0]):
        ll, _ = tree_loglik(tree, tips, sym2())
        assert ll == pytest.approx(brute_force_tree_loglik(tree, tips, sym2()), abs=1e-12)


def test_tree_impossible_under_one_hot_root():
    r = normalize(RateMatrix(np.array([[-1.0, 1, 0], [1, -1, 0], [0, 0, 0]]), np.ones(3) / 3, np.ones(3) / 3))
    tree = Phylogeny([2, 2, -1], [[-1, -1], [-1, -1], [0, 1]], [1.0, 1.0, 0.0], ("a", "b"))
    ll, _ = tree_loglik(tree, [2, 2], r, root_dist=[1.0, 0, 0])
    assert ll == -math.inf


def test_single_tip_tree():
    tree = Phylogeny([-1], [[-1, -1]], [0.0], ("a",))
    root = np.array([0.2, 0.8])
    assert brute_force_tree_loglik(tree, [1], sym2(), root) == pytest.approx(math.log(0.8))
    assert tree_loglik(tree, [1], sym2(), root)[0] == pytest.approx(math.log(0.8))


def test_brute_force_guard(rng):
    tree = random_tree(22, rng)
    with pytest.raises(GuardError):
        brute_force_tree_loglik(tree, np.zeros(22, dtype=int), sym2())


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 5), S=st.integers(2, 3))
def test_pruning_equals_enumeration(seed, n, S):
    rng = np.random.default_rng(seed)
    tree = random_tree(n, rng)
    r = random_rates(S, rng)
    tips = rng.integers(0, S, size=n)
    ll, _ = tree_loglik(tree, tips, r)
    assert ll == pytest.approx(brute_force_tree_loglik(tree, tips, r), abs=1e-12)


def test_node_loglik_is_constant(rng):
    tree = yule_tree(30, rng, height=2.0)
    r = random_rates(4, rng)
    tips = rng.integers(0, 4, size=30)
    ll, part = tree_loglik(tree, tips, r)
    preorder_partials(tree, part)
    np.testing.assert_allclose(part.node_loglik(), ll, rtol=1e-10)
    np.testing.assert_array_equal(part.pre[tree.root] * np.exp(part.pre_scale[tree.root]), r.pi_init)


def test_node_loglik_needs_preorder(rng):
    tree = random_tree(4, rng)
    _, part = tree_loglik(tree, [0, 1, 0, 1], sym2())
    with pytest.raises(StateError):
        part.node_loglik()


def test_large_tree_stays_finite(rng):
    tree = yule_tree(2000, rng, height=20.0)
    r = random_rates(8, rng)
    ll, _ = tree_loglik(tree, rng.integers(0, 8, size=2000), r)
    assert np.isfinite(ll) and ll < 0


def test_caterpillar_equals_sequential(rng):
    r = random_rates(4, rng)
    gaps = rng.exponential(0.5, size=9)
    obs = ObservationSequence(rng.integers(0, 4, size=10), np.concatenate([[0.0], np.cumsum(gaps)]))
    ll_tree, _ = tree_loglik(caterpillar_tree(gaps), np.asarray(obs.states), r)
    assert ll_tree == pytest.approx(loglik_sequential(obs, r), abs=1e-10)


def test_state_permutation_equivariance(rng):
    S = 4
    tree = random_tree(5, rng)
    r = random_rates(S, rng)
    tips = rng.integers(0, S, size=5)
    perm = rng.permutation(S)
    inv = np.argsort(perm)
    Q = r.Q[np.ix_(inv, inv)]
    rp = normalize(RateMatrix(Q, r.pi[inv], r.pi_init[inv]))
    a, _ = tree_loglik(tree, tips, r)
    b, _ = tree_loglik(tree, perm[tips], rp)
    assert b == pytest.approx(a, abs=1e-12)


def test_tip_data_validation(rng):
    tree = random_tree(3, rng)
    with pytest.raises(InputError):
        TipData.from_mapping({0: 1, 1: 0}, tree, 2)
    with pytest.raises(InputError):
        tree_loglik(tree, [0, 1, 2], sym2())


def test_raw_generator_needs_root(rng):
    tree = random_tree(3, rng)
    with pytest.raises(InputError):
        tree_loglik(tree, [0, 1, 0], sym2().normalized)


def test_sites_share_branches(rng):
    tree = random_tree(6, rng)
    r = random_rates(3, rng)
    sites = [rng.integers(0, 3, size=6) for _ in range(4)]
    total, parts = tree_loglik_sites(tree, sites, r)
    assert total == pytest.approx(sum(tree_loglik(tree, s, r)[0] for s in sites), abs=1e-12)
    assert len(parts) == 4
