import math
from itertools import combinations

import numpy as np
import pytest

from dmimo.apselect import (
    ActivationVector,
    InfeasibleSelectionError,
    SelectionProblem,
    brute_force_select,
    greedy_select,
    local_search,
    total_peb,
)
from dmimo.fim import ApGeometry, local_fim_decomposed, los_geometry
from dmimo.mathcore import SPEED_OF_LIGHT, SeededStream, rotation_z
from dmimo.signal_model import LosParams


def random_problem(rng, n_ues=1, n_aps=6, scale=1.0):
    fims = np.zeros((n_ues, n_aps, 3, 3))
    for m in range(n_ues):
        for k in range(n_aps):
            a = rng.normal(size=(3, 3))
            fims[m, k] = scale * (a @ a.T + 0.2 * np.eye(3))
    return SelectionProblem(fims=fims)


def geometric_problem(rng, n_aps=6):
    """APs scattered around a room with direction-structured information,
    the family the scheduler actually runs on."""
    ue = np.array([rng.uniform(2, 8), rng.uniform(2, 5), 1.5])
    fims = np.zeros((1, n_aps, 3, 3))
    c2 = SPEED_OF_LIGHT**2
    for k in range(n_aps):
        geom = ApGeometry(
            position=np.array([rng.uniform(0, 10), rng.uniform(0, 7), 2.5]),
            omega=rng.uniform(-np.pi, np.pi),
        )
        theta, phi, tau = los_geometry(geom, ue)
        f = rng.uniform(0.5, 3.0, 3)
        params = LosParams(theta=theta, phi=phi, tau=tau, alpha_vv=1, alpha_hh=1)
        local = local_fim_decomposed(
            f[0] * c2 * tau**2, f[1] * c2 * tau**2, f[2] * c2, params
        ).matrix
        rot = rotation_z(geom.omega)
        fims[0, k] = rot @ local @ rot.T
    return SelectionProblem(fims=fims)


def rank_one_problem(rng, n_aps=6):
    """Per-AP information is rank one, so small subsets can be singular."""
    fims = np.zeros((1, n_aps, 3, 3))
    for k in range(n_aps):
        u = rng.normal(size=3)
        fims[0, k] = np.outer(u, u)
    return SelectionProblem(fims=fims)


def flags_of(indices, k):
    flags = np.zeros(k, dtype=bool)
    flags[list(indices)] = True
    return flags


class TestTotalPeb:
    def test_single_ap_equals_bound(self, rng):
        problem = random_problem(rng, n_aps=3)
        value = total_peb(flags_of([1], 3), problem)
        expected = float(np.sqrt(np.trace(np.linalg.inv(problem.fims[0, 1]))))
        assert value == pytest.approx(expected)

    def test_all_active_is_minimum(self, rng):
        problem = random_problem(rng, n_aps=5)
        full = total_peb(np.ones(5, dtype=bool), problem)
        for r in range(1, 5):
            for combo in combinations(range(5), r):
                assert full <= total_peb(flags_of(combo, 5), problem) + 1e-12

    def test_nested_monotonicity(self, rng):
        problem = random_problem(rng, n_aps=8)
        for _ in range(100):
            size_a = rng.integers(1, 7)
            subset_a = tuple(rng.choice(8, size=size_a, replace=False))
            extra = tuple(set(range(8)) - set(subset_a))
            add = tuple(rng.choice(extra, size=rng.integers(1, len(extra) + 1), replace=False))
            subset_b = subset_a + add
            assert total_peb(flags_of(subset_b, 8), problem) <= total_peb(
                flags_of(subset_a, 8), problem
            ) + 1e-12

    def test_singular_is_infinite(self, rng):
        problem = rank_one_problem(rng)
        assert math.isinf(total_peb(flags_of([0], 6), problem))

    def test_needs_one_active(self, rng):
        problem = random_problem(rng, n_aps=3)
        with pytest.raises(ValueError):
            total_peb(np.zeros(3, dtype=bool), problem)


class TestGreedy:
    def test_full_budget(self, rng):
        problem = random_problem(rng, n_aps=5)
        out = greedy_select(5, problem)
        assert out.active_indices == (0, 1, 2, 3, 4)

    def test_budget_one_picks_best_single(self, rng):
        problem = random_problem(rng, n_aps=6)
        out = greedy_select(1, problem)
        singles = [total_peb(flags_of([k], 6), problem) for k in range(6)]
        assert out.active_indices == (int(np.argmin(singles)),)

    def test_containment_and_quality(self):
        hits = 0
        for trial in range(50):
            local_rng = SeededStream(404).child(trial).generator()
            problem = geometric_problem(local_rng, n_aps=6)
            greedy = greedy_select(3, problem)
            brute = brute_force_select(3, problem)
            g_obj = total_peb(greedy.flags, problem)
            b_obj = total_peb(brute.flags, problem)
            assert g_obj >= b_obj - 1e-12
            if set(greedy.active_indices) == set(brute.active_indices):
                hits += 1
        assert hits >= 40  # at least 80 percent exact

    def test_infeasible_singles_fall_back_to_pair(self, rng):
        problem = rank_one_problem(rng)
        out = greedy_select(3, problem)
        assert len(out.active_indices) == 3
        assert math.isfinite(total_peb(out.flags, problem))

    def test_budget_one_with_singular_everything(self, rng):
        problem = rank_one_problem(rng)
        with pytest.raises(InfeasibleSelectionError):
            greedy_select(1, problem)


class TestLocalSearch:
    def test_fixed_point_unchanged(self, rng):
        problem = random_problem(rng, n_aps=6)
        brute = brute_force_select(3, problem)
        refined = local_search(brute, problem)
        assert refined.active_indices == brute.active_indices

    def test_objective_non_increasing(self, rng):
        problem = random_problem(rng, n_aps=8)
        initial = ActivationVector(flags=flags_of([5, 6, 7], 8), budget=3)
        refined = local_search(initial, problem)
        assert total_peb(refined.flags, problem) <= total_peb(initial.flags, problem)

    def test_one_swap_optimal(self, rng):
        problem = random_problem(rng, n_aps=7)
        initial = ActivationVector(flags=flags_of([0, 1], 7), budget=2)
        refined = local_search(initial, problem)
        best = total_peb(refined.flags, problem)
        active = set(refined.active_indices)
        for out in active:
            for into in set(range(7)) - active:
                swapped = (active - {out}) | {into}
                assert total_peb(flags_of(swapped, 7), problem) >= best - 1e-12

    def test_greedy_plus_local_near_optimal(self):
        exact, worst_excess = 0, 0.0
        for trial in range(30):
            rng = SeededStream(505).child(trial).generator()
            problem = random_problem(rng, n_aps=8)
            k_prime = int(rng.integers(2, 6))
            refined = local_search(greedy_select(k_prime, problem), problem)
            brute = brute_force_select(k_prime, problem)
            r_obj = total_peb(refined.flags, problem)
            b_obj = total_peb(brute.flags, problem)
            worst_excess = max(worst_excess, r_obj / b_obj - 1.0)
            if set(refined.active_indices) == set(brute.active_indices):
                exact += 1
        assert exact >= math.ceil(0.95 * 30)
        assert worst_excess <= 0.05


class TestBruteForce:
    def test_full_budget(self, rng):
        problem = random_problem(rng, n_aps=4)
        assert brute_force_select(4, problem).active_indices == (0, 1, 2, 3)

    def test_constructed_dominant_pair(self):
        fims = np.zeros((1, 3, 3, 3))
        fims[0, 0] = 100.0 * np.eye(3)
        fims[0, 1] = 90.0 * np.eye(3)
        fims[0, 2] = 1.0 * np.eye(3)
        problem = SelectionProblem(fims=fims)
        assert brute_force_select(2, problem).active_indices == (0, 1)

    def test_never_worse_than_greedy(self, rng):
        for trial in range(20):
            local_rng = SeededStream(606).child(trial).generator()
            problem = random_problem(local_rng, n_aps=7)
            k_prime = int(local_rng.integers(1, 7))
            greedy = local_search(greedy_select(k_prime, problem), problem)
            brute = brute_force_select(k_prime, problem)
            assert total_peb(brute.flags, problem) <= total_peb(greedy.flags, problem) + 1e-12

    def test_budget_guard(self, rng):
        problem = random_problem(rng, n_aps=8)
        fims = np.repeat(problem.fims, 10, axis=1)  # 80 APs
        big = SelectionProblem(fims=fims)
        with pytest.raises(ValueError, match="budget"):
            brute_force_select(40, big)

    def test_deterministic(self, rng):
        problem = random_problem(rng, n_aps=6)
        a = brute_force_select(3, problem)
        b = brute_force_select(3, problem)
        assert a.active_indices == b.active_indices


def test_activation_vector_validates_budget():
    with pytest.raises(ValueError):
        ActivationVector(flags=np.array([True, False]), budget=2)
