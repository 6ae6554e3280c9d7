"""Bound-aware access-point activation.

Chooses which K' of K APs to activate so that the summed position error
bound over the predicted user positions is (near-)minimal: greedy growth
one AP at a time, then single-swap local search, with exhaustive
enumeration available as the optimality oracle. Candidate subsets whose
joint information is singular compare as +inf and are avoided naturally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .mathcore import EIGENVALUE_FLOOR_REL

BRUTE_FORCE_BUDGET = 10**6


class InfeasibleSelectionError(RuntimeError):
    """No activation subset of the requested size yields a finite bound."""


@dataclass(frozen=True, eq=False)
class ActivationVector:
    """Boolean activation flags with exactly `budget` APs switched on."""

    flags: np.ndarray
    budget: int

    def __post_init__(self):
        flags = np.asarray(self.flags, dtype=bool)
        if flags.ndim != 1:
            raise ValueError("flags must be a 1D boolean vector")
        if int(np.sum(flags)) != self.budget:
            raise ValueError("flag count must equal the budget")
        object.__setattr__(self, "flags", flags)

    @property
    def active_indices(self) -> tuple:
        return tuple(int(i) for i in np.nonzero(self.flags)[0])


@dataclass(frozen=True, eq=False)
class SelectionProblem:
    """Per-user, per-AP global-frame position information matrices.

    fims has shape (n_ues, n_aps, 3, 3); entry [m, k] is AP k's
    contribution to locating user m at its predicted position.
    """

    fims: np.ndarray

    def __post_init__(self):
        fims = np.asarray(self.fims, dtype=float)
        if fims.ndim != 4 or fims.shape[2:] != (3, 3):
            raise ValueError("fims must have shape (n_ues, n_aps, 3, 3)")
        if fims.shape[0] < 1 or fims.shape[1] < 1:
            raise ValueError("need at least one UE and one AP")
        object.__setattr__(self, "fims", fims)

    @property
    def n_aps(self) -> int:
        return self.fims.shape[1]

    @property
    def n_ues(self) -> int:
        return self.fims.shape[0]


def _bound_of_sum(fim_sum: np.ndarray) -> float:
    """sqrt(trace(inverse)) or +inf for singular information."""
    eigvals = np.linalg.eigvalsh(0.5 * (fim_sum + fim_sum.T))
    lam_max = eigvals[-1]
    if lam_max <= 0.0 or eigvals[0] <= lam_max * EIGENVALUE_FLOOR_REL:
        return math.inf
    return float(np.sqrt(np.sum(1.0 / eigvals)))


def total_peb(flags, problem: SelectionProblem) -> float:
    """Summed position error bound over all users for one activation.

    Returns +inf when any user's joint information is singular, marking
    the candidate infeasible.
    """
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != (problem.n_aps,):
        raise ValueError("flags length must match the AP count")
    if not flags.any():
        raise ValueError("at least one AP must be active")
    total = 0.0
    joint = problem.fims[:, flags].sum(axis=1)
    for m in range(problem.n_ues):
        bound = _bound_of_sum(joint[m])
        if math.isinf(bound):
            return math.inf
        total += bound
    return total


def _objective(active: tuple, problem: SelectionProblem) -> float:
    flags = np.zeros(problem.n_aps, dtype=bool)
    flags[list(active)] = True
    return total_peb(flags, problem)


def _information_volume(active: tuple, problem: SelectionProblem) -> float:
    """Secondary greedy criterion while every bound is still infinite:
    the summed log-volume of the joint information across users."""
    total = 0.0
    for m in range(problem.n_ues):
        fim_sum = problem.fims[m, list(active)].sum(axis=0)
        eigvals = np.linalg.eigvalsh(0.5 * (fim_sum + fim_sum.T))
        positive = eigvals[eigvals > max(eigvals[-1], 0.0) * EIGENVALUE_FLOOR_REL]
        total += float(np.sum(np.log(positive))) if positive.size else -math.inf
    return total


def greedy_select(k_prime: int, problem: SelectionProblem) -> ActivationVector:
    """Grow the active set one AP at a time, best reduction first.

    Ties break toward the lowest AP index. If every single-AP start is
    infeasible, the search seeds from the best pair over all pairs; while
    every candidate remains infeasible (each AP alone contributes too
    little rank), growth maximizes the joint information volume until the
    bound becomes finite.
    """
    k = problem.n_aps
    if not 1 <= k_prime <= k:
        raise ValueError("budget must lie in [1, number of APs]")
    active: list[int] = []
    while len(active) < k_prime:
        best = None
        for cand in range(k):
            if cand in active:
                continue
            subset = tuple(active) + (cand,)
            value = _objective(subset, problem)
            key = (value, -_information_volume(subset, problem), cand)
            if best is None or key < best[0]:
                best = (key, cand)
        if best is None:
            raise InfeasibleSelectionError("no candidate APs remain")
        if not active and math.isinf(best[0][0]) and k_prime >= 2:
            # No single AP is feasible; seed with the best pair instead.
            pair_best = None
            for pair in combinations(range(k), 2):
                value = _objective(pair, problem)
                key = (value, -_information_volume(pair, problem), pair)
                if pair_best is None or key < pair_best[0]:
                    pair_best = (key, pair)
            active.extend(pair_best[1])
            continue
        active.append(best[1])
    if math.isinf(_objective(tuple(active), problem)):
        raise InfeasibleSelectionError(
            f"no feasible activation found within budget {k_prime}"
        )
    flags = np.zeros(k, dtype=bool)
    flags[active] = True
    return ActivationVector(flags=flags, budget=k_prime)


def local_search(
    initial: ActivationVector, problem: SelectionProblem
) -> ActivationVector:
    """Refine an activation by single swaps until 1-swap optimal.

    Each iteration scans every (inactive in, active out) replacement and
    applies the best strictly improving one; the objective decreases
    strictly at every accepted swap, so termination is guaranteed.
    """
    active = set(initial.active_indices)
    k = problem.n_aps
    current = _objective(tuple(sorted(active)), problem)
    improved = True
    while improved:
        improved = False
        best = None
        for out in sorted(active):
            for into in range(k):
                if into in active:
                    continue
                candidate = tuple(sorted((active - {out}) | {into}))
                value = _objective(candidate, problem)
                if value < current and (best is None or value < best[0]):
                    best = (value, out, into)
        if best is not None:
            current = best[0]
            active.remove(best[1])
            active.add(best[2])
            improved = True
    flags = np.zeros(k, dtype=bool)
    flags[list(active)] = True
    return ActivationVector(flags=flags, budget=initial.budget)


def brute_force_select(k_prime: int, problem: SelectionProblem) -> ActivationVector:
    """Exact optimum by exhaustive enumeration (guarded by subset count).

    Ties break lexicographically on the sorted AP index tuples, which is
    the enumeration order of `itertools.combinations`.
    """
    k = problem.n_aps
    if not 1 <= k_prime <= k:
        raise ValueError("budget must lie in [1, number of APs]")
    if math.comb(k, k_prime) > BRUTE_FORCE_BUDGET:
        raise ValueError(
            f"C({k}, {k_prime}) exceeds the enumeration budget {BRUTE_FORCE_BUDGET}"
        )
    best = None
    for combo in combinations(range(k), k_prime):
        value = _objective(combo, problem)
        if best is None or value < best[0]:
            best = (value, combo)
    if best is None or math.isinf(best[0]):
        raise InfeasibleSelectionError("no feasible activation of this size")
    flags = np.zeros(k, dtype=bool)
    flags[list(best[1])] = True
    return ActivationVector(flags=flags, budget=k_prime)
