"""Exact ground truth: backward induction, exact policy evaluation and the
soft (logit) value recursion behind the structural data-generating process.
"""
from __future__ import annotations

import csv
import sys
from dataclasses import dataclass

import numpy as np

from .game import (
    EMPTY, P1, GameError, GameSpec, Outcome, State, canonical_form, classify, legal_actions,
)
from .policies import DeterministicPolicy, Policy, TablePolicy
from .space import CONT, DRAW, LOSS, PAYOFF1, WIN, completes_line, state_space

MAX_SOLVE_CELLS = 25


@dataclass
class ValueTable:
    """Exact values v*(s) from player 1's perspective, keyed by canonical key.

    ``optimal`` holds the optimal action set of each non-terminal canonical
    state, expressed in the canonical orientation.
    """

    spec: GameSpec
    values: dict[str, int]
    optimal: dict[str, tuple[int, ...]]

    def __len__(self) -> int:
        return len(self.values)

    def value(self, s: State | tuple) -> int:
        cells = s.cells if isinstance(s, State) else s
        return self.values[canonical_form(self.spec, cells)[0]]

    def optimal_actions(self, s: State) -> list[int]:
        """Every action at ``s`` that attains v*(s); never tie-broken."""
        v = self.value(s)
        out = []
        for a in legal_actions(s):
            cells = list(s.cells)
            cells[a] = s.mover
            if self.value(tuple(cells)) == v:
                out.append(a)
        return out

    def policy(self, tie_break: str = "lowest") -> Policy:
        """Optimal play; ties resolved by lowest cell or uniformly."""
        if tie_break == "lowest":
            return OraclePolicy(self)
        if tie_break == "uniform":
            sp = state_space(self.spec)
            table = {}
            for i in sp.cont_indices:
                s = sp.state(i)
                p = np.zeros(self.spec.cells)
                opt = self.optimal_actions(s)
                p[opt] = 1.0 / len(opt)
                table[s.cells] = p
            return TablePolicy(table, name="oracle-uniform")
        raise ValueError(f"unknown tie_break {tie_break!r}")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["canonical_key", "value", "optimal_actions"])
            for key in sorted(self.values):
                w.writerow([key, self.values[key], " ".join(map(str, self.optimal.get(key, ())))])

    @classmethod
    def from_csv(cls, path, spec: GameSpec) -> "ValueTable":
        values, optimal = {}, {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                values[row["canonical_key"]] = int(row["value"])
                if row["optimal_actions"]:
                    optimal[row["canonical_key"]] = tuple(int(a) for a in row["optimal_actions"].split())
        return cls(spec, values, optimal)


class OraclePolicy(DeterministicPolicy):
    """Optimal play, lowest-index optimal move."""

    def __init__(self, table: ValueTable):
        self.table = table
        self.name = "oracle"
        self._cache: dict[tuple, int] = {}

    def choose(self, s: State) -> int:
        a = self._cache.get(s.cells)
        if a is None:
            a = self._cache[s.cells] = self.table.optimal_actions(s)[0]
        return a


def solve(spec: GameSpec) -> ValueTable:
    """Backward induction over every reachable state, memoized on canonical keys."""
    if spec.cells > MAX_SOLVE_CELLS:
        raise GameError("state space too large for exact solve")
    values: dict[str, int] = {}
    optimal: dict[str, tuple[int, ...]] = {}
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 10 * spec.cells + 100))

    def rec(cells: list[int], mover: int, empties: int, outcome: int) -> int:
        key, g = canonical_form(spec, cells)
        v = values.get(key)
        if v is not None:
            return v
        if outcome != CONT:
            values[key] = int(PAYOFF1[outcome])
            return values[key]
        child_vals = []
        for a in range(spec.cells):
            if cells[a] != EMPTY:
                continue
            cells[a] = mover
            if completes_line(spec, cells, a, mover):
                out = WIN if mover == P1 else LOSS
            else:
                out = DRAW if empties == 1 else CONT
            child_vals.append((a, rec(cells, 3 - mover, empties - 1, out)))
            cells[a] = EMPTY
        pick = max if mover == P1 else min
        v = pick(cv for _, cv in child_vals)
        values[key] = v
        inv = spec.inverse_transforms[g]
        optimal[key] = tuple(sorted(int(inv[a]) for a, cv in child_vals if cv == v))
        return v

    try:
        root = spec.initial()
        rec(list(root.cells), P1, spec.cells, CONT)
    finally:
        sys.setrecursionlimit(limit)
    return ValueTable(spec, values, optimal)


# ------------------------------------------------------- policy evaluation

@dataclass
class PolicyEvalResult:
    """Exact outcome probabilities at every reachable state."""

    spec: GameSpec
    p_win: np.ndarray
    p_loss: np.ndarray
    p_draw: np.ndarray

    def at(self, s: State) -> tuple[float, float, float]:
        i = state_space(self.spec).lookup(s)
        return float(self.p_win[i]), float(self.p_loss[i]), float(self.p_draw[i])

    @property
    def root(self) -> tuple[float, float, float]:
        return float(self.p_win[0]), float(self.p_loss[0]), float(self.p_draw[0])

    def win_score(self, seat: int) -> float:
        """Expected wins + half draws at the root for ``seat``."""
        w, l, d = self.root
        return (w if seat == 1 else l) + 0.5 * d


def check_distribution(s: State, p: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (len(s.cells),):
        raise GameError(f"policy returned shape {p.shape}, expected ({len(s.cells)},)")
    occupied = np.array([c != EMPTY for c in s.cells])
    if np.any(p[occupied] != 0):
        raise GameError("policy puts mass on an illegal action")
    if np.any(p < 0) or abs(p.sum() - 1.0) > tol:
        raise GameError(f"policy probabilities sum to {p.sum()!r}, not 1")
    return p


def policy_value(spec: GameSpec, pi1: Policy, pi2: Policy) -> PolicyEvalResult:
    """Exact (p_win, p_loss, p_draw) when player 1 follows ``pi1`` and player 2 ``pi2``."""
    sp = state_space(spec)
    n = len(sp)
    pw = np.zeros(n)
    pl = np.zeros(n)
    pd = np.zeros(n)
    pw[sp.outcome == WIN] = 1.0
    pl[sp.outcome == LOSS] = 1.0
    pd[sp.outcome == DRAW] = 1.0
    for i in sp.cont_indices[::-1]:
        s = sp.state(i)
        p = check_distribution(s, (pi1 if sp.mover[i] == P1 else pi2).probs(s))
        acts, kids = sp.children(i)
        w = p[acts]
        pw[i] = w @ pw[kids]
        pl[i] = w @ pl[kids]
        pd[i] = w @ pd[kids]
    return PolicyEvalResult(spec, pw, pl, pd)


# ------------------------------------------------------------- soft solve

@dataclass
class SoftValueTable:
    """Soft values (player-1 perspective) and the implied choice distributions."""

    spec: GameSpec
    lam: float
    variant: str
    values: np.ndarray
    choice: dict[tuple, np.ndarray]

    def value(self, s: State) -> float:
        return float(self.values[state_space(self.spec).lookup(s)])

    def probs(self, s: State) -> np.ndarray:
        if classify(s).terminal:
            raise GameError("no actions at terminal state")
        return self.choice[s.cells]

    def policy(self) -> TablePolicy:
        return TablePolicy(self.choice, name=f"soft-{self.lam:g}")


def soft_choice(child_values: np.ndarray, mover: int, lam: float) -> np.ndarray:
    """Softmax of ``lam`` times the mover's own payoff scale."""
    z = lam * (child_values if mover == P1 else -child_values)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def soft_solve(spec: GameSpec, lam: float, variant: str = "transient") -> SoftValueTable:
    """Logit-equilibrium recursion.

    ``transient``: a state's value is the expected child value under the
    mover's softmax choice (the choice shock does not carry forward).
    ``logsumexp``: the value includes the shock surplus, lam^-1 log-sum-exp.
    """
    if not (lam > 0 and np.isfinite(lam)):
        raise ValueError(f"logit scale must be positive and finite, got {lam!r}")
    if variant not in ("transient", "logsumexp"):
        raise ValueError(f"unknown soft-solve variant {variant!r}")
    sp = state_space(spec)
    vals = PAYOFF1[sp.outcome].astype(float)
    choice: dict[tuple, np.ndarray] = {}
    for i in sp.cont_indices[::-1]:
        acts, kids = sp.children(i)
        cv = vals[kids]
        mover = int(sp.mover[i])
        p = soft_choice(cv, mover, lam)
        if variant == "transient":
            vals[i] = p @ cv
        else:
            sign = 1.0 if mover == P1 else -1.0
            z = lam * sign * cv
            zmax = z.max()
            vals[i] = sign * (zmax + np.log(np.exp(z - zmax).sum())) / lam
        full = np.zeros(spec.cells)
        full[acts] = p
        choice[sp.cells_of(i)] = full
    return SoftValueTable(spec, float(lam), variant, vals, choice)


def outcome_of_value(v: int) -> Outcome:
    return {1: Outcome.WIN, -1: Outcome.LOSS, 0: Outcome.DRAW}[v]
