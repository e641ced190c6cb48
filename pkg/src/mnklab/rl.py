"""Policy improvement by best-response iteration behind a win-score gate.

Policies are handled as matrices over the reachable state space (one row per
state index, one column per cell) so exact head-to-head evaluation and exact
best responses are a single backward sweep each.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .game import GameSpec
from .oracle import ValueTable, solve
from .policies import Policy, TablePolicy, UniformPolicy, play_game
from .space import LOSS, WIN, state_space

OPERATORS = ("exact_best_response", "simulated_greedy")


def policy_matrix(spec: GameSpec, policy: Policy) -> np.ndarray:
    sp = state_space(spec)
    P = np.zeros((len(sp), spec.cells))
    for i in sp.cont_indices:
        P[i] = policy.probs(sp.state(i))
    return P


def matrix_policy(spec: GameSpec, P: np.ndarray, name: str = "table") -> TablePolicy:
    sp = state_space(spec)
    return TablePolicy({sp.cells_of(i): P[i].copy() for i in sp.cont_indices}, name=name)


def _terminal_score(spec: GameSpec) -> np.ndarray:
    """Player 1's win-score at terminal states (0 elsewhere)."""
    sp = state_space(spec)
    return np.where(sp.outcome == WIN, 1.0, np.where(sp.outcome == LOSS, 0.0, 0.5))


def seat_scores(spec: GameSpec, P1: np.ndarray, P2: np.ndarray) -> np.ndarray:
    """Player 1's exact expected win-score from every state when P1 plays rows of ``P1``."""
    sp = state_space(spec)
    v = _terminal_score(spec)
    for i in sp.cont_indices[::-1]:
        acts, kids = sp.children(i)
        P = P1 if sp.mover[i] == 1 else P2
        v[i] = P[i, acts] @ v[kids]
    return v


def head_to_head(spec: GameSpec, A: np.ndarray, B: np.ndarray) -> float:
    """Exact seat-balanced win-score of policy ``A`` against ``B``."""
    as_first = seat_scores(spec, A, B)[0]
    as_second = 1.0 - seat_scores(spec, B, A)[0]
    return float(0.5 * (as_first + as_second))


def best_response(spec: GameSpec, opponent: np.ndarray, lam: float | None = None) -> np.ndarray:
    """Exact best response (both seats) to a fixed opponent policy matrix.

    With ``lam`` None the response splits evenly over tied best moves;
    otherwise it is the softmax of ``lam`` times the continuation win-scores.
    """
    sp = state_space(spec)
    term = _terminal_score(spec)
    # v1: player 1 responds, player 2 follows ``opponent``; v2 the reverse (player-2 score)
    v1, v2 = term.copy(), 1.0 - term
    B = np.zeros((len(sp), spec.cells))
    for i in sp.cont_indices[::-1]:
        acts, kids = sp.children(i)
        own, other = (v1, v2) if sp.mover[i] == 1 else (v2, v1)
        q = own[kids]
        if lam is None:
            best = q >= q.max() - 1e-12
            p = best / best.sum()
        else:
            e = np.exp(lam * (q - q.max()))
            p = e / e.sum()
        B[i, acts] = p
        own[i] = p @ q
        other[i] = opponent[i, acts] @ other[kids]
    return B


def worst_case_vs_oracle(spec: GameSpec, P: np.ndarray, table: ValueTable | None = None) -> dict[int, float]:
    """Loss probability of ``P`` in each seat against the most damaging optimal opponent.

    The opponent may pick any value-preserving move, so this bounds every
    tie-breaking rule (deterministic or random) an optimal player could use.
    """
    sp = state_space(spec)
    table = table or solve(spec)
    vals = np.array([table.value(sp.cells_of(i)) for i in range(len(sp))])
    out = {}
    for seat in (1, 2):
        lost = (sp.outcome == (LOSS if seat == 1 else WIN)).astype(float)
        for i in sp.cont_indices[::-1]:
            acts, kids = sp.children(i)
            if sp.mover[i] == seat:
                lost[i] = P[i, acts] @ lost[kids]
            else:
                lost[i] = lost[kids][vals[kids] == vals[i]].max()
        out[seat] = float(lost[0])
    return out


@dataclass
class RlConfig:
    rounds: int = 3
    games_per_eval: int = 2000
    tau: float = 0.55
    pool_size: int = 10
    operator: str = "exact_best_response"
    lam: float | None = None
    epsilon: float = 0.1
    games_per_round: int = 5000

    def __post_init__(self):
        if not 0.5 < self.tau <= 1.0:
            raise ValueError("acceptance threshold must lie in (0.5, 1]")
        if self.operator not in OPERATORS:
            raise ValueError(f"unknown improvement operator {self.operator!r}")
        if self.rounds < 0 or self.pool_size < 1:
            raise ValueError("rounds must be >= 0 and pool_size >= 1")


@dataclass
class LadderEntry:
    round: int
    accepted: bool
    score_vs_pool: float
    score_vs_initial: float
    oracle_loss_p1: float
    oracle_loss_p2: float


@dataclass
class RlResult:
    policy: TablePolicy
    matrix: np.ndarray
    ladder: list[LadderEntry] = field(default_factory=list)
    accepted: list[np.ndarray] = field(default_factory=list)


def _simulated_greedy(spec: GameSpec, current: np.ndarray, pool: list[np.ndarray], cfg: RlConfig,
                      rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo control: epsilon-soft self-improvement from sampled game returns."""
    sp = state_space(spec)
    C = spec.cells
    explore = (1 - cfg.epsilon) * current
    for i in sp.cont_indices:
        acts, _ = sp.children(i)
        explore[i, acts] += cfg.epsilon / len(acts)
    ret_sum = np.zeros((len(sp), C))
    ret_n = np.zeros((len(sp), C))
    learner = matrix_policy(spec, explore, "explore")
    pool_pols = [matrix_policy(spec, P, f"pool{j}") for j, P in enumerate(pool)]
    for g in range(cfg.games_per_round):
        opp = pool_pols[int(rng.integers(len(pool_pols)))]
        seat = 1 if g % 2 == 0 else 2
        rec = play_game(spec, learner, opp, rng) if seat == 1 else play_game(spec, opp, learner, rng)
        score1 = {"win": 1.0, "loss": 0.0, "draw": 0.5}[rec.outcome.value]
        s = spec.initial()
        for a, nxt in zip(rec.moves, rec.states()[1:]):
            if s.mover == seat:
                i = sp.lookup(s)
                ret_sum[i, a] += score1 if seat == 1 else 1.0 - score1
                ret_n[i, a] += 1
            s = nxt
    out = current.copy()
    for i in sp.cont_indices:
        seen = ret_n[i] > 0
        if not seen.any():
            continue
        q = np.where(seen, ret_sum[i] / np.maximum(ret_n[i], 1), -np.inf)
        best = np.flatnonzero(q == q.max())
        acts, _ = sp.children(i)
        row = np.zeros(C)
        row[acts] = cfg.epsilon / len(acts)
        row[best] += (1 - cfg.epsilon) / len(best)
        out[i] = row
    return out


def improve(spec: GameSpec, pi0: Policy | np.ndarray, cfg: RlConfig | None = None, seed: int = 0,
            table: ValueTable | None = None) -> RlResult:
    """Best-response iteration with an opponent pool and a win-score acceptance gate.

    Each round builds a candidate against the per-move average of the pool
    (all accepted policies so far, most recent ``pool_size``), evaluates it
    exactly against every pool member, and accepts it if the mean win-score
    exceeds ``tau``.
    """
    cfg = cfg or RlConfig()
    rng = np.random.default_rng(seed)
    table = table or solve(spec)
    P0 = pi0 if isinstance(pi0, np.ndarray) else policy_matrix(spec, pi0)
    pool = [P0]
    current = P0
    ladder = []
    accepted = []
    for r in range(1, cfg.rounds + 1):
        if cfg.operator == "exact_best_response":
            cand = best_response(spec, np.mean(pool, axis=0), cfg.lam)
        else:
            cand = _simulated_greedy(spec, current, pool, cfg, rng)
        vs_pool = float(np.mean([head_to_head(spec, cand, P) for P in pool]))
        vs_init = float(head_to_head(spec, cand, P0))
        loss = worst_case_vs_oracle(spec, cand, table)
        ok = vs_pool > cfg.tau
        ladder.append(LadderEntry(r, ok, vs_pool, vs_init, loss[1], loss[2]))
        if ok:
            accepted.append(cand)
            pool = (pool + [cand])[-cfg.pool_size:]
            current = cand
    return RlResult(matrix_policy(spec, current, "rl"), current, ladder, accepted)


def uniform_matrix(spec: GameSpec) -> np.ndarray:
    return policy_matrix(spec, UniformPolicy())
