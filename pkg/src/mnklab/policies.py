"""Stochastic policies and playing agents.

A policy maps a non-terminal state to a probability vector over all cells,
with exactly zero mass on occupied cells. Agents additionally pick a concrete
move given a numpy ``Generator``; deterministic agents ignore it.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .game import EMPTY, GameError, GameRecord, GameSpec, Outcome, State, apply, classify
from .space import state_space


def legal_mask(s: State) -> np.ndarray:
    return np.array([c == EMPTY for c in s.cells], dtype=bool)


def sample(p: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(p)
    a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    if a >= len(p) or p[a] == 0:
        a = int(np.flatnonzero(p)[-1])
    return a


class Policy:
    """Base class: subclasses implement ``probs``."""

    name = "policy"

    def probs(self, s: State) -> np.ndarray:
        raise NotImplementedError

    def act(self, s: State, rng: np.random.Generator) -> int:
        return sample(self.probs(s), rng)


class UniformPolicy(Policy):
    name = "random"

    def probs(self, s: State) -> np.ndarray:
        if classify(s).terminal:
            raise GameError("no actions at terminal state")
        mask = legal_mask(s)
        return mask / mask.sum()


class FunctionPolicy(Policy):
    def __init__(self, fn: Callable[[State], np.ndarray], name: str = "function"):
        self.fn = fn
        self.name = name

    def probs(self, s: State) -> np.ndarray:
        return self.fn(s)


class TablePolicy(Policy):
    """Probabilities stored per reachable state (keyed by the cells tuple)."""

    def __init__(self, table: dict[tuple, np.ndarray], name: str = "table", fallback: Policy | None = None):
        self.table = table
        self.name = name
        self.fallback = fallback

    def probs(self, s: State) -> np.ndarray:
        p = self.table.get(s.cells)
        if p is None:
            if self.fallback is None:
                raise KeyError(f"no probabilities stored for state {''.join(map(str, s.cells))}")
            return self.fallback.probs(s)
        return p

    @classmethod
    def tabulate(cls, spec: GameSpec, policy: Policy, name: str | None = None) -> "TablePolicy":
        """Freeze any policy over the reachable non-terminal states."""
        sp = state_space(spec)
        table = {sp.cells_of(i): np.asarray(policy.probs(sp.state(i)), dtype=float) for i in sp.cont_indices}
        return cls(table, name or policy.name)


class DeterministicPolicy(Policy):
    """A policy given by a move-choosing function, one-hot probabilities."""

    def __init__(self, choose: Callable[[State], int], name: str = "deterministic"):
        self.choose = choose
        self.name = name

    def probs(self, s: State) -> np.ndarray:
        p = np.zeros(len(s.cells))
        p[self.choose(s)] = 1.0
        return p

    def act(self, s: State, rng: np.random.Generator) -> int:
        return self.choose(s)


class MixturePolicy(Policy):
    """Per-move mixture: probabilities are the weighted average of members."""

    def __init__(self, members: list[Policy], weights=None, name: str = "mixture"):
        self.members = list(members)
        w = np.ones(len(members)) if weights is None else np.asarray(weights, dtype=float)
        self.weights = w / w.sum()
        self.name = name

    def probs(self, s: State) -> np.ndarray:
        return sum(w * m.probs(s) for w, m in zip(self.weights, self.members))


def play_game(spec: GameSpec, first: Policy, second: Policy, rng: np.random.Generator) -> GameRecord:
    """Play one game from the empty board, ``first`` moving as player 1."""
    s = spec.initial()
    moves = []
    agents = {1: first, 2: second}
    out = Outcome.CONT
    while not out.terminal:
        a = agents[s.mover].act(s, rng)
        s = apply(s, a)
        moves.append(a)
        out = classify(s)
    return GameRecord(spec, tuple(moves), out)


def score_of(outcome: Outcome, seat: int) -> float:
    """Win-score (1 win, 0.5 draw, 0 loss) for the player in ``seat``."""
    if outcome is Outcome.DRAW:
        return 0.5
    won = (outcome is Outcome.WIN) == (seat == 1)
    return 1.0 if won else 0.0
