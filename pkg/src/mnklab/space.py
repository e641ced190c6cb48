"""Breadth-first enumeration of the reachable state space.

Every exact dynamic program in the package (backward induction, policy
evaluation, soft solves, the lookahead trees) indexes states through a
``StateSpace``: states are stored in BFS order, so turn numbers are
non-decreasing and a reverse sweep visits children before parents.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .game import EMPTY, P1, P2, GameSpec, Outcome, State, canonical_form

# outcome codes used in the dense arrays
CONT, WIN, LOSS, DRAW = 0, 1, 2, 3
OUTCOMES = (Outcome.CONT, Outcome.WIN, Outcome.LOSS, Outcome.DRAW)
PAYOFF1 = np.array([0, 1, -1, 0], dtype=np.int8)


def completes_line(spec: GameSpec, cells, a: int, player: int) -> bool:
    """True if ``player``'s stone at ``a`` lies on a full line of ``player``."""
    lines = spec.lines
    for li in spec.lines_through[a]:
        if all(cells[c] == player for c in lines[li]):
            return True
    return False


def child_outcome(spec: GameSpec, cells, a: int, player: int, empties_after: int) -> int:
    if completes_line(spec, cells, a, player):
        return WIN if player == P1 else LOSS
    return DRAW if empties_after == 0 else CONT


class StateSpace:
    """All states reachable from the empty board (terminal ones included)."""

    def __init__(self, spec: GameSpec):
        self.spec = spec
        root = (EMPTY,) * spec.cells
        index = {root: 0}
        cells_list = [root]
        outcome = [CONT]
        child_ptr = [0]
        child_action: list[int] = []
        child_index: list[int] = []
        head = 0
        while head < len(cells_list):
            cells = cells_list[head]
            if outcome[head] == CONT:
                empties = cells.count(EMPTY)
                mover = P1 if (spec.cells - empties) % 2 == 0 else P2
                for a in range(spec.cells):
                    if cells[a] != EMPTY:
                        continue
                    nxt = list(cells)
                    nxt[a] = mover
                    nxt = tuple(nxt)
                    j = index.get(nxt)
                    if j is None:
                        j = len(cells_list)
                        index[nxt] = j
                        cells_list.append(nxt)
                        outcome.append(child_outcome(spec, nxt, a, mover, empties - 1))
                    child_action.append(a)
                    child_index.append(j)
            child_ptr.append(len(child_action))
            head += 1
        self.index = index
        self.cells = np.array(cells_list, dtype=np.int8)
        self.outcome = np.array(outcome, dtype=np.int8)
        self.child_ptr = np.array(child_ptr, dtype=np.int64)
        self.child_action = np.array(child_action, dtype=np.int64)
        self.child_index = np.array(child_index, dtype=np.int64)
        stones = (self.cells != EMPTY).sum(axis=1)
        self.turn = stones + 1
        self.mover = np.where(stones % 2 == 0, P1, P2).astype(np.int8)
        self._cells_list = cells_list

    def __len__(self) -> int:
        return len(self._cells_list)

    def state(self, i: int) -> State:
        return State(self.spec, self._cells_list[i])

    def cells_of(self, i: int) -> tuple[int, ...]:
        return self._cells_list[i]

    def lookup(self, s: State | tuple) -> int:
        cells = s.cells if isinstance(s, State) else tuple(s)
        try:
            return self.index[cells]
        except KeyError:
            raise KeyError(f"state not reachable: {''.join(map(str, cells))}") from None

    def children(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.child_ptr[i], self.child_ptr[i + 1]
        return self.child_action[lo:hi], self.child_index[lo:hi]

    @property
    def cont_indices(self) -> np.ndarray:
        return np.flatnonzero(self.outcome == CONT)

    def outcome_of(self, i: int) -> Outcome:
        return OUTCOMES[self.outcome[i]]

    def canonical_keys(self) -> list[str]:
        return [canonical_form(self.spec, c)[0] for c in self._cells_list]


@lru_cache(maxsize=8)
def state_space(spec: GameSpec) -> StateSpace:
    return StateSpace(spec)
