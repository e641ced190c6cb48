"""m,n,k-game rules: states, transitions, terminal classification, payoffs,
board symmetries and a stable text encoding of states.

Cells hold 0 (empty), 1 (player 1) or 2 (player 2), row-major. Player 1 moves
first, so the mover is always derivable from the stone counts.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

import numpy as np

EMPTY, P1, P2 = 0, 1, 2
MAX_CELLS = 25


class GameError(ValueError):
    """Raised on rule violations: illegal moves, terminal misuse, bad states."""


class Outcome(str, Enum):
    CONT = "cont"
    WIN = "win"
    LOSS = "loss"
    DRAW = "draw"

    @property
    def terminal(self) -> bool:
        return self is not Outcome.CONT

    @property
    def payoff1(self) -> int:
        if self is Outcome.CONT:
            raise GameError("payoff undefined at non-terminal state")
        return {Outcome.WIN: 1, Outcome.LOSS: -1, Outcome.DRAW: 0}[self]


@dataclass(frozen=True)
class GameSpec:
    m: int = 3
    n: int = 3
    k: int = 3

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise GameError(f"board dimensions must be positive, got {self.m}x{self.n}")
        if self.m * self.n > MAX_CELLS:
            raise GameError(f"m*n = {self.m * self.n} exceeds the cap of {MAX_CELLS}")
        if self.k < 3 or self.k > max(self.m, self.n):
            raise GameError(f"win length k={self.k} must satisfy 3 <= k <= max(m, n)")

    @classmethod
    def parse(cls, text: str) -> "GameSpec":
        """Parse ``"m,n,k"``."""
        try:
            m, n, k = (int(v) for v in text.split(","))
        except ValueError as exc:
            raise GameError(f"bad game spec {text!r}, expected m,n,k") from exc
        return cls(m, n, k)

    def __str__(self) -> str:
        return f"{self.m},{self.n},{self.k}"

    @property
    def cells(self) -> int:
        return self.m * self.n

    @property
    def square(self) -> bool:
        return self.m == self.n

    def to_dict(self) -> dict:
        return {"m": self.m, "n": self.n, "k": self.k}

    @cached_property
    def lines(self) -> np.ndarray:
        return _lines(self.m, self.n, self.k)

    @cached_property
    def lines_through(self) -> tuple[tuple[int, ...], ...]:
        """For each cell, indices of the windows containing it."""
        out = [[] for _ in range(self.cells)]
        for li, line in enumerate(self.lines):
            for c in line:
                out[c].append(li)
        return tuple(tuple(v) for v in out)

    @cached_property
    def through(self) -> np.ndarray:
        """``lines_through`` as an (n_cells, max_degree) array padded with -1."""
        deg = max(len(t) for t in self.lines_through)
        out = -np.ones((self.cells, deg), dtype=np.int32)
        for c, idx in enumerate(self.lines_through):
            out[c, :len(idx)] = idx
        out.setflags(write=False)
        return out

    @cached_property
    def transforms(self) -> np.ndarray:
        """Cell permutations of the board's dihedral symmetries.

        Row ``g`` maps a board ``b`` to ``b[transforms[g]]``; the identity is
        row 0. Square boards have 8, rectangular boards 4.
        """
        return _transforms(self.m, self.n)

    @cached_property
    def inverse_transforms(self) -> np.ndarray:
        return np.argsort(self.transforms, axis=1)

    @cached_property
    def center_cells(self) -> tuple[int, ...]:
        rows = [self.m // 2] if self.m % 2 else [self.m // 2 - 1, self.m // 2]
        cols = [self.n // 2] if self.n % 2 else [self.n // 2 - 1, self.n // 2]
        return tuple(r * self.n + c for r in rows for c in cols)

    def initial(self) -> "State":
        return State(self, (EMPTY,) * self.cells)


@lru_cache(maxsize=None)
def _lines(m: int, n: int, k: int) -> np.ndarray:
    out = []
    for r in range(m):
        for c in range(n):
            for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
                rr, cc = r + (k - 1) * dr, c + (k - 1) * dc
                if 0 <= rr < m and 0 <= cc < n:
                    out.append([(r + i * dr) * n + (c + i * dc) for i in range(k)])
    arr = np.array(out, dtype=np.int32).reshape(-1, k)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def _transforms(m: int, n: int) -> np.ndarray:
    grid = np.arange(m * n).reshape(m, n)
    maps = [grid, grid[::-1, ::-1], grid[::-1, :], grid[:, ::-1]]
    if m == n:
        maps += [grid.T, np.rot90(grid), np.rot90(grid, 3), grid[::-1, ::-1].T]
    arr = np.array([g.ravel() for g in maps], dtype=np.int64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class State:
    spec: GameSpec
    cells: tuple[int, ...]

    def __post_init__(self):
        if len(self.cells) != self.spec.cells:
            raise GameError(f"state has {len(self.cells)} cells, spec needs {self.spec.cells}")
        n1 = self.cells.count(P1)
        n2 = self.cells.count(P2)
        if n1 + n2 + self.cells.count(EMPTY) != len(self.cells):
            raise GameError("cells must be 0, 1 or 2")
        if n1 - n2 not in (0, 1):
            raise GameError(f"stone counts P1={n1}, P2={n2} are not reachable")

    @property
    def turn(self) -> int:
        """1-based index of the move about to be made."""
        return self.cells.count(P1) + self.cells.count(P2) + 1

    @property
    def mover(self) -> int:
        return P1 if self.turn % 2 == 1 else P2

    @property
    def empties(self) -> int:
        return self.cells.count(EMPTY)

    def board(self) -> np.ndarray:
        return np.array(self.cells, dtype=np.int8).reshape(self.spec.m, self.spec.n)

    def __str__(self) -> str:
        glyph = {EMPTY: ".", P1: "X", P2: "O"}
        n = self.spec.n
        return "\n".join(
            "".join(glyph[c] for c in self.cells[r * n:(r + 1) * n]) for r in range(self.spec.m)
        )


def winner(spec: GameSpec, cells: Sequence[int]) -> int:
    """Return 1 or 2 if that player has a line, 0 if none.

    Raises GameError if both players have completed lines.
    """
    found = 0
    for line in spec.lines:
        first = cells[line[0]]
        if first and all(cells[c] == first for c in line[1:]):
            if found and found != first:
                raise GameError("unreachable state: both players have a line")
            found = first
    return found


def classify(s: State) -> Outcome:
    w = winner(s.spec, s.cells)
    if w == P1:
        if s.mover != P2:
            raise GameError("unreachable state: P1 line but P1 to move")
        return Outcome.WIN
    if w == P2:
        if s.mover != P1:
            raise GameError("unreachable state: P2 line but P2 to move")
        return Outcome.LOSS
    if EMPTY not in s.cells:
        return Outcome.DRAW
    return Outcome.CONT


def legal_actions(s: State) -> list[int]:
    if classify(s).terminal:
        raise GameError("no actions at terminal state")
    return [i for i, c in enumerate(s.cells) if c == EMPTY]


def apply(s: State, a: int) -> State:
    """Place the mover's stone at cell ``a``."""
    if not 0 <= a < len(s.cells) or s.cells[a] != EMPTY or classify(s).terminal:
        raise GameError(f"illegal move {a}")
    cells = list(s.cells)
    cells[a] = s.mover
    return State(s.spec, tuple(cells))


def payoff(s: State, player: int) -> int:
    u1 = classify(s).payoff1
    if player == P1:
        return u1
    if player == P2:
        return -u1
    raise GameError(f"unknown player {player}")


def transform_cells(spec: GameSpec, cells: Sequence[int], g: int) -> tuple[int, ...]:
    perm = spec.transforms[g]
    return tuple(cells[i] for i in perm)


def transform_action(spec: GameSpec, a: int, g: int) -> int:
    """Cell index that ``a`` moves to under transform ``g``."""
    return int(spec.inverse_transforms[g][a])


def symmetries(s: State, deduplicate: bool = False) -> list[State]:
    """The dihedral orbit of ``s``: 8 states on square boards, 4 otherwise."""
    out = [State(s.spec, transform_cells(s.spec, s.cells, g)) for g in range(len(s.spec.transforms))]
    if deduplicate:
        seen: dict[tuple, State] = {}
        for t in out:
            seen.setdefault(t.cells, t)
        out = list(seen.values())
    return out


def encode(s: State, canonical: bool = False) -> str:
    """Text key of a state: one digit per cell, row-major.

    With ``canonical`` the key is the lexicographic minimum over the orbit.
    """
    if canonical:
        return canonical_form(s.spec, s.cells)[0]
    return "".join(map(str, s.cells))


def decode(key: str, spec: GameSpec) -> State:
    if len(key) != spec.cells or any(ch not in "012" for ch in key):
        raise GameError(f"malformed state key {key!r} for spec {spec}")
    return State(spec, tuple(int(ch) for ch in key))


def canonical_form(spec: GameSpec, cells: Sequence[int]) -> tuple[str, int]:
    """Return (canonical key, index of the lowest transform reaching it)."""
    best, best_g = None, 0
    for g, perm in enumerate(spec.transforms):
        key = "".join(str(cells[i]) for i in perm)
        if best is None or key < best:
            best, best_g = key, g
    return best, best_g


def canonical_transforms(spec: GameSpec, cells: Sequence[int]) -> tuple[str, list[int]]:
    """Canonical key plus every transform index that maps ``cells`` onto it."""
    keys = ["".join(str(cells[i]) for i in perm) for perm in spec.transforms]
    best = min(keys)
    return best, [g for g, key in enumerate(keys) if key == best]


# ---------------------------------------------------------------- records

@dataclass(frozen=True)
class GameRecord:
    spec: GameSpec
    moves: tuple[int, ...]
    outcome: Outcome

    def states(self) -> list[State]:
        """States before each move, followed by the final state."""
        s = self.spec.initial()
        out = [s]
        for a in self.moves:
            s = apply(s, a)
            out.append(s)
        return out

    def final_state(self) -> State:
        return self.states()[-1]

    def to_json(self) -> str:
        return json.dumps(
            {"spec": self.spec.to_dict(), "moves": list(self.moves), "outcome": self.outcome.value},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "GameRecord":
        obj = json.loads(line)
        spec = GameSpec(**obj["spec"])
        rec = cls(spec, tuple(int(a) for a in obj["moves"]), Outcome(obj["outcome"]))
        if classify(rec.final_state()) is not rec.outcome:
            raise GameError("record outcome does not match the replayed final state")
        return rec


def write_records(path, records: Iterable[GameRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_records(path) -> list[GameRecord]:
    with open(path) as fh:
        return [GameRecord.from_json(line) for line in fh if line.strip()]
