"""Monte Carlo tree search with optional policy priors and value estimates.

Selection uses the prior-weighted UCT score

    Q(edge) + c_uct * prior * sqrt(N(parent)) / (1 + N(edge))

with unvisited edges taken first (lowest cell first). The move played is
the most-visited root edge, except that a visited root move which wins on
the spot is always preferred (visit counts cannot tell an immediate win from
a slower forced one). Leaves are scored by
a rollout, by a value estimate, or by the mix (1 - beta) * value + beta * rollout.
With uniform priors and uniform rollouts the compiled kernel is used; the
Python path below reproduces it draw for draw.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .game import EMPTY, P1, GameError, State, apply, classify
from .kernels import SplitMix64
from .policies import Policy

PRIORS = ("uniform", "ccp", "cnn")
LEAVES = ("rollout", "value", "mix")
INF = float("inf")


@dataclass
class MctsConfig:
    budget: int = 1000
    c_uct: float = 3.0
    prior: str = "uniform"
    leaf: str = "rollout"
    beta: float = 0.5
    rollout: str = "uniform"

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("simulation budget must be at least 1")
        if self.prior not in PRIORS:
            raise ValueError(f"unknown prior source {self.prior!r}")
        if self.leaf not in LEAVES:
            raise ValueError(f"unknown leaf evaluator {self.leaf!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.c_uct < 0:
            raise ValueError("c_uct must be non-negative")


@dataclass
class Node:
    cells: list
    mover: int
    terminal: bool
    value: float = 0.0  # player-1 payoff when terminal
    n: int = 0
    actions: list = field(default_factory=list)
    prior: list = field(default_factory=list)
    edge_n: list = field(default_factory=list)
    edge_w: list = field(default_factory=list)  # from this node's mover's perspective
    children: list = field(default_factory=list)


@dataclass
class MctsResult:
    action: int
    visits: np.ndarray
    value_sums: np.ndarray
    root: Node | None = None

    @property
    def q(self) -> np.ndarray:
        """Mean value per root action, root mover's perspective (nan where unvisited)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.visits > 0, self.value_sums / self.visits, np.nan)


def _uniform_pick(cells: list, empties: int, rng: SplitMix64) -> int:
    r = rng.next() % empties
    for c, v in enumerate(cells):
        if v == EMPTY:
            if r == 0:
                return c
            r -= 1
    raise AssertionError("no empty cell")


def _wins(spec, cells, a, player) -> bool:
    for li in spec.lines_through[a]:
        if all(cells[c] == player for c in spec.lines[li]):
            return True
    return False


def playout(s: State, rollout: Policy | None = None, seed: int = 0) -> int:
    """Play to the end; player-1 payoff. ``None`` means uniform random moves."""
    out = classify(s)
    if out.terminal:
        return out.payoff1
    return _rollout(s.spec, list(s.cells), s.mover, s.empties, rollout, SplitMix64(seed))


def _rollout(spec, cells, mover, empties, rollout, rng) -> int:
    while True:
        if rollout is None:
            a = _uniform_pick(cells, empties, rng)
        else:
            p = rollout.probs(State(spec, tuple(cells)))
            u = (rng.next() >> 11) * (1.0 / 9007199254740992.0)
            a = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
            a = min(a, len(p) - 1)
            while p[a] == 0:
                a -= 1
        cells[a] = mover
        empties -= 1
        if _wins(spec, cells, a, mover):
            return 1 if mover == P1 else -1
        if empties == 0:
            return 0
        mover = 3 - mover


def _expand(spec, cells, mover, priors: Policy | None) -> Node:
    node = Node(cells, mover, False)
    acts = [c for c, v in enumerate(cells) if v == EMPTY]
    if priors is None:
        pri = [1.0 / len(acts)] * len(acts)
    else:
        p = priors.probs(State(spec, tuple(cells)))
        pri = [float(p[a]) for a in acts]
    node.actions = acts
    node.prior = pri
    node.edge_n = [0] * len(acts)
    node.edge_w = [0.0] * len(acts)
    node.children = [None] * len(acts)
    return node


def _search_python(s: State, cfg: MctsConfig, seed: int, priors: Policy | None,
                   value: Callable[[State], float] | None, rollout: Policy | None) -> tuple[Node, int]:
    spec = s.spec
    rng = SplitMix64(seed)
    root = _expand(spec, list(s.cells), s.mover, priors)
    root.n = 1
    for _ in range(cfg.budget):
        cells = list(s.cells)
        mover = s.mover
        empties = s.empties
        node = root
        path = []
        while True:
            sq = math.sqrt(node.n)
            best, best_score = -1, -INF
            for e in range(len(node.actions)):
                ne = node.edge_n[e]
                score = INF if ne == 0 else node.edge_w[e] / ne + cfg.c_uct * node.prior[e] * sq / (1 + ne)
                if score > best_score:
                    best, best_score = e, score
            a = node.actions[best]
            cells[a] = mover
            empties -= 1
            path.append((node, best))
            child = node.children[best]
            if child is None:
                if _wins(spec, cells, a, mover):
                    v = 1.0 if mover == P1 else -1.0
                    child = Node(list(cells), 3 - mover, True, v)
                elif empties == 0:
                    v = 0.0
                    child = Node(list(cells), 3 - mover, True, 0.0)
                else:
                    child = _expand(spec, list(cells), 3 - mover, priors)
                    v = _leaf_value(spec, cells, 3 - mover, empties, cfg, value, rollout, rng)
                node.children[best] = child
                break
            if child.terminal:
                v = child.value
                break
            node = child
            mover = 3 - mover
        root.n += 1
        for nd, e in path:
            nd.edge_n[e] += 1
            nd.edge_w[e] += v if nd.mover == P1 else -v
            nd.children[e].n += 1
    visits = [0] * spec.cells
    for e, a in enumerate(root.actions):
        visits[a] = root.edge_n[e]
    return root, _most_visited(visits)


def _leaf_value(spec, cells, mover, empties, cfg, value, rollout, rng) -> float:
    if cfg.leaf == "rollout":
        return float(_rollout(spec, list(cells), mover, empties, rollout, rng))
    v = float(value(State(spec, tuple(cells))))
    if cfg.leaf == "value":
        return v
    r = float(_rollout(spec, list(cells), mover, empties, rollout, rng))
    return (1.0 - cfg.beta) * v + cfg.beta * r


def _most_visited(visits) -> int:
    return int(np.argmax(visits))  # first maximum = lowest cell


def _decide(s: State, visits: np.ndarray) -> int:
    cells = list(s.cells)
    for a in np.flatnonzero(visits):
        cells[a] = s.mover
        won = _wins(s.spec, cells, int(a), s.mover)
        cells[a] = EMPTY
        if won:
            return int(a)
    return _most_visited(visits)


def mcts_search(s: State, cfg: MctsConfig | None = None, seed: int = 0, priors: Policy | None = None,
                value: Callable[[State], float] | None = None, rollout: Policy | None = None,
                force_python: bool = False) -> MctsResult:
    """Run ``cfg.budget`` simulations from ``s``; returns the most-visited action.

    ``priors`` supplies edge priors when ``cfg.prior`` is not uniform;
    ``value`` maps a state to its player-1 value in [-1, 1]; ``rollout``
    is the playout policy (uniform random when None).
    """
    cfg = cfg or MctsConfig()
    if classify(s).terminal:
        raise GameError("no actions at terminal state")
    if cfg.prior != "uniform" and priors is None:
        raise ValueError(f"prior source {cfg.prior!r} needs a prior policy")
    if cfg.leaf != "rollout" and value is None:
        raise ValueError(f"leaf evaluator {cfg.leaf!r} needs a value estimate")
    use_priors = priors if cfg.prior != "uniform" else None
    use_rollout = rollout if cfg.rollout != "uniform" else None
    fast = use_priors is None and cfg.leaf == "rollout" and use_rollout is None and not force_python
    spec = s.spec
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    if fast:
        visits, sums = kernels.mcts_uniform(np.asarray(s.cells, dtype=np.int32), spec.lines, spec.through,
                                            cfg.budget, float(cfg.c_uct), seed)
        visits = np.asarray(visits, dtype=np.int64)
        return MctsResult(_decide(s, visits), visits, np.asarray(sums, dtype=float))
    root, _ = _search_python(s, cfg, seed, use_priors, value, use_rollout)
    visits = np.zeros(spec.cells, dtype=np.int64)
    sums = np.zeros(spec.cells)
    for e, a in enumerate(root.actions):
        visits[a] = root.edge_n[e]
        sums[a] = root.edge_w[e]
    return MctsResult(_decide(s, visits), visits, sums, root)


def state_seed(seed: int, s: State) -> int:
    """Deterministic per-position seed, so an agent's move depends only on (seed, state)."""
    key = int("".join(map(str, s.cells)) or "0", 3)
    return int(np.random.SeedSequence([seed, key]).generate_state(2, np.uint64)[0])


class MctsAgent(Policy):
    """Plays the most-visited move; deterministic given (seed, state)."""

    def __init__(self, cfg: MctsConfig | None = None, seed: int = 0, priors: Policy | None = None,
                 value: Callable[[State], float] | None = None, rollout: Policy | None = None, name: str = "mcts"):
        self.cfg = cfg or MctsConfig()
        self.seed = seed
        self.priors = priors
        self.value = value
        self.rollout = rollout
        self.name = name
        self._cache: dict[tuple, int] = {}

    def choose(self, s: State) -> int:
        a = self._cache.get(s.cells)
        if a is None:
            res = mcts_search(s, self.cfg, state_seed(self.seed, s), self.priors, self.value, self.rollout)
            a = self._cache[s.cells] = res.action
        return a

    def probs(self, s: State) -> np.ndarray:
        p = np.zeros(len(s.cells))
        p[self.choose(s)] = 1.0
        return p

    def act(self, s: State, rng) -> int:
        return self.choose(s)


def apply_all(s: State, actions) -> State:
    for a in actions:
        s = apply(s, a)
    return s
