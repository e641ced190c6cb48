"""Batched depth-L minimax backups of the linear evaluation.

For a set of root states, ``LookaheadTrees`` stores every depth-L
continuation once. Backing up a new weight vector is then a handful of numpy
segment reductions, which is what makes likelihood evaluation (one backup per
observed state per iteration) cheap. The structure also records which leaf
each root action's value comes from, giving the derivative of that value
with respect to the weights.

Values are expressed from each root mover's perspective: a depth-d node is
a min node when d is odd (the opponent moves) and a max node when d is even.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .game import EMPTY, P1, GameSpec
from .search import feature_matrix
from .space import CONT, DRAW, LOSS, PAYOFF1, WIN, completes_line, state_space


def segment_argselect(v: np.ndarray, starts: np.ndarray, reduced: np.ndarray) -> np.ndarray:
    """Index of the first element of each segment equal to the segment's reduced value."""
    counts = np.diff(np.append(starts, len(v)))
    idx = np.arange(len(v))
    cand = np.where(v == np.repeat(reduced, counts), idx, len(v))
    return np.minimum.reduceat(cand, starts)


def segment_log_softmax(z: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Log-softmax within segments, accurate when one logit dominates."""
    counts = np.diff(np.append(starts, len(z)))
    zmax = np.maximum.reduceat(z, starts)
    arg = segment_argselect(z, starts, zmax)
    e = np.exp(z - np.repeat(zmax, counts))
    e[arg] = 0.0
    lse = np.repeat(zmax + np.log1p(np.add.reduceat(e, starts)), counts)
    return z - lse


class LookaheadTrees:
    """Depth-``depth`` game trees below each root (roots must be non-terminal).

    Attributes
    ----------
    root_ptr : (n_roots + 1,) offsets of each root's actions in the pair arrays
    pair_root, pair_action : root index and cell of every (root, action) pair
    root_sign : +1 when player 1 moves at the root, -1 otherwise
    """

    def __init__(self, spec: GameSpec, roots: list[tuple[int, ...]], depth: int, W: float):
        if depth < 1:
            raise ValueError("lookahead depth must be at least one ply")
        self.spec = spec
        self.depth = depth
        self.W = float(W)
        self.roots = [tuple(r) for r in roots]
        self.index = {r: i for i, r in enumerate(self.roots)}
        n_cells = spec.cells

        cells = self.roots
        outs = [CONT] * len(cells)
        owner = list(range(len(cells)))
        starts_per_level = []
        actions = None
        for d in range(1, depth + 1):
            nxt_cells, nxt_outs, nxt_owner, acts, starts = [], [], [], [], []
            for c, out, r in zip(cells, outs, owner):
                starts.append(len(nxt_cells))
                if out != CONT:
                    nxt_cells.append(c)
                    nxt_outs.append(out)
                    nxt_owner.append(r)
                    acts.append(-1)
                    continue
                empties = c.count(EMPTY)
                mover = P1 if (n_cells - empties) % 2 == 0 else 2
                for a in range(n_cells):
                    if c[a] != EMPTY:
                        continue
                    ch = list(c)
                    ch[a] = mover
                    if completes_line(spec, ch, a, mover):
                        o = WIN if mover == P1 else LOSS
                    else:
                        o = DRAW if empties == 1 else CONT
                    nxt_cells.append(tuple(ch))
                    nxt_outs.append(o)
                    nxt_owner.append(r)
                    acts.append(a)
            starts_per_level.append(np.array(starts, dtype=np.int64))
            if d == 1:
                actions = np.array(acts, dtype=np.int64)
            cells, outs, owner = nxt_cells, nxt_outs, nxt_owner

        self.root_ptr = np.append(starts_per_level[0], len(actions))
        self.level_starts = starts_per_level[1:]
        self.pair_action = actions
        self.pair_root = np.repeat(np.arange(len(self.roots)), np.diff(self.root_ptr))
        root_mover = np.array([P1 if (n_cells - r.count(EMPTY)) % 2 == 0 else 2 for r in self.roots])
        self.root_sign = np.where(root_mover == P1, 1.0, -1.0)

        outs = np.array(outs, dtype=np.int8)
        owner = np.array(owner, dtype=np.int64)
        self.leaf_sign = self.root_sign[owner]
        term = outs != CONT
        self.leaf_const = np.where(term, self.W * PAYOFF1[outs], 0.0)
        feats = np.zeros((len(outs), 2 * (spec.k - 1) + 1))
        if (~term).any():
            feats[~term] = feature_matrix(spec, np.array(cells, dtype=np.int8)[~term])
        self.leaf_feat = feats
        self.leaf_term = term

    @property
    def n_pairs(self) -> int:
        return len(self.pair_action)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_const)

    def leaf_values(self, theta: np.ndarray) -> np.ndarray:
        """Root-mover-perspective leaf values; same summation order as the search kernel."""
        v = np.zeros(self.n_leaves)
        for j in range(len(theta)):
            v = v + theta[j] * self.leaf_feat[:, j]
        v = np.where(self.leaf_term, self.leaf_const, v)
        return self.leaf_sign * v

    def backup(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-pair backed-up values q and the leaf each value comes from.

        ``theta`` is in the kernel feature layout.
        """
        v = self.leaf_values(np.asarray(theta, dtype=float))
        sel = np.arange(len(v))
        for d in range(self.depth - 1, 0, -1):
            starts = self.level_starts[d - 1]
            red = (np.minimum if d % 2 == 1 else np.maximum).reduceat(v, starts)
            pick = segment_argselect(v, starts, red)
            sel = sel[pick]
            v = red
        return v, sel

    def value_gradients(self, sel: np.ndarray) -> np.ndarray:
        """d q / d theta for each pair (kernel layout); zero for terminal leaves."""
        return self.leaf_sign[sel, None] * np.where(self.leaf_term[sel, None], 0.0, self.leaf_feat[sel])

    def choice_probs(self, theta: np.ndarray, lam) -> np.ndarray:
        """Softmax over each root's actions of lam * q (lam scalar or per root)."""
        q, _ = self.backup(theta)
        lam = np.broadcast_to(np.asarray(lam, dtype=float), (len(self.roots),))
        return np.exp(segment_log_softmax(lam[self.pair_root] * q, self.root_ptr[:-1]))

    def full_probs(self, pair_values: np.ndarray) -> dict[tuple, np.ndarray]:
        """Scatter per-pair values into per-root cell vectors."""
        out = {}
        for i, r in enumerate(self.roots):
            lo, hi = self.root_ptr[i], self.root_ptr[i + 1]
            p = np.zeros(self.spec.cells)
            p[self.pair_action[lo:hi]] = pair_values[lo:hi]
            out[r] = p
        return out


@lru_cache(maxsize=16)
def all_state_trees(spec: GameSpec, depth: int, W: float) -> LookaheadTrees:
    """Trees rooted at every reachable non-terminal state (cached)."""
    sp = state_space(spec)
    return LookaheadTrees(spec, [sp.cells_of(i) for i in sp.cont_indices], depth, W)
