"""Pure-Python reference kernels.

These are the semantics the compiled ``_ckernels`` extension reproduces
bit-for-bit: same PRNG stream, same traversal order, same floating-point
operation order. Board arguments are flat sequences of 0/1/2; ``lines`` is an
(n_lines, k) integer array and ``through`` an (n_cells, max_degree) array of
line indices padded with -1.
"""
from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
INF = float("inf")


class SplitMix64:
    """splitmix64 generator; the only randomness source of the kernels."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


def _tolists(lines, through):
    return [list(map(int, row)) for row in lines], [[int(v) for v in row if v >= 0] for row in through]


def _wins(cells, a, player, lines, through) -> bool:
    for li in through[a]:
        for c in lines[li]:
            if cells[c] != player:
                break
        else:
            return True
    return False


def features(cells, lines, k, centers) -> list[float]:
    """Open-line counts for each player and the center balance.

    Layout: [P1 open-1 .. open-(k-1), -(P2 open-1) .. -(P2 open-(k-1)), center].
    """
    out = [0.0] * (2 * (k - 1) + 1)
    for line in lines:
        n1 = n2 = 0
        for c in line:
            v = cells[c]
            if v == 1:
                n1 += 1
            elif v == 2:
                n2 += 1
        if n2 == 0 and 0 < n1 < k:
            out[n1 - 1] += 1.0
        elif n1 == 0 and 0 < n2 < k:
            out[k - 1 + n2 - 1] -= 1.0
    for c in centers:
        v = cells[c]
        if v == 1:
            out[-1] += 1.0
        elif v == 2:
            out[-1] -= 1.0
    return out


def linear_value(cells, theta, lines, k, centers) -> float:
    x = features(cells, lines, k, centers)
    v = 0.0
    for j in range(len(x)):
        v += theta[j] * x[j]
    return v


def negamax(cells, depth, theta, W, lines, through, k, centers, prune=True, table=None, table_empties=-1):
    """Depth-limited full-width search from a non-terminal position.

    Returns (best action, value from player 1's perspective). Ties go to the
    lowest cell index. ``table`` optionally maps a cells tuple to an exact
    player-1 value, consulted for non-terminal positions with at most
    ``table_empties`` empty cells.
    """
    lines, through = _tolists(lines, through)
    W = float(W)
    theta = [float(t) for t in theta]
    if len(theta) != 2 * (k - 1) + 1:
        raise ValueError("theta length does not match the feature layout")
    centers = [int(c) for c in centers]
    work = [int(c) for c in cells]
    empties = work.count(0)
    mover = 1 if (len(work) - empties) % 2 == 0 else 2

    def leaf(sign):
        return sign * linear_value(work, theta, lines, k, centers)

    def search(mover, empties, depth, alpha, beta, root):
        sign = 1.0 if mover == 1 else -1.0
        best = -INF
        best_a = -1
        for a in range(len(work)):
            if work[a] != 0:
                continue
            work[a] = mover
            if _wins(work, a, mover, lines, through):
                v = W
            elif empties == 1:
                v = 0.0
            elif table is not None and empties - 1 <= table_empties:
                v = sign * W * table(tuple(work))
            elif depth == 1:
                v = leaf(sign)
            else:
                v = -search(3 - mover, empties - 1, depth - 1, -beta, -alpha, False)
            work[a] = 0
            if v > best:
                best = v
                best_a = a
                if prune:
                    if best > alpha:
                        alpha = best
                    if alpha >= beta:
                        break
        if root:
            return best_a, best
        return best

    a, v = search(mover, empties, depth, -INF, INF, True)
    return a, (v if mover == 1 else -v)


def _rollout(work, mover, empties, lines, through, rng) -> int:
    """Uniform random play to the end; returns the player-1 payoff."""
    while True:
        r = rng.next() % empties
        a = -1
        for c in range(len(work)):
            if work[c] == 0:
                if r == 0:
                    a = c
                    break
                r -= 1
        work[a] = mover
        empties -= 1
        if _wins(work, a, mover, lines, through):
            return 1 if mover == 1 else -1
        if empties == 0:
            return 0
        mover = 3 - mover


def playouts(cells, lines, through, n, seed) -> tuple[int, int, int]:
    """Run ``n`` uniform playouts from a non-terminal position.

    Returns counts of (player-1 wins, player-2 wins, draws).
    """
    lines, through = _tolists(lines, through)
    rng = SplitMix64(seed)
    base = [int(c) for c in cells]
    empties = base.count(0)
    mover = 1 if (len(base) - empties) % 2 == 0 else 2
    w1 = w2 = d = 0
    for _ in range(n):
        u = _rollout(list(base), mover, empties, lines, through, rng)
        if u > 0:
            w1 += 1
        elif u < 0:
            w2 += 1
        else:
            d += 1
    return w1, w2, d


def mcts_uniform(cells, lines, through, budget, c_uct, seed):
    """UCT with uniform priors and uniform-rollout leaf values.

    Returns (visits, value_sums) per cell for the root's edges, values from
    the root mover's perspective.
    """
    lines, through = _tolists(lines, through)
    rng = SplitMix64(seed)
    root = [int(c) for c in cells]
    size = len(root)
    root_empties = root.count(0)
    root_mover = 1 if (size - root_empties) % 2 == 0 else 2

    node_first = []
    node_count = []
    node_n = []
    node_term = []
    node_value = []
    edge_action = []
    edge_prior = []
    edge_n = []
    edge_w = []
    edge_child = []

    def new_node(work, empties, term, value):
        node_first.append(len(edge_action))
        node_n.append(0)
        node_term.append(term)
        node_value.append(value)
        if term:
            node_count.append(0)
            return len(node_n) - 1
        prior = 1.0 / empties
        for c in range(size):
            if work[c] == 0:
                edge_action.append(c)
                edge_prior.append(prior)
                edge_n.append(0)
                edge_w.append(0.0)
                edge_child.append(-1)
        node_count.append(empties)
        return len(node_n) - 1

    new_node(root, root_empties, False, 0)
    node_n[0] = 1
    path = []
    for _ in range(budget):
        work = list(root)
        mover = root_mover
        empties = root_empties
        node = 0
        del path[:]
        while True:
            first = node_first[node]
            sq = math.sqrt(node_n[node])
            best = -1
            best_score = -INF
            for e in range(first, first + node_count[node]):
                ne = edge_n[e]
                if ne == 0:
                    score = INF
                else:
                    score = edge_w[e] / ne + c_uct * edge_prior[e] * sq / (1 + ne)
                if score > best_score:
                    best_score = score
                    best = e
            a = edge_action[best]
            work[a] = mover
            empties -= 1
            path.append(best)
            child = edge_child[best]
            if child == -1:
                if _wins(work, a, mover, lines, through):
                    value = 1 if mover == 1 else -1
                    child = new_node(work, empties, True, value)
                elif empties == 0:
                    value = 0
                    child = new_node(work, empties, True, 0)
                else:
                    child = new_node(work, empties, False, 0)
                    value = _rollout(work, 3 - mover, empties, lines, through, rng)
                edge_child[best] = child
                break
            if node_term[child]:
                value = node_value[child]
                break
            node = child
            mover = 3 - mover
        node_n[0] += 1
        m = root_mover
        for e in path:
            edge_n[e] += 1
            edge_w[e] += value if m == 1 else -value
            node_n[edge_child[e]] += 1
            m = 3 - m
    visits = [0] * size
    values = [0.0] * size
    for e in range(node_first[0], node_first[0] + node_count[0]):
        visits[edge_action[e]] = edge_n[e]
        values[edge_action[e]] = edge_w[e]
    return visits, values
