# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pykernels``.

Every function mirrors its pure-Python counterpart operation by operation so
that results (including PRNG-driven ones) are bit-identical.
"""
import numpy as np

from libc.math cimport sqrt, INFINITY
from libc.stdlib cimport malloc, free
from libc.stdint cimport uint64_t

cdef inline uint64_t _next(uint64_t* state) noexcept nogil:
    state[0] += <uint64_t>0x9E3779B97F4A7C15
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef struct Board:
    int size
    int k
    int n_lines
    int max_deg
    int n_centers
    const int* lines
    const int* through
    const int* centers
    const double* theta
    double W


cdef inline bint _wins(const Board* b, const signed char* cells, int a, int player) noexcept nogil:
    cdef int d, li, j
    for d in range(b.max_deg):
        li = b.through[a * b.max_deg + d]
        if li < 0:
            break
        for j in range(b.k):
            if cells[b.lines[li * b.k + j]] != player:
                break
        else:
            return True
    return False


cdef void _features(const Board* b, const signed char* cells, double* out) noexcept nogil:
    cdef int nf = 2 * (b.k - 1) + 1
    cdef int i, j, n1, n2, v
    for i in range(nf):
        out[i] = 0.0
    for i in range(b.n_lines):
        n1 = 0
        n2 = 0
        for j in range(b.k):
            v = cells[b.lines[i * b.k + j]]
            if v == 1:
                n1 += 1
            elif v == 2:
                n2 += 1
        if n2 == 0 and n1 > 0 and n1 < b.k:
            out[n1 - 1] += 1.0
        elif n1 == 0 and n2 > 0 and n2 < b.k:
            out[b.k - 1 + n2 - 1] -= 1.0
    for i in range(b.n_centers):
        v = cells[b.centers[i]]
        if v == 1:
            out[nf - 1] += 1.0
        elif v == 2:
            out[nf - 1] -= 1.0


cdef double _linear(const Board* b, const signed char* cells) noexcept nogil:
    cdef double x[64]
    cdef int nf = 2 * (b.k - 1) + 1
    cdef int j
    cdef double v = 0.0
    _features(b, cells, x)
    for j in range(nf):
        v += b.theta[j] * x[j]
    return v


cdef double _search(const Board* b, signed char* work, int mover, int empties, int depth,
                    double alpha, double beta, bint prune, int* best_action) noexcept nogil:
    cdef double sign = 1.0 if mover == 1 else -1.0
    cdef double best = -INFINITY
    cdef double v
    cdef int a
    for a in range(b.size):
        if work[a] != 0:
            continue
        work[a] = mover
        if _wins(b, work, a, mover):
            v = b.W
        elif empties == 1:
            v = 0.0
        elif depth == 1:
            v = sign * _linear(b, work)
        else:
            v = -_search(b, work, 3 - mover, empties - 1, depth - 1, -beta, -alpha, prune, NULL)
        work[a] = 0
        if v > best:
            best = v
            if best_action != NULL:
                best_action[0] = a
            if prune:
                if best > alpha:
                    alpha = best
                if alpha >= beta:
                    break
    return best


cdef Board _board(const int[:, ::1] lines, const int[:, ::1] through, int k, const int[::1] centers, const double[::1] theta, double W):
    cdef Board b
    b.size = through.shape[0]
    b.k = k
    b.n_lines = lines.shape[0]
    b.max_deg = through.shape[1]
    b.n_centers = centers.shape[0]
    b.lines = &lines[0, 0] if lines.shape[0] > 0 else NULL
    b.through = &through[0, 0] if through.shape[1] > 0 else NULL
    b.centers = &centers[0] if centers.shape[0] > 0 else NULL
    b.theta = &theta[0] if theta.shape[0] > 0 else NULL
    b.W = W
    return b


_EMPTY_I = np.zeros(0, dtype=np.int32)
_EMPTY_D = np.zeros(1, dtype=np.float64)


def features(cells, lines, int k, centers):
    cdef const signed char[::1] c = np.ascontiguousarray(cells, dtype=np.int8)
    cdef const int[:, ::1] L = np.ascontiguousarray(lines, dtype=np.int32)
    cdef const int[:, ::1] T = np.zeros((c.shape[0], 0), dtype=np.int32)
    cdef const int[::1] C = np.ascontiguousarray(centers, dtype=np.int32)
    cdef Board b = _board(L, T, k, C, _EMPTY_D, 0.0)
    out = np.zeros(2 * (k - 1) + 1, dtype=np.float64)
    cdef double[::1] o = out
    _features(&b, &c[0], &o[0])
    return [float(v) for v in out]


def negamax(cells, int depth, theta, double W, lines, through, int k, centers, bint prune=True):
    cdef signed char[::1] work = np.array(cells, dtype=np.int8)
    cdef const int[:, ::1] L = np.ascontiguousarray(lines, dtype=np.int32)
    cdef const int[:, ::1] T = np.ascontiguousarray(through, dtype=np.int32)
    cdef const int[::1] C = np.ascontiguousarray(centers, dtype=np.int32)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    if th.shape[0] != 2 * (k - 1) + 1:
        raise ValueError("theta length does not match the feature layout")
    cdef Board b = _board(L, T, k, C, th, W)
    cdef int empties = 0
    cdef int i
    for i in range(b.size):
        if work[i] == 0:
            empties += 1
    cdef int mover = 1 if (b.size - empties) % 2 == 0 else 2
    cdef int best_a = -1
    cdef double v
    with nogil:
        v = _search(&b, &work[0], mover, empties, depth, -INFINITY, INFINITY, prune, &best_a)
    return best_a, (v if mover == 1 else -v)


cdef int _rollout(const Board* b, signed char* work, int mover, int empties, uint64_t* rng) noexcept nogil:
    cdef uint64_t r
    cdef int a, c
    while True:
        r = _next(rng) % <uint64_t>empties
        a = -1
        for c in range(b.size):
            if work[c] == 0:
                if r == 0:
                    a = c
                    break
                r -= 1
        work[a] = mover
        empties -= 1
        if _wins(b, work, a, mover):
            return 1 if mover == 1 else -1
        if empties == 0:
            return 0
        mover = 3 - mover


def playouts(cells, lines, through, long n, uint64_t seed):
    cdef signed char[::1] base = np.array(cells, dtype=np.int8)
    cdef const int[:, ::1] L = np.ascontiguousarray(lines, dtype=np.int32)
    cdef const int[:, ::1] T = np.ascontiguousarray(through, dtype=np.int32)
    cdef Board b = _board(L, T, L.shape[1], _EMPTY_I, _EMPTY_D, 0.0)
    cdef signed char[::1] work = np.empty_like(np.asarray(base))
    cdef uint64_t rng = seed
    cdef int empties = 0
    cdef int i, u, mover
    cdef long t, w1 = 0, w2 = 0, d = 0
    for i in range(b.size):
        if base[i] == 0:
            empties += 1
    mover = 1 if (b.size - empties) % 2 == 0 else 2
    with nogil:
        for t in range(n):
            for i in range(b.size):
                work[i] = base[i]
            u = _rollout(&b, &work[0], mover, empties, &rng)
            if u > 0:
                w1 += 1
            elif u < 0:
                w2 += 1
            else:
                d += 1
    return w1, w2, d


def mcts_uniform(cells, lines, through, long budget, double c_uct, uint64_t seed):
    cdef signed char[::1] root = np.array(cells, dtype=np.int8)
    cdef const int[:, ::1] L = np.ascontiguousarray(lines, dtype=np.int32)
    cdef const int[:, ::1] T = np.ascontiguousarray(through, dtype=np.int32)
    cdef Board b = _board(L, T, L.shape[1], _EMPTY_I, _EMPTY_D, 0.0)
    cdef int size = b.size
    cdef long max_nodes = budget + 1
    cdef long max_edges = max_nodes * size
    cdef long* node_first = <long*>malloc(max_nodes * sizeof(long))
    cdef int* node_count = <int*>malloc(max_nodes * sizeof(int))
    cdef long* node_n = <long*>malloc(max_nodes * sizeof(long))
    cdef bint* node_term = <bint*>malloc(max_nodes * sizeof(bint))
    cdef int* node_value = <int*>malloc(max_nodes * sizeof(int))
    cdef int* edge_action = <int*>malloc(max_edges * sizeof(int))
    cdef double* edge_prior = <double*>malloc(max_edges * sizeof(double))
    cdef long* edge_n = <long*>malloc(max_edges * sizeof(long))
    cdef double* edge_w = <double*>malloc(max_edges * sizeof(double))
    cdef long* edge_child = <long*>malloc(max_edges * sizeof(long))
    cdef long* path = <long*>malloc((size + 1) * sizeof(long))
    cdef signed char* work = <signed char*>malloc(size * sizeof(signed char))
    if (node_first == NULL or node_count == NULL or node_n == NULL or node_term == NULL
            or node_value == NULL or edge_action == NULL or edge_prior == NULL or edge_n == NULL
            or edge_w == NULL or edge_child == NULL or path == NULL or work == NULL):
        free(node_first); free(node_count); free(node_n); free(node_term); free(node_value)
        free(edge_action); free(edge_prior); free(edge_n); free(edge_w); free(edge_child)
        free(path); free(work)
        raise MemoryError()

    cdef uint64_t rng = seed
    cdef long n_nodes = 0, n_edges = 0
    cdef int root_empties = 0
    cdef int i, c, a, mover, empties, value, m, depth
    cdef long node, child, e, first, best, ne, sim
    cdef double sq, score, best_score, prior

    for i in range(size):
        if root[i] == 0:
            root_empties += 1
    cdef int root_mover = 1 if (size - root_empties) % 2 == 0 else 2

    visits = np.zeros(size, dtype=np.int64)
    values = np.zeros(size, dtype=np.float64)
    cdef long[::1] vis = visits
    cdef double[::1] val = values

    with nogil:
        # root node
        node_first[0] = 0
        node_n[0] = 1
        node_term[0] = False
        node_value[0] = 0
        prior = 1.0 / root_empties
        for c in range(size):
            if root[c] == 0:
                edge_action[n_edges] = c
                edge_prior[n_edges] = prior
                edge_n[n_edges] = 0
                edge_w[n_edges] = 0.0
                edge_child[n_edges] = -1
                n_edges += 1
        node_count[0] = root_empties
        n_nodes = 1

        for sim in range(budget):
            for i in range(size):
                work[i] = root[i]
            mover = root_mover
            empties = root_empties
            node = 0
            depth = 0
            while True:
                first = node_first[node]
                sq = sqrt(<double>node_n[node])
                best = -1
                best_score = -INFINITY
                for e in range(first, first + node_count[node]):
                    ne = edge_n[e]
                    if ne == 0:
                        score = INFINITY
                    else:
                        score = edge_w[e] / ne + c_uct * edge_prior[e] * sq / (1 + ne)
                    if score > best_score:
                        best_score = score
                        best = e
                a = edge_action[best]
                work[a] = mover
                empties -= 1
                path[depth] = best
                depth += 1
                child = edge_child[best]
                if child == -1:
                    child = n_nodes
                    n_nodes += 1
                    node_first[child] = n_edges
                    node_n[child] = 0
                    if _wins(&b, work, a, mover):
                        value = 1 if mover == 1 else -1
                        node_term[child] = True
                        node_value[child] = value
                        node_count[child] = 0
                    elif empties == 0:
                        value = 0
                        node_term[child] = True
                        node_value[child] = 0
                        node_count[child] = 0
                    else:
                        node_term[child] = False
                        node_value[child] = 0
                        prior = 1.0 / empties
                        for c in range(size):
                            if work[c] == 0:
                                edge_action[n_edges] = c
                                edge_prior[n_edges] = prior
                                edge_n[n_edges] = 0
                                edge_w[n_edges] = 0.0
                                edge_child[n_edges] = -1
                                n_edges += 1
                        node_count[child] = empties
                        value = _rollout(&b, work, 3 - mover, empties, &rng)
                    edge_child[best] = child
                    break
                if node_term[child]:
                    value = node_value[child]
                    break
                node = child
                mover = 3 - mover
            node_n[0] += 1
            m = root_mover
            for i in range(depth):
                e = path[i]
                edge_n[e] += 1
                if m == 1:
                    edge_w[e] += value
                else:
                    edge_w[e] += -value
                node_n[edge_child[e]] += 1
                m = 3 - m

        for e in range(node_first[0], node_first[0] + node_count[0]):
            vis[edge_action[e]] = edge_n[e]
            val[edge_action[e]] = edge_w[e]

    free(node_first); free(node_count); free(node_n); free(node_term); free(node_value)
    free(edge_action); free(edge_prior); free(edge_n); free(edge_w); free(edge_child)
    free(path); free(work)
    return [int(v) for v in visits], [float(v) for v in values]
