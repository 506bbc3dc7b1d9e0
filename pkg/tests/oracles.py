"""Independent reference implementations used by the tests.

These deliberately avoid the package's algorithms: exhaustive enumeration
instead of dynamic programming, breadth-first search instead of the edit
distance table, plain loops instead of vectorised numpy.
"""

from __future__ import annotations

import itertools
from collections import deque

import numpy as np

from gradets import ndtensor as nd
from gradets.ndtensor import Node


def monotone_paths(n, m):
    """Every path from (0, 0) to (n-1, m-1) using steps (1,0), (0,1), (1,1)."""
    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield [(i, j)]
            return
        for di, dj in ((1, 1), (0, 1), (1, 0)):
            a, b = i + di, j + dj
            if a < n and b < m:
                for rest in walk(a, b):
                    yield [(i, j)] + rest
    yield from walk(0, 0)


def brute_dtw(cost):
    cost = np.asarray(cost)
    return min(sum(cost[i, j] for i, j in p) for p in monotone_paths(*cost.shape))


def _neighbours(s, alphabet, max_len):
    for k in range(len(s)):
        yield s[:k] + s[k + 1:]
        for a in alphabet:
            if a != s[k]:
                yield s[:k] + a + s[k + 1:]
    if len(s) < max_len:
        for k in range(len(s) + 1):
            for a in alphabet:
                yield s[:k] + a + s[k:]


def bfs_edit_distances(alphabet="ab", max_len=6):
    """All-pairs unit-cost edit distance over strings up to ``max_len`` by BFS."""
    words = ["".join(w) for n in range(max_len + 1) for w in itertools.product(alphabet, repeat=n)]
    table = {}
    for src in words:
        dist = {src: 0}
        queue = deque([src])
        while queue:
            s = queue.popleft()
            for t in _neighbours(s, alphabet, max_len):
                if t not in dist:
                    dist[t] = dist[s] + 1
                    queue.append(t)
        for dst in words:
            table[src, dst] = dist[dst]
    return words, table


def loop_lsd(ref, hyp):
    total = 0.0
    for i in range(ref.shape[0]):
        acc = 0.0
        for j in range(ref.shape[1]):
            acc += (ref[i, j] - hyp[i, j]) ** 2
        total += (acc / ref.shape[1]) ** 0.5
    return total / ref.shape[0]


# --------------------------------------------------------------------------
# random single-op graphs for gradient property tests

UNARY = ("relu", "tanh", "exp", "log", "sqrt")
OPS = ("add", "sub", "mul", "matmul", *UNARY, "sum", "mean", "broadcast", "reshape",
       "concat", "slice", "softmax_xent", "squared_norm")


def _away_from_zero(r, shape):
    x = r.uniform(-1.0, 1.0, shape)
    return np.where(np.abs(x) < 0.05, np.sign(x + 1e-12) * 0.05, x)


def random_op_graph(op, seed):
    """A scalar graph ``sum(w * op(inputs))`` with random inputs in [-1, 1] and random ``w``."""
    r = np.random.default_rng(seed)
    rows, cols = int(r.integers(1, 5)), int(r.integers(1, 5))

    def leaf(shape, name, positive=False, kink=False):
        if positive:
            v = r.uniform(0.1, 1.0, shape)
        elif kink:
            v = _away_from_zero(r, shape)
        else:
            v = r.uniform(-1.0, 1.0, shape)
        return Node.leaf(v, name)

    if op in ("add", "sub", "mul"):
        a, b = leaf((rows, cols), "a"), leaf((rows, cols), "b")
        out = getattr(nd, op)(a, b)
    elif op == "matmul":
        inner = int(r.integers(1, 5))
        out = nd.matmul(leaf((rows, inner), "a"), leaf((inner, cols), "b"))
    elif op in UNARY:
        a = leaf((rows, cols), "a", positive=op in ("log", "sqrt"), kink=op == "relu")
        out = getattr(nd, op)(a)
    elif op in ("sum", "mean", "squared_norm"):
        axis = [None, 0, 1][int(r.integers(0, 3))]
        out = getattr(nd, op)(leaf((rows, cols), "a"), axis=axis)
    elif op == "broadcast":
        out = nd.broadcast(leaf((cols,), "a"), (rows, cols))
    elif op == "reshape":
        out = nd.reshape(leaf((rows, cols), "a"), (cols, rows))
    elif op == "concat":
        extra = int(r.integers(1, 4))
        out = nd.concat([leaf((rows, cols), "a"), leaf((rows, extra), "b")], axis=1)
    elif op == "slice":
        axis = int(r.integers(0, 2))
        size = (rows, cols)[axis]
        start = int(r.integers(0, size))
        out = nd.slice(leaf((rows, cols), "a"), start, int(r.integers(start + 1, size + 1)), axis=axis)
    elif op == "softmax_xent":
        k = int(r.integers(2, 6))
        out = nd.softmax_xent(leaf((rows, k), "a"), r.integers(0, k, rows))
    else:
        raise KeyError(op)
    w = Node.const(r.uniform(-1.0, 1.0, out.shape))
    return nd.sum(nd.mul(w, out))
