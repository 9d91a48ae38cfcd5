"""Order-2 U-statistics, the permutation (Hoeffding) representation, and the
pairwise inequality / mobility indices built on them."""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .errors import ArgumentError, NumericError

# pairs per chunk; fixed so chunk totals (and therefore sums) do not depend on workers
CHUNK_PAIRS = 1 << 20


@dataclass(frozen=True)
class PairKernel:
    """Vectorized kernel on unit records: ``fn(zi, zj)`` with 2-D row arrays."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    symmetric: bool = True
    name: str = ""

    def __call__(self, zi: np.ndarray, zj: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(zi, zj), dtype=float)


def _as_records(data) -> np.ndarray:
    z = np.asarray(data, dtype=float)
    return z[:, None] if z.ndim == 1 else z


def _min_kernel(zi, zj):
    return np.minimum(zi[:, 0], zj[:, 0])


def _kendall_kernel(zi, zj):
    return np.sign(zi[:, 1] - zj[:, 1]) * np.sign(zi[:, 0] - zj[:, 0])


def _abs_diff_kernel(zi, zj):
    return np.abs(zi[:, 0] - zj[:, 0])


# Records are (Y, X1). ``min`` equals (y_i + y_j - |y_i - y_j|) / 2 without its rounding.
GINI_WELFARE_KERNEL = PairKernel(_min_kernel, symmetric=True, name="gini")
KENDALL_KERNEL = PairKernel(_kendall_kernel, symmetric=True, name="kendall")
MEAN_DIFFERENCE_KERNEL = PairKernel(_abs_diff_kernel, symmetric=True, name="gmd")


def row_blocks(n: int, chunk_pairs: int = CHUNK_PAIRS) -> list[tuple[int, int]]:
    """Row ranges ``[s, e)`` whose upper-triangle pairs number about ``chunk_pairs``."""
    blocks, s, acc = [], 0, 0
    for i in range(n - 1):
        acc += n - 1 - i
        if acc >= chunk_pairs:
            blocks.append((s, i + 1))
            s, acc = i + 1, 0
    if s < n - 1:
        blocks.append((s, n - 1))
    return blocks


def block_pairs(n: int, s: int, e: int) -> tuple[np.ndarray, np.ndarray]:
    """All ``(i, j)`` with ``s <= i < e`` and ``i < j < n`` in row-major order."""
    rows = np.arange(s, e)
    counts = n - 1 - rows
    ii = np.repeat(rows, counts)
    starts = np.cumsum(counts) - counts
    jj = ii + 1 + (np.arange(ii.size) - np.repeat(starts, counts))
    return ii, jj


def iter_pairs(n: int, chunk_pairs: int = CHUNK_PAIRS) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    for s, e in row_blocks(n, chunk_pairs):
        yield block_pairs(n, s, e)


def pair_total(n: int, fn: Callable[[np.ndarray, np.ndarray], float], threads: int = 1,
               chunk_pairs: int = CHUNK_PAIRS) -> float:
    """Sum ``fn(ii, jj)`` over fixed pair chunks; reduction order is independent of ``threads``."""
    blocks = row_blocks(n, chunk_pairs)

    def one(b):
        return fn(*block_pairs(n, *b))

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sums = list(pool.map(one, blocks))
    else:
        sums = [one(b) for b in blocks]
    return float(np.sum(np.asarray(sums, dtype=float)))


def u_statistic(data, kernel: PairKernel, threads: int = 1) -> float:
    """Exact mean of ``kernel`` over all pairs ``i < j``."""
    z = _as_records(data)
    n = z.shape[0]
    if n < 2:
        raise ArgumentError(f"U-statistic needs n >= 2, got {n}")
    total = pair_total(n, lambda ii, jj: float(np.sum(kernel(z[ii], z[jj]))), threads)
    return total / (n * (n - 1) / 2)


def hoeffding_draws(data, kernel: PairKernel, permutations: int | str = 1000, seed: int = 0) -> np.ndarray:
    """Per-permutation means of ``kernel`` over the disjoint pairs ``(k(i), k(floor(n/2) + i))``.

    Each draw averages ``floor(n/2)`` i.i.d. kernel evaluations and is
    unbiased for the U-statistic. ``permutations="all"`` enumerates every
    permutation (small ``n`` only), in which case the mean of the draws equals
    the U-statistic of a symmetric kernel exactly.
    """
    z = _as_records(data)
    n = z.shape[0]
    if n < 2:
        raise ArgumentError(f"need n >= 2, got {n}")
    m = n // 2
    if permutations == "all":
        if n > 9:
            raise ArgumentError("exhaustive permutations are limited to n <= 9")
        perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    else:
        if int(permutations) < 1:
            raise ArgumentError("permutations must be >= 1")
        rng = np.random.default_rng(seed)
        perms = np.array([rng.permutation(n) for _ in range(int(permutations))], dtype=np.int64)
    out = np.empty(perms.shape[0])
    step = max(1, CHUNK_PAIRS // max(m, 1))
    for s in range(0, perms.shape[0], step):
        p = perms[s:s + step]
        left, right = p[:, :m].ravel(), p[:, m:2 * m].ravel()
        vals = kernel(z[left], z[right]).reshape(p.shape[0], m)
        out[s:s + step] = vals.mean(axis=1)
    return out


def hoeffding_estimate(data, kernel: PairKernel, permutations: int | str = 1000, seed: int = 0) -> float:
    return float(np.mean(hoeffding_draws(data, kernel, permutations, seed)))


def gini_index(values) -> float:
    """Gini index ``[sum_{i<j} |y_i - y_j| / C(n, 2)] / (2 mean(y))``."""
    y = np.asarray(values, dtype=float).ravel()
    n = y.size
    if n < 2:
        raise ArgumentError(f"Gini index needs n >= 2, got {n}")
    if np.any(y < 0):
        raise NumericError("Gini index is defined for non-negative values only")
    mean = y.sum() / n
    if not mean > 0:
        raise NumericError("Gini index undefined for zero mean")
    ys = np.sort(y)
    # sum_{i<j} |y_i - y_j| = sum_k (2k - n + 1) y_(k) for sorted y
    total = float(np.dot(2.0 * np.arange(n) - n + 1, ys))
    return (total / (n * (n - 1) / 2)) / (2 * mean)


def iop_share(data, gamma_hat) -> tuple[float, float]:
    """Inequality of opportunity (Gini of circumstance predictions) and its share of the Gini of ``Y``.

    ``gamma_hat`` is either per-unit predictions or a callable applied to the
    dataset's circumstance matrix.
    """
    pred = gamma_hat(data.circumstances()) if callable(gamma_hat) else np.asarray(gamma_hat, float)
    iop = gini_index(pred)
    return iop, iop / gini_index(data.y)


def _kendall_sum_pairs(y: np.ndarray, x1: np.ndarray) -> int:
    n = y.size
    total = 0
    for ii, jj in iter_pairs(n):
        s = np.sign(y[ii] - y[jj]).astype(np.int64) * np.sign(x1[ii] - x1[jj]).astype(np.int64)
        total += int(s.sum())
    return total


def _kendall_sum_fenwick(y: np.ndarray, x1: np.ndarray) -> int:
    # order by x1; each unit is compared with every earlier unit of strictly smaller x1
    order = np.argsort(x1, kind="stable")
    xs, ys = x1[order], y[order]
    ranks = np.searchsorted(np.unique(ys), ys) + 1
    m = int(ranks.max())
    tree = [0] * (m + 1)

    def prefix(r):
        s = 0
        while r > 0:
            s += tree[r]
            r -= r & -r
        return s

    total, inserted, start, n = 0, 0, 0, xs.size
    while start < n:
        stop = start
        while stop < n and xs[stop] == xs[start]:
            stop += 1
        for k in range(start, stop):
            r = int(ranks[k])
            below = prefix(r - 1)
            above = inserted - prefix(r)
            total += below - above
        for k in range(start, stop):
            r = int(ranks[k])
            while r <= m:
                tree[r] += 1
                r += r & -r
        inserted += stop - start
        start = stop
    return total


def kendall_tau(y, x1, method: str = "auto") -> float:
    """Kendall's tau-a: mean of ``sgn(y_i - y_j) sgn(x1_i - x1_j)`` over pairs; ties count 0."""
    y = np.asarray(y, dtype=float).ravel()
    x1 = np.asarray(x1, dtype=float).ravel()
    if y.size != x1.size:
        raise ArgumentError("kendall_tau needs equal-length inputs")
    n = y.size
    if n < 2:
        raise ArgumentError(f"kendall_tau needs n >= 2, got {n}")
    if method == "auto":
        method = "pairs" if n <= 3000 else "fenwick"
    if method == "pairs":
        s = _kendall_sum_pairs(y, x1)
    elif method == "fenwick":
        s = _kendall_sum_fenwick(y, x1)
    else:
        raise ArgumentError(f"unknown method {method!r}")
    return s / (n * (n - 1) / 2)


def n_pairs(n: int) -> int:
    return n * (n - 1) // 2

