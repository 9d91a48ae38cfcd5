"""Depth-2 threshold-tree policies: welfare evaluation, exhaustive search, reports.

The optimizer never loops over units per tree. Units are first mapped to the
cells of the threshold grid (one bin per feature), scores are summed per
cell (linear families) or per ordered cell pair (pairwise families), and
every tree is then scored from those aggregates. Near-maximal trees are
re-scored exactly with :func:`estimate_welfare` and ties are broken by
(fewer treated units, lexicographic tree encoding).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ArgumentError, ConfigError
from .scores import ARMS, LinearScoreSet, PairScoreSet, WelfareSpec

MAX_CELLS = 4096
DISCRETE_MAX_LEVELS = 25


# --------------------------------------------------------------------------
# trees


@dataclass(frozen=True)
class PolicyTree:
    """Axis-aligned threshold tree; ``x[feature] <= threshold`` goes left."""

    action: int | None = None
    feature: int | None = None
    threshold: float | None = None
    left: "PolicyTree | None" = None
    right: "PolicyTree | None" = None

    @classmethod
    def leaf(cls, action: int) -> "PolicyTree":
        return cls(action=int(action))

    @classmethod
    def split(cls, feature: int, threshold: float, left: "PolicyTree", right: "PolicyTree") -> "PolicyTree":
        return cls(feature=int(feature), threshold=float(threshold), left=left, right=right)

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @property
    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth, self.right.depth)

    def leaves(self) -> list["PolicyTree"]:
        return [self] if self.is_leaf else self.left.leaves() + self.right.leaves()

    def leaf_index(self, x: np.ndarray) -> np.ndarray:
        """Index (left to right) of the leaf each row of ``x`` falls in."""
        x = np.atleast_2d(x)
        if self.is_leaf:
            return np.zeros(x.shape[0], dtype=np.int64)
        go_left = x[:, self.feature] <= self.threshold
        n_left = len(self.left.leaves())
        return np.where(go_left, self.left.leaf_index(x), n_left + self.right.leaf_index(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        actions = np.array([lf.action for lf in self.leaves()], dtype=np.int8)
        return actions[self.leaf_index(x)]

    def encode(self) -> tuple:
        if self.is_leaf:
            return (self.action,)
        return (self.feature, self.threshold) + self.left.encode() + self.right.encode()

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"action": self.action}
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left.to_dict(), "right": self.right.to_dict()}

    def render(self, names: Sequence[str] | None = None,
               annotate: Callable[[int], str] | None = None) -> str:
        """ASCII drawing; ``annotate(leaf_number)`` appends text to each leaf."""
        lines: list[str] = []
        counter = iter(range(1 << 10))

        def label(node):
            if node.is_leaf:
                k = next(counter)
                text = "treat" if node.action else "no treat"
                return text + (f"  [{annotate(k)}]" if annotate else "")
            name = names[node.feature] if names else f"x{node.feature}"
            return f"{name} <= {node.threshold:.6g}"

        def walk(node, prefix, tail, root):
            lines.append(label(node) if root else prefix + ("`-- " if tail else "|-- ") + label(node))
            if not node.is_leaf:
                child_prefix = "" if root else prefix + ("    " if tail else "|   ")
                walk(node.left, child_prefix, False, False)
                walk(node.right, child_prefix, True, False)

        walk(self, "", True, True)
        return "\n".join(lines)


def pair_policy_indicators(pi: np.ndarray, ii: np.ndarray, jj: np.ndarray) -> np.ndarray:
    """``pi_ab(X_i, X_j) = 1(pi(X_i) = a) 1(pi(X_j) = b)`` stacked as rows ``2a + b``."""
    pi = np.asarray(pi)
    return np.stack([(pi[ii] == a) & (pi[jj] == b) for a, b in ARMS])


# --------------------------------------------------------------------------
# threshold grid


@dataclass(frozen=True)
class ThresholdGrid:
    """Candidate cut points per feature (``features`` are column indices of X)."""

    features: tuple[int, ...]
    cuts: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.features) != len(self.cuts):
            raise ArgumentError("one cut array per feature is required")
        cuts = []
        for c in self.cuts:
            c = np.asarray(c, dtype=float)
            if c.size and np.any(np.diff(c) <= 0):
                raise ArgumentError("cut points must be strictly increasing")
            cuts.append(c)
        object.__setattr__(self, "features", tuple(int(f) for f in self.features))
        object.__setattr__(self, "cuts", tuple(cuts))

    @classmethod
    def from_cuts(cls, cuts: Mapping[int, Sequence[float]]) -> "ThresholdGrid":
        items = sorted(cuts.items())
        return cls(tuple(f for f, _ in items), tuple(np.asarray(c, float) for _, c in items))

    def splits(self) -> list[tuple[int, int, float]]:
        """``(feature, cut index, threshold)`` in enumeration order."""
        return [(f, k, float(t)) for f, c in zip(self.features, self.cuts) for k, t in enumerate(c)]

    @property
    def n_cells(self) -> int:
        return int(np.prod([c.size + 1 for c in self.cuts])) if self.cuts else 1

    def to_dict(self) -> dict:
        return {str(f): c.tolist() for f, c in zip(self.features, self.cuts)}


def _is_discrete(v: np.ndarray) -> bool:
    return bool(np.all(v == np.round(v))) and np.unique(v).size <= DISCRETE_MAX_LEVELS


def make_grid(x: np.ndarray, kind: str = "deciles", features: Sequence[int] | None = None) -> ThresholdGrid:
    """Cut points from the data: ``deciles``, ``all`` distinct values, or ``quantiles:Q``.

    Integer-valued features with few levels always use their distinct values.
    Cuts at or above a feature's maximum are dropped (they cannot split).
    """
    x = np.atleast_2d(np.asarray(x, float))
    features = list(range(x.shape[1])) if features is None else [int(f) for f in features]
    if kind == "deciles":
        levels = np.arange(1, 10) / 10
    elif kind == "all":
        levels = None
    elif kind.startswith("quantiles:"):
        try:
            q = int(kind.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad grid spec {kind!r}") from None
        if q < 2:
            raise ConfigError("quantiles:Q needs Q >= 2")
        levels = np.arange(1, q) / q
    else:
        raise ConfigError(f"grid must be deciles, all or quantiles:Q, got {kind!r}")
    cuts = []
    for f in features:
        v = x[:, f]
        if levels is None or _is_discrete(v):
            c = np.unique(v)
        else:
            c = np.unique(np.quantile(v, levels))
        cuts.append(c[c < v.max()])
    return ThresholdGrid(tuple(features), tuple(cuts))


def enumerate_trees(grid: ThresholdGrid, depth: int = 2, features: Sequence[int] | None = None) -> Iterator[PolicyTree]:
    """All complete trees of the given depth over the grid, with every leaf labelling.

    Order: root split, left-child split, right-child split, then leaf actions
    read left to right as a binary number.
    """
    if depth not in (0, 1, 2):
        raise ArgumentError(f"depth must be 0, 1 or 2, got {depth}")
    splits = [s for s in grid.splits() if features is None or s[0] in set(features)]
    if depth > 0 and not splits:
        raise ArgumentError("threshold grid is empty")
    L = PolicyTree.leaf
    if depth == 0:
        yield L(0)
        yield L(1)
        return
    if depth == 1:
        for f, _, t in splits:
            for a0, a1 in product((0, 1), repeat=2):
                yield PolicyTree.split(f, t, L(a0), L(a1))
        return
    for (f, _, t), (f1, _, t1), (f2, _, t2) in product(splits, repeat=3):
        for a0, a1, a2, a3 in product((0, 1), repeat=4):
            yield PolicyTree.split(f, t, PolicyTree.split(f1, t1, L(a0), L(a1)),
                                   PolicyTree.split(f2, t2, L(a2), L(a3)))


def count_trees(grid: ThresholdGrid, depth: int) -> int:
    p = len(grid.splits())
    return {0: 2, 1: 4 * p, 2: 16 * p ** 3}[depth]


# --------------------------------------------------------------------------
# welfare


def _policy_vector(policy, x) -> np.ndarray:
    if isinstance(policy, PolicyTree):
        if x is None:
            raise ArgumentError("covariates are needed to evaluate a tree policy")
        return policy.predict(x)
    return np.asarray(policy).astype(np.int8)


def _pair_block_sum(block, pi) -> float:
    idx = 2 * pi[block.i] + pi[block.j]
    return float(np.sum(block.values[idx, np.arange(block.size)]))


def pair_mean(scores: PairScoreSet, pi: np.ndarray, threads: int = 1) -> float:
    """Mean over pairs ``i < j`` of ``sum_ab Gamma_ij^ab pi_ab``."""
    pi = np.asarray(pi).astype(np.int64)
    sums = scores.map_blocks(lambda b: _pair_block_sum(b, pi), threads)
    return math.fsum(sums) / scores.n_pairs


def estimate_welfare(scores, policy, spec: WelfareSpec, x: np.ndarray | None = None, threads: int = 1) -> float:
    """Estimated welfare of ``policy`` (a tree, with ``x``, or a 0/1 unit vector)."""
    pi = _policy_vector(policy, x)
    if isinstance(scores, LinearScoreSet):
        return float(np.mean(np.where(pi == 1, scores.gamma1, scores.gamma0)))
    m = pair_mean(scores, pi, threads)
    if spec.family == "kendall_tau":
        return -abs(m - spec.target_t)
    return m


def welfare_se(scores, policy, x: np.ndarray | None = None) -> float:
    """Standard error of the (untransformed) welfare estimate.

    Linear scores: ``sd / sqrt(n)``. Pair scores: Hoeffding projection,
    ``2 sd(h) / sqrt(n)`` with ``h_i`` the mean score over pairs containing ``i``.
    """
    pi = _policy_vector(policy, x)
    if isinstance(scores, LinearScoreSet):
        v = np.where(pi == 1, scores.gamma1, scores.gamma0)
        return float(np.std(v, ddof=1) / math.sqrt(v.size))
    n = scores.n
    h = np.zeros(n)
    pi = pi.astype(np.int64)
    for b in scores.iter_blocks():
        v = b.values[2 * pi[b.i] + pi[b.j], np.arange(b.size)]
        h += np.bincount(b.i, v, minlength=n) + np.bincount(b.j, v, minlength=n)
    h /= n - 1
    return float(2.0 * np.std(h, ddof=1) / math.sqrt(n))


# --------------------------------------------------------------------------
# cell aggregates and exhaustive search


@dataclass(frozen=True)
class CellAggregates:
    """Scores summed per grid cell (linear) or per ordered cell pair (pairwise).

    ``sums`` has shape ``(2, C)`` with rows ``(Gamma0, Gamma1)`` or
    ``(4, C, C)`` with rows ``2a + b``; welfare is ``total / norm``.
    """

    grid: ThresholdGrid
    sums: np.ndarray
    counts: np.ndarray
    norm: float
    target_t: float | None = None

    @property
    def pairwise(self) -> bool:
        return self.sums.ndim == 3

    def transform(self, total):
        v = np.asarray(total) / self.norm
        return -np.abs(v - self.target_t) if self.target_t is not None else v

    def scale(self) -> float:
        return float(np.abs(self.sums).sum() / self.norm) + 1e-300

    def mask_total(self, treat: np.ndarray) -> float:
        """Total for a 0/1 treatment mask over cells."""
        t = np.asarray(treat, dtype=bool)
        if not self.pairwise:
            return float(self.sums[1][t].sum() + self.sums[0][~t].sum())
        sides = (~t, t)
        total = 0.0
        for k, (a, b) in enumerate(ARMS):
            total += float(self.sums[k][np.ix_(sides[a], sides[b])].sum())
        return total


def cell_bins(grid: ThresholdGrid, x: np.ndarray) -> np.ndarray:
    """Per-feature bin ``#(cuts < x)``; ``x <= cut_k`` iff ``bin <= k``."""
    x = np.atleast_2d(x)
    return np.column_stack([np.searchsorted(c, x[:, f], side="left")
                            for f, c in zip(grid.features, grid.cuts)]) if grid.features else np.zeros((x.shape[0], 0), int)


def cell_ids(grid: ThresholdGrid, x: np.ndarray) -> np.ndarray:
    bins = cell_bins(grid, x)
    radix = [c.size + 1 for c in grid.cuts]
    return np.ravel_multi_index(bins.T, radix).astype(np.int64) if radix else np.zeros(bins.shape[0], np.int64)


def _cell_bin_table(grid: ThresholdGrid) -> np.ndarray:
    radix = [c.size + 1 for c in grid.cuts]
    return np.array(np.unravel_index(np.arange(grid.n_cells), radix)).T.reshape(grid.n_cells, len(radix))


def _check_cells(grid: ThresholdGrid) -> None:
    if grid.n_cells > MAX_CELLS:
        raise ConfigError(f"threshold grid has {grid.n_cells} cells (limit {MAX_CELLS}); "
                          "restrict the policy features or use a coarser grid")


def aggregate_scores(scores, grid: ThresholdGrid, x: np.ndarray, spec: WelfareSpec, threads: int = 1) -> CellAggregates:
    _check_cells(grid)
    cid = cell_ids(grid, x)
    C = grid.n_cells
    counts = np.bincount(cid, minlength=C).astype(float)
    t = spec.target_t if spec.family == "kendall_tau" else None
    if isinstance(scores, LinearScoreSet):
        sums = np.stack([np.bincount(cid, scores.gamma0, minlength=C),
                         np.bincount(cid, scores.gamma1, minlength=C)])
        return CellAggregates(grid, sums, counts, float(scores.n), t)

    def one(b):
        key = cid[b.i] * C + cid[b.j]
        return np.stack([np.bincount(key, b.values[k], minlength=C * C) for k in range(4)])

    parts = scores.map_blocks(one, threads)
    sums = np.zeros((4, C * C))
    for p in parts:
        sums += p
    return CellAggregates(grid, sums.reshape(4, C, C), counts, float(scores.n_pairs), t)


def _go_left(grid: ThresholdGrid) -> np.ndarray:
    """``(P, C)`` matrix: cell goes left at split ``p``."""
    table = _cell_bin_table(grid)
    rows = []
    for fi, c in enumerate(grid.cuts):
        for k in range(c.size):
            rows.append(table[:, fi] <= k)
    return np.array(rows, dtype=bool).reshape(len(rows), grid.n_cells)


_LABELS2 = np.array(list(product((0, 1), repeat=4)), dtype=np.int64)  # (16, 4)
_LABELS1 = np.array(list(product((0, 1), repeat=2)), dtype=np.int64)


def _depth2_root(agg: CellAggregates, G: np.ndarray, r: int) -> np.ndarray:
    """Totals ``(P, P, 16)`` over (left split, right split, labelling) for root ``r``."""
    Lr = G[r]
    U = [(G & Lr).astype(float), (~G & Lr).astype(float), (G & ~Lr).astype(float), (~G & ~Lr).astype(float)]
    P = G.shape[0]

    def shape(term, l, lp):
        # leaves 0, 1 are indexed by the left split, leaves 2, 3 by the right split
        if l < 2 and lp < 2:
            return np.diagonal(term)[:, None]
        if l >= 2 and lp >= 2:
            return np.diagonal(term)[None, :]
        return term if l < 2 else term.T

    out = np.zeros((16, P, P))
    if not agg.pairwise:
        V = [[U[l] @ agg.sums[a] for l in range(4)] for a in (0, 1)]
        for li, lab in enumerate(_LABELS2):
            acc = np.zeros((P, P))
            for l in range(4):
                v = V[lab[l]][l]
                acc = acc + (v[:, None] if l < 2 else v[None, :])
            out[li] = acc
        return out.transpose(1, 2, 0)
    Q = {}
    for k in range(4):
        SU = [agg.sums[k] @ U[lp].T for lp in range(4)]
        for l in range(4):
            for lp in range(4):
                Q[k, l, lp] = shape(U[l] @ SU[lp], l, lp)
    for li, lab in enumerate(_LABELS2):
        acc = np.zeros((P, P))
        for l in range(4):
            for lp in range(4):
                acc = acc + Q[2 * lab[l] + lab[lp], l, lp]
        out[li] = acc
    return out.transpose(1, 2, 0)


def tree_totals(agg: CellAggregates, depth: int, threads: int = 1) -> np.ndarray:
    """Aggregate totals for every tree, shaped by the enumeration order.

    Depth 0: ``(2,)``; depth 1: ``(P, 4)``; depth 2: ``(P, P, P, 16)``.
    """
    grid = agg.grid
    if depth == 0:
        C = grid.n_cells
        return np.array([agg.mask_total(np.zeros(C, bool)), agg.mask_total(np.ones(C, bool))])
    G = _go_left(grid)
    if G.shape[0] == 0:
        raise ArgumentError("threshold grid is empty")
    if depth == 1:
        out = np.empty((G.shape[0], 4))
        for r in range(G.shape[0]):
            for li, (a0, a1) in enumerate(_LABELS1):
                out[r, li] = agg.mask_total(np.where(G[r], a0, a1).astype(bool))
        return out
    if depth != 2:
        raise ArgumentError(f"depth must be 0, 1 or 2, got {depth}")
    roots = range(G.shape[0])
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda r: _depth2_root(agg, G, r), roots))
    else:
        parts = [_depth2_root(agg, G, r) for r in roots]
    return np.stack(parts)


def _candidate_masks(G: np.ndarray, depth: int, idx: np.ndarray) -> np.ndarray:
    """Cell treatment masks for candidate trees given as multi-indices."""
    C = G.shape[1] if G.size else 1
    if depth == 0:
        return np.repeat(idx[:, :1].astype(bool), C, axis=1)
    if depth == 1:
        lab = _LABELS1[idx[:, 1]]
        return np.where(G[idx[:, 0]], lab[:, :1], lab[:, 1:2]).astype(bool)
    r, s1, s2, li = idx.T
    lab = _LABELS2[li]
    left = G[r]
    leaf = np.where(left, np.where(G[s1], 0, 1), np.where(G[s2], 2, 3))
    return np.take_along_axis(lab, leaf, axis=1).astype(bool)


def _build_tree(grid: ThresholdGrid, depth: int, idx) -> PolicyTree:
    L = PolicyTree.leaf
    if depth == 0:
        return L(idx[0])
    splits = grid.splits()
    if depth == 1:
        f, _, t = splits[idx[0]]
        a = _LABELS1[idx[1]]
        return PolicyTree.split(f, t, L(a[0]), L(a[1]))
    (f, _, t), (f1, _, t1), (f2, _, t2) = (splits[i] for i in idx[:3])
    a = _LABELS2[idx[3]]
    return PolicyTree.split(f, t, PolicyTree.split(f1, t1, L(a[0]), L(a[1])),
                            PolicyTree.split(f2, t2, L(a[2]), L(a[3])))


def _encode_keys(depth: int, idx: np.ndarray) -> list[np.ndarray]:
    """Sort keys (most significant first) matching ``PolicyTree.encode`` order."""
    if depth == 0:
        return [idx[:, 0]]
    if depth == 1:
        lab = _LABELS1[idx[:, 1]]
        return [idx[:, 0], lab[:, 0], lab[:, 1]]
    lab = _LABELS2[idx[:, 3]]
    return [idx[:, 0], idx[:, 1], lab[:, 0], lab[:, 1], idx[:, 2], lab[:, 2], lab[:, 3]]


@dataclass(frozen=True)
class SearchResult:
    tree: PolicyTree
    welfare: float
    n_candidates: int
    n_trees: int


def search(agg: CellAggregates, depth: int, canonical: Callable[[np.ndarray], float] | None = None,
           threads: int = 1, rtol: float = 1e-9) -> SearchResult:
    """Exact argmax over the tree class described by ``agg.grid`` and ``depth``.

    ``canonical(cell_mask)`` re-scores near-maximal trees; it must be a
    deterministic function of the treated cell set (restricted to non-empty
    cells), so equivalent trees get bit-identical welfare. The default
    evaluates the aggregates themselves.
    """
    if canonical is None:
        canonical = lambda m: float(agg.transform(agg.mask_total(m)))  # noqa: E731
    totals = agg.transform(tree_totals(agg, depth, threads))
    flat = totals.ravel()
    best = flat.max()
    tol = rtol * agg.scale()
    cand = np.flatnonzero(flat >= best - tol)
    idx = np.array(np.unravel_index(cand, totals.shape)).T
    G = _go_left(agg.grid) if depth > 0 else np.zeros((0, agg.grid.n_cells), bool)
    masks = _candidate_masks(G, depth, idx)
    occupied = agg.counts > 0
    keys, inverse = np.unique(masks & occupied, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    values = np.array([canonical(k) for k in keys])
    treated = keys.astype(float) @ agg.counts
    top = values.max()
    ok = values == top
    fewest = treated[ok].min()
    winners = np.flatnonzero(ok & (treated == fewest))
    pick = np.flatnonzero(np.isin(inverse, winners))
    order = np.lexsort(tuple(reversed(_encode_keys(depth, idx[pick]))))
    chosen = idx[pick[order[0]]]
    return SearchResult(_build_tree(agg.grid, depth, chosen), float(top), int(cand.size), int(flat.size))


def optimize_policy(scores, spec: WelfareSpec, grid: ThresholdGrid, depth: int, x: np.ndarray,
                    threads: int = 1) -> tuple[PolicyTree, float]:
    """Welfare-maximizing tree over the grid and its estimated welfare.

    Near-maximal candidates are re-scored with :func:`estimate_welfare`, so
    the returned welfare equals ``estimate_welfare(scores, tree, spec, x)``.
    """
    agg = aggregate_scores(scores, grid, x, spec, threads)
    cid = cell_ids(grid, x)

    def canonical(mask):
        return estimate_welfare(scores, mask[cid].astype(np.int8), spec, threads=threads)

    res = search(agg, depth, canonical, threads)
    return res.tree, res.welfare


# --------------------------------------------------------------------------
# diagnostics and reports


@dataclass(frozen=True)
class SliceDiagnostics:
    second_moment: float
    minimum: float
    maximum: float
    hist_counts: np.ndarray
    hist_edges: np.ndarray


@dataclass(frozen=True)
class ScoreDiagnostics:
    slices: dict
    clamped_share: float | None = None

    @property
    def S(self) -> dict:
        return {k: v.second_moment for k, v in self.slices.items()}

    def to_dict(self) -> dict:
        out = {str(k): {"S": v.second_moment, "min": v.minimum, "max": v.maximum,
                        "hist": v.hist_counts.tolist()} for k, v in self.slices.items()}
        return {"slices": out, "clamped_share": self.clamped_share}


def score_diagnostics(scores, fits=None, x: np.ndarray | None = None, bins: int = 20) -> ScoreDiagnostics:
    """Second moments ``S`` per score slice, ranges, histograms, clamped-propensity share.

    Slices are ``"1"``/``"0"`` for linear scores and ``"ab"`` for pair scores.
    """
    if isinstance(scores, LinearScoreSet):
        named = {"1": [scores.gamma1], "0": [scores.gamma0]}
    else:
        named = {f"{a}{b}": [] for a, b in ARMS}
        for blk in scores.iter_blocks():
            for k, (a, b) in enumerate(ARMS):
                named[f"{a}{b}"].append(blk.values[k])
    slices = {}
    for name, parts in named.items():
        v = np.concatenate(parts)
        lo, hi = float(v.min()), float(v.max())
        counts, edges = np.histogram(v, bins=bins, range=(lo, hi if hi > lo else lo + 1.0))
        slices[name] = SliceDiagnostics(float(np.mean(v * v)), lo, hi, counts, edges)
    share = fits.clamped_share(x) if fits is not None and x is not None else None
    return ScoreDiagnostics(slices, share)


class AteEstimate(NamedTuple):
    ate: float
    se: float
    p: float


def estimate_ate(scores: LinearScoreSet) -> AteEstimate:
    """Mean of ``Gamma1 - Gamma0`` with plug-in SE and a two-sided normal p-value."""
    diff = scores.gamma1 - scores.gamma0
    ate = float(np.mean(diff))
    se = float(np.std(diff, ddof=1) / math.sqrt(diff.size))
    if se > 0:
        p = math.erfc(abs(ate / se) / math.sqrt(2))
    else:
        p = 0.0 if ate != 0 else 1.0
    return AteEstimate(ate, se, p)


@dataclass(frozen=True)
class LeafSummary:
    n: int
    cate: float
    p_hat: float
    action: int


@dataclass(frozen=True)
class PolicyReport:
    welfare: float
    mean: float
    gini: float | None
    iop: float | None
    kendall_tau: float | None
    share_treated: float
    leaves: tuple[LeafSummary, ...]
    tree: PolicyTree
    rendering: str = field(default="", compare=False)

    def to_dict(self) -> dict:
        return {
            "welfare": self.welfare,
            "mean": self.mean,
            "gini": self.gini,
            "iop": self.iop,
            "kendall_tau": self.kendall_tau,
            "share_treated": self.share_treated,
            "leaves": [{"n": lf.n, "cate": lf.cate, "p_hat": lf.p_hat, "action": lf.action} for lf in self.leaves],
            "tree": self.tree.to_dict(),
        }


def policy_report(data, policy: PolicyTree, spec: WelfareSpec, scores: Mapping[str, object],
                  names: Sequence[str] | None = None) -> PolicyReport:
    """Welfare, counterfactual summaries and per-leaf annotations for ``policy``.

    ``scores`` maps family names to score sets; it must contain ``additive``
    (for the mean and leaf CATEs) and ``spec.family``. Gini, IOp and
    Kendall's tau are reported when the matching score sets are present:
    Gini and IOp as ``1 - W / mean`` from the ``gini`` and ``iop_gini``
    welfare, tau as the raw pair mean of the ``kendall_tau`` scores.
    """
    if "additive" not in scores or spec.family not in scores:
        raise ArgumentError("policy_report needs additive scores and scores for the welfare family")
    x = data.x
    pi = policy.predict(x)
    add = scores["additive"]
    mean = estimate_welfare(add, pi, WelfareSpec("additive"))
    welfare = estimate_welfare(scores[spec.family], pi, spec)

    def ratio(family):
        if family not in scores or mean == 0:
            return None
        return 1.0 - pair_mean(scores[family], pi) / mean

    tau = pair_mean(scores["kendall_tau"], pi) if "kendall_tau" in scores else None
    leaf = policy.leaf_index(x)
    diff = add.gamma1 - add.gamma0
    leaves = []
    for k, lf in enumerate(policy.leaves()):
        m = leaf == k
        cnt = int(m.sum())
        leaves.append(LeafSummary(
            n=cnt,
            cate=float(diff[m].mean()) if cnt else float("nan"),
            p_hat=float(data.d[m].mean()) if cnt else float("nan"),
            action=int(lf.action),
        ))

    def note(k):
        s = leaves[k]
        return f"n={s.n}, CATE={s.cate:.4g}, p={s.p_hat:.3f}"

    return PolicyReport(
        welfare=welfare,
        mean=mean,
        gini=ratio("gini"),
        iop=ratio("iop_gini"),
        kendall_tau=tau,
        share_treated=float(np.mean(pi)),
        leaves=tuple(leaves),
        tree=policy,
        rendering=policy.render(names or data.columns, note),
    )
