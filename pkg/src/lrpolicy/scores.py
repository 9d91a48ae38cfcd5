"""Welfare specifications and per-unit / per-pair scores.

Each welfare family can be scored three ways:

``dm``
    direct method: the identifying regression alone (plug-in).
``ipw``
    inverse propensity weighting of the kernel, no correction terms.
``dr``
    the locally robust score: the direct method plus correction terms that
    make the welfare estimate first-order insensitive to nuisance errors.

Linear families (``additive``, ``atkinson_iop``) produce a
:class:`LinearScoreSet`; pairwise families (``gini``, ``iop_gini``,
``kendall_tau``) produce a :class:`PairScoreSet` whose four slices are
indexed ``2a + b`` for the arm pair ``(a, b)``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import TYPE_CHECKING, Callable, Iterator

import numpy as np

from .data import Dataset, PairFold
from .errors import ArgumentError, ConfigError, NumericError
from .ustat import GINI_WELFARE_KERNEL, KENDALL_KERNEL, PairKernel

if TYPE_CHECKING:
    from .learners import FoldFit, NuisanceFits

FAMILIES = ("additive", "atkinson_iop", "gini", "iop_gini", "kendall_tau")
LINEAR_FAMILIES = ("additive", "atkinson_iop")
PAIR_FAMILIES = ("gini", "iop_gini", "kendall_tau")
IDENTIFICATIONS = ("dm", "ipw", "dr")
ARMS = ((0, 0), (0, 1), (1, 0), (1, 1))

# above this many pairs, score blocks are computed on demand instead of stored
PAIR_BUDGET = 5_000_000
ATKINSON_FLOOR = 1e-6


@dataclass(frozen=True)
class WelfareSpec:
    family: str
    theta: float = 0.5
    target_t: float = 0.0
    identification: str = "dr"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown welfare family {self.family!r}; expected one of {FAMILIES}")
        if self.identification not in IDENTIFICATIONS:
            raise ConfigError(f"identification must be one of {IDENTIFICATIONS}, got {self.identification!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError(f"theta must lie in (0, 1], got {self.theta}")
        if not -1.0 <= self.target_t <= 1.0:
            raise ConfigError(f"target t must lie in [-1, 1], got {self.target_t}")

    @property
    def is_pairwise(self) -> bool:
        return self.family in PAIR_FAMILIES

    @property
    def uses_circumstances(self) -> bool:
        return self.family in ("atkinson_iop", "iop_gini")

    @property
    def kernel(self) -> PairKernel | None:
        return {"gini": GINI_WELFARE_KERNEL, "kendall_tau": KENDALL_KERNEL}.get(self.family)

    @property
    def nuisances(self) -> frozenset[str]:
        """Nuisance functions the scores of this family need."""
        if self.family in ("gini", "kendall_tau"):
            return frozenset({"phi", "e"})
        return frozenset({"gamma", "e"})

    def check_data(self, data: Dataset) -> None:
        if self.family == "kendall_tau" and data.x1 is None:
            raise ConfigError("kendall_tau welfare needs a parental outcome column")
        if self.family == "atkinson_iop" and np.any(data.y <= 0):
            raise ConfigError("atkinson_iop welfare needs strictly positive outcomes")

    def to_dict(self) -> dict:
        return {"family": self.family, "theta": self.theta, "target_t": self.target_t,
                "identification": self.identification}


@dataclass(frozen=True)
class LinearScoreSet:
    gamma1: np.ndarray
    gamma0: np.ndarray

    def __post_init__(self):
        g1 = np.asarray(self.gamma1, float)
        g0 = np.asarray(self.gamma0, float)
        if g1.shape != g0.shape or g1.ndim != 1:
            raise ArgumentError("score vectors must be 1-D and of equal length")
        object.__setattr__(self, "gamma1", g1)
        object.__setattr__(self, "gamma0", g0)

    @property
    def n(self) -> int:
        return self.gamma1.shape[0]


@dataclass(frozen=True)
class PairBlock:
    i: np.ndarray
    j: np.ndarray
    values: np.ndarray  # (4, m), row 2a + b

    @property
    def size(self) -> int:
        return self.i.shape[0]


class PairScoreSet:
    """Scores ``Gamma_ij^{ab}`` for every pair ``i < j``, grouped in blocks (one per pair fold).

    Small problems hold the blocks in memory; above :data:`PAIR_BUDGET`
    pairs each block is recomputed when iterated.
    """

    def __init__(self, n: int, blocks=None, factories=None):
        if (blocks is None) == (factories is None):
            raise ArgumentError("pass exactly one of blocks or factories")
        self.n = n
        self._blocks = None if blocks is None else list(blocks)
        self._factories = None if factories is None else list(factories)

    @classmethod
    def from_arrays(cls, n: int, i, j, values) -> "PairScoreSet":
        return cls(n, blocks=[PairBlock(np.asarray(i), np.asarray(j), np.asarray(values, float))])

    @property
    def lazy(self) -> bool:
        return self._blocks is None

    @property
    def n_pairs(self) -> int:
        return self.n * (self.n - 1) // 2

    def __len__(self) -> int:
        return len(self._blocks if self._blocks is not None else self._factories)

    def iter_blocks(self) -> Iterator[PairBlock]:
        if self._blocks is not None:
            yield from self._blocks
        else:
            for make in self._factories:
                yield make()

    def map_blocks(self, fn: Callable[[PairBlock], object], threads: int = 1) -> list:
        """Apply ``fn`` to each block; results are returned in block order."""
        if threads <= 1 or len(self) <= 1:
            return [fn(b) for b in self.iter_blocks()]
        if self._blocks is not None:
            items, call = self._blocks, fn
        else:
            items, call = self._factories, lambda make: fn(make())
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(call, items))

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(i, j, values)`` over all pairs, sorted by ``(i, j)``."""
        blocks = list(self.iter_blocks())
        i = np.concatenate([b.i for b in blocks])
        j = np.concatenate([b.j for b in blocks])
        v = np.concatenate([b.values for b in blocks], axis=1)
        order = np.lexsort((j, i))
        return i[order], j[order], v[:, order]


def pair_indicators(d: np.ndarray, ii: np.ndarray, jj: np.ndarray) -> np.ndarray:
    """``D_ij^{ab} = 1(D_i = a) 1(D_j = b)`` stacked as rows ``2a + b``."""
    di, dj = d[ii], d[jj]
    return np.stack([(di == a) & (dj == b) for a, b in ARMS])


def atkinson_utility(v: np.ndarray, theta: float) -> np.ndarray:
    if theta == 1.0:
        return np.log(v)
    return v ** (1.0 - theta) / (1.0 - theta)


# --------------------------------------------------------------------------
# linear families


def _unit_nuisances(data: Dataset, fits: "NuisanceFits", need_gamma: bool = True):
    if fits.is_pairwise:
        raise ArgumentError("linear welfare scores need unit-level folds")
    n = data.n
    g0, g1, e = np.full(n, np.nan), np.full(n, np.nan), np.full(n, np.nan)
    for ff in fits.fold_fits:
        u = ff.eval_units
        if need_gamma:
            g0[u] = ff.gamma.predict(0, data.x[u])
            g1[u] = ff.gamma.predict(1, data.x[u])
        if ff.e is not None:
            e[u] = ff.e.predict(data.x[u])
    return g0, g1, e


def linear_scores_additive(data: Dataset, fits: "NuisanceFits", identification: str = "dr") -> LinearScoreSet:
    g0, g1, e = _unit_nuisances(data, fits)
    y, d = data.y, data.d
    if identification == "dm":
        return LinearScoreSet(g1, g0)
    if identification == "ipw":
        return LinearScoreSet(d * y / e, (1 - d) * y / (1 - e))
    return LinearScoreSet(g1 + d * (y - g1) / e, g0 + (1 - d) * (y - g0) / (1 - e))


def linear_scores_atkinson_iop(data: Dataset, fits: "NuisanceFits", theta: float,
                               identification: str = "dr") -> LinearScoreSet:
    """Scores for ``E[U(gamma(pi, X))]`` with ``U`` the Atkinson utility of aversion ``theta``.

    Predictions are floored at ``1e-6 * mean(Y)`` before ``U`` and the
    ``gamma^-theta`` correction weight are applied.
    """
    g0, g1, e = _unit_nuisances(data, fits)
    floor = ATKINSON_FLOOR * float(np.mean(data.y))
    g0, g1 = np.maximum(g0, floor), np.maximum(g1, floor)
    bad = np.flatnonzero((g0 <= 0) | (g1 <= 0))
    if bad.size:
        raise NumericError(f"non-positive outcome predictions for units {bad[:10].tolist()}")
    y, d = data.y, data.d
    u1, u0 = atkinson_utility(g1, theta), atkinson_utility(g0, theta)
    if identification == "dm":
        return LinearScoreSet(u1, u0)
    if identification == "ipw":
        return LinearScoreSet(u1 * d / e, u0 * (1 - d) / (1 - e))
    gd = np.where(d == 1, g1, g0)
    resid = gd ** (-theta) * (y - gd)
    return LinearScoreSet(u1 + d * resid / e, u0 + (1 - d) * resid / (1 - e))


# --------------------------------------------------------------------------
# pairwise families


def _fold_unit_arrays(data: Dataset, fold: PairFold, ff: "FoldFit", need_gamma: bool):
    """Full-length arrays filled on the fold's units only."""
    n, u = data.n, fold.units
    e = np.full(n, np.nan)
    e[u] = ff.e.predict(data.x[u])
    g0 = g1 = None
    if need_gamma:
        g0, g1 = np.full(n, np.nan), np.full(n, np.nan)
        g0[u] = ff.gamma.predict(0, data.x[u])
        g1[u] = ff.gamma.predict(1, data.x[u])
    return e, g0, g1


def _arm_prob(e: np.ndarray, arm: int) -> np.ndarray:
    return e if arm == 1 else 1.0 - e


def _kernel_block(data: Dataset, fold: PairFold, ff: "FoldFit", kernel: PairKernel,
                  identification: str) -> PairBlock:
    ii, jj = fold.i, fold.j
    e, _, _ = _fold_unit_arrays(data, fold, ff, need_gamma=False)
    z = data.records()
    g = kernel(z[ii], z[jj])
    dab = pair_indicators(data.d, ii, jj)
    out = np.empty((4, ii.size))
    for k, (a, b) in enumerate(ARMS):
        w = dab[k] / (_arm_prob(e[ii], a) * _arm_prob(e[jj], b))
        if identification == "ipw":
            out[k] = g * w
            continue
        phi = ff.phi[(a, b)].predict_pairs(data.x, ii, jj)
        out[k] = phi if identification == "dm" else phi + w * (g - phi)
    return PairBlock(ii, jj, out)


def _iop_gini_block(data: Dataset, fold: PairFold, ff: "FoldFit", identification: str) -> PairBlock:
    ii, jj = fold.i, fold.j
    e, g0, g1 = _fold_unit_arrays(data, fold, ff, need_gamma=True)
    y, d = data.y, data.d
    gam = (g0, g1)
    gd = np.where(d == 1, g1, g0)
    out = np.empty((4, ii.size))
    for k, (a, b) in enumerate(ARMS):
        s, t = gam[a][ii], gam[b][jj]
        base = np.minimum(s, t)  # (s + t - |s - t|) / 2
        ea, eb = _arm_prob(e[ii], a), _arm_prob(e[jj], b)
        if identification == "dm":
            out[k] = base
        elif identification == "ipw":
            out[k] = base * ((d[ii] == a) & (d[jj] == b)) / (ea * eb)
        else:
            delta = np.sign(s - t)
            ri = (d[ii] == a) / ea * (1.0 - delta) * (y[ii] - gd[ii])
            rj = (d[jj] == b) / eb * (1.0 + delta) * (y[jj] - gd[jj])
            out[k] = base + 0.5 * (ri + rj)
    return PairBlock(ii, jj, out)


def _pair_score_set(data: Dataset, fits: "NuisanceFits", block_fn, threads: int = 1) -> PairScoreSet:
    if not fits.is_pairwise:
        raise ArgumentError("pairwise welfare scores need pair folds")
    makers = [partial(block_fn, data, fold, fits[l]) for l, fold in enumerate(fits.folds)]
    if data.n * (data.n - 1) // 2 > PAIR_BUDGET:
        return PairScoreSet(data.n, factories=makers)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(lambda m: m(), makers))
    else:
        blocks = [m() for m in makers]
    return PairScoreSet(data.n, blocks=blocks)


def pair_scores_gini(data: Dataset, fits: "NuisanceFits", identification: str = "dr",
                     threads: int = 1) -> PairScoreSet:
    fn = partial(_kernel_block, kernel=GINI_WELFARE_KERNEL, identification=identification)
    return _pair_score_set(data, fits, lambda dt, fo, ff: fn(dt, fo, ff), threads)


def pair_scores_iop_gini(data: Dataset, fits: "NuisanceFits", identification: str = "dr",
                         threads: int = 1) -> PairScoreSet:
    """Scores for the Gini welfare of circumstance predictions.

    The correction weights each unit's residual by ``1 -+ delta`` with
    ``delta = sgn(gamma_a(X_i) - gamma_b(X_j))``, so only the unit holding the
    smaller prediction is corrected; exact ties (``delta = 0``) correct both
    units with weight 1/2.
    """
    fn = partial(_iop_gini_block, identification=identification)
    return _pair_score_set(data, fits, lambda dt, fo, ff: fn(dt, fo, ff), threads)


def pair_scores_kendall(data: Dataset, fits: "NuisanceFits", identification: str = "dr",
                        threads: int = 1) -> PairScoreSet:
    """Scores whose pair mean estimates Kendall's tau between ``Y`` and ``X1``.

    The target ``t`` and the absolute value are applied by the welfare
    evaluator, so these scores stay linear in the distribution.
    """
    if data.x1 is None:
        raise ConfigError("kendall_tau scores need a parental outcome column")
    fn = partial(_kernel_block, kernel=KENDALL_KERNEL, identification=identification)
    return _pair_score_set(data, fits, lambda dt, fo, ff: fn(dt, fo, ff), threads)


def build_scores(data: Dataset, fits: "NuisanceFits", spec: WelfareSpec, threads: int = 1):
    """Scores for ``spec.family`` under ``spec.identification``."""
    spec.check_data(data)
    ident = spec.identification
    if spec.family == "additive":
        return linear_scores_additive(data, fits, ident)
    if spec.family == "atkinson_iop":
        return linear_scores_atkinson_iop(data, fits, spec.theta, ident)
    if spec.family == "gini":
        return pair_scores_gini(data, fits, ident, threads)
    if spec.family == "iop_gini":
        return pair_scores_iop_gini(data, fits, ident, threads)
    return pair_scores_kendall(data, fits, ident, threads)


def ipw_scores(data: Dataset, fits: "NuisanceFits", spec: WelfareSpec, threads: int = 1):
    """Inverse-propensity-weighted scores without correction terms."""
    return build_scores(data, fits, WelfareSpec(spec.family, spec.theta, spec.target_t, "ipw"), threads)


# --------------------------------------------------------------------------
# IPW-based locally robust scores (propensity correction terms)


def _ipw_orthogonal_gini_block(data: Dataset, fold: PairFold, ff: "FoldFit", ref: np.ndarray) -> PairBlock:
    ii, jj = fold.i, fold.j
    e, _, _ = _fold_unit_arrays(data, fold, ff, need_gamma=False)
    z = data.records()
    g = GINI_WELFARE_KERNEL(z[ii], z[jj])
    d = data.d
    units = fold.units
    pos = np.full(data.n, -1)
    pos[units] = np.arange(units.size)
    uu = np.repeat(units, ref.size)
    rr = np.tile(ref, units.size)
    out = np.empty((4, ii.size))
    for k, (a, b) in enumerate(ARMS):
        model = ff.phi[(a, b)]
        # E over X_j of phi_ab(x_i, X_j), and over X_i of phi_ab(X_i, x_j)
        first = model.predict_pairs(data.x, uu, rr).reshape(units.size, ref.size).mean(axis=1)
        second = model.predict_pairs(data.x, rr, uu).reshape(units.size, ref.size).mean(axis=1)
        ea, eb = _arm_prob(e[ii], a), _arm_prob(e[jj], b)
        da, db = (d[ii] == a), (d[jj] == b)
        alpha1 = -first[pos[ii]] / ea
        alpha2 = -second[pos[jj]] / eb
        out[k] = g * da * db / (ea * eb) + alpha1 * (da - ea) + alpha2 * (db - eb)
    return PairBlock(ii, jj, out)


def ipw_orthogonal_scores(data: Dataset, fits: "NuisanceFits", spec: WelfareSpec,
                          ref_size: int = 300, seed: int = 0):
    """IPW scores plus propensity correction terms (additive and Gini families only).

    For the Gini family the correction weights need ``E[phi_ab(x, X_j)]``;
    it is averaged over up to ``ref_size`` units drawn from each fold's
    training complement.
    """
    if spec.family == "additive":
        _, _, e = _unit_nuisances(data, fits, need_gamma=False)
        g0, g1, _ = _unit_nuisances(data, fits)
        y, d = data.y, data.d
        return LinearScoreSet(
            d * y / e - g1 / e * (d - e),
            (1 - d) * y / (1 - e) - g0 / (1 - e) * ((1 - d) - (1 - e)),
        )
    if spec.family != "gini":
        raise ConfigError("IPW-based orthogonal scores are implemented for additive and gini only")
    rng = np.random.default_rng(seed)
    makers = []
    for l, fold in enumerate(fits.folds):
        tr = fold.train_units
        ref = np.sort(rng.choice(tr, size=min(ref_size, tr.size), replace=False))
        makers.append(partial(_ipw_orthogonal_gini_block, data, fold, fits[l], ref))
    return PairScoreSet(data.n, blocks=[m() for m in makers])
