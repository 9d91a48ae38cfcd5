"""First-stage nuisance regressions and cross-fitting.

Three regression learners are provided (Nadaraya-Watson, k-nearest
neighbours, bagged trees). Each learner is an immutable configuration whose
``fit`` returns a fitted model exposing ``predict``.

Nuisances are fitted per fold on the units outside the fold: for unit folds
that is the complement of one group, for pair folds the complement of the
(one or two) groups the fold's pairs are drawn from.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .data import Dataset, FoldAssignment, PairFoldAssignment, make_pair_folds, make_unit_folds
from .errors import ArgumentError, ConfigError, EstimationError
from .ustat import PairKernel

_CHUNK_ELEMS = 4_000_000


class Model(Protocol):
    def predict(self, x: np.ndarray) -> np.ndarray: ...


class Learner(Protocol):
    def fit(self, x: np.ndarray, y: np.ndarray) -> Model: ...


def _sd(x: np.ndarray) -> np.ndarray:
    sd = x.std(axis=0, ddof=1) if x.shape[0] > 1 else np.ones(x.shape[1])
    return np.where(sd > 0, sd, 1.0)


def silverman_bandwidth(x: np.ndarray) -> np.ndarray:
    """Per-dimension rule-of-thumb bandwidth ``sd_d * (4 / ((p + 2) n))^(1 / (p + 4))``."""
    x = np.atleast_2d(x)
    n, p = x.shape
    return _sd(x) * (4.0 / ((p + 2) * n)) ** (1.0 / (p + 4))


def gaussian_weights(xq: np.ndarray, xt: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Product-Gaussian kernel weights, rescaled so each row's largest weight is 1.

    The row rescaling cancels in any ratio estimator and keeps far-away
    queries from underflowing to an all-zero row.
    """
    d2 = cdist(xq / h, xt / h, "sqeuclidean")
    d2 -= d2.min(axis=1, keepdims=True)
    return np.exp(-0.5 * d2)


@dataclass(frozen=True)
class KernelFit:
    x: np.ndarray
    y: np.ndarray
    h: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.empty(x.shape[0])
        step = max(1, _CHUNK_ELEMS // max(1, self.x.shape[0]))
        for s in range(0, x.shape[0], step):
            w = gaussian_weights(x[s:s + step], self.x, self.h)
            out[s:s + step] = (w @ self.y) / w.sum(axis=1)
        return out


@dataclass(frozen=True)
class KernelRegression:
    """Nadaraya-Watson regression with a product Gaussian kernel.

    ``bandwidth=None`` selects Silverman's rule per dimension.
    """

    bandwidth: float | Sequence[float] | None = None

    def fit(self, x, y) -> KernelFit:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float)
        if self.bandwidth is None:
            h = silverman_bandwidth(x)
        else:
            h = np.broadcast_to(np.asarray(self.bandwidth, dtype=float), (x.shape[1],)).copy()
        return KernelFit(x=x, y=y, h=h)


@dataclass(frozen=True)
class KNNFit:
    tree: cKDTree
    y: np.ndarray
    scale: np.ndarray
    k: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x) / self.scale
        _, idx = self.tree.query(x, k=self.k)
        idx = np.asarray(idx).reshape(x.shape[0], self.k)
        return self.y[idx].mean(axis=1)


@dataclass(frozen=True)
class KNNRegression:
    """k-nearest-neighbour averaging on standardized features.

    ``k=None`` uses ``ceil(sqrt(ceil(n^(2/3))))``.
    """

    k: int | None = None

    def fit(self, x, y) -> KNNFit:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.asarray(y, dtype=float)
        n = x.shape[0]
        k = self.k if self.k is not None else math.ceil(math.sqrt(math.ceil(n ** (2 / 3))))
        k = max(1, min(k, n))
        scale = x.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return KNNFit(tree=cKDTree(x / scale), y=y, scale=scale, k=k)


@dataclass(frozen=True)
class ForestRegression:
    """Bagged regression trees (all features considered at each split)."""

    trees: int = 100
    min_leaf: int = 5
    seed: int = 0

    def fit(self, x, y):
        from sklearn.ensemble import RandomForestRegressor

        model = RandomForestRegressor(
            n_estimators=self.trees,
            max_features=1.0,
            min_samples_leaf=self.min_leaf,
            random_state=self.seed,
            n_jobs=1,
        )
        model.fit(np.atleast_2d(x), np.asarray(y, dtype=float))
        return model


def make_learner(name: str = "kernel", *, bandwidth=None, k=None, trees=100, seed=0) -> Learner:
    if name == "kernel":
        return KernelRegression(bandwidth=bandwidth)
    if name == "knn":
        return KNNRegression(k=k)
    if name == "forest":
        return ForestRegression(trees=trees, seed=seed)
    raise ConfigError(f"unknown learner {name!r}; expected kernel, knn or forest")


# --------------------------------------------------------------------------
# fitted nuisance wrappers


@dataclass(frozen=True)
class GammaFit:
    """Arm-specific conditional means ``gamma(d, x)`` on columns ``cols``."""

    models: tuple[Model, Model]
    cols: np.ndarray

    def predict(self, d, x: np.ndarray) -> np.ndarray:
        xc = x[:, self.cols]
        if np.isscalar(d):
            return np.asarray(self.models[int(d)].predict(xc), dtype=float)
        d = np.asarray(d)
        return np.where(d == 1, self.models[1].predict(xc), self.models[0].predict(xc))


@dataclass(frozen=True)
class PropensityFit:
    model: Model
    cols: np.ndarray
    trim: float

    def raw(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.model.predict(x[:, self.cols]), dtype=float)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.clip(self.raw(x), self.trim, 1.0 - self.trim)


class PairModel(Protocol):
    def predict_pairs(self, x: np.ndarray, ii: np.ndarray, jj: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class BilinearKernelPairModel:
    """Nadaraya-Watson regression on all stacked ordered training pairs.

    With a product kernel over ``(x_i, x_j)`` the estimator at a query pair is
    ``k_i' G k_j / k_i' M k_j``, where ``G`` holds the kernel values of the
    training pairs and ``M`` masks out pairs of a unit with itself. This
    uses every training pair without materializing the stacked design.
    """

    xa: np.ndarray
    xb: np.ndarray
    g: np.ndarray
    mask: np.ndarray
    h: np.ndarray
    cols: np.ndarray
    fallback: float

    def predict_pairs(self, x, ii, jj):
        xc = x[:, self.cols]
        p = xc.shape[1]
        ui, inv_i = np.unique(ii, return_inverse=True)
        uj, inv_j = np.unique(jj, return_inverse=True)
        ka = gaussian_weights(xc[ui], self.xa, self.h[:p])
        kb = gaussian_weights(xc[uj], self.xb, self.h[p:])
        num = (ka @ self.g) @ kb.T
        den = (ka @ self.mask) @ kb.T
        num, den = num[inv_i, inv_j], den[inv_i, inv_j]
        ok = den > 1e-300
        out = np.full(num.shape, self.fallback)
        out[ok] = num[ok] / den[ok]
        return out


@dataclass(frozen=True)
class StackedPairModel:
    """Any unit-level learner fitted on stacked features ``[x_i, x_j]``."""

    model: Model
    cols: np.ndarray

    def predict_pairs(self, x, ii, jj):
        xc = x[:, self.cols]
        out = np.empty(ii.shape[0])
        step = 200_000
        for s in range(0, ii.shape[0], step):
            sl = slice(s, s + step)
            out[sl] = self.model.predict(np.hstack([xc[ii[sl]], xc[jj[sl]]]))
        return out


@dataclass(frozen=True)
class FoldFit:
    eval_units: np.ndarray
    train_units: np.ndarray
    gamma: GammaFit | None = None
    e: PropensityFit | None = None
    phi: dict | None = None


@dataclass(frozen=True)
class NuisanceFits:
    """Per-fold fitted nuisances plus the fold structure they belong to."""

    folds: FoldAssignment | PairFoldAssignment
    fold_fits: tuple[FoldFit, ...]
    trim: float
    meta: dict = field(default_factory=dict)

    @property
    def is_pairwise(self) -> bool:
        return isinstance(self.folds, PairFoldAssignment)

    def __len__(self) -> int:
        return len(self.fold_fits)

    def __getitem__(self, l: int) -> FoldFit:
        return self.fold_fits[l]

    def unit_predictions(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Cross-fitted ``gamma0, gamma1, e`` for every unit (unit folds only)."""
        if self.is_pairwise:
            raise ArgumentError("unit predictions need unit-level folds")
        n = x.shape[0]
        out = {}
        for name in ("gamma0", "gamma1", "e", "e_raw"):
            out[name] = np.full(n, np.nan)
        for ff in self.fold_fits:
            u = ff.eval_units
            if ff.gamma is not None:
                out["gamma0"][u] = ff.gamma.predict(0, x[u])
                out["gamma1"][u] = ff.gamma.predict(1, x[u])
            if ff.e is not None:
                out["e_raw"][u] = ff.e.raw(x[u])
                out["e"][u] = np.clip(out["e_raw"][u], self.trim, 1 - self.trim)
        return out

    def clamped_share(self, x: np.ndarray) -> float:
        """Share of evaluation-point propensities that hit a trimming bound."""
        hits = total = 0
        for ff in self.fold_fits:
            if ff.e is None:
                continue
            raw = ff.e.raw(x[ff.eval_units])
            hits += int(np.sum((raw < self.trim) | (raw > 1 - self.trim)))
            total += raw.size
        return hits / total if total else 0.0


def _map(fn: Callable, items, threads: int) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _check_trim(trim: float) -> None:
    if not 0.0 < trim < 0.5:
        raise ArgumentError(f"trim must lie in (0, 0.5), got {trim}")


def fit_gamma(data: Dataset, folds, learner: Learner, cols: np.ndarray | None = None,
              threads: int = 1) -> list[GammaFit]:
    """Fit ``gamma(d, x) = E[Y | D=d, X=x]`` on each fold's training units."""
    cols = np.arange(data.k) if cols is None else np.asarray(cols)

    def one(args):
        l, (_, train) = args
        models = []
        for arm in (0, 1):
            sub = train[data.d[train] == arm]
            if sub.size == 0:
                label = "treated" if arm else "control"
                raise EstimationError(f"fold {l}: training complement has no {label} units")
            models.append(learner.fit(data.x[np.ix_(sub, cols)], data.y[sub]))
        return GammaFit(models=tuple(models), cols=cols)

    return _map(one, enumerate(folds.splits()), threads)


def fit_propensity(data: Dataset, folds, learner: Learner, trim: float = 0.01,
                   cols: np.ndarray | None = None, threads: int = 1) -> list[PropensityFit]:
    """Regress ``D`` on ``X`` per fold; predictions are clamped to ``[trim, 1 - trim]``."""
    _check_trim(trim)
    cols = np.arange(data.k) if cols is None else np.asarray(cols)

    def one(args):
        l, (_, train) = args
        if train.size == 0:
            raise EstimationError(f"fold {l}: empty training complement")
        model = learner.fit(data.x[np.ix_(train, cols)], data.d[train].astype(float))
        return PropensityFit(model=model, cols=cols, trim=trim)

    return _map(one, enumerate(folds.splits()), threads)


ARMS = ((0, 0), (0, 1), (1, 0), (1, 1))


def fit_phi(data: Dataset, pair_folds: PairFoldAssignment, learner: Learner, kernel_g: PairKernel,
            pair_cap: int = 50_000, seed: int = 0, threads: int = 1) -> list[dict]:
    """Fit ``phi_ab(x_i, x_j) = E[g(Z_i, Z_j) | D_i=a, X_i, D_j=b, X_j]`` per pair fold.

    Training pairs are the ordered pairs of distinct units from the fold's
    training complement with ``(D_i, D_j) = (a, b)``. Nadaraya-Watson uses
    all of them through a bilinear form; other learners see a seeded
    subsample of at most ``pair_cap`` pairs.
    """
    records = data.records()
    cols = np.arange(data.k)
    x = data.x

    def one(args):
        l, fold = args
        train = fold.train_units
        fits = {}
        for a, b in ARMS:
            ta = train[data.d[train] == a]
            tb = train[data.d[train] == b]
            if ta.size == 0 or tb.size == 0 or (a == b and ta.size < 2):
                raise EstimationError(f"pair fold {l}: no training pairs with (D_i, D_j) = ({a}, {b})")
            if isinstance(learner, KernelRegression):
                ii = np.repeat(ta, tb.size)
                jj = np.tile(tb, ta.size)
                g = kernel_g(records[ii], records[jj]).reshape(ta.size, tb.size)
                mask = (ta[:, None] != tb[None, :]).astype(float)
                g = g * mask
                n_pairs = int(mask.sum())
                if learner.bandwidth is None:
                    stacked_sd = np.tile(_sd(x[train]), 2)
                    p = stacked_sd.size
                    h = stacked_sd * (4.0 / ((p + 2) * n_pairs)) ** (1.0 / (p + 4))
                else:
                    h = np.broadcast_to(np.asarray(learner.bandwidth, float), (2 * data.k,)).copy()
                fits[(a, b)] = BilinearKernelPairModel(
                    xa=x[ta], xb=x[tb], g=g, mask=mask, h=h, cols=cols,
                    fallback=float(g.sum() / n_pairs),
                )
            else:
                rng = np.random.default_rng([seed, l, 2 * a + b])
                total = ta.size * tb.size
                flat = np.arange(total) if total <= pair_cap else np.sort(
                    rng.choice(total, size=pair_cap, replace=False))
                ii, jj = ta[flat // tb.size], tb[flat % tb.size]
                keep = ii != jj
                ii, jj = ii[keep], jj[keep]
                target = kernel_g(records[ii], records[jj])
                model = learner.fit(np.hstack([x[ii], x[jj]]), target)
                fits[(a, b)] = StackedPairModel(model=model, cols=cols)
        return fits

    return _map(one, enumerate(pair_folds), threads)


def assemble(folds, gamma=None, e=None, phi=None, trim: float = 0.01, **meta) -> NuisanceFits:
    splits = folds.splits()
    fold_fits = []
    for l, (ev, tr) in enumerate(splits):
        fold_fits.append(FoldFit(
            eval_units=ev,
            train_units=tr,
            gamma=None if gamma is None else gamma[l],
            e=None if e is None else e[l],
            phi=None if phi is None else phi[l],
        ))
    return NuisanceFits(folds=folds, fold_fits=tuple(fold_fits), trim=trim, meta=dict(meta))


def cross_fit(data: Dataset, spec, learner: Learner | None = None, n_folds: int = 5, seed: int = 0,
              trim: float = 0.01, pair_cap: int = 50_000, threads: int = 1) -> NuisanceFits:
    """Fit every nuisance ``spec`` needs with the matching fold structure.

    Linear families use ``n_folds`` unit folds; pairwise families derive pair
    folds from the same unit partition. Outcome regressions of the
    inequality-of-opportunity families use the circumstance columns only.
    """
    learner = learner if learner is not None else KernelRegression()
    spec.check_data(data)
    units = make_unit_folds(data.n, n_folds, seed)
    gamma_cols = data.circumstance_index if spec.uses_circumstances else None
    meta = {"family": spec.family, "n_folds": n_folds, "seed": seed}
    if not spec.is_pairwise:
        gamma = fit_gamma(data, units, learner, cols=gamma_cols, threads=threads)
        e = fit_propensity(data, units, learner, trim=trim, threads=threads)
        return assemble(units, gamma=gamma, e=e, trim=trim, **meta)
    if n_folds < 3:
        raise ConfigError("pairwise welfare needs at least 3 folds so every pair fold has training units")
    pairs = make_pair_folds(units)
    e = fit_propensity(data, pairs, learner, trim=trim, threads=threads)
    if spec.family == "iop_gini":
        gamma = fit_gamma(data, pairs, learner, cols=gamma_cols, threads=threads)
        return assemble(pairs, gamma=gamma, e=e, trim=trim, **meta)
    phi = fit_phi(data, pairs, learner, spec.kernel, pair_cap=pair_cap, seed=seed, threads=threads)
    return assemble(pairs, e=e, phi=phi, trim=trim, **meta)
