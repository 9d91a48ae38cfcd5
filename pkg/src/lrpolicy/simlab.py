"""Synthetic data with known potential-outcome laws and Monte-Carlo oracles.

Every DGP draws covariates ``X ~ U[0, 1]^dim``, treatment with a linear
propensity in ``x1``, Gaussian outcome noise, and a parental outcome ``X1``
equal to a mean function plus independent Gaussian noise. Because both
noises are Gaussian, the conditional pair means of the Gini and Kendall
kernels have closed forms; the oracles use them instead of raw draws.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .data import Dataset, make_pair_folds, make_unit_folds
from .errors import ArgumentError, ConfigError
from .learners import GammaFit, NuisanceFits, PropensityFit, assemble, cross_fit, make_learner
from .policy import (CellAggregates, PolicyTree, ThresholdGrid, cell_ids, estimate_welfare, optimize_policy,
                     search)
from .scores import ARMS, WelfareSpec, atkinson_utility, build_scores

OUTCOME_MODELS = ("reference", "constant", "linear", "kendall")


@dataclass(frozen=True)
class DgpSpec:
    """Synthetic law of ``(Y(0), Y(1), D, X, X1)``.

    ``outcome`` selects the arm means (``params`` are model-specific),
    ``noise_var`` is the outcome noise variance, the propensity is
    ``prop_intercept + prop_slope * x1`` and ``X1 = m(x) + N(0, parent_var)``
    with ``m`` given by ``parent`` (``gamma0`` or ``x1``).
    """

    name: str = "reference"
    dim: int = 2
    outcome: str = "reference"
    params: tuple[float, ...] = ()
    offset: float = 0.0
    noise_var: float = 0.25
    prop_intercept: float = 0.25
    prop_slope: float = 0.5
    parent: str = "gamma0"
    parent_var: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.outcome not in OUTCOME_MODELS:
            raise ConfigError(f"unknown outcome model {self.outcome!r}")
        if self.parent not in ("gamma0", "x1"):
            raise ConfigError("parent must be gamma0 or x1")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        lo = min(self.prop_intercept, self.prop_intercept + self.prop_slope)
        hi = max(self.prop_intercept, self.prop_intercept + self.prop_slope)
        if not (0.0 < lo and hi < 1.0):
            raise ConfigError("propensity must stay inside (0, 1) on the covariate support")
        if self.noise_var < 0 or self.parent_var < 0:
            raise ConfigError("variances must be non-negative")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    @property
    def noise_sd(self) -> float:
        return math.sqrt(self.noise_var)

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(f"x{k + 1}" for k in range(self.dim))

    def gamma(self, d: int, x: np.ndarray) -> np.ndarray:
        """True ``E[Y(d) | X = x]``."""
        x = np.atleast_2d(x)
        x1 = x[:, 0]
        if self.outcome == "reference":
            base = x1 + (x[:, 1] if self.dim > 1 else 0.0)
            out = base + 1.0 - 2.0 * (x1 > 0.7) if d == 1 else base
        elif self.outcome == "constant":
            c0, c1 = self.params or (0.0, 0.0)
            out = np.full(x.shape[0], c1 if d == 1 else c0)
        elif self.outcome == "linear":
            slope, effect = self.params or (1.0, 1.0)
            out = slope * x1 + effect * d
        else:
            a0, a1, k = self.params
            out = a1 * x1 + k if d == 1 else a0 * x1
        return out + self.offset

    def propensity(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.prop_intercept + self.prop_slope * x[:, 0]

    def parent_mean(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return self.gamma(0, x) if self.parent == "gamma0" else x[:, 0].copy()

    def to_dict(self) -> dict:
        return {"name": self.name, "dim": self.dim, "outcome": self.outcome, "params": list(self.params),
                "offset": self.offset, "noise_var": self.noise_var, "prop_intercept": self.prop_intercept,
                "prop_slope": self.prop_slope, "parent": self.parent, "parent_var": self.parent_var,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, raw: dict) -> "DgpSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown DGP keys: {sorted(extra)}")
        raw = dict(raw)
        if "params" in raw:
            raw["params"] = tuple(raw["params"])
        return cls(**raw)


# Kendall preset: slopes chosen so tau(Y(1), X1) ~ 0.3 and tau(Y(0), X1) ~ 0.1;
# the treated-arm intercept lets a threshold rule on x1 push tau to about 0.
# Values come from scripts/calibrate_kendall_dgp.py.
KENDALL_PARAMS = (0.2825, 0.9114, 0.25)

PRESETS = {
    "reference": DgpSpec(),
    "reference_shifted": DgpSpec(name="reference_shifted", offset=5.0),
    "zero_noise": DgpSpec(name="zero_noise", noise_var=0.0),
    "randomized": DgpSpec(name="randomized", prop_intercept=0.5, prop_slope=0.0),
    "extreme": DgpSpec(name="extreme", prop_intercept=0.02, prop_slope=0.96, offset=5.0),
    "no_iop": DgpSpec(name="no_iop", outcome="constant", params=(4.0, 5.0), noise_var=1.0),
    "kendall": DgpSpec(name="kendall", outcome="kendall", params=KENDALL_PARAMS,
                       parent="x1", parent_var=0.01),
}


def get_preset(name: str) -> DgpSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown DGP preset {name!r}; available: {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class Sample:
    """A draw plus the truths hidden from estimators."""

    data: Dataset
    y0: np.ndarray
    y1: np.ndarray
    e: np.ndarray
    gamma0: np.ndarray
    gamma1: np.ndarray


def replication_rng(spec: DgpSpec, rep: int, n: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, rep, n])


def draw_sample(spec: DgpSpec, n: int, rep: int = 0) -> Sample:
    """Draw ``n`` units; reproducible in ``(spec.seed, rep, n)``."""
    if n < 2:
        raise ArgumentError(f"need n >= 2, got {n}")
    rng = replication_rng(spec, rep, n)
    x = rng.uniform(size=(n, spec.dim))
    e = spec.propensity(x)
    d = (rng.uniform(size=n) < e).astype(np.int8)
    g0, g1 = spec.gamma(0, x), spec.gamma(1, x)
    y0 = g0 + spec.noise_sd * rng.standard_normal(n)
    y1 = g1 + spec.noise_sd * rng.standard_normal(n)
    x1 = spec.parent_mean(x) + math.sqrt(spec.parent_var) * rng.standard_normal(n)
    y = np.where(d == 1, y1, y0)
    data = Dataset(y=y, d=d, x=x, columns=spec.columns, x1=x1)
    return Sample(data, y0, y1, e, g0, g1)


# --------------------------------------------------------------------------
# closed-form conditional pair means


def _norm_cdf(z):
    return 0.5 * (1.0 + erf(z / math.sqrt(2.0)))


def _sign_mean(m: np.ndarray, s: float) -> np.ndarray:
    """``E[sgn(N(m, s^2))] = 2 Phi(m / s) - 1``."""
    if s == 0:
        return np.sign(m)
    return 2.0 * _norm_cdf(m / s) - 1.0


def expected_min(mi: np.ndarray, mj: np.ndarray, s: float) -> np.ndarray:
    """``E[min(A, B)]`` for ``A - B ~ N(mi - mj, s^2)`` with means ``mi``, ``mj``."""
    m = mi - mj
    if s == 0:
        return np.minimum(mi, mj)
    abs_mean = s * math.sqrt(2 / math.pi) * np.exp(-m * m / (2 * s * s)) + m * (1 - 2 * _norm_cdf(-m / s))
    return 0.5 * (mi + mj) - 0.5 * abs_mean


def true_phi(spec: DgpSpec, kernel: str, a: int, b: int, xi: np.ndarray, xj: np.ndarray) -> np.ndarray:
    """``E[g(Z_i, Z_j) | D_i=a, X_i=xi, D_j=b, X_j=xj]`` for ``kernel`` in {gini, kendall}."""
    gi, gj = spec.gamma(a, xi), spec.gamma(b, xj)
    s_y = math.sqrt(2 * spec.noise_var)
    if kernel == "gini":
        return expected_min(gi, gj, s_y)
    if kernel == "kendall":
        s_p = math.sqrt(2 * spec.parent_var)
        return _sign_mean(spec.parent_mean(xi) - spec.parent_mean(xj), s_p) * _sign_mean(gi - gj, s_y)
    raise ArgumentError(f"no closed form for kernel {kernel!r}")


# --------------------------------------------------------------------------
# oracle nuisances


@dataclass(frozen=True)
class _Fn:
    fn: Callable[[np.ndarray], np.ndarray]

    def predict(self, x):
        return self.fn(x)


@dataclass(frozen=True)
class OraclePairModel:
    spec: DgpSpec
    kernel: str
    a: int
    b: int

    def predict_pairs(self, x, ii, jj):
        return true_phi(self.spec, self.kernel, self.a, self.b, x[ii], x[jj])


def oracle_fits(spec: DgpSpec, data: Dataset, family: WelfareSpec, n_folds: int = 3, trim: float = 0.01,
                seed: int = 0) -> NuisanceFits:
    """True nuisances packaged with the fold structure the family's scores expect."""
    units = make_unit_folds(data.n, n_folds, seed)
    folds = make_pair_folds(units) if family.is_pairwise else units
    cols = np.arange(data.k)
    gamma = GammaFit(models=(_Fn(lambda x: spec.gamma(0, x)), _Fn(lambda x: spec.gamma(1, x))), cols=cols)
    e = PropensityFit(model=_Fn(spec.propensity), cols=cols, trim=trim)
    phi = None
    if family.family in ("gini", "kendall_tau"):
        kern = "gini" if family.family == "gini" else "kendall"
        phi = {(a, b): OraclePairModel(spec, kern, a, b) for a, b in ARMS}
    L = len(folds.splits())
    return assemble(folds, gamma=[gamma] * L, e=[e] * L, phi=None if phi is None else [phi] * L,
                    trim=trim, oracle=True)


# --------------------------------------------------------------------------
# Monte-Carlo oracle welfare


@dataclass(frozen=True)
class OracleValue:
    value: float
    se: float
    raw: float  # before the Kendall transform


def _mc_rng(spec: DgpSpec, seed: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, seed, 104729])


def _unit_values(spec: DgpSpec, family: WelfareSpec, pi: np.ndarray, x: np.ndarray) -> np.ndarray:
    g = np.where(pi == 1, spec.gamma(1, x), spec.gamma(0, x))
    if family.family == "additive":
        return g
    if np.any(g <= 0):
        raise ConfigError("atkinson_iop oracle needs positive arm means")
    return atkinson_utility(g, family.theta)


def _pair_values(spec: DgpSpec, family: WelfareSpec, a: int, b: int, xi, xj) -> np.ndarray:
    if family.family == "iop_gini":
        return np.minimum(spec.gamma(a, xi), spec.gamma(b, xj))
    return true_phi(spec, "gini" if family.family == "gini" else "kendall", a, b, xi, xj)


def oracle_welfare(spec: DgpSpec, policy, family: WelfareSpec, mc_draws: int = 1_000_000,
                   seed: int = 0) -> OracleValue:
    """Welfare of ``policy`` under the true law, by Monte Carlo over ``mc_draws`` units or pairs.

    Pairwise families average the closed-form conditional pair mean over
    independent covariate pairs, which removes the outcome noise from the MC error.
    """
    if mc_draws < 10_000:
        raise ArgumentError("mc_draws must be at least 10^4")
    rng = _mc_rng(spec, seed)
    predict = policy.predict if isinstance(policy, PolicyTree) else policy
    if not family.is_pairwise:
        x = rng.uniform(size=(mc_draws, spec.dim))
        v = _unit_values(spec, family, np.asarray(predict(x)), x)
    else:
        xi = rng.uniform(size=(mc_draws, spec.dim))
        xj = rng.uniform(size=(mc_draws, spec.dim))
        pi, pj = np.asarray(predict(xi)), np.asarray(predict(xj))
        v = np.zeros(mc_draws)
        for a, b in ARMS:
            m = (pi == a) & (pj == b)
            if m.any():
                v[m] = _pair_values(spec, family, a, b, xi[m], xj[m])
    raw = float(np.mean(v))
    se = float(np.std(v, ddof=1) / math.sqrt(mc_draws))
    value = -abs(raw - family.target_t) if family.family == "kendall_tau" else raw
    return OracleValue(value, se, raw)


def population_grid(spec: DgpSpec, features: Sequence[int] | None = None) -> ThresholdGrid:
    """Population deciles of the uniform covariates; the same class for every n."""
    features = range(spec.dim) if features is None else features
    return ThresholdGrid.from_cuts({f: np.arange(1, 10) / 10 for f in features})


def oracle_aggregates(spec: DgpSpec, family: WelfareSpec, grid: ThresholdGrid, mc_draws: int = 1_000_000,
                      seed: int = 0, chunk: int = 250_000) -> CellAggregates:
    """True welfare contributions summed per grid cell (or ordered cell pair) from MC draws."""
    rng = _mc_rng(spec, seed)
    C = grid.n_cells
    counts = np.zeros(C)
    t = family.target_t if family.family == "kendall_tau" else None
    if not family.is_pairwise:
        sums = np.zeros((2, C))
        for s in range(0, mc_draws, chunk):
            x = rng.uniform(size=(min(chunk, mc_draws - s), spec.dim))
            cid = cell_ids(grid, x)
            counts += np.bincount(cid, minlength=C)
            for a in (0, 1):
                v = _unit_values(spec, family, np.full(x.shape[0], a), x)
                sums[a] += np.bincount(cid, v, minlength=C)
        return CellAggregates(grid, sums, counts, float(mc_draws), t)
    sums = np.zeros((4, C * C))
    for s in range(0, mc_draws, chunk):
        m = min(chunk, mc_draws - s)
        xi = rng.uniform(size=(m, spec.dim))
        xj = rng.uniform(size=(m, spec.dim))
        ci, cj = cell_ids(grid, xi), cell_ids(grid, xj)
        counts += np.bincount(ci, minlength=C) + np.bincount(cj, minlength=C)
        key = ci * C + cj
        for k, (a, b) in enumerate(ARMS):
            sums[k] += np.bincount(key, _pair_values(spec, family, a, b, xi, xj), minlength=C * C)
    return CellAggregates(grid, sums.reshape(4, C, C), counts, float(mc_draws), t)


def cell_representatives(grid: ThresholdGrid, dim: int) -> np.ndarray:
    """One covariate point per cell that every grid tree routes like the cell itself."""
    radix = [c.size + 1 for c in grid.cuts]
    table = np.array(np.unravel_index(np.arange(grid.n_cells), radix)).T.reshape(grid.n_cells, len(radix))
    pts = np.zeros((grid.n_cells, dim))
    for fi, (f, c) in enumerate(zip(grid.features, grid.cuts)):
        ext = np.append(c, (c[-1] if c.size else 0.0) + 1.0)
        pts[:, f] = ext[table[:, fi]]
    return pts


def aggregate_welfare(agg: CellAggregates, tree: PolicyTree, dim: int) -> float:
    mask = tree.predict(cell_representatives(agg.grid, dim)).astype(bool)
    return float(agg.transform(agg.mask_total(mask)))


# --------------------------------------------------------------------------
# regret experiments


@dataclass(frozen=True)
class RegretPoint:
    n: int
    mean: float
    sd: float
    regrets: tuple[float, ...]
    welfare: tuple[float, ...]


@dataclass(frozen=True)
class RegretCurve:
    family: str
    depth: int
    oracle_best: float
    best_tree: PolicyTree
    points: tuple[RegretPoint, ...]
    mc_draws: int
    mc_se: float = 0.0
    meta: dict = field(default_factory=dict)

    def to_rows(self) -> list[dict]:
        return [{"n": p.n, "mean_regret": p.mean, "sd_regret": p.sd, "replications": len(p.regrets),
                 "oracle_best": self.oracle_best} for p in self.points]


def fit_and_optimize(sample: Sample, family: WelfareSpec, grid: ThresholdGrid, depth: int, learner=None,
                     n_folds: int = 5, seed: int = 0, trim: float = 0.01, threads: int = 1):
    data = sample.data
    fits = cross_fit(data, family, learner or make_learner("kernel"), n_folds=n_folds, seed=seed,
                     trim=trim, threads=threads)
    scores = build_scores(data, fits, family, threads)
    return optimize_policy(scores, family, grid, depth, data.x, threads)


def regret_experiment(spec: DgpSpec, family: WelfareSpec, grid: ThresholdGrid | None = None, depth: int = 2,
                      n_list: Sequence[int] = (500, 2000), replications: int = 20,
                      mc_draws: int = 1_000_000, learner=None, n_folds: int = 5, seed: int = 0,
                      trim: float = 0.01, threads: int = 1,
                      progress: Callable[[str], None] | None = None) -> RegretCurve:
    """Mean regret ``W*_Pi - W(pi_hat)`` per sample size against a Monte-Carlo oracle.

    ``W*_Pi`` and ``W(pi_hat)`` are both evaluated on the same oracle cell
    aggregates, so every regret is non-negative.
    """
    if replications < 1:
        raise ArgumentError("replications must be >= 1")
    grid = grid or population_grid(spec)
    agg = oracle_aggregates(spec, family, grid, mc_draws, seed)
    best = search(agg, depth)
    points = []
    for n in n_list:
        def one(rep, n=n):
            sample = draw_sample(spec, n, rep)
            tree, _ = fit_and_optimize(sample, family, grid, depth, learner, n_folds, seed + rep, trim)
            w = aggregate_welfare(agg, tree, spec.dim)
            if progress:
                progress(f"n={n} rep={rep} regret={best.welfare - w:.6g}")
            return w

        reps = range(replications)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                ws = list(pool.map(one, reps))
        else:
            ws = [one(r) for r in reps]
        regrets = np.array([best.welfare - w for w in ws])
        points.append(RegretPoint(
            n=int(n),
            mean=float(regrets.mean()),
            sd=float(regrets.std(ddof=1)) if regrets.size > 1 else 0.0,
            regrets=tuple(float(r) for r in regrets),
            welfare=tuple(float(w) for w in ws),
        ))
    return RegretCurve(family.family, depth, best.welfare, best.tree, tuple(points), mc_draws)


# --------------------------------------------------------------------------
# orthogonality probe


@dataclass(frozen=True)
class _ShiftedGamma:
    base: GammaFit
    tau: float
    h: Callable

    def predict(self, d, x):
        return self.base.predict(d, x) + self.tau * self.h(x)


@dataclass(frozen=True)
class _ShiftedPropensity:
    base: PropensityFit
    tau: float
    h: Callable

    def raw(self, x):
        return self.base.raw(x) + self.tau * self.h(x)

    def predict(self, x):
        return np.clip(self.raw(x), self.base.trim, 1 - self.base.trim)


@dataclass(frozen=True)
class _ShiftedPair:
    base: object
    tau: float
    h: Callable

    def predict_pairs(self, x, ii, jj):
        return self.base.predict_pairs(x, ii, jj) + self.tau * self.h(x[ii])


def perturb_fits(fits: NuisanceFits, nuisance: str, tau: float, h: Callable) -> NuisanceFits:
    """Fits with one nuisance shifted by ``tau * h``.

    ``nuisance`` is ``gamma``, ``e`` or ``phi``; for families scored through a
    pair regression (Gini, Kendall) ``gamma`` shifts the pair means instead.
    """
    out = []
    for ff in fits.fold_fits:
        # pair regressions take precedence: the pair scores never read gamma
        if nuisance in ("gamma", "phi") and ff.phi is not None:
            ff = replace(ff, phi={k: _ShiftedPair(m, tau, h) for k, m in ff.phi.items()})
        elif nuisance == "gamma" and ff.gamma is not None:
            ff = replace(ff, gamma=_ShiftedGamma(ff.gamma, tau, h))
        elif nuisance == "e":
            ff = replace(ff, e=_ShiftedPropensity(ff.e, tau, h))
        else:
            raise ArgumentError(f"cannot perturb {nuisance!r} for these fits")
        out.append(ff)
    return replace(fits, fold_fits=tuple(out))


def default_perturbation(x: np.ndarray) -> np.ndarray:
    return np.sin(np.atleast_2d(x)[:, 0])


@dataclass(frozen=True)
class ProbeResult:
    slope_orthogonal: float
    slope_plugin: float
    welfare_orthogonal: float
    welfare_plugin: float

    @property
    def ratio(self) -> float:
        return abs(self.slope_orthogonal) / abs(self.slope_plugin) if self.slope_plugin else math.inf


def orthogonality_probe(spec: DgpSpec, family: WelfareSpec, n: int = 1000, h: Callable | None = None,
                        tau_grid: Sequence[float] = (-0.05, 0.05), nuisance: str = "gamma", rep: int = 0,
                        policy: PolicyTree | None = None, n_folds: int = 3) -> ProbeResult:
    """Finite-difference slope of estimated welfare in ``tau`` at 0, orthogonal vs plug-in.

    Nuisances start at the truth. The plug-in comparison is the direct
    method for outcome-side perturbations and IPW for propensity ones.
    The slope is the least-squares slope through the point at ``tau = 0``.
    """
    h = h or default_perturbation
    taus = np.asarray(tau_grid, float)
    if taus.size == 0 or np.any(taus == 0):
        raise ArgumentError("tau_grid must be non-empty and exclude 0")
    sample = draw_sample(spec, n, rep)
    data = sample.data
    policy = policy or PolicyTree.leaf(1)
    base = oracle_fits(spec, data, family, n_folds=n_folds, seed=rep)
    plug = "ipw" if nuisance == "e" else "dm"
    orth_spec = replace(family, identification="dr")
    plug_spec = replace(family, identification=plug)
    pi = policy.predict(data.x)

    def welfare(fits, ws):
        return estimate_welfare(build_scores(data, fits, ws), pi, ws)

    w0 = (welfare(base, orth_spec), welfare(base, plug_spec))
    rows = []
    for tau in taus:
        pf = perturb_fits(base, nuisance, float(tau), h)
        rows.append((welfare(pf, orth_spec), welfare(pf, plug_spec)))
    rows = np.array(rows)
    denom = float(np.sum(taus * taus))
    slope_o = float(np.sum(taus * (rows[:, 0] - w0[0])) / denom)
    slope_p = float(np.sum(taus * (rows[:, 1] - w0[1])) / denom)
    return ProbeResult(slope_o, slope_p, w0[0], w0[1])
