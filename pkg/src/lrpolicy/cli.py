"""Command-line interface: ``report``, ``optimize``, ``simulate`` and ``probe``.

Every run resolves a :class:`RunConfig` (defaults, then ``--config`` file,
then explicit flags), hashes it, and writes line-delimited JSON records that
embed the hash and seed. A human-readable table goes to stdout.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .data import ColumnMapping, Dataset, load_dataset, make_unit_folds
from .errors import ConfigError, LRPolicyError
from .learners import cross_fit, make_learner
from .policy import (PolicyTree, estimate_ate, estimate_welfare, make_grid, optimize_policy, policy_report,
                     score_diagnostics)
from .scores import FAMILIES, IDENTIFICATIONS, WelfareSpec, build_scores
from .simlab import (DgpSpec, PRESETS, ThresholdGrid, draw_sample, get_preset, orthogonality_probe,
                     regret_experiment)
from .ustat import gini_index, kendall_tau

log = logging.getLogger("lrpolicy")

# keys that change where or how fast a run goes, not what it computes
_RUNTIME_KEYS = ("threads", "out", "json")


@dataclass(frozen=True)
class RunConfig:
    command: str = "report"
    data: str | None = None
    mapping: str | None = None
    delimiter: str = ","
    dgp: str | None = None
    n: int = 2000
    learner: str = "kernel"
    bandwidth: float | None = None
    k: int | None = None
    trees: int = 100
    trim: float = 0.01
    pair_cap: int = 50_000
    folds: int = 5
    family: tuple[str, ...] = ("additive",)
    theta: float = 0.5
    target_t: float = 0.0
    identification: str = "dr"
    depth: int = 2
    grid: str = "deciles"
    features: tuple[str, ...] | None = None
    seed: int = 0
    n_list: tuple[int, ...] = (500, 2000)
    reps: int = 20
    mc_draws: int = 1_000_000
    tau: float = 0.05
    nuisance: str = "gamma"
    threads: int = 1
    out: str | None = None
    json: bool = False

    def validate(self) -> "RunConfig":
        if self.command not in ("report", "optimize", "simulate", "probe"):
            raise ConfigError(f"unknown command {self.command!r}")
        if self.command in ("report", "optimize"):
            if (self.data is None) == (self.dgp is None):
                raise ConfigError("give exactly one data source: --data with --mapping, or --dgp")
            if self.data is not None and self.mapping is None:
                raise ConfigError("--data needs --mapping")
        if self.command in ("simulate", "probe") and self.dgp is None:
            raise ConfigError(f"{self.command} needs --dgp")
        for fam in self.family:
            if fam not in FAMILIES:
                raise ConfigError(f"unknown family {fam!r}; expected one of {FAMILIES}")
        if self.identification not in IDENTIFICATIONS:
            raise ConfigError(f"identification must be one of {IDENTIFICATIONS}")
        if self.learner not in ("kernel", "knn", "forest"):
            raise ConfigError("learner must be kernel, knn or forest")
        if self.depth not in (0, 1, 2):
            raise ConfigError("depth must be 0, 1 or 2")
        if not 0 < self.trim < 0.5:
            raise ConfigError("trim must lie in (0, 0.5)")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.n < 2 or any(v < 2 for v in self.n_list):
            raise ConfigError("sample sizes must be >= 2")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if self.nuisance not in ("gamma", "e", "phi"):
            raise ConfigError("nuisance must be gamma, e or phi")
        for fam in self.family:
            WelfareSpec(fam, self.theta, self.target_t, self.identification)
        return self

    def resolved(self) -> dict:
        """Serializable config without runtime-only keys."""
        d = asdict(self)
        for key in _RUNTIME_KEYS:
            d.pop(key)
        return _jsonable(d)

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return _clean_float(float(obj))
    if isinstance(obj, float):
        return _clean_float(obj)
    return obj


def _clean_float(v: float):
    return v if np.isfinite(v) else None


_TUPLE_KEYS = {"family": str, "features": str, "n_list": int}


def _coerce(key: str, value):
    if key in _TUPLE_KEYS and value is not None:
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        elif not isinstance(value, (list, tuple)):
            value = [value]
        return tuple(_TUPLE_KEYS[key](v.strip() if isinstance(v, str) else v) for v in value)
    return value


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a key/value document")
    raw = {k.replace("-", "_"): v for k, v in raw.items()}
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    return raw


def build_config(command: str, file_values: dict, flag_values: dict) -> RunConfig:
    merged = {**file_values, **flag_values, "command": command}
    merged = {k: _coerce(k, v) for k, v in merged.items()}
    try:
        return RunConfig(**merged).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# shared pieces


def _dgp_spec(name: str) -> DgpSpec:
    if name in PRESETS:
        return get_preset(name)
    path = Path(name)
    if path.suffix.lower() in (".yaml", ".yml", ".json") and path.exists():
        with open(path) as fh:
            return DgpSpec.from_dict(yaml.safe_load(fh) or {})
    raise ConfigError(f"--dgp must be a preset ({', '.join(sorted(PRESETS))}) or a spec file")


def _load_data(cfg: RunConfig) -> Dataset:
    if cfg.data is not None:
        return load_dataset(cfg.data, ColumnMapping.from_file(cfg.mapping), cfg.delimiter)
    return draw_sample(_dgp_spec(cfg.dgp), cfg.n, cfg.seed).data


def _learner(cfg: RunConfig):
    return make_learner(cfg.learner, bandwidth=cfg.bandwidth, k=cfg.k, trees=cfg.trees, seed=cfg.seed)


def _spec(cfg: RunConfig, family: str) -> WelfareSpec:
    return WelfareSpec(family, cfg.theta, cfg.target_t, cfg.identification)


def _scores(cfg: RunConfig, data: Dataset, spec: WelfareSpec):
    fits = cross_fit(data, spec, _learner(cfg), n_folds=cfg.folds, seed=cfg.seed, trim=cfg.trim,
                     pair_cap=cfg.pair_cap, threads=cfg.threads)
    return fits, build_scores(data, fits, spec, cfg.threads)


def _feature_index(cfg: RunConfig, data: Dataset) -> list[int]:
    if not cfg.features:
        return list(range(data.k))
    out = []
    for f in cfg.features:
        if f in data.columns:
            out.append(data.columns.index(f))
        elif f.isdigit() and int(f) < data.k:
            out.append(int(f))
        else:
            raise ConfigError(f"unknown policy feature {f!r}")
    return out


class Emitter:
    """Collects JSONL records and human-readable lines for one run."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.hash = cfg.config_hash()
        self.records: list[dict] = []
        self.lines: list[str] = []
        self.record("config", config=cfg.resolved())

    def record(self, kind: str, **payload):
        rec = {"record": kind, "config_hash": self.hash, "seed": self.cfg.seed}
        rec.update(_jsonable(payload))
        self.records.append(rec)

    def text(self, line: str = ""):
        self.lines.append(line)

    def flush(self, stdout=None):
        stdout = stdout or sys.stdout
        body = "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)
        if self.cfg.out:
            Path(self.cfg.out).write_text(body)
        if self.cfg.json:
            stdout.write(body)
        else:
            stdout.write("\n".join(self.lines) + "\n")


def _fmt(v, spec: str = ".4f") -> str:
    return "NA" if v is None else format(v, spec)


# --------------------------------------------------------------------------
# commands


def _iop_predictions(cfg: RunConfig, data: Dataset) -> np.ndarray:
    """Cross-fitted regression of Y on the circumstance columns."""
    folds = make_unit_folds(data.n, min(cfg.folds, data.n), cfg.seed)
    circ = data.circumstances()
    pred = np.empty(data.n)
    learner = _learner(cfg)
    for ev, tr in folds.splits():
        pred[ev] = learner.fit(circ[tr], data.y[tr]).predict(circ[ev])
    return pred


def cmd_report(cfg: RunConfig, out: Emitter) -> None:
    data = _load_data(cfg)
    _, add = _scores(cfg, data, _spec(cfg, "additive"))
    ate = estimate_ate(add)
    gini = iop = ratio = None
    if np.all(data.y >= 0) and data.y.mean() > 0:
        gini = gini_index(data.y)
        iop = gini_index(np.maximum(_iop_predictions(cfg, data), 0.0))
        ratio = iop / gini if gini > 0 else None
    tau = kendall_tau(data.y, data.x1) if data.x1 is not None else None
    row = {"n": data.n, "n_dropped": data.n_dropped, "ate": ate.ate, "ate_se": ate.se, "ate_p": ate.p,
           "gini": gini, "iop": iop, "iop_ratio": ratio, "kendall_tau": tau}
    out.record("report", **row)
    out.text(f"config {out.hash[:12]}  seed {cfg.seed}")
    out.text(f"{'n':>8} {'ATE':>10} {'se':>9} {'p':>8} {'Gini':>8} {'IOp':>8} {'IOp/G':>8} {'tau':>8}")
    out.text(f"{data.n:>8d} {ate.ate:>10.4f} {ate.se:>9.4f} {ate.p:>8.4f} {_fmt(gini):>8} {_fmt(iop):>8} "
             f"{_fmt(ratio):>8} {_fmt(tau):>8}")


def cmd_optimize(cfg: RunConfig, out: Emitter) -> None:
    data = _load_data(cfg)
    grid = make_grid(data.x, cfg.grid, _feature_index(cfg, data))
    summary_families = ["additive", "gini", "iop_gini"] + (["kendall_tau"] if data.x1 is not None else [])
    wanted = list(dict.fromkeys(summary_families + list(cfg.family)))
    scores, fits = {}, {}
    for fam in wanted:
        fits[fam], scores[fam] = _scores(cfg, data, _spec(cfg, fam))
    out.text(f"config {out.hash[:12]}  seed {cfg.seed}  n {data.n}  grid cells {grid.n_cells}")
    header = f"{'family':<13} {'rule':<10} {'welfare':>10} {'mean':>9} {'Gini':>8} {'IOp':>8} {'tau':>8} {'treated':>8}"
    for fam in cfg.family:
        spec = _spec(cfg, fam)
        tree, welfare = optimize_policy(scores[fam], spec, grid, cfg.depth, data.x, cfg.threads)
        diag = score_diagnostics(scores[fam], fits[fam], data.x)
        out.record("diagnostics", family=fam, **diag.to_dict())
        out.text("")
        out.text(header)
        for label, rule in (("optimal", tree), ("treat-none", PolicyTree.leaf(0)), ("treat-all", PolicyTree.leaf(1))):
            rep = policy_report(data, rule, spec, scores, data.columns)
            out.record("policy", family=fam, rule=label, **rep.to_dict())
            out.text(f"{fam:<13} {label:<10} {rep.welfare:>10.4f} {rep.mean:>9.4f} {_fmt(rep.gini):>8} "
                     f"{_fmt(rep.iop):>8} {_fmt(rep.kendall_tau):>8} {rep.share_treated:>8.3f}")
            if label == "optimal":
                rendering = rep.rendering
        out.text("")
        out.text(rendering)


def _population_grid(cfg: RunConfig, spec: DgpSpec) -> ThresholdGrid:
    if cfg.grid == "deciles":
        levels = np.arange(1, 10) / 10
    elif cfg.grid.startswith("quantiles:"):
        q = int(cfg.grid.split(":", 1)[1])
        levels = np.arange(1, q) / q
    else:
        raise ConfigError("simulate needs a population grid: deciles or quantiles:Q")
    feats = range(spec.dim) if not cfg.features else [int(f.lstrip("x")) - 1 if f.startswith("x") else int(f)
                                                      for f in cfg.features]
    return ThresholdGrid.from_cuts({f: levels for f in feats})


def cmd_simulate(cfg: RunConfig, out: Emitter) -> None:
    dgp = _dgp_spec(cfg.dgp)
    dgp = replace(dgp, seed=cfg.seed)
    grid = _population_grid(cfg, dgp)
    out.text(f"config {out.hash[:12]}  seed {cfg.seed}  dgp {dgp.name}")
    out.text(f"{'family':<13} {'n':>7} {'reps':>5} {'mean regret':>12} {'sd':>10} {'W*':>10}")
    for fam in cfg.family:
        curve = regret_experiment(dgp, _spec(cfg, fam), grid, cfg.depth, cfg.n_list, cfg.reps, cfg.mc_draws,
                                  _learner(cfg), cfg.folds, cfg.seed, cfg.trim, cfg.threads)
        out.record("oracle", family=fam, oracle_best=curve.oracle_best, best_tree=curve.best_tree.to_dict())
        for p in curve.points:
            out.record("regret", family=fam, n=p.n, mean_regret=p.mean, sd_regret=p.sd,
                       regrets=list(p.regrets))
            out.text(f"{fam:<13} {p.n:>7d} {len(p.regrets):>5d} {p.mean:>12.6f} {p.sd:>10.6f} {curve.oracle_best:>10.4f}")


def cmd_probe(cfg: RunConfig, out: Emitter) -> None:
    dgp = replace(_dgp_spec(cfg.dgp), seed=cfg.seed)
    out.text(f"config {out.hash[:12]}  seed {cfg.seed}  dgp {dgp.name}  nuisance {cfg.nuisance}")
    out.text(f"{'family':<13} {'reps':>5} {'orth wins':>10} {'median |orth|':>14} {'median |plug|':>14}")
    for fam in cfg.family:
        spec = _spec(cfg, fam)
        res = [orthogonality_probe(dgp, spec, cfg.n, tau_grid=(-cfg.tau, cfg.tau), nuisance=cfg.nuisance, rep=r)
               for r in range(cfg.reps)]
        so = np.array([r.slope_orthogonal for r in res])
        sp = np.array([r.slope_plugin for r in res])
        wins = int(np.sum(np.abs(so) < np.abs(sp)))
        out.record("probe", family=fam, slopes_orthogonal=so, slopes_plugin=sp, orthogonal_wins=wins,
                   reps=cfg.reps)
        out.text(f"{fam:<13} {cfg.reps:>5d} {wins:>10d} {np.median(np.abs(so)):>14.5f} {np.median(np.abs(sp)):>14.5f}")


COMMANDS = {"report": cmd_report, "optimize": cmd_optimize, "simulate": cmd_simulate, "probe": cmd_probe}


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = argparse.ArgumentParser(add_help=False, argument_default=S)
    common.add_argument("--config", help="YAML or JSON file with run settings; flags win over it")
    src = common.add_argument_group("data")
    src.add_argument("--data", help="delimited data file with a header row")
    src.add_argument("--mapping", help="column mapping file (outcome, treatment, covariates, ...)")
    src.add_argument("--delimiter")
    src.add_argument("--dgp", help=f"synthetic preset ({', '.join(sorted(PRESETS))}) or DGP spec file")
    src.add_argument("--n", type=int, help="sample size for --dgp")
    fit = common.add_argument_group("first stage")
    fit.add_argument("--learner", choices=["kernel", "knn", "forest"])
    fit.add_argument("--bandwidth", type=float)
    fit.add_argument("--k", type=int)
    fit.add_argument("--trees", type=int)
    fit.add_argument("--trim", type=float)
    fit.add_argument("--pair-cap", dest="pair_cap", type=int)
    fit.add_argument("--folds", type=int)
    wf = common.add_argument_group("welfare")
    wf.add_argument("--family", help=f"comma-separated list from {', '.join(FAMILIES)}")
    wf.add_argument("--theta", type=float)
    wf.add_argument("--target-t", dest="target_t", type=float)
    wf.add_argument("--identification", choices=list(IDENTIFICATIONS))
    pol = common.add_argument_group("policy")
    pol.add_argument("--depth", type=int)
    pol.add_argument("--grid", help="deciles, all or quantiles:Q")
    pol.add_argument("--features", help="comma-separated covariate names used by the tree")
    run = common.add_argument_group("run")
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int, help="worker cap")
    run.add_argument("--out", help="write JSONL records here")
    run.add_argument("--json", action="store_true", help="print JSONL records instead of the table")
    run.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lrpolicy", description="Welfare-maximizing treatment rules.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("report", parents=[common], help="ATE, Gini, IOp and Kendall's tau of a sample")
    sub.add_parser("optimize", parents=[common], help="optimal tree against treat-none and treat-all")
    sim = sub.add_parser("simulate", parents=[common], help="regret curve on a synthetic DGP")
    sim.add_argument("--n-list", dest="n_list", help="comma-separated sample sizes", default=S)
    sim.add_argument("--reps", type=int, default=S)
    sim.add_argument("--mc-draws", dest="mc_draws", type=int, default=S)
    probe = sub.add_parser("probe", parents=[common], help="orthogonality slope comparison")
    probe.add_argument("--reps", type=int, default=S)
    probe.add_argument("--tau", type=float, default=S, help="finite-difference step")
    probe.add_argument("--nuisance", choices=["gamma", "e", "phi"], default=S)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    verbose = args.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        file_values = load_config_file(args.pop("config")) if "config" in args else {}
        cfg = build_config(command, file_values, args)
        out = Emitter(cfg)
        COMMANDS[command](cfg, out)
        out.flush()
    except LRPolicyError as exc:
        print(f"lrpolicy: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
