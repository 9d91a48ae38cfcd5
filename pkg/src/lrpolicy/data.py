"""Observed samples, column mappings and cross-fitting fold assignments."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd
import yaml

from .errors import ArgumentError, ConfigError, DataError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ColumnMapping:
    outcome: str
    treatment: str
    covariates: tuple[str, ...]
    parental_outcome: str | None = None
    circumstances: tuple[str, ...] | None = None

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ColumnMapping":
        try:
            outcome = raw["outcome"]
            treatment = raw["treatment"]
            covariates = raw["covariates"]
        except KeyError as exc:
            raise ConfigError(f"column mapping is missing key {exc.args[0]!r}") from None
        if isinstance(covariates, str):
            covariates = [covariates]
        circ = raw.get("circumstances")
        if isinstance(circ, str):
            circ = [circ]
        return cls(
            outcome=str(outcome),
            treatment=str(treatment),
            covariates=tuple(str(c) for c in covariates),
            parental_outcome=raw.get("parental_outcome"),
            circumstances=None if circ is None else tuple(str(c) for c in circ),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ColumnMapping":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"mapping file not found: {path}")
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, Mapping):
            raise ConfigError(f"mapping file {path} must hold a key/value document")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "treatment": self.treatment,
            "covariates": list(self.covariates),
            "parental_outcome": self.parental_outcome,
            "circumstances": None if self.circumstances is None else list(self.circumstances),
        }


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable observed sample ``(Y, D, X[, X1])``.

    ``x`` is stored column-major with ``columns`` naming each covariate.
    ``circumstance_cols`` is the subset of covariates used as predictors by
    the inequality-of-opportunity welfare families.
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    columns: tuple[str, ...]
    x1: np.ndarray | None = None
    circumstance_cols: tuple[str, ...] = ()
    n_dropped: int = 0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        d = np.asarray(self.d)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        x = np.asfortranarray(x)
        n = y.shape[0]
        if n < 2:
            raise DataError(f"dataset needs at least 2 units, got {n}")
        if d.shape != (n,) or x.shape[0] != n:
            raise DataError("outcome, treatment and covariates must share length n")
        if not np.all(np.isin(d, (0, 1))):
            bad = int(np.flatnonzero(~np.isin(d, (0, 1)))[0])
            raise DataError(f"treatment must be 0/1; unit {bad} has value {d[bad]!r}")
        if len(self.columns) != x.shape[1]:
            raise DataError("one column name per covariate is required")
        if np.isnan(y).any() or np.isnan(x).any():
            raise DataError("NaN in outcome or covariates")
        x1 = self.x1
        if x1 is not None:
            x1 = np.asarray(x1, dtype=float)
            if x1.shape != (n,):
                raise DataError("parental outcome must have length n")
            if np.isnan(x1).any():
                raise DataError("NaN in parental outcome")
        circ = tuple(self.circumstance_cols) or tuple(self.columns)
        unknown = set(circ) - set(self.columns)
        if unknown:
            raise ConfigError(f"circumstance columns not among covariates: {sorted(unknown)}")
        for arr in (y, x, x1):
            if arr is not None:
                arr.setflags(write=False)
        d = d.astype(np.int8)
        d.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "circumstance_cols", circ)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    def column_index(self, names: Sequence[str]) -> np.ndarray:
        missing = [c for c in names if c not in self.columns]
        if missing:
            raise ConfigError(f"unknown covariate column(s): {missing}")
        return np.array([self.columns.index(c) for c in names], dtype=int)

    @property
    def circumstance_index(self) -> np.ndarray:
        return self.column_index(self.circumstance_cols)

    def circumstances(self) -> np.ndarray:
        return self.x[:, self.circumstance_index]

    def records(self) -> np.ndarray:
        """Per-unit records ``(Y, X1)`` consumed by pairwise welfare kernels."""
        x1 = self.x1 if self.x1 is not None else np.full(self.n, np.nan)
        return np.column_stack([self.y, x1])

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            y=self.y[idx],
            d=self.d[idx],
            x=self.x[idx],
            columns=self.columns,
            x1=None if self.x1 is None else self.x1[idx],
            circumstance_cols=self.circumstance_cols,
        )


def load_dataset(path: str | Path, mapping: ColumnMapping | Mapping, delimiter: str = ",") -> Dataset:
    """Read a delimited file with a header row into a validated :class:`Dataset`.

    Rows with a missing value in any mapped column are dropped (listwise
    deletion); the number dropped is logged and stored on the result.
    """
    if not isinstance(mapping, ColumnMapping):
        mapping = ColumnMapping.from_dict(mapping)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"data file not found: {path}")
    try:
        frame = pd.read_csv(path, sep=delimiter)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path} is empty") from None

    wanted = [mapping.outcome, mapping.treatment, *mapping.covariates]
    if mapping.parental_outcome:
        wanted.append(mapping.parental_outcome)
    missing = [c for c in wanted if c not in frame.columns]
    if missing:
        raise ConfigError(f"mapped column(s) not in {path.name}: {missing}")
    if mapping.circumstances:
        extra = [c for c in mapping.circumstances if c not in mapping.covariates]
        if extra:
            raise ConfigError(f"circumstances must be covariates; not mapped as covariates: {extra}")

    frame = frame[wanted]
    complete = frame.notna().all(axis=1)
    n_dropped = int((~complete).sum())
    if n_dropped:
        log.warning("dropped %d row(s) with missing values in mapped columns", n_dropped)
    frame = frame[complete]
    if len(frame) == 0:
        raise DataError(f"{path} has no complete rows")

    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1)
    if bad.any():
        row = int(frame.index[bad.to_numpy()][0])
        raise DataError(f"non-numeric value in data row {row + 1}")
    d = numeric[mapping.treatment].to_numpy()
    not_binary = ~np.isin(d, (0, 1))
    if not_binary.any():
        pos = int(np.flatnonzero(not_binary)[0])
        row = int(frame.index[pos])
        raise DataError(f"treatment column {mapping.treatment!r} must be 0/1; data row {row + 1} has {d[pos]:g}")

    return Dataset(
        y=numeric[mapping.outcome].to_numpy(float),
        d=d.astype(np.int8),
        x=numeric[list(mapping.covariates)].to_numpy(float),
        columns=mapping.covariates,
        x1=numeric[mapping.parental_outcome].to_numpy(float) if mapping.parental_outcome else None,
        circumstance_cols=mapping.circumstances or (),
        n_dropped=n_dropped,
    )


@dataclass(frozen=True)
class FoldAssignment:
    """Balanced partition of units ``0..n-1`` into ``L`` groups."""

    L: int
    group_of: np.ndarray

    @property
    def n(self) -> int:
        return self.group_of.shape[0]

    def members(self, group: int) -> np.ndarray:
        return np.flatnonzero(self.group_of == group)

    def splits(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """``(evaluation units, training units)`` for each fold."""
        return [(self.members(g), np.flatnonzero(self.group_of != g)) for g in range(self.L)]


def make_unit_folds(n: int, L: int, seed: int = 0) -> FoldAssignment:
    if L < 2:
        raise ArgumentError(f"need at least 2 folds, got L={L}")
    if L > n:
        raise ArgumentError(f"cannot split {n} units into {L} folds")
    perm = np.random.default_rng(seed).permutation(n)
    group_of = np.empty(n, dtype=np.int64)
    group_of[perm] = np.arange(n) % L
    group_of.setflags(write=False)
    return FoldAssignment(L=L, group_of=group_of)


@dataclass(frozen=True)
class PairFold:
    """Pairs ``(i, j)``, ``i < j``, with ``i`` and ``j`` drawn from unit groups ``groups``.

    ``kind`` is ``"square"`` for pairs inside one group and ``"triangle"`` for
    pairs across two groups.
    """

    kind: str
    groups: tuple[int, int]
    i: np.ndarray
    j: np.ndarray
    units: np.ndarray
    train_units: np.ndarray

    @property
    def size(self) -> int:
        return self.i.shape[0]


@dataclass(frozen=True)
class PairFoldAssignment:
    unit_groups: FoldAssignment
    pair_folds: tuple[PairFold, ...] = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return self.unit_groups.n

    @property
    def n_pairs(self) -> int:
        return sum(f.size for f in self.pair_folds)

    def __iter__(self) -> Iterator[PairFold]:
        return iter(self.pair_folds)

    def __len__(self) -> int:
        return len(self.pair_folds)

    def splits(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(f.units, f.train_units) for f in self.pair_folds]


def make_pair_folds(units: FoldAssignment) -> PairFoldAssignment:
    """Split all pairs ``i < j`` into ``K`` squares and ``K(K-1)/2`` triangles.

    Every fold's training set is the set of units outside the fold's groups,
    so nuisances fitted on it never see either member of a fold pair.
    """
    K = units.L
    if K < 2:
        raise ArgumentError("need at least 2 unit groups")
    folds = []
    for f in range(K):
        for g in range(f, K):
            a, b = units.members(f), units.members(g)
            if f == g:
                i, j = np.triu_indices(a.size, k=1)
                i, j = a[i], a[j]
                members = a
            else:
                i = np.repeat(a, b.size)
                j = np.tile(b, a.size)
                lo, hi = np.minimum(i, j), np.maximum(i, j)
                order = np.lexsort((hi, lo))
                i, j = lo[order], hi[order]
                members = np.union1d(a, b)
            outside = ~np.isin(units.group_of, (f, g))
            folds.append(PairFold(
                kind="square" if f == g else "triangle",
                groups=(f, g),
                i=i,
                j=j,
                units=members,
                train_units=np.flatnonzero(outside),
            ))
    return PairFoldAssignment(unit_groups=units, pair_folds=tuple(folds))
