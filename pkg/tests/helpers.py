"""Hand-built nuisance fits for exact score arithmetic."""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from lrpolicy.data import make_pair_folds, make_unit_folds
from lrpolicy.learners import GammaFit, PropensityFit, assemble
from lrpolicy.scores import ARMS


@dataclass(frozen=True)
class FnModel:
    fn: Callable

    def predict(self, x):
        return np.asarray(self.fn(x), dtype=float)


@dataclass(frozen=True)
class FnPairModel:
    fn: Callable

    def predict_pairs(self, x, ii, jj):
        return np.asarray(self.fn(x[ii], x[jj]), dtype=float)


def const(c):
    return lambda x: np.full(np.atleast_2d(x).shape[0], float(c))


def fixed_fits(data, gamma0=None, gamma1=None, e=None, phi=None, pairwise=False, folds=3, trim=0.01):
    """Same nuisance functions on every fold."""
    units = make_unit_folds(data.n, folds, 0)
    structure = make_pair_folds(units) if pairwise else units
    cols = np.arange(data.k)
    L = len(structure.splits())
    g = None
    if gamma0 is not None:
        g = [GammaFit((FnModel(gamma0), FnModel(gamma1)), cols)] * L
    p = [PropensityFit(FnModel(e or const(0.5)), cols, trim)] * L
    ph = None
    if phi is not None:
        ph = [{ab: FnPairModel(phi[ab] if isinstance(phi, dict) else phi) for ab in ARMS}] * L
    return assemble(structure, gamma=g, e=p, phi=ph, trim=trim)
