"""Shipped measure specs, grids and drift fields used by tests and the CLI."""
from __future__ import annotations

import numpy as np

from . import fourier as ft
from .levy_model import LevyMeasureSpec


def iso_1d():
    """1-d isotropic stable, alpha = 0.7 (certification fixture)."""
    return LevyMeasureSpec.isotropic(1, 0.7, 0.3, 0.5, c=0.25, R=1.0, name="iso1d-a0.7")


def work_1d():
    """1-d isotropic stable, alpha = 1.5: the pipeline workhorse."""
    return LevyMeasureSpec.isotropic(1, 1.5, 0.3, 0.5, c=0.25, R=1.0, name="iso1d-a1.5")


def cyl_2d():
    """2-d cylindrical stable, alpha = 1.2 (jumps only along the axes)."""
    return LevyMeasureSpec.cylindrical(2, 1.2, 0.5, 0.5, c=0.25, R=1.0, name="cyl2d-a1.2")


# two radii per axis; 2 w s^2 equals the target second moment on each axis
_S1, _M1 = 5e-5, 1e-3
_S2, _M2 = 0.02, 0.05


def discrete_2d():
    """Eight atoms +-s e_i at two radii; satisfies (A1) with alpha = 1 on the tested range."""
    atoms, weights = [], []
    for s, m in ((_S1, _M1), (_S2, _M2)):
        w = m / (2 * s * s)
        for e in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
            atoms += [s * e, -s * e]
            weights += [w, w]
    return LevyMeasureSpec.discrete(atoms, weights, 1.0, 0.02, 0.5, R=1.0, name="disc2d-8")


def shipped_specs():
    return {"iso1d": iso_1d(), "cyl2d": cyl_2d(), "disc2d": discrete_2d()}


def grid_1d(N=256):
    return ft.PeriodicGrid(1, 8.0, N)


def grid_2d(N=32):
    return ft.PeriodicGrid(2, 8.0, N)


def drift(kind, grid, beta=0.6, amplitude=1.0, seed=3, value=None):
    """Vector drift b on grid: 'zero', 'constant' or 'holder'."""
    d = grid.d
    if kind == "zero":
        return ft.GridField(grid, np.zeros((d,) + grid.shape))
    if kind == "constant":
        v = np.full(d, 0.7) if value is None else np.asarray(value, dtype=float)
        return ft.GridField.constant(grid, v)
    if kind == "holder":
        return ft.holder_sample(beta, grid, seed, amplitude=amplitude, ncomp=d)
    raise ValueError(f"unknown drift kind {kind!r}")


def drift_fixtures(grid):
    """The drift set every Zvonkin run must handle."""
    return {
        "zero": drift("zero", grid),
        "constant": drift("constant", grid),
        "holder": drift("holder", grid, beta=0.6, amplitude=1.0, seed=3),
        "holder-rough": drift("holder", grid, beta=0.45, amplitude=0.5, seed=5),
    }
