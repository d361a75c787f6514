"""Resolvent equation  lambda u - L_sigma u - b . grad u = f  on the periodic grid.

The solve route inverts lambda + psi in Fourier space; the certificate route
substitutes the answer back through the quadrature form of L_sigma, so a wrong
symbol cannot certify itself.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import fourier as ft
from .errors import NoConvergence, ParameterOutOfRange
from .nonlocal_op import SigmaField, apply_L, grid_symbol


@dataclass
class ResolventProblem:
    lam: float
    b: ft.GridField | None
    f: ft.GridField
    sigma: SigmaField
    quad: object
    tolerance: float = 1e-10
    max_iters: int = 500
    residual_tol: float = 1e-6
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ParameterOutOfRange("lambda must be positive")
        if not isinstance(self.sigma, SigmaField):
            self.sigma = SigmaField(matrix=self.sigma)
        g = self.f.grid
        if self.b is not None and self.b.grid != g:
            raise ParameterOutOfRange("b and f live on different grids")
        if not self.sigma.is_constant and self.sigma.field.grid != g:
            raise ParameterOutOfRange("sigma and f live on different grids")
        if self.quad.d != g.d:
            raise ParameterOutOfRange("quadrature dimension does not match the grid")

    @property
    def grid(self):
        return self.f.grid

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))


@dataclass
class ResolventSolution:
    u: ft.GridField
    residual_sup: float
    iterations: int
    lam_used: float
    contraction: float = 0.0
    history: list = field(default_factory=list)

    @property
    def certified(self):
        return self._bound is None or self.residual_sup <= self._bound

    _bound: float | None = None


def _drift_term(b, u):
    if b is None:
        return np.zeros_like(u.values)
    return ft.advect(b, ft.gradient(u)).values


def residual(prob, u):
    """lambda u - L u - b . grad u - f evaluated by the quadrature route."""
    Lu = apply_L(u, prob.sigma, prob.quad)
    return prob.lam * u.values - Lu.values - _drift_term(prob.b, u) - prob.f.values


def _sup(vals, grid):
    return float(ft.GridField(grid, vals).sup())


def _iterate(prob, denom, extra, u0):
    """Generic fixed point u <- F^{-1}[(F[f + b.grad u + extra(u)]) / denom]."""
    g = prob.grid
    axes = tuple(range(-g.d, 0))
    u = u0
    hist, streak, ratio, prev = [], 0, 0.0, None
    for it in range(1, prob.max_iters + 1):
        rhs = prob.f.values + _drift_term(prob.b, u)
        if extra is not None:
            rhs = rhs + extra(u)
        new = ft.GridField(g, np.real(np.fft.ifftn(np.fft.fftn(rhs, axes=axes) / denom, axes=axes)))
        diff = _sup(new.values - u.values, g)
        hist.append(diff)
        u = new
        if prev is not None and prev > 1e-14:
            ratio = diff / prev
            streak = streak + 1 if ratio >= 1 else 0
            if streak >= 5:
                raise NoConvergence(it, ratio, f"contraction ratio {ratio:.3g} >= 1 at lambda={prob.lam}")
        if diff <= prob.tolerance * (1 + ft.GridField(g, prob.f.values).sup()):
            return u, it, hist
        prev = diff
    raise NoConvergence(prob.max_iters, ratio, "iteration budget exhausted")


def _contraction(hist):
    r = [b / a for a, b in zip(hist[:-1], hist[1:]) if a > 1e-13 and b > 0]
    return float(np.median(r)) if r else 0.0


def _finish(prob, u, its, hist):
    res = _sup(residual(prob, u), prob.grid)
    sol = ResolventSolution(u, res, its, prob.lam, _contraction(hist), hist)
    sol._bound = prob.residual_tol * (1 + prob.f.sup())
    return sol


def _initial(prob, denom, init):
    if init == "zero":
        return ft.GridField(prob.grid, np.zeros_like(prob.f.values))
    return ft.from_spectrum(prob.grid, prob.f.spectrum / denom)


def solve_constant_sigma(prob, init="symbol"):
    if not prob.sigma.is_constant:
        raise ParameterOutOfRange("solve_constant_sigma needs a constant sigma")
    denom = prob.lam + grid_symbol(prob.quad, prob.sigma, prob.grid)
    u, its, hist = _iterate(prob, denom, None, _initial(prob, denom, init))
    return _finish(prob, u, its, hist)


def operator_matrix(sigma, quad, grid):
    """Dense matrix of the quadrature L_sigma on a scalar grid function (small grids)."""
    P = grid.N**grid.d
    basis = ft.GridField(grid, np.eye(P).reshape((P,) + grid.shape))
    return apply_L(basis, sigma, quad).values.reshape(P, P).T


# (id(sigma), id(quad), grid) -> (sigma, quad, matrix); the objects are kept so ids stay valid
_DENSE = {}


def _correction_matrix(sigma, sbar, quad, grid):
    key = (id(sigma), id(quad), grid)
    if key not in _DENSE:
        if len(_DENSE) >= 8:
            _DENSE.clear()
        A = operator_matrix(sigma, quad, grid) - operator_matrix(SigmaField(matrix=sbar), quad, grid)
        _DENSE[key] = (sigma, quad, A)
    return _DENSE[key][2]


def solve_variable_sigma(prob, init="symbol", dense_limit=512):
    """Preconditioned iteration with the grid-averaged sigma as the frozen operator."""
    if prob.sigma.is_constant:
        return solve_constant_sigma(prob, init)
    g = prob.grid
    sbar = prob.sigma.mean()
    denom = prob.lam + grid_symbol(prob.quad, sbar, g)
    P = g.N**g.d
    if P <= dense_limit:
        A = _correction_matrix(prob.sigma, sbar, prob.quad, g)
        comp = prob.f.comp_shape

        def extra(u):
            flat = u.values.reshape((-1, P))
            return (flat @ A.T).reshape(comp + g.shape)
    else:
        def extra(u):
            return apply_L(u, prob.sigma, prob.quad).values - apply_L(u, sbar, prob.quad).values
    u, its, hist = _iterate(prob, denom, extra, _initial(prob, denom, init))
    return _finish(prob, u, its, hist)


def solve(prob, init="symbol"):
    if prob.sigma.is_constant:
        return solve_constant_sigma(prob, init)
    return solve_variable_sigma(prob, init)


def find_lambda0(prob, start=1.0, cap=2.0**20):
    """Smallest power-of-two multiple of ``start`` for which the iteration converges."""
    lam = float(start)
    while lam <= cap:
        try:
            return lam, solve(prob.with_lambda(lam))
        except NoConvergence:
            lam *= 2
    raise NoConvergence(0, float("nan"), f"no convergence up to lambda={cap}")


def plane_wave(grid, k):
    """cos(xi . x) for the lattice wave vector with integer indices k."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    arg = sum(np.pi * k[a] / grid.L * grid.coords[a] for a in range(grid.d))
    return ft.GridField(grid, np.cos(arg)), np.pi * k / grid.L


def plane_wave_solution(grid, k, lam, psi0, v=None):
    """Closed form for f = cos(xi0 . x): u = Re[e^{i xi0 x} / (lam + psi0 - i v . xi0)]."""
    _, xi0 = plane_wave(grid, k)
    arg = sum(xi0[a] * grid.coords[a] for a in range(grid.d))
    shift = 0.0 if v is None else float(np.dot(v, xi0))
    den = lam + psi0 - 1j * shift
    return ft.GridField(grid, np.real(np.exp(1j * arg) / den))


# -- a priori estimates ------------------------------------------------------------

def _ratio(u, f, lam, alpha, gamma, p, f_order=None):
    f_order = gamma if f_order is None else f_order
    top = lam * ft.besov_norm(u, gamma, p, p) + ft.besov_norm(u, alpha + gamma, p, p)
    return top / ft.besov_norm(f, f_order, p, p)


def apriori_report(sol, prob, gamma, p, lambdas=None):
    """Ratios [lam |u|_{B^g_pp} + |u|_{B^{a+g}_pp}] / |f|_{B^g_pp} over a lambda sweep.

    The Holder column uses the same expression with p = q = inf.
    """
    alpha, beta = prob.alpha, prob.beta
    if alpha is None:
        raise ParameterOutOfRange("problem carries no alpha; a priori ratios need it")
    lo = max(0.0, 1 - alpha)
    hi = beta if beta is not None else np.inf
    if not lo < gamma < hi:
        raise ParameterOutOfRange(f"gamma={gamma} outside ({lo}, {hi})")
    lam0 = sol.lam_used
    lambdas = [lam0, 2 * lam0, 4 * lam0] if lambdas is None else list(lambdas)
    rows = []
    for lam in lambdas:
        s = sol if lam == lam0 else solve(prob.with_lambda(lam))
        rows.append({
            "lambda": float(lam), "gamma": gamma, "p": p,
            "ratio": _ratio(s.u, prob.f, lam, alpha, gamma, p),
            "holder_ratio": _ratio(s.u, prob.f, lam, alpha, gamma, np.inf),
            "contraction": s.contraction,
            "residual_sup": s.residual_sup,
        })
    ratios = [r["ratio"] for r in rows]
    return {
        "rows": rows,
        "non_increasing": bool(all(b <= a * (1 + 1e-12) for a, b in zip(ratios, ratios[1:]))),
        "fitted_constant": float(max(ratios)),
    }


def plane_wave_ratio(grid, k, lam, psi0, alpha, gamma, p):
    """Closed-form a priori ratio for b = 0, f = cos(xi0 . x).

    Each dyadic block multiplies the wave by the scalar ring value at |xi0|, so
    every Besov norm is a weighted l^p sum of those values times |cos|_p.
    """
    _, xi0 = plane_wave(grid, k)
    r = float(np.linalg.norm(xi0))

    def W(s):
        vals = []
        for j in ft.levels(grid):
            m = ft.chi(2 * r) if j == -1 else ft.ring(r / 2.0**j)
            vals.append(2.0 ** (j * s) * float(m))
        return ft._lq(np.asarray(vals), p)

    return (lam * W(gamma) + W(alpha + gamma)) / ((lam + psi0) * W(gamma))


def solution_to_json(sol):
    return json.dumps({
        "residual_sup": sol.residual_sup, "iterations": sol.iterations,
        "lambda": sol.lam_used, "contraction": sol.contraction,
    })
