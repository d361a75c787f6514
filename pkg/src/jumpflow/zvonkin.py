"""Zvonkin change of variables phi = id + u with lambda u - L u - b.grad u = b.

The transformed process Y = phi(X) has drift a(y) = lambda u(phi^{-1}(y)) and
jump map g(y, z) = u(x + sigma(x) z) - u(x) + sigma(x) z,  x = phi^{-1}(y).
"""
from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import fourier as ft
from .errors import JumpOutOfSupport, LambdaExplosion, NoConvergence, ParameterOutOfRange
from .nonlocal_op import SigmaField
from .resolvent import ResolventProblem, solve


def _matrix_sup(values, d):
    """sup over points of the Frobenius norm of a (d, d) + grid array."""
    flat = values.reshape(d * d, -1)
    return float(np.sqrt(np.sum(flat**2, axis=0)).max())


def refined_sup_grad(u, factor=None):
    """||grad u||_inf measured on a band-limited refinement (catches off-grid peaks)."""
    g = u.grid
    factor = (4 if g.d == 1 else 2) if factor is None else factor
    fine = ft.upsample(u, factor)
    return _matrix_sup(ft.gradient(fine).values, g.d)


@dataclass
class ZvonkinTransform:
    u: ft.GridField
    grad_u: ft.GridField
    lam: float
    sup_grad: float
    sigma: SigmaField
    quad: object
    b: ft.GridField
    mu: float
    residual: float = 0.0
    sweep: list = field(default_factory=list)
    _spline: dict = field(default_factory=dict, repr=False)

    @property
    def d(self):
        return self.u.grid.d

    @property
    def R(self):
        return float(self.quad.R)

    @property
    def Lambda(self):
        return self.sigma.Lambda

    @property
    def g_constant(self):
        """C in |g(y, z)| <= C |z|."""
        return (1 + self.sup_grad) * self.Lambda

    # -- off-grid evaluation ---------------------------------------------------------
    def use_spline(self):
        if "u" not in self._spline:
            self._spline["u"] = ft.SplineInterpolator(self.u)
            self.sigma.use_spline()
        return self

    @property
    def spline_discrepancy(self):
        return self._spline["u"].discrepancy if "u" in self._spline else None

    def u_at(self, x, mode="spectral"):
        """u at points x (M, d); returns (M, d)."""
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        if mode == "spline":
            self.use_spline()
            return self._spline["u"](x).T
        return ft.eval_points(self.u, x).T

    def phi(self, x, mode="spectral"):
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        return x + self.u_at(x, mode)

    def sigma_z(self, x, z, mode="spectral"):
        S = self.sigma.at(x, "spectral" if mode == "spectral" else "spline")
        return np.einsum("mij,mj->mi", S, np.broadcast_to(z, x.shape))

    def to_dict(self):
        return {
            "lambda": self.lam, "sup_grad": self.sup_grad, "mu": self.mu,
            "residual": self.residual, "Lambda": self.Lambda, "R": self.R,
            "grid": self.u.grid.to_dict(), "sweep": self.sweep,
        }


def default_mu(alpha, beta):
    lo, hi = alpha / 2, alpha + beta - 1
    if not hi > lo:
        raise ParameterOutOfRange(f"empty mu window ({lo}, {hi}); need beta > 1 - alpha/2")
    return 0.5 * (lo + hi)


def build_transform(b, sigma, quad, target=0.5, lam_start=1.0, lam_cap=2.0**16,
                    alpha=None, beta=None, mu=None, tolerance=1e-10):
    if not 0 < target < 1:
        raise ParameterOutOfRange("target must lie in (0, 1)")
    if not isinstance(sigma, SigmaField):
        sigma = SigmaField(matrix=sigma)
    if mu is None:
        mu = default_mu(alpha, beta) if alpha is not None and beta is not None else float("nan")
    g = b.grid
    lam = float(lam_start)
    sweep = []
    while lam <= lam_cap:
        prob = ResolventProblem(lam, b, b, sigma, quad, tolerance=tolerance, alpha=alpha, beta=beta)
        try:
            sol = solve(prob)
        except NoConvergence:
            sweep.append({"lambda": lam, "sup_grad": None})
            lam *= 2
            continue
        grad = ft.gradient(sol.u)
        sg = refined_sup_grad(sol.u)
        sweep.append({"lambda": lam, "sup_grad": sg, "residual": sol.residual_sup})
        if sg <= target:
            return ZvonkinTransform(sol.u, grad, lam, sg, sigma, quad, b, mu, sol.residual_sup, sweep)
        lam *= 2
    raise LambdaExplosion(f"sup|grad u| stayed above {target} up to lambda={lam_cap} on grid N={g.N}")


# -- inverse map ------------------------------------------------------------------

def invert_phi(tr, y, tol=1e-12, mode="spectral", max_iter=200, return_info=False, x_init=None):
    """x with x + u(x) = y by the contraction x <- y - u(x), started at x = y.

    ``x_init`` warm-starts the iteration (hot loops); the iteration-count
    certificate refers to the cold start.
    """
    if tr.sup_grad >= 1:
        raise ParameterOutOfRange("phi is only invertible by contraction when sup_grad < 1")
    y = np.asarray(y, dtype=float)
    shape = y.shape
    y = y.reshape(-1, tr.d)
    x = y.copy() if x_init is None else np.asarray(x_init, dtype=float).reshape(y.shape).copy()
    its = 0
    u0 = tr.u_at(x, mode)
    for its in range(1, max_iter + 1):
        x_new = y - (u0 if its == 1 else tr.u_at(x, mode))
        step = np.abs(x_new - x).max() if x.size else 0.0
        x = x_new
        # |phi(x) - y| = |u(x_prev) - u(x)| <= sup_grad * step
        if step * max(tr.sup_grad, 1e-300) <= tol or step == 0:
            break
    umax = float(np.linalg.norm(u0, axis=1).max()) if u0.size else 0.0
    bound = 1 if umax <= tol or tr.sup_grad == 0 else (
        math.ceil(math.log(umax / tol) / math.log(1 / tr.sup_grad)) + 1)
    x = x.reshape(shape)
    if return_info:
        return x, {"iterations": its, "bound": bound}
    return x


# -- transformed coefficients ------------------------------------------------------

def _check_support(tr, z):
    z = np.asarray(z, dtype=float)
    r = np.linalg.norm(z.reshape(-1, tr.d), axis=1)
    if np.any(r > tr.R * (1 + 1e-12)):
        raise JumpOutOfSupport(f"|z| = {r.max()} exceeds R = {tr.R}")


def a_from_x(tr, x, mode="spectral"):
    return tr.lam * tr.u_at(x, mode)


def g_from_x(tr, x, z, mode="spectral"):
    """u(x + sigma(x) z) - u(x) + sigma(x) z without any inversion."""
    x = np.asarray(x, dtype=float).reshape(-1, tr.d)
    z = np.broadcast_to(np.asarray(z, dtype=float).reshape(-1, tr.d), x.shape)
    sz = tr.sigma_z(x, z, mode)
    if mode == "spline":
        du = tr.u_at(x + sz, "spline") - tr.u_at(x, "spline")
    else:
        du = ft.eval_shift_diff(tr.u, x, sz).T
    return du + sz


def coeff_a(tr, y, mode="spectral", tol=1e-12):
    y = np.asarray(y, dtype=float)
    x = invert_phi(tr, y.reshape(-1, tr.d), tol, mode)
    return a_from_x(tr, x, mode).reshape(y.shape)


def coeff_g(tr, y, z, mode="spectral", tol=1e-12):
    _check_support(tr, z)
    y = np.asarray(y, dtype=float)
    x = invert_phi(tr, y.reshape(-1, tr.d), tol, mode)
    return g_from_x(tr, x, z, mode).reshape(y.shape)


def _G_field(tr, z):
    g = tr.u.grid
    x = g.points
    vals = g_from_x(tr, x, np.asarray(z, dtype=float).reshape(1, tr.d))
    return ft.GridField(g, vals.T.reshape((tr.d,) + g.shape))


def gradient_bound_g(tr, z):
    """K(z) = sup_y |grad_y g(y, z)| by finite differences in x and the chain rule.

    grad_y g = grad_x G(x) (I + grad u(x))^{-1} with y = phi(x), sampled at the
    images of the grid points (so no inversion error enters).
    """
    _check_support(tr, z)
    z = np.asarray(z, dtype=float).reshape(tr.d)
    if not np.any(z):
        return 0.0
    g = tr.u.grid
    dG = ft.fd_gradient(_G_field(tr, z)).values.reshape(tr.d, tr.d, -1)
    A = np.eye(tr.d)[:, :, None] + tr.grad_u.values.reshape(tr.d, tr.d, -1)
    Ainv = np.linalg.inv(np.moveaxis(A, 2, 0))  # (P, d, d)
    M = np.einsum("ikp,pkj->pij", dG, Ainv)
    return float(np.linalg.norm(M, ord=2, axis=(1, 2)).max())


def gradient_bound_fit(tr, radii=None, direction=None):
    """Sweep |z|, fit the log-log slope of K and the constant C with K <= C(|z|^mu + |z|)."""
    radii = np.geomspace(tr.R * 1e-3, tr.R, 12) if radii is None else np.asarray(radii)
    e = np.zeros(tr.d)
    e[0] = 1.0
    e = e if direction is None else np.asarray(direction, dtype=float) / np.linalg.norm(direction)
    K = np.array([gradient_bound_g(tr, r * e) for r in radii])
    slope = float(np.polyfit(np.log(radii), np.log(K), 1)[0])
    mu = tr.mu if np.isfinite(tr.mu) else 1.0
    C = float(np.max(K / (radii**mu + radii)))
    return {"radii": radii.tolist(), "K": K.tolist(), "slope": slope, "C": C, "mu": mu}


def k_moment_sweep(tr, alpha, R_values=None):
    """I(R) = sum_{|z_k| <= R} w_k K(z_k)^2 against the R^{2 mu - alpha} scale."""
    q = tr.quad
    R_values = np.geomspace(tr.R / 16, tr.R, 5) if R_values is None else np.asarray(R_values)
    K = np.array([gradient_bound_g(tr, z) for z in q.nodes])
    rows = []
    for R in R_values:
        sel = q.radii <= R * (1 + 1e-12)
        I = float(np.sum(q.weights[sel] * K[sel] ** 2))
        rows.append({"R": float(R), "I": I, "scaled": I / R ** (2 * tr.mu - alpha)})
    return rows


# -- structural checks ---------------------------------------------------------------

def jacobian_det_min(tr):
    g = tr.u.grid
    A = np.eye(tr.d)[:, :, None] + tr.grad_u.values.reshape(tr.d, tr.d, -1)
    return float(np.linalg.det(np.moveaxis(A, 2, 0)).min())


def injectivity_ratio(tr):
    """min over grid pairs within distance 1 of |phi(x) - phi(x')| / |x - x'|."""
    g = tr.u.grid
    offs, dist = ft._offsets(g, 1.0)
    uv = tr.u.values
    best = np.inf
    for m, r in zip(offs, dist):
        du = ft._shift(uv, m, g.d) - uv
        disp = (np.asarray(m, dtype=float) * g.h).reshape((tr.d,) + (1,) * g.d)
        gap = np.sqrt(np.sum((disp + du) ** 2, axis=0))
        best = min(best, float(gap.min()) / r)
    return best


def lipschitz_a(tr, n=None, mode="spectral"):
    """Finite-difference Lipschitz constant of a on a uniform y mesh (1-d) or grid images."""
    g = tr.u.grid
    if tr.d == 1:
        n = 4 * g.N if n is None else n
        y = np.linspace(-g.L, g.L, n, endpoint=False).reshape(-1, 1)
        a = coeff_a(tr, y, mode)
        return float(np.max(np.abs(np.diff(a[:, 0])) / np.diff(y[:, 0])))
    x = g.points
    y = tr.phi(x)
    a = tr.lam * tr.u.values.reshape(tr.d, -1).T
    best = 0.0
    for ax in range(tr.d):
        idx = np.roll(np.arange(x.shape[0]).reshape(g.shape), -1, axis=ax).reshape(-1)
        dy = y[idx] - y
        dy[:, ax] += np.where(dy[:, ax] < -g.L, 2 * g.L, 0.0)
        best = max(best, float(np.max(np.linalg.norm(a[idx] - a, axis=1) / np.linalg.norm(dy, axis=1))))
    return best


def lipschitz_a_bound(tr):
    return tr.lam * tr.sup_grad / (1 - tr.sup_grad)


def check_a4(sigma, R):
    """Refuse a flow experiment when supp nu is not inside B_{r0}, r0 = 1/Lip(sigma)."""
    lip = sigma.lipschitz() if isinstance(sigma, SigmaField) else 0.0
    r0 = np.inf if lip == 0 else 1.0 / lip
    if R > r0:
        raise ParameterOutOfRange(f"R={R} exceeds r0={r0:.4g}; flow experiment refused")
    return float(r0)


# -- persistence ---------------------------------------------------------------------

def save_bundle(tr, directory):
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "u.csv"), "w") as fh:
        fh.write(ft.field_to_csv(tr.u))
    with open(os.path.join(directory, "b.csv"), "w") as fh:
        fh.write(ft.field_to_csv(tr.b))
    with open(os.path.join(directory, "transform.json"), "w") as fh:
        json.dump(tr.to_dict(), fh, indent=2)


def load_bundle(directory, sigma, quad):
    with open(os.path.join(directory, "u.csv")) as fh:
        u = ft.field_from_csv(fh.read())
    with open(os.path.join(directory, "b.csv")) as fh:
        b = ft.field_from_csv(fh.read())
    with open(os.path.join(directory, "transform.json")) as fh:
        meta = json.load(fh)
    return ZvonkinTransform(u, ft.gradient(u), meta["lambda"], meta["sup_grad"], sigma, quad, b,
                            meta["mu"], meta["residual"], meta["sweep"])
