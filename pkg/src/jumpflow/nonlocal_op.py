"""The nonlocal operator L_sigma, its symbol, and the Bernstein/commutator checks.

    L_sigma f(x) = int [f(x + sigma(x) z) - f(x) - grad f(x) . sigma(x) z 1_{|z|<=1}] nu(dz)

nu is replaced by a symmetric node set (NuQuadrature).  Off-grid values
f(x + sigma z) come from trigonometric interpolation, so for constant sigma the
quadrature route reproduces the Fourier multiplier -psi_sigma(xi) exactly on
grid harmonics.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import fourier as ft
from .errors import GridTooCoarse, ParameterOutOfRange, VariableSigma
from .levy_model import small_ball_second_moment


# -- diffusion matrix ---------------------------------------------------------------

class SigmaField:
    """Constant d x d matrix or a matrix-valued GridField."""

    def __init__(self, matrix=None, field=None, Lambda=None):
        if (matrix is None) == (field is None):
            raise ParameterOutOfRange("give exactly one of matrix / field")
        self.matrix = None if matrix is None else np.atleast_2d(np.asarray(matrix, dtype=float))
        self.field = field
        if field is not None and field.comp_shape != (field.grid.d, field.grid.d):
            raise ParameterOutOfRange("sigma field must be d x d matrix valued")
        self.Lambda = self.nondegeneracy() if Lambda is None else float(Lambda)
        self._interp = None

    @classmethod
    def identity(cls, d):
        return cls(matrix=np.eye(d))

    @classmethod
    def from_function(cls, grid, fn):
        """fn(*coords) -> array (d, d) + grid.shape."""
        return cls(field=ft.GridField(grid, fn(*grid.coords)))

    @property
    def is_constant(self):
        return self.matrix is not None

    @property
    def d(self):
        return self.matrix.shape[0] if self.is_constant else self.field.grid.d

    def mean(self):
        if self.is_constant:
            return self.matrix
        g = self.field.grid
        return self.field.values.reshape(self.d, self.d, -1).mean(axis=2)

    def values_on(self, grid):
        """Array (d, d) + grid.shape."""
        if self.is_constant:
            return np.broadcast_to(self.matrix.reshape(self.d, self.d, *(1,) * grid.d),
                                   (self.d, self.d) + grid.shape)
        return self.field.values

    def at(self, pts, mode="spectral"):
        """sigma at arbitrary points; returns (M, d, d)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, self.d)
        if self.is_constant:
            return np.broadcast_to(self.matrix, (pts.shape[0], self.d, self.d))
        if self._interp is None or mode == "spectral":
            vals = ft.eval_points(self.field, pts)
        else:
            vals = self._interp(pts)
        return np.moveaxis(vals, -1, 0)

    def nondegeneracy(self, n_dirs=16):
        """Smallest Lambda >= 1 with |xi|/Lambda <= |sigma xi| <= Lambda |xi| (sampled)."""
        if self.is_constant:
            mats = self.matrix[None]
        else:
            mats = np.moveaxis(self.field.values.reshape(self.d, self.d, -1), 2, 0)
        if self.d == 1:
            dirs = np.array([[1.0]])
        else:
            a = 2 * np.pi * np.arange(n_dirs) / n_dirs
            dirs = np.stack([np.cos(a), np.sin(a)], axis=1)
        stretch = np.linalg.norm(np.einsum("mij,kj->mki", mats, dirs), axis=2)
        return float(max(1.0, stretch.max(), 1.0 / stretch.min()))

    def lipschitz(self):
        """Finite-difference estimate of ||grad sigma||_inf (0 for constant sigma)."""
        if self.is_constant:
            return 0.0
        gr = ft.fd_gradient(self.field).values  # (d, d, d) + grid
        return float(np.sqrt(np.sum(gr**2, axis=(0, 1, 2))).max())

    def use_spline(self):
        if not self.is_constant and self._interp is None:
            self._interp = ft.SplineInterpolator(self.field)
        return self


# -- quadrature of nu -------------------------------------------------------------------

@dataclass(frozen=True)
class NuQuadrature:
    nodes: np.ndarray  # (K, d)
    weights: np.ndarray  # (K,)
    spec_ref: str
    R: float

    @property
    def d(self):
        return self.nodes.shape[1]

    @property
    def radii(self):
        return np.linalg.norm(self.nodes, axis=1)

    @property
    def size(self):
        return self.weights.size

    def second_moment(self):
        return float(np.sum(self.weights * self.radii**2))

    def is_symmetric(self):
        key = lambda z: tuple(np.round(z, 15))
        table = {key(z): w for z, w in zip(self.nodes, self.weights)}
        return all(table.get(key(-z)) == w for z, w in zip(self.nodes, self.weights))

    def subset(self, mask):
        return NuQuadrature(self.nodes[mask], self.weights[mask], self.spec_ref, self.R)

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# spec_ref={self.spec_ref}\n# R={self.R!r}\n")
        buf.write(",".join([f"z_{i + 1}" for i in range(self.d)] + ["w"]) + "\n")
        for z, w in zip(self.nodes, self.weights):
            buf.write(",".join(repr(float(v)) for v in list(z) + [w]) + "\n")
        return buf.getvalue()


def _gauss_log_panel(a, b, order, alpha):
    """Nodes/weights for int_a^b F(s) s^{-1-alpha} ds via Gauss-Legendre in log s."""
    x, w = np.polynomial.legendre.leggauss(order)
    ta, tb = np.log(a), np.log(b)
    t = 0.5 * (tb - ta) * x + 0.5 * (tb + ta)
    return np.exp(t), 0.5 * (tb - ta) * w * np.exp(-alpha * t)


def build_quadrature(spec, levels=24, radial_order=8, angles=16, breaks=(), max_width=0.0625):
    """Symmetric node set for nu.

    Stable kinds: geometric radial panels [R 2^{-i-1}, R 2^{-i}] (split at 1
    and at any extra ``breaks``), a Gauss rule in log-radius on each panel,
    crossed with symmetric directions.  Panels wider than ``max_width`` (in
    units of R) are split so cos(xi . z) stays resolved at grid frequencies.
    The unresolved ball |z| < R 2^{-levels} is folded into one inner node
    carrying its exact second moment.
    """
    if levels < 4:
        raise ParameterOutOfRange("need at least 4 radial levels")
    if spec.kind == "discrete":
        z, w = spec.atom_array()
        return NuQuadrature(z.copy(), w.astype(float).copy(), spec.name or spec.kind, spec.R)
    a, R, C = spec.alpha, spec.R, spec.radial_constant
    s_min = R * 2.0**-levels
    edges = set(R * 2.0 ** -np.arange(levels + 1))
    for b in (1.0,) + tuple(breaks):
        if s_min < b < R:
            edges.add(float(b))
    edges = np.array(sorted(edges))
    if max_width > 0:
        fine = [edges[:1]]
        for lo, hi in zip(edges[:-1], edges[1:]):
            n = int(np.ceil((hi - lo) / (max_width * R) - 1e-12))
            fine.append(np.linspace(lo, hi, n + 1)[1:])
        edges = np.concatenate(fine)
    radii, rw = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        s, w = _gauss_log_panel(lo, hi, radial_order, a)
        radii.append(s)
        rw.append(C * w)
    r_in = 0.5 * s_min
    radii.append(np.array([r_in]))
    rw.append(np.array([C * s_min ** (2 - a) / (2 - a) / r_in**2]))
    radii = np.concatenate(radii)
    rw = np.concatenate(rw)

    d = spec.d
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif spec.kind == "cylindrical":
        dirs = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    else:
        if angles % 2:
            raise ParameterOutOfRange("angle count must be even for symmetry")
        ang = 2 * np.pi * (np.arange(angles) + 0.5) / angles
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        # make the +/- pairing bit exact
        half = angles // 2
        dirs[half:] = -dirs[:half]
    nodes = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, d)
    weights = np.repeat(rw / dirs.shape[0], dirs.shape[0])
    return NuQuadrature(nodes, weights, spec.name or spec.kind, R)


def second_moment_error(quad, spec):
    exact = small_ball_second_moment(spec, spec.R)
    return abs(quad.second_moment() - exact) / exact


# -- symbol -----------------------------------------------------------------------------

def _as_matrix(sigma, d):
    if isinstance(sigma, SigmaField):
        if not sigma.is_constant:
            raise VariableSigma("psi_sigma is only defined for constant sigma")
        return sigma.matrix
    return np.atleast_2d(np.asarray(sigma, dtype=float)).reshape(d, d)


def symbol_psi(quad, sigma, xi, chunk=256):
    """psi_sigma(xi) = sum_k w_k (1 - cos(xi . sigma z_k)); xi has shape (..., d)."""
    S = _as_matrix(sigma, quad.d)
    xi = np.asarray(xi, dtype=float)
    flat = xi.reshape(-1, quad.d)
    shifts = quad.nodes @ S.T  # sigma z_k
    out = np.zeros(flat.shape[0])
    for s in range(0, quad.size, chunk):
        ph = flat @ shifts[s:s + chunk].T
        out += (2 * np.sin(ph / 2) ** 2) @ quad.weights[s:s + chunk]
    return out.reshape(xi.shape[:-1]) if xi.ndim > 1 else (out[0] if xi.ndim == 1 else out)


def grid_symbol(quad, sigma, grid):
    xi = np.stack(grid.xi, axis=-1)
    return symbol_psi(quad, sigma, xi)


# -- operator application ---------------------------------------------------------------------

def _axis_factors(k, s, nyq):
    """Per-axis shift factor F = e^{i k s} and F - 1, with cos at the Nyquist index."""
    th = k * s
    F = np.exp(1j * th)
    Fm1 = -2 * np.sin(th / 2) ** 2 + 1j * np.sin(th)
    F[nyq] = np.cos(th[nyq])
    Fm1[nyq] = -2 * np.sin(th[nyq] / 2) ** 2
    return F, Fm1


def _shift_minus_one(grid, s):
    """Multiplier of f -> f(. + s) - f on the real trigonometric interpolant.

    Built from e^{i theta} - 1 = -2 sin^2(theta/2) + i sin(theta) so that tiny
    shifts (inner quadrature nodes with huge weights) keep full relative accuracy.
    """
    k = np.pi * grid.kaxis / grid.L
    nyq = grid.N // 2
    out = np.zeros(grid.shape, dtype=complex)
    prod = np.ones(grid.shape, dtype=complex)
    # F1...Fd - 1 = sum_a (F_a - 1) F_{a+1}...F_d
    for ax in reversed(range(grid.d)):
        F, Fm1 = _axis_factors(k, s[ax], nyq)
        sl = [np.newaxis] * grid.d
        sl[ax] = slice(None)
        out = out + Fm1[tuple(sl)] * prod
        prod = prod * F[tuple(sl)]
    return out


def apply_L(f, sigma, quad, chunk=64):
    """Quadrature application of L_sigma to a scalar or vector GridField."""
    g = f.grid
    if quad.d != g.d:
        raise ParameterOutOfRange("quadrature and grid dimensions differ")
    if g.L < 2 * quad.R:
        raise GridTooCoarse(f"half-period L={g.L} below 2R={2 * quad.R}")
    if not isinstance(sigma, SigmaField):
        sigma = SigmaField(matrix=sigma)
    grad = ft.gradient(f).values  # comp + (d,) + grid
    cax = len(f.comp_shape)
    inner = quad.radii <= 1.0
    out = np.zeros_like(f.values)
    if sigma.is_constant:
        shifts = quad.nodes @ sigma.matrix.T
        axes = tuple(range(-g.d, 0))
        spec = f.spectrum
        for s in range(0, quad.size, chunk):
            sh = shifts[s:s + chunk]
            mult = np.stack([_shift_minus_one(g, v) for v in sh])
            diffs = np.real(np.fft.ifftn(spec[None] * mult.reshape((len(sh),) + (1,) * cax + g.shape),
                                         axes=axes))
            w = quad.weights[s:s + chunk]
            out += np.tensordot(w, diffs, axes=(0, 0))
            # compensator grad f . sigma z on |z| <= 1
            vec = np.tensordot(w * inner[s:s + chunk], sh, axes=(0, 0))
            out -= np.tensordot(grad, vec, axes=([cax], [0]))
        return ft.GridField(g, out)
    sig = sigma.values_on(g).reshape(g.d, g.d, -1)  # (d, d, P)
    x = g.points
    gflat = grad.reshape(f.comp_shape + (g.d, -1))
    acc = np.zeros(f.comp_shape + (x.shape[0],))
    for z, w, ins in zip(quad.nodes, quad.weights, inner):
        sz = np.einsum("ijp,j->pi", sig, z)  # (P, d)
        acc += w * ft.eval_shift_diff(f, x, sz)
        if ins:
            acc -= w * np.einsum("...kp,pk->...p", gflat, sz)
    return ft.GridField(g, acc.reshape(f.values.shape))


def apply_L_multiplier(f, sigma, quad):
    """Fourier route: spectrum times -psi_sigma(xi) (constant sigma only)."""
    return ft.apply_multiplier(f, -grid_symbol(quad, sigma, f.grid))


def apply_L_callable(func, grad, x, sigma, quad):
    """L_sigma applied pointwise to an arbitrary (not necessarily periodic) function.

    func maps (M, d) -> (M,), grad maps (M, d) -> (M, d); x has shape (M, d).
    """
    x = np.asarray(x, dtype=float).reshape(-1, quad.d)
    S = _as_matrix(sigma, quad.d)
    f0 = func(x)
    g0 = grad(x)
    out = np.zeros(x.shape[0])
    for z, w, r in zip(quad.nodes, quad.weights, quad.radii):
        sz = S @ z
        term = func(x + sz) - f0
        if r <= 1.0:
            term = term - g0 @ sz
        out += w * term
    return out


def symbol_lower_constant(quad, sigma, grid, alpha, rho):
    """min of psi(xi)/|xi|^alpha over grid frequencies with 1/rho <= |xi|."""
    psi = grid_symbol(quad, sigma, grid)
    r = grid.abs_xi
    sel = r >= 1.0 / rho
    return float(np.min(psi[sel] / r[sel] ** alpha))


# -- Bernstein and commutator reports -------------------------------------------------------

def _pairing(grid, a, b):
    return float(np.sum(a * b) * grid.cell)


def bernstein_report(quad, sigma, p, j_range, trials, seed, grid, alpha, decay=0.5):
    """Ratios D_j / (2^{alpha j} ||Delta_j f||_p^p) over random trial fields.

    D_j = -int |Delta_j f|^{p-2} Delta_j f  L Delta_j f dx (quadrature route).
    For p = 2 the same quantity is also computed by Plancherel from psi.
    """
    if p < 2:
        raise ParameterOutOfRange("Bernstein pairing needs p >= 2")
    j_range = list(j_range)
    psi = grid_symbol(quad, sigma, grid)
    ratios = {j: [] for j in j_range}
    plancherel_gap = 0.0
    low_min = np.inf
    skipped = 0
    for t in range(trials):
        f = ft.random_field(grid, seed + 7919 * t, decay=decay)
        low = ft.dyadic_block(f, -1)
        dlow = -_pairing(grid, np.abs(low.values) ** (p - 2) * low.values, apply_L(low, sigma, quad).values)
        scale = max(ft.lp_norm(low, p) ** p, 1e-300)
        low_min = min(low_min, dlow / scale)
        for j in j_range:
            fj = ft.dyadic_block(f, j)
            nrm = ft.lp_norm(fj, p) ** p
            if nrm < 1e-28:
                skipped += 1
                continue
            Lf = apply_L(fj, sigma, quad).values
            D = -_pairing(grid, np.abs(fj.values) ** (p - 2) * fj.values, Lf)
            if p == 2:
                planch = grid.volume / grid.N ** (2 * grid.d) * float(np.sum(psi * np.abs(fj.spectrum) ** 2))
                plancherel_gap = max(plancherel_gap, abs(D - planch) / abs(planch))
            ratios[j].append(D / (2.0 ** (alpha * j) * nrm))
    mins = {j: float(np.min(v)) for j, v in ratios.items() if v}
    medians = {j: float(np.median(v)) for j, v in ratios.items() if v}
    global_median = float(np.median(np.concatenate([v for v in ratios.values() if v])))
    j0 = next((j for j in j_range if ratios[j] and min(ratios[j]) >= 0.5 * global_median), None)
    med = np.array(list(medians.values()))
    return {
        "p": p,
        "trials": trials,
        "levels": j_range,
        "min_ratio": mins,
        "median_ratio": medians,
        "median_spread": float(med.max() / med.min()) if med.size and med.min() > 0 else float("inf"),
        "empirical_j0": j0,
        "low_block_min": float(low_min),
        "plancherel_rel_gap": plancherel_gap if p == 2 else None,
        "skipped": skipped,
    }


def commutator(b, u, j):
    """[Delta_j, b.grad] u = Delta_j(b.grad u) - b.grad Delta_j u."""
    bv = _as_vector(b)
    first = ft.dyadic_block(ft.advect(bv, ft.gradient(u)), j)
    second = ft.advect(bv, ft.gradient(ft.dyadic_block(u, j)))
    return first - second


def _as_vector(b):
    if b.comp_shape == ():
        return ft.GridField(b.grid, b.values[None])
    return b


def commutator_report(b, u, p, j_range, beta):
    j_range = list(j_range)
    grad_norm = ft.lp_norm(ft.gradient(u), p)
    hb = ft.holder_norm(b, beta)
    norms = np.array([ft.lp_norm(commutator(b, u, j), p) for j in j_range])
    slope = float(np.polyfit(j_range, np.log2(np.maximum(norms, 1e-300)), 1)[0]) if len(j_range) > 1 else None
    ratios = norms / (2.0 ** (-beta * np.array(j_range)) * hb * grad_norm)
    return {
        "p": p,
        "beta": beta,
        "levels": j_range,
        "norms": norms.tolist(),
        "slope": slope,
        "ratios": ratios.tolist(),
        "holder_b": hb,
        "grad_u_p": grad_norm,
    }
