"""Periodic grids, Littlewood-Paley blocks and the norms built on them.

Fields live on the torus [-L, L)^d with N points per axis.  Values are stored
with component axes first: a scalar field has shape (N,)*d, a vector field
(d,) + (N,)*d and a matrix field (d, d) + (N,)*d.  All Fourier work uses the
unnormalised numpy FFT over the trailing d axes.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import LevelOutOfRange, ParameterOutOfRange


@dataclass(frozen=True)
class PeriodicGrid:
    d: int = 1
    L: float = 8.0
    N: int = 256

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ParameterOutOfRange("grid dimension must be 1 or 2")
        if self.N < 16 or self.N & (self.N - 1):
            raise ParameterOutOfRange("N must be a power of two >= 16")
        if self.L <= 0:
            raise ParameterOutOfRange("half-period L must be positive")

    @property
    def h(self):
        return 2 * self.L / self.N

    @property
    def shape(self):
        return (self.N,) * self.d

    @property
    def cell(self):
        return self.h**self.d

    @property
    def volume(self):
        return (2 * self.L) ** self.d

    @cached_property
    def axis(self):
        return -self.L + self.h * np.arange(self.N)

    @cached_property
    def coords(self):
        """Tuple of d coordinate arrays, each of shape (N,)*d."""
        return tuple(np.meshgrid(*([self.axis] * self.d), indexing="ij"))

    @cached_property
    def points(self):
        return np.stack([c.reshape(-1) for c in self.coords], axis=1)

    @cached_property
    def kaxis(self):
        return np.fft.fftfreq(self.N, 1.0 / self.N)

    @cached_property
    def xi(self):
        k = np.pi * self.kaxis / self.L
        return tuple(np.meshgrid(*([k] * self.d), indexing="ij"))

    @cached_property
    def abs_xi(self):
        return np.sqrt(sum(x**2 for x in self.xi))

    @cached_property
    def nyquist_mask(self):
        m = np.zeros(self.shape, dtype=bool)
        for ax in range(self.d):
            idx = [slice(None)] * self.d
            idx[ax] = self.N // 2
            m[tuple(idx)] = True
        return m

    @property
    def J(self):
        """Highest dyadic level whose ring is resolved below Nyquist."""
        return int(np.floor(np.log2(self.N * np.pi / (3 * self.L))))

    def to_dict(self):
        return {"d": self.d, "L": self.L, "N": self.N}


class GridField:
    """Values sampled on a PeriodicGrid (scalar, vector or matrix valued)."""

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape[values.ndim - grid.d:] != grid.shape:
            raise ParameterOutOfRange(f"values of shape {values.shape} do not fit grid {grid.shape}")
        self.grid = grid
        self.values = values
        self._spec = None

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, fn(*grid.coords))

    @classmethod
    def constant(cls, grid, value):
        value = np.asarray(value, dtype=float)
        return cls(grid, np.broadcast_to(value.reshape(value.shape + (1,) * grid.d),
                                         value.shape + grid.shape).copy())

    @property
    def comp_shape(self):
        return self.values.shape[: self.values.ndim - self.grid.d]

    @property
    def spectrum(self):
        if self._spec is None:
            axes = tuple(range(-self.grid.d, 0))
            self._spec = np.fft.fftn(self.values, axes=axes)
        return self._spec

    def with_values(self, values):
        return GridField(self.grid, values)

    def pointwise_abs(self):
        """Euclidean (Frobenius for matrices) norm at each grid point."""
        c = self.comp_shape
        if not c:
            return np.abs(self.values)
        flat = self.values.reshape((-1,) + self.grid.shape)
        return np.sqrt(np.sum(flat**2, axis=0))

    def sup(self):
        return float(self.pointwise_abs().max())

    def __add__(self, other):
        return GridField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return GridField(self.grid, self.values - _vals(other))

    def __mul__(self, a):
        return GridField(self.grid, self.values * _vals(a))

    __rmul__ = __mul__

    def __neg__(self):
        return GridField(self.grid, -self.values)

    def __repr__(self):
        return f"GridField(d={self.grid.d}, N={self.grid.N}, comps={self.comp_shape})"


def _vals(x):
    return x.values if isinstance(x, GridField) else x


# -- spectral plumbing ---------------------------------------------------------

def from_spectrum(grid, spec):
    axes = tuple(range(-grid.d, 0))
    return GridField(grid, np.real(np.fft.ifftn(spec, axes=axes)))


def apply_multiplier(f, m):
    """Fourier multiplier m(xi) applied componentwise."""
    return from_spectrum(f.grid, f.spectrum * m)


def gradient(f):
    """Spectral gradient.  Scalar -> vector; vector -> matrix with [i, k] = d_k f_i."""
    g = f.grid
    outs = []
    for k in range(g.d):
        m = 1j * g.xi[k]
        m = np.where(g.nyquist_mask, 0.0, m)
        outs.append(np.real(np.fft.ifftn(f.spectrum * m, axes=tuple(range(-g.d, 0)))))
    return GridField(g, np.stack(outs, axis=len(f.comp_shape)))


def fd_gradient(f):
    """Second-order centred finite differences, same layout as gradient()."""
    g = f.grid
    outs = []
    for k in range(g.d):
        ax = f.values.ndim - g.d + k
        outs.append((np.roll(f.values, -1, axis=ax) - np.roll(f.values, 1, axis=ax)) / (2 * g.h))
    return GridField(g, np.stack(outs, axis=len(f.comp_shape)))


def advect(b, gradu):
    """(b . grad) u given b (vector field) and the gradient field of u."""
    d = b.grid.d
    gv = gradu.values
    lead = gv.ndim - d - 1
    bb = b.values.reshape((1,) * lead + (d,) + b.grid.shape)
    return GridField(b.grid, np.sum(gv * bb, axis=lead))


def _pad_matrix(n, nf):
    """Zero-padding map for one axis; the Nyquist coefficient is split in two."""
    P = np.zeros((nf, n))
    freq = np.fft.fftfreq(n, 1.0 / n).astype(int)
    for k, fr in enumerate(freq):
        if k == n // 2:
            P[n // 2, k] = 0.5
            P[nf - n // 2, k] = 0.5
        else:
            P[fr % nf, k] = 1.0
    return P


def upsample(f, factor):
    """Band-limited refinement of f onto a grid with factor times more points."""
    g = f.grid
    fine = PeriodicGrid(g.d, g.L, g.N * factor)
    P = _pad_matrix(g.N, fine.N)
    spec = f.spectrum
    if g.d == 1:
        big = np.einsum("ak,...k->...a", P, spec)
    else:
        big = np.einsum("ak,bl,...kl->...ab", P, P, spec)
    vals = np.real(np.fft.ifftn(big, axes=tuple(range(-g.d, 0)))) * factor**g.d
    return GridField(fine, vals)


def _axis_matrix(grid, x):
    """exp(i xi_k (x + L)) for every point x and axis frequency; cos at Nyquist."""
    k = np.pi * grid.kaxis / grid.L
    ph = np.outer(x + grid.L, k)
    E = np.exp(1j * ph)
    E[:, grid.N // 2] = np.cos(ph[:, grid.N // 2])
    return E


def eval_points(f, pts, chunk=4096):
    """Exact trigonometric interpolation of f at arbitrary points.

    pts has shape (M, d); returns comp_shape + (M,).
    """
    g = f.grid
    pts = np.asarray(pts, dtype=float).reshape(-1, g.d)
    coef = f.spectrum.reshape((-1,) + g.shape) / g.N**g.d
    out = np.empty((coef.shape[0], pts.shape[0]))
    for s in range(0, pts.shape[0], chunk):
        p = pts[s:s + chunk]
        if g.d == 1:
            E = _axis_matrix(g, p[:, 0])
            out[:, s:s + chunk] = np.real(coef @ E.T)
        else:
            E1 = _axis_matrix(g, p[:, 0])
            E2 = _axis_matrix(g, p[:, 1])
            tmp = np.einsum("cab,pb->cpa", coef, E2)
            out[:, s:s + chunk] = np.real(np.einsum("cpa,pa->cp", tmp, E1))
    return out.reshape(f.comp_shape + (pts.shape[0],))


def _axis_pair(grid, x, s):
    """Per-axis factors F(x) and F(x + s) - F(x) (accurate for tiny s)."""
    k = np.pi * grid.kaxis / grid.L
    nyq = grid.N // 2
    ph = np.outer(x + grid.L, k)
    th = np.outer(s, k)
    F = np.exp(1j * ph)
    G = F * (-2 * np.sin(th / 2) ** 2 + 1j * np.sin(th))
    F[:, nyq] = np.cos(ph[:, nyq])
    G[:, nyq] = -2 * np.sin(ph[:, nyq] + th[:, nyq] / 2) * np.sin(th[:, nyq] / 2)
    return F, G


def eval_shift_diff(f, x, s, chunk=2048):
    """f(x + s) - f(x) at points x (M, d) with displacements s (M, d)."""
    g = f.grid
    x = np.asarray(x, dtype=float).reshape(-1, g.d)
    s = np.asarray(s, dtype=float).reshape(-1, g.d)
    coef = f.spectrum.reshape((-1,) + g.shape) / g.N**g.d
    out = np.empty((coef.shape[0], x.shape[0]))
    for a in range(0, x.shape[0], chunk):
        xs, ss = x[a:a + chunk], s[a:a + chunk]
        if g.d == 1:
            _, G = _axis_pair(g, xs[:, 0], ss[:, 0])
            out[:, a:a + chunk] = np.real(coef @ G.T)
        else:
            F1, G1 = _axis_pair(g, xs[:, 0], ss[:, 0])
            F2, G2 = _axis_pair(g, xs[:, 1], ss[:, 1])
            # F1'F2' - F1F2 = G1 F2' + F1 G2 with F2' = F2 + G2
            t1 = np.einsum("cab,pb->cpa", coef, F2 + G2)
            t2 = np.einsum("cab,pb->cpa", coef, G2)
            out[:, a:a + chunk] = np.real(np.einsum("cpa,pa->cp", t1, G1) + np.einsum("cpa,pa->cp", t2, F1))
    return out.reshape(f.comp_shape + (x.shape[0],))


class SplineInterpolator:
    """Cubic-spline evaluation on a band-limited refinement of a field.

    Cheaper than eval_points for hot Monte Carlo loops.  ``discrepancy``
    records the largest deviation from exact trigonometric interpolation on a
    fixed probe sample.
    """

    def __init__(self, f, factor=None, probe=64, seed=0):
        g = f.grid
        if factor is None:
            factor = 8 if g.d == 1 else 4
        fine = upsample(f, factor)
        self.grid = g
        self.fine = fine.grid
        self.comp_shape = f.comp_shape
        flat = fine.values.reshape((-1,) + fine.grid.shape)
        self._coef = [ndimage.spline_filter(c, order=3, mode="grid-wrap") for c in flat]
        rng = np.random.default_rng(seed)
        pr = rng.uniform(-g.L, g.L, size=(probe, g.d))
        self.discrepancy = float(np.max(np.abs(self(pr) - eval_points(f, pr)))) if probe else 0.0

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, self.grid.d)
        idx = ((pts + self.grid.L) / self.fine.h).T
        out = np.stack([
            ndimage.map_coordinates(c, idx, order=3, mode="grid-wrap", prefilter=False)
            for c in self._coef
        ])
        return out.reshape(self.comp_shape + (pts.shape[0],))


class ExactInterpolator:
    def __init__(self, f):
        self.f = f
        self.comp_shape = f.comp_shape
        self.discrepancy = 0.0

    def __call__(self, pts):
        return eval_points(self.f, pts)


def interpolator(f, mode="spline"):
    return ExactInterpolator(f) if mode == "spectral" else SplineInterpolator(f)


# -- Littlewood-Paley --------------------------------------------------------------

def _smooth_step(t):
    t = np.asarray(t, dtype=float)
    g = lambda s: np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    a, b = g(t), g(1 - t)
    return a / (a + b)


def chi(r):
    """Radial cutoff: 1 on |xi| <= 1, 0 on |xi| >= 3/2, smooth in between."""
    return _smooth_step(3 - 2 * np.abs(r))


def ring(r):
    return chi(r) - chi(2 * r)


def block_multiplier(grid, j):
    if j < -1 or j > grid.J:
        raise LevelOutOfRange(f"level {j} outside [-1, {grid.J}]")
    r = grid.abs_xi
    return chi(2 * r) if j == -1 else ring(r / 2.0**j)


def lowpass_multiplier(grid, j):
    if j < -1 or j > grid.J + 1:
        raise LevelOutOfRange(f"level {j} outside [-1, {grid.J + 1}]")
    if j == -1:
        return np.zeros(grid.shape)
    return chi(grid.abs_xi * 2.0 ** (1 - j))


def dyadic_block(f, j):
    return apply_multiplier(f, block_multiplier(f.grid, j))


def lowpass(f, j):
    """S_j f = sum of blocks -1 <= k < j."""
    return apply_multiplier(f, lowpass_multiplier(f.grid, j))


def levels(grid):
    return list(range(-1, grid.J + 1))


# -- norms ------------------------------------------------------------------------

def lp_norm(f, p):
    a = f.pointwise_abs()
    if np.isinf(p):
        return float(a.max())
    return float((np.sum(a**p) * f.grid.cell) ** (1.0 / p))


def _lq(vals, q):
    vals = np.asarray(vals)
    if np.isinf(q):
        return float(vals.max())
    return float(np.sum(vals**q) ** (1.0 / q))


def besov_norm(f, s, p, q):
    terms = [2.0 ** (j * s) * lp_norm(dyadic_block(f, j), p) for j in levels(f.grid)]
    return _lq(terms, q)


def _offsets(grid, radius):
    """Periodic lattice offsets m != 0 with |m h| <= radius, and their lengths."""
    N = grid.N
    rep = np.arange(-N // 2 + 1, N // 2 + 1)
    mm = np.stack(np.meshgrid(*([rep] * grid.d), indexing="ij"), axis=-1).reshape(-1, grid.d)
    dist = grid.h * np.linalg.norm(mm, axis=1)
    keep = (dist > 0) & (dist <= radius * (1 + 1e-12))
    return mm[keep], dist[keep]


def _shift(values, m, d):
    axes = tuple(range(values.ndim - d, values.ndim))
    return np.roll(values, tuple(-int(k) for k in m), axis=axes)


def slobodeckij_seminorm(f, theta, p, batch=None):
    """Riemann double sum over grid pairs at periodic distance <= L."""
    if not 0 < theta < 1:
        raise ParameterOutOfRange("Slobodeckij order must lie in (0, 1)")
    g = f.grid
    vals = f.values if batch is None else batch
    nlead = vals.ndim - g.d - len(f.comp_shape)
    offs, dist = _offsets(g, g.L)
    total = np.zeros(vals.shape[:nlead])
    cax = len(f.comp_shape)
    for m, r in zip(offs, dist):
        diff = _shift(vals, m, g.d) - vals
        if cax:
            diff = np.sqrt(np.sum(diff**2, axis=tuple(range(nlead, nlead + cax))))
        else:
            diff = np.abs(diff)
        total = total + np.sum(diff**p, axis=tuple(range(nlead, diff.ndim))) / r ** (theta * p + g.d)
    out = (total * g.cell**2) ** (1.0 / p)
    return float(out) if batch is None else out


def holder_norm(f, beta):
    if not 0 < beta <= 1:
        raise ParameterOutOfRange("Holder exponent must lie in (0, 1]")
    g = f.grid
    offs, dist = _offsets(g, 1.0)
    cax = len(f.comp_shape)
    best = 0.0
    for m, r in zip(offs, dist):
        diff = _shift(f.values, m, g.d) - f.values
        a = np.sqrt(np.sum(diff**2, axis=tuple(range(cax)))) if cax else np.abs(diff)
        best = max(best, float(a.max()) / r**beta)
    return f.sup() + best


def localized_sobolev_norm(f, s, p):
    """max over unit-lattice centres z of ||f chi_z||_p + [f chi_z]_{s,p}."""
    if not 0 < s < 1:
        raise ParameterOutOfRange("localized Sobolev order must lie in (0, 1)")
    g = f.grid
    centres_1d = -g.L + np.arange(int(np.floor(2 * g.L)))
    centres = np.stack(np.meshgrid(*([centres_1d] * g.d), indexing="ij"), axis=-1).reshape(-1, g.d)
    best = 0.0
    for cb in np.array_split(centres, max(1, len(centres) // 16)):
        disp = [((g.coords[k][None] - cb[:, k].reshape((-1,) + (1,) * g.d) + g.L) % (2 * g.L)) - g.L
                for k in range(g.d)]
        cut = chi(np.sqrt(sum(x**2 for x in disp)))  # (B,) + grid
        cax = len(f.comp_shape)
        vals = f.values[None] * cut.reshape((cut.shape[0],) + (1,) * cax + g.shape)
        semi = slobodeckij_seminorm(f, s, p, batch=vals)
        if cax:
            pa = np.sqrt(np.sum(vals**2, axis=tuple(range(1, 1 + cax))))
        else:
            pa = np.abs(vals)
        lp = (np.sum(pa**p, axis=tuple(range(1, pa.ndim))) * g.cell) ** (1.0 / p)
        best = max(best, float(np.max(lp + semi)))
    return best


def bessel_potential_norm(f, s, p):
    """||(1 + |xi|^2)^{s/2} f||_p, used only inside invariant checks."""
    return lp_norm(apply_multiplier(f, (1 + f.grid.abs_xi**2) ** (s / 2)), p)


def norm(f, which, *params):
    """Dispatch by name: Lp(p), Besov(s,p,q), Slobodeckij(theta,p), Holder(beta),
    LocalizedSobolev(s,p)."""
    which = which.lower()
    if which == "lp":
        (p,) = params
        if p < 1:
            raise ParameterOutOfRange("p must be >= 1")
        return lp_norm(f, p)
    if which == "besov":
        s, p, q = params
        if p < 1 or q < 1:
            raise ParameterOutOfRange("Besov p, q must be >= 1")
        return besov_norm(f, s, p, q)
    if which == "slobodeckij":
        theta, p = params
        return slobodeckij_seminorm(f, theta, p)
    if which == "holder":
        (beta,) = params
        return holder_norm(f, beta)
    if which == "localizedsobolev":
        s, p = params
        return localized_sobolev_norm(f, s, p)
    raise ParameterOutOfRange(f"unknown norm {which!r}")


# -- test fields ------------------------------------------------------------------

def _level_frequencies(grid, j):
    """Lattice wave vectors with |xi| in the flat part [3/4, 1] * 2^j of ring j."""
    lo, hi = 0.75 * 2.0**j, 2.0**j
    kmax = int(np.ceil(hi * grid.L / np.pi))
    rng_k = np.arange(-kmax, kmax + 1)
    kk = np.stack(np.meshgrid(*([rng_k] * grid.d), indexing="ij"), axis=-1).reshape(-1, grid.d)
    r = np.pi * np.linalg.norm(kk, axis=1) / grid.L
    sel = (r >= lo) & (r <= hi)
    kk = kk[sel]
    # one representative per +/- pair
    first = kk[:, 0] if grid.d == 1 else np.where(kk[:, 0] != 0, kk[:, 0], kk[:, 1])
    return kk[first > 0]


def holder_sample(beta, grid, seed, amplitude=1.0, ncomp=None):
    """Random lacunary series: level j carries amplitude 2^{-j beta} cos(xi_j.x + phase).

    Each wave vector sits where ring j equals one, so Delta_j of the sample is
    exactly its level-j term.
    """
    rng = np.random.default_rng(seed)
    comps = 1 if ncomp is None else ncomp
    vals = np.zeros((comps,) + grid.shape)
    for c in range(comps):
        for j in range(0, grid.J + 1):
            ks = _level_frequencies(grid, j)
            if ks.shape[0] == 0:
                continue
            k = ks[rng.integers(ks.shape[0])]
            phase = 2 * np.pi * rng.random()
            arg = sum(np.pi * k[a] / grid.L * grid.coords[a] for a in range(grid.d))
            vals[c] += amplitude * 2.0 ** (-j * beta) * np.cos(arg + phase)
    return GridField(grid, vals[0] if ncomp is None else vals)


def random_field(grid, seed, decay=1.0, ncomp=None, band=None):
    """Gaussian random trig series with |xi|^{-decay} spectral envelope."""
    rng = np.random.default_rng(seed)
    shape = ((ncomp,) if ncomp else ()) + grid.shape
    white = rng.standard_normal(shape)
    spec = np.fft.fftn(white, axes=tuple(range(-grid.d, 0)))
    env = (1 + grid.abs_xi) ** (-decay)
    if band is not None:
        env = env * (grid.abs_xi <= band)
    env = np.where(grid.nyquist_mask, 0.0, env)
    return from_spectrum(grid, spec * env)


# -- persistence --------------------------------------------------------------------

def field_to_csv(f):
    g = f.grid
    buf = io.StringIO()
    buf.write(f"# d={g.d}\n# L={g.L!r}\n# N={g.N}\n")
    buf.write("# comp_shape=" + "x".join(str(c) for c in f.comp_shape) + "\n")
    ncomp = int(np.prod(f.comp_shape)) if f.comp_shape else 1
    cols = [f"x_{i + 1}" for i in range(g.d)] + [f"v_{c}" for c in range(ncomp)]
    buf.write(",".join(cols) + "\n")
    flat = f.values.reshape((ncomp, -1))
    pts = g.points
    for i in range(pts.shape[0]):
        buf.write(",".join(repr(float(v)) for v in list(pts[i]) + list(flat[:, i])) + "\n")
    return buf.getvalue()


def field_from_csv(text):
    meta, rows = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        elif line and not line.startswith("x_"):
            rows.append([float(v) for v in line.split(",")])
    g = PeriodicGrid(int(meta["d"]), float(meta["L"]), int(meta["N"]))
    comp = tuple(int(c) for c in meta["comp_shape"].split("x")) if meta["comp_shape"] else ()
    arr = np.array(rows)
    vals = arr[:, g.d:].T.reshape(comp + g.shape)
    return GridField(g, vals)
