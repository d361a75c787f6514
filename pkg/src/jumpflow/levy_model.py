"""Symmetric truncated Levy measures and their moment integrals.

Three families are supported:

* ``isotropic``   -- c |z|^{-d-alpha} dz on {|z| <= R}
* ``cylindrical`` -- sum over axes of c |z_i|^{-1-alpha} dz_i (singular in d = 2)
* ``discrete``    -- finitely many symmetric atoms

For the two stable families the measure factorises in polar form as
``C_rad * s^{-1-alpha} ds`` times an angular law, which gives closed forms for
every integral used downstream.  Each closed form has a quadrature twin
(``*_quad``) that integrates the radial density numerically.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import (
    CertificationError,
    ExponentOutOfRange,
    InvalidCutoff,
    InvalidRadius,
    ParameterOutOfRange,
)

KINDS = ("isotropic", "cylindrical", "discrete")


@dataclass(frozen=True)
class LevyMeasureSpec:
    kind: str
    d: int
    alpha: float
    c0: float
    rho: float
    R: float = 1.0
    c: float = 1.0
    atoms: tuple = ()
    weights: tuple = ()
    name: str = ""
    check_a1: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterOutOfRange(f"unknown measure kind {self.kind!r}")
        if self.d not in (1, 2):
            raise ParameterOutOfRange("dimension must be 1 or 2")
        if not 0 < self.alpha < 2:
            raise ParameterOutOfRange("alpha must lie in (0, 2)")
        if not (0 < self.c0 < 1 and 0 < self.rho < 1):
            raise ParameterOutOfRange("c0 and rho must lie in (0, 1)")
        if self.R <= 0 or self.c <= 0:
            raise ParameterOutOfRange("R and c must be positive")
        if self.kind == "discrete":
            atoms = np.asarray(self.atoms, dtype=float).reshape(-1, self.d)
            w = np.asarray(self.weights, dtype=float)
            if atoms.shape[0] != w.shape[0] or atoms.shape[0] == 0:
                raise ParameterOutOfRange("need one positive weight per atom")
            if np.any(w <= 0):
                raise ParameterOutOfRange("atom weights must be positive")
            if np.any(np.linalg.norm(atoms, axis=1) > self.R * (1 + 1e-12)):
                raise ParameterOutOfRange("atom outside the support ball B_R")
            if np.any(np.linalg.norm(atoms, axis=1) == 0):
                raise ParameterOutOfRange("atom at the origin")
            for z, wz in zip(atoms, w):
                match = np.all(np.isclose(atoms, -z, rtol=0, atol=1e-14), axis=1)
                if not np.any(match & np.isclose(w, wz, rtol=1e-14, atol=0)):
                    raise ParameterOutOfRange("discrete measure is not symmetric")
            object.__setattr__(self, "atoms", tuple(map(tuple, atoms)))
            object.__setattr__(self, "weights", tuple(w))
        if self.check_a1:
            rep = certify(self)
            if not rep["pass"]:
                raise CertificationError(
                    f"(A1) certification failed for {self.name or self.kind}: "
                    f"lower margin {rep['lower_margin']:.3g}, "
                    f"upper margin {rep['upper_margin']:.3g}"
                )

    # -- constructors ----------------------------------------------------
    @classmethod
    def isotropic(cls, d, alpha, c0, rho, c=1.0, R=1.0, **kw):
        return cls("isotropic", d, alpha, c0, rho, R=R, c=c, **kw)

    @classmethod
    def cylindrical(cls, d, alpha, c0, rho, c=1.0, R=1.0, **kw):
        return cls("cylindrical", d, alpha, c0, rho, R=R, c=c, **kw)

    @classmethod
    def discrete(cls, atoms, weights, alpha, c0, rho, R=None, **kw):
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        if atoms.shape[0] == 1 and atoms.shape[1] > 2:
            atoms = atoms.T
        d = atoms.shape[1]
        if R is None:
            R = float(np.max(np.linalg.norm(atoms, axis=1)))
        return cls("discrete", d, alpha, c0, rho, R=R, atoms=atoms, weights=weights, **kw)

    # -- helpers -----------------------------------------------------------
    @property
    def is_stable(self):
        return self.kind != "discrete"

    @property
    def radial_constant(self):
        """C such that the radial law of nu is C s^{-1-alpha} ds on (0, R]."""
        if self.kind == "isotropic":
            return 2.0 * self.c if self.d == 1 else 2.0 * np.pi * self.c
        if self.kind == "cylindrical":
            return 2.0 * self.c * self.d
        raise TypeError("discrete measures have no radial density")

    def atom_array(self):
        return np.asarray(self.atoms, dtype=float).reshape(-1, self.d), np.asarray(self.weights)

    def to_dict(self):
        out = {
            "kind": self.kind, "d": self.d, "alpha": self.alpha, "c0": self.c0,
            "rho": self.rho, "R": self.R, "c": self.c, "name": self.name,
        }
        if self.kind == "discrete":
            out["atoms"] = [list(a) for a in self.atoms]
            out["weights"] = list(self.weights)
        return out

    @classmethod
    def from_dict(cls, data, check_a1=True):
        data = dict(data)
        kind = data.pop("kind")
        if kind == "discrete":
            atoms = data.pop("atoms")
            weights = data.pop("weights")
            data.pop("c", None)
            data.pop("d", None)
            return cls.discrete(atoms, weights, check_a1=check_a1, **data)
        return cls(kind, check_a1=check_a1, **data)


def _check_radius(spec, r):
    if not (r > 0 and r <= spec.R * (1 + 1e-12)):
        raise InvalidRadius(f"radius {r} outside (0, R={spec.R}]")


def _unit(theta, d):
    theta = np.asarray(theta, dtype=float).reshape(d)
    n = np.linalg.norm(theta)
    if not np.isclose(n, 1.0, atol=1e-10):
        raise ParameterOutOfRange("direction theta must be a unit vector")
    return theta


def small_ball_directional(spec, r, theta):
    """Integral of <theta, z>^2 over the closed ball B_r."""
    _check_radius(spec, r)
    theta = _unit(theta, spec.d)
    if spec.kind == "discrete":
        z, w = spec.atom_array()
        inside = np.linalg.norm(z, axis=1) <= r
        return float(np.sum(w[inside] * (z[inside] @ theta) ** 2))
    # both stable families have E<theta, omega>^2 = 1/d for their angular law
    a = spec.alpha
    return spec.radial_constant / spec.d * r ** (2 - a) / (2 - a)


def small_ball_second_moment(spec, r):
    """Integral of |z|^2 over the closed ball B_r."""
    _check_radius(spec, r)
    if spec.kind == "discrete":
        z, w = spec.atom_array()
        s = np.linalg.norm(z, axis=1)
        return float(np.sum(w[s <= r] * s[s <= r] ** 2))
    a = spec.alpha
    return spec.radial_constant * r ** (2 - a) / (2 - a)


def moment_integral(spec, r, theta_exp, region="small_ball"):
    """Integral of |z|^theta_exp over {|z| <= r} or over {r < |z| <= 1}."""
    a = spec.alpha
    if region == "small_ball":
        if not theta_exp > a:
            raise ExponentOutOfRange("small_ball needs theta_exp > alpha")
        _check_radius(spec, r)
        lo, hi = 0.0, r
    elif region == "annulus_to_one":
        if not 0 <= theta_exp < a:
            raise ExponentOutOfRange("annulus_to_one needs 0 <= theta_exp < alpha")
        if not (0 < r <= 1 <= spec.R):
            raise InvalidRadius("annulus_to_one needs 0 < r <= 1 <= R")
        lo, hi = r, 1.0
    else:
        raise ParameterOutOfRange(f"unknown region {region!r}")
    if spec.kind == "discrete":
        z, w = spec.atom_array()
        s = np.linalg.norm(z, axis=1)
        sel = (s > lo) & (s <= hi)
        return float(np.sum(w[sel] * s[sel] ** theta_exp))
    e = theta_exp - a
    C = spec.radial_constant
    if lo == 0.0:
        return C * hi**e / e
    return C * (hi**e - lo**e) / e


def mass_above(spec, eps):
    """nu({eps < |z| <= R}), the jump rate of the compound-Poisson sampler."""
    if not 0 < eps < spec.R:
        raise InvalidCutoff(f"cutoff {eps} outside (0, R={spec.R})")
    if spec.kind == "discrete":
        z, w = spec.atom_array()
        return float(np.sum(w[np.linalg.norm(z, axis=1) > eps]))
    a = spec.alpha
    return spec.radial_constant * (eps ** (-a) - spec.R ** (-a)) / a


# -- quadrature twins ------------------------------------------------------

def radial_integral_quad(spec, lo, hi, power):
    """int_lo^hi s^power C s^{-1-alpha} ds by adaptive quadrature in log s."""
    a = spec.alpha
    C = spec.radial_constant
    tlo = -np.inf if lo == 0 else np.log(lo)
    val, _ = integrate.quad(
        lambda t: np.exp((power - a) * t), tlo, np.log(hi), epsabs=0, epsrel=1e-13, limit=200
    )
    return C * val


def _angular_mean_sq(spec, theta):
    if spec.kind == "cylindrical" or spec.d == 1:
        return float(np.sum(theta**2)) / spec.d
    val, _ = integrate.quad(
        lambda p: (theta[0] * np.cos(p) + theta[1] * np.sin(p)) ** 2,
        0, 2 * np.pi, epsabs=0, epsrel=1e-13,
    )
    return val / (2 * np.pi)


def small_ball_directional_quad(spec, r, theta):
    _check_radius(spec, r)
    theta = _unit(theta, spec.d)
    return radial_integral_quad(spec, 0.0, r, 2.0) * _angular_mean_sq(spec, theta)


def moment_integral_quad(spec, r, theta_exp, region="small_ball"):
    if region == "small_ball":
        return radial_integral_quad(spec, 0.0, r, theta_exp)
    return radial_integral_quad(spec, r, 1.0, theta_exp)


def mass_above_quad(spec, eps):
    return radial_integral_quad(spec, eps, spec.R, 0.0)


# -- certification -----------------------------------------------------------

def sphere_directions(d, n=16):
    if d == 1:
        return np.array([[1.0], [-1.0]])
    ang = 2 * np.pi * (np.arange(n) + 0.25) / n
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def certification_radii(spec, n=32):
    lo = spec.R * 1e-4
    hi = min(spec.rho, spec.R)
    # open interval (lo, hi): drop the endpoints of a log-spaced ladder
    return np.geomspace(lo, hi, n + 2)[1:-1]


def certify(spec, n_radii=32, n_dirs=16):
    """Check the two small-ball bounds of (A1) on a log-spaced radius ladder.

    Returns a dict with the worst relative margins; ``pass`` is True when
    ``I_theta(r) >= c0 r^{2-alpha}`` and ``I(r) <= r^{2-alpha}/c0`` everywhere.
    """
    radii = certification_radii(spec, n_radii)
    dirs = sphere_directions(spec.d, n_dirs)
    a = spec.alpha
    lower = np.empty((radii.size, dirs.shape[0]))
    upper = np.empty(radii.size)
    for i, r in enumerate(radii):
        scale = r ** (2 - a)
        for k, th in enumerate(dirs):
            lower[i, k] = small_ball_directional(spec, r, th) / (spec.c0 * scale)
        upper[i] = small_ball_second_moment(spec, r) * spec.c0 / scale
    lower_margin = float(lower.min())
    upper_margin = float(upper.max())
    return {
        "spec": spec.name or spec.kind,
        "n_radii": int(radii.size),
        "n_directions": int(dirs.shape[0]),
        "lower_margin": lower_margin,
        "upper_margin": upper_margin,
        "pass": bool(lower_margin >= 1.0 and upper_margin <= 1.0),
    }


def moment_crosscheck(spec, n=12):
    """Largest relative gap between closed-form and quadrature integrals."""
    if not spec.is_stable:
        return 0.0
    a = spec.alpha
    worst = 0.0
    rs = np.geomspace(spec.R * 1e-4, min(spec.rho, spec.R), n)
    for r in rs:
        pairs = [
            (small_ball_second_moment(spec, r), radial_integral_quad(spec, 0, r, 2.0)),
            (moment_integral(spec, r, (a + 2) / 2), moment_integral_quad(spec, r, (a + 2) / 2)),
            (mass_above(spec, r), mass_above_quad(spec, r)),
        ]
        for th in sphere_directions(spec.d, 4):
            pairs.append((small_ball_directional(spec, r, th), small_ball_directional_quad(spec, r, th)))
        if spec.R >= 1:
            pairs.append((moment_integral(spec, r, a / 2, "annulus_to_one"),
                          moment_integral_quad(spec, r, a / 2, "annulus_to_one")))
        for exact, quad in pairs:
            worst = max(worst, abs(exact - quad) / max(abs(exact), 1e-300))
    return worst


def scaling_exponent(spec, theta_exp, region="small_ball", n=16):
    """Least-squares slope of log moment vs log r (expected theta_exp - alpha)."""
    hi = min(spec.rho, spec.R, 1.0)
    rs = np.geomspace(hi * 1e-3, hi * 0.5, n)
    vals = np.array([moment_integral(spec, r, theta_exp, region) for r in rs])
    if region == "annulus_to_one":
        # the annulus integral grows like r^{theta-alpha} only as r -> 0
        rs = rs[: n // 2]
        vals = vals[: n // 2]
    return float(np.polyfit(np.log(rs), np.log(vals), 1)[0])
