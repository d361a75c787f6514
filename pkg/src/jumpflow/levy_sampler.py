"""Compound-Poisson paths for the driving Levy process.

Jumps of size at most ``eps`` are discarded; the retained jumps form a
compound Poisson process with rate ``mass_above(spec, eps)`` and jump law
``nu`` restricted to ``{eps < |z| <= R}``.  Because ``nu`` is symmetric the
retained jumps need no compensator, so ``Z_t`` is the plain jump sum.
"""
from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass

import numpy as np

from .errors import DuplicateTimestamp, InvalidCutoff, JumpOutOfSupport, TimeOutOfRange
from .levy_model import mass_above, small_ball_second_moment


@dataclass(frozen=True)
class JumpPath:
    T: float
    eps: float
    times: np.ndarray
    sizes: np.ndarray  # shape (n_jumps, d)
    seed: int
    spec_ref: str
    R: float
    d: int

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        sizes = np.asarray(self.sizes, dtype=float).reshape(-1, self.d)
        times.setflags(write=False)
        sizes.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "sizes", sizes)
        if times.size and (np.any(np.diff(times) <= 0) or times[0] <= 0 or times[-1] > self.T):
            raise DuplicateTimestamp("jump times must be strictly increasing in (0, T]")

    @property
    def n_jumps(self):
        return self.times.size

    def digest(self):
        return hashlib.sha256(to_csv(self).encode()).hexdigest()


def derive_seed(master_seed, k):
    """Seed for path ``k`` of a Monte Carlo batch.

    Uses numpy's SeedSequence hashing of the pair (master_seed, k), so batch
    statistics are reproducible and paths are statistically independent.
    """
    ss = np.random.SeedSequence([int(master_seed) & (2**63 - 1), int(k)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _sample_sizes(spec, eps, n, rng):
    d = spec.d
    if n == 0:
        return np.zeros((0, d))
    if spec.kind == "discrete":
        z, w = spec.atom_array()
        keep = np.linalg.norm(z, axis=1) > eps
        z, w = z[keep], w[keep]
        idx = rng.choice(z.shape[0], size=n, p=w / w.sum())
        return z[idx].copy()
    a, R = spec.alpha, spec.R
    # inverse transform of the radial law s^{-1-alpha} on (eps, R]
    u = rng.random(n)
    s = (eps ** (-a) - u * (eps ** (-a) - R ** (-a))) ** (-1.0 / a)
    if spec.kind == "isotropic" and d == 2:
        ang = 2 * np.pi * rng.random(n)
        return s[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    out = np.zeros((n, d))
    axis = rng.integers(0, d, size=n) if d > 1 else np.zeros(n, dtype=int)
    out[np.arange(n), axis] = sign * s
    return out


def sample_jump_path(spec, T, eps, seed):
    if not T > 0:
        raise TimeOutOfRange("horizon T must be positive")
    if not 0 < eps < spec.R:
        raise InvalidCutoff(f"cutoff {eps} outside (0, R={spec.R})")
    rate = mass_above(spec, eps)
    rng = np.random.default_rng(seed)
    n = int(rng.poisson(rate * T)) if rate > 0 else 0
    times = np.sort(T * (1.0 - rng.random(n)))  # uniform on (0, T]
    if n and np.any(np.diff(times) <= 0):
        raise DuplicateTimestamp("tied jump times; resample with another seed")
    sizes = _sample_sizes(spec, eps, n, rng)
    return JumpPath(T, eps, times, sizes, int(seed), spec.name or spec.kind, spec.R, spec.d)


def empty_path(T, d, eps=1e-3, R=1.0, spec_ref="none"):
    return JumpPath(T, eps, np.zeros(0), np.zeros((0, d)), 0, spec_ref, R, d)


def evaluate_Z(path, t):
    """Z_t = sum of jumps up to and including time t (cadlag)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > path.T):
        raise TimeOutOfRange(f"time outside [0, {path.T}]")
    cum = np.vstack([np.zeros((1, path.d)), np.cumsum(path.sizes, axis=0)])
    idx = np.searchsorted(path.times, t, side="right")
    return cum[idx]


def insert_jump(path, r, z):
    z = np.asarray(z, dtype=float).reshape(path.d)
    if not 0 < r <= path.T:
        raise TimeOutOfRange(f"insertion time {r} outside (0, {path.T}]")
    nz = np.linalg.norm(z)
    if not (path.eps < nz <= path.R * (1 + 1e-12)):
        raise JumpOutOfSupport(f"|z| = {nz} outside (eps, R]")
    if np.any(path.times == r):
        raise DuplicateTimestamp(f"a jump already sits at t = {r}")
    k = np.searchsorted(path.times, r)
    times = np.insert(path.times, k, r)
    sizes = np.insert(path.sizes, k, z, axis=0)
    return JumpPath(path.T, path.eps, times, sizes, path.seed, path.spec_ref, path.R, path.d)


def truncation_bias_bound(spec, T, eps):
    """Exact L2 error T*int_{|z|<=eps}|z|^2 nu and its (A1) upper bound."""
    exact = T * small_ball_second_moment(spec, eps)
    bound = T * eps ** (2 - spec.alpha) / spec.c0 if eps < spec.rho else float("inf")
    return {"exact": exact, "bound": bound}


def to_csv(path):
    buf = io.StringIO()
    buf.write(f"# T={path.T!r}\n# eps={path.eps!r}\n# seed={path.seed}\n")
    buf.write(f"# spec_ref={path.spec_ref}\n# R={path.R!r}\n# d={path.d}\n")
    buf.write("t," + ",".join(f"z_{i + 1}" for i in range(path.d)) + "\n")
    for t, z in zip(path.times, path.sizes):
        buf.write(",".join([repr(float(t))] + [repr(float(v)) for v in z]) + "\n")
    return buf.getvalue()


def from_csv(text):
    meta = {}
    rows = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key] = val
        elif line and not line.startswith("t,"):
            rows.append([float(v) for v in line.split(",")])
    d = int(meta["d"])
    arr = np.array(rows, dtype=float).reshape(-1, d + 1)
    return JumpPath(
        float(meta["T"]), float(meta["eps"]), arr[:, 0], arr[:, 1:],
        int(meta["seed"]), meta["spec_ref"], float(meta["R"]), d,
    )


def save_csv(path, filename):
    with open(filename, "w") as fh:
        fh.write(to_csv(path))


def load_csv(filename):
    with open(filename) as fh:
        return from_csv(fh.read())
