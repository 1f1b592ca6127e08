"""Hyperbolic geometry in the Poincare ball model.

Points of H^d are stored either as Euclidean coordinates inside the unit ball
or, for simulation, in polar form (hyperbolic radius, unit direction).  The
polar form keeps full precision far from the origin, where ball coordinates
run out of digits (1 - |x| ~ 2 e^{-r}).
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import interpolate, special

MAX_DIM = 8
MAX_RADIUS = 40.0
POINT_CAP = 10**7

# exp() overflows past this argument in double precision
_LOG_MAX = math.log(np.finfo(float).max)
_GL_X, _GL_W = np.polynomial.legendre.leggauss(40)
_SPLIT = 2.0


def check_dim(d):
    if int(d) != d or not 2 <= d <= MAX_DIM:
        raise ValueError(f"dimension must be an integer in [2, {MAX_DIM}], got {d}")
    return int(d)


def sphere_area(k):
    """Surface area of the unit k-sphere in R^{k+1}; sphere_area(0) = 2."""
    return 2.0 * math.pi ** ((k + 1) / 2) / math.gamma((k + 1) / 2)


def log_sinh(r):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        big = r + np.log1p(-np.exp(-2.0 * np.maximum(r, 1.0))) - math.log(2.0)
        small = np.log(np.sinh(np.minimum(r, 20.0)))
    return np.where(r > 20.0, big, small)


# -- metric ------------------------------------------------------------------

def _arcosh1p(u):
    """arcosh(1 + u) without cancellation for small u."""
    u = np.asarray(u, dtype=float)
    tiny = u < 1e-12
    big = np.log1p(u + np.sqrt(u * (u + 2.0)))
    return np.where(tiny, np.sqrt(2.0 * np.maximum(u, 0.0)), big)


def dist_from_origin(x):
    """2 artanh|x| for ball coordinates x (last axis is the coordinate axis)."""
    return 2.0 * np.arctanh(np.linalg.norm(np.asarray(x, dtype=float), axis=-1))


def hyp_dist(x, y):
    """Hyperbolic distance between ball points x and y (broadcasts)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx = np.linalg.norm(x, axis=-1)
    ny = np.linalg.norm(y, axis=-1)
    diff2 = np.sum((x - y) ** 2, axis=-1)
    # group per point so the product, hence the distance, is exactly symmetric
    u = 2.0 * diff2 / (((1 - nx) * (1 + nx)) * ((1 - ny) * (1 + ny)))
    out = _arcosh1p(u)
    return float(out) if out.ndim == 0 else out


def polar_dist(r1, u1, r2, u2):
    """Distance between points given as (radius, unit direction).

    Uses cosh d = cosh(r1 - r2) + 2 sinh r1 sinh r2 sin^2(angle/2) with the
    chord |u1 - u2| = 2 sin(angle/2), so nothing cancels.
    """
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    chord2 = np.sum((np.asarray(u1) - np.asarray(u2)) ** 2, axis=-1)
    u = 2.0 * np.sinh(0.5 * (r1 - r2)) ** 2 + 0.5 * np.sinh(r1) * np.sinh(r2) * chord2
    return _arcosh1p(u)


# -- volume function ---------------------------------------------------------

def _scaled_volume(d, r):
    """V_d(r) e^{-(d-1) r}, from the reduction formula for int sinh^n."""
    if d == 1:
        return r
    if d == 2:
        return 0.5 * (-np.expm1(-r)) ** 2
    q = np.exp(-2.0 * r)
    lead = (0.5 * (1 - q)) ** (d - 2) * 0.5 * (1 + q)
    return (lead - (d - 2) * q * _scaled_volume(d - 2, r)) / (d - 1)


def _volume_small(d, r):
    # Gauss-Legendre on [0, r]; sinh^{d-1} is entire so 40 nodes reach roundoff
    t = 0.5 * r[:, None] * (_GL_X[None, :] + 1.0)
    return 0.5 * r * (np.sinh(t) ** (d - 1) @ _GL_W)


def log_volume(d, r):
    """log V_d(r), finite for any r > 0 (no overflow); -inf at r = 0."""
    d = check_dim(d)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    flat = np.atleast_1d(r).ravel()
    out = np.empty_like(flat)
    small = flat < _SPLIT
    with np.errstate(divide="ignore"):
        if small.any():
            out[small] = np.log(_volume_small(d, flat[small]))
        big = ~small
        if big.any():
            rb = flat[big]
            out[big] = np.log(_scaled_volume(d, rb)) + (d - 1) * rb
    return out.reshape(r.shape) if r.ndim else float(out[0])


def volume_fn(d, r):
    """V_d(r) = int_0^r sinh^{d-1} t dt."""
    d = check_dim(d)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    if np.any((d - 1) * r > _LOG_MAX - 1.0):
        raise OverflowError(f"V_{d}(r) overflows double precision for r = {np.max(r)}")
    flat = np.atleast_1d(r).ravel()
    out = np.empty_like(flat)
    small = flat < _SPLIT
    if small.any():
        out[small] = _volume_small(d, flat[small])
    if (~small).any():
        rb = flat[~small]
        out[~small] = _scaled_volume(d, rb) * np.exp((d - 1) * rb)
    return out.reshape(r.shape) if r.ndim else float(out[0])


def _log_density_ratio(d, r, logv):
    # d/dr log V_d(r) = sinh^{d-1}(r) / V_d(r)
    return np.exp((d - 1) * log_sinh(r) - logv)


def log_volume_inv(d, logv):
    """Inverse of log_volume: the radius r with log V_d(r) = logv."""
    d = check_dim(d)
    logv = np.asarray(logv, dtype=float)
    flat = np.atleast_1d(logv).ravel().copy()
    out = np.zeros_like(flat)
    live = np.isfinite(flat)
    if np.any(flat == np.inf):
        raise OverflowError("volume is infinite")
    if not live.any():
        return out.reshape(logv.shape) if logv.ndim else float(out[0])
    lv = flat[live]
    # asymptotic guesses: V ~ r^d/d near 0 and e^{(d-1)r}/((d-1)2^{d-1}) far out
    small_guess = np.exp(np.minimum((lv + math.log(d)) / d, 1.0))
    big_guess = (lv + math.log(d - 1) + (d - 1) * math.log(2.0)) / (d - 1)
    r = np.where(small_guess < 1.0, small_guess, np.maximum(big_guess, 1e-300))
    lo = np.zeros_like(r)
    hi = np.maximum(2.0 * r, 1.0)
    while True:
        bad = log_volume(d, hi) < lv
        if not bad.any():
            break
        hi[bad] *= 2.0
    for _ in range(200):
        g = log_volume(d, r) - lv
        lo = np.where(g < 0, r, lo)
        hi = np.where(g > 0, r, hi)
        step = g / _log_density_ratio(d, r, g + lv)
        new = r - step
        outside = ~((new > lo) & (new < hi))
        new = np.where(outside, 0.5 * (lo + hi), new)
        done = np.abs(new - r) <= 4e-16 * np.maximum(r, 1e-300)
        r = new
        if done.all():
            break
    out[live] = r
    return out.reshape(logv.shape) if logv.ndim else float(out[0])


def volume_fn_inv(d, v):
    """V_d^{-1}(v)."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("volume must be nonnegative")
    with np.errstate(divide="ignore"):
        return log_volume_inv(d, np.log(v))


def volume_scale(d, L, r):
    """Volume-linear rescaling s_L(r) = V_d^{-1}(L V_d(r))."""
    if L <= 0:
        raise ValueError("scale factor must be positive")
    r = np.asarray(r, dtype=float)
    if L == 1:
        return r.copy() if r.ndim else float(r)
    return log_volume_inv(d, log_volume(d, r) + math.log(L))


# -- branching-bound geometry ------------------------------------------------

def separation_length(theta):
    """Separation length L*(theta) for two rays at angle theta from o.

    Translating along rays longer than L*(theta) keeps the images of the
    two frusta disjoint; it is the finite side of a quadrilateral with
    angles theta, pi - theta, pi - theta and one ideal vertex.
    """
    if not 0 < theta < math.pi:
        raise ValueError("theta must lie in (0, pi)")
    c = (1 - math.cos(theta) * math.cos(theta / 2)) / (math.sin(theta) * math.sin(theta / 2))
    return math.acosh(c)


def _sin_power_integral(n, eps):
    """int_0^eps sin^n t dt for eps in [0, pi], via the incomplete beta."""
    a, b = (n + 1) / 2, 0.5
    full = special.beta(a, b)
    if eps <= math.pi / 2:
        return 0.5 * full * special.betainc(a, b, math.sin(eps) ** 2)
    return full - 0.5 * full * special.betainc(a, b, math.sin(math.pi - eps) ** 2)


def cap_volume(d, eps):
    """(d-1)-volume of the spherical cap of angular radius eps on S^{d-1}."""
    d = check_dim(d)
    if not 0 < eps <= math.pi:
        raise ValueError("cap angle must lie in (0, pi]")
    return sphere_area(d - 2) * _sin_power_integral(d - 2, eps)


@dataclass(frozen=True)
class Frustum:
    """Open cone around `axis` with the hyperbolic ball of `inner_radius` removed."""
    axis: tuple
    half_angle: float
    inner_radius: float

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        if abs(np.linalg.norm(a) - 1.0) > 1e-12:
            raise ValueError("frustum axis must be a unit vector")
        if not 0 < self.half_angle < math.pi:
            raise ValueError("half angle must lie in (0, pi)")
        if self.inner_radius < 0:
            raise ValueError("inner radius must be nonnegative")


def angle_between(u, v):
    """Angle at the origin between vectors u and v (atan2 form, accurate near 0 and pi)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu = np.linalg.norm(u)
    vhat = v / np.linalg.norm(v)
    par = float(u @ vhat)
    perp = float(np.linalg.norm(u - par * vhat))
    return math.atan2(perp, par) if nu > 0 else 0.0


def frustum_contains(f, x):
    x = np.asarray(x, dtype=float)
    if not np.any(x):
        return False
    if angle_between(x, f.axis) >= f.half_angle:
        return False
    return float(dist_from_origin(x)) > f.inner_radius


# -- sampling ----------------------------------------------------------------

@dataclass
class PolarPoints:
    """Points of a hyperbolic ball in polar form."""
    radii: np.ndarray
    directions: np.ndarray

    def __len__(self):
        return len(self.radii)

    @property
    def coords(self):
        """Poincare ball coordinates tanh(r/2) * direction (loses digits beyond r ~ 18)."""
        return np.tanh(0.5 * self.radii)[:, None] * self.directions


class RadialSampler:
    """Draws hyperbolic radii with CDF V_d(r) / V_d(R) on [0, R].

    A monotone spline of the inverse CDF on 2048 nodes gives a starting
    point; two Newton steps on log V_d finish the inversion.
    """

    def __init__(self, d, R, nodes=2048):
        self.d = check_dim(d)
        if not 0 < R <= MAX_RADIUS:
            raise ValueError(f"ball radius must lie in (0, {MAX_RADIUS}]")
        self.R = float(R)
        self.logVR = log_volume(d, R)
        r = self.R * np.arange(1, nodes + 1) / nodes
        logF = log_volume(d, r) - self.logVR
        self._x0 = logF[0]
        self._spline = interpolate.PchipInterpolator(logF, r)

    def radii(self, u):
        u = np.asarray(u, dtype=float)
        target = np.log(u) + self.logVR
        x = target - self.logVR
        tiny = x < self._x0
        r = np.where(tiny, np.exp((target + math.log(self.d)) / self.d),
                     self._spline(np.maximum(x, self._x0)))
        r = np.clip(r, 1e-300, self.R)
        for _ in range(2):
            lv = log_volume(self.d, r)
            r = r - (lv - target) / _log_density_ratio(self.d, r, lv)
            r = np.clip(r, 1e-300, self.R)
        return r


def uniform_directions(rng, n, d):
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sample_ball(d, R, n_expected, rng, point_cap=POINT_CAP, sampler=None):
    """Poisson number of uniform (hyperbolic-measure) points in the ball B_R."""
    d = check_dim(d)
    if n_expected <= 0 or R <= 0:
        raise ValueError("R and n_expected must be positive")
    n = int(rng.poisson(n_expected))
    if n > point_cap:
        raise MemoryError(f"Poisson draw of {n} points exceeds the cap {point_cap}")
    sampler = sampler or RadialSampler(d, R)
    u = 1.0 - rng.random(n)  # in (0, 1]
    radii = sampler.radii(u)
    return PolarPoints(radii, uniform_directions(rng, n, d))
