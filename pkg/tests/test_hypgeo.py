import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize

from hyprcm import hypgeo as hg


def ball_point(d, rng, rmax=0.95):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v) * rmax * rng.random() ** (1 / d)


# -- metric ------------------------------------------------------------------

def test_distance_from_origin():
    o = np.zeros(3)
    assert hg.hyp_dist(o, o) == 0.0
    assert hg.hyp_dist(o, [0.5, 0, 0]) == pytest.approx(2 * math.atanh(0.5), rel=1e-14)
    assert 2 * math.atanh(0.5) == pytest.approx(1.0986122886681098, rel=1e-15)


def test_distance_via_tanh_addition():
    # +-0.3 on a line through o: distances add along the geodesic
    expected = 2 * math.atanh(0.3) * 2
    assert hg.hyp_dist([0.3, 0, 0], [-0.3, 0, 0]) == pytest.approx(expected, rel=1e-13)
    # same value through the Mobius translation taking -0.3 to o: 0.3 -> (0.6)/(1.09)
    moved = (0.3 + 0.3) / (1 + 0.09)
    assert hg.hyp_dist([0.3, 0, 0], [-0.3, 0, 0]) == pytest.approx(2 * math.atanh(moved), rel=1e-13)


def test_near_identical_points_no_cancellation():
    x = np.array([0.2, 0.1])
    y = x + np.array([1e-10, 0.0])
    # local metric density 2/(1-|x|^2)
    expected = 2e-10 / (1 - x @ x)
    assert hg.hyp_dist(x, y) == pytest.approx(expected, rel=1e-5)


@given(st.integers(0, 10**6), st.integers(2, 6))
@settings(max_examples=60, deadline=None)
def test_metric_axioms(seed, d):
    rng = np.random.default_rng(seed)
    x, y, z = (ball_point(d, rng) for _ in range(3))
    dxy, dyx = hg.hyp_dist(x, y), hg.hyp_dist(y, x)
    assert dxy == dyx and dxy >= 0
    assert hg.hyp_dist(x, z) <= dxy + hg.hyp_dist(y, z) + 1e-9


def test_triangle_inequality_bulk():
    rng = np.random.default_rng(1)
    n, d = 10_000, 3
    g = rng.standard_normal((3, n, d))
    pts = g / np.linalg.norm(g, axis=-1, keepdims=True) * 0.999 * rng.random((3, n, 1)) ** (1 / d)
    x, y, z = pts
    assert np.all(hg.hyp_dist(x, z) <= hg.hyp_dist(x, y) + hg.hyp_dist(y, z) + 1e-9)


@given(st.floats(0.01, 30), st.floats(0.01, 30), st.floats(0, math.pi))
@settings(max_examples=80, deadline=None)
def test_polar_distance_matches_ball_form(r1, r2, angle):
    u1 = np.array([1.0, 0.0])
    u2 = np.array([math.cos(angle), math.sin(angle)])
    # hyperbolic law of cosines in 60-digit arithmetic as the oracle
    with mpmath.workdps(60):
        a, b = mpmath.mpf(r1), mpmath.mpf(r2)
        c = mpmath.cosh(a) * mpmath.cosh(b) - mpmath.sinh(a) * mpmath.sinh(b) * mpmath.cos(mpmath.mpf(angle))
        ref = float(mpmath.acosh(max(c, 1)))
    got = float(hg.polar_dist(r1, u1, r2, u2))
    assert got == pytest.approx(ref, rel=1e-9, abs=1e-9)
    if max(r1, r2) < 8:
        ball = hg.hyp_dist(math.tanh(r1 / 2) * u1, math.tanh(r2 / 2) * u2)
        assert got == pytest.approx(ball, rel=1e-8, abs=1e-9)


# -- volume ------------------------------------------------------------------

def test_volume_closed_forms():
    assert hg.volume_fn(2, 1.0) == pytest.approx(math.cosh(1) - 1, rel=1e-14)
    assert hg.volume_fn(2, 1.0) == pytest.approx(0.5430806348152437, rel=1e-14)
    for r in (0.1, 1.0, 3.0, 12.0):
        v3 = (math.sinh(r) * math.cosh(r) - r) / 2
        assert hg.volume_fn(3, r) == pytest.approx(v3, rel=1e-12)
    for d in range(2, 9):
        assert hg.volume_fn(d, 0.0) == 0.0


@pytest.mark.parametrize("d,r", [(4, 2.0), (5, 0.7), (6, 3.5), (8, 1.9), (4, 25.0)])
def test_volume_against_simpson(d, r):
    t = np.linspace(0, r, 1_000_001)
    ref = integrate.simpson(np.sinh(t) ** (d - 1), x=t)
    assert hg.volume_fn(d, r) == pytest.approx(ref, rel=1e-10)


def test_log_volume_far_out_and_overflow():
    # log V_3(r) = 2r - log 8 + O(r e^{-2r})
    assert hg.log_volume(3, 300.0) == pytest.approx(600 - math.log(8), rel=1e-14)
    with pytest.raises(OverflowError):
        hg.volume_fn(3, 400.0)
    with pytest.raises(ValueError):
        hg.volume_fn(3, -1.0)


@pytest.mark.parametrize("d", [2, 3, 4, 5, 6, 8])
def test_volume_increasing(d):
    r = np.linspace(0, 30, 3001)
    assert np.all(np.diff(hg.volume_fn(d, r)) > 0)


def test_volume_inverse_examples():
    assert hg.volume_fn_inv(3, 0.0) == 0.0
    assert hg.volume_fn_inv(2, math.cosh(1) - 1) == pytest.approx(1.0, rel=1e-9)
    for d in (2, 3, 5):
        for r in (0.1, 1.0, 5.0, 15.0):
            assert hg.volume_fn_inv(d, hg.volume_fn(d, r)) == pytest.approx(r, rel=1e-8)


@given(st.integers(2, 8), st.floats(0.0, 20.0))
@settings(max_examples=100, deadline=None)
def test_volume_inverse_roundtrip(d, r):
    back = hg.volume_fn_inv(d, hg.volume_fn(d, r))
    assert abs(back - r) <= 1e-8 * max(r, 1.0)


def test_volume_scale_identity_and_bisection():
    assert hg.volume_scale(3, 1.0, 2.5) == 2.5
    for d, L, r in [(3, 7.0, 1.3), (4, 0.1, 2.0), (2, 1e4, 0.5)]:
        target = L * hg.volume_fn(d, r)
        ref = optimize.brentq(lambda x: hg.volume_fn(d, x) - target, 0, 60, xtol=1e-14)
        assert hg.volume_scale(d, L, r) == pytest.approx(ref, rel=1e-10)


# -- branching geometry ------------------------------------------------------

def _separation_oracle(theta):
    """Build the triangle with angles (pi - theta, theta/2, 0) in the Poincare disc.

    A = 0, B = b > 0 on the real axis.  The ray from A at angle pi - theta
    ends at e^{i(pi - theta)}; the ray from B leaving at angle theta/2 to BA
    is the image under z -> (z + b)/(1 + b z) of the ray from 0 with direction
    pi - theta/2.  Solve for b so both rays share their ideal endpoint.
    """
    target = math.pi - theta
    w = complex(math.cos(math.pi - theta / 2), math.sin(math.pi - theta / 2))

    def gap(b):
        end = (w + b) / (1 + b * w)
        return math.atan2(end.imag, end.real) - target

    b = optimize.brentq(gap, 1e-15, 1 - 1e-15, xtol=1e-16, rtol=1e-15)
    return 2 * math.atanh(b)


def test_separation_length_values():
    assert hg.separation_length(math.pi / 2) == pytest.approx(math.acosh(math.sqrt(2)), rel=1e-14)
    assert hg.separation_length(math.pi / 2) == pytest.approx(0.881373587019543, rel=1e-12)
    near_pi = hg.separation_length(math.pi - 1e-6)
    assert math.isfinite(near_pi) and near_pi > 0
    for bad in (0.0, math.pi, -1.0):
        with pytest.raises(ValueError):
            hg.separation_length(bad)


@pytest.mark.parametrize("theta", np.linspace(0.1, 3.0, 15))
def test_separation_length_geometric_oracle(theta):
    assert hg.separation_length(theta) == pytest.approx(_separation_oracle(theta), abs=1e-8)


def test_separation_length_increases_with_angle():
    th = np.linspace(0.05, 3.1, 200)
    vals = [hg.separation_length(t) for t in th]
    assert np.all(np.diff(vals) > 0)


def test_cap_volume():
    for eps in (0.1, 1.0, 3.0):
        assert hg.cap_volume(2, eps) == pytest.approx(2 * eps, rel=1e-13)
    assert hg.cap_volume(3, math.pi / 2) == pytest.approx(2 * math.pi, rel=1e-13)
    for d in range(2, 7):
        assert hg.cap_volume(d, math.pi) == pytest.approx(hg.sphere_area(d - 1), rel=1e-9)
    for d in (4, 5):
        for eps in (0.3, 2.0):
            ref = hg.sphere_area(d - 2) * integrate.quad(lambda t: math.sin(t) ** (d - 2), 0, eps,
                                                         epsabs=0, epsrel=1e-13)[0]
            assert hg.cap_volume(d, eps) == pytest.approx(ref, rel=1e-11)
    with pytest.raises(ValueError):
        hg.cap_volume(3, 0.0)


def test_cap_volume_monte_carlo_fraction():
    rng = np.random.default_rng(5)
    u = hg.uniform_directions(rng, 200_000, 4)
    eps = 0.9
    frac = np.mean(np.arccos(np.clip(u[:, 0], -1, 1)) < eps)
    se = math.sqrt(frac * (1 - frac) / len(u))
    assert abs(frac * hg.sphere_area(3) - hg.cap_volume(4, eps)) <= 4 * se * hg.sphere_area(3)


def test_frustum_contains():
    f = hg.Frustum((1.0, 0.0, 0.0), 0.5, 1.0)
    on_axis = math.tanh((1.0 + 1.0) / 2)
    assert hg.frustum_contains(f, [on_axis, 0, 0])
    assert not hg.frustum_contains(f, [0, 0, 0])
    edge = math.tanh(3.0 / 2)
    assert not hg.frustum_contains(f, [edge * math.cos(0.5), edge * math.sin(0.5), 0])
    assert hg.frustum_contains(f, [edge * math.cos(0.499), edge * math.sin(0.499), 0])
    inner = math.tanh(0.5 / 2)
    assert not hg.frustum_contains(f, [inner, 0, 0])
    with pytest.raises(ValueError):
        hg.Frustum((1.0, 1.0, 0.0), 0.5, 1.0)
    with pytest.raises(ValueError):
        hg.Frustum((1.0, 0.0, 0.0), math.pi, 1.0)


# -- sampling ----------------------------------------------------------------

def test_poisson_count_and_radial_law():
    d, R, n = 3, 4.0, 1000.0
    rng = np.random.default_rng(11)
    sampler = hg.RadialSampler(d, R)
    counts, inner, total = [], 0, 0
    for _ in range(200):
        pts = hg.sample_ball(d, R, n, rng, sampler=sampler)
        counts.append(len(pts))
        inner += int(np.sum(pts.radii <= R / 2))
        total += len(pts)
    assert abs(np.mean(counts) - n) <= 4 * math.sqrt(n)
    p = hg.volume_fn(d, R / 2) / hg.volume_fn(d, R)
    assert abs(inner / total - p) <= 3 * math.sqrt(p * (1 - p) / total)


@pytest.mark.parametrize("d", [2, 5])
def test_radial_cdf_quantiles(d):
    R = 6.0
    rng = np.random.default_rng(d)
    pts = hg.sample_ball(d, R, 50_000, rng)
    for r in (1.0, 3.0, 5.0):
        p = hg.volume_fn(d, r) / hg.volume_fn(d, R)
        frac = np.mean(pts.radii <= r)
        assert abs(frac - p) <= 3 * math.sqrt(p * (1 - p) / len(pts)) + 1e-12


def test_sampler_inverts_cdf():
    s = hg.RadialSampler(4, 10.0)
    u = np.array([1e-12, 1e-6, 0.01, 0.3, 0.9, 1.0])
    r = s.radii(u)
    back = np.exp(hg.log_volume(4, r) - hg.log_volume(4, 10.0))
    assert back == pytest.approx(u, rel=1e-10)


def test_tiny_ball_and_cap():
    rng = np.random.default_rng(0)
    pts = hg.sample_ball(3, 1e-3, 20.0, rng)
    assert np.all(pts.radii <= 1e-3)
    assert np.all(hg.dist_from_origin(pts.coords) <= 1e-3 * (1 + 1e-12))
    with pytest.raises(MemoryError):
        hg.sample_ball(3, 2.0, 1e4, rng, point_cap=100)
    with pytest.raises(ValueError):
        hg.RadialSampler(3, 41.0)
    with pytest.raises(ValueError):
        hg.check_dim(9)
