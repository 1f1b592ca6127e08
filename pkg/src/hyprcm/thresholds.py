"""Threshold bounds, triangle-diagram bounds and assumption checkers.

lambda_u is bounded below by 1/|Phi_L|_{2->2}.  lambda_c is bounded above
by an explicit branching construction: from a vertex, look for neighbours in
two disjoint frusta (cones of half-angle eps about axes theta apart, beyond
radius 2 L*(theta)); each branch is nonempty with probability
1 - exp(-lam m), and the tree survives once that exceeds 1/2, so

    lambda_c <= 2 |S^{d-1}| log 2 / (c_d(eps) min P D),

where D is the degree mass (at least half of which must lie beyond
2 L*(theta) for the frusta to capture it).
"""
import math
from dataclasses import dataclass, field

import numpy as np

from . import hypgeo as hg
from .models import (AdjacencyModel, BooleanDisc, DegreeMatrix, Identity, MarkSpace,
                     VolumeLinear, WeightDependent, Constant, check_ratio_condition,
                     degree_matrix, integrate_log, kernel_norm_analytic, radial_integral,
                     _pair_table)
from . import spectral

DEFAULT_THETA = math.pi / 2
DEFAULT_EPS = math.pi / 12


class PreconditionError(ValueError):
    """A bound's hypothesis fails at this L; `suggested_L` is where it first holds (or None)."""

    def __init__(self, message, suggested_L=None):
        super().__init__(message)
        self.suggested_L = suggested_L


class NoValidSetsError(ValueError):
    pass


def _check_angles(theta, eps):
    if not 0 < theta < math.pi:
        raise ValueError("theta must lie in (0, pi)")
    if not 0 < eps <= theta / 2:
        raise ValueError("eps must lie in (0, theta/2] so the two frusta are disjoint")


def lambda_u_lower_bound(report):
    """(1/|Phi_L|_{2->2}, vacuous); an infinite or zero norm gives (0, True)."""
    norm = report if isinstance(report, (int, float)) else report.norm_2to2
    if not (math.isfinite(norm) and norm > 0):
        return 0.0, True
    return 1.0 / norm, False


@dataclass
class CriticalBound:
    value: float
    variant: str
    theta: float
    eps: float
    cap: float
    separation: float
    min_weight: float
    degree: float
    L: float
    marks: tuple = ()
    beyond_fraction: float = math.nan


def _branching_constant(d, cap):
    return 2.0 * hg.sphere_area(d - 1) * math.log(2.0) / cap


def mass_fraction_beyond(model, a, b, radius):
    """Share of int_0^inf phi_L(r; a, b) sinh^{d-1} r dr lying beyond `radius`."""
    total = radial_integral(model, a, b)
    if not 0 < total < math.inf:
        return math.nan
    inner = radial_integral(model, a, b, upper=radius)
    return max(0.0, 1.0 - inner / total)


def smallest_valid_L(model, theta, a, b, max_doublings=80):
    """Smallest L among doublings of the model's L where at least half the mass lies beyond 2 L*."""
    radius = 2.0 * hg.separation_length(theta)
    L = model.L
    for _ in range(max_doublings):
        L *= 2.0
        if mass_fraction_beyond(model.with_L(L), a, b, radius) >= 0.5:
            return L
    return None


def lambda_c_upper_bound_finite(model, theta=DEFAULT_THETA, eps=DEFAULT_EPS, D=None):
    """Branching bound for finite mark sets, using the pair (a*, b*) maximizing D_L."""
    _check_angles(theta, eps)
    if model.marks.kind != "finite":
        raise ValueError("the finite-mark bound needs a finite mark set")
    D = D or degree_matrix(model)
    i, j = np.unravel_index(np.argmax(D.values), D.values.shape)
    a, b = model.marks.values[i], model.marks.values[j]
    dmax = float(D.values[i, j])
    cap = hg.cap_volume(model.d, eps)
    sep = hg.separation_length(theta)
    pmin = float(min(D.weights[i], D.weights[j]))
    if not math.isfinite(dmax):
        return CriticalBound(0.0, "finite", theta, eps, cap, sep, pmin, dmax, model.L, (a, b), 1.0)
    if dmax == 0:
        raise PreconditionError("the adjacency function vanishes identically")
    frac = mass_fraction_beyond(model, a, b, 2 * sep)
    if frac < 0.5:
        raise PreconditionError(
            f"only {frac:.4g} of the degree mass lies beyond 2 L*(theta) = {2 * sep:.6g} at L = {model.L:g}",
            smallest_valid_L(model, theta, a, b))
    value = _branching_constant(model.d, cap) / (pmin * dmax)
    return CriticalBound(value, "finite", theta, eps, cap, sep, pmin, dmax, model.L, (a, b), frac)


def _set_weight(marks, interval):
    lo, hi = interval
    if marks.kind == "interval":
        return max(0.0, min(hi, 1.0) - max(lo, 0.0))
    sel = (marks.values > lo) & (marks.values <= hi)
    return float(marks.weights[sel].sum())


def reference_model(model):
    """The same model at L = 1 (volume-linear scaling reduces to the identity)."""
    if not isinstance(model.scaling, VolumeLinear):
        raise ValueError("reference model is defined through volume-linear scaling")
    return AdjacencyModel(model.d, model.marks, model.base, Identity())


def grid_infimum(D_ref, marks, E, F):
    """Grid minimum of the reference degree function over E x F, or None if no nodes fall inside."""
    v = marks.values
    ie = (v > E[0]) & (v <= E[1])
    jf = (v > F[0]) & (v <= F[1])
    if not ie.any() or not jf.any():
        return None
    return float(D_ref.values[np.ix_(ie, jf)].min())


def lambda_c_upper_bound_volscale(model, theta=DEFAULT_THETA, eps=DEFAULT_EPS, E=None, F=None,
                                  eps_D=None, D_ref=None):
    """Branching bound 2|S|log2/(c_d min{P(E),P(F)} L eps_D) for volume-linear scaling.

    eps_D lower-bounds the reference degree function on E x F.  With E, F
    omitted, sets (t, 1] are scanned and the best constant kept.  The bound
    needs L eps_D >= 2 |S^{d-1}| V_d(2 L*(theta)) so that the part of the
    frusta inside radius 2 L* cannot eat more than half the expected count.
    """
    _check_angles(theta, eps)
    if not isinstance(model.scaling, VolumeLinear):
        raise ValueError("the volume-linear bound needs volume-linear scaling")
    marks = model.marks
    if D_ref is None:
        D_ref = degree_matrix(reference_model(model))
    candidates = []
    if E is not None and F is not None:
        e = eps_D if eps_D is not None else grid_infimum(D_ref, marks, E, F)
        candidates.append((E, F, e))
    else:
        for t in (0.0, 0.1, 0.25, 0.5, 0.75, 0.9):
            S = (t, 1.0) if marks.kind == "interval" else (t - 1e300 if t == 0 else t, math.inf)
            if marks.kind == "finite":
                S = (-math.inf, math.inf) if t == 0 else (float(np.quantile(marks.values, t)), math.inf)
            candidates.append((S, S, grid_infimum(D_ref, marks, S, S)))
    best = None
    for Es, Fs, e in candidates:
        if e is None or not e > 0 or not math.isfinite(e):
            continue
        pw = min(_set_weight(marks, Es), _set_weight(marks, Fs))
        if pw <= 0:
            continue
        score = pw * e
        if best is None or score > best[0]:
            best = (score, Es, Fs, e, pw)
    if best is None:
        raise NoValidSetsError("the reference degree function vanishes on every candidate rectangle")
    _, Es, Fs, e, pw = best
    cap = hg.cap_volume(model.d, eps)
    sep = hg.separation_length(theta)
    L_min = 2.0 * hg.sphere_area(model.d - 1) * hg.volume_fn(model.d, 2 * sep) / e
    if model.L < L_min:
        raise PreconditionError(f"volume-linear bound needs L >= {L_min:.6g}", L_min)
    value = _branching_constant(model.d, cap) / (pw * model.L * e)
    out = CriticalBound(value, "volscale", theta, eps, cap, sep, pw, model.L * e, model.L, (Es, Fs))
    return out


@dataclass
class ThresholdBounds:
    lambda_u_lower: float
    lambda_c_upper: float
    theta: float
    eps: float
    gap_certified: bool
    vacuous: bool
    metadata: dict = field(default_factory=dict)


def squared_mass(model):
    """esssup_a int int phi_L(x; a, b)^2 mu(dx) P(db) (grid maximum on (0, 1))."""
    area = hg.sphere_area(model.d - 1)

    def integ(a, b, m=None):
        m = m or model
        with np.errstate(divide="ignore"):
            lw = lambda r: np.log(m.phi(r, a, b))
        return area * radial_integral(m, a, b, log_weight=lw)

    M = _pair_table(model, integ)
    if not np.all(np.isfinite(M)):
        return math.inf
    return float(np.max(M @ model.marks.weights))


def triangle_bound(report, lam, sq_mass):
    """(lam T + 2 (lam T)^2 + (lam T)^3) lam sq_mass with T the geometric-series bound on the two-point operator."""
    if lam < 0 or sq_mass < 0:
        raise ValueError("lambda and sq_mass must be nonnegative")
    if lam == 0:
        return 0.0
    norm = report if isinstance(report, (int, float)) else report.norm_2to2
    if not math.isfinite(norm) or not math.isfinite(sq_mass):
        return math.inf
    T = spectral.green_norm_bound(norm, lam)
    if not math.isfinite(T):
        return math.inf
    x = lam * T
    return (x + 2 * x ** 2 + x ** 3) * lam * sq_mass


def critical_bound(model, theta=DEFAULT_THETA, eps=DEFAULT_EPS, D=None):
    """The applicable lambda_c upper bound for this model's shape."""
    if model.marks.kind == "finite":
        return lambda_c_upper_bound_finite(model, theta, eps, D)
    if isinstance(model.scaling, VolumeLinear):
        return lambda_c_upper_bound_volscale(model, theta, eps)
    raise ValueError("no lambda_c bound applies: marks on (0, 1) need volume-linear scaling")


def certify_nonuniqueness(model, theta=DEFAULT_THETA, eps=DEFAULT_EPS, report=None, with_triangle=True):
    """Compare the lambda_c upper bound with the lambda_u lower bound at the model's L.

    A failed hypothesis of the lambda_c bound is recorded (lambda_c_upper =
    inf, with the smallest valid L when one was found) instead of raised, so
    scans over L never abort; the gap is claimed only when both bounds are
    finite and strictly ordered.
    """
    _check_angles(theta, eps)
    report = report or spectral.spectral_report(model)
    lam_u, vacuous = lambda_u_lower_bound(report)
    meta = {"L": model.L, "d": model.d, "norm_2to2": report.norm_2to2, "norm_1to1": report.norm_1to1,
            "norm_HS": report.norm_HS, "degree_norm_2to2": report.degree_norm_2to2,
            "residual": report.residual, "notes": list(report.notes)}
    try:
        cb = critical_bound(model, theta, eps, report.degree)
        lam_c = cb.value
        meta.update(cap=cb.cap, separation=cb.separation, min_weight=cb.min_weight,
                    degree=cb.degree, variant=cb.variant)
    except PreconditionError as exc:
        lam_c = math.inf
        meta.update(precondition=str(exc), suggested_L=exc.suggested_L)
    if with_triangle:
        if math.isfinite(lam_c) and lam_c > 0:
            meta["sq_mass"] = squared_mass(model)
            meta["triangle"] = triangle_bound(report, lam_c, meta["sq_mass"])
        else:
            meta["triangle"] = math.inf
    gap = (not vacuous) and math.isfinite(lam_c) and lam_c < lam_u
    return ThresholdBounds(lam_u, lam_c, theta, eps, bool(gap), vacuous, meta)


def scan_angles(model, thetas=None, D=None):
    """Best (theta, eps = theta/2) for the lambda_c bound at the model's L.

    The cap grows with eps while 2 L*(theta) grows with theta, so the best
    pair balances the constant against the half-mass hypothesis.
    Returns (bound, theta, eps) or None if no angle satisfies the hypothesis.
    """
    if thetas is None:
        thetas = np.linspace(0.05, 0.98, 94) * math.pi
    best = None
    D = D or degree_matrix(model)
    for th in thetas:
        try:
            cb = critical_bound(model, float(th), float(th) / 2, D)
        except PreconditionError:
            continue
        if best is None or cb.value < best[0]:
            best = (cb.value, float(th), float(th) / 2)
    return best


# -- mean-field constants ----------------------------------------------------

@dataclass
class MeanFieldConstants:
    I_per_mark: np.ndarray
    J_per_mark: np.ndarray
    c_bar: float
    C_delta: float
    triangle_bound: float
    condition_T_holds: bool
    D1_holds: bool
    D2_holds: bool
    argmax_k: int
    lam: float


def _log_sup_k(D, x, k_max):
    """log sup_{k <= k_max} x^k min_b D^{(k)}(a, b) per row a, and the maximizing k (worst row)."""
    M = D.values * D.weights[None, :]
    cur = D.values.copy()
    log_scale = 0.0
    best = np.full(len(D.weights), -math.inf)
    best_k = np.ones(len(D.weights), dtype=int)
    for k in range(1, k_max + 1):
        if k > 1:
            cur = M @ cur
            s = cur.max()
            if s == 0:
                break
            cur /= s
            log_scale += math.log(s)
        with np.errstate(divide="ignore"):
            val = k * math.log(x) + log_scale + np.log(cur.min(axis=1))
        upd = val > best
        best = np.where(upd, val, best)
        best_k = np.where(upd, k, best_k)
    return best, best_k


def meanfield_constants(D, lam, k_max=64, triangle=math.inf):
    """I, J per mark, c_bar and C_Delta at intensity `lam` (a proxy for lambda_T), plus (D.1), (D.2), (T)."""
    w = D.weights
    if not D.finite:
        n = len(w)
        return MeanFieldConstants(np.full(n, math.inf), np.full(n, math.inf), math.inf, 0.0,
                                  triangle, False, False, False, 0, lam)
    logI, kI = _log_sup_k(D, lam / (1 + lam), k_max)
    logJ, _ = _log_sup_k(D, lam / (2 * (1 + lam)), k_max)
    I = np.exp(-logI)
    J = np.exp(-logJ)
    dmax = float(D.values.max())
    rows = D.values @ w
    c_bar = 1.0 + lam * dmax * float(J.max())
    first = 1.0 / (1.0 + lam * dmax * float(I.max())) ** 2
    second = lam ** 2 * float(rows.min()) ** 2 / (c_bar * (1.0 + 2.0 * lam * float(rows.max())))
    C = min(first, second)
    d2 = bool(np.any(np.isfinite(logI)))
    return MeanFieldConstants(I, J, c_bar, C, triangle, bool(triangle < C), True, d2,
                              int(kI[np.argmax(logI)]), lam)


# -- assumption checks -------------------------------------------------------

def _row(condition, verdict, kind, **evidence):
    return {"condition": condition, "verdict": verdict, "kind": kind, "evidence": evidence}


def _half_exp_weight(d):
    """log of r e^{(d-1) r/2} / sinh^{d-1} r, the weight of the integrability conditions."""
    def lw(r):
        with np.errstate(divide="ignore"):
            return np.log(r) + 0.5 * (d - 1) * r - (d - 1) * hg.log_sinh(r)
    return lw


def pointwise_integrals(model):
    """Matrix of int phi_L(r; a, b) r e^{(d-1) r/2} dr on the mark grid."""
    lw = _half_exp_weight(model.d)
    return _pair_table(model, lambda a, b, m=None: radial_integral(m or model, a, b, log_weight=lw))


def profile_integral(d, profile, log_weight):
    """int_0^inf rho(r) w(r) dr with +inf on divergence."""
    def log_f(r):
        with np.errstate(divide="ignore"):
            return np.log(profile(r)) + log_weight(r)
    knots = list(profile.knots()) + [profile.length * 2.0 ** k for k in range(-3, 7)]
    return integrate_log(log_f, knots, profile.support)


def mark_law_integrals(d, log_density, knots=()):
    """(int r^2 e^{(d-1) r} P(dr), int e^{(d-1) r} P(dr)) for a radius law with a log-density on (0, inf)."""
    f2 = lambda r: np.where(r > 0, 2 * np.log(np.maximum(r, 1e-300)), -math.inf) + (d - 1) * r + log_density(r)
    f0 = lambda r: (d - 1) * r + log_density(r)
    return integrate_log(f2, knots), integrate_log(f0, knots)


def _trend(values):
    """Classify a sequence of ratios along increasing L."""
    v = np.asarray(values, dtype=float)
    if np.any(~np.isfinite(v)):
        return "undecidable"
    if v[-1] <= 0:
        return "holds"
    dec = np.all(np.diff(v) <= 1e-12 * np.abs(v[:-1]))
    if dec and v[-1] < 0.1 * v[0]:
        return "holds"
    if v[-1] >= 0.5 * v[0] and v[-1] > 0:
        return "fails"
    return "undecidable"


def check_assumptions(model, L_list, R=1.0):
    """Verdicts for the finite-mark, volume-linear and corollary hypotheses.

    Conditions that are limits over L are judged from the trend on L_list
    and labelled "trend-evidence"; grid-based checks on (0, 1) marks are
    labelled "numerical".
    """
    rows = []
    finite = model.marks.kind == "finite"
    L_list = sorted(float(L) for L in L_list)
    models = [model.with_L(L) for L in L_list] if not isinstance(model.scaling, Identity) else [model]

    # Assumption F
    rows.append(_row("F:finite-marks", "holds" if finite else "fails", "exact"))
    vals = [float(np.max(pointwise_integrals(m))) for m in models]
    rows.append(_row("F:pointwise-integrable", "holds" if math.isfinite(vals[-1]) else "fails",
                     "numerical", L=L_list, values=vals))
    if finite:
        series = check_ratio_condition(model, R, L_list)
        ratios = [s["ratio"] for s in series]
        rows.append(_row("F:ratio-condition", _trend(ratios), "trend-evidence", R=R, L=L_list, ratios=ratios))

    # Assumption S
    vol = isinstance(model.scaling, VolumeLinear)
    rows.append(_row("S:volume-linear", "holds" if vol else "fails", "exact"))
    if vol:
        ref = reference_model(model)
        P = pointwise_integrals(ref)
        rows.append(_row("S:pointwise-integrable", "holds" if np.all(np.isfinite(P)) else "fails",
                         "numerical", max=float(np.max(P))))
        norm = spectral.op_norm_2to2(P, model.marks.weights)[0]
        verdict = "holds" if math.isfinite(norm) else "fails"
        if model.marks.kind == "interval" and math.isfinite(norm):
            fine = AdjacencyModel(model.d, spectral._refined(model.marks), model.base, Identity())
            nf = spectral.op_norm_2to2(pointwise_integrals(fine), fine.marks.weights)[0]
            if not abs(nf - norm) <= 0.01 * nf:
                verdict = "undecidable"
            rows.append(_row("S:L2-norm", verdict, "numerical", norm=norm, refined=nf))
        else:
            rows.append(_row("S:L2-norm", verdict, "numerical", norm=norm))

    # F+ (finite marks, limits over L)
    if finite:
        mm, ks = [], []
        for m in models:
            D = degree_matrix(m)
            if not D.finite:
                mm.append(math.inf)
                ks.append(0.0)
                continue
            rs = D.values @ D.weights
            mm.append(float(D.values.max() / rs.min()) if rs.min() > 0 else math.inf)
            best = 0.0
            cur = D.values
            for k in range(1, 65):
                if k > 1:
                    cur = (D.values * D.weights[None, :]) @ cur / rs.max()
                else:
                    cur = cur / rs.max()
                best = max(best, float(cur.min()))
            ks.append(best)
        bounded = all(math.isfinite(x) for x in mm) and mm[-1] <= 2 * max(mm[0], 1.0)
        rows.append(_row("F+:max-over-min-rowsum", "holds" if bounded else "undecidable",
                         "trend-evidence", L=L_list, values=mm))
        kpos = all(x > 0 for x in ks) and ks[-1] >= 0.5 * ks[0]
        rows.append(_row("F+:k-step-ratio", "holds" if kpos else "undecidable", "trend-evidence",
                         L=L_list, values=ks))

    # S+ (reference function)
    if vol:
        Dr = degree_matrix(reference_model(model))
        rows.append(_row("S+:bounded-degree-density", "holds" if Dr.finite else "fails", "numerical",
                         max=float(Dr.values.max())))
        rs = Dr.values @ Dr.weights if Dr.finite else np.array([math.inf])
        rows.append(_row("S+:positive-row-integral", "holds" if rs.min() > 0 else "fails", "numerical",
                         min=float(rs.min())))
        if Dr.finite:
            logsup, _ = _log_sup_k(Dr, 1.0, 64)
            rows.append(_row("S+:strong-irreducibility", "holds" if np.any(np.isfinite(logsup)) else "fails",
                             "numerical", max_log=float(logsup.max())))

    # Boolean corollary: mark laws here are compactly supported
    if isinstance(model.base, BooleanDisc):
        top = float(model.marks.values.max())
        rows.append(_row("Boolean:finite-expected-volume", "holds", "exact", sup_mark=top))
        rows.append(_row("Boolean:infinite-expected-volume", "fails", "exact", sup_mark=top))

    # Non-perturbative proposition for weight-dependent models
    if isinstance(model.base, WeightDependent):
        d = model.d
        prof = model.base.profile
        a = profile_integral(d, prof, lambda r: (d - 1) * r)
        b = profile_integral(d, prof, lambda r: np.log(np.maximum(r, 1e-300)) + 0.5 * (d - 1) * r)
        kn = kernel_norm_analytic(model.base.kernel)
        rows.append(_row("nonperturb:a-infinite-degree", "holds" if a == math.inf else "fails", "numerical", value=a))
        rows.append(_row("nonperturb:b-profile-L2", "holds" if math.isfinite(b) else "fails", "numerical", value=b))
        rows.append(_row("nonperturb:c-kernel-norm", "holds" if math.isfinite(kn) else "fails", "exact", value=kn))
    return rows


def boolean_volume_conditions(d, log_density, knots=()):
    """Verdicts for a radius law on (0, inf) given by its log-density."""
    fin, inf_ = mark_law_integrals(d, log_density, knots)
    return [
        _row("Boolean:finite-expected-volume", "holds" if math.isfinite(fin) else "fails", "numerical", value=fin),
        _row("Boolean:infinite-expected-volume", "holds" if inf_ == math.inf else "fails", "numerical", value=inf_),
    ]
