"""Marks, adjacency functions, scaling functions and degree functionals.

An `AdjacencyModel` bundles a dimension, a mark space, a reference adjacency
function phi(r; a, b) and a scaling function sigma_L; the scaled function is
phi_L(r; a, b) = phi(sigma_L^{-1}(r); a, b).  Radial integrals against the
hyperbolic volume element are computed piecewise between the points where
phi_L or sigma_L has kinks, with an explicit tail-divergence probe so that
infinite expected degrees come back as +inf instead of garbage.
"""
import math

import numpy as np
from scipy import integrate, interpolate

from . import hypgeo as hg


class UnknownMarkError(KeyError):
    pass


# -- mark spaces -------------------------------------------------------------

class MarkSpace:
    """Finite weighted mark set, or (0, 1) with Lebesgue law and a quadrature grid."""

    def __init__(self, kind, values, weights, grid=None):
        values = np.asarray(values, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if kind not in ("finite", "interval"):
            raise ValueError(f"unknown mark-space kind {kind!r}")
        if values.shape != weights.shape or values.ndim != 1 or len(values) == 0:
            raise ValueError("values and weights must be nonempty 1-d arrays of equal length")
        if np.any(weights <= 0):
            raise ValueError("mark weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mark weights must sum to 1")
        if kind == "finite" and len(np.unique(values)) != len(values):
            raise ValueError("finite mark labels must be distinct")
        if kind == "interval":
            if np.any(np.diff(values) <= 0) or values[0] <= 0 or values[-1] >= 1:
                raise ValueError("interval grid nodes must be strictly increasing inside (0, 1)")
        self.kind = kind
        self.values = values
        self.weights = weights
        self.grid = grid or {}

    @classmethod
    def finite(cls, labels, weights=None):
        labels = np.atleast_1d(np.asarray(labels, dtype=float))
        if weights is None:
            weights = np.full(len(labels), 1.0 / len(labels))
        return cls("finite", labels, weights)

    @classmethod
    def single(cls, label=1.0):
        return cls.finite([label], [1.0])

    @classmethod
    def unit_interval(cls, nodes=256):
        x, w = np.polynomial.legendre.leggauss(nodes)
        return cls("interval", 0.5 * (x + 1), 0.5 * w, {"grid": "gauss", "nodes": nodes})

    @classmethod
    def graded(cls, ratio=0.5, per_panel=8, depth=1e-20):
        """Composite Gauss-Legendre on geometric panels [q^{k+1}, q^k] down to `depth`.

        Resolves kernels that blow up like a power of the mark near 0.
        """
        x, w = np.polynomial.legendre.leggauss(per_panel)
        k_max = int(math.ceil(math.log(depth) / math.log(ratio)))
        edges = np.concatenate([[0.0], ratio ** np.arange(k_max, -1, -1.0)])
        lo, hi = edges[:-1, None], edges[1:, None]
        nodes = (lo + 0.5 * (hi - lo) * (x + 1)).ravel()
        weights = (0.5 * (hi - lo) * w).ravel()
        weights /= weights.sum()
        grid = {"grid": "graded", "ratio": ratio, "per_panel": per_panel, "depth": depth}
        return cls("interval", nodes, weights, grid)

    def __len__(self):
        return len(self.values)

    def check(self, a):
        a = np.asarray(a, dtype=float)
        if self.kind == "finite":
            if not np.all(np.isin(a, self.values)):
                raise UnknownMarkError(f"mark(s) {a} not in the finite mark set")
        elif np.any((a <= 0) | (a >= 1)):
            raise UnknownMarkError("interval marks must lie in (0, 1)")
        return a

    def index(self, a):
        hit = np.nonzero(self.values == a)[0]
        if len(hit) == 0:
            raise UnknownMarkError(f"mark {a} not in the mark set")
        return int(hit[0])

    def sample(self, rng, n):
        if self.kind == "finite":
            return self.values[rng.choice(len(self.values), size=n, p=self.weights)]
        # inverse CDF of the Lebesgue law on (0, 1) is the identity
        u = rng.random(n)
        return np.where(u > 0, u, 0.5 ** 53)

    def to_dict(self):
        if self.kind == "finite":
            return {"type": "finite", "labels": self.values.tolist(), "weights": self.weights.tolist()}
        return {"type": "unit_interval", **self.grid}

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec)
        kind = spec.pop("type")
        if kind == "finite":
            labels = spec["labels"] if "labels" in spec else spec["values"]
            return cls.finite(labels, spec.get("weights"))
        if kind == "unit_interval":
            grid = spec.pop("grid", "gauss")
            if grid == "gauss":
                return cls.unit_interval(int(spec.get("nodes", 256)))
            if grid == "graded":
                return cls.graded(float(spec.get("ratio", 0.5)), int(spec.get("per_panel", 8)),
                                  float(spec.get("depth", 1e-20)))
            raise ValueError(f"unknown grid {grid!r}")
        raise ValueError(f"unknown mark-space type {kind!r}")


# -- profiles ----------------------------------------------------------------

class Indicator:
    def __init__(self, cut):
        if cut <= 0:
            raise ValueError("indicator cut must be positive")
        self.cut = float(cut)

    def __call__(self, r):
        return (np.asarray(r) < self.cut).astype(float)

    def knots(self):
        return [self.cut]

    support = property(lambda self: self.cut)
    length = property(lambda self: self.cut)

    def to_dict(self):
        return {"type": "indicator", "cut": self.cut}


class ExpDecay:
    def __init__(self, rate):
        if rate <= 0:
            raise ValueError("decay rate must be positive")
        self.rate = float(rate)

    def __call__(self, r):
        return np.exp(-self.rate * np.asarray(r, dtype=float))

    def knots(self):
        return []

    support = property(lambda self: math.inf)
    length = property(lambda self: 1.0 / self.rate)

    def to_dict(self):
        return {"type": "exp_decay", "rate": self.rate}


class PowerTail:
    """rho(r) = (1 + r/scale)^(-exponent)."""

    def __init__(self, exponent, scale=1.0):
        if exponent <= 0 or scale <= 0:
            raise ValueError("exponent and scale must be positive")
        self.exponent = float(exponent)
        self.scale = float(scale)

    def __call__(self, r):
        return (1.0 + np.asarray(r, dtype=float) / self.scale) ** (-self.exponent)

    def knots(self):
        return []

    support = property(lambda self: math.inf)
    length = property(lambda self: self.scale)

    def to_dict(self):
        return {"type": "power_tail", "exponent": self.exponent, "scale": self.scale}


class Table:
    """Piecewise-linear profile through (r, value) nodes, zero past the last node."""

    def __init__(self, r, value):
        r = np.asarray(r, dtype=float)
        value = np.asarray(value, dtype=float)
        if r.ndim != 1 or r.shape != value.shape or len(r) < 1:
            raise ValueError("table needs matching 1-d node arrays")
        if np.any(np.diff(r) <= 0) or r[0] < 0:
            raise ValueError("table radii must be nonnegative and strictly increasing")
        if np.any((value < 0) | (value > 1)) or np.any(np.diff(value) > 0):
            raise ValueError("table values must lie in [0, 1] and be non-increasing")
        self.r = r
        self.value = value

    def __call__(self, x):
        return np.interp(x, self.r, self.value, right=0.0)

    def knots(self):
        return self.r.tolist()

    support = property(lambda self: float(self.r[-1]))
    length = property(lambda self: float(self.r[-1]))

    def to_dict(self):
        return {"type": "table", "r": self.r.tolist(), "value": self.value.tolist()}


PROFILES = {"indicator": Indicator, "exp_decay": ExpDecay, "power_tail": PowerTail, "table": Table}


def profile_from_dict(spec):
    spec = dict(spec)
    return PROFILES[spec.pop("type")](**spec)


# -- kernels -----------------------------------------------------------------

class _Kernel:
    name = ""

    def __init__(self, zeta):
        if zeta <= 0:
            raise ValueError("kernel exponent must be positive")
        self.zeta = float(zeta)

    def to_dict(self):
        return {"type": self.name, "zeta": self.zeta}


class Product(_Kernel):
    name = "product"

    def __call__(self, a, b):
        return (np.asarray(a) * np.asarray(b)) ** (-self.zeta)


class Strong(_Kernel):
    name = "strong"

    def __call__(self, a, b):
        return np.minimum(a, b) ** (-self.zeta)


class Sum(_Kernel):
    name = "sum"

    def __call__(self, a, b):
        return np.asarray(a) ** (-self.zeta) + np.asarray(b) ** (-self.zeta)


class Weak(_Kernel):
    name = "weak"

    def __call__(self, a, b):
        return np.maximum(a, b) ** (-1.0 - self.zeta)


class PrefAttach(_Kernel):
    name = "pref_attach"

    def __call__(self, a, b):
        return np.maximum(a, b) ** (self.zeta - 1.0) * np.minimum(a, b) ** (-self.zeta)


class Constant:
    name = "constant"

    def __init__(self, c=1.0):
        if c <= 0:
            raise ValueError("constant kernel must be positive")
        self.c = float(c)

    def __call__(self, a, b):
        return np.full(np.broadcast(a, b).shape, self.c)

    def to_dict(self):
        return {"type": "constant", "c": self.c}


KERNELS = {k.name: k for k in (Product, Strong, Sum, Weak, PrefAttach, Constant)}


def kernel_from_dict(spec):
    spec = dict(spec)
    return KERNELS[spec.pop("type")](**spec)


def kernel_norm_analytic(kernel):
    """L^2(0,1) operator norm of the kernel, or a finite upper bound, or +inf.

    product: exactly 1/(1 - 2 zeta) (rank one); strong and sum: the
    Hilbert-Schmidt norm; weak and preferential attachment: always infinite.
    """
    if isinstance(kernel, Constant):
        return kernel.c
    z = kernel.zeta
    if isinstance(kernel, (Weak, PrefAttach)):
        return math.inf
    if z >= 0.5:
        return math.inf
    if isinstance(kernel, Product):
        return 1.0 / (1.0 - 2.0 * z)
    if isinstance(kernel, Strong):
        return math.sqrt(1.0 / ((1.0 - 2.0 * z) * (1.0 - z)))
    if isinstance(kernel, Sum):
        # int int (a^-z + b^-z)^2 = 2/(1-2z) + 2/(1-z)^2
        return math.sqrt(2.0 / (1.0 - 2.0 * z) + 2.0 / (1.0 - z) ** 2)
    raise TypeError(f"unknown kernel {kernel!r}")


# -- scaling functions -------------------------------------------------------

class Identity:
    L = 1.0

    def forward(self, r):
        return np.array(r, dtype=float)

    inverse = forward

    def derivative(self, r):
        return np.ones_like(np.asarray(r, dtype=float))

    def knots(self):
        return []

    def with_L(self, L):
        if L == 1:
            return self
        raise ValueError("identity scaling has no L parameter")

    def to_dict(self):
        return {"type": "identity"}


class VolumeLinear:
    """s_L(r) = V_d^{-1}(L V_d(r)): multiplies every radial volume integral by L."""

    def __init__(self, d, L):
        if L <= 0:
            raise ValueError("L must be positive")
        self.d = hg.check_dim(d)
        self.L = float(L)

    def forward(self, r):
        return hg.volume_scale(self.d, self.L, r)

    def inverse(self, r):
        return hg.volume_scale(self.d, 1.0 / self.L, r)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        s = self.forward(r)
        return self.L * np.exp((self.d - 1) * (hg.log_sinh(r) - hg.log_sinh(s)))

    def knots(self):
        return []

    def with_L(self, L):
        return VolumeLinear(self.d, L)

    def to_dict(self):
        return {"type": "volume_linear", "L": self.L}


class LengthLinear:
    def __init__(self, L):
        if L <= 0:
            raise ValueError("L must be positive")
        self.L = float(L)

    def forward(self, r):
        return self.L * np.asarray(r, dtype=float)

    def inverse(self, r):
        return np.asarray(r, dtype=float) / self.L

    def derivative(self, r):
        return np.full_like(np.asarray(r, dtype=float), self.L)

    def knots(self):
        return []

    def with_L(self, L):
        return LengthLinear(L)

    def to_dict(self):
        return {"type": "length_linear", "L": self.L}


class _PiecewiseLinear:
    """Continuous piecewise-linear bijection given by knots, slope 1 past the last knot."""

    def _set_knots(self, x, y):
        self._x = np.asarray(x, dtype=float)
        self._y = np.asarray(y, dtype=float)
        if np.any(np.diff(self._x) <= 0) or np.any(np.diff(self._y) <= 0):
            raise ValueError("scaling knots must be strictly increasing")

    def forward(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self._x[-1], np.interp(r, self._x, self._y),
                        self._y[-1] + (r - self._x[-1]))

    def inverse(self, s):
        s = np.asarray(s, dtype=float)
        return np.where(s <= self._y[-1], np.interp(s, self._y, self._x),
                        self._x[-1] + (s - self._y[-1]))

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        slopes = np.diff(self._y) / np.diff(self._x)
        k = np.clip(np.searchsorted(self._x, r, side="right") - 1, 0, len(slopes) - 1)
        return np.where(r >= self._x[-1], 1.0, slopes[k])

    def knots(self):
        return self._x.tolist()


class AnnulusScaling(_PiecewiseLinear):
    """Length-linear up to 1, then slope a_L until it meets the identity.

    With phi = 1{1 < r < 2} the expected degree tends to 0 as L grows
    whenever a_L = o(e^{-L(d-1)}); the default a_L = e^{-2L(d-1)} is one
    such choice.  The slope-a_L piece rejoins the identity at
    (L - a_L)/(1 - a_L), which keeps the map continuous.
    """

    def __init__(self, d, L, a_L=None):
        if L <= 1:
            raise ValueError("annulus scaling needs L > 1")
        self.d = hg.check_dim(d)
        self.L = float(L)
        self.a_rule = "exp" if a_L is None else "fixed"
        self.a_L = math.exp(-2.0 * self.L * (self.d - 1)) if a_L is None else float(a_L)
        if not 0 < self.a_L < 1:
            raise ValueError("a_L must lie in (0, 1)")
        self.r_join = (self.L - self.a_L) / (1.0 - self.a_L)
        # r_join and L coincide in floating point once a_L drops below ulp(L)
        self._x = np.array([0.0, 1.0, self.r_join])
        self._y = np.array([0.0, self.L, self.r_join])

    def forward(self, r):
        # the middle piece has a tiny slope; evaluate it directly to keep digits
        r = np.asarray(r, dtype=float)
        mid = self.L + self.a_L * (r - 1.0)
        return np.where(r <= 1, self.L * r, np.where(r <= self.r_join, mid, r))

    def inverse(self, s):
        s = np.asarray(s, dtype=float)
        mid = 1.0 + (s - self.L) / self.a_L
        return np.where(s <= self.L, s / self.L, np.where(s <= self.r_join, mid, s))

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r < 1, self.L, np.where(r < self.r_join, self.a_L, 1.0))

    def with_L(self, L):
        return AnnulusScaling(self.d, L, None if self.a_rule == "exp" else self.a_L)

    def to_dict(self):
        out = {"type": "annulus_example", "L": self.L}
        if self.a_rule == "fixed":
            out["a_L"] = self.a_L
        return out


def _ladder_knots(L, R, shallow):
    """Knots of the many-annuli ladder with slope `shallow` where phi > 0."""
    x, y = [0.0, R / L], [0.0, R]
    m = int(math.floor(-math.log2(R / L)))  # 2^{-m} >= R/L
    lo = R / L
    for j in range(m, -1, -1):
        hi = 2.0 ** (-j)
        if hi <= lo:
            continue
        # (2^{-j-1}, 2^{-j}) carries phi > 0 iff j is even
        slope = shallow if j % 2 == 0 else 2.0 ** (j + 1)
        x.append(hi)
        y.append(y[-1] + slope * (hi - lo))
        lo = hi
    return x, y


class ManyAnnuliScaling(_PiecewiseLinear):
    """Ladder scaling that defeats the truncated-mass ratio condition.

    Length-linear on r < R/L; on (R/L, 1) the slope is a_L where the
    dyadic-annuli adjacency is positive and 2^{2i+2} on the gaps, so each gap
    adds exactly 1; slope 1 past r = 1.  By default a_L = 1/(L I_L) with
    I_L = int_{1/3}^1 sinh^{d-1}(dummy ladder), which is o(1/I_L).
    """

    def __init__(self, d, L, R, a_L=None):
        if not 0 < R <= L:
            raise ValueError("many-annuli scaling needs 0 < R <= L")
        self.d = hg.check_dim(d)
        self.L = float(L)
        self.R = float(R)
        self.a_rule = "volume" if a_L is None else "fixed"
        if a_L is None:
            a_L = 1.0 / (self.L * self.dummy_integral())
        self.a_L = float(a_L)
        if not 0 < self.a_L < 1:
            raise ValueError("a_L must lie in (0, 1)")
        self._set_knots(*_ladder_knots(self.L, self.R, self.a_L))

    def dummy_integral(self):
        x, y = _ladder_knots(self.L, self.R, 1.0)
        dummy = _PiecewiseLinear()
        dummy._set_knots(x, y)
        pts = sorted({1 / 3, 1.0, *[p for p in x if 1 / 3 < p < 1]})
        f = lambda t: math.sinh(float(dummy.forward(t))) ** (self.d - 1)
        return sum(integrate.quad(f, u, v, epsrel=1e-12)[0] for u, v in zip(pts[:-1], pts[1:]))

    def with_L(self, L):
        return ManyAnnuliScaling(self.d, L, self.R, None if self.a_rule == "volume" else self.a_L)

    def to_dict(self):
        out = {"type": "many_annuli_example", "L": self.L, "R": self.R}
        if self.a_rule == "fixed":
            out["a_L"] = self.a_L
        return out


def scaling_from_dict(spec, d):
    spec = dict(spec)
    kind = spec.pop("type")
    if kind == "identity":
        return Identity()
    if kind == "volume_linear":
        return VolumeLinear(d, spec["L"])
    if kind == "length_linear":
        return LengthLinear(spec["L"])
    if kind == "annulus_example":
        return AnnulusScaling(d, spec["L"], spec.get("a_L"))
    if kind == "many_annuli_example":
        return ManyAnnuliScaling(d, spec["L"], spec["R"], spec.get("a_L"))
    raise ValueError(f"unknown scaling type {kind!r}")


def scale_forward(s, r):
    """sigma_L(r) for a scaling object."""
    if np.any(np.asarray(r) < 0):
        raise ValueError("r must be nonnegative")
    return s.forward(r)


def scale_inverse(s, r):
    """sigma_L^{-1}(r) for a scaling object."""
    if np.any(np.asarray(r) < 0):
        raise ValueError("r must be nonnegative")
    return s.inverse(r)


# -- reference adjacency functions -------------------------------------------

class BooleanDisc:
    """phi(r; a, b) = 1{r < a + b}."""
    name = "boolean"

    def to_dict(self):
        return {"type": self.name}


class WeightDependent:
    """phi(r; a, b) = rho(s^{-1}_{kappa(a,b)}(r)) with volume-linear s."""
    name = "weight_dependent"

    def __init__(self, profile, kernel):
        self.profile = profile
        self.kernel = kernel

    def to_dict(self):
        return {"type": self.name, "profile": self.profile.to_dict(), "kernel": self.kernel.to_dict()}


class RadialTable:
    """Per mark-pair piecewise-linear tables; tables[(i, j)] = Table, symmetric."""
    name = "table"

    def __init__(self, tables):
        self.tables = {}
        for (i, j), t in tables.items():
            self.tables[(i, j)] = t
            self.tables[(j, i)] = t

    def to_dict(self):
        seen = []
        for (i, j), t in sorted(self.tables.items()):
            if i <= j:
                seen.append({"a": i, "b": j, "r": t.r.tolist(), "value": t.value.tolist()})
        return {"type": self.name, "tables": seen}


class Annuli:
    """Mark-independent indicator of a union of open radial intervals."""
    name = "annuli"

    def __init__(self, intervals):
        iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
        if np.any(iv[:, 0] >= iv[:, 1]) or np.any(iv < 0):
            raise ValueError("annuli must be nonempty intervals in [0, inf)")
        self.intervals = iv[np.argsort(iv[:, 0])]

    @classmethod
    def dyadic(cls, depth=40):
        """The union over i < depth of (2^{-2i-1}, 2^{-2i})."""
        i = np.arange(depth)
        out = cls(np.stack([2.0 ** (-2 * i - 1), 2.0 ** (-2 * i)], axis=1))
        out.depth = depth
        return out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x[..., None] > self.intervals[:, 0]) & (x[..., None] < self.intervals[:, 1])
        return inside.any(axis=-1).astype(float)

    def to_dict(self):
        if hasattr(self, "depth"):
            return {"type": "dyadic_annuli", "depth": self.depth}
        return {"type": self.name, "intervals": self.intervals.tolist()}


def base_from_dict(spec):
    spec = dict(spec)
    kind = spec.pop("type")
    if kind == "boolean":
        return BooleanDisc()
    if kind == "weight_dependent":
        return WeightDependent(profile_from_dict(spec["profile"]), kernel_from_dict(spec["kernel"]))
    if kind == "table":
        return RadialTable({(int(t["a"]), int(t["b"])): Table(t["r"], t["value"]) for t in spec["tables"]})
    if kind == "annuli":
        return Annuli(spec["intervals"])
    if kind == "dyadic_annuli":
        return Annuli.dyadic(int(spec.get("depth", 40)))
    raise ValueError(f"unknown adjacency type {kind!r}")


# -- the model ---------------------------------------------------------------

class AdjacencyModel:
    def __init__(self, d, marks, base, scaling=None):
        self.d = hg.check_dim(d)
        self.marks = marks
        self.base = base
        self.scaling = scaling if scaling is not None else Identity()
        if getattr(self.scaling, "d", self.d) != self.d:
            raise ValueError("scaling dimension differs from the model dimension")
        if isinstance(base, WeightDependent) and not isinstance(self.scaling, (Identity, VolumeLinear)):
            raise ValueError("weight-dependent models support only identity or volume-linear scaling")
        if isinstance(base, RadialTable):
            if marks.kind != "finite":
                raise ValueError("tabulated adjacency needs a finite mark set")
            n = len(marks)
            missing = [(i, j) for i in range(n) for j in range(n) if (i, j) not in base.tables]
            if missing:
                raise ValueError(f"tabulated adjacency lacks mark pairs {missing}")

    @property
    def L(self):
        return self.scaling.L

    def with_L(self, L):
        return AdjacencyModel(self.d, self.marks, self.base, self.scaling.with_L(L))

    # -- evaluation
    def _kappa(self, a, b):
        return self.base.kernel(a, b) * self.L

    def phi(self, r, a, b):
        """phi_L(r; a, b); r, a, b broadcast against each other."""
        r = np.asarray(r, dtype=float)
        a = self.marks.check(a)
        b = self.marks.check(b)
        base = self.base
        if isinstance(base, BooleanDisc):
            return (r < self.scaling.forward(a + b)).astype(float)
        if isinstance(base, WeightDependent):
            c = self._kappa(a, b)
            if isinstance(base.profile, Indicator):
                with np.errstate(divide="ignore"):
                    lv = hg.log_volume(self.d, r)
                return (lv < np.log(c) + hg.log_volume(self.d, base.profile.cut)).astype(float)
            r, c = np.broadcast_arrays(r, c)
            x = hg.log_volume_inv(self.d, _log_vol(self.d, r) - np.log(c))
            return base.profile(x)
        x = self.scaling.inverse(r)
        if isinstance(base, Annuli):
            return np.broadcast_to(base(x), np.broadcast(r, a, b).shape).astype(float)
        if isinstance(base, RadialTable):
            x, a, b = np.broadcast_arrays(x, a, b)
            lookup = {float(m): i for i, m in enumerate(self.marks.values)}
            ia = np.vectorize(lookup.__getitem__, otypes=[int])(a)
            ib = np.vectorize(lookup.__getitem__, otypes=[int])(b)
            out = np.empty(x.shape)
            for key in set(zip(ia.ravel().tolist(), ib.ravel().tolist())):
                m = (ia == key[0]) & (ib == key[1])
                out[m] = base.tables[key](x[m])
            return out
        raise TypeError(f"unknown adjacency {base!r}")

    def pair_key(self, a, b):
        """A value that determines phi_L(.; a, b) completely (used to share integrals)."""
        base = self.base
        if isinstance(base, BooleanDisc):
            return float(a + b)
        if isinstance(base, WeightDependent):
            return float(base.kernel(a, b))
        if isinstance(base, Annuli):
            return 0.0
        return (min(self.marks.index(a), self.marks.index(b)), max(self.marks.index(a), self.marks.index(b)))

    # -- radial structure in r-space
    def _base_knots(self, a, b):
        base = self.base
        if isinstance(base, BooleanDisc):
            return [a + b], a + b, None
        if isinstance(base, Annuli):
            return base.intervals.ravel().tolist(), float(base.intervals[:, 1].max()), None
        if isinstance(base, RadialTable):
            t = base.tables[(self.marks.index(a), self.marks.index(b))]
            return t.knots(), t.support, None
        raise TypeError

    def r_knots(self, a, b):
        """Sorted r-space points where phi_L(.; a, b) or sigma_L has kinks, and the support end."""
        base = self.base
        if isinstance(base, WeightDependent):
            c = float(self._kappa(a, b))
            prof = base.profile
            pts = list(prof.knots())
            if not np.isfinite(prof.support):
                pts += [prof.length * 2.0 ** k for k in range(-3, 7)]
            fwd = lambda x: hg.volume_scale(self.d, c, np.asarray(x, dtype=float))
            pts_r = fwd(np.asarray(pts)) if pts else np.array([])
            sup = float(fwd(prof.support)) if np.isfinite(prof.support) else math.inf
            return sorted(set(pts_r.tolist())), sup
        pts, sup, _ = self._base_knots(a, b)
        pts = [p for p in pts if p > 0] + [k for k in self.scaling.knots() if k > 0]
        pts_r = self.scaling.forward(np.asarray(pts, dtype=float)) if pts else np.array([])
        sup_r = float(self.scaling.forward(sup)) if np.isfinite(sup) else math.inf
        return sorted(set(pts_r.tolist())), sup_r

    def max_support(self):
        """Radius beyond which phi_L vanishes for every mark pair (+inf if none)."""
        base = self.base
        top = float(self.marks.values.max()) if self.marks.kind == "finite" else 1.0
        if isinstance(base, BooleanDisc):
            return float(self.scaling.forward(2.0 * top))
        if isinstance(base, Annuli):
            return float(self.scaling.forward(base.intervals[:, 1].max()))
        if isinstance(base, RadialTable):
            return float(self.scaling.forward(max(t.support for t in base.tables.values())))
        prof = base.profile
        if not math.isfinite(prof.support):
            return math.inf
        if self.marks.kind == "finite":
            v = self.marks.values
            kmax = float(np.max(base.kernel(v[:, None], v[None, :])))
        elif isinstance(base.kernel, Constant):
            kmax = base.kernel.c
        else:
            return math.inf
        return float(hg.volume_scale(self.d, kmax * self.L, prof.support))

    def to_dict(self):
        return {"dimension": self.d, "marks": self.marks.to_dict(),
                "base": self.base.to_dict(), "scaling": self.scaling.to_dict()}

    @classmethod
    def from_dict(cls, spec):
        d = int(spec["dimension"])
        return cls(d, MarkSpace.from_dict(spec["marks"]), base_from_dict(spec["base"]),
                   scaling_from_dict(spec.get("scaling", {"type": "identity"}), d))


def _log_vol(d, r):
    with np.errstate(divide="ignore"):
        return hg.log_volume(d, r)


def eval_phi(model, r, a, b):
    return model.phi(r, a, b)


# -- radial integrals --------------------------------------------------------

_PROBE = (100.0, 150.0, 200.0)


def integrate_log(log_f, knots=(), upper=math.inf, rtol=1e-11):
    """int_0^upper exp(log_f(r)) dr, split at `knots`; +inf for a divergent tail.

    `log_f` maps an array of radii to log-integrand values (-inf where the
    integrand vanishes).  Divergence of an infinite tail is decided by the
    slope of log_f over a probe window far beyond every knot: a slope that is
    not clearly negative means the integrand does not decay exponentially.
    """
    def f(r):
        v = float(log_f(np.array([r]))[0])
        return math.exp(v) if v > -745 else 0.0

    pts = [0.0] + sorted(k for k in knots if 0 < k < upper)
    if math.isfinite(upper):
        pts.append(upper)
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += integrate.quad(f, lo, hi, epsabs=0.0, epsrel=rtol, limit=400)[0]
    if math.isfinite(upper):
        return total
    r0 = pts[-1]
    probe = log_f(r0 + np.asarray(_PROBE))
    if not np.all(np.isneginf(probe)):
        slope = (probe[2] - probe[1]) / (_PROBE[2] - _PROBE[1])
        if not slope < -1e-3:
            return math.inf
    return total + integrate.quad(f, r0, math.inf, epsabs=0.0, epsrel=rtol, limit=400)[0]


def radial_integral(model, a, b, log_weight=None, upper=math.inf, rtol=1e-11):
    """int_0^upper phi_L(r; a, b) w(r) sinh^{d-1}(r) dr, or +inf if it diverges.

    `log_weight` maps an array of radii to log w(r).
    """
    d = model.d

    def log_f(r):
        ph = model.phi(r, a, b)
        with np.errstate(divide="ignore"):
            out = np.log(ph) + (d - 1) * hg.log_sinh(r)
        if log_weight is not None:
            out = out + log_weight(r)
        return out

    knots, sup = model.r_knots(a, b)
    return integrate_log(log_f, knots, min(sup, upper), rtol)


class DegreeMatrix:
    """Mark-pair matrix of D_L(a, b) with the mark weights; +inf entries allowed."""

    def __init__(self, values, weights):
        self.values = np.asarray(values, dtype=float)
        self.weights = np.asarray(weights, dtype=float)

    @property
    def finite(self):
        return bool(np.all(np.isfinite(self.values)))


def degree_matrix(model):
    """D_L(a, b) = |S^{d-1}| int phi_L(r; a, b) sinh^{d-1} r dr on the mark grid."""
    area = hg.sphere_area(model.d - 1)
    integ = lambda a, b, m=None: area * radial_integral(m or model, a, b)
    return DegreeMatrix(_pair_table(model, integ), model.marks.weights)


def _pair_table(model, integ):
    # integ(a, b, model=None) evaluates on `model` unless another model is passed
    v = model.marks.values
    n = len(v)
    keys, idx = {}, {}
    for i in range(n):
        for j in range(i, n):
            k = model.pair_key(v[i], v[j])
            keys.setdefault(k, (v[i], v[j]))
            idx[i, j] = k
    if isinstance(model.base, WeightDependent) and len(keys) > 64:
        vals = _kappa_interpolation(model, integ, keys)
    else:
        vals = {k: integ(*ab) for k, ab in keys.items()}
    out = np.empty((n, n))
    for (i, j), k in idx.items():
        out[i, j] = out[j, i] = vals[k]
    return out


def _kappa_interpolation(model, integ, keys):
    """Weight-dependent phi_L depends on (a, b) only through kappa(a, b).

    Evaluate on a log-spaced kappa grid (step 0.05) with a constant-kernel
    twin model and interpolate log-log with a cubic spline, which reproduces
    a function linear in kappa exactly.
    """
    ks = np.array(list(keys), dtype=float)
    lo, hi = math.log(ks.min()), math.log(ks.max())
    m = max(8, int(math.ceil((hi - lo) / 0.05)) + 1)
    grid = np.linspace(lo, hi, m)
    vals = []
    for g in grid:
        twin = AdjacencyModel(model.d, MarkSpace.single(1.0),
                              WeightDependent(model.base.profile, Constant(math.exp(g))), model.scaling)
        vals.append(integ(1.0, 1.0, twin))
    vals = np.array(vals)
    if not np.all(np.isfinite(vals)):
        return {k: math.inf for k in keys}
    if np.all(vals == 0):
        return {k: 0.0 for k in keys}
    spline = interpolate.CubicSpline(grid, np.log(vals))
    return {k: float(np.exp(spline(math.log(k)))) for k in keys}


def degree_k_matrix(D, k):
    """D^{(k)}(a, b) = sum_c D(a, c) P(c) D^{(k-1)}(c, b)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not D.finite:
        raise ValueError("k-step degrees need a finite degree matrix")
    M = D.values
    out = M
    for _ in range(k - 1):
        out = (M * D.weights[None, :]) @ out
    return DegreeMatrix(out, D.weights)


def check_ratio_condition(model, R, L_sequence):
    """Truncated-to-full mass ratio max_ab int_0^R / max_ab int_0^inf per L."""
    if model.marks.kind != "finite":
        raise ValueError("the ratio diagnostic needs a finite mark set")
    v = model.marks.values
    rows = []
    for L in L_sequence:
        m = model.with_L(L)
        num = max(radial_integral(m, a, b, upper=R) for a in v for b in v)
        den = max(radial_integral(m, a, b) for a in v for b in v)
        ratio = num / den if 0 < den < math.inf else math.nan
        rows.append({"L": float(L), "truncated": num, "total": den, "ratio": ratio,
                     "undefined": not 0 < den < math.inf})
    return rows


def annulus_model(d, L, a_L=None):
    return AdjacencyModel(d, MarkSpace.single(), Annuli([[1.0, 2.0]]), AnnulusScaling(d, L, a_L))


def many_annuli_model(d, L, R, depth=40):
    return AdjacencyModel(d, MarkSpace.single(), Annuli.dyadic(depth), ManyAnnuliScaling(d, L, R))


def example_scaling_expected_degree(L, d, lam, a_L=None):
    """Expected degree lam |S^{d-1}| int_1^2 sigma_L'(y) sinh^{d-1}(sigma_L(y)) dy, annulus example."""
    if lam == 0:
        return 0.0
    s = AnnulusScaling(d, L, a_L)
    pts = sorted({1.0, 2.0, *[k for k in s.knots() if 1 < k < 2]})

    def f(y):
        lf = math.log(float(s.derivative(y))) + (d - 1) * float(hg.log_sinh(float(s.forward(y))))
        return math.exp(lf)

    total = sum(integrate.quad(f, u, v, epsabs=0.0, epsrel=1e-12)[0] for u, v in zip(pts[:-1], pts[1:]))
    return lam * hg.sphere_area(d - 1) * total


# -- model files -------------------------------------------------------------

def load_model(path):
    """Read a YAML model file (schema in the README)."""
    import yaml
    with open(path, encoding="utf-8") as fh:
        spec = yaml.safe_load(fh)
    if not isinstance(spec, dict):
        raise ValueError(f"{path}: model file must be a mapping")
    return AdjacencyModel.from_dict(spec)


def dump_model(model):
    import yaml
    return yaml.safe_dump(model.to_dict(), sort_keys=False)


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_model(model))
