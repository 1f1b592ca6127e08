"""Monte-Carlo simulation of the random connection model on a hyperbolic ball.

A replica samples a marked Poisson process in B_R, flips one coin per
candidate pair, clusters the graph and records statistics for the "core"
ball B_{R_core} (away from the boundary) and the "shell" R_shell < r < R.
A cluster touching both core and shell is a crossing cluster, the
finite-volume stand-in for an infinite cluster.
"""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import warnings

import numpy as np
from scipy import sparse, stats
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import hypgeo as hg
from . import rng as rngmod

THREADS_ENV = "HYPRCM_THREADS"


@dataclass(frozen=True)
class PercConfig:
    model: object
    lam: float
    R: float
    R_core: float
    R_shell: float
    replicas: int = 1
    seed: int = 0
    point_cap: int = int(hg.POINT_CAP)
    bins: tuple = ()
    two_point: bool = True  # off skips the O(core^2) pair statistics

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("intensity must be positive")
        if not 0 < self.R_core < self.R_shell < self.R:
            raise ValueError("need 0 < R_core < R_shell < R")
        if self.R > hg.MAX_RADIUS:
            raise OverflowError(f"ball radius above the working cap {hg.MAX_RADIUS}")
        if self.replicas < 1:
            raise ValueError("replicas must be at least 1")

    @property
    def n_expected(self):
        return self.lam * hg.sphere_area(self.model.d - 1) * hg.volume_fn(self.model.d, self.R)

    @property
    def bin_edges(self):
        if self.bins:
            return np.asarray(self.bins, dtype=float)
        return np.linspace(0.0, 2.0 * self.R_core, 21)


@dataclass
class ReplicaResult:
    replica: int
    points: int
    edges: int
    mean_degree: float
    core_points: int
    core_degree_sum: int
    largest_cluster: int
    largest_core: int
    clusters: int
    crossing_clusters: int
    core_cluster_size_sum: int
    size_histogram: dict
    pair_counts: np.ndarray
    pair_connected: np.ndarray
    pair_adjacent: np.ndarray
    pair_phi: np.ndarray
    labels: np.ndarray = field(repr=False, default=None)
    radii: np.ndarray = field(repr=False, default=None)


# -- union-find --------------------------------------------------------------

class ClusterForest:
    """Union-find with union by rank and path halving."""

    def __init__(self, n):
        self.parent = np.arange(n)
        self.rank = np.zeros(n, dtype=np.int8)
        self.unions = 0

    def find(self, x):
        p = self.parent
        while p[x] != x:
            p[x] = p[p[x]]
            x = p[x]
        return x

    def union(self, x, y):
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return False
        if self.rank[rx] < self.rank[ry]:
            rx, ry = ry, rx
        self.parent[ry] = rx
        if self.rank[rx] == self.rank[ry]:
            self.rank[rx] += 1
        self.unions += 1
        return True

    @property
    def clusters(self):
        return len(self.parent) - self.unions

    def roots(self):
        return np.array([self.find(i) for i in range(len(self.parent))], dtype=np.int64)

    @classmethod
    def from_edges(cls, n, i, j):
        f = cls(n)
        for a, b in zip(np.asarray(i).tolist(), np.asarray(j).tolist()):
            f.union(a, b)
        return f


def cluster_labels(n, i, j):
    """Connected-component labels of the graph on n vertices with edges (i, j)."""
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    adj = sparse.coo_matrix((np.ones(len(i), dtype=np.int8), (i, j)), shape=(n, n)).tocsr()
    return connected_components(adj, directed=False)[1]


# -- candidate pairs ---------------------------------------------------------

_SHELL = 0.5


def candidate_pairs(radii, dirs, reach):
    """All pairs (i < j) that can lie within distance `reach`, plus possibly some that do not.

    Points are grouped into radial shells.  For shells with radii in
    [lo1, hi1] and [lo2, hi2], dist <= reach forces the chord between the
    directions to satisfy |u1 - u2|^2 <= 2 (cosh reach - cosh dr) /
    (sinh lo1 sinh lo2) with dr the smallest radial gap, which is a kd-tree
    ball query on the sphere.
    """
    n = len(radii)
    if n < 2:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if not math.isfinite(reach):
        i, j = np.triu_indices(n, 1)
        return i.astype(np.int64), j.astype(np.int64)
    shell = np.floor(radii / _SHELL).astype(np.int64)
    ids = np.unique(shell)
    members = {s: np.nonzero(shell == s)[0] for s in ids}
    trees = {s: cKDTree(dirs[members[s]]) for s in ids}
    out_i, out_j = [], []
    span = int(math.ceil(reach / _SHELL)) + 1
    for s1 in ids:
        for s2 in ids:
            if s2 < s1 or s2 - s1 > span:
                continue
            gap = max(0.0, (s2 - s1 - 1) * _SHELL)
            if gap > reach:
                continue
            lo1, lo2 = s1 * _SHELL, s2 * _SHELL
            denom = math.sinh(lo1) * math.sinh(lo2)
            num = 2.0 * (math.cosh(reach) - math.cosh(gap))
            chord = 2.0001 if denom <= 0 else min(2.0001, math.sqrt(max(num, 0.0) / denom) * (1 + 1e-9) + 1e-12)
            m1, m2 = members[s1], members[s2]
            if s1 == s2:
                pr = trees[s1].query_pairs(chord, output_type="ndarray")
                if len(pr):
                    out_i.append(m1[pr[:, 0]])
                    out_j.append(m1[pr[:, 1]])
            else:
                sm = trees[s1].sparse_distance_matrix(trees[s2], chord, output_type="coo_matrix")
                if sm.nnz:
                    out_i.append(m1[sm.row])
                    out_j.append(m2[sm.col])
    if not out_i:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    i = np.concatenate(out_i)
    j = np.concatenate(out_j)
    return np.minimum(i, j), np.maximum(i, j)


# -- one replica -------------------------------------------------------------

_SAMPLERS = {}


def _sampler(d, R):
    key = (d, float(R))
    if key not in _SAMPLERS:
        _SAMPLERS[key] = hg.RadialSampler(d, R)
    return _SAMPLERS[key]


def run_replica(cfg, replica_id, stream_key=(), keep_labels=False):
    """Sample, connect and cluster one replica; `stream_key` separates grid points in a sweep."""
    model = cfg.model
    d = model.d
    reach = model.max_support()
    if math.isfinite(reach) and cfg.R_core + reach > cfg.R:
        warnings.warn(f"connection range {reach:.4g} reaches past the ball from the core; "
                      "core degrees are truncated by the boundary", RuntimeWarning, stacklevel=2)
    pts = hg.sample_ball(d, cfg.R, cfg.n_expected, rngmod.stream(cfg.seed, *stream_key, replica_id, rngmod.POINTS),
                         cfg.point_cap, _sampler(d, cfg.R))
    n = len(pts)
    marks = model.marks.sample(rngmod.stream(cfg.seed, *stream_key, replica_id, rngmod.MARKS), n)
    ci, cj = candidate_pairs(pts.radii, pts.directions, reach)
    dist = hg.polar_dist(pts.radii[ci], pts.directions[ci], pts.radii[cj], pts.directions[cj])
    phi = model.phi(dist, marks[ci], marks[cj]) if len(ci) else np.zeros(0)
    key = rngmod.pair_key(cfg.seed, *stream_key, replica_id)
    coin = rngmod.pair_uniforms(key, ci, cj)
    hit = coin < phi
    ei, ej = ci[hit], cj[hit]
    labels = cluster_labels(n, ei, ej)
    deg = np.bincount(np.concatenate([ei, ej]), minlength=n)
    sizes = np.bincount(labels) if n else np.zeros(0, dtype=np.int64)
    core = pts.radii <= cfg.R_core
    shell = pts.radii > cfg.R_shell
    if n:
        big = int(np.argmax(sizes))
        largest, largest_core = int(sizes[big]), int(np.sum(core & (labels == big)))
        crossing = len(np.intersect1d(labels[core], labels[shell]))
        hist_s, hist_c = np.unique(sizes, return_counts=True)
    else:
        largest = largest_core = crossing = 0
        hist_s = hist_c = np.zeros(0, dtype=np.int64)
    # two-point statistics over core pairs
    edges_b = cfg.bin_edges
    nb = len(edges_b) - 1
    idx = np.nonzero(core)[0]
    counts = np.zeros(nb, dtype=np.int64)
    conn = np.zeros(nb, dtype=np.int64)
    adjc = np.zeros(nb, dtype=np.int64)
    phis = np.zeros(nb)
    if cfg.two_point and len(idx) > 1:
        a, b = np.triu_indices(len(idx), 1)
        pa, pb = idx[a], idx[b]
        r = hg.polar_dist(pts.radii[pa], pts.directions[pa], pts.radii[pb], pts.directions[pb])
        k = np.searchsorted(edges_b, r, side="right") - 1
        ok = (k >= 0) & (k < nb)
        k, pa, pb, r = k[ok], pa[ok], pb[ok], r[ok]
        counts = np.bincount(k, minlength=nb)
        conn = np.bincount(k, weights=(labels[pa] == labels[pb]), minlength=nb).astype(np.int64)
        ph = model.phi(r, marks[pa], marks[pb])
        adjc = np.bincount(k, weights=rngmod.pair_uniforms(key, pa, pb) < ph, minlength=nb).astype(np.int64)
        phis = np.bincount(k, weights=ph, minlength=nb)
    return ReplicaResult(
        replica=replica_id, points=n, edges=int(hit.sum()),
        mean_degree=2.0 * hit.sum() / n if n else 0.0,
        core_points=int(core.sum()), core_degree_sum=int(deg[core].sum()),
        largest_cluster=largest, largest_core=largest_core, clusters=int(len(sizes)),
        crossing_clusters=int(crossing), core_cluster_size_sum=int(sizes[labels[core]].sum()) if n else 0,
        size_histogram=dict(zip(hist_s.tolist(), hist_c.tolist())),
        pair_counts=counts, pair_connected=conn, pair_adjacent=adjc, pair_phi=phis,
        labels=labels if keep_labels else None, radii=pts.radii if keep_labels else None)


def thread_count(threads=None):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get(THREADS_ENV)
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def run(cfg, threads=None, stream_key=()):
    """All replicas of one configuration, in replica order."""
    with ThreadPoolExecutor(thread_count(threads)) as ex:
        return list(ex.map(lambda k: run_replica(cfg, k, stream_key), range(cfg.replicas)))


# -- estimators --------------------------------------------------------------

def wilson_interval(k, n, z=1.959963984540054):
    """Wilson score interval for k successes in n trials (arrays allowed)."""
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = k / n
        den = 1 + z ** 2 / n
        centre = (p + z ** 2 / (2 * n)) / den
        half = z * np.sqrt(p * (1 - p) / n + z ** 2 / (4 * n ** 2)) / den
    return centre - half, centre + half


def ratio_estimate(num, den):
    """Pooled ratio sum(num)/sum(den) with a delta-method standard error over replicas."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    if den.sum() == 0:
        return math.nan, math.nan
    q = num.sum() / den.sum()
    m = len(num)
    if m < 2:
        return q, math.nan
    resid = num - q * den
    se = math.sqrt(np.sum(resid ** 2) * m / (m - 1)) / den.sum()
    return q, se


def core_mean_degree(results):
    return ratio_estimate([r.core_degree_sum for r in results], [r.core_points for r in results])


def two_point_estimate(results, bins=None):
    """Per-bin connection frequency among core pairs, Wilson CIs, and the mean adjacency probability."""
    counts = np.sum([r.pair_counts for r in results], axis=0)
    conn = np.sum([r.pair_connected for r in results], axis=0)
    adj = np.sum([r.pair_adjacent for r in results], axis=0)
    phis = np.sum([r.pair_phi for r in results], axis=0)
    lo, hi = wilson_interval(conn, counts)
    with np.errstate(invalid="ignore", divide="ignore"):
        tau = conn / counts
        phibar = phis / counts
    return {"bins": bins, "pairs": counts, "connected": conn, "adjacent": adj, "tau": tau,
            "tau_lo": lo, "tau_hi": hi, "phi_bar": phibar, "empty": counts == 0}


def crossing_cluster_count(result):
    return result.crossing_clusters


def susceptibility_proxy(results):
    """Mean size of the cluster of a uniformly chosen core point, with a standard error.

    Raises ValueError when no replica has a core point.
    """
    num = [r.core_cluster_size_sum for r in results]
    den = [r.core_points for r in results]
    if sum(den) == 0:
        raise ValueError("no core points in any replica")
    return ratio_estimate(num, den)


def largest_cluster_core_fraction(results):
    return ratio_estimate([r.largest_core for r in results], [r.core_points for r in results])


def fit_power_law(xs, ys):
    """Least-squares slope of log y against log x, with its standard error."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 4 or len(xs) != len(ys):
        raise ValueError("need at least 4 paired points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("power-law fit needs positive data")
    fit = stats.linregress(np.log(xs), np.log(ys))
    return float(fit.slope), float(fit.stderr)


# -- sweeps ------------------------------------------------------------------

REPLICA_COLUMNS = ["row", "point", "lambda", "L", "replica", "points", "edges", "mean_degree",
                   "core_points", "core_degree_sum", "largest_cluster", "largest_core", "clusters",
                   "crossing_clusters", "core_cluster_size_sum"]
AGGREGATE_COLUMNS = ["row", "point", "lambda", "L", "replicas", "core_mean_degree", "core_mean_degree_se",
                     "expected_degree", "largest_core_fraction", "largest_core_fraction_se",
                     "susceptibility", "susceptibility_se", "crossing_median", "lambda_c_upper",
                     "lambda_u_lower", "error"]


def sweep(cfg, lambdas, Ls=None, threads=None, annotate=None):
    """Replica and aggregate rows over the (lambda, L) grid.

    `annotate(model)` may return a dict with bound columns for each L.  A
    failing grid point produces an aggregate row with its error message
    instead of aborting the sweep.
    """
    from .models import degree_matrix
    Ls = list(Ls) if Ls else [cfg.model.L]
    grid = [(float(lam), float(L)) for L in Ls for lam in lambdas]
    models = {L: (cfg.model if L == cfg.model.L else cfg.model.with_L(L)) for L in Ls}
    notes = {}
    for L, m in models.items():
        info = {}
        try:
            D = degree_matrix(m)
            info["expected_degree"] = float(np.max(D.values @ D.weights))
            if annotate is not None:
                info.update(annotate(m))
        except Exception as exc:  # recorded in the row
            info["error"] = f"{type(exc).__name__}: {exc}"
        notes[L] = info
    tasks = [(p, k) for p in range(len(grid)) for k in range(cfg.replicas)]

    def work(task):
        p, k = task
        lam, L = grid[p]
        try:
            c = replace(cfg, model=models[L], lam=lam)
            return p, k, run_replica(c, k, stream_key=(p,)), None
        except Exception as exc:
            return p, k, None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(thread_count(threads)) as ex:
        done = list(ex.map(work, tasks))
    replica_rows, aggregate_rows = [], []
    by_point = {}
    for p, k, res, err in done:
        by_point.setdefault(p, []).append((res, err))
        if res is not None:
            lam, L = grid[p]
            replica_rows.append({"row": "replica", "point": p, "lambda": lam, "L": L, "replica": k,
                                 **{c: getattr(res, c) for c in REPLICA_COLUMNS[5:]}})
    for p, (lam, L) in enumerate(grid):
        items = by_point.get(p, [])
        ok = [r for r, e in items if r is not None]
        errs = sorted({e for _, e in items if e})
        info = notes[L]
        row = {"row": "aggregate", "point": p, "lambda": lam, "L": L, "replicas": len(ok),
               "expected_degree": lam * info["expected_degree"] if "expected_degree" in info else math.nan,
               "lambda_c_upper": info.get("lambda_c_upper", math.nan),
               "lambda_u_lower": info.get("lambda_u_lower", math.nan),
               "error": "; ".join(errs + ([info["error"]] if "error" in info else []))}
        if ok:
            row["core_mean_degree"], row["core_mean_degree_se"] = core_mean_degree(ok)
            row["largest_core_fraction"], row["largest_core_fraction_se"] = largest_cluster_core_fraction(ok)
            try:
                row["susceptibility"], row["susceptibility_se"] = susceptibility_proxy(ok)
            except ValueError:
                row["susceptibility"] = row["susceptibility_se"] = math.nan
            row["crossing_median"] = float(np.median([r.crossing_clusters for r in ok]))
        else:
            for c in ("core_mean_degree", "core_mean_degree_se", "largest_core_fraction",
                      "largest_core_fraction_se", "susceptibility", "susceptibility_se", "crossing_median"):
                row[c] = math.nan
        aggregate_rows.append(row)
    return replica_rows, aggregate_rows
