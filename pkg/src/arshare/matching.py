"""Matching and geometry kernel shared by the server and the defenses.

Descriptor matching is greedy mutual-nearest-neighbor under cosine
similarity with a Lowe-style ratio test; ties break deterministically by
ascending (map feature id, query index) so runs are bit-reproducible.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, DimError
from .geometry import camera_axes, quat_angle_between

# Looser threshold used only when merging views into one stored map;
# resolve decisions always use MatchParams.tau_cos.
TAU_DEDUP = 0.80


@dataclass(frozen=True)
class MatchParams:
    tau_cos: float = 0.90
    ratio: float = 0.85
    n_min_read: int = 12
    n_min_write: int = 40
    theta_tol_deg: float = 35.0
    p_min: int = 2  # minimum distinct planes to host

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise DimError("ratio must be in (0, 1)")
        if self.n_min_write <= self.n_min_read:
            raise DimError("n_min_write must exceed n_min_read")

    def to_dict(self):
        return {
            "tau_cos": self.tau_cos, "ratio": self.ratio,
            "n_min_read": self.n_min_read, "n_min_write": self.n_min_write,
            "theta_tol_deg": self.theta_tol_deg, "p_min": self.p_min,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in
                      ("tau_cos", "ratio", "n_min_read", "n_min_write",
                       "theta_tol_deg", "p_min") if k in d})


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple  # (query_index, map_feature_id, similarity), sorted
    inlier_count: int
    coverage: float


@dataclass(frozen=True)
class QualityScore:
    distinct_feature_count: int
    plane_count: int
    angular_diversity_deg: float

    def hosting_eligible(self, p: MatchParams) -> bool:
        return (self.distinct_feature_count >= p.n_min_write
                and self.plane_count >= p.p_min)

    def to_dict(self):
        return {
            "distinct_feature_count": self.distinct_feature_count,
            "plane_count": self.plane_count,
            "angular_diversity_deg": self.angular_diversity_deg,
        }


@dataclass(frozen=True)
class PlaneFit:
    normal: np.ndarray
    offset: float
    rms_residual: float
    inlier_fraction: float


def match_descriptors(query, map_features, p: MatchParams,
                      tau_override: float = None) -> MatchResult:
    """Greedy mutual-NN cosine matching with ratio test.

    query: sequence of unit descriptors. map_features: sequence of objects
    with .id and .descriptor. A pair survives iff it is mutual nearest,
    its similarity reaches the threshold, and the query's best/second-best
    gap passes the ratio test.
    """
    tau = p.tau_cos if tau_override is None else tau_override
    m = len(map_features)
    n = len(query)
    if n == 0 or m == 0:
        return MatchResult(pairs=(), inlier_count=0, coverage=0.0)

    q = np.asarray(query, dtype=float)
    if q.ndim != 2:
        q = np.stack(list(query))
    order = sorted(range(m), key=lambda j: map_features[j].id)
    md = np.stack([np.asarray(map_features[j].descriptor, float) for j in order])
    if q.shape[1] != md.shape[1]:
        raise DimError(f"descriptor dims differ: {q.shape[1]} vs {md.shape[1]}")

    sims = q @ md.T  # (n, m)

    best_map = np.argmax(sims, axis=1)           # first max -> smallest id
    best_query = np.argmax(sims, axis=0)         # first max -> smallest index
    s1 = sims[np.arange(n), best_map]
    keep = (best_query[best_map] == np.arange(n)) & (s1 >= tau)
    if m >= 2:
        top2 = np.partition(sims, m - 2, axis=1)[:, m - 2:]
        s2 = top2.min(axis=1)  # second-largest value in each row
        keep &= s2 <= p.ratio * s1
    pairs = [(int(i), map_features[order[best_map[i]]].id, float(s1[i]))
             for i in np.flatnonzero(keep)]
    pairs.sort(key=lambda t: (t[1], t[0]))
    return MatchResult(pairs=tuple(pairs), inlier_count=len(pairs),
                       coverage=len(pairs) / m)


def check_orientation(q1, q2, theta_tol_deg: float) -> bool:
    return np.degrees(quat_angle_between(q1, q2)) <= theta_tol_deg + 1e-9


def fit_plane(points, eps_plane: float = 0.02) -> PlaneFit:
    """Total-least-squares plane via the smallest covariance eigenvector."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 3:
        raise DegenerateError("plane fit needs at least 3 points")
    centroid = pts.mean(axis=0)
    x = pts - centroid
    cov = x.T @ x / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    # collinear (or coincident) points leave two near-zero eigenvalues
    scale = max(float(evals[2]), 1e-12)
    if evals[1] / scale < 1e-10:
        raise DegenerateError("points are collinear")
    normal = evecs[:, 0]
    dists = x @ normal
    rms = float(np.sqrt(np.mean(dists ** 2)))
    inlier_fraction = float(np.mean(np.abs(dists) <= eps_plane))
    return PlaneFit(normal=normal, offset=float(np.dot(normal, centroid)),
                    rms_residual=rms, inlier_fraction=inlier_fraction)


def triangulate(rays):
    """Least-squares point minimizing summed squared distances to rays.

    rays: sequence of (origin, direction) with unit directions.
    Returns (position, rms_residual).
    """
    if len(rays) < 2:
        raise DegenerateError("triangulation needs at least 2 rays")
    origins = np.array([np.asarray(o, dtype=float) for o, _ in rays])
    dirs = np.array([np.asarray(d, dtype=float) for _, d in rays])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    a = len(rays) * np.eye(3) - dirs.T @ dirs
    b = origins.sum(axis=0) - (dirs * (dirs * origins).sum(axis=1, keepdims=True)).sum(axis=0)
    evals = np.linalg.eigvalsh(a)
    if evals[0] < 1e-9:
        raise DegenerateError("rays are parallel; point is unconstrained")
    x = np.linalg.solve(a, b)
    rel = x - origins
    perp = rel - (rel * dirs).sum(axis=1, keepdims=True) * dirs
    sq = (perp * perp).sum(axis=1)
    return x, float(np.sqrt(float(np.mean(sq))))


def angular_diversity_deg(orientations) -> float:
    """Largest pairwise angle between viewing directions, in degrees."""
    fwds = [camera_axes(q)[2] for q in orientations]
    best = 0.0
    for i in range(len(fwds)):
        for j in range(i + 1, len(fwds)):
            c = float(np.clip(np.dot(fwds[i], fwds[j]), -1.0, 1.0))
            best = max(best, np.degrees(np.arccos(c)))
    return best


def count_observed_planes(observations, min_samples: int = 3) -> int:
    """Planes the device(s) reported seeing: distinct plane ids backed by
    at least min_samples samples across the observations."""
    counts = {}
    for obs in observations:
        for s in obs.samples:
            if s.plane_id is not None:
                counts[s.plane_id] = counts.get(s.plane_id, 0) + 1
    return sum(1 for v in counts.values() if v >= min_samples)


def score_map_quality(observations, scene_planes_observed: int,
                      p: MatchParams) -> QualityScore:
    """Hosting-quality summary of a set of key observations."""
    if not observations:
        raise DegenerateError("need at least one observation")
    distinct = _distinct_feature_count(observations, p)
    diversity = angular_diversity_deg([o.imu_orientation for o in observations])
    return QualityScore(distinct_feature_count=distinct,
                        plane_count=scene_planes_observed,
                        angular_diversity_deg=diversity)


class _Entry:
    __slots__ = ("id", "descriptor")

    def __init__(self, fid, descriptor):
        self.id = fid
        self.descriptor = descriptor


def _distinct_feature_count(observations, p: MatchParams) -> int:
    entries = []
    for obs in observations:
        descs = obs.descriptor_matrix()
        if len(descs) == 0:
            continue
        if not entries:
            matched = set()
        else:
            res = match_descriptors(descs, entries, p, tau_override=TAU_DEDUP)
            matched = {qi for qi, _, _ in res.pairs}
        for i in range(len(descs)):
            if i not in matched:
                entries.append(_Entry(len(entries), descs[i]))
    return len(entries)
