"""The shared-state service: a key-value store mapping location evidence
(visual descriptors, IMU orientation, GPS) to holograms.

One store instance is one logical state machine: every mutating call runs
under a single lock in arrival order, reads see a consistent snapshot.
The server never reads ground-truth provenance; its only evidence is what
a device uploads.
"""

import base64
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import defense as defense_mod
from .errors import (
    DefenseRejected,
    DegenerateError,
    Expired,
    HostRejected,
    KeyIncomplete,
    NotFound,
    OutOfCoverage,
    LocalizeFailed,
    PermissionDenied,
    RejectedMetadata,
    RejectedTimestamp,
    RejectedTooShort,
    ResolveFailed,
    SessionError,
    SpecError,
)
from .matching import (
    MatchParams,
    QualityScore,
    TAU_DEDUP,
    angular_diversity_deg,
    count_observed_planes,
    match_descriptors,
    triangulate,
    check_orientation,
)
from .world import GeoCoord, Observation, Pose, geo_distance_m

DAY_SECONDS = 86_400
DEFAULT_SERVER_TIME = 1_700_000_000

# Object classes the ingest pipeline knows how to detect.
KNOWN_OBJECT_CLASSES = ("stop_sign", "fire_hydrant", "lamp_post", "dig_sign")

TAU_CLASS = 0.95   # photorealism proxy: similarity to the class template
SCALE_TOL = 0.15   # apparent size must track 1/distance within this


@dataclass(frozen=True)
class SharedStateConfig:
    scope: str = "local"                  # local | global
    curation: str = "non_curated"         # curated | non_curated
    key_requirements: frozenset = frozenset({"camera", "imu"})
    anchor_ttl_days: Optional[float] = 365.0
    gps_gate_radius_m: float = 30.0
    defenses: dict = field(default_factory=dict)
    match: MatchParams = field(default_factory=MatchParams)
    server_time: int = DEFAULT_SERVER_TIME
    debug_verdicts: bool = False

    def __post_init__(self):
        if self.scope not in ("local", "global"):
            raise SpecError(f"unknown scope: {self.scope}")
        if self.curation not in ("curated", "non_curated"):
            raise SpecError(f"unknown curation: {self.curation}")
        if self.scope == "local" and "gps" in self.key_requirements:
            raise SpecError("local scope must not require gps keys")
        if self.scope == "local":
            if self.anchor_ttl_days is None or self.anchor_ttl_days > 365.0:
                raise SpecError("local anchors cannot live beyond 365 days")

    def to_dict(self):
        return {
            "scope": self.scope,
            "curation": self.curation,
            "key_requirements": sorted(self.key_requirements),
            "anchor_ttl_days": self.anchor_ttl_days,
            "gps_gate_radius_m": self.gps_gate_radius_m,
            "defenses": self.defenses,
            "match": self.match.to_dict(),
            "server_time": self.server_time,
            "debug_verdicts": self.debug_verdicts,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            scope=d.get("scope", "local"),
            curation=d.get("curation", "non_curated"),
            key_requirements=frozenset(d.get("key_requirements", ["camera", "imu"])),
            anchor_ttl_days=d.get("anchor_ttl_days", 365.0),
            gps_gate_radius_m=d.get("gps_gate_radius_m", 30.0),
            defenses=d.get("defenses", {}),
            match=MatchParams.from_dict(d.get("match", {})),
            server_time=d.get("server_time", DEFAULT_SERVER_TIME),
            debug_verdicts=d.get("debug_verdicts", False),
        )


@dataclass(frozen=True)
class Principal:
    id: str
    role: str  # curator | user
    token: str


@dataclass(frozen=True)
class MapFeature:
    id: int
    descriptor: np.ndarray
    position: np.ndarray


@dataclass(frozen=True)
class MapRegion:
    id: str
    features: tuple
    quality: QualityScore
    geo: Optional[GeoCoord] = None
    geo_track: tuple = ()


@dataclass(frozen=True)
class Hologram:
    id: str
    payload: bytes
    label: str
    pose_in_region: Pose
    object_class: Optional[str] = None

    def __post_init__(self):
        if not self.payload:
            raise SpecError("hologram payload must be non-empty")

    def to_dict(self):
        return {
            "id": self.id,
            "payload": base64.b64encode(self.payload).decode("ascii"),
            "label": self.label,
            "pose_in_region": self.pose_in_region.to_dict(),
            "object_class": self.object_class,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=d["id"],
            payload=base64.b64decode(d["payload"]),
            label=d["label"],
            pose_in_region=Pose.from_dict(d["pose_in_region"]),
            object_class=d.get("object_class"),
        )


@dataclass(frozen=True)
class Anchor:
    id: int
    map: MapRegion
    hologram: Hologram
    owner: str
    created_at: int
    expires_at: Optional[int]
    host_imu: np.ndarray


@dataclass(frozen=True)
class ResolveResult:
    anchor_id: int
    hologram: Hologram
    region_pose: Pose
    inlier_count: int
    verdicts: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LocalizeResult:
    region_id: str
    geo: Optional[GeoCoord]
    inlier_count: int
    holograms: tuple
    verdicts: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ObjectVerdict:
    object_class: str
    accepted: bool
    reason: str
    position: Optional[np.ndarray] = None
    appearances: int = 0


@dataclass(frozen=True)
class IngestResult:
    region_id: str
    hologram_ids: tuple
    object_verdicts: tuple
    object_hologram_ids: tuple


class SharedStateStore:
    """Linearizable in-memory shared state for one deployment."""

    def __init__(self, config: SharedStateConfig):
        self.config = config
        self._lock = threading.RLock()
        self._principals = {}       # token -> Principal
        self._anchors = {}          # int code -> Anchor
        self._regions = {}          # str id -> MapRegion
        self._region_holograms = {} # region id -> list[Hologram]
        self._sessions = {}         # principal id -> last localized region id
        self._tokens = {}           # token key -> (epoch, descriptor)
        self._next_code = 1
        self._next_region = 1
        self._next_hologram = 1
        self._next_principal = 1

    # -- principals ---------------------------------------------------------

    def register_principal(self, role: str) -> Principal:
        if role not in ("curator", "user"):
            raise SpecError(f"unknown role: {role}")
        with self._lock:
            pid = f"p{self._next_principal}"
            self._next_principal += 1
            principal = Principal(id=pid, role=role, token=f"tok-{pid}")
            self._principals[principal.token] = principal
            return principal

    def _auth(self, token: str) -> Principal:
        principal = self._principals.get(token)
        if principal is None:
            raise PermissionDenied("unknown credentials")
        return principal

    _NO_IMU_ARG = object()  # ops whose IMU rides inside the observations

    def _require_keys(self, observations, imu=_NO_IMU_ARG):
        req = self.config.key_requirements
        if "camera" in req and not any(o.samples for o in observations):
            raise KeyIncomplete("camera key required")
        if "imu" in req and imu is not self._NO_IMU_ARG and imu is None:
            raise KeyIncomplete("imu key required")
        if "gps" in req and not all(o.gps is not None for o in observations):
            raise KeyIncomplete("gps key required")

    def _enforce(self, principal, kind, observations, anchor=None):
        """Run the policy chain; translate denials into typed errors."""
        decision = defense_mod.enforce_policy(
            store=self, principal=principal, kind=kind,
            observations=observations, anchor=anchor,
        )
        if not decision.allowed:
            if decision.reason == "permissions":
                raise PermissionDenied("map writes are restricted to curators")
            raise DefenseRejected(decision.reason)
        return decision

    # -- scenario A: anchors ------------------------------------------------

    def host_anchor(self, token, observations, hologram: Hologram, imu) -> dict:
        principal = self._auth(token)
        if not observations:
            raise KeyIncomplete("at least one observation required")
        self._require_keys(observations, imu)
        with self._lock:
            decision = self._enforce(principal, "map_write", observations)
            planes = count_observed_planes(observations)
            features = build_map_features(observations, self.config.match)
            # equivalent to score_map_quality: the dedup pass is shared with
            # the map build instead of being run twice
            quality = QualityScore(
                distinct_feature_count=len(features),
                plane_count=planes,
                angular_diversity_deg=angular_diversity_deg(
                    [o.imu_orientation for o in observations]),
            )
            if not quality.hosting_eligible(self.config.match):
                raise HostRejected(
                    f"map quality below hosting gate: {quality.to_dict()}",
                    quality=quality.to_dict(),
                )
            code = self._next_code
            self._next_code += 1
            region = MapRegion(id=f"anchor-{code}", features=tuple(features),
                               quality=quality)
            ttl = self.config.anchor_ttl_days
            expires = (None if ttl is None
                       else self.config.server_time + int(ttl * DAY_SECONDS))
            stored = Hologram(
                id=f"h{self._next_hologram}", payload=hologram.payload,
                label=hologram.label, pose_in_region=hologram.pose_in_region,
                object_class=hologram.object_class,
            )
            self._next_hologram += 1
            self._anchors[code] = Anchor(
                id=code, map=region, hologram=stored, owner=principal.id,
                created_at=self.config.server_time, expires_at=expires,
                host_imu=np.asarray(imu, dtype=float),
            )
            return {"anchor_id": code, "quality": quality.to_dict(),
                    "verdicts": decision.verdicts if self.config.debug_verdicts else {}}

    def anchor_exists(self, token, anchor_id: int) -> bool:
        self._auth(token)
        with self._lock:
            a = self._anchors.get(int(anchor_id))
            if a is None:
                return False
            return not self._expired(a)

    def _expired(self, anchor: Anchor) -> bool:
        return anchor.expires_at is not None and anchor.expires_at < self.config.server_time

    def resolve_anchor(self, token, anchor_id, observation: Observation, imu) -> ResolveResult:
        principal = self._auth(token)
        with self._lock:
            anchor = self._anchors.get(int(anchor_id))
            if anchor is None:
                raise NotFound(f"no anchor with id {anchor_id}")
            if self._expired(anchor):
                raise Expired(f"anchor {anchor_id} has expired")
            self._require_keys([observation], imu)
            decision = self._enforce(principal, "read", [observation], anchor=anchor)
            p = self.config.match
            result = match_descriptors(observation.descriptor_matrix(),
                                       anchor.map.features, p)
            orientation_ok = check_orientation(imu, anchor.host_imu, p.theta_tol_deg)
            if result.inlier_count < p.n_min_read or not orientation_ok:
                raise ResolveFailed(
                    f"inliers={result.inlier_count} orientation_ok={orientation_ok}")
            assert result.inlier_count >= p.n_min_read
            return ResolveResult(
                anchor_id=anchor.id, hologram=anchor.hologram,
                region_pose=anchor.hologram.pose_in_region,
                inlier_count=result.inlier_count,
                verdicts=decision.verdicts if self.config.debug_verdicts else {},
            )

    def expire_anchors(self, now: int) -> int:
        with self._lock:
            dead = [code for code, a in self._anchors.items()
                    if a.expires_at is not None and a.expires_at < now]
            for code in dead:
                del self._anchors[code]
            return len(dead)

    # -- scenario B: geo-indexed regions ------------------------------------

    def localize_vps(self, token, observation: Observation) -> LocalizeResult:
        principal = self._auth(token)
        if self.config.scope != "global":
            raise SpecError("VPS localization requires a global-scope store")
        if observation.gps is None:
            raise KeyIncomplete("gps key required for VPS localization")
        self._require_keys([observation])
        with self._lock:
            decision = self._enforce(principal, "read", [observation])
            gate = self.config.gps_gate_radius_m
            candidates = [
                r for r in sorted(self._regions.values(), key=lambda r: r.id)
                if r.geo is not None and geo_distance_m(r.geo, observation.gps) <= gate
            ]
            if not candidates:
                raise OutOfCoverage("no mapped region within the GPS gate")
            p = self.config.match
            best = None
            query = observation.descriptor_matrix()
            for region in candidates:
                res = match_descriptors(query, region.features, p)
                if best is None or res.inlier_count > best[1]:
                    best = (region, res.inlier_count)
            region, inliers = best
            if inliers < p.n_min_read:
                raise LocalizeFailed(f"best region match has {inliers} inliers")
            assert geo_distance_m(region.geo, observation.gps) <= gate
            self._sessions[principal.id] = region.id
            return LocalizeResult(
                region_id=region.id, geo=region.geo, inlier_count=inliers,
                holograms=tuple(self._region_holograms.get(region.id, ())),
                verdicts=decision.verdicts if self.config.debug_verdicts else {},
            )

    def place_geospatial_hologram(self, token, region_id: str, hologram: Hologram) -> str:
        principal = self._auth(token)
        with self._lock:
            if self._sessions.get(principal.id) != region_id:
                raise SessionError("place requires a prior successful localization")
            if region_id not in self._regions:
                raise NotFound(f"no region {region_id}")
            stored = Hologram(
                id=f"h{self._next_hologram}", payload=hologram.payload,
                label=hologram.label, pose_in_region=hologram.pose_in_region,
                object_class=hologram.object_class,
            )
            self._next_hologram += 1
            self._region_holograms.setdefault(region_id, []).append(stored)
            return stored.id

    # -- scenario C: crowd-sourced ingest ------------------------------------

    def ingest_sequence(self, token, sequence, holograms=()) -> IngestResult:
        principal = self._auth(token)
        with self._lock:
            self._enforce(principal, "map_write", sequence)
            self._validate_sequence(sequence)
            features = build_map_features(sequence, self.config.match,
                                          triangulate_positions=True)
            geo = sequence[0].exif.geo
            track = tuple(o.exif.geo for o in sequence)
            planes = count_observed_planes(sequence)
            quality = QualityScore(
                distinct_feature_count=len(features),
                plane_count=planes,
                angular_diversity_deg=angular_diversity_deg(
                    [o.imu_orientation for o in sequence]),
            )
            region_id = f"region-{self._next_region}"
            self._next_region += 1
            region = MapRegion(id=region_id, features=tuple(features),
                               quality=quality, geo=geo, geo_track=track)
            self._regions[region_id] = region
            stored_ids = []
            for holo in holograms:
                stored = Hologram(
                    id=f"h{self._next_hologram}", payload=holo.payload,
                    label=holo.label, pose_in_region=holo.pose_in_region,
                    object_class=holo.object_class,
                )
                self._next_hologram += 1
                self._region_holograms.setdefault(region_id, []).append(stored)
                stored_ids.append(stored.id)
            verdicts = self.detect_objects(sequence)
            object_ids = []
            for v in verdicts:
                if not v.accepted:
                    continue
                stored = Hologram(
                    id=f"h{self._next_hologram}",
                    payload=v.object_class.encode(),
                    label=v.object_class,
                    pose_in_region=Pose(position=v.position,
                                        orientation=np.array([1.0, 0, 0, 0])),
                    object_class=v.object_class,
                )
                self._next_hologram += 1
                self._region_holograms.setdefault(region_id, []).append(stored)
                object_ids.append(stored.id)
            return IngestResult(
                region_id=region_id, hologram_ids=tuple(stored_ids),
                object_verdicts=tuple(verdicts),
                object_hologram_ids=tuple(object_ids),
            )

    def _validate_sequence(self, sequence):
        """Formal metadata validation. Deliberately never cross-checks image
        content against the claimed GPS; acceptance depends only on form."""
        if len(sequence) < 3:
            raise RejectedTooShort(f"sequence of {len(sequence)} images; need >= 3")
        for obs in sequence:
            if obs.exif is None or obs.exif.geo is None or obs.exif.timestamp is None:
                raise RejectedMetadata("every image needs complete EXIF geo+time")
        now = self.config.server_time
        prev = None
        for obs in sequence:
            ts = obs.exif.timestamp
            if ts > now:
                raise RejectedTimestamp(f"timestamp {ts} is in the future")
            if prev is not None and ts < prev:
                raise RejectedTimestamp("timestamps must be non-decreasing")
            prev = ts

    def detect_objects(self, sequence) -> tuple:
        """Object detection over an accepted upload: a class hologram is
        placed when it shows up in >= 3 images, resembles the canonical
        class template, and its apparent size tracks 1/distance."""
        from .world import class_template  # local import to avoid cycle at load

        verdicts = []
        for cls in KNOWN_OBJECT_CLASSES:
            template = class_template(cls)
            hits = []  # (obs, sample)
            for obs in sequence:
                best = None
                for s in obs.samples:
                    sim = float(np.dot(s.descriptor, template))
                    if sim >= TAU_CLASS and (best is None or sim > best[0]):
                        best = (sim, s)
                if best is not None:
                    hits.append((obs, best[1]))
            if not hits:
                continue
            if len(hits) < 3:
                verdicts.append(ObjectVerdict(cls, False, "too_few_images",
                                              appearances=len(hits)))
                continue
            rays = []
            for obs, s in hits:
                idx = obs.samples.index(s)
                rays.append((obs.pose.position, obs.pixel_rays()[idx]))
            try:
                position, _ = triangulate(rays)
            except DegenerateError:
                verdicts.append(ObjectVerdict(cls, False, "degenerate_geometry",
                                              appearances=len(hits)))
                continue
            scale_consts = []
            for obs, s in hits:
                dist = float(np.linalg.norm(position - obs.pose.position))
                if dist < 1e-6:
                    dist = 1e-6
                scale_consts.append(s.size_px * dist)
            k = float(np.median(scale_consts))
            consistent = all(abs(c - k) / k <= SCALE_TOL for c in scale_consts)
            if not consistent:
                verdicts.append(ObjectVerdict(cls, False, "scale_inconsistent",
                                              appearances=len(hits)))
                continue
            verdicts.append(ObjectVerdict(cls, True, "accepted",
                                          position=position, appearances=len(hits)))
        return tuple(verdicts)

    def read_crowd_map(self, token, observation: Observation) -> tuple:
        """Descriptor-only read: GPS is deliberately not part of the key."""
        self._auth(token)
        with self._lock:
            p = self.config.match
            query = observation.descriptor_matrix()
            best = None
            for region in sorted(self._regions.values(), key=lambda r: r.id):
                res = match_descriptors(query, region.features, p)
                if best is None or res.inlier_count > best[1]:
                    best = (region, res.inlier_count)
            if best is None or best[1] < p.n_min_read:
                raise ResolveFailed("no region matches the observation")
            region, _ = best
            return tuple(self._region_holograms.get(region.id, ()))

    # -- tokens (rotating locality features) ---------------------------------

    def register_token(self, key: str, epoch: int, descriptor: np.ndarray):
        with self._lock:
            current = self._tokens.get(key)
            if current is not None and epoch <= current[0]:
                from .errors import EpochError
                raise EpochError(f"token epoch must increase (have {current[0]})")
            self._tokens[key] = (int(epoch), np.asarray(descriptor, dtype=float))

    def current_token(self, key: str):
        return self._tokens.get(key)

    # -- snapshot -------------------------------------------------------------

    def snapshot(self) -> dict:
        def feat(f):
            return {"id": f.id, "descriptor": [float(v) for v in f.descriptor],
                    "position": [float(v) for v in f.position]}

        def region(r):
            return {
                "id": r.id,
                "features": [feat(f) for f in r.features],
                "quality": r.quality.to_dict(),
                "geo": r.geo.to_dict() if r.geo else None,
                "geo_track": [g.to_dict() for g in r.geo_track],
            }

        with self._lock:
            return {
                "config": self.config.to_dict(),
                "principals": [
                    {"id": p.id, "role": p.role, "token": p.token}
                    for p in sorted(self._principals.values(), key=lambda p: p.id)
                ],
                "anchors": [
                    {
                        "id": a.id, "map": region(a.map),
                        "hologram": a.hologram.to_dict(), "owner": a.owner,
                        "created_at": a.created_at, "expires_at": a.expires_at,
                        "host_imu": [float(v) for v in a.host_imu],
                    }
                    for a in sorted(self._anchors.values(), key=lambda a: a.id)
                ],
                "regions": [region(r) for r in sorted(self._regions.values(),
                                                      key=lambda r: r.id)],
                "region_holograms": {
                    rid: [h.to_dict() for h in hs]
                    for rid, hs in sorted(self._region_holograms.items())
                },
                "sessions": dict(sorted(self._sessions.items())),
                "tokens": {
                    k: {"epoch": e, "descriptor": [float(v) for v in d]}
                    for k, (e, d) in sorted(self._tokens.items())
                },
                "counters": {
                    "next_code": self._next_code,
                    "next_region": self._next_region,
                    "next_hologram": self._next_hologram,
                    "next_principal": self._next_principal,
                },
            }

    def load_snapshot(self, snap: dict):
        def feat(d):
            return MapFeature(id=d["id"], descriptor=np.array(d["descriptor"]),
                              position=np.array(d["position"]))

        def region(d):
            return MapRegion(
                id=d["id"],
                features=tuple(feat(f) for f in d["features"]),
                quality=QualityScore(**d["quality"]),
                geo=GeoCoord.from_dict(d["geo"]) if d.get("geo") else None,
                geo_track=tuple(GeoCoord.from_dict(g) for g in d.get("geo_track", [])),
            )

        with self._lock:
            self.config = SharedStateConfig.from_dict(snap["config"])
            self._principals = {
                p["token"]: Principal(id=p["id"], role=p["role"], token=p["token"])
                for p in snap["principals"]
            }
            self._anchors = {
                a["id"]: Anchor(
                    id=a["id"], map=region(a["map"]),
                    hologram=Hologram.from_dict(a["hologram"]), owner=a["owner"],
                    created_at=a["created_at"], expires_at=a["expires_at"],
                    host_imu=np.array(a["host_imu"]),
                )
                for a in snap["anchors"]
            }
            self._regions = {r["id"]: region(r) for r in snap["regions"]}
            self._region_holograms = {
                rid: [Hologram.from_dict(h) for h in hs]
                for rid, hs in snap["region_holograms"].items()
            }
            self._sessions = dict(snap["sessions"])
            self._tokens = {
                k: (v["epoch"], np.array(v["descriptor"]))
                for k, v in snap["tokens"].items()
            }
            c = snap["counters"]
            self._next_code = c["next_code"]
            self._next_region = c["next_region"]
            self._next_hologram = c["next_hologram"]
            self._next_principal = c["next_principal"]


# --------------------------------------------------------------------------
# map construction (dedup by mutual matching; positions by triangulation)
# --------------------------------------------------------------------------

class _MapEntry:
    __slots__ = ("id", "descriptor", "rays", "first_point")

    def __init__(self, fid, descriptor, ray, point):
        self.id = fid
        self.descriptor = descriptor
        self.rays = [ray]
        self.first_point = point


def build_map_features(observations, params: MatchParams,
                       triangulate_positions: bool = False):
    """Merge observations into stored map features.

    Dedup is mutual descriptor matching at a looser threshold than resolve;
    the first-seen descriptor is kept. Positions come from the device's
    claimed geometry: triangulated across views when requested and possible,
    otherwise back-projected pixel+depth.
    """
    entries = []
    for obs in observations:
        descs = obs.descriptor_matrix()
        if len(descs) == 0:
            continue
        points = obs.backprojected_points()
        rays = obs.pixel_rays()
        origin = obs.pose.position
        matched = {}
        if entries:
            res = match_descriptors(descs, entries, params, tau_override=TAU_DEDUP)
            matched = {qi: fid for qi, fid, _ in res.pairs}
        by_id = {e.id: e for e in entries}
        for i in range(len(descs)):
            if i in matched:
                by_id[matched[i]].rays.append((origin, rays[i]))
            else:
                entries.append(_MapEntry(len(entries), descs[i],
                                         (origin, rays[i]), points[i]))
    features = []
    for e in entries:
        position = e.first_point
        if triangulate_positions and len(e.rays) >= 2:
            try:
                position, _ = triangulate(e.rays)
            except DegenerateError:
                position = e.first_point
        features.append(MapFeature(id=e.id, descriptor=e.descriptor,
                                   position=np.asarray(position, dtype=float)))
    return features
