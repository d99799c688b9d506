"""Synthetic world model: scenes, device captures, and display spoofs.

A Scene is a box of descriptor-bearing feature points (some lying on
planes, some free, plus optional trigger/object/token features). A
genuine Observation is what a device camera sees from a pose: per-feature
noisy descriptor, pixel, range depth, and apparent footprint. A spoof
Observation is what the camera sees when pointed at a flat display
showing a previously captured photo: every depth collapses onto the
display plane, small features stop being resolvable with distance, and
focus breaks down when the camera is too close.

All operations are pure functions of (inputs, seed).
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ProvenanceError, SpecError
from .geometry import (
    camera_axes,
    look_at_quat,
    quat_from_axis_angle,
    quat_multiply,
    quat_normalize,
    roll_mode,
)
from .rng import generator, unit_vector

DESCRIPTOR_DIM = 32

# How aggressively clutter objects block line-of-sight to features behind
# them. Half-angle of the blocked cone is atan(extent * SCALE / 2 / range).
OCCLUSION_SCALE = 2.4

# Apparent-footprint threshold in attacker-camera pixels below which a
# displayed texture feature is no longer resolvable.
RESOLVABLE_PX = 1.0

METERS_PER_DEG_LAT = 111_320.0


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GeoCoord:
    lat: float
    lon: float
    alt: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise SpecError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise SpecError(f"longitude out of range: {self.lon}")

    def to_dict(self):
        return {"lat": self.lat, "lon": self.lon, "alt": self.alt}

    @classmethod
    def from_dict(cls, d):
        return cls(lat=d["lat"], lon=d["lon"], alt=d.get("alt", 0.0))


@dataclass(frozen=True)
class ExifRecord:
    """Image metadata as uploaded. Forged records must be representable,
    so nothing is validated here; the ingest pipeline is the gatekeeper."""

    geo: Optional[GeoCoord]
    timestamp: Optional[int]

    def to_dict(self):
        return {
            "geo": self.geo.to_dict() if self.geo is not None else None,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d):
        geo = d.get("geo")
        return cls(
            geo=GeoCoord.from_dict(geo) if geo is not None else None,
            timestamp=d.get("timestamp"),
        )


def geo_offset(origin: GeoCoord, dxyz) -> GeoCoord:
    """Offset a geo coordinate by local meters (x east, y north, z up)."""
    dx, dy, dz = float(dxyz[0]), float(dxyz[1]), float(dxyz[2])
    lat = origin.lat + dy / METERS_PER_DEG_LAT
    lon = origin.lon + dx / (METERS_PER_DEG_LAT * max(0.01, np.cos(np.radians(origin.lat))))
    return GeoCoord(lat=lat, lon=lon, alt=origin.alt + dz)


def geo_distance_m(a: GeoCoord, b: GeoCoord) -> float:
    """Equirectangular approximation; plenty at the scales simulated here."""
    dlat = (b.lat - a.lat) * METERS_PER_DEG_LAT
    mean_lat = np.radians(0.5 * (a.lat + b.lat))
    dlon = (b.lon - a.lon) * METERS_PER_DEG_LAT * np.cos(mean_lat)
    dalt = b.alt - a.alt
    return float(np.sqrt(dlat * dlat + dlon * dlon + dalt * dalt))


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", quat_normalize(self.orientation))

    @property
    def roll_mode(self) -> str:
        return roll_mode(self.orientation)

    @classmethod
    def look_at(cls, eye, target, world_up=(0.0, 0.0, 1.0)):
        return cls(position=np.asarray(eye, dtype=float),
                   orientation=look_at_quat(eye, target, world_up))

    def rolled(self, angle_deg: float) -> "Pose":
        """Same viewpoint, device rolled about its optical axis."""
        _, _, fwd = camera_axes(self.orientation)
        q = quat_multiply(quat_from_axis_angle(fwd, np.radians(angle_deg)), self.orientation)
        return Pose(position=self.position, orientation=q)

    def to_dict(self):
        return {"position": [float(v) for v in self.position],
                "orientation": [float(v) for v in self.orientation]}

    @classmethod
    def from_dict(cls, d):
        return cls(position=np.array(d["position"], dtype=float),
                   orientation=np.array(d["orientation"], dtype=float))


@dataclass(frozen=True)
class CameraParams:
    fov_deg: float = 70.0
    max_range: float = 12.0
    min_focus: float = 0.5
    pixels: tuple = (640, 480)
    sigma_descriptor: float = 0.056
    sigma_depth: float = 0.01
    k_defocus: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise SpecError(f"fov_deg out of range: {self.fov_deg}")
        if not self.min_focus < self.max_range:
            raise SpecError("min_focus must be below max_range")
        if self.sigma_descriptor < 0 or self.sigma_depth < 0:
            raise SpecError("noise sigmas must be non-negative")

    @property
    def focal_px(self) -> float:
        return (self.pixels[0] / 2.0) / np.tan(np.radians(self.fov_deg) / 2.0)

    def defocus(self, d: float) -> float:
        if d < self.min_focus:
            return 1.0 + self.k_defocus * (self.min_focus - d) / self.min_focus
        return 1.0


@dataclass(frozen=True)
class FeaturePoint:
    id: int
    position: np.ndarray
    descriptor: np.ndarray  # unit norm, DESCRIPTOR_DIM components
    tag: str = "base"  # base | clutter | trigger | token | object:<class>
    extent_m: float = 0.05  # physical footprint driving apparent pixel size
    plane_id: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        d = np.asarray(self.descriptor, dtype=float)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-12:
            d = d / n
        object.__setattr__(self, "descriptor", d)

    @property
    def object_class(self) -> Optional[str]:
        return self.tag.split(":", 1)[1] if self.tag.startswith("object:") else None


@dataclass(frozen=True)
class PlaneSpec:
    id: int
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if abs(norm - 1.0) > 1e-12:
            n = n / norm
        object.__setattr__(self, "normal", n)


@dataclass(frozen=True)
class Sample:
    """One observed feature: what the device reports to the service."""

    feature_id: Optional[int]  # None when the device cannot attribute it
    descriptor: np.ndarray
    pixel: np.ndarray
    depth: float
    size_px: float
    plane_id: Optional[int] = None


@dataclass(frozen=True)
class Observation:
    pose: Pose
    samples: tuple
    imu_orientation: np.ndarray
    gps: Optional[GeoCoord] = None
    exif: Optional[ExifRecord] = None
    # Ground truth for evaluation only; stripped by the wire codec and
    # never read by server logic.
    provenance: tuple = ("genuine", None)
    pixel_size: tuple = (640, 480)
    focal_px: float = 457.0  # device intrinsics, shipped with the capture

    def __post_init__(self):
        object.__setattr__(self, "imu_orientation", quat_normalize(self.imu_orientation))
        for s in self.samples:
            if s.depth <= 0:
                raise SpecError("observation depths must be positive")

    def descriptor_matrix(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, DESCRIPTOR_DIM))
        return np.stack([s.descriptor for s in self.samples])

    def pixel_rays(self) -> np.ndarray:
        """Unit ray directions of each sample in the claimed pose's frame."""
        if not self.samples:
            return np.zeros((0, 3))
        right, down, fwd = camera_axes(self.pose.orientation)
        w, h = self.pixel_size
        px = np.array([s.pixel for s in self.samples])
        xc = (px[:, 0] - w / 2.0) / self.focal_px
        yc = (px[:, 1] - h / 2.0) / self.focal_px
        rays = xc[:, None] * right + yc[:, None] * down + fwd
        return rays / np.linalg.norm(rays, axis=1, keepdims=True)

    def backprojected_points(self) -> np.ndarray:
        """3D points implied by pixel+depth in the claimed pose's frame."""
        if not self.samples:
            return np.zeros((0, 3))
        rays = self.pixel_rays()
        depths = np.array([s.depth for s in self.samples])
        return self.pose.position + depths[:, None] * rays

    @property
    def is_spoof(self) -> bool:
        return self.provenance[0] == "spoof"

    def with_gps(self, gps: Optional[GeoCoord]) -> "Observation":
        return replace(self, gps=gps)

    def with_exif(self, exif: Optional[ExifRecord]) -> "Observation":
        return replace(self, exif=exif)


@dataclass(frozen=True)
class SpoofSurface:
    """A photo/monitor showing a previously captured observation.

    plane_pose follows a projector-camera convention: the orientation's
    (right, down) axes span the display surface and the viewer stands on
    the -forward side, so a device facing the display reproduces the
    source photo's orientation.
    """

    id: str
    source: Observation
    physical_size: tuple  # (width_m, height_m)
    plane_pose: Pose

    @property
    def texture(self):
        """Texture features in display-local planar coordinates."""
        w, h = self.source.pixel_size
        sw, sh = self.physical_size
        out = []
        for s in self.source.samples:
            x_local = (s.pixel[0] - w / 2.0) * (sw / w)
            y_local = (s.pixel[1] - h / 2.0) * (sh / h)
            out.append((x_local, y_local, s.descriptor, s.size_px, s.plane_id))
        return out


@dataclass(frozen=True)
class Scene:
    id: str
    features: tuple
    planes: tuple
    bounds: tuple  # ((xmin, ymin, zmin), (xmax, ymax, zmax))
    trigger_features: tuple = ()
    token_slot: Optional[np.ndarray] = None
    geo_origin: Optional[GeoCoord] = None

    def __post_init__(self):
        lo, hi = np.asarray(self.bounds[0], float), np.asarray(self.bounds[1], float)
        ids = [f.id for f in self.features]
        if len(ids) != len(set(ids)):
            raise SpecError("feature ids must be unique within a scene")
        for f in self.features:
            if np.any(f.position < lo - 1e-9) or np.any(f.position > hi + 1e-9):
                raise SpecError(f"feature {f.id} outside scene bounds")
        trig_ids = {f.id for f in self.trigger_features}
        if trig_ids & set(ids):
            raise SpecError("trigger features must be disjoint from base features")
        for f in self.trigger_features:
            if f.tag != "trigger":
                raise SpecError("trigger features must carry the trigger tag")

    @property
    def center(self) -> np.ndarray:
        lo, hi = np.asarray(self.bounds[0], float), np.asarray(self.bounds[1], float)
        return (lo + hi) / 2.0

    def next_feature_id(self) -> int:
        used = [f.id for f in self.features] + [f.id for f in self.trigger_features]
        return (max(used) + 1) if used else 0

    def with_trigger_installed(self) -> "Scene":
        """Physically place the trigger features into the environment."""
        if not self.trigger_features:
            return self
        return replace(self, features=self.features + self.trigger_features,
                       trigger_features=())

    def with_token_feature(self, token_feature: FeaturePoint) -> "Scene":
        """Install/replace the rotating locality token at the token slot."""
        if self.token_slot is None:
            raise SpecError("scene has no token slot")
        kept = tuple(f for f in self.features if f.tag != "token")
        return replace(self, features=kept + (token_feature,))

    def with_features_installed(self, feats) -> "Scene":
        """Physically add foreign features (e.g. an attacker's trigger marks
        carried into this environment), re-identified to avoid id clashes."""
        lo = np.asarray(self.bounds[0], float)
        hi = np.asarray(self.bounds[1], float)
        next_id = self.next_feature_id()
        added = []
        for k, f in enumerate(feats):
            added.append(replace(f, id=next_id + k,
                                 position=np.clip(f.position, lo, hi)))
        return replace(self, features=self.features + tuple(added))


@dataclass(frozen=True)
class SceneSpec:
    name: str = "scene"
    feature_count: int = 200
    plane_count: int = 3
    bounds: tuple = ((-3.0, -3.0, 0.0), (3.0, 3.0, 3.0))
    plane_fraction: float = 0.6
    feature_extent: tuple = (0.03, 0.09)
    trigger_count: int = 0
    objects: tuple = ()  # tuples of (class_name, (x, y, z) or None)
    with_token: bool = False
    geo: Optional[GeoCoord] = None

    def to_dict(self):
        return {
            "name": self.name,
            "feature_count": self.feature_count,
            "plane_count": self.plane_count,
            "bounds": [list(self.bounds[0]), list(self.bounds[1])],
            "plane_fraction": self.plane_fraction,
            "feature_extent": list(self.feature_extent),
            "trigger_count": self.trigger_count,
            "objects": [[c, list(p) if p is not None else None] for c, p in self.objects],
            "with_token": self.with_token,
            "geo": self.geo.to_dict() if self.geo else None,
        }

    @classmethod
    def from_dict(cls, d):
        geo = d.get("geo")
        return cls(
            name=d.get("name", "scene"),
            feature_count=int(d.get("feature_count", 200)),
            plane_count=int(d.get("plane_count", 3)),
            bounds=(tuple(d.get("bounds", [[-3, -3, 0], [3, 3, 3]])[0]),
                    tuple(d.get("bounds", [[-3, -3, 0], [3, 3, 3]])[1])),
            plane_fraction=float(d.get("plane_fraction", 0.6)),
            feature_extent=tuple(d.get("feature_extent", (0.03, 0.09))),
            trigger_count=int(d.get("trigger_count", 0)),
            objects=tuple((c, tuple(p) if p is not None else None)
                          for c, p in d.get("objects", [])),
            with_token=bool(d.get("with_token", False)),
            geo=GeoCoord.from_dict(geo) if geo else None,
        )


@dataclass(frozen=True)
class Perturbation:
    kind: str  # add_clutter | remove | lighting
    value: float

    @classmethod
    def add_clutter(cls, k: int):
        return cls("add_clutter", int(k))

    @classmethod
    def remove(cls, k: int):
        return cls("remove", int(k))

    @classmethod
    def lighting(cls, delta: float):
        return cls("lighting", float(delta))


# --------------------------------------------------------------------------
# class templates for object-tagged features (known to the ingest pipeline)
# --------------------------------------------------------------------------

def class_template(class_name: str) -> np.ndarray:
    """Canonical descriptor for an object class, shared device/server."""
    return unit_vector(generator("object-class", class_name), DESCRIPTOR_DIM)


# --------------------------------------------------------------------------
# scene generation and perturbation
# --------------------------------------------------------------------------

def generate_scene(spec: SceneSpec, seed: int) -> Scene:
    if spec.feature_count < 0 or spec.plane_count < 0:
        raise SpecError("feature_count and plane_count must be non-negative")
    lo = np.asarray(spec.bounds[0], dtype=float)
    hi = np.asarray(spec.bounds[1], dtype=float)
    if np.any(hi <= lo):
        raise SpecError("scene bounds must have positive extent")

    rng = generator("scene", spec.name, seed)
    planes = []
    for pid in range(spec.plane_count):
        point = rng.uniform(lo + 0.15 * (hi - lo), hi - 0.15 * (hi - lo))
        normal = unit_vector(rng, 3)
        planes.append(PlaneSpec(id=pid, point=point, normal=normal))

    features = []
    n_on_planes = int(round(spec.plane_fraction * spec.feature_count)) if planes else 0
    next_id = 0
    for i in range(n_on_planes):
        plane = planes[i % len(planes)]
        pos = _point_on_plane_in_box(rng, plane, lo, hi)
        features.append(FeaturePoint(
            id=next_id,
            position=pos,
            descriptor=unit_vector(rng, DESCRIPTOR_DIM),
            tag="base",
            extent_m=float(rng.uniform(*spec.feature_extent)),
            plane_id=plane.id,
        ))
        next_id += 1
    for _ in range(spec.feature_count - n_on_planes):
        features.append(FeaturePoint(
            id=next_id,
            position=rng.uniform(lo, hi),
            descriptor=unit_vector(rng, DESCRIPTOR_DIM),
            tag="base",
            extent_m=float(rng.uniform(*spec.feature_extent)),
            plane_id=None,
        ))
        next_id += 1

    for class_name, pos in spec.objects:
        position = np.asarray(pos, dtype=float) if pos is not None else rng.uniform(lo, hi)
        descriptor = class_template(class_name) + 0.02 * rng.standard_normal(DESCRIPTOR_DIM)
        features.append(FeaturePoint(
            id=next_id,
            position=np.clip(position, lo, hi),
            descriptor=descriptor / np.linalg.norm(descriptor),
            tag=f"object:{class_name}",
            extent_m=0.6,
            plane_id=None,
        ))
        next_id += 1

    triggers = []
    if spec.trigger_count > 0:
        # the trigger sits at the attack target (scene center), where both
        # the hologram placement and the victim's attention are
        center = (lo + hi) / 2.0 + rng.uniform(-0.4, 0.4, size=3)
        for _ in range(spec.trigger_count):
            pos = np.clip(center + rng.uniform(-0.15, 0.15, size=3), lo, hi)
            triggers.append(FeaturePoint(
                id=next_id,
                position=pos,
                descriptor=unit_vector(rng, DESCRIPTOR_DIM),
                tag="trigger",
                extent_m=float(rng.uniform(*spec.feature_extent)),
                plane_id=None,
            ))
            next_id += 1

    token_slot = None
    if spec.with_token:
        token_slot = (lo + hi) / 2.0 + rng.uniform(-0.3, 0.3, size=3)
        token_slot = np.clip(token_slot, lo, hi)

    return Scene(
        id=f"{spec.name}-{seed}",
        features=tuple(features),
        planes=tuple(planes),
        bounds=(tuple(lo), tuple(hi)),
        trigger_features=tuple(triggers),
        token_slot=token_slot,
        geo_origin=spec.geo,
    )


def _point_on_plane_in_box(rng, plane: PlaneSpec, lo, hi, tries: int = 64):
    for _ in range(tries):
        p = rng.uniform(lo, hi)
        proj = p - np.dot(p - plane.point, plane.normal) * plane.normal
        if np.all(proj >= lo) and np.all(proj <= hi):
            return proj
    # degenerate plane placement: fall back to the plane's anchor point
    return np.clip(plane.point, lo, hi)


def perturb_scene(scene: Scene, perturbation: Perturbation, seed: int) -> Scene:
    rng = generator("perturb", scene.id, perturbation.kind, seed)
    if perturbation.kind == "add_clutter":
        k = int(perturbation.value)
        if k == 0:
            return scene
        lo = np.asarray(scene.bounds[0], float)
        hi = np.asarray(scene.bounds[1], float)
        next_id = scene.next_feature_id()
        new = []
        for i in range(k):
            new.append(FeaturePoint(
                id=next_id + i,
                position=rng.uniform(lo, hi),
                descriptor=unit_vector(rng, DESCRIPTOR_DIM),
                tag="clutter",
                extent_m=float(rng.uniform(0.25, 0.45)),
                plane_id=None,
            ))
        return replace(scene, features=scene.features + tuple(new))

    if perturbation.kind == "remove":
        k = int(perturbation.value)
        if k > len(scene.features):
            raise SpecError(f"cannot remove {k} of {len(scene.features)} features")
        base_idx = [i for i, f in enumerate(scene.features) if f.tag == "base"]
        if k > len(base_idx):
            raise SpecError(f"cannot remove {k} of {len(base_idx)} base features")
        drop = set(rng.choice(base_idx, size=k, replace=False).tolist())
        kept = tuple(f for i, f in enumerate(scene.features) if i not in drop)
        return replace(scene, features=kept)

    if perturbation.kind == "lighting":
        delta = float(perturbation.value)
        g = unit_vector(rng, DESCRIPTOR_DIM)

        def shift(f: FeaturePoint) -> FeaturePoint:
            d = f.descriptor + delta * g
            return replace(f, descriptor=d / np.linalg.norm(d))

        return replace(
            scene,
            features=tuple(shift(f) for f in scene.features),
            trigger_features=tuple(shift(f) for f in scene.trigger_features),
        )

    raise SpecError(f"unknown perturbation kind: {perturbation.kind}")


def lighting_cosine_floor(delta: float) -> float:
    """Worst-case cosine between a descriptor and its lighting-shifted copy."""
    if not 0.0 <= delta < 1.0:
        raise SpecError("lighting delta must be in [0, 1)")
    return float(np.sqrt(1.0 - delta * delta))


# --------------------------------------------------------------------------
# capture
# --------------------------------------------------------------------------

def _occlusion_mask(positions, features, eye):
    """True where a feature is hidden behind a clutter object from eye."""
    n = len(features)
    blocked = np.zeros(n, dtype=bool)
    clutter = [(i, f) for i, f in enumerate(features) if f.tag == "clutter"]
    if not clutter:
        return blocked
    vec = positions - eye
    dist = np.linalg.norm(vec, axis=1)
    safe = np.maximum(dist, 1e-9)
    dirs = vec / safe[:, None]
    for ci, cf in clutter:
        r_c = dist[ci]
        if r_c < 1e-9:
            continue
        half_angle = np.arctan((cf.extent_m * OCCLUSION_SCALE / 2.0) / r_c)
        cos_thr = np.cos(half_angle)
        ang_ok = dirs @ dirs[ci] >= cos_thr
        behind = dist > r_c
        blocked |= ang_ok & behind
    blocked[[ci for ci, _ in clutter]] = False
    return blocked


def _frustum_mask(positions, eye, forward, fov_deg, max_range):
    vec = positions - eye
    dist = np.linalg.norm(vec, axis=1)
    cos_half = np.cos(np.radians(fov_deg) / 2.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_ang = (vec @ forward) / np.maximum(dist, 1e-12)
    return (dist > 1e-9) & (dist <= max_range) & (cos_ang >= cos_half), dist


def _project(positions, eye, orientation, cam: CameraParams):
    right, down, fwd = camera_axes(orientation)
    rel = positions - eye
    xc = rel @ right
    yc = rel @ down
    zc = rel @ fwd
    f = cam.focal_px
    w, h = cam.pixels
    with np.errstate(invalid="ignore", divide="ignore"):
        px = w / 2.0 + f * xc / zc
        py = h / 2.0 + f * yc / zc
    return np.column_stack([px, py]), zc


def brute_force_visible(scene: Scene, pose: Pose, cam: CameraParams):
    """Reference frustum filter: per-feature loop, no vectorization.

    Used by tests as the independent oracle for capture()'s sample set.
    Ignores occlusion, as does capture() on clutter-free scenes.
    """
    eye = pose.position
    _, _, fwd = camera_axes(pose.orientation)
    cos_half = np.cos(np.radians(cam.fov_deg) / 2.0)
    out = []
    for f in scene.features:
        vec = f.position - eye
        dist = float(np.linalg.norm(vec))
        if dist <= 1e-9 or dist > cam.max_range:
            continue
        if float(np.dot(vec, fwd)) / dist < cos_half:
            continue
        out.append(f.id)
    return out


def capture(scene: Scene, pose: Pose, cam: CameraParams, seed: int) -> Observation:
    """One genuine still frame of the scene from the given pose."""
    features = scene.features
    if not features:
        return Observation(pose=pose, samples=(), imu_orientation=pose.orientation,
                           gps=_device_gps(scene, pose), pixel_size=cam.pixels,
                           focal_px=cam.focal_px)
    positions = np.stack([f.position for f in features])
    mask, dist = _frustum_mask(positions, pose.position, camera_axes(pose.orientation)[2],
                               cam.fov_deg, cam.max_range)
    mask &= ~_occlusion_mask(positions, features, pose.position)

    rng = generator("capture", scene.id, seed)
    desc_noise = rng.standard_normal((len(features), DESCRIPTOR_DIM))
    depth_noise = rng.standard_normal(len(features))

    pixels, _ = _project(positions, pose.position, pose.orientation, cam)
    samples = _build_samples(features, mask, dist, pixels, desc_noise, depth_noise,
                             cam, noise_scale=1.0)
    return Observation(pose=pose, samples=tuple(samples),
                       imu_orientation=pose.orientation,
                       gps=_device_gps(scene, pose), pixel_size=cam.pixels,
                       focal_px=cam.focal_px)


def capture_scan(scene: Scene, pose: Pose, cam: CameraParams, seed: int,
                 sweeps: int = 3, jitter_deg: float = 10.0,
                 jitter_pos: float = 0.3) -> Observation:
    """An AR scan: the device sweeps around the pose and aggregates what it
    tracked into a single observation in the central frame. Parallax across
    sweeps sees around clutter that would block any single still."""
    features = scene.features
    if not features:
        return Observation(pose=pose, samples=(), imu_orientation=pose.orientation,
                           gps=_device_gps(scene, pose), pixel_size=cam.pixels,
                           focal_px=cam.focal_px)
    positions = np.stack([f.position for f in features])
    rng = generator("scan", scene.id, seed)
    union = np.zeros(len(features), dtype=bool)
    for k in range(max(1, sweeps)):
        if k == 0:
            sub = pose
        else:
            axis = unit_vector(rng, 3)
            dq = quat_from_axis_angle(axis, np.radians(rng.uniform(-jitter_deg, jitter_deg)))
            sub = Pose(position=pose.position + rng.uniform(-jitter_pos, jitter_pos, 3),
                       orientation=quat_multiply(dq, pose.orientation))
        m, _ = _frustum_mask(positions, sub.position, camera_axes(sub.orientation)[2],
                             cam.fov_deg, cam.max_range)
        m &= ~_occlusion_mask(positions, features, sub.position)
        union |= m

    # geometry reported in the central frame; drop anything behind it
    vec = positions - pose.position
    dist = np.linalg.norm(vec, axis=1)
    _, _, fwd = camera_axes(pose.orientation)
    front = (vec @ fwd) > 1e-6
    union &= front & (dist <= cam.max_range)

    desc_noise = rng.standard_normal((len(features), DESCRIPTOR_DIM))
    depth_noise = rng.standard_normal(len(features))
    pixels, _ = _project(positions, pose.position, pose.orientation, cam)
    samples = _build_samples(features, union, dist, pixels, desc_noise, depth_noise,
                             cam, noise_scale=1.0)
    return Observation(pose=pose, samples=tuple(samples),
                       imu_orientation=pose.orientation,
                       gps=_device_gps(scene, pose), pixel_size=cam.pixels,
                       focal_px=cam.focal_px)


def _build_samples(features, mask, dist, pixels, desc_noise, depth_noise, cam,
                   noise_scale):
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return []
    sigma_d = cam.sigma_descriptor * noise_scale
    descs = np.stack([features[i].descriptor for i in idx])
    descs = descs + sigma_d * desc_noise[idx]
    descs /= np.linalg.norm(descs, axis=1, keepdims=True)
    depths = np.maximum(dist[idx] + cam.sigma_depth * depth_noise[idx], 1e-6)
    samples = []
    for row, i in enumerate(idx):
        f = features[i]
        samples.append(Sample(
            feature_id=f.id,
            descriptor=descs[row],
            pixel=pixels[i],
            depth=float(depths[row]),
            size_px=float(cam.focal_px * f.extent_m / dist[i]),
            plane_id=f.plane_id,
        ))
    return samples


def _device_gps(scene: Scene, pose: Pose) -> Optional[GeoCoord]:
    if scene.geo_origin is None:
        return None
    return geo_offset(scene.geo_origin, pose.position)


# --------------------------------------------------------------------------
# spoof surfaces
# --------------------------------------------------------------------------

def make_spoof_surface(source: Observation, size, plane_pose: Pose,
                       surface_id: str = "surface") -> SpoofSurface:
    if source.provenance[0] != "genuine":
        raise ProvenanceError("spoof surfaces must be built from genuine captures")
    return SpoofSurface(id=surface_id, source=source,
                        physical_size=(float(size[0]), float(size[1])),
                        plane_pose=plane_pose)


def facing_pose(surface: SpoofSurface, distance: float,
                lateral: float = 0.0, vertical: float = 0.0,
                roll_deg: float = 0.0) -> Pose:
    """Attacker device pose at the given distance in front of the display,
    aimed at its center. With zero offsets the device orientation equals
    the source photo's, which is how an attacker lines up the orientation
    check; roll_deg breaks it on purpose (portrait vs landscape).
    """
    right, down, fwd = camera_axes(surface.plane_pose.orientation)
    eye = (surface.plane_pose.position - fwd * distance
           + right * lateral + down * vertical)
    pose = Pose.look_at(eye, surface.plane_pose.position, world_up=-down)
    if roll_deg:
        pose = pose.rolled(roll_deg)
    return pose


def display_pose_for(source: Observation, location=(50.0, 0.0, 1.5)) -> Pose:
    """Place a display in the attacker's room, oriented like the photo."""
    return Pose(position=np.asarray(location, dtype=float),
                orientation=source.pose.orientation)


def capture_spoof(surface: SpoofSurface, attacker_pose: Pose, cam: CameraParams,
                  seed: int) -> Observation:
    """Photograph the display: planar depths, distance-limited resolvability,
    and defocus-inflated descriptor noise inside the focus distance."""
    right, down, fwd = camera_axes(surface.plane_pose.orientation)
    eye = attacker_pose.position
    d_plane = float(np.dot(eye - surface.plane_pose.position, -fwd))
    texture = surface.texture
    if d_plane <= 1e-9 or not texture:
        return Observation(pose=attacker_pose, samples=(),
                           imu_orientation=attacker_pose.orientation,
                           provenance=("spoof", surface.id), pixel_size=cam.pixels,
                           focal_px=cam.focal_px)

    world_pts = np.stack([
        surface.plane_pose.position + x * right + y * down
        for x, y, _, _, _ in texture
    ])
    mask, dist = _frustum_mask(world_pts, eye, camera_axes(attacker_pose.orientation)[2],
                               cam.fov_deg, cam.max_range)

    # apparent pixel footprint of each displayed feature from this distance
    src_w = surface.source.pixel_size[0]
    pitch = surface.physical_size[0] / src_w  # display meters per source pixel
    size_on_surface = np.array([t[3] for t in texture]) * pitch
    with np.errstate(divide="ignore"):
        apparent_px = cam.focal_px * size_on_surface / np.maximum(dist, 1e-12)
    mask &= apparent_px >= RESOLVABLE_PX

    rng = generator("spoof", surface.id, seed)
    desc_noise = rng.standard_normal((len(texture), DESCRIPTOR_DIM))
    depth_noise = rng.standard_normal(len(texture))
    pixels, _ = _project(world_pts, eye, attacker_pose.orientation, cam)

    defocus = cam.defocus(d_plane)
    sigma_d = cam.sigma_descriptor * defocus
    idx = np.flatnonzero(mask)
    samples = []
    if len(idx):
        descs = np.stack([texture[i][2] for i in idx]) + sigma_d * desc_noise[idx]
        descs /= np.linalg.norm(descs, axis=1, keepdims=True)
        depths = np.maximum(dist[idx] + cam.sigma_depth * depth_noise[idx], 1e-6)
        for row, i in enumerate(idx):
            samples.append(Sample(
                feature_id=None,
                descriptor=descs[row],
                pixel=pixels[i],
                depth=float(depths[row]),
                size_px=float(apparent_px[i]),
                plane_id=texture[i][4],
            ))
    return Observation(pose=attacker_pose, samples=tuple(samples),
                       imu_orientation=attacker_pose.orientation,
                       provenance=("spoof", surface.id), pixel_size=cam.pixels,
                       focal_px=cam.focal_px)


# --------------------------------------------------------------------------
# scene serialization (debug/export)
# --------------------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    def feat(f):
        return {
            "id": f.id,
            "position": [float(v) for v in f.position],
            "descriptor": [float(v) for v in f.descriptor],
            "tag": f.tag,
            "extent_m": f.extent_m,
            "plane_id": f.plane_id,
        }

    return {
        "id": scene.id,
        "bounds": [list(scene.bounds[0]), list(scene.bounds[1])],
        "features": [feat(f) for f in scene.features],
        "trigger_features": [feat(f) for f in scene.trigger_features],
        "planes": [
            {"id": p.id, "point": [float(v) for v in p.point],
             "normal": [float(v) for v in p.normal]}
            for p in scene.planes
        ],
        "token_slot": [float(v) for v in scene.token_slot] if scene.token_slot is not None else None,
        "geo_origin": scene.geo_origin.to_dict() if scene.geo_origin else None,
    }


def scene_from_dict(d: dict) -> Scene:
    def feat(fd):
        return FeaturePoint(
            id=fd["id"], position=np.array(fd["position"]),
            descriptor=np.array(fd["descriptor"]), tag=fd["tag"],
            extent_m=fd["extent_m"], plane_id=fd["plane_id"],
        )

    return Scene(
        id=d["id"],
        features=tuple(feat(f) for f in d["features"]),
        trigger_features=tuple(feat(f) for f in d["trigger_features"]),
        planes=tuple(
            PlaneSpec(id=p["id"], point=np.array(p["point"]), normal=np.array(p["normal"]))
            for p in d["planes"]
        ),
        bounds=(tuple(d["bounds"][0]), tuple(d["bounds"][1])),
        token_slot=np.array(d["token_slot"]) if d.get("token_slot") is not None else None,
        geo_origin=GeoCoord.from_dict(d["geo_origin"]) if d.get("geo_origin") else None,
    )
