"""Attacker-side procedures. Every attack is an ordinary client of the
shared-state service: it holds a user credential and a client handle and
never touches server internals. Failure is a legitimate outcome; each
procedure returns a structured AttackOutcome for the harness.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ArShareError, InjectError, NotFound, SpecError, SwapError
from .geometry import camera_axes
from .rng import derive_seed, generator
from .world import (
    DESCRIPTOR_DIM,
    CameraParams,
    Observation,
    Sample,
    capture_spoof,
    class_template,
    display_pose_for,
    facing_pose,
    make_spoof_surface,
)


@dataclass(frozen=True)
class AttackOutcome:
    attack_kind: str
    success: bool
    detail: dict
    trial_seed: int


@dataclass(frozen=True)
class TriggerSpec:
    trigger_feature_count: int = 10
    descriptor_seed: int = 0

    def __post_init__(self):
        if self.trigger_feature_count < 1:
            raise SpecError("trigger_feature_count must be >= 1")


def brute_force_room(client, token, max_code: int):
    """Enumerate live room codes by probing resolve with an empty key:
    NotFound means the code is unused, any other answer means it exists."""
    empty = Observation(pose=_origin_pose(), samples=(),
                        imu_orientation=np.array([1.0, 0, 0, 0]))
    live = []
    for code in range(1, max_code + 1):
        try:
            client.resolve_anchor(token, code, empty, empty.imu_orientation)
            live.append(code)  # cannot happen with an empty key, but be safe
        except NotFound:
            continue
        except ArShareError:
            live.append(code)
    return live


def _origin_pose():
    from .world import Pose
    return Pose(position=np.zeros(3), orientation=np.array([1.0, 0, 0, 0]))


def remote_read_attack(client, token, photo: Observation, display_size, distance,
                       cam: CameraParams, seed: int, anchor_id=None,
                       target_geo=None, retries: int = 3) -> AttackOutcome:
    """Point the device at a display showing a photo of the target scene.

    With anchor_id set this resolves a room-code anchor; with target_geo set
    it spoofs GPS to that location and reads through VPS localization.
    Up to `retries` viewpoints are tried; any returned hologram is success.
    """
    surface = make_spoof_surface(photo, display_size, display_pose_for(photo),
                                 surface_id=f"display-{seed}")
    rng = generator(seed, "read-jitter")
    attempts = []
    for attempt in range(retries):
        lateral = float(rng.uniform(-0.08, 0.08)) * (attempt > 0)
        vertical = float(rng.uniform(-0.05, 0.05)) * (attempt > 0)
        pose = facing_pose(surface, distance, lateral=lateral, vertical=vertical)
        spoof = capture_spoof(surface, pose, cam, derive_seed(seed, "read-spoof", attempt))
        if target_geo is not None:
            spoof = spoof.with_gps(target_geo)
        try:
            if anchor_id is not None:
                res = client.resolve_anchor(token, anchor_id, spoof,
                                            spoof.imu_orientation)
                label = res["hologram"]["label"]
            else:
                res = client.localize_vps(token, spoof)
                holograms = res.get("holograms", [])
                if not holograms:
                    attempts.append({"attempt": attempt, "outcome": "no_holograms"})
                    continue
                label = holograms[0]["label"]
            attempts.append({"attempt": attempt, "outcome": "resolved"})
            return AttackOutcome("remote_read", True,
                                 {"hologram_label": label, "attempts": attempts},
                                 seed)
        except ArShareError as e:
            attempts.append({"attempt": attempt, "outcome": e.code})
    return AttackOutcome("remote_read", False, {"attempts": attempts}, seed)


def spoof_write_captures(photo: Observation, display_size, distance,
                         cam: CameraParams, seed: int, views: int = 5,
                         extra_samples_fn=None):
    """The write attack's key material: several captures of the display from
    slightly different viewpoints, optionally with extra physical features
    (trigger marks) appended next to the display."""
    surface = make_spoof_surface(photo, display_size, display_pose_for(photo),
                                 surface_id=f"display-{seed}")
    rng = generator(seed, "write-views")
    spoofs = []
    for k in range(views):
        pose = facing_pose(surface, distance,
                           lateral=float(rng.uniform(-0.25, 0.25)),
                           vertical=float(rng.uniform(-0.15, 0.15)))
        spoof = capture_spoof(surface, pose, cam, derive_seed(seed, "write-spoof", k))
        if extra_samples_fn is not None:
            extra = extra_samples_fn(surface, pose, k)
            spoof = replace(spoof, samples=spoof.samples + tuple(extra))
        spoofs.append(spoof)
    return surface, spoofs


def remote_write_attack(client, token, photo: Observation, hologram, display_size,
                        distance, cam: CameraParams, seed: int,
                        victim_read, views: int = 5) -> AttackOutcome:
    """Host an anchor from display captures; success means the host was
    accepted AND a genuine victim capture at the real location resolves the
    attacker's hologram (victim_read: anchor_id -> resolved label or None)."""
    _, spoofs = spoof_write_captures(photo, display_size, distance, cam, seed,
                                     views=views)
    try:
        res = client.host_anchor(token, spoofs, hologram, spoofs[0].imu_orientation)
    except ArShareError as e:
        return AttackOutcome("remote_write", False, {"host_outcome": e.code}, seed)
    anchor_id = res["anchor_id"]
    label = victim_read(anchor_id)
    return AttackOutcome(
        "remote_write", bool(label == hologram.label),
        {"host_outcome": "hosted", "anchor_id": anchor_id,
         "victim_resolved": label}, seed)


def trigger_sample_builder(trigger_features, cam: CameraParams, seed: int):
    """Build the append function modeling trigger marks placed beside the
    display: genuine-level descriptor noise, geometry on the display plane."""

    def build(surface, pose, view):
        right, down, _ = camera_axes(surface.plane_pose.orientation)
        r, d, f = camera_axes(pose.orientation)
        rng = generator(seed, "trigger-noise", view)
        out = []
        for i, tf in enumerate(trigger_features):
            pos = (surface.plane_pose.position
                   + right * (surface.physical_size[0] / 2 + 0.06 + 0.02 * (i % 3))
                   + down * (0.05 * (i // 3) - 0.1))
            rel = pos - pose.position
            zc = float(rel @ f)
            if zc <= 1e-6:
                continue
            dist = float(np.linalg.norm(rel))
            px = cam.pixels[0] / 2 + cam.focal_px * float(rel @ r) / zc
            py = cam.pixels[1] / 2 + cam.focal_px * float(rel @ d) / zc
            desc = tf.descriptor + cam.sigma_descriptor * rng.standard_normal(DESCRIPTOR_DIM)
            desc = desc / np.linalg.norm(desc)
            out.append(Sample(feature_id=None, descriptor=desc,
                              pixel=np.array([px, py]), depth=dist,
                              size_px=cam.focal_px * tf.extent_m / dist,
                              plane_id=None))
        return out

    return build


def triggered_write_attack(client, token, photo: Observation, hologram,
                           trigger_features, display_size, distance,
                           cam: CameraParams, seed: int, victim_reads: dict,
                           views: int = 5) -> AttackOutcome:
    """Remote write with trigger marks included in the attacker's captures.

    victim_reads maps case name ("main", "case_1a", "case_1b") to a callable
    anchor_id -> resolved label or None; all three are measured.
    """
    builder = trigger_sample_builder(trigger_features, cam, seed)
    _, spoofs = spoof_write_captures(photo, display_size, distance, cam, seed,
                                     views=views, extra_samples_fn=builder)
    try:
        res = client.host_anchor(token, spoofs, hologram, spoofs[0].imu_orientation)
    except ArShareError as e:
        detail = {"host_outcome": e.code,
                  "cases": {name: False for name in victim_reads}}
        return AttackOutcome("triggered_write", False, detail, seed)
    anchor_id = res["anchor_id"]
    cases = {}
    for name, reader in victim_reads.items():
        label = reader(anchor_id)
        cases[name] = bool(label == hologram.label)
    return AttackOutcome("triggered_write", cases.get("main", False),
                         {"host_outcome": "hosted", "anchor_id": anchor_id,
                          "cases": cases}, seed)


def gps_swap_attack(seq_a, seq_b):
    """Exchange the EXIF records between two equally long image sequences.

    Pure metadata transform: image content is untouched, so applying the
    swap twice restores the originals exactly.
    """
    if len(seq_a) != len(seq_b):
        raise SwapError(f"sequences differ in length: {len(seq_a)} vs {len(seq_b)}")
    swapped_a = tuple(oa.with_exif(ob.exif) for oa, ob in zip(seq_a, seq_b))
    swapped_b = tuple(ob.with_exif(oa.exif) for oa, ob in zip(seq_a, seq_b))
    return swapped_a, swapped_b


def inject_fake_object(sequence, object_class: str, placement, cam: CameraParams,
                       seed: int, extent_m: float = 0.6,
                       imperfect: bool = False, max_images=None):
    """Photoshop a fake object into every image where the placement is
    visible. Apparent size follows the true per-image distance so the
    ingest pipeline's scale check passes; `imperfect` skips the scaling
    and produces a rejectable tamper.
    """
    placement = np.asarray(placement, dtype=float)
    rng = generator(seed, "inject", object_class)
    template = class_template(object_class)
    cos_half = np.cos(np.radians(cam.fov_deg) / 2.0)
    out = []
    injected = 0
    for obs in sequence:
        r, d, f = camera_axes(obs.pose.orientation)
        rel = placement - obs.pose.position
        dist = float(np.linalg.norm(rel))
        zc = float(rel @ f)
        visible = (dist > 1e-9 and zc > 0
                   and zc / dist >= cos_half and dist <= cam.max_range)
        if visible and (max_images is None or injected < max_images):
            px = cam.pixels[0] / 2 + cam.focal_px * float(rel @ r) / zc
            py = cam.pixels[1] / 2 + cam.focal_px * float(rel @ d) / zc
            desc = template + 0.02 * rng.standard_normal(DESCRIPTOR_DIM)
            desc = desc / np.linalg.norm(desc)
            size_px = 40.0 if imperfect else cam.focal_px * extent_m / dist
            sample = Sample(feature_id=None, descriptor=desc,
                            pixel=np.array([px, py]), depth=dist,
                            size_px=float(size_px), plane_id=None)
            out.append(replace(obs, samples=obs.samples + (sample,)))
            injected += 1
        else:
            out.append(obs)
    if injected < 3:
        raise InjectError(
            f"placement visible in only {injected} images; need at least 3")
    return tuple(out)
