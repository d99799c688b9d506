"""Experiment runner: declarative configs, seeded trials, aggregation, and
report emission.

Every trial runs against a fresh store through the protocol client, with a
seed derived only from (master_seed, cell_id, trial_index), so reports are
byte-reproducible and cells can be executed in any order. Ground-truth
provenance appears only in the per-trial debug log, clearly marked, never
in any decision path.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import attacks, presets
from . import world as W
from .defense import TokenAuthority, detect_planar_spoof, DepthCheckParams
from .errors import ArShareError, ConfigError, IoError, StatError
from .geometry import quat_from_axis_angle, quat_multiply
from .protocol import InProcessClient, WireClient
from .rng import derive_seed, generator
from .shared_state import Hologram, SharedStateConfig, SharedStateStore
from .world import ExifRecord, Pose, SceneSpec, geo_offset

ARTIFACT_VERSION = "0.1.0"
WILSON_Z = 1.959963984540054  # two-sided 95%

ATTACK_KINDS = {
    "A": ("benign", "remote_read", "remote_write", "triggered_write"),
    "B": ("benign", "remote_read"),
    "C": ("benign", "gps_swap", "fake_object"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "A"
    attack: str = "benign"
    trials_per_cell: int = 16
    master_seed: int = 20240
    distances: tuple = (0.5,)
    conditions: tuple = ("static",)
    clutter_count: int = 40
    lighting_delta: float = 0.2
    views: int = 5
    retries: int = 3
    trigger_count: int = 10
    regions: int = 2
    display: tuple = presets.DISPLAY_SIZE
    state: SharedStateConfig = None
    scene: SceneSpec = None
    camera: W.CameraParams = None

    def __post_init__(self):
        if self.scenario not in ATTACK_KINDS:
            raise ConfigError(f"unknown scenario: {self.scenario}", field="scenario")
        if self.attack not in ATTACK_KINDS[self.scenario]:
            raise ConfigError(
                f"attack {self.attack!r} not available in scenario {self.scenario}",
                field="attack")
        if self.trials_per_cell < 1:
            raise ConfigError("trials_per_cell must be >= 1", field="trials_per_cell")
        for d in self.distances:
            if d <= 0:
                raise ConfigError("distances must be positive", field="distances")
        for c in self.conditions:
            if c not in ("static", "clutter", "lighting"):
                raise ConfigError(f"unknown condition {c!r}", field="conditions")
        if self.state is None:
            object.__setattr__(self, "state",
                               presets.state_for_scenario(self.scenario))
        if self.scene is None:
            object.__setattr__(self, "scene", _default_scene(self))
        if self.camera is None:
            object.__setattr__(self, "camera", presets.default_camera())

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "attack": self.attack,
            "trials_per_cell": self.trials_per_cell,
            "master_seed": self.master_seed,
            "distances": list(self.distances),
            "conditions": list(self.conditions),
            "clutter_count": self.clutter_count,
            "lighting_delta": self.lighting_delta,
            "views": self.views,
            "retries": self.retries,
            "trigger_count": self.trigger_count,
            "regions": self.regions,
            "display": list(self.display),
            "state": self.state.to_dict(),
            "scene": self.scene.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        known = {"scenario", "attack", "trials_per_cell", "master_seed",
                 "distances", "conditions", "clutter_count", "lighting_delta",
                 "views", "retries", "trigger_count", "regions", "display",
                 "state", "scene", "camera"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}",
                              field=sorted(unknown)[0])
        kwargs = {}
        for key in ("scenario", "attack", "trials_per_cell", "master_seed",
                    "clutter_count", "lighting_delta", "views", "retries",
                    "trigger_count", "regions"):
            if key in d:
                kwargs[key] = d[key]
        if "distances" in d:
            kwargs["distances"] = tuple(d["distances"])
        if "conditions" in d:
            kwargs["conditions"] = tuple(d["conditions"])
        if "display" in d:
            kwargs["display"] = tuple(d["display"])
        try:
            if "state" in d:
                kwargs["state"] = SharedStateConfig.from_dict(d["state"])
            if "scene" in d:
                kwargs["scene"] = SceneSpec.from_dict(d["scene"])
            if "camera" in d:
                kwargs["camera"] = presets.default_camera(**d["camera"])
            return cls(**kwargs)
        except ConfigError:
            raise
        except (ArShareError, TypeError, ValueError, KeyError) as e:
            raise ConfigError(f"invalid config: {e}") from None

    @classmethod
    def from_toml(cls, path):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"invalid TOML: {e}") from None
        return cls.from_dict(data)


def _default_scene(config) -> SceneSpec:
    if config.scenario == "A":
        trig = config.trigger_count if config.attack == "triggered_write" else 0
        return presets.indoor_spec(trigger_count=trig)
    if config.scenario == "B":
        return presets.campus_spec(0)
    return presets.street_spec()


@dataclass(frozen=True)
class Cell:
    cell_id: str
    kind: str
    params: dict = field(default_factory=dict)


def plan_cells(config: ExperimentConfig):
    cells = []
    if config.attack == "benign":
        cells.append(Cell("benign", "benign"))
    elif config.attack in ("remote_read", "remote_write"):
        for cond in config.conditions:
            for d in config.distances:
                cells.append(Cell(f"{config.attack}/{cond}/d{d:g}", config.attack,
                                  {"distance": d, "condition": cond}))
    elif config.attack == "triggered_write":
        for case in ("main", "case_1a", "case_1b"):
            cells.append(Cell(f"triggered_write/{case}", "triggered_write",
                              {"case": case}))
    elif config.attack == "gps_swap":
        for variant in ("swapped", "truthful"):
            cells.append(Cell(f"gps_swap/{variant}", "gps_swap",
                              {"swapped": variant == "swapped"}))
    elif config.attack == "fake_object":
        for mode in ("scaled", "unscaled", "two_images"):
            cells.append(Cell(f"fake_object/{mode}", "fake_object", {"mode": mode}))
    return cells


# --------------------------------------------------------------------------
# pose helpers shared by all scenarios
# --------------------------------------------------------------------------

def ring_poses(scene, seed, n=5, radius=(2.0, 2.8)):
    rng = generator(seed, "ring")
    center = scene.center
    poses = []
    for k in range(n):
        ang = 2 * np.pi * k / n + rng.uniform(-0.2, 0.2)
        r = rng.uniform(*radius)
        eye = center + np.array([r * np.cos(ang), r * np.sin(ang),
                                 rng.uniform(-0.4, 1.0)])
        poses.append(Pose.look_at(eye, center + rng.uniform(-0.3, 0.3, 3)))
    return poses


def jitter_pose(base: Pose, seed, dpos=0.4, dang_deg=15.0) -> Pose:
    rng = generator(seed, "jitter")
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    dq = quat_from_axis_angle(axis, np.radians(rng.uniform(-dang_deg, dang_deg)))
    return Pose(position=base.position + rng.uniform(-dpos, dpos, 3),
                orientation=quat_multiply(dq, base.orientation))


def walk_poses(scene, seed, n=5, toward=None):
    """Deterministic forward-walk viewpoints with lateral offsets."""
    rng = generator(seed, "walk")
    center = scene.center if toward is None else np.asarray(toward, float)
    ang = rng.uniform(0, 2 * np.pi)
    start = center + np.array([rng.uniform(3.5, 4.5) * np.cos(ang),
                               rng.uniform(3.5, 4.5) * np.sin(ang),
                               rng.uniform(0.2, 0.8)])
    lo = np.asarray(scene.bounds[0], float)
    hi = np.asarray(scene.bounds[1], float)
    start = np.clip(start, lo, hi)
    step = (center - start) / (n + 1)
    lateral = np.cross(step, [0.0, 0.0, 1.0])
    lateral = lateral / max(float(np.linalg.norm(lateral)), 1e-9)
    poses = []
    for i in range(n):
        eye = start + step * i + lateral * rng.uniform(-0.5, 0.5)
        poses.append(Pose.look_at(eye, center + rng.uniform(-0.2, 0.2, 3)))
    return poses


def walk_sequence(scene, cam, seed, n=5, toward=None, t0=1_600_000_000):
    """Forward walk with lateral offsets; wide scans, EXIF attached from the
    scene's geo origin. This is how both curators and crowd uploaders are
    modeled to collect mapping imagery."""
    seq = []
    for i, pose in enumerate(walk_poses(scene, seed, n=n, toward=toward)):
        obs = W.capture_scan(scene, pose, cam, derive_seed(seed, "walk-scan", i),
                             sweeps=4, jitter_deg=28.0, jitter_pos=0.6)
        exif = ExifRecord(
            geo=geo_offset(scene.geo_origin, pose.position) if scene.geo_origin else None,
            timestamp=t0 + 10 * i)
        seq.append(obs.with_exif(exif))
    return seq


def _victim_hologram():
    return Hologram(id="v", payload=b"victim-content", label="victim-secret",
                    pose_in_region=Pose.look_at((0.0, 0.0, 1.0), (1.0, 0.0, 1.0)))


def _attacker_hologram():
    return Hologram(id="a", payload=b"planted-content", label="attacker-mark",
                    pose_in_region=Pose.look_at((0.0, 0.0, 1.0), (1.0, 0.0, 1.0)))


# --------------------------------------------------------------------------
# trial runner
# --------------------------------------------------------------------------

class TrialRunner:
    """Executes one seeded trial per call against a fresh store, through
    the protocol client (in-process codec or TCP, identical behavior)."""

    def __init__(self, config: ExperimentConfig, wire_address=None):
        self.config = config
        self.cam = config.camera
        self._wire = WireClient(wire_address) if wire_address else None

    def close(self):
        if self._wire is not None:
            self._wire.close()
            self._wire = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- store/session plumbing --------------------------------------------

    def _fresh(self, state: SharedStateConfig = None):
        """A brand-new store for one trial, exposed through the client. In
        wire mode the remote store is reset by importing the fresh state."""
        store = SharedStateStore(state or self.config.state)
        tokens = {
            "curator": store.register_principal("curator").token,
            "victim": store.register_principal("user").token,
            "attacker": store.register_principal("user").token,
        }
        if self._wire is not None:
            self._wire.admin_import(store.snapshot())
            return self._wire, tokens
        return InProcessClient(store), tokens

    # -- scenario A ----------------------------------------------------------

    def _host_victim_anchor(self, client, tokens, scene, seed):
        poses = ring_poses(scene, derive_seed(seed, "host-poses"))
        scans = [W.capture_scan(scene, p, self.cam, derive_seed(seed, "host", k))
                 for k, p in enumerate(poses)]
        res = client.host_anchor(tokens["victim"], scans, _victim_hologram(),
                                 scans[0].imu_orientation)
        return res["anchor_id"], poses

    def _victim_observation(self, client_scene, base_pose, seed):
        pose = jitter_pose(base_pose, derive_seed(seed, "victim-pose"), 0.6, 15.0)
        return W.capture_scan(client_scene, pose, self.cam,
                              derive_seed(seed, "victim-scan"),
                              sweeps=5, jitter_pos=0.6)

    def _attacker_photo(self, scene, base_pose, seed):
        pose = jitter_pose(base_pose, derive_seed(seed, "photo-pose"), 0.3, 8.0)
        return W.capture(scene, pose, self.cam, derive_seed(seed, "photo"))

    def _perturbed(self, scene, condition, seed):
        if condition == "clutter":
            return W.perturb_scene(
                scene, W.Perturbation.add_clutter(self.config.clutter_count),
                derive_seed(seed, "clutter"))
        if condition == "lighting":
            return W.perturb_scene(
                scene, W.Perturbation.lighting(self.config.lighting_delta),
                derive_seed(seed, "lighting"))
        return scene

    def benign_a_trial(self, seed) -> dict:
        client, tokens = self._fresh()
        scene = W.generate_scene(self.config.scene, derive_seed(seed, "scene"))
        anchor_id, poses = self._host_victim_anchor(client, tokens, scene, seed)
        obs = self._victim_observation(scene, poses[0], seed)
        try:
            res = client.resolve_anchor(tokens["victim"], anchor_id, obs,
                                        obs.imu_orientation)
            ok = res["hologram"]["label"] == "victim-secret"
            return {"success": ok, "detail": {"anchor_id": anchor_id}}
        except ArShareError as e:
            return {"success": False, "detail": {"outcome": e.code}}

    def remote_read_a_trial(self, seed, distance, condition="static") -> dict:
        client, tokens = self._fresh()
        scene = W.generate_scene(self.config.scene, derive_seed(seed, "scene"))
        anchor_id, poses = self._host_victim_anchor(client, tokens, scene, seed)
        photo_scene = self._perturbed(scene, condition, seed)
        photo = self._attacker_photo(photo_scene, poses[0], seed)
        outcome = attacks.remote_read_attack(
            client, tokens["attacker"], photo, self.config.display, distance,
            self.cam, seed, anchor_id=anchor_id, retries=self.config.retries)
        return {"success": outcome.success, "detail": outcome.detail,
                "truth": {"spoof_requests": True}}

    def remote_write_a_trial(self, seed, distance, condition="static") -> dict:
        client, tokens = self._fresh()
        scene = W.generate_scene(self.config.scene, derive_seed(seed, "scene"))
        _, poses = self._host_victim_anchor(client, tokens, scene, seed)
        victim_scene = self._perturbed(scene, condition, seed)
        photo = self._attacker_photo(scene, poses[0], seed)

        def victim_read(anchor_id):
            obs = self._victim_observation(victim_scene, poses[0], seed)
            try:
                res = client.resolve_anchor(tokens["victim"], anchor_id, obs,
                                            obs.imu_orientation)
                return res["hologram"]["label"]
            except ArShareError:
                return None

        outcome = attacks.remote_write_attack(
            client, tokens["attacker"], photo, _attacker_hologram(),
            self.config.display, distance, self.cam, seed,
            victim_read, views=self.config.views)
        return {"success": outcome.success, "detail": outcome.detail,
                "truth": {"spoof_requests": True}}

    def triggered_write_trial(self, seed) -> dict:
        client, tokens = self._fresh()
        spec = dc_replace(self.config.scene, trigger_count=self.config.trigger_count)
        scene = W.generate_scene(spec, derive_seed(seed, "scene"))
        other = W.generate_scene(spec, derive_seed(seed, "other-scene"))
        _, poses = self._host_victim_anchor(client, tokens, scene, seed)
        photo = self._attacker_photo(scene, poses[0], seed)

        def reader_for(victim_scene, tag):
            def reader(anchor_id):
                pose = jitter_pose(poses[0], derive_seed(seed, "victim-pose", tag),
                                   0.6, 15.0)
                obs = W.capture_scan(victim_scene, pose, self.cam,
                                     derive_seed(seed, "victim-scan", tag),
                                     sweeps=5, jitter_pos=0.6)
                try:
                    res = client.resolve_anchor(tokens["victim"], anchor_id, obs,
                                                obs.imu_orientation)
                    return res["hologram"]["label"]
                except ArShareError:
                    return None
            return reader

        victim_reads = {
            "main": reader_for(scene.with_trigger_installed(), "main"),
            "case_1a": reader_for(other.with_features_installed(scene.trigger_features),
                                  "case_1a"),
            "case_1b": reader_for(scene, "case_1b"),
        }
        outcome = attacks.triggered_write_attack(
            client, tokens["attacker"], photo, _attacker_hologram(),
            scene.trigger_features, self.config.display, 0.5, self.cam, seed,
            victim_reads, views=self.config.views)
        return {"success": outcome.success, "detail": outcome.detail,
                "cases": outcome.detail["cases"],
                "truth": {"spoof_requests": True}}

    # -- scenario B ----------------------------------------------------------

    def _setup_regions(self, client, tokens, seed):
        scenes = []
        for i in range(self.config.regions):
            spec = presets.campus_spec(i)
            scene = W.generate_scene(spec, derive_seed(seed, "b-scene", i))
            seq = walk_sequence(scene, self.cam, derive_seed(seed, "b-walk", i))
            res = client.ingest_sequence(tokens["curator"], seq)
            scenes.append((scene, res["region_id"]))
        return scenes

    def _place_treasure(self, client, tokens, scene, region_id, seed):
        vpose = Pose.look_at(scene.center + np.array([2.5, 0.3, 0.6]), scene.center)
        vobs = W.capture_scan(scene, vpose, self.cam, derive_seed(seed, "b-vloc"))
        loc = client.localize_vps(tokens["victim"], vobs)
        holo = Hologram(id="t", payload=b"virtual-treasure", label="treasure",
                        pose_in_region=Pose.look_at((0, 0, 1), (1, 0, 1)))
        client.place_hologram(tokens["victim"], loc["region_id"], holo)
        return vpose, loc["region_id"]

    def benign_b_trial(self, seed) -> dict:
        client, tokens = self._fresh()
        scenes = self._setup_regions(client, tokens, seed)
        scene, region_id = scenes[0]
        vpose, placed_region = self._place_treasure(client, tokens, scene,
                                                    region_id, seed)
        pose2 = jitter_pose(vpose, derive_seed(seed, "b-requery"), 0.5, 12.0)
        obs2 = W.capture_scan(scene, pose2, self.cam, derive_seed(seed, "b-requery"))
        try:
            loc2 = client.localize_vps(tokens["victim"], obs2)
            ok = (loc2["region_id"] == placed_region
                  and any(h["label"] == "treasure" for h in loc2["holograms"]))
            return {"success": ok, "detail": {"region_id": placed_region}}
        except ArShareError as e:
            return {"success": False, "detail": {"outcome": e.code}}

    def remote_read_b_trial(self, seed, distance, condition="static") -> dict:
        client, tokens = self._fresh()
        scenes = self._setup_regions(client, tokens, seed)
        scene, region_id = scenes[0]
        self._place_treasure(client, tokens, scene, region_id, seed)
        photo_scene = self._perturbed(scene, condition, seed)
        # public imagery of the place resembles the map's own coverage
        start_pose = walk_poses(photo_scene, derive_seed(seed, "b-walk", 0))[0]
        photo_pose = jitter_pose(start_pose, derive_seed(seed, "b-photo-pose"),
                                 0.3, 8.0)
        photo = W.capture(photo_scene, photo_pose, self.cam,
                          derive_seed(seed, "b-photo"))
        outcome = attacks.remote_read_attack(
            client, tokens["attacker"], photo, self.config.display, distance,
            self.cam, seed, target_geo=scene.geo_origin,
            retries=self.config.retries)
        label_ok = outcome.success and outcome.detail.get("hologram_label") == "treasure"
        return {"success": bool(label_ok), "detail": outcome.detail,
                "truth": {"spoof_requests": True}}

    # -- scenario C ----------------------------------------------------------

    def _street_sequences(self, seed):
        spec_a, spec_b = presets.street_pair_specs()
        scene_a = W.generate_scene(spec_a, derive_seed(seed, "c-scene-a"))
        scene_b = W.generate_scene(spec_b, derive_seed(seed, "c-scene-b"))
        seq_a = walk_sequence(scene_a, self.cam, derive_seed(seed, "c-walk-a"))
        seq_b = walk_sequence(scene_b, self.cam, derive_seed(seed, "c-walk-b"))
        return scene_a, scene_b, seq_a, seq_b

    def benign_c_trial(self, seed) -> dict:
        """Single truthful upload followed by a descriptor-only read."""
        client, tokens = self._fresh()
        scene = W.generate_scene(presets.street_spec(), derive_seed(seed, "c-scene"))
        seq = walk_sequence(scene, self.cam, derive_seed(seed, "c-walk"))
        holo = Hologram(id="s", payload=b"street-sign", label="street_sign",
                        pose_in_region=Pose.look_at((0, 0, 1), (1, 0, 1)))
        client.ingest_sequence(tokens["victim"], seq, holograms=[holo])
        vpose = Pose.look_at(scene.center + np.array([2.2, 1.2, 0.5]),
                             scene.center)
        vobs = W.capture(scene, vpose, self.cam, derive_seed(seed, "c-victim"))
        try:
            holos = client.read_crowd_map(tokens["victim"], vobs)["holograms"]
        except ArShareError as e:
            return {"success": False, "detail": {"outcome": e.code}}
        return {"success": any(h["label"] == "street_sign" for h in holos),
                "detail": {}}

    def gps_swap_trial(self, seed, swapped=True) -> dict:
        client, tokens = self._fresh()
        scene_a, scene_b, seq_a, seq_b = self._street_sequences(seed)
        holo_a = Hologram(id="a", payload=b"dig-safe", label="dig_safe",
                          pose_in_region=Pose.look_at((0, 0, 1), (1, 0, 1)))
        holo_b = Hologram(id="b", payload=b"danger-gas-line", label="danger_gas",
                          pose_in_region=Pose.look_at((0, 0, 1), (1, 0, 1)))
        if swapped:
            seq_a2, seq_b2 = attacks.gps_swap_attack(seq_a, seq_b)
            client.ingest_sequence(tokens["attacker"], seq_a2, holograms=[holo_b])
            client.ingest_sequence(tokens["attacker"], seq_b2, holograms=[holo_a])
        else:
            client.ingest_sequence(tokens["victim"], seq_a, holograms=[holo_a])
            client.ingest_sequence(tokens["victim"], seq_b, holograms=[holo_b])
        vpose = Pose.look_at(scene_a.center + np.array([2.2, 1.2, 0.5]),
                             scene_a.center)
        vobs = W.capture(scene_a, vpose, self.cam, derive_seed(seed, "c-victim"))
        try:
            holos = client.read_crowd_map(tokens["victim"], vobs)["holograms"]
        except ArShareError as e:
            return {"success": False, "detail": {"outcome": e.code}}
        labels = {h["label"] for h in holos}
        expected = "danger_gas" if swapped else "dig_safe"
        wrong = "dig_safe" if swapped else "danger_gas"
        ok = expected in labels and wrong not in labels
        return {"success": ok, "detail": {"labels": sorted(labels)}}

    def fake_object_trial(self, seed, mode="scaled") -> dict:
        client, tokens = self._fresh()
        spec = presets.street_spec()
        scene = W.generate_scene(spec, derive_seed(seed, "c-street"))
        placement = scene.center + np.array([0.5, -0.4, 1.2])
        seq = walk_sequence(scene, self.cam, derive_seed(seed, "c-walk"),
                            toward=placement)
        try:
            tampered = attacks.inject_fake_object(
                seq, "stop_sign", placement, self.cam, seed,
                imperfect=(mode == "unscaled"),
                max_images=2 if mode == "two_images" else None)
        except ArShareError as e:
            return {"success": False,
                    "detail": {"outcome": e.code, "stage": "inject"}}
        res = client.ingest_sequence(tokens["attacker"], tampered)
        verdicts = [v for v in res["object_verdicts"]
                    if v["object_class"] == "stop_sign"]
        if not verdicts or not verdicts[0]["accepted"]:
            reason = verdicts[0]["reason"] if verdicts else "not_detected"
            return {"success": False, "detail": {"outcome": reason, "stage": "ingest"}}
        position = np.array(verdicts[0]["position"])
        err = float(np.linalg.norm(position - placement))
        return {"success": True,
                "detail": {"outcome": "accepted", "placement_error_m": err}}

    # -- token defense --------------------------------------------------------

    def _set_registered_token(self, client, key, epoch, descriptor):
        state = client.admin_export()
        state["tokens"][key] = {"epoch": int(epoch),
                                "descriptor": [float(v) for v in descriptor]}
        client.admin_import(state)

    def token_defense_trial(self, seed, case="spoof") -> dict:
        """Spoofs sourced before a token rotation must fail verification;
        genuine reads of the rotated scene must keep working."""
        spec = dc_replace(presets.indoor_spec(), with_token=True)
        scene = W.generate_scene(spec, derive_seed(seed, "scene"))
        authority = TokenAuthority()
        scene_live, token1 = authority.issue_token(scene, 1)
        state = dc_replace(self.config.state,
                           defenses={"token_check": {"key": scene.id}})
        client, tokens = self._fresh(state=state)
        self._set_registered_token(client, scene.id, 1, token1.descriptor)
        anchor_id, poses = self._host_victim_anchor(client, tokens, scene_live, seed)
        photo = self._attacker_photo(scene_live, poses[0], seed)

        scene_rotated, token2 = authority.rotate_token(scene_live, 2)
        self._set_registered_token(client, scene.id, 2, token2.descriptor)

        if case == "genuine":
            obs = self._victim_observation(scene_rotated, poses[0], seed)
            try:
                res = client.resolve_anchor(tokens["victim"], anchor_id, obs,
                                            obs.imu_orientation)
                return {"success": res["hologram"]["label"] == "victim-secret",
                        "detail": {}}
            except ArShareError as e:
                return {"success": False, "detail": {"outcome": e.code}}
        outcome = attacks.remote_read_attack(
            client, tokens["attacker"], photo, self.config.display, 0.5,
            self.cam, seed, anchor_id=anchor_id, retries=self.config.retries)
        return {"success": outcome.success, "detail": outcome.detail,
                "truth": {"spoof_requests": True}}

    # -- dispatch -------------------------------------------------------------

    def run_cell_trial(self, cell: Cell, seed) -> dict:
        scenario = self.config.scenario
        if cell.kind == "benign":
            if scenario == "A":
                return self.benign_a_trial(seed)
            if scenario == "B":
                return self.benign_b_trial(seed)
            return self.benign_c_trial(seed)
        if cell.kind == "remote_read":
            trial = (self.remote_read_a_trial if scenario == "A"
                     else self.remote_read_b_trial)
            return trial(seed, cell.params["distance"], cell.params["condition"])
        if cell.kind == "remote_write":
            return self.remote_write_a_trial(seed, cell.params["distance"],
                                             cell.params["condition"])
        if cell.kind == "triggered_write":
            out = self.triggered_write_trial(seed)
            case = cell.params["case"]
            return {"success": out["cases"][case], "detail": out["detail"],
                    "truth": out.get("truth", {})}
        if cell.kind == "gps_swap":
            return self.gps_swap_trial(seed, swapped=cell.params["swapped"])
        if cell.kind == "fake_object":
            return self.fake_object_trial(seed, mode=cell.params["mode"])
        raise ConfigError(f"unknown cell kind: {cell.kind}")


# --------------------------------------------------------------------------
# aggregation and reports
# --------------------------------------------------------------------------

def wilson_interval(successes: int, trials: int, z: float = WILSON_Z):
    if trials <= 0:
        raise StatError("cannot summarize zero trials")
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials
                         + z * z / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def summarize(cell_id: str, outcomes) -> dict:
    if not outcomes:
        raise StatError("cannot summarize an empty cell")
    trials = len(outcomes)
    successes = sum(1 for o in outcomes if o["success"])
    lo, hi = wilson_interval(successes, trials)
    return {
        "cell_id": cell_id,
        "condition": cell_id.split("/", 1)[1] if "/" in cell_id else "default",
        "trials": trials,
        "successes": successes,
        "success_rate": successes / trials,
        "ci_lo": lo,
        "ci_hi": hi,
    }


def config_hash(config: ExperimentConfig) -> str:
    payload = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


def run_experiment(config: ExperimentConfig, wire_address=None) -> dict:
    """Run all cells; the report is a pure function of (config, master_seed)."""
    cells = plan_cells(config)
    report_cells = []
    trial_log = []
    with TrialRunner(config, wire_address=wire_address) as runner:
        for cell in cells:
            outcomes = []
            for index in range(config.trials_per_cell):
                seed = derive_seed(config.master_seed, cell.cell_id, index)
                out = runner.run_cell_trial(cell, seed)
                outcomes.append(out)
                trial_log.append({
                    "cell_id": cell.cell_id,
                    "trial_index": index,
                    "seed": seed,
                    "success": bool(out["success"]),
                    "detail": out.get("detail", {}),
                    # ground truth for evaluation only; never fed back into
                    # any server decision
                    "ground_truth": out.get("truth", {}),
                })
            report_cells.append(summarize(cell.cell_id, outcomes))
    return {
        "header": {
            "artifact": "arshare",
            "version": ARTIFACT_VERSION,
            "master_seed": config.master_seed,
            "config_hash": config_hash(config),
            "config": config.to_dict(),
        },
        "cells": report_cells,
        "trials": trial_log,
    }


def _fmt(x) -> str:
    return f"{x:.6g}"


def emit_report(report: dict, path, fmt: str = "csv"):
    """Write the report; CSV is the cell table, JSON the full structure."""
    path = str(path)
    if fmt == "csv":
        lines = ["cell_id,condition,trials,successes,rate,ci_lo,ci_hi"]
        for c in report["cells"]:
            lines.append(",".join([
                c["cell_id"], c["condition"], str(c["trials"]),
                str(c["successes"]), _fmt(c["success_rate"]),
                _fmt(c["ci_lo"]), _fmt(c["ci_hi"]),
            ]))
        payload = "\n".join(lines) + "\n"
    elif fmt == "json":
        payload = json.dumps(report, sort_keys=True, indent=2) + "\n"
    else:
        raise ConfigError(f"unknown report format: {fmt}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(payload)
    except OSError as e:
        raise IoError(f"cannot write report to {path}: {e}") from None
    return path


# --------------------------------------------------------------------------
# depth-detector evaluation (balanced genuine/spoof set)
# --------------------------------------------------------------------------

def depth_detector_confusion(n_each: int, seed, cam=None,
                             params: DepthCheckParams = DepthCheckParams(),
                             scene_spec: SceneSpec = None) -> dict:
    """Confusion counts of the planar-spoof detector over a balanced set of
    genuine and spoofed observations of randomized scenes."""
    cam = cam or presets.default_camera()
    spec = scene_spec or presets.indoor_spec()
    tp = fp = tn = fn = 0
    for i in range(n_each):
        scene = W.generate_scene(spec, derive_seed(seed, "eval-scene", i))
        pose = ring_poses(scene, derive_seed(seed, "eval-pose", i), n=1)[0]
        genuine = W.capture_scan(scene, pose, cam, derive_seed(seed, "eval-gen", i))
        if detect_planar_spoof(genuine, params).flagged:
            fp += 1
        else:
            tn += 1
        photo = W.capture(scene, pose, cam, derive_seed(seed, "eval-photo", i))
        surface = W.make_spoof_surface(photo, presets.DISPLAY_SIZE,
                                       W.display_pose_for(photo))
        spoof = W.capture_spoof(surface, W.facing_pose(surface, 0.5), cam,
                                derive_seed(seed, "eval-spoof", i))
        if detect_planar_spoof(spoof, params).flagged:
            tp += 1
        else:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    return {"tp": tp, "fp": fp, "tn": tn, "fn": fn,
            "precision": precision, "recall": recall, "f1": f1}
