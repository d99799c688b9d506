import json

import numpy as np
import pytest

from arshare import attacks, presets
from arshare import world as W
from arshare.errors import InjectError, SwapError
from arshare.harness import ExperimentConfig, TrialRunner, ring_poses, walk_sequence
from arshare.protocol import InProcessClient, observation_to_wire
from arshare.rng import derive_seed
from arshare.shared_state import Hologram, SharedStateStore


def holo(label="x"):
    return Hologram(id="h", payload=label.encode(), label=label,
                    pose_in_region=W.Pose.look_at((0, 0, 1), (1, 0, 1)))


@pytest.fixture()
def hosted_client(indoor_scene, cam):
    store = SharedStateStore(presets.scenario_a_state())
    client = InProcessClient(store)
    victim = store.register_principal("user")
    attacker = store.register_principal("user")
    poses = ring_poses(indoor_scene, derive_seed("atk", "poses"))
    scans = [W.capture_scan(indoor_scene, p, cam, derive_seed("atk", "host", k))
             for k, p in enumerate(poses)]
    res = client.host_anchor(victim.token, scans, holo("victim-secret"),
                             scans[0].imu_orientation)
    return client, victim, attacker, poses, res["anchor_id"]


class TestBruteForceRoom:
    def test_enumerates_live_codes(self, hosted_client, indoor_scene, cam):
        client, victim, attacker, poses, _ = hosted_client
        for k in range(2):  # host two more anchors -> codes 1,2,3
            scans = [W.capture_scan(indoor_scene, p, cam, derive_seed("bf", k, j))
                     for j, p in enumerate(poses)]
            client.host_anchor(victim.token, scans, holo(), scans[0].imu_orientation)
        assert attacks.brute_force_room(client, attacker.token, 10) == [1, 2, 3]

    def test_empty_store(self):
        store = SharedStateStore(presets.scenario_a_state())
        client = InProcessClient(store)
        attacker = store.register_principal("user")
        assert attacks.brute_force_room(client, attacker.token, 10) == []

    def test_respects_bound(self, hosted_client, indoor_scene, cam):
        client, victim, attacker, poses, _ = hosted_client
        for k in range(4):  # five total
            scans = [W.capture_scan(indoor_scene, p, cam, derive_seed("bf2", k, j))
                     for j, p in enumerate(poses)]
            client.host_anchor(victim.token, scans, holo(), scans[0].imu_orientation)
        assert attacks.brute_force_room(client, attacker.token, 3) == [1, 2, 3]


class TestRemoteRead:
    def test_succeeds_against_weak_defaults(self, hosted_client, indoor_scene, cam):
        client, _, attacker, poses, aid = hosted_client
        photo = W.capture(indoor_scene, poses[0], cam, derive_seed("rr", "photo"))
        out = attacks.remote_read_attack(client, attacker.token, photo,
                                         presets.DISPLAY_SIZE, 0.5, cam,
                                         derive_seed("rr", 1), anchor_id=aid)
        assert out.success
        assert out.detail["hologram_label"] == "victim-secret"

    def test_wrong_scene_display_fails(self, hosted_client, cam):
        client, _, attacker, _, aid = hosted_client
        other = W.generate_scene(presets.indoor_spec(name="unrelated"), seed=50)
        pose = W.Pose.look_at(other.center + np.array([2.2, 1.5, 0.4]), other.center)
        photo = W.capture(other, pose, cam, derive_seed("rr", "wrong"))
        out = attacks.remote_read_attack(client, attacker.token, photo,
                                         presets.DISPLAY_SIZE, 0.5, cam,
                                         derive_seed("rr", 2), anchor_id=aid)
        assert not out.success

    def test_outcome_deterministic(self, hosted_client, indoor_scene, cam):
        client, _, attacker, poses, aid = hosted_client
        photo = W.capture(indoor_scene, poses[0], cam, derive_seed("rr", "photo"))
        o1 = attacks.remote_read_attack(client, attacker.token, photo,
                                        presets.DISPLAY_SIZE, 0.5, cam,
                                        derive_seed("rr", 3), anchor_id=aid)
        o2 = attacks.remote_read_attack(client, attacker.token, photo,
                                        presets.DISPLAY_SIZE, 0.5, cam,
                                        derive_seed("rr", 3), anchor_id=aid)
        assert json.dumps(o1.detail, sort_keys=True) == json.dumps(o2.detail,
                                                                   sort_keys=True)
        assert o1.success == o2.success


class TestRemoteWrite:
    def test_garden_scene_blocked_by_hosting_gate(self, cam):
        scene = W.generate_scene(presets.garden_spec(), seed=3)
        store = SharedStateStore(presets.scenario_a_state())
        client = InProcessClient(store)
        attacker = store.register_principal("user")
        pose = ring_poses(scene, derive_seed("garden", 0), n=1)[0]
        photo = W.capture(scene, pose, cam, derive_seed("garden", "photo"))
        out = attacks.remote_write_attack(
            client, attacker.token, photo, holo("attacker-mark"),
            presets.DISPLAY_SIZE, 0.5, cam, derive_seed("garden", 1),
            victim_read=lambda aid: None)
        assert not out.success
        assert out.detail["host_outcome"] == "host_rejected"

    def test_attack_uses_only_public_api(self, indoor_scene, cam):
        cfg = ExperimentConfig(scenario="A", attack="remote_write")
        with TrialRunner(cfg) as runner:
            runner.remote_write_a_trial(derive_seed("audit", 0), 0.5)
            # the runner shares one client per trial; inspect the last one
        store = SharedStateStore(presets.scenario_a_state())
        client = InProcessClient(store)
        attacker = store.register_principal("user")
        pose = ring_poses(indoor_scene, derive_seed("audit", "p"), n=1)[0]
        photo = W.capture(indoor_scene, pose, cam, derive_seed("audit", "photo"))
        attacks.remote_read_attack(client, attacker.token, photo,
                                   presets.DISPLAY_SIZE, 0.5, cam,
                                   derive_seed("audit", 1), anchor_id=1)
        attacks.remote_write_attack(client, attacker.token, photo, holo(),
                                    presets.DISPLAY_SIZE, 0.5, cam,
                                    derive_seed("audit", 2),
                                    victim_read=lambda aid: None)
        attacks.brute_force_room(client, attacker.token, 3)
        allowed = {"HostAnchor", "ResolveAnchor", "LocalizeVps", "PlaceHologram",
                   "IngestSequence", "ReadCrowdMap"}
        assert set(client.audit_log) <= allowed


class TestGpsSwap:
    def _pair(self, cam, seed=0):
        spec_a, spec_b = presets.street_pair_specs()
        scene_a = W.generate_scene(spec_a, derive_seed("swap", seed, "a"))
        scene_b = W.generate_scene(spec_b, derive_seed("swap", seed, "b"))
        seq_a = walk_sequence(scene_a, cam, derive_seed("swap", seed, "wa"))
        seq_b = walk_sequence(scene_b, cam, derive_seed("swap", seed, "wb"))
        return seq_a, seq_b

    def test_involution(self, cam):
        seq_a, seq_b = self._pair(cam)
        once_a, once_b = attacks.gps_swap_attack(seq_a, seq_b)
        twice_a, twice_b = attacks.gps_swap_attack(once_a, once_b)
        for orig, back in zip(list(seq_a) + list(seq_b), list(twice_a) + list(twice_b)):
            assert (json.dumps(observation_to_wire(orig), sort_keys=True)
                    == json.dumps(observation_to_wire(back), sort_keys=True))

    def test_geo_tracks_exchanged(self, cam):
        seq_a, seq_b = self._pair(cam, seed=1)
        swapped_a, swapped_b = attacks.gps_swap_attack(seq_a, seq_b)
        for sa, ob in zip(swapped_a, seq_b):
            assert sa.exif.geo == ob.exif.geo
        for sb, oa in zip(swapped_b, seq_a):
            assert sb.exif.geo == oa.exif.geo

    def test_content_untouched(self, cam):
        seq_a, seq_b = self._pair(cam, seed=2)
        swapped_a, _ = attacks.gps_swap_attack(seq_a, seq_b)
        for orig, sw in zip(seq_a, swapped_a):
            a = observation_to_wire(orig)
            b = observation_to_wire(sw)
            a.pop("exif")
            b.pop("exif")
            assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_length_mismatch(self, cam):
        seq_a, seq_b = self._pair(cam, seed=3)
        with pytest.raises(SwapError):
            attacks.gps_swap_attack(seq_a[:-1], seq_b)

    def test_end_to_end_victim_sees_wrong_hologram(self, cam):
        cfg = ExperimentConfig(scenario="C", attack="gps_swap")
        with TrialRunner(cfg) as runner:
            out = runner.gps_swap_trial(derive_seed("swap-e2e", 0), swapped=True)
        assert out["success"]
        assert "danger_gas" in out["detail"]["labels"]


class TestInjectFakeObject:
    def test_two_visible_images_raise(self, cam):
        scene = W.generate_scene(presets.street_spec(), derive_seed("inj", "scene"))
        placement = scene.center + np.array([0.5, -0.4, 1.2])
        seq = walk_sequence(scene, cam, derive_seed("inj", "walk"), toward=placement)
        with pytest.raises(InjectError):
            attacks.inject_fake_object(seq, "stop_sign", placement, cam, 1,
                                       max_images=2)

    def test_sizes_follow_inverse_distance(self, cam):
        scene = W.generate_scene(presets.street_spec(), derive_seed("inj2", "scene"))
        placement = scene.center + np.array([0.5, -0.4, 1.2])
        seq = walk_sequence(scene, cam, derive_seed("inj2", "walk"), toward=placement)
        tampered = attacks.inject_fake_object(seq, "stop_sign", placement, cam, 2)
        consts = []
        for obs in tampered:
            added = obs.samples[len(obs.samples) - 1]
            if added.feature_id is None and added.plane_id is None:
                dist = float(np.linalg.norm(placement - obs.pose.position))
                consts.append(added.size_px * dist)
        assert len(consts) >= 3
        assert max(consts) - min(consts) < 1e-6 * max(consts)


class TestTriggerSpec:
    def test_requires_at_least_one_feature(self):
        from arshare.errors import SpecError
        with pytest.raises(SpecError):
            attacks.TriggerSpec(trigger_feature_count=0)
        assert attacks.TriggerSpec().trigger_feature_count == 10
