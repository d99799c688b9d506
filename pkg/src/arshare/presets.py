"""Calibrated default worlds and service configurations.

The noise and geometry constants here were tuned so that benign flows
succeed essentially always while attack success follows the qualitative
trends the harness is built to reproduce; they are calibration constants,
not claims about any production system.
"""

from .matching import MatchParams
from .shared_state import SharedStateConfig
from .world import CameraParams, GeoCoord, SceneSpec

DISPLAY_SIZE = (0.64, 0.48)  # desk monitor, meters


def default_camera(**overrides) -> CameraParams:
    params = dict(fov_deg=70.0, max_range=12.0, min_focus=0.5,
                  pixels=(640, 480), sigma_descriptor=0.056,
                  sigma_depth=0.01, k_defocus=2.0)
    params.update(overrides)
    return CameraParams(**params)


def indoor_spec(name="indoor", trigger_count=0, with_token=False) -> SceneSpec:
    return SceneSpec(name=name, feature_count=200, plane_count=3,
                     bounds=((-3.0, -3.0, 0.0), (3.0, 3.0, 3.0)),
                     plane_fraction=0.6, feature_extent=(0.03, 0.09),
                     trigger_count=trigger_count, with_token=with_token)


def garden_spec() -> SceneSpec:
    """Sparse outdoor garden: a single plane, so the hosting gate fails for
    attackers and legitimate writers alike."""
    return SceneSpec(name="garden", feature_count=160, plane_count=1,
                     bounds=((-4.0, -4.0, 0.0), (4.0, 4.0, 3.0)),
                     plane_fraction=0.35, feature_extent=(0.03, 0.09))


def wall_spec() -> SceneSpec:
    """Degenerate scene whose visible features all lie on one wall; genuine
    captures of it are planar and trip the depth defense by design."""
    return SceneSpec(name="wall", feature_count=120, plane_count=1,
                     bounds=((-3.0, -3.0, 0.0), (3.0, 3.0, 3.0)),
                     plane_fraction=1.0, feature_extent=(0.03, 0.09))


def campus_spec(index: int) -> SceneSpec:
    geo = GeoCoord(lat=40.0 + index * 0.002, lon=-80.0)  # ~220 m spacing
    return SceneSpec(name=f"campus-{index}", feature_count=200, plane_count=3,
                     bounds=((-3.0, -3.0, 0.0), (3.0, 3.0, 3.0)),
                     plane_fraction=0.6, feature_extent=(0.03, 0.09), geo=geo)


def street_pair_specs() -> tuple:
    geo_a = GeoCoord(lat=41.0, lon=-80.0)
    geo_b = GeoCoord(lat=41.005, lon=-80.0)  # ~550 m apart
    spec_a = SceneSpec(name="grass-field", feature_count=200, plane_count=3,
                       bounds=((-3.0, -3.0, 0.0), (3.0, 3.0, 3.0)),
                       plane_fraction=0.6, feature_extent=(0.03, 0.09), geo=geo_a)
    spec_b = SceneSpec(name="pipe-site", feature_count=200, plane_count=3,
                       bounds=((-3.0, -3.0, 0.0), (3.0, 3.0, 3.0)),
                       plane_fraction=0.6, feature_extent=(0.03, 0.09), geo=geo_b)
    return spec_a, spec_b


def street_spec(name="street") -> SceneSpec:
    return SceneSpec(name=name, feature_count=200, plane_count=3,
                     bounds=((-3.0, -3.0, 0.0), (3.0, 3.0, 3.0)),
                     plane_fraction=0.6, feature_extent=(0.03, 0.09),
                     geo=GeoCoord(lat=42.0, lon=-80.0))


def scenario_a_state(defenses=None, debug_verdicts=True) -> SharedStateConfig:
    return SharedStateConfig(
        scope="local", curation="non_curated",
        key_requirements=frozenset({"camera", "imu"}),
        anchor_ttl_days=365.0, defenses=defenses or {},
        match=MatchParams(), debug_verdicts=debug_verdicts)


def scenario_b_state(defenses=None, debug_verdicts=True) -> SharedStateConfig:
    return SharedStateConfig(
        scope="global", curation="curated",
        key_requirements=frozenset({"camera", "imu", "gps"}),
        anchor_ttl_days=None, gps_gate_radius_m=30.0,
        defenses=defenses or {}, match=MatchParams(),
        debug_verdicts=debug_verdicts)


def scenario_c_state(defenses=None, debug_verdicts=True) -> SharedStateConfig:
    return SharedStateConfig(
        scope="global", curation="non_curated",
        key_requirements=frozenset({"camera"}),
        anchor_ttl_days=None, defenses=defenses or {},
        match=MatchParams(), debug_verdicts=debug_verdicts)


def state_for_scenario(scenario: str, defenses=None) -> SharedStateConfig:
    builders = {"A": scenario_a_state, "B": scenario_b_state, "C": scenario_c_state}
    return builders[scenario](defenses=defenses)
