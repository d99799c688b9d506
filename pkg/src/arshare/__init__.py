"""arshare: deterministic simulator and attack/defense harness for
multi-user AR shared state."""

__version__ = "0.1.0"

from .world import (  # noqa: F401
    CameraParams,
    ExifRecord,
    FeaturePoint,
    GeoCoord,
    Observation,
    Perturbation,
    Pose,
    Sample,
    Scene,
    SceneSpec,
    SpoofSurface,
    capture,
    capture_scan,
    capture_spoof,
    generate_scene,
    make_spoof_surface,
    perturb_scene,
)
from .matching import (  # noqa: F401
    MatchParams,
    MatchResult,
    PlaneFit,
    QualityScore,
    check_orientation,
    fit_plane,
    match_descriptors,
    score_map_quality,
    triangulate,
)
from .shared_state import (  # noqa: F401
    Anchor,
    Hologram,
    MapRegion,
    Principal,
    SharedStateConfig,
    SharedStateStore,
)
from .defense import (  # noqa: F401
    DepthCheckParams,
    SpoofVerdict,
    TokenAuthority,
    TokenFeature,
    detect_planar_spoof,
    enforce_policy,
    verify_token,
)
from .attacks import (  # noqa: F401
    AttackOutcome,
    TriggerSpec,
    brute_force_room,
    gps_swap_attack,
    inject_fake_object,
    remote_read_attack,
    remote_write_attack,
    triggered_write_attack,
)
from .harness import (  # noqa: F401
    ExperimentConfig,
    TrialRunner,
    emit_report,
    run_experiment,
    summarize,
    wilson_interval,
)
