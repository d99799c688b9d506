"""Server-side mitigations: depth-based planar-spoof detection, rotating
locality tokens, and the policy hook that composes them with permissions.

The spoof detector relies on one physical fact: a photographed display is
flat, so the back-projected depth samples of a spoofed capture collapse
onto a single plane, while a real scene has depth structure.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateError, EpochError, SpecError
from .matching import PlaneFit, fit_plane
from .rng import generator, unit_vector
from .world import DESCRIPTOR_DIM, FeaturePoint, Scene

TOKEN_EXTENT_M = 0.2  # printed token sheet; comfortably resolvable


@dataclass(frozen=True)
class DepthCheckParams:
    eps_plane: float = 0.02
    f_plane: float = 0.9
    min_samples: int = 12

    def __post_init__(self):
        if not 0.0 < self.f_plane <= 1.0:
            raise SpecError("f_plane must be in (0, 1]")

    @classmethod
    def from_dict(cls, d):
        return cls(eps_plane=d.get("eps_plane", 0.02),
                   f_plane=d.get("f_plane", 0.9),
                   min_samples=d.get("min_samples", 12))


@dataclass(frozen=True)
class SpoofVerdict:
    flagged: bool
    reason: str  # planar | insufficient_samples_pass | genuine
    plane_fit: Optional[PlaneFit] = None

    def to_dict(self):
        return {
            "flagged": self.flagged,
            "reason": self.reason,
            "rms_residual": self.plane_fit.rms_residual if self.plane_fit else None,
            "inlier_fraction": self.plane_fit.inlier_fraction if self.plane_fit else None,
        }


@dataclass(frozen=True)
class TokenFeature:
    epoch: int
    descriptor: np.ndarray


@dataclass(frozen=True)
class PolicyDecision:
    allowed: bool
    reason: str = ""  # permissions | token | depth when denied
    verdicts: dict = field(default_factory=dict)


def detect_planar_spoof(observation, p: DepthCheckParams = DepthCheckParams()) -> SpoofVerdict:
    """Flag an observation whose depth geometry is a single plane."""
    if len(observation.samples) < p.min_samples:
        return SpoofVerdict(flagged=False, reason="insufficient_samples_pass")
    pts = observation.backprojected_points()
    try:
        fit = fit_plane(pts, eps_plane=p.eps_plane)
    except DegenerateError:
        # collinear depth geometry is still flat content
        return SpoofVerdict(flagged=True, reason="planar")
    flagged = fit.rms_residual <= p.eps_plane and fit.inlier_fraction >= p.f_plane
    return SpoofVerdict(flagged=flagged,
                        reason="planar" if flagged else "genuine",
                        plane_fit=fit)


# --------------------------------------------------------------------------
# rotating locality tokens
# --------------------------------------------------------------------------

_CHAIN_CACHE = {}


def token_descriptor(key: str, epoch: int, tau_cos: float = 0.90) -> np.ndarray:
    """Deterministic token descriptor for (key, epoch).

    Regenerates (by bumping a salt) until the descriptor's similarity to
    every earlier epoch's descriptor stays below tau_cos, so stale tokens
    can never pass verification against the current epoch.
    """
    if epoch < 1:
        raise EpochError("token epochs start at 1")
    chain = _CHAIN_CACHE.setdefault((key, tau_cos), [])
    while len(chain) < epoch:
        e = len(chain) + 1
        salt = 0
        while True:
            cand = unit_vector(generator("token", key, e, salt), DESCRIPTOR_DIM)
            if all(float(np.dot(cand, prev)) < tau_cos for prev in chain):
                break
            salt += 1
        chain.append(cand)
    return chain[epoch - 1]


class TokenAuthority:
    """Issues and rotates the physical token installed in a scene."""

    def __init__(self, tau_cos: float = 0.90):
        self.tau_cos = tau_cos
        self._epochs = {}

    def current_epoch(self, key: str) -> Optional[int]:
        return self._epochs.get(key)

    def issue_token(self, scene: Scene, epoch: int):
        """Install the epoch's token at the scene's token slot.

        Returns (scene_with_token, TokenFeature); any prior token feature
        is removed from the scene.
        """
        key = scene.id
        current = self._epochs.get(key)
        if current is not None and epoch <= current:
            raise EpochError(f"epoch must increase past {current}")
        if epoch < 1:
            raise EpochError("token epochs start at 1")
        descriptor = token_descriptor(key, epoch, self.tau_cos)
        feature = FeaturePoint(
            id=scene.next_feature_id(),
            position=scene.token_slot,
            descriptor=descriptor,
            tag="token",
            extent_m=TOKEN_EXTENT_M,
        )
        self._epochs[key] = epoch
        return scene.with_token_feature(feature), TokenFeature(epoch=epoch,
                                                               descriptor=descriptor)

    def rotate_token(self, scene: Scene, new_epoch: int):
        return self.issue_token(scene, new_epoch)


def verify_token(observation, key: str, current_epoch: int,
                 tau_cos: float = 0.90) -> bool:
    """True iff the observation contains a sample matching the live token."""
    expected = token_descriptor(key, current_epoch, tau_cos)
    for s in observation.samples:
        if float(np.dot(s.descriptor, expected)) >= tau_cos:
            return True
    return False


# --------------------------------------------------------------------------
# policy composition: permissions -> token -> depth, first failure wins
# --------------------------------------------------------------------------

def enforce_policy(store, principal, kind, observations, anchor=None) -> PolicyDecision:
    config = store.config
    verdicts = {}

    if kind == "map_write":
        allowed = config.curation == "non_curated" or principal.role == "curator"
        if not allowed:
            return PolicyDecision(False, "permissions", verdicts)

    token_cfg = config.defenses.get("token_check")
    if token_cfg:
        key = token_cfg.get("key")
        current = store.current_token(key) if key else None
        if current is not None:
            epoch, _ = current
            tau = config.match.tau_cos
            for obs in observations:
                if not verify_token(obs, key, epoch, tau):
                    return PolicyDecision(False, "token", verdicts)

    depth_cfg = config.defenses.get("depth_check")
    if depth_cfg is not None and depth_cfg is not False:
        params = DepthCheckParams.from_dict(depth_cfg if isinstance(depth_cfg, dict) else {})
        for i, obs in enumerate(observations):
            verdict = detect_planar_spoof(obs, params)
            verdicts[f"depth_{i}"] = verdict.to_dict()
            if verdict.flagged:
                return PolicyDecision(False, "depth", verdicts)

    return PolicyDecision(True, "", verdicts)
