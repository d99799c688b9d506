import numpy as np
import pytest

from arshare import presets
from arshare import world as W
from arshare.rng import derive_seed


@pytest.fixture(scope="session")
def cam():
    return presets.default_camera()


@pytest.fixture(scope="session")
def cam_noiseless():
    return presets.default_camera(sigma_descriptor=0.0, sigma_depth=0.0)


@pytest.fixture(scope="session")
def indoor_scene():
    return W.generate_scene(presets.indoor_spec(), seed=1)


@pytest.fixture(scope="session")
def corner_pose(indoor_scene):
    return W.Pose.look_at(indoor_scene.center + np.array([2.2, 2.2, 0.4]),
                          indoor_scene.center)


@pytest.fixture()
def photo_surface(indoor_scene, corner_pose, cam):
    photo = W.capture(indoor_scene, corner_pose, cam, derive_seed("fixture", "photo"))
    surface = W.make_spoof_surface(photo, presets.DISPLAY_SIZE,
                                   W.display_pose_for(photo))
    return photo, surface
