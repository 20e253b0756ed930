import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.spatial.transform import Rotation

from artikin.geometry import RigidTransform
from artikin.joints import RelativePoseSeq
from artikin.kinematics import JointModel, joint_transform

settings.register_profile("artikin", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("artikin")


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_transform(rng, scale=1.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.normal(scale=scale, size=3))


def random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def revolute_model(rng, n=30, span_deg=45.0, jitter=True) -> JointModel:
    u = random_unit(rng)
    states = np.radians(np.linspace(0.0, span_deg, n))
    if jitter:
        states[1:-1] += rng.normal(scale=np.radians(span_deg) / (4 * n), size=n - 2)
    return JointModel.revolute(u, rng.normal(scale=0.3, size=3), states)


def prismatic_model(rng, n=30, stroke=0.1) -> JointModel:
    return JointModel.prismatic(random_unit(rng), np.linspace(0.0, stroke, n))


def noisy_rotation(R, rng, sigma_deg):
    if sigma_deg == 0:
        return R
    return Rotation.from_rotvec(rng.normal(scale=np.radians(sigma_deg), size=3)).as_matrix() @ R


def relative_sequence(model: JointModel, rng=None, rot_noise_deg=0.0, trans_noise=0.0, center=None) -> RelativePoseSeq:
    """Relative poses generated directly from ``model`` with optional perturbation."""
    poses = []
    for i in range(model.frame_count):
        T = joint_transform(model, i)
        if i and (rot_noise_deg or trans_noise):
            T = RigidTransform(noisy_rotation(T.rotation, rng, rot_noise_deg), T.translation + rng.normal(scale=trans_noise, size=3))
        poses.append(T)
    c = np.zeros(3) if center is None else np.asarray(center, dtype=float)
    return RelativePoseSeq(poses, np.ones(len(poses), dtype=bool), c)


@functools.lru_cache(maxsize=None)
def preset_scene(name, seed=0, frames=60, noise="benchmark"):
    from artikin.synth import NoiseSpec, benchmark_noise, generate_scene, preset

    spec = preset(name, seed=seed, frames=frames, noise=benchmark_noise() if noise == "benchmark" else NoiseSpec())
    return generate_scene(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary: one line per criterion ---------------------------------

_CRITERIA = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if "test_acceptance.py::test_criterion_" not in item.nodeid:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = dict(item.user_properties).get("detail", "")
        _CRITERIA.append((item.name, "PASS" if rep.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, status, detail in sorted(_CRITERIA):
        terminalreporter.write_line(f"{status}  {name}" + (f"  ({detail})" if detail else ""))
