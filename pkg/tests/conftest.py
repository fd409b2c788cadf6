import numpy as np
import pytest

from sewb.kinematics import N_BASE, ArmJoint, Capsule, JointConfig, RobotModel, load_model


@pytest.fixture(scope="session")
def model():
    return load_model()


def random_config(model, rng, margin=0.1, spread=3.0):
    """Arm joints drawn inside their limits, base pose anywhere in a small square."""
    lo, hi = model.lower[N_BASE:] + margin, model.upper[N_BASE:] - margin
    arm = rng.uniform(lo, hi)
    x, y = rng.uniform(-spread, spread, 2)
    phi = rng.uniform(-np.pi, np.pi)
    return JointConfig(d=rng.uniform(-1, 1), phi=phi, arm=arm, x=x, y=y)


def toy_model(n_arm=1, ee=(1.0, 0.0, 0.0), capsules=None, max_reach=2.0, base_radius=0.3):
    """Arm of ``n_arm`` z-axis revolute joints stacked at the mount origin."""
    joints = [ArmJoint(f"j{i + 1}", np.eye(4), np.array([0.0, 0.0, 1.0])) for i in range(n_arm)]
    ee_offset = np.eye(4)
    ee_offset[:3, 3] = ee
    n = N_BASE + n_arm
    return RobotModel(
        name="toy",
        joints=joints,
        mount=np.eye(4),
        ee_offset=ee_offset,
        lower=np.array([-np.inf, -np.inf] + [-3.0] * n_arm),
        upper=np.array([np.inf, np.inf] + [3.0] * n_arm),
        max_velocity=np.ones(n),
        base_radius=base_radius,
        capsules=capsules if capsules is not None else [
            Capsule(N_BASE + 1, np.zeros(3), np.array(ee, dtype=float), 0.05)
        ],
        max_reach=max_reach,
    )


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
