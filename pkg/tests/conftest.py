import math

import numpy as np
import pytest

from cellplace import builtin_kr6r900


@pytest.fixture(scope="session")
def robot():
    return builtin_kr6r900()


def sample_joints_canonical(robot, rng, count, theta5_margin=0.05):
    """Random in-limit joint vectors from the canonical (-pi, pi] window.

    Stays off the wrist singularity; other branch boundaries are generic
    enough for random sampling.
    """
    lo, hi = robot.limits
    lo = np.maximum(lo, -math.pi + 1e-9)
    hi = np.minimum(hi, math.pi)
    out = []
    while len(out) < count:
        theta = rng.uniform(lo, hi)
        if abs(theta[4]) < theta5_margin:
            continue
        out.append(theta)
    return out
