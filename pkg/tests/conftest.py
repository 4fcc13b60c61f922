import numpy as np
import pytest

import kincal as kc


def seven_joint_arm() -> kc.KinematicModel:
    """7R chain with link geometry of a typical collaborative arm."""
    J = kc.JointKind.REVOLUTE
    return kc.KinematicModel(
        kc.Segment(joint=J),
        (
            kc.Segment(alpha=np.pi / 2, joint=J),
            kc.Segment(alpha=-np.pi / 2, x=0.42, joint=J),
            kc.Segment(alpha=-np.pi / 2, joint=J),
            kc.Segment(alpha=np.pi / 2, x=0.40, joint=J),
            kc.Segment(alpha=np.pi / 2, joint=J),
            kc.Segment(alpha=-np.pi / 2, joint=J),
        ),
        kc.EESegment(z=0.1),
    )


def planar_2r(l1: float, l2: float) -> kc.KinematicModel:
    J = kc.JointKind.REVOLUTE
    return kc.KinematicModel(
        kc.Segment(joint=J),
        (kc.Segment(x=l1, joint=J),),
        kc.EESegment(x=l2),
    )


def random_model(rng, links: int = 2) -> kc.KinematicModel:
    J = kc.JointKind.REVOLUTE
    def seg():
        a, b, x, y = rng.uniform(-1.0, 1.0, 4)
        return kc.Segment(alpha=a, beta=b, x=x, y=y, joint=J)
    ee_vals = rng.uniform(-1.0, 1.0, 6)
    return kc.KinematicModel(seg(), tuple(seg() for _ in range(links)),
                             kc.EESegment(*ee_vals))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
