import math

import pytest

from srcid.mesh import build_ellipse_mesh, refine


@pytest.fixture(scope="session")
def ellipse_mesh():
    """Coarse mesh of the standard rotated ellipse (a few hundred nodes)."""
    return build_ellipse_mesh(1.0, 0.75, math.pi / 6, 0.12)


@pytest.fixture(scope="session")
def tiny_mesh():
    return build_ellipse_mesh(1.0, 0.75, math.pi / 6, 0.3)


@pytest.fixture(scope="session")
def disk_mesh():
    return refine(build_ellipse_mesh(1.0, 1.0, 0.0, 0.1))
