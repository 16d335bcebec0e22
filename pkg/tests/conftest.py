"""
Shared fixtures: small deterministic synthetic scenes and evaluation configs.

Read more about conftest.py under:
- https://docs.pytest.org/en/stable/fixture.html
"""
import pytest

from segerr.apis.data import EvalConfig
from segerr.names import GeneratorKind
from segerr.synth import SceneSpec, generate_scene
from tests.test_classes.data import FakeSceneSource


@pytest.fixture(scope="session")
def two_planes():
    """2601 lattice points, label 0 left of x = 0.5 and 1 from there on."""
    return generate_scene(SceneSpec(GeneratorKind.TWO_PLANES))


@pytest.fixture(scope="session")
def checkerboard():
    return generate_scene(
        SceneSpec(GeneratorKind.CHECKERBOARD, tile=0.2, num_classes=2)
    )


@pytest.fixture(scope="session")
def spheres():
    """A floor of class 0 with two separate class-1 spheres above it."""
    return generate_scene(SceneSpec(GeneratorKind.SPHERES_IN_BOX))


@pytest.fixture(scope="session")
def floating_spheres():
    return generate_scene(SceneSpec(GeneratorKind.SPHERES_IN_BOX, floor=False))


@pytest.fixture(scope="session")
def fake_source():
    return FakeSceneSource()


@pytest.fixture
def cfg():
    return EvalConfig(num_classes=2)
