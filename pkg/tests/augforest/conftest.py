import numpy as np
import pytest

from augforest.data.dataset import Dataset
from augforest.data.synth import GroupShift, synth_gaussian_groups
from augforest.model.problem import Problem, make_problem
from augforest.policy.refs import TransformRef
from augforest.transforms.registry import IDENTITY_TRANSFORM, Registry, default_vector_registry, make_transformation


@pytest.fixture
def vector_registry() -> Registry:
    return default_vector_registry()


@pytest.fixture
def single_level_registry() -> Registry:
    """Identity plus five transforms with one magnitude each."""
    return Registry(
        [
            IDENTITY_TRANSFORM,
            make_transformation("rotate2d", (1.0,)),
            make_transformation("jitter", (0.1,)),
            make_transformation("scale", (0.25,)),
            make_transformation("translate", (0.5,)),
            make_transformation("axis_flip", (0.25,)),
        ]
    )


@pytest.fixture
def rotate_half() -> TransformRef:
    """Rotate2D by pi/2 (magnitude 0.5)."""
    return TransformRef("rotate2d", 1)


@pytest.fixture
def jitter_small() -> TransformRef:
    return TransformRef("jitter", 0)


@pytest.fixture
def two_groups() -> Dataset:
    """Group 1 is plain, group 2's held-out rows are turned half a circle."""
    return synth_gaussian_groups(
        2, 80, [GroupShift(), GroupShift(heldout_rotation_deg=180.0)], rng_seed=11
    )


@pytest.fixture
def one_group() -> Dataset:
    return synth_gaussian_groups(1, 120, None, rng_seed=5)


@pytest.fixture
def vector_problem(two_groups: Dataset, vector_registry: Registry) -> Problem:
    return make_problem(two_groups, vector_registry)


@pytest.fixture
def tiny_dataset() -> Dataset:
    x = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, 1.0]])
    return Dataset(x, [0, 1, 0, 1], [1, 1, 2, 2], ["train", "val", "train", "val"])
