import json
from pathlib import Path

import numpy as np
from attrs import frozen
from cattrs import Converter
from cattrs.errors import BaseValidationError, ForbiddenExtraKeysError

from augforest.errors import ModelError
from augforest.model.spec import ModelSpec

SERIALIZER = Converter()


@frozen
class Checkpoint:
    spec: ModelSpec
    theta: list[float]
    step: int
    seed: int

    @property
    def params(self) -> np.ndarray:
        return np.asarray(self.theta, dtype=np.float64)


def make_checkpoint(spec: ModelSpec, theta: np.ndarray, step: int, seed: int) -> Checkpoint:
    if not np.all(np.isfinite(theta)):
        raise ModelError("Refusing to checkpoint non-finite parameters")
    return Checkpoint(spec, [float(t) for t in theta], step, seed)


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> None:
    path.write_text(json.dumps(SERIALIZER.unstructure(checkpoint), indent=2) + '\n')


def load_checkpoint(path: Path) -> Checkpoint:
    try:
        checkpoint = SERIALIZER.structure(json.loads(path.read_text()), Checkpoint)
    except (json.JSONDecodeError, BaseValidationError, ForbiddenExtraKeysError, KeyError, TypeError, ValueError) as e:
        raise ModelError(f"Malformed checkpoint {path}: {e}") from e
    if len(checkpoint.theta) != checkpoint.spec.param_count:
        raise ModelError(
            f"Checkpoint has {len(checkpoint.theta)} parameters, spec needs {checkpoint.spec.param_count}"
        )
    return checkpoint
