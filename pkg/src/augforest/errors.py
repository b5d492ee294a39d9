from enum import Enum

from attrs import frozen


class AugForestError(Exception):
    """Base class for every error raised by augforest."""


class ConfigError(AugForestError):
    pass


class PolicyError(AugForestError):
    pass


class InvalidTreeError(PolicyError):
    def __init__(self, violation: 'Violation') -> None:
        super().__init__(str(violation))
        self.violation = violation


class UnknownGroupError(PolicyError):
    pass


class TransformError(AugForestError):
    pass


class DomainMismatchError(TransformError):
    pass


class UnknownTransformError(TransformError):
    pass


class DatasetError(AugForestError):
    pass


class ModelError(AugForestError):
    pass


class SearchError(AugForestError):
    pass


class DivergenceError(AugForestError):
    pass


class OracleError(AugForestError):
    pass


class BudgetExceededError(OracleError):
    pass


class InnerSolveError(OracleError):
    pass


class ViolationKind(Enum):
    BAD_INDEX = 'bad_index'
    INDEX_MISMATCH = 'index_mismatch'
    MISSING_ROOT = 'missing_root'
    MISSING_PARENT = 'missing_parent'
    PROB_RANGE = 'prob_range'
    SIBLING_SUM = 'sibling_sum'
    TOO_DEEP = 'too_deep'
    UNKNOWN_TRANSFORM = 'unknown_transform'
    BAD_MAGNITUDE = 'bad_magnitude'


VIOLATION_MESSAGES = {
    ViolationKind.BAD_INDEX: 'heap index must be >= 1',
    ViolationKind.INDEX_MISMATCH: 'node index differs from its map key',
    ViolationKind.MISSING_ROOT: 'root node 1 is missing',
    ViolationKind.MISSING_PARENT: 'parent node is missing',
    ViolationKind.PROB_RANGE: 'probability outside [0, 1]',
    ViolationKind.SIBLING_SUM: 'sibling sum ≠ 1',
    ViolationKind.TOO_DEEP: 'tree deeper than d_max',
    ViolationKind.UNKNOWN_TRANSFORM: 'transform is not registered',
    ViolationKind.BAD_MAGNITUDE: 'magnitude level outside the declared levels',
}


def describe_violation(kind: ViolationKind) -> str:
    return VIOLATION_MESSAGES.get(kind, f"Unknown violation {kind.value}")


@frozen
class Violation:
    kind: ViolationKind
    index: int | None = None
    detail: str | None = None

    @property
    def message(self) -> str:
        return describe_violation(self.kind)

    def __str__(self) -> str:
        where = f" at node {self.index}" if self.index is not None else ""
        extra = f" ({self.detail})" if self.detail else ""
        return f"{self.message}{where}{extra}"
