from augforest.errors import (
    VIOLATION_MESSAGES,
    AugForestError,
    BudgetExceededError,
    ConfigError,
    InvalidTreeError,
    OracleError,
    PolicyError,
    Violation,
    ViolationKind,
    describe_violation,
)


def test_every_violation_kind_has_a_message() -> None:
    """Test that VIOLATION_MESSAGES covers every ViolationKind."""
    for kind in ViolationKind:
        assert kind in VIOLATION_MESSAGES
        assert describe_violation(kind) == VIOLATION_MESSAGES[kind]


def test_violation_str_includes_node_and_detail() -> None:
    """Test that a violation names the node and the detail it carries."""
    violation = Violation(ViolationKind.SIBLING_SUM, 2, "0.3 + 0.3")
    assert str(violation) == "sibling sum ≠ 1 at node 2 (0.3 + 0.3)"
    assert str(Violation(ViolationKind.MISSING_ROOT)) == "root node 1 is missing"


def test_invalid_tree_error_keeps_violation() -> None:
    violation = Violation(ViolationKind.TOO_DEEP, 4)
    error = InvalidTreeError(violation)
    assert error.violation == violation
    assert isinstance(error, PolicyError)
    assert str(error) == str(violation)


def test_error_hierarchy() -> None:
    """Test that every error can be caught as AugForestError."""
    assert issubclass(ConfigError, AugForestError)
    assert issubclass(BudgetExceededError, OracleError)
    assert issubclass(OracleError, AugForestError)
