import csv
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import ortho_group

from augforest.data.dataset import Dataset, Split
from augforest.data.synth import GroupShift, replicate_groups, synth_gaussian_groups
from augforest.errors import BudgetExceededError, InnerSolveError, OracleError
from augforest.forest import implicit_grad, training_objectives, validation_objective
from augforest.linalg import InverseConfig, Solver
from augforest.model.objective import QuadraticObjective, SumObjective
from augforest.model.problem import Problem, make_problem
from augforest.oracle import (
    describe_tree,
    enumerate_trees,
    exact_inv_hvp,
    exhaustive_count,
    exhaustive_search,
    fd_implicit_grad,
    group_features,
    feature_similarity,
    implicit_tangent,
    mc_vs_enum_check,
    quadratic_implicit_grad,
    similarity_matrix,
    simplex_perturbation,
    solve_inner,
    write_comparison_csv,
)
from augforest.policy.forest import Forest
from augforest.policy.refs import IDENTITY, TransformRef
from augforest.policy.tree import EMPTY_TREE, AugTree, TreeNode
from augforest.search import SearchConfig, search_tree
from augforest.transforms.registry import Registry

FLIP_SEARCH = SearchConfig(d_max=1, probs=(0.0, 0.5, 1.0), transforms=("identity", "rotate2d"), train_steps=30)
SIMILARITY_CASES = range(100)


def _refs(k: int) -> list[TransformRef]:
    return [IDENTITY, *(TransformRef(f"t{i}", 0) for i in range(k))]


@pytest.mark.parametrize(("k", "probs", "d_max"), [(1, (0.0, 1.0), 1), (2, (0.0, 0.5, 1.0), 2), (3, (0.25, 0.75), 2)])
def test_exhaustive_count_matches_enumeration(k: int, probs: tuple[float, ...], d_max: int) -> None:
    assert exhaustive_count(k, len(probs), d_max) == len(enumerate_trees(_refs(k), probs, d_max))


def test_exhaustive_count_worked_example() -> None:
    """Test that five transforms over a five-point grid give 5651 depth-two trees."""
    assert exhaustive_count(5, 5, 2) == 5651
    assert len(enumerate_trees(_refs(5), (0.0, 0.25, 0.5, 0.75, 1.0), 2)) == 5651
    assert exhaustive_count(5, 5, 1) == 26


def test_depth_one_count_tries_identity_once() -> None:
    """Test that identity plus two transforms over three probabilities give seven roots."""
    trees = enumerate_trees(_refs(2), (0.0, 0.5, 1.0), 1)
    assert len(trees) == (3 - 1) * 3 + 1
    assert sum(1 for tree in trees if tree.nodes[1].transform.is_identity) == 1
    assert AugTree({1: TreeNode(1, TransformRef("t0", 0), 0.0)}, 1) in trees


def test_exhaustive_count_rejects_deep_trees() -> None:
    with pytest.raises(OracleError):
        exhaustive_count(2, 3, 3)


def test_enumerated_trees_are_distinct() -> None:
    trees = enumerate_trees(_refs(2), (0.0, 0.5, 1.0), 2)
    assert len(set(trees)) == len(trees)
    assert trees[0] == AugTree({1: TreeNode(1, IDENTITY, 0.0)}, 2)


def test_exhaustive_search_agrees_with_greedy_at_depth_one(vector_problem: Problem, two_groups: Dataset) -> None:
    """Test that both searches pick the same root when the tree is a single node."""
    train = two_groups.by_group(Split.TRAIN)[2]
    val = two_groups.by_group(Split.VAL)[2]
    exhaustive = exhaustive_search(vector_problem, train, val, FLIP_SEARCH)
    greedy = search_tree(vector_problem, train, val, FLIP_SEARCH)
    assert exhaustive.candidate_count == 4 * 3 + 1
    assert exhaustive.best.tree == greedy.tree
    assert exhaustive.best.tree.get(1) == TreeNode(1, TransformRef("rotate2d", 3), 1.0)
    losses = [entry.loss for entry in exhaustive.table]
    assert losses == sorted(losses)


@pytest.mark.slow
def test_greedy_cost_against_exhaustive_at_depth_two(single_level_registry: Registry) -> None:
    """Test that six candidates over five probabilities take three models and a fraction of the exhaustive count."""
    data = synth_gaussian_groups(1, 160, [GroupShift(base_angle_deg=45.0, heldout_rotation_deg=180.0)], rng_seed=0)
    problem = make_problem(data, single_level_registry)
    train, val = data.by_group(Split.TRAIN)[1], data.by_group(Split.VAL)[1]
    config = SearchConfig(d_max=2, probs=(0.0, 0.25, 0.5, 0.75, 1.0), train_steps=40, seed=3)
    trace = search_tree(problem, train, val, config).trace
    exhaustive = exhaustive_search(problem, train, val, config)
    assert trace.models_trained <= 3
    assert trace.candidate_evals <= (2**2 - 1) * 6 * 5
    assert exhaustive.candidate_count == exhaustive_count(5, 5, 2)
    assert exhaustive.candidate_count >= 3 * trace.candidate_evals


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_greedy_loss_close_to_exhaustive_at_depth_two(vector_registry: Registry, seed: int) -> None:
    """Test that the greedy tree's loss is within 0.02 of the best depth-two tree."""
    data = synth_gaussian_groups(
        1, 160, [GroupShift(base_angle_deg=45.0, heldout_rotation_deg=180.0)], rng_seed=seed
    )
    problem = make_problem(data, vector_registry)
    train, val = data.by_group(Split.TRAIN)[1], data.by_group(Split.VAL)[1]
    config = SearchConfig(d_max=2, probs=(0.0, 0.5, 1.0), transforms=("identity", "rotate2d"), train_steps=40, seed=seed)
    greedy = search_tree(problem, train, val, config)
    exhaustive = exhaustive_search(problem, train, val, config)
    assert greedy.trace.best_loss <= exhaustive.best.loss + 0.02


def test_exhaustive_search_budget(vector_problem: Problem, two_groups: Dataset) -> None:
    train = two_groups.by_group(Split.TRAIN)[2]
    val = two_groups.by_group(Split.VAL)[2]
    with pytest.raises(BudgetExceededError):
        exhaustive_search(vector_problem, train, val, FLIP_SEARCH, budget=5)


def test_write_comparison_csv(vector_problem: Problem, two_groups: Dataset, tmp_path: Path) -> None:
    train = two_groups.by_group(Split.TRAIN)[2]
    val = two_groups.by_group(Split.VAL)[2]
    result = exhaustive_search(vector_problem, train, val, FLIP_SEARCH)
    path = tmp_path / "comparison.csv"
    write_comparison_csv(result, vector_problem.registry, path)
    with path.open() as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["candidate", "L_val", "rank"]
    assert len(rows) == result.candidate_count + 1
    assert rows[1] == ["1:Rotate2D(1)@1", repr(result.best.loss), "1"]


def test_describe_tree(vector_registry: Registry) -> None:
    tree = AugTree(
        {
            1: TreeNode(1, TransformRef("rotate2d", 1), 0.5),
            2: TreeNode(2, IDENTITY, 0.25),
            3: TreeNode(3, TransformRef("jitter", 0), 0.75),
        }
    )
    assert describe_tree(tree, vector_registry) == "1:Rotate2D(0.5)@0.5 2:Identity@0.25 3:Jitter(0.05)@0.75"


def _quadratics(seed: int, k: int, dim: int, scale: float = 1.0) -> tuple[list[np.ndarray], list[np.ndarray]]:
    rng = np.random.default_rng(seed)
    matrices = []
    for _ in range(k):
        a = rng.normal(size=(dim, dim))
        matrices.append(a @ a.T + np.eye(dim))
    return matrices, [scale * rng.normal(size=dim) for _ in range(k)]


def test_solve_inner_reaches_the_minimizer() -> None:
    matrices, centers = _quadratics(0, 3, 4)
    inner = [QuadraticObjective(a, c) for a, c in zip(matrices, centers, strict=True)]
    w = np.array([0.5, 0.3, 0.2])
    theta = solve_inner(inner, w, 0.1, np.zeros(4))
    h = sum(wg * a for wg, a in zip(w, matrices, strict=True)) + 0.1 * np.eye(4)
    rhs = sum(wg * a @ c for wg, a, c in zip(w, matrices, centers, strict=True))
    np.testing.assert_allclose(theta, np.linalg.solve(h, rhs), atol=1e-7)


def test_solve_inner_reports_non_convergence() -> None:
    matrices, centers = _quadratics(1, 2, 3, scale=100.0)
    inner = [QuadraticObjective(a, c) for a, c in zip(matrices, centers, strict=True)]
    with pytest.raises(InnerSolveError):
        solve_inner(inner, [0.5, 0.5], 0.0, np.zeros(3), max_iterations=1)


def test_simplex_perturbation() -> None:
    w = np.array([0.2, 0.3, 0.5])
    out = simplex_perturbation(w, 1, 0.1)
    assert out.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(out, [0.2 / 1.1, 0.4 / 1.1, 0.5 / 1.1])
    assert implicit_tangent(np.array([1.0, 2.0, 3.0]), w, 0) == pytest.approx(1.0 - 2.3)


def test_fd_step_must_stay_on_the_simplex() -> None:
    inner = [QuadraticObjective(np.eye(2), np.zeros(2))] * 2
    with pytest.raises(OracleError):
        fd_implicit_grad(inner[0], inner, [0.999, 0.001], 1, 0.1, np.zeros(2), eps=1e-3)


def test_fd_matches_closed_form_on_quadratics() -> None:
    matrices, centers = _quadratics(2, 3, 3)
    inner = [QuadraticObjective(a, c) for a, c in zip(matrices, centers, strict=True)]
    q = [0.3, 0.3, 0.4]
    outer = SumObjective(inner, q)
    w = np.array([0.2, 0.5, 0.3])
    ridge = 0.1
    theta = solve_inner(inner, w, ridge, np.zeros(3))
    d = quadratic_implicit_grad(matrices, centers, q, w, theta, ridge)
    for i in range(3):
        fd = fd_implicit_grad(outer, inner, w, i, ridge, theta)
        assert fd == pytest.approx(implicit_tangent(d, w, i), rel=1e-4, abs=1e-7)


def test_fd_matches_implicit_gradient_on_logistic_groups(vector_registry: Registry) -> None:
    """Test that retraining finite differences agree with the implicit weight gradient."""
    data = synth_gaussian_groups(2, 80, [GroupShift(), GroupShift(base_angle_deg=90.0)], rng_seed=13)
    problem = make_problem(data, vector_registry)
    train = data.by_group(Split.TRAIN)
    val = data.by_group(Split.VAL)
    inner = training_objectives(problem, train, Forest(((1, EMPTY_TREE), (2, EMPTY_TREE)), (0.5, 0.5)), 0)
    outer = validation_objective(problem, val, {1: 0.5, 2: 0.5})
    ridge = 1e-2
    w = np.array([0.6, 0.4])
    theta = solve_inner(inner, w, ridge, np.zeros(problem.spec.param_count))
    d = implicit_grad(outer, inner, w, theta, ridge, InverseConfig(solver=Solver.DENSE, damping=0.0))
    for i in range(2):
        expected = implicit_tangent(d, w, i)
        fd = fd_implicit_grad(outer, inner, w, i, ridge, theta)
        assert fd == pytest.approx(expected, rel=0.05)


def test_fd_is_flat_between_copies_of_one_group(one_group: Dataset, vector_registry: Registry) -> None:
    """Test that moving weight between two identical augmented groups changes nothing."""
    data = replicate_groups(one_group, 2)
    problem = make_problem(data, vector_registry)
    jitter = AugTree({1: TreeNode(1, TransformRef("jitter", 1), 0.5)}, 1)
    inner = training_objectives(problem, data.by_group(Split.TRAIN), Forest(((1, jitter), (2, jitter)), (0.5, 0.5)), 3)
    outer = validation_objective(problem, data.by_group(Split.VAL), {1: 0.5, 2: 0.5})
    ridge = 1e-2
    w = np.array([0.5, 0.5])
    theta = solve_inner(inner, w, ridge, np.zeros(problem.spec.param_count))
    d = implicit_grad(outer, inner, w, theta, ridge, InverseConfig(solver=Solver.DENSE, damping=0.0))
    assert d[0] == d[1]
    for i in range(2):
        assert implicit_tangent(d, w, i) == pytest.approx(0.0, abs=1e-12)
        assert fd_implicit_grad(outer, inner, w, i, ridge, theta) == pytest.approx(0.0, abs=1e-6)


class TestExactInverse:
    def test_identity_hessian(self) -> None:
        v = np.array([1.0, -2.0, 3.0])
        np.testing.assert_allclose(exact_inv_hvp(lambda u: u, v, 3, 0.5), v / 1.5)

    def test_diagonal_hessian(self) -> None:
        diag = np.array([1.0, 2.0, 3.0])
        out = exact_inv_hvp(lambda u: diag * u, np.ones(3), 3, 1.0)
        np.testing.assert_allclose(out, [1 / 2, 1 / 3, 1 / 4])

    def test_random_spd_residual(self) -> None:
        rng = np.random.default_rng(4)
        a = rng.normal(size=(20, 20))
        h = a @ a.T + 0.1 * np.eye(20)
        v = rng.normal(size=20)
        x = exact_inv_hvp(lambda u: h @ u, v, 20, 1e-3)
        residual = np.linalg.norm((h + 1e-3 * np.eye(20)) @ x - v) / np.linalg.norm(v)
        assert residual <= 1e-10

    def test_dimension_cap(self) -> None:
        with pytest.raises(OracleError):
            exact_inv_hvp(lambda u: u, np.ones(501), 501, 0.0)

    def test_indefinite_hessian(self) -> None:
        with pytest.raises(OracleError, match="positive definite"):
            exact_inv_hvp(lambda u: -u, np.ones(2), 2, 0.0)


class TestFeatureSimilarity:
    @pytest.mark.parametrize("seed", SIMILARITY_CASES)
    def test_disjoint_coordinates(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(2, 8))
        split = int(rng.integers(1, dim))
        columns = rng.permutation(dim)
        a = np.zeros((int(rng.integers(5, 60)), dim))
        b = np.zeros((int(rng.integers(5, 60)), dim))
        a[:, columns[:split]] = rng.normal(size=(len(a), split))
        b[:, columns[split:]] = rng.normal(size=(len(b), dim - split))
        assert feature_similarity(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_identical_rank_one(self) -> None:
        rng = np.random.default_rng(1)
        x = np.outer(rng.normal(size=25), rng.normal(size=3))
        assert feature_similarity(x, x) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", SIMILARITY_CASES)
    def test_symmetric_and_bounded(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(1, 8))
        a = rng.normal(size=(int(rng.integers(1, 60)), dim)) @ rng.normal(size=(dim, dim))
        b = rng.normal(size=(int(rng.integers(1, 60)), dim)) * rng.uniform(0.01, 10.0, size=dim)
        s = feature_similarity(a, b)
        assert 0.0 <= s <= 1.0
        assert s == pytest.approx(feature_similarity(b, a), abs=1e-12)

    @pytest.mark.parametrize("seed", SIMILARITY_CASES)
    def test_rotation_invariance(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(2, 8))
        a = rng.normal(size=(int(rng.integers(10, 60)), dim)) * rng.uniform(0.1, 3.0, size=dim)
        b = rng.normal(size=(int(rng.integers(10, 60)), dim))
        rotation = ortho_group.rvs(dim, random_state=seed)
        assert feature_similarity(a @ rotation, b @ rotation) == pytest.approx(feature_similarity(a, b), abs=1e-10)

    def test_rejects_bad_input(self) -> None:
        with pytest.raises(OracleError):
            feature_similarity(np.ones((3, 2)), np.ones((3, 3)))
        with pytest.raises(OracleError):
            feature_similarity(np.zeros((3, 2)), np.ones((3, 2)))
        with pytest.raises(OracleError):
            feature_similarity(np.array([[np.nan, 1.0]]), np.ones((3, 2)))


def test_similarity_matrix(vector_problem: Problem, two_groups: Dataset) -> None:
    theta = np.linspace(-1.0, 1.0, vector_problem.spec.param_count)
    ids, matrix = similarity_matrix(vector_problem, theta, two_groups.by_group(Split.VAL))
    assert ids == [1, 2]
    np.testing.assert_array_equal(matrix, matrix.T)
    assert 0.0 <= matrix[0, 1] <= 1.0


def test_similarity_matrix_computes_its_diagonal(vector_problem: Problem, two_groups: Dataset) -> None:
    """Test that a group scored against itself gets the same value as any other pair, below one at full rank."""
    theta = np.linspace(-1.0, 1.0, vector_problem.spec.param_count)
    val = two_groups.by_group(Split.VAL)
    _, matrix = similarity_matrix(vector_problem, theta, val)
    for position, group_id in enumerate((1, 2)):
        features = group_features(vector_problem, theta, val[group_id])
        assert matrix[position, position] == feature_similarity(features, features)
        assert matrix[position, position] < 1.0


def test_monte_carlo_agrees_with_enumeration(vector_problem: Problem, two_groups: Dataset) -> None:
    """Test that the sampled loss stays within three standard errors of the exact one."""
    tree = AugTree(
        {
            1: TreeNode(1, TransformRef("rotate2d", 1), 0.5),
            2: TreeNode(2, TransformRef("jitter", 2), 0.3),
            3: TreeNode(3, TransformRef("scale", 1), 0.7),
        }
    )
    theta = np.linspace(-0.8, 0.8, vector_problem.spec.param_count)
    data = two_groups.by_group(Split.VAL)[1]
    checks = [mc_vs_enum_check(vector_problem, theta, data, tree, 200, seed) for seed in range(20)]
    assert sum(not check.within for check in checks) <= 1
    assert all(check.stderr > 0.0 for check in checks)
