"""
Greedy top-down search for an augmentation tree.

Each frontier node trains one model on the current tree and then ranks every
candidate (transform, probability) for that node by the frozen model's
expected validation loss under the extended tree. A node whose sibling is
already placed inherits probability 1 - p_sibling. Children are only queued
below nodes that strictly improve the best loss so far.
"""

import csv
import json
import logging
import math
from collections import deque
from collections.abc import Sequence
from enum import Enum
from pathlib import Path

import numpy as np
from attrs import field, frozen

from augforest.data.dataset import GroupData
from augforest.errors import ModelError, SearchError
from augforest.model.evaluate import EXACT, EvalMode, Evaluator
from augforest.model.network import init_params
from augforest.model.problem import Problem
from augforest.model.train import train_sgd
from augforest.parallel import parallel_map
from augforest.policy.refs import IDENTITY, TransformRef
from augforest.policy.tree import AugTree, TreeNode, depth_of, sibling_of
from augforest.seeding import derive_seed
from augforest.transforms.registry import Registry

logger = logging.getLogger(__name__)

DEFAULT_PROBS = tuple(round(0.1 * i, 1) for i in range(11))
IMPROVEMENT_SLACK = 1e-9

# seed streams
_TRAIN_STREAM = 1
_EVAL_STREAM = 2
_INIT_STREAM = 3
_FRONTIER_STREAM = 4


class Frontier(Enum):
    FIFO = 'fifo'
    RANDOM = 'random'


def _check_probs(instance: object, attribute: object, value: tuple[float, ...]) -> None:
    if not value or any(not 0.0 <= p <= 1.0 for p in value):
        raise SearchError(f"Probability grid must be a nonempty subset of [0, 1], got {value}")


def _check_depth(instance: object, attribute: object, value: int) -> None:
    if value < 1:
        raise SearchError(f"d_max must be at least 1, got {value}")


def _check_eval_mode(instance: object, attribute: object, value: str) -> None:
    try:
        EvalMode.parse(value)
    except ModelError as e:
        raise SearchError(str(e)) from e


@frozen
class SearchConfig:
    d_max: int = field(default=2, validator=_check_depth)
    probs: tuple[float, ...] = field(default=DEFAULT_PROBS, converter=tuple, validator=_check_probs)
    # None means every registered transform
    transforms: tuple[str, ...] | None = None
    eval_mode: str = field(default='exact', validator=_check_eval_mode)
    train_steps: int = 200
    lr: float = 0.5
    batch_size: int = 32
    frontier: Frontier = Frontier.FIFO
    warm_start: bool = True
    seed: int = 0
    threads: int = 1

    @property
    def mode(self) -> EvalMode:
        return EvalMode.parse(self.eval_mode)


@frozen
class CandidateEval:
    ref: TransformRef
    label: str
    prob: float
    loss: float


@frozen
class NodeRecord:
    index: int
    evaluations: tuple[CandidateEval, ...]
    chosen: CandidateEval
    # the current tree's loss under this node's model, before the node is added
    loss_before: float
    improved: bool


@frozen
class SearchTrace:
    nodes: tuple[NodeRecord, ...]
    models_trained: int
    candidate_evals: int
    candidate_labels: tuple[str, ...]
    best_loss: float


@frozen
class ImportanceReport:
    scores: dict[str, float]

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.scores.items(), key=lambda item: (-item[1], item[0]))


@frozen
class SearchResult:
    tree: AugTree
    trace: SearchTrace
    theta: np.ndarray


def candidate_refs(registry: Registry, transform_ids: Sequence[str] | None) -> list[TransformRef]:
    """Candidates in tie-break order: registry position, then magnitude level."""
    refs = list(registry.candidates())
    if transform_ids is not None:
        wanted = set(transform_ids)
        unknown = wanted - {ref.transform_id for ref in refs}
        if unknown:
            raise SearchError(f"Candidate transforms {sorted(unknown)} are not registered")
        refs = [ref for ref in refs if ref.transform_id in wanted]
    if not refs:
        raise SearchError("No candidate transforms to search over")
    return refs


def node_candidates(
    tree: AugTree, index: int, refs: Sequence[TransformRef], probs: Sequence[float]
) -> list[tuple[TransformRef, float]]:
    """
    The (transform, probability) choices for one node.

    A placed sibling fixes the probability. Every non-identity transform is
    tried at every grid value, 0 included; identity is tried once.
    """
    sibling = tree.get(sibling_of(index)) if index > 1 else None
    grid = [1.0 - sibling.prob] if sibling is not None else sorted(set(probs))
    out: list[tuple[TransformRef, float]] = []
    for ref in refs:
        if ref.is_identity:
            continue
        out.extend((ref, p) for p in grid)
    if any(ref.is_identity for ref in refs):
        out.append((IDENTITY, grid[0] if sibling is not None else 0.0))
    return out


def tie_break_key(registry: Registry, ref: TransformRef, prob: float) -> tuple[int, int, int, float]:
    return (
        1 if ref.is_identity else 0,
        registry.position(ref),
        ref.magnitude_level if ref.magnitude_level is not None else -1,
        prob,
    )


def pick_best(registry: Registry, evaluations: Sequence[CandidateEval]) -> CandidateEval:
    if not evaluations:
        raise SearchError("No candidates were evaluated")
    return min(evaluations, key=lambda e: (e.loss, tie_break_key(registry, e.ref, e.prob)))


def density_match_eval(
    problem: Problem,
    theta: np.ndarray,
    tree: AugTree,
    val: GroupData,
    mode: EvalMode = EXACT,
    rng_seed: int = 0,
) -> float:
    """Expected validation loss of a frozen model under the tree; no training happens."""
    if len(val) == 0:
        raise SearchError("Empty validation set")
    return Evaluator(problem, theta, val, rng_seed).evaluate(tree, mode).value


def _evaluate_candidates(
    problem: Problem,
    evaluator: Evaluator,
    tree: AugTree,
    index: int,
    candidates: Sequence[tuple[TransformRef, float]],
    mode: EvalMode,
    threads: int,
) -> list[CandidateEval]:
    def one(candidate: tuple[TransformRef, float]) -> CandidateEval:
        ref, prob = candidate
        extended = tree.with_node(TreeNode(index, ref, prob))
        return CandidateEval(ref, problem.registry.label(ref), prob, evaluator.evaluate(extended, mode).value)

    return parallel_map(one, candidates, threads)


def initial_params(problem: Problem, config: SearchConfig) -> np.ndarray:
    return init_params(problem.spec, derive_seed(config.seed, _INIT_STREAM))


def train_node_model(
    problem: Problem,
    theta: np.ndarray,
    train: GroupData,
    tree: AugTree,
    config: SearchConfig,
    index: int,
) -> np.ndarray:
    """The one model a node trains, on the tree as it stands before the node."""
    return train_sgd(
        problem,
        theta,
        train,
        tree,
        config.train_steps,
        config.lr,
        config.batch_size,
        derive_seed(config.seed, _TRAIN_STREAM, index),
    )


def node_evaluator(problem: Problem, theta: np.ndarray, val: GroupData, config: SearchConfig) -> Evaluator:
    return Evaluator(problem, theta, val, derive_seed(config.seed, _EVAL_STREAM))


def build_one_node(
    index: int,
    tree: AugTree,
    problem: Problem,
    train: GroupData,
    val: GroupData,
    config: SearchConfig,
    theta: np.ndarray,
) -> tuple[NodeRecord, np.ndarray]:
    """Train one model on the current tree and pick the best candidate for node `index`."""
    if index < 1 or (index > 1 and index // 2 not in tree) or index in tree:
        raise SearchError(f"Node {index} is not on the frontier of the current tree")
    if depth_of(index) > config.d_max:
        raise SearchError(f"Node {index} is deeper than d_max={config.d_max}")
    theta = train_node_model(problem, theta, train, tree, config, index)
    mode = config.mode
    evaluator = node_evaluator(problem, theta, val, config)
    loss_before = evaluator.evaluate(tree, mode).value
    refs = candidate_refs(problem.registry, config.transforms)
    candidates = node_candidates(tree, index, refs, config.probs)
    evaluations = _evaluate_candidates(problem, evaluator, tree, index, candidates, mode, config.threads)
    chosen = pick_best(problem.registry, evaluations)
    logger.debug(
        f"Node {index}: {len(evaluations)} candidates, chose {chosen.label} p={chosen.prob:g} "
        f"L_val={chosen.loss:.6f} (was {loss_before:.6f})"
    )
    record = NodeRecord(index, tuple(evaluations), chosen, loss_before, improved=False)
    return record, theta


def search_tree(
    problem: Problem,
    train: GroupData,
    val: GroupData,
    config: SearchConfig,
    theta0: np.ndarray | None = None,
) -> SearchResult:
    if len(train) == 0 or len(val) == 0:
        raise SearchError("Search needs nonempty train and validation sets")
    theta_init = theta0 if theta0 is not None else initial_params(problem, config)
    theta = np.array(theta_init, dtype=np.float64, copy=True)
    rng = np.random.default_rng(derive_seed(config.seed, _FRONTIER_STREAM))
    tree = AugTree({}, config.d_max)
    frontier: deque[int] = deque([1])
    best = math.inf
    records: list[NodeRecord] = []
    candidate_evals = 0

    while frontier:
        if config.frontier is Frontier.RANDOM:
            position = int(rng.integers(len(frontier)))
            index = frontier[position]
            del frontier[position]
        else:
            index = frontier.popleft()
        start = theta if config.warm_start else theta_init
        record, theta = build_one_node(index, tree, problem, train, val, config, start)
        candidate_evals += len(record.evaluations)
        chosen = record.chosen
        tree = tree.with_node(TreeNode(index, chosen.ref, chosen.prob))
        improved = not chosen.ref.is_identity and chosen.loss < best - IMPROVEMENT_SLACK
        if improved:
            best = chosen.loss
            for child in (2 * index, 2 * index + 1):
                if depth_of(child) <= config.d_max:
                    frontier.append(child)
        records.append(
            NodeRecord(record.index, record.evaluations, chosen, record.loss_before, improved)
        )

    if math.isinf(best):
        # nothing beat identity; report the plain loss of the last model
        best = records[-1].chosen.loss
    labels = tuple(problem.registry.label(ref) for ref in candidate_refs(problem.registry, config.transforms))
    trace = SearchTrace(tuple(records), len(records), candidate_evals, labels, best)
    logger.info(
        f"Search finished: {len(tree)} nodes, {trace.models_trained} models, "
        f"{candidate_evals} candidate evaluations, best L_val={best:.6f}"
    )
    return SearchResult(tree, trace, theta)


def importance_scores(trace: SearchTrace) -> ImportanceReport:
    """Total validation-loss reduction per transform over the nodes it was chosen for."""
    scores = dict.fromkeys(trace.candidate_labels, 0.0)
    for record in trace.nodes:
        if record.chosen.ref.is_identity:
            continue
        gain = max(0.0, record.loss_before - record.chosen.loss)
        scores[record.chosen.label] = scores.get(record.chosen.label, 0.0) + gain
    return ImportanceReport(scores)


def write_trace_csv(trace: SearchTrace, path: Path) -> None:
    with path.open('w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['node_index', 'transform', 'prob', 'L_val'])
        for record in trace.nodes:
            for evaluation in record.evaluations:
                writer.writerow([record.index, evaluation.label, repr(evaluation.prob), repr(evaluation.loss)])


def write_importance_csv(report: ImportanceReport, path: Path) -> None:
    with path.open('w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['transform', 'score'])
        for label, score in report.ranked():
            writer.writerow([label, repr(score)])


def trace_summary(trace: SearchTrace) -> dict[str, object]:
    return {
        'models_trained': trace.models_trained,
        'candidate_evals': trace.candidate_evals,
        'best_L_val': trace.best_loss,
        'nodes': [
            {
                'index': r.index,
                'transform': r.chosen.label,
                'prob': r.chosen.prob,
                'L_val_before': r.loss_before,
                'L_val_after': r.chosen.loss,
                'improved': r.improved,
            }
            for r in trace.nodes
        ],
    }


def write_summary_json(trace: SearchTrace, path: Path) -> None:
    path.write_text(json.dumps(trace_summary(trace), indent=2) + '\n')
