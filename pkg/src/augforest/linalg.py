"""Inverse Hessian-vector products: Neumann recursion, conjugate gradient, dense."""

import logging
from collections.abc import Callable
from enum import Enum

import numpy as np
from attrs import frozen
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator, cg

from augforest.errors import DivergenceError, OracleError
from augforest.seeding import make_rng

logger = logging.getLogger(__name__)

type HVP = Callable[[np.ndarray], np.ndarray]
# term index -> Hessian operator used for that term of the recursion
type HVPSampler = Callable[[int], HVP]

DIVERGENCE_RATIO = 1e6
CURVATURE_PROBES = 10
DEFAULT_DAMPING = 1e-3


class Solver(Enum):
    NEUMANN = 'neumann'
    CG = 'cg'
    DENSE = 'dense'


@frozen
class InverseConfig:
    solver: Solver = Solver.NEUMANN
    terms: int = 200
    # None picks the scale from a curvature probe
    gamma: float | None = None
    damping: float = DEFAULT_DAMPING
    cg_tolerance: float = 1e-10
    seed: int = 0


def curvature_scale(hvp: HVP, dim: int, damping: float, rng_seed: int, probes: int = CURVATURE_PROBES) -> float:
    """
    1 / (1 + damping + max Rayleigh quotient over Rademacher probes).

    Keeps I - gamma * (H + damping I) contracting along the probed directions.
    """
    rng = make_rng(rng_seed)
    largest = 0.0
    for _ in range(probes):
        z = rng.choice((-1.0, 1.0), size=dim)
        largest = max(largest, float(z @ hvp(z)) / float(z @ z))
    return 1.0 / (1.0 + damping + largest)


def neumann_inv_hvp(sample_hvp: HVPSampler, v: np.ndarray, terms: int, gamma: float, damping: float) -> np.ndarray:
    """
    gamma * sum_{j<=n} (I - gamma (H + damping I))^j v, computed as the recursion
    A_0 = v, A_j = v + A_{j-1} - gamma (H_j + damping I) A_{j-1}.
    """
    if not 0.0 < gamma <= 1.0:
        raise DivergenceError(f"gamma must lie in (0, 1], got {gamma}")
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DivergenceError("Cannot invert against a non-finite vector")
    scale = float(np.linalg.norm(v))
    if scale == 0.0:
        return np.zeros_like(v)
    current = v.copy()
    for term in range(1, terms + 1):
        current = v + current - gamma * (sample_hvp(term)(current) + damping * current)
        norm = float(np.linalg.norm(current))
        if not np.isfinite(norm) or norm > DIVERGENCE_RATIO * scale:
            raise DivergenceError(
                f"Neumann recursion diverged at term {term} (|A|/|v| = {norm / scale:.3g}); "
                "use a smaller gamma"
            )
    return gamma * current


def cg_inv_hvp(hvp: HVP, v: np.ndarray, damping: float, tolerance: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    operator = LinearOperator((len(v), len(v)), matvec=lambda u: hvp(u) + damping * u, dtype=np.float64)
    x, info = cg(operator, v, rtol=tolerance, atol=0.0, maxiter=10 * len(v))
    if info != 0:
        logger.warning(f"Conjugate gradient stopped without converging (info={info})")
    return x


def dense_hessian(hvp: HVP, dim: int) -> np.ndarray:
    """Materialize H column by column from basis-vector probes, then symmetrize."""
    columns = [hvp(np.eye(1, dim, j).reshape(-1)) for j in range(dim)]
    h = np.stack(columns, axis=1)
    return 0.5 * (h + h.T)


def dense_solve(h: np.ndarray, v: np.ndarray, damping: float) -> np.ndarray:
    """Solve (H + damping I) x = v by Cholesky; an indefinite system is an error."""
    matrix = h + damping * np.eye(h.shape[0])
    try:
        factor = cho_factor(matrix)
    except LinAlgError as e:
        raise OracleError(f"Damped Hessian is not positive definite: {e}") from e
    return cho_solve(factor, np.asarray(v, dtype=np.float64))


def inv_hvp(
    hvp: HVP,
    v: np.ndarray,
    dim: int,
    config: InverseConfig,
    sample_hvp: HVPSampler | None = None,
) -> np.ndarray:
    """(H + damping I)^-1 v with the configured solver."""
    if config.solver is Solver.DENSE:
        return dense_solve(dense_hessian(hvp, dim), v, config.damping)
    if config.solver is Solver.CG:
        return cg_inv_hvp(hvp, v, config.damping, config.cg_tolerance)
    gamma = config.gamma
    if gamma is None:
        gamma = curvature_scale(hvp, dim, config.damping, config.seed)
        logger.debug(f"Neumann scale gamma={gamma:.4g}")
    sampler = sample_hvp if sample_hvp is not None else (lambda _: hvp)
    return neumann_inv_hvp(sampler, v, config.terms, gamma, config.damping)
