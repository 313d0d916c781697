"""Gradientes analíticos das perdas SS e ID e validação por diferenças finitas."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.linalg as la

from .dpp import SimilarityMatrix, build_kernel, check_indices, kernel_from_features
from .errors import InvalidInputError, NumericalDomainError
from .losses import IdProblem, id_loss_total, id_losses, ss_loss

logger = logging.getLogger(__name__)

DEFAULT_FD_STEP = 1e-6


@dataclass(frozen=True, slots=True)
class GradientBundle:
    """Gradientes ``∂𝓛_SS/∂q`` e ``∂𝓛_ID/∂V`` com o erro máximo contra diferenças finitas."""

    d_ss_dq: np.ndarray
    d_id_dV: np.ndarray
    max_fd_rel_err: float = float("nan")


def _spd_inverse(matrix: np.ndarray) -> np.ndarray:
    try:
        factor = la.cho_factor(matrix, lower=True)
    except la.LinAlgError as exc:
        raise NumericalDomainError("Matriz não é definida positiva; gradiente indefinido") from exc
    return la.cho_solve(factor, np.eye(matrix.shape[0]))


def _log_det_grad_q(S: np.ndarray, q: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """``∂ log det(L_idx + I)/∂q_idx = 2·(S_idx ⊙ (L_idx + I)⁻¹)·q_idx``."""

    S_sub = S[np.ix_(idx, idx)]
    q_sub = q[idx]
    inverse = _spd_inverse(S_sub * np.outer(q_sub, q_sub) + np.eye(idx.size))
    return 2.0 * (S_sub * inverse) @ q_sub


def grad_ss_wrt_q(
    S: SimilarityMatrix | np.ndarray,
    q: np.ndarray,
    positive: Sequence[int],
    members: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Gradiente da perda SS em relação a ``q`` com ``S`` fixa.

    ``members`` é ``𝒴_m`` (todos os índices por padrão); entradas fora de cada
    conjunto recebem zero.
    """

    matrix = S.S if isinstance(S, SimilarityMatrix) else np.asarray(S, dtype=float)
    quality = np.asarray(q, dtype=float).reshape(-1)
    if matrix.shape != (quality.size, quality.size):
        raise InvalidInputError(f"S {matrix.shape} incompatível com q de tamanho {quality.size}")
    pos = check_indices(positive, quality.size)
    all_idx = check_indices(range(quality.size) if members is None else members, quality.size)
    if not set(pos.tolist()) <= set(all_idx.tolist()):
        raise InvalidInputError("Y_pos deve estar contido em 𝒴_m")

    grad = np.zeros(quality.size)
    if pos.size:
        grad[pos] -= _log_det_grad_q(matrix, quality, pos)
    grad[all_idx] += _log_det_grad_q(matrix, quality, all_idx)
    return grad


def _log_det_grad_V(L: np.ndarray, Q: np.ndarray, V: np.ndarray, idx: np.ndarray, shift: bool) -> np.ndarray:
    """``(M⁻¹ ⊙ Q_idx)·V_idx`` com ``M = L_idx`` ou ``L_idx + I``."""

    M = L[np.ix_(idx, idx)]
    if shift:
        M = M + np.eye(idx.size)
    inverse = _spd_inverse(M)
    return (inverse * Q[np.ix_(idx, idx)]) @ V[idx]


def grad_id_wrt_V(
    V: np.ndarray,
    iou: np.ndarray,
    q: np.ndarray,
    lam: float,
    problem: IdProblem,
) -> np.ndarray:
    """Gradiente de ``𝓛_ID`` em relação às linhas de ``V`` com ``q`` fixo.

    Cada termo ``−log det(L_Y) + log det(L_A + I)`` contribui
    ``−2λ·(L_Y⁻¹ ⊙ Q_Y)·V_Y`` nas linhas de ``Y`` e
    ``+2λ·((L_A + I)⁻¹ ⊙ Q_A)·V_A`` nas linhas de ``A``; os termos por
    categoria têm peso ``1/K``.
    """

    features = np.asarray(V, dtype=float)
    quality = np.asarray(q, dtype=float).reshape(-1)
    grad = np.zeros_like(features)
    if problem.empty or lam == 0.0:
        return grad

    L = kernel_from_features(features, iou, quality, lam)
    Q = np.outer(quality, quality)
    terms: list[tuple[Sequence[int], Sequence[int], float]] = [(problem.support, problem.rep, 1.0)]
    weight = 1.0 / len(problem.per_class) if problem.per_class else 0.0
    terms.extend((members, chosen, weight) for members, chosen in problem.per_class.values())

    for members, chosen, term_weight in terms:
        support = np.asarray(members, dtype=int)
        rep = np.asarray(chosen, dtype=int)
        try:
            grad[rep] -= term_weight * 2.0 * lam * _log_det_grad_V(L, Q, features, rep, shift=False)
        except NumericalDomainError as exc:
            raise NumericalDomainError("L_Y singular: gradiente ID indefinido (colapso de features)") from exc
        grad[support] += term_weight * 2.0 * lam * _log_det_grad_V(L, Q, features, support, shift=True)
    return grad


def finite_diff_bundle(
    S: SimilarityMatrix | np.ndarray,
    V: np.ndarray,
    iou: np.ndarray,
    q: np.ndarray,
    lam: float,
    positive: Sequence[int],
    problem: IdProblem,
    h: float = DEFAULT_FD_STEP,
) -> GradientBundle:
    """Os mesmos dois gradientes de :func:`gradient_bundle` por diferenças centrais."""

    matrix = S.S if isinstance(S, SimilarityMatrix) else np.asarray(S, dtype=float)
    return GradientBundle(
        d_ss_dq=finite_diff(lambda x: ss_loss(build_kernel(matrix, x), positive), q, h),
        d_id_dV=finite_diff(lambda x: id_total_from_features(x, iou, q, lam, problem), V, h),
    )


def gradient_bundle(
    S: SimilarityMatrix | np.ndarray,
    V: np.ndarray,
    iou: np.ndarray,
    q: np.ndarray,
    lam: float,
    positive: Sequence[int],
    problem: IdProblem,
    h: Optional[float] = None,
) -> GradientBundle:
    """Os dois gradientes de uma instância: SS em ``q`` (com ``S`` fixa) e ID em ``V``.

    Com ``h`` informado, ``max_fd_rel_err`` recebe o maior erro relativo contra
    :func:`finite_diff_bundle`; sem ele o campo fica ``nan``.
    """

    d_ss_dq = grad_ss_wrt_q(S, q, positive)
    d_id_dV = grad_id_wrt_V(V, iou, q, lam, problem)
    if h is None:
        return GradientBundle(d_ss_dq=d_ss_dq, d_id_dV=d_id_dV)
    numeric = finite_diff_bundle(S, V, iou, q, lam, positive, problem, h)
    error = max(relative_error(d_ss_dq, numeric.d_ss_dq), relative_error(d_id_dV, numeric.d_id_dV))
    return GradientBundle(d_ss_dq=d_ss_dq, d_id_dV=d_id_dV, max_fd_rel_err=error)


def id_total_from_features(
    V: np.ndarray, iou: np.ndarray, q: np.ndarray, lam: float, problem: IdProblem
) -> float:
    """``𝓛_ID`` de uma cena como função de ``V`` (alvo das diferenças finitas)."""

    id_all, per_class = id_losses(problem, V, iou, q, lam)
    return id_loss_total(id_all, per_class)


def finite_diff(
    loss_fn: Callable[[np.ndarray], float],
    x: np.ndarray,
    h: float = DEFAULT_FD_STEP,
    coordinates: Optional[Iterable[tuple[int, ...]]] = None,
) -> np.ndarray:
    """Diferenças centrais coordenada a coordenada, com a mesma forma de ``x``."""

    point = np.array(x, dtype=float)
    grad = np.zeros_like(point)
    for index in (np.ndindex(point.shape) if coordinates is None else coordinates):
        original = point[index]
        point[index] = original + h
        f_plus = loss_fn(point.copy())
        point[index] = original - h
        f_minus = loss_fn(point.copy())
        point[index] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalDomainError(f"Perda não finita na vizinhança da coordenada {index}")
        grad[index] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a − b| / max(1, max|b|)``."""

    a = np.asarray(analytic, dtype=float)
    b = np.asarray(numeric, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


__all__ = [
    "DEFAULT_FD_STEP",
    "GradientBundle",
    "finite_diff",
    "finite_diff_bundle",
    "gradient_bundle",
    "grad_id_wrt_V",
    "grad_ss_wrt_q",
    "id_total_from_features",
    "relative_error",
]
