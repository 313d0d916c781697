"""Matrizes de similaridade e kernel de um DPP, log-determinantes e log-probabilidades."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
import scipy.linalg as la

from .errors import InvalidInputError, NumericalDomainError

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.6
DEFAULT_PSD_EPSILON = 1e-8
NORM_TOLERANCE = 1e-9
INDEFINITE_TOLERANCE = 1e-8
# pivô ao quadrado abaixo desta fração da escala da diagonal conta como singular
SINGULAR_RTOL = 1e-12
JITTER_FACTORS = (1.0, 10.0, 100.0)

RepairKind = Literal["none", "jitter", "eigenclip"]


@dataclass(frozen=True, slots=True)
class PsdRepair:
    """Registro do reparo aplicado para tornar ``S`` semidefinida positiva."""

    kind: RepairKind = "none"
    epsilon: float = 0.0
    min_eigenvalue: float = 0.0


@dataclass(frozen=True, slots=True)
class FeatureMatrix:
    """Features ``V`` com linhas de norma euclidiana unitária."""

    V: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.V, dtype=float)
        if values.ndim != 2:
            raise InvalidInputError(f"V deve ser uma matriz n x r, recebeu forma {values.shape}")
        norms = np.linalg.norm(values, axis=1)
        if values.shape[0] and np.max(np.abs(norms - 1.0)) > NORM_TOLERANCE:
            raise InvalidInputError("Linhas de V não normalizadas")
        values.setflags(write=False)
        object.__setattr__(self, "V", values)

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def r(self) -> int:
        return self.V.shape[1]

    @classmethod
    def from_raw(cls, F: np.ndarray) -> "FeatureMatrix":
        """Normaliza ``V_i = F_i / ||F_i||``; linhas de norma zero são rejeitadas."""

        return cls(normalize_rows(F))


def normalize_rows(F: np.ndarray) -> np.ndarray:
    values = np.atleast_2d(np.asarray(F, dtype=float))
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise InvalidInputError("Feature com norma zero não pode ser normalizada")
    return values / norms


@dataclass(frozen=True, slots=True)
class SimilarityMatrix:
    """``S = λ·VVᵀ + (1−λ)·IoU`` com metadados do reparo PSD."""

    S: np.ndarray
    lam: float
    psd_repair: PsdRepair = field(default_factory=PsdRepair)

    @property
    def n(self) -> int:
        return self.S.shape[0]


@dataclass(frozen=True, slots=True)
class KernelMatrix:
    """``L = S ⊙ qqᵀ`` e o vetor de qualidade ``q``."""

    L: np.ndarray
    q: np.ndarray
    similarity: SimilarityMatrix | None = None

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def submatrix(self, indices: Sequence[int]) -> np.ndarray:
        """``L_Y`` para o conjunto de índices ``Y``."""

        idx = check_indices(indices, self.n)
        return self.L[np.ix_(idx, idx)]


def check_indices(indices: Sequence[int], n: int) -> np.ndarray:
    idx = np.asarray(list(indices), dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise InvalidInputError(f"Índices fora de [0, {n}): {idx.tolist()}")
    if len(set(idx.tolist())) != idx.size:
        raise InvalidInputError(f"Índices repetidos: {idx.tolist()}")
    return idx


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return (matrix + matrix.T) / 2.0


def repair_psd(S: np.ndarray, kind: RepairKind, epsilon: float) -> tuple[np.ndarray, PsdRepair]:
    """Torna ``S`` semidefinida positiva quando o menor autovalor é menor que ``-epsilon``.

    Após o reparo a diagonal é reescalada para 1 (congruência por matriz
    diagonal positiva, que preserva a definição positiva).
    """

    if S.shape[0] == 0:
        return S, PsdRepair()
    eigenvalues, eigenvectors = la.eigh(S)
    min_eig = float(eigenvalues[0])
    if kind == "none" or min_eig >= -epsilon:
        return S, PsdRepair(kind="none", epsilon=0.0, min_eigenvalue=min_eig)

    if kind == "eigenclip":
        clipped = np.clip(eigenvalues, epsilon, None)
        repaired = (eigenvectors * clipped) @ eigenvectors.T
    elif kind == "jitter":
        repaired = S + (epsilon - min_eig) * np.eye(S.shape[0])
    else:  # pragma: no cover - Literal garante
        raise InvalidInputError(f"Reparo PSD desconhecido: {kind}")

    scale = 1.0 / np.sqrt(np.diag(repaired))
    repaired = _symmetrize(repaired * scale[:, None] * scale[None, :])
    np.fill_diagonal(repaired, 1.0)
    logger.debug("Reparo PSD %s aplicado (menor autovalor %.3e, eps=%.1e)", kind, min_eig, epsilon)
    return repaired, PsdRepair(kind=kind, epsilon=epsilon, min_eigenvalue=min_eig)


def build_similarity(
    V: FeatureMatrix,
    iou: np.ndarray,
    lam: float = DEFAULT_LAMBDA,
    *,
    repair: RepairKind = "eigenclip",
    epsilon: float = DEFAULT_PSD_EPSILON,
) -> SimilarityMatrix:
    """Constrói ``S = λ·VVᵀ + (1−λ)·IoU`` e aplica o reparo PSD configurado."""

    if not 0.0 <= lam <= 1.0:
        raise InvalidInputError(f"lambda fora de [0, 1]: {lam}")
    overlap = np.asarray(iou, dtype=float)
    if overlap.shape != (V.n, V.n):
        raise InvalidInputError(f"IoU com forma {overlap.shape}, esperado {(V.n, V.n)}")

    S = _symmetrize(lam * (V.V @ V.V.T) + (1.0 - lam) * overlap)
    np.fill_diagonal(S, 1.0)
    S, record = repair_psd(S, repair, epsilon)
    S.setflags(write=False)
    return SimilarityMatrix(S=S, lam=lam, psd_repair=record)


def build_kernel(S: SimilarityMatrix | np.ndarray, q: Sequence[float] | np.ndarray) -> KernelMatrix:
    """``L_ij = S_ij · q_i · q_j``."""

    similarity = S if isinstance(S, SimilarityMatrix) else None
    matrix = S.S if isinstance(S, SimilarityMatrix) else np.asarray(S, dtype=float)
    quality = np.asarray(q, dtype=float).reshape(-1)
    if quality.shape[0] != matrix.shape[0]:
        raise InvalidInputError(f"q com {quality.shape[0]} entradas para S {matrix.shape}")
    if not np.all(np.isfinite(quality)) or np.any(quality <= 0.0):
        raise InvalidInputError("Qualidades devem ser positivas e finitas")
    L = matrix * np.outer(quality, quality)
    L.setflags(write=False)
    return KernelMatrix(L=L, q=quality, similarity=similarity)


def kernel_from_features(V: np.ndarray, iou: np.ndarray, q: np.ndarray, lam: float) -> np.ndarray:
    """``(λ·VVᵀ + (1−λ)·IoU) ⊙ qqᵀ`` sem reparo PSD nem ajuste da diagonal.

    É a forma diferenciada pelas perdas ID: ``V`` entra como está, a
    normalização das linhas é tratada como pré-processamento fixo.
    """

    features = np.asarray(V, dtype=float)
    quality = np.asarray(q, dtype=float).reshape(-1)
    S = lam * (features @ features.T) + (1.0 - lam) * np.asarray(iou, dtype=float)
    return _symmetrize(S) * np.outer(quality, quality)


def cholesky_jitter(M: np.ndarray, epsilon: float = DEFAULT_PSD_EPSILON) -> tuple[np.ndarray, float]:
    """Fatoração de Cholesky com jitter diagonal progressivo (ε, 10ε, 100ε).

    Retorna o fator inferior e o jitter usado (0.0 quando não foi necessário).
    """

    n = M.shape[0]
    for jitter in (0.0, *(epsilon * factor for factor in JITTER_FACTORS)):
        try:
            factor = la.cholesky(M + jitter * np.eye(n), lower=True)
        except la.LinAlgError:
            continue
        if jitter:
            logger.debug("Cholesky precisou de jitter %.1e", jitter)
        return factor, jitter
    raise NumericalDomainError("Jitter máximo adicionado e a matriz ainda não é PD")


def log_det_psd(
    M: np.ndarray,
    *,
    allow_singular: bool = False,
    epsilon: float = DEFAULT_PSD_EPSILON,
) -> float:
    """``log det(M)`` via fatoração simétrica.

    Matrizes singulares retornam ``-inf`` quando ``allow_singular``; caso
    contrário é tentado o jitter diagonal antes de falhar.
    """

    matrix = np.asarray(M, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InvalidInputError(f"Matriz quadrada esperada, forma {matrix.shape}")
    n = matrix.shape[0]
    if n == 0:
        return 0.0
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12):
        raise InvalidInputError("Matriz não simétrica")

    scale = max(1.0, float(np.max(np.abs(np.diag(matrix)))))
    try:
        factor = la.cholesky(matrix, lower=True)
    except la.LinAlgError:
        factor = None
    if factor is not None:
        pivots = np.diag(factor)
        if float(np.min(pivots)) ** 2 > SINGULAR_RTOL * scale:
            return 2.0 * float(np.sum(np.log(pivots)))

    min_eig = float(la.eigvalsh(matrix)[0])
    if min_eig < -INDEFINITE_TOLERANCE * scale:
        raise NumericalDomainError(f"Matriz indefinida (menor autovalor {min_eig:.3e})")
    if allow_singular:
        return float("-inf")
    factor, _ = cholesky_jitter(matrix, epsilon)
    return 2.0 * float(np.sum(np.log(np.diag(factor))))


def log_det_shifted(L: np.ndarray) -> float:
    """``log det(L + I)``, sempre bem definido para ``L`` PSD."""

    return log_det_psd(L + np.eye(L.shape[0]))


def dpp_log_prob(L: KernelMatrix | np.ndarray, Y: Sequence[int]) -> float:
    """``log P(Y) = log det(L_Y) − log det(L + I)``; ``L_Y`` singular resulta em ``-inf``."""

    matrix = L.L if isinstance(L, KernelMatrix) else np.asarray(L, dtype=float)
    idx = check_indices(Y, matrix.shape[0])
    log_num = log_det_psd(matrix[np.ix_(idx, idx)], allow_singular=True)
    return log_num - log_det_shifted(matrix)


__all__ = [
    "DEFAULT_LAMBDA",
    "FeatureMatrix",
    "KernelMatrix",
    "PsdRepair",
    "SimilarityMatrix",
    "build_kernel",
    "build_similarity",
    "check_indices",
    "cholesky_jitter",
    "dpp_log_prob",
    "kernel_from_features",
    "log_det_psd",
    "log_det_shifted",
    "normalize_rows",
    "repair_psd",
]
