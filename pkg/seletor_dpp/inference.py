"""Inferência gulosa IDPP, oráculo exato por enumeração e NMS clássico."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Literal, Sequence

import numpy as np
import scipy.linalg as la

from .config import Config
from .dpp import FeatureMatrix, SimilarityMatrix, build_similarity, check_indices
from .errors import CombinatorialLimitError, InvalidInputError
from .geometry import iou, iou_matrix
from .scene import Detection, Scene

logger = logging.getLogger(__name__)

SelectionMethod = Literal["idpp", "exact", "nms"]

DEFAULT_BETA = 2.0
DEFAULT_NMS_TAU = 0.5
DEFAULT_EXACT_N_MAX = 15


@dataclass(frozen=True, slots=True)
class SelectionResult:
    """Subconjunto escolhido, custo final e traço de custos por iteração."""

    method: SelectionMethod
    selected: tuple[int, ...] = field(default_factory=tuple)
    final_cost: float = 0.0
    step_costs: tuple[float, ...] = field(default_factory=tuple)

    def remap(self, mapping: Sequence[int]) -> "SelectionResult":
        """Traduz os índices selecionados para outra numeração."""

        return SelectionResult(
            method=self.method,
            selected=tuple(int(mapping[i]) for i in self.selected),
            final_cost=self.final_cost,
            step_costs=self.step_costs,
        )


def quality_transform(score: float | np.ndarray, beta: float = DEFAULT_BETA) -> float | np.ndarray:
    """``q = exp(β·score)``: leva escores de [0, 1] para [1, e^β]."""

    values = np.asarray(score, dtype=float)
    if np.any(values < 0.0) or np.any(values > 1.0):
        raise InvalidInputError("Escores devem estar em [0, 1]")
    result = np.exp(beta * values)
    return float(result) if result.ndim == 0 else result


def _inputs(S: SimilarityMatrix | np.ndarray, q: Sequence[float] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    matrix = S.S if isinstance(S, SimilarityMatrix) else np.asarray(S, dtype=float)
    quality = np.asarray(q, dtype=float).reshape(-1)
    if matrix.ndim != 2 or matrix.shape != (quality.size, quality.size):
        raise InvalidInputError(f"S {matrix.shape} incompatível com q de tamanho {quality.size}")
    if np.any(quality <= 0.0) or not np.all(np.isfinite(quality)):
        raise InvalidInputError("Qualidades devem ser positivas e finitas")
    return matrix, quality


def subset_cost(S: SimilarityMatrix | np.ndarray, q: Sequence[float] | np.ndarray, Y: Sequence[int]) -> float:
    """``Cost(Y) = log(Π_{i∈Y} q_i² · det(S_Y))``; ``det ≤ 0`` vale ``-inf``."""

    matrix, quality = _inputs(S, q)
    idx = check_indices(Y, quality.size)
    if idx.size == 0:
        return 0.0
    sign, logdet = np.linalg.slogdet(matrix[np.ix_(idx, idx)])
    if sign <= 0:
        return float("-inf")
    return float(2.0 * np.sum(np.log(quality[idx])) + logdet)


def idpp_greedy(S: SimilarityMatrix | np.ndarray, q: Sequence[float] | np.ndarray) -> SelectionResult:
    """Inferência gulosa: adiciona o candidato de maior custo enquanto o custo aumenta.

    O determinante de ``S_{Y∪{j}}`` é atualizado por um passo de Cholesky:
    ``det(S_{Y∪{j}}) = det(S_Y) · (S_jj − cᵀc)`` com ``c = C⁻¹ S_{Y,j}``.
    """

    matrix, quality = _inputs(S, q)
    n = quality.size
    log_q2 = 2.0 * np.log(quality)
    selected: list[int] = []
    remaining = np.ones(n, dtype=bool)
    factor = np.zeros((0, 0))
    cost = 0.0
    steps: list[float] = []

    while remaining.any():
        if selected:
            cross = la.solve_triangular(factor, matrix[np.ix_(selected, np.arange(n))], lower=True)
            residual = np.diag(matrix) - np.sum(cross * cross, axis=0)
        else:
            cross = np.zeros((0, n))
            residual = np.diag(matrix).copy()

        gains = np.full(n, -np.inf)
        usable = remaining & (residual > 0.0)
        gains[usable] = log_q2[usable] + np.log(residual[usable])
        j = int(np.argmax(gains))
        candidate_cost = cost + gains[j]
        if not remaining[j] or not candidate_cost > cost:
            logger.debug("IDPP parou: melhor candidato %d com custo %.6f <= %.6f", j, candidate_cost, cost)
            break

        pivot = math.sqrt(residual[j])
        size = len(selected)
        grown = np.zeros((size + 1, size + 1))
        grown[:size, :size] = factor
        grown[size, :size] = cross[:, j]
        grown[size, size] = pivot
        factor = grown
        selected.append(j)
        remaining[j] = False
        cost = float(candidate_cost)
        steps.append(cost)
        logger.debug("IDPP aceitou %d (custo %.6f)", j, cost)

    return SelectionResult(method="idpp", selected=tuple(selected), final_cost=cost, step_costs=tuple(steps))


def exact_map(
    S: SimilarityMatrix | np.ndarray,
    q: Sequence[float] | np.ndarray,
    n_max: int = DEFAULT_EXACT_N_MAX,
) -> SelectionResult:
    """Enumera os ``2ⁿ`` subconjuntos e devolve o de maior custo (``∅`` vale 0)."""

    matrix, quality = _inputs(S, q)
    n = quality.size
    if n > n_max:
        raise CombinatorialLimitError(f"Enumeração exata recusada: n={n} > n_max={n_max}")

    log_q = np.log(quality)
    best: tuple[int, ...] = ()
    best_cost = 0.0
    for size in range(1, n + 1):
        subsets = np.array(list(combinations(range(n), size)), dtype=int)
        blocks = matrix[subsets[:, :, None], subsets[:, None, :]]
        signs, logdets = np.linalg.slogdet(blocks)
        costs = np.where(signs > 0, 2.0 * log_q[subsets].sum(axis=1) + logdets, -np.inf)
        k = int(np.argmax(costs))
        if costs[k] > best_cost:
            best, best_cost = tuple(int(i) for i in subsets[k]), float(costs[k])
    return SelectionResult(method="exact", selected=best, final_cost=best_cost)


def nms(detections: Sequence[Detection], tau_nms: float = DEFAULT_NMS_TAU) -> SelectionResult:
    """Supressão de não-máximos por classe.

    Ordena por escore decrescente (empates pelo índice), mantém uma caixa e
    descarta as caixas da mesma classe com IoU acima de ``tau_nms``.
    """

    if not 0.0 <= tau_nms <= 1.0:
        raise InvalidInputError(f"tau_nms fora de [0, 1]: {tau_nms}")
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept: list[int] = []
    for i in order:
        current = detections[i]
        suppressed = any(
            detections[k].class_id == current.class_id
            and detections[k].image_id == current.image_id
            and iou(detections[k].box, current.box) > tau_nms
            for k in kept
        )
        if not suppressed:
            kept.append(i)
    return SelectionResult(method="nms", selected=tuple(kept))


def scene_quality(scores: np.ndarray, config: Config) -> np.ndarray:
    """Qualidades a partir dos escores top-1: ``exp(β·s)`` ou o escore cru no modo ``raw``."""

    values = np.asarray(scores, dtype=float)
    if config.quality_mode == "raw":
        if np.any(values <= 0.0):
            raise InvalidInputError("Modo raw exige escores estritamente positivos")
        return values
    return np.asarray(quality_transform(values, config.beta), dtype=float).reshape(-1)


def scene_similarity(scene: Scene, config: Config) -> SimilarityMatrix:
    features = FeatureMatrix.from_raw(scene.feature_matrix())
    return build_similarity(
        features,
        iou_matrix(scene.boxes),
        config.lam,
        repair=config.psd_repair,
        epsilon=config.psd_epsilon,
    )


def select_scene(scene: Scene, config: Config, method: SelectionMethod = "idpp") -> SelectionResult:
    """Seleciona candidatos de uma cena; índices na numeração original dos candidatos.

    Candidatos com escore top-1 menor ou igual a ``min_score`` são descartados
    antes da seleção.
    """

    kept = [i for i, c in enumerate(scene.candidates) if c.score > config.min_score]
    if not kept:
        return SelectionResult(method=method)
    subset = Scene(scene.image_id, [scene.candidates[i] for i in kept], scene.ground_truth)

    if method == "nms":
        result = nms(subset.detections(), config.nms_tau)
    else:
        S = scene_similarity(subset, config)
        q = scene_quality(np.array([c.score for c in subset.candidates]), config)
        if method == "exact":
            result = exact_map(S, q, config.exact_n_max)
        else:
            result = idpp_greedy(S, q)
    logger.debug("Cena %s: %d de %d candidatos selecionados (%s)", scene.image_id, len(result.selected), len(kept), method)
    return result.remap(kept)


__all__ = [
    "DEFAULT_BETA",
    "SelectionMethod",
    "SelectionResult",
    "exact_map",
    "idpp_greedy",
    "nms",
    "quality_transform",
    "scene_quality",
    "scene_similarity",
    "select_scene",
    "subset_cost",
]
