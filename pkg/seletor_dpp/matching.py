"""Atribuição húngara e seleção de candidatos representativos."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidInputError
from .geometry import GroundTruthObject, iou_cross
from .scene import Candidate

logger = logging.getLogger(__name__)

TIE_RTOL = 1e-12


@dataclass(frozen=True, slots=True)
class Assignment:
    """Pares ``(linha, coluna)`` de uma atribuição um-para-um e seu custo total."""

    pairs: tuple[tuple[int, int], ...]
    total_cost: float


def _optimal_cost(cost: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def _lexicographic_pairs(cost: np.ndarray, optimum: float) -> list[tuple[int, int]]:
    """Para cada linha em ordem, o menor parceiro compatível com o custo ótimo.

    Assume ``n_rows <= n_cols`` (toda linha recebe uma coluna).
    """

    work = cost.astype(float).copy()
    tolerance = TIE_RTOL * max(1.0, abs(optimum), float(np.abs(cost).max()) * cost.shape[0])
    pairs: list[tuple[int, int]] = []
    for row in range(work.shape[0]):
        for col in range(work.shape[1]):
            if not np.isfinite(work[row, col]):
                continue
            trial = work.copy()
            trial[row, :] = np.inf
            trial[:, col] = np.inf
            trial[row, col] = work[row, col]
            try:
                total = _optimal_cost(trial)
            except ValueError:
                continue
            if total <= optimum + tolerance:
                pairs.append((row, col))
                work = trial
                break
    return sorted(pairs)


def hungarian(cost: np.ndarray | Sequence[Sequence[float]]) -> Assignment:
    """Atribuição de custo total mínimo cobrindo ``min(m, n)`` pares.

    Empates são desfeitos de forma determinística: linha a linha (ou coluna a
    coluna quando há mais linhas que colunas), o menor índice parceiro que
    ainda permite o custo ótimo.
    """

    matrix = np.asarray(cost, dtype=float)
    if matrix.size == 0:
        return Assignment(pairs=(), total_cost=0.0)
    if matrix.ndim != 2:
        raise InvalidInputError(f"Matriz de custo deve ser 2-D, forma {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise InvalidInputError("Matriz de custo com entradas não finitas")

    transposed = matrix.shape[0] > matrix.shape[1]
    work = matrix.T if transposed else matrix
    optimum = _optimal_cost(work)
    pairs = _lexicographic_pairs(work, optimum)
    if transposed:
        pairs = sorted((col, row) for row, col in pairs)
    total = float(sum(matrix[row, col] for row, col in pairs))
    logger.debug("Atribuição húngara: %s (custo %.6f)", pairs, total)
    return Assignment(pairs=tuple(pairs), total_cost=total)


def match_pairs(
    candidates: Sequence[Candidate],
    gts: Sequence[GroundTruthObject],
    class_filter: Optional[int] = None,
) -> list[tuple[int, int]]:
    """Pares ``(índice do candidato, índice do objeto)`` com custo ``1 − IoU``.

    Com ``class_filter`` apenas candidatos cuja categoria top-1 é a classe
    indicada e objetos dessa classe participam. Pares com IoU nula são
    descartados.
    """

    cand_idx = [i for i, c in enumerate(candidates) if class_filter is None or c.label == class_filter]
    gt_idx = [j for j, g in enumerate(gts) if class_filter is None or g.class_id == class_filter]
    if not cand_idx or not gt_idx:
        return []
    overlaps = iou_cross([candidates[i].box for i in cand_idx], [gts[j].box for j in gt_idx])
    assignment = hungarian(1.0 - overlaps)
    return [(cand_idx[r], gt_idx[c]) for r, c in assignment.pairs if overlaps[r, c] > 0.0]


def match_representatives(
    candidates: Sequence[Candidate],
    gts: Sequence[GroundTruthObject],
    class_filter: Optional[int] = None,
) -> list[int]:
    """Índices (ordenados) dos candidatos mais próximos dos objetos anotados.

    Sem filtro produz ``Y_rep``; com filtro de classe produz ``Y_Ck``.
    """

    return sorted(cand for cand, _ in match_pairs(candidates, gts, class_filter))


__all__ = ["Assignment", "hungarian", "match_pairs", "match_representatives"]
