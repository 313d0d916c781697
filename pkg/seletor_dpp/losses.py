"""Perda SS, perdas ID e componentes da perda multitarefa."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .dpp import (
    KernelMatrix,
    SimilarityMatrix,
    build_kernel,
    check_indices,
    kernel_from_features,
    log_det_psd,
    log_det_shifted,
)
from .errors import InvalidInputError
from .geometry import GroundTruthObject, iou_cross
from .inference import quality_transform
from .matching import match_representatives
from .scene import Candidate

logger = logging.getLogger(__name__)

FEATURE_COLLAPSE = "feature_collapse"


@dataclass(frozen=True, slots=True)
class LossBundle:
    """Valores das perdas de uma avaliação (média sobre as cenas)."""

    ss: float = 0.0
    id_all: float = 0.0
    id_ic_per_class: Mapping[int, float] = field(default_factory=dict)
    id_total: float = 0.0
    smooth_l1: float = 0.0
    cross_entropy: float = 0.0
    flags: tuple[str, ...] = ()

    def as_row(self) -> dict[str, float]:
        return {
            "ss": self.ss,
            "id_all": self.id_all,
            "id_total": self.id_total,
            "ce": self.cross_entropy,
            "smooth_l1": self.smooth_l1,
        }


@dataclass(frozen=True, slots=True)
class TopMSelection:
    """Entradas ``(RoI, categoria)`` de ``𝒴_m`` e os índices de ``Y_pos`` entre elas."""

    entries: tuple[tuple[int, int], ...]
    positive: tuple[int, ...]

    @property
    def all(self) -> tuple[int, ...]:
        return tuple(range(len(self.entries)))

    @property
    def rois(self) -> np.ndarray:
        return np.array([roi for roi, _ in self.entries], dtype=int)

    @property
    def classes(self) -> np.ndarray:
        return np.array([cls for _, cls in self.entries], dtype=int)


@dataclass(frozen=True, slots=True)
class IdProblem:
    """Conjuntos da perda ID em índices globais de candidatos.

    ``support`` é ``𝒴_s``, ``rep`` é ``Y_rep`` e ``per_class`` mapeia cada
    categoria com ao menos um representante para ``(𝒴_Ck, Y_Ck)``.
    """

    support: tuple[int, ...] = ()
    rep: tuple[int, ...] = ()
    per_class: Mapping[int, tuple[tuple[int, ...], tuple[int, ...]]] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.rep


def select_top_m(scores: np.ndarray, m: int) -> TopMSelection:
    """Expande as ``m`` categorias de maior escore de cada RoI em entradas de ``𝒴_m``.

    Empates no escore favorecem o menor ``class_id``. A entrada top-1 de cada
    RoI pertence a ``Y_pos``.
    """

    matrix = np.atleast_2d(np.asarray(scores, dtype=float))
    n_classes = matrix.shape[1]
    if m < 1 or m > n_classes:
        raise InvalidInputError(f"m={m} fora de [1, {n_classes}]")
    entries: list[tuple[int, int]] = []
    positive: list[int] = []
    for roi, row in enumerate(matrix):
        order = np.argsort(-row, kind="stable")[:m]
        positive.append(len(entries))
        entries.extend((roi, int(cls)) for cls in order)
    return TopMSelection(entries=tuple(entries), positive=tuple(positive))


def expand_similarity(S: SimilarityMatrix | np.ndarray, selection: TopMSelection) -> np.ndarray:
    """Similaridade entre entradas: entradas de uma mesma RoI são idênticas."""

    matrix = S.S if isinstance(S, SimilarityMatrix) else np.asarray(S, dtype=float)
    rois = selection.rois
    return matrix[np.ix_(rois, rois)]


def ss_kernel(
    S: SimilarityMatrix | np.ndarray,
    scores: np.ndarray,
    selection: TopMSelection,
    beta: float,
) -> KernelMatrix:
    """Kernel sobre ``𝒴_m`` com ``q = exp(β·escore da categoria)``."""

    values = np.asarray(scores, dtype=float)[selection.rois, selection.classes]
    return build_kernel(expand_similarity(S, selection), quality_transform(values, beta))


def ss_loss(L: KernelMatrix | np.ndarray, positive: Sequence[int]) -> float:
    """``−log det(L_pos + I) + log det(L_m + I)``."""

    matrix = L.L if isinstance(L, KernelMatrix) else np.asarray(L, dtype=float)
    idx = check_indices(positive, matrix.shape[0])
    return -log_det_shifted(matrix[np.ix_(idx, idx)]) + log_det_shifted(matrix)


def _id_loss(matrix: np.ndarray, rep: Sequence[int]) -> float:
    idx = check_indices(rep, matrix.shape[0])
    if idx.size == 0:
        raise InvalidInputError("Conjunto de representantes vazio")
    log_rep = log_det_psd(matrix[np.ix_(idx, idx)], allow_singular=True)
    if math.isinf(log_rep):
        logger.warning("L_Y singular: features colapsadas entre representantes %s", idx.tolist())
        return math.inf
    return -log_rep + log_det_shifted(matrix)


def id_loss_all(L: KernelMatrix | np.ndarray, rep: Sequence[int]) -> float:
    """``−log det(L_rep) + log det(L_s + I)`` sobre o kernel de ``𝒴_s``.

    ``L_rep`` singular devolve ``+inf`` (colapso de features).
    """

    return _id_loss(L.L if isinstance(L, KernelMatrix) else np.asarray(L, dtype=float), rep)


def id_loss_ic(L: KernelMatrix | np.ndarray, rep: Sequence[int]) -> float:
    """Versão por categoria: kernel de ``𝒴_Ck`` e representantes ``Y_Ck``."""

    return _id_loss(L.L if isinstance(L, KernelMatrix) else np.asarray(L, dtype=float), rep)


def id_loss_total(id_all: float, id_ic: Mapping[int, float]) -> float:
    """``𝓛_ID = 𝓛_all + (1/K)·Σ 𝓛_ic`` com ``K`` categorias presentes."""

    if not id_ic:
        return id_all
    return id_all + sum(id_ic.values()) / len(id_ic)


def build_id_problem(
    candidates: Sequence[Candidate],
    gts: Sequence[GroundTruthObject],
    intersect_iou: float = 0.0,
) -> IdProblem:
    """Monta ``𝒴_s``, ``Y_rep`` e os pares ``(𝒴_Ck, Y_Ck)`` de uma cena."""

    if not candidates or not gts:
        return IdProblem()
    overlaps = iou_cross([c.box for c in candidates], [g.box for g in gts])
    support = [i for i in range(len(candidates)) if overlaps[i].max() > intersect_iou]
    support_cands = [candidates[i] for i in support]
    rep = [support[i] for i in match_representatives(support_cands, gts)]

    per_class: dict[int, tuple[tuple[int, ...], tuple[int, ...]]] = {}
    for class_id in sorted({g.class_id for g in gts}):
        members = [i for i in support if candidates[i].label == class_id]
        chosen = match_representatives([candidates[i] for i in members], gts, class_filter=class_id)
        if chosen:
            per_class[class_id] = (tuple(members), tuple(members[i] for i in chosen))
    return IdProblem(support=tuple(support), rep=tuple(rep), per_class=per_class)


def _local(subset: Sequence[int], members: Sequence[int]) -> list[int]:
    position = {g: i for i, g in enumerate(subset)}
    return [position[g] for g in members]


def id_losses(
    problem: IdProblem,
    V: np.ndarray,
    iou: np.ndarray,
    q: np.ndarray,
    lam: float,
) -> tuple[float, dict[int, float]]:
    """Perdas ``𝓛_all`` e ``𝓛_ic`` de uma cena a partir das features e qualidades."""

    if problem.empty:
        return 0.0, {}
    L = kernel_from_features(V, iou, q, lam)
    support = list(problem.support)
    id_all = id_loss_all(L[np.ix_(support, support)], _local(support, problem.rep))
    per_class = {
        class_id: id_loss_ic(L[np.ix_(members, members)], _local(members, chosen))
        for class_id, (members, chosen) in problem.per_class.items()
    }
    return id_all, per_class


def smooth_l1(pred: np.ndarray, target: np.ndarray) -> float:
    """Smooth L1 somada: ``0.5·d²`` para ``|d| < 1``, ``|d| − 0.5`` caso contrário."""

    diff = np.abs(np.asarray(pred, dtype=float) - np.asarray(target, dtype=float))
    if not np.all(np.isfinite(diff)):
        raise InvalidInputError("Smooth L1 com entradas não finitas")
    return float(np.sum(np.where(diff < 1.0, 0.5 * diff**2, diff - 0.5)))


def cross_entropy(logits: np.ndarray, label: int) -> float:
    """Entropia cruzada softmax de um vetor de logits."""

    values = np.asarray(logits, dtype=float).reshape(-1)
    if not 0 <= label < values.size:
        raise InvalidInputError(f"Rótulo {label} fora de [0, {values.size})")
    return float(logsumexp(values) - values[label])


@dataclass(frozen=True, slots=True)
class MultiTaskBatch:
    """Classificação e regressão de um estágio (RPN ou RCN).

    A regressão só conta para rótulos diferentes de ``background_label``
    (``None`` quando não há classe de fundo).
    """

    logits: np.ndarray
    labels: Sequence[int]
    deltas: np.ndarray
    targets: np.ndarray
    background_label: Optional[int] = 0

    def loss(self) -> tuple[float, float]:
        classification = sum(cross_entropy(row, int(label)) for row, label in zip(self.logits, self.labels))
        regression = sum(
            smooth_l1(pred, target)
            for pred, target, label in zip(self.deltas, self.targets, self.labels)
            if self.background_label is None or label != self.background_label
        )
        return float(classification), float(regression)


def multi_task_loss(*batches: MultiTaskBatch) -> float:
    """``Σ𝓛_b + Σ1·𝓛_r + Σ𝓛_m + Σ1·𝓛_r`` sem normalização por tamanho de lote."""

    total = 0.0
    for batch in batches:
        classification, regression = batch.loss()
        total += classification + regression
    return total


def box_deltas(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Deslocamentos ``(dx, dy, dw, dh)`` de caixas ``source`` para ``target`` (n x 4)."""

    src = np.atleast_2d(np.asarray(source, dtype=float))
    tgt = np.atleast_2d(np.asarray(target, dtype=float))
    sw, sh = src[:, 2] - src[:, 0], src[:, 3] - src[:, 1]
    tw, th = tgt[:, 2] - tgt[:, 0], tgt[:, 3] - tgt[:, 1]
    dx = ((tgt[:, 0] + tgt[:, 2]) - (src[:, 0] + src[:, 2])) / (2.0 * sw)
    dy = ((tgt[:, 1] + tgt[:, 3]) - (src[:, 1] + src[:, 3])) / (2.0 * sh)
    return np.stack([dx, dy, np.log(tw / sw), np.log(th / sh)], axis=1)


__all__ = [
    "FEATURE_COLLAPSE",
    "IdProblem",
    "LossBundle",
    "MultiTaskBatch",
    "TopMSelection",
    "box_deltas",
    "build_id_problem",
    "cross_entropy",
    "expand_similarity",
    "id_loss_all",
    "id_loss_ic",
    "id_loss_total",
    "id_losses",
    "multi_task_loss",
    "select_top_m",
    "smooth_l1",
    "ss_kernel",
    "ss_loss",
]
