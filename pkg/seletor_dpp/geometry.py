"""Caixas delimitadoras, IoU e identificação de objetos em aglomeração."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_CROWD_TAU = 0.3


@dataclass(frozen=True, slots=True)
class BoundingBox:
    """Caixa em coordenadas de canto contínuas ``(x_min, y_min, x_max, y_max)``."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(np.isfinite(coords)):
            raise InvalidInputError(f"Coordenadas não finitas: {coords}")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise InvalidInputError(f"Caixa degenerada (área nula): {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_sequence(cls, values: Sequence[float]) -> "BoundingBox":
        if len(values) != 4:
            raise InvalidInputError(f"Caixa deve ter 4 coordenadas, recebeu {len(values)}")
        return cls(*(float(v) for v in values))

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BoundingBox":
        """Converte o formato canto superior esquerdo + tamanho (estilo COCO)."""

        return cls(x, y, x + w, y + h)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


@dataclass(frozen=True, slots=True)
class GroundTruthObject:
    """Objeto anotado de uma cena."""

    box: BoundingBox
    class_id: int
    instance_id: int

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise InvalidInputError(f"class_id negativo: {self.class_id}")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Interseção sobre união com áreas contínuas."""

    inter_w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    inter_h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if inter_w <= 0.0 or inter_h <= 0.0:
        return 0.0
    inter = inter_w * inter_h
    return inter / (a.area + b.area - inter)


def boxes_to_array(boxes: Iterable[BoundingBox]) -> np.ndarray:
    rows = [box.as_list() for box in boxes]
    return np.asarray(rows, dtype=float).reshape(len(rows), 4)


def iou_matrix(boxes: Sequence[BoundingBox]) -> np.ndarray:
    """Matriz simétrica ``[IoU]_ij`` com diagonal exatamente 1."""

    return iou_cross(boxes, boxes, symmetric=True)


def iou_cross(
    rows: Sequence[BoundingBox], cols: Sequence[BoundingBox], *, symmetric: bool = False
) -> np.ndarray:
    """IoU entre duas listas de caixas (``len(rows) x len(cols)``)."""

    a = boxes_to_array(rows)
    b = boxes_to_array(cols)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))

    inter_w = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    inter_h = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(inter_w, 0.0, None) * np.clip(inter_h, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    result = np.where(inter > 0.0, inter / union, 0.0)

    if symmetric:
        upper = np.triu(result, k=1)
        result = upper + upper.T
        np.fill_diagonal(result, 1.0)
    return result


def crowd_objects(gts: Sequence[GroundTruthObject], tau: float = DEFAULT_CROWD_TAU) -> set[int]:
    """Identificadores de objetos com IoU acima de ``tau`` com ao menos outro objeto."""

    if not 0.0 <= tau <= 1.0:
        raise InvalidInputError(f"tau fora de [0, 1]: {tau}")
    if len(gts) < 2:
        return set()
    overlaps = iou_matrix([gt.box for gt in gts])
    np.fill_diagonal(overlaps, 0.0)
    crowded = {gts[i].instance_id for i in np.flatnonzero((overlaps > tau).any(axis=1))}
    logger.debug("Objetos em aglomeração (tau=%.2f): %s", tau, sorted(crowded))
    return crowded


def check_unique_instances(gts: Sequence[GroundTruthObject], n_classes: int | None = None) -> None:
    """Valida ``instance_id`` único por cena e ``class_id`` dentro do número de categorias."""

    seen: set[int] = set()
    for gt in gts:
        if gt.instance_id in seen:
            raise InvalidInputError(f"instance_id repetido na cena: {gt.instance_id}")
        seen.add(gt.instance_id)
        if n_classes is not None and gt.class_id >= n_classes:
            raise InvalidInputError(f"class_id {gt.class_id} fora de [0, {n_classes})")


__all__ = [
    "BoundingBox",
    "GroundTruthObject",
    "boxes_to_array",
    "check_unique_instances",
    "crowd_objects",
    "iou",
    "iou_cross",
    "iou_matrix",
]
