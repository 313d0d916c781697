"""Métricas de avaliação: AP/mAP, recall em aglomeração e probabilidade de caixa correta."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Literal, Mapping, Optional, Sequence

import numpy as np

from .config import DEFAULT_RECALL_THRESHOLDS, Config
from .errors import InvalidInputError
from .geometry import DEFAULT_CROWD_TAU, GroundTruthObject, crowd_objects, iou_cross
from .scene import Detection

logger = logging.getLogger(__name__)

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
DEFAULT_MATCH_IOU = 0.5
DEFAULT_CORRECT_BOX_THRESH = 0.01

GroundTruthSet = Mapping[str, Sequence[GroundTruthObject]]
Interpolation = Literal["all", "11point"]


def voc_ap(recall: np.ndarray, precision: np.ndarray, interpolation: Interpolation = "all") -> float:
    """Área sob a curva precisão-revocação interpolada.

    ``"all"`` usa todos os pontos; ``"11point"`` é a métrica VOC 2007.
    """

    if interpolation == "11point":
        ap = 0.0
        for t in np.arange(0.0, 1.1, 0.1):
            above = recall >= t
            ap += (float(np.max(precision[above])) if above.any() else 0.0) / 11.0
        return ap

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    # envelope de precisão
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    i = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))


def _check_threshold(iou_thresh: float) -> None:
    if not 0.0 < iou_thresh < 1.0:
        raise InvalidInputError(f"Limiar de IoU fora de (0, 1): {iou_thresh}")


def average_precision(
    dets: Sequence[Detection],
    gts: GroundTruthSet,
    iou_thresh: float = DEFAULT_MATCH_IOU,
    *,
    interpolation: Interpolation = "all",
) -> Optional[float]:
    """AP estilo VOC para detecções e anotações de uma mesma categoria.

    Detecções são percorridas por escore decrescente (empates pela ordem de
    entrada) e casadas com o objeto ainda não casado de maior IoU, desde que
    ``IoU >= iou_thresh``. Retorna ``None`` quando não há objetos anotados.
    """

    _check_threshold(iou_thresh)
    n_gts = sum(len(objects) for objects in gts.values())
    if n_gts == 0:
        return None
    if not dets:
        return 0.0

    order = sorted(range(len(dets)), key=lambda k: -dets[k].score)
    matched: dict[str, np.ndarray] = {image: np.zeros(len(objects), dtype=bool) for image, objects in gts.items()}
    tp = np.zeros(len(dets))
    for rank, k in enumerate(order):
        det = dets[k]
        objects = gts.get(det.image_id, ())
        if not objects:
            continue
        overlaps = iou_cross([det.box], [g.box for g in objects])[0]
        overlaps[matched[det.image_id]] = -1.0
        best = int(np.argmax(overlaps))
        if overlaps[best] >= iou_thresh:
            matched[det.image_id][best] = True
            tp[rank] = 1.0

    tp_cum = np.cumsum(tp)
    recall = tp_cum / n_gts
    precision = tp_cum / np.arange(1, len(dets) + 1)
    return voc_ap(recall, precision, interpolation)


def _by_class(dets: Iterable[Detection], gts: GroundTruthSet) -> tuple[dict[int, list[Detection]], dict[int, dict[str, list[GroundTruthObject]]]]:
    det_groups: dict[int, list[Detection]] = defaultdict(list)
    for det in dets:
        det_groups[det.class_id].append(det)
    gt_groups: dict[int, dict[str, list[GroundTruthObject]]] = defaultdict(lambda: defaultdict(list))
    for image_id, objects in gts.items():
        for gt in objects:
            gt_groups[gt.class_id][image_id].append(gt)
    return det_groups, gt_groups


def mean_average_precision(
    dets: Sequence[Detection],
    gts: GroundTruthSet,
    iou_thresh: float = DEFAULT_MATCH_IOU,
) -> tuple[dict[int, float], float]:
    """AP por categoria (apenas categorias com anotações) e a média delas."""

    det_groups, gt_groups = _by_class(dets, gts)
    ap_per_class: dict[int, float] = {}
    for class_id in sorted(gt_groups):
        ap = average_precision(det_groups.get(class_id, []), gt_groups[class_id], iou_thresh)
        if ap is not None:
            ap_per_class[class_id] = ap
    mean = float(np.mean(list(ap_per_class.values()))) if ap_per_class else 0.0
    return ap_per_class, mean


def coco_ap(dets: Sequence[Detection], gts: GroundTruthSet) -> float:
    """Média do mAP nos limiares 0.50, 0.55, ..., 0.95."""

    return float(np.mean([mean_average_precision(dets, gts, t)[1] for t in COCO_THRESHOLDS]))


@dataclass(slots=True)
class RecallCurve:
    """Pontos ``(limiar, recall)`` e limiares omitidos por falta de objetos."""

    points: list[tuple[float, float]] = field(default_factory=list)
    omitted: list[float] = field(default_factory=list)

    def at(self, threshold: float) -> Optional[float]:
        for t, value in self.points:
            if abs(t - threshold) < 1e-12:
                return value
        return None


def _crowded_at(objects: Sequence[GroundTruthObject], threshold: float) -> list[GroundTruthObject]:
    ids = crowd_objects(objects, threshold)
    return [g for g in objects if g.instance_id in ids]


def crowd_recall(
    dets: Sequence[Detection],
    gts: GroundTruthSet,
    overlap_thresholds: Sequence[float] = tuple(DEFAULT_RECALL_THRESHOLDS),
    match_iou: float = DEFAULT_MATCH_IOU,
) -> RecallCurve:
    """Fração de objetos sobrepostos detectados, por limiar de sobreposição.

    Para cada limiar ``t`` contam os objetos com IoU ``> t`` com outro objeto
    da imagem; um objeto é detectado quando alguma detecção da mesma
    categoria tem IoU ``>= match_iou`` com ele. As frações são calculadas por
    categoria e depois promediadas.
    """

    thresholds = list(overlap_thresholds)
    if any(t < 0.0 or t > 1.0 for t in thresholds) or any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise InvalidInputError(f"Limiares de sobreposição inválidos: {thresholds}")
    _check_threshold(match_iou)

    det_by_image: dict[str, list[Detection]] = defaultdict(list)
    for det in dets:
        det_by_image[det.image_id].append(det)

    curve = RecallCurve()
    for t in thresholds:
        hits: dict[int, list[bool]] = defaultdict(list)
        for image_id in sorted(gts):
            for gt in _crowded_at(gts[image_id], t):
                same_class = [d.box for d in det_by_image.get(image_id, []) if d.class_id == gt.class_id]
                detected = bool(same_class) and float(iou_cross([gt.box], same_class).max()) >= match_iou
                hits[gt.class_id].append(detected)
        if not hits:
            logger.debug("Limiar %.2f sem objetos sobrepostos; ponto omitido", t)
            curve.omitted.append(t)
            continue
        curve.points.append((t, float(np.mean([np.mean(values) for _, values in sorted(hits.items())]))))
    return curve


def correct_box_probability(
    candidates: Sequence[Detection],
    gts: GroundTruthSet,
    score_thresh: float = DEFAULT_CORRECT_BOX_THRESH,
    match_iou: float = DEFAULT_MATCH_IOU,
) -> Optional[float]:
    """Fração das caixas com escore acima do limiar que cobrem um objeto da mesma categoria.

    Cada par (candidato, categoria) conta como uma caixa. Sem caixas acima do
    limiar o valor é indefinido e a função retorna ``None``.
    """

    boxes = [c for c in candidates if c.score > score_thresh]
    if not boxes:
        return None
    correct = 0
    for det in boxes:
        same_class = [g.box for g in gts.get(det.image_id, ()) if g.class_id == det.class_id]
        if same_class and float(iou_cross([det.box], same_class).max()) >= match_iou:
            correct += 1
    return correct / len(boxes)


def build_crowd_subset(gts: GroundTruthSet, tau: float = DEFAULT_CROWD_TAU) -> set[str]:
    """Imagens com ao menos um par de objetos com IoU estritamente maior que ``tau``."""

    return {image_id for image_id, objects in gts.items() if crowd_objects(objects, tau)}


def max_score_per_class(dets: Iterable[Detection]) -> dict[int, float]:
    result: dict[int, float] = {}
    for det in dets:
        result[det.class_id] = max(result.get(det.class_id, 0.0), det.score)
    return dict(sorted(result.items()))


@dataclass(slots=True)
class EvalReport:
    """Resumo da avaliação de um conjunto de detecções."""

    ap_per_class: dict[int, float]
    map: float
    coco_ap: float
    recall_curve: list[tuple[float, float]]
    correct_box_prob: Optional[float]
    n_images: int
    n_crowd_images: int
    crowd_map: Optional[float] = None
    recall_omitted: list[float] = field(default_factory=list)
    max_score_per_class: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["ap_per_class"] = {str(k): v for k, v in self.ap_per_class.items()}
        payload["max_score_per_class"] = {str(k): v for k, v in self.max_score_per_class.items()}
        payload["recall_curve"] = [list(point) for point in self.recall_curve]
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        payload["ap_per_class"] = {int(k): v for k, v in payload["ap_per_class"].items()}
        payload["max_score_per_class"] = {int(k): v for k, v in payload.get("max_score_per_class", {}).items()}
        payload["recall_curve"] = [(float(t), float(r)) for t, r in payload["recall_curve"]]
        return cls(**payload)


def evaluate(
    dets: Sequence[Detection],
    gts: GroundTruthSet,
    config: Config,
    candidates: Optional[Sequence[Detection]] = None,
) -> EvalReport:
    """Calcula todas as métricas; ``candidates`` alimenta a probabilidade de caixa correta."""

    ap_per_class, mean = mean_average_precision(dets, gts, config.match_iou)
    crowd = build_crowd_subset(gts, config.crowd_tau)
    crowd_map = None
    if crowd:
        crowd_gts = {image_id: gts[image_id] for image_id in crowd}
        crowd_map = mean_average_precision([d for d in dets if d.image_id in crowd], crowd_gts, config.match_iou)[1]
    curve = crowd_recall(dets, gts, config.recall_thresholds, config.match_iou)
    report = EvalReport(
        ap_per_class=ap_per_class,
        map=mean,
        coco_ap=coco_ap(dets, gts),
        recall_curve=curve.points,
        correct_box_prob=correct_box_probability(
            dets if candidates is None else candidates, gts, config.correct_box_thresh, config.match_iou
        ),
        n_images=len(gts),
        n_crowd_images=len(crowd),
        crowd_map=crowd_map,
        recall_omitted=curve.omitted,
        max_score_per_class=max_score_per_class(dets),
    )
    logger.info("Avaliação: mAP=%.4f em %d imagens (%d com aglomeração)", mean, report.n_images, report.n_crowd_images)
    return report


__all__ = [
    "COCO_THRESHOLDS",
    "EvalReport",
    "GroundTruthSet",
    "RecallCurve",
    "average_precision",
    "build_crowd_subset",
    "coco_ap",
    "correct_box_probability",
    "crowd_recall",
    "evaluate",
    "max_score_per_class",
    "mean_average_precision",
    "voc_ap",
]
