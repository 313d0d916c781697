"""Estudos com cenas sintéticas: efeito do treino e ablação das combinações de perdas."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import pandas as pd

from .config import Config
from .evaluation import (
    build_crowd_subset,
    coco_ap,
    correct_box_probability,
    crowd_recall,
    mean_average_precision,
)
from .inference import SelectionMethod, select_scene
from .scene import Detection, Scene
from .synthetic import (
    SceneSpec,
    apply_state,
    evaluate_losses,
    generate_scene,
    instance_margin,
    train_toy,
)

logger = logging.getLogger(__name__)

CROWD_RECALL_THRESHOLD = 0.4
HELD_OUT_OFFSET = 1000


@dataclass(frozen=True, slots=True)
class Variant:
    """Combinação de perdas de treino e método de inferência."""

    name: str
    use_ss: bool
    use_id: bool
    method: SelectionMethod


ABLATION_VARIANTS = (
    Variant("NMS", use_ss=False, use_id=False, method="nms"),
    Variant("NMS+SS", use_ss=True, use_id=False, method="nms"),
    Variant("IDPP+ID", use_ss=False, use_id=True, method="idpp"),
    Variant("IDPP+SS+ID", use_ss=True, use_id=True, method="idpp"),
)


@dataclass(slots=True)
class RunSummary:
    seed: int
    id_initial: float
    id_final: float
    margin: float
    idpp_recall: Optional[float]
    nms_recall: Optional[float]
    correct_box_prob: Optional[float]


def crowd_scene(seed: int, base: Optional[SceneSpec] = None) -> Scene:
    """Cena com 2 a 4 objetos e pares sobrepostos (nível 0.4)."""

    spec = base or SceneSpec(overlap_level=0.4)
    return generate_scene(spec.model_copy(update={"rng_seed": seed, "n_objects": 2 + seed % 3}))


def selected_detections(scene: Scene, config: Config, method: SelectionMethod) -> list[Detection]:
    return scene.detections(select_scene(scene, config, method).selected)


def candidate_boxes(scenes: Sequence[Scene], config: Config) -> list[Detection]:
    return [det for scene in scenes for det in scene.class_detections(config.correct_box_thresh)]


def _ground_truth(scenes: Sequence[Scene]) -> dict:
    return {scene.image_id: list(scene.ground_truth) for scene in scenes}


def _recall_at(dets: Sequence[Detection], scenes: Sequence[Scene], threshold: float) -> Optional[float]:
    return crowd_recall(dets, _ground_truth(scenes), [threshold]).at(threshold)


def training_run(seed: int, config: Config, base: Optional[SceneSpec] = None) -> RunSummary:
    """Treina uma cena e mede perda ID, margem de features, recall e caixas corretas.

    ``id_initial`` é a perda no início da fase de features, já com as
    qualidades que ficam fixas durante essa fase.
    """

    scenes = [crowd_scene(seed, base)]
    state = train_toy(scenes, config)
    trained = apply_state(scenes, state)
    final = evaluate_losses(scenes, state, config)
    history = state.loss_history
    initial = history[config.score_iterations] if config.score_iterations < len(history) else final
    summary = RunSummary(
        seed=seed,
        id_initial=initial.id_total,
        id_final=final.id_total,
        margin=instance_margin(state.features[0], [c.instance_id for c in trained[0].candidates]),
        idpp_recall=_recall_at(selected_detections(trained[0], config, "idpp"), trained, CROWD_RECALL_THRESHOLD),
        nms_recall=_recall_at(selected_detections(trained[0], config, "nms"), trained, CROWD_RECALL_THRESHOLD),
        correct_box_prob=correct_box_probability(
            candidate_boxes(trained, config), _ground_truth(trained), config.correct_box_thresh, config.match_iou
        ),
    )
    logger.info("Semente %d: ID %.4f -> %.4f, margem %.3f", seed, summary.id_initial, summary.id_final, summary.margin)
    return summary


def training_study(seeds: Sequence[int], config: Config, base: Optional[SceneSpec] = None) -> pd.DataFrame:
    return pd.DataFrame([asdict(training_run(seed, config, base)) for seed in seeds])


@dataclass(slots=True)
class SuppressionSummary:
    seed: int
    without_ss: Optional[float]
    with_ss: Optional[float]

    @property
    def gain(self) -> Optional[float]:
        if self.without_ss is None or self.with_ss is None:
            return None
        return self.with_ss - self.without_ss


def ss_suppression_run(seed: int, config: Config, base: Optional[SceneSpec] = None) -> SuppressionSummary:
    """Probabilidade de caixa correta numa cena separada, treinada com e sem 𝓛_SS.

    A cena ``seed`` entra com rótulos (CE e SS); a cena ``seed + HELD_OUT_OFFSET``
    entra sem rótulos, de modo que só 𝓛_SS altera os seus escores. As features
    ficam fixas nas duas execuções.
    """

    scenes = [crowd_scene(seed, base), crowd_scene(seed + HELD_OUT_OFFSET, base)]
    held_out_gts = _ground_truth(scenes[1:])
    values = []
    for weight in (0.0, config.lambda_ss):
        state = train_toy(
            scenes,
            config.model_copy(update={"lambda_ss": weight}),
            train_features=False,
            unlabeled={1},
        )
        held_out = apply_state(scenes, state)[1:]
        values.append(
            correct_box_probability(
                candidate_boxes(held_out, config), held_out_gts, config.correct_box_thresh, config.match_iou
            )
        )
    summary = SuppressionSummary(seed=seed, without_ss=values[0], with_ss=values[1])
    logger.info("Semente %d: caixa correta sem SS %s, com SS %s", seed, summary.without_ss, summary.with_ss)
    return summary


def ss_suppression_study(seeds: Sequence[int], config: Config, base: Optional[SceneSpec] = None) -> pd.DataFrame:
    rows = []
    for seed in seeds:
        summary = ss_suppression_run(seed, config, base)
        rows.append({**asdict(summary), "gain": summary.gain})
    return pd.DataFrame(rows, columns=["seed", "without_ss", "with_ss", "gain"])


def _variant_config(config: Config, variant: Variant) -> Config:
    return config.model_copy(
        update={
            "lambda_ss": config.lambda_ss if variant.use_ss else 0.0,
            "lr_features": config.lr_features if variant.use_id else 0.0,
        }
    )


def ablation(seeds: Sequence[int], config: Config, base: Optional[SceneSpec] = None) -> pd.DataFrame:
    """Treina e avalia cada variante nas mesmas cenas; uma linha por variante."""

    scenes = [crowd_scene(seed, base) for seed in seeds]
    gts = _ground_truth(scenes)
    crowd = build_crowd_subset(gts, config.crowd_tau)
    rows = []
    for variant in ABLATION_VARIANTS:
        variant_config = _variant_config(config, variant)
        state = train_toy(scenes, variant_config, train_features=variant.use_id)
        trained = apply_state(scenes, state)
        dets = [det for scene in trained for det in selected_detections(scene, variant_config, variant.method)]
        crowd_dets = [d for d in dets if d.image_id in crowd]
        rows.append(
            {
                "variant": variant.name,
                "ap50": mean_average_precision(dets, gts, config.match_iou)[1],
                "coco_ap": coco_ap(dets, gts),
                "crowd_ap50": mean_average_precision(crowd_dets, {k: gts[k] for k in crowd}, config.match_iou)[1]
                if crowd
                else None,
                "crowd_recall": _recall_at(dets, trained, CROWD_RECALL_THRESHOLD),
                "correct_box_prob": correct_box_probability(
                    candidate_boxes(trained, config), gts, config.correct_box_thresh, config.match_iou
                ),
            }
        )
        logger.info("Variante %s avaliada em %d cenas", variant.name, len(scenes))
    return pd.DataFrame(rows)


__all__ = [
    "ABLATION_VARIANTS",
    "HELD_OUT_OFFSET",
    "RunSummary",
    "SuppressionSummary",
    "Variant",
    "ablation",
    "crowd_scene",
    "ss_suppression_run",
    "ss_suppression_study",
    "training_run",
    "training_study",
]
