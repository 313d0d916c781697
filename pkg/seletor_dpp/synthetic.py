"""Cenas sintéticas com aglomeração e treino de brinquedo das perdas SS e ID."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Collection, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import softmax

from .config import Config
from .dpp import FeatureMatrix, build_similarity, normalize_rows
from .errors import NumericalDomainError, SceneGenerationError
from .geometry import BoundingBox, GroundTruthObject, iou, iou_cross, iou_matrix
from .gradients import grad_id_wrt_V, grad_ss_wrt_q
from .inference import quality_transform
from .losses import (
    FEATURE_COLLAPSE,
    IdProblem,
    LossBundle,
    box_deltas,
    build_id_problem,
    cross_entropy,
    expand_similarity,
    id_loss_total,
    id_losses,
    select_top_m,
    smooth_l1,
    ss_kernel,
    ss_loss,
)
from .scene import Candidate, Scene

logger = logging.getLogger(__name__)

MAX_PLACEMENT_RETRIES = 200
MIN_SCORE = 1e-12
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class SceneSpec(BaseModel):
    """Parâmetros de uma cena sintética."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_objects: int = Field(2, ge=1)
    n_classes: int = Field(5, ge=1)
    overlap_level: float = Field(0.4, ge=0.0, le=1.0)
    candidates_per_object: int = Field(6, ge=1)
    jitter_scale: float = Field(0.05, ge=0.0)
    image_extent: float = Field(200.0, gt=0.0)
    feature_dim: int = Field(16, ge=1)
    true_logit: float = Field(1.5, ge=0.0)
    confusion_logit: float = Field(1.0, ge=0.0)
    crowd_same_class: float = Field(0.5, ge=0.0, le=1.0)
    clutter_count: int = Field(2, ge=0)
    clutter_logit: float = Field(3.0, ge=0.0)
    rng_seed: int = Field(0, ge=0)

    def with_seed(self, seed: int) -> "SceneSpec":
        return self.model_copy(update={"rng_seed": seed})


def _random_box(rng: np.random.Generator, spec: SceneSpec, extra_width: float = 0.0) -> BoundingBox:
    extent = spec.image_extent
    w, h = rng.uniform(0.15 * extent, 0.3 * extent, size=2)
    x0 = rng.uniform(0.0, max(extent - w - extra_width, 0.0))
    y0 = rng.uniform(0.0, max(extent - h, 0.0))
    return BoundingBox(x0, y0, x0 + w, y0 + h)


def _crowd_partner(rng: np.random.Generator, anchor: BoundingBox, overlap_level: float) -> BoundingBox:
    """Caixa de mesmo tamanho deslocada na horizontal com IoU alvo acima de ``overlap_level``."""

    target = overlap_level + (1.0 - overlap_level) * rng.uniform(0.2, 0.6)
    shift = anchor.width * (1.0 - target) / (1.0 + target)
    return BoundingBox(anchor.x_min + shift, anchor.y_min, anchor.x_max + shift, anchor.y_max)


def _place_groups(rng: np.random.Generator, spec: SceneSpec) -> list[list[BoundingBox]]:
    """Posiciona grupos (pares em aglomeração ou objetos isolados) disjuntos entre si."""

    paired = spec.overlap_level > 0.0
    groups: list[list[BoundingBox]] = []
    placed = 0
    while placed < spec.n_objects:
        pair = paired and spec.n_objects - placed >= 2
        for _ in range(MAX_PLACEMENT_RETRIES):
            anchor = _random_box(rng, spec, extra_width=0.3 * spec.image_extent if pair else 0.0)
            group = [anchor, _crowd_partner(rng, anchor, spec.overlap_level)] if pair else [anchor]
            if pair and iou(group[0], group[1]) < spec.overlap_level:
                continue
            if all(iou(new, old) == 0.0 for new in group for other in groups for old in other):
                groups.append(group)
                placed += len(group)
                break
        else:
            raise SceneGenerationError(
                f"Não foi possível posicionar {spec.n_objects} objetos em {spec.image_extent}px "
                f"após {MAX_PLACEMENT_RETRIES} tentativas"
            )
    return groups


def _place_clutter(rng: np.random.Generator, spec: SceneSpec, occupied: Sequence[BoundingBox]) -> list[BoundingBox]:
    """Caixas de fundo sem interseção com nenhum objeto anotado."""

    clutter: list[BoundingBox] = []
    for _ in range(spec.clutter_count):
        for _ in range(MAX_PLACEMENT_RETRIES):
            box = _random_box(rng, spec)
            if all(iou(box, old) == 0.0 for old in occupied):
                clutter.append(box)
                break
        else:
            raise SceneGenerationError(
                f"Não foi possível posicionar {spec.clutter_count} caixas de fundo "
                f"após {MAX_PLACEMENT_RETRIES} tentativas"
            )
    return clutter


def _jitter(rng: np.random.Generator, box: BoundingBox, scale: float) -> BoundingBox:
    noise = rng.normal(0.0, scale, size=4) * np.array([box.width, box.height, box.width, box.height])
    x0, y0, x1, y1 = np.array(box.as_list()) + noise
    return BoundingBox(x0, y0, max(x1, x0 + 1.0), max(y1, y0 + 1.0))


def _random_feature(rng: np.random.Generator, spec: SceneSpec) -> np.ndarray:
    return normalize_rows(rng.normal(0.0, 1.0, size=(1, spec.feature_dim)))[0]


def generate_scene(spec: SceneSpec) -> Scene:
    """Gera uma cena determinística a partir de ``spec.rng_seed``.

    Cada objeto gera ``candidates_per_object`` caixas perturbadas; as features
    iniciais são gaussianas independentes e os escores vêm de logits com
    bônus na classe correta e em uma classe confundível. O parceiro de um par
    em aglomeração repete a classe do outro objeto com probabilidade
    ``crowd_same_class``. Caixas de fundo (``instance_id`` nulo) não tocam
    nenhum objeto e têm um pico de escore em uma classe qualquer.
    """

    rng = np.random.default_rng(spec.rng_seed)
    groups = _place_groups(rng, spec)
    boxes = [box for group in groups for box in group]
    classes = rng.integers(0, spec.n_classes, size=spec.n_objects)
    start = 0
    for group in groups:
        if len(group) == 2 and rng.uniform() < spec.crowd_same_class:
            classes[start + 1] = classes[start]
        start += len(group)
    gts = [GroundTruthObject(box, int(cls), idx) for idx, (box, cls) in enumerate(zip(boxes, classes))]

    candidates: list[Candidate] = []
    for gt in gts:
        for _ in range(spec.candidates_per_object):
            logits = rng.normal(0.0, 1.0, size=spec.n_classes)
            logits[gt.class_id] += spec.true_logit
            if spec.n_classes > 1:
                distractor = (gt.class_id + 1 + rng.integers(0, spec.n_classes - 1)) % spec.n_classes
                logits[distractor] += spec.confusion_logit
            candidates.append(
                Candidate(
                    box=_jitter(rng, gt.box, spec.jitter_scale),
                    scores=softmax(logits),
                    feature=_random_feature(rng, spec),
                    instance_id=gt.instance_id,
                )
            )
    for box in _place_clutter(rng, spec, boxes):
        logits = rng.normal(0.0, 1.0, size=spec.n_classes)
        logits[rng.integers(0, spec.n_classes)] += spec.clutter_logit
        candidates.append(Candidate(box=box, scores=softmax(logits), feature=_random_feature(rng, spec)))
    scene = Scene(image_id=f"synth-{spec.rng_seed:05d}", candidates=candidates, ground_truth=gts)
    logger.debug("Cena %s gerada com %d candidatos", scene.image_id, len(candidates))
    return scene


def generate_scenes(spec: SceneSpec, count: int) -> list[Scene]:
    return [generate_scene(spec.with_seed(spec.rng_seed + k)) for k in range(count)]


@dataclass(slots=True)
class Moments:
    """Primeiro e segundo momentos do Adam para um parâmetro de cada cena."""

    first: list[np.ndarray]
    second: list[np.ndarray]
    steps: list[int]

    @classmethod
    def zeros(cls, params: Sequence[np.ndarray]) -> "Moments":
        return cls(
            first=[np.zeros_like(p) for p in params],
            second=[np.zeros_like(p) for p in params],
            steps=[0] * len(params),
        )

    def direction(self, index: int, grad: np.ndarray) -> np.ndarray:
        """Atualiza os momentos da cena ``index`` e devolve o passo corrigido pelo viés."""

        beta1, beta2 = ADAM_BETAS
        self.steps[index] += 1
        t = self.steps[index]
        self.first[index] = beta1 * self.first[index] + (1.0 - beta1) * grad
        self.second[index] = beta2 * self.second[index] + (1.0 - beta2) * grad**2
        m_hat = self.first[index] / (1.0 - beta1**t)
        v_hat = self.second[index] / (1.0 - beta2**t)
        return m_hat / (np.sqrt(v_hat) + ADAM_EPS)

    def to_payload(self) -> dict[str, object]:
        return {
            "first": [m.tolist() for m in self.first],
            "second": [v.tolist() for v in self.second],
            "steps": list(self.steps),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Moments":
        return cls(
            first=[np.asarray(m, dtype=float) for m in payload["first"]],
            second=[np.asarray(v, dtype=float) for v in payload["second"]],
            steps=[int(t) for t in payload["steps"]],
        )


@dataclass(slots=True)
class TrainState:
    """Parâmetros livres do treino de brinquedo, momentos do otimizador e histórico de perdas."""

    features: list[np.ndarray]
    score_logits: list[np.ndarray]
    step: int = 0
    loss_history: list[LossBundle] = field(default_factory=list)
    score_moments: Optional[Moments] = None
    feature_moments: Optional[Moments] = None

    @classmethod
    def initial(cls, scenes: Sequence[Scene]) -> "TrainState":
        """Features normalizadas e ``logits = log(escores)`` de cada cena."""

        features = [normalize_rows(scene.feature_matrix()) for scene in scenes]
        logits = [np.log(np.clip(scene.score_matrix(), MIN_SCORE, None)) for scene in scenes]
        return cls(features=features, score_logits=logits)

    def scores(self, index: int) -> np.ndarray:
        return softmax(self.score_logits[index], axis=1)

    def to_json(self) -> str:
        payload: dict[str, object] = {
            "step": self.step,
            "features": [f.tolist() for f in self.features],
            "score_logits": [z.tolist() for z in self.score_logits],
            "loss_history": [
                {**bundle.as_row(), "id_ic_per_class": {str(k): v for k, v in bundle.id_ic_per_class.items()}}
                for bundle in self.loss_history
            ],
        }
        if self.score_moments is not None:
            payload["score_moments"] = self.score_moments.to_payload()
        if self.feature_moments is not None:
            payload["feature_moments"] = self.feature_moments.to_payload()
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainState":
        payload = json.loads(text)
        history = [
            LossBundle(
                ss=row["ss"],
                id_all=row["id_all"],
                id_ic_per_class={int(k): v for k, v in row.get("id_ic_per_class", {}).items()},
                id_total=row["id_total"],
                smooth_l1=row["smooth_l1"],
                cross_entropy=row["ce"],
            )
            for row in payload["loss_history"]
        ]
        score_moments = payload.get("score_moments")
        feature_moments = payload.get("feature_moments")
        return cls(
            features=[np.asarray(f, dtype=float) for f in payload["features"]],
            score_logits=[np.asarray(z, dtype=float) for z in payload["score_logits"]],
            step=int(payload["step"]),
            loss_history=history,
            score_moments=Moments.from_payload(score_moments) if score_moments else None,
            feature_moments=Moments.from_payload(feature_moments) if feature_moments else None,
        )


@dataclass(slots=True)
class _SceneData:
    """Quantidades fixas de uma cena durante o treino.

    Cenas sem rótulo não usam as anotações: nenhum candidato tem classe alvo
    e o problema ID fica vazio, de modo que só 𝓛_SS atua sobre elas.
    """

    scene: Scene
    overlaps: np.ndarray
    labels: np.ndarray
    targets: np.ndarray
    labeled: bool = True
    problems: dict[tuple[int, ...], IdProblem] = field(default_factory=dict)

    @classmethod
    def build(cls, scene: Scene, labeled: bool = True) -> "_SceneData":
        gts = scene.ground_truth if labeled else []
        cross = iou_cross(scene.boxes, [g.box for g in gts])
        assigned = []
        for i, candidate in enumerate(scene.candidates):
            by_instance = [j for j, g in enumerate(gts) if g.instance_id == candidate.instance_id]
            if candidate.instance_id is not None and by_instance:
                assigned.append(by_instance[0])
            else:
                assigned.append(int(np.argmax(cross[i])) if gts and cross[i].max() > 0.0 else -1)
        labels = np.array([gts[j].class_id if j >= 0 else -1 for j in assigned], dtype=int)
        boxes = np.array([c.box.as_list() for c in scene.candidates]).reshape(-1, 4)
        gt_boxes = np.array([gts[j].box.as_list() if j >= 0 else c.box.as_list() for j, c in zip(assigned, scene.candidates)])
        targets = box_deltas(boxes, gt_boxes.reshape(-1, 4)) if len(boxes) else np.zeros((0, 4))
        return cls(scene=scene, overlaps=iou_matrix(scene.boxes), labels=labels, targets=targets, labeled=labeled)

    def problem(self, scores: np.ndarray, features: np.ndarray, intersect_iou: float) -> IdProblem:
        """Problema ID para os rótulos top-1 atuais (em cache por rótulos)."""

        if not self.labeled:
            return IdProblem()
        key = tuple(int(k) for k in np.argmax(scores, axis=1))
        if key not in self.problems:
            candidates = [
                Candidate(box=c.box, scores=s, feature=f)
                for c, s, f in zip(self.scene.candidates, scores, features)
            ]
            self.problems[key] = build_id_problem(candidates, self.scene.ground_truth, intersect_iou)
        return self.problems[key]


def _clip_rows(grad: np.ndarray, max_norm: float) -> np.ndarray:
    """Limita a norma de cada linha (um candidato) a ``max_norm``."""

    norms = np.linalg.norm(grad, axis=1, keepdims=True)
    return grad * np.minimum(1.0, max_norm / np.maximum(norms, MIN_SCORE))


def _step(grad: np.ndarray, index: int, lr: float, moments: Optional[Moments], config: Config) -> np.ndarray:
    clipped = _clip_rows(grad, config.max_grad_norm)
    if moments is None:
        return lr * clipped
    return lr * moments.direction(index, clipped)


def _similarity(data: _SceneData, features: np.ndarray, config: Config) -> np.ndarray:
    return build_similarity(
        FeatureMatrix(features), data.overlaps, config.lam, repair=config.psd_repair, epsilon=config.psd_epsilon
    ).S


def _scene_losses(data: _SceneData, features: np.ndarray, logits: np.ndarray, config: Config) -> LossBundle:
    scores = softmax(logits, axis=1)
    if not len(scores):
        return LossBundle()
    selection = select_top_m(scores, min(config.m, scores.shape[1]))
    ss = ss_loss(ss_kernel(_similarity(data, features, config), scores, selection, config.beta), selection.positive)

    q = quality_transform(scores.max(axis=1), config.beta)
    problem = data.problem(scores, features, config.id_intersect_iou)
    id_all, per_class = id_losses(problem, features, data.overlaps, q, config.lam)

    foreground = data.labels >= 0
    ce = sum(cross_entropy(z, int(label)) for z, label in zip(logits[foreground], data.labels[foreground]))
    regression = sum(smooth_l1(np.zeros(4), t) for t in data.targets[foreground])
    id_total = id_loss_total(id_all, per_class)
    flags = (FEATURE_COLLAPSE,) if math.isinf(id_total) else ()
    return LossBundle(
        ss=ss,
        id_all=id_all,
        id_ic_per_class=per_class,
        id_total=id_total,
        smooth_l1=float(regression),
        cross_entropy=float(ce),
        flags=flags,
    )


def _mean_bundle(bundles: Sequence[LossBundle]) -> LossBundle:
    if not bundles:
        return LossBundle()
    classes = sorted({k for b in bundles for k in b.id_ic_per_class})
    per_class = {
        k: float(np.mean([b.id_ic_per_class[k] for b in bundles if k in b.id_ic_per_class])) for k in classes
    }
    return LossBundle(
        ss=float(np.mean([b.ss for b in bundles])),
        id_all=float(np.mean([b.id_all for b in bundles])),
        id_ic_per_class=per_class,
        id_total=float(np.mean([b.id_total for b in bundles])),
        smooth_l1=float(np.mean([b.smooth_l1 for b in bundles])),
        cross_entropy=float(np.mean([b.cross_entropy for b in bundles])),
        flags=tuple(sorted({f for b in bundles for f in b.flags})),
    )


def _score_gradient(data: _SceneData, features: np.ndarray, logits: np.ndarray, lambda_ss: float, config: Config) -> np.ndarray:
    """Gradiente de ``λ_ss·𝓛_SS + 𝓛_CE`` em relação aos logits, com ``S`` fixa."""

    scores = softmax(logits, axis=1)
    grad_p = np.zeros_like(scores)
    if lambda_ss > 0.0:
        selection = select_top_m(scores, min(config.m, scores.shape[1]))
        S = _similarity(data, features, config)
        kernel = ss_kernel(S, scores, selection, config.beta)
        d_q = grad_ss_wrt_q(expand_similarity(S, selection), kernel.q, selection.positive)
        np.add.at(grad_p, (selection.rois, selection.classes), lambda_ss * d_q * config.beta * kernel.q)
    grad = scores * (grad_p - np.sum(grad_p * scores, axis=1, keepdims=True))

    foreground = data.labels >= 0
    onehot = np.zeros_like(scores)
    onehot[np.flatnonzero(foreground), data.labels[foreground]] = 1.0
    grad[foreground] += scores[foreground] - onehot[foreground]
    return grad


def evaluate_losses(scenes: Sequence[Scene], state: TrainState, config: Config) -> LossBundle:
    """Perdas médias nas cenas para os parâmetros atuais de ``state``."""

    data = [_SceneData.build(scene) for scene in scenes]
    return _mean_bundle([_scene_losses(d, f, z, config) for d, f, z in zip(data, state.features, state.score_logits)])


def train_toy(
    scenes: Sequence[Scene],
    config: Config,
    state: Optional[TrainState] = None,
    *,
    train_features: bool = True,
    unlabeled: Collection[int] = (),
    until: Optional[int] = None,
) -> TrainState:
    """Treino em duas fases sobre as mesmas cenas.

    As primeiras ``config.score_iterations`` iterações atualizam só os logits
    de escore com ``λ_ss·𝓛_SS + 𝓛_CE`` e ``S`` fixa; ``λ_ss`` fica em zero até
    ``ss_switch_fraction`` dessa fase. As iterações seguintes atualizam só as
    features com 𝓛_ID, com as qualidades congeladas no fim da primeira fase,
    e renormalizam as linhas de ``V`` após cada passo.

    As cenas cujos índices estão em ``unlabeled`` nunca consultam as anotações.
    ``until`` interrompe o plano de ``config.iterations`` antes do fim, para
    retomada posterior a partir do estado devolvido.
    """

    state = state or TrainState.initial(scenes)
    if config.optimizer == "adam":
        if state.score_moments is None:
            state.score_moments = Moments.zeros(state.score_logits)
        if state.feature_moments is None:
            state.feature_moments = Moments.zeros(state.features)
    data = [_SceneData.build(scene, labeled=k not in unlabeled) for k, scene in enumerate(scenes)]
    total = config.iterations
    switch = config.score_iterations
    stop = total if until is None else min(until, total)

    for iteration in range(state.step, stop):
        lambda_ss = config.ss_weight(iteration)
        bundles = [_scene_losses(d, f, z, config) for d, f, z in zip(data, state.features, state.score_logits)]
        bundle = _mean_bundle(bundles)
        if not all(math.isfinite(v) for v in bundle.as_row().values()):
            raise NumericalDomainError(
                f"Perda não finita na iteração {iteration} (sinais: {', '.join(bundle.flags) or 'nenhum'})"
            )
        if iteration == switch:
            logger.info("Iteração %d/%d: início da fase de features com qualidades fixas", iteration + 1, total)

        for k, d in enumerate(data):
            if not len(d.scene.candidates):
                continue
            if iteration < switch:
                grad_z = _score_gradient(d, state.features[k], state.score_logits[k], lambda_ss, config)
                step = _step(grad_z, k, config.lr_scores, state.score_moments, config)
                state.score_logits[k] = state.score_logits[k] - step
            elif train_features and d.labeled and config.lr_features > 0.0:
                scores = state.scores(k)
                q = quality_transform(scores.max(axis=1), config.beta)
                problem = d.problem(scores, state.features[k], config.id_intersect_iou)
                grad_v = grad_id_wrt_V(state.features[k], d.overlaps, q, config.lam, problem)
                step = _step(grad_v, k, config.lr_features, state.feature_moments, config)
                state.features[k] = normalize_rows(state.features[k] - step)

        state.loss_history.append(bundle)
        state.step = iteration + 1
        if iteration % 50 == 0 or iteration == total - 1:
            logger.info(
                "Iteração %d/%d: SS=%.4f ID=%.4f CE=%.4f (λ_ss=%.3f)",
                iteration + 1, total, bundle.ss, bundle.id_total, bundle.cross_entropy, lambda_ss,
            )
    return state


def apply_state(scenes: Sequence[Scene], state: TrainState) -> list[Scene]:
    """Cenas com os escores e features treinados."""

    result = []
    for k, scene in enumerate(scenes):
        scores = state.scores(k)
        candidates = [
            Candidate(box=c.box, scores=s, feature=f, instance_id=c.instance_id)
            for c, s, f in zip(scene.candidates, scores, state.features[k])
        ]
        result.append(Scene(scene.image_id, candidates, scene.ground_truth))
    return result


def instance_margin(features: np.ndarray, instance_ids: Sequence[Optional[int]]) -> float:
    """Cosseno médio entre candidatos da mesma instância menos o cosseno médio entre instâncias.

    Candidatos de fundo (``instance_id`` nulo) ficam fora das duas médias.
    """

    keep = np.array([i is not None for i in instance_ids], dtype=bool)
    if not keep.any():
        return 0.0
    V = normalize_rows(np.asarray(features, dtype=float)[keep])
    ids = np.asarray([i for i in instance_ids if i is not None])
    cosine = V @ V.T
    upper = np.triu(np.ones_like(cosine, dtype=bool), k=1)
    same = (ids[:, None] == ids[None, :]) & upper
    different = (ids[:, None] != ids[None, :]) & upper
    if not same.any() or not different.any():
        return 0.0
    return float(cosine[same].mean() - cosine[different].mean())


__all__ = [
    "Moments",
    "SceneSpec",
    "TrainState",
    "apply_state",
    "evaluate_losses",
    "generate_scene",
    "generate_scenes",
    "instance_margin",
    "train_toy",
]
