"""Leitura e escrita dos arquivos JSON de cenas, seleções, detecções e anotações."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Annotated, Any, Callable, Literal, Optional, Sequence, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import InvalidInputError
from .geometry import BoundingBox, GroundTruthObject
from .inference import SelectionResult
from .scene import Candidate, Detection, Scene

logger = logging.getLogger(__name__)

GroundTruthFormat = Literal["native", "coco"]
BoxList = Annotated[list[float], Field(min_length=4, max_length=4)]

T = TypeVar("T")


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class CandidateModel(_Model):
    box: BoxList
    scores: list[float] = Field(min_length=1)
    feature: list[float] = Field(min_length=1)
    instance_id: Optional[int] = None


class GroundTruthModel(_Model):
    box: BoxList
    class_id: int = Field(ge=0)
    instance_id: int


class SceneFile(_Model):
    image_id: str
    candidates: list[CandidateModel] = Field(default_factory=list)
    ground_truth: list[GroundTruthModel] = Field(default_factory=list)


class SelectionFile(_Model):
    method: Literal["idpp", "exact", "nms"]
    selected: list[int] = Field(default_factory=list)
    final_cost: float = 0.0
    step_costs: list[float] = Field(default_factory=list)


class DetectionModel(_Model):
    image_id: str
    box: BoxList
    class_id: int = Field(ge=0)
    score: float = Field(ge=0.0, le=1.0)


class DetectionFile(_Model):
    detections: list[DetectionModel] = Field(default_factory=list)


class ImageAnnotations(_Model):
    image_id: str
    objects: list[GroundTruthModel] = Field(default_factory=list)


class GroundTruthFile(_Model):
    images: list[ImageAnnotations] = Field(default_factory=list)


class CocoImage(BaseModel):
    id: int | str


class CocoAnnotation(BaseModel):
    id: int
    image_id: int | str
    bbox: BoxList
    category_id: int = Field(ge=0)


class CocoFile(BaseModel):
    images: list[CocoImage] = Field(default_factory=list)
    annotations: list[CocoAnnotation] = Field(default_factory=list)


M = TypeVar("M", bound=BaseModel)


def _validate(model: type[M], payload: Any, source: str) -> M:
    try:
        return model.model_validate(payload)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "<raiz>"
        raise InvalidInputError(f"{source}: campo inválido '{field}': {first['msg']}") from exc


def _build(field: str, factory: Callable[[], T]) -> T:
    """Constrói um objeto de domínio anexando o caminho do campo ao erro."""

    try:
        return factory()
    except InvalidInputError as exc:
        raise InvalidInputError(f"campo inválido '{field}': {exc}") from exc


def read_json(path: str | Path) -> Any:
    file_path = Path(path)
    logger.info("Lendo %s", file_path)
    try:
        return json.loads(file_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{file_path}: JSON inválido ({exc})") from exc


def write_text(path: str | Path, text: str) -> Path:
    output = Path(path).resolve()
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(text + "\n", encoding="utf-8")
    logger.info("Arquivo salvo em %s", output)
    return output


def _dumps(payload: Any) -> str:
    return json.dumps(payload, indent=2, ensure_ascii=False)


def scene_from_dict(payload: Any, source: str = "cena") -> Scene:
    model = _validate(SceneFile, payload, source)
    candidates = [
        _build(
            f"candidates.{i}",
            lambda c=c: Candidate(BoundingBox.from_sequence(c.box), c.scores, c.feature, c.instance_id),
        )
        for i, c in enumerate(model.candidates)
    ]
    gts = [
        _build(
            f"ground_truth.{j}",
            lambda g=g: GroundTruthObject(BoundingBox.from_sequence(g.box), g.class_id, g.instance_id),
        )
        for j, g in enumerate(model.ground_truth)
    ]
    return _build("candidates", lambda: Scene(model.image_id, candidates, gts))


def scene_to_dict(scene: Scene) -> dict[str, Any]:
    candidates = []
    for candidate in scene.candidates:
        entry: dict[str, Any] = {
            "box": candidate.box.as_list(),
            "scores": candidate.scores.tolist(),
            "feature": candidate.feature.tolist(),
        }
        if candidate.instance_id is not None:
            entry["instance_id"] = candidate.instance_id
        candidates.append(entry)
    return {
        "image_id": scene.image_id,
        "candidates": candidates,
        "ground_truth": [
            {"box": g.box.as_list(), "class_id": g.class_id, "instance_id": g.instance_id}
            for g in scene.ground_truth
        ],
    }


def dump_scene(scene: Scene) -> str:
    return _dumps(scene_to_dict(scene))


def load_scene(path: str | Path) -> Scene:
    return scene_from_dict(read_json(path), str(path))


def dump_selection(result: SelectionResult) -> str:
    return _dumps(
        {
            "method": result.method,
            "selected": list(result.selected),
            "final_cost": result.final_cost,
            "step_costs": list(result.step_costs),
        }
    )


def load_selection(text: str) -> SelectionResult:
    model = _validate(SelectionFile, json.loads(text), "seleção")
    return SelectionResult(
        method=model.method,
        selected=tuple(model.selected),
        final_cost=model.final_cost,
        step_costs=tuple(model.step_costs),
    )


def dump_detections(dets: Sequence[Detection]) -> str:
    return _dumps(
        {
            "detections": [
                {"image_id": d.image_id, "box": d.box.as_list(), "class_id": d.class_id, "score": d.score}
                for d in dets
            ]
        }
    )


def load_detections(path: str | Path) -> list[Detection]:
    model = _validate(DetectionFile, read_json(path), str(path))
    return [
        _build(f"detections.{k}", lambda d=d: Detection(d.image_id, BoundingBox.from_sequence(d.box), d.class_id, d.score))
        for k, d in enumerate(model.detections)
    ]


def dump_ground_truth(gts: dict[str, Sequence[GroundTruthObject]]) -> str:
    return _dumps(
        {
            "images": [
                {
                    "image_id": image_id,
                    "objects": [
                        {"box": g.box.as_list(), "class_id": g.class_id, "instance_id": g.instance_id}
                        for g in gts[image_id]
                    ],
                }
                for image_id in sorted(gts)
            ]
        }
    )


def _coco_ground_truth(payload: Any, source: str) -> dict[str, list[GroundTruthObject]]:
    model = _validate(CocoFile, payload, source)
    result: dict[str, list[GroundTruthObject]] = {str(image.id): [] for image in model.images}
    for k, ann in enumerate(model.annotations):
        gt = _build(
            f"annotations.{k}",
            lambda ann=ann: GroundTruthObject(BoundingBox.from_xywh(*ann.bbox), ann.category_id, ann.id),
        )
        result.setdefault(str(ann.image_id), []).append(gt)
    return result


def load_ground_truth(path: str | Path, fmt: GroundTruthFormat = "native") -> dict[str, list[GroundTruthObject]]:
    """Anotações por imagem; ``fmt="coco"`` aceita ``bbox`` no formato ``[x, y, w, h]``."""

    payload = read_json(path)
    if fmt == "coco":
        return _coco_ground_truth(payload, str(path))
    model = _validate(GroundTruthFile, payload, str(path))
    result: dict[str, list[GroundTruthObject]] = {}
    for i, image in enumerate(model.images):
        result[image.image_id] = [
            _build(
                f"images.{i}.objects.{j}",
                lambda g=g: GroundTruthObject(BoundingBox.from_sequence(g.box), g.class_id, g.instance_id),
            )
            for j, g in enumerate(image.objects)
        ]
    return result


__all__ = [
    "GroundTruthFormat",
    "SceneFile",
    "dump_detections",
    "dump_ground_truth",
    "dump_scene",
    "dump_selection",
    "load_detections",
    "load_ground_truth",
    "load_scene",
    "load_selection",
    "read_json",
    "scene_from_dict",
    "scene_to_dict",
    "write_text",
]
