"""Registros de cena: candidatos, detecções e cenas anotadas."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import BoundingBox, GroundTruthObject, check_unique_instances

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class Candidate:
    """Caixa candidata com escores por classe e vetor de features.

    ``instance_id`` é o rótulo oculto das cenas sintéticas, usado apenas
    na avaliação.
    """

    box: BoundingBox
    scores: np.ndarray
    feature: np.ndarray
    instance_id: Optional[int] = None

    def __post_init__(self) -> None:
        scores = np.array(self.scores, dtype=float).reshape(-1)
        feature = np.array(self.feature, dtype=float).reshape(-1)
        if scores.size == 0:
            raise InvalidInputError("Candidato sem escores")
        if np.any(scores < 0.0) or np.any(scores > 1.0) or not np.all(np.isfinite(scores)):
            raise InvalidInputError(f"Escores fora de [0, 1]: {scores.tolist()}")
        if not np.all(np.isfinite(feature)):
            raise InvalidInputError("Feature com valores não finitos")
        scores.setflags(write=False)
        feature.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "feature", feature)

    @property
    def label(self) -> int:
        """Categoria top-1 (empates resolvidos pelo menor ``class_id``)."""

        return int(np.argmax(self.scores))

    @property
    def score(self) -> float:
        return float(self.scores[self.label])


@dataclass(frozen=True, slots=True)
class Detection:
    """Caixa pontuada de uma categoria em uma imagem."""

    image_id: str
    box: BoundingBox
    class_id: int
    score: float


@dataclass(frozen=True, slots=True)
class Scene:
    """Imagem com candidatos e anotações."""

    image_id: str
    candidates: tuple[Candidate, ...] = field(default_factory=tuple)
    ground_truth: tuple[GroundTruthObject, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "ground_truth", tuple(self.ground_truth))
        if self.candidates:
            n_classes = {c.scores.size for c in self.candidates}
            dims = {c.feature.size for c in self.candidates}
            if len(n_classes) != 1:
                raise InvalidInputError(f"Número de categorias não uniforme: {sorted(n_classes)}")
            if len(dims) != 1:
                raise InvalidInputError(f"Dimensão de feature não uniforme: {sorted(dims)}")
        check_unique_instances(self.ground_truth, self.n_classes or None)

    @property
    def n_classes(self) -> int:
        return self.candidates[0].scores.size if self.candidates else 0

    @property
    def boxes(self) -> list[BoundingBox]:
        return [candidate.box for candidate in self.candidates]

    def score_matrix(self) -> np.ndarray:
        if not self.candidates:
            return np.zeros((0, 0))
        return np.vstack([candidate.scores for candidate in self.candidates])

    def feature_matrix(self) -> np.ndarray:
        if not self.candidates:
            return np.zeros((0, 0))
        return np.vstack([candidate.feature for candidate in self.candidates])

    def detections(self, indices: Sequence[int] | None = None) -> list[Detection]:
        """Detecções top-1 dos candidatos indicados (todos por padrão)."""

        chosen = range(len(self.candidates)) if indices is None else indices
        return [
            Detection(self.image_id, self.candidates[i].box, self.candidates[i].label, self.candidates[i].score)
            for i in chosen
        ]

    def class_detections(self, min_score: float = 0.0) -> list[Detection]:
        """Uma detecção por (candidato, categoria) com escore acima de ``min_score``."""

        result: list[Detection] = []
        for candidate in self.candidates:
            for class_id, score in enumerate(candidate.scores):
                if score > min_score:
                    result.append(Detection(self.image_id, candidate.box, class_id, float(score)))
        return result


__all__ = ["Candidate", "Detection", "Scene"]
