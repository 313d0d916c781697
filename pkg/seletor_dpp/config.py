"""Configurações da aplicação."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, List, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError

logger = logging.getLogger(__name__)

PsdRepairType = Literal["none", "jitter", "eigenclip"]
QualityMode = Literal["exp", "raw"]
MethodType = Literal["idpp", "exact", "nms"]
OptimizerType = Literal["sgd", "adam"]

DEFAULT_RECALL_THRESHOLDS = [0.0, 0.1, 0.2, 0.3, 0.4]


class Config(BaseModel):
    """Configuração principal: parâmetros do kernel, da inferência e do treino sintético."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid", frozen=True)

    lam: float = Field(0.6, alias="lambda", ge=0.0, le=1.0)
    lambda_ss: float = Field(0.01, ge=0.0)
    ss_switch_fraction: float = Field(0.6, ge=0.0, le=1.0)
    m: int = Field(5, ge=1)
    beta: float = Field(2.0, ge=0.0)
    nms_tau: float = Field(0.5, ge=0.0, le=1.0)
    crowd_tau: float = Field(0.3, ge=0.0, le=1.0)
    psd_epsilon: float = Field(1e-8, gt=0.0, lt=1e-2)
    fd_step: float = Field(1e-6, gt=0.0, lt=1e-1)
    rng_seed: int = Field(0, ge=0)

    psd_repair: PsdRepairType = "eigenclip"
    quality_mode: QualityMode = "exp"
    exact_n_max: int = Field(15, ge=1, le=25)
    min_score: float = Field(0.0, ge=0.0, le=1.0)
    match_iou: float = Field(0.5, gt=0.0, lt=1.0)
    correct_box_thresh: float = Field(0.01, ge=0.0, le=1.0)
    id_intersect_iou: float = Field(0.0, ge=0.0, lt=1.0)
    recall_thresholds: List[float] = Field(default_factory=lambda: list(DEFAULT_RECALL_THRESHOLDS))

    iterations: int = Field(500, ge=0)
    score_phase_fraction: float = Field(0.5, ge=0.0, le=1.0)
    optimizer: OptimizerType = "sgd"
    lr_scores: float = Field(0.5, ge=0.0)
    lr_features: float = Field(0.05, ge=0.0)
    max_grad_norm: float = Field(1.0, gt=0.0)
    gradcheck_tol: float = Field(1e-5, gt=0.0)
    workers: int = Field(4, ge=1)

    @field_validator("recall_thresholds")
    @classmethod
    def _thresholds_ascending(cls, value: List[float]) -> List[float]:
        if any(t < 0.0 or t > 1.0 for t in value):
            raise ValueError("limiares devem estar em [0, 1]")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("limiares devem ser estritamente crescentes")
        return value

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides: Any) -> "Config":
        """Cria a configuração a partir de um arquivo JSON opcional e sobrescritas.

        Valores ``None`` em ``overrides`` são ignorados, de modo que apenas as
        opções realmente informadas na linha de comando substituem o arquivo.
        """

        payload: dict[str, Any] = {}
        if path:
            config_path = Path(path).resolve()
            logger.info("Carregando configuração de %s", config_path)
            try:
                payload.update(json.loads(config_path.read_text(encoding="utf-8")))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"JSON inválido em {config_path}: {exc}") from exc
        for key, value in overrides.items():
            if value is None:
                continue
            field_info = cls.model_fields.get(key)
            # o arquivo usa o alias ("lambda"); a sobrescrita precisa da mesma chave
            payload[field_info.alias or key if field_info else key] = value
        return cls.validated(payload)

    @classmethod
    def validated(cls, payload: dict[str, Any]) -> "Config":
        try:
            return cls.model_validate(payload)
        except ValidationError as exc:
            first = exc.errors()[0]
            field = ".".join(str(part) for part in first["loc"]) or "<raiz>"
            raise ConfigError(f"Campo de configuração inválido '{field}': {first['msg']}") from exc

    def to_json(self) -> str:
        """Serializa a configuração em JSON (chave ``lambda`` para λ)."""

        return json.dumps(self.model_dump(by_alias=True), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Config":
        return cls.validated(json.loads(text))

    def lambda_ss_at(self, iteration: int, total: int) -> float:
        """Agenda de λ_ss: zero até a fração de troca, depois ``lambda_ss``."""

        if total <= 0 or iteration < int(self.ss_switch_fraction * total):
            return 0.0
        return self.lambda_ss

    @property
    def score_iterations(self) -> int:
        """Iterações da primeira fase do treino (logits de escore)."""

        return int(round(self.score_phase_fraction * self.iterations))

    def ss_weight(self, iteration: int) -> float:
        """Peso de 𝓛_SS na iteração: agenda sobre a fase de escores e zero na fase de features."""

        if iteration >= self.score_iterations:
            return 0.0
        return self.lambda_ss_at(iteration, self.score_iterations)


__all__ = ["Config", "MethodType", "OptimizerType", "PsdRepairType", "QualityMode", "DEFAULT_RECALL_THRESHOLDS"]
