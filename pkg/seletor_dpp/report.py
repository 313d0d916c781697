"""Geração de relatórios em CSV."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import pandas as pd

from .config import Config
from .losses import LossBundle

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["iteration", "ss", "id_all", "id_total", "ce", "smooth_l1", "lambda_ss"]


def loss_curve_frame(history: Sequence[LossBundle], config: Config) -> pd.DataFrame:
    """Uma linha por iteração com as perdas e o ``λ_ss`` em vigor."""

    rows = [
        {"iteration": k, **bundle.as_row(), "lambda_ss": config.ss_weight(k)}
        for k, bundle in enumerate(history)
    ]
    return pd.DataFrame(rows, columns=LOSS_COLUMNS)


def write_frame(frame: pd.DataFrame, output_path: str | Path) -> Path:
    output = Path(output_path).resolve()
    output.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output, index=False, float_format="%.10g")
    logger.info("Relatório salvo em %s", output)
    return output


def generate_loss_report(history: Sequence[LossBundle], config: Config, output_path: str | Path) -> Path:
    """Gera o CSV da curva de perdas do treino sintético."""

    return write_frame(loss_curve_frame(history, config), output_path)


__all__ = ["LOSS_COLUMNS", "generate_loss_report", "loss_curve_frame", "write_frame"]
