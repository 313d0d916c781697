"""Funções utilitárias do projeto."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)

SCENE_EXTENSIONS = {"json"}


def iter_files(paths: Sequence[Path], extensions: Iterable[str] = SCENE_EXTENSIONS) -> Iterator[Path]:
    """Itera sobre arquivos com extensões desejadas, descendo em pastas em ordem alfabética."""

    extensions_norm = {ext.lower().lstrip(".") for ext in extensions}
    for path in paths:
        if path.is_dir():
            yield from iter_files(sorted(path.iterdir()), extensions_norm)
        elif path.suffix.lower().lstrip(".") in extensions_norm:
            logger.debug("Arquivo elegível: %s", path)
            yield path
        else:
            logger.debug("Arquivo ignorado: %s", path)


def scene_filename(image_id: str, suffix: str = ".json") -> str:
    """Nome de arquivo seguro derivado do ``image_id``."""

    safe = "".join(char if char.isalnum() or char in "-_." else "_" for char in image_id)
    return f"{safe or 'cena'}{suffix}"


__all__ = ["SCENE_EXTENSIONS", "iter_files", "scene_filename"]
