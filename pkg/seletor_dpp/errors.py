"""Hierarquia de exceções do pacote."""

from __future__ import annotations


class SeletorError(Exception):
    """Base de todos os erros levantados pelo pacote."""


class InvalidInputError(SeletorError, ValueError):
    """Entrada inválida: caixas degeneradas, qualidades não positivas, dimensões incompatíveis."""


class CombinatorialLimitError(InvalidInputError):
    """Recusa de enumeração exaustiva acima do limite configurado."""


class SceneGenerationError(InvalidInputError):
    """Especificação de cena inviável após o número máximo de tentativas."""


class NumericalDomainError(SeletorError, ArithmeticError):
    """Matriz indefinida, jitter esgotado ou perda não finita."""


class ConfigError(SeletorError, ValueError):
    """Configuração fora das faixas documentadas."""


__all__ = [
    "CombinatorialLimitError",
    "ConfigError",
    "InvalidInputError",
    "NumericalDomainError",
    "SceneGenerationError",
    "SeletorError",
]
