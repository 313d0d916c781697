import math
from itertools import combinations

import numpy as np
import pytest

from seletor_dpp.checks import check_normalization, random_instance
from seletor_dpp.dpp import (
    FeatureMatrix,
    build_kernel,
    build_similarity,
    dpp_log_prob,
    log_det_psd,
)
from seletor_dpp.errors import InvalidInputError, NumericalDomainError


def _random_psd(seed: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(n, n))
    return B @ B.T + 0.1 * np.eye(n)


def test_feature_matrix_exige_linhas_normalizadas():
    with pytest.raises(InvalidInputError):
        FeatureMatrix(np.array([[2.0, 0.0]]))
    with pytest.raises(InvalidInputError):
        FeatureMatrix.from_raw(np.array([[0.0, 0.0]]))
    V = FeatureMatrix.from_raw(np.array([[3.0, 4.0]]))
    np.testing.assert_allclose(V.V, [[0.6, 0.8]])


def test_feature_matrix_nao_altera_o_array_do_chamador():
    raw = np.array([[1.0, 0.0], [0.0, 1.0]])
    FeatureMatrix(raw)
    raw[0, 0] = 1.0
    assert raw.flags.writeable


def test_similaridade_extremos_de_lambda():
    rng = np.random.default_rng(0)
    V, overlaps = random_instance(rng, 5, 3)
    features = FeatureMatrix(V)
    np.testing.assert_allclose(build_similarity(features, overlaps, 1.0).S, V @ V.T, atol=1e-12)
    np.testing.assert_array_equal(build_similarity(features, overlaps, 0.0).S, overlaps)


def test_similaridade_exemplo_escalar():
    V = FeatureMatrix(np.eye(2))
    S = build_similarity(V, np.array([[1.0, 0.5], [0.5, 1.0]]), 0.6)
    assert S.S[0, 1] == pytest.approx(0.2)
    np.testing.assert_array_equal(np.diag(S.S), [1.0, 1.0])
    assert S.psd_repair.kind == "none"


def test_similaridade_rejeita_dimensoes_e_lambda():
    V = FeatureMatrix(np.eye(2))
    with pytest.raises(InvalidInputError):
        build_similarity(V, np.eye(3), 0.6)
    with pytest.raises(InvalidInputError):
        build_similarity(V, np.eye(2), 1.5)


def test_reparo_psd_por_corte_de_autovalores():
    V = FeatureMatrix(np.eye(3))
    indefinite = np.array([[1.0, 0.9, 0.0], [0.9, 1.0, 0.9], [0.0, 0.9, 1.0]])
    repaired = build_similarity(V, indefinite, 0.0, repair="eigenclip", epsilon=1e-8)
    assert repaired.psd_repair.kind == "eigenclip"
    assert repaired.psd_repair.min_eigenvalue < 0.0
    assert np.linalg.eigvalsh(repaired.S).min() >= -1e-10
    np.testing.assert_allclose(np.diag(repaired.S), 1.0)
    np.testing.assert_allclose(repaired.S, repaired.S.T)

    jittered = build_similarity(V, indefinite, 0.0, repair="jitter", epsilon=1e-8)
    assert jittered.psd_repair.kind == "jitter"
    assert np.linalg.eigvalsh(jittered.S).min() >= -1e-10

    untouched = build_similarity(V, indefinite, 0.0, repair="none")
    assert untouched.psd_repair.kind == "none"
    np.testing.assert_array_equal(untouched.S, indefinite)


def test_kernel_exemplos():
    np.testing.assert_allclose(build_kernel(np.array([[1.0]]), [0.5]).L, [[0.25]])
    S = np.array([[1.0, 0.3], [0.3, 1.0]])
    np.testing.assert_array_equal(build_kernel(S, [1.0, 1.0]).L, S)

    rng = np.random.default_rng(3)
    V, overlaps = random_instance(rng, 3, 4)
    sim = build_similarity(FeatureMatrix(V), overlaps)
    q = rng.uniform(1.0, 3.0, size=3)
    kernel = build_kernel(sim, q)
    for i in range(3):
        for j in range(3):
            assert kernel.L[i, j] == pytest.approx(sim.S[i, j] * q[i] * q[j])
    assert kernel.similarity is sim
    np.testing.assert_array_equal(kernel.submatrix([2, 0]), kernel.L[np.ix_([2, 0], [2, 0])])


def test_kernel_rejeita_qualidade_nao_positiva():
    with pytest.raises(InvalidInputError):
        build_kernel(np.eye(2), [1.0, 0.0])


def test_kernel_preserva_psd():
    rng = np.random.default_rng(5)
    for _ in range(20):
        V, overlaps = random_instance(rng, 6, 3)
        L = build_kernel(build_similarity(FeatureMatrix(V), overlaps), rng.uniform(0.5, 3.0, size=6)).L
        assert np.linalg.eigvalsh(L).min() >= -1e-8


def test_log_det_exemplos():
    assert log_det_psd(np.eye(4)) == 0.0
    assert log_det_psd(np.diag([2.0, 3.0])) == pytest.approx(math.log(6.0))
    M = _random_psd(1, 8)
    assert log_det_psd(M) == pytest.approx(math.log(np.linalg.det(M)), rel=1e-10)
    assert log_det_psd(np.zeros((0, 0))) == 0.0


def test_log_det_erros_e_singular():
    with pytest.raises(NumericalDomainError):
        log_det_psd(np.diag([1.0, -1.0]))
    with pytest.raises(InvalidInputError):
        log_det_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))
    assert log_det_psd(np.ones((2, 2)), allow_singular=True) == float("-inf")


def test_dpp_log_prob_exemplos():
    L = np.array([[1.0]])
    assert dpp_log_prob(L, []) == pytest.approx(-math.log(2.0))
    assert dpp_log_prob(L, [0]) == pytest.approx(math.log(0.5))


def test_dpp_probabilidades_somam_um():
    L = _random_psd(2, 3)
    total = sum(
        math.exp(dpp_log_prob(L, list(Y))) for size in range(4) for Y in combinations(range(3), size)
    )
    assert total == pytest.approx(1.0, abs=1e-10)


def test_dpp_log_prob_nao_positivo():
    rng = np.random.default_rng(9)
    V, overlaps = random_instance(rng, 5, 3)
    L = build_kernel(build_similarity(FeatureMatrix(V), overlaps), rng.uniform(1.0, 2.0, size=5))
    for size in range(6):
        for Y in combinations(range(5), size):
            assert dpp_log_prob(L, list(Y)) <= 1e-12


def test_identidade_de_normalizacao_em_instancias_aleatorias():
    result = check_normalization(instances=30, n_max=8, seed=11)
    assert result.passed, result.metric
