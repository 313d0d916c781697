from itertools import permutations

import numpy as np
import pytest

from seletor_dpp.checks import check_hungarian
from seletor_dpp.errors import InvalidInputError
from seletor_dpp.geometry import BoundingBox, GroundTruthObject, iou
from seletor_dpp.matching import hungarian, match_pairs, match_representatives
from seletor_dpp.scene import Candidate


def _candidate(box, label=0, n_classes=2):
    scores = np.full(n_classes, 0.1)
    scores[label] = 0.9
    return Candidate(BoundingBox(*box), scores, np.array([1.0, 0.0]))


def test_hungarian_diagonal_nula():
    cost = np.ones((3, 3)) - np.eye(3)
    result = hungarian(cost)
    assert result.pairs == ((0, 0), (1, 1), (2, 2))
    assert result.total_cost == 0.0


def test_hungarian_escolha_simetrica():
    result = hungarian([[1.0, 2.0], [2.0, 1.0]])
    assert result.pairs == ((0, 0), (1, 1))
    assert result.total_cost == 2.0


def test_hungarian_contra_forca_bruta_6x6():
    rng = np.random.default_rng(0)
    cost = rng.uniform(0.0, 1.0, size=(6, 6))
    best = min(sum(cost[i, p[i]] for i in range(6)) for p in permutations(range(6)))
    assert hungarian(cost).total_cost == pytest.approx(best, abs=1e-12)


def test_hungarian_vazia_e_retangular():
    assert hungarian(np.zeros((0, 3))).pairs == ()
    tall = np.array([[5.0], [1.0], [3.0]])
    result = hungarian(tall)
    assert result.pairs == ((1, 0),)
    wide = hungarian(np.array([[4.0, 1.0, 2.0], [0.5, 3.0, 3.0]]))
    assert wide.pairs == ((0, 1), (1, 0))
    assert len({c for _, c in wide.pairs}) == 2


def test_hungarian_empate_lexicografico():
    assert hungarian(np.zeros((2, 2))).pairs == ((0, 0), (1, 1))
    assert hungarian(np.zeros((2, 3))).pairs == ((0, 0), (1, 1))


def test_hungarian_invariante_por_escala():
    rng = np.random.default_rng(4)
    cost = rng.uniform(size=(4, 5))
    assert hungarian(cost).pairs == hungarian(7.5 * cost).pairs


def test_hungarian_rejeita_entradas_nao_finitas():
    with pytest.raises(InvalidInputError):
        hungarian([[1.0, float("inf")], [0.0, 1.0]])


def test_hungarian_varredura_exata():
    result = check_hungarian(instances=60, n_max=5, seed=8)
    assert result.passed


def test_representante_coincidente():
    gts = [GroundTruthObject(BoundingBox(0, 0, 10, 10), 0, 1)]
    candidates = [_candidate((20, 20, 30, 30)), _candidate((0, 0, 10, 10))]
    assert match_representatives(candidates, gts) == [1]


def test_representantes_bijetivos():
    gts = [GroundTruthObject(BoundingBox(0, 0, 10, 10), 0, 1), GroundTruthObject(BoundingBox(50, 50, 60, 60), 1, 2)]
    candidates = [_candidate((50, 50, 60, 60), label=1), _candidate((0, 0, 10, 10))]
    assert match_pairs(candidates, gts) == [(0, 1), (1, 0)]
    assert match_representatives(candidates, gts) == [0, 1]


def test_representantes_minimizam_custo_total():
    gts = [GroundTruthObject(BoundingBox(0, 0, 10, 10), 0, 1), GroundTruthObject(BoundingBox(8, 0, 18, 10), 0, 2)]
    candidates = [
        _candidate((1, 0, 11, 10)),
        _candidate((7, 0, 17, 10)),
        _candidate((0, 1, 10, 11)),
    ]

    def total(assign):
        return sum(1.0 - iou(candidates[c].box, gts[g].box) for c, g in assign)

    brute = min(
        total(list(zip(p, range(2)))) for p in permutations(range(3), 2)
    )
    pairs = match_pairs(candidates, gts)
    assert total(pairs) == pytest.approx(brute)
    assert len(match_representatives(candidates, gts)) <= 2


def test_representantes_descartam_iou_nula_e_filtram_classe():
    gts = [GroundTruthObject(BoundingBox(0, 0, 10, 10), 0, 1)]
    assert match_representatives([_candidate((30, 30, 40, 40))], gts) == []
    assert match_representatives([], gts) == []
    candidates = [_candidate((0, 0, 10, 10), label=1), _candidate((1, 1, 10, 10), label=0)]
    assert match_representatives(candidates, gts, class_filter=0) == [1]
    assert match_representatives(candidates, gts, class_filter=1) == []
