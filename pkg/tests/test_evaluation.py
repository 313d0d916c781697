import pytest

from seletor_dpp.config import Config
from seletor_dpp.errors import InvalidInputError
from seletor_dpp.evaluation import (
    EvalReport,
    average_precision,
    build_crowd_subset,
    coco_ap,
    correct_box_probability,
    crowd_recall,
    evaluate,
    max_score_per_class,
    mean_average_precision,
)
from seletor_dpp.geometry import BoundingBox, GroundTruthObject
from seletor_dpp.scene import Detection


def _gt(box, class_id=0, instance_id=0):
    return GroundTruthObject(BoundingBox(*box), class_id, instance_id)


def _det(box, score, class_id=0, image_id="img"):
    return Detection(image_id, BoundingBox(*box), class_id, score)


@pytest.fixture
def two_objects():
    return {"img": [_gt((0, 0, 10, 10), 0, 1), _gt((50, 50, 60, 60), 0, 2)]}


def test_ap_deteccoes_perfeitas(two_objects):
    dets = [_det((0, 0, 10, 10), 0.9), _det((50, 50, 60, 60), 0.8)]
    assert average_precision(dets, two_objects) == pytest.approx(1.0)


def test_ap_sem_deteccoes_e_sem_objetos(two_objects):
    assert average_precision([], two_objects) == 0.0
    assert average_precision([_det((0, 0, 10, 10), 0.9)], {}) is None
    assert average_precision([_det((0, 0, 10, 10), 0.9)], {"img": []}) is None


def test_ap_exemplo_tp_fp_tp(two_objects):
    dets = [_det((0, 0, 10, 10), 0.9), _det((100, 100, 110, 110), 0.8), _det((50, 50, 60, 60), 0.7)]
    assert average_precision(dets, two_objects) == pytest.approx(5.0 / 6.0)
    assert average_precision(dets, two_objects, interpolation="11point") == pytest.approx((6 + 5 * (2.0 / 3.0)) / 11)


def test_ap_duplicata_conta_como_falso_positivo(two_objects):
    dets = [_det((0, 0, 10, 10), 0.9), _det((0, 0, 10, 10), 0.85), _det((50, 50, 60, 60), 0.7)]
    assert average_precision(dets, two_objects) == pytest.approx(5.0 / 6.0)


def test_ap_invariante_a_transformacao_monotona_dos_escores(two_objects):
    dets = [_det((0, 0, 10, 10), 0.9), _det((100, 100, 110, 110), 0.8), _det((50, 50, 60, 60), 0.7)]
    squashed = [Detection(d.image_id, d.box, d.class_id, d.score**3) for d in dets]
    assert average_precision(dets, two_objects) == pytest.approx(average_precision(squashed, two_objects))


def test_ap_limiar_invalido(two_objects):
    with pytest.raises(InvalidInputError):
        average_precision([], two_objects, iou_thresh=1.0)


def test_map_por_classe():
    gts = {"img": [_gt((0, 0, 10, 10), 0, 1), _gt((50, 50, 60, 60), 2, 2)]}
    per_class, mean = mean_average_precision([_det((0, 0, 10, 10), 0.9)], gts)
    assert per_class == {0: pytest.approx(1.0), 2: 0.0}
    assert mean == pytest.approx(0.5)


def test_coco_ap_caixa_frouxa():
    gts = {"img": [_gt((0, 0, 10, 10))]}
    assert coco_ap([_det((0, 0, 10, 19), 0.9)], gts) == pytest.approx(0.1)
    assert coco_ap([_det((0, 0, 10, 10), 0.9)], gts) == pytest.approx(1.0)


@pytest.fixture
def crowd_gts():
    return {
        "img": [
            _gt((0, 0, 10, 10), 0, 1),
            _gt((1, 1, 11, 11), 0, 2),
            _gt((80, 80, 90, 90), 0, 3),
        ]
    }


def test_recall_em_aglomeracao_e_limiares_omitidos(crowd_gts):
    dets = [_det((0, 0, 10, 10), 0.9), _det((80, 80, 90, 90), 0.8)]
    curve = crowd_recall(dets, crowd_gts, [0.0, 0.5, 0.9])
    assert curve.at(0.0) == pytest.approx(0.5)
    assert curve.at(0.5) == pytest.approx(0.5)
    assert curve.at(0.9) is None
    assert curve.omitted == [0.9]


def test_recall_exige_mesma_categoria(crowd_gts):
    dets = [_det((0, 0, 10, 10), 0.9, class_id=1), _det((1, 1, 11, 11), 0.9, class_id=1)]
    assert crowd_recall(dets, crowd_gts, [0.3]).at(0.3) == 0.0


def test_recall_limiares_invalidos(crowd_gts):
    with pytest.raises(InvalidInputError):
        crowd_recall([], crowd_gts, [0.3, 0.1])


def test_probabilidade_de_caixa_correta(two_objects):
    good = [_det((0, 0, 10, 10), 0.5), _det((50, 50, 60, 60), 0.5)]
    assert correct_box_probability(good, two_objects) == pytest.approx(1.0)
    assert correct_box_probability([_det((0, 0, 10, 10), 0.005)], two_objects) is None
    mixed = good + [_det((20, 20, 30, 30), 0.5), _det((0, 0, 10, 10), 0.5, class_id=1)]
    assert correct_box_probability(mixed, two_objects) == pytest.approx(0.5)


def test_subconjunto_de_aglomeracao_usa_desigualdade_estrita():
    boundary = {"a": [_gt((0, 0, 10, 10), 0, 1), _gt((0, 0, 3, 10), 0, 2)]}
    assert build_crowd_subset(boundary, 0.3) == set()
    crowded = {"b": [_gt((0, 0, 10, 10), 0, 1), _gt((0, 0, 4, 10), 0, 2)]}
    assert build_crowd_subset({**boundary, **crowded}, 0.3) == {"b"}


def test_maior_escore_por_classe():
    dets = [_det((0, 0, 1, 1), 0.2, 1), _det((0, 0, 1, 1), 0.7, 1), _det((0, 0, 1, 1), 0.4, 0)]
    assert max_score_per_class(dets) == {0: 0.4, 1: 0.7}


def test_avaliacao_completa_e_serializacao(crowd_gts):
    dets = [_det((0, 0, 10, 10), 0.9), _det((1, 1, 11, 11), 0.8), _det((80, 80, 90, 90), 0.7)]
    report = evaluate(dets, crowd_gts, Config())
    assert report.map == pytest.approx(1.0)
    assert report.n_images == 1 and report.n_crowd_images == 1
    assert report.crowd_map == pytest.approx(1.0)
    assert report.correct_box_prob == pytest.approx(1.0)
    assert dict(report.recall_curve)[0.0] == pytest.approx(1.0)
    assert EvalReport.from_json(report.to_json()) == report
