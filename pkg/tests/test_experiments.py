import numpy as np
import pytest

from seletor_dpp.config import Config
from seletor_dpp.experiments import (
    ABLATION_VARIANTS,
    ablation,
    crowd_scene,
    ss_suppression_run,
    ss_suppression_study,
    training_study,
)
from seletor_dpp.synthetic import SceneSpec

BASE = SceneSpec(n_classes=3, candidates_per_object=3, feature_dim=6, overlap_level=0.4)
CROWD = SceneSpec(overlap_level=0.4)
SEEDS = range(10)


@pytest.fixture(scope="module")
def crowd_study():
    return training_study(SEEDS, Config(), CROWD)


def test_cena_de_aglomeracao_varia_numero_de_objetos():
    assert [len(crowd_scene(seed, BASE).ground_truth) for seed in range(3)] == [2, 3, 4]


def test_estudo_de_treino_reduz_perda_id():
    config = Config(iterations=60, lr_scores=0.0)
    frame = training_study([0, 1], config, BASE)
    assert list(frame["seed"]) == [0, 1]
    assert (frame["id_final"] < frame["id_initial"]).all()
    assert set(frame.columns) >= {"margin", "idpp_recall", "nms_recall", "correct_box_prob"}


def test_treino_completo_reduz_perda_id_na_maioria_das_cenas(crowd_study):
    assert (crowd_study["id_final"] < crowd_study["id_initial"]).sum() >= 9


def test_treino_completo_separa_features_de_instancias(crowd_study):
    assert (crowd_study["margin"] >= 0.1).sum() >= 8


def test_idpp_recupera_objetos_aglomerados_que_o_nms_perde(crowd_study):
    idpp = crowd_study["idpp_recall"].astype(float)
    nms = crowd_study["nms_recall"].astype(float)
    assert (idpp >= nms).sum() >= 8
    assert (idpp > nms).any()


def test_perda_ss_aumenta_caixas_corretas_em_cena_separada():
    frame = ss_suppression_study(SEEDS, Config(optimizer="adam"), CROWD)
    assert list(frame["seed"]) == list(SEEDS)
    assert (frame["gain"].astype(float) > 0.0).sum() >= 7


def test_sem_peso_ss_cena_separada_nao_muda():
    summary = ss_suppression_run(3, Config(iterations=20, lambda_ss=0.0), BASE)
    assert summary.without_ss == summary.with_ss
    assert summary.gain == 0.0


def test_ablacao_uma_linha_por_variante():
    frame = ablation([0, 1], Config(iterations=5), BASE)
    assert list(frame["variant"]) == [variant.name for variant in ABLATION_VARIANTS]
    assert list(frame.columns) == ["variant", "ap50", "coco_ap", "crowd_ap50", "crowd_recall", "correct_box_prob"]
    ap = frame["ap50"].to_numpy(dtype=float)
    assert np.all((ap >= 0.0) & (ap <= 1.0))
