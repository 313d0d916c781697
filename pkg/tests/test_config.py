import json

import pytest

from seletor_dpp.config import DEFAULT_RECALL_THRESHOLDS, Config
from seletor_dpp.errors import ConfigError


def test_valores_padrao():
    config = Config()
    assert config.lam == 0.6
    assert config.lambda_ss == 0.01
    assert config.m == 5
    assert config.beta == 2.0
    assert config.nms_tau == 0.5
    assert config.crowd_tau == 0.3
    assert config.psd_epsilon == 1e-8
    assert config.recall_thresholds == DEFAULT_RECALL_THRESHOLDS


def test_alias_lambda():
    assert Config.validated({"lambda": 0.2}).lam == 0.2
    assert Config(lam=0.3).lam == 0.3
    assert json.loads(Config().to_json())["lambda"] == 0.6


@pytest.mark.parametrize(
    "payload, field",
    [
        ({"psd_epsilon": -1}, "psd_epsilon"),
        ({"lambda": 1.5}, "lambda"),
        ({"m": 0}, "m"),
        ({"recall_thresholds": [0.3, 0.1]}, "recall_thresholds"),
        ({"unknown_option": 1}, "unknown_option"),
    ],
)
def test_erro_nomeia_o_campo(payload, field):
    with pytest.raises(ConfigError, match=field):
        Config.validated(payload)


def test_ida_e_volta_json():
    config = Config.validated({"lambda": 0.4, "m": 3, "quality_mode": "raw", "recall_thresholds": [0.1, 0.2]})
    assert Config.from_json(config.to_json()) == config


def test_carregar_arquivo_com_sobrescritas(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"lambda": 0.2, "beta": 3.0}), encoding="utf-8")
    config = Config.load(path, beta=None, nms_tau=0.7)
    assert config.lam == 0.2
    assert config.beta == 3.0
    assert config.nms_tau == 0.7
    assert Config.load(path, lam=0.9).lam == 0.9
    assert Config.load(None).lam == 0.6


def test_carregar_json_invalido(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{lambda: ", encoding="utf-8")
    with pytest.raises(ConfigError):
        Config.load(path)


def test_agenda_de_lambda_ss():
    config = Config(lambda_ss=0.05, ss_switch_fraction=0.5)
    assert config.lambda_ss_at(0, 100) == 0.0
    assert config.lambda_ss_at(49, 100) == 0.0
    assert config.lambda_ss_at(50, 100) == 0.05
    assert config.lambda_ss_at(5, 0) == 0.0


def test_peso_ss_restrito_a_fase_de_escores():
    config = Config(iterations=100, score_phase_fraction=0.4, lambda_ss=0.01, ss_switch_fraction=0.5)
    assert config.score_iterations == 40
    assert config.ss_weight(19) == 0.0
    assert config.ss_weight(20) == 0.01
    assert config.ss_weight(39) == 0.01
    assert config.ss_weight(40) == 0.0
    assert Config(iterations=0).score_iterations == 0


def test_otimizador_validado():
    assert Config().optimizer == "sgd"
    assert Config.from_json(Config(optimizer="adam").to_json()).optimizer == "adam"
    with pytest.raises(ConfigError):
        Config.validated({"optimizer": "rmsprop"})
    with pytest.raises(ConfigError):
        Config.validated({"score_phase_fraction": 1.5})
