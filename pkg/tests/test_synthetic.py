import numpy as np
import pytest

from seletor_dpp.config import Config
from seletor_dpp.errors import SceneGenerationError
from seletor_dpp.geometry import crowd_objects, iou
from seletor_dpp.io import dump_scene
from seletor_dpp.synthetic import (
    SceneSpec,
    Moments,
    TrainState,
    apply_state,
    evaluate_losses,
    generate_scene,
    generate_scenes,
    instance_margin,
    train_toy,
)


@pytest.fixture
def scenes():
    return generate_scenes(SceneSpec(n_objects=2, n_classes=3, candidates_per_object=3, feature_dim=6, rng_seed=10), 2)


def _config(**overrides) -> Config:
    return Config(**{"iterations": 20, "lr_scores": 0.5, "lr_features": 0.05, **overrides})


def test_cena_deterministica_pela_semente():
    spec = SceneSpec(rng_seed=42)
    assert dump_scene(generate_scene(spec)) == dump_scene(generate_scene(spec))
    assert dump_scene(generate_scene(spec)) != dump_scene(generate_scene(spec.with_seed(43)))
    assert generate_scene(spec).image_id == "synth-00042"


def test_cena_respeita_contagens_e_instancias():
    spec = SceneSpec(n_objects=3, n_classes=4, candidates_per_object=5, feature_dim=8, rng_seed=1)
    scene = generate_scene(spec)
    assert len(scene.ground_truth) == 3
    assert len(scene.candidates) == 15 + spec.clutter_count
    assert scene.n_classes == 4
    ids = [c.instance_id for c in scene.candidates]
    assert {i for i in ids if i is not None} == {g.instance_id for g in scene.ground_truth}
    assert ids.count(None) == spec.clutter_count
    for candidate in scene.candidates:
        assert np.linalg.norm(candidate.feature) == pytest.approx(1.0)
        assert candidate.scores.sum() == pytest.approx(1.0)


def test_cena_com_aglomeracao_atinge_sobreposicao():
    for seed in range(5):
        scene = generate_scene(SceneSpec(n_objects=2, overlap_level=0.5, rng_seed=seed))
        first, second = scene.ground_truth
        assert iou(first.box, second.box) >= 0.5
        assert crowd_objects(scene.ground_truth, 0.3) == {0, 1}


def test_cena_sem_sobreposicao_nao_tem_aglomeracao():
    scene = generate_scene(SceneSpec(n_objects=3, overlap_level=0.0, rng_seed=4))
    assert crowd_objects(scene.ground_truth, 0.0) == set()
    single = generate_scene(SceneSpec(n_objects=1, rng_seed=4))
    assert len(single.ground_truth) == 1


def test_cena_inviavel_gera_erro():
    with pytest.raises(SceneGenerationError):
        generate_scene(SceneSpec(n_objects=50, overlap_level=0.0, image_extent=100.0))


def test_taxa_zero_nao_altera_parametros(scenes):
    initial = TrainState.initial(scenes)
    state = train_toy(scenes, _config(lr_scores=0.0, lr_features=0.0, iterations=5))
    for before, after in zip(initial.features, state.features):
        np.testing.assert_array_equal(before, after)
    for before, after in zip(initial.score_logits, state.score_logits):
        np.testing.assert_array_equal(before, after)
    assert state.step == 5
    assert len(state.loss_history) == 5


def test_treino_de_features_reduz_perda_id(scenes):
    state = train_toy(scenes, _config(lr_scores=0.0, iterations=150))
    first, last = state.loss_history[0], state.loss_history[-1]
    assert last.id_total < first.id_total
    assert evaluate_losses(scenes, state, _config()).id_total < first.id_total


def test_treino_deterministico_e_linhas_unitarias(scenes):
    first = train_toy(scenes, _config())
    second = train_toy(scenes, _config())
    assert [b.as_row() for b in first.loss_history] == [b.as_row() for b in second.loss_history]
    for features in first.features:
        np.testing.assert_allclose(np.linalg.norm(features, axis=1), 1.0, atol=1e-12)


def test_retomada_equivale_a_execucao_continua(scenes):
    config = _config(lambda_ss=0.0)
    config = config.model_copy(update={"iterations": 12})
    full = train_toy(scenes, config)
    partial = train_toy(scenes, config, until=6)
    assert partial.step == 6
    resumed = train_toy(scenes, config, TrainState.from_json(partial.to_json()))
    assert resumed.step == 12
    for a, b in zip(full.features, resumed.features):
        np.testing.assert_allclose(a, b, atol=1e-12)
    assert len(resumed.loss_history) == 12
    for a, b in zip(full.loss_history, resumed.loss_history):
        assert a.as_row() == pytest.approx(b.as_row(), abs=1e-12)


def test_estado_serializado_preserva_historico(scenes):
    state = train_toy(scenes, _config(iterations=3))
    restored = TrainState.from_json(state.to_json())
    assert restored.step == 3
    assert [b.as_row() for b in restored.loss_history] == [b.as_row() for b in state.loss_history]
    for a, b in zip(state.score_logits, restored.score_logits):
        np.testing.assert_array_equal(a, b)


def test_aplicar_estado_substitui_escores_e_features(scenes):
    state = train_toy(scenes, _config(iterations=4))
    trained = apply_state(scenes, state)
    assert [s.image_id for s in trained] == [s.image_id for s in scenes]
    np.testing.assert_allclose(trained[0].score_matrix(), state.scores(0))
    np.testing.assert_allclose(trained[1].feature_matrix(), state.features[1])
    assert [c.instance_id for c in trained[0].candidates] == [c.instance_id for c in scenes[0].candidates]


def test_margem_entre_instancias():
    features = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert instance_margin(features, [0, 0, 1]) == pytest.approx(1.0)
    assert instance_margin(features, [None, None, None]) == 0.0
    features = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    assert instance_margin(features, [0, 0, 1, None]) == pytest.approx(1.0)


def test_caixas_de_fundo_nao_tocam_objetos():
    for seed in range(5):
        scene = generate_scene(SceneSpec(n_objects=3, clutter_count=3, rng_seed=seed))
        background = [c for c in scene.candidates if c.instance_id is None]
        assert len(background) == 3
        for candidate in background:
            assert all(iou(candidate.box, gt.box) == 0.0 for gt in scene.ground_truth)
    assert not any(c.instance_id is None for c in generate_scene(SceneSpec(clutter_count=0)).candidates)


def test_par_em_aglomeracao_repete_classe_e_respeita_faixa_de_iou():
    for seed in range(5):
        scene = generate_scene(SceneSpec(n_objects=2, overlap_level=0.4, crowd_same_class=1.0, rng_seed=seed))
        first, second = scene.ground_truth
        assert first.class_id == second.class_id
        assert 0.4 + 0.6 * 0.2 - 1e-9 <= iou(first.box, second.box) <= 0.4 + 0.6 * 0.6 + 1e-9


def test_fases_de_treino_separam_escores_e_features(scenes):
    config = _config(iterations=10, lambda_ss=0.0)
    score_phase = train_toy(scenes, config, until=config.score_iterations)
    initial = TrainState.initial(scenes)
    for before, after in zip(initial.features, score_phase.features):
        np.testing.assert_array_equal(before, after)
    assert any(not np.array_equal(a, b) for a, b in zip(initial.score_logits, score_phase.score_logits))

    frozen = [z.copy() for z in score_phase.score_logits]
    finished = train_toy(scenes, config, score_phase)
    for before, after in zip(frozen, finished.score_logits):
        np.testing.assert_array_equal(before, after)
    assert any(not np.array_equal(a, b) for a, b in zip(initial.features, finished.features))


def test_cena_sem_rotulos_fica_intacta_sem_perda_ss(scenes):
    initial = TrainState.initial(scenes)
    for optimizer in ("sgd", "adam"):
        state = train_toy(scenes, _config(lambda_ss=0.0, optimizer=optimizer), unlabeled={1})
        np.testing.assert_array_equal(state.score_logits[1], initial.score_logits[1])
        np.testing.assert_array_equal(state.features[1], initial.features[1])
        assert not np.array_equal(state.score_logits[0], initial.score_logits[0])


def test_perda_ss_aguca_escores_de_cena_sem_rotulos(scenes):
    config = _config(iterations=40, lambda_ss=0.01, ss_switch_fraction=0.0, optimizer="adam")
    state = train_toy(scenes, config, train_features=False, unlabeled={1})
    before = TrainState.initial(scenes).scores(1)
    after = state.scores(1)
    assert np.all(after.max(axis=1) > before.max(axis=1))
    np.testing.assert_array_equal(after.argmax(axis=1), before.argmax(axis=1))


def test_retomada_com_adam_equivale_a_execucao_continua(scenes):
    config = _config(iterations=12, optimizer="adam")
    full = train_toy(scenes, config)
    partial = train_toy(scenes, config, until=8)
    restored = TrainState.from_json(partial.to_json())
    assert restored.score_moments is not None and restored.score_moments.steps == [6, 6]
    resumed = train_toy(scenes, config, restored)
    for a, b in zip(full.features, resumed.features):
        np.testing.assert_allclose(a, b, atol=1e-12)
    for a, b in zip(full.score_logits, resumed.score_logits):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_momentos_adam_passo_inicial_e_gradiente_nulo():
    moments = Moments.zeros([np.zeros((2, 3)), np.zeros(2)])
    np.testing.assert_array_equal(moments.direction(1, np.zeros(2)), np.zeros(2))
    step = moments.direction(0, np.array([[0.5, -2.0, 0.0], [1e-3, 0.0, 0.0]]))
    np.testing.assert_allclose(step, [[1.0, -1.0, 0.0], [1.0, 0.0, 0.0]], atol=1e-4)
    assert moments.steps == [1, 1]
