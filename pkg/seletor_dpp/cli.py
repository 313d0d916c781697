"""Interface de linha de comando baseada em Typer."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import Iterator, List, Optional

import click
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from .checks import gradcheck as run_gradcheck
from .checks import run_selftest
from .config import Config
from .errors import ConfigError, InvalidInputError, NumericalDomainError
from .evaluation import evaluate
from .experiments import ablation as run_ablation
from .experiments import ss_suppression_study, training_study
from .inference import SelectionResult, select_scene
from .io import (
    dump_detections,
    dump_ground_truth,
    dump_scene,
    dump_selection,
    load_detections,
    load_ground_truth,
    load_scene,
    read_json,
    write_text,
)
from .report import generate_loss_report, write_frame
from .scene import Scene
from .synthetic import SceneSpec, TrainState, generate_scene, generate_scenes, train_toy
from .utils import iter_files, scene_filename

app = typer.Typer(add_completion=False, help="Seleção de detecções com processos pontuais determinantais.")
console = Console()
logging.basicConfig(
    level=logging.INFO,
    format="%(message)s",
    handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
)
logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class Method(str, Enum):
    idpp = "idpp"
    exact = "exact"
    nms = "nms"


class Optimizer(str, Enum):
    sgd = "sgd"
    adam = "adam"


class GtFormat(str, Enum):
    native = "native"
    coco = "coco"


@contextmanager
def _exit_codes() -> Iterator[None]:
    """Traduz as exceções do domínio nos códigos de saída da CLI."""

    try:
        yield
    except ConfigError as exc:
        console.print(f"[red]Configuração inválida: {escape(str(exc))}")
        raise typer.Exit(code=EXIT_USAGE)
    except NumericalDomainError as exc:
        console.print(f"[red]Falha numérica: {escape(str(exc))}")
        raise typer.Exit(code=EXIT_NUMERICAL)
    except InvalidInputError as exc:
        console.print(f"[red]Entrada inválida: {escape(str(exc))}")
        raise typer.Exit(code=EXIT_DATA)


def _usage_error(message: str) -> None:
    console.print(f"[red]{message}")
    raise typer.Exit(code=EXIT_USAGE)


@app.callback()
def configure(verbose: bool = typer.Option(False, "--verbose", "-v", help="Logs de depuração")) -> None:
    """Seleção de detecções com processos pontuais determinantais."""

    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


def _select(scene: Scene, config: Config, method: str) -> tuple[Scene, SelectionResult, float]:
    start = time.perf_counter()
    result = select_scene(scene, config, method)  # type: ignore[arg-type]
    elapsed = time.perf_counter() - start
    logger.info("Cena %s: seleção %s em %.2f ms", scene.image_id, method, 1000.0 * elapsed)
    return scene, result, elapsed


@app.command()
def infer(
    inputs: List[Path] = typer.Argument(..., exists=True, readable=True, help="Arquivos ou pastas de cenas JSON"),
    out: Path = typer.Option(..., "--out", help="Pasta de saída"),
    method: Method = typer.Option(Method.idpp, "--method", help="Método de seleção"),
    config_path: Optional[Path] = typer.Option(None, "--config", exists=True, help="Configuração JSON"),
    lam: Optional[float] = typer.Option(None, "--lambda", help="Peso das features em S"),
    beta: Optional[float] = typer.Option(None, "--beta", help="Escala da qualidade exp(β·s)"),
    nms_tau: Optional[float] = typer.Option(None, "--nms-tau", help="Limiar de IoU do NMS"),
    min_score: Optional[float] = typer.Option(None, "--min-score", help="Descarta candidatos com escore menor ou igual"),
    psd_epsilon: Optional[float] = typer.Option(None, "--psd-epsilon", help="Tolerância do reparo PSD"),
    raw_quality: bool = typer.Option(False, "--raw-quality", help="Usa o escore cru como qualidade"),
) -> None:
    """Seleciona detecções de cada cena e grava os arquivos de seleção."""

    with _exit_codes():
        config = Config.load(
            config_path,
            lam=lam,
            beta=beta,
            nms_tau=nms_tau,
            min_score=min_score,
            psd_epsilon=psd_epsilon,
            quality_mode="raw" if raw_quality else None,
        )
        files = list(iter_files(inputs))
        if not files:
            console.print("[yellow]Nenhuma cena encontrada")
            raise typer.Exit(code=0)

        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            scenes = list(pool.map(load_scene, files))
            ids = [scene.image_id for scene in scenes]
            if len(set(ids)) != len(ids):
                raise InvalidInputError("image_id repetido entre as cenas de entrada")
            outcomes = list(pool.map(lambda s: _select(s, config, method.value), scenes))

    outcomes.sort(key=lambda item: item[0].image_id)
    table = Table(title=f"Seleção ({method.value})")
    table.add_column("image_id")
    table.add_column("candidatos", justify="right")
    table.add_column("selecionados", justify="right")
    table.add_column("custo", justify="right")
    table.add_column("ms", justify="right")
    detections = []
    for scene, result, elapsed in outcomes:
        write_text(out / scene_filename(scene.image_id, ".selection.json"), dump_selection(result))
        detections.extend(scene.detections(result.selected))
        table.add_row(
            scene.image_id,
            str(len(scene.candidates)),
            str(len(result.selected)),
            f"{result.final_cost:.4f}",
            f"{1000.0 * elapsed:.2f}",
        )
    write_text(out / "detections.json", dump_detections(detections))
    console.print(table)


@app.command()
def gradcheck(
    seeds: int = typer.Option(100, "--seeds", help="Número de instâncias aleatórias"),
    seed: int = typer.Option(0, "--seed", help="Semente inicial"),
    config_path: Optional[Path] = typer.Option(None, "--config", exists=True, help="Configuração JSON"),
    lam: Optional[float] = typer.Option(None, "--lambda", help="Peso das features em S"),
    fd_step: Optional[float] = typer.Option(None, "--fd-step", help="Passo das diferenças finitas"),
    tol: Optional[float] = typer.Option(None, "--tol", help="Erro relativo máximo aceito"),
    inject_fault: float = typer.Option(0.0, "--inject-fault", hidden=True),
) -> None:
    """Compara os gradientes analíticos das perdas SS e ID com diferenças finitas."""

    if seeds < 1:
        _usage_error("--seeds deve ser pelo menos 1")
    with _exit_codes():
        config = Config.load(config_path, lam=lam, fd_step=fd_step, gradcheck_tol=tol)
        report = run_gradcheck(
            seeds,
            seed=seed,
            lam=config.lam,
            beta=config.beta,
            h=config.fd_step,
            tol=config.gradcheck_tol,
            fault=inject_fault,
            repair=config.psd_repair,
            psd_epsilon=config.psd_epsilon,
        )

    table = Table(title=f"Gradcheck ({seeds} instâncias, tol {config.gradcheck_tol:.0e})")
    table.add_column("perda")
    table.add_column("erro relativo máximo", justify="right")
    table.add_column("status")
    for name, value in (("SS", report.max_ss_err), ("ID", report.max_id_err)):
        status = "[green]ok" if value <= config.gradcheck_tol else "[red]falhou"
        table.add_row(name, f"{value:.3e}", status)
    console.print(table)
    if not report.passed:
        for failure in report.failures[:5]:
            console.print(f"[red]{failure}")
        raise typer.Exit(code=EXIT_NUMERICAL)


@app.command("train-toy")
def train_toy_command(
    spec_file: Optional[Path] = typer.Argument(None, exists=True, readable=True, help="SceneSpec em JSON"),
    out: Path = typer.Option(..., "--out", help="Pasta de saída"),
    scenes: int = typer.Option(1, "--scenes", help="Número de cenas (sementes consecutivas)"),
    resume: Optional[Path] = typer.Option(None, "--resume", exists=True, help="Estado de treino salvo"),
    config_path: Optional[Path] = typer.Option(None, "--config", exists=True, help="Configuração JSON"),
    iterations: Optional[int] = typer.Option(None, "--iterations", help="Iterações totais"),
    lam: Optional[float] = typer.Option(None, "--lambda", help="Peso das features em S"),
    lambda_ss: Optional[float] = typer.Option(None, "--lambda-ss", help="Peso da perda SS após a troca"),
    lr_scores: Optional[float] = typer.Option(None, "--lr-scores", help="Passo dos logits de escore"),
    lr_features: Optional[float] = typer.Option(None, "--lr-features", help="Passo das features"),
    optimizer: Optional[Optimizer] = typer.Option(None, "--optimizer", help="Otimizador dos dois passos"),
) -> None:
    """Treina escores e features em cenas sintéticas e grava estado e curva de perdas."""

    if scenes < 1:
        _usage_error("--scenes deve ser pelo menos 1")
    with _exit_codes():
        config = Config.load(
            config_path,
            iterations=iterations,
            lam=lam,
            lambda_ss=lambda_ss,
            lr_scores=lr_scores,
            lr_features=lr_features,
            optimizer=optimizer.value if optimizer else None,
        )
        spec = _load_spec(spec_file)
        scene_list = generate_scenes(spec, scenes)
        state = None
        if resume is not None:
            state = TrainState.from_json(resume.read_text(encoding="utf-8"))
            if len(state.features) != len(scene_list):
                raise InvalidInputError(
                    f"Estado salvo tem {len(state.features)} cenas, esperado {len(scene_list)}"
                )
            console.log(f"Retomando treino na iteração {state.step}")
        state = train_toy(scene_list, config, state)

    write_text(out / "train_state.json", state.to_json())
    curve = generate_loss_report(state.loss_history, config, out / "loss_curve.csv")
    if state.loss_history:
        first, last = state.loss_history[0], state.loss_history[-1]
        console.print(f"[green]𝓛_ID: {first.id_total:.4f} -> {last.id_total:.4f} em {state.step} iterações")
    console.print(f"[green]Curva de perdas gerada em {curve}")


def _load_spec(spec_file: Optional[Path]) -> SceneSpec:
    if spec_file is None:
        return SceneSpec()
    payload = read_json(spec_file)
    try:
        return SceneSpec.model_validate(payload)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "<raiz>"
        raise InvalidInputError(f"{spec_file}: campo inválido '{field}': {first['msg']}") from exc


def _format_cell(value: object) -> str:
    if value is None or (isinstance(value, float) and value != value):
        return "-"
    return f"{value:.4f}" if isinstance(value, float) else str(value)


@app.command("eval")
def evaluate_command(
    detections_file: Path = typer.Argument(..., exists=True, readable=True, help="Detecções JSON"),
    gt_file: Path = typer.Argument(..., exists=True, readable=True, help="Anotações JSON"),
    gt_format: GtFormat = typer.Option(GtFormat.native, "--gt-format", help="Formato das anotações"),
    candidates_file: Optional[Path] = typer.Option(
        None, "--candidates", exists=True, help="Caixas candidatas para a probabilidade de caixa correta"
    ),
    out: Optional[Path] = typer.Option(None, "--out", help="Arquivo JSON do relatório"),
    config_path: Optional[Path] = typer.Option(None, "--config", exists=True, help="Configuração JSON"),
    crowd_tau: Optional[float] = typer.Option(None, "--crowd-tau", help="IoU mínima de aglomeração"),
    match_iou: Optional[float] = typer.Option(None, "--match-iou", help="IoU para detecção correta"),
) -> None:
    """Calcula mAP, AP estilo COCO, recall em aglomeração e probabilidade de caixa correta."""

    with _exit_codes():
        config = Config.load(config_path, crowd_tau=crowd_tau, match_iou=match_iou)
        dets = load_detections(detections_file)
        gts = load_ground_truth(gt_file, gt_format.value)
        candidates = load_detections(candidates_file) if candidates_file else None
        report = evaluate(dets, gts, config, candidates)

    table = Table(title=f"Avaliação de {detections_file.name}")
    table.add_column("métrica")
    table.add_column("valor", justify="right")
    table.add_row("mAP@0.5", f"{report.map:.4f}")
    table.add_row("AP COCO", f"{report.coco_ap:.4f}")
    table.add_row("mAP aglomeração", "-" if report.crowd_map is None else f"{report.crowd_map:.4f}")
    for threshold, recall in report.recall_curve:
        table.add_row(f"recall sobreposição > {threshold:.1f}", f"{recall:.4f}")
    prob = report.correct_box_prob
    table.add_row("prob. caixa correta", "-" if prob is None else f"{prob:.4f}")
    table.add_row("imagens (aglomeração)", f"{report.n_images} ({report.n_crowd_images})")
    console.print(table)
    if out is not None:
        write_text(out, report.to_json())


@app.command()
def selftest(
    seed: int = typer.Option(0, "--seed", help="Semente inicial"),
    scale: float = typer.Option(1.0, "--scale", help="Fração do número de instâncias"),
    config_path: Optional[Path] = typer.Option(None, "--config", exists=True, help="Configuração JSON"),
    psd_epsilon: Optional[float] = typer.Option(None, "--psd-epsilon", help="Tolerância do reparo PSD"),
) -> None:
    """Verifica identidades do DPP, dominância do guloso e o algoritmo húngaro."""

    if not 0.0 < scale <= 1.0:
        _usage_error("--scale deve estar em (0, 1]")
    with _exit_codes():
        config = Config.load(config_path, psd_epsilon=psd_epsilon)
        results = run_selftest(
            seed=seed,
            scale=scale,
            tol=config.gradcheck_tol,
            repair=config.psd_repair,
            psd_epsilon=config.psd_epsilon,
        )

    table = Table(title="Selftest")
    table.add_column("verificação")
    table.add_column("instâncias", justify="right")
    table.add_column("métrica", justify="right")
    table.add_column("s", justify="right")
    table.add_column("status")
    for result in results:
        table.add_row(
            result.name,
            str(result.instances),
            f"{result.metric:.3e}",
            f"{result.seconds:.2f}",
            "[green]ok" if result.passed else f"[red]falhou {result.detail}",
        )
    console.print(table)
    if not all(result.passed for result in results):
        raise typer.Exit(code=EXIT_NUMERICAL)


@app.command()
def generate(
    spec_file: Optional[Path] = typer.Argument(None, exists=True, readable=True, help="SceneSpec em JSON"),
    out: Path = typer.Option(..., "--out", help="Pasta de saída"),
    count: int = typer.Option(1, "--count", help="Número de cenas"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Semente da primeira cena"),
) -> None:
    """Gera cenas sintéticas em ``<out>/scenes`` e o arquivo de anotações ``<out>/ground_truth.json``."""

    if count < 1:
        _usage_error("--count deve ser pelo menos 1")
    with _exit_codes():
        spec = _load_spec(spec_file)
        if seed is not None:
            spec = spec.with_seed(seed)
        scene_list = [generate_scene(spec.with_seed(spec.rng_seed + k)) for k in range(count)]

    for scene in scene_list:
        write_text(out / "scenes" / scene_filename(scene.image_id), dump_scene(scene))
    write_text(out / "ground_truth.json", dump_ground_truth({s.image_id: s.ground_truth for s in scene_list}))
    console.print(f"[green]{count} cenas geradas em {out}")


@app.command()
def ablation(
    spec_file: Optional[Path] = typer.Argument(None, exists=True, readable=True, help="SceneSpec em JSON"),
    seeds: int = typer.Option(10, "--seeds", help="Número de cenas"),
    out: Optional[Path] = typer.Option(None, "--out", help="CSV com os resultados"),
    config_path: Optional[Path] = typer.Option(None, "--config", exists=True, help="Configuração JSON"),
    iterations: Optional[int] = typer.Option(None, "--iterations", help="Iterações de treino por variante"),
) -> None:
    """Compara NMS, NMS+SS, IDPP+ID e IDPP+SS+ID nas mesmas cenas sintéticas."""

    if seeds < 1:
        _usage_error("--seeds deve ser pelo menos 1")
    with _exit_codes():
        config = Config.load(config_path, iterations=iterations)
        spec = _load_spec(spec_file) if spec_file else None
        base_seed = spec.rng_seed if spec else config.rng_seed
        frame = run_ablation(range(base_seed, base_seed + seeds), config, spec)

    table = Table(title=f"Ablação ({seeds} cenas)")
    for column in frame.columns:
        table.add_column(str(column), justify="left" if column == "variant" else "right")
    for row in frame.itertuples(index=False):
        table.add_row(*(_format_cell(value) for value in row))
    console.print(table)
    if out is not None:
        write_frame(frame, out)


@app.command()
def study(
    spec_file: Optional[Path] = typer.Argument(None, exists=True, readable=True, help="SceneSpec em JSON"),
    seeds: int = typer.Option(10, "--seeds", help="Número de cenas"),
    out: Optional[Path] = typer.Option(None, "--out", help="Pasta para os CSVs"),
    config_path: Optional[Path] = typer.Option(None, "--config", exists=True, help="Configuração JSON"),
    iterations: Optional[int] = typer.Option(None, "--iterations", help="Iterações de treino por cena"),
    optimizer: Optional[Optimizer] = typer.Option(None, "--optimizer", help="Otimizador do estudo de supressão"),
) -> None:
    """Efeito do treino por cena (perda ID, margem, recall) e ganho de caixas corretas com 𝓛_SS."""

    if seeds < 1:
        _usage_error("--seeds deve ser pelo menos 1")
    with _exit_codes():
        config = Config.load(config_path, iterations=iterations)
        spec = _load_spec(spec_file) if spec_file else None
        base_seed = spec.rng_seed if spec else config.rng_seed
        seed_range = range(base_seed, base_seed + seeds)
        runs = training_study(seed_range, config, spec)
        ss_config = config.model_copy(update={"optimizer": optimizer.value}) if optimizer else config
        suppression = ss_suppression_study(seed_range, ss_config, spec)

    idpp = runs["idpp_recall"].astype(float)
    nms = runs["nms_recall"].astype(float)
    table = Table(title=f"Estudo do treino ({seeds} cenas)")
    table.add_column("critério")
    table.add_column("cenas", justify="right")
    table.add_row("𝓛_ID final < inicial", str(int((runs["id_final"] < runs["id_initial"]).sum())))
    table.add_row("margem de features ≥ 0.1", str(int((runs["margin"] >= 0.1).sum())))
    table.add_row("recall IDPP ≥ NMS", str(int((idpp >= nms).sum())))
    table.add_row("caixa correta com SS > sem SS", str(int((suppression["gain"].astype(float) > 0.0).sum())))
    console.print(table)
    if out is not None:
        write_frame(runs, out / "training_study.csv")
        write_frame(suppression, out / "ss_suppression.csv")


def main() -> None:
    """Ponto de entrada do script: erros de uso saem com código 1."""

    try:
        code = app(standalone_mode=False)
    except click.UsageError as exc:
        exc.show()
        raise SystemExit(EXIT_USAGE)
    except click.Abort:
        raise SystemExit(EXIT_USAGE)
    raise SystemExit(code or 0)


if __name__ == "__main__":
    main()
