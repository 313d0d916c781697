"""Verificações de propriedades em instâncias aleatórias com semente (selftest e gradcheck)."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from itertools import combinations, permutations

import numpy as np

from .dpp import DEFAULT_PSD_EPSILON, FeatureMatrix, RepairKind, build_similarity, log_det_shifted, normalize_rows
from .geometry import BoundingBox, iou_matrix
from .gradients import finite_diff_bundle, gradient_bundle, relative_error
from .inference import exact_map, idpp_greedy, quality_transform, subset_cost
from .losses import IdProblem, ss_loss
from .matching import hungarian

logger = logging.getLogger(__name__)

NORMALIZATION_RTOL = 1e-10
SS_ATOL = 1e-10
DOMINANCE_ATOL = 1e-9


@dataclass(slots=True)
class CheckResult:
    """Resultado de uma verificação: aprovação, métrica principal e tempo gasto."""

    name: str
    passed: bool
    metric: float
    instances: int
    seconds: float = 0.0
    detail: str = ""


def random_boxes(rng: np.random.Generator, n: int, extent: float = 100.0) -> list[BoundingBox]:
    centers = rng.uniform(0.0, extent, size=(n, 2))
    sizes = rng.uniform(0.1 * extent, 0.4 * extent, size=(n, 2))
    return [BoundingBox.from_center(cx, cy, w, h) for (cx, cy), (w, h) in zip(centers, sizes)]


def random_instance(rng: np.random.Generator, n: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Features normalizadas ``n x r`` e a matriz de IoU de caixas aleatórias."""

    V = normalize_rows(rng.normal(size=(n, r)))
    return V, iou_matrix(random_boxes(rng, n))


def _random_psd(rng: np.random.Generator, n: int) -> np.ndarray:
    B = rng.normal(size=(n, rng.integers(1, n + 1))) * rng.uniform(0.2, 1.5)
    return B @ B.T


def _timed(name: str, start: float, passed: bool, metric: float, instances: int, detail: str = "") -> CheckResult:
    result = CheckResult(name, passed, metric, instances, time.perf_counter() - start, detail)
    logger.info("%s: %s (métrica %.3e, %d instâncias)", name, "ok" if passed else "FALHOU", metric, instances)
    return result


def check_normalization(instances: int = 500, n_max: int = 10, seed: int = 0) -> CheckResult:
    """``Σ_Y det(L_Y) = det(L + I)`` por enumeração de todos os subconjuntos."""

    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, n_max + 1))
        L = _random_psd(rng, n)
        total = 1.0
        for size in range(1, n + 1):
            subsets = np.array(list(combinations(range(n), size)), dtype=int)
            total += float(np.linalg.det(L[subsets[:, :, None], subsets[:, None, :]]).sum())
        expected = math.exp(log_det_shifted(L))
        worst = max(worst, abs(total - expected) / expected)
    return _timed("normalizacao_dpp", start, worst < NORMALIZATION_RTOL, worst, instances)


def check_ss_closed_form(instances: int = 200, n_max: int = 6, seed: int = 1) -> CheckResult:
    """A forma fechada da perda SS coincide com ``−log Σ_{Y⊆Y_pos} P(Y)`` enumerado."""

    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, n_max + 1))
        L = _random_psd(rng, n)
        positive = sorted(rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False).tolist())
        normalizer = math.exp(log_det_shifted(L))
        mass = sum(
            float(np.linalg.det(L[np.ix_(Y, Y)])) if Y else 1.0
            for size in range(len(positive) + 1)
            for Y in map(list, combinations(positive, size))
        )
        worst = max(worst, abs(ss_loss(L, positive) + math.log(mass / normalizer)))
    return _timed("perda_ss_forma_fechada", start, worst < SS_ATOL, worst, instances)


@dataclass(slots=True)
class GradcheckReport:
    """Maiores erros relativos dos gradientes analíticos contra diferenças finitas."""

    max_ss_err: float
    max_id_err: float
    instances: int
    tol: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_ss_err <= self.tol and self.max_id_err <= self.tol


def _random_problem(rng: np.random.Generator, n: int, r: int) -> IdProblem:
    labels = rng.integers(0, 2, size=n)
    rep = sorted(rng.choice(n, size=int(rng.integers(1, min(n, r, 3) + 1)), replace=False).tolist())
    per_class = {}
    for class_id in sorted(set(labels.tolist())):
        members = [i for i in range(n) if labels[i] == class_id]
        chosen = [i for i in rep if labels[i] == class_id]
        if chosen:
            per_class[class_id] = (tuple(members), tuple(chosen))
    return IdProblem(support=tuple(range(n)), rep=tuple(rep), per_class=per_class)


def gradcheck(
    instances: int = 100,
    *,
    seed: int = 0,
    lam: float = 0.6,
    beta: float = 2.0,
    h: float = 1e-6,
    tol: float = 1e-5,
    fault: float = 0.0,
    repair: RepairKind = "eigenclip",
    psd_epsilon: float = DEFAULT_PSD_EPSILON,
) -> GradcheckReport:
    """Compara ``∂𝓛_SS/∂q`` e ``∂𝓛_ID/∂V`` com diferenças centrais (n ≤ 8, r ≤ 8).

    ``fault`` soma uma perturbação aos gradientes analíticos para exercitar
    o caminho de falha.
    """

    report = GradcheckReport(0.0, 0.0, instances, tol)
    for k in range(instances):
        rng = np.random.default_rng(seed + k)
        n = int(rng.integers(2, 9))
        r = int(rng.integers(2, 9))
        V, overlaps = random_instance(rng, n, r)
        q = quality_transform(rng.uniform(0.0, 1.0, size=n), beta)
        S = build_similarity(FeatureMatrix(V), overlaps, lam, repair=repair, epsilon=psd_epsilon).S
        positive = sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
        problem = _random_problem(rng, n, r)
        bundle = gradient_bundle(S, V, overlaps, q, lam, positive, problem)

        numeric = finite_diff_bundle(S, V, overlaps, q, lam, positive, problem, h)
        ss_err = relative_error(bundle.d_ss_dq + fault, numeric.d_ss_dq)
        id_err = relative_error(bundle.d_id_dV + fault, numeric.d_id_dV)

        report.max_ss_err = max(report.max_ss_err, ss_err)
        report.max_id_err = max(report.max_id_err, id_err)
        if ss_err > tol or id_err > tol:
            report.failures.append(f"semente {seed + k}: SS {ss_err:.2e}, ID {id_err:.2e}")
    logger.info("Gradcheck: SS %.3e, ID %.3e em %d instâncias", report.max_ss_err, report.max_id_err, instances)
    return report


def check_gradients(
    instances: int = 100,
    seed: int = 0,
    tol: float = 1e-5,
    fault: float = 0.0,
    repair: RepairKind = "eigenclip",
    psd_epsilon: float = DEFAULT_PSD_EPSILON,
) -> CheckResult:
    start = time.perf_counter()
    report = gradcheck(instances, seed=seed, tol=tol, fault=fault, repair=repair, psd_epsilon=psd_epsilon)
    metric = max(report.max_ss_err, report.max_id_err)
    return _timed("gradientes", start, report.passed, metric, instances, "; ".join(report.failures[:3]))


def check_greedy_dominance(
    instances: int = 1000,
    n_max: int = 12,
    seed: int = 2,
    beta: float = 2.0,
    repair: RepairKind = "eigenclip",
    psd_epsilon: float = DEFAULT_PSD_EPSILON,
) -> CheckResult:
    """O custo guloso nunca supera o ótimo exato e nenhuma adição isolada o melhora."""

    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    exact_matches = 0
    violations: list[str] = []
    for k in range(instances):
        n = int(rng.integers(1, n_max + 1))
        V, overlaps = random_instance(rng, n, int(rng.integers(2, 9)))
        lam = float(rng.uniform(0.0, 1.0))
        S = build_similarity(FeatureMatrix(V), overlaps, lam, repair=repair, epsilon=psd_epsilon).S
        q = quality_transform(rng.uniform(0.0, 1.0, size=n), beta)
        greedy = idpp_greedy(S, q)
        exact = exact_map(S, q, n_max=n_max)
        if greedy.final_cost > exact.final_cost + DOMINANCE_ATOL:
            violations.append(f"instância {k}: guloso {greedy.final_cost:.6f} > exato {exact.final_cost:.6f}")
        selected = list(greedy.selected)
        for j in set(range(n)) - set(selected):
            if subset_cost(S, q, selected + [j]) > greedy.final_cost + DOMINANCE_ATOL:
                violations.append(f"instância {k}: adicionar {j} melhora o guloso")
                break
        exact_matches += set(greedy.selected) == set(exact.selected)
    rate = exact_matches / instances if instances else 1.0
    return _timed(
        "dominancia_gulosa", start, not violations, rate, instances,
        f"taxa de acerto exato {rate:.3f}" + ("; " + violations[0] if violations else ""),
    )


def _brute_force_assignment(cost: np.ndarray) -> float:
    rows, cols = cost.shape
    if rows > cols:
        return _brute_force_assignment(cost.T)
    return min(sum(cost[i, p[i]] for i in range(rows)) for p in permutations(range(cols), rows))


def check_hungarian(instances: int = 500, n_max: int = 7, seed: int = 3) -> CheckResult:
    """Custo da atribuição húngara igual ao mínimo por força bruta (custos inteiros)."""

    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(instances):
        shape = tuple(int(v) for v in rng.integers(1, n_max + 1, size=2))
        cost = rng.integers(0, 20, size=shape).astype(float)
        if hungarian(cost).total_cost != _brute_force_assignment(cost):
            mismatches += 1
    return _timed("hungaro_exato", start, mismatches == 0, float(mismatches), instances)


def check_raw_quality_degeneracy(
    instances: int = 50,
    n_max: int = 12,
    seed: int = 4,
    repair: RepairKind = "eigenclip",
    psd_epsilon: float = DEFAULT_PSD_EPSILON,
) -> CheckResult:
    """Com escores crus em (0, 1) como qualidade o guloso devolve sempre ∅."""

    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    non_empty = 0
    for _ in range(instances):
        n = int(rng.integers(1, n_max + 1))
        V, overlaps = random_instance(rng, n, 4)
        S = build_similarity(FeatureMatrix(V), overlaps, repair=repair, epsilon=psd_epsilon).S
        non_empty += bool(idpp_greedy(S, rng.uniform(0.01, 0.99, size=n)).selected)
    return _timed("degenerescencia_escore_cru", start, non_empty == 0, float(non_empty), instances)


def run_selftest(
    seed: int = 0,
    scale: float = 1.0,
    tol: float = 1e-5,
    repair: RepairKind = "eigenclip",
    psd_epsilon: float = DEFAULT_PSD_EPSILON,
) -> list[CheckResult]:
    """Executa todas as verificações; ``scale`` reduz o número de instâncias.

    ``repair`` e ``psd_epsilon`` valem para toda matriz ``S`` montada a partir
    de features e IoU.
    """

    def count(base: int) -> int:
        return max(1, int(round(base * scale)))

    return [
        check_normalization(count(500), seed=seed),
        check_ss_closed_form(count(200), seed=seed + 1),
        check_gradients(count(100), seed=seed, tol=tol, repair=repair, psd_epsilon=psd_epsilon),
        check_greedy_dominance(count(1000), seed=seed + 2, repair=repair, psd_epsilon=psd_epsilon),
        check_hungarian(count(500), seed=seed + 3),
        check_raw_quality_degeneracy(count(50), seed=seed + 4, repair=repair, psd_epsilon=psd_epsilon),
    ]


__all__ = [
    "CheckResult",
    "GradcheckReport",
    "check_gradients",
    "check_greedy_dominance",
    "check_hungarian",
    "check_normalization",
    "check_raw_quality_degeneracy",
    "check_ss_closed_form",
    "gradcheck",
    "random_boxes",
    "random_instance",
    "run_selftest",
]
