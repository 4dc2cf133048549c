"""Quantitative artifacts of a run: learning curves, pairwise winrates,
sample complexity, score-fidelity correlations, cumulative-accuracy
differences, token-distribution distances, and the report emitter.

Reports are deterministic: CSV tables (RFC-4180) plus static SVG figures
whose bytes are stable across re-emission for the same inputs.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .util import config_hash


@dataclass(frozen=True)
class CurvePoint:
    n: int
    mean: float
    se: float
    replicates: int

    def __post_init__(self):
        if self.se < 0:
            raise ValidationError("standard error must be >= 0")


@dataclass(frozen=True)
class LearningCurve:
    """Replicate-aggregated performance against training-set size."""

    label: str
    points: tuple[CurvePoint, ...]

    def __post_init__(self):
        sizes = [p.n for p in self.points]
        if sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
            raise ValidationError(f"curve {self.label!r}: sizes must strictly increase")

    def grid(self) -> tuple[int, ...]:
        return tuple(p.n for p in self.points)


@dataclass(frozen=True)
class WinrateMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray          # counts[i, j] = times i beat j
    comparisons: int            # comparisons entering each ordered cell
    alpha: float

    def column_means(self) -> np.ndarray:
        """Fraction of comparisons each algorithm lost, averaged over
        opponents; the summary row where lower is better."""
        k = len(self.labels)
        if k < 2 or self.comparisons == 0:
            return np.zeros(k)
        return self.counts.sum(axis=0) / (self.comparisons * (k - 1))


def winrate(
    curves: Mapping[str, Mapping[str, LearningCurve]], alpha: float = 1.0
) -> WinrateMatrix:
    """Pairwise winrate over every (dataset, size) cell: i beats j when
    mean_i - alpha*se_i > mean_j + alpha*se_j. Ties count for neither side."""
    labels: list[str] = []
    for dataset_curves in curves.values():
        for label in dataset_curves:
            if label not in labels:
                labels.append(label)
    if len(labels) < 2:
        raise ValidationError("winrate needs at least two algorithms")
    counts = np.zeros((len(labels), len(labels)), dtype=int)
    comparisons = 0
    for dataset, dataset_curves in curves.items():
        missing = [label for label in labels if label not in dataset_curves]
        if missing:
            raise ValidationError(f"dataset {dataset!r} lacks curves for {missing}")
        grids = {c.grid() for c in dataset_curves.values()}
        if len(grids) != 1:
            raise ValidationError(f"dataset {dataset!r}: algorithms disagree on the size grid")
        grid = grids.pop()
        comparisons += len(grid)
        for idx, n in enumerate(grid):
            for i, label_i in enumerate(labels):
                point_i = dataset_curves[label_i].points[idx]
                for j, label_j in enumerate(labels):
                    if i == j:
                        continue
                    point_j = dataset_curves[label_j].points[idx]
                    if point_i.mean - alpha * point_i.se > point_j.mean + alpha * point_j.se:
                        counts[i, j] += 1
    return WinrateMatrix(tuple(labels), counts, comparisons, alpha)


def sample_complexity(curve: LearningCurve, tau: float) -> Optional[int]:
    """Smallest measured size reaching mean performance tau; no interpolation."""
    if not curve.points:
        raise ValidationError("sample complexity needs a non-empty curve")
    for point in curve.points:
        if point.mean >= tau:
            return point.n
    return None


# -- rank correlation ------------------------------------------------------------


def _average_ranks(values: Sequence[float]) -> np.ndarray:
    order = np.argsort(np.asarray(values), kind="stable")
    ranks = np.empty(len(values), dtype=float)
    sorted_values = np.asarray(values)[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i: j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Spearman rank correlation with average ranks for ties; two-sided
    p-value from the t approximation."""
    if len(xs) != len(ys):
        raise ValidationError("spearman inputs must have equal length")
    n = len(xs)
    if n < 3:
        raise ValidationError("spearman needs at least 3 pairs")
    if len(set(xs)) == 1 or len(set(ys)) == 1:
        raise ValidationError("rank correlation undefined for a constant vector")
    rank_x = _average_ranks(xs)
    rank_y = _average_ranks(ys)
    rank_x = rank_x - rank_x.mean()
    rank_y = rank_y - rank_y.mean()
    rho = float(
        (rank_x @ rank_y) / math.sqrt((rank_x @ rank_x) * (rank_y @ rank_y))
    )
    rho = max(-1.0, min(1.0, rho))
    if abs(rho) == 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * _student_t_sf(abs(t), n - 2)
    return rho, p


def _student_t_sf(t: float, df: int) -> float:
    """Survival function of Student's t via the regularized incomplete beta."""
    x = df / (df + t * t)
    return 0.5 * _reg_incomplete_beta(df / 2.0, 0.5, x)


def _reg_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _beta_cf(a: float, b: float, x: float) -> float:
    # Lentz's continued fraction for the incomplete beta.
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 200):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-12:
            break
    return h


# -- cumulative accuracy ----------------------------------------------------------


def random_order(n: int, seed: int) -> list[int]:
    """The seeded random ordering the cumulative-difference curve compares to."""
    return [int(i) for i in np.random.default_rng(seed).permutation(n)]


def cumulative_accuracy_diff(
    correctness: Sequence[int], score_order: Sequence[int], seed: int
) -> list[float]:
    """Per prefix length k: random-order prefix accuracy minus score-order
    prefix accuracy, in percentage points."""
    n = len(correctness)
    if sorted(score_order) != list(range(n)):
        raise ValidationError("score_order must be a permutation of range(n)")
    rand = random_order(n, seed)
    values = np.asarray(correctness, dtype=float)
    random_csum = np.cumsum(values[rand])
    score_csum = np.cumsum(values[list(score_order)])
    lengths = np.arange(1, n + 1)
    return (100.0 * (random_csum - score_csum) / lengths).tolist()


# -- token distribution distance ----------------------------------------------------


def whitespace_tokens(text: str) -> list[str]:
    return text.split()


def token_histogram(corpus, tokenizer: Callable[[str], list[str]] = whitespace_tokens) -> Counter:
    counts: Counter = Counter()
    for sample in corpus:
        counts.update(tokenizer(sample.question))
        counts.update(tokenizer(sample.answer))
    return counts


def tvd(hist_a: Mapping[str, float], hist_b: Mapping[str, float]) -> float:
    """Total variation distance between two normalized frequency histograms."""
    total_a = sum(hist_a.values())
    total_b = sum(hist_b.values())
    if total_a <= 0 or total_b <= 0:
        raise ValidationError("histograms must have positive mass")
    keys = set(hist_a) | set(hist_b)
    return 0.5 * sum(
        abs(hist_a.get(k, 0.0) / total_a - hist_b.get(k, 0.0) / total_b) for k in keys
    )


def token_tvd(corpus_a, corpus_b, tokenizer: Callable[[str], list[str]] = whitespace_tokens) -> float:
    """TVD between the empirical token distributions of two corpora."""
    if len(corpus_a) == 0 or len(corpus_b) == 0:
        raise ValidationError("token TVD needs two non-empty corpora")
    return tvd(token_histogram(corpus_a, tokenizer), token_histogram(corpus_b, tokenizer))


# -- report emission ------------------------------------------------------------------

REPORT_STEMS = (
    "learning-curve.csv",
    "learning-curve.svg",
    "winrate.svg",
    "fidelity-scatter.svg",
    "cumulative-diff.svg",
    "tvd.csv",
)


def emit_report(manifests: Sequence, output_dir) -> list[Path]:
    """Render every analysis artifact for the given completed runs.

    File names derive from the combined config hashes; emission is
    deterministic so re-running produces byte-identical files.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .engine import fidelity_table, load_iteration_children

    if not manifests:
        raise ValidationError("emit_report needs at least one manifest")
    for manifest in manifests:
        manifest.require_complete()
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    stem = config_hash(sorted(m.config_hash for m in manifests))[:12]
    plt.rcParams["svg.hashsalt"] = stem
    written: list[Path] = []

    curves = [(m, m.learning_curve()) for m in manifests]
    multi_dataset = len({m.dataset_label() for m in manifests}) > 1

    def plot_label(manifest) -> str:
        if multi_dataset:
            return f"{manifest.label()} [{manifest.dataset_label()}]"
        return manifest.label()

    # Learning-curve table.
    csv_path = output_dir / f"{stem}-learning-curve.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "dataset", "n", "mean", "se", "replicates"])
        for manifest, curve in curves:
            for point in curve.points:
                writer.writerow(
                    [manifest.label(), manifest.dataset_label(), point.n,
                     repr(point.mean), repr(point.se), point.replicates]
                )
    written.append(csv_path)

    # Learning-curve figure.
    fig, ax = plt.subplots(figsize=(6, 4))
    for manifest, curve in sorted(curves, key=lambda pair: plot_label(pair[0])):
        ns = [p.n for p in curve.points]
        means = [p.mean for p in curve.points]
        ses = [p.se for p in curve.points]
        ax.errorbar(ns, means, yerr=ses, marker="o", capsize=3, label=plot_label(manifest))
    ax.set_xlabel("training-set size n")
    ax.set_ylabel("test accuracy")
    ax.legend()
    ax.grid(True, alpha=0.3)
    written.append(_save_svg(fig, output_dir / f"{stem}-learning-curve.svg"))

    # Winrate heatmap (single-algorithm reports render a placeholder).
    datasets: dict[str, dict[str, LearningCurve]] = {}
    for manifest, curve in curves:
        datasets.setdefault(manifest.dataset_label(), {})[manifest.label()] = curve
    algorithm_count = len({m.label() for m in manifests})
    fig, ax = plt.subplots(figsize=(5, 4.5))
    if algorithm_count >= 2:
        matrix = winrate(datasets)
        display = np.vstack([matrix.counts, matrix.column_means()[None, :] * matrix.comparisons])
        ax.imshow(display, cmap="viridis")
        ax.set_xticks(range(len(matrix.labels)), matrix.labels, rotation=45, ha="right")
        ax.set_yticks(
            range(len(matrix.labels) + 1), list(matrix.labels) + ["mean (lower=better)"]
        )
        for i in range(display.shape[0]):
            for j in range(display.shape[1]):
                ax.text(j, i, f"{display[i, j]:.2f}", ha="center", va="center", color="w", fontsize=8)
        ax.set_title(f"pairwise winrate (alpha={matrix.alpha:g})")
    else:
        ax.text(0.5, 0.5, "winrate needs two algorithms", ha="center", va="center")
        ax.set_axis_off()
    written.append(_save_svg(fig, output_dir / f"{stem}-winrate.svg"))

    # Fidelity scatter: original selection scores vs synthetic-child scores.
    fig, ax = plt.subplots(figsize=(5, 4.5))
    any_points = False
    for manifest in manifests:
        table = fidelity_table(manifest)
        if table:
            parent = [row[0] for row in table]
            child = [row[1] for row in table]
            ax.scatter(parent, child, s=8, alpha=0.5, label=manifest.label())
            any_points = True
    if any_points:
        ax.set_xlabel("original sample score")
        ax.set_ylabel("synthetic sample score")
        ax.legend()
        ax.grid(True, alpha=0.3)
    else:
        ax.text(0.5, 0.5, "no fidelity artifacts recorded", ha="center", va="center")
        ax.set_axis_off()
    written.append(_save_svg(fig, output_dir / f"{stem}-fidelity-scatter.svg"))

    # Cumulative-accuracy difference curves.
    fig, ax = plt.subplots(figsize=(6, 4))
    drew = False
    for manifest in manifests:
        children = load_iteration_children(manifest)
        for key, (correct, order, seed) in sorted(children.items()):
            if len(correct) >= 2:
                curve = cumulative_accuracy_diff(correct, order, seed)
                ax.plot(
                    range(1, len(curve) + 1), curve,
                    label=f"{manifest.label()} {key}", alpha=0.8,
                )
                drew = True
    if drew:
        ax.axhline(0.0, color="k", linewidth=0.8)
        ax.set_xlabel("synthetic samples seen")
        ax.set_ylabel("random minus score-ordered accuracy (points)")
        ax.legend(fontsize=7)
        ax.grid(True, alpha=0.3)
    else:
        ax.text(0.5, 0.5, "no per-child verdicts recorded", ha="center", va="center")
        ax.set_axis_off()
    written.append(_save_svg(fig, output_dir / f"{stem}-cumulative-diff.svg"))

    # TVD-vs-iteration table.
    tvd_path = output_dir / f"{stem}-tvd.csv"
    with tvd_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algorithm", "replicate", "iteration", "tvd_to_seed"])
        for manifest in manifests:
            for replicate, iteration, value in manifest.tvd_series():
                writer.writerow([manifest.label(), replicate, iteration, repr(value)])
    written.append(tvd_path)

    return written


def _save_svg(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt
    plt.close(fig)
    return path
