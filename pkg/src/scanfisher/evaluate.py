"""Experiment protocols: LOTO identification, comprehension splits, statistics.

Leave-one-text-out cross-validation holds out every scanpath of one text per
fold.  Inside each fold a nested CV over the training texts tunes the fit
regularizer, the SVM box constraint, and the metric ridge by grid search, and
greedily eliminates feature components while doing so improves the inner
accuracy.  Normalization statistics, tuning, and elimination only ever see
training data; this is asserted programmatically.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import FrequencyTable, NormStats, Text, compute_features
from .events import EventBatch, Scanpath, extract_events
from .fisher import (
    default_ridge,
    empirical_information,
    fisher_metric,
    gram_matrix,
    score_matrix,
)
from .fit import FitConfig, fit_model
from .model import ModelParams, batch_loglik
from .svm import KernelProblem, prefix_decision_curve, solve_dual, train_multiclass
from .synth import SynthDataset
from .util import parallel_map

logger = logging.getLogger(__name__)


class EvalError(ValueError):
    pass


class LeakageError(RuntimeError):
    """Test data reached a training-side computation."""


# ---------------------------------------------------------------------------
# statistics

def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank range."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int


WILCOXON_EXACT_MAX_N = 12


def wilcoxon_signed_rank(x, y) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test for paired samples.

    Zero differences are dropped; ties share average ranks.  The exact null
    distribution (all 2^n sign assignments) is used for n <= 12, the normal
    approximation with tie and continuity corrections above.
    """
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    d = d[d != 0.0]
    n = len(d)
    if n < 5:
        raise EvalError(f"need at least 5 non-zero differences, got {n}")
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= WILCOXON_EXACT_MAX_N:
        masks = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
        sums = masks @ ranks
        p_le = float(np.mean(sums <= w_plus))
        p_ge = float(np.mean(sums >= w_plus))
        p = min(1.0, 2.0 * min(p_le, p_ge))
    else:
        mean = n * (n + 1) / 4.0
        _, counts = np.unique(np.abs(d), return_counts=True)
        tie_term = float(np.sum(counts ** 3 - counts)) / 48.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
        if var <= 0:
            raise EvalError("zero variance in signed-rank statistic")
        z = (w_plus - mean - 0.5 * np.sign(w_plus - mean)) / math.sqrt(var)
        p = float(math.erfc(abs(z) / math.sqrt(2.0)))
    return WilcoxonResult(statistic=w_plus, p_value=p, n=n)


def auc_score(labels, values) -> float:
    """Rank-statistic AUC of `values` for separating the two label classes."""
    labels = np.asarray(labels)
    values = np.asarray(values, dtype=float)
    classes = sorted(set(labels.tolist()))
    if len(classes) != 2:
        raise EvalError(f"AUC requires exactly 2 classes, got {classes!r}")
    pos = labels == classes[1]
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    ranks = _average_ranks(values)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# datasets and splits

@dataclass
class ReadingDataset:
    texts: dict[str, Text]
    freq: FrequencyTable
    scanpaths: list[Scanpath]

    @classmethod
    def from_synth(cls, synth: SynthDataset) -> "ReadingDataset":
        return cls(
            texts={t.text_id: t for t in synth.texts},
            freq=synth.freq,
            scanpaths=list(synth.scanpaths),
        )

    def text_ids(self) -> list[str]:
        return sorted(self.texts)

    def reader_ids(self) -> list[str]:
        return sorted({sp.reader_id for sp in self.scanpaths})


def shuffle_reader_labels(dataset: ReadingDataset, seed: int) -> ReadingDataset:
    """Permute reader labels within each text (a bijection per text).

    Keeps one scanpath group per (label, text) pair while destroying the
    association between labels and the generating readers; a control that
    should push identification accuracy to chance.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    readers = dataset.reader_ids()
    mapping: dict[tuple[str, str], str] = {}
    for text_id in dataset.text_ids():
        permuted = [readers[i] for i in rng.permutation(len(readers))]
        for old, new in zip(readers, permuted):
            mapping[(old, text_id)] = new
    shuffled = []
    for sp in dataset.scanpaths:
        new_reader = mapping[(sp.reader_id, sp.text_id)]
        shuffled.append(
            Scanpath(
                reader_id=new_reader,
                text_id=sp.text_id,
                line_id=sp.line_id,
                fixations=sp.fixations,
                label=new_reader,
            )
        )
    return ReadingDataset(texts=dataset.texts, freq=dataset.freq, scanpaths=shuffled)


@dataclass(frozen=True)
class SplitPlan:
    fold_id: str
    train_texts: frozenset[str]
    test_texts: frozenset[str]
    train_readers: frozenset[str] | None = None
    test_readers: frozenset[str] | None = None

    def __post_init__(self):
        if self.train_texts & self.test_texts:
            raise EvalError(f"fold {self.fold_id}: train and test texts overlap")
        if self.train_readers is not None and self.test_readers is not None:
            if self.train_readers & self.test_readers:
                raise EvalError(f"fold {self.fold_id}: train and test readers overlap")


def loto_folds(text_ids: Sequence[str]) -> list[SplitPlan]:
    """One fold per text: train on the rest, test on the held-out text."""
    text_ids = sorted(text_ids)
    if len(text_ids) < 2:
        raise EvalError("leave-one-text-out needs at least 2 texts")
    return [
        SplitPlan(
            fold_id=held_out,
            train_texts=frozenset(t for t in text_ids if t != held_out),
            test_texts=frozenset([held_out]),
        )
        for held_out in text_ids
    ]


def comprehension_splits(reader_ids: Sequence[str], text_ids: Sequence[str]) -> list[SplitPlan]:
    """Four reader- and text-disjoint splits from crossed 50/50 halves."""
    readers = sorted(reader_ids)
    texts = sorted(text_ids)
    if len(readers) < 2 or len(texts) < 2:
        raise EvalError("comprehension splits need >= 2 readers and >= 2 texts")
    r_a, r_b = readers[:len(readers) // 2], readers[len(readers) // 2:]
    t_a, t_b = texts[:len(texts) // 2], texts[len(texts) // 2:]
    combos = [
        ("s0", r_a, t_a, r_b, t_b),
        ("s1", r_a, t_b, r_b, t_a),
        ("s2", r_b, t_a, r_a, t_b),
        ("s3", r_b, t_b, r_a, t_a),
    ]
    return [
        SplitPlan(
            fold_id=name,
            train_texts=frozenset(tt),
            test_texts=frozenset(st),
            train_readers=frozenset(tr),
            test_readers=frozenset(sr),
        )
        for name, tr, tt, sr, st in combos
    ]


# ---------------------------------------------------------------------------
# generative baseline

def generative_classify(events, class_params: Mapping) -> object:
    """argmax_y of the event-sum log-likelihood; ties break to the lowest id."""
    keys = sorted(class_params)
    if not keys:
        raise EvalError("no class models given")
    lls = np.array([batch_loglik(events, class_params[k]) for k in keys])
    return keys[int(lls.argmax())]


# ---------------------------------------------------------------------------
# pipeline configuration and reporting

@dataclass(frozen=True)
class PipelineConfig:
    lambda_grid: tuple[float, ...] = (0.0, 1e-4, 1e-2, 1.0)
    c_grid: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0, 100.0)
    ridge_scales: tuple[float, ...] = (1e-8, 1e-6, 1e-4)
    inner_folds: int = 2
    feature_elimination: bool = True
    run_generative_baseline: bool = True
    svm_tol: float = 1e-3
    fit_tol: float = 1e-6
    fit_max_iter: int = 500
    amp_floor: float = 0.5
    threads: int = 1

    def to_dict(self) -> dict:
        return {
            "lambda_grid": list(self.lambda_grid),
            "c_grid": list(self.c_grid),
            "ridge_scales": list(self.ridge_scales),
            "inner_folds": self.inner_folds,
            "feature_elimination": self.feature_elimination,
            "run_generative_baseline": self.run_generative_baseline,
            "svm_tol": self.svm_tol,
            "fit_tol": self.fit_tol,
            "fit_max_iter": self.fit_max_iter,
            "amp_floor": self.amp_floor,
            "threads": self.threads,
        }


@dataclass
class FoldResult:
    fold_id: str
    accuracy: float
    accuracy_by_lines: list[float]
    n_test_groups: int
    chosen: dict
    baseline_accuracy: float | None = None
    baseline_by_lines: list[float] | None = None
    auc: float | None = None
    majority_accuracy: float | None = None

    def to_dict(self) -> dict:
        return {
            "fold_id": self.fold_id,
            "accuracy": self.accuracy,
            "accuracy_by_lines": self.accuracy_by_lines,
            "n_test_groups": self.n_test_groups,
            "chosen": self.chosen,
            "baseline_accuracy": self.baseline_accuracy,
            "baseline_by_lines": self.baseline_by_lines,
            "auc": self.auc,
            "majority_accuracy": self.majority_accuracy,
        }


@dataclass
class EvalReport:
    mode: str
    folds: list[FoldResult]
    mean_accuracy: float
    stderr_accuracy: float
    accuracy_vs_lines: list[float]
    baseline_mean_accuracy: float | None = None
    baseline_vs_lines: list[float] | None = None
    mean_auc: float | None = None
    stderr_auc: float | None = None
    majority_mean_accuracy: float | None = None
    pairwise_p: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "folds": [f.to_dict() for f in self.folds],
            "mean_accuracy": self.mean_accuracy,
            "stderr_accuracy": self.stderr_accuracy,
            "accuracy_vs_lines": self.accuracy_vs_lines,
            "baseline_mean_accuracy": self.baseline_mean_accuracy,
            "baseline_vs_lines": self.baseline_vs_lines,
            "mean_auc": self.mean_auc,
            "stderr_auc": self.stderr_auc,
            "majority_mean_accuracy": self.majority_mean_accuracy,
            "pairwise_p": self.pairwise_p,
        }


def _stderr(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=float)
    if len(arr) < 2:
        return 0.0
    return float(arr.std(ddof=1) / math.sqrt(len(arr)))


def _aggregate_curves(curves: Sequence[Sequence[float]]) -> list[float]:
    """Mean across folds per prefix length, extending short curves."""
    if not curves:
        return []
    width = max(len(c) for c in curves)
    padded = np.array([list(c) + [c[-1]] * (width - len(c)) for c in curves])
    return padded.mean(axis=0).tolist()


# ---------------------------------------------------------------------------
# fold machinery

@dataclass
class _Instance:
    reader_id: str
    text_id: str
    line_id: int
    label: object
    batch: EventBatch


@dataclass
class _Context:
    """Training instances plus test groups built under leak-free statistics."""

    stats: NormStats
    train: list[_Instance]
    groups: dict[tuple, list[_Instance]]   # (label_key, text_id) -> line instances
    test_text_ids: frozenset[str]


def _assert_no_leakage(stats: NormStats, test_text_ids: frozenset[str]) -> None:
    overlap = stats.source_text_ids & test_text_ids
    if overlap:
        raise LeakageError(
            f"normalization statistics were computed on test texts {sorted(overlap)}"
        )


def _build_context(
    dataset: ReadingDataset,
    train_texts: Sequence[str],
    test_texts: Sequence[str],
    train_sps: Sequence[Scanpath],
    test_sps: Sequence[Scanpath],
    config: PipelineConfig,
    label_of,
) -> _Context:
    train_text_objs = [dataset.texts[t] for t in sorted(train_texts)]
    feats_train, stats = compute_features(train_text_objs, dataset.freq)
    featmap = {f.text_id: f for f in feats_train}
    if test_texts:
        test_text_objs = [dataset.texts[t] for t in sorted(test_texts)]
        feats_test, _ = compute_features(test_text_objs, dataset.freq, stats)
        featmap.update({f.text_id: f for f in feats_test})

    m = stats.num_features

    def make_instances(sps):
        out = []
        for sp in sorted(sps, key=lambda s: (s.text_id, s.reader_id, s.line_id)):
            events = extract_events(sp, dataset.texts[sp.text_id], featmap[sp.text_id],
                                    amp_floor=config.amp_floor)
            out.append(
                _Instance(
                    reader_id=sp.reader_id,
                    text_id=sp.text_id,
                    line_id=sp.line_id,
                    label=label_of(sp),
                    batch=EventBatch.from_events(events, num_features=m),
                )
            )
        return out

    groups: dict[tuple, list[_Instance]] = {}
    for inst in make_instances(test_sps):
        groups.setdefault((inst.label, inst.text_id), []).append(inst)
    for insts in groups.values():
        insts.sort(key=lambda i: i.line_id)

    return _Context(
        stats=stats,
        train=make_instances(train_sps),
        groups={k: groups[k] for k in sorted(groups)},
        test_text_ids=frozenset(test_texts),
    )


def _ridge_from_scale(info: np.ndarray, scale: float) -> float:
    return max(default_ridge(info, scale), 1e-12)


@dataclass
class _FisherStage:
    params: ModelParams
    s_train: np.ndarray
    s_groups: dict[tuple, np.ndarray]
    labels: list


def _fit_stage(ctx: _Context, config: PipelineConfig, lam: float, keep: tuple[int, ...]) -> _FisherStage:
    _assert_no_leakage(ctx.stats, ctx.test_text_ids)
    batches = [inst.batch.select_features(keep) for inst in ctx.train]
    pooled = EventBatch.concat(batches)
    params = fit_model(
        pooled,
        FitConfig(lam=lam, tol=config.fit_tol, max_iter=config.fit_max_iter),
    )
    s_train = score_matrix(batches, params)
    s_groups = {
        key: score_matrix([i.batch.select_features(keep) for i in insts], params)
        for key, insts in ctx.groups.items()
    }
    labels = [inst.label for inst in ctx.train]
    return _FisherStage(params=params, s_train=s_train, s_groups=s_groups, labels=labels)


@dataclass
class _KernelStage:
    gram: np.ndarray
    group_rows: dict[tuple, np.ndarray]


def _kernel_stage(stage: _FisherStage, ridge_scale: float) -> _KernelStage:
    info = empirical_information(stage.s_train)
    metric = fisher_metric(stage.s_train, _ridge_from_scale(info, ridge_scale))
    return _KernelStage(
        gram=gram_matrix(metric, stage.s_train),
        group_rows={
            key: gram_matrix(metric, stage.s_train, other=s_test)
            for key, s_test in stage.s_groups.items()
        },
    )


def _identification_curves(
    stage: _FisherStage,
    kernels: _KernelStage,
    config: PipelineConfig,
    C: float,
) -> dict[tuple, list]:
    """Per test group, the predicted class for every line prefix 1..L."""
    mc = train_multiclass(kernels.gram, stage.labels, C, tol=config.svm_tol,
                          threads=config.threads)
    out = {}
    for key, rows in kernels.group_rows.items():
        curve = prefix_decision_curve(mc, rows)
        out[key] = [mc.classes[int(row.argmax())] for row in curve]
    return out


def _accuracy_from_curves(curves: dict[tuple, list]) -> tuple[float, list[float]]:
    """Full-lines accuracy and the accuracy-by-prefix curve over groups."""
    width = max(len(preds) for preds in curves.values())
    by_lines = []
    for ell in range(1, width + 1):
        hits = [
            preds[min(ell, len(preds)) - 1] == key[0]
            for key, preds in curves.items()
        ]
        by_lines.append(float(np.mean(hits)))
    return by_lines[-1], by_lines


@dataclass
class _Tuned:
    lam: float
    ridge_scale: float
    C: float
    keep: tuple[int, ...]
    inner_accuracy: float

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "ridge_scale": self.ridge_scale,
            "C": self.C,
            "kept_features": list(self.keep),
            "inner_accuracy": self.inner_accuracy,
        }


def _grid_search(contexts: list[_Context], config: PipelineConfig, keep: tuple[int, ...]):
    """Best (accuracy, lam, ridge_scale, C) for one feature subset.

    Deterministic: combos are scanned in grid order and only a strictly
    better accuracy replaces the incumbent.
    """
    best = None
    for lam in config.lambda_grid:
        stages = [_fit_stage(ctx, config, lam, keep) for ctx in contexts]
        for ridge_scale in config.ridge_scales:
            kernels = [_kernel_stage(stage, ridge_scale) for stage in stages]
            for C in config.c_grid:
                accs = []
                for stage, kern in zip(stages, kernels):
                    curves = _identification_curves(stage, kern, config, C)
                    acc, _ = _accuracy_from_curves(curves)
                    accs.append(acc)
                mean_acc = float(np.mean(accs))
                if best is None or mean_acc > best[0]:
                    best = (mean_acc, lam, ridge_scale, C)
    return best


def _tune_identification(contexts: list[_Context], config: PipelineConfig, m: int) -> _Tuned:
    keep = tuple(range(m))
    acc, lam, ridge_scale, C = _grid_search(contexts, config, keep)
    if config.feature_elimination and m > 1:
        while len(keep) > 1:
            best_candidate = None
            for drop in keep[1:]:  # bias is never removable
                cand = tuple(i for i in keep if i != drop)
                result = _grid_search(contexts, config, cand)
                if best_candidate is None or result[0] > best_candidate[0][0]:
                    best_candidate = (result, cand)
            if best_candidate is None or best_candidate[0][0] <= acc:
                break
            (acc, lam, ridge_scale, C), keep = best_candidate
            logger.debug("eliminated features down to %s (inner acc %.3f)", keep, acc)
    return _Tuned(lam=lam, ridge_scale=ridge_scale, C=C, keep=keep, inner_accuracy=acc)


# ---------------------------------------------------------------------------
# generative baseline

def _baseline_curves(ctx: _Context, config: PipelineConfig, lam: float) -> dict[tuple, list]:
    by_reader: dict[str, list[EventBatch]] = {}
    for inst in ctx.train:
        by_reader.setdefault(inst.label, []).append(inst.batch)
    class_params = {
        reader: fit_model(
            EventBatch.concat(batches),
            FitConfig(lam=lam, tol=config.fit_tol, max_iter=config.fit_max_iter),
        )
        for reader, batches in sorted(by_reader.items())
    }
    keys = sorted(class_params)
    out = {}
    for gkey, insts in ctx.groups.items():
        per_line = np.array(
            [[batch_loglik(inst.batch, class_params[k]) for k in keys] for inst in insts]
        )
        cum = np.cumsum(per_line, axis=0)
        out[gkey] = [keys[int(row.argmax())] for row in cum]
    return out


def _tune_baseline(contexts: list[_Context], config: PipelineConfig) -> float:
    best = None
    for lam in config.lambda_grid:
        accs = []
        for ctx in contexts:
            curves = _baseline_curves(ctx, config, lam)
            acc, _ = _accuracy_from_curves(curves)
            accs.append(acc)
        mean_acc = float(np.mean(accs))
        if best is None or mean_acc > best[0]:
            best = (mean_acc, lam)
    return best[1]


# ---------------------------------------------------------------------------
# leave-one-text-out identification

def _inner_holdouts(train_texts: list[str], k: int) -> list[str]:
    if k >= len(train_texts):
        k = len(train_texts) - 1
    if k < 1:
        return []
    idx = np.unique(np.round(np.linspace(0, len(train_texts) - 1, k)).astype(int))
    return [train_texts[i] for i in idx]


def _run_identification_fold(dataset: ReadingDataset, fold: SplitPlan, config: PipelineConfig) -> FoldResult:
    label_of = lambda sp: sp.reader_id
    all_readers = dataset.reader_ids()
    train_sps = [sp for sp in dataset.scanpaths if sp.text_id in fold.train_texts]
    test_sps = [sp for sp in dataset.scanpaths if sp.text_id in fold.test_texts]
    missing = set(all_readers) - {sp.reader_id for sp in train_sps}
    if missing:
        raise EvalError(f"fold {fold.fold_id}: readers {sorted(missing)} absent from training data")

    train_texts = sorted(fold.train_texts)
    inner_contexts = []
    for holdout in _inner_holdouts(train_texts, config.inner_folds):
        inner_train_texts = [t for t in train_texts if t != holdout]
        inner_train = [sp for sp in train_sps if sp.text_id != holdout]
        inner_test = [sp for sp in train_sps if sp.text_id == holdout]
        inner_contexts.append(
            _build_context(dataset, inner_train_texts, [holdout], inner_train, inner_test,
                           config, label_of)
        )

    ctx = _build_context(dataset, train_texts, sorted(fold.test_texts), train_sps, test_sps,
                         config, label_of)
    m = ctx.stats.num_features

    if inner_contexts:
        tuned = _tune_identification(inner_contexts, config, m)
    else:
        tuned = _Tuned(
            lam=config.lambda_grid[0],
            ridge_scale=config.ridge_scales[0],
            C=config.c_grid[0],
            keep=tuple(range(m)),
            inner_accuracy=float("nan"),
        )

    stage = _fit_stage(ctx, config, tuned.lam, tuned.keep)
    kernels = _kernel_stage(stage, tuned.ridge_scale)
    curves = _identification_curves(stage, kernels, config, tuned.C)
    accuracy, by_lines = _accuracy_from_curves(curves)

    baseline_acc = None
    baseline_by_lines = None
    if config.run_generative_baseline:
        if inner_contexts:
            base_lam = _tune_baseline(inner_contexts, config)
        else:
            base_lam = config.lambda_grid[0]
        base_curves = _baseline_curves(ctx, config, base_lam)
        baseline_acc, baseline_by_lines = _accuracy_from_curves(base_curves)

    return FoldResult(
        fold_id=fold.fold_id,
        accuracy=accuracy,
        accuracy_by_lines=by_lines,
        n_test_groups=len(curves),
        chosen=tuned.to_dict(),
        baseline_accuracy=baseline_acc,
        baseline_by_lines=baseline_by_lines,
    )


def loto_cv(dataset: ReadingDataset, config: PipelineConfig | None = None) -> EvalReport:
    """Leave-one-text-out reader identification with nested tuning."""
    config = config or PipelineConfig()
    folds = loto_folds(dataset.text_ids())
    results = parallel_map(
        lambda fold: _run_identification_fold(dataset, fold, config),
        folds,
        threads=config.threads,
    )

    accs = [r.accuracy for r in results]
    report = EvalReport(
        mode="identification",
        folds=results,
        mean_accuracy=float(np.mean(accs)),
        stderr_accuracy=_stderr(accs),
        accuracy_vs_lines=_aggregate_curves([r.accuracy_by_lines for r in results]),
    )
    if config.run_generative_baseline:
        base_accs = [r.baseline_accuracy for r in results]
        report.baseline_mean_accuracy = float(np.mean(base_accs))
        report.baseline_vs_lines = _aggregate_curves([r.baseline_by_lines for r in results])
        try:
            test = wilcoxon_signed_rank(accs, base_accs)
            report.pairwise_p["fisher_svm_vs_generative"] = test.p_value
        except EvalError:
            report.pairwise_p["fisher_svm_vs_generative"] = None
    return report


# ---------------------------------------------------------------------------
# binary comprehension evaluation

def _binary_decisions(
    stage: _FisherStage,
    kernels: _KernelStage,
    config: PipelineConfig,
    C: float,
    positive,
) -> tuple[list, np.ndarray]:
    y = np.where(np.array(stage.labels, dtype=object) == positive, 1.0, -1.0)
    if len(set(y.tolist())) < 2:
        raise EvalError("single-class training split")
    model = solve_dual(KernelProblem(gram=kernels.gram, labels=y, C=C), tol=config.svm_tol)
    keys = sorted(kernels.group_rows)
    decisions = np.array([
        float(model.decision_values(kernels.group_rows[key]).mean()) for key in keys
    ])
    return keys, decisions


def _binary_accuracy(keys, decisions, positive) -> float:
    hits = [
        (decision >= 0) == (key[0] == positive)
        for key, decision in zip(keys, decisions)
    ]
    return float(np.mean(hits))


def binary_comprehension_eval(dataset: ReadingDataset, config: PipelineConfig | None = None) -> EvalReport:
    """Binary label prediction over 4 reader- and text-disjoint 50/50 splits."""
    config = config or PipelineConfig()
    labels = {sp.label for sp in dataset.scanpaths}
    if len(labels) != 2 or None in labels:
        raise EvalError(f"comprehension mode needs exactly 2 scanpath labels, got {sorted(map(str, labels))}")
    classes = sorted(labels)
    positive = classes[1]
    label_of = lambda sp: sp.label

    results = []
    for split in comprehension_splits(dataset.reader_ids(), dataset.text_ids()):
        train_sps = [
            sp for sp in dataset.scanpaths
            if sp.text_id in split.train_texts and sp.reader_id in split.train_readers
        ]
        test_sps = [
            sp for sp in dataset.scanpaths
            if sp.text_id in split.test_texts and sp.reader_id in split.test_readers
        ]
        if len({sp.label for sp in train_sps}) < 2:
            raise EvalError(f"fold {split.fold_id}: single-class training split")

        ctx = _build_context(dataset, sorted(split.train_texts), sorted(split.test_texts),
                             train_sps, test_sps, config, label_of)
        m = ctx.stats.num_features

        tuned = _tune_comprehension(dataset, split, train_sps, config, label_of, positive, m)

        stage = _fit_stage(ctx, config, tuned.lam, tuned.keep)
        kernels = _kernel_stage(stage, tuned.ridge_scale)
        keys, decisions = _binary_decisions(stage, kernels, config, tuned.C, positive)
        accuracy = _binary_accuracy(keys, decisions, positive)
        group_labels = [k[0] for k in keys]
        auc = auc_score(group_labels, decisions) if len(set(group_labels)) == 2 else None

        train_group_labels = {}
        for inst in ctx.train:
            train_group_labels[(inst.reader_id, inst.text_id)] = inst.label
        counts = {c: 0 for c in classes}
        for lbl in train_group_labels.values():
            counts[lbl] += 1
        majority = max(classes, key=lambda c: (counts[c], -classes.index(c)))
        majority_acc = float(np.mean([lbl == majority for lbl in group_labels]))

        results.append(
            FoldResult(
                fold_id=split.fold_id,
                accuracy=accuracy,
                accuracy_by_lines=[accuracy],
                n_test_groups=len(keys),
                chosen=tuned.to_dict(),
                auc=auc,
                majority_accuracy=majority_acc,
            )
        )

    accs = [r.accuracy for r in results]
    aucs = [r.auc for r in results if r.auc is not None]
    return EvalReport(
        mode="comprehension",
        folds=results,
        mean_accuracy=float(np.mean(accs)),
        stderr_accuracy=_stderr(accs),
        accuracy_vs_lines=_aggregate_curves([[r.accuracy] for r in results]),
        mean_auc=float(np.mean(aucs)) if aucs else None,
        stderr_auc=_stderr(aucs) if aucs else None,
        majority_mean_accuracy=float(np.mean([r.majority_accuracy for r in results])),
    )


def _tune_comprehension(dataset, split, train_sps, config, label_of, positive, m) -> _Tuned:
    """One inner context from re-halving the training readers and texts."""
    tr_readers = sorted(split.train_readers)
    tr_texts = sorted(split.train_texts)
    inner = None
    if len(tr_readers) >= 2 and len(tr_texts) >= 2:
        r_in, r_out = tr_readers[:len(tr_readers) // 2], tr_readers[len(tr_readers) // 2:]
        t_in, t_out = tr_texts[:len(tr_texts) // 2], tr_texts[len(tr_texts) // 2:]
        inner_train = [sp for sp in train_sps if sp.reader_id in r_in and sp.text_id in t_in]
        inner_test = [sp for sp in train_sps if sp.reader_id in r_out and sp.text_id in t_out]
        if (
            inner_train and inner_test
            and len({sp.label for sp in inner_train}) == 2
        ):
            inner = _build_context(dataset, t_in, t_out, inner_train, inner_test, config, label_of)

    keep_full = tuple(range(m))
    if inner is None:
        return _Tuned(config.lambda_grid[0], config.ridge_scales[0], config.c_grid[0],
                      keep_full, float("nan"))

    def grid(keep):
        best = None
        for lam in config.lambda_grid:
            stage = _fit_stage(inner, config, lam, keep)
            for ridge_scale in config.ridge_scales:
                kernels = _kernel_stage(stage, ridge_scale)
                for C in config.c_grid:
                    keys, decisions = _binary_decisions(stage, kernels, config, C, positive)
                    acc = _binary_accuracy(keys, decisions, positive)
                    if best is None or acc > best[0]:
                        best = (acc, lam, ridge_scale, C)
        return best

    acc, lam, ridge_scale, C = grid(keep_full)
    keep = keep_full
    if config.feature_elimination and m > 1:
        while len(keep) > 1:
            best_candidate = None
            for drop in keep[1:]:
                cand = tuple(i for i in keep if i != drop)
                result = grid(cand)
                if best_candidate is None or result[0] > best_candidate[0][0]:
                    best_candidate = (result, cand)
            if best_candidate is None or best_candidate[0][0] <= acc:
                break
            (acc, lam, ridge_scale, C), keep = best_candidate
    return _Tuned(lam=lam, ridge_scale=ridge_scale, C=C, keep=keep, inner_accuracy=acc)


# ---------------------------------------------------------------------------
# report serialization

def write_report_json(path, report: EvalReport, provenance: dict | None = None) -> None:
    payload = report.to_dict()
    if provenance is not None:
        payload["_provenance"] = provenance
    from .util import write_json

    write_json(path, payload)


def write_report_csv(path, report: EvalReport, provenance_comment: str | None = None) -> None:
    """One row per fold x lines-used, for external plotting."""
    lines = []
    if provenance_comment:
        lines.append(f"# {provenance_comment}")
    lines.append("fold,lines_used,accuracy,baseline_accuracy,auc")
    for fold in report.folds:
        for ell, acc in enumerate(fold.accuracy_by_lines, start=1):
            base = ""
            if fold.baseline_by_lines is not None:
                base = repr(fold.baseline_by_lines[min(ell, len(fold.baseline_by_lines)) - 1])
            auc = repr(fold.auc) if fold.auc is not None else ""
            lines.append(f"{fold.fold_id},{ell},{acc!r},{base},{auc}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def summarize_report(payload: dict) -> str:
    """Human-readable summary of a report JSON payload."""
    out = [f"mode: {payload['mode']}"]
    out.append(
        f"accuracy: {payload['mean_accuracy']:.4f} +/- {payload['stderr_accuracy']:.4f}"
        f" over {len(payload['folds'])} folds"
    )
    if payload.get("baseline_mean_accuracy") is not None:
        out.append(f"generative baseline: {payload['baseline_mean_accuracy']:.4f}")
    if payload.get("mean_auc") is not None:
        out.append(f"auc: {payload['mean_auc']:.4f} +/- {payload['stderr_auc']:.4f}")
    if payload.get("majority_mean_accuracy") is not None:
        out.append(f"majority baseline: {payload['majority_mean_accuracy']:.4f}")
    curve = payload.get("accuracy_vs_lines") or []
    if len(curve) > 1:
        rendered = " ".join(f"{v:.3f}" for v in curve)
        out.append(f"accuracy vs lines read: {rendered}")
    for name, p in (payload.get("pairwise_p") or {}).items():
        out.append(f"wilcoxon {name}: p={p}" if p is not None else f"wilcoxon {name}: n/a")
    return "\n".join(out)
