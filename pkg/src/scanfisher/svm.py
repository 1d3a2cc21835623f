"""Dual soft-margin SVM on a precomputed kernel.

The solver maximizes the standard dual

    max_a  sum a_i - 1/2 sum_ij a_i a_j y_i y_j K_ij
    s.t.   0 <= a_i <= C,  sum a_i y_i = 0

by SMO-style pairwise updates on the maximal violating pair, stopping when
the largest KKT violation falls below `tol`.  One-vs-rest reduction handles
multiclass reader identification over a single shared Gram matrix; text-level
predictions average per-line decision values.
"""

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_TAU = 1e-12
SUPPORT_EPS = 1e-12


class SvmError(ValueError):
    """Invalid kernel problem or solver failure."""


@dataclass
class KernelProblem:
    gram: np.ndarray
    labels: np.ndarray
    C: float

    def __post_init__(self):
        self.gram = np.asarray(self.gram, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        n = self.gram.shape[0]
        if self.gram.shape != (n, n):
            raise SvmError(f"gram must be square, got {self.gram.shape}")
        if self.labels.shape != (n,):
            raise SvmError("labels length must match gram size")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise SvmError("labels must be -1 or +1")
        if not self.C > 0:
            raise SvmError("C must be > 0")
        scale = 1.0 + float(np.abs(self.gram).max(initial=0.0))
        if float(np.abs(self.gram - self.gram.T).max(initial=0.0)) > 1e-8 * scale:
            raise SvmError("gram matrix is not symmetric")

    @property
    def n(self) -> int:
        return self.gram.shape[0]


@dataclass
class SvmModel:
    alpha: np.ndarray          # (N,) dual coefficients in [0, C]
    y: np.ndarray              # (N,) training labels
    bias: float
    C: float
    support: np.ndarray        # indices with alpha > SUPPORT_EPS
    kkt_violation: float       # final max violation (m - M)
    n_iterations: int
    objective_trace: list[float] | None = None

    def decision_value(self, k_row: np.ndarray) -> float:
        """sum_i alpha_i y_i k_row[i] + b for one test instance's kernel row."""
        k_row = np.asarray(k_row, dtype=float)
        if k_row.shape != self.alpha.shape:
            raise SvmError(f"kernel row length {k_row.shape} != training size {self.alpha.shape}")
        sv = self.support
        return float((self.alpha[sv] * self.y[sv]) @ k_row[sv] + self.bias)

    def decision_values(self, k_rows: np.ndarray) -> np.ndarray:
        k_rows = np.atleast_2d(np.asarray(k_rows, dtype=float))
        sv = self.support
        return k_rows[:, sv] @ (self.alpha[sv] * self.y[sv]) + self.bias

    def to_dict(self) -> dict:
        sv = self.support
        return {
            "alphas": self.alpha[sv].tolist(),
            "support": sv.tolist(),
            "y_support": self.y[sv].tolist(),
            "bias": self.bias,
            "C": self.C,
            "n_train": int(len(self.alpha)),
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "SvmModel":
        n = int(obj["n_train"])
        alpha = np.zeros(n)
        y = np.zeros(n)
        support = np.asarray(obj["support"], dtype=int)
        alpha[support] = np.asarray(obj["alphas"], dtype=float)
        y[support] = np.asarray(obj["y_support"], dtype=float)
        return cls(
            alpha=alpha,
            y=y,
            bias=float(obj["bias"]),
            C=float(obj["C"]),
            support=support,
            kkt_violation=float("nan"),
            n_iterations=0,
        )


def _dual_objective(alpha: np.ndarray, grad: np.ndarray) -> float:
    # grad = Q alpha - 1, so alpha^T Q alpha = alpha . (grad + 1)
    return float(alpha.sum() - 0.5 * (alpha @ (grad + 1.0)))


def solve_dual(
    problem: KernelProblem,
    tol: float = 1e-3,
    max_iter: int | None = None,
    record_objective: bool = False,
) -> SvmModel:
    """SMO solver for the dual problem on a precomputed kernel.

    Selection follows the maximal-violating-pair rule; convergence is declared
    when the violation gap m(alpha) - M(alpha) < tol, which bounds every KKT
    violation by tol once the bias is set from the free support vectors.
    """
    K = problem.gram
    y = problem.labels
    C = problem.C
    n = problem.n
    if max_iter is None:
        max_iter = max(100_000, 200 * n)

    alpha = np.zeros(n)
    grad = -np.ones(n)  # d/da of 1/2 a^T Q a - sum a at a = 0
    diag = np.diag(K).copy()
    diag_abs_max = float(np.abs(diag).max(initial=0.0))
    pos = y > 0
    neg = ~pos
    trace: list[float] | None = [] if record_objective else None

    it = 0
    m_val = M_val = 0.0
    while True:
        minus_y_grad = -y * grad
        up = (pos & (alpha < C)) | (neg & (alpha > 0))
        low = (pos & (alpha > 0)) | (neg & (alpha < C))
        if not up.any() or not low.any():
            m_val = M_val = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(minus_y_grad[up])])
        m_val = float(minus_y_grad[i])
        M_val = float(minus_y_grad[low].min())
        if m_val - M_val < tol:
            break
        if it >= max_iter:
            logger.warning(
                "SMO stopped at max_iter=%d with violation %.3g (tol %.3g)",
                max_iter, m_val - M_val, tol,
            )
            break

        # second-order selection of j: maximal analytic gain among violators
        quad_all = diag[i] + diag - 2.0 * K[:, i]
        if float(quad_all.min()) < -1e-8 * (abs(diag[i]) + diag_abs_max + 1.0):
            raise SvmError(
                "gram matrix is not positive semidefinite along a working pair; "
                "increase the Fisher metric ridge"
            )
        np.maximum(quad_all, _TAU, out=quad_all)
        gain = m_val - minus_y_grad
        np.multiply(gain, gain, out=gain)
        gain /= quad_all
        gain[~low | (minus_y_grad >= m_val)] = -np.inf
        j = int(np.argmax(gain))
        if not np.isfinite(gain[j]):
            break

        quad = float(quad_all[j])
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = old_i - old_j
            ai = old_i + delta
            aj = old_j + delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > 0:
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = old_i + old_j
            ai = old_i - delta
            aj = old_j + delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
                if aj > C:
                    aj = C
                    ai = total - C
            else:
                if aj < 0:
                    aj = 0.0
                    ai = total
                if ai < 0:
                    ai = 0.0
                    aj = total
        alpha[i], alpha[j] = ai, aj
        d_i = ai - old_i
        d_j = aj - old_j
        # grad_k += Q_ki d_i + Q_kj d_j with Q_kl = y_k y_l K_kl
        grad += y * (d_i * y[i] * K[:, i] + d_j * y[j] * K[:, j])
        if trace is not None:
            trace.append(_dual_objective(alpha, grad))
        it += 1

    # bias: average over free support vectors, else midpoint of the bounds
    free = (alpha > SUPPORT_EPS) & (alpha < C - SUPPORT_EPS)
    minus_y_grad = -y * grad
    if free.any():
        bias = float(minus_y_grad[free].mean())
    else:
        bias = 0.5 * (m_val + M_val)

    support = np.flatnonzero(alpha > SUPPORT_EPS)
    return SvmModel(
        alpha=alpha,
        y=y,
        bias=bias,
        C=C,
        support=support,
        kkt_violation=max(m_val - M_val, 0.0),
        n_iterations=it,
        objective_trace=trace,
    )


def kkt_violations(model: SvmModel, problem: KernelProblem, tol_alpha: float = SUPPORT_EPS) -> np.ndarray:
    """Per-instance violation of the KKT optimality conditions."""
    f = model.decision_values(problem.gram)
    margin = problem.labels * f
    v = np.zeros(problem.n)
    at_zero = model.alpha <= tol_alpha
    at_c = model.alpha >= model.C - tol_alpha
    free = ~at_zero & ~at_c
    v[at_zero] = np.maximum(0.0, 1.0 - margin[at_zero])
    v[at_c] = np.maximum(0.0, margin[at_c] - 1.0)
    v[free] = np.abs(margin[free] - 1.0)
    return v


def max_kkt_violation(model: SvmModel, problem: KernelProblem) -> float:
    return float(kkt_violations(model, problem).max(initial=0.0))


@dataclass
class MulticlassSvm:
    """One-vs-rest model set over a shared Gram matrix."""

    classes: list
    models: list[SvmModel]
    C: float

    def decision_matrix(self, k_rows: np.ndarray) -> np.ndarray:
        """(n_instances, n_classes) decision values."""
        k_rows = np.atleast_2d(np.asarray(k_rows, dtype=float))
        return np.column_stack([m.decision_values(k_rows) for m in self.models])

    def predict_lines(self, k_rows: np.ndarray) -> list:
        values = self.decision_matrix(k_rows)
        return [self.classes[idx] for idx in values.argmax(axis=1)]

    def to_dict(self, references: Mapping[str, str] | None = None) -> dict:
        return {
            "classes": list(self.classes),
            "C": self.C,
            "models": [m.to_dict() for m in self.models],
            "references": dict(references or {}),
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "MulticlassSvm":
        return cls(
            classes=list(obj["classes"]),
            models=[SvmModel.from_dict(m) for m in obj["models"]],
            C=float(obj["C"]),
        )


def train_multiclass(
    gram: np.ndarray,
    labels: Sequence,
    C: float,
    tol: float = 1e-3,
    threads: int = 1,
) -> MulticlassSvm:
    """Train one binary SVM per class (class vs. rest) on a shared Gram matrix."""
    from .util import parallel_map

    labels = list(labels)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise SvmError(f"need at least 2 classes, got {classes!r}")
    label_arr = np.array(labels, dtype=object)

    def _train(cls_label):
        y = np.where(label_arr == cls_label, 1.0, -1.0)
        if not (y == 1.0).any():
            raise SvmError(f"class {cls_label!r} has no training instances")
        return solve_dual(KernelProblem(gram=gram, labels=y, C=C), tol=tol)

    models = parallel_map(_train, classes, threads=threads)
    return MulticlassSvm(classes=classes, models=models, C=C)


def predict_text(model: MulticlassSvm, k_rows: np.ndarray) -> tuple[object, np.ndarray]:
    """Whole-text prediction: average per-line decisions, argmax over classes.

    Ties break deterministically toward the lowest class id (argmax returns
    the first maximum and `classes` is sorted).
    """
    k_rows = np.atleast_2d(np.asarray(k_rows, dtype=float))
    if k_rows.shape[0] == 0:
        raise SvmError("predict_text requires at least one line")
    means = model.decision_matrix(k_rows).mean(axis=0)
    return model.classes[int(means.argmax())], means


def prefix_decision_curve(model: MulticlassSvm, k_rows: np.ndarray) -> np.ndarray:
    """(L, n_classes) averaged decisions using line prefixes 1..L."""
    values = model.decision_matrix(k_rows)
    cum = np.cumsum(values, axis=0)
    counts = np.arange(1, values.shape[0] + 1)[:, None]
    return cum / counts
