"""Generative scanpath model: multinomial saccade types with gamma GLMs.

Each saccade event of type u contributes

    ln pi_u
    + ln Gamma_pdf(|a| ; shape=exp(alpha_u . w_launch), scale=exp(beta_u . w_launch))
    + ln Gamma_pdf(d   ; shape=exp(gamma_u . w_land),   scale=exp(delta_u . w_land))

to the log-likelihood.  Amplitudes condition on the launch word's features,
durations on the landing word's.  With M=1 (bias-only features) the model
degenerates to constant per-type gamma parameters.
"""

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import gammaln

from .corpus import Text, TextFeatures
from .events import (
    BACKWARD_TYPES,
    DEFAULT_AMP_FLOOR,
    NUM_SACCADE_TYPES,
    EventBatch,
    SaccadeEvent,
    Scanpath,
    as_batch,
    extract_events,
    word_at,
)

LINK_MIN = 1e-8
LINK_MAX = 1e8
_LOG_LINK_MIN = math.log(LINK_MIN)
_LOG_LINK_MAX = math.log(LINK_MAX)


class ModelError(ValueError):
    """Invalid model parameters or density arguments."""


def link(weights: np.ndarray, w: np.ndarray) -> float:
    """exp(weights . w), clamped to [1e-8, 1e8] to keep densities finite."""
    weights = np.asarray(weights, dtype=float)
    w = np.asarray(w, dtype=float)
    if weights.shape != w.shape:
        raise ModelError(f"length mismatch: weights {weights.shape} vs features {w.shape}")
    # cap the exponent first so exp never overflows, then clamp the value
    return float(np.clip(np.exp(min(weights @ w, 709.0)), LINK_MIN, LINK_MAX))


def link_many(W: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Row-wise clamped exponential link for a feature matrix W (N, M)."""
    return np.clip(np.exp(np.minimum(W @ weights, 709.0)), LINK_MIN, LINK_MAX)


def gamma_logpdf(x: float, shape: float, scale: float) -> float:
    """Log density of the gamma distribution with the shape/scale convention."""
    if not x > 0:
        raise ModelError(f"gamma_logpdf requires x > 0, got {x!r}")
    if not (shape > 0 and scale > 0):
        raise ModelError(f"gamma parameters must be positive, got shape={shape}, scale={scale}")
    return (shape - 1.0) * math.log(x) - x / scale - float(gammaln(shape)) - shape * math.log(scale)


def _gamma_logpdf_vec(x: np.ndarray, shape: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return (shape - 1.0) * np.log(x) - x / scale - gammaln(shape) - shape * np.log(scale)


@dataclass(frozen=True)
class ModelParams:
    """All model parameters: pi over the 5 types plus four (5, M) weight blocks."""

    pi: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    feature_layout: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "pi", np.asarray(self.pi, dtype=float))
        for name in ("alpha", "beta", "gamma", "delta"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if arr.ndim != 2 or arr.shape[0] != NUM_SACCADE_TYPES:
                raise ModelError(f"{name} must have shape (5, M), got {arr.shape}")
            if arr.shape[1] != self.alpha.shape[1]:
                raise ModelError("all weight blocks must share the same feature count M")
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} contains non-finite values")
        if self.pi.shape != (NUM_SACCADE_TYPES,):
            raise ModelError(f"pi must have shape (5,), got {self.pi.shape}")
        if np.any(self.pi < 0) or not np.all(np.isfinite(self.pi)):
            raise ModelError("pi must be non-negative and finite")
        if abs(float(self.pi.sum()) - 1.0) > 1e-12:
            raise ModelError(f"pi must sum to 1 within 1e-12, got {self.pi.sum()!r}")
        if self.feature_layout is not None and len(self.feature_layout) != self.num_features:
            raise ModelError("feature_layout length must equal M")

    @property
    def num_features(self) -> int:
        return self.alpha.shape[1]

    def weights(self, kind: str, u: int) -> np.ndarray:
        """Weight vector of one block for saccade type u in 1..5."""
        return getattr(self, kind)[u - 1]

    def to_dict(self) -> dict:
        out = {
            "M": self.num_features,
            "feature_layout": list(self.feature_layout) if self.feature_layout else None,
            "pi": self.pi.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "gamma": self.gamma.tolist(),
            "delta": self.delta.tolist(),
        }
        return out

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ModelParams":
        layout = obj.get("feature_layout")
        return cls(
            pi=np.asarray(obj["pi"], dtype=float),
            alpha=np.asarray(obj["alpha"], dtype=float),
            beta=np.asarray(obj["beta"], dtype=float),
            gamma=np.asarray(obj["gamma"], dtype=float),
            delta=np.asarray(obj["delta"], dtype=float),
            feature_layout=tuple(layout) if layout else None,
        )


def event_loglik(event: SaccadeEvent, params: ModelParams) -> float:
    """Log-likelihood contribution of a single saccade event."""
    u = event.u
    lp = math.log(params.pi[u - 1])
    lp += gamma_logpdf(
        abs(event.a),
        link(params.alpha[u - 1], event.w_launch),
        link(params.beta[u - 1], event.w_launch),
    )
    lp += gamma_logpdf(
        event.d,
        link(params.gamma[u - 1], event.w_land),
        link(params.delta[u - 1], event.w_land),
    )
    return lp


def batch_loglik(events, params: ModelParams) -> float:
    """Total log-likelihood of a collection of events (vectorized)."""
    batch = as_batch(events, num_features=params.num_features)
    if batch.n == 0:
        return 0.0
    total = 0.0
    for u in range(1, NUM_SACCADE_TYPES + 1):
        mask = batch.u == u
        k_u = int(mask.sum())
        if k_u == 0:
            continue
        total += k_u * math.log(params.pi[u - 1])
        w_l = batch.w_launch[mask]
        w_d = batch.w_land[mask]
        total += float(
            _gamma_logpdf_vec(
                batch.amp[mask],
                link_many(w_l, params.alpha[u - 1]),
                link_many(w_l, params.beta[u - 1]),
            ).sum()
        )
        total += float(
            _gamma_logpdf_vec(
                batch.dur[mask],
                link_many(w_d, params.gamma[u - 1]),
                link_many(w_d, params.delta[u - 1]),
            ).sum()
        )
    return total


def loglik_parts(events, params: ModelParams) -> tuple[float, float, float]:
    """(type, amplitude, duration) log-likelihood terms, computed independently."""
    batch = as_batch(events, num_features=params.num_features)
    counts = batch.type_counts()
    type_term = float(np.sum(counts[counts > 0] * np.log(params.pi[counts > 0])))
    amp_term = 0.0
    dur_term = 0.0
    for u in range(1, NUM_SACCADE_TYPES + 1):
        mask = batch.u == u
        if not mask.any():
            continue
        w_l = batch.w_launch[mask]
        w_d = batch.w_land[mask]
        amp_term += float(
            _gamma_logpdf_vec(
                batch.amp[mask],
                link_many(w_l, params.alpha[u - 1]),
                link_many(w_l, params.beta[u - 1]),
            ).sum()
        )
        dur_term += float(
            _gamma_logpdf_vec(
                batch.dur[mask],
                link_many(w_d, params.gamma[u - 1]),
                link_many(w_d, params.delta[u - 1]),
            ).sum()
        )
    return type_term, amp_term, dur_term


def _reflect(pos: float, hi: float) -> float:
    """Fold a position into [0, hi] by reflecting at the boundaries."""
    if hi <= 0:
        return 0.0
    period = 2.0 * hi
    r = pos % period
    return r if r <= hi else period - r


@dataclass
class SampledScanpath:
    """A sampled scanpath plus its realized events and latent type draws.

    `events` is exactly what :func:`extract_events` returns for the scanpath,
    so extraction round-trips sampling.  `drawn_types` are the latent
    multinomial draws that selected the gamma distributions; a drawn type can
    differ from the realized event type when reflection at a line boundary or
    the untruncated gamma tail moves the landing position elsewhere.
    """

    scanpath: Scanpath
    events: list[SaccadeEvent]
    drawn_types: np.ndarray


def sample_scanpath(
    params: ModelParams,
    text: Text,
    features: TextFeatures,
    line_id: int,
    start: tuple[float, float],
    n_fixations: int,
    rng: np.random.Generator,
    reader_id: str = "",
    label: object = None,
    amp_floor: float = DEFAULT_AMP_FLOOR,
) -> SampledScanpath:
    """Draw a scanpath of `n_fixations` fixations from the generative model.

    At each step a saccade type is drawn from pi, an amplitude from the
    type's gamma given the launch word's features (signed by type), the
    position is reflected back into the line if it exits, and the landing
    duration is drawn given the landing word's features.  Deterministic for
    a given rng state.
    """
    if n_fixations < 2:
        raise ModelError("n_fixations must be >= 2")
    extent = text.line_extent(line_id)
    hi = float(extent) - 1.0
    q, d = float(start[0]), float(start[1])
    if not (0 <= q < extent):
        raise ModelError(f"start position {q} outside line extent [0, {extent})")
    fixations = [(q, d)]
    drawn = np.empty(n_fixations - 1, dtype=np.int64)
    rows = features.lines[line_id]
    for t in range(n_fixations - 1):
        u = int(rng.choice(NUM_SACCADE_TYPES, p=params.pi)) + 1
        drawn[t] = u
        w_launch = rows[word_at(text, line_id, q)]
        amp = rng.gamma(
            link(params.alpha[u - 1], w_launch),
            link(params.beta[u - 1], w_launch),
        )
        signed = -amp if u in BACKWARD_TYPES else amp
        q = _reflect(q + signed, hi)
        w_land = rows[word_at(text, line_id, q)]
        dur = rng.gamma(
            link(params.gamma[u - 1], w_land),
            link(params.delta[u - 1], w_land),
        )
        fixations.append((q, max(dur, 1e-9)))
    scanpath = Scanpath(
        reader_id=reader_id,
        text_id=text.text_id,
        line_id=line_id,
        fixations=tuple(fixations),
        label=label,
    )
    events = extract_events(scanpath, text, features, amp_floor=amp_floor)
    return SampledScanpath(scanpath=scanpath, events=events, drawn_types=drawn)


def sample_events(
    params: ModelParams,
    w_launch: np.ndarray,
    w_land: np.ndarray,
    rng: np.random.Generator,
) -> EventBatch:
    """Draw saccade events directly, without any line geometry.

    Each row of `w_launch`/`w_land` supplies the conditioning features of one
    event.  Used for parameter-recovery and score-statistics experiments
    where geometric side effects (reflection, amplitude clamping) would bias
    the sample.
    """
    w_launch = np.asarray(w_launch, dtype=float)
    w_land = np.asarray(w_land, dtype=float)
    if w_launch.shape != w_land.shape:
        raise ModelError("w_launch and w_land must have the same shape")
    n = w_launch.shape[0]
    u = rng.choice(NUM_SACCADE_TYPES, size=n, p=params.pi) + 1
    amp = np.empty(n)
    dur = np.empty(n)
    for t in range(1, NUM_SACCADE_TYPES + 1):
        mask = u == t
        if not mask.any():
            continue
        wl = w_launch[mask]
        wd = w_land[mask]
        amp[mask] = rng.gamma(
            link_many(wl, params.alpha[t - 1]),
            link_many(wl, params.beta[t - 1]),
        )
        dur[mask] = rng.gamma(
            link_many(wd, params.gamma[t - 1]),
            link_many(wd, params.delta[t - 1]),
        )
    return EventBatch(
        u=u.astype(np.int64),
        amp=np.maximum(amp, 1e-12),
        dur=np.maximum(dur, 1e-12),
        w_launch=w_launch,
        w_land=w_land,
    )
