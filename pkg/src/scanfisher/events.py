"""Scanpaths and their conversion into typed saccade events.

A scanpath is the per-line fixation sequence ((q_1, d_1), ..., (q_T, d_T));
consecutive fixation pairs become saccade events typed as

    1 backward refixation   (same word, moving left)
    2 forward refixation    (same word, moving right; also zero moves)
    3 next-word fixation
    4 forward skip          (two or more words ahead)
    5 regression            (any earlier word)

carrying the signed amplitude in characters, the landing fixation duration,
and the launch/landing word feature vectors.
"""

import json
import logging
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Text, TextFeatures

logger = logging.getLogger(__name__)

NUM_SACCADE_TYPES = 5
FORWARD_TYPES = (2, 3, 4)
BACKWARD_TYPES = (1, 5)
DEFAULT_AMP_FLOOR = 0.5


class ScanpathError(ValueError):
    """Malformed scanpath input or out-of-range fixation position."""


@dataclass(frozen=True)
class Scanpath:
    reader_id: str
    text_id: str
    line_id: int
    fixations: tuple[tuple[float, float], ...]
    label: object = None

    def __post_init__(self):
        for i, (q, d) in enumerate(self.fixations):
            if not (q >= 0 and np.isfinite(q)):
                raise ScanpathError(f"fixation {i}: position {q!r} must be finite and >= 0")
            if not (d > 0 and np.isfinite(d)):
                raise ScanpathError(f"fixation {i}: duration {d!r} must be finite and > 0")

    def __len__(self) -> int:
        return len(self.fixations)


@dataclass(eq=False)
class SaccadeEvent:
    u: int
    a: float
    d: float
    w_launch: np.ndarray
    w_land: np.ndarray


def scanpath_from_dict(obj: dict) -> Scanpath:
    try:
        fixations = tuple((float(q), float(d)) for q, d in obj["fixations"])
        return Scanpath(
            reader_id=str(obj["reader_id"]),
            text_id=str(obj["text_id"]),
            line_id=int(obj["line_id"]),
            fixations=fixations,
            label=obj.get("label"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScanpathError(f"malformed scanpath record: {exc}") from None


def scanpath_to_dict(sp: Scanpath) -> dict:
    obj = {
        "reader_id": sp.reader_id,
        "text_id": sp.text_id,
        "line_id": sp.line_id,
        "fixations": [[q, d] for q, d in sp.fixations],
    }
    if sp.label is not None:
        obj["label"] = sp.label
    return obj


def load_scanpaths(path) -> list[Scanpath]:
    """Read scanpaths from a JSONL file, one object per line."""
    out = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ScanpathError(f"{path}:{lineno}: malformed JSON: {exc}") from None
        try:
            out.append(scanpath_from_dict(obj))
        except ScanpathError as exc:
            raise ScanpathError(f"{path}:{lineno}: {exc}") from None
    return out


def save_scanpaths(path, scanpaths: Iterable[Scanpath]) -> None:
    lines = [json.dumps(scanpath_to_dict(sp), sort_keys=True) for sp in scanpaths]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def word_at(text: Text, line_id: int, q: float) -> int:
    """Index of the word whose span contains position `q` on the line.

    Positions in inter-word whitespace belong to the preceding word; positions
    before the first word's start clamp to word 0.
    """
    if not 0 <= line_id < len(text.lines):
        raise ScanpathError(f"text {text.text_id!r}: no line {line_id}")
    line = text.lines[line_id]
    extent = line[-1].end_char
    if not (0 <= q < extent):
        raise ScanpathError(
            f"text {text.text_id!r} line {line_id}: position {q} outside [0, {extent})"
        )
    starts = [w.start_char for w in line]
    idx = bisect_right(starts, q) - 1
    return max(idx, 0)


def classify_saccade(text: Text, line_id: int, q_from: float, q_to: float) -> int:
    """Saccade type of the move q_from -> q_to (see module docstring)."""
    w_from = word_at(text, line_id, q_from)
    w_to = word_at(text, line_id, q_to)
    if w_to == w_from:
        return 1 if q_to < q_from else 2
    if w_to == w_from + 1:
        return 3
    if w_to >= w_from + 2:
        return 4
    return 5


def extract_events(
    scanpath: Scanpath,
    text: Text,
    features: TextFeatures,
    amp_floor: float = DEFAULT_AMP_FLOOR,
) -> list[SaccadeEvent]:
    """Saccade events for every consecutive fixation pair.

    The initial fixation (q_1, d_1) contributes no event.  Amplitudes with
    magnitude below `amp_floor` are clamped to the floor, signed by type, so
    the gamma densities stay finite.
    """
    if len(scanpath) < 2:
        logger.warning(
            "scanpath %s/%s/line%d has %d fixation(s); no events extracted",
            scanpath.reader_id, scanpath.text_id, scanpath.line_id, len(scanpath),
        )
        return []
    line_id = scanpath.line_id
    rows = features.lines[line_id]
    events = []
    for (q0, _), (q1, d1) in zip(scanpath.fixations, scanpath.fixations[1:]):
        u = classify_saccade(text, line_id, q0, q1)
        a = q1 - q0
        if abs(a) < amp_floor:
            a = amp_floor if u in FORWARD_TYPES else -amp_floor
        events.append(
            SaccadeEvent(
                u=u,
                a=a,
                d=d1,
                w_launch=rows[word_at(text, line_id, q0)],
                w_land=rows[word_at(text, line_id, q1)],
            )
        )
    return events


@dataclass
class EventBatch:
    """Columnar view of a list of saccade events for vectorized math."""

    u: np.ndarray        # (N,) int, values 1..5
    amp: np.ndarray      # (N,) |a|
    dur: np.ndarray      # (N,)
    w_launch: np.ndarray  # (N, M)
    w_land: np.ndarray    # (N, M)

    @classmethod
    def from_events(cls, events: Sequence[SaccadeEvent], num_features: int | None = None) -> "EventBatch":
        if not events:
            if num_features is None:
                raise ValueError("num_features is required for an empty event list")
            m = num_features
            return cls(
                u=np.zeros(0, dtype=np.int64),
                amp=np.zeros(0),
                dur=np.zeros(0),
                w_launch=np.zeros((0, m)),
                w_land=np.zeros((0, m)),
            )
        return cls(
            u=np.array([e.u for e in events], dtype=np.int64),
            amp=np.array([abs(e.a) for e in events], dtype=float),
            dur=np.array([e.d for e in events], dtype=float),
            w_launch=np.array([e.w_launch for e in events], dtype=float),
            w_land=np.array([e.w_land for e in events], dtype=float),
        )

    @staticmethod
    def concat(batches: Sequence["EventBatch"]) -> "EventBatch":
        if not batches:
            raise ValueError("cannot concatenate zero batches")
        return EventBatch(
            u=np.concatenate([b.u for b in batches]),
            amp=np.concatenate([b.amp for b in batches]),
            dur=np.concatenate([b.dur for b in batches]),
            w_launch=np.concatenate([b.w_launch for b in batches], axis=0),
            w_land=np.concatenate([b.w_land for b in batches], axis=0),
        )

    def select_features(self, keep: Sequence[int]) -> "EventBatch":
        keep = list(keep)
        return EventBatch(
            u=self.u,
            amp=self.amp,
            dur=self.dur,
            w_launch=self.w_launch[:, keep],
            w_land=self.w_land[:, keep],
        )

    @property
    def n(self) -> int:
        return len(self.u)

    @property
    def num_features(self) -> int:
        return self.w_launch.shape[1]

    def type_counts(self) -> np.ndarray:
        return np.bincount(self.u, minlength=NUM_SACCADE_TYPES + 1)[1:].astype(float)


def as_batch(events, num_features: int | None = None) -> EventBatch:
    if isinstance(events, EventBatch):
        return events
    return EventBatch.from_events(list(events), num_features=num_features)
