"""Phoneme-interval parsing and vowel-bounded mouth gesture extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import MalformedInput, OverlapError, ParseError, UnknownLabel
from .geometry import MouthSequence

VOWELS = ("A", "@", "E", "i", "ae", "u")
VOWEL_TO_ID = {v: i for i, v in enumerate(VOWELS)}
EMOTIONS = ("Neutral", "Anger", "Happiness", "Sadness")
EMOTION_TO_ID = {e: i for i, e in enumerate(EMOTIONS)}

# Default ARPAbet-to-target-vowel aliases; stress digits are stripped first.
DEFAULT_VOWEL_ALIASES: Mapping[str, str] = {
    "AA": "A",
    "AH": "@",
    "EH": "E",
    "IY": "i",
    "AE": "ae",
    "UW": "u",
}

# ARPAbet vowel nuclei; used to reject unmapped vowels loudly in strict mode.
ARPABET_VOWELS = frozenset(
    "AA AE AH AO AW AY EH ER EY IH IY OW OY UH UW".split()
)

ALIGNMENT_HEADER = ("label", "start_sec", "end_sec")
OVERLAP_TOLERANCE_SEC = 1e-6
MIN_SEGMENT_FRAMES = 2


@dataclass(frozen=True)
class PhonemeInterval:
    label: str
    start_sec: float
    end_sec: float

    def __post_init__(self):
        if not (np.isfinite(self.start_sec) and np.isfinite(self.end_sec)):
            raise MalformedInput("interval bounds must be finite")
        if self.start_sec < 0:
            raise MalformedInput(f"start_sec must be >= 0, got {self.start_sec}")
        if not self.end_sec > self.start_sec:
            raise MalformedInput(
                f"end_sec must exceed start_sec, got [{self.start_sec}, {self.end_sec}]"
            )


@dataclass(frozen=True)
class GestureSegment:
    """One vowel occurrence as a T x 24 mouth-coordinate time series.

    Columns interleave x and y per landmark: x48, y48, x49, y49, ..., y59.
    """

    series: np.ndarray
    vowel: str
    emotion: str
    corpus_id: str
    speaker_id: str
    utterance_id: str
    segment_id: str

    def __post_init__(self):
        series = np.asarray(self.series, dtype=np.float64)
        if series.ndim != 2 or series.shape[1] != 2 * 12:
            raise MalformedInput(f"expected a (T, 24) series, got {series.shape}")
        if series.shape[0] < MIN_SEGMENT_FRAMES:
            raise MalformedInput(f"segment needs >= {MIN_SEGMENT_FRAMES} frames")
        if not np.isfinite(series).all():
            raise MalformedInput("segment values must be finite")
        if self.vowel not in VOWELS:
            raise MalformedInput(f"vowel {self.vowel!r} not in {VOWELS}")
        if self.emotion not in EMOTIONS:
            raise MalformedInput(f"emotion {self.emotion!r} not in {EMOTIONS}")
        object.__setattr__(self, "series", series)


@dataclass(frozen=True)
class CutReport:
    n_intervals: int
    n_emitted: int
    n_dropped_short: int
    n_filtered: int


def parse_alignment(stream: str | Iterable[str], path: str | None = None) -> list[PhonemeInterval]:
    """Parse a phoneme alignment TSV into sorted, validated intervals.

    Expects a `label<TAB>start_sec<TAB>end_sec` header. Rows are sorted by
    start time (stable on ties); intervals overlapping by more than
    OVERLAP_TOLERANCE_SEC raise OverlapError.
    """
    lines = stream.splitlines() if isinstance(stream, str) else [ln.rstrip("\n") for ln in stream]
    if not lines or lines[0].split("\t") != list(ALIGNMENT_HEADER):
        raise ParseError(
            "expected header 'label\\tstart_sec\\tend_sec'",
            line=1,
            path=path,
        )
    intervals: list[PhonemeInterval] = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        fields = raw.split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", lineno, path)
        label = fields[0].strip()
        if not label:
            raise ParseError("empty phoneme label", lineno, path)
        try:
            start = float(fields[1])
            end = float(fields[2])
        except ValueError as exc:
            raise ParseError(f"bad number: {exc}", lineno, path) from None
        try:
            intervals.append(PhonemeInterval(label, start, end))
        except MalformedInput as exc:
            raise ParseError(str(exc), lineno, path) from None

    intervals.sort(key=lambda iv: iv.start_sec)
    for prev, nxt in zip(intervals, intervals[1:]):
        if nxt.start_sec < prev.end_sec - OVERLAP_TOLERANCE_SEC:
            raise OverlapError(
                f"intervals {prev.label}[{prev.start_sec},{prev.end_sec}] and "
                f"{nxt.label}[{nxt.start_sec},{nxt.end_sec}] overlap"
            )
    return intervals


def map_label(
    label: str,
    aliases: Mapping[str, str] | None = None,
    strict: bool = False,
) -> str | None:
    """Map an aligner phoneme label to a target vowel, or None to skip it.

    Trailing stress digits are stripped (AA1 -> AA). In strict mode an
    ARPAbet vowel missing from the alias table raises instead of being
    silently skipped.
    """
    aliases = DEFAULT_VOWEL_ALIASES if aliases is None else aliases
    base = label.strip().rstrip("0123456789")
    vowel = aliases.get(base)
    if vowel is None:
        vowel = aliases.get(base.upper())
    if vowel is not None:
        if vowel not in VOWELS:
            raise UnknownLabel(f"alias table maps {base!r} to unknown vowel {vowel!r}")
        return vowel
    if strict and base.upper() in ARPABET_VOWELS:
        raise UnknownLabel(f"vowel-like label {label!r} has no alias table entry")
    return None


def cut_segments(
    mouth: MouthSequence,
    intervals: list[PhonemeInterval],
    emotion: str,
    corpus_id: str,
    aliases: Mapping[str, str] | None = None,
    strict: bool = False,
) -> tuple[list[GestureSegment], CutReport]:
    """Cut one gesture segment per interval whose label maps to a target vowel.

    Frame range is [floor(start*fps), ceil(end*fps)) clamped to the
    sequence; ranges shorter than MIN_SEGMENT_FRAMES are dropped and
    counted rather than raised.
    """
    fps = mouth.frame_rate_hz
    n = len(mouth)
    flat = mouth.frames.reshape(n, 24)

    segments: list[GestureSegment] = []
    dropped = 0
    filtered = 0
    for idx, iv in enumerate(intervals):
        vowel = map_label(iv.label, aliases, strict)
        if vowel is None:
            filtered += 1
            continue
        i0 = int(np.floor(iv.start_sec * fps))
        i1 = int(np.ceil(iv.end_sec * fps))
        i0 = max(0, min(i0, n))
        i1 = max(i0, min(i1, n))
        if i1 - i0 < MIN_SEGMENT_FRAMES:
            dropped += 1
            continue
        segments.append(
            GestureSegment(
                series=flat[i0:i1].copy(),
                vowel=vowel,
                emotion=emotion,
                corpus_id=corpus_id,
                speaker_id=mouth.speaker_id,
                utterance_id=mouth.utterance_id,
                segment_id=f"{mouth.utterance_id}#{idx}",
            )
        )
    report = CutReport(
        n_intervals=len(intervals),
        n_emitted=len(segments),
        n_dropped_short=dropped,
        n_filtered=filtered,
    )
    return segments, report
