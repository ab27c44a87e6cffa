"""Span-prediction backends.

Two backends satisfy the same small interface: a gazetteer matcher that runs
anywhere (the default, and the one the golden fixtures are recorded from),
and a transformers token-classification pipeline for serving a pretrained
chemistry checkpoint. Model identity is a config string:

    lexicon:/path/to/terms.txt
    hf:some-org/some-chemistry-ner-checkpoint

Both backends return raw candidate spans; overlap resolution happens in the
service layer so every served response is longest-match non-overlapping.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol


@dataclass
class Span:
    surface: str
    start: int
    end: int
    score: float = 1.0

    def to_json(self) -> dict:
        return {"surface": self.surface, "start": self.start, "end": self.end, "score": self.score}


class SpanModel(Protocol):
    model_id: str

    def predict(self, text: str) -> list[Span]: ...


class LexiconModel:
    """Case-insensitive whole-term matcher over a one-term-per-line lexicon."""

    def __init__(self, terms: Iterable[str], model_id: str = "lexicon:inline"):
        self.model_id = model_id
        cleaned = sorted({t.strip() for t in terms if t.strip()}, key=len, reverse=True)
        self._patterns = [
            re.compile(r"(?<![A-Za-z0-9])" + re.escape(t) + r"(?![A-Za-z0-9])", re.IGNORECASE)
            for t in cleaned
        ]

    @classmethod
    def from_file(cls, path: str | Path, model_id: str | None = None) -> "LexiconModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines, model_id=model_id or f"lexicon:{path}")

    def predict(self, text: str) -> list[Span]:
        spans: list[Span] = []
        for pattern in self._patterns:
            for m in pattern.finditer(text):
                spans.append(Span(surface=text[m.start() : m.end()], start=m.start(), end=m.end()))
        return spans


class TransformersModel:
    """Token-classification pipeline mapped to character offsets.

    Greedy (non-sampling) inference keeps responses deterministic for fixed
    weights and input.
    """

    def __init__(self, checkpoint: str):
        from transformers import pipeline  # heavyweight: imported only when used

        self.model_id = f"hf:{checkpoint}"
        self._pipe = pipeline(
            "token-classification",
            model=checkpoint,
            aggregation_strategy="simple",
        )

    def predict(self, text: str) -> list[Span]:
        spans: list[Span] = []
        for entity in self._pipe(text):
            start, end = int(entity["start"]), int(entity["end"])
            if not (0 <= start < end <= len(text)):
                continue
            spans.append(Span(surface=text[start:end], start=start, end=end, score=float(entity["score"])))
        return spans


def resolve_overlaps(spans: list[Span]) -> list[Span]:
    """Longest span wins; ties broken by position, then score."""
    ordered = sorted(spans, key=lambda s: (-(s.end - s.start), s.start, -s.score))
    kept: list[Span] = []
    for span in ordered:
        if all(span.end <= k.start or span.start >= k.end for k in kept):
            kept.append(span)
    return sorted(kept, key=lambda s: s.start)


def bundled_lexicon_path() -> Path:
    return Path(resources.files("ner_service").joinpath("data/chem_lexicon.txt"))


def build_model(spec: str) -> SpanModel:
    """Instantiate the backend named by *spec* (see module docstring)."""
    if spec.startswith("lexicon:"):
        path = spec.split(":", 1)[1]
        if not path:  # bare "lexicon:" means the bundled gazetteer
            return LexiconModel.from_file(bundled_lexicon_path(), model_id="lexicon:bundled")
        return LexiconModel.from_file(path)
    if spec.startswith("hf:"):
        return TransformersModel(spec.split(":", 1)[1])
    # bare value: treat as a transformers checkpoint name
    return TransformersModel(spec)
