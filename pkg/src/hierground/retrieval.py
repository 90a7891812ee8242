"""Exact top-k retrieval of candidate events for each mention.

Candidates are encoded by the event tower into a pool x d matrix and
scored against the mention embedding by dot product.  Retrieval is exact
(argpartition plus a threshold re-sort, no approximate index) and ties
are broken by ascending event id so runs are byte-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Mention
from .encoder import (
    DEFAULT_MAX_CAND_CHARS,
    DEFAULT_MAX_CONTEXT_CHARS,
    EncoderParams,
    encode,
    featurize_event,
    featurize_mention,
)
from .errors import InvalidConfig, KTooLarge, ParseError, UnknownEvent
from .kb import Event

DEFAULT_K = 8
LANGUAGE_MODES = ("multilingual", "crosslingual")


@dataclass
class RetrievalResult:
    """Ranked (event id, score) candidates for one mention."""

    mention_id: str
    candidates: list[tuple[str, float]]

    @property
    def event_ids(self) -> list[str]:
        return [event_id for event_id, _ in self.candidates]


class CandidateIndex:
    """Immutable encodings of the candidate pool, per language.

    Crosslingual mode holds a single English matrix; multilingual mode
    builds one matrix per mention language on first use, falling back to
    English labels where a language is missing.
    """

    def __init__(
        self,
        params: EncoderParams,
        events: list[Event],
        pool: list[str],
        mode: str = "multilingual",
        max_cand_chars: int = DEFAULT_MAX_CAND_CHARS,
    ):
        if mode not in LANGUAGE_MODES:
            raise InvalidConfig(f"language mode must be one of {LANGUAGE_MODES}")
        by_id = {event.id: event for event in events}
        for event_id in pool:
            if event_id not in by_id:
                raise UnknownEvent(event_id, "candidate pool")
        self.params = params
        self.mode = mode
        self.max_cand_chars = max_cand_chars
        self.ids: list[str] = sorted(set(pool))
        self._events = by_id
        self._matrices: dict[str, np.ndarray] = {}
        if mode == "crosslingual":
            self.matrix("en")

    def __len__(self) -> int:
        return len(self.ids)

    def matrix(self, language: str) -> np.ndarray:
        lang = "en" if self.mode == "crosslingual" else language
        if lang not in self._matrices:
            rows = [
                encode(
                    self.params,
                    featurize_event(
                        self._events[event_id],
                        lang,
                        max_cand_chars=self.max_cand_chars,
                        F=self.params.F,
                    ),
                    "event",
                )
                for event_id in self.ids
            ]
            self._matrices[lang] = np.stack(rows)
        return self._matrices[lang]


def build_index(
    params: EncoderParams,
    events: list[Event],
    pool: list[str],
    mode: str = "multilingual",
    max_cand_chars: int = DEFAULT_MAX_CAND_CHARS,
) -> CandidateIndex:
    return CandidateIndex(params, events, pool, mode, max_cand_chars)


def topk(
    index: CandidateIndex,
    mention_vec: np.ndarray,
    k: int,
    language: str = "en",
    mention_id: str = "",
) -> RetrievalResult:
    """Exact top-k by dot product; score ties resolve to ascending id."""
    n = len(index.ids)
    if k < 1:
        raise InvalidConfig("k must be >= 1")
    if k > n:
        raise KTooLarge(k, n)
    scores = index.matrix(language) @ mention_vec
    if k == n:
        subset = np.arange(n)
    else:
        # everything tied with the k-th score enters the re-sort so the
        # id tie-break is exact at the boundary
        part = np.argpartition(-scores, k - 1)[:k]
        subset = np.flatnonzero(scores >= scores[part].min())
    order = subset[np.lexsort((subset, -scores[subset]))][:k]
    return RetrievalResult(
        mention_id=mention_id,
        candidates=[(index.ids[i], float(scores[i])) for i in order],
    )


def retrieve_mentions(
    params: EncoderParams,
    index: CandidateIndex,
    mentions: list[Mention],
    k: int = DEFAULT_K,
    max_context_chars: int = DEFAULT_MAX_CONTEXT_CHARS,
) -> list[RetrievalResult]:
    results = []
    for mention in mentions:
        fv = featurize_mention(mention, max_context_chars, params.F)
        vec = encode(params, fv, "mention")
        results.append(topk(index, vec, k, mention.language, mention.id))
    return results


def write_retrievals(results: list[RetrievalResult], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for result in results:
            record = {
                "mention_id": result.mention_id,
                "candidates": [
                    {"event": event_id, "score": score}
                    for event_id, score in result.candidates
                ],
            }
            fh.write(json.dumps(record) + "\n")


def load_retrievals(path: str | Path) -> list[RetrievalResult]:
    results: list[RetrievalResult] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                results.append(
                    RetrievalResult(
                        mention_id=obj["mention_id"],
                        candidates=[
                            (c["event"], float(c["score"])) for c in obj["candidates"]
                        ],
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(str(path), line_no, str(exc)) from exc
    return results
