"""Sub-utterance -> stage classification.

The built-in model is a deliberately simple lexical nearest neighbour: each
training utterance becomes a unit-normalized tf-idf vector, a query is scored
against every exemplar by cosine similarity, and per-stage scores aggregate by
max. It is fully deterministic, trains in microseconds, and memorizes its
training set (an exact training utterance always comes back with score 1.0),
which is exactly what the offline harness needs. A remote classifier speaking
the same contract over HTTP can be swapped in without the pipeline noticing.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from json import JSONDecodeError
from pathlib import Path
from typing import Iterable, Protocol

import requests

from .catalog import Catalog

__all__ = [
    "TrainingPair",
    "ClassifierModel",
    "Classification",
    "ClassifierError",
    "StageClassifier",
    "DEFAULT_THRESHOLD",
    "tokenize",
    "train",
    "classify",
    "load_training_pairs",
    "keyword_scan",
    "RemoteClassifier",
]

DEFAULT_THRESHOLD = 0.25

# scores are rounded so that identical vectors compare as exactly 1.0 and
# floating-point fuzz cannot flip a tie-break
_SCORE_DIGITS = 12

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class ClassifierError(Exception):
    pass


@dataclass(frozen=True)
class TrainingPair:
    utterance: str
    label: str  # must name a catalog stage


@dataclass(frozen=True)
class Classification:
    """Ranked (label, score) pairs, best first; ``matched`` applies the threshold."""

    ranked: tuple[tuple[str, float], ...]
    matched: bool

    @property
    def top(self) -> str | None:
        return self.ranked[0][0] if self.ranked else None


class StageClassifier(Protocol):
    def classify(self, text: str) -> Classification: ...


@dataclass
class ClassifierModel:
    idf: dict[str, float]
    default_idf: float  # weight for query tokens unseen in training
    exemplars: list[tuple[dict[str, float], str]] = field(default_factory=list)
    threshold: float = DEFAULT_THRESHOLD

    def classify(self, text: str) -> Classification:
        return classify(self, text)


def tokenize(text: str) -> list[str]:
    """Lowercase tokens split on non-alphanumerics; numerals survive."""
    return _TOKEN_RE.findall(text.lower())


def _unit(vec: dict[str, float]) -> dict[str, float]:
    norm = math.sqrt(sum(w * w for w in vec.values()))
    if norm == 0.0:
        return {}
    return {t: w / norm for t, w in vec.items()}


def _vectorize(tokens: list[str], idf: dict[str, float], default_idf: float) -> dict[str, float]:
    counts = Counter(tokens)
    return {t: n * idf.get(t, default_idf) for t, n in counts.items()}


def train(
    pairs: Iterable[TrainingPair],
    labels: Iterable[str],
    threshold: float = DEFAULT_THRESHOLD,
) -> ClassifierModel:
    """Fit the lexical model.

    ``labels`` is the set of admissible stage names (normally the catalog's);
    a pair with a label outside it is an authoring error. Duplicate pairs are
    harmless — per-label max aggregation makes them no-ops.
    """
    pairs = list(pairs)
    if not pairs:
        raise ClassifierError("empty training set")
    known = set(labels)
    for pair in pairs:
        if pair.label not in known:
            raise ClassifierError(f"unknown label {pair.label!r} for {pair.utterance!r}")

    docs = [tokenize(p.utterance) for p in pairs]
    n_docs = len(docs)
    df = Counter(t for doc in docs for t in set(doc))
    # smoothed idf keeps every weight positive so exact matches score 1.0
    idf = {t: math.log((1 + n_docs) / (1 + n)) + 1.0 for t, n in df.items()}
    default_idf = math.log(1 + n_docs) + 1.0

    model = ClassifierModel(idf=idf, default_idf=default_idf, threshold=threshold)
    for pair, doc in zip(pairs, docs):
        vec = _unit(_vectorize(doc, idf, default_idf))
        if not vec:
            raise ClassifierError(f"training utterance has no tokens: {pair.utterance!r}")
        model.exemplars.append((vec, pair.label))
    return model


def classify(model: ClassifierModel, text: str) -> Classification:
    """Score ``text`` against every label; deterministic for identical inputs.

    Ties rank lexicographically by label. Empty or fully-unknown text scores
    0.0 everywhere and cannot match.
    """
    query = _unit(_vectorize(tokenize(text), model.idf, model.default_idf))
    best: dict[str, float] = {label: 0.0 for _, label in model.exemplars}
    for vec, label in model.exemplars:
        if len(query) < len(vec):
            small, big = query, vec
        else:
            small, big = vec, query
        score = sum(w * big.get(t, 0.0) for t, w in small.items())
        score = round(score, _SCORE_DIGITS)
        if score > best[label]:
            best[label] = score
    ranked = tuple(sorted(best.items(), key=lambda kv: (-kv[1], kv[0])))
    matched = bool(ranked) and ranked[0][1] >= model.threshold
    return Classification(ranked=ranked, matched=matched)


def load_training_pairs(path: str | Path) -> list[TrainingPair]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ClassifierError(f"{path}: expected a JSON array of pairs")
    out = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "utterance" not in item or "label" not in item:
            raise ClassifierError(f"{path}: pair {i} needs utterance and label")
        out.append(TrainingPair(str(item["utterance"]), str(item["label"])))
    return out


# --- keyword scan ----------------------------------------------------------


def keyword_scan(catalog: Catalog, text: str) -> set[str]:
    """Stages whose name or synonym occurs in ``text`` as a whole word.

    Matching is case-insensitive and an underscore in a stage name matches
    either an underscore or a space, so ``sql_server`` is found in
    "load from SQL Server". Substring hits do not count: "the filtered view"
    does not surface ``filter``.
    """
    found: set[str] = set()
    for keyword, stages in catalog.synonym_index.items():
        pattern = r"\b" + re.escape(keyword).replace("_", "[_ ]") + r"\b"
        if re.search(pattern, text, re.IGNORECASE):
            found.update(stages)
    return found


# --- remote client ---------------------------------------------------------


class RemoteClassifier:
    """HTTP client for an external classifier with the same contract.

    POSTs ``{"text": ...}`` to ``<endpoint>/classify`` and expects
    ``{"ranked": [[label, score], ...], "matched": bool}``.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def classify(self, text: str) -> Classification:
        try:
            resp = requests.post(
                f"{self.endpoint}/classify", json={"text": text}, timeout=self.timeout
            )
            resp.raise_for_status()
            doc = resp.json()
        except (requests.RequestException, JSONDecodeError) as exc:
            raise ClassifierError(f"remote classifier failed: {exc}") from exc
        try:
            ranked = tuple((str(l), float(s)) for l, s in doc["ranked"])
            matched = bool(doc["matched"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ClassifierError(f"malformed classifier response: {doc!r}") from exc
        return Classification(ranked=ranked, matched=matched)
