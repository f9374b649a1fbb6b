"""Stage prediction: which operators does an utterance ask for?

Three interchangeable strategies produce the same shape of answer, an
ordered multiset of stage names:

* ``single`` — one prompt enumerating the whole catalog plus the full
  few-shot bank. Simple, token-hungry.
* ``cag`` — classifier-augmented generation: decompose the utterance into
  sub-utterances, classify each, add keyword hits over the full utterance,
  and prompt with only the candidate stages and the few-shot examples that
  mention them. Same answer format at a fraction of the tokens.
* ``agentic`` — a text-protocol loop where the model calls the classifier
  one sub-utterance at a time (``CALL classify: ...``) and finishes with
  ``FINAL: "..."``.

Every strategy verifies the model's answer against what the prompt offered:
names outside the catalog (or outside the candidate set, for cag) are
dropped and trace-recorded, never invented.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import fixture_path
from .catalog import Catalog
from .classify import Classification, StageClassifier
from .llm import (
    FAMILY_PRESEED,
    CompletionParams,
    CompletionProvider,
    PromptTemplate,
    RenderedPrompt,
    load_template,
    parse_operator_list,
)

__all__ = [
    "FewShotExample",
    "SplitExample",
    "SubUtterance",
    "CandidateSet",
    "TokenUsage",
    "StagePrediction",
    "StagePredictionError",
    "DecompositionError",
    "ProtocolViolation",
    "DEFAULT_EXAMPLE_CAP",
    "DEFAULT_MAX_STEPS",
    "load_examples",
    "load_split_examples",
    "stage_template",
    "decompose",
    "build_candidates",
    "select_examples",
    "predict_single",
    "predict_cag",
    "predict_agentic",
]

DEFAULT_EXAMPLE_CAP = 40
DEFAULT_MAX_STEPS = 8


class StagePredictionError(Exception):
    pass


class DecompositionError(StagePredictionError):
    pass


class ProtocolViolation(StagePredictionError):
    def __init__(self, message: str, transcript: list[str]):
        super().__init__(f"{message}\ntranscript:\n" + "\n".join(transcript))
        self.transcript = transcript


@dataclass(frozen=True)
class FewShotExample:
    utterance: str
    operators: tuple[str, ...]


@dataclass(frozen=True)
class SplitExample:
    utterance: str
    subs: tuple[str, ...]


@dataclass(frozen=True)
class SubUtterance:
    text: str
    order: int


@dataclass
class CandidateSet:
    stages: frozenset[str]
    # stage -> which evidence produced it ("classifier" and/or "keyword")
    provenance: dict[str, frozenset[str]]


@dataclass
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    requests: int = 0

    def add(self, prompt_tokens: int, completion_tokens: int) -> None:
        self.prompt_tokens += prompt_tokens
        self.completion_tokens += completion_tokens
        self.requests += 1


@dataclass
class StagePrediction:
    stages: list[str]  # answer-ordered; duplicates are distinct nodes
    strategy: str
    usage: TokenUsage = field(default_factory=TokenUsage)
    trace: list[dict] = field(default_factory=list)
    # estimate for the final stage-selection prompt (0 if no prompt was sent);
    # this is the request the single-prompt baseline is compared against
    stage_prompt_tokens: int = 0


# --- fixture loading ---------------------------------------------------------


def load_examples(path: str | Path, catalog: Catalog | None = None) -> list[FewShotExample]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise StagePredictionError(f"{path}: expected a JSON array of examples")
    out: list[FewShotExample] = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "utterance" not in item or "operators" not in item:
            raise StagePredictionError(f"{path}: example {i} needs utterance and operators")
        ops = tuple(str(op) for op in item["operators"])
        if catalog is not None:
            for op in ops:
                if op not in catalog.stages:
                    raise StagePredictionError(
                        f"{path}: example {i} references unknown stage {op!r}"
                    )
        out.append(FewShotExample(str(item["utterance"]), ops))
    return out


def load_split_examples(path: str | Path) -> list[SplitExample]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise StagePredictionError(f"{path}: expected a JSON array of split examples")
    out: list[SplitExample] = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "utterance" not in item or "subs" not in item:
            raise StagePredictionError(f"{path}: split example {i} needs utterance and subs")
        out.append(SplitExample(str(item["utterance"]), tuple(str(s) for s in item["subs"])))
    return out


# --- prompt assembly ---------------------------------------------------------


def stage_template(family: str) -> PromptTemplate:
    """The per-family stage-selection template (granite role tokens, llama preseed)."""
    name = {"granite": "granite_stage.txt", "llama": "llama_stage.txt"}.get(family)
    if name is None:
        raise StagePredictionError(f"no stage template for family {family!r}")
    return load_template(fixture_path("templates", name), family=family, preseed=FAMILY_PRESEED[family])


def _aux_template(name: str) -> PromptTemplate:
    return load_template(fixture_path("templates", name), family="plain")


def _context_block(catalog: Catalog, stages: set[str] | None = None) -> str:
    names = sorted(catalog.stages if stages is None else stages)
    return "\n".join(f'"{name}": {catalog.stages[name].description}' for name in names)


def _examples_block(examples: list[FewShotExample]) -> str:
    return "\n\n".join(
        f'Utterance: {ex.utterance}\nOperators: "{", ".join(ex.operators)}"' for ex in examples
    )


def _prompt_digest(prompt: RenderedPrompt) -> str:
    return hashlib.sha256(prompt.text.encode("utf-8")).hexdigest()[:16]


def _complete(
    provider: CompletionProvider,
    prompt: RenderedPrompt,
    usage: TokenUsage,
    trace: list[dict],
    purpose: str,
    params: CompletionParams | None = None,
):
    result = provider.complete(prompt, params or CompletionParams())
    usage.add(prompt.token_estimate, result.completion_tokens)
    trace.append(
        {
            "event": "llm_call",
            "purpose": purpose,
            "prompt_tokens": prompt.token_estimate,
            "completion_tokens": result.completion_tokens,
            "prompt_sha256": _prompt_digest(prompt),
        }
    )
    return result


def _verified(
    answer: list[str],
    allowed: set[str],
    trace: list[dict],
) -> list[str]:
    kept, dropped = [], []
    for name in answer:
        (kept if name in allowed else dropped).append(name)
    if dropped:
        trace.append({"event": "dropped_names", "names": dropped})
    return kept


# --- single-prompt strategy --------------------------------------------------


def predict_single(
    utterance: str,
    catalog: Catalog,
    bank: list[FewShotExample],
    provider: CompletionProvider,
    family: str = "granite",
    params: CompletionParams | None = None,
) -> StagePrediction:
    """One prompt over the full catalog and the full example bank."""
    usage = TokenUsage()
    trace: list[dict] = []
    prompt = render_stage_prompt(catalog, None, bank, utterance, family)
    result = _complete(provider, prompt, usage, trace, "stage_selection", params)
    answer = parse_operator_list(result.text)
    stages = _verified(answer, set(catalog.stages), trace)
    return StagePrediction(
        stages=stages,
        strategy="single",
        usage=usage,
        trace=trace,
        stage_prompt_tokens=prompt.token_estimate,
    )


def render_stage_prompt(
    catalog: Catalog,
    candidates: set[str] | None,
    examples: list[FewShotExample],
    utterance: str,
    family: str = "granite",
) -> RenderedPrompt:
    from .llm import render_prompt

    template = stage_template(family)
    return render_prompt(
        template,
        {
            "context": _context_block(catalog, candidates),
            "examples": _examples_block(examples),
            "utterance": utterance,
        },
    )


# --- cag strategy ------------------------------------------------------------


def decompose(
    utterance: str,
    provider: CompletionProvider,
    split_examples: list[SplitExample],
    usage: TokenUsage | None = None,
    trace: list[dict] | None = None,
    params: CompletionParams | None = None,
) -> list[SubUtterance]:
    """Split an utterance into single-stage sub-utterances via one completion."""
    usage = TokenUsage() if usage is None else usage
    trace = [] if trace is None else trace
    from .llm import render_prompt

    examples_block = "\n\n".join(
        "Utterance: {}\nSub-utterances:\n{}".format(
            ex.utterance, "\n".join(f"- {sub}" for sub in ex.subs)
        )
        for ex in split_examples
    )
    prompt = render_prompt(
        _aux_template("decompose.txt"),
        {"examples": examples_block, "utterance": utterance},
    )
    result = _complete(provider, prompt, usage, trace, "decompose", params)
    subs = [
        line.strip()[2:].strip()
        for line in result.text.splitlines()
        if line.strip().startswith("- ")
    ]
    subs = [s for s in subs if s]
    if not subs:
        raise DecompositionError(f"no sub-utterances parsed from {result.text!r}")
    return [SubUtterance(text=s, order=i) for i, s in enumerate(subs)]


def build_candidates(
    subs: list[SubUtterance],
    classifier: StageClassifier,
    catalog: Catalog,
    full_utterance: str,
    trace: list[dict] | None = None,
) -> CandidateSet:
    """Candidate stages: classifier hits on each sub plus keyword hits on the whole.

    Only catalog stages can become candidates; a remote classifier emitting a
    stray label cannot smuggle it into the prompt. Adding synonyms or
    training data can only grow the set.
    """
    from .classify import keyword_scan

    trace = [] if trace is None else trace
    provenance: dict[str, set[str]] = {}
    for sub in subs:
        result: Classification = classifier.classify(sub.text)
        top = result.top
        trace.append(
            {
                "event": "classified",
                "sub_utterance": sub.text,
                "top": top,
                "score": result.ranked[0][1] if result.ranked else 0.0,
                "matched": result.matched,
            }
        )
        if result.matched and top is not None and top in catalog.stages:
            provenance.setdefault(top, set()).add("classifier")
    for name in keyword_scan(catalog, full_utterance):
        provenance.setdefault(name, set()).add("keyword")
    candidates = CandidateSet(
        stages=frozenset(provenance),
        provenance={k: frozenset(v) for k, v in sorted(provenance.items())},
    )
    trace.append({"event": "candidates", "stages": sorted(candidates.stages)})
    return candidates


def select_examples(
    candidates: CandidateSet,
    bank: list[FewShotExample],
    cap: int = DEFAULT_EXAMPLE_CAP,
) -> list[FewShotExample]:
    """Few-shot examples that mention at least one candidate stage.

    If more than ``cap`` match, a round-robin over candidate stages (stages in
    lexicographic order, examples in bank order) keeps per-candidate coverage;
    the selection is emitted in bank order either way.
    """
    matching = [ex for ex in bank if candidates.stages.intersection(ex.operators)]
    if len(matching) <= cap:
        return matching
    chosen: set[int] = set()
    per_stage: dict[str, list[int]] = {
        stage: [i for i, ex in enumerate(matching) if stage in ex.operators]
        for stage in sorted(candidates.stages)
    }
    cursors = {stage: 0 for stage in per_stage}
    while len(chosen) < cap:
        progressed = False
        for stage, indices in per_stage.items():
            if len(chosen) >= cap:
                break
            cursor = cursors[stage]
            while cursor < len(indices) and indices[cursor] in chosen:
                cursor += 1
            if cursor < len(indices):
                chosen.add(indices[cursor])
                cursors[stage] = cursor + 1
                progressed = True
        if not progressed:
            break
    return [matching[i] for i in sorted(chosen)]


def predict_cag(
    utterance: str,
    catalog: Catalog,
    classifier: StageClassifier,
    bank: list[FewShotExample],
    provider: CompletionProvider,
    family: str = "granite",
    split_examples: list[SplitExample] | None = None,
    cap: int = DEFAULT_EXAMPLE_CAP,
    params: CompletionParams | None = None,
) -> StagePrediction:
    """Classifier-augmented prediction: scoped context, scoped examples.

    The rendered context block contains exactly the candidate stages, so any
    verified answer stage is guaranteed to have been offered to the model.
    An empty candidate set short-circuits to an empty prediction — there is
    nothing the model could legally answer.
    """
    usage = TokenUsage()
    trace: list[dict] = []
    subs = decompose(utterance, provider, split_examples or [], usage, trace, params)
    candidates = build_candidates(subs, classifier, catalog, utterance, trace)
    if not candidates.stages:
        trace.append({"event": "empty_candidates"})
        return StagePrediction(stages=[], strategy="cag", usage=usage, trace=trace)
    examples = select_examples(candidates, bank, cap)
    trace.append({"event": "examples_selected", "count": len(examples)})
    prompt = render_stage_prompt(catalog, set(candidates.stages), examples, utterance, family)
    result = _complete(provider, prompt, usage, trace, "stage_selection", params)
    answer = parse_operator_list(result.text)
    stages = _verified(answer, set(candidates.stages), trace)
    return StagePrediction(
        stages=stages,
        strategy="cag",
        usage=usage,
        trace=trace,
        stage_prompt_tokens=prompt.token_estimate,
    )


# --- agentic strategy ---------------------------------------------------------


def _scan_agent_reply(text: str) -> tuple[str, str] | None:
    """First CALL or FINAL action in a reply, as (kind, payload)."""
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("CALL classify:"):
            return ("call", line[len("CALL classify:") :].strip())
        if line.startswith("FINAL:"):
            return ("final", line[len("FINAL:") :].strip())
    return None


def predict_agentic(
    utterance: str,
    catalog: Catalog,
    classifier: StageClassifier,
    provider: CompletionProvider,
    max_steps: int = DEFAULT_MAX_STEPS,
    params: CompletionParams | None = None,
) -> StagePrediction:
    """ReAct-style loop: the model drives the classifier one call per turn.

    Each turn re-renders the base prompt plus the transcript so far. The
    loop ends at FINAL or after ``max_steps`` completions; at the cap, a
    reply that still tries to act (or does not parse as an operator list) is
    a protocol violation carrying the transcript.
    """
    from .llm import render_prompt

    usage = TokenUsage()
    trace: list[dict] = []
    template = _aux_template("agent.txt")
    transcript: list[str] = []
    last_reply = ""
    for _step in range(max_steps):
        prompt = render_prompt(
            template, {"utterance": utterance, "transcript": "\n".join(transcript)}
        )
        result = _complete(provider, prompt, usage, trace, "agent_step", params)
        last_reply = result.text
        action = _scan_agent_reply(result.text)
        if action is None:
            transcript.append(result.text.strip())
            continue
        kind, payload = action
        if kind == "final":
            answer = parse_operator_list(payload)
            stages = _verified(answer, set(catalog.stages), trace)
            trace.append({"event": "final", "answer": payload})
            return StagePrediction(
                stages=stages, strategy="agentic", usage=usage, trace=trace
            )
        transcript.append(f"CALL classify: {payload}")
        outcome = classifier.classify(payload)
        label = outcome.top if outcome.matched and outcome.top else "no match"
        transcript.append(f"RESULT: {label}")
        trace.append({"event": "classify_call", "text": payload, "result": label})
    # out of steps: accept a reply that at least looks like an operator list
    if "CALL" not in last_reply:
        try:
            answer = parse_operator_list(last_reply)
        except Exception:
            answer = None
        if answer:
            trace.append({"event": "best_effort_final", "answer": last_reply.strip()})
            stages = _verified(answer, set(catalog.stages), trace)
            return StagePrediction(stages=stages, strategy="agentic", usage=usage, trace=trace)
    raise ProtocolViolation(f"no FINAL answer within {max_steps} steps", transcript)
