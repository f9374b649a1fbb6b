"""Prompt templates and completion providers.

Prompts differ per model family only in their fixed wrapper text: granite
prompts carry ``<|start_of_role|>...<|end_of_role|>`` delimiters and end on an
assistant cue, while llama prompts are bare text whose operator-list prompts
end with a preseeded opening quote (so the reply contains no opening quote of
its own). Both are plain data — template files with ``{{placeholder}}`` slots
— never family branches in code.

Two providers speak the completion contract: a deterministic scripted mock
for offline runs and tests, and a chat-completions-style HTTP client for real
endpoints.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol

import requests

__all__ = [
    "PromptTemplate",
    "RenderedPrompt",
    "CompletionParams",
    "CompletionResult",
    "CompletionProvider",
    "TemplateError",
    "ProviderError",
    "NoScriptMatchError",
    "OperatorParseError",
    "FAMILY_PRESEED",
    "parse_template",
    "load_template",
    "render_prompt",
    "count_tokens",
    "parse_operator_list",
    "MockScript",
    "MockProvider",
    "load_mock_scripts",
    "HTTPProvider",
    "provider_from_env",
]

FAMILIES = ("granite", "llama", "plain")

# operator-list prompts preseed a single opening quote for llama models
FAMILY_PRESEED: dict[str, str | None] = {"granite": None, "llama": '"', "plain": None}


class TemplateError(ValueError):
    pass


class ProviderError(Exception):
    pass


class NoScriptMatchError(ProviderError):
    pass


class OperatorParseError(ValueError):
    pass


# --- templates -------------------------------------------------------------

_PLACEHOLDER_RE = re.compile(r"\{\{(\w+)\}\}")


@dataclass(frozen=True)
class PromptTemplate:
    """Fixed text and placeholder segments; ``preseed`` is appended after the end."""

    family: str
    segments: tuple[tuple[str, str], ...]  # ("text", raw) | ("slot", name)
    preseed: str | None = None

    @property
    def placeholders(self) -> tuple[str, ...]:
        return tuple(name for kind, name in self.segments if kind == "slot")


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    token_estimate: int


@dataclass(frozen=True)
class CompletionParams:
    temperature: float = 0.0
    max_tokens: int = 512
    stop: tuple[str, ...] = ()


@dataclass(frozen=True)
class CompletionResult:
    text: str
    prompt_tokens: int
    completion_tokens: int


class CompletionProvider(Protocol):
    def complete(self, prompt: RenderedPrompt, params: CompletionParams) -> CompletionResult: ...


def parse_template(text: str, family: str = "plain", preseed: str | None = None) -> PromptTemplate:
    if family not in FAMILIES:
        raise TemplateError(f"unknown family {family!r}")
    if family == "granite" and "<|start_of_role|>" not in text:
        raise TemplateError("granite template lacks role-delimiter tokens")
    segments: list[tuple[str, str]] = []
    pos = 0
    for m in _PLACEHOLDER_RE.finditer(text):
        if m.start() > pos:
            segments.append(("text", text[pos : m.start()]))
        segments.append(("slot", m.group(1)))
        pos = m.end()
    if pos < len(text):
        segments.append(("text", text[pos:]))
    return PromptTemplate(family=family, segments=tuple(segments), preseed=preseed)


def load_template(path: str | Path, family: str = "plain", preseed: str | None = None) -> PromptTemplate:
    """Load a template file; one trailing newline is ignored so files can end normally."""
    text = Path(path).read_text(encoding="utf-8")
    if text.endswith("\n"):
        text = text[:-1]
    return parse_template(text, family=family, preseed=preseed)


def render_prompt(template: PromptTemplate, bindings: Mapping[str, str]) -> RenderedPrompt:
    """Substitute every placeholder; unbound placeholders are an error."""
    parts: list[str] = []
    for kind, value in template.segments:
        if kind == "text":
            parts.append(value)
        else:
            if value not in bindings:
                raise TemplateError(f"unbound placeholder {value!r}")
            parts.append(str(bindings[value]))
    if template.preseed:
        parts.append(template.preseed)
    text = "".join(parts)
    return RenderedPrompt(text=text, token_estimate=count_tokens(text))


# --- token estimation ------------------------------------------------------

_RUN_RE = re.compile(r"[A-Za-z0-9]+")


def count_tokens(text: str) -> int:
    """Cheap token estimate: alphanumeric runs plus non-space punctuation marks."""
    runs = len(_RUN_RE.findall(text))
    punct = sum(1 for ch in text if not ch.isspace() and not ch.isalnum())
    return runs + punct


# --- operator-list answers ---------------------------------------------------


def parse_operator_list(text: str) -> list[str]:
    """Parse a model's operator answer into an ordered multiset.

    Strips one surrounding double quote on either side (granite answers carry
    both, preseeded llama answers only the closing one), splits on commas,
    trims and lowercases. Duplicates survive and keep their answer order —
    the n-th occurrence of a stage becomes the n-th node of that stage. An
    empty answer is an empty multiset; a non-empty answer with no
    alphanumeric content at all is unparseable.
    """
    s = text.strip()
    if s.startswith('"'):
        s = s[1:]
    if s.endswith('"'):
        s = s[:-1]
    s = s.strip()
    if not s:
        return []
    if not _RUN_RE.search(s):
        raise OperatorParseError(f"no alphanumeric content in operator answer {text!r}")
    names = [piece.strip().lower() for piece in s.split(",")]
    return [name for name in names if name]


# --- providers ---------------------------------------------------------------


@dataclass(frozen=True)
class MockScript:
    kind: str  # "exact" | "contains"
    pattern: str
    response: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None

    def matches(self, prompt_text: str) -> bool:
        if self.kind == "exact":
            return prompt_text == self.pattern
        return self.pattern in prompt_text


@dataclass
class MockProvider:
    """Scripted provider: first matching entry wins, in file order.

    Completion is a pure lookup — no state, no randomness — so concurrent
    pipelines stay deterministic.
    """

    scripts: list[MockScript] = field(default_factory=list)

    def complete(self, prompt: RenderedPrompt, params: CompletionParams) -> CompletionResult:
        for script in self.scripts:
            if script.matches(prompt.text):
                return CompletionResult(
                    text=script.response,
                    prompt_tokens=(
                        prompt.token_estimate
                        if script.prompt_tokens is None
                        else script.prompt_tokens
                    ),
                    completion_tokens=(
                        count_tokens(script.response)
                        if script.completion_tokens is None
                        else script.completion_tokens
                    ),
                )
        tried = "\n".join(
            f"  {i}: {s.kind} {s.pattern[:80]!r}" for i, s in enumerate(self.scripts)
        )
        raise NoScriptMatchError(
            f"no mock script matches prompt (first 200 chars): {prompt.text[:200]!r}\n"
            f"tried:\n{tried or '  (no scripts loaded)'}"
        )


def load_mock_scripts(path: str | Path) -> MockProvider:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ProviderError(f"{path}: expected a JSON array of scripts")
    scripts: list[MockScript] = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "match" not in item or "response" not in item:
            raise ProviderError(f"{path}: script {i} needs match and response")
        match = item["match"]
        if not isinstance(match, dict) or len(match) != 1:
            raise ProviderError(f"{path}: script {i} match must be {{exact|contains: text}}")
        (kind, pattern), = match.items()
        if kind not in ("exact", "contains"):
            raise ProviderError(f"{path}: script {i} has unknown matcher {kind!r}")
        scripts.append(
            MockScript(
                kind=kind,
                pattern=str(pattern),
                response=str(item["response"]),
                prompt_tokens=item.get("prompt_tokens"),
                completion_tokens=item.get("completion_tokens"),
            )
        )
    return MockProvider(scripts=scripts)


class HTTPProvider:
    """Chat-completions-style HTTP client, used in raw-prompt mode.

    Retries transport errors and 5xx responses a bounded number of times;
    client errors are surfaced immediately.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        model: str | None = None,
        raw_prompt: bool = True,
        max_retries: int = 2,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint
        self.api_key = api_key
        self.model = model
        self.raw_prompt = raw_prompt
        self.max_retries = max_retries
        self.timeout = timeout

    def _payload(self, prompt: RenderedPrompt, params: CompletionParams) -> dict:
        payload: dict = {
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if self.model:
            payload["model"] = self.model
        if params.stop:
            payload["stop"] = list(params.stop)
        if self.raw_prompt:
            payload["prompt"] = prompt.text
        else:
            payload["messages"] = [{"role": "user", "content": prompt.text}]
        return payload

    def complete(self, prompt: RenderedPrompt, params: CompletionParams) -> CompletionResult:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = self._payload(prompt, params)
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
            else:
                if resp.status_code >= 500:
                    last_error = ProviderError(f"server error {resp.status_code}")
                elif resp.status_code >= 400:
                    raise ProviderError(f"request rejected ({resp.status_code}): {resp.text[:200]}")
                else:
                    return self._parse_response(resp, prompt)
            if attempt < self.max_retries:
                time.sleep(0.2 * (attempt + 1))
        raise ProviderError(f"completion failed after {self.max_retries + 1} attempts: {last_error}")

    def _parse_response(self, resp: requests.Response, prompt: RenderedPrompt) -> CompletionResult:
        try:
            doc = resp.json()
        except json.JSONDecodeError as exc:
            raise ProviderError(f"non-JSON completion response: {resp.text[:200]!r}") from exc
        text: str | None = None
        if isinstance(doc.get("text"), str):
            text = doc["text"]
        elif isinstance(doc.get("choices"), list) and doc["choices"]:
            choice = doc["choices"][0]
            if isinstance(choice.get("text"), str):
                text = choice["text"]
            elif isinstance(choice.get("message"), dict):
                text = choice["message"].get("content")
        if not isinstance(text, str):
            raise ProviderError(f"completion response carries no text: {doc!r}")
        usage = doc.get("usage") or {}
        return CompletionResult(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", prompt.token_estimate)),
            completion_tokens=int(usage.get("completion_tokens", count_tokens(text))),
        )


def provider_from_env(env: Mapping[str, str] | None = None) -> HTTPProvider:
    """Build an HTTP provider from LLM_ENDPOINT / LLM_API_KEY / LLM_MODEL."""
    env = os.environ if env is None else env
    endpoint = env.get("LLM_ENDPOINT")
    if not endpoint:
        raise ProviderError("LLM_ENDPOINT is not set and no mock scripts were given")
    return HTTPProvider(
        endpoint=endpoint,
        api_key=env.get("LLM_API_KEY"),
        model=env.get("LLM_MODEL"),
    )
