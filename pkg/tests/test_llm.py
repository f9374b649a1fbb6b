"""Prompt templates, token estimation, answer parsing, and providers."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from flowgen.llm import (
    CompletionParams,
    FAMILY_PRESEED,
    MockProvider,
    MockScript,
    NoScriptMatchError,
    OperatorParseError,
    ProviderError,
    RenderedPrompt,
    TemplateError,
    count_tokens,
    load_mock_scripts,
    load_template,
    parse_operator_list,
    parse_template,
    provider_from_env,
    render_prompt,
)

PARAMS = CompletionParams()


# --- token estimation -------------------------------------------------------------


def test_count_tokens_examples():
    assert count_tokens("sort on age") == 3
    assert count_tokens("") == 0
    assert count_tokens("a.b,c") == 5
    assert count_tokens("   ") == 0
    assert count_tokens("full_name") == 3  # two runs plus the underscore
    assert count_tokens("ORDERS-1 (table)") == 6


@given(st.text(max_size=40), st.text(max_size=40))
def test_count_tokens_is_additive_across_a_space(a, b):
    assert count_tokens(a + " " + b) == count_tokens(a) + count_tokens(b)


@given(st.text(alphabet=st.characters(max_codepoint=127), max_size=80))
def test_count_tokens_zero_only_for_whitespace_within_ascii(text):
    estimate = count_tokens(text)
    assert estimate >= 0
    assert (estimate == 0) == (text.strip() == "")


def test_count_tokens_ignores_nonascii_alphanumerics():
    # unicode alphanumerics are neither runs nor punctuation to the estimator
    assert count_tokens("²") == 0


# --- templates ---------------------------------------------------------------------


def test_placeholders_substitute_in_order():
    template = parse_template("A {{x}} B {{y}} C {{x}}")
    rendered = render_prompt(template, {"x": "1", "y": "2"})
    assert rendered.text == "A 1 B 2 C 1"
    assert rendered.token_estimate == count_tokens(rendered.text)


def test_unbound_placeholder_is_an_error():
    template = parse_template("hello {{name}}")
    with pytest.raises(TemplateError, match="name"):
        render_prompt(template, {})


def test_extra_bindings_are_ignored():
    template = parse_template("static text")
    assert render_prompt(template, {"unused": "x"}).text == "static text"


def test_unknown_family_rejected():
    with pytest.raises(TemplateError, match="family"):
        parse_template("text", family="mistral")


def test_granite_template_requires_role_tokens():
    with pytest.raises(TemplateError, match="role-delimiter"):
        parse_template("plain text", family="granite")


def test_preseed_appends_after_rendered_text():
    template = parse_template("Operators: ", preseed=FAMILY_PRESEED["llama"])
    assert render_prompt(template, {}).text == 'Operators: "'


def test_load_template_drops_one_trailing_newline(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("line {{x}}\n")
    template = load_template(path)
    assert render_prompt(template, {"x": "1"}).text == "line 1"


# --- operator answers -----------------------------------------------------------------


def test_operator_list_strips_quotes_and_lowercases():
    assert parse_operator_list('"Teradata, Sort, Filter"') == ["teradata", "sort", "filter"]


def test_operator_list_handles_preseeded_answer_missing_open_quote():
    assert parse_operator_list('tail"') == ["tail"]


def test_operator_list_keeps_duplicates_in_order():
    assert parse_operator_list('"head, tail, head"') == ["head", "tail", "head"]


def test_operator_list_empty_answers():
    assert parse_operator_list('""') == []
    assert parse_operator_list("   ") == []


def test_operator_list_skips_empty_pieces():
    assert parse_operator_list('"a,, b,"') == ["a", "b"]


def test_operator_list_rejects_nonalnum_garbage():
    with pytest.raises(OperatorParseError):
        parse_operator_list("!!!")


# --- mock provider ---------------------------------------------------------------------


def prompt_of(text: str) -> RenderedPrompt:
    return RenderedPrompt(text=text, token_estimate=count_tokens(text))


def test_first_matching_script_wins():
    provider = MockProvider(
        scripts=[
            MockScript("contains", "alpha", "first"),
            MockScript("contains", "alpha beta", "second"),
        ]
    )
    assert provider.complete(prompt_of("alpha beta"), PARAMS).text == "first"


def test_exact_requires_full_equality():
    provider = MockProvider(scripts=[MockScript("exact", "alpha", "hit")])
    assert provider.complete(prompt_of("alpha"), PARAMS).text == "hit"
    with pytest.raises(NoScriptMatchError):
        provider.complete(prompt_of("alpha beta"), PARAMS)


def test_default_token_accounting_uses_estimates():
    provider = MockProvider(scripts=[MockScript("contains", "x", "two words")])
    result = provider.complete(prompt_of("x y z"), PARAMS)
    assert result.prompt_tokens == 3
    assert result.completion_tokens == 2


def test_script_token_overrides_take_precedence():
    provider = MockProvider(
        scripts=[
            MockScript("contains", "x", "reply", prompt_tokens=111, completion_tokens=7)
        ]
    )
    result = provider.complete(prompt_of("x"), PARAMS)
    assert (result.prompt_tokens, result.completion_tokens) == (111, 7)


def test_no_match_error_lists_the_scripts_tried():
    provider = MockProvider(scripts=[MockScript("contains", "needle", "r")])
    with pytest.raises(NoScriptMatchError, match="needle"):
        provider.complete(prompt_of("haystack"), PARAMS)


def test_load_mock_scripts_round_trip(tmp_path):
    path = tmp_path / "scripts.json"
    path.write_text(
        json.dumps(
            [
                {"match": {"exact": "p"}, "response": "r"},
                {"match": {"contains": "q"}, "response": "s", "prompt_tokens": 5},
            ]
        )
    )
    provider = load_mock_scripts(path)
    assert provider.complete(prompt_of("p"), PARAMS).text == "r"
    assert provider.complete(prompt_of("a q b"), PARAMS).prompt_tokens == 5


def test_load_mock_scripts_rejects_bad_shapes(tmp_path):
    path = tmp_path / "scripts.json"
    for doc, message in [
        ({"match": {}}, "array"),
        ([{"match": {"exact": "x", "contains": "y"}, "response": "r"}], "script 0"),
        ([{"match": {"regex": "x"}, "response": "r"}], "unknown matcher"),
        ([{"response": "r"}], "needs match"),
    ]:
        path.write_text(json.dumps(doc))
        with pytest.raises(ProviderError, match=message):
            load_mock_scripts(path)


# --- HTTP provider ------------------------------------------------------------------


def test_provider_from_env_requires_endpoint():
    with pytest.raises(ProviderError, match="LLM_ENDPOINT"):
        provider_from_env({})
    provider = provider_from_env(
        {"LLM_ENDPOINT": "http://llm.local", "LLM_MODEL": "m", "LLM_API_KEY": "k"}
    )
    assert provider.endpoint == "http://llm.local"
    assert provider.model == "m" and provider.api_key == "k"


def test_http_provider_parses_usage_and_choice_shapes(monkeypatch):
    class FakeResponse:
        status_code = 200

        def json(self):
            return {
                "choices": [{"text": "answer"}],
                "usage": {"prompt_tokens": 10, "completion_tokens": 2},
            }

    seen = {}

    def fake_post(url, json=None, headers=None, timeout=None):
        seen["payload"], seen["headers"] = json, headers
        return FakeResponse()

    monkeypatch.setattr("flowgen.llm.requests.post", fake_post)
    provider = provider_from_env({"LLM_ENDPOINT": "http://llm.local", "LLM_API_KEY": "k"})
    result = provider.complete(prompt_of("ping"), PARAMS)
    assert result.text == "answer"
    assert (result.prompt_tokens, result.completion_tokens) == (10, 2)
    assert seen["payload"]["prompt"] == "ping"
    assert seen["headers"]["Authorization"] == "Bearer k"


def test_http_provider_surfaces_client_errors_without_retry(monkeypatch):
    calls = {"n": 0}

    class FakeResponse:
        status_code = 400
        text = "bad request"

    def fake_post(*args, **kwargs):
        calls["n"] += 1
        return FakeResponse()

    monkeypatch.setattr("flowgen.llm.requests.post", fake_post)
    provider = provider_from_env({"LLM_ENDPOINT": "http://llm.local"})
    with pytest.raises(ProviderError, match="rejected"):
        provider.complete(prompt_of("ping"), PARAMS)
    assert calls["n"] == 1


def test_http_provider_retries_server_errors(monkeypatch):
    calls = {"n": 0}

    class Flaky:
        status_code = 500
        text = "boom"

    class Good:
        status_code = 200

        def json(self):
            return {"text": "ok"}

    def fake_post(*args, **kwargs):
        calls["n"] += 1
        return Flaky() if calls["n"] == 1 else Good()

    monkeypatch.setattr("flowgen.llm.requests.post", fake_post)
    monkeypatch.setattr("flowgen.llm.time.sleep", lambda s: None)
    provider = provider_from_env({"LLM_ENDPOINT": "http://llm.local"})
    assert provider.complete(prompt_of("ping"), PARAMS).text == "ok"
    assert calls["n"] == 2
