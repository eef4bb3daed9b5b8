import json
import threading

import pytest

from privmeter.llm import (
    CallMeta,
    ChatMessage,
    CompletionParams,
    ExtractionError,
    FixtureMissError,
    HttpChatBackend,
    NumericBoundsError,
    NumericParseError,
    PromptError,
    ScriptedBackend,
    TEMPLATE_IDS,
    TransportError,
    extract_list,
    extract_tagged,
    load_template,
    parse_numeric,
    render_prompt,
    user_content_digest,
)


class TestExtractTagged:
    def test_basic(self):
        assert extract_tagged("<answer>42</answer>", "answer") == "42"

    def test_first_occurrence_wins(self):
        text = "x <answer> 0.5 </answer> y <answer>9</answer>"
        assert extract_tagged(text, "answer") == "0.5"

    def test_unclosed_tag(self):
        with pytest.raises(ExtractionError, match="not closed"):
            extract_tagged("<answer>1", "answer")

    def test_absent_tag(self):
        with pytest.raises(ExtractionError, match="no <answer>"):
            extract_tagged("nothing here", "answer")

    def test_wrap_roundtrip(self):
        for s in ["plain", "  padded  ", "multi\nline", "0.123"]:
            assert extract_tagged(f"<q>{s}</q>", "q") == s.strip()


class TestExtractList:
    def test_answer_type_pairs(self):
        text = "<list><answer>a</answer><type>age</type><answer>b</answer><type>pet</type></list>"
        assert extract_list(text) == [("a", "age"), ("b", "pet")]

    def test_missing_types_are_none(self):
        text = "<list><answer>a</answer><answer>b</answer><type>pet</type></list>"
        assert extract_list(text) == [("a", None), ("b", "pet")]

    def test_empty_list(self):
        assert extract_list("<list></list>") == []

    def test_outside_answers_ignored(self):
        text = "<answer>junk</answer><list><answer>a</answer></list>"
        assert extract_list(text) == [("a", None)]


class TestParseNumeric:
    def test_percentage_decimal(self):
        assert parse_numeric("0.25", "percentage") == 0.25

    def test_population_with_commas(self):
        assert parse_numeric("1,200,000", "population") == 1200000

    def test_trailing_percent_sign(self):
        assert parse_numeric("25%", "percentage") == 0.25

    def test_currency_stripped(self):
        assert parse_numeric("$1,000", "population") == 1000

    def test_bounds(self):
        with pytest.raises(NumericBoundsError):
            parse_numeric("3.5", "percentage")
        with pytest.raises(NumericBoundsError):
            parse_numeric("0", "percentage")
        with pytest.raises(NumericBoundsError):
            parse_numeric("0.5", "population")

    def test_not_a_number(self):
        with pytest.raises(NumericParseError):
            parse_numeric("several", "population")

    def test_never_violates_answer_invariant(self):
        # Fuzz a handful of odd-but-parseable strings.
        for text in ["100%", "0.0001", "1", "99.9%", "1e-9"]:
            try:
                value = parse_numeric(text, "percentage")
            except (NumericParseError, NumericBoundsError):
                continue
            assert 0 < value <= 1


class TestTemplates:
    def test_all_templates_load(self):
        for template_id in TEMPLATE_IDS:
            template = load_template(template_id)
            assert template.body.strip()

    def test_render_substitutes(self):
        template = load_template("query_estimation")
        messages = render_prompt(template, {"search_query": "QX"}, 3)
        assert len(messages) == 1
        assert messages[0].role == "user"
        assert "QX" in messages[0].content

    def test_missing_binding_named(self):
        template = load_template("query_estimation")
        with pytest.raises(PromptError, match="search_query"):
            render_prompt(template, {}, 3)

    def test_zero_demonstrations_elides_examples(self):
        template = load_template("query_estimation")
        with_demos = render_prompt(template, {"search_query": "Q"}, 3)[0].content
        without = render_prompt(template, {"search_query": "Q"}, 0)[0].content
        assert len(without) < len(with_demos)
        assert "Marlow Falls" not in without  # demo content gone

    def test_demonstration_count_respected(self):
        template = load_template("query_estimation")
        one = render_prompt(template, {"search_query": "Q"}, 1)[0].content
        three = render_prompt(template, {"search_query": "Q"}, 3)[0].content
        assert len(one) < len(three)


class TestScriptedBackend:
    def test_fixture_identity(self):
        backend = ScriptedBackend()
        backend.add("query_estimation", "user content", "<answer>0.25</answer><score>0.9</score>")
        messages = [ChatMessage("user", "user content")]
        meta = CallMeta("query_estimation")
        out = backend.complete(messages, CompletionParams(), meta)
        assert out == "<answer>0.25</answer><score>0.9</score>"

    def test_keyed_by_content_not_order(self):
        backend = ScriptedBackend()
        backend.add("query_estimation", "A", "answer A")
        backend.add("query_estimation", "B", "answer B")
        meta = CallMeta("query_estimation")
        # Ask in the reverse order of registration.
        assert backend.complete([ChatMessage("user", "B")], CompletionParams(), meta) == "answer B"
        assert backend.complete([ChatMessage("user", "A")], CompletionParams(), meta) == "answer A"

    def test_sequences_then_sticky(self):
        backend = ScriptedBackend()
        backend.add("t", "C", ["bad", "good"])
        meta = CallMeta("t")
        msgs = [ChatMessage("user", "C")]
        params = CompletionParams()
        assert backend.complete(msgs, params, meta) == "bad"
        assert backend.complete(msgs, params, meta) == "good"
        assert backend.complete(msgs, params, meta) == "good"

    def test_fixture_miss_fails_fast(self):
        backend = ScriptedBackend()
        with pytest.raises(FixtureMissError):
            backend.complete([ChatMessage("user", "X")], CompletionParams(), CallMeta("t"))

    def test_concurrent_identical_calls_identical_outputs(self):
        backend = ScriptedBackend()
        backend.add("t", "same", "only answer")
        results = []

        def worker():
            out = backend.complete([ChatMessage("user", "same")], CompletionParams(), CallMeta("t"))
            results.append(out)

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results == ["only answer"] * 8

    def test_roundtrip_serialization(self, tmp_path):
        backend = ScriptedBackend()
        backend.add("t", "content", ["a", "b"])
        path = tmp_path / "fixture.json"
        path.write_text(json.dumps(backend.to_json()))
        loaded = ScriptedBackend.from_file(path)
        meta = CallMeta("t")
        msgs = [ChatMessage("user", "content")]
        assert loaded.complete(msgs, CompletionParams(), meta) == "a"
        assert loaded.complete(msgs, CompletionParams(), meta) == "b"


class _FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text or json.dumps(payload or {})

    def json(self):
        if self._payload is None:
            raise ValueError("no json")
        return self._payload


class _FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append({"url": url, "json": json, "headers": headers})
        return self.responses.pop(0)


class TestHttpBackend:
    def _backend(self, responses, **kwargs):
        session = _FakeSession(responses)
        backend = HttpChatBackend(
            base_url="http://fake.test/v1",
            api_key="secret",
            model="m1",
            session=session,
            backoff=0.0,
            **kwargs,
        )
        return backend, session

    def test_wire_format(self):
        payload = {"choices": [{"message": {"content": "hi"}}]}
        backend, session = self._backend([_FakeResponse(200, payload)])
        out = backend.complete(
            [ChatMessage("user", "hello")], CompletionParams(temperature=0.7)
        )
        assert out == "hi"
        req = session.requests[0]
        assert req["url"] == "http://fake.test/v1/chat/completions"
        assert req["json"] == {
            "model": "m1",
            "messages": [{"role": "user", "content": "hello"}],
            "temperature": 0.7,
        }
        assert req["headers"]["Authorization"] == "Bearer secret"

    def test_retryable_status_then_success(self):
        payload = {"choices": [{"message": {"content": "ok"}}]}
        backend, session = self._backend(
            [_FakeResponse(429, text="slow down"), _FakeResponse(200, payload)]
        )
        assert backend.complete([ChatMessage("user", "x")], CompletionParams()) == "ok"
        assert len(session.requests) == 2

    def test_retries_exhausted_surfaces_status(self):
        backend, _ = self._backend(
            [_FakeResponse(429), _FakeResponse(429), _FakeResponse(429)]
        )
        with pytest.raises(TransportError) as err:
            backend.complete([ChatMessage("user", "x")], CompletionParams())
        assert err.value.status == 429

    def test_non_retryable_status_raises_immediately(self):
        backend, session = self._backend([_FakeResponse(401, text="denied")])
        with pytest.raises(TransportError) as err:
            backend.complete([ChatMessage("user", "x")], CompletionParams())
        assert err.value.status == 401
        assert len(session.requests) == 1


def test_digest_only_covers_user_content():
    a = [ChatMessage("user", "same")]
    b = [ChatMessage("system", "different system"), ChatMessage("user", "same")]
    assert user_content_digest(a) == user_content_digest(b)
