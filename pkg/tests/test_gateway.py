import math

import pytest

from clinpipe import gateway
from clinpipe.gateway import (
    AuthMissing,
    BackendConfig,
    ChatRequest,
    ChatResponse,
    DimensionMismatch,
    EmptyBatch,
    ExhaustedRetries,
    HashEmbedder,
    MalformedResponse,
    MockScript,
    MockScriptMiss,
    ScriptedEmbedder,
    complete,
    complete_batch,
    embed,
    request_fingerprint,
)


def _req(content="olá", seed=None, model="m"):
    return ChatRequest(model_id=model, messages=[("user", content)], seed=seed)


def _chat_body(content, finish="stop"):
    return {
        "choices": [{"message": {"content": content}, "finish_reason": finish}],
        "usage": {"prompt_tokens": 3, "completion_tokens": 5},
    }


@pytest.fixture(autouse=True)
def no_sleep(monkeypatch):
    monkeypatch.setattr(gateway, "_sleep", lambda _s: None)


class TestChatRequest:
    def test_requires_user_message(self):
        with pytest.raises(ValueError):
            ChatRequest(model_id="m", messages=[("system", "x")])

    def test_rejects_bad_role(self):
        with pytest.raises(ValueError):
            ChatRequest(model_id="m", messages=[("tool", "x")])

    def test_rejects_negative_temperature(self):
        with pytest.raises(ValueError):
            ChatRequest(model_id="m", messages=[("user", "x")], temperature=-1)


class TestFingerprint:
    def test_stable(self):
        assert request_fingerprint(_req()) == request_fingerprint(_req())

    def test_seed_changes_fingerprint(self):
        assert request_fingerprint(_req(seed=1)) != request_fingerprint(_req(seed=2))

    def test_messages_change_fingerprint(self):
        assert request_fingerprint(_req("a")) != request_fingerprint(_req("b"))


class TestMockScript:
    def test_scripted_identity(self):
        script = MockScript()
        req = _req("pergunta")
        script.add(req, ChatResponse(content="resposta"))
        assert complete(req, script).content == "resposta"

    def test_default_fallback(self):
        script = MockScript(default_response=ChatResponse(content="padrão"))
        assert complete(_req("qualquer"), script).content == "padrão"

    def test_miss_without_default(self):
        with pytest.raises(MockScriptMiss):
            complete(_req(), MockScript())

    def test_save_load_roundtrip(self, tmp_path):
        script = MockScript(default_response=ChatResponse(content="d"))
        script.add(_req("a"), ChatResponse(content="ra", usage=(1, 2)))
        script.save(tmp_path / "s.jsonl")
        loaded = MockScript.load(tmp_path / "s.jsonl")
        assert complete(_req("a"), loaded).content == "ra"
        assert complete(_req("a"), loaded).usage == (1, 2)
        assert complete(_req("zzz"), loaded).content == "d"


class TestRemoteComplete:
    def test_auth_missing_before_any_network_call(self, monkeypatch):
        monkeypatch.delenv("TEST_KEY", raising=False)
        calls = []

        def transport(url, payload, headers, timeout):
            calls.append(url)
            return 200, _chat_body("x")

        backend = BackendConfig(endpoint_url="https://api.test/v1", auth_env_var="TEST_KEY")
        with pytest.raises(AuthMissing):
            complete(_req(), backend, transport=transport)
        assert calls == []

    def test_success_parses_body(self, monkeypatch):
        monkeypatch.setenv("TEST_KEY", "k")
        backend = BackendConfig(endpoint_url="https://api.test/v1", auth_env_var="TEST_KEY")
        resp = complete(_req(), backend, transport=lambda *a: (200, _chat_body("oi", "length")))
        assert resp.content == "oi"
        assert resp.finish_reason == "length"
        assert resp.usage == (3, 5)

    def test_retries_on_5xx_then_succeeds(self, monkeypatch):
        monkeypatch.setenv("TEST_KEY", "k")
        statuses = iter([503, 503, 200])

        def transport(url, payload, headers, timeout):
            status = next(statuses)
            return status, _chat_body("ok") if status == 200 else None

        backend = BackendConfig(
            endpoint_url="https://api.test/v1", auth_env_var="TEST_KEY", max_attempts=3
        )
        assert complete(_req(), backend, transport=transport).content == "ok"

    def test_exhausted_retries_carries_last_status(self, monkeypatch):
        monkeypatch.setenv("TEST_KEY", "k")
        backend = BackendConfig(
            endpoint_url="https://api.test/v1", auth_env_var="TEST_KEY", max_attempts=2
        )
        with pytest.raises(ExhaustedRetries) as excinfo:
            complete(_req(), backend, transport=lambda *a: (503, None))
        assert excinfo.value.last_status == 503

    def test_non_retryable_4xx_fails_immediately(self, monkeypatch):
        monkeypatch.setenv("TEST_KEY", "k")
        calls = []

        def transport(url, payload, headers, timeout):
            calls.append(1)
            return 400, None

        backend = BackendConfig(
            endpoint_url="https://api.test/v1", auth_env_var="TEST_KEY", max_attempts=5
        )
        with pytest.raises(ExhaustedRetries) as excinfo:
            complete(_req(), backend, transport=transport)
        assert excinfo.value.last_status == 400
        assert len(calls) == 1

    def test_429_is_retried(self, monkeypatch):
        monkeypatch.setenv("TEST_KEY", "k")
        statuses = iter([429, 200])

        def transport(url, payload, headers, timeout):
            status = next(statuses)
            return status, _chat_body("ok") if status == 200 else None

        backend = BackendConfig(endpoint_url="https://api.test/v1", auth_env_var="TEST_KEY")
        assert complete(_req(), backend, transport=transport).content == "ok"

    def test_malformed_body(self, monkeypatch):
        monkeypatch.setenv("TEST_KEY", "k")
        backend = BackendConfig(endpoint_url="https://api.test/v1", auth_env_var="TEST_KEY")
        with pytest.raises(MalformedResponse):
            complete(_req(), backend, transport=lambda *a: (200, {"nope": 1}))

    def test_transport_exception_retried(self, monkeypatch):
        monkeypatch.setenv("TEST_KEY", "k")
        attempts = []

        def transport(url, payload, headers, timeout):
            attempts.append(1)
            if len(attempts) < 2:
                raise ConnectionError("boom")
            return 200, _chat_body("ok")

        backend = BackendConfig(endpoint_url="https://api.test/v1", auth_env_var="TEST_KEY")
        assert complete(_req(), backend, transport=transport).content == "ok"
        assert len(attempts) == 2


class TestBatch:
    def test_order_preserved(self):
        script = MockScript()
        requests = [_req(f"q{i}") for i in range(10)]
        for i, req in enumerate(requests):
            script.add(req, ChatResponse(content=f"r{i}"))
        responses = complete_batch(requests, script, max_in_flight=3)
        assert [r.content for r in responses] == [f"r{i}" for i in range(10)]

    def test_positional_error_does_not_abort(self):
        script = MockScript()
        requests = [_req(f"q{i}") for i in range(10)]
        for i, req in enumerate(requests):
            if i != 4:
                script.add(req, ChatResponse(content=f"r{i}"))
        responses = complete_batch(requests, script)
        assert responses[4].finish_reason == "error"
        assert responses[4].error
        assert sum(1 for r in responses if r.finish_reason == "stop") == 9

    def test_empty_batch(self):
        with pytest.raises(EmptyBatch):
            complete_batch([], MockScript())


class TestEmbed:
    def test_unit_norm(self):
        vectors = embed(["um", "dois"], HashEmbedder(dim=4))
        for v in vectors:
            assert math.isclose(sum(x * x for x in v) ** 0.5, 1.0, abs_tol=1e-9)

    def test_identical_texts_identical_vectors(self):
        a, b = embed(["mesmo texto", "mesmo texto"], HashEmbedder(dim=8))
        assert a == b

    def test_empty_list(self):
        with pytest.raises(EmptyBatch):
            embed([], HashEmbedder())

    def test_empty_text(self):
        with pytest.raises(EmptyBatch):
            embed([""], HashEmbedder())

    def test_dimension_mismatch(self):
        backend = ScriptedEmbedder({"a": [1.0, 0.0], "b": [1.0, 0.0, 0.0]})
        with pytest.raises(DimensionMismatch):
            embed(["a", "b"], backend)

    def test_zero_vector_rejected(self):
        with pytest.raises(MalformedResponse):
            embed(["a"], ScriptedEmbedder({"a": [0.0, 0.0]}))

    def test_http_embeddings(self, monkeypatch):
        monkeypatch.setenv("TEST_KEY", "k")
        backend = BackendConfig(endpoint_url="https://api.test/v1", auth_env_var="TEST_KEY")

        def transport(url, payload, headers, timeout):
            assert payload["model"] == "emb-model"
            return 200, {"data": [{"embedding": [3.0, 4.0]} for _ in payload["input"]]}

        vectors = embed(["x", "y"], backend, model_id="emb-model", transport=transport)
        assert vectors == [[0.6, 0.8], [0.6, 0.8]]
