import random
import threading

import pytest

from conftest import completion_body
from gatedchain import backend as backend_mod
from gatedchain.backend import BackendSpec, ChatRequest, Rule, ScriptedBackend, backoff_delay, complete, script_backend
from gatedchain.errors import ConfigError, MalformedResponse, RemoteStatus, ScriptExhausted, Timeout, TransportError


def req(user="hello", role="worker"):
    return ChatRequest("sys", user, role)


def test_scripted_queue():
    spec = BackendSpec(kind="scripted", script=ScriptedBackend.queue("A", "B"))
    assert complete(spec, req()).text == "A"
    assert complete(spec, req()).text == "B"
    with pytest.raises(ScriptExhausted):
        complete(spec, req())


def test_rules_match_role_and_pattern_in_order():
    spec = script_backend(
        [
            Rule("judge says", role="judge"),
            Rule("about cats", pattern="cat", repeat=True),
            Rule(lambda r: r.user.upper(), repeat=True),
        ]
    )
    assert complete(spec, req("a cat")).text == "about cats"
    assert complete(spec, req("a cat")).text == "about cats"
    assert complete(spec, req("dog")).text == "DOG"
    assert complete(spec, req("dog", role="judge")).text == "judge says"
    assert spec.script.roles == ["worker", "worker", "worker", "judge"]


def test_scripted_exception_is_raised_and_logged():
    spec = script_backend([Rule(Timeout("nope"))])
    with pytest.raises(Timeout):
        complete(spec, req())
    assert spec.script.transcript[0][2] == "<raised Timeout>"


def test_scripted_determinism():
    def run():
        spec = script_backend([Rule("x", role="worker", repeat=True), Rule("y", repeat=True)])
        for role in ["worker", "filter", "worker", "manager"]:
            complete(spec, req(role, role=role))
        return [(r, q.user, t) for r, q, t in spec.script.transcript]

    assert run() == run()


def test_concurrent_scripted_backends_stay_isolated():
    specs = [script_backend([Rule(lambda r, i=i: f"{i}:{r.user}", repeat=True)]) for i in range(8)]

    def hammer(i):
        for n in range(200):
            complete(specs[i], req(f"m{n}"))

    threads = [threading.Thread(target=hammer, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for i, spec in enumerate(specs):
        texts = [t for _, _, t in spec.script.transcript]
        assert texts == [f"{i}:m{n}" for n in range(200)]


def test_empty_user_text_rejected():
    with pytest.raises(ValueError):
        ChatRequest("sys", "")


def test_spec_validation():
    with pytest.raises(ConfigError):
        BackendSpec(kind="http")
    with pytest.raises(ConfigError):
        BackendSpec(kind="scripted")
    with pytest.raises(ConfigError):
        BackendSpec(kind="grpc")
    with pytest.raises(ConfigError):
        BackendSpec(endpoint="http://x", model="m", temperature=-1)
    spec = BackendSpec(endpoint="https://api.example.com/v1", model="m")
    assert spec.key_variable() == "GATEDCHAIN_API_KEY_API_EXAMPLE_COM"
    assert "key" not in str(spec.describe()).lower()


def test_backoff_schedule_with_jitter_bounds():
    spec = BackendSpec(endpoint="http://x", model="m", backoff_ms=100, jitter=0.1)
    rng = random.Random(0)
    for attempt in range(5):
        base = 0.1 * 2**attempt
        for _ in range(50):
            assert base * 0.9 <= backoff_delay(spec, attempt, rng) <= base * 1.1
    assert backoff_delay(BackendSpec(endpoint="http://x", model="m", backoff_ms=100, jitter=0), 2) == pytest.approx(0.4)


# -- HTTP against a local stub ----------------------------------------------------


def http_spec(endpoint, **kw):
    kw.setdefault("backoff_ms", 1)
    return BackendSpec(endpoint=endpoint, model="stub-model", **kw)


def test_http_retries_5xx_then_succeeds(stub_server, no_sleep):
    server = stub_server([(500, "boom"), (500, "boom"), (200, completion_body("hi"))])
    resp = complete(http_spec(server.endpoint, retries=3), req())
    assert resp.text == "hi" and resp.attempts == 3
    assert (resp.input_units, resp.output_units) == (11, 3)
    assert len(no_sleep) == 2
    body = server.requests[0]
    assert body["model"] == "stub-model" and body["temperature"] == 0
    assert body["messages"] == [{"role": "system", "content": "sys"}, {"role": "user", "content": "hello"}]


def test_http_4xx_is_not_retried(stub_server, no_sleep):
    server = stub_server([(401, "unauthorized"), (200, completion_body("never"))])
    with pytest.raises(RemoteStatus) as info:
        complete(http_spec(server.endpoint), req())
    assert info.value.code == 401 and info.value.attempts == 1
    assert len(server.arrivals) == 1 and no_sleep == []


def test_http_gives_up_after_retry_budget(stub_server, no_sleep):
    server = stub_server([(503, "busy")] * 5)
    with pytest.raises(RemoteStatus) as info:
        complete(http_spec(server.endpoint, retries=2), req())
    assert info.value.attempts == 3 and len(server.arrivals) == 3


def test_http_malformed_response(stub_server, no_sleep):
    server = stub_server([(200, {"choices": []})])
    with pytest.raises(MalformedResponse):
        complete(http_spec(server.endpoint), req())


def test_http_usage_fallback_counts_words(stub_server, no_sleep):
    server = stub_server([(200, completion_body("three word reply", usage=False))])
    resp = complete(http_spec(server.endpoint), req("one two"))
    assert resp.output_units == 3 and resp.input_units == 3  # "sys" + "one two"


def test_http_api_key_from_environment(stub_server, no_sleep, monkeypatch):
    server = stub_server([(200, completion_body("ok"))])
    monkeypatch.setenv("MY_TEST_KEY", "s3cret")
    complete(http_spec(server.endpoint, api_key_env="MY_TEST_KEY"), req())
    assert server.headers[0].get("Authorization") == "Bearer s3cret"


def test_http_connection_refused_is_transport_error(no_sleep):
    with pytest.raises(TransportError) as info:
        complete(http_spec("http://127.0.0.1:9", retries=1), req())
    assert info.value.attempts == 2


def test_http_timeout(monkeypatch, no_sleep):
    import httpx

    class SlowClient:
        def post(self, *args, **kwargs):
            raise httpx.ReadTimeout("read timed out")

    monkeypatch.setattr(backend_mod, "_http", SlowClient)
    with pytest.raises(Timeout):
        complete(http_spec("http://127.0.0.1:9", retries=0), req())
