from __future__ import annotations

import json
import logging
import threading
import time

import pytest

from kgtaskgen.errors import ConfigError, GatewayError, ProtocolError, ProviderError, TransportError
from kgtaskgen.gateway import ChatRequest, HttpGateway, Message, MockGateway, ProviderConfig, make_gateway

OK = json.dumps({"choices": [{"message": {"content": "hi"}}], "usage": {"prompt_tokens": 5, "completion_tokens": 1}}).encode()


class ScriptedTransport:
    """Replays a list of outcomes: (status, body) tuples or exceptions."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = []

    def __call__(self, url, body, headers, timeout):
        self.calls.append((url, json.loads(body), dict(headers), timeout))
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, BaseException):
            raise outcome
        return outcome


def gateway(outcomes, **config):
    sleeps: list[float] = []
    transport = ScriptedTransport(outcomes)
    gw = HttpGateway(
        ProviderConfig("https://llm.test/v1/chat", model="m", **config),
        transport,
        sleep=sleeps.append,
        env={"LLM_API_KEY": "sk-secret-123"},
    )
    return gw, transport, sleeps


def test_request_needs_a_user_message():
    with pytest.raises(ValueError):
        ChatRequest((Message("system", "only system"),))
    with pytest.raises(ValueError):
        Message("assistant", "x")


def test_wire_format():
    gw, transport, _ = gateway([(200, OK)])
    resp = gw.complete(ChatRequest.user("hello", system="be brief", images=("/tmp/a.png",)), "caption")
    assert resp.text == "hi" and (resp.prompt_tokens, resp.completion_tokens) == (5, 1)
    url, body, headers, timeout = transport.calls[0]
    assert url == "https://llm.test/v1/chat" and timeout == 60.0
    assert set(body) == {"model", "messages", "temperature", "max_tokens"}
    assert body["temperature"] == 0.1 and body["model"] == "m"
    assert body["messages"][0] == {"role": "system", "content": "be brief"}
    assert body["messages"][1]["content"][1]["image_url"]["url"] == "file:///tmp/a.png"
    assert headers["Authorization"] == "Bearer sk-secret-123"


def test_retry_after_429():
    gw, transport, sleeps = gateway([(429, b"slow down"), (200, OK)])
    assert gw.complete(ChatRequest.user("x"), "quality").text == "hi"
    assert len(transport.calls) == 2 and sleeps == [0.5]
    assert gw.usage.as_dict() == {"requests": 1, "prompt_tokens": 5, "completion_tokens": 1}


def test_backoff_is_exponential_and_exhausts():
    gw, transport, sleeps = gateway([TimeoutError("t")] * 4, retries=3)
    with pytest.raises(TransportError):
        gw.complete(ChatRequest.user("x"), "quality")
    assert len(transport.calls) == 4 and sleeps == [0.5, 1.0, 2.0]


def test_provider_and_protocol_errors():
    gw, _, _ = gateway([(400, b'{"error": "bad"}')])
    with pytest.raises(ProviderError) as info:
        gw.complete(ChatRequest.user("x"), "quality")
    assert info.value.status == 400
    gw, _, _ = gateway([(200, b'{"choices": []}')])
    with pytest.raises(ProtocolError):
        gw.complete(ChatRequest.user("x"), "quality")
    assert isinstance(info.value, GatewayError)


def test_api_key_never_logged(caplog):
    body = b"echo sk-secret-123 back"
    gw, _, _ = gateway([(503, body), OSError("connection to sk-secret-123 reset"), (401, body)])
    with caplog.at_level(logging.DEBUG):
        with pytest.raises(ProviderError) as info:
            gw.complete(ChatRequest.user("x"), "quality")
    assert "sk-secret-123" not in str(info.value)
    assert "sk-secret-123" not in caplog.text
    assert "sk-secret-123" not in repr(gw)


def test_in_flight_cap():
    active, peak = 0, 0
    lock = threading.Lock()

    def slow(url, body, headers, timeout):
        nonlocal active, peak
        with lock:
            active += 1
            peak = max(peak, active)
        time.sleep(0.02)
        with lock:
            active -= 1
        return 200, OK

    gw = HttpGateway(ProviderConfig("https://llm.test", max_in_flight=2), slow, env={})
    threads = [threading.Thread(target=gw.complete, args=(ChatRequest.user(str(i)), "quality")) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak <= 2 and gw.usage.requests == 8


def test_rate_limit_waits_for_the_window():
    now = [0.0]
    sleeps: list[float] = []

    def sleep(s):
        sleeps.append(s)
        now[0] += s

    transport = ScriptedTransport([(200, OK)] * 3)
    gw = HttpGateway(ProviderConfig("https://llm.test", requests_per_minute=2), transport, sleep=sleep, clock=lambda: now[0], env={})
    for _ in range(3):
        gw.complete(ChatRequest.user("x"), "quality")
    assert sleeps == [60.0]


def test_config_validation():
    with pytest.raises(ConfigError):
        ProviderConfig("")
    with pytest.raises(ConfigError):
        ProviderConfig("https://x", retries=-1)


# -- mock --------------------------------------------------------------------------


def test_mock_is_deterministic():
    req = ChatRequest.user("rate this task")
    a = MockGateway(seed=3).complete(req, "quality").text
    assert a == MockGateway(seed=3).complete(req, "quality").text
    assert a != MockGateway(seed=4).complete(req, "quality").text


def test_mock_judge_answer_is_valid_json():
    text = "GOLD STANDARD ANSWER: the cat sat\nGENERATED ANSWER: the cat\n\nRate the generated answer"
    verdict = json.loads(MockGateway().complete(ChatRequest.user(text), "judge_answer").text)
    assert verdict == {"answer_quality": 0.8, "relevance": 1.0, "completeness": 0.8}


def test_mock_overrides_and_usage():
    gw = MockGateway(responses={"quality": ["first", RuntimeError("boom")], "caption": lambda req, rng: "fixed"})
    assert gw.complete(ChatRequest.user("a"), "quality").text == "first"
    with pytest.raises(RuntimeError):
        gw.complete(ChatRequest.user("a"), "quality")
    assert gw.complete(ChatRequest.user("a"), "caption").text == "fixed"
    before = gw.usage.as_dict()
    gw.complete(ChatRequest.user("one two three"), "caption")
    after = gw.usage.as_dict()
    assert all(after[k] >= before[k] for k in after) and after["requests"] == before["requests"] + 1
    with pytest.raises(GatewayError):
        gw.complete(ChatRequest.user("a"), "poetry")


def test_make_gateway():
    assert isinstance(make_gateway({"mock": True, "seed": 5}), MockGateway)
    gw = make_gateway({"mock": False, "endpoint": "https://llm.test", "temperature": 0.0})
    assert isinstance(gw, HttpGateway) and gw.config.temperature == 0.0
    with pytest.raises(ConfigError):
        make_gateway({"mock": False})
