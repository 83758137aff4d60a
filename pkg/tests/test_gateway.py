import json

import pytest

from predstat.gateway import (
    DENOTATION_TEMPLATE,
    DISCRETIZER_TEMPLATE,
    Gateway,
    GatewayConfig,
    GatewayError,
    MockProvider,
    PromptTemplate,
    TransientProviderError,
    parse_candidates,
)


def test_render_fails_on_unbound_placeholder():
    with pytest.raises(GatewayError, match="sample"):
        DENOTATION_TEMPLATE.render(predicate="is legible")


def test_unbound_placeholder_never_reaches_the_provider():
    provider = MockProvider()
    gateway = Gateway(provider, GatewayConfig())
    with pytest.raises(GatewayError):
        gateway.complete(DISCRETIZER_TEMPLATE, {"max_candidates": "5"})
    assert provider.calls == 0


def test_steering_slot_defaults_to_empty():
    rendered = DISCRETIZER_TEMPLATE.render(samples="- a", max_candidates="3")
    assert rendered.startswith("Below is a list")
    steered = DISCRETIZER_TEMPLATE.render(
        samples="- a", max_candidates="3", steering="Focus on sports.\n"
    )
    assert steered.startswith("Focus on sports.")


def test_mock_provider_returns_registered_reply():
    provider = MockProvider()
    template = PromptTemplate("t", "ask {q}")
    provider.register("ask one", "YES")
    gateway = Gateway(provider, GatewayConfig())
    assert gateway.complete(template, {"q": "one"}) == "YES"


def test_transient_failure_then_success_records_one_retry(tmp_path):
    audit = tmp_path / "audit.jsonl"

    class Flaky:
        name = "flaky"

        def __init__(self):
            self.attempts = 0

        def complete(self, prompt, model, temperature, max_tokens):
            self.attempts += 1
            if self.attempts == 1:
                raise TransientProviderError("429")
            return "ok"

    sleeps = []
    gateway = Gateway(
        Flaky(),
        GatewayConfig(audit_path=audit, backoff_base_s=0.25),
        sleep=sleeps.append,
    )
    reply = gateway.complete(PromptTemplate("t", "hi"), {})
    assert reply == "ok"
    record = json.loads(audit.read_text().strip())
    assert record["retries"] == 1
    assert record["reply"] == "ok"
    assert sleeps == [0.25]


def test_retries_exhaust_into_gateway_error():
    class Dead:
        name = "dead"

        def complete(self, prompt, model, temperature, max_tokens):
            raise TransientProviderError("503")

    gateway = Gateway(Dead(), GatewayConfig(max_retries=2), sleep=lambda s: None)
    with pytest.raises(GatewayError, match="after 2 retries"):
        gateway.complete(PromptTemplate("t", "hi"), {})


def test_rate_limit_waits_for_a_slot():
    clock = {"now": 0.0}
    sleeps = []

    def fake_sleep(s):
        sleeps.append(s)
        clock["now"] += s

    provider = MockProvider(fallback=lambda prompt: "r")
    gateway = Gateway(
        provider,
        GatewayConfig(rpm=2),
        clock=lambda: clock["now"],
        sleep=fake_sleep,
    )
    template = PromptTemplate("t", "p{i}")
    gateway.complete(template, {"i": "1"})
    gateway.complete(template, {"i": "2"})
    gateway.complete(template, {"i": "3"})  # must wait out the window
    assert sleeps and sum(sleeps) >= 60.0


def test_audit_log_appends_every_exchange(tmp_path):
    audit = tmp_path / "audit.jsonl"
    provider = MockProvider(fallback=lambda prompt: "fine")
    gateway = Gateway(provider, GatewayConfig(audit_path=audit))
    template = PromptTemplate("t", "say {w}")
    gateway.complete(template, {"w": "a"})
    gateway.complete(template, {"w": "b"})
    lines = [json.loads(l) for l in audit.read_text().splitlines()]
    assert [l["prompt"] for l in lines] == ["say a", "say b"]
    assert all(l["reply"] == "fine" for l in lines)


def test_parse_candidates_truncates():
    reply = "\n".join(f"{i}. predicate number {i}" for i in range(1, 8))
    assert parse_candidates(reply, 5) == [f"predicate number {i}" for i in range(1, 6)]


def test_parse_candidates_dedupes_case_insensitively():
    reply = "- Talks about dogs\n- talks about DOGS\n- talks about dogs"
    assert parse_candidates(reply, 5) == ["Talks about dogs"]


def test_parse_candidates_rejects_empty_reply():
    with pytest.raises(GatewayError, match="no candidates"):
        parse_candidates("\n  \n", 5)


def test_parse_candidates_strips_bullets_and_quotes():
    reply = '1) "mentions a country"\n* mentions a sport'
    assert parse_candidates(reply, 5) == ["mentions a country", "mentions a sport"]
