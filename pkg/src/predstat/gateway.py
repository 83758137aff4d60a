"""Single point of contact with chat-completion APIs.

Owns the prompt templates, retry/backoff, a requests-per-minute ceiling,
an audit log of every exchange, and a canned-reply mock provider so the
whole system runs network-free in tests.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import string
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)


class GatewayError(RuntimeError):
    """Unrecoverable gateway failure (bad template, exhausted retries, ...)."""


class TransientProviderError(GatewayError):
    """Retryable provider failure: rate limit, 5xx, connection reset."""


class AuthError(GatewayError):
    """Authentication failure; never retried."""


@dataclass(frozen=True)
class PromptTemplate:
    """A named prompt with ``{placeholder}`` slots.

    ``steering_slot`` names an optional placeholder that may be bound to a
    user goal string; when unbound it renders as empty instead of failing.
    """

    name: str
    body: str
    steering_slot: str | None = None

    def placeholders(self) -> set[str]:
        return {f for _, f, _, _ in string.Formatter().parse(self.body) if f}

    def render(self, **bindings: str) -> str:
        required = self.placeholders()
        if self.steering_slot and self.steering_slot not in bindings:
            bindings[self.steering_slot] = ""
        missing = required - bindings.keys()
        if missing:
            raise GatewayError(
                f"template {self.name!r}: unbound placeholder(s) {sorted(missing)}"
            )
        return self.body.format(**bindings)


DENOTATION_TEMPLATE = PromptTemplate(
    name="denotation",
    body=(
        "Decide whether the property holds for the text.\n"
        "Property: {predicate}\n"
        "Text: {sample}\n"
        "Answer with a single word, YES or NO."
    ),
)

DISCRETIZER_TEMPLATE = PromptTemplate(
    name="discretizer",
    body=(
        "{steering}Below is a list of text samples sorted by a hidden score, "
        "in ascending order.\n"
        "{samples}\n"
        "Propose up to {max_candidates} short predicates, each describing what "
        "kinds of samples are more likely to appear later in the sorted list. "
        "A predicate must be a self-contained proposition about a single text "
        "(for example: \"discusses a sports event\"). Write one predicate per "
        "line and nothing else."
    ),
    steering_slot="steering",
)

SIMILARITY_TEMPLATE = PromptTemplate(
    name="similarity_judge",
    body=(
        "Compare two predicates.\n"
        "Predicate A: {left}\n"
        "Predicate B: {right}\n"
        "Are they similar in meaning, related, or irrelevant to each other? "
        "Answer with exactly one word: similar, related, or irrelevant."
    ),
)

TEMPLATES = {
    t.name: t for t in (DENOTATION_TEMPLATE, DISCRETIZER_TEMPLATE, SIMILARITY_TEMPLATE)
}


@dataclass
class ChatExchange:
    provider: str
    model: str
    prompt: str
    temperature: float
    max_tokens: int
    reply: str
    latency_s: float
    retries: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "provider": self.provider,
                "model": self.model,
                "prompt": self.prompt,
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
                "reply": self.reply,
                "latency_s": round(self.latency_s, 6),
                "retries": self.retries,
            },
            sort_keys=True,
        )


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class MockProvider:
    """Canned-reply provider keyed by prompt hash; deterministic and offline.

    ``fallback`` (prompt -> reply) handles prompts without a registered
    reply; without it, an unknown prompt is an error so tests fail loudly.
    """

    name = "mock"

    def __init__(self, fallback=None):
        self._replies: dict[str, list[str]] = {}
        self.fallback = fallback
        self.calls = 0

    def register(self, prompt: str, reply: str | list[str]) -> None:
        replies = [reply] if isinstance(reply, str) else list(reply)
        self._replies[prompt_digest(prompt)] = replies

    def complete(self, prompt: str, model: str, temperature: float, max_tokens: int) -> str:
        self.calls += 1
        queue = self._replies.get(prompt_digest(prompt))
        if queue:
            return queue.pop(0) if len(queue) > 1 else queue[0]
        if self.fallback is not None:
            return self.fallback(prompt)
        raise GatewayError(f"mock provider: no canned reply for prompt hash {prompt_digest(prompt)[:12]}")


class HttpProvider:
    """OpenAI-style chat-completions provider over plain HTTP."""

    name = "http"

    def __init__(self, base_url: str, api_key_env: str = "PREDSTAT_API_KEY", timeout: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout

    def complete(self, prompt: str, model: str, temperature: float, max_tokens: int) -> str:
        import requests

        api_key = os.environ.get(self.api_key_env, "")
        if not api_key:
            raise AuthError(f"missing API key: set ${self.api_key_env}")
        body = {
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransientProviderError(f"transport error: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"authentication failed ({resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientProviderError(f"provider returned {resp.status_code}")
        if resp.status_code >= 400:
            raise GatewayError(f"provider returned {resp.status_code}: {resp.text[:200]}")
        data = resp.json()
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError) as exc:
            raise GatewayError(f"malformed provider reply: {json.dumps(data)[:200]}") from exc


@dataclass
class GatewayConfig:
    model: str = "mock-model"
    max_tokens: int = 512
    # temperature 0 keeps grounding/judging deterministic; the discretizer
    # wants diverse proposals
    temperature_by_template: dict = field(
        default_factory=lambda: {"denotation": 0.0, "similarity_judge": 0.0, "discretizer": 1.0}
    )
    rpm: int = 100000
    max_parallel: int = 1
    max_retries: int = 4
    backoff_base_s: float = 0.5
    audit_path: str | Path | None = None


class Gateway:
    """Renders templates, enforces rate limits, retries, and audits."""

    def __init__(self, provider, config: GatewayConfig | None = None, *, clock=time.monotonic, sleep=time.sleep):
        self.provider = provider
        self.config = config or GatewayConfig()
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._recent: deque[float] = deque()
        self._audit_lock = threading.Lock()

    def describe(self) -> str:
        return f"{self.provider.name}:{self.config.model}"

    def _wait_for_slot(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._recent and now - self._recent[0] >= 60.0:
                    self._recent.popleft()
                if len(self._recent) < self.config.rpm:
                    self._recent.append(now)
                    return
                wait = 60.0 - (now - self._recent[0])
            self._sleep(max(wait, 0.01))

    def _audit(self, exchange: ChatExchange) -> None:
        if self.config.audit_path is None:
            return
        with self._audit_lock:
            with open(self.config.audit_path, "a", encoding="utf-8") as fh:
                fh.write(exchange.to_json() + "\n")

    def complete(self, template: PromptTemplate, bindings: dict, *, temperature: float | None = None) -> str:
        """Render, call the provider with retry/backoff, audit, return the reply."""
        prompt = template.render(**bindings)
        if temperature is None:
            temperature = self.config.temperature_by_template.get(template.name, 0.0)
        retries = 0
        start = self._clock()
        while True:
            self._wait_for_slot()
            try:
                reply = self.provider.complete(
                    prompt, self.config.model, temperature, self.config.max_tokens
                )
                break
            except TransientProviderError as exc:
                if retries >= self.config.max_retries:
                    raise GatewayError(
                        f"provider failed after {retries} retries: {exc}"
                    ) from exc
                self._sleep(self.config.backoff_base_s * (2**retries))
                retries += 1
        exchange = ChatExchange(
            provider=self.provider.name,
            model=self.config.model,
            prompt=prompt,
            temperature=temperature,
            max_tokens=self.config.max_tokens,
            reply=reply,
            latency_s=self._clock() - start,
            retries=retries,
        )
        # persist before the caller can act on the reply
        self._audit(exchange)
        return reply


_LINE_PREFIX = re.compile(r"^\s*(?:[-*•]|\(?\d+[.)]?)?\s*")


def parse_candidates(reply: str, max_n: int) -> list[str]:
    """Extract up to ``max_n`` deduplicated predicate lines from a reply."""
    out: list[str] = []
    seen: set[str] = set()
    for raw in reply.splitlines():
        text = _LINE_PREFIX.sub("", raw).strip().strip('"').strip()
        if not text:
            continue
        key = text.lower()
        if key in seen:
            continue
        seen.add(key)
        out.append(text)
        if len(out) >= max_n:
            break
    if not out:
        raise GatewayError("no candidates could be parsed from the reply")
    return out
