"""LLM backends: a deterministic mock for tests and an OpenAI-compatible HTTP client."""

from __future__ import annotations

import hashlib
import os
import re
import threading

import numpy as np


class TransportError(RuntimeError):
    """The backend could not produce a response (network, HTTP status, timeout)."""


class LLMBackend:
    """Base class. Subclasses implement ``complete``; it must return or raise, never block forever."""

    def __init__(self, name: str, max_concurrency: int = 4, retry_budget: int = 2, retry_backoff_s: float = 0.0):
        if max_concurrency < 1:
            raise ValueError("max_concurrency must be positive")
        if retry_budget < 0:
            raise ValueError("retry_budget must be non-negative")
        self.name = name
        self.max_concurrency = max_concurrency
        self.retry_budget = retry_budget
        self.retry_backoff_s = retry_backoff_s
        self.requests = 0
        self._in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()

    def complete(self, system: str, user: str) -> str:
        raise NotImplementedError

    def __call__(self, system: str, user: str) -> str:
        with self._lock:
            self.requests += 1
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
        try:
            return self.complete(system, user)
        finally:
            with self._lock:
                self._in_flight -= 1


_NEGATION = re.compile(r"\b(no|not|without|negative for|absent)\b")


def read_report(text: str, vocabulary: list[str]) -> np.ndarray:
    """Rule-based reading used by the mock: a class is positive when a sentence names it without negation."""
    sentences = [s.strip().lower() for s in re.split(r"[.\n;]", text) if s.strip()]
    out = np.zeros(len(vocabulary))
    for k, name in enumerate(vocabulary):
        pattern = re.compile(r"(?<![a-z])" + re.escape(name.lower()) + r"(?![a-z])")
        for s in sentences:
            if pattern.search(s) and not _NEGATION.search(s):
                out[k] = 1.0
                break
    return out


class MockBackend(LLMBackend):
    """Deterministic stand-in for an LLM.

    With ``response`` set it echoes that string. Otherwise it reads the report
    with :func:`read_report`, flips each answer with probability ``flip_rate``
    and, with probability ``error_rate``, writes a ``2`` in place of a positive
    answer. All randomness is keyed on (seed, prompt) so results do not depend on
    call order. ``fail_attempts`` makes the first N calls per prompt raise
    :class:`TransportError`.
    """

    def __init__(self, name: str = "mock", vocabulary: list[str] | None = None, *, response: str | None = None,
                 flip_rate: float = 0.0, error_rate: float = 0.0, seed: int = 0, fail_attempts: int = 0,
                 error_report_substrings: tuple[str, ...] = (), **kwargs):
        super().__init__(name, **kwargs)
        if response is None and not vocabulary:
            raise ValueError("mock backend needs either a fixed response or a vocabulary")
        self.vocabulary = list(vocabulary or [])
        self.response = response
        self.flip_rate = flip_rate
        self.error_rate = error_rate
        self.seed = seed
        self.fail_attempts = fail_attempts
        self.error_report_substrings = tuple(error_report_substrings)
        self._attempts: dict[str, int] = {}

    def _rng(self, user: str) -> np.random.Generator:
        digest = hashlib.sha256(f"{self.seed}\x00{user}".encode()).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    def complete(self, system: str, user: str) -> str:
        if self.fail_attempts:
            with self._lock:
                n = self._attempts.get(user, 0)
                self._attempts[user] = n + 1
            if n < self.fail_attempts:
                raise TransportError(f"simulated failure {n + 1}/{self.fail_attempts}")
        if self.response is not None:
            return self.response
        rng = self._rng(user)
        values = read_report(user, self.vocabulary)
        flips = rng.random(len(values)) < self.flip_rate
        values = np.where(flips, 1.0 - values, values)
        tokens = [str(int(v)) for v in values]
        inject = rng.random() < self.error_rate or any(s in user for s in self.error_report_substrings)
        if inject:
            pos = [i for i, t in enumerate(tokens) if t == "1"] or [0]
            tokens[pos[0]] = "2"
        return ",".join(tokens)


class OpenAICompatibleBackend(LLMBackend):
    """Chat-completions client for any OpenAI-compatible endpoint.

    The API key is read from the environment variable named by ``api_key_env``.
    """

    def __init__(self, name: str, model: str, base_url: str, api_key_env: str = "LLM_API_KEY", *,
                 timeout_s: float = 60.0, temperature: float = 0.0, transport=None, **kwargs):
        super().__init__(name, **kwargs)
        import httpx

        api_key = os.environ.get(api_key_env)
        if api_key is None and transport is None:
            raise ValueError(f"environment variable {api_key_env} is not set for backend {name!r}")
        self.model = model
        self.temperature = temperature
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"),
            headers={"Authorization": f"Bearer {api_key or ''}"},
            timeout=timeout_s,
            transport=transport,
        )

    def complete(self, system: str, user: str) -> str:
        import httpx

        payload = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
        }
        try:
            resp = self._client.post("/chat/completions", json=payload)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code != 200:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc


def make_backend(spec: dict, vocabulary: list[str], defaults: dict | None = None) -> LLMBackend:
    """Build a backend from a config entry such as ``{"name": "mock-a", "kind": "mock", "flip_rate": 0.02}``."""
    spec = {**(defaults or {}), **spec}
    kind = spec.pop("kind", "mock" if spec.get("name", "").startswith("mock") else "openai")
    name = spec.pop("name", kind)
    common = {k: spec.pop(k) for k in ("max_concurrency", "retry_budget", "retry_backoff_s") if k in spec}
    timeout = spec.pop("timeout_s", 60.0)
    if kind == "mock":
        return MockBackend(name, vocabulary, **spec, **common)
    if kind == "openai":
        return OpenAICompatibleBackend(name, spec.pop("model"), spec.pop("base_url"),
                                       spec.pop("api_key_env", "LLM_API_KEY"), timeout_s=timeout, **spec, **common)
    raise ValueError(f"unknown backend kind {kind!r}")
