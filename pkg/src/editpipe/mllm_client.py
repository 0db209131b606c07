"""Chat-completions client for OpenAI-compatible multimodal endpoints.

POSTs ``{base_url}/chat/completions`` with model, messages and temperature,
and reads ``choices[0].message.content``. Retries transient failures with
exponential backoff (1 s base, factor 2, 4 retries by default), honoring a
Retry-After header when present. One client instance is safe to share
across workers: in-flight requests are bounded by a semaphore and an
optional per-provider rate limit spaces out dispatches.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time

import requests

API_KEY_ENV = "MLLM_API_KEY"

# HTTP statuses worth retrying; other 4xx fail immediately
_RETRY_STATUSES = {408, 409, 429, 500, 502, 503, 504}


class ProviderError(RuntimeError):
    """The provider failed after the retry budget was exhausted."""


def request_fingerprint(messages) -> str:
    """Stable hash of a message list, used for mock keying and journaling."""
    canon = json.dumps(messages, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class MllmClient:
    """Thread-safe client with bounded concurrency and retry/backoff."""

    def __init__(self, base_url: str, model: str, api_key: str | None = None,
                 temperature: float = 0.0, timeout_s: float = 60.0,
                 max_retries: int = 4, backoff_s: float = 1.0,
                 backoff_factor: float = 2.0, max_in_flight: int = 4,
                 min_request_interval_s: float = 0.0, session=None):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.temperature = temperature
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.backoff_factor = backoff_factor
        self.min_request_interval_s = min_request_interval_s
        self._session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._rate_lock = threading.Lock()
        self._next_dispatch = 0.0
        self._stats_lock = threading.Lock()
        self.stats = {"calls": 0, "attempts": 0, "retries": 0}

    def _throttle(self):
        if self.min_request_interval_s <= 0:
            return
        with self._rate_lock:
            now = time.monotonic()
            wait = self._next_dispatch - now
            self._next_dispatch = max(now, self._next_dispatch) + self.min_request_interval_s
        if wait > 0:
            time.sleep(wait)

    def _sleep_before_retry(self, attempt: int, retry_after: str | None):
        delay = self.backoff_s * (self.backoff_factor ** attempt)
        if retry_after:
            try:
                delay = max(delay, float(retry_after))
            except ValueError:
                pass
        time.sleep(delay)

    def chat(self, messages) -> str:
        """Send one chat request; returns the model's text. Raises ProviderError."""
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/chat/completions"

        with self._stats_lock:
            self.stats["calls"] += 1
        attempts = 0
        last_error = None
        while attempts <= self.max_retries:
            self._throttle()
            with self._stats_lock:
                self.stats["attempts"] += 1
            retry_after = None
            try:
                with self._slots:
                    resp = self._session.post(url, json=payload, headers=headers,
                                              timeout=self.timeout_s)
                if resp.status_code == 200:
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, TypeError, ValueError) as exc:
                        raise ProviderError(f"malformed response body: {exc}") from exc
                last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code not in _RETRY_STATUSES:
                    raise ProviderError(last_error)
                retry_after = resp.headers.get("Retry-After")
            except ProviderError:
                raise
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
            attempts += 1
            if attempts > self.max_retries:
                break
            with self._stats_lock:
                self.stats["retries"] += 1
            self._sleep_before_retry(attempts - 1, retry_after)
        raise ProviderError(
            f"request failed after {attempts} attempts: {last_error}")


class MockMllm:
    """Deterministic in-process provider keyed by the request hash.

    Produces allowlist-conformant instructions and short captions; a
    configurable slice of requests returns the rejection token or a
    deliberately invalid instruction so downstream counters get exercised.
    ``fail_after`` makes the provider raise once that many calls have been
    served, which simulates a mid-run outage for resume tests.
    """

    _VERBS = ["Move", "Adjust", "Change", "Turn", "Shift", "Rotate", "Raise", "Lower"]
    _SUBJECTS = ["the dog", "the red ball", "the cyclist", "the lamp", "the child",
                 "the kite", "the boat", "the camera"]
    _COMPLEMENTS = ["to the center of the frame", "slightly to the left",
                    "toward the doorway", "upward by a small amount",
                    "so it faces forward", "closer to the window"]

    def __init__(self, rejection_token: str = "REJECT", reject_every: int = 0,
                 invalid_every: int = 0, fail_after: int | None = None):
        self.rejection_token = rejection_token
        self.reject_every = reject_every
        self.invalid_every = invalid_every
        self.fail_after = fail_after
        self._lock = threading.Lock()
        self.stats = {"calls": 0, "attempts": 0, "retries": 0}
        self.seen_fingerprints = []

    def chat(self, messages) -> str:
        fp = request_fingerprint(messages)
        with self._lock:
            if self.fail_after is not None and self.stats["calls"] >= self.fail_after:
                raise ProviderError("mock provider budget exhausted")
            self.stats["calls"] += 1
            self.stats["attempts"] += 1
            self.seen_fingerprints.append(fp)
        return self._respond(fp, messages)

    def _text_of(self, messages) -> str:
        parts = []
        for msg in messages:
            content = msg.get("content", "")
            if isinstance(content, str):
                parts.append(content)
            else:
                for part in content:
                    if part.get("type") == "text":
                        parts.append(part.get("text", ""))
        return "\n".join(parts)

    def _respond(self, fp: str, messages) -> str:
        seed = int(fp[:12], 16)
        if "describe this image" in self._text_of(messages).lower():
            subject = self._SUBJECTS[seed % len(self._SUBJECTS)]
            return f"A photo of {subject[4:]} in a sunlit scene."
        if self.reject_every and seed % self.reject_every == 0:
            return f"{self.rejection_token}: the change is too complex to describe"
        if self.invalid_every and seed % self.invalid_every == 1:
            return "the scene as in the target image"
        verb = self._VERBS[seed % len(self._VERBS)]
        subject = self._SUBJECTS[(seed // 7) % len(self._SUBJECTS)]
        complement = self._COMPLEMENTS[(seed // 5) % len(self._COMPLEMENTS)]
        return f"{verb} {subject} {complement}"
