"""Chat-completions client for the grounding and typing models.

Wire format (both real providers and the bundled mock)::

    POST <endpoint>
    Authorization: Bearer <key>
    X-Video-Id: <video_id>          # routing/replay key, ignored by real providers
    X-Pass-Kind: coarse|fine|type

    {"model": ..., "temperature": 0.1, "max_tokens": 256,
     "messages": [{"role": "user", "content": [
         {"type": "text", "text": "[Frame at 0s]"},
         {"type": "image_url", "image_url": {"url": "data:image/jpeg;base64,..."}},
         ...,
         {"type": "text", "text": "<prompt>"}]}]}

    -> {"choices": [{"message": {"role": "assistant", "content": "<text>"}}]}

A failed call is returned as a ``CallOutcome`` with status ``failed``; only
configuration problems raise.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import random
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

import httpx

from .config import RunConfig
from .sampler import FrameSet, format_timestamp
from .types import ConfigError, InvalidInputError, PassKind

log = logging.getLogger(__name__)

TEMPERATURE = 0.1
GROUNDING_MAX_TOKENS = 256
TYPING_MAX_TOKENS = 1024


class ProviderName(str, Enum):
    GROUNDING = "grounding"
    TYPING = "typing"


@dataclass(frozen=True)
class ProviderProfile:
    name: ProviderName
    endpoint: str
    model: str
    temperature: float = TEMPERATURE
    max_tokens: int = GROUNDING_MAX_TOKENS
    timeout: float = 120.0
    max_retries: int = 3
    retry_base_delay: float = 1.0
    api_key_env: str = "GROUNDING_API_KEY"
    api_key: str | None = field(default=None, repr=False)

    def resolve_key(self) -> str:
        key = self.api_key or os.environ.get(self.api_key_env)
        if not key:
            raise ConfigError(f"missing credentials: set {self.api_key_env}")
        return key


def grounding_profile(cfg: RunConfig, endpoint: str | None = None, api_key: str | None = None) -> ProviderProfile:
    return ProviderProfile(
        name=ProviderName.GROUNDING,
        endpoint=endpoint or os.environ.get("GROUNDING_ENDPOINT", ""),
        model=cfg.grounding_model,
        max_tokens=GROUNDING_MAX_TOKENS,
        timeout=cfg.request_timeout,
        max_retries=cfg.max_retries,
        retry_base_delay=cfg.retry_base_delay,
        api_key_env="GROUNDING_API_KEY",
        api_key=api_key,
    )


def typing_profile(cfg: RunConfig, endpoint: str | None = None, api_key: str | None = None) -> ProviderProfile:
    return ProviderProfile(
        name=ProviderName.TYPING,
        endpoint=endpoint or os.environ.get("TYPING_ENDPOINT", ""),
        model=cfg.typing_model,
        max_tokens=TYPING_MAX_TOKENS,
        timeout=cfg.request_timeout,
        max_retries=cfg.max_retries,
        retry_base_delay=cfg.retry_base_delay,
        api_key_env="TYPING_API_KEY",
        api_key=api_key,
    )


class CallStatus(str, Enum):
    OK = "ok"
    FAILED = "failed"


@dataclass(frozen=True)
class CallOutcome:
    status: CallStatus
    raw_text: str
    attempts: int
    latency: float
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status is CallStatus.OK


def build_message(prompt: str, frames: FrameSet, kind: PassKind) -> dict[str, Any]:
    """One user message: per frame a ``[Frame at ts]`` tag then the image, then the prompt."""
    if len(frames) == 0:
        raise InvalidInputError("cannot build a message from an empty frame set")
    parts: list[dict[str, Any]] = []
    for frame in frames:
        parts.append({"type": "text", "text": f"[Frame at {format_timestamp(frame.timestamp, kind)}s]"})
        b64 = base64.b64encode(frame.data).decode("ascii")
        parts.append({"type": "image_url", "image_url": {"url": f"data:image/jpeg;base64,{b64}"}})
    parts.append({"type": "text", "text": prompt})
    return {"role": "user", "content": parts}


def request_payload(profile: ProviderProfile, message: dict[str, Any]) -> dict[str, Any]:
    return {
        "model": profile.model,
        "messages": [message],
        "temperature": profile.temperature,
        "max_tokens": profile.max_tokens,
    }


def fingerprint(payload: dict[str, Any]) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _response_text(body: Any) -> str:
    content = body["choices"][0]["message"]["content"]
    if isinstance(content, list):
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    if not isinstance(content, str):
        raise ValueError("message content is not text")
    return content


def _is_retryable(status: int) -> bool:
    return status == 429 or status >= 500


def call_with_retry(
    profile: ProviderProfile,
    message: dict[str, Any],
    *,
    headers: dict[str, str] | None = None,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
) -> CallOutcome:
    """POST the message, retrying transport errors, 5xx and 429.

    Backoff before retry ``k`` (1-based) is uniform in ``[0, base * 2**(k-1)]``.
    Any other 4xx ends the call immediately.
    """
    if not profile.endpoint:
        raise ConfigError(f"no endpoint configured for the {profile.name.value} provider")
    key = profile.resolve_key()
    rng = rng or random.Random()
    send_headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
    if headers:
        send_headers.update(headers)
    payload = request_payload(profile, message)

    own_client = client is None
    if own_client:
        client = httpx.Client()
    started = time.monotonic()
    attempts = 0
    last_error = "no attempt made"
    try:
        while attempts <= profile.max_retries:
            if attempts > 0:
                sleep(rng.uniform(0.0, profile.retry_base_delay * 2 ** (attempts - 1)))
            attempts += 1
            try:
                resp = client.post(profile.endpoint, json=payload, headers=send_headers,
                                   timeout=profile.timeout)
            except httpx.HTTPError as exc:
                last_error = f"transport: {type(exc).__name__}: {exc}"
                log.debug("%s attempt %d: %s", profile.name.value, attempts, last_error)
                continue
            if resp.status_code == 200:
                try:
                    text = _response_text(resp.json())
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    last_error = f"malformed response body: {exc}"
                    continue
                if text.strip():
                    return CallOutcome(CallStatus.OK, text, attempts, time.monotonic() - started)
                last_error = "empty completion"
                continue
            last_error = f"http {resp.status_code}"
            if not _is_retryable(resp.status_code):
                break
    finally:
        if own_client:
            client.close()
    return CallOutcome(CallStatus.FAILED, "", attempts, time.monotonic() - started, last_error)


class VLMGateway:
    """Holds both provider profiles and one pooled HTTP client."""

    def __init__(
        self,
        grounding: ProviderProfile,
        typing: ProviderProfile,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.grounding = grounding
        self.typing = typing
        self._sleep = sleep
        self._client = httpx.Client(limits=httpx.Limits(max_connections=64, max_keepalive_connections=32))

    def check_credentials(self) -> None:
        self.grounding.resolve_key()
        self.typing.resolve_key()

    def profile_for(self, kind: PassKind) -> ProviderProfile:
        return self.typing if kind is PassKind.TYPE else self.grounding

    def payload_for(self, kind: PassKind, message: dict[str, Any]) -> dict[str, Any]:
        return request_payload(self.profile_for(kind), message)

    def call(self, kind: PassKind, video_id: str, message: dict[str, Any]) -> CallOutcome:
        return call_with_retry(
            self.profile_for(kind),
            message,
            headers={"X-Video-Id": video_id, "X-Pass-Kind": kind.value},
            client=self._client,
            sleep=self._sleep,
        )

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "VLMGateway":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
