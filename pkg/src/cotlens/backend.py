"""HTTP client for completions-style inference backends.

The client speaks the common completions protocol in two flavors: chat
(messages) and raw completion (prompt string with optional echo). Auth
tokens are never stored in config; the backend description names an
environment variable and the value is read at request time. Declared
capabilities are probed with tiny requests before any batch work so
misdeclared backends fail fast.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import requests

from .errors import BackendError, CapabilityError
from .traces import TokenRecord

CAP_SAMPLING = "sampling"
CAP_LOGPROBS = "per-token-logprobs"
CAP_TOKEN_BIAS = "token-bias"
CAP_ECHO = "echo-logprobs"

ALL_CAPABILITIES = frozenset(
    {CAP_SAMPLING, CAP_LOGPROBS, CAP_TOKEN_BIAS, CAP_ECHO}
)

MODE_CHAT = "chat"
MODE_COMPLETION = "completion"


@dataclass
class BackendLimits:
    max_inflight: int = 4
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.25


@dataclass
class InferenceBackend:
    """Description of a reachable inference endpoint."""

    base_url: str
    auth_env: str | None = None
    capabilities: frozenset = frozenset({CAP_SAMPLING})
    limits: BackendLimits = field(default_factory=BackendLimits)
    mode: str = MODE_CHAT
    model: str = ""

    def __post_init__(self):
        self.capabilities = frozenset(self.capabilities)
        unknown = self.capabilities - ALL_CAPABILITIES
        if unknown:
            raise ValueError(f"unknown capabilities: {sorted(unknown)}")
        if self.mode not in (MODE_CHAT, MODE_COMPLETION):
            raise ValueError(f"unknown backend mode {self.mode!r}")

    def has(self, capability: str) -> bool:
        return capability in self.capabilities


@dataclass
class Completion:
    text: str
    tokens: list[TokenRecord] = field(default_factory=list)
    finish_reason: str = ""
    index: int = 0


def _parse_chat_logprobs(block: dict) -> list[TokenRecord]:
    records = []
    for item in block.get("content") or []:
        topk = [
            (alt["token"], float(alt["logprob"]))
            for alt in item.get("top_logprobs") or []
        ]
        topk.sort(key=lambda p: -p[1])
        records.append(
            TokenRecord(
                text=item["token"], logprob=float(item["logprob"]), topk=topk
            )
        )
    return records


def _parse_completion_logprobs(block: dict, from_offset: int | None = None) -> list[TokenRecord]:
    tokens = block.get("tokens") or []
    lps = block.get("token_logprobs") or []
    tops = block.get("top_logprobs") or [None] * len(tokens)
    offsets = block.get("text_offset") or [0] * len(tokens)
    records = []
    for tok, lp, top, off in zip(tokens, lps, tops, offsets):
        if from_offset is not None and off < from_offset:
            continue
        if lp is None:
            lp = 0.0
        topk = []
        if top:
            topk = sorted(
                ((t, float(v)) for t, v in top.items()), key=lambda p: -p[1]
            )
        records.append(TokenRecord(text=tok, logprob=float(lp), topk=topk))
    return records


class BackendClient:
    """Thread-compatible client with retries and idempotency keys."""

    def __init__(self, backend: InferenceBackend, session: requests.Session | None = None):
        self.backend = backend
        self.session = session or requests.Session()
        self._probed = False

    # -- request plumbing ---------------------------------------------------

    def _headers(self, idempotency_key: str | None) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.backend.auth_env:
            token = os.environ.get(self.backend.auth_env)
            if not token:
                raise BackendError(
                    f"auth environment variable {self.backend.auth_env} is unset"
                )
            headers["Authorization"] = f"Bearer {token}"
        if idempotency_key:
            headers["Idempotency-Key"] = idempotency_key
        return headers

    def _post(self, path: str, payload: dict, idempotency_key: str | None = None) -> dict:
        url = self.backend.base_url.rstrip("/") + path
        limits = self.backend.limits
        last_error: Exception | None = None
        for attempt in range(limits.retries + 1):
            if attempt:
                time.sleep(limits.backoff * (2 ** (attempt - 1)))
            try:
                resp = self.session.post(
                    url,
                    json=payload,
                    headers=self._headers(idempotency_key),
                    timeout=limits.timeout,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = BackendError(
                    f"{url} returned {resp.status_code}: {resp.text[:200]}"
                )
                continue
            if resp.status_code >= 400:
                raise BackendError(
                    f"{url} returned {resp.status_code}: {resp.text[:200]}"
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise BackendError(f"{url} returned non-JSON body") from exc
        raise BackendError(f"request to {url} failed after retries: {last_error}")

    # -- capability probe ---------------------------------------------------

    def probe(self) -> dict:
        """Exercise every declared capability with minimal requests.

        Raises CapabilityError when the backend does not demonstrate a
        declared capability; safe to call repeatedly.
        """
        backend = self.backend
        report: dict = {}
        payload: dict = {"max_tokens": 1, "temperature": 0.0, "n": 1}
        if backend.model:
            payload["model"] = backend.model
        wants_logprobs = backend.has(CAP_LOGPROBS)
        if backend.mode == MODE_CHAT:
            payload["messages"] = [{"role": "user", "content": "ping"}]
            if wants_logprobs:
                payload["logprobs"] = True
                payload["top_logprobs"] = 1
            data = self._post("/v1/chat/completions", payload)
        else:
            payload["prompt"] = "ping"
            if wants_logprobs:
                payload["logprobs"] = 1
            data = self._post("/v1/completions", payload)
        choices = data.get("choices")
        if not choices:
            raise CapabilityError("probe response carries no choices")
        if wants_logprobs and not choices[0].get("logprobs"):
            raise CapabilityError(
                "backend declares per-token-logprobs but the probe returned none"
            )
        report["generation"] = True
        if backend.has(CAP_ECHO):
            echo_payload: dict = {
                "prompt": "ping",
                "max_tokens": 0,
                "echo": True,
                "logprobs": 1,
            }
            if backend.model:
                echo_payload["model"] = backend.model
            data = self._post("/v1/completions", echo_payload)
            choices = data.get("choices")
            block = choices[0].get("logprobs") if choices else None
            if not block or not block.get("tokens"):
                raise CapabilityError(
                    "backend declares echo-logprobs but the probe returned none"
                )
            report["echo"] = True
        self._probed = True
        return report

    # -- generation ---------------------------------------------------------

    def complete(
        self,
        prompt: str | None = None,
        messages: list[dict] | None = None,
        temperature: float = 0.0,
        top_p: float = 1.0,
        max_tokens: int = 1024,
        n: int = 1,
        seed: int | None = None,
        logprobs: bool = False,
        top_logprobs: int = 0,
        logit_bias: dict | None = None,
        stop=None,
        idempotency_key: str | None = None,
    ) -> list[Completion]:
        """One generation request in the backend's native mode."""
        if logit_bias and not self.backend.has(CAP_TOKEN_BIAS):
            raise CapabilityError("backend does not support token-bias")
        if logprobs and not self.backend.has(CAP_LOGPROBS):
            raise CapabilityError("backend does not support per-token-logprobs")
        payload: dict = {
            "temperature": temperature,
            "top_p": top_p,
            "max_tokens": max_tokens,
            "n": n,
        }
        if self.backend.model:
            payload["model"] = self.backend.model
        if seed is not None:
            payload["seed"] = seed
        if logit_bias:
            payload["logit_bias"] = {str(k): float(v) for k, v in logit_bias.items()}
        if stop:
            payload["stop"] = stop
        if messages is not None:
            payload["messages"] = messages
            if logprobs:
                payload["logprobs"] = True
                payload["top_logprobs"] = top_logprobs
            data = self._post("/v1/chat/completions", payload, idempotency_key)
            out = []
            for choice in data.get("choices") or []:
                block = choice.get("logprobs") or {}
                out.append(
                    Completion(
                        text=choice.get("message", {}).get("content", ""),
                        tokens=_parse_chat_logprobs(block),
                        finish_reason=choice.get("finish_reason", ""),
                        index=int(choice.get("index", len(out))),
                    )
                )
            return out
        if prompt is None:
            raise ValueError("either prompt or messages is required")
        payload["prompt"] = prompt
        if logprobs:
            payload["logprobs"] = max(1, top_logprobs)
        data = self._post("/v1/completions", payload, idempotency_key)
        out = []
        for choice in data.get("choices") or []:
            block = choice.get("logprobs") or {}
            out.append(
                Completion(
                    text=choice.get("text", ""),
                    tokens=_parse_completion_logprobs(block) if block else [],
                    finish_reason=choice.get("finish_reason", ""),
                    index=int(choice.get("index", len(out))),
                )
            )
        return out

    def echo_logprobs(self, prompt: str, completion: str, top_logprobs: int = 5) -> list[TokenRecord]:
        """Teacher-forced per-token logprobs for a fixed completion.

        Sends prompt + completion with echo on and zero generation budget,
        then keeps only the tokens whose text offset falls inside the
        completion.
        """
        if not self.backend.has(CAP_ECHO):
            raise CapabilityError("backend does not support echo-logprobs")
        payload: dict = {
            "prompt": prompt + completion,
            "max_tokens": 0,
            "echo": True,
            "logprobs": max(1, top_logprobs),
            "temperature": 0.0,
        }
        if self.backend.model:
            payload["model"] = self.backend.model
        data = self._post("/v1/completions", payload)
        choices = data.get("choices")
        if not choices:
            raise BackendError("echo request returned no choices")
        block = choices[0].get("logprobs")
        if not block:
            raise BackendError("echo request returned no logprobs")
        return _parse_completion_logprobs(block, from_offset=len(prompt))
