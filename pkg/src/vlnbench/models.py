"""Language-model backends behind one ``generate`` call.

Remote servers speak the chat-completions wire format; scripted and echo
backends exist so the whole pipeline runs offline and deterministically.
"""

from __future__ import annotations

import base64
import logging
import mimetypes
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .errors import AuthMissing, ContextOverflow, ModelUnavailable, ScriptExhausted, TransportError

log = logging.getLogger(__name__)

API_KEY_ENV = "VLN_MODEL_API_KEY"
BASE_URL_ENV = "VLN_MODEL_BASE_URL"


@dataclass(frozen=True)
class ModelRequest:
    system_text: str
    task_text: str
    images: tuple[str, ...] = ()
    max_tokens: int = 1024
    temperature: float = 0.0
    seed: int | None = None
    # harness-side state for scripted backends; never sent over the wire or logged
    context: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def to_log(self) -> dict:
        return {"system": self.system_text, "task": self.task_text, "images": list(self.images)}


@dataclass(frozen=True)
class ModelResponse:
    text: str
    latency: float
    usage: Mapping[str, int] = field(default_factory=dict)
    backend_id: str = ""


class Model:
    """Base backend. Subclasses implement ``_complete``.

    ``max_in_flight`` bounds concurrent calls when one handle is shared by
    several episodes.
    """

    backend_id = "model"

    def __init__(self, max_in_flight: int | None = None):
        self._slots = threading.BoundedSemaphore(max_in_flight) if max_in_flight else None

    def generate(self, req: ModelRequest) -> ModelResponse:
        t0 = time.perf_counter()
        if self._slots is None:
            text, usage = self._complete(req)
        else:
            with self._slots:
                text, usage = self._complete(req)
        return ModelResponse(text.rstrip(), max(0.0, time.perf_counter() - t0), usage, self.backend_id)

    def _complete(self, req: ModelRequest) -> tuple[str, dict]:
        raise NotImplementedError


def generate(handle: Model, req: ModelRequest) -> ModelResponse:
    return handle.generate(req)


class ScriptedModel(Model):
    """Replays canned outputs.

    ``script`` may be a sequence (served in call order), a mapping keyed by
    ``request.context["step"]``, or a callable taking the request.
    """

    backend_id = "scripted"

    def __init__(
        self,
        script: Sequence[str] | Mapping[int, str] | Callable[[ModelRequest], str],
        backend_id: str | None = None,
        max_in_flight: int | None = None,
    ):
        super().__init__(max_in_flight)
        self.script = script
        self.calls = 0
        self._lock = threading.Lock()
        if backend_id:
            self.backend_id = backend_id

    def _complete(self, req: ModelRequest) -> tuple[str, dict]:
        with self._lock:
            idx = self.calls
            self.calls += 1
        if callable(self.script):
            return self.script(req), {}
        if isinstance(self.script, Mapping):
            step = req.context.get("step", idx)
            if step not in self.script:
                raise ScriptExhausted(f"no scripted output for step {step}")
            return self.script[step], {}
        if idx >= len(self.script):
            raise ScriptExhausted(f"script has {len(self.script)} outputs, call {idx} requested")
        return self.script[idx], {}


class EchoModel(Model):
    backend_id = "echo"

    def _complete(self, req: ModelRequest) -> tuple[str, dict]:
        return req.task_text, {"prompt_chars": len(req.system_text) + len(req.task_text)}


def _image_part(ref: str, transport: str) -> dict:
    if ref.startswith(("http://", "https://", "data:")):
        url = ref
    elif transport == "url":
        url = Path(ref).resolve().as_uri()
    else:
        mime = mimetypes.guess_type(ref)[0] or "image/jpeg"
        data = base64.b64encode(Path(ref).read_bytes()).decode("ascii")
        url = f"data:{mime};base64,{data}"
    return {"type": "image_url", "image_url": {"url": url}}


_OVERFLOW_MARKERS = ("context length", "context_length", "maximum context", "too many tokens")


class ChatCompletionsModel(Model):
    """HTTP client for chat-completions compatible servers (hosted or vLLM)."""

    backend_id = "chat"

    def __init__(
        self,
        model: str,
        base_url: str | None = None,
        api_key: str | None = None,
        require_key: bool = True,
        timeout: float = 120.0,
        retries: int = 3,
        backoff: float = 1.0,
        max_in_flight: int | None = 4,
        image_transport: str = "base64",
        transport: Any = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(max_in_flight)
        self.model = model
        self.base_url = (base_url or os.environ.get(BASE_URL_ENV) or "https://api.openai.com/v1").rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.require_key = require_key
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.image_transport = image_transport
        self._transport = transport
        self._sleep = sleep
        self.backend_id = f"chat:{model}"

    def payload(self, req: ModelRequest) -> dict:
        content: list[dict] = [{"type": "text", "text": req.task_text}]
        content += [_image_part(ref, self.image_transport) for ref in req.images]
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": content if req.images else req.task_text},
            ],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }
        if req.seed is not None:
            body["seed"] = req.seed
        return body

    def _complete(self, req: ModelRequest) -> tuple[str, dict]:
        import httpx

        if self.require_key and not self.api_key:
            raise AuthMissing(f"set {API_KEY_ENV} to call {self.base_url}")
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        body = self.payload(req)
        url = f"{self.base_url}/chat/completions"
        last: Exception | None = None
        with httpx.Client(timeout=self.timeout, transport=self._transport) as client:
            for attempt in range(self.retries + 1):
                if attempt:
                    self._sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    resp = client.post(url, json=body, headers=headers)
                except httpx.HTTPError as exc:  # connect errors and timeouts
                    last = exc
                    log.warning("transport failure (%s), attempt %d", exc, attempt + 1)
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = TransportError(f"HTTP {resp.status_code}")
                    continue
                if resp.status_code in (401, 403):
                    raise AuthMissing(f"backend rejected credentials (HTTP {resp.status_code})")
                if resp.status_code >= 400:
                    detail = resp.text
                    if any(m in detail.lower() for m in _OVERFLOW_MARKERS):
                        raise ContextOverflow(detail[:500])
                    raise ModelUnavailable(f"HTTP {resp.status_code}: {detail[:500]}")
                data = resp.json()
                msg = data["choices"][0]["message"]["content"]
                if isinstance(msg, list):
                    msg = "".join(p.get("text", "") for p in msg if isinstance(p, dict))
                usage = {k: int(v) for k, v in (data.get("usage") or {}).items() if isinstance(v, int)}
                return msg or "", usage
        raise TransportError(f"{url}: giving up after {self.retries + 1} attempts: {last}")


def register_model(model_id: str, constructor: Callable, registry=None) -> None:
    from .registry import register_component

    register_component("model", model_id, constructor, registry=registry)
