"""Minimal OpenAI-compatible chat-completions / embeddings client."""
from __future__ import annotations

import base64
import json
import logging
import os
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import httpx

logger = logging.getLogger(__name__)

ENV_BASE = "SCRAPMEM_API_BASE"
ENV_KEY = "SCRAPMEM_API_KEY"
ENV_MODEL = "SCRAPMEM_MODEL"
DEFAULT_BASE = "https://api.openai.com/v1"
DEFAULT_MODEL = "gpt-5-mini"


class ProviderError(RuntimeError):
    """Transport or protocol failure talking to a remote provider."""

    def __init__(self, message: str, retries: int = 0) -> None:
        self.retries = retries
        super().__init__(f"{message} (after {retries} retries)" if retries else message)


class ReplyParseError(ProviderError):
    pass


@dataclass
class ChatConfig:
    api_base: str = DEFAULT_BASE
    api_key: str = ""
    model: str = DEFAULT_MODEL
    max_retries: int = 3
    backoff: float = 1.0

    @classmethod
    def from_env(cls, **overrides: Any) -> "ChatConfig":
        cfg = cls(
            api_base=os.getenv(ENV_BASE, "").strip() or DEFAULT_BASE,
            api_key=os.getenv(ENV_KEY, "").strip(),
            model=os.getenv(ENV_MODEL, "").strip() or DEFAULT_MODEL,
        )
        for key, value in overrides.items():
            setattr(cfg, key, value)
        return cfg


def image_part(jpeg: bytes) -> Dict[str, Any]:
    encoded = base64.b64encode(jpeg).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:image/jpeg;base64,{encoded}"}}


class ChatClient:
    def __init__(self, config: Optional[ChatConfig] = None, *, transport: Optional[httpx.BaseTransport] = None) -> None:
        self.config = config or ChatConfig.from_env()
        self._transport = transport

    def _post(self, route: str, body: Dict[str, Any], timeout: float) -> Dict[str, Any]:
        url = self.config.api_base.rstrip("/") + route
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        last: Optional[Exception] = None
        attempts = max(1, self.config.max_retries + 1)
        for attempt in range(attempts):
            try:
                with httpx.Client(transport=self._transport, timeout=timeout) as client:
                    resp = client.post(url, headers=headers, json=body)
                if resp.status_code in (429, 500, 502, 503, 504):
                    raise httpx.HTTPStatusError(f"status {resp.status_code}", request=resp.request, response=resp)
                resp.raise_for_status()
                return resp.json()
            except (httpx.HTTPError, json.JSONDecodeError) as exc:
                last = exc
                status = getattr(getattr(exc, "response", None), "status_code", None)
                if status is not None and 400 <= status < 500 and status != 429:
                    raise ProviderError(f"{route} rejected: {exc}", attempt) from exc
                logger.warning("%s attempt %d/%d failed: %s", route, attempt + 1, attempts, exc)
                if attempt + 1 < attempts and self.config.backoff > 0:
                    time.sleep(self.config.backoff * (attempt + 1))
        raise ProviderError(f"{route} failed: {last}", attempts - 1)

    def complete(
        self,
        messages: Sequence[Dict[str, Any]],
        *,
        max_tokens: int,
        temperature: float = 0.0,
        timeout: float = 60.0,
    ) -> str:
        body = {
            "model": self.config.model,
            "messages": list(messages),
            "max_tokens": max_tokens,
            "temperature": temperature,
        }
        data = self._post("/chat/completions", body, timeout)
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ReplyParseError(f"malformed chat-completions response: {exc}") from exc

    def embed(self, texts: Sequence[str], *, model: Optional[str] = None, timeout: float = 30.0) -> List[List[float]]:
        data = self._post("/embeddings", {"model": model or self.config.model, "input": list(texts)}, timeout)
        try:
            rows = sorted(data["data"], key=lambda r: r["index"])
            return [list(map(float, r["embedding"])) for r in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise ReplyParseError(f"malformed embeddings response: {exc}") from exc


def parse_json_reply(content: str, required: Sequence[str]) -> Dict[str, Any]:
    """Parse a model reply as one JSON object carrying every ``required`` key.

    Tolerates a fenced ```json block; anything else is an error.
    """
    text = content.strip()
    if text.startswith("```"):
        text = text.strip("`")
        if text.lower().startswith("json"):
            text = text[4:]
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ReplyParseError(f"reply is not JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ReplyParseError("reply is not a JSON object")
    missing = [key for key in required if key not in obj]
    if missing:
        raise ReplyParseError(f"reply lacks keys: {', '.join(missing)}")
    return obj
