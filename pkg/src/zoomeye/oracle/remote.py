"""Chat-completions backend that reads Yes/No scores from token log-probs.

Yes/no queries request a single token with ``top_logprobs`` enabled and
take the best-scoring surface form of each answer. When one answer is
missing from the top-K list it is assigned one nat below the weakest
listed entry.
"""

from __future__ import annotations

import base64
import io
import logging
import os
import time
from dataclasses import dataclass
from typing import Any, Sequence

import httpx
from PIL import Image

from zoomeye.errors import ContractError, ExtractionError, TransportError
from zoomeye.oracle.base import Prompt, YesNoLogits
from zoomeye.visual import VisualInput

log = logging.getLogger(__name__)

YES_FORMS = ("Yes", "yes", " Yes", " yes", "YES")
NO_FORMS = ("No", "no", " No", " no", "NO")

ENV_ENDPOINT = "ZOOMEYE_ENDPOINT"
ENV_API_KEY = "ZOOMEYE_API_KEY"
ENV_MODEL = "ZOOMEYE_MODEL"


@dataclass
class RemoteConfig:
    endpoint: str
    model: str = "default"
    api_key: str | None = None
    top_k: int = 20
    timeout: float = 120.0
    max_retries: int = 3
    backoff: float = 1.0
    generate_max_tokens: int = 512

    def __post_init__(self) -> None:
        if not self.endpoint:
            raise ContractError("remote backend needs an endpoint URL")
        if self.top_k < 20:
            raise ContractError("top_k must be at least 20")

    @classmethod
    def from_env(cls, **overrides: Any) -> RemoteConfig:
        values = {
            "endpoint": os.environ.get(ENV_ENDPOINT, ""),
            "model": os.environ.get(ENV_MODEL, "default"),
            "api_key": os.environ.get(ENV_API_KEY),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def encode_png(image: Image.Image) -> str:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def build_messages(
    visual_input: VisualInput | None,
    text: str,
    history: Sequence[tuple[str, str]] = (),
) -> list[dict]:
    messages: list[dict] = []
    for user, assistant in history:
        messages.append({"role": "user", "content": user})
        messages.append({"role": "assistant", "content": assistant})
    content: list[dict] = []
    if visual_input is not None:
        for img in visual_input.images:
            content.append({"type": "image_url", "image_url": {"url": encode_png(img)}})
    content.append({"type": "text", "text": text})
    messages.append({"role": "user", "content": content})
    return messages


def extract_yes_no(body: dict) -> YesNoLogits:
    """Pull Yes/No log-probabilities out of a chat-completions response body."""
    try:
        top = body["choices"][0]["logprobs"]["content"][0]["top_logprobs"]
        entries = [(str(e["token"]), float(e["logprob"])) for e in top]
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ExtractionError(f"response carries no first-token top_logprobs: {exc!r}") from exc
    if not entries:
        raise ExtractionError("empty top_logprobs list")
    yes = [lp for tok, lp in entries if tok in YES_FORMS]
    no = [lp for tok, lp in entries if tok in NO_FORMS]
    if not yes and not no:
        raise ExtractionError("neither Yes nor No among the top-K tokens")
    floor = min(lp for _, lp in entries) - 1.0
    return YesNoLogits(max(yes) if yes else floor, max(no) if no else floor)


def extract_text(body: dict) -> str:
    try:
        return str(body["choices"][0]["message"]["content"])
    except (KeyError, IndexError, TypeError) as exc:
        raise ExtractionError(f"response carries no message content: {exc!r}") from exc


class RemoteBackend:
    def __init__(self, config: RemoteConfig, client: httpx.Client | None = None):
        self.config = config
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = client or httpx.Client(timeout=config.timeout, headers=headers)

    @property
    def cache_namespace(self) -> str:
        return f"remote:{self.config.endpoint}:{self.config.model}"

    def close(self) -> None:
        self._client.close()

    def _post(self, payload: dict) -> dict:
        attempts = 0
        last: Exception | None = None
        status = None
        while attempts <= self.config.max_retries:
            attempts += 1
            try:
                resp = self._client.post(self.config.endpoint, json=payload)
                status = resp.status_code
                if resp.status_code >= 500 or resp.status_code == 429:
                    raise httpx.HTTPStatusError(f"server returned {resp.status_code}", request=resp.request, response=resp)
                if resp.status_code >= 400:
                    raise TransportError(f"request rejected with HTTP {resp.status_code}: {resp.text[:200]}", attempts, status)
                try:
                    return resp.json()
                except ValueError as exc:
                    raise ExtractionError(f"response body is not JSON: {exc}") from exc
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last = exc
                if attempts > self.config.max_retries:
                    break
                delay = self.config.backoff * 2 ** (attempts - 1)
                log.warning("backend request failed (%s); retry %d in %.1fs", exc, attempts, delay)
                time.sleep(delay)
        raise TransportError(f"backend unreachable after {attempts} attempts: {last}", attempts, status)

    def yes_no(self, visual_input: VisualInput, prompt: Prompt) -> YesNoLogits:
        payload = {
            "model": self.config.model,
            "messages": build_messages(visual_input, prompt.text),
            "temperature": 0,
            "max_tokens": 1,
            "logprobs": True,
            "top_logprobs": self.config.top_k,
        }
        return extract_yes_no(self._post(payload))

    def generate(
        self,
        visual_input: VisualInput | None,
        prompt: Prompt,
        history: Sequence[tuple[str, str]] = (),
    ) -> str:
        payload = {
            "model": self.config.model,
            "messages": build_messages(visual_input, prompt.text, history),
            "temperature": 0,
            "max_tokens": self.config.generate_max_tokens,
        }
        return extract_text(self._post(payload))
