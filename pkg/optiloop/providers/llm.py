"""
Language-model providers: a scripted offline provider, an HTTP chat client
and a guard that adds retries, an in-flight limit and exchange logging.
"""

import json
import logging
import threading
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import requests

from optiloop.exceptions import ProviderUnavailable, RateLimited
from optiloop.prompts import SYSTEM_PROMPTS
from optiloop.providers.base import LLMProvider, ProviderRequest, call_with_retries
from optiloop.providers.replay import ProviderLog

logger = logging.getLogger(__name__)


class ScriptedLLM(LLMProvider):
    """
    Offline provider answering from a replay script.

    A script is a list of entries ``{"kind", "response" | "response_file",
    "prompt_hash"?, "match"?, "failures"?, "unavailable"?}``. For a request,
    an entry with an equal prompt hash wins, then the first entry whose
    ``match`` substring occurs in the prompt, then the first plain entry of
    that kind. ``failures: n`` makes the first n calls to an entry raise
    RateLimited; ``unavailable: true`` makes every call raise
    ProviderUnavailable.
    """

    name = "scripted"

    def __init__(self, entries: List[Dict[str, Any]], base_dir: Optional[Union[str, Path]] = None):
        self._entries = [self._resolve(entry, base_dir) for entry in entries]
        self._calls = [0] * len(self._entries)
        self._lock = threading.Lock()

    @staticmethod
    def _resolve(entry: Dict[str, Any], base_dir: Optional[Union[str, Path]]) -> Dict[str, Any]:
        resolved = dict(entry)
        if "response_file" in resolved:
            path = Path(resolved.pop("response_file"))
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            resolved["response"] = path.read_text(encoding="utf-8")
        response = resolved.get("response", "")
        if not isinstance(response, str):
            resolved["response"] = json.dumps(response, indent=2)
        return resolved

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScriptedLLM":
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        entries = data["responses"] if isinstance(data, dict) else data
        return cls(entries, base_dir=Path(path).parent)

    def _select(self, request: ProviderRequest) -> Optional[int]:
        candidates = [i for i, e in enumerate(self._entries) if e.get("kind") == request.kind.value]
        for i in candidates:
            if self._entries[i].get("prompt_hash") == request.prompt_hash:
                return i
        for i in candidates:
            match = self._entries[i].get("match")
            if match and match in request.prompt:
                return i
        for i in candidates:
            if "prompt_hash" not in self._entries[i] and "match" not in self._entries[i]:
                return i
        return None

    def complete(self, request: ProviderRequest) -> str:
        index = self._select(request)
        if index is None:
            raise ProviderUnavailable(f"no scripted response for {request.kind.value} request {request.prompt_hash}")
        entry = self._entries[index]
        if entry.get("unavailable"):
            raise ProviderUnavailable(f"scripted outage for {request.kind.value}")
        with self._lock:
            self._calls[index] += 1
            attempt = self._calls[index]
        if attempt <= int(entry.get("failures", 0)):
            raise RateLimited(f"scripted rate limit {attempt} for {request.kind.value}")
        return entry["response"]


class UnconfiguredLLM(LLMProvider):
    name = "unconfigured"

    def complete(self, request: ProviderRequest) -> str:
        raise ProviderUnavailable("no language-model provider configured")


class HttpChatLLM(LLMProvider):
    """OpenAI-compatible chat-completions client"""

    name = "http"

    def __init__(self, endpoint: str, model_name: str, api_key: Optional[str], timeout: float = 120.0, model_params=None):
        self.endpoint = endpoint
        self.model_name = model_name
        self.api_key = api_key
        self.timeout = timeout
        self.model_params = model_params or {"temperature": 0}

    def complete(self, request: ProviderRequest) -> str:
        if not self.endpoint or not self.api_key:
            raise ProviderUnavailable("LLM_ENDPOINT and LLM_API_KEY must be set for the http provider")

        content = request.prompt
        for name, attachment in request.attachments:
            content += f"\n\n--- {name} ---\n{attachment}"

        payload = {
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPTS[request.kind.value]},
                {"role": "user", "content": content},
            ],
            **self.model_params,
            "stream": False,
        }
        headers = {
            "Content-Type": "application/json",
            "Accept": "application/json",
            "Authorization": f"Bearer {self.api_key}",
        }

        try:
            response = requests.post(self.endpoint, headers=headers, json=payload, timeout=self.timeout)
        except requests.RequestException as e:
            raise ProviderUnavailable(f"request to {self.endpoint} failed: {e}") from e
        if response.status_code == 429:
            raise RateLimited(f"HTTP 429 from {self.endpoint}")
        if response.status_code >= 400:
            raise ProviderUnavailable(f"HTTP {response.status_code} from {self.endpoint}")

        response_data = response.json()
        return response_data.get("choices", [{}])[0].get("message", {}).get("content", "")


class GuardedLLM(LLMProvider):
    """Adds bounded retries, an in-flight limit and exchange logging to a provider"""

    def __init__(
        self,
        inner: LLMProvider,
        max_retries: int = 2,
        backoff_seconds: float = 0.5,
        max_in_flight: int = 4,
        log: Optional[ProviderLog] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.inner = inner
        self.name = inner.name
        self.max_retries = max_retries
        self.backoff_seconds = backoff_seconds
        self.log = log
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max(1, max_in_flight))

    def complete(self, request: ProviderRequest) -> str:
        with self._slots:
            response = call_with_retries(
                lambda: self.inner.complete(request),
                max_retries=self.max_retries,
                backoff_seconds=self.backoff_seconds,
                sleep=self._sleep,
            )
        if self.log is not None:
            self.log.record(request, response)
        return response
