"""
Provider exchange log and the replay provider that answers from it.
"""

import json
import logging
import threading
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from optiloop.exceptions import ProviderUnavailable
from optiloop.providers.base import LLMProvider, ProviderRequest

logger = logging.getLogger(__name__)


class ProviderLog:
    """
    Request/response log persisted as JSON lines.

    Entries are keyed by (kind, prompt hash) and written sorted, so the file
    does not depend on the completion order of concurrent calls.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path else None
        self._entries: Dict[Tuple[str, str], Dict[str, str]] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for entry in read_log(self.path):
                self._entries[(entry["kind"], entry["prompt_hash"])] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, request: ProviderRequest, response: str) -> None:
        entry = {
            "kind": request.kind.value,
            "prompt_hash": request.prompt_hash,
            "run_id": request.run_id,
            "prompt": request.prompt,
            "response": response,
        }
        with self._lock:
            self._entries[(entry["kind"], entry["prompt_hash"])] = entry

    def entries(self) -> List[Dict[str, str]]:
        with self._lock:
            return [self._entries[key] for key in sorted(self._entries)]

    def flush(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as f:
            for entry in self.entries():
                f.write(json.dumps(entry, ensure_ascii=False) + "\n")


def read_log(path: Union[str, Path]) -> List[Dict[str, str]]:
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                entries.append(json.loads(line))
    return entries


class ReplayLLM(LLMProvider):
    """Answers requests from a recorded provider log; unknown requests are unavailable"""

    name = "replay"

    def __init__(self, entries: List[Dict[str, str]]):
        self._responses = {(e["kind"], e["prompt_hash"]): e["response"] for e in entries}

    @classmethod
    def from_log(cls, path: Union[str, Path]) -> "ReplayLLM":
        if not Path(path).exists():
            raise ProviderUnavailable(f"no provider log at {path}")
        return cls(read_log(path))

    def complete(self, request: ProviderRequest) -> str:
        key = (request.kind.value, request.prompt_hash)
        if key not in self._responses:
            raise ProviderUnavailable(f"no recorded response for {key[0]} request {key[1]}")
        return self._responses[key]
