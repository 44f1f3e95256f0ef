"""
Deterministic proposal source replaying canned responses.

A playbook is a JSON object mapping a request role (``reward``, ``dr``) to
the ordered list of responses for that role.
"""
import copy
import json
import logging
import threading
from pathlib import Path
from typing import Any, Dict, List, Optional

from drlab.errors import PlaybookExhausted, ValidationError

from .base import Message, ProposalSource


class ScriptedSource(ProposalSource):
    kind = "scripted"

    def __init__(self, playbook: Dict[str, List[str]], name: str = "inline"):
        if not isinstance(playbook, dict) or not all(
            isinstance(v, list) and all(isinstance(s, str) for s in v) for v in playbook.values()
        ):
            raise ValidationError("playbook must map each role to a list of response strings")
        self.playbook = {role: list(responses) for role, responses in playbook.items()}
        self.name = name
        self.logger = logging.getLogger(__name__)
        self._cursor: Dict[str, int] = {}
        self._lock = threading.Lock()
        # every request seen, in order
        self.requests: List[Dict[str, Any]] = []

    @classmethod
    def from_file(cls, path) -> "ScriptedSource":
        path = Path(path)
        try:
            with open(path) as f:
                playbook = json.load(f)
        except FileNotFoundError:
            raise ValidationError(f"playbook not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ValidationError(f"playbook {path} is not valid JSON: {e}") from None
        return cls(playbook, name=str(path))

    def complete(self, messages: List[Message], request_role: str = "reward") -> str:
        with self._lock:
            index = self._cursor.get(request_role, 0)
            self.requests.append({"role": request_role, "index": index, "messages": copy.deepcopy(messages)})
            responses = self.playbook.get(request_role, [])
            if index >= len(responses):
                raise PlaybookExhausted(request_role, index)
            self._cursor[request_role] = index + 1
        self.logger.debug(f"Scripted {request_role} response #{index} from {self.name}")
        return responses[index]

    def remaining(self, request_role: str) -> int:
        return len(self.playbook.get(request_role, [])) - self._cursor.get(request_role, 0)

    def get_provider_info(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "playbook": self.name,
            "roles": {role: len(v) for role, v in self.playbook.items()},
            "requests_served": len(self.requests),
        }
