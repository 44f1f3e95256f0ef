import json
import logging
import os
import time
from typing import Any, Dict, List, Optional

import requests

from drlab.errors import EmptyCompletion, RateLimited, TransportError

from .base import Message, ProposalSource, ProposalSourceConfig

REDACTED = "***"


class OpenAIHttpSource(ProposalSource):
    """
    Client for any OpenAI-compatible ``/v1/chat/completions`` endpoint.

    Transport failures, 5xx and 429 responses are retried with exponential
    backoff up to ``max_retries`` times; other 4xx responses fail at once.
    The API key never appears in a log record.
    """

    kind = "llm_http"

    def __init__(self, config: ProposalSourceConfig, api_key: Optional[str] = None,
                 session: Optional[requests.Session] = None):
        self.config = config
        self.api_key = api_key if api_key is not None else os.getenv(config.api_key_env, "")
        self.url = config.endpoint.rstrip("/") + "/v1/chat/completions"
        self.session = session or requests.Session()
        self.logger = logging.getLogger(__name__)
        self.retry_count = 0
        self.request_history: List[Dict[str, Any]] = []

    def _redact(self, text: str) -> str:
        if self.api_key:
            text = text.replace(self.api_key, REDACTED)
        return text

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete(self, messages: List[Message], request_role: str = "reward") -> str:
        payload = {
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
            "metadata": {"drlab_role": request_role},
        }
        safe_headers = {k: (REDACTED if k == "Authorization" else v) for k, v in self._headers().items()}
        self.logger.debug(f"POST {self.url} headers={safe_headers} body={self._redact(json.dumps(payload))}")

        self.retry_count = 0
        last_error: Optional[TransportError] = None
        for attempt in range(self.config.max_retries + 1):
            start = time.time()
            try:
                response = self.session.post(
                    self.url, json=payload, headers=self._headers(), timeout=self.config.timeout
                )
            except requests.RequestException as e:
                last_error = TransportError(f"request failed: {self._redact(str(e))}")
                self._log_request(None, time.time() - start, attempt + 1)
            else:
                self._log_request(response.status_code, time.time() - start, attempt + 1)
                if response.status_code == 200:
                    return self._extract_content(response)
                detail = self._redact(response.text[:500])
                if response.status_code == 429:
                    last_error = RateLimited(f"rate limited: {detail}")
                elif response.status_code >= 500:
                    last_error = TransportError(f"server error {response.status_code}: {detail}")
                else:
                    raise TransportError(f"HTTP {response.status_code} from {self.url}: {detail}")

            if attempt < self.config.max_retries:
                self.retry_count += 1
                delay = self.config.backoff_seconds * (2 ** attempt)
                self.logger.warning(f"Attempt {attempt + 1} failed ({last_error}); retrying in {delay:.1f}s")
                time.sleep(delay)

        raise last_error or TransportError(f"no response from {self.url}")

    def _extract_content(self, response: requests.Response) -> str:
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise TransportError(f"malformed completion response: {e!r}") from None
        if content is None or not str(content).strip():
            raise EmptyCompletion("assistant returned empty content")
        self.logger.debug(f"Completion: {self._redact(content)}")
        return content

    def _log_request(self, status_code: Optional[int], response_time: float, attempt: int) -> None:
        self.request_history.append({
            "timestamp": time.time(),
            "model": self.config.model,
            "status_code": status_code,
            "response_time": response_time,
            "attempt": attempt,
            "success": status_code == 200,
        })
        if len(self.request_history) > 100:
            self.request_history = self.request_history[-100:]

    def get_provider_info(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "endpoint": self.config.endpoint,
            "model": self.config.model,
            "temperature": self.config.temperature,
            "max_retries": self.config.max_retries,
            "has_api_key": bool(self.api_key),
        }
