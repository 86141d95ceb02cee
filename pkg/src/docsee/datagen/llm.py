"""Provider-agnostic candidate generation client.

The endpoint receives ``{"prompt": ...}`` and must answer ``{"text": ...}``.
Nothing downstream trusts these candidates; everything passes through the
verifier before entering a corpus.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

import requests

log = logging.getLogger(__name__)

DEFAULT_PROMPT_TEMPLATE = """\
You are given an HTML table. Generate question-answer pairs about it in
[Language]. Produce five kinds of questions:
1. specific_extraction: ask for the value of one cell; include its 1-based
   row and col.
2. simple_reasoning: an answer derived from fewer than three cells.
3. complex_reasoning: an answer derived from three or more cells.
4. numerical: a sum, maximum, average, or minimum over a numeric column;
   give the final result.
5. content_summary: one sentence describing what the table shows.

Reply with a JSON array only. Each element must be an object with keys
"question", "answer", "type", and, for specific_extraction, integer "row"
and "col".

Table:
[HTML]
"""


@dataclass
class LLMClientConfig:
    endpoint: str
    auth_env: str = "DOCSEE_LLM_TOKEN"
    template_path: str | None = None
    language: str = "English"
    timeout_s: float = 30.0
    max_retries: int = 3
    backoff_s: float = 0.5
    max_in_flight: int = 4


def load_template(config: LLMClientConfig) -> str:
    if config.template_path:
        return Path(config.template_path).read_text(encoding="utf-8")
    return DEFAULT_PROMPT_TEMPLATE


def render_prompt(template: str, html: str, language: str) -> str:
    return template.replace("[Language]", language).replace("[HTML]", html)


class HttpLLMClient:
    """POSTs prompts to a completion endpoint with retry and backoff."""

    def __init__(self, config: LLMClientConfig, session: requests.Session | None = None):
        self.config = config
        self.session = session or requests.Session()

    def complete(self, prompt: str) -> str:
        headers = {}
        token = os.environ.get(self.config.auth_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries):
            try:
                resp = self.session.post(
                    self.config.endpoint,
                    json={"prompt": prompt},
                    headers=headers,
                    timeout=self.config.timeout_s,
                )
                resp.raise_for_status()
                return resp.json()["text"]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.config.max_retries:
                    time.sleep(self.config.backoff_s * (2 ** attempt))
        raise RuntimeError(f"candidate endpoint failed after retries: {last_error}")


class StubLLMClient:
    """Fixed-reply client for tests and offline pipeline runs."""

    def __init__(self, replies):
        self._replies = list(replies) if not callable(replies) else replies
        self._cursor = 0
        self.prompts: list[str] = []

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if callable(self._replies):
            return self._replies(prompt)
        if self._cursor >= len(self._replies):
            raise RuntimeError("stub client ran out of replies")
        reply = self._replies[self._cursor]
        self._cursor += 1
        if isinstance(reply, Exception):
            raise reply
        return reply
