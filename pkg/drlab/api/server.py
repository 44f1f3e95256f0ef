"""
OpenAI-compatible chat endpoint that answers from a scripted playbook.

The request role is read from ``metadata.drlab_role`` (``default`` when
absent). ``failures`` lists HTTP status codes returned, in order, before the
playbook is consulted, which lets clients exercise their retry path.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from typing import Any, Dict, List, Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from drlab import __version__
from drlab.errors import PlaybookExhausted
from ll_providers.scripted import ScriptedSource

logger = logging.getLogger(__name__)


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatRequest(BaseModel):
    model: str = "scripted"
    messages: List[ChatMessage]
    temperature: float = 1.0
    metadata: Dict[str, Any] = {}


def create_app(playbook: Optional[Dict[str, List[str]]] = None, failures: Optional[List[int]] = None) -> FastAPI:
    app = FastAPI(title="drlab playbook server", version=__version__)
    source = ScriptedSource(playbook or {}, name="server")
    pending_failures = list(failures or [])
    lock = threading.Lock()
    app.state.source = source

    @app.post("/v1/chat/completions")
    async def chat_completions(body: ChatRequest):
        """Serve the next playbook entry for the request's role."""
        with lock:
            status = pending_failures.pop(0) if pending_failures else None
        if status is not None:
            return JSONResponse(status_code=status, content={"error": {"message": f"injected failure {status}"}})

        role = str(body.metadata.get("drlab_role", "default"))
        try:
            content = source.complete([m.model_dump() for m in body.messages], role)
        except PlaybookExhausted as e:
            raise HTTPException(status_code=404, detail=str(e))
        logger.info(f"Served {role} response #{source.requests[-1]['index']}")
        return {
            "id": f"drlab-{len(source.requests)}",
            "object": "chat.completion",
            "created": int(time.time()),
            "model": body.model,
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        }

    @app.get("/health")
    async def health_check():
        """API health check"""
        return {"status": "healthy", "version": __version__}

    return app


def playbook_from_env() -> Dict[str, List[str]]:
    path = os.getenv("DRLAB_PLAYBOOK")
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


app = create_app(playbook_from_env())
