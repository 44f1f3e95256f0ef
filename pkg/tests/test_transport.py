#!/usr/bin/env python3
"""
Tests for the proposal sources: the OpenAI-compatible HTTP client against
the playbook server, and the scripted source
"""
import json
import logging
import socket
import sys
import threading
import time
from contextlib import contextmanager
from pathlib import Path

import pytest
import requests
import uvicorn

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from drlab.api.server import create_app
from drlab.errors import EmptyCompletion, PlaybookExhausted, TransportError, ValidationError
from ll_providers import OpenAIHttpSource, ProposalSourceConfig, ScriptedSource, build_source, llm_complete

SENTINEL_KEY = "sk-SENTINEL-0123456789"
MESSAGES = [("system", "You write rewards."), ("user", "Make the cart run.")]


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@contextmanager
def serve(playbook, failures=None):
    port = free_port()
    server = uvicorn.Server(uvicorn.Config(create_app(playbook, failures), host="127.0.0.1", port=port,
                                           log_level="warning"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("playbook server did not start")
        time.sleep(0.02)
    try:
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=5)


def client(url, **overrides):
    config = ProposalSourceConfig(kind="llm_http", endpoint=url, backoff_seconds=0.0, timeout=5.0, **overrides)
    return OpenAIHttpSource(config, api_key=SENTINEL_KEY)


def test_health():
    with serve({}) as url:
        response = requests.get(f"{url}/health")
    assert response.status_code == 200
    assert response.json()["status"] == "healthy"


def test_roles_are_served_separately():
    with serve({"reward": ["r0", "r1"], "dr": ["d0"]}) as url:
        source = client(url)
        assert llm_complete(source, MESSAGES, "reward") == "r0"
        assert llm_complete(source, MESSAGES, "dr") == "d0"
        assert llm_complete(source, MESSAGES, "reward") == "r1"


def test_server_errors_are_retried():
    with serve({"reward": ["ok"]}, failures=[500, 500]) as url:
        source = client(url)
        assert llm_complete(source, MESSAGES) == "ok"
    assert source.retry_count == 2
    assert [h["status_code"] for h in source.request_history] == [500, 500, 200]


def test_rate_limit_is_retried():
    with serve({"reward": ["ok"]}, failures=[429]) as url:
        source = client(url)
        assert llm_complete(source, MESSAGES) == "ok"
    assert source.retry_count == 1


def test_retries_run_out():
    with serve({"reward": ["ok"]}, failures=[503] * 4) as url:
        source = client(url, max_retries=3)
        with pytest.raises(TransportError):
            llm_complete(source, MESSAGES)
    assert source.retry_count == 3


def test_client_errors_fail_at_once():
    with serve({"reward": ["ok"]}, failures=[400]) as url:
        source = client(url)
        with pytest.raises(TransportError):
            llm_complete(source, MESSAGES)
    assert source.retry_count == 0


def test_exhausted_playbook_is_a_404():
    with serve({"reward": []}) as url:
        source = client(url)
        with pytest.raises(TransportError) as excinfo:
            llm_complete(source, MESSAGES)
    assert "404" in str(excinfo.value)


def test_empty_completion():
    with serve({"reward": ["   "]}) as url:
        with pytest.raises(EmptyCompletion):
            llm_complete(client(url), MESSAGES)


def test_connection_refused():
    source = client(f"http://127.0.0.1:{free_port()}", max_retries=1)
    with pytest.raises(TransportError):
        llm_complete(source, MESSAGES)
    assert source.retry_count == 1


def test_api_key_never_logged(caplog):
    caplog.set_level(logging.DEBUG)
    with serve({"reward": [f"echo {SENTINEL_KEY}"]}, failures=[500]) as url:
        source = client(url)
        messages = [("user", f"my key is {SENTINEL_KEY}")]
        llm_complete(source, messages)
    assert caplog.records
    assert SENTINEL_KEY not in caplog.text
    assert source.get_provider_info()["has_api_key"] is True
    assert SENTINEL_KEY not in json.dumps(source.get_provider_info())


def test_empty_conversation_is_rejected():
    with pytest.raises(ValidationError):
        llm_complete(ScriptedSource({"reward": ["x"]}), [])


def test_scripted_source():
    source = ScriptedSource({"reward": ["a", "b"]})
    assert llm_complete(source, MESSAGES) == "a"
    assert source.remaining("reward") == 1
    assert llm_complete(source, MESSAGES) == "b"
    with pytest.raises(PlaybookExhausted):
        llm_complete(source, MESSAGES)
    with pytest.raises(PlaybookExhausted):
        llm_complete(source, MESSAGES, "dr")
    assert source.requests[0]["messages"][1] == {"role": "user", "content": "Make the cart run."}


def test_scripted_source_validation(tmp_path):
    with pytest.raises(ValidationError):
        ScriptedSource({"reward": "not a list"})
    with pytest.raises(ValidationError):
        ScriptedSource.from_file(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ValidationError):
        ScriptedSource.from_file(tmp_path / "bad.json")


def test_build_source(tmp_path):
    (tmp_path / "playbook.json").write_text(json.dumps({"reward": ["hello"]}))
    source = build_source(ProposalSourceConfig(kind="scripted", playbook="playbook.json"), base_dir=tmp_path)
    assert llm_complete(source, MESSAGES) == "hello"
    http = build_source(ProposalSourceConfig(kind="llm_http", endpoint="http://127.0.0.1:1/"))
    assert isinstance(http, OpenAIHttpSource)
    assert http.url == "http://127.0.0.1:1/v1/chat/completions"


def test_source_config_requires_kind_fields():
    with pytest.raises(ValueError):
        ProposalSourceConfig(kind="llm_http")
    with pytest.raises(ValueError):
        ProposalSourceConfig(kind="scripted")
