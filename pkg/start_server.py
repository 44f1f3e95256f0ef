#!/usr/bin/env python3
"""
Launch the playbook server: an OpenAI-compatible chat endpoint that answers
from a scripted playbook, for exercising the llm_http proposal source.

    python3 start_server.py --playbook experiments/sprint_cart_matrix/playbook.json --fail 503
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from drlab.errors import DrLabError
from drlab.pipeline.cli import load_environment, setup_logging


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description="drlab playbook server")
    parser.add_argument("--playbook", type=Path, default=None,
                        help="playbook JSON (default: $DRLAB_PLAYBOOK, or an empty playbook)")
    parser.add_argument("--host", default=None, help="bind address (default: $HOST or 127.0.0.1)")
    parser.add_argument("--port", type=int, default=None, help="port (default: $PORT or 8000)")
    parser.add_argument("--fail", type=int, action="append", default=[], metavar="STATUS",
                        help="answer the next request with this HTTP status; repeat to queue several")
    return parser.parse_args(argv)


def read_playbook(path):
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def main(argv=None):
    setup_logging()
    load_environment()
    args = parse_args(argv)
    logger = logging.getLogger("drlab.server")

    playbook_path = args.playbook or (Path(os.environ["DRLAB_PLAYBOOK"]) if os.getenv("DRLAB_PLAYBOOK") else None)
    host = args.host or os.getenv("HOST", "127.0.0.1")
    port = args.port or int(os.getenv("PORT", 8000))

    try:
        from drlab.api.server import create_app
        import uvicorn

        app = create_app(read_playbook(playbook_path), args.fail)
    except (OSError, json.JSONDecodeError, DrLabError) as e:
        logger.error(f"Cannot load playbook {playbook_path}: {e}")
        sys.exit(2)

    counts = {role: len(entries) for role, entries in app.state.source.playbook.items()}
    logger.info(f"Serving {counts} on {host}:{port}; queued failures {args.fail}")
    uvicorn.run(app, host=host, port=port, log_level="info", access_log=True)


if __name__ == "__main__":
    main()
