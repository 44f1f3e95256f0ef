"""
Proposal sources for drlab: a live OpenAI-compatible client and a scripted
playbook replayer behind one interface.
"""
from pathlib import Path
from typing import Optional

from .base import Message, ProposalSource, ProposalSourceConfig, llm_complete
from .openai_http import OpenAIHttpSource
from .scripted import ScriptedSource


def build_source(config: ProposalSourceConfig, base_dir: Optional[Path] = None) -> ProposalSource:
    """Instantiate the configured source; relative playbook paths resolve against ``base_dir``."""
    if config.kind == "scripted":
        path = Path(config.playbook)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return ScriptedSource.from_file(path)
    return OpenAIHttpSource(config)


__all__ = [
    'Message', 'ProposalSource', 'ProposalSourceConfig', 'llm_complete',
    'OpenAIHttpSource', 'ScriptedSource', 'build_source',
]
