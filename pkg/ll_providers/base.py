# ll_providers/base.py
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from drlab.errors import ValidationError

Message = Dict[str, str]


class ProposalSourceConfig(BaseModel):
    """Where reward and DR proposals come from."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["llm_http", "scripted"]
    # llm_http
    endpoint: Optional[str] = None
    model: str = "gpt-4"
    temperature: float = Field(default=1.0, ge=0)
    max_retries: int = Field(default=3, ge=0)
    timeout: float = Field(default=60.0, gt=0)
    backoff_seconds: float = Field(default=1.0, ge=0)
    api_key_env: str = "DRLAB_API_KEY"
    # scripted
    playbook: Optional[str] = None

    @model_validator(mode="after")
    def _kind_fields(self):
        if self.kind == "llm_http" and not self.endpoint:
            raise ValueError("llm_http source needs an endpoint")
        if self.kind == "scripted" and not self.playbook:
            raise ValueError("scripted source needs a playbook path")
        return self


class ProposalSource(ABC):
    """Answers chat requests; ``request_role`` says what kind of proposal is wanted."""

    kind: str = ""

    @abstractmethod
    def complete(self, messages: List[Message], request_role: str = "reward") -> str:
        pass

    @abstractmethod
    def get_provider_info(self) -> Dict[str, Any]:
        pass


def _as_message(message: Union[Message, Tuple[str, str]]) -> Message:
    if isinstance(message, tuple):
        role, content = message
        return {"role": role, "content": content}
    return {"role": message["role"], "content": message["content"]}


def llm_complete(
    source: ProposalSource,
    messages: Sequence[Union[Message, Tuple[str, str]]],
    request_role: str = "reward",
) -> str:
    """Send an ordered (role, text) conversation and return the assistant text."""
    if not messages:
        raise ValidationError("llm_complete needs at least one message")
    return source.complete([_as_message(m) for m in messages], request_role)
