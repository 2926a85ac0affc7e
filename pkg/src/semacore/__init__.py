"""semacore: an embeddable AI coding agent engine.

Multi-tenant engine instances, scripted or live model adapters, read/write
tool scheduling, context compression, four-layer permissions, supervised
background execution, and a WebSocket service layer on top.
"""

from .config import EngineConfig, InvalidConfigError, load_config
from .engine import EngineInstance, Session, SessionUnknownError, create_instance
from .events import (
    BackgroundNotification,
    EngineEvent,
    ErrorEvent,
    EventBus,
    PermissionRequested,
    SessionComplete,
    TextChunk,
    ThinkingChunk,
    TodoUpdated,
    TokenStats,
    ToolCallStarted,
    ToolResultEvent,
    WireDecodeError,
    deserialize_event,
    serialize_event,
)
from .messages import (
    Message,
    UsageMetadata,
    Violation,
    assistant_message,
    text_block,
    thinking_block,
    tool_call_block,
    tool_result_block,
    user_message,
    validate_history,
)
from .permissions import Resolution
from .tenancy import (
    AgentLocalState,
    GlobalState,
    ResourceBundle,
    SessionState,
    resolve_resources,
    run_in_context,
)

__version__ = "0.1.0"

__all__ = [
    "EngineConfig",
    "InvalidConfigError",
    "load_config",
    "EngineInstance",
    "Session",
    "SessionUnknownError",
    "create_instance",
    "EngineEvent",
    "EventBus",
    "TextChunk",
    "ThinkingChunk",
    "ToolCallStarted",
    "ToolResultEvent",
    "TokenStats",
    "PermissionRequested",
    "TodoUpdated",
    "BackgroundNotification",
    "SessionComplete",
    "ErrorEvent",
    "WireDecodeError",
    "serialize_event",
    "deserialize_event",
    "Message",
    "UsageMetadata",
    "Violation",
    "validate_history",
    "user_message",
    "assistant_message",
    "text_block",
    "thinking_block",
    "tool_call_block",
    "tool_result_block",
    "Resolution",
    "AgentLocalState",
    "GlobalState",
    "SessionState",
    "ResourceBundle",
    "resolve_resources",
    "run_in_context",
]
