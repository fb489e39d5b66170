"""LLM speed predictor: prompts, backends, reply parsing, safety filter, fine-tune export."""

from .backend import BackendConfig, MockBackend, RemoteBackend, chat, make_backend
from .finetune import export_finetune_dataset
from .parsing import FilterResult, ParsedReply, SafetyLimits, parse_response, safety_filter
from .predictor import GenFollowerPredictor, PredictionOutcome, ReplyCache
from .prompts import PromptBundle, TaskConfig, build_prompt, build_system_message, build_user_message

__all__ = [
    "BackendConfig", "MockBackend", "RemoteBackend", "chat", "make_backend",
    "export_finetune_dataset",
    "FilterResult", "ParsedReply", "SafetyLimits", "parse_response", "safety_filter",
    "GenFollowerPredictor", "PredictionOutcome", "ReplyCache",
    "PromptBundle", "TaskConfig", "build_prompt", "build_system_message", "build_user_message",
]
