"""RAG intrinsics: stable, model-agnostic operations around a completion backend."""

from .backend import (
    BackendConfig,
    CompletionRequest,
    CompletionResponse,
    CompletionsClient,
    GenerationParams,
    ScriptedBackend,
)
from .core import Conversation, Document, IntrinsicName, Role, Turn, registry_lookup, validate_conversation
from .intrinsics import ExpandedQueries, Intrinsics, InvocationRecord, Scenario, Strategy
from .parsing import AnswerabilityLabel, CertaintyScore, RelevanceLabel
from .pipeline import REFUSAL, FlowKind, index, retrieve_union, run_flow
from .rerank import RankedPassages
from .segmenter import split_sentences, tag_documents, tag_response

__version__ = "0.1.0"

__all__ = [
    "AnswerabilityLabel",
    "BackendConfig",
    "CertaintyScore",
    "CompletionRequest",
    "CompletionResponse",
    "CompletionsClient",
    "Conversation",
    "Document",
    "ExpandedQueries",
    "FlowKind",
    "GenerationParams",
    "IntrinsicName",
    "Intrinsics",
    "InvocationRecord",
    "REFUSAL",
    "RankedPassages",
    "RelevanceLabel",
    "Role",
    "Scenario",
    "ScriptedBackend",
    "Strategy",
    "Turn",
    "index",
    "registry_lookup",
    "retrieve_union",
    "run_flow",
    "split_sentences",
    "tag_documents",
    "tag_response",
    "validate_conversation",
]
