"""Prompt templates, generation backends, and the refusal filter."""

from .clients import (
    ChatClient,
    ChatRequest,
    ChatResponse,
    ClientConfig,
    ClientStats,
    EmbeddingClient,
    EmbeddingVector,
    HttpChatClient,
    HttpEmbeddingClient,
    MockChatClient,
    MockEmbeddingClient,
    build_chat_client,
    build_embedding_client,
    embed_input_text,
)
from .refusal import DEFAULT_REFUSAL_PREFIXES, is_refusal
from .templates import (
    ALIGN_REVIEW,
    ALIGN_REWRITE,
    CONVERSATION_TURN_SCAFFOLD,
    PLACEHOLDER_MARKERS,
    Modality,
    PromptTemplate,
    render_align_prompts,
    render_answer_prompts,
    render_question_prompt,
)

__all__ = [
    "ALIGN_REVIEW",
    "ALIGN_REWRITE",
    "CONVERSATION_TURN_SCAFFOLD",
    "ChatClient",
    "ChatRequest",
    "ChatResponse",
    "ClientConfig",
    "ClientStats",
    "DEFAULT_REFUSAL_PREFIXES",
    "EmbeddingClient",
    "EmbeddingVector",
    "HttpChatClient",
    "HttpEmbeddingClient",
    "Modality",
    "MockChatClient",
    "MockEmbeddingClient",
    "PLACEHOLDER_MARKERS",
    "PromptTemplate",
    "build_chat_client",
    "build_embedding_client",
    "embed_input_text",
    "is_refusal",
    "render_align_prompts",
    "render_answer_prompts",
    "render_question_prompt",
]
