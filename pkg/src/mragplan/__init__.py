"""Dynamic multimodal-RAG planning for visual question answering."""

from .core import (
    AnnotationLabel,
    Category,
    ExclusionReason,
    ProbeOutcome,
    RetrievedContext,
    ToolCallProfile,
    ToolKind,
    VqaExample,
    category_from_letter,
    expected_tool_calls,
    letter_of,
)

__version__ = "0.1.0"
