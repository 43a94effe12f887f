"""Diagnostics shared across the frontend."""

from __future__ import annotations

from .nodes import SourceSpan


class Diagnostic(Exception):
    """Base class: a message anchored to a source span."""

    def __init__(self, message: str, span: SourceSpan):
        self.message = message
        self.span = span
        super().__init__(f"{span.file}:{span.line}:{span.col}: {message}")


class SyntaxDiagnostic(Diagnostic):
    pass


class UnsupportedConstruct(Diagnostic):
    """A construct that is recognizably C but outside the subset."""

    def __init__(self, construct: str, span: SourceSpan):
        self.construct = construct
        super().__init__(f"unsupported construct: {construct}", span)


class EditError(Exception):
    pass


class AnchorNotFound(EditError):
    def __init__(self, nid: int):
        self.nid = nid
        super().__init__(f"edit anchor node {nid} not found")


class ConflictingEdits(EditError):
    def __init__(self, detail: str):
        super().__init__(f"conflicting edits: {detail}")
