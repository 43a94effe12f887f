"""Parsing, resolution, printing, and id-stable editing of mini-C."""

from .diagnostics import (
    AnchorNotFound, ConflictingEdits, Diagnostic, EditError,
    SyntaxDiagnostic, UnsupportedConstruct,
)
from .edits import EditScript, apply_edits
from .nodes import Program
from .parser import parse
from .printer import print_expr, print_program

__all__ = [
    "AnchorNotFound", "ConflictingEdits", "Diagnostic", "EditError",
    "EditScript", "Program", "SyntaxDiagnostic", "UnsupportedConstruct",
    "apply_edits", "parse", "print_expr", "print_program",
]
