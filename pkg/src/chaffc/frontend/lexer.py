"""Tokenizer for the mini-C subset.

Tokens carry byte offsets so the parser can build exact SourceSpans.
Preprocessor lines (leading '#') are skipped whole so fixture files can keep
a real include line and stay compilable with a native toolchain; the subset
itself has no preprocessor.
"""

from __future__ import annotations

from dataclasses import dataclass

from .diagnostics import SyntaxDiagnostic, UnsupportedConstruct
from .nodes import SourceSpan

KEYWORDS = {
    "int", "char", "unsigned", "void", "struct",
    "if", "else", "while", "for", "return",
}

# Recognized so the diagnostic names the construct instead of mis-parsing it.
REJECTED_KEYWORDS = {
    "goto", "switch", "case", "default", "break", "continue", "do",
    "sizeof", "typedef", "union", "enum", "static", "extern", "const",
    "long", "short", "float", "double", "signed", "volatile", "register",
}

PUNCT = [
    "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "->", "+=", "-=",
    "{", "}", "(", ")", "[", "]", ";", ",", ".",
    "+", "-", "*", "/", "%", "<", ">", "=", "&", "|", "^", "!", "~",
]

_ESCAPES = {"n": 10, "t": 9, "r": 13, "0": 0, "\\": 92, "'": 39, '"': 34}


@dataclass(frozen=True)
class Token:
    kind: str  # "ident" | "keyword" | "int" | "char" | "string" | "punct" | "eof"
    text: str
    value: object
    lo: int
    hi: int
    line: int
    col: int


class Lexer:
    def __init__(self, source: str, file: str = "<input>"):
        self.src = source
        self.file = file
        self.pos = 0
        self.line = 1
        self.col = 1

    def span(self, lo: int, hi: int, line: int, col: int) -> SourceSpan:
        return SourceSpan(self.file, lo, hi, line, col)

    def _error(self, msg: str, lo: int, line: int, col: int) -> SyntaxDiagnostic:
        return SyntaxDiagnostic(msg, self.span(lo, min(lo + 1, len(self.src)), line, col))

    def _advance(self, n: int = 1) -> None:
        for _ in range(n):
            if self.pos < len(self.src):
                if self.src[self.pos] == "\n":
                    self.line += 1
                    self.col = 1
                else:
                    self.col += 1
                self.pos += 1

    def _skip_trivia(self) -> None:
        src = self.src
        while self.pos < len(src):
            c = src[self.pos]
            if c in " \t\r\n":
                self._advance()
            elif c == "#" and self.col == 1:
                # Directive line: skip through end of line (with continuations).
                while self.pos < len(src) and src[self.pos] != "\n":
                    if src[self.pos] == "\\" and self.pos + 1 < len(src) and src[self.pos + 1] == "\n":
                        self._advance(2)
                    else:
                        self._advance()
            elif src.startswith("//", self.pos):
                while self.pos < len(src) and src[self.pos] != "\n":
                    self._advance()
            elif src.startswith("/*", self.pos):
                start, line, col = self.pos, self.line, self.col
                self._advance(2)
                while self.pos < len(src) and not src.startswith("*/", self.pos):
                    self._advance()
                if self.pos >= len(src):
                    raise self._error("unterminated comment", start, line, col)
                self._advance(2)
            else:
                return

    def _char_escape(self, quote: str) -> int:
        c = self.src[self.pos]
        if c == "\\":
            self._advance()
            if self.pos >= len(self.src):
                raise self._error("unterminated escape", self.pos, self.line, self.col)
            e = self.src[self.pos]
            if e in _ESCAPES:
                self._advance()
                return _ESCAPES[e]
            if e == "x":
                self._advance()
                digits = ""
                while self.pos < len(self.src) and self.src[self.pos] in "0123456789abcdefABCDEF":
                    digits += self.src[self.pos]
                    self._advance()
                if not digits:
                    raise self._error("empty hex escape", self.pos, self.line, self.col)
                return int(digits, 16) & 0xFF
            raise self._error(f"unknown escape '\\{e}'", self.pos, self.line, self.col)
        self._advance()
        return ord(c) & 0xFF

    def tokens(self) -> list[Token]:
        out: list[Token] = []
        src = self.src
        while True:
            self._skip_trivia()
            if self.pos >= len(src):
                out.append(Token("eof", "", None, self.pos, self.pos, self.line, self.col))
                return out
            lo, line, col = self.pos, self.line, self.col
            c = src[self.pos]

            if c.isalpha() or c == "_":
                while self.pos < len(src) and (src[self.pos].isalnum() or src[self.pos] == "_"):
                    self._advance()
                text = src[lo:self.pos]
                if text in REJECTED_KEYWORDS:
                    raise UnsupportedConstruct(text, self.span(lo, self.pos, line, col))
                kind = "keyword" if text in KEYWORDS else "ident"
                out.append(Token(kind, text, text, lo, self.pos, line, col))
                continue

            if c.isdigit():
                if src.startswith("0x", self.pos) or src.startswith("0X", self.pos):
                    self._advance(2)
                    start = self.pos
                    while self.pos < len(src) and src[self.pos] in "0123456789abcdefABCDEF":
                        self._advance()
                    if self.pos == start:
                        raise self._error("empty hex literal", lo, line, col)
                    value = int(src[start:self.pos], 16)
                    is_hex = True
                else:
                    while self.pos < len(src) and src[self.pos].isdigit():
                        self._advance()
                    value = int(src[lo:self.pos], 10)
                    is_hex = False
                if value > 0xFFFFFFFF:
                    raise self._error("integer literal exceeds 32 bits", lo, line, col)
                out.append(Token("int", src[lo:self.pos], (value, is_hex), lo, self.pos, line, col))
                continue

            if c == "'":
                self._advance()
                if self.pos >= len(src):
                    raise self._error("unterminated char literal", lo, line, col)
                value = self._char_escape("'")
                if self.pos >= len(src) or src[self.pos] != "'":
                    raise self._error("unterminated char literal", lo, line, col)
                self._advance()
                out.append(Token("char", src[lo:self.pos], value, lo, self.pos, line, col))
                continue

            if c == '"':
                self._advance()
                data = bytearray()
                while self.pos < len(src) and src[self.pos] != '"':
                    data.append(self._char_escape('"'))
                if self.pos >= len(src):
                    raise self._error("unterminated string literal", lo, line, col)
                self._advance()
                out.append(Token("string", src[lo:self.pos], bytes(data), lo, self.pos, line, col))
                continue

            for p in PUNCT:
                if src.startswith(p, self.pos):
                    self._advance(len(p))
                    out.append(Token("punct", p, p, lo, self.pos, line, col))
                    break
            else:
                raise self._error(f"unexpected character {c!r}", lo, line, col)


def tokenize(source: str, file: str = "<input>") -> list[Token]:
    return Lexer(source, file).tokens()
