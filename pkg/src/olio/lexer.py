"""Tokenizer for .ol / .iol source text."""

from dataclasses import dataclass, field


KEYWORDS = frozenset({
    "type", "interface", "inputPort", "outputPort", "include", "execution",
    "main", "init", "define", "RequestResponse", "OneWay",
    "Location", "Protocol", "Interfaces",
    "if", "else", "match", "undefined",
    "int", "long", "double", "string", "raw", "void", "any",
    "concurrent", "single", "sequential",
})

NATIVE_TYPE_NAMES = frozenset({"int", "long", "double", "string", "raw", "void", "any"})

# token kinds
IDENT = "ident"
INT = "int-literal"
DOUBLE = "double-literal"
STRING = "string-literal"
KEYWORD = "keyword"
PUNCT = "punctuation"
EOF = "end-of-input"

_TWO_CHAR_PUNCT = {"==", "!="}
_ONE_CHAR_PUNCT = set("{}()[]:;,.|@=+-*/?<>")

_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t"}


class LexError(Exception):
    def __init__(self, message, line, column):
        super().__init__(f"{message} at {line}:{column}")
        self.message = message
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int
    file: str | None = field(default=None, compare=False)

    def __repr__(self):
        return f"Token({self.kind}, {self.text!r}, {self.line}:{self.column})"


def _is_ident_start(c):
    return c.isalpha() or c == "_"


def _is_ident_char(c):
    return c.isalnum() or c == "_"


def tokenize(source, file=None):
    """Turn source text into a token list ending with an end-of-input token.

    The pipe character is a single punctuation token; whether it means
    parallel composition or a type choice is the parser's business.
    Identifiers may contain interior hyphens (``Old-Software-Corp``): a
    hyphen joins an identifier only when flanked by identifier characters,
    otherwise it is the minus operator.
    """
    tokens = []
    i = 0
    line = 1
    col = 1
    n = len(source)

    def advance(k=1):
        nonlocal i, line, col
        for _ in range(k):
            if i < n and source[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        c = source[i]
        if c in " \t\r\n":
            advance()
            continue
        if c == "/" and i + 1 < n and source[i + 1] == "/":
            while i < n and source[i] != "\n":
                advance()
            continue
        if c == "/" and i + 1 < n and source[i + 1] == "*":
            start_line, start_col = line, col
            advance(2)
            while i < n and not (source[i] == "*" and i + 1 < n and source[i + 1] == "/"):
                advance()
            if i >= n:
                raise LexError("unterminated block comment", start_line, start_col)
            advance(2)
            continue

        start_line, start_col = line, col

        if _is_ident_start(c):
            start = i
            advance()
            while i < n:
                if _is_ident_char(source[i]):
                    advance()
                elif (source[i] == "-" and i + 1 < n and _is_ident_char(source[i + 1])):
                    advance(2)
                else:
                    break
            text = source[start:i]
            kind = KEYWORD if text in KEYWORDS else IDENT
            tokens.append(Token(kind, text, start_line, start_col, file))
            continue

        if c.isdigit():
            start = i
            while i < n and source[i].isdigit():
                advance()
            if i + 1 < n and source[i] == "." and source[i + 1].isdigit():
                advance()
                while i < n and source[i].isdigit():
                    advance()
                tokens.append(Token(DOUBLE, source[start:i], start_line, start_col, file))
            else:
                tokens.append(Token(INT, source[start:i], start_line, start_col, file))
            continue

        if c == '"':
            advance()
            parts = []
            while True:
                if i >= n:
                    raise LexError("unterminated string literal", start_line, start_col)
                c = source[i]
                if c == '"':
                    advance()
                    break
                if c == "\n":
                    raise LexError("unterminated string literal", start_line, start_col)
                if c == "\\":
                    if i + 1 >= n:
                        raise LexError("unterminated string literal", start_line, start_col)
                    esc = source[i + 1]
                    if esc not in _ESCAPES:
                        raise LexError(f"unknown escape '\\{esc}'", line, col)
                    parts.append(_ESCAPES[esc])
                    advance(2)
                    continue
                parts.append(c)
                advance()
            tokens.append(Token(STRING, "".join(parts), start_line, start_col, file))
            continue

        two = source[i:i + 2]
        if two in _TWO_CHAR_PUNCT:
            advance(2)
            tokens.append(Token(PUNCT, two, start_line, start_col, file))
            continue
        if c in _ONE_CHAR_PUNCT:
            advance()
            tokens.append(Token(PUNCT, c, start_line, start_col, file))
            continue

        raise LexError(f"illegal character {c!r}", start_line, start_col)

    tokens.append(Token(EOF, "", line, col, file))
    return tokens
