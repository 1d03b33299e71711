"""Lexer and recursive-descent parser for MiniC, a small C-like language.

Grammar (one token of lookahead)::

    program   := function*
    function  := type IDENT '(' [param (',' param)*] ')' block
    param     := type IDENT ['[' ']']
    type      := 'int' | 'void' | 'char' '*'
    block     := '{' stmt* '}'
    stmt      := decl | if | while | return | block | simple
    decl      := type IDENT ['[' INT ']'] ['=' expr] ';'
    if        := 'if' '(' expr ')' stmt ['else' stmt]
    while     := 'while' '(' expr ')' stmt
    return    := 'return' [expr] ';'
    simple    := expr ['=' expr] ';'

Every token is owned by exactly one AST node.  Leaves own their literal or
name; punctuation and keywords are owned by the construct that introduces
them, so a pre-order walk over owned tokens (sorted by position) reproduces
the token stream.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterator

__all__ = [
    "TokenKind",
    "Token",
    "NodeType",
    "AstNode",
    "LexError",
    "ParseError",
    "tokenize",
    "parse",
    "parse_functions",
    "parse_source",
]


class TokenKind(enum.Enum):
    KEYWORD = "keyword"
    IDENTIFIER = "identifier"
    INT = "integer-literal"
    STRING = "string-literal"
    OPERATOR = "operator"
    PUNCT = "punctuation"


class NodeType(enum.IntEnum):
    """Fixed MiniC node vocabulary; the integer value is the one-hot slot."""

    FunctionDef = 0
    ParamList = 1
    Param = 2
    Block = 3
    DeclStatement = 4
    AssignStatement = 5
    IfStatement = 6
    WhileStatement = 7
    ReturnStatement = 8
    ExprStatement = 9
    Condition = 10
    CallExpression = 11
    BinaryOp = 12
    UnaryOp = 13
    IndexExpression = 14
    Identifier = 15
    IntLiteral = 16
    StringLiteral = 17
    TypeName = 18
    ArgList = 19


KEYWORDS = frozenset({"int", "void", "char", "if", "else", "while", "return"})


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    line: int
    col: int
    offset: int = 0

    def __repr__(self) -> str:
        return f"Token({self.kind.name}, {self.text!r}, {self.line}:{self.col})"


@dataclass
class AstNode:
    id: int
    node_type: NodeType
    children: list[AstNode] = field(default_factory=list)
    tokens: list[Token] = field(default_factory=list)
    line: int = 0

    def walk(self) -> Iterator[AstNode]:
        """Pre-order traversal."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def span_tokens(self) -> list[Token]:
        """All tokens in the subtree, in source order."""
        toks = [t for n in self.walk() for t in n.tokens]
        return sorted(toks, key=lambda t: t.offset)

    @property
    def name(self) -> str | None:
        """Function name for a FunctionDef root."""
        if self.node_type is NodeType.FunctionDef:
            return self.children[1].tokens[0].text
        return None


class LexError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} at line {line}, col {col}")
        self.line = line
        self.col = col


class ParseError(Exception):
    def __init__(self, message: str, token: Token | None):
        if token is None:
            where = "at end of input"
        else:
            where = f"at line {token.line}, col {token.col} (near {token.text!r})"
        super().__init__(f"{message} {where}")
        self.token = token
        self.line = token.line if token else None
        self.col = token.col if token else None


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<int>[0-9]+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|<=|>=|&&|\|\||[-+*/%<>=!])
  | (?P<punct>[(){}\[\],;])
    """,
    re.VERBOSE | re.DOTALL,
)


def tokenize(source: str) -> list[Token]:
    """Split ``source`` into tokens, dropping whitespace and comments."""
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise LexError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        col = pos - line_start + 1
        if kind == "name":
            tk = TokenKind.KEYWORD if text in KEYWORDS else TokenKind.IDENTIFIER
            tokens.append(Token(tk, text, line, col, pos))
        elif kind == "int":
            tokens.append(Token(TokenKind.INT, text, line, col, pos))
        elif kind == "string":
            tokens.append(Token(TokenKind.STRING, text, line, col, pos))
        elif kind == "op":
            tokens.append(Token(TokenKind.OPERATOR, text, line, col, pos))
        elif kind == "punct":
            tokens.append(Token(TokenKind.PUNCT, text, line, col, pos))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rindex("\n") + 1
        pos = m.end()
    return tokens


# binary operator precedence, lowest first
_BINARY_LEVELS = (("||",), ("&&",), ("==", "!="), ("<", "<=", ">", ">="), ("+", "-"), ("*", "/", "%"))


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.pos = 0

    # -- token helpers -------------------------------------------------
    def peek(self, ahead: int = 0) -> Token | None:
        i = self.pos + ahead
        return self.toks[i] if i < len(self.toks) else None

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.text == text and tok.kind is not TokenKind.STRING

    def take(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of input", None)
        self.pos += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.peek()
        if tok is None or tok.text != text or tok.kind is TokenKind.STRING:
            raise ParseError(f"expected {text!r}", tok)
        self.pos += 1
        return tok

    def expect_kind(self, kind: TokenKind, what: str) -> Token:
        tok = self.peek()
        if tok is None or tok.kind is not kind:
            raise ParseError(f"expected {what}", tok)
        self.pos += 1
        return tok

    @staticmethod
    def node(ntype: NodeType, children=(), tokens=(), line: int | None = None) -> AstNode:
        children = list(children)
        tokens = list(tokens)
        if line is None:
            if tokens:
                line = min(t.line for t in tokens)
            else:
                line = min(c.line for c in children) if children else 0
        return AstNode(-1, ntype, children, tokens, line)

    # -- declarations --------------------------------------------------
    def at_type(self) -> bool:
        return self.at("int") or self.at("void") or self.at("char")

    def type_name(self) -> AstNode:
        tok = self.peek()
        if self.at("int") or self.at("void"):
            return self.node(NodeType.TypeName, tokens=[self.take()])
        if self.at("char"):
            first = self.take()
            star = self.expect("*")
            return self.node(NodeType.TypeName, tokens=[first, star])
        raise ParseError("expected type name", tok)

    def identifier(self) -> AstNode:
        tok = self.expect_kind(TokenKind.IDENTIFIER, "identifier")
        return self.node(NodeType.Identifier, tokens=[tok])

    def function(self) -> AstNode:
        rtype = self.type_name()
        name = self.identifier()
        lparen = self.expect("(")
        params: list[AstNode] = []
        commas: list[Token] = []
        if not self.at(")"):
            params.append(self.param())
            while self.at(","):
                commas.append(self.take())
                params.append(self.param())
        rparen = self.expect(")")
        plist = self.node(NodeType.ParamList, params, [lparen, *commas, rparen])
        body = self.block()
        return self.node(NodeType.FunctionDef, [rtype, name, plist, body], line=rtype.line)

    def param(self) -> AstNode:
        ptype = self.type_name()
        name = self.identifier()
        extra: list[Token] = []
        if self.at("["):
            extra = [self.take(), self.expect("]")]
        return self.node(NodeType.Param, [ptype, name], extra, line=ptype.line)

    def block(self) -> AstNode:
        lbrace = self.expect("{")
        stmts: list[AstNode] = []
        while not self.at("}"):
            if self.peek() is None:
                raise ParseError("unterminated block", None)
            stmts.append(self.statement())
        rbrace = self.take()
        return self.node(NodeType.Block, stmts, [lbrace, rbrace], line=lbrace.line)

    # -- statements ----------------------------------------------------
    def statement(self) -> AstNode:
        if self.at("{"):
            return self.block()
        if self.at_type():
            return self.declaration()
        if self.at("if"):
            return self.if_statement()
        if self.at("while"):
            return self.while_statement()
        if self.at("return"):
            kw = self.take()
            children = [] if self.at(";") else [self.expression()]
            semi = self.expect(";")
            return self.node(NodeType.ReturnStatement, children, [kw, semi], line=kw.line)
        return self.simple_statement()

    def declaration(self) -> AstNode:
        dtype = self.type_name()
        name = self.identifier()
        children = [dtype, name]
        toks: list[Token] = []
        if self.at("["):
            toks.append(self.take())
            size = self.expect_kind(TokenKind.INT, "array size")
            children.append(self.node(NodeType.IntLiteral, tokens=[size]))
            toks.append(self.expect("]"))
        if self.at("="):
            toks.append(self.take())
            children.append(self.expression())
        toks.append(self.expect(";"))
        return self.node(NodeType.DeclStatement, children, toks, line=dtype.line)

    def condition(self) -> AstNode:
        lparen = self.expect("(")
        expr = self.expression()
        rparen = self.expect(")")
        return self.node(NodeType.Condition, [expr], [lparen, rparen], line=lparen.line)

    def if_statement(self) -> AstNode:
        kw = self.take()
        cond = self.condition()
        then = self.statement()
        children = [cond, then]
        toks = [kw]
        if self.at("else"):
            toks.append(self.take())
            children.append(self.statement())
        return self.node(NodeType.IfStatement, children, toks, line=kw.line)

    def while_statement(self) -> AstNode:
        kw = self.take()
        cond = self.condition()
        body = self.statement()
        return self.node(NodeType.WhileStatement, [cond, body], [kw], line=kw.line)

    def simple_statement(self) -> AstNode:
        first = self.peek()
        expr = self.expression()
        if self.at("="):
            if expr.node_type not in (NodeType.Identifier, NodeType.IndexExpression):
                raise ParseError("invalid assignment target", self.peek())
            eq = self.take()
            value = self.expression()
            semi = self.expect(";")
            return self.node(NodeType.AssignStatement, [expr, value], [eq, semi], line=first.line)
        semi = self.expect(";")
        return self.node(NodeType.ExprStatement, [expr], [semi], line=first.line)

    # -- expressions ---------------------------------------------------
    def expression(self, level: int = 0) -> AstNode:
        if level == len(_BINARY_LEVELS):
            return self.unary()
        ops = _BINARY_LEVELS[level]
        left = self.expression(level + 1)
        while (tok := self.peek()) is not None and tok.kind is TokenKind.OPERATOR and tok.text in ops:
            op = self.take()
            right = self.expression(level + 1)
            left = self.node(NodeType.BinaryOp, [left, right], [op], line=left.line)
        return left

    def unary(self) -> AstNode:
        if self.at("-") or self.at("!"):
            op = self.take()
            return self.node(NodeType.UnaryOp, [self.unary()], [op], line=op.line)
        return self.postfix()

    def postfix(self) -> AstNode:
        expr = self.primary()
        while True:
            if self.at("(") and expr.node_type is NodeType.Identifier:
                lparen = self.take()
                args: list[AstNode] = []
                commas: list[Token] = []
                if not self.at(")"):
                    args.append(self.expression())
                    while self.at(","):
                        commas.append(self.take())
                        args.append(self.expression())
                rparen = self.expect(")")
                arglist = self.node(NodeType.ArgList, args, [lparen, *commas, rparen], line=lparen.line)
                expr = self.node(NodeType.CallExpression, [expr, arglist], line=expr.line)
            elif self.at("["):
                lbr = self.take()
                index = self.expression()
                rbr = self.expect("]")
                expr = self.node(NodeType.IndexExpression, [expr, index], [lbr, rbr], line=expr.line)
            else:
                return expr

    def primary(self) -> AstNode:
        tok = self.peek()
        if tok is None:
            raise ParseError("expected expression", None)
        if tok.kind is TokenKind.IDENTIFIER:
            return self.node(NodeType.Identifier, tokens=[self.take()])
        if tok.kind is TokenKind.INT:
            return self.node(NodeType.IntLiteral, tokens=[self.take()])
        if tok.kind is TokenKind.STRING:
            return self.node(NodeType.StringLiteral, tokens=[self.take()])
        if self.at("("):
            lparen = self.take()
            inner = self.expression()
            rparen = self.expect(")")
            # grouping parens belong to the grouped expression
            inner.tokens = [lparen, *inner.tokens, rparen]
            return inner
        raise ParseError("expected expression", tok)


def _number(root: AstNode) -> AstNode:
    for i, node in enumerate(root.walk()):
        node.id = i
    return root


def parse_functions(tokens: list[Token]) -> list[AstNode]:
    """Parse a whole translation unit into one FunctionDef root per function."""
    p = _Parser(tokens)
    roots = []
    while p.peek() is not None:
        roots.append(_number(p.function()))
    return roots


def parse(tokens: list[Token]) -> AstNode:
    """Parse exactly one function definition."""
    p = _Parser(tokens)
    root = p.function()
    if p.peek() is not None:
        raise ParseError("trailing tokens after function", p.peek())
    return _number(root)


def parse_source(source: str) -> AstNode:
    return parse(tokenize(source))
