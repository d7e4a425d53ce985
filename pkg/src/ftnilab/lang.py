"""Source while-language: AST, parser with level declarations, interpreter.

The shape of the language is deliberately small: binary arithmetic
expressions, assignments, outputs on a low or high channel, conditionals
with arbitrary guards, and loops whose guard must be a bare variable.
``while x > 0`` is accepted only when the positive-guard extension is on;
it is compiled with a signed-comparison jump and interpreted to match.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .faultlab import Action, TAU, output
from .machine import SecurityLevel, LOW, HIGH, signed

BINOPS = ("+", "-", "*", "&")


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Const | Var | BinOp


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Assign:
    var: str
    expr: Expr


@dataclass(frozen=True)
class Out:
    channel: str
    expr: Expr


@dataclass(frozen=True)
class If:
    guard: Expr
    then_cmd: "Cmd"
    else_cmd: "Cmd"


@dataclass(frozen=True)
class Seq:
    first: "Cmd"
    second: "Cmd"


@dataclass(frozen=True)
class While:
    var: str
    body: "Cmd"
    positive: bool = False


@dataclass(frozen=True)
class Done:
    """The terminated program; never written in source."""


Cmd = Skip | Assign | Out | If | Seq | While | Done

DONE = Done()


@dataclass(frozen=True)
class SourceProgram:
    levels: tuple[tuple[str, SecurityLevel], ...]
    body: Cmd

    def level_of(self, var: str) -> SecurityLevel:
        for name, level in self.levels:
            if name == var:
                return level
        raise KeyError(var)

    def variables(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.levels)


class ParseError(Exception):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, col {column})")
        self.line = line
        self.column = column


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+)|(?P<id>[A-Za-z_]\w*)|(?P<op>:=|[+\-*&;{}()>])|(?P<bad>\S))"
)
_KEYWORDS = {"low", "high", "skip", "out", "if", "then", "else", "while", "do"}


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        pos = 0
        while pos < len(line):
            m = _TOKEN_RE.match(line, pos)
            if m is None:
                break
            col = m.start(m.lastgroup) + 1
            if m.lastgroup == "bad":
                raise ParseError(f"unexpected character {m.group('bad')!r}", lineno, col)
            if m.lastgroup is None:
                break
            tokens.append(_Token(m.lastgroup, m.group(m.lastgroup), lineno, col))
            pos = m.end()
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token], allow_positive_guards: bool):
        self.tokens = tokens
        self.pos = 0
        self.allow_positive_guards = allow_positive_guards

    def peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def error(self, message: str) -> ParseError:
        tok = self.peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else _Token("", "", 1, 1)
            return ParseError(message + " at end of input", last.line, last.column)
        return ParseError(f"{message}, got {tok.text!r}", tok.line, tok.column)

    def take(self, text: str | None = None, kind: str | None = None) -> _Token:
        tok = self.peek()
        if tok is None or (text is not None and tok.text != text) or (
            kind is not None and tok.kind != kind
        ):
            raise self.error(f"expected {text or kind}")
        self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.text == text

    # declarations ---------------------------------------------------------
    def declarations(self) -> list[tuple[str, SecurityLevel]]:
        decls: list[tuple[str, SecurityLevel]] = []
        while self.at("low") or self.at("high"):
            # "out low E" also starts with a keyword; declarations end there.
            nxt = self.tokens[self.pos + 1] if self.pos + 1 < len(self.tokens) else None
            if nxt is None or nxt.kind != "id" or nxt.text in _KEYWORDS:
                break
            level = LOW if self.take().text == "low" else HIGH
            name_tok = self.take(kind="id")
            if any(name == name_tok.text for name, _ in decls):
                raise ParseError(
                    f"duplicate declaration of {name_tok.text!r}",
                    name_tok.line,
                    name_tok.column,
                )
            decls.append((name_tok.text, level))
            self.take(";")
        return decls

    # expressions ----------------------------------------------------------
    def expr(self) -> Expr:
        node = self.term()
        while self.at("+") or self.at("-"):
            op = self.take().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.at("*") or self.at("&"):
            op = self.take().text
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        tok = self.peek()
        if tok is None:
            raise self.error("expected an expression")
        if tok.kind == "num":
            self.take()
            return Const(int(tok.text))
        if tok.kind == "id" and tok.text not in _KEYWORDS:
            self.take()
            return Var(tok.text)
        if tok.text == "(":
            self.take("(")
            node = self.expr()
            self.take(")")
            return node
        raise self.error("expected an expression")

    # commands -------------------------------------------------------------
    def command(self) -> Cmd:
        node = self.basic()
        while self.at(";"):
            self.take(";")
            if self.peek() is None or self.at("}"):
                break
            node = Seq(node, self.basic())
        return node

    def block_or_basic(self) -> Cmd:
        if self.at("{"):
            self.take("{")
            node = self.command()
            self.take("}")
            return node
        return self.basic()

    def basic(self) -> Cmd:
        tok = self.peek()
        if tok is None:
            raise self.error("expected a statement")
        if tok.text == "{":
            return self.block_or_basic()
        if tok.text == "skip":
            self.take()
            return Skip()
        if tok.text == "out":
            self.take()
            chan = self.take(kind="id").text
            if chan not in ("low", "high"):
                raise self.error("channel must be low or high")
            return Out(chan, self.expr())
        if tok.text == "if":
            self.take()
            guard = self.expr()
            self.take("then")
            then_cmd = self.block_or_basic()
            self.take("else")
            else_cmd = self.block_or_basic()
            return If(guard, then_cmd, else_cmd)
        if tok.text == "while":
            self.take()
            var_tok = self.peek()
            if var_tok is None or var_tok.kind != "id" or var_tok.text in _KEYWORDS:
                raise self.error("while guard must be a variable")
            self.take()
            positive = False
            if self.at(">"):
                if not self.allow_positive_guards:
                    raise self.error("while x > 0 requires the jlez extension")
                self.take(">")
                zero = self.take(kind="num")
                if zero.text != "0":
                    raise ParseError("guard comparison must be > 0", zero.line, zero.column)
                positive = True
            if not self.at("do"):
                raise self.error("while guard must be a variable")
            self.take("do")
            return While(var_tok.text, self.block_or_basic(), positive)
        if tok.kind == "id" and tok.text not in _KEYWORDS:
            self.take()
            self.take(":=")
            return Assign(tok.text, self.expr())
        raise self.error("expected a statement")


def _check_declared(cmd_or_expr, declared: set[str]) -> None:
    if isinstance(cmd_or_expr, Var):
        if cmd_or_expr.name not in declared:
            raise ParseError(f"undeclared variable {cmd_or_expr.name!r}", 0, 0)
    elif isinstance(cmd_or_expr, BinOp):
        _check_declared(cmd_or_expr.left, declared)
        _check_declared(cmd_or_expr.right, declared)
    elif isinstance(cmd_or_expr, Assign):
        if cmd_or_expr.var not in declared:
            raise ParseError(f"undeclared variable {cmd_or_expr.var!r}", 0, 0)
        _check_declared(cmd_or_expr.expr, declared)
    elif isinstance(cmd_or_expr, Out):
        _check_declared(cmd_or_expr.expr, declared)
    elif isinstance(cmd_or_expr, If):
        _check_declared(cmd_or_expr.guard, declared)
        _check_declared(cmd_or_expr.then_cmd, declared)
        _check_declared(cmd_or_expr.else_cmd, declared)
    elif isinstance(cmd_or_expr, Seq):
        _check_declared(cmd_or_expr.first, declared)
        _check_declared(cmd_or_expr.second, declared)
    elif isinstance(cmd_or_expr, While):
        if cmd_or_expr.var not in declared:
            raise ParseError(f"undeclared variable {cmd_or_expr.var!r}", 0, 0)
        _check_declared(cmd_or_expr.body, declared)


def parse(text: str, allow_positive_guards: bool = False) -> SourceProgram:
    parser = _Parser(_tokenize(text), allow_positive_guards)
    decls = parser.declarations()
    body = parser.command()
    tok = parser.peek()
    if tok is not None:
        raise ParseError(f"trailing input {tok.text!r}", tok.line, tok.column)
    _check_declared(body, {name for name, _ in decls})
    return SourceProgram(tuple(decls), body)


def render_expr(expr: Expr) -> str:
    if isinstance(expr, Const):
        return str(expr.value)
    if isinstance(expr, Var):
        return expr.name
    left, right = expr.left, expr.right
    lt = render_expr(left)
    rt = render_expr(right)
    if isinstance(left, BinOp) and left.op in ("+", "-") and expr.op in ("*", "&"):
        lt = f"({lt})"
    if isinstance(right, BinOp):
        rt = f"({rt})"
    return f"{lt} {expr.op} {rt}"


def render_cmd(cmd: Cmd) -> str:
    if isinstance(cmd, Skip):
        return "skip"
    if isinstance(cmd, Assign):
        return f"{cmd.var} := {render_expr(cmd.expr)}"
    if isinstance(cmd, Out):
        return f"out {cmd.channel} {render_expr(cmd.expr)}"
    if isinstance(cmd, If):
        return (
            f"if {render_expr(cmd.guard)} then {{ {render_cmd(cmd.then_cmd)} }}"
            f" else {{ {render_cmd(cmd.else_cmd)} }}"
        )
    if isinstance(cmd, Seq):
        return f"{render_cmd(cmd.first)}; {render_cmd(cmd.second)}"
    if isinstance(cmd, While):
        guard = f"{cmd.var} > 0" if cmd.positive else cmd.var
        return f"while {guard} do {{ {render_cmd(cmd.body)} }}"
    raise ValueError(f"cannot render {cmd}")


def render_source(program: SourceProgram) -> str:
    decls = "".join(
        f"{'low' if level is LOW else 'high'} {name};\n" for name, level in program.levels
    )
    return decls + render_cmd(program.body) + "\n"


# ---------------------------------------------------------------------------
# Reference interpreter
# ---------------------------------------------------------------------------

Memory = dict[str, int]


def eval_expr(expr: Expr, memory: Memory, width: int) -> int:
    mask = (1 << width) - 1
    if isinstance(expr, Const):
        return expr.value & mask
    if isinstance(expr, Var):
        if expr.name not in memory:
            raise KeyError(f"undeclared variable {expr.name!r}")
        return memory[expr.name]
    a = eval_expr(expr.left, memory, width)
    b = eval_expr(expr.right, memory, width)
    if expr.op == "+":
        return (a + b) & mask
    if expr.op == "-":
        return (a - b) & mask
    if expr.op == "*":
        return (a * b) & mask
    if expr.op == "&":
        return a & b
    raise ValueError(f"unknown operator {expr.op}")


def guard_holds(value: int, positive: bool, width: int) -> bool:
    if positive:
        return signed(value, width) > 0
    return value != 0


def step_while(cmd: Cmd, memory: Memory, width: int) -> tuple[Action, Cmd, Memory] | None:
    """One small step; sequences contract in the same step their head finishes."""
    if isinstance(cmd, Done):
        return None
    if isinstance(cmd, Skip):
        return (TAU, DONE, memory)
    if isinstance(cmd, Assign):
        value = eval_expr(cmd.expr, memory, width)
        updated = dict(memory)
        updated[cmd.var] = value
        return (TAU, DONE, updated)
    if isinstance(cmd, Out):
        value = eval_expr(cmd.expr, memory, width)
        return (output(cmd.channel, value), DONE, memory)
    if isinstance(cmd, If):
        if eval_expr(cmd.guard, memory, width) != 0:
            return (TAU, cmd.then_cmd, memory)
        return (TAU, cmd.else_cmd, memory)
    if isinstance(cmd, While):
        if guard_holds(memory[cmd.var], cmd.positive, width):
            return (TAU, Seq(cmd.body, cmd), memory)
        return (TAU, DONE, memory)
    if isinstance(cmd, Seq):
        result = step_while(cmd.first, memory, width)
        if result is None:
            raise ValueError("sequence head is already terminated")
        action, first2, memory2 = result
        if isinstance(first2, Done):
            return (action, cmd.second, memory2)
        return (action, Seq(first2, cmd.second), memory2)
    raise ValueError(f"cannot step {cmd}")


def run_while(
    cmd: Cmd, memory: Memory, width: int, max_steps: int
) -> tuple[list[Action], Memory, int, bool]:
    """Run to termination or budget; returns (outputs, memory, steps, terminated)."""
    outputs: list[Action] = []
    steps = 0
    while steps < max_steps:
        result = step_while(cmd, memory, width)
        if result is None:
            return outputs, memory, steps, True
        action, cmd, memory = result
        steps += 1
        if not action.silent:
            outputs.append(action)
    return outputs, memory, steps, isinstance(cmd, Done)


def low_equal(m1: Memory, m2: Memory, levels: dict[str, SecurityLevel]) -> bool:
    return all(m1[v] == m2[v] for v, lev in levels.items() if lev is LOW)
