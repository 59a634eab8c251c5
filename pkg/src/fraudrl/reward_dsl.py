"""A small, sandboxed language for candidate reward functions.

Programs look like a restricted Python function::

    def get_reward(current_step, action, target, wgt):
        let tp = (action == 1) & (target == 1)
        if current_step == 0:
            return 1.2 * tp * wgt
        return tp * wgt

Grammar::

    program := "def" "get_reward" "(" "current_step" "," "action" ","
               "target" "," "wgt" ")" ":" body
    body    := { "let" IDENT "=" expr } [ branch ] "return" expr
    branch  := "if" "current_step" "==" INT ":" body
               { "elif" "current_step" "==" INT ":" body }
               [ "else" ":" body ]

Operator precedence from tightest to loosest: unary ``-`` ``!``, ``* /``,
``+ -``, comparisons (``== != < <= > >=``, not chainable), ``&``, ``|``.
Builtins: ``min max abs clip log exp``. Newlines and indentation carry no
meaning; ``#`` starts a comment.

Values are float64 vectors over the transaction batch or scalars; scalars
broadcast inside expressions, comparisons and boolean operators yield 0/1.
There are no loops, calls to user functions, attribute access or I/O, so a
program can only read its four parameters and always terminates.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

PARAMS = ("current_step", "action", "target", "wgt")
VECTOR_PARAMS = frozenset({"action", "target", "wgt"})
BUILTIN_ARITY = {"min": (2, None), "max": (2, None), "abs": (1, 1), "clip": (3, 3), "log": (1, 1), "exp": (1, 1)}
KEYWORDS = frozenset({"def", "let", "if", "elif", "else", "return"})
MAX_DEPTH = 64
_PARSE_NESTING_LIMIT = 256

COMPARISONS = ("==", "!=", "<", "<=", ">", ">=")
PRECEDENCE = {"|": 1, "&": 2, **{op: 3 for op in COMPARISONS}, "+": 4, "-": 4, "*": 5, "/": 5}
UNARY_PRECEDENCE = 6


class DslError(Exception):
    pass


class ExtractionError(DslError):
    pass


class ParseError(DslError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class EvalError(DslError):
    pass


_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


def extract_program(llm_text: str) -> str:
    """Contents of the first triple-backtick fenced block."""
    m = _FENCE_RE.search(llm_text or "")
    if m is None:
        raise ExtractionError("no fenced code block found in the response")
    return m.group(1)


# --------------------------------------------------------------------------
# AST

Span = tuple  # (line, col)


@dataclass(frozen=True)
class Num:
    value: float
    span: Span = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Name:
    id: str
    span: Span = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Expr"
    span: Span = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    span: Span = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple
    span: Span = field(default=(0, 0), compare=False)


Expr = Union[Num, Name, Unary, Binary, Call]


@dataclass(frozen=True)
class Let:
    name: str
    expr: Expr
    span: Span = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Branch:
    arms: tuple  # of (step:int, Body)
    orelse: "Body | None" = None
    span: Span = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class Body:
    lets: tuple
    branch: Branch | None
    ret: Expr | None
    span: Span = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class RewardProgram:
    """Parsed reward function; callable with the reward signature."""

    body: Body
    name: str = "get_reward"
    params: tuple = PARAMS
    source_text: str = field(default="", compare=False)

    def __call__(self, current_step, action, target, wgt):
        return evaluate(self, current_step, action, target, wgt)


# --------------------------------------------------------------------------
# Lexer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\f]+|\\\n)
  | (?P<newline>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>==|!=|<=|>=|[-+*/<>&|!(),:=])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str  # number, ident, op, kw, eof
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        col = pos - line_start + 1
        if kind == "newline" or text == "\\\n":
            line += 1
            line_start = m.end()
        elif kind in ("ws", "comment"):
            pass
        elif kind == "ident" and text in KEYWORDS:
            tokens.append(Token("kw", text, line, col))
        else:
            tokens.append(Token(kind, text, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# --------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.i = 0
        self.nesting = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.peek()
        return ParseError(message, tok.line, tok.col)

    def at(self, kind: str, text: str | None = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = repr(text) if text else kind
            got = repr(tok.text) if tok.kind != "eof" else "end of input"
            raise self.error(f"expected {want}, found {got}")
        return self.advance()

    def program(self) -> Body:
        self.expect("kw", "def")
        name = self.expect("ident")
        if name.text != "get_reward":
            raise self.error(f"function must be named get_reward, not {name.text!r}", name)
        lpar = self.expect("op", "(")
        params = []
        if not self.at("op", ")"):
            params.append(self.expect("ident").text)
            while self.at("op", ","):
                self.advance()
                params.append(self.expect("ident").text)
        self.expect("op", ")")
        if tuple(params) != PARAMS:
            raise self.error(
                f"signature must be get_reward({', '.join(PARAMS)}), got ({', '.join(params)})", lpar
            )
        self.expect("op", ":")
        body = self.body(set(PARAMS))
        if not self.at("eof"):
            raise self.error(f"unexpected {self.peek().text!r} after the final return")
        return body

    def body(self, scope: set) -> Body:
        start = self.peek()
        scope = set(scope)
        lets = []
        while self.at("kw", "let"):
            kw = self.advance()
            name = self.expect("ident")
            self.expect("op", "=")
            expr = self.expr(scope)
            lets.append(Let(name.text, expr, (kw.line, kw.col)))
            scope.add(name.text)
        branch = self.branch(scope) if self.at("kw", "if") else None
        if not self.at("kw", "return"):
            raise self.error("expected 'return' to end the block")
        self.advance()
        ret = self.expr(scope)
        return Body(tuple(lets), branch, ret, (start.line, start.col))

    def _arm_header(self) -> int:
        self.expect("ident", "current_step")
        self.expect("op", "==")
        tok = self.expect("number")
        if not re.fullmatch(r"\d+", tok.text):
            raise self.error("branch condition must compare current_step with an integer", tok)
        self.expect("op", ":")
        return int(tok.text)

    def branch(self, scope: set) -> Branch:
        start = self.advance()  # if
        arms = [(self._arm_header(), self.body(scope))]
        while self.at("kw", "elif"):
            self.advance()
            arms.append((self._arm_header(), self.body(scope)))
        orelse = None
        if self.at("kw", "else"):
            self.advance()
            self.expect("op", ":")
            orelse = self.body(scope)
        return Branch(tuple(arms), orelse, (start.line, start.col))

    def expr(self, scope: set, min_prec: int = 1) -> Expr:
        self.nesting += 1
        if self.nesting > _PARSE_NESTING_LIMIT:
            raise self.error("expression nested too deeply")
        try:
            left = self.unary(scope)
            while True:
                tok = self.peek()
                prec = PRECEDENCE.get(tok.text) if tok.kind == "op" else None
                if prec is None or prec < min_prec:
                    return left
                self.advance()
                right = self.expr(scope, prec + 1)
                if tok.text in COMPARISONS and self.peek().text in COMPARISONS and self.peek().kind == "op":
                    raise self.error("comparisons cannot be chained", self.peek())
                left = Binary(tok.text, left, right, (tok.line, tok.col))
        finally:
            self.nesting -= 1

    def unary(self, scope: set) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text in ("-", "!"):
            self.advance()
            self.nesting += 1
            if self.nesting > _PARSE_NESTING_LIMIT:
                raise self.error("expression nested too deeply")
            try:
                return Unary(tok.text, self.unary(scope), (tok.line, tok.col))
            finally:
                self.nesting -= 1
        return self.primary(scope)

    def primary(self, scope: set) -> Expr:
        tok = self.advance()
        if tok.kind == "number":
            return Num(float(tok.text), (tok.line, tok.col))
        if tok.kind == "ident":
            if self.at("op", "("):
                if tok.text not in BUILTIN_ARITY:
                    raise self.error(f"unknown function {tok.text!r}", tok)
                self.advance()
                args = [self.expr(scope)]
                while self.at("op", ","):
                    self.advance()
                    args.append(self.expr(scope))
                self.expect("op", ")")
                return Call(tok.text, tuple(args), (tok.line, tok.col))
            if tok.text not in scope:
                raise self.error(f"undefined identifier {tok.text!r}", tok)
            return Name(tok.text, (tok.line, tok.col))
        if tok.kind == "op" and tok.text == "(":
            inner = self.expr(scope)
            self.expect("op", ")")
            return inner
        got = repr(tok.text) if tok.kind != "eof" else "end of input"
        raise self.error(f"expected an expression, found {got}", tok)


def parse(source: str) -> RewardProgram:
    body = _Parser(source).program()
    return RewardProgram(body=body, source_text=source)


# --------------------------------------------------------------------------
# Validation


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    span: Span = (0, 0)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        return "; ".join(f"{v.code} at {v.span[0]}:{v.span[1]}: {v.message}" for v in self.violations)


SCALAR, VECTOR = "scalar", "vector"


class _Validator:
    def __init__(self):
        self.violations: list[Violation] = []

    def add(self, code, message, span=(0, 0)):
        self.violations.append(Violation(code, message, tuple(span)))

    def expr(self, e, env: dict, level: int) -> tuple[str, int]:
        """Returns (type, depth) of ``e``."""
        if isinstance(e, Num):
            if not math.isfinite(e.value):
                self.add("literal", f"numeric literal {e.value!r} is not finite", e.span)
            return SCALAR, 1
        if isinstance(e, Name):
            if e.id not in env:
                self.add("identifier", f"identifier {e.id!r} is not defined", e.span)
                return VECTOR, 1
            return env[e.id], 1
        if isinstance(e, Unary):
            if e.op not in ("-", "!"):
                self.add("operator", f"unknown unary operator {e.op!r}", e.span)
            t, d = self.expr(e.operand, env, level)
            return t, d + 1
        if isinstance(e, Binary):
            if e.op not in PRECEDENCE:
                self.add("operator", f"unknown operator {e.op!r}", e.span)
            tl, dl = self.expr(e.left, env, level)
            tr, dr = self.expr(e.right, env, level)
            return (VECTOR if VECTOR in (tl, tr) else SCALAR), max(dl, dr) + 1
        if isinstance(e, Call):
            if e.func not in BUILTIN_ARITY:
                self.add("identifier", f"function {e.func!r} is not a builtin", e.span)
            else:
                lo, hi = BUILTIN_ARITY[e.func]
                if len(e.args) < lo or (hi is not None and len(e.args) > hi):
                    want = str(lo) if lo == hi else f"at least {lo}"
                    self.add("arity", f"{e.func}() takes {want} arguments, got {len(e.args)}", e.span)
            types, depth = [], 0
            for a in e.args:
                t, d = self.expr(a, env, level)
                types.append(t)
                depth = max(depth, d)
            return (VECTOR if VECTOR in types else SCALAR), depth + 1
        self.add("structure", f"unexpected node {type(e).__name__}")
        return VECTOR, 1

    def body(self, b, env: dict, level: int, seen_depth: list):
        if not isinstance(b, Body):
            self.add("structure", "block is not a body")
            return
        env = dict(env)
        for let in b.lets:
            if let.name in PARAMS or let.name in BUILTIN_ARITY or let.name in KEYWORDS:
                self.add("shadowing", f"let may not rebind reserved name {let.name!r}", let.span)
            t, d = self.expr(let.expr, env, level)
            seen_depth.append((d + level, let.span))
            env[let.name] = t
        if b.branch is not None:
            steps = set()
            for step, arm in b.branch.arms:
                if step not in (0, 1):
                    self.add("branch", f"current_step is only ever 0 or 1, not {step}", b.branch.span)
                if step in steps:
                    self.add("branch", f"duplicate branch for current_step == {step}", b.branch.span)
                steps.add(step)
                self.body(arm, env, level + 1, seen_depth)
            if b.branch.orelse is not None:
                self.body(b.branch.orelse, env, level + 1, seen_depth)
        if b.ret is None:
            self.add("return", "block has no return expression", b.span)
            return
        t, d = self.expr(b.ret, env, level)
        seen_depth.append((d + level, b.ret.span if hasattr(b.ret, "span") else b.span))
        if t != VECTOR:
            self.add("non-vector return", "the returned reward must depend on action, target or wgt", b.ret.span)


def validate(p: RewardProgram) -> ValidationReport:
    """Structural checks; never raises, every finding becomes a violation."""
    v = _Validator()
    try:
        if p.name != "get_reward" or tuple(p.params) != PARAMS:
            v.add("signature", f"signature must be get_reward({', '.join(PARAMS)})")
        env = {name: (VECTOR if name in VECTOR_PARAMS else SCALAR) for name in PARAMS}
        depths: list = []
        v.body(p.body, env, 0, depths)
        for d, span in depths:
            if d > MAX_DEPTH:
                v.add("depth bound", f"nesting depth {d} exceeds {MAX_DEPTH}", span)
                break
    except Exception as exc:  # validation is total
        v.add("internal", f"validator failed: {exc!r}")
    return ValidationReport(tuple(v.violations))


# --------------------------------------------------------------------------
# Evaluation


def _is_zero_anywhere(x) -> bool:
    return bool(np.any(np.asarray(x) == 0))


class _Evaluator:
    def __init__(self, env: dict):
        self.env = env

    def expr(self, e):
        if isinstance(e, Num):
            return e.value
        if isinstance(e, Name):
            return self.env[e.id]
        if isinstance(e, Unary):
            x = self.expr(e.operand)
            if e.op == "-":
                return -x
            return np.asarray(x == 0, dtype=np.float64) if np.ndim(x) else float(x == 0)
        if isinstance(e, Binary):
            a = self.expr(e.left)
            b = self.expr(e.right)
            op = e.op
            if op == "+":
                return a + b
            if op == "-":
                return a - b
            if op == "*":
                return a * b
            if op == "/":
                if _is_zero_anywhere(b):
                    raise EvalError(f"division by zero at line {e.span[0]}, column {e.span[1]}")
                return a / b
            if op in COMPARISONS:
                r = {"==": np.equal, "!=": np.not_equal, "<": np.less, "<=": np.less_equal,
                     ">": np.greater, ">=": np.greater_equal}[op](a, b)
                return _as_float(r)
            if op == "&":
                return _as_float(np.logical_and(a != 0, b != 0))
            if op == "|":
                return _as_float(np.logical_or(a != 0, b != 0))
            raise EvalError(f"unknown operator {op!r}")
        if isinstance(e, Call):
            args = [self.expr(a) for a in e.args]
            f = e.func
            if f == "min":
                out = args[0]
                for a in args[1:]:
                    out = np.minimum(out, a)
                return out
            if f == "max":
                out = args[0]
                for a in args[1:]:
                    out = np.maximum(out, a)
                return out
            if f == "abs":
                return np.abs(args[0])
            if f == "clip":
                return np.clip(args[0], args[1], args[2])
            if f == "log":
                if np.any(np.asarray(args[0]) <= 0):
                    raise EvalError(f"log of a non-positive value at line {e.span[0]}, column {e.span[1]}")
                return np.log(args[0])
            if f == "exp":
                with np.errstate(over="ignore"):
                    out = np.exp(args[0])
                if not np.all(np.isfinite(out)):
                    raise EvalError(f"exp overflow at line {e.span[0]}, column {e.span[1]}")
                return out
            raise EvalError(f"unknown function {f!r}")
        raise EvalError(f"cannot evaluate {type(e).__name__}")

    def body(self, b: Body):
        saved = dict(self.env)
        try:
            for let in b.lets:
                self.env[let.name] = self.expr(let.expr)
            if b.branch is not None:
                step = self.env["current_step"]
                for arm_step, arm in b.branch.arms:
                    if step == arm_step:
                        return self.body(arm)
                if b.branch.orelse is not None:
                    return self.body(b.branch.orelse)
            return self.expr(b.ret)
        finally:
            self.env = saved


def _as_float(x):
    return np.asarray(x, dtype=np.float64) if np.ndim(x) else float(x)


def evaluate(p: RewardProgram, current_step, action, target, wgt) -> np.ndarray:
    """Per-transaction reward vector; arithmetic faults raise :class:`EvalError`."""
    action = np.asarray(action, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    wgt = np.asarray(wgt, dtype=np.float64)
    n = len(action)
    env = {"current_step": int(current_step), "action": action, "target": target, "wgt": wgt}
    with np.errstate(all="ignore"):
        out = _Evaluator(env).body(p.body)
    out = np.broadcast_to(np.asarray(out, dtype=np.float64), (n,)).copy()
    if not np.all(np.isfinite(out)):
        raise EvalError("reward contains non-finite values")
    return out


def evaluate_ctx(p: RewardProgram, ctx) -> np.ndarray:
    return evaluate(p, ctx.current_step, ctx.action, ctx.target, ctx.wgt)


# --------------------------------------------------------------------------
# Normal-form printer


def _fmt_num(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def expr_to_source(e, parent_prec: int = 0, right_side: bool = False) -> str:
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Name):
        return e.id
    if isinstance(e, Call):
        return f"{e.func}({', '.join(expr_to_source(a) for a in e.args)})"
    if isinstance(e, Unary):
        s = e.op + expr_to_source(e.operand, UNARY_PRECEDENCE)
        return f"({s})" if parent_prec > UNARY_PRECEDENCE else s
    if isinstance(e, Binary):
        prec = PRECEDENCE[e.op]
        left = expr_to_source(e.left, prec)
        right = expr_to_source(e.right, prec, right_side=True)
        s = f"{left} {e.op} {right}"
        comparison_operand = prec == 3 and parent_prec == 3
        if prec < parent_prec or (prec == parent_prec and right_side) or comparison_operand:
            return f"({s})"
        return s
    raise TypeError(f"not an expression: {e!r}")


def _body_lines(b: Body, indent: int) -> list[str]:
    pad = "    " * indent
    lines = [f"{pad}let {let.name} = {expr_to_source(let.expr)}" for let in b.lets]
    if b.branch is not None:
        for k, (step, arm) in enumerate(b.branch.arms):
            kw = "if" if k == 0 else "elif"
            lines.append(f"{pad}{kw} current_step == {step}:")
            lines.extend(_body_lines(arm, indent + 1))
        if b.branch.orelse is not None:
            lines.append(f"{pad}else:")
            lines.extend(_body_lines(b.branch.orelse, indent + 1))
    lines.append(f"{pad}return {expr_to_source(b.ret)}")
    return lines


def to_source(p: RewardProgram) -> str:
    header = f"def get_reward({', '.join(PARAMS)}):"
    return "\n".join([header, *_body_lines(p.body, 1)]) + "\n"


def compile_reward(source: str) -> RewardProgram:
    """Parse and validate; raises :class:`DslError` on any problem."""
    program = parse(source)
    report = validate(program)
    if not report.ok:
        raise DslError(report.summary())
    return program
