"""Tiny text format for user-defined models.

A model file has four sections plus optional derived inputs::

    # two-species switch
    species x1 x2
    subnetwork x1

    params
      a = 4
      n = 2

    derived
      half = a / 2

    equations
      x1 = a / (1 + x2^n) - x1
      x2 = a / (1 + x1^n) - x2

Expressions support + - * / ^ (right-associative), unary minus,
parentheses and the functions exp, log, pow.  Every error carries the
line and column it came from.  Parsed models get finite-difference
Jacobians; there is no symbolic differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .system import SystemSpec, fd_jacobian

__all__ = [
    "DslError",
    "EvalError",
    "ModelConfig",
    "parse_model",
    "parse_expr",
    "eval_expr",
    "pretty_print",
    "config_to_spec",
]

_SECTIONS = ("species", "subnetwork", "params", "derived", "equations")
_FUNCTIONS = ("exp", "log", "pow")


class DslError(ValueError):
    def __init__(self, message, line, col):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# expression AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class Bin:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


@dataclass(frozen=True)
class _Token:
    kind: str   # num | ident | op | lparen | rparen | comma | end
    text: str
    line: int
    col: int


def _tokenize(text, line=1, col0=1):
    tokens = []
    i = 0
    col = col0
    while i < len(text):
        ch = text[i]
        if ch in " \t":
            i += 1
            col += 1
            continue
        if ch == "#":
            break
        if ch.isdigit() or (ch == "." and i + 1 < len(text) and text[i + 1].isdigit()):
            j = i
            seen_e = False
            while j < len(text) and (
                text[j].isdigit()
                or text[j] == "."
                or text[j] in "eE"
                or (text[j] in "+-" and j > i and text[j - 1] in "eE" and not seen_e)
            ):
                if text[j] in "eE":
                    seen_e = True
                j += 1
            word = text[i:j]
            try:
                float(word)
            except ValueError:
                raise DslError(f"bad number {word!r}", line, col)
            tokens.append(_Token("num", word, line, col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < len(text) and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("ident", text[i:j], line, col))
            col += j - i
            i = j
            continue
        if ch in "+-*/^":
            tokens.append(_Token("op", ch, line, col))
        elif ch == "(":
            tokens.append(_Token("lparen", ch, line, col))
        elif ch == ")":
            tokens.append(_Token("rparen", ch, line, col))
        elif ch == ",":
            tokens.append(_Token("comma", ch, line, col))
        else:
            raise DslError(f"unexpected character {ch!r}", line, col)
        i += 1
        col += 1
    tokens.append(_Token("end", "", line, col))
    return tokens


class _Parser:
    """Recursive descent over the token stream; precedence low to high:
    additive, multiplicative, unary minus, ^ (right-associative)."""

    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind, what):
        tok = self.take()
        if tok.kind != kind:
            raise DslError(
                f"expected {what}, found {tok.text or 'end of line'!r}",
                tok.line, tok.col,
            )
        return tok

    def parse(self):
        e = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise DslError(f"unexpected {tok.text!r}", tok.line, tok.col)
        return e

    def expr(self):
        e = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.take().text
            e = Bin(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.take().text
            e = Bin(op, e, self.unary())
        return e

    def unary(self):
        if self.peek().kind == "op" and self.peek().text == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            return Bin("^", base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "ident":
            if self.peek().kind == "lparen":
                if tok.text not in _FUNCTIONS:
                    raise DslError(f"unknown function {tok.text!r}", tok.line, tok.col)
                self.take()
                args = [self.expr()]
                while self.peek().kind == "comma":
                    self.take()
                    args.append(self.expr())
                self.expect("rparen", "')'")
                want = 2 if tok.text == "pow" else 1
                if len(args) != want:
                    raise DslError(
                        f"{tok.text} takes {want} argument(s), got {len(args)}",
                        tok.line, tok.col,
                    )
                return Call(tok.text, tuple(args))
            return Var(tok.text)
        if tok.kind == "lparen":
            e = self.expr()
            self.expect("rparen", "')'")
            return e
        raise DslError(
            f"expected a value, found {tok.text or 'end of line'!r}",
            tok.line, tok.col,
        )


def parse_expr(text, line=1):
    return _Parser(_tokenize(text, line=line)).parse()


def eval_expr(expr, bindings):
    """Evaluate an expression tree; identifiers come from ``bindings``.

    Works elementwise on array bindings.  Division by zero and log of a
    non-positive value raise EvalError rather than producing inf/NaN.
    """
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        try:
            return bindings[expr.name]
        except KeyError:
            raise EvalError(f"unbound identifier {expr.name!r}") from None
    if isinstance(expr, Neg):
        return -eval_expr(expr.arg, bindings)
    if isinstance(expr, Bin):
        a = eval_expr(expr.left, bindings)
        b = eval_expr(expr.right, bindings)
        if expr.op == "+":
            return a + b
        if expr.op == "-":
            return a - b
        if expr.op == "*":
            return a * b
        if expr.op == "/":
            if np.any(np.asarray(b) == 0):
                raise EvalError("division by zero")
            return a / b
        if expr.op == "^":
            with np.errstate(invalid="ignore"):
                out = np.power(a, b)
            if np.any(~np.isfinite(np.atleast_1d(out))):
                raise EvalError("invalid power operation")
            return out
    if isinstance(expr, Call):
        args = [eval_expr(a, bindings) for a in expr.args]
        if expr.func == "exp":
            return np.exp(args[0])
        if expr.func == "log":
            if np.any(np.asarray(args[0]) <= 0):
                raise EvalError("log of a non-positive value")
            return np.log(args[0])
        if expr.func == "pow":
            with np.errstate(invalid="ignore"):
                out = np.power(args[0], args[1])
            if np.any(~np.isfinite(np.atleast_1d(out))):
                raise EvalError("invalid power operation")
            return out
    raise EvalError(f"cannot evaluate {expr!r}")


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def pretty_print(expr, parent_prec=0, side="l"):
    """Minimal-parentheses rendering that parses back to the same AST."""
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Neg):
        inner = pretty_print(expr.arg, _PREC["neg"], "r")
        out = f"-{inner}"
        return f"({out})" if parent_prec > _PREC["neg"] else out
    if isinstance(expr, Call):
        return f"{expr.func}({', '.join(pretty_print(a) for a in expr.args)})"
    if isinstance(expr, Bin):
        p = _PREC[expr.op]
        if expr.op == "^":
            left = pretty_print(expr.left, p + 1, "l")
            right = pretty_print(expr.right, p, "r")
        else:
            left = pretty_print(expr.left, p, "l")
            right = pretty_print(expr.right, p + 1, "r")
        out = f"{left} {expr.op} {right}"
        need = parent_prec > p or (parent_prec == p and side == "r")
        return f"({out})" if need else out
    raise EvalError(f"cannot print {expr!r}")


# ---------------------------------------------------------------------------
# model configuration
# ---------------------------------------------------------------------------

@dataclass
class ModelConfig:
    species: list
    subnetwork: list
    params: dict              # name -> float
    derived: dict             # name -> Expr, insertion-ordered
    equations: dict           # species name -> Expr
    source: str = ""

    def pretty(self):
        lines = [f"species {' '.join(self.species)}",
                 f"subnetwork {' '.join(self.subnetwork)}", ""]
        if self.params:
            lines.append("params")
            for k, v in self.params.items():
                lines.append(f"  {k} = {v!r}")
            lines.append("")
        if self.derived:
            lines.append("derived")
            for k, e in self.derived.items():
                lines.append(f"  {k} = {pretty_print(e)}")
            lines.append("")
        lines.append("equations")
        for k, e in self.equations.items():
            lines.append(f"  {k} = {pretty_print(e)}")
        return "\n".join(lines) + "\n"


def parse_model(text):
    """Parse a model configuration; every failure names its location."""
    species, subnetwork = [], []
    params, derived, equations = {}, {}, {}
    section = None
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.strip()
        head = stripped.split()[0]
        bare = head[:-1] if head.endswith(":") else head
        if bare in _SECTIONS and (head.endswith(":") or "=" not in stripped):
            section = bare
            seen.add(bare)
            rest = stripped[len(head):].strip()
            if rest:
                if section == "species":
                    species.extend(rest.split())
                elif section == "subnetwork":
                    subnetwork.extend(rest.split())
                else:
                    raise DslError(
                        f"section {head!r} takes no inline entries",
                        lineno, line.index(rest) + 1,
                    )
            continue
        if section is None:
            raise DslError(f"content before any section: {stripped!r}", lineno, 1)
        if section in ("species", "subnetwork"):
            target = species if section == "species" else subnetwork
            target.extend(stripped.split())
            continue
        if "=" not in stripped:
            raise DslError("expected 'name = expression'", lineno, 1)
        name, rhs = stripped.split("=", 1)
        name = name.strip()
        if not name.isidentifier():
            raise DslError(f"bad name {name!r}", lineno, line.index(name or "=") + 1)
        col0 = raw.index("=") + 2
        expr = _Parser(_tokenize(rhs, line=lineno, col0=col0)).parse()
        if section == "params":
            try:
                params[name] = float(eval_expr(expr, {}))
            except EvalError:
                raise DslError(
                    f"parameter {name!r} must be a numeric constant", lineno, col0
                )
        elif section == "derived":
            if name in derived:
                raise DslError(f"duplicate derived input {name!r}", lineno, 1)
            derived[name] = expr
        else:
            if name in equations:
                raise DslError(f"duplicate equation for {name!r}", lineno, 1)
            equations[name] = expr

    if not species:
        raise DslError("no species declared", 1, 1)
    if len(set(species)) != len(species):
        raise DslError("duplicate species name", 1, 1)
    for s in subnetwork:
        if s not in species:
            raise DslError(f"subnetwork species {s!r} not in species list", 1, 1)
    missing = [s for s in species if s not in equations]
    if missing:
        raise DslError(f"missing equation for {missing[0]!r}", 1, 1)
    extra = [k for k in equations if k not in species]
    if extra:
        raise DslError(f"equation for undeclared species {extra[0]!r}", 1, 1)

    known = set(species) | set(params)
    for name, expr in derived.items():
        _check_identifiers(expr, known, f"derived input {name!r}")
        known.add(name)
    for name, expr in equations.items():
        _check_identifiers(expr, known, f"equation for {name!r}")

    return ModelConfig(
        species=species,
        subnetwork=subnetwork,
        params=params,
        derived=derived,
        equations=equations,
        source=text,
    )


def _free_vars(expr):
    if isinstance(expr, Var):
        return {expr.name}
    if isinstance(expr, Neg):
        return _free_vars(expr.arg)
    if isinstance(expr, Bin):
        return _free_vars(expr.left) | _free_vars(expr.right)
    if isinstance(expr, Call):
        out = set()
        for a in expr.args:
            out |= _free_vars(a)
        return out
    return set()


def _check_identifiers(expr, known, where):
    unknown = sorted(_free_vars(expr) - known)
    if unknown:
        raise DslError(f"undeclared identifier {unknown[0]!r} in {where}", 1, 1)


def config_to_spec(config, partition=None, params=None):
    """SystemSpec from a parsed config; the Jacobian is finite-difference."""
    species = list(config.species)
    n = len(species)
    prm = dict(config.params)
    if params:
        for k, v in params.items():
            if k not in prm:
                raise KeyError(f"parameter {k!r} not declared in model")
            prm[k] = float(v)
    order = list(config.equations)

    def drift(x):
        x = np.asarray(x, dtype=float)
        bindings = dict(prm)
        for i, s in enumerate(species):
            bindings[s] = x[..., i]
        for name, expr in config.derived.items():
            bindings[name] = eval_expr(expr, bindings)
        cols = [eval_expr(config.equations[s], bindings) for s in species]
        return np.stack(np.broadcast_arrays(*cols), axis=-1)

    if partition is None:
        sub = [species.index(s) for s in config.subnetwork]
        bulk = [i for i in range(n) if i not in sub]
    else:
        sub, bulk = list(partition[0]), list(partition[1])
    if not bulk:
        raise ValueError("bulk must be non-empty for reduction operations")

    return SystemSpec(
        species=tuple(species),
        sub=np.asarray(sub, dtype=int),
        bulk=np.asarray(bulk, dtype=int),
        drift=drift,
        jacobian=lambda x: fd_jacobian(drift, np.asarray(x, dtype=float)),
        params=prm,
        model_id="custom",
        bulk_linear=False,
        box=None,
        default_state=np.ones(n),
    )
