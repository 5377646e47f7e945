"""Concrete syntax, normalization into the flat core form, and validation.

Concrete syntax::

    def Length(l) = case l of {
        nil -> zero
      | cons(x, xs) -> succ(Length(xs))
    }

Uppercase identifiers name functions.  A lowercase identifier is a variable
when a parameter or pattern binder of that name is in scope, and a nullary
constructor otherwise.  Braces around the branches are optional; without them
a nested `case` takes every following branch.  Patterns may be written
`cons(x, xs)` or `cons x xs`.  `#` starts a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .terms import Nonterminal, RankedAlphabet, Sym, Term, Var

Span = tuple[int, int]


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


# --------------------------------------------------------------------------
# Surface syntax

@dataclass(frozen=True)
class SVar:
    name: str
    span: Span = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class SCtor:
    name: str
    args: tuple["SurfaceExpr", ...] = ()
    span: Span = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class SApp:
    func: str
    arg: "SurfaceExpr"
    span: Span = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class SBranch:
    ctor: str
    binders: tuple[str, ...]
    body: "SurfaceExpr"
    span: Span = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class SCase:
    scrutinee: "SurfaceExpr"
    branches: tuple[SBranch, ...]
    span: Span = field(default=(0, 0), compare=False)


SurfaceExpr = Union[SVar, SCtor, SApp, SCase]


@dataclass(frozen=True)
class SurfaceDef:
    name: str
    param: str
    body: SurfaceExpr
    span: Span = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class SurfaceProgram:
    definitions: tuple[SurfaceDef, ...]


# --------------------------------------------------------------------------
# Core syntax: matching on variables only, case-free right-hand sides

@dataclass(frozen=True)
class Branch:
    ctor: str
    binders: tuple[str, ...]
    body: "CoreExpr"


@dataclass(frozen=True)
class Match:
    var: str
    branches: tuple[Branch, ...]
    span: Span = field(default=(0, 0), compare=False)

    def branch(self, ctor: str) -> Optional[Branch]:
        for b in self.branches:
            if b.ctor == ctor:
                return b
        return None


# an r-expression is a Term built from Var, Sym and Nonterminal nodes
CoreExpr = Union[Match, Term]


@dataclass(frozen=True)
class CoreDef:
    name: str
    param: str
    body: CoreExpr
    span: Span = field(default=(0, 0), compare=False)


@dataclass(frozen=True)
class CoreProgram:
    definitions: tuple[CoreDef, ...]
    alphabet: RankedAlphabet

    @property
    def functions(self) -> dict[str, CoreDef]:
        return {d.name: d for d in self.definitions}

    def function(self, name: str) -> CoreDef:
        for d in self.definitions:
            if d.name == name:
                return d
        raise KeyError(name)


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "definite-crash" | "warning"
    function: Optional[str]
    span: Span
    message: str

    def render(self, filename: str = "<input>") -> str:
        line, col = self.span
        return f"{filename}:{line}:{col}: {self.severity}: {self.message}"

    def to_json(self) -> dict:
        return {"severity": self.severity, "function": self.function,
                "span": {"line": self.span[0], "col": self.span[1]},
                "message": self.message}


# --------------------------------------------------------------------------
# Lexer and parser

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+) | (?P<nl>\n) | (?P<comment>\#[^\n]*)
  | (?P<arrow>->)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<punct>[(),={}|])
""", re.VERBOSE)

_KEYWORDS = {"def", "case", "of"}


@dataclass(frozen=True)
class _Tok:
    kind: str  # ident | keyword | punct | eof
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "nl":
            line, line_start = line + 1, m.end()
        elif kind == "ident":
            word = m.group()
            toks.append(_Tok("keyword" if word in _KEYWORDS else "ident", word, line, col))
        elif kind in ("arrow", "punct"):
            toks.append(_Tok("punct", m.group(), line, col))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        self.scope: list[str] = []

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, message: str, tok: Optional[_Tok] = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col)

    def advance(self) -> _Tok:
        tok = self.tok
        self.i += 1
        return tok

    def at(self, text: str) -> bool:
        return self.tok.kind in ("punct", "keyword") and self.tok.text == text

    def expect(self, text: str) -> _Tok:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def ident(self, what: str) -> _Tok:
        if self.tok.kind != "ident":
            raise self.error(f"expected {what}")
        return self.advance()

    def program(self) -> SurfaceProgram:
        defs: list[SurfaceDef] = []
        seen: set[str] = set()
        while self.tok.kind != "eof":
            d = self.definition()
            if d.name in seen:
                raise ParseError(f"duplicate definition of function {d.name}", *d.span)
            seen.add(d.name)
            defs.append(d)
        return SurfaceProgram(tuple(defs))

    def definition(self) -> SurfaceDef:
        start = self.expect("def")
        name = self.ident("function name")
        if not name.text[0].isupper():
            raise self.error("function names start with an uppercase letter", name)
        self.expect("(")
        param = self.ident("parameter name")
        if param.text[0].isupper():
            raise self.error("parameter names start with a lowercase letter", param)
        self.expect(")")
        self.expect("=")
        self.scope = [param.text]
        body = self.expr()
        return SurfaceDef(name.text, param.text, body, (start.line, start.col))

    def expr(self) -> SurfaceExpr:
        if self.at("case"):
            return self.case()
        return self.atom()

    def case(self) -> SCase:
        start = self.expect("case")
        scrutinee = self.expr()
        self.expect("of")
        braced = self.at("{")
        if braced:
            self.advance()
        branches: list[SBranch] = []
        if not (braced and self.at("}")):
            branches.append(self.branch())
            while self.at("|"):
                self.advance()
                branches.append(self.branch())
        if braced:
            self.expect("}")
        return SCase(scrutinee, tuple(branches), (start.line, start.col))

    def branch(self) -> SBranch:
        ctor = self.ident("constructor pattern")
        if ctor.text[0].isupper():
            raise self.error("patterns match constructors, not functions", ctor)
        binders: list[str] = []
        if self.at("("):
            self.advance()
            if not self.at(")"):
                binders.append(self.binder())
                while self.at(","):
                    self.advance()
                    binders.append(self.binder())
            self.expect(")")
        else:
            while self.tok.kind == "ident":
                binders.append(self.binder())
        if len(set(binders)) != len(binders):
            raise self.error("a pattern binds the same variable twice", ctor)
        self.expect("->")
        saved = list(self.scope)
        self.scope.extend(binders)
        body = self.expr()
        self.scope = saved
        return SBranch(ctor.text, tuple(binders), body, (ctor.line, ctor.col))

    def binder(self) -> str:
        tok = self.ident("pattern variable")
        if tok.text[0].isupper():
            raise self.error("pattern variables start with a lowercase letter", tok)
        return tok.text

    def atom(self) -> SurfaceExpr:
        if self.at("("):
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        tok = self.ident("expression")
        span = (tok.line, tok.col)
        if tok.text[0].isupper():
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return SApp(tok.text, arg, span)
        if self.at("("):
            if tok.text in self.scope:
                raise self.error(f"variable {tok.text} cannot be applied", tok)
            self.advance()
            args: list[SurfaceExpr] = []
            if not self.at(")"):
                args.append(self.expr())
                while self.at(","):
                    self.advance()
                    args.append(self.expr())
            self.expect(")")
            return SCtor(tok.text, tuple(args), span)
        if tok.text in self.scope:
            return SVar(tok.text, span)
        return SCtor(tok.text, (), span)


def parse(text: str) -> SurfaceProgram:
    return _Parser(text).program()


# --------------------------------------------------------------------------
# Preprocessing

class _Normalizer:
    def __init__(self, sp: SurfaceProgram):
        self.sp = sp
        self.used_vars: set[str] = set()
        self.used_funcs = {d.name for d in sp.definitions}
        self.arities: dict[str, int] = {}
        self.diagnostics: list[Diagnostic] = []
        self.aux_defs: list[CoreDef] = []
        self.counter = 0
        self.current = ""

    def fresh_var(self, base: str) -> str:
        name, n = base, 0
        while name in self.used_vars:
            n += 1
            name = f"{base}${n}"
        self.used_vars.add(name)
        return name

    def fresh_func(self) -> str:
        while True:
            self.counter += 1
            name = f"$Aux{self.counter}"
            if name not in self.used_funcs:
                self.used_funcs.add(name)
                return name

    def note_arity(self, ctor: str, n: int, span: Span) -> None:
        known = self.arities.setdefault(ctor, n)
        if known != n:
            self.diagnostics.append(Diagnostic(
                "error", self.current, span,
                f"constructor {ctor} used with {n} argument(s), but earlier with {known}"))

    def run(self) -> CoreProgram:
        defs: list[CoreDef] = []
        for d in self.sp.definitions:
            self.current = d.name
            param = self.fresh_var(d.param)
            body = self.expr(d.body, {d.param: param}, {})
            defs.append(CoreDef(d.name, param, body, d.span))
        defs.extend(self.aux_defs)
        return CoreProgram(tuple(defs), RankedAlphabet.from_arities(self.arities))

    # `env` maps surface names to core names; `refined` records the
    # constructor each already-matched core variable is known to carry.
    def expr(self, e: SurfaceExpr, env: dict[str, str], refined: dict[str, tuple[str, tuple[str, ...]]]) -> CoreExpr:
        if isinstance(e, SCase):
            if isinstance(e.scrutinee, SVar) and e.scrutinee.name in env:
                return self.match(env[e.scrutinee.name], e, env, refined)
            return self.hoist(e, env)
        return self.rexpr(e, env)

    def match(self, var: str, e: SCase, env: dict[str, str], refined: dict) -> CoreExpr:
        seen: set[str] = set()
        for b in e.branches:
            self.note_arity(b.ctor, len(b.binders), b.span)
            if b.ctor in seen:
                self.diagnostics.append(Diagnostic(
                    "error", self.current, b.span, f"more than one branch for constructor {b.ctor}"))
            seen.add(b.ctor)
        if var in refined:
            # the variable was matched before: only one branch can be taken
            ctor, known = refined[var]
            for b in e.branches:
                if b.ctor == ctor and len(b.binders) == len(known):
                    inner = dict(env)
                    inner.update(zip(b.binders, known))
                    return self.expr(b.body, inner, refined)
            self.diagnostics.append(Diagnostic(
                "definite-crash", self.current, e.span,
                f"case on {var} has no branch for {ctor}, which it is known to be"))
            return Match(var, (), e.span)
        if not e.branches:
            self.diagnostics.append(Diagnostic(
                "definite-crash", self.current, e.span, f"case on {var} has no branches"))
        branches: list[Branch] = []
        for b in e.branches:
            binders = tuple(self.fresh_var(x) for x in b.binders)
            inner = dict(env)
            inner.update(zip(b.binders, binders))
            inner_refined = dict(refined)
            inner_refined[var] = (b.ctor, binders)
            branches.append(Branch(b.ctor, binders, self.expr(b.body, inner, inner_refined)))
        return Match(var, tuple(branches), e.span)

    def hoist(self, e: SCase, env: dict[str, str]) -> Term:
        """Move `case e of P` into a fresh unary function and call it."""
        scrutinee = self.rexpr(e.scrutinee, env)
        captured = sorted(_surface_free(e.branches) & set(env))
        name = self.fresh_func()
        saved = self.current
        self.current = name
        param = self.fresh_var("$s")
        inner_env = {}
        if captured:
            wrapper = f"$env{len(captured)}"
            self.note_arity(wrapper, len(captured) + 1, e.span)
            target = self.fresh_var("$t")
            copies = tuple(self.fresh_var(x) for x in captured)
            inner_env = dict(zip(captured, copies))
            scrut_var = target
        else:
            scrut_var = param
        body = self.match(scrut_var, SCase(SVar(scrut_var), e.branches, e.span), inner_env, {})
        if captured:
            body = Match(param, (Branch(wrapper, (target,) + copies, body),), e.span)
            arg: Term = Sym(wrapper, (scrutinee,) + tuple(Var(env[x]) for x in captured))
        else:
            arg = scrutinee
        self.aux_defs.append(CoreDef(name, param, body, e.span))
        self.current = saved
        return Nonterminal(name, (arg,), e.span)

    def rexpr(self, e: SurfaceExpr, env: dict[str, str]) -> Term:
        if isinstance(e, SVar):
            if e.name not in env:
                self.diagnostics.append(Diagnostic(
                    "error", self.current, e.span, f"unbound variable {e.name}"))
                return Var(e.name)
            return Var(env[e.name])
        if isinstance(e, SCtor):
            self.note_arity(e.name, len(e.args), e.span)
            return Sym(e.name, tuple(self.rexpr(a, env) for a in e.args))
        if isinstance(e, SApp):
            if e.func not in self.used_funcs:
                self.diagnostics.append(Diagnostic(
                    "error", self.current, e.span, f"call to undefined function {e.func}"))
            return Nonterminal(e.func, (self.rexpr(e.arg, env),), e.span)
        return self.hoist(e, env)


def _surface_free(node) -> set[str]:
    if isinstance(node, tuple):
        out: set[str] = set()
        for b in node:
            out |= _surface_free(b.body) - set(b.binders)
        return out
    if isinstance(node, SVar):
        return {node.name}
    if isinstance(node, SCtor):
        return set().union(*(_surface_free(a) for a in node.args)) if node.args else set()
    if isinstance(node, SApp):
        return _surface_free(node.arg)
    if isinstance(node, SCase):
        return _surface_free(node.scrutinee) | _surface_free(node.branches)
    raise TypeError(node)


def preprocess(sp: SurfaceProgram) -> tuple[CoreProgram, list[Diagnostic]]:
    """Normalize a surface program into the flat core form.

    Non-variable scrutinees and cases in argument positions are moved into
    fresh `$Aux` functions; variables they need are passed through a fresh
    `$envK` wrapper constructor.  Binders are renamed to be unique program
    wide.  The returned diagnostics include those of `validate`.
    """
    norm = _Normalizer(sp)
    cp = norm.run()
    diagnostics = list(norm.diagnostics)
    # validate sees only core spans, so a problem already reported at its
    # precise surface location is recognised by function and message
    seen = {(d.severity, d.function, d.message) for d in diagnostics}
    for d in validate(cp):
        if (d.severity, d.function, d.message) not in seen:
            diagnostics.append(d)
    return cp, diagnostics


def embed(cp: CoreProgram) -> SurfaceProgram:
    """View a core program as a surface program."""

    def conv(e: CoreExpr) -> SurfaceExpr:
        if isinstance(e, Match):
            return SCase(SVar(e.var), tuple(SBranch(b.ctor, b.binders, conv(b.body)) for b in e.branches), e.span)
        if isinstance(e, Var):
            return SVar(e.name)
        if isinstance(e, Sym):
            return SCtor(e.name, tuple(conv(c) for c in e.children))
        if isinstance(e, Nonterminal):
            return SApp(e.name, conv(e.args[0]), e.span or (0, 0))
        raise TypeError(e)

    return SurfaceProgram(tuple(SurfaceDef(d.name, d.param, conv(d.body), d.span) for d in cp.definitions))


# --------------------------------------------------------------------------
# Validation

def validate(cp: CoreProgram) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    names = [d.name for d in cp.definitions]
    if "Main" not in names:
        out.append(Diagnostic("error", None, (0, 0), "program has no function named Main"))
    for name in sorted({n for n in names if names.count(n) > 1}):
        out.append(Diagnostic("error", name, (0, 0), f"function {name} is defined more than once"))
    funcs = set(names)
    bound: set[str] = set()

    def bind(var: str, fn: str, span: Span) -> None:
        if var in bound:
            out.append(Diagnostic("error", fn, span, f"variable {var} is bound more than once"))
        bound.add(var)

    def rexpr(t: Term, scope: frozenset, fn: str, span: Span) -> None:
        if isinstance(t, Var):
            if t.name not in scope:
                out.append(Diagnostic("error", fn, span, f"unbound variable {t.name}"))
        elif isinstance(t, Sym):
            if t.name not in cp.alphabet:
                out.append(Diagnostic("error", fn, span, f"unknown constructor {t.name}"))
            elif cp.alphabet.arity(t.name) != len(t.children):
                out.append(Diagnostic("error", fn, span, f"constructor {t.name} applied to "
                                      f"{len(t.children)} argument(s), arity is {cp.alphabet.arity(t.name)}"))
            for c in t.children:
                rexpr(c, scope, fn, span)
        elif isinstance(t, Nonterminal):
            where = t.span or span
            if t.name not in funcs:
                out.append(Diagnostic("error", fn, where, f"call to undefined function {t.name}"))
            if len(t.args) != 1:
                out.append(Diagnostic("error", fn, where, f"function {t.name} is unary"))
            for c in t.args:
                rexpr(c, scope, fn, where)
        else:
            out.append(Diagnostic("error", fn, span, f"{t} is not allowed in a program"))

    def expr(e: CoreExpr, scope: frozenset, fn: str, span: Span) -> None:
        if isinstance(e, Match):
            span = e.span or span
            if e.var not in scope:
                out.append(Diagnostic("error", fn, span, f"case on unbound variable {e.var}"))
            seen: set[str] = set()
            for b in e.branches:
                if b.ctor in seen:
                    out.append(Diagnostic("error", fn, span, f"more than one branch for constructor {b.ctor}"))
                seen.add(b.ctor)
                if b.ctor not in cp.alphabet:
                    out.append(Diagnostic("error", fn, span, f"unknown constructor {b.ctor}"))
                elif cp.alphabet.arity(b.ctor) != len(b.binders):
                    out.append(Diagnostic("error", fn, span, f"pattern {b.ctor} binds {len(b.binders)} "
                                          f"variable(s), arity is {cp.alphabet.arity(b.ctor)}"))
                for x in b.binders:
                    bind(x, fn, span)
                expr(b.body, scope | set(b.binders), fn, span)
        else:
            rexpr(e, scope, fn, span)

    for d in cp.definitions:
        bind(d.param, d.name, d.span)
        expr(d.body, frozenset({d.param}), d.name, d.span)
    return out


def errors(diagnostics: list[Diagnostic]) -> list[Diagnostic]:
    return [d for d in diagnostics if d.severity == "error"]


def load(text: str) -> tuple[CoreProgram, list[Diagnostic]]:
    """Parse and preprocess in one go."""
    return preprocess(parse(text))


def call_sites(cp: CoreProgram) -> Iterator[tuple[str, Nonterminal, tuple[tuple[str, Term], ...]]]:
    """Every application in the program with its enclosing function and the
    chain of (variable, pattern) refinements of the branch it sits in."""

    def walk(e: CoreExpr, fn: str, path: tuple) -> Iterator:
        if isinstance(e, Match):
            for b in e.branches:
                refinement = (e.var, Sym(b.ctor, tuple(Var(x) for x in b.binders)))
                yield from walk(b.body, fn, path + (refinement,))
        else:
            for app in _apps_innermost_first(e):
                yield fn, app, path

    for d in cp.definitions:
        yield from walk(d.body, d.name, ())


def _apps_innermost_first(t: Term) -> Iterator[Nonterminal]:
    if isinstance(t, Sym):
        for c in t.children:
            yield from _apps_innermost_first(c)
    elif isinstance(t, Nonterminal):
        for c in t.args:
            yield from _apps_innermost_first(c)
        yield t
