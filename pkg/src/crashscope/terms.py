"""Simple types, ranked alphabets, terms, positions and unification.

Every other module speaks in these terms: program expressions, PMRS rules,
automaton contexts and the values produced by the interpreter are all
`Term` trees.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Union


# --------------------------------------------------------------------------
# Simple types

@dataclass(frozen=True)
class Base:
    """The tree type."""

    def __str__(self) -> str:
        return "o"


@dataclass(frozen=True)
class Arrow:
    domain: "SimpleType"
    codomain: "SimpleType"

    def __str__(self) -> str:
        dom = f"({self.domain})" if isinstance(self.domain, Arrow) else str(self.domain)
        return f"{dom} -> {self.codomain}"


SimpleType = Union[Base, Arrow]
TREE = Base()


def order(ty: SimpleType) -> int:
    if isinstance(ty, Base):
        return 0
    return max(order(ty.domain) + 1, order(ty.codomain))


def arity(ty: SimpleType) -> int:
    if isinstance(ty, Base):
        return 0
    return arity(ty.codomain) + 1


def first_order(n: int) -> SimpleType:
    """The type o -> ... -> o with `n` arguments."""
    ty: SimpleType = TREE
    for _ in range(n):
        ty = Arrow(TREE, ty)
    return ty


class AlphabetError(ValueError):
    pass


@dataclass(frozen=True)
class RankedAlphabet:
    symbols: Mapping[str, SimpleType] = field(default_factory=dict)

    @classmethod
    def from_arities(cls, arities: Mapping[str, int]) -> "RankedAlphabet":
        return cls({name: first_order(n) for name, n in arities.items()})

    def arity(self, name: str) -> int:
        return arity(self.symbols[name])

    def order(self, name: str) -> int:
        return order(self.symbols[name])

    def __contains__(self, name: object) -> bool:
        return name in self.symbols

    def __iter__(self) -> Iterator[str]:
        return iter(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def arities(self) -> dict[str, int]:
        return {name: self.arity(name) for name in self.symbols}

    def is_terminal(self) -> bool:
        return all(order(ty) <= 1 for ty in self.symbols.values())

    def __hash__(self) -> int:
        return hash(tuple(sorted((k, v) for k, v in self.symbols.items())))


# --------------------------------------------------------------------------
# Terms

@dataclass(frozen=True, repr=False)
class Var:
    name: str

    def __str__(self) -> str:
        return render(self)

    __repr__ = __str__


@dataclass(frozen=True, repr=False, eq=False)
class Sym:
    name: str
    children: tuple["Term", ...] = ()

    # terms are compared and hashed very often during rewriting, so the
    # hash is computed once
    def __hash__(self) -> int:
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash((Sym, self.name, self.children))
            object.__setattr__(self, "_hash", h)
        return h

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if other.__class__ is not Sym:
            return NotImplemented
        return hash(self) == hash(other) and self.name == other.name and self.children == other.children

    def __str__(self) -> str:
        return render(self)

    __repr__ = __str__


@dataclass(frozen=True)
class Wildcard:
    """The `?` leaf: an unknown subtree, accepted by every automaton state."""

    def __str__(self) -> str:
        return "?"


@dataclass(frozen=True)
class Star:
    """The `*` leaf of automaton contexts: any term may occur here."""

    def __str__(self) -> str:
        return "*"


@dataclass(frozen=True)
class Bottom:
    """A position left unexpanded when the rewrite budget ran out."""

    def __str__(self) -> str:
        return "_|_"


@dataclass(frozen=True)
class Stuck:
    """A position where no PMRS rule matched a constructor argument."""

    def __str__(self) -> str:
        return "!stuck"


@dataclass(frozen=True, repr=False, eq=False)
class Nonterminal:
    name: str
    args: tuple["Term", ...] = ()
    # source position of a call site, if the term came from a program
    span: Optional[tuple[int, int]] = field(default=None, compare=False, repr=False)

    def __hash__(self) -> int:
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash((Nonterminal, self.name, self.args))
            object.__setattr__(self, "_hash", h)
        return h

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if other.__class__ is not Nonterminal:
            return NotImplemented
        return hash(self) == hash(other) and self.name == other.name and self.args == other.args

    def __str__(self) -> str:
        return render(self)

    __repr__ = __str__


Term = Union[Var, Sym, Wildcard, Star, Bottom, Stuck, Nonterminal]

WILDCARD = Wildcard()
STAR = Star()
BOTTOM = Bottom()
STUCK = Stuck()


def sym(name: str, *children: Term) -> Sym:
    return Sym(name, tuple(children))


def peano(n: int) -> Term:
    t: Term = Sym("zero")
    for _ in range(n):
        t = Sym("succ", (t,))
    return t


def from_peano(t: Term) -> Optional[int]:
    n = 0
    while isinstance(t, Sym) and t.name == "succ" and len(t.children) == 1:
        t, n = t.children[0], n + 1
    if isinstance(t, Sym) and t.name == "zero" and not t.children:
        return n
    return None


def plist(items: Iterable[Term]) -> Term:
    out: Term = Sym("nil")
    for item in reversed(list(items)):
        out = Sym("cons", (item, out))
    return out


def is_pattern(t: Term) -> bool:
    if isinstance(t, Var):
        return True
    if isinstance(t, Sym):
        return all(is_pattern(c) for c in t.children)
    return False


def is_ground(t: Term) -> bool:
    if isinstance(t, Sym):
        return all(is_ground(c) for c in t.children)
    return False


def depth(t: Term) -> int:
    if isinstance(t, Sym) and t.children:
        return 1 + max(depth(c) for c in t.children)
    if isinstance(t, Nonterminal) and t.args:
        return 1 + max(depth(c) for c in t.args)
    return 1


def size(t: Term) -> int:
    if isinstance(t, Sym):
        return 1 + sum(size(c) for c in t.children)
    if isinstance(t, Nonterminal):
        return 1 + sum(size(c) for c in t.args)
    return 1


def check_arities(t: Term, alphabet: RankedAlphabet) -> list[str]:
    """Return a message for every constructor node with the wrong child count."""
    problems: list[str] = []

    def walk(u: Term) -> None:
        if isinstance(u, Sym):
            if u.name not in alphabet:
                problems.append(f"unknown constructor {u.name!r}")
            elif alphabet.arity(u.name) != len(u.children):
                problems.append(
                    f"constructor {u.name!r} has arity {alphabet.arity(u.name)}, "
                    f"applied to {len(u.children)} argument(s)")
            for c in u.children:
                walk(c)
        elif isinstance(u, Nonterminal):
            for c in u.args:
                walk(c)

    walk(t)
    return problems


# --------------------------------------------------------------------------
# Positions

Step = tuple[str, int]


class PositionError(LookupError):
    pass


@dataclass(frozen=True)
class Position:
    """A path `c.i.d.j...` from the root; the empty path is the root itself."""

    steps: tuple[Step, ...] = ()

    @classmethod
    def of(cls, *steps: Step) -> "Position":
        return cls(tuple(steps))

    @classmethod
    def parse(cls, text: str) -> "Position":
        text = text.strip()
        if text in ("", "ε", "eps"):
            return cls()
        parts = text.split(".")
        if len(parts) % 2:
            raise ValueError(f"malformed position {text!r}")
        return cls(tuple((parts[i], int(parts[i + 1])) for i in range(0, len(parts), 2)))

    def child(self, name: str, index: int) -> "Position":
        return Position(self.steps + ((name, index),))

    def __add__(self, other: "Position") -> "Position":
        return Position(self.steps + other.steps)

    def __len__(self) -> int:
        return len(self.steps)

    def __le__(self, other: "Position") -> bool:  # type: ignore[override]
        # prefix order
        return other.steps[: len(self.steps)] == self.steps

    def is_prefix_of(self, other: "Position") -> bool:
        return other.steps[: len(self.steps)] == self.steps

    def is_suffix_of(self, other: "Position") -> bool:
        return not self.steps or other.steps[-len(self.steps):] == self.steps

    def strip_prefix(self, prefix: "Position") -> "Position":
        if not prefix.is_prefix_of(self):
            raise PositionError(f"{prefix} is not a prefix of {self}")
        return Position(self.steps[len(prefix.steps):])

    def strip_suffix(self, suffix: "Position") -> "Position":
        if not suffix.is_suffix_of(self):
            raise PositionError(f"{suffix} is not a suffix of {self}")
        return Position(self.steps[: len(self.steps) - len(suffix.steps)])

    def erase(self) -> tuple[int, ...]:
        """The integer-string projection (constructor names dropped)."""
        return tuple(i for _, i in self.steps)

    def __str__(self) -> str:
        if not self.steps:
            return "ε"
        return ".".join(f"{c}.{i}" for c, i in self.steps)


ROOT = Position()


def positions(t: Term) -> set[Position]:
    if isinstance(t, Nonterminal):
        raise TypeError("positions are defined for patterns and constructor terms only")
    out = {ROOT}
    if isinstance(t, Sym):
        for i, child in enumerate(t.children, 1):
            out.update(Position(((t.name, i),) + p.steps) for p in positions(child))
    return out


def subterm_at(t: Term, p: Position) -> Term:
    for name, index in p.steps:
        if not isinstance(t, Sym) or t.name != name or not 1 <= index <= len(t.children):
            raise PositionError(f"position {p} is not in the term")
        t = t.children[index - 1]
    return t


def replace_at(t: Term, p: Position, new: Term) -> Term:
    if not p.steps:
        return new
    (name, index), rest = p.steps[0], Position(p.steps[1:])
    if not isinstance(t, Sym) or t.name != name or not 1 <= index <= len(t.children):
        raise PositionError(f"position {p} is not in the term")
    children = list(t.children)
    children[index - 1] = replace_at(children[index - 1], rest, new)
    return Sym(t.name, tuple(children))


def paths_to(t: Term, x: str) -> set[Position]:
    """Positions of the occurrences of variable `x`, through constructors only."""
    out: set[Position] = set()

    def walk(u: Term, here: Position) -> None:
        if isinstance(u, Var):
            if u.name == x:
                out.add(here)
        elif isinstance(u, Sym):
            for i, c in enumerate(u.children, 1):
                walk(c, here.child(u.name, i))

    walk(t, ROOT)
    return out


def substitute(a: Term, x: str, t: Term) -> Term:
    return substitute_many(a, {x: t})


def substitute_many(a: Term, mapping: Mapping[str, Term]) -> Term:
    if not mapping:
        return a
    if isinstance(a, Var):
        return mapping.get(a.name, a)
    if isinstance(a, Sym):
        if not a.children:
            return a
        return Sym(a.name, tuple(substitute_many(c, mapping) for c in a.children))
    if isinstance(a, Nonterminal):
        return Nonterminal(a.name, tuple(substitute_many(c, mapping) for c in a.args), a.span)
    return a


def free_vars(t: Term) -> set[str]:
    out: set[str] = set()

    def walk(u: Term) -> None:
        if isinstance(u, Var):
            out.add(u.name)
        elif isinstance(u, Sym):
            for c in u.children:
                walk(c)
        elif isinstance(u, Nonterminal):
            for c in u.args:
                walk(c)

    walk(t)
    return out


def nonterminals(t: Term) -> Iterator[Nonterminal]:
    """All nonterminal applications in `t`, outermost first."""
    if isinstance(t, Nonterminal):
        yield t
        for c in t.args:
            yield from nonterminals(c)
    elif isinstance(t, Sym):
        for c in t.children:
            yield from nonterminals(c)


# --------------------------------------------------------------------------
# Unification

def _walk(t: Term, subst: dict[str, Term]) -> Term:
    while isinstance(t, Var) and t.name in subst:
        t = subst[t.name]
    return t


def _occurs(name: str, t: Term, subst: dict[str, Term]) -> bool:
    t = _walk(t, subst)
    if isinstance(t, Var):
        return t.name == name
    if isinstance(t, Sym):
        return any(_occurs(name, c, subst) for c in t.children)
    if isinstance(t, Nonterminal):
        return any(_occurs(name, c, subst) for c in t.args)
    return False


_OPEN = (Wildcard, Star, Bottom)


def unify(t1: Term, t2: Term, subst: Optional[dict[str, Term]] = None) -> Optional[dict[str, Term]]:
    """Robinson unification; `?`, `*` and bottom leaves unify with anything.

    Returns the extended substitution or None on failure.
    """
    subst = dict(subst or {})
    stack = [(t1, t2)]
    while stack:
        a, b = stack.pop()
        a, b = _walk(a, subst), _walk(b, subst)
        if a == b or isinstance(a, _OPEN) or isinstance(b, _OPEN):
            continue
        if isinstance(a, Var):
            if _occurs(a.name, b, subst):
                return None
            subst[a.name] = b
        elif isinstance(b, Var):
            if _occurs(b.name, a, subst):
                return None
            subst[b.name] = a
        elif isinstance(a, Sym) and isinstance(b, Sym):
            if a.name != b.name or len(a.children) != len(b.children):
                return None
            stack.extend(zip(a.children, b.children))
        elif isinstance(a, Nonterminal) and isinstance(b, Nonterminal):
            if a.name != b.name or len(a.args) != len(b.args):
                return None
            stack.extend(zip(a.args, b.args))
        else:
            return None
    return subst


def unifiable(t1: Term, t2: Term) -> bool:
    return unify(t1, t2) is not None


def rename_vars(t: Term, suffix: str) -> Term:
    return substitute_many(t, {v: Var(v + suffix) for v in free_vars(t)})


def unifiable_apart(t1: Term, t2: Term) -> bool:
    """Unifiability after renaming the variables of the two terms apart."""
    return unify(rename_vars(t1, "#1"), rename_vars(t2, "#2")) is not None


def canonical_vars(t: Term) -> Term:
    """Rename variables to v0, v1, ... in left-to-right order."""
    names: dict[str, Term] = {}

    def walk(u: Term) -> None:
        if isinstance(u, Var):
            names.setdefault(u.name, Var(f"v{len(names)}"))
        elif isinstance(u, Sym):
            for c in u.children:
                walk(c)
        elif isinstance(u, Nonterminal):
            for c in u.args:
                walk(c)

    walk(t)
    return substitute_many(t, names)


# --------------------------------------------------------------------------
# Canonical text form: name(child, ...) with nullary parentheses omitted

def render(t: Term) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Sym):
        if not t.children:
            return t.name
        return f"{t.name}({', '.join(render(c) for c in t.children)})"
    if isinstance(t, Nonterminal):
        return f"{t.name}({', '.join(render(c) for c in t.args)})"
    return str(t)


def render_applicative(t: Term) -> str:
    """Juxtaposition form `succ (Length xs)` used in rule listings."""
    if isinstance(t, Sym):
        head, args = t.name, t.children
    elif isinstance(t, Nonterminal):
        head, args = t.name, t.args
    else:
        return render(t)
    parts = [head]
    for a in args:
        s = render_applicative(a)
        if (isinstance(a, Sym) and a.children) or (isinstance(a, Nonterminal) and a.args):
            s = f"({s})"
        parts.append(s)
    return " ".join(parts)


_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_'$#]*)|(.))")


def parse_term(text: str, variables: Iterable[str] = ()) -> Term:
    """Parse the canonical text form.

    Lowercase identifiers are constructors unless listed in `variables`;
    uppercase identifiers followed by arguments are nonterminals.
    """
    bound = set(variables)
    tokens = [(m.group(1), m.group(2)) for m in _TOKEN.finditer(text) if m.group(1) or m.group(2)]
    tokens = [t for t in tokens if not (t[1] and t[1].isspace())]
    pos = 0

    def peek() -> tuple[Optional[str], Optional[str]]:
        return tokens[pos] if pos < len(tokens) else (None, None)

    def expect(ch: str) -> None:
        nonlocal pos
        if peek()[1] != ch:
            raise ValueError(f"expected {ch!r} in term {text!r}")
        pos += 1

    def term() -> Term:
        nonlocal pos
        ident, punct = peek()
        if punct == "?":
            pos += 1
            return WILDCARD
        if punct == "*":
            pos += 1
            return STAR
        if ident is None:
            raise ValueError(f"unexpected {punct!r} in term {text!r}")
        pos += 1
        args: list[Term] = []
        if peek()[1] == "(":
            pos += 1
            if peek()[1] != ")":
                args.append(term())
                while peek()[1] == ",":
                    pos += 1
                    args.append(term())
            expect(")")
        if ident[0].isupper():
            return Nonterminal(ident, tuple(args))
        if ident in bound and not args:
            return Var(ident)
        return Sym(ident, tuple(args))

    result = term()
    if pos != len(tokens):
        raise ValueError(f"trailing input in term {text!r}")
    return result


# --------------------------------------------------------------------------
# Enumeration

def ground_terms(arities: Mapping[str, int], max_depth: int) -> list[Term]:
    """All ground terms over the given constructors with depth <= max_depth."""
    by_depth: list[list[Term]] = [[]]
    for d in range(1, max_depth + 1):
        below = [t for level in by_depth for t in level]
        fresh: list[Term] = []
        for name, n in sorted(arities.items()):
            if n == 0:
                if d == 1:
                    fresh.append(Sym(name))
                continue
            for combo in itertools.product(below, repeat=n):
                if max((depth(c) for c in combo), default=0) == d - 1:
                    fresh.append(Sym(name, tuple(combo)))
        by_depth.append(fresh)
    return [t for level in by_depth for t in level]
