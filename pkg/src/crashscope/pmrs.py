"""Pattern-matching recursion schemes: construction from core programs,
well-formedness, budgeted outermost evaluation and productivity."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Iterable, Optional

from .frontend import CoreExpr, CoreProgram, Match
from .terms import (
    BOTTOM, ROOT, STUCK, Bottom, Nonterminal, Position, RankedAlphabet, Stuck, Sym, Term,
    Var, Wildcard, WILDCARD, arity, first_order, free_vars, is_pattern, order, paths_to,
    render_applicative, substitute_many, unifiable_apart,
)


class PmrsError(ValueError):
    pass


@dataclass(frozen=True)
class Rule:
    """`head params... pattern -> rhs`; `pattern` is None for a plain rule."""

    head: str
    params: tuple[str, ...]
    pattern: Optional[Term]
    rhs: Term

    @property
    def arity(self) -> int:
        return len(self.params) + (self.pattern is not None)

    def __str__(self) -> str:
        parts = [self.head, *self.params]
        if self.pattern is not None:
            p = render_applicative(self.pattern)
            if isinstance(self.pattern, Sym) and self.pattern.children:
                p = f"({p})"
            parts.append(p)
        return f"{' '.join(parts)} -> {render_applicative(self.rhs)}"


@dataclass(frozen=True)
class Pmrs:
    terminals: RankedAlphabet
    nonterminals: RankedAlphabet
    rules: tuple[Rule, ...]
    start: str

    def rules_for(self, head: str) -> tuple[Rule, ...]:
        return tuple(r for r in self.rules if r.head == head)

    def dump(self) -> str:
        return "\n".join(str(r) for r in self.rules)

    def with_rule(self, rule: Rule) -> "Pmrs":
        nts = dict(self.nonterminals.symbols)
        nts.setdefault(rule.head, first_order(rule.arity))
        return replace(self, nonterminals=RankedAlphabet(nts), rules=self.rules + (rule,))


# --------------------------------------------------------------------------
# Program -> PMRS

def to_pmrs(cp: CoreProgram) -> Pmrs:
    rules: list[Rule] = []

    def translate(fn: str, context: Term, refinements: list[tuple[str, Term]], e: CoreExpr) -> None:
        if isinstance(e, Match):
            for b in e.branches:
                refined = Sym(b.ctor, tuple(Var(x) for x in b.binders))
                translate(fn, substitute_many(context, {e.var: refined}),
                          refinements + [(e.var, refined)], b.body)
            return
        # a matched variable may still be used in the body; it stands for its pattern
        rhs = e
        for var, pattern in refinements:
            rhs = substitute_many(rhs, {var: pattern})
        if isinstance(context, Var):
            rules.append(Rule(fn, (context.name,), None, rhs))
        else:
            rules.append(Rule(fn, (), context, rhs))

    for d in cp.definitions:
        translate(d.name, Var(d.param), [], d.body)
    nonterminals = RankedAlphabet({d.name: first_order(1) for d in cp.definitions})
    return Pmrs(cp.alphabet, nonterminals, tuple(rules), "Main")


def restart(g: Pmrs, f: str) -> Pmrs:
    """The same scheme with `f` as start symbol."""
    if f not in g.nonterminals:
        raise PmrsError(f"{f} is not a nonterminal")
    if g.nonterminals.symbols[f] != first_order(1):
        raise PmrsError(f"{f} does not have type o -> o")
    return replace(g, start=f)


# --------------------------------------------------------------------------
# Well-formedness

def pmrs_well_formed(g: Pmrs) -> list[str]:
    problems: list[str] = []
    if not g.terminals.is_terminal():
        problems.append("terminal alphabet contains symbols of order > 1")
    if g.start not in g.nonterminals:
        problems.append(f"start symbol {g.start} is not a nonterminal")
    elif g.nonterminals.symbols[g.start] != first_order(1):
        problems.append(f"start symbol {g.start} does not have type o -> o")

    def check_term(t: Term, allowed: set[str], where: str) -> None:
        if isinstance(t, Var):
            if t.name not in allowed:
                problems.append(f"{where}: variable {t.name} is not bound by the left-hand side")
        elif isinstance(t, Sym):
            if t.name not in g.terminals:
                problems.append(f"{where}: unknown terminal {t.name}")
            elif g.terminals.arity(t.name) != len(t.children):
                problems.append(f"{where}: terminal {t.name} has arity {g.terminals.arity(t.name)} "
                                f"but is applied to {len(t.children)} argument(s)")
            for c in t.children:
                check_term(c, allowed, where)
        elif isinstance(t, Nonterminal):
            if t.name not in g.nonterminals:
                problems.append(f"{where}: unknown nonterminal {t.name}")
            elif g.nonterminals.arity(t.name) != len(t.args):
                problems.append(f"{where}: nonterminal {t.name} has arity {g.nonterminals.arity(t.name)} "
                                f"but is applied to {len(t.args)} argument(s)")
            for c in t.args:
                check_term(c, allowed, where)
        elif not isinstance(t, Wildcard):
            problems.append(f"{where}: {t} may not occur in a rule")

    for r in g.rules:
        where = str(r)
        if r.head not in g.nonterminals:
            problems.append(f"{where}: head {r.head} is not a nonterminal")
            continue
        ty = g.nonterminals.symbols[r.head]
        if order(ty) > 1 or arity(ty) != r.arity:
            problems.append(f"{where}: left-hand side does not fit the type {ty} of {r.head}")
        bound = set(r.params)
        if len(bound) != len(r.params):
            problems.append(f"{where}: repeated parameter")
        if r.pattern is not None:
            if not is_pattern(r.pattern):
                problems.append(f"{where}: pattern may contain only terminals and variables")
            else:
                pattern_vars = free_vars(r.pattern)
                if any(len(paths_to(r.pattern, v)) > 1 for v in pattern_vars) or pattern_vars & bound:
                    problems.append(f"{where}: pattern is not linear")
                bound |= pattern_vars
                check_term(r.pattern, bound, where)
        check_term(r.rhs, bound, where)

    for head in g.nonterminals:
        rules = g.rules_for(head)
        for r1, r2 in itertools.combinations(rules, 2):
            if r1.pattern is None or r2.pattern is None:
                problems.append(f"nondeterministic rules for {head}: {r1} / {r2}")
            elif unifiable_apart(r1.pattern, r2.pattern):
                problems.append(f"nondeterministic rules for {head}: {r1} / {r2} (patterns unify)")
    return problems


# --------------------------------------------------------------------------
# Evaluation

@dataclass
class Budget:
    """Head-rewrite steps, shared by everything that uses this object."""

    limit: int
    used: int = 0

    def spend(self) -> bool:
        if self.used >= self.limit:
            return False
        self.used += 1
        return True

    @property
    def exhausted(self) -> bool:
        return self.used >= self.limit


class Rewriter:
    """Outermost rewriting of configuration terms.

    A configuration is a term over terminals, nonterminal applications, `?`,
    bottom and stuck leaves.  `?` matches every pattern and binds the pattern
    variables to `?`, so forcing can yield several alternatives.
    """

    def __init__(self, g: Pmrs, budget: Budget):
        self.g = g
        self.budget = budget
        self._demands: dict[str, frozenset[Position]] = {}

    def demands(self, head: str) -> frozenset[Position]:
        if head not in self._demands:
            out: set[Position] = set()
            for r in self.g.rules_for(head):
                if r.pattern is not None:
                    out |= {p for p in _constructor_positions(r.pattern)}
            self._demands[head] = frozenset(out)
        return self._demands[head]

    def force_head(self, t: Term) -> list[Term]:
        """Rewrite at the root until the head is not a nonterminal."""
        results: dict[Term, None] = {}
        work = [t]
        while work:
            u = work.pop()
            if not isinstance(u, Nonterminal):
                results[u] = None
                continue
            if not self.budget.spend():
                results[BOTTOM] = None
                continue
            work.extend(reversed(self.step(u)))
        return list(results)

    def force_at(self, t: Term, demands: Iterable[Position], here: Position = ROOT) -> list[Term]:
        """Force the heads of `t` at every demanded position reachable in it."""
        demands = frozenset(demands)
        if here not in demands:
            return [t]
        out: list[Term] = []
        for h in (self.force_head(t) if isinstance(t, Nonterminal) else [t]):
            if isinstance(h, Sym) and h.children:
                options = [self.force_at(c, demands, here.child(h.name, i))
                           for i, c in enumerate(h.children, 1)]
                for k, combo in enumerate(itertools.product(*options)):
                    # every further alternative costs budget; once it is
                    # gone the remaining ones collapse into an unknown
                    if k and not self.budget.spend():
                        out.append(Sym(h.name, tuple(o[0] if len(o) == 1 else BOTTOM for o in options)))
                        break
                    out.append(Sym(h.name, tuple(combo)))
            else:
                out.append(h)
        return out

    def step(self, t: Nonterminal) -> list[Term]:
        """One head rewrite of `t`; every alternative when `?` is involved."""
        rules = self.g.rules_for(t.name)
        if not rules:
            return [STUCK]
        demanded = self.demands(t.name)
        args = list(t.args)
        if not args:
            return [substitute_many(r.rhs, {}) for r in rules if r.pattern is None] or [STUCK]
        last_options = self.force_at(args[-1], demanded) if demanded else [args[-1]]
        out: list[Term] = []
        for last in last_options:
            matched: list[Term] = []
            blocked = False
            for r in rules:
                if r.pattern is None:
                    binding = dict(zip(r.params, args[:-1] + [last]))
                    matched.append(substitute_many(r.rhs, binding))
                    continue
                status, binding = _match(r.pattern, last)
                if status == "ok":
                    binding.update(zip(r.params, args[:-1]))
                    matched.append(substitute_many(r.rhs, binding))
                elif status == "bottom":
                    blocked = True
            out.extend(matched)
            if blocked:
                # the unexpanded part might still select another rule
                out.append(BOTTOM)
            elif not matched:
                out.append(STUCK)
        return _dedup(out)

    def normalize(self, t: Term) -> list[Term]:
        """All partial value trees of `t` within the budget."""
        out: list[Term] = []
        for h in (self.force_head(t) if isinstance(t, Nonterminal) else [t]):
            if isinstance(h, Sym) and h.children:
                options = [self.normalize(c) for c in h.children]
                for k, combo in enumerate(itertools.product(*options)):
                    if k and not self.budget.spend():
                        out.append(Sym(h.name, tuple(o[0] if len(o) == 1 else BOTTOM for o in options)))
                        break
                    out.append(Sym(h.name, tuple(combo)))
            else:
                out.append(h)
        return _dedup(out)


def _dedup(items: list[Term]) -> list[Term]:
    seen: set[Term] = set()
    out = []
    for t in items:
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out


def _constructor_positions(p: Term, here: Position = ROOT) -> Iterable[Position]:
    if isinstance(p, Sym):
        yield here
        for i, c in enumerate(p.children, 1):
            yield from _constructor_positions(c, here.child(p.name, i))


def _match(pattern: Term, t: Term) -> tuple[str, dict[str, Term]]:
    """Match a pattern against a forced configuration.

    Status is "ok", "fail", "stuck" (a stuck leaf is in the way) or "bottom"
    (an unexpanded leaf is in the way).
    """
    binding: dict[str, Term] = {}
    status = "ok"
    stack = [(pattern, t)]
    while stack:
        p, u = stack.pop()
        if isinstance(p, Var):
            binding[p.name] = u
        elif isinstance(u, Wildcard):
            binding.update((v, WILDCARD) for v in free_vars(p))
        elif isinstance(u, Sym):
            assert isinstance(p, Sym)
            if p.name != u.name or len(p.children) != len(u.children):
                return "fail", {}
            stack.extend(zip(p.children, u.children))
        elif isinstance(u, Stuck):
            status = "stuck" if status == "ok" else status
        elif isinstance(u, Bottom):
            status = "bottom"
        else:
            raise PmrsError(f"cannot match {p} against unforced {u}")
    return status, binding if status == "ok" else {}


def evaluate(g: Pmrs, input: Term, budget: int | Budget = 10_000) -> set[Term]:
    """Partial value trees of `start input`.

    Positions not produced within the budget are bottom leaves; positions
    where no rule matched are stuck leaves.  Ground input yields one tree.
    """
    b = budget if isinstance(budget, Budget) else Budget(budget)
    return set(Rewriter(g, b).normalize(Nonterminal(g.start, (input,))))


def contains_leaf(t: Term, kind: type) -> bool:
    if isinstance(t, kind):
        return True
    if isinstance(t, Sym):
        return any(contains_leaf(c, kind) for c in t.children)
    return False


# --------------------------------------------------------------------------
# Productivity

def root_call_graph(g: Pmrs) -> dict[str, set[str]]:
    """Which nonterminal can appear at the root right after rewriting another.

    A rule whose right-hand side is a bare variable hands the root to
    whatever that variable is bound to, which may be any unevaluated call
    sitting below the root of some right-hand side.
    """
    edges: dict[str, set[str]] = {n: set() for n in g.nonterminals}
    nested: set[str] = set()

    def collect(t: Term) -> None:
        if isinstance(t, Nonterminal):
            nested.add(t.name)
        for c in t.args if isinstance(t, Nonterminal) else t.children if isinstance(t, Sym) else ():
            collect(c)

    for r in g.rules:
        rhs = r.rhs
        if isinstance(rhs, Nonterminal):
            edges.setdefault(r.head, set()).add(rhs.name)
            for c in rhs.args:
                collect(c)
        elif isinstance(rhs, Sym):
            for c in rhs.children:
                collect(c)
    for r in g.rules:
        if isinstance(r.rhs, Var):
            edges.setdefault(r.head, set()).update(nested)
    return edges


def is_productive(g: Pmrs) -> bool:
    """True when no nonterminal can reach itself through root calls, i.e.
    every cycle of rewrites emits a terminal at the root."""
    edges = root_call_graph(g)
    state: dict[str, int] = {}

    def cyclic(n: str) -> bool:
        state[n] = 1
        for m in edges.get(n, ()):
            if state.get(m) == 1 or (m not in state and cyclic(m)):
                return True
        state[n] = 2
        return False

    return not any(n not in state and cyclic(n) for n in edges)
