"""Bounded verification of PMRS outputs against a caRTA, and the per call
site definite-error analysis built on it.

`bounded_verify` plays an acceptance game over the lazily expanded output
trees of `start ?`: output choices are universal, transition choices are
existential.  Configurations that come back around with the same
surrounding window are assumed accepted (greatest fixpoint), which lets
regular infinite output families such as every numeral be verified.
Branches that run out of budget are unknown, never accepted or rejected.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .carta import (
    DRAIN, Carta, Transition, accepts, build_carta, build_carta_step1, minimize, restart_carta,
    state_name,
)
from .frontend import CoreProgram, Diagnostic, Span, call_sites
from .interpreter import with_deep_stack
from .pmrs import Budget, Pmrs, Rewriter, Rule, is_productive, restart, to_pmrs
from .terms import (
    BOTTOM, ROOT, WILDCARD, Bottom, Nonterminal, Position, Sym, Term, Wildcard,
    free_vars, render, replace_at, subterm_at, substitute_many, unify,
)

DEFAULT_BUDGET = 10_000


@dataclass(frozen=True)
class TrivialInputHors:
    """The grammar `S -> ?`, whose only tree is the wildcard."""

    start: str = "S"

    @property
    def rules(self) -> tuple[tuple[str, Term], ...]:
        return ((self.start, WILDCARD),)

    def language(self) -> frozenset[Term]:
        return frozenset({WILDCARD})


@dataclass(frozen=True)
class Holds:
    explored: int

    def __str__(self) -> str:
        return f"holds (budget used {self.explored})"


@dataclass(frozen=True)
class Rejected:
    witness: Term
    position: Position
    explored: int = 0

    def __str__(self) -> str:
        return f"rejected at {self.position}: {render(self.witness)}"


@dataclass(frozen=True)
class Unknown:
    explored: int
    reason: str = "budget exhausted"

    def __str__(self) -> str:
        return f"unknown ({self.reason})"


Verdict = Union[Holds, Rejected, Unknown]


# --------------------------------------------------------------------------
# Three-valued acceptance game

class _V(enum.IntEnum):
    FALSE = 0
    UNKNOWN = 1
    TRUE = 2


class _Game:
    """`every=True`: is every output accepted?  `every=False`: is some
    output accepted?  Rejections carry the forced tree they happened on."""

    def __init__(self, g: Pmrs, a: Carta, budget: Budget, every: bool, max_visits: int):
        self.rw = Rewriter(g, budget)
        self.a = a
        self.every = every
        self.height = max((len(tr.path) for tr in a.transitions), default=0)
        self.failed: dict[tuple, tuple[Term, tuple]] = {}
        self.on_stack: set[tuple] = set()
        self.visits = 0
        self.max_visits = max_visits
        self.truncated = False

    # outputs are universal in `every` mode and existential otherwise
    def _outputs(self, results: Iterable[tuple[_V, object]]) -> tuple[_V, object]:
        return _conj(results) if self.every else _disj(results)

    def node(self, q: str, t: Term, steps: tuple) -> tuple[_V, object]:
        self.visits += 1
        if self.visits > self.max_visits:
            self.truncated = True
            return _V.UNKNOWN, None
        here = subterm_at(t, Position(steps))
        if isinstance(here, Nonterminal):
            alts = self.rw.force_head(here)
            return self._outputs(self.node(q, replace_at(t, Position(steps), alt), steps) for alt in alts)
        if q == DRAIN:
            return _V.TRUE, None
        if isinstance(here, Wildcard):
            # an unknown input subtree: optimistic for rejections, but it
            # cannot establish that every output is accepted
            return (_V.UNKNOWN if self.every else _V.TRUE), None
        if isinstance(here, Bottom):
            return _V.UNKNOWN, None
        if not isinstance(here, Sym):
            return _V.FALSE, (t, steps)

        candidates = [tr for tr in self.a.transitions_of(q) if _suffix(tr.path, steps)]
        demands = self._unforced_demands(t, steps, candidates)
        if demands:
            alts = self.rw.force_at(t, demands)
            return self._outputs(self.node(q, alt, steps) for alt in alts)

        lo = max(0, len(steps) - self.height)
        key = (q, subterm_at(t, Position(steps[:lo])), steps[lo:])
        if key in self.failed:
            sub, at = self.failed[key]
            return _V.FALSE, (replace_at(t, Position(steps[:lo]), sub), steps[:lo] + at)
        if key in self.on_stack:
            return _V.TRUE, None
        self.on_stack.add(key)
        try:
            result = self._transitions(q, t, steps, candidates)
        finally:
            self.on_stack.discard(key)
        if result[0] is _V.FALSE:
            wt, wsteps = result[1]
            self.failed[key] = (subterm_at(wt, Position(steps[:lo])), wsteps[lo:])
        return result

    def _transitions(self, q: str, t: Term, steps: tuple, candidates: list[Transition]) -> tuple[_V, object]:
        here = subterm_at(t, Position(steps))
        outcome: tuple[_V, object] = (_V.FALSE, (t, steps))
        for tr in candidates:
            anchor = subterm_at(t, Position(steps[: len(steps) - len(tr.path)]))
            if unify(tr.context, anchor) is None:
                continue
            # an unknown leaf where the context needs a constructor lets the
            # transition apply only possibly
            cap = _V.TRUE if not self.every or _decided(tr.context, anchor) else _V.UNKNOWN
            if tr.is_drain:
                result = (cap, None)
            elif len(tr.successors) != len(here.children):
                continue
            else:
                children = (self.node(s, t, steps + ((here.name, i),))
                            for i, s in enumerate(tr.successors, 1))
                result = _conj(children)
                if result[0] is _V.TRUE:
                    result = (cap, None)
            if result[0] is _V.TRUE:
                return result
            if result[0] is _V.UNKNOWN or outcome[0] is _V.FALSE:
                outcome = result
        return outcome

    def _unforced_demands(self, t: Term, steps: tuple, candidates: list[Transition]) -> set[Position]:
        demanded: set[Position] = set()
        for tr in candidates:
            anchor = steps[: len(steps) - len(tr.path)]
            for rel in _constructor_positions(tr.context):
                demanded.add(Position(anchor + rel))
        pending = set()
        for p in demanded:
            try:
                u = subterm_at(t, p)
            except LookupError:
                continue
            if isinstance(u, Nonterminal):
                pending.add(p)
        if not pending:
            return set()
        closed: set[Position] = set()
        for p in demanded:
            for k in range(len(p.steps) + 1):
                closed.add(Position(p.steps[:k]))
        return closed


def _decided(context: Term, anchor: Term) -> bool:
    """Whether no unknown leaf of `anchor` sits under a constructor of `context`."""
    if isinstance(context, Sym):
        if isinstance(anchor, (Wildcard, Bottom)):
            return False
        return not isinstance(anchor, Sym) or all(_decided(c, a) for c, a in zip(context.children, anchor.children))
    return True


def _suffix(path: Position, steps: tuple) -> bool:
    n = len(path.steps)
    return n <= len(steps) and (n == 0 or steps[-n:] == path.steps)


def _constructor_positions(t: Term, here: tuple = ()) -> Iterable[tuple]:
    if isinstance(t, Sym):
        yield here
        for i, c in enumerate(t.children, 1):
            yield from _constructor_positions(c, here + ((t.name, i),))


def _conj(results: Iterable[tuple[_V, object]]) -> tuple[_V, object]:
    best: tuple[_V, object] = (_V.TRUE, None)
    for r in results:
        if r[0] is _V.FALSE:
            return r
        if r[0] is _V.UNKNOWN:
            best = r
    return best


def _disj(results: Iterable[tuple[_V, object]]) -> tuple[_V, object]:
    best: Optional[tuple[_V, object]] = None
    for r in results:
        if r[0] is _V.TRUE:
            return r
        if r[0] is _V.UNKNOWN or best is None:
            best = r
    return best if best is not None else (_V.FALSE, None)


def _freeze(t: Term) -> Term:
    """Unexpanded calls become bottom leaves."""
    if isinstance(t, Nonterminal):
        return BOTTOM
    if isinstance(t, Sym):
        return Sym(t.name, tuple(_freeze(c) for c in t.children))
    return t


def _complete(t: Term, g: Pmrs, budget: int = 1000) -> Term:
    """Expand unforced calls of a witness that have a single finished value."""
    if isinstance(t, Nonterminal):
        values = Rewriter(g, Budget(budget)).normalize(t)
        if len(values) == 1 and not _partial(values[0]):
            return values[0]
        return t
    if isinstance(t, Sym):
        return Sym(t.name, tuple(_complete(c, g, budget) for c in t.children))
    return t


def _partial(t: Term) -> bool:
    if isinstance(t, (Bottom, Nonterminal)):
        return True
    return isinstance(t, Sym) and any(_partial(c) for c in t.children)


def _play(g: Pmrs, a: Carta, budget: Budget, every: bool, input: Term) -> tuple[_V, object, bool]:
    game = _Game(g, a, budget, every, max_visits=50 * budget.limit + 1000)
    start = Nonterminal(g.start, (input,))
    try:
        value, evidence = with_deep_stack(lambda: game.node(a.initial, start, ()))
    except RecursionError:
        return _V.UNKNOWN, None, True
    return value, evidence, game.truncated


def bounded_verify(g: Pmrs, a: Carta, budget: Union[int, Budget] = DEFAULT_BUDGET,
                   hors: TrivialInputHors = TrivialInputHors()) -> Verdict:
    """Does every output of `g` on the trivial input belong to the language of `a`?"""
    b = budget if isinstance(budget, Budget) else Budget(budget)
    (input,) = hors.language()
    value, evidence, _ = _play(g, a, b, True, input)
    if value is _V.TRUE:
        return Holds(b.used) if is_productive(g) else Unknown(b.used, "scheme is not productive")
    if value is _V.FALSE and evidence is not None:
        tree, steps = evidence
        witness = _freeze(_complete(tree, g))
        if not accepts(a, witness):
            return Rejected(witness, Position(steps), b.used)
        return Unknown(b.used, "rejection not confirmed on a single output")
    return Unknown(b.used)


def every_output_rejected(g: Pmrs, a: Carta, budget: Union[int, Budget] = DEFAULT_BUDGET) -> Optional[bool]:
    """True when no output of `g` on `?` can be accepted, False when some
    is, None when the budget does not decide it."""
    b = budget if isinstance(budget, Budget) else Budget(budget)
    value, _, _ = _play(g, a, b, False, WILDCARD)
    return {_V.FALSE: True, _V.TRUE: False}.get(value)


# --------------------------------------------------------------------------
# Per call site analysis

DEFINITE = "definite-error"
POSSIBLE = "possible-error"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class Finding:
    function: str
    span: Span
    kind: str
    callee: str
    witness: Optional[str]
    budget_used: int
    message: str = ""

    def to_json(self) -> dict:
        return {"function": self.function, "span": {"line": self.span[0], "col": self.span[1]},
                "kind": self.kind, "witness": self.witness, "budget_used": self.budget_used}


@dataclass
class ErrorReport:
    findings: list[Finding] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def definite(self) -> list[Finding]:
        return [f for f in self.findings if f.kind == DEFINITE]

    def sorted_findings(self) -> list[Finding]:
        return sorted(self.findings, key=lambda f: (f.span, f.function, f.callee))


@dataclass(frozen=True)
class AnalysisConfig:
    budget: int = DEFAULT_BUDGET
    # which automaton to check arguments against: "1", "merged" or "min"
    stage: str = "merged"

    def __post_init__(self) -> None:
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")


STAGES = ("1", "merged", "min")


def crash_model(cp: CoreProgram, stage: str = "merged") -> Carta:
    if stage == "1":
        return build_carta_step1(cp)[0]
    merged = build_carta(cp)
    return minimize(merged) if stage == "min" else merged


def _with_wildcards(t: Term) -> Term:
    return substitute_many(t, {v: WILDCARD for v in free_vars(t)})


def _contains_call(t: Term) -> bool:
    if isinstance(t, Nonterminal):
        return True
    return isinstance(t, Sym) and any(_contains_call(c) for c in t.children)


def _inner_calls(t: Term) -> Iterable[Nonterminal]:
    if isinstance(t, Nonterminal):
        yield t
        for c in t.args:
            yield from _inner_calls(c)
    elif isinstance(t, Sym):
        for c in t.children:
            yield from _inner_calls(c)


def analyze_program(cp: CoreProgram, config: AnalysisConfig = AnalysisConfig(),
                    diagnostics: Iterable[Diagnostic] = ()) -> ErrorReport:
    """Check every function application for arguments its callee must crash on."""
    report = ErrorReport()
    for d in diagnostics:
        if d.severity == "definite-crash":
            report.findings.append(Finding(d.function or "?", d.span, DEFINITE, "", None, 0, d.message))

    g = to_pmrs(cp)
    automaton = crash_model(cp, config.stage)
    report.notes.extend(automaton.notes)
    definite_sites: set[int] = set()

    for k, (fn, app, refinements) in enumerate(call_sites(cp)):
        arg = app.args[0]
        for var, pattern in refinements:
            arg = substitute_many(arg, {var: pattern})
        target = restart_carta(automaton, state_name(app.name, ROOT, cp.alphabet))
        span = app.span or (0, 0)

        if not _contains_call(arg):
            concrete = _with_wildcards(arg)
            if not accepts(target, concrete):
                report.findings.append(Finding(fn, span, DEFINITE, app.name, render(concrete), 0,
                                               f"{app.name} crashes on {render(concrete)}"))
                definite_sites.add(id(app))
            continue

        if any(id(inner) in definite_sites for inner in _inner_calls(arg)):
            report.findings.append(Finding(fn, span, UNKNOWN, app.name, None, 0,
                                           "not analyzed: an inner call already fails"))
            continue

        site = f"$Site{k}"
        sg = restart(g.with_rule(Rule(site, ("_",), None, _with_wildcards(arg))), site)
        budget = Budget(config.budget)
        verdict = bounded_verify(sg, target, budget)
        if isinstance(verdict, Rejected):
            every = every_output_rejected(sg, target, Budget(config.budget))
            kind = DEFINITE if every else POSSIBLE
            if kind == DEFINITE:
                definite_sites.add(id(app))
            report.findings.append(Finding(fn, span, kind, app.name, render(verdict.witness), budget.used,
                                           f"{app.name} crashes on {render(verdict.witness)}"))
        elif isinstance(verdict, Unknown):
            report.findings.append(Finding(fn, span, UNKNOWN, app.name, None, budget.used, verdict.reason))
    return report


def emit_report(r: ErrorReport, format: str = "text", filename: str = "<input>") -> str:
    findings = r.sorted_findings()
    if format == "json":
        return json.dumps({"findings": [f.to_json() for f in findings], "version": 1}, indent=2)
    if format != "text":
        raise ValueError(f"unknown report format {format!r}")
    lines = []
    for f in findings:
        line, col = f.span
        detail = f.message or f.kind
        lines.append(f"{filename}:{line}:{col}: {f.kind} in {f.function}: {detail}")
    n = len(r.definite)
    lines.append("no definite errors found" if n == 0 else f"{n} definite error(s) found")
    return "\n".join(lines)
