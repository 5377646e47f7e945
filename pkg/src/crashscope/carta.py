"""Context-aware ranked tree automata (caRTA).

A transition `delta(q, context, path) = q1 ... qn` applies at a node when the
node sits at the end of `path` below some ancestor, and the tree at that
ancestor unifies with `context`.  `*` in a context matches anything.  The
input leaf `?` is accepted in every state.

`build_carta_step1`, `call_equivalence` and `merge_carta` turn a core program
into an automaton that rejects only inputs on which a function crashes.
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Optional

from .frontend import CoreExpr, CoreProgram, Match
from .terms import (
    ROOT, STAR, Bottom, Nonterminal, Position, PositionError, RankedAlphabet,
    Sym, Term, Var, Wildcard, canonical_vars, free_vars, paths_to, render, rename_vars,
    replace_at, subterm_at, substitute_many, unify, unifiable_apart,
)

DRAIN = "q*"
CONTEXT_DEPTH_CAP = 8


class CartaError(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    state: str
    context: Term
    path: Position
    # None marks a drain transition: every child goes to the drain state
    successors: Optional[tuple[str, ...]]

    @property
    def is_drain(self) -> bool:
        return self.successors is None

    @property
    def target(self) -> Term:
        return subterm_at(self.context, self.path)

    def __str__(self) -> str:
        if self.is_drain:
            rhs = f"{DRAIN}..."
        elif not self.successors:
            rhs = "ε"
        else:
            rhs = " ".join(self.successors)
        return f"delta({self.state}, {render_marked(self.context, self.path)}, {self.path}) = {rhs}"


def render_marked(t: Term, path: Position) -> str:
    """Canonical text form with the subterm at `path` wrapped in brackets."""
    if not path.steps:
        return f"[{render(t)}]"
    assert isinstance(t, Sym)
    (_, index), rest = path.steps[0], Position(path.steps[1:])
    parts = [render_marked(c, rest) if i == index else render(c)
             for i, c in enumerate(t.children, 1)]
    return f"{t.name}({', '.join(parts)})"


@dataclass(frozen=True)
class Carta:
    alphabet: RankedAlphabet
    states: frozenset[str]
    transitions: tuple[Transition, ...]
    initial: str
    notes: tuple[str, ...] = field(default=(), compare=False)
    # states merged away by minimization, mapped to their representative
    aliases: tuple[tuple[str, str], ...] = field(default=(), compare=False)

    def resolve(self, q: str) -> str:
        return dict(self.aliases).get(q, q)

    def transitions_of(self, q: str) -> tuple[Transition, ...]:
        index = self.__dict__.get("_index")
        if index is None:
            index = defaultdict(list)
            for tr in self.transitions:
                index[tr.state].append(tr)
            object.__setattr__(self, "_index", index)
        return tuple(index.get(q, ()))

    def dump(self, states: Optional[Iterable[str]] = None) -> str:
        keep = None if states is None else set(states)
        return "\n".join(str(tr) for tr in self.transitions if keep is None or tr.state in keep)


def make_carta(alphabet: RankedAlphabet, transitions: Iterable[Transition], initial: str,
               notes: Iterable[str] = (), states: Iterable[str] = ()) -> Carta:
    """An automaton over the states mentioned by `transitions`, plus `states`
    (states without transitions reject every constructor)."""
    transitions = tuple(transitions)
    states = {initial, *states}
    for tr in transitions:
        states.add(tr.state)
        states.update(tr.successors or ())
    return Carta(alphabet, frozenset(states), transitions, initial, tuple(notes))


def restart_carta(a: Carta, q: str) -> Carta:
    q = a.resolve(q)
    if q not in a.states:
        raise CartaError(f"unknown state {q}")
    if q == a.initial:
        return a
    return replace(a, initial=q)


# --------------------------------------------------------------------------
# Acceptance

def accepts(a: Carta, t: Term, state: Optional[str] = None) -> bool:
    """Whether a run of `a` (from `state`, default the initial one) exists on `t`.

    `?` and unexpanded leaves are accepted in every state.
    """
    memo: dict[tuple[str, tuple], bool] = {}

    def at(q: str, steps: tuple) -> bool:
        key = (q, steps)
        if key not in memo:
            memo[key] = node(q, steps)
        return memo[key]

    def node(q: str, steps: tuple) -> bool:
        here = subterm_at(t, Position(steps))
        if q == DRAIN or isinstance(here, (Wildcard, Bottom)):
            return True
        if not isinstance(here, Sym):
            return False
        for tr in applicable(a, q, t, steps):
            if tr.is_drain:
                return True
            if len(tr.successors) != len(here.children):
                continue
            if all(at(s, steps + ((here.name, i),)) for i, s in enumerate(tr.successors, 1)):
                return True
        return False

    return at(a.resolve(state) if state else a.initial, ())


def applicable(a: Carta, q: str, t: Term, steps: tuple) -> Iterator[Transition]:
    """Transitions of `q` whose context unifies with `t` around the node at `steps`."""
    for tr in a.transitions_of(q):
        n = len(tr.path.steps)
        if n > len(steps) or (n and steps[-n:] != tr.path.steps):
            continue
        anchor = subterm_at(t, Position(steps[: len(steps) - n]))
        if unify(tr.context, anchor) is not None:
            yield tr


# --------------------------------------------------------------------------
# Conflicts

def _conflicting(t1: Transition, t2: Transition) -> bool:
    if not t1.path.is_suffix_of(t2.path):
        return False
    prefix = t2.path.strip_suffix(t1.path)
    try:
        inner = subterm_at(t2.context, prefix)
    except PositionError:
        return False
    return unifiable_apart(t1.context, inner)


def check_no_conflicts(a: Carta) -> list[tuple[Transition, Transition]]:
    out = []
    by_state = defaultdict(list)
    for tr in a.transitions:
        by_state[tr.state].append(tr)
    for trs in by_state.values():
        for t1, t2 in itertools.combinations(trs, 2):
            if _conflicting(t1, t2) or _conflicting(t2, t1):
                out.append((t1, t2))
    return out


def arity_violations(a: Carta) -> list[Transition]:
    out = []
    for tr in a.transitions:
        target = tr.target
        if tr.is_drain:
            continue
        if not isinstance(target, Sym) or len(target.children) != len(tr.successors):
            out.append(tr)
    return out


# --------------------------------------------------------------------------
# Construction, step 1: one transition per case branch, drains elsewhere

def state_name(function: str, path: Position, alphabet: RankedAlphabet) -> str:
    """`q_F.pair.1.succ.1`; the child index of a unary constructor is implied
    and left out except on the final step (`q_Check.succ.succ.1`)."""
    parts = [f"q_{function}"]
    for k, (c, i) in enumerate(path.steps):
        last = k == len(path.steps) - 1
        if not last and c in alphabet and alphabet.arity(c) == 1:
            parts.append(c)
        else:
            parts.append(f"{c}.{i}")
    return ".".join(parts)


@dataclass(frozen=True)
class RSite:
    """A case-free right-hand side reached under the given context."""

    ident: int
    function: str
    context: Term
    refinements: tuple[tuple[str, Term], ...]
    body: Term

    def resolved(self, t: Term) -> Term:
        for var, pattern in self.refinements:
            t = substitute_many(t, {var: pattern})
        return t


@dataclass
class _Step1:
    carta: Carta
    sigma: dict[str, str]
    sites: list[RSite]
    drain_origins: dict[Transition, frozenset[int]]
    home: dict[str, tuple[str, Position]]


def _step1(cp: CoreProgram) -> _Step1:
    alphabet = cp.alphabet
    transitions: list[Transition] = []
    drains: dict[tuple[str, Position], list[tuple[Term, int]]] = defaultdict(list)
    drain_slot: dict[tuple[str, Position], int] = {}
    sigma: dict[str, str] = {}
    home: dict[str, tuple[str, Position]] = {}
    sites: list[RSite] = []
    var_at: dict[str, dict[Position, str]] = defaultdict(dict)

    def state(fn: str, p: Position) -> str:
        q = state_name(fn, p, alphabet)
        home.setdefault(q, (fn, p))
        return q

    def walk(fn: str, unmatched: frozenset, context: Term, refinements: tuple, e: CoreExpr) -> None:
        for v in free_vars(context):
            for p in paths_to(context, v):
                var_at[fn].setdefault(p, v)
        if isinstance(e, Match):
            here = _single_path(context, e.var)
            for b in e.branches:
                refined = Sym(b.ctor, tuple(Var(x) for x in b.binders))
                ctx = substitute_many(context, {e.var: refined})
                succ = []
                for x in b.binders:
                    q = state(fn, _single_path(ctx, x))
                    sigma[x] = q
                    succ.append(q)
                if here is not None:
                    transitions.append(Transition(sigma[e.var], ctx, here, tuple(succ)))
                walk(fn, (unmatched - {e.var}) | set(b.binders), ctx,
                     refinements + ((e.var, refined),), b.body)
            return
        site = RSite(len(sites), fn, context, refinements, e)
        sites.append(site)
        for v in sorted(unmatched, key=lambda v: _single_path(context, v).steps if _single_path(context, v) else ()):
            p = _single_path(context, v)
            if p is None:
                continue
            key = (sigma[v], p)
            if key not in drain_slot:
                drain_slot[key] = len(transitions)
                transitions.append(None)  # type: ignore[arg-type]
            drains[key].append((replace_at(context, p, STAR), site.ident))

    for d in cp.definitions:
        sigma[d.param] = state(d.name, ROOT)
        walk(d.name, frozenset({d.param}), Var(d.param), (), d.body)

    # drains of one variable under several contexts collapse into their
    # least general generalization when that stays conflict free
    drain_origins: dict[Transition, frozenset[int]] = {}
    final: list[Transition] = []
    fixed = [tr for tr in transitions if tr is not None]
    for slot, tr in enumerate(transitions):
        if tr is not None:
            final.append(tr)
            continue
        key = next(k for k, v in drain_slot.items() if v == slot)
        q, p = key
        fn = home[q][0]
        entries = drains[key]
        merged_ctx = entries[0][0]
        for ctx, _ in entries[1:]:
            merged_ctx = _lgg(merged_ctx, ctx, ROOT, var_at[fn])
        candidate = Transition(q, merged_ctx, p, None)
        if len(entries) > 1 and any(_conflicting(candidate, o) or _conflicting(o, candidate)
                                    for o in fixed if o.state == q):
            groups = [(Transition(q, ctx, p, None), frozenset({sid})) for ctx, sid in entries]
        else:
            groups = [(candidate, frozenset(sid for _, sid in entries))]
        for tr_, origins in groups:
            if tr_ in drain_origins:
                drain_origins[tr_] |= origins
                continue
            drain_origins[tr_] = origins
            final.append(tr_)

    main = state_name("Main", ROOT, alphabet)
    roots = [state_name(d.name, ROOT, alphabet) for d in cp.definitions]
    carta = make_carta(alphabet, final, main, states=roots)
    return _Step1(carta, sigma, sites, drain_origins, home)


def _single_path(t: Term, x: str) -> Optional[Position]:
    ps = paths_to(t, x)
    return min(ps, key=lambda p: p.steps) if ps else None


def _lgg(t1: Term, t2: Term, here: Position, names: Mapping[Position, str]) -> Term:
    if t1 == t2:
        return t1
    if isinstance(t1, Sym) and isinstance(t2, Sym) and t1.name == t2.name \
            and len(t1.children) == len(t2.children):
        return Sym(t1.name, tuple(_lgg(a, b, here.child(t1.name, i), names)
                                  for i, (a, b) in enumerate(zip(t1.children, t2.children), 1)))
    return Var(names.get(here, f"_{len(here.steps)}_{abs(hash(here)) % 10000}"))


def build_carta_step1(cp: CoreProgram) -> tuple[Carta, dict[str, str]]:
    """Transitions for the pattern matching structure of every function,
    and the map from each program variable to its state."""
    s1 = _step1(cp)
    return s1.carta, dict(s1.sigma)


# --------------------------------------------------------------------------
# Step 2: states related through function calls

@dataclass(frozen=True)
class StateRelation:
    generators: frozenset[tuple[str, str]]
    universe: frozenset[str] = frozenset()

    def classes(self) -> list[frozenset[str]]:
        parent: dict[str, str] = {}

        def find(x: str) -> str:
            parent.setdefault(x, x)
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for x in self.universe:
            find(x)
        for a, b in self.generators:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
        groups: dict[str, set[str]] = defaultdict(set)
        for x in list(parent):
            groups[find(x)].add(x)
        return sorted((frozenset(g) for g in groups.values()), key=lambda g: min(g))

    @property
    def pairs(self) -> frozenset[tuple[str, str]]:
        """The reflexive, symmetric, transitive closure."""
        return frozenset((a, b) for cls in self.classes() for a in cls for b in cls)

    def related(self, a: str, b: str) -> bool:
        if a == b:
            return True
        for cls in self.classes():
            if a in cls:
                return b in cls
        return False

    @classmethod
    def identity(cls, states: Iterable[str]) -> "StateRelation":
        return cls(frozenset(), frozenset(states))


@dataclass(frozen=True)
class Flow:
    """Variable `var` is passed to `callee` at `path` of the argument `argument`."""

    site: int
    var: str
    callee: str
    path: Position
    argument: Term


def _flows(cp: CoreProgram, sites: list[RSite]) -> list[Flow]:
    out: list[Flow] = []
    for site in sites:
        for app in _applications(site.body):
            arg = site.resolved(app.args[0])
            pattern = _opaque_calls(arg)
            for x in sorted(free_vars(arg)):
                for p in sorted(paths_to(arg, x), key=lambda p: p.steps):
                    out.append(Flow(site.ident, x, app.name, p, pattern))
    return out


def _applications(t: Term) -> Iterator[Nonterminal]:
    if isinstance(t, Nonterminal):
        yield t
        for c in t.args:
            yield from _applications(c)
    elif isinstance(t, Sym):
        for c in t.children:
            yield from _applications(c)


def _opaque_calls(t: Term) -> Term:
    counter = itertools.count()

    def conv(u: Term) -> Term:
        if isinstance(u, Nonterminal):
            return Var(f"$call{next(counter)}")
        if isinstance(u, Sym):
            return Sym(u.name, tuple(conv(c) for c in u.children))
        return u

    return conv(t)


def call_generators(cp: CoreProgram, sigma: Mapping[str, str],
                    functions: Optional[Iterable[str]] = None) -> set[tuple[str, str]]:
    """Pairs (state of x, q_F.s) for each call F(e) and each path s to x in e,
    optionally restricted to calls inside the given functions."""
    s1 = _step1(cp)
    keep = None if functions is None else set(functions)
    out = set()
    for fl in _flows(cp, s1.sites):
        if keep is not None and s1.sites[fl.site].function not in keep:
            continue
        out.add((sigma[fl.var], state_name(fl.callee, fl.path, cp.alphabet)))
    return out


def call_equivalence(cp: CoreProgram, sigma: Mapping[str, str]) -> StateRelation:
    gens = call_generators(cp, sigma)
    universe = set(sigma.values()) | {q for pair in gens for q in pair}
    return StateRelation(frozenset(gens), frozenset(universe))


# --------------------------------------------------------------------------
# Step 3: drains of a variable become copies of the callee's constraints

def merge_carta(a: Carta, rel: StateRelation, program: CoreProgram) -> Carta:
    """Replace drain transitions of variables passed to other functions.

    A drain of variable x (under the context of some right-hand sides) is
    replaced when every one of those right-hand sides passes x to the same
    callee position F.s with F.s related to x.  The replacement plugs the
    transitions of q_F.s, restricted to those compatible with the call's
    argument shape and cut down to the node itself, into the drain's
    context; their successors become primed copies, also cut down to
    their own node.  Replacements that would create conflicting
    transitions are dropped and noted.
    """
    s1 = _step1(program)
    if a.transitions != s1.carta.transitions:
        raise CartaError("merge_carta expects the step-1 automaton of the given program")
    flows = _flows(program, s1.sites)
    disabled: set[str] = set()
    notes: list[str] = []
    while True:
        merged, provenance = _merge_once(a, rel, program, s1, flows, disabled)
        conflicts = check_no_conflicts(merged)
        if not conflicts:
            break
        culprits = set()
        for t1, _ in conflicts:
            culprits |= provenance.get(t1.state, set())
        culprits -= disabled
        if not culprits:
            notes.append(f"unresolved conflicts after merging: {len(conflicts)}")
            break
        for q in sorted(culprits):
            notes.append(f"warning: constraints for {q} not merged (conflicting transitions)")
        disabled |= culprits
    return replace(merged, notes=tuple(notes))


def _merge_once(a: Carta, rel: StateRelation, cp: CoreProgram, s1: _Step1,
                flows: list[Flow], disabled: set[str]):
    alphabet = cp.alphabet
    by_site: dict[int, list[Flow]] = defaultdict(list)
    for fl in flows:
        by_site[fl.site].append(fl)
    step1_of = {q: a.transitions_of(q) for q in a.states}
    provenance: dict[str, set[str]] = defaultdict(set)

    def usable(callee: str, path: Position, pattern: Term) -> bool:
        # an enclosing drain compatible with the call leaves the position free
        for k in range(len(path.steps) + 1):
            q = state_name(callee, Position(path.steps[:k]), alphabet)
            for tr in step1_of.get(q, ()):
                if tr.is_drain and unifiable_apart(tr.context, pattern):
                    return False
        return state_name(callee, path, alphabet) in a.states

    def target_for(drain: Transition) -> Optional[tuple[str, frozenset[Term]]]:
        origins = s1.drain_origins.get(drain, frozenset())
        if not origins:
            return None
        var = next((x for x, q in s1.sigma.items() if q == drain.state), None)
        if var is None or drain.state in disabled:
            return None
        common: Optional[set[str]] = None
        patterns: dict[str, set[Term]] = defaultdict(set)
        for sid in origins:
            here: set[str] = set()
            for fl in by_site[sid]:
                if fl.var != var:
                    continue
                root = state_name(fl.callee, fl.path, alphabet)
                if root == drain.state or not rel.related(drain.state, root):
                    continue
                if not usable(fl.callee, fl.path, fl.argument):
                    continue
                here.add(root)
                patterns[root].add(fl.argument)
            common = here if common is None else common & here
        if not common:
            return None
        root = min(common)
        return root, frozenset(patterns[root])

    merged: dict[str, list[Transition]] = {}
    in_progress: set[str] = set()
    primes: dict[tuple[str, frozenset[Term]], str] = {}
    prime_count: dict[str, int] = defaultdict(int)

    prime_names: set[str] = set()
    unfiltered = frozenset({STAR})

    def prime(q: str, filters: frozenset[Term]) -> str:
        key = (q, filters)
        if key not in primes:
            prime_count[q] += 1
            primes[key] = q + "'" * prime_count[q]
            while primes[key] in a.states:
                prime_count[q] += 1
                primes[key] = q + "'" * prime_count[q]
            prime_names.add(primes[key])
        return primes[key]

    def local(q: str, filters: frozenset[Term], source: list[Transition]) -> list[tuple[Term, Optional[tuple[str, ...]]]]:
        kept = [tr for tr in source if any(unifiable_apart(tr.context, f) for f in filters)]
        if any(tr.is_drain for tr in kept):
            return [(STAR, None)]
        out = []
        for tr in kept:
            succ = []
            for s in tr.successors:
                if s in prime_names:
                    succ.append(s)
                elif s1.home[s][0] == s1.home[q][0]:
                    succ.append(prime(s, filters))
                else:
                    # a state of another function, plugged in earlier: the
                    # call shapes say nothing about its contexts
                    succ.append(prime(s, unfiltered))
            out.append((tr.target, tuple(succ)))
        return out

    def merged_of(q: str) -> list[Transition]:
        if q in merged:
            return merged[q]
        if q in in_progress:
            return list(step1_of.get(q, ()))
        in_progress.add(q)
        out: list[Transition] = []
        for tr in step1_of.get(q, ()):
            choice = target_for(tr) if tr.is_drain else None
            if choice is None:
                out.append(tr)
                continue
            root, filters = choice
            if root == state_name(s1.home[root][0], ROOT, alphabet):
                # the whole variable is the callee's argument: its states
                # anchor at this very node, so they can be shared as they are
                entries = [(t.context, t.successors) for t in merged_of(root)
                           if any(unifiable_apart(t.context, f) for f in filters)]
                if any(succ is None for _, succ in entries):
                    entries = [(STAR, None)]
            else:
                entries = local(root, filters, merged_of(root))
            for ctx, succ in entries:
                plugged = replace_at(tr.context, tr.path, rename_vars(ctx, "'"))
                out.append(Transition(q, plugged, tr.path, succ))
            for s in succ_states(entries):
                provenance[s].add(q)
            provenance[q].add(q)
        in_progress.discard(q)
        merged[q] = out
        return out

    def succ_states(entries) -> Iterator[str]:
        for _, succ in entries:
            yield from succ or ()

    ordered: list[Transition] = []
    seen_states: list[str] = []
    for tr in a.transitions:
        if tr.state not in seen_states:
            seen_states.append(tr.state)
    for q in seen_states:
        ordered.extend(merged_of(q))

    # primed states: the node's own transitions, restricted by the call shapes
    prime_trans: list[Transition] = []
    done: set[str] = set()
    while True:
        pending = [(key, name) for key, name in primes.items() if name not in done]
        if not pending:
            break
        for (q, filters), name in pending:
            done.add(name)
            source = merged_of(q) if q in step1_of else []
            for ctx, succ in local(q, filters, source):
                prime_trans.append(Transition(name, rename_vars(ctx, "'") if ctx != STAR else ctx, ROOT, succ))
            origin = provenance.get(q, set()) or {q}
            for s in succ_states(local(q, filters, source)):
                provenance[s] |= origin
            provenance[name] |= origin
    return make_carta(a.alphabet, ordered + prime_trans, a.initial, states=a.states), provenance


def build_carta(cp: CoreProgram) -> Carta:
    """The merged crash model of a program."""
    carta, sigma = build_carta_step1(cp)
    return merge_carta(carta, call_equivalence(cp, sigma), cp)


# --------------------------------------------------------------------------
# Minimization

def minimize(a: Carta) -> Carta:
    """Merge states whose transition structures are bisimilar."""
    states = sorted(a.states)
    block = {q: 0 for q in states}

    def signature(q: str) -> frozenset:
        if q == DRAIN:
            return frozenset({DRAIN})
        return frozenset(
            (canonical_vars(tr.context), tr.path,
             None if tr.successors is None else tuple(block.get(s, s) for s in tr.successors))
            for tr in a.transitions_of(q))

    while True:
        sigs: dict[str, tuple] = {q: (block[q], signature(q)) for q in states}
        ids: dict[tuple, int] = {}
        new_block = {q: ids.setdefault(sigs[q], len(ids)) for q in states}
        if len(set(new_block.values())) == len(set(block.values())):
            block = new_block
            break
        block = new_block

    rep: dict[int, str] = {}
    for q in sorted(states, key=lambda q: (q != a.initial, q.count("'"), len(q), q)):
        rep.setdefault(block[q], q)
    rename = {q: rep[block[q]] for q in states}
    seen: set = set()
    out: list[Transition] = []
    for tr in a.transitions:
        if rename[tr.state] != tr.state:
            continue
        new = Transition(tr.state, tr.context, tr.path,
                         None if tr.successors is None else tuple(rename.get(s, s) for s in tr.successors))
        key = (new.state, canonical_vars(new.context), new.path, new.successors)
        if key not in seen:
            seen.add(key)
            out.append(new)
    aliases = dict(a.aliases)
    aliases = {k: rename.get(v, v) for k, v in aliases.items()}
    aliases.update((q, r) for q, r in rename.items() if q != r)
    result = make_carta(a.alphabet, out, rename.get(a.initial, a.initial), a.notes, set(rename.values()))
    return replace(result, aliases=tuple(sorted(aliases.items())))
