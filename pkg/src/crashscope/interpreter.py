"""Reference big-step evaluator for core programs.

Fuel counts rule applications of the derivation.  Outcomes are `Value`,
`Err` (carrying the case site that failed) or `FuelExhausted`.
"""

from __future__ import annotations

import sys
import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, TypeVar, Union

from .frontend import CoreExpr, CoreProgram, Match, Span
from .terms import Nonterminal, Sym, Term, Var, render

DEFAULT_FUEL = 10**6


@dataclass(frozen=True)
class Value:
    term: Term

    def __str__(self) -> str:
        return render(self.term)


@dataclass(frozen=True)
class Err:
    # (function, span) of the case expression that had no matching branch
    site: Optional[tuple[str, Span]] = field(default=None, compare=False)

    def __str__(self) -> str:
        return "err"


@dataclass(frozen=True)
class FuelExhausted:
    def __str__(self) -> str:
        return "fuel-exhausted"


Outcome = Union[Value, Err, FuelExhausted]


class _Crash(Exception):
    def __init__(self, site):
        self.site = site


class _OutOfFuel(Exception):
    pass


class _Machine:
    def __init__(self, program: CoreProgram, fuel: int, right_to_left: bool, stub_calls: bool):
        self.functions = program.functions
        self.fuel = fuel
        self.right_to_left = right_to_left
        self.stub_calls = stub_calls

    def tick(self) -> None:
        if self.fuel <= 0:
            raise _OutOfFuel()
        self.fuel -= 1

    def eval(self, env: Mapping[str, Term], e: CoreExpr, fn: str) -> Term:
        self.tick()
        if isinstance(e, Var):
            try:
                return env[e.name]
            except KeyError:
                raise RuntimeError(f"unbound variable {e.name} at run time in {fn}") from None
        if isinstance(e, Sym):
            order = range(len(e.children))
            if self.right_to_left:
                order = reversed(order)
            values: list[Optional[Term]] = [None] * len(e.children)
            for i in order:
                values[i] = self.eval(env, e.children[i], fn)
            return Sym(e.name, tuple(values))  # type: ignore[arg-type]
        if isinstance(e, Nonterminal):
            arg = self.eval(env, e.args[0], fn)
            if self.stub_calls:
                return Sym("$opaque")
            callee = self.functions[e.name]
            return self.eval({callee.param: arg}, callee.body, e.name)
        if isinstance(e, Match):
            scrutinee = env[e.var]
            assert isinstance(scrutinee, Sym)
            branch = e.branch(scrutinee.name)
            if branch is None or len(branch.binders) != len(scrutinee.children):
                raise _Crash((fn, e.span))
            inner = dict(env)
            inner.update(zip(branch.binders, scrutinee.children))
            return self.eval(inner, branch.body, fn)
        raise TypeError(f"not a core expression: {e!r}")


def _run(machine: _Machine, env: Mapping[str, Term], e: CoreExpr, fn: str) -> Outcome:
    try:
        return Value(machine.eval(env, e, fn))
    except _Crash as crash:
        return Err(crash.site)
    except _OutOfFuel:
        return FuelExhausted()


def eval_expr(env: Mapping[str, Term], e: CoreExpr, program: CoreProgram,
              fuel: int = DEFAULT_FUEL, *, fn: str = "Main", right_to_left: bool = False) -> Outcome:
    return _run(_Machine(program, fuel, right_to_left, False), env, e, fn)


def call(program: CoreProgram, function: str, v: Term, fuel: int = DEFAULT_FUEL,
         *, right_to_left: bool = False) -> Outcome:
    """Evaluate `function(v)` for a ground value `v`."""
    d = program.function(function)
    return _run(_Machine(program, fuel, right_to_left, False), {d.param: v}, d.body, function)


def run_main(program: CoreProgram, v: Term, fuel: int = DEFAULT_FUEL, *, right_to_left: bool = False) -> Outcome:
    return call(program, "Main", v, fuel, right_to_left=right_to_left)


def shallow_crashes(program: CoreProgram, function: str, v: Term) -> bool:
    """Whether `function(v)` fails a case in its own body when every call
    result is treated as an opaque value that is never inspected."""
    d = program.function(function)
    machine = _Machine(program, 10**9, False, True)
    return isinstance(_run(machine, {d.param: v}, d.body, function), Err)


T = TypeVar("T")


def with_deep_stack(fn: Callable[[], T], stack_mb: int = 512, recursion: int = 10**6) -> T:
    """Run `fn` in a thread with a large stack so deep derivations fit."""
    result: dict[str, object] = {}

    def target() -> None:
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, recursion))
        try:
            result["value"] = fn()
        except BaseException as exc:  # re-raised in the caller
            result["error"] = exc
        finally:
            sys.setrecursionlimit(old)

    previous = threading.stack_size(stack_mb * 1024 * 1024)
    try:
        worker = threading.Thread(target=target)
        worker.start()
        worker.join()
    finally:
        threading.stack_size(previous)
    if "error" in result:
        raise result["error"]  # type: ignore[misc]
    return result["value"]  # type: ignore[return-value]
