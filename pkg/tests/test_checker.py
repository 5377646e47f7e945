from __future__ import annotations

import itertools
import json
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from crashscope.carta import accepts, build_carta, make_carta, restart_carta, state_name, Transition
from crashscope.checker import (
    DEFINITE, POSSIBLE, UNKNOWN, AnalysisConfig, ErrorReport, Finding, Holds, Rejected,
    TrivialInputHors, Unknown, analyze_program, bounded_verify, emit_report,
    every_output_rejected,
)
from crashscope.cli import main
from crashscope.frontend import call_sites, errors, load
from crashscope.interpreter import Value, eval_expr, with_deep_stack
from crashscope.pmrs import Pmrs, Rule, contains_leaf, evaluate, restart, to_pmrs
from crashscope.terms import (
    ROOT, WILDCARD, Bottom, Nonterminal, RankedAlphabet, Stuck, Sym, Wildcard, first_order,
    free_vars, ground_terms, parse_term, peano, substitute_many,
)

from progen import random_program

PROGRAMS = Path(__file__).resolve().parent.parent / "programs"


def source(name):
    return (PROGRAMS / f"{name}.proto").read_text()


def program(name):
    cp, diags = load(source(name))
    assert not errors(diags)
    return cp


LENGTH_CHECK = source("length") + "\n" + source("check").replace("def Main(v) = Check(v)", "")
NUMERALS = [("q", "zero", ()), ("q", "succ(x)", ("q",))]


def numeral_automaton(alphabet):
    return make_carta(alphabet, [Transition(q, parse_term(c, ["x"]), ROOT, s) for q, c, s in NUMERALS], "q")


# ---------------------------------------------------------------- bounded_verify

def test_trivial_input_language():
    h = TrivialInputHors()
    assert h.language() == frozenset({WILDCARD})


def test_length_of_four_fails_check():
    cp = program("length_check")
    site = Rule("$F", ("_",), None, Nonterminal("Length", (parse_term(
        "cons(zero, cons(zero, cons(zero, cons(zero, nil))))"),)))
    g = restart(to_pmrs(cp).with_rule(site), "$F")
    a = restart_carta(build_carta(cp), "q_Check")
    verdict = bounded_verify(g, a, 1000)
    assert isinstance(verdict, Rejected)
    assert verdict.witness == peano(4)


def test_constant_scheme_holds():
    sigma = RankedAlphabet.from_arities({"zero": 0})
    g = Pmrs(sigma, RankedAlphabet({"S": first_order(1)}), (Rule("S", ("x",), None, Sym("zero")),), "S")
    a = make_carta(sigma, [Transition("q0", Sym("zero"), ROOT, ())], "q0")
    assert isinstance(bounded_verify(g, a), Holds)


def test_length_outputs_are_numerals():
    cp = program("length")
    verdict = bounded_verify(to_pmrs(cp), numeral_automaton(cp.alphabet), 200)
    assert isinstance(verdict, Holds) and verdict.explored <= 200


def test_non_productive_scheme_is_never_holds():
    cp = program("ackermann")
    verdict = bounded_verify(to_pmrs(cp), numeral_automaton(cp.alphabet), 500)
    assert isinstance(verdict, Unknown)


def test_every_output_rejected():
    cp = program("length")
    g = to_pmrs(cp)
    a = make_carta(cp.alphabet, [Transition("q", Sym("nil"), ROOT, ())], "q")
    assert every_output_rejected(g, a, 200) is True
    assert every_output_rejected(g, numeral_automaton(cp.alphabet), 200) is False


# ---------------------------------------------------------------- analysis

def test_length_check_program_has_one_definite_error():
    report = analyze_program(program("length_check"))
    assert [f.kind for f in report.findings] == [DEFINITE]
    (f,) = report.findings
    assert f.callee == "Check" and f.function == "Main" and f.witness == "succ(succ(succ(succ(zero))))"


def test_check_of_length_is_definite():
    cp, _ = load(LENGTH_CHECK.replace("def Main(t) = Length(t)", "def Main(l) = Check(Length(l))"))
    kinds = {(f.callee, f.kind) for f in analyze_program(cp).findings}
    assert ("Check", DEFINITE) in kinds


def test_length_of_singleton_is_fine():
    cp, _ = load(source("length").replace("def Main(t) = Length(t)", "def Main(x) = Length(cons(x, nil))"))
    assert analyze_program(cp).findings == []


def test_ack_of_zero_is_definite():
    cp, _ = load(source("ackermann").replace("def Main(a) = Ack(a)", "def Main(x) = Ack(zero)"))
    (f,) = [f for f in analyze_program(cp).findings if f.function == "Main"]
    assert f.kind == DEFINITE and f.witness == "zero" and f.budget_used == 0


def test_empty_case_is_reported():
    cp, diags = load("def Main(x) = case x of { zero -> case x of {} | succ(y) -> y }")
    report = analyze_program(cp, diagnostics=diags)
    assert [f.kind for f in report.findings] == [DEFINITE]


def test_outer_site_over_definite_inner_site_is_skipped():
    cp, _ = load(source("ackermann").replace("def Main(a) = Ack(a)", "def Main(x) = Ack(Ack(zero))"))
    kinds = sorted(f.kind for f in analyze_program(cp).findings if f.function == "Main")
    assert kinds == [DEFINITE, UNKNOWN]


def test_config_validation():
    with pytest.raises(ValueError):
        AnalysisConfig(budget=0)
    with pytest.raises(ValueError):
        AnalysisConfig(stage="2")


@pytest.mark.parametrize("stage", ["1", "merged", "min"])
def test_stages_agree_on_paper_result(stage):
    report = analyze_program(program("length_check"), AnalysisConfig(stage=stage))
    assert len(report.definite) == 1


# ---------------------------------------------------------------- reports

def test_empty_text_report():
    assert emit_report(ErrorReport()) == "no definite errors found"


def test_json_report_schema():
    r = ErrorReport([Finding("Main", (3, 5), DEFINITE, "Check", "zero", 7, "Check crashes on zero")])
    data = json.loads(emit_report(r, "json"))
    assert data == {"findings": [{"function": "Main", "span": {"line": 3, "col": 5}, "kind": DEFINITE,
                                  "witness": "zero", "budget_used": 7}], "version": 1}


def test_reports_are_sorted_by_position():
    r = ErrorReport([Finding("F", (9, 1), UNKNOWN, "G", None, 3),
                     Finding("Main", (2, 4), POSSIBLE, "G", "zero", 1),
                     Finding("Main", (2, 1), DEFINITE, "H", "zero", 0, "H crashes on zero")])
    lines = emit_report(r, "text", "p.proto").splitlines()
    assert lines == ["p.proto:2:1: definite-error in Main: H crashes on zero",
                     "p.proto:2:4: possible-error in Main: possible-error",
                     "p.proto:9:1: unknown in F: unknown",
                     "1 definite error(s) found"]
    with pytest.raises(ValueError):
        emit_report(r, "xml")


# ---------------------------------------------------------------- command line

def test_cli_check_exit_codes(capsys, tmp_path):
    assert main(["check", str(PROGRAMS / "length_check.proto")]) == 1
    out = capsys.readouterr().out
    assert "definite-error in Main: Check crashes on succ(succ(succ(succ(zero))))" in out
    assert main(["check", str(PROGRAMS / "length.proto")]) == 0
    assert capsys.readouterr().out.strip().endswith("no definite errors found")
    assert main(["check", str(tmp_path / "missing.proto")]) == 2
    bad = tmp_path / "bad.proto"
    bad.write_text("def Main(x) = ")
    assert main(["check", str(bad)]) == 2
    assert "parse error" in capsys.readouterr().err


def test_cli_json(capsys):
    assert main(["check", "--format", "json", str(PROGRAMS / "length_check.proto")]) == 1
    data = json.loads(capsys.readouterr().out)
    assert data["version"] == 1 and data["findings"][0]["kind"] == DEFINITE


def test_cli_run_and_dumps(capsys):
    assert main(["run", str(PROGRAMS / "ackermann.proto"), "--input", "pair(succ(zero), succ(zero))"]) == 0
    assert capsys.readouterr().out.strip() == "succ(succ(succ(zero)))"
    assert main(["run", str(PROGRAMS / "ackermann.proto"), "--input", "pair(x, zero)"]) == 2
    capsys.readouterr()
    assert main(["dump-pmrs", str(PROGRAMS / "length.proto")]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "Main t -> Length t"
    assert main(["dump-carta", "--stage", "1", "--function", "Check", str(PROGRAMS / "check.proto")]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 4


def test_cli_usage_error(capsys):
    assert main(["frobnicate"]) == 2
    assert "invalid choice" in capsys.readouterr().err


# ---------------------------------------------------------------- properties

def _site_arguments(cp):
    out = {}
    for fn, app, refinements in call_sites(cp):
        arg = app.args[0]
        for var, pattern in refinements:
            arg = substitute_many(arg, {var: pattern})
        out[(app.span, app.name)] = (fn, Nonterminal(app.name, (arg,)))
    return out


def _hard_programs():
    return st.integers(0, 10**6).map(random_program)


@settings(max_examples=60, deadline=None)
@given(_hard_programs())
def test_definite_errors_never_evaluate_to_a_value(gp):
    cp, diags = load(gp.text)
    report = analyze_program(cp, AnalysisConfig(budget=500), diags)
    sites = _site_arguments(cp)
    small = ground_terms(gp.arities, 3)

    def check():
        for f in report.definite:
            if (f.span, f.callee) not in sites:
                continue  # structural diagnostics have no call
            fn, call_expr = sites[(f.span, f.callee)]
            names = sorted(free_vars(call_expr.args[0]))
            for values in itertools.islice(itertools.product(small, repeat=len(names)), 400):
                out = eval_expr(dict(zip(names, values)), call_expr, cp, 3000, fn=fn)
                assert not isinstance(out, Value), (gp.text, f, values)

    with_deep_stack(check)


def _replace_unknowns(t, filler):
    if isinstance(t, (Bottom, Wildcard)):
        return filler
    if isinstance(t, Sym):
        return Sym(t.name, tuple(_replace_unknowns(c, filler) for c in t.children))
    return t


@settings(max_examples=60, deadline=None)
@given(_hard_programs(), st.data())
def test_holds_and_rejected_verdicts_are_trustworthy(gp, data):
    cp, _ = load(gp.text)
    g = to_pmrs(cp)
    m = build_carta(cp)
    callee = data.draw(st.sampled_from(gp.functions))
    a = restart_carta(m, state_name(callee, ROOT, cp.alphabet))

    def check():
        verdict = bounded_verify(g, a, 300)
        if isinstance(verdict, Holds):
            for v in ground_terms(gp.arities, 3):
                for out in evaluate(g, v, 5000):
                    # a run that gets stuck crashed and produced no tree
                    if not contains_leaf(out, Stuck):
                        assert accepts(a, out), (gp.text, v)
        elif isinstance(verdict, Rejected):
            assert not accepts(a, verdict.witness)
            for filler in ground_terms(gp.arities, 2):
                assert not accepts(a, _replace_unknowns(verdict.witness, filler))

    with_deep_stack(check)


@settings(max_examples=40, deadline=None)
@given(_hard_programs(), st.data())
def test_more_budget_never_flips_a_verdict(gp, data):
    cp, _ = load(gp.text)
    g = to_pmrs(cp)
    callee = data.draw(st.sampled_from(gp.functions))
    a = restart_carta(build_carta(cp), state_name(callee, ROOT, cp.alphabet))
    small = data.draw(st.integers(5, 100))

    def check():
        low = bounded_verify(g, a, small)
        high = bounded_verify(g, a, small * 8)
        if isinstance(low, Holds):
            assert not isinstance(high, Rejected)
        if isinstance(low, Rejected):
            assert not isinstance(high, Holds)

    with_deep_stack(check)
