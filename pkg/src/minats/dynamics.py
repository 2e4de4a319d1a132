"""Dynamic terms, values, evaluation contexts, and the small-step evaluator.

Call-by-value, left-to-right, exactly as the evaluation-context grammar
dictates.  `fst`/`snd` frames are included although the printed context
grammar omits them: without them `fst(fst(<<v,v>,v>))` could not step,
contradicting progress.  `fix` and `case` are conventional extensions; every
recursive example needs them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from minats.errors import MatchFailure, OpenTerm
from minats import sexpr
from minats.statics import (
    StaticTerm, SVar, pretty_name, static_to_sexpr, subst_static,
)

# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------

# Tuple/lambda flavors: pp (proof-proof), pt (proof-term), tt (term-term).
# Applications use pp/tp/tt.  Plain ATS0 terms carry "tt" everywhere.


@dataclass(frozen=True)
class DynTerm:
    pass


@dataclass(frozen=True)
class DVar(DynTerm):
    name: str


@dataclass(frozen=True)
class DCst(DynTerm):
    """dcx{sargs}(args); sargs=None marks elided static arguments (pre-check)."""

    head: str
    sargs: tuple
    args: tuple = ()


@dataclass(frozen=True)
class DTup(DynTerm):
    flavor: str  # "pp" | "pt" | "tt" | None before flavor resolution
    fst: DynTerm
    snd: DynTerm


@dataclass(frozen=True)
class DFst(DynTerm):
    arg: DynTerm


@dataclass(frozen=True)
class DSnd(DynTerm):
    arg: DynTerm


@dataclass(frozen=True)
class DLam(DynTerm):
    flavor: str  # "pp" | "pt" | "tt" | None
    var: str
    body: DynTerm
    ann: StaticTerm = None  # optional parameter type annotation


@dataclass(frozen=True)
class DApp(DynTerm):
    flavor: str  # "pp" | "tp" | "tt" | None
    fun: DynTerm
    arg: DynTerm


@dataclass(frozen=True)
class DGuardIn(DynTerm):
    body: DynTerm


@dataclass(frozen=True)
class DGuardOut(DynTerm):
    body: DynTerm


@dataclass(frozen=True)
class DAssert(DynTerm):
    body: DynTerm


@dataclass(frozen=True)
class DLetAssert(DynTerm):
    var: str
    rhs: DynTerm
    body: DynTerm


@dataclass(frozen=True)
class DSLam(DynTerm):
    svar: str
    body: DynTerm


@dataclass(frozen=True)
class DSApp(DynTerm):
    fun: DynTerm
    sarg: StaticTerm


@dataclass(frozen=True)
class DPack(DynTerm):
    sarg: StaticTerm
    body: DynTerm


@dataclass(frozen=True)
class DLetPack(DynTerm):
    svar: str
    var: str
    rhs: DynTerm
    body: DynTerm


@dataclass(frozen=True)
class DLetTup(DynTerm):
    """Eliminator for proof-term pairs: let <x1,x2>_pt = rhs in body."""

    flavor: str
    var1: str
    var2: str
    rhs: DynTerm
    body: DynTerm


@dataclass(frozen=True)
class DFix(DynTerm):
    var: str
    body: DynTerm
    ann: StaticTerm = None


@dataclass(frozen=True)
class DClause:
    con: str
    svars: tuple
    dvars: tuple
    body: DynTerm


@dataclass(frozen=True)
class DCase(DynTerm):
    scrut: DynTerm
    clauses: tuple


@dataclass(frozen=True)
class DAssume(DynTerm):
    """Scoped solver assumption; introduced by `$solver_assert` and kept by
    proof erasure (the proof argument itself is gone after erasure)."""

    hyp: StaticTerm
    body: DynTerm


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------


def is_value(sig, e: DynTerm) -> bool:
    match e:
        case DVar(_):
            return True
        case DCst(head, _, args):
            ct_kind = _dcx_kind(sig, head)
            return ct_kind == "dcc" and all(is_value(sig, a) for a in args)
        case DTup(_, a, b):
            return is_value(sig, a) and is_value(sig, b)
        case DLam(_, _, _, _):
            return True
        case DGuardIn(_) | DSLam(_, _):
            return True
        case DAssert(b):
            return is_value(sig, b)
        case DPack(_, b):
            return is_value(sig, b)
    return False


def _dcx_kind(sig, head):
    try:
        return sig.lookup_dcx(head).kind
    except Exception:
        return None


# ---------------------------------------------------------------------------
# Substitution
# ---------------------------------------------------------------------------

_dyn_fresh = itertools.count(1)


def fresh_dvar(base: str = "x") -> str:
    return f"{base.split('#')[0]}#{next(_dyn_fresh)}"


def free_dvars(e: DynTerm, acc=None, bound=None) -> set:
    if acc is None:
        acc = set()
    if bound is None:
        bound = frozenset()
    match e:
        case DVar(x):
            if x not in bound:
                acc.add(x)
        case DCst(_, _, args):
            for a in args:
                free_dvars(a, acc, bound)
        case DTup(_, a, b):
            free_dvars(a, acc, bound)
            free_dvars(b, acc, bound)
        case DFst(a) | DSnd(a) | DGuardIn(a) | DGuardOut(a) | DAssert(a):
            free_dvars(a, acc, bound)
        case DLam(_, x, body, _):
            free_dvars(body, acc, bound | {x})
        case DApp(_, f, a):
            free_dvars(f, acc, bound)
            free_dvars(a, acc, bound)
        case DLetAssert(x, rhs, body):
            free_dvars(rhs, acc, bound)
            free_dvars(body, acc, bound | {x})
        case DSLam(_, body):
            free_dvars(body, acc, bound)
        case DSApp(f, _):
            free_dvars(f, acc, bound)
        case DPack(_, body):
            free_dvars(body, acc, bound)
        case DLetPack(_, x, rhs, body):
            free_dvars(rhs, acc, bound)
            free_dvars(body, acc, bound | {x})
        case DLetTup(_, x1, x2, rhs, body):
            free_dvars(rhs, acc, bound)
            free_dvars(body, acc, bound | {x1, x2})
        case DFix(f, body, _):
            free_dvars(body, acc, bound | {f})
        case DCase(scrut, clauses):
            free_dvars(scrut, acc, bound)
            for cl in clauses:
                free_dvars(cl.body, acc, bound | set(cl.dvars))
        case DAssume(_, body):
            free_dvars(body, acc, bound)
    return acc


def subst_dyn(e: DynTerm, theta: dict) -> DynTerm:
    """Capture-avoiding substitution of dynamic variables."""
    if not theta:
        return e

    fvs = None

    def repl_fvs():
        nonlocal fvs
        if fvs is None:
            fvs = set()
            for t in theta.values():
                free_dvars(t, fvs)
        return fvs

    def freshen(x, body, extra=()):
        if x in theta or x in repl_fvs():
            nx = fresh_dvar(x)
            body = subst_dyn(body, {x: DVar(nx)})
            return nx, body
        return x, body

    match e:
        case DVar(x):
            return theta.get(x, e)
        case DCst(h, s, args):
            return DCst(h, s, tuple(subst_dyn(a, theta) for a in args))
        case DTup(fl, a, b):
            return DTup(fl, subst_dyn(a, theta), subst_dyn(b, theta))
        case DFst(a):
            return DFst(subst_dyn(a, theta))
        case DSnd(a):
            return DSnd(subst_dyn(a, theta))
        case DLam(fl, x, body, ann):
            x2, body2 = freshen(x, body)
            return DLam(fl, x2, subst_dyn(body2, _drop(theta, x)), ann)
        case DApp(fl, f, a):
            return DApp(fl, subst_dyn(f, theta), subst_dyn(a, theta))
        case DGuardIn(b):
            return DGuardIn(subst_dyn(b, theta))
        case DGuardOut(b):
            return DGuardOut(subst_dyn(b, theta))
        case DAssert(b):
            return DAssert(subst_dyn(b, theta))
        case DLetAssert(x, rhs, body):
            rhs2 = subst_dyn(rhs, theta)
            x2, body2 = freshen(x, body)
            return DLetAssert(x2, rhs2, subst_dyn(body2, _drop(theta, x)))
        case DSLam(a, body):
            return DSLam(a, subst_dyn(body, theta))
        case DSApp(f, s):
            return DSApp(subst_dyn(f, theta), s)
        case DPack(s, body):
            return DPack(s, subst_dyn(body, theta))
        case DLetPack(a, x, rhs, body):
            rhs2 = subst_dyn(rhs, theta)
            x2, body2 = freshen(x, body)
            return DLetPack(a, x2, rhs2, subst_dyn(body2, _drop(theta, x)))
        case DLetTup(fl, x1, x2, rhs, body):
            rhs2 = subst_dyn(rhs, theta)
            nx1, body = freshen(x1, body)
            nx2, body = freshen(x2, body)
            return DLetTup(fl, nx1, nx2, rhs2, subst_dyn(body, _drop(_drop(theta, x1), x2)))
        case DFix(f, body, ann):
            f2, body2 = freshen(f, body)
            return DFix(f2, subst_dyn(body2, _drop(theta, f)), ann)
        case DCase(scrut, clauses):
            scrut2 = subst_dyn(scrut, theta)
            new_clauses = []
            for cl in clauses:
                body = cl.body
                dvars = []
                for x in cl.dvars:
                    x2, body = freshen(x, body)
                    dvars.append(x2)
                th = dict(theta)
                for x in cl.dvars:
                    th.pop(x, None)
                new_clauses.append(DClause(cl.con, cl.svars, tuple(dvars),
                                           subst_dyn(body, th)))
            return DCase(scrut2, tuple(new_clauses))
        case DAssume(h, body):
            return DAssume(h, subst_dyn(body, theta))
    raise TypeError(f"not a dynamic term: {e!r}")


def _drop(theta, x):
    if x in theta:
        theta = dict(theta)
        theta.pop(x)
    return theta


def subst_static_in_dyn(e: DynTerm, theta: dict) -> DynTerm:
    """Substitute free static variables throughout a dynamic term."""
    if not theta:
        return e

    from minats.statics import free_svars

    repl_fvs = set()
    for t in theta.values():
        free_svars(t, repl_fvs)

    def freshen_svar(a, body):
        if a in theta or a in repl_fvs:
            na = f"{a.split('#')[0]}#s{next(_dyn_fresh)}"
            body = subst_static_in_dyn(body, {a: SVar(na)})
            return na, body
        return a, body

    def go_s(s):
        return subst_static(s, theta)

    match e:
        case DVar(_):
            return e
        case DCst(h, s, args):
            s2 = None if s is None else tuple(go_s(x) for x in s)
            return DCst(h, s2, tuple(subst_static_in_dyn(a, theta) for a in args))
        case DTup(fl, a, b):
            return DTup(fl, subst_static_in_dyn(a, theta), subst_static_in_dyn(b, theta))
        case DFst(a):
            return DFst(subst_static_in_dyn(a, theta))
        case DSnd(a):
            return DSnd(subst_static_in_dyn(a, theta))
        case DLam(fl, x, body, ann):
            ann2 = None if ann is None else go_s(ann)
            return DLam(fl, x, subst_static_in_dyn(body, theta), ann2)
        case DApp(fl, f, a):
            return DApp(fl, subst_static_in_dyn(f, theta), subst_static_in_dyn(a, theta))
        case DGuardIn(b):
            return DGuardIn(subst_static_in_dyn(b, theta))
        case DGuardOut(b):
            return DGuardOut(subst_static_in_dyn(b, theta))
        case DAssert(b):
            return DAssert(subst_static_in_dyn(b, theta))
        case DLetAssert(x, rhs, body):
            return DLetAssert(x, subst_static_in_dyn(rhs, theta),
                              subst_static_in_dyn(body, theta))
        case DSLam(a, body):
            a2, body = freshen_svar(a, body)
            th = dict(theta)
            th.pop(a, None)
            return DSLam(a2, subst_static_in_dyn(body, th))
        case DSApp(f, s):
            return DSApp(subst_static_in_dyn(f, theta), go_s(s))
        case DPack(s, body):
            return DPack(go_s(s), subst_static_in_dyn(body, theta))
        case DLetPack(a, x, rhs, body):
            rhs2 = subst_static_in_dyn(rhs, theta)
            a2, body = freshen_svar(a, body)
            th = dict(theta)
            th.pop(a, None)
            return DLetPack(a2, x, rhs2, subst_static_in_dyn(body, th))
        case DLetTup(fl, x1, x2, rhs, body):
            return DLetTup(fl, x1, x2, subst_static_in_dyn(rhs, theta),
                           subst_static_in_dyn(body, theta))
        case DFix(f, body, ann):
            ann2 = None if ann is None else go_s(ann)
            return DFix(f, subst_static_in_dyn(body, theta), ann2)
        case DCase(scrut, clauses):
            scrut2 = subst_static_in_dyn(scrut, theta)
            out = []
            for cl in clauses:
                body = cl.body
                svars = []
                th = dict(theta)
                for a in cl.svars:
                    if a in th or a in repl_fvs:
                        na = f"{a.split('#')[0]}#s{next(_dyn_fresh)}"
                        body = subst_static_in_dyn(body, {a: SVar(na)})
                        svars.append(na)
                    else:
                        svars.append(a)
                    th.pop(a, None)
                out.append(DClause(cl.con, tuple(svars), cl.dvars,
                                   subst_static_in_dyn(body, th)))
            return DCase(scrut2, tuple(out))
        case DAssume(h, body):
            return DAssume(go_s(h), subst_static_in_dyn(body, theta))
    raise TypeError(f"not a dynamic term: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation contexts and decomposition
# ---------------------------------------------------------------------------


ALREADY_VALUE = object()
STUCK = object()


def plug_frame(frame, t: DynTerm) -> DynTerm:
    match frame:
        case ("dcx", head, sargs, left, right):
            return DCst(head, sargs, tuple(left) + (t,) + tuple(right))
        case ("tup", fl, 0, other):
            return DTup(fl, t, other)
        case ("tup", fl, 1, other):
            return DTup(fl, other, t)
        case ("fst",):
            return DFst(t)
        case ("snd",):
            return DSnd(t)
        case ("app", fl, 0, other):
            return DApp(fl, t, other)
        case ("app", fl, 1, other):
            return DApp(fl, other, t)
        case ("guardout",):
            return DGuardOut(t)
        case ("assert",):
            return DAssert(t)
        case ("letassert", x, body):
            return DLetAssert(x, t, body)
        case ("sapp", s):
            return DSApp(t, s)
        case ("pack", s):
            return DPack(s, t)
        case ("letpack", a, x, body):
            return DLetPack(a, x, t, body)
        case ("lettup", fl, x1, x2, body):
            return DLetTup(fl, x1, x2, t, body)
        case ("case", clauses):
            return DCase(t, clauses)
    raise AssertionError(f"bad frame {frame!r}")


def plug(frames, t: DynTerm) -> DynTerm:
    for frame in reversed(frames):
        t = plug_frame(frame, t)
    return t


def is_redex(sig, e: DynTerm) -> bool:
    match e:
        case DFst(DTup(_, a, b)) | DSnd(DTup(_, a, b)):
            return is_value(sig, a) and is_value(sig, b)
        case DApp(_, DLam(_, _, _, _), a):
            return is_value(sig, a)
        case DCst(head, _, args):
            return _dcx_kind(sig, head) == "dcf" and all(is_value(sig, a) for a in args)
        case DGuardOut(DGuardIn(_)):
            return True
        case DSApp(DSLam(_, _), _):
            return True
        case DLetAssert(_, DAssert(v), _):
            return is_value(sig, v)
        case DLetPack(_, _, DPack(_, v), _):
            return is_value(sig, v)
        case DLetTup(_, _, _, DTup(_, a, b), _):
            return is_value(sig, a) and is_value(sig, b)
        case DFix(_, _, _):
            return True
        case DCase(scrut, _):
            return is_value(sig, scrut) and isinstance(scrut, DCst)
        case DAssume(_, _):
            return True
    return False


def decompose(sig, e: DynTerm):
    """Unique decomposition of a closed term into context and redex.

    Returns ALREADY_VALUE, (frames, redex), or (STUCK, frames, subterm).
    """
    if free_dvars(e):
        raise OpenTerm(f"term has free variables: {sorted(free_dvars(e))}")
    return _decompose(sig, e, [])


def _decompose(sig, e, frames):
    if is_value(sig, e):
        return ALREADY_VALUE if not frames else (STUCK, frames, e)

    def descend(child, frame):
        if is_value(sig, child):
            return None
        frames.append(frame)
        return _decompose(sig, child, frames)

    match e:
        case DCst(head, sargs, args):
            for i, a in enumerate(args):
                if not is_value(sig, a):
                    frames.append(("dcx", head, sargs, args[:i], args[i + 1:]))
                    return _decompose(sig, a, frames)
        case DTup(fl, a, b):
            if not is_value(sig, a):
                frames.append(("tup", fl, 0, b))
                return _decompose(sig, a, frames)
            if not is_value(sig, b):
                frames.append(("tup", fl, 1, a))
                return _decompose(sig, b, frames)
        case DFst(a):
            r = descend(a, ("fst",))
            if r is not None:
                return r
        case DSnd(a):
            r = descend(a, ("snd",))
            if r is not None:
                return r
        case DApp(fl, f, a):
            if not is_value(sig, f):
                frames.append(("app", fl, 0, a))
                return _decompose(sig, f, frames)
            if not is_value(sig, a):
                frames.append(("app", fl, 1, f))
                return _decompose(sig, a, frames)
        case DGuardOut(b):
            r = descend(b, ("guardout",))
            if r is not None:
                return r
        case DAssert(b):
            r = descend(b, ("assert",))
            if r is not None:
                return r
        case DLetAssert(x, rhs, body):
            r = descend(rhs, ("letassert", x, body))
            if r is not None:
                return r
        case DSApp(f, s):
            r = descend(f, ("sapp", s))
            if r is not None:
                return r
        case DPack(s, b):
            r = descend(b, ("pack", s))
            if r is not None:
                return r
        case DLetPack(a, x, rhs, body):
            r = descend(rhs, ("letpack", a, x, body))
            if r is not None:
                return r
        case DLetTup(fl, x1, x2, rhs, body):
            r = descend(rhs, ("lettup", fl, x1, x2, body))
            if r is not None:
                return r
        case DCase(scrut, clauses):
            r = descend(scrut, ("case", clauses))
            if r is not None:
                return r
    if is_redex(sig, e):
        return (frames, e)
    return (STUCK, frames, e)


def contract(sig, r: DynTerm) -> DynTerm:
    """One-step reduct of a redex; returns STUCK for undefined delta rules."""
    match r:
        case DFst(DTup(_, v1, _)):
            return v1
        case DSnd(DTup(_, _, v2)):
            return v2
        case DApp(_, DLam(_, x, body, _), v):
            return subst_dyn(body, {x: v})
        case DCst(head, sargs, args):
            rule = sig.delta_rule(head)
            if rule is None:
                return STUCK
            out = rule(sargs, args)
            return STUCK if out is None else out
        case DGuardOut(DGuardIn(body)):
            return body
        case DSApp(DSLam(a, body), s):
            return subst_static_in_dyn(body, {a: s})
        case DLetAssert(x, DAssert(v), body):
            return subst_dyn(body, {x: v})
        case DLetPack(a, x, DPack(s, v), body):
            return subst_static_in_dyn(subst_dyn(body, {x: v}), {a: s})
        case DLetTup(_, x1, x2, DTup(_, v1, v2), body):
            return subst_dyn(body, {x1: v1, x2: v2})
        case DFix(f, body, _):
            return subst_dyn(body, {f: r})
        case DCase(DCst(con, sargs, args), clauses):
            for cl in clauses:
                if cl.con == con:
                    e = cl.body
                    if cl.dvars:
                        e = subst_dyn(e, dict(zip(cl.dvars, args)))
                    if cl.svars:
                        ct = sig.lookup_dcx(con)
                        inst = _pattern_static_args(ct, cl.svars, sargs)
                        e = subst_static_in_dyn(e, inst)
                    return e
            raise MatchFailure(f"no clause matches constructor {con}")
        case DAssume(_, body):
            return body
    raise AssertionError(f"not a redex: {r!r}")


def _pattern_static_args(ct, svars, sargs):
    if sargs is None or len(svars) != len(sargs):
        raise MatchFailure("constructor value lacks the static arguments its "
                           "pattern binds")
    return dict(zip(svars, sargs))


def step(sig, e: DynTerm):
    """One-step reduction; ALREADY_VALUE / STUCK sentinels for normal forms."""
    d = decompose(sig, e)
    if d is ALREADY_VALUE:
        return ALREADY_VALUE
    if d[0] is STUCK:
        return STUCK
    frames, r = d
    out = contract(sig, r)
    if out is STUCK:
        return STUCK
    return plug(frames, out)


@dataclass
class EvalOutcome:
    kind: str  # "value" | "stuck" | "match_failure" | "out_of_fuel"
    term: DynTerm
    steps: int
    trace: list = field(default_factory=list)

    @property
    def is_value(self):
        return self.kind == "value"


def eval_dyn(sig, e: DynTerm, fuel: int = 10000, trace: bool = False) -> EvalOutcome:
    tr = [e] if trace else []
    for i in range(fuel):
        try:
            nxt = step(sig, e)
        except MatchFailure:
            return EvalOutcome("match_failure", e, i, tr)
        if nxt is ALREADY_VALUE:
            return EvalOutcome("value", e, i, tr)
        if nxt is STUCK:
            return EvalOutcome("stuck", e, i, tr)
        e = nxt
        if trace:
            tr.append(e)
    return EvalOutcome("out_of_fuel", e, fuel, tr)


# ---------------------------------------------------------------------------
# Printing and alpha-equivalence
# ---------------------------------------------------------------------------


def dyn_to_sexpr(e: DynTerm):
    match e:
        case DVar(x):
            return pretty_name(x)
        case DCst(h, s, args):
            sx = [h]
            if s:
                sx.append(["@"] + [static_to_sexpr(x) for x in s])
            sx.extend(dyn_to_sexpr(a) for a in args)
            return sx if len(sx) > 1 else h
        case DTup(fl, a, b):
            return [f"tup-{fl or '?'}", dyn_to_sexpr(a), dyn_to_sexpr(b)]
        case DFst(a):
            return ["fst", dyn_to_sexpr(a)]
        case DSnd(a):
            return ["snd", dyn_to_sexpr(a)]
        case DLam(fl, x, body, _):
            return [f"lam-{fl or '?'}", pretty_name(x), dyn_to_sexpr(body)]
        case DApp(fl, f, a):
            return [f"app-{fl or '?'}", dyn_to_sexpr(f), dyn_to_sexpr(a)]
        case DGuardIn(b):
            return ["guard+", dyn_to_sexpr(b)]
        case DGuardOut(b):
            return ["guard-", dyn_to_sexpr(b)]
        case DAssert(b):
            return ["assert", dyn_to_sexpr(b)]
        case DLetAssert(x, rhs, body):
            return ["let-assert", pretty_name(x), dyn_to_sexpr(rhs), dyn_to_sexpr(body)]
        case DSLam(a, body):
            return ["slam", pretty_name(a), dyn_to_sexpr(body)]
        case DSApp(f, s):
            return ["sapp", dyn_to_sexpr(f), static_to_sexpr(s)]
        case DPack(s, body):
            return ["pack", static_to_sexpr(s), dyn_to_sexpr(body)]
        case DLetPack(a, x, rhs, body):
            return ["let-pack", pretty_name(a), pretty_name(x),
                    dyn_to_sexpr(rhs), dyn_to_sexpr(body)]
        case DLetTup(fl, x1, x2, rhs, body):
            return [f"let-tup-{fl}", pretty_name(x1), pretty_name(x2),
                    dyn_to_sexpr(rhs), dyn_to_sexpr(body)]
        case DFix(f, body, _):
            return ["fix", pretty_name(f), dyn_to_sexpr(body)]
        case DCase(scrut, clauses):
            return ["case", dyn_to_sexpr(scrut)] + [
                [cl.con, list(map(pretty_name, cl.svars)),
                 list(map(pretty_name, cl.dvars)), dyn_to_sexpr(cl.body)]
                for cl in clauses]
        case DAssume(h, body):
            return ["assume", static_to_sexpr(h), dyn_to_sexpr(body)]
    raise TypeError(f"not a dynamic term: {e!r}")


def str_dyn(e: DynTerm) -> str:
    return sexpr.dumps(dyn_to_sexpr(e))
