"""Bidirectional type checker for the core language.

Checking is algorithmic: introduction forms check against an expected type,
elimination forms synthesize, and subsumption fires only at
checking/synthesis boundaries and at variable uses (the var rule already
folds subsumption in).  Elided static arguments and existential witnesses
are recovered by first-order unification against declared and expected
types; unification never descends through arithmetic heads, leaving those
comparisons to the constraint solver.

With a proof-enabled signature the same rules run under the p/t discipline:
a judgment whose classifier is a prop is a p-node and may only have
p-premises.  The impossible rule instances (first projection of a
proof-term pair, type-prop pairs, type-prop functions) are rejected with
FlavorViolation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from minats.constraint import (
    Constraint, ConstraintLog, Solver, Verdict, combine, valid,
)
from minats.dynamics import (
    DApp, DAssert, DAssume, DCase, DClause, DCst, DFix, DFst, DGuardIn,
    DGuardOut, DLam, DLetAssert, DLetPack, DLetTup, DPack, DSApp, DSLam, DSnd,
    DTup, DVar, DynTerm, is_value, str_dyn, subst_static_in_dyn,
)
from minats.errors import (
    ArityMismatch, FlavorViolation, FreshnessViolation, GuardUnproven,
    IllSorted, SortError, TypeError_, TypeMismatch, UnboundVar,
    UnprovenConstraint, ValueFormViolation,
)
from minats.signature import SigView
from minats.statics import (
    BOOL, Base, INT, PROP, SCst, SCtx, SLam, SMeta, SVar, Sort, StaticTerm,
    TYPE, free_svars, fresh_name, metas_of, open_term, sort_of,
    static_to_sexpr, subst_metas, subst_static, whnf_static,
)

_meta_counter = itertools.count(1)


@dataclass(frozen=True)
class DCtx:
    """Ordered dynamic variable context; rightmost binding wins."""

    bindings: tuple = ()

    def extend(self, name: str, t: StaticTerm) -> "DCtx":
        return DCtx(self.bindings + ((name, t),))

    def lookup(self, name: str):
        for n, t in reversed(self.bindings):
            if n == name:
                return t
        return None

    def __iter__(self):
        return iter(self.bindings)

    def __len__(self):
        return len(self.bindings)


EMPTY_DCTX = DCtx()


@dataclass(frozen=True)
class Derivation:
    """A typing derivation node: rule name, judgment, children, height."""

    rule: str
    sctx: SCtx
    hyps: tuple
    dctx: DCtx
    term: DynTerm
    type_: StaticTerm
    children: tuple = ()
    height: int = field(init=False, compare=False, default=0)

    def __post_init__(self):
        h = 1 + max((c.height for c in self.children), default=0)
        object.__setattr__(self, "height", h)

    def judgment(self):
        return (self.sctx, self.hyps, self.dctx, self.term, self.type_)

    def iter_nodes(self):
        yield self
        for c in self.children:
            yield from c.iter_nodes()


class CheckSession:
    """One type-checking run: owns unification state and the constraint log."""

    def __init__(self, sig, solver: Solver = None, log: ConstraintLog = None):
        self.sig_base = sig
        self.meta_sorts = {}
        self.meta_solution = {}
        self.sig = SigView(sig, self.meta_sorts)
        self.solver = solver or Solver(self.sig)
        self.log = log if log is not None else ConstraintLog()
        self.unproven = []  # (Constraint, Verdict, origin)
        self._probing = 0
        self.solver.emit_hook = self._emit

    # -- metavariables -------------------------------------------------------

    def fresh_meta(self, sort: Sort, hint="w") -> SMeta:
        m = SMeta(next(_meta_counter))
        self.meta_sorts[m.ident] = sort
        return m

    def zonk(self, t: StaticTerm) -> StaticTerm:
        return whnf_static(subst_metas(t, self.meta_solution))

    def zonk_dyn(self, e: DynTerm) -> DynTerm:
        return _map_statics(e, self.zonk)

    def _resolve(self, t):
        t = whnf_static(t)
        while isinstance(t, SMeta) and t.ident in self.meta_solution:
            t = whnf_static(self.meta_solution[t.ident])
        return t

    def unify(self, a: StaticTerm, b: StaticTerm, sctx: SCtx, forbidden=frozenset()):
        """Best-effort first-order unification; mismatches are left to the
        solver rather than failed.  Never descends through arithmetic heads."""
        a, b = self._resolve(a), self._resolve(b)
        if a == b:
            return
        if isinstance(a, SMeta):
            self._assign(a, b, sctx, forbidden)
            return
        if isinstance(b, SMeta):
            self._assign(b, a, sctx, forbidden)
            return
        if isinstance(a, SCst) and isinstance(b, SCst) and a.head == b.head \
                and len(a.args) == len(b.args) \
                and a.head not in ("add", "sub", "mul", "div"):
            for x, y in zip(a.args, b.args):
                self.unify(x, y, sctx, forbidden)
            return
        if isinstance(a, SLam) and isinstance(b, SLam) and a.sort == b.sort:
            name = fresh_name(a.hint or "a")
            self.unify(open_term(a.body, SVar(name)), open_term(b.body, SVar(name)),
                       sctx.extend(name, a.sort), forbidden | {name})

    def _assign(self, m: SMeta, value: StaticTerm, sctx, forbidden):
        value = self.zonk(value)
        if m.ident in metas_of(value):
            return
        if free_svars(value) & forbidden:
            return
        want = self.meta_sorts.get(m.ident)
        if want is not None:
            try:
                if sort_of(self.sig, sctx, value) != want:
                    return
            except SortError:
                return
        self.meta_solution[m.ident] = value

    # -- solver wrappers -------------------------------------------------------

    def entails(self, sctx, hyps, goal, origin="") -> Verdict:
        goal = self.zonk(goal)
        hyps = tuple(self.zonk(h) for h in hyps)
        match goal:
            case SCst(("eq" | "ne"), (a, b)):
                ra, rb = self._resolve(a), self._resolve(b)
                if isinstance(ra, SMeta) or isinstance(rb, SMeta):
                    self.unify(ra, rb, sctx)
                    goal = self.zonk(goal)
        c = Constraint(sctx, hyps, goal)
        if metas_of(goal) or any(metas_of(h) for h in hyps):
            raise TypeError_(
                f"cannot infer static arguments in constraint {c}; "
                "annotate them explicitly")
        v = self.solver.entails(c)
        self._record(c, v, origin)
        return v

    def subtype(self, sctx, hyps, t_lo, t_hi, origin="") -> Verdict:
        self.unify(t_lo, t_hi, sctx)
        t_lo, t_hi = self.zonk(t_lo), self.zonk(t_hi)
        hyps = tuple(self.zonk(h) for h in hyps)
        layer = self.classify(sctx, t_lo)
        goal = SCst("subty" if layer == "t" else "subpr", (t_lo, t_hi))
        if metas_of(t_lo) or metas_of(t_hi):
            raise TypeError_(
                f"cannot infer static arguments in {static_to_sexpr(goal)}")
        if layer == "t":
            v = self.solver.subtype_ty(sctx, hyps, t_lo, t_hi)
        else:
            v = self.solver.subtype_pr(sctx, hyps, t_lo, t_hi)
        self._record(Constraint(sctx, hyps, goal), v, origin)
        return v

    def _record(self, c, v, origin):
        if not self._probing:
            self.log.record(c, v, origin)
            if v.is_unknown:
                self.unproven.append((c, v, origin))

    def _emit(self, c, v):
        if not self._probing:
            self.log.record_solver(c, v)

    # -- sorting helpers --------------------------------------------------------

    def sort_of(self, sctx, t) -> Sort:
        try:
            return sort_of(self.sig, sctx, self.zonk(t))
        except SortError as e:
            raise TypeError_(str(e)) from e

    def classify(self, sctx, t) -> str:
        s = self.sort_of(sctx, t)
        if s == TYPE:
            return "t"
        if s == PROP:
            return "p"
        raise TypeError_(f"classifier has sort {s}, expected type or prop: "
                         f"{static_to_sexpr(self.zonk(t))}")

    def pair_flavor(self, ca, cb) -> str:
        if ca == "p" and cb == "p":
            return "pp"
        if ca == "p" and cb == "t":
            return "pt"
        if ca == "t" and cb == "t":
            return "tt"
        raise FlavorViolation("there are no type-prop pairs")

    def app_flavor(self, carg, cres) -> str:
        if carg == "p" and cres == "p":
            return "pp"
        if carg == "p" and cres == "t":
            return "tp"
        if carg == "t" and cres == "t":
            return "tt"
        raise FlavorViolation("there are no type-prop functions")

    # -- checking ---------------------------------------------------------------

    def check(self, sctx, hyps, dctx, e: DynTerm, expected: StaticTerm):
        """Check `e` against `expected`; returns (elaborated term, derivation)."""
        t = self.zonk(expected)

        # Forms that push the expected type inward.
        match e:
            case DCase(_, _) | DLetAssert(_, _, _) | DLetPack(_, _, _, _) | \
                    DLetTup(_, _, _, _, _) | DAssume(_, _):
                return self._check_push(sctx, hyps, dctx, e, t)
            case DApp(_, DLam(_, _, _, None), _):
                return self._check_let_app(sctx, hyps, dctx, e, t)
            case DFix(_, _, _):
                return self._check_fix(sctx, hyps, dctx, e, t)

        match t, e:
            case SCst("fun", (a, b)), DLam(fl, x, body, ann):
                return self._check_lam(sctx, hyps, dctx, e, t, a, b)
            case SCst("tup", (a, b)), DTup(fl, e1, e2):
                ca, cb = self.classify(sctx, a), self.classify(sctx, b)
                flavor = self.pair_flavor(ca, cb)
                if fl is not None and fl != flavor:
                    raise FlavorViolation(
                        f"pair written as {fl} but typed as {flavor}")
                e1p, d1 = self.check(sctx, hyps, dctx, e1, a)
                e2p, d2 = self.check(sctx, hyps, dctx, e2, b)
                term = DTup(flavor, e1p, e2p)
                return term, Derivation(f"ty-tup-{flavor}", sctx, hyps, dctx,
                                        term, t, (d1, d2))
            case SCst("asrt", (b, t0)), DAssert(body):
                v = self.entails(sctx, hyps, b, "assert-intro")
                self._require(v, sctx, hyps, b, "asserted condition")
                ep, d = self.check(sctx, hyps, dctx, body, t0)
                term = DAssert(ep)
                return term, Derivation("ty-and-intr", sctx, hyps, dctx, term, t, (d,))
            case SCst("guard", (b, t0)), DGuardIn(body):
                ep, d = self.check(sctx, hyps + (whnf_static(b),), dctx, body, t0)
                term = DGuardIn(ep)
                return term, Derivation("ty-guard-intr", sctx, hyps, dctx, term, t, (d,))
            case SCst("forall", (SLam() as lam,)), DSLam(a, body):
                a2 = fresh_name(a)
                body2 = subst_static_in_dyn(body, {a: SVar(a2)})
                t_open = whnf_static(open_term(lam.body, SVar(a2)))
                ep, d = self.check(sctx.extend(a2, lam.sort), hyps, dctx, body2, t_open)
                term = DSLam(a2, ep)
                return term, Derivation("ty-forall-intr", sctx, hyps, dctx, term, t, (d,))
            case SCst("exists", (SLam() as lam,)), DPack(s, body):
                self._check_static_sort(sctx, s, lam.sort)
                t_open = whnf_static(open_term(lam.body, s))
                ep, d = self.check(sctx, hyps, dctx, body, t_open)
                term = DPack(s, ep)
                return term, Derivation("ty-exists-intr", sctx, hyps, dctx, term, t, (d,))
            case SCst("exists", (SLam() as lam,)), _ if not self._synths_head(
                    sctx, hyps, dctx, e, "exists"):
                # Witness inference: pack with a fresh unification variable.
                m = self.fresh_meta(lam.sort)
                t_open = whnf_static(open_term(lam.body, m))
                ep, d = self.check(sctx, hyps, dctx, e, t_open)
                w = self.zonk(m)
                if metas_of(w):
                    raise TypeError_(
                        "cannot infer the existential witness; "
                        "write the pack explicitly")
                term = DPack(w, ep)
                d = _rebuild(d, self)
                return term, Derivation("ty-exists-intr", sctx, hyps, dctx,
                                        term, self.zonk(t), (d,))
            case SCst("asrt", (b, t0)), _ if not self._synths_head(
                    sctx, hyps, dctx, e, "asrt"):
                # Assertion introduction is implicit in the surface language.
                v = self.entails(sctx, hyps, b, "assert-intro")
                self._require(v, sctx, hyps, b, "asserted condition")
                ep, d = self.check(sctx, hyps, dctx, e, t0)
                term = DAssert(ep)
                return term, Derivation("ty-and-intr", sctx, hyps, dctx, term,
                                        self.zonk(t), (d,))
            case SCst("guard", (b, t0)), _ if not self._synths_head(
                    sctx, hyps, dctx, e, "guard"):
                ep, d = self.check(sctx, hyps + (whnf_static(b),), dctx, e, t0)
                if not is_value(self.sig, ep):
                    raise ValueFormViolation(
                        "guard introduction around a non-value")
                term = DGuardIn(ep)
                return term, Derivation("ty-guard-intr", sctx, hyps, dctx, term,
                                        self.zonk(t), (d,))

        if isinstance(e, DCst) and e.sargs is None:
            return self._check_dcst(sctx, hyps, dctx, e, t)
        if isinstance(e, DLam) and e.ann is None:
            raise TypeMismatch(
                f"lambda checked against non-arrow type {static_to_sexpr(t)}")

        ep, t_syn, d = self.synth(sctx, hyps, dctx, e)
        return self._coerce(sctx, hyps, dctx, ep, t_syn, t, d)

    def _coerce(self, sctx, hyps, dctx, ep, t_syn, t_want, d):
        t_syn, t_want = self.zonk(t_syn), self.zonk(t_want)
        if t_syn == t_want:
            return ep, d
        v = self.subtype(sctx, hyps, t_syn, t_want, "subsumption")
        t_syn, t_want = self.zonk(t_syn), self.zonk(t_want)
        if v.is_invalid:
            raise TypeMismatch(
                f"{static_to_sexpr(t_syn)} is not a subtype of "
                f"{static_to_sexpr(t_want)}: {v.cex}")
        if t_syn == t_want:
            return ep, d
        layer = self.classify(sctx, t_want)
        rule = "ty-sub-p" if layer == "p" else "ty-sub-t"
        return ep, Derivation(rule, sctx, hyps, dctx, ep, t_want, (d,))

    def _require(self, v: Verdict, sctx, hyps, goal, what):
        if v.is_invalid:
            raise GuardUnproven(
                f"{what} is refuted: {static_to_sexpr(self.zonk(goal))} "
                f"({v.cex})")
        # Unknown verdicts are collected; checking continues and the caller
        # decides whether unproven obligations are fatal.

    # -- checking: special forms -------------------------------------------------

    def _check_push(self, sctx, hyps, dctx, e, t):
        match e:
            case DCase(scrut, clauses):
                term, _, d = self._case(sctx, hyps, dctx, scrut, clauses, expected=t)
                return term, d
            case DLetAssert(x, rhs, body):
                rp, t_rhs, d_rhs = self.synth(sctx, hyps, dctx, rhs)
                t_rhs = self.zonk(t_rhs)
                match t_rhs:
                    case SCst("asrt", (b, t1)):
                        pass
                    case _:
                        raise TypeMismatch(
                            f"let-assert scrutinee has type "
                            f"{static_to_sexpr(t_rhs)}, not an asserting type")
                ep, d = self.check(sctx, hyps + (whnf_static(b),),
                                   dctx.extend(x, t1), body, t)
                term = DLetAssert(x, rp, ep)
                return term, Derivation("ty-and-elim", sctx, hyps, dctx, term,
                                        self.zonk(t), (d_rhs, d))
            case DLetPack(a, x, rhs, body):
                rp, t_rhs, d_rhs = self.synth(sctx, hyps, dctx, rhs)
                t_rhs = self.zonk(t_rhs)
                match t_rhs:
                    case SCst("exists", (SLam() as lam,)):
                        pass
                    case _:
                        raise TypeMismatch(
                            f"let-pack scrutinee has type "
                            f"{static_to_sexpr(t_rhs)}, not an existential")
                a2 = fresh_name(a)
                body2 = subst_static_in_dyn(body, {a: SVar(a2)})
                t1 = whnf_static(open_term(lam.body, SVar(a2)))
                if a2 in free_svars(self.zonk(t)):
                    raise FreshnessViolation(
                        "existential variable escapes its scope")
                ep, d = self.check(sctx.extend(a2, lam.sort), hyps,
                                   dctx.extend(x, t1), body2, t)
                term = DLetPack(a2, x, rp, ep)
                return term, Derivation("ty-exists-elim", sctx, hyps, dctx, term,
                                        self.zonk(t), (d_rhs, d))
            case DLetTup(fl, x1, x2, rhs, body):
                rp, t_rhs, d_rhs = self.synth(sctx, hyps, dctx, rhs)
                t_rhs = self.zonk(t_rhs)
                if _head(t_rhs) == "exists":
                    # Auto-unpack: the pair lives under an existential.
                    a2 = fresh_name("r")
                    z = f"z#{next(_meta_counter)}"
                    inner = DLetTup(fl, x1, x2, DVar(z), body)
                    return self._check_push(
                        sctx, hyps, dctx, DLetPack(a2, z, rhs, inner), t)
                match t_rhs:
                    case SCst("tup", (p1, t2)):
                        pass
                    case _:
                        raise TypeMismatch(
                            f"pair-let scrutinee has type "
                            f"{static_to_sexpr(t_rhs)}, not a pair")
                c1, c2 = self.classify(sctx, p1), self.classify(sctx, t2)
                flavor = self.pair_flavor(c1, c2)
                if flavor != "pt":
                    raise FlavorViolation(
                        "pair-let eliminates proof-term pairs only; use "
                        "projections for term pairs")
                if self.classify(sctx, t) != "t":
                    raise FlavorViolation(
                        "the body of a proof-term pair elimination must be "
                        "a term, not a proof")
                ep, d = self.check(sctx, hyps, dctx.extend(x1, p1).extend(x2, t2),
                                   body, t)
                term = DLetTup("pt", x1, x2, rp, ep)
                return term, Derivation("ty-tup-elim-pt", sctx, hyps, dctx, term,
                                        self.zonk(t), (d_rhs, d))
            case DAssume(b, body):
                self._check_static_sort(sctx, b, BOOL)
                from minats.constraint import assume_internalized
                hyps2 = assume_internalized(self.sig, sctx, hyps, b)
                ep, d = self.check(sctx, hyps2, dctx, body, t)
                term = DAssume(b, ep)
                return term, Derivation("ty-assume", sctx, hyps, dctx, term,
                                        self.zonk(t), (d,))
        raise AssertionError

    def _check_let_app(self, sctx, hyps, dctx, e, t):
        """`app(lam x. body, rhs)` is a let; synthesize the bound term first."""
        lam = e.fun
        rp, t_rhs, d_rhs = self.synth(sctx, hyps, dctx, e.arg)
        t_rhs = self.zonk(t_rhs)
        if _head(t_rhs) == "exists":
            a2 = fresh_name("r")
            z = f"z#{next(_meta_counter)}"
            inner = DApp(e.flavor, lam, DVar(z))
            return self._check_push(sctx, hyps, dctx,
                                    DLetPack(a2, z, rp, inner), t)
        carg = self.classify(sctx, t_rhs)
        cres = self.classify(sctx, t)
        flavor = self.app_flavor(carg, cres)
        lam_flavor = self.pair_flavor(carg, cres) if carg == "p" or cres == "p" \
            else "tt"
        ep, d = self.check(sctx, hyps, dctx.extend(lam.var, t_rhs), lam.body, t)
        if lam_flavor == "pt" and not is_value(self.sig, ep):
            raise ValueFormViolation(
                "a proof-argument function body must be a value")
        lam2 = DLam(lam_flavor, lam.var, ep, t_rhs)
        term = DApp(flavor, lam2, rp)
        d_lam = Derivation(f"ty-lam-{lam_flavor}", sctx, hyps, dctx, lam2,
                           SCst("fun", (t_rhs, self.zonk(t))), (d,))
        return term, Derivation(f"ty-app-{flavor}", sctx, hyps, dctx, term,
                                self.zonk(t), (d_lam, d_rhs))

    def _check_lam(self, sctx, hyps, dctx, e, t, a, b):
        ca, cb = self.classify(sctx, a), self.classify(sctx, b)
        flavor = self.pair_flavor(ca, cb) if ca == "p" or cb == "p" else "tt"
        if e.flavor is not None and e.flavor != flavor:
            raise FlavorViolation(f"lambda written as {e.flavor} but typed as {flavor}")
        bind_t = a
        if e.ann is not None:
            v = self.subtype(sctx, hyps, a, e.ann, "param-annotation")
            if v.is_invalid:
                raise TypeMismatch(
                    f"parameter annotation {static_to_sexpr(self.zonk(e.ann))} "
                    f"does not admit argument type {static_to_sexpr(self.zonk(a))}")
            bind_t = e.ann
        ep, d = self.check(sctx, hyps, dctx.extend(e.var, bind_t), e.body, b)
        if flavor == "pt" and not is_value(self.sig, ep):
            raise ValueFormViolation(
                "a proof-argument function body must be a value")
        term = DLam(flavor, e.var, ep, e.ann)
        return term, Derivation(f"ty-lam-{flavor}", sctx, hyps, dctx, term,
                                self.zonk(t), (d,))

    def _check_fix(self, sctx, hyps, dctx, e, t):
        ann = e.ann if e.ann is not None else t
        v = valid()
        if self.zonk(ann) != self.zonk(t):
            v = self.subtype(sctx, hyps, ann, t, "fix-annotation")
            if v.is_invalid:
                raise TypeMismatch("fix annotation does not match expected type")
        ep, d = self.check(sctx, hyps, dctx.extend(e.var, ann), e.body, ann)
        if not is_value(self.sig, ep):
            raise ValueFormViolation("fix body must be a value")
        term = DFix(e.var, ep, self.zonk(ann))
        return term, Derivation("ty-fix", sctx, hyps, dctx, term, self.zonk(t), (d,))

    def _check_static_sort(self, sctx, s, expected_sort):
        got = self.sort_of(sctx, s)
        if got != expected_sort:
            raise TypeError_(
                f"static argument {static_to_sexpr(self.zonk(s))} has sort "
                f"{got}, expected {expected_sort}")

    # -- synthesis -----------------------------------------------------------------

    def synth(self, sctx, hyps, dctx, e: DynTerm):
        """Synthesize a type; returns (elaborated term, type, derivation)."""
        match e:
            case DVar(x):
                t = dctx.lookup(x)
                if t is None:
                    raise UnboundVar(f"unbound variable {x}")
                return e, t, Derivation("ty-var'", sctx, hyps, dctx, e, t)
            case DCst(_, _, _):
                return self._synth_dcst(sctx, hyps, dctx, e, expected=None)
            case DTup(fl, e1, e2):
                e1p, t1, d1 = self.synth(sctx, hyps, dctx, e1)
                e2p, t2, d2 = self.synth(sctx, hyps, dctx, e2)
                c1, c2 = self.classify(sctx, t1), self.classify(sctx, t2)
                flavor = self.pair_flavor(c1, c2)
                if fl is not None and fl != flavor:
                    raise FlavorViolation(
                        f"pair written as {fl} but typed as {flavor}")
                term = DTup(flavor, e1p, e2p)
                t = SCst("tup", (self.zonk(t1), self.zonk(t2)))
                return term, t, Derivation(f"ty-tup-{flavor}", sctx, hyps, dctx,
                                           term, t, (d1, d2))
            case DFst(arg) | DSnd(arg):
                first = isinstance(e, DFst)
                ap, t_pair, d = self.synth(sctx, hyps, dctx, arg)
                t_pair = self.zonk(t_pair)
                match t_pair:
                    case SCst("tup", (t1, t2)):
                        pass
                    case _:
                        raise TypeMismatch(
                            f"projection from non-pair type {static_to_sexpr(t_pair)}")
                c1, c2 = self.classify(sctx, t1), self.classify(sctx, t2)
                flavor = self.pair_flavor(c1, c2)
                if flavor == "pt":
                    raise FlavorViolation(
                        "projections from a proof-term pair are invalid; "
                        "eliminate it with a pair-let")
                term = DFst(ap) if first else DSnd(ap)
                t = t1 if first else t2
                rule = ("ty-fst-" if first else "ty-snd-") + flavor
                return term, t, Derivation(rule, sctx, hyps, dctx, term, t, (d,))
            case DLam(_, x, body, ann):
                if ann is None:
                    raise TypeError_(
                        "cannot synthesize the type of an unannotated lambda")
                ep, t2, d = self.synth(sctx, hyps, dctx.extend(x, ann), body)
                ca, cb = self.classify(sctx, ann), self.classify(sctx, t2)
                flavor = self.pair_flavor(ca, cb) if ca == "p" or cb == "p" else "tt"
                term = DLam(flavor, x, ep, ann)
                t = SCst("fun", (ann, self.zonk(t2)))
                return term, t, Derivation(f"ty-lam-{flavor}", sctx, hyps, dctx,
                                           term, t, (d,))
            case DApp(_, _, _):
                return self._synth_app(sctx, hyps, dctx, e)
            case DGuardOut(body):
                bp, t_body, d = self.synth(sctx, hyps, dctx, body)
                t_body = self.zonk(t_body)
                match t_body:
                    case SCst("guard", (b, t0)):
                        pass
                    case _:
                        raise TypeMismatch(
                            f"guard elimination on type {static_to_sexpr(t_body)}")
                v = self.entails(sctx, hyps, b, "guard-elim")
                self._require(v, sctx, hyps, b, "guard")
                term = DGuardOut(bp)
                return term, t0, Derivation("ty-guard-elim", sctx, hyps, dctx,
                                            term, t0, (d,))
            case DAssert(body):
                raise TypeError_(
                    "cannot synthesize an asserting introduction; a checked "
                    "position is required")
            case DSLam(_, _):
                raise TypeError_(
                    "cannot synthesize the type of a static lambda; a checked "
                    "position is required")
            case DSApp(fun, s):
                fp, t_fun, d = self.synth(sctx, hyps, dctx, fun)
                t_fun = self.zonk(t_fun)
                match t_fun:
                    case SCst("forall", (SLam() as lam,)):
                        pass
                    case _:
                        raise TypeMismatch(
                            f"static application to non-quantified type "
                            f"{static_to_sexpr(t_fun)}")
                self._check_static_sort(sctx, s, lam.sort)
                t = whnf_static(open_term(lam.body, s))
                term = DSApp(fp, s)
                return term, t, Derivation("ty-forall-elim", sctx, hyps, dctx,
                                           term, t, (d,))
            case DPack(_, _):
                raise TypeError_(
                    "cannot synthesize a pack; a checked position is required")
            case DCase(scrut, clauses):
                term, t, d = self._case(sctx, hyps, dctx, scrut, clauses, expected=None)
                return term, t, d
            case DLetAssert(_, _, _) | DLetPack(_, _, _, _) | DLetTup(_, _, _, _, _) | \
                    DAssume(_, _) | DFix(_, _, _):
                return self._synth_via_push(sctx, hyps, dctx, e)
        raise TypeError_(f"cannot type {str_dyn(e)}")

    def _synth_via_push(self, sctx, hyps, dctx, e):
        match e:
            case DFix(_, _, ann) if ann is not None:
                ep, d = self._check_fix(sctx, hyps, dctx, e, ann)
                return ep, self.zonk(ann), d
            case DFix(_, _, _):
                raise TypeError_("cannot synthesize the type of an unannotated fix")
            case DLetAssert(x, rhs, body):
                rp, t_rhs, d_rhs = self.synth(sctx, hyps, dctx, rhs)
                t_rhs = self.zonk(t_rhs)
                match t_rhs:
                    case SCst("asrt", (b, t1)):
                        pass
                    case _:
                        raise TypeMismatch(
                            f"let-assert scrutinee has type "
                            f"{static_to_sexpr(t_rhs)}, not an asserting type")
                ep, t2, d = self.synth(sctx, hyps + (whnf_static(b),),
                                       dctx.extend(x, t1), body)
                term = DLetAssert(x, rp, ep)
                return term, t2, Derivation("ty-and-elim", sctx, hyps, dctx, term,
                                            self.zonk(t2), (d_rhs, d))
            case DLetPack(a, x, rhs, body):
                rp, t_rhs, d_rhs = self.synth(sctx, hyps, dctx, rhs)
                t_rhs = self.zonk(t_rhs)
                match t_rhs:
                    case SCst("exists", (SLam() as lam,)):
                        pass
                    case _:
                        raise TypeMismatch(
                            f"let-pack scrutinee has type "
                            f"{static_to_sexpr(t_rhs)}, not an existential")
                a2 = fresh_name(a)
                body2 = subst_static_in_dyn(body, {a: SVar(a2)})
                t1 = whnf_static(open_term(lam.body, SVar(a2)))
                ep, t2, d = self.synth(sctx.extend(a2, lam.sort), hyps,
                                       dctx.extend(x, t1), body2)
                t2 = self.zonk(t2)
                if a2 in free_svars(t2):
                    raise FreshnessViolation(
                        "existential variable escapes into the result type")
                term = DLetPack(a2, x, rp, ep)
                return term, t2, Derivation("ty-exists-elim", sctx, hyps, dctx,
                                            term, t2, (d_rhs, d))
            case DAssume(b, body):
                self._check_static_sort(sctx, b, BOOL)
                from minats.constraint import assume_internalized
                hyps2 = assume_internalized(self.sig, sctx, hyps, b)
                ep, t2, d = self.synth(sctx, hyps2, dctx, body)
                term = DAssume(b, ep)
                return term, t2, Derivation("ty-assume", sctx, hyps, dctx, term,
                                            self.zonk(t2), (d,))
            case DLetTup(_, _, _, _, _):
                raise TypeError_(
                    "cannot synthesize the type of a pair-let; a checked "
                    "position is required")
        raise AssertionError

    # -- constants ---------------------------------------------------------------

    def _check_dcst(self, sctx, hyps, dctx, e, t):
        ep, t_syn, d = self._synth_dcst(sctx, hyps, dctx, e, expected=t)
        return self._coerce(sctx, hyps, dctx, ep, t_syn, t, d)

    def _synth_dcst(self, sctx, hyps, dctx, e: DCst, expected):
        ct = self._lookup_dcx(e.head)
        if len(e.args) != len(ct.args):
            raise ArityMismatch(
                f"{e.head} takes {len(ct.args)} arguments, got {len(e.args)}")
        if e.sargs is not None:
            if len(e.sargs) != len(ct.qvars):
                raise ArityMismatch(
                    f"{e.head} takes {len(ct.qvars)} static arguments, "
                    f"got {len(e.sargs)}")
            for s, (_, srt) in zip(e.sargs, ct.qvars):
                self._check_static_sort(sctx, s, srt)
            sargs = tuple(e.sargs)
        else:
            sargs = tuple(self.fresh_meta(srt, hint=n) for n, srt in ct.qvars)
            guards0, args0, result0 = ct.instantiate(sargs)
            if expected is not None:
                self.unify(result0, expected, sctx)
            for raw, want in zip(e.args, args0):
                got = self._probe_synth(sctx, hyps, dctx, raw)
                if got is not None:
                    self.unify(want, got, sctx)
            sargs = tuple(self.zonk(s) for s in sargs)
            bad = [s for s in sargs if metas_of(s)]
            if bad:
                raise TypeError_(
                    f"cannot infer the static arguments of {e.head}; "
                    "annotate them explicitly")
        guards, arg_ts, result = ct.instantiate(sargs)
        children = []
        for g in guards:
            v = self.entails(sctx, hyps, g, f"guard-of-{e.head}")
            self._require(v, sctx, hyps, g, f"guard of {e.head}")
        args_p = []
        for raw, want in zip(e.args, arg_ts):
            ap, d = self.check(sctx, hyps, dctx, raw, want)
            args_p.append(ap)
            children.append(d)
        term = DCst(e.head, sargs, tuple(args_p))
        result = self.zonk(result)
        return term, result, Derivation("ty-dcx", sctx, hyps, dctx, term,
                                        result, tuple(children))

    def _lookup_dcx(self, head):
        try:
            return self.sig.lookup_dcx(head)
        except Exception as ex:
            raise UnboundVar(str(ex)) from ex

    def _probe_synth(self, sctx, hyps, dctx, e):
        """Attempt synthesis without logging; used to drive unification."""
        saved = dict(self.meta_solution)
        self._probing += 1
        try:
            _, t, _ = self.synth(sctx, hyps, dctx, e)
            return self.zonk(t)
        except (TypeError_, FlavorViolation, ValueFormViolation, IllSorted):
            self.meta_solution.clear()
            self.meta_solution.update(saved)
            return None
        finally:
            self._probing -= 1

    def _synths_head(self, sctx, hyps, dctx, e, head):
        """Does `e` already synthesize a type with this head?  Decides whether
        an implicit introduction should fire or subsumption should handle it."""
        saved = dict(self.meta_solution)
        self._probing += 1
        try:
            _, t, _ = self.synth(sctx, hyps, dctx, e)
            return _head(self.zonk(t)) == head
        except (TypeError_, FlavorViolation, ValueFormViolation, IllSorted):
            return False
        finally:
            self.meta_solution.clear()
            self.meta_solution.update(saved)
            self._probing -= 1

    # -- applications ---------------------------------------------------------------

    def _synth_app(self, sctx, hyps, dctx, e: DApp):
        if isinstance(e.fun, DLam) and e.fun.ann is None:
            # let-encoding in synthesis position
            rp, t_rhs, d_rhs = self.synth(sctx, hyps, dctx, e.arg)
            t_rhs = self.zonk(t_rhs)
            if _head(t_rhs) == "exists":
                a2 = fresh_name("r")
                z = f"z#{next(_meta_counter)}"
                inner = DApp(e.flavor, e.fun, DVar(z))
                return self._synth_via_push(
                    sctx, hyps, dctx, DLetPack(a2, z, rp, inner))
            ep, t2, d = self.synth(sctx, hyps, dctx.extend(e.fun.var, t_rhs),
                                   e.fun.body)
            carg = self.classify(sctx, t_rhs)
            cres = self.classify(sctx, t2)
            flavor = self.app_flavor(carg, cres)
            lam_flavor = self.pair_flavor(carg, cres) if carg == "p" or cres == "p" \
                else "tt"
            if lam_flavor == "pt" and not is_value(self.sig, ep):
                raise ValueFormViolation(
                    "a proof-argument function body must be a value")
            lam2 = DLam(lam_flavor, e.fun.var, ep, t_rhs)
            term = DApp(flavor, lam2, rp)
            t2z = self.zonk(t2)
            d_lam = Derivation(f"ty-lam-{lam_flavor}", sctx, hyps, dctx, lam2,
                               SCst("fun", (t_rhs, t2z)), (d,))
            return term, t2z, Derivation(f"ty-app-{flavor}", sctx, hyps, dctx,
                                         term, t2z, (d_lam, d_rhs))

        fp, t_fun, d = self.synth(sctx, hyps, dctx, e.fun)
        fp, t_fun, d, deferred = self._auto_eliminate(sctx, hyps, dctx, fp, t_fun, d)
        t_fun = self.zonk(t_fun)
        match t_fun:
            case SCst("fun", (t_arg, t_res)):
                pass
            case _:
                raise TypeMismatch(
                    f"application of non-function type {static_to_sexpr(t_fun)}")
        ap, d_arg = self.check(sctx, hyps, dctx, e.arg, t_arg)
        for g in deferred:
            gz = self.zonk(g)
            if metas_of(gz):
                raise TypeError_(
                    "cannot infer the static arguments of an application; "
                    "annotate them explicitly")
            v = self.entails(sctx, hyps, gz, "guard-elim")
            self._require(v, sctx, hyps, gz, "guard")
        carg = self.classify(sctx, t_arg)
        cres = self.classify(sctx, t_res)
        flavor = self.app_flavor(carg, cres)
        if e.flavor is not None and e.flavor != flavor:
            raise FlavorViolation(
                f"application written as {e.flavor} but typed as {flavor}")
        term = DApp(flavor, fp, ap)
        t_res = self.zonk(t_res)
        return term, t_res, Derivation(f"ty-app-{flavor}", sctx, hyps, dctx,
                                       term, t_res, (d, d_arg))

    def _auto_eliminate(self, sctx, hyps, dctx, fp, t_fun, d):
        """Instantiate quantifiers and guards in elimination position.

        Explicit core terms are unaffected (their function types are already
        arrows); this only fires on surface-elided instantiations.  Guard
        discharges are deferred until unification has seen the argument.
        """
        deferred = []
        while True:
            t_fun = self.zonk(t_fun)
            match t_fun:
                case SCst("forall", (SLam() as lam,)):
                    m = self.fresh_meta(lam.sort, hint=lam.hint or "a")
                    t_fun = whnf_static(open_term(lam.body, m))
                    fp = DSApp(fp, m)
                    d = Derivation("ty-forall-elim", sctx, hyps, dctx, fp, t_fun, (d,))
                case SCst("guard", (b, t0)):
                    deferred.append(b)
                    t_fun = t0
                    fp = DGuardOut(fp)
                    d = Derivation("ty-guard-elim", sctx, hyps, dctx, fp, t_fun, (d,))
                case _:
                    return fp, t_fun, d, deferred

    # -- case ------------------------------------------------------------------------

    def _case(self, sctx, hyps, dctx, scrut, clauses, expected):
        """GADT-style case: pattern variables refine the scrutinee's indices.

        Always returns (term, type, derivation).
        """
        sp, t_scrut, d_scrut = self.synth(sctx, hyps, dctx, scrut)
        t_scrut = self.zonk(t_scrut)
        if self.classify(sctx, t_scrut) != "t":
            raise FlavorViolation("case scrutinee must be a term, not a proof")
        match t_scrut:
            case SCst(scc, s_indices) if scc not in (
                    "fun", "tup", "asrt", "guard", "forall", "exists"):
                pass
            case _:
                raise TypeMismatch(
                    f"case scrutinee has non-constructor type "
                    f"{static_to_sexpr(t_scrut)}")
        children = [d_scrut]
        new_clauses = []
        result_t = expected
        for cl in clauses:
            ct = self._lookup_dcx(cl.con)
            if ct.kind != "dcc" or ct.scc != scc:
                raise TypeMismatch(
                    f"pattern constructor {cl.con} does not belong to {scc}")
            if len(cl.svars) != len(ct.qvars):
                raise ArityMismatch(
                    f"pattern {cl.con} binds {len(cl.svars)} static variables, "
                    f"constructor has {len(ct.qvars)}")
            if len(cl.dvars) != len(ct.args):
                raise ArityMismatch(
                    f"pattern {cl.con} binds {len(cl.dvars)} variables, "
                    f"constructor has {len(ct.args)}")
            fresh = [fresh_name(a) for a in cl.svars]
            body = subst_static_in_dyn(
                cl.body, {a: SVar(f) for a, f in zip(cl.svars, fresh)})
            guards, arg_ts, result = ct.instantiate(tuple(SVar(f) for f in fresh))
            # Unify result indices with the scrutinee's: a bare pattern
            # variable is substituted away, everything else becomes an
            # equation assumption for the clause body.
            theta = {}
            equations = []
            result = whnf_static(result)
            for r_i, s_i in zip(result.args, s_indices):
                r_i = whnf_static(subst_static(r_i, theta))
                if isinstance(r_i, SVar) and r_i.name in fresh and r_i.name not in theta:
                    theta[r_i.name] = s_i
                else:
                    equations.append(whnf_static(subst_static(
                        SCst("eq", (s_i, r_i)), theta)))
            sctx2 = sctx
            for f, (_, srt) in zip(fresh, ct.qvars):
                if f not in theta:
                    sctx2 = sctx2.extend(f, srt)
            hyps2 = hyps + tuple(whnf_static(subst_static(g, theta)) for g in guards) \
                + tuple(equations)
            arg_ts = tuple(whnf_static(subst_static(a, theta)) for a in arg_ts)
            body = subst_static_in_dyn(body, theta)
            dctx2 = dctx
            for x, a_t in zip(cl.dvars, arg_ts):
                dctx2 = dctx2.extend(x, a_t)
            if result_t is None:
                bp, t_b, d_b = self.synth(sctx2, hyps2, dctx2, body)
                t_b = self.zonk(t_b)
                leak = free_svars(t_b) & set(fresh)
                if leak:
                    raise FreshnessViolation(
                        "pattern variables escape into the case result type")
                result_t = t_b
            else:
                bp, d_b = self.check(sctx2, hyps2, dctx2, body, result_t)
            children.append(d_b)
            # The clause keeps all its binders: a matching value carries one
            # static argument per quantified variable of the constructor.
            new_clauses.append(DClause(cl.con, tuple(fresh), cl.dvars, bp))
        if result_t is None:
            raise TypeError_("empty case in synthesis position")
        term = DCase(sp, tuple(new_clauses))
        t = self.zonk(result_t)
        return term, t, Derivation("ty-case", sctx, hyps, dctx, term, t,
                                   tuple(children))


def _head(t):
    return t.head if isinstance(t, SCst) else None


def _map_statics(e: DynTerm, f) -> DynTerm:
    """Apply `f` to every static term embedded in `e`."""
    match e:
        case DVar(_):
            return e
        case DCst(h, s, args):
            s2 = None if s is None else tuple(f(x) for x in s)
            return DCst(h, s2, tuple(_map_statics(a, f) for a in args))
        case DTup(fl, a, b):
            return DTup(fl, _map_statics(a, f), _map_statics(b, f))
        case DFst(a):
            return DFst(_map_statics(a, f))
        case DSnd(a):
            return DSnd(_map_statics(a, f))
        case DLam(fl, x, body, ann):
            return DLam(fl, x, _map_statics(body, f),
                        None if ann is None else f(ann))
        case DApp(fl, fun, a):
            return DApp(fl, _map_statics(fun, f), _map_statics(a, f))
        case DGuardIn(b):
            return DGuardIn(_map_statics(b, f))
        case DGuardOut(b):
            return DGuardOut(_map_statics(b, f))
        case DAssert(b):
            return DAssert(_map_statics(b, f))
        case DLetAssert(x, rhs, body):
            return DLetAssert(x, _map_statics(rhs, f), _map_statics(body, f))
        case DSLam(a, body):
            return DSLam(a, _map_statics(body, f))
        case DSApp(fun, s):
            return DSApp(_map_statics(fun, f), f(s))
        case DPack(s, body):
            return DPack(f(s), _map_statics(body, f))
        case DLetPack(a, x, rhs, body):
            return DLetPack(a, x, _map_statics(rhs, f), _map_statics(body, f))
        case DLetTup(fl, x1, x2, rhs, body):
            return DLetTup(fl, x1, x2, _map_statics(rhs, f), _map_statics(body, f))
        case DFix(x, body, ann):
            return DFix(x, _map_statics(body, f), None if ann is None else f(ann))
        case DCase(scrut, clauses):
            return DCase(_map_statics(scrut, f),
                         tuple(DClause(c.con, c.svars, c.dvars,
                                       _map_statics(c.body, f))
                               for c in clauses))
        case DAssume(h, body):
            return DAssume(f(h), _map_statics(body, f))
    raise TypeError(f"not a dynamic term: {e!r}")


def _rebuild(d: Derivation, session) -> Derivation:
    """Zonk every judgment in a derivation tree."""
    return Derivation(
        d.rule, d.sctx, tuple(session.zonk(h) for h in d.hyps),
        DCtx(tuple((n, session.zonk(t)) for n, t in d.dctx)),
        session.zonk_dyn(d.term), session.zonk(d.type_),
        tuple(_rebuild(c, session) for c in d.children))


# ---------------------------------------------------------------------------
# Public entry points
# ---------------------------------------------------------------------------


def typecheck(sig, sctx, hyps, dctx, e: DynTerm, expected: StaticTerm,
              session: CheckSession = None, strict: bool = True) -> Derivation:
    """Check `e` against `expected`; raises on failure.

    With `strict`, Unknown solver verdicts raise UnprovenConstraint at the
    end of checking (the elaborated term is checked in full first, so every
    obligation is collected).
    """
    ses = session or CheckSession(sig)
    cls = ses.classify(sctx, expected)
    if cls == "p" and not sig.pf:
        raise FlavorViolation("props require a proof-enabled signature")
    _, d = ses.check(sctx, tuple(hyps), dctx, e, whnf_static(expected))
    d = _rebuild(d, ses)
    if strict and ses.unproven:
        raise UnprovenConstraint(
            f"{len(ses.unproven)} constraint(s) could not be proven",
            constraints=list(ses.unproven))
    return d


def typecheck_pf(sig, sctx, hyps, dctx, e, expected, session=None, strict=True):
    """Type checking under the proof discipline; requires a pf signature."""
    if not sig.pf:
        raise FlavorViolation("typecheck_pf requires a proof-enabled signature")
    return typecheck(sig, sctx, hyps, dctx, e, expected, session, strict)


def elaborated(d: Derivation) -> DynTerm:
    return d.term


# ---------------------------------------------------------------------------
# Executable lemma harnesses
# ---------------------------------------------------------------------------


def canonical_form_check(sig, v: DynTerm, t: StaticTerm) -> bool:
    """Canonical forms: the shape of a closed value is dictated by its type."""
    t = whnf_static(t)
    match t:
        case SCst("tup", _):
            return isinstance(v, DTup)
        case SCst("fun", _):
            return isinstance(v, DLam)
        case SCst("asrt", _):
            return isinstance(v, DAssert)
        case SCst("guard", _):
            return isinstance(v, DGuardIn)
        case SCst("forall", _):
            return isinstance(v, DSLam)
        case SCst("exists", _):
            return isinstance(v, DPack)
        case SCst(scc, _):
            return isinstance(v, DCst) and \
                sig.lookup_dcx(v.head).kind == "dcc" and \
                sig.lookup_dcx(v.head).scc == scc
    return False


def subst_derivation_checks(sig, d: Derivation, static_theta=None,
                            dyn_theta=None, discharge_hyps=None,
                            strengthen=None):
    """Executable substitution-lemma harness.

    Re-checks the judgment of `d` after (1) discharging hypotheses that the
    remaining ones entail, (2) a static substitution, (3) a dynamic
    substitution, or (4) strengthening one binding to a subtype.  Returns
    (ok, evidence) where evidence is the new derivation or the failure.
    """
    sctx, hyps, dctx, term, t = d.judgment()
    if discharge_hyps:
        hyps = tuple(h for h in hyps if h not in discharge_hyps)
    if static_theta:
        keep = [(n, s) for n, s in sctx if n not in static_theta]
        sctx = SCtx(tuple(keep))
        hyps = tuple(subst_static(h, static_theta) for h in hyps)
        dctx = DCtx(tuple((n, subst_static(ty, static_theta)) for n, ty in dctx))
        term = subst_static_in_dyn(term, static_theta)
        t = subst_static(t, static_theta)
    if dyn_theta:
        from minats.dynamics import subst_dyn
        keep = [(n, ty) for n, ty in dctx if n not in dyn_theta]
        dctx = DCtx(tuple(keep))
        term = subst_dyn(term, dyn_theta)
    if strengthen:
        x, new_t = strengthen
        dctx = DCtx(tuple((n, new_t if n == x else ty) for n, ty in dctx))
    try:
        d2 = typecheck(sig, sctx, hyps, dctx, term, t, strict=True)
        return True, d2
    except Exception as e:  # evidence of failure, not control flow
        return False, e
