"""The constraint relation and the subtype relations over types and props.

A constraint is `Sigma; B1,...,Bn |= B0`: a static context, boolean
hypotheses, and a boolean goal.  The decision procedure is sound and
deliberately incomplete:

  * boolean structure in the goal is decomposed (conjunction splits,
    implication moves into the hypotheses, universals introduce fresh
    eigenvariables, existentials get a syntactic witness search);
  * equalities over non-arithmetic sorts are decided by hypothesis
    rewriting plus constructor injectivity;
  * the remaining quantifier-free integer problems go through
    Fourier-Motzkin elimination with integer bound rounding, after
    nonlinear and uninterpreted subterms are purified into opaque
    variables (identical subterms share a variable);
  * universally quantified hypotheses are never instantiated internally;
    constraints relying on them are answered Unknown and exported in
    SMT-LIB 2 form for an external solver.

Counterexamples are produced by bounded enumeration and are verified by
evaluation before being reported.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import gcd

from minats.errors import IllSorted, SortError, UnsupportedSort
from minats import sexpr
from minats.statics import (
    Arrow, BOOL, Base, INT, PROP, SCst, SCtx, SLam, SVar, SApp, SBound, SMeta,
    Sort, StaticTerm, TYPE, as_int_literal, fresh_name, open_fresh, open_term,
    pretty_name, sort_of, static_to_sexpr, subst_static, whnf_static,
)

TRUE = SCst("true")
FALSE = SCst("false")

# `via` values, ordered from cheapest discharge to export-needed.
_VIA_ORDER = {"structural": 0, "arith": 1, "export": 2}


@dataclass(frozen=True)
class Constraint:
    sctx: SCtx
    hyps: tuple
    goal: StaticTerm

    def __str__(self):
        return sexpr.dumps(constraint_to_sexpr(self))


@dataclass(frozen=True)
class Counterexample:
    """A falsifying witness: integer/boolean values for the free variables.

    `note` is set instead of an assignment for structural refutations
    (e.g. distinct head constructors).
    """

    assignment: tuple = ()  # ((name, int|bool), ...)
    note: str = ""

    def as_dict(self):
        return dict(self.assignment)

    def __str__(self):
        if self.note:
            return self.note
        return ", ".join(f"{pretty_name(n)}={v}" for n, v in self.assignment)


@dataclass(frozen=True)
class Verdict:
    status: str  # "valid" | "invalid" | "unknown"
    reason: str = None  # for unknown: nonlinear | quantified-hypothesis | budget
    cex: Counterexample = None
    via: str = field(compare=False, default="structural")

    @property
    def is_valid(self):
        return self.status == "valid"

    @property
    def is_invalid(self):
        return self.status == "invalid"

    @property
    def is_unknown(self):
        return self.status == "unknown"

    def __str__(self):
        if self.is_valid:
            return "valid"
        if self.is_invalid:
            return f"invalid({self.cex})"
        return f"unknown({self.reason})"


def valid(via="structural"):
    return Verdict("valid", via=via)


def invalid(cex, via="structural"):
    return Verdict("invalid", cex=cex, via=via)


def unknown(reason, via="arith"):
    return Verdict("unknown", reason=reason, via=via)


def _join_via(*vias):
    return max(vias, key=lambda v: _VIA_ORDER[v], default="structural")


def combine(verdicts):
    """All must hold: any invalid refutes, any unknown taints, else valid."""
    verdicts = list(verdicts)
    via = _join_via(*(v.via for v in verdicts)) if verdicts else "structural"
    for v in verdicts:
        if v.is_invalid:
            return Verdict("invalid", cex=v.cex, via=via)
    for v in verdicts:
        if v.is_unknown:
            return Verdict("unknown", reason=v.reason, via=via)
    return valid(via)


# ---------------------------------------------------------------------------
# The solver
# ---------------------------------------------------------------------------


class Solver:
    """Decision procedure instance; carries only configuration and budgets."""

    def __init__(self, sig, case_budget=512, fm_budget=20000, enum_budget=60000,
                 witness_radius=4, exists_candidates=24, emit_hook=None):
        self.sig = sig
        self.case_budget = case_budget
        self.fm_budget = fm_budget
        self.enum_budget = enum_budget
        self.witness_radius = witness_radius
        self.exists_candidates = exists_candidates
        # Called with (Constraint, Verdict) for every query that reaches the
        # arithmetic core; boolean decomposition and structural discharges
        # never fire it.  This is how a checking session observes exactly the
        # constraints that were "sent to the solver".
        self.emit_hook = emit_hook

    # -- entry points -------------------------------------------------------

    def entails(self, c: Constraint) -> Verdict:
        try:
            for b in tuple(c.hyps) + (c.goal,):
                if sort_of(self.sig, c.sctx, b) != BOOL:
                    raise IllSorted(f"constraint part is not boolean: {b}")
        except SortError as e:
            raise IllSorted(str(e)) from e
        sctx, plain, quants = _flatten_hyps(c.sctx, [whnf_static(h) for h in c.hyps])
        return self._entails(sctx, plain, quants, whnf_static(c.goal), depth=0)

    def subtype_ty(self, sctx, hyps, t1, t2) -> Verdict:
        self._require_sort(sctx, t1, TYPE)
        self._require_sort(sctx, t2, TYPE)
        sctx, plain, quants = _flatten_hyps(sctx, [whnf_static(h) for h in hyps])
        return self._subtype(sctx, plain, quants, whnf_static(t1), whnf_static(t2), "ty")

    def subtype_pr(self, sctx, hyps, p1, p2) -> Verdict:
        self._require_sort(sctx, p1, PROP)
        self._require_sort(sctx, p2, PROP)
        sctx, plain, quants = _flatten_hyps(sctx, [whnf_static(h) for h in hyps])
        return self._subtype(sctx, plain, quants, whnf_static(p1), whnf_static(p2), "pr")

    def _require_sort(self, sctx, t, expected):
        try:
            s = sort_of(self.sig, sctx, t)
        except SortError as e:
            raise IllSorted(str(e)) from e
        if s != expected:
            raise IllSorted(f"{t} has sort {s}, expected {expected}")

    # -- goal decomposition ---------------------------------------------------

    def _entails(self, sctx, plain, quants, goal, depth) -> Verdict:
        if depth > 80:
            return unknown("budget")
        if goal == TRUE:
            return valid()
        if goal in plain:
            return valid()
        if FALSE in plain:
            return valid()
        match goal:
            case SCst("and", (a, b)):
                va = self._entails(sctx, plain, quants, a, depth + 1)
                if va.is_invalid:
                    return va
                return combine([va, self._entails(sctx, plain, quants, b, depth + 1)])
            case SCst("imp", (a, b)):
                sctx2, plain2, quants2 = _flatten_hyps(sctx, [a], plain, quants)
                return self._entails(sctx2, plain2, quants2, whnf_static(b), depth + 1)
            case SCst("forall", (SLam() as lam,)):
                name, body = open_fresh(lam)
                return self._entails(sctx.extend(name, lam.sort), plain, quants,
                                     whnf_static(body), depth + 1)
            case SCst("exists", (SLam() as lam,)):
                return self._exists_goal(sctx, plain, quants, lam, depth)
            case SCst("subty", (t1, t2)):
                return self._subtype(sctx, plain, quants, whnf_static(t1),
                                     whnf_static(t2), "ty")
            case SCst("subpr", (p1, p2)):
                return self._subtype(sctx, plain, quants, whnf_static(p1),
                                     whnf_static(p2), "pr")
            case SCst("eq", (a, b)):
                s = self._sort_in(sctx, a)
                if s not in (INT, BOOL):
                    return self._eq_goal(sctx, plain, quants, a, b, s, depth)
            case SCst("ne", (a, b)):
                s = self._sort_in(sctx, a)
                if s not in (INT, BOOL):
                    # a != b is valid only when equality is refuted outright.
                    v = self._eq_goal(sctx, plain, quants, a, b, s, depth)
                    if v.is_invalid and v.cex is not None and v.cex.note:
                        return valid(v.via)
                    if v.is_valid:
                        return invalid(Counterexample(note=f"{a} equals {b}"), v.via)
                    return unknown("nonlinear", via=v.via)
        if self._nonneg_fast(plain, goal):
            return valid()
        return self._entails_arith(sctx, plain, quants, goal)

    def _sort_in(self, sctx, t):
        try:
            return sort_of(self.sig, sctx, t)
        except SortError as e:
            raise IllSorted(str(e)) from e

    def _exists_goal(self, sctx, plain, quants, lam, depth) -> Verdict:
        candidates = []
        if lam.sort == INT:
            candidates.extend(SCst(str(k)) for k in (0, 1, -1, 2, -2))
        seen = set(candidates)
        for h in plain:
            for sub in _subterms(h):
                if sub in seen or isinstance(sub, (SLam, SBound)):
                    continue
                try:
                    if sort_of(self.sig, sctx, sub) == lam.sort:
                        seen.add(sub)
                        candidates.append(sub)
                except SortError:
                    continue
                if len(candidates) >= self.exists_candidates:
                    break
        # Candidate probing is silent; only the successful instantiation is
        # re-run with emission enabled.
        hook, self.emit_hook = self.emit_hook, None
        found = None
        try:
            for cand in candidates:
                v = self._entails(sctx, plain, quants,
                                  whnf_static(open_term(lam.body, cand)), depth + 1)
                if v.is_valid:
                    found = cand
                    break
        finally:
            self.emit_hook = hook
        if found is None:
            return unknown("budget")
        if hook is None:
            return v
        return self._entails(sctx, plain, quants,
                             whnf_static(open_term(lam.body, found)), depth + 1)

    def _nonneg_fast(self, plain, goal) -> bool:
        """Syntactic nonnegativity: sums/products of known-nonnegative terms."""
        match goal:
            case SCst("ge", (t, z)) if as_int_literal(z) == 0:
                return self._nonneg(plain, t)
            case SCst("le", (z, t)) if as_int_literal(z) == 0:
                return self._nonneg(plain, t)
        return False

    def _nonneg(self, plain, t) -> bool:
        lit = as_int_literal(t)
        if lit is not None:
            return lit >= 0
        if SCst("ge", (t, SCst("0"))) in plain or SCst("le", (SCst("0"), t)) in plain:
            return True
        match t:
            case SCst("add", (a, b)):
                return self._nonneg(plain, a) and self._nonneg(plain, b)
        return False

    # -- equality over non-arithmetic sorts -----------------------------------

    def _eq_goal(self, sctx, plain, quants, a, b, sort, depth) -> Verdict:
        rw = _RewriteMap.from_hyps(self.sig, sctx, plain)
        residual = []
        v = self._eq_struct(sctx, rw(a), rw(b), sort, rw, residual, depth)
        if not v.is_valid:
            return v
        if not residual:
            return valid()
        parts = [self._entails(sctx, plain, quants, SCst("eq", (x, y)), depth + 1)
                 for x, y in residual]
        return combine(parts)

    def _eq_struct(self, sctx, a, b, sort, rw, residual, depth) -> Verdict:
        if sort in (INT, BOOL):
            residual.append((a, b))
            return valid()
        if a == b:
            return valid()
        if isinstance(a, SCst) and isinstance(b, SCst) and a.args is not None:
            if a.head != b.head:
                if _is_constructor_head(self.sig, a.head) and \
                        _is_constructor_head(self.sig, b.head):
                    return invalid(Counterexample(
                        note=f"distinct head constructors {a.head} vs {b.head}"))
                return unknown("nonlinear")
            if a.head in ("forall", "exists") and len(a.args) == 1 and \
                    isinstance(a.args[0], SLam) and isinstance(b.args[0], SLam):
                la, lb = a.args[0], b.args[0]
                if la.sort != lb.sort:
                    return invalid(Counterexample(note="quantifier sorts differ"))
                name = fresh_name(la.hint or "a")
                return self._eq_struct(
                    sctx.extend(name, la.sort),
                    rw(whnf_static(open_term(la.body, SVar(name)))),
                    rw(whnf_static(open_term(lb.body, SVar(name)))),
                    sort, rw, residual, depth + 1)
            if len(a.args) != len(b.args):
                return invalid(Counterexample(note="constructor arity mismatch"))
            if not _is_constructor_head(self.sig, a.head):
                return unknown("nonlinear")
            try:
                cs = self.sig.resolve_scx(
                    a.head, tuple(self._sort_in(sctx, x) for x in a.args))
            except IllSorted:
                return unknown("nonlinear")
            parts = []
            for x, y, s in zip(a.args, b.args, cs.args):
                parts.append(self._eq_struct(sctx, rw(x), rw(y), s, rw, residual, depth + 1))
                if parts[-1].is_invalid:
                    return parts[-1]
            return combine(parts)
        return unknown("nonlinear")

    # -- structural subtyping --------------------------------------------------

    def _subtype(self, sctx, plain, quants, t1, t2, layer) -> Verdict:
        if t1 == t2:
            return valid()
        h1, h2 = _head_of(t1), _head_of(t2)
        if h1 in ("tup", "fun", "asrt", "guard", "forall", "exists") and h1 == h2:
            return self._subtype_structural(sctx, plain, quants, t1, t2, layer)
        if isinstance(t1, SCst) and isinstance(t2, SCst) and h1 == h2 and \
                t1.args is not None and len(t1.args) == len(t2.args):
            return self._subtype_indices(sctx, plain, quants, t1, t2)
        if isinstance(t1, SCst) and isinstance(t2, SCst) and h1 != h2 and \
                _is_constructor_head(self.sig, h1) and _is_constructor_head(self.sig, h2):
            return invalid(Counterexample(
                note=f"distinct head constructors {h1} vs {h2}"))
        # Variable or neutral heads: fall back on equality under hypotheses.
        sort = TYPE if layer == "ty" else PROP
        return self._eq_goal(sctx, plain, quants, t1, t2, sort, 0)

    def _subtype_structural(self, sctx, plain, quants, t1, t2, layer) -> Verdict:
        match t1, t2:
            case SCst("tup", (a1, b1)), SCst("tup", (a2, b2)):
                la = "pr" if self._sort_in(sctx, a1) == PROP else "ty"
                lb = "pr" if self._sort_in(sctx, b1) == PROP else "ty"
                return combine([
                    self._subtype(sctx, plain, quants, a1, a2, la),
                    self._subtype(sctx, plain, quants, b1, b2, lb)])
            case SCst("fun", (a1, b1)), SCst("fun", (a2, b2)):
                la = "pr" if self._sort_in(sctx, a1) == PROP else "ty"
                lb = "pr" if self._sort_in(sctx, b1) == PROP else "ty"
                return combine([
                    self._subtype(sctx, plain, quants, a2, a1, la),
                    self._subtype(sctx, plain, quants, b1, b2, lb)])
            case SCst("asrt", (b1, u1)), SCst("asrt", (b2, u2)):
                sctx2, plain2, quants2 = _flatten_hyps(sctx, [b1], plain, quants)
                return combine([
                    self._entails(sctx2, plain2, quants2, whnf_static(b2), 0),
                    self._subtype(sctx2, plain2, quants2, u1, u2, layer)])
            case SCst("guard", (b1, u1)), SCst("guard", (b2, u2)):
                sctx2, plain2, quants2 = _flatten_hyps(sctx, [b2], plain, quants)
                return combine([
                    self._entails(sctx2, plain2, quants2, whnf_static(b1), 0),
                    self._subtype(sctx2, plain2, quants2, u1, u2, layer)])
            case (SCst(q1, (SLam() as l1,)), SCst(q2, (SLam() as l2,))) \
                    if q1 == q2 and q1 in ("forall", "exists"):
                if l1.sort != l2.sort:
                    return invalid(Counterexample(note="quantifier sorts differ"))
                name = fresh_name(l1.hint or "a")
                sctx2 = sctx.extend(name, l1.sort)
                return self._subtype(
                    sctx2, plain, quants,
                    whnf_static(open_term(l1.body, SVar(name))),
                    whnf_static(open_term(l2.body, SVar(name))), layer)
        return unknown("nonlinear")

    def _subtype_indices(self, sctx, plain, quants, t1, t2) -> Verdict:
        head = t1.head
        try:
            cs = self.sig.resolve_scx(
                head, tuple(self._sort_in(sctx, x) for x in t1.args))
        except IllSorted:
            return unknown("nonlinear")
        roles = self.sig.index_roles.get(head)
        if roles is None or len(roles) != len(t1.args):
            roles = tuple("tyarg" if s in (TYPE, PROP) else "index" for s in cs.args)
        parts = []
        for x, y, s, role in zip(t1.args, t2.args, cs.args, roles):
            if role == "tyarg" and s in (TYPE, PROP):
                v = self._eq_goal(sctx, plain, quants, x, y, s, 0)
                if not v.is_valid:
                    v = self._subtype(sctx, plain, quants, whnf_static(x),
                                      whnf_static(y), "pr" if s == PROP else "ty")
                parts.append(v)
            else:
                parts.append(self._entails(sctx, plain, quants, SCst("eq", (x, y)), 0))
            if parts[-1].is_invalid:
                return combine(parts)
        return combine(parts)

    # -- the arithmetic / boolean core ----------------------------------------

    def _entails_arith(self, sctx, plain, quants, goal) -> Verdict:
        v = self._entails_arith_verdict(sctx, plain, quants, goal)
        if self.emit_hook is not None:
            self.emit_hook(Constraint(sctx, tuple(plain) + tuple(quants), goal), v)
        return v

    def _entails_arith_verdict(self, sctx, plain, quants, goal) -> Verdict:
        conv = _FormulaBuilder(self.sig, sctx)
        f = _f_and([conv.convert(h, True) for h in plain] + [conv.convert(goal, False)])
        disjuncts = _dnf(f, self.case_budget)
        if disjuncts is None:
            return unknown("budget")
        all_unsat = True
        budget_hit = False
        fm_steps = [0]
        for d in disjuncts:
            res = self._disjunct_unsat(d, fm_steps)
            if res == "budget":
                budget_hit = True
                all_unsat = False
            elif res == "sat":
                all_unsat = False
        if all_unsat:
            return valid("arith")
        if quants:
            return unknown("quantified-hypothesis", via="export")
        cex, exact = self._search_witness(sctx, plain, goal, conv)
        if cex is not None:
            return invalid(cex, via="arith")
        if exact and not conv.opaque and not budget_hit:
            return valid("arith")
        if budget_hit:
            return unknown("budget")
        return unknown("nonlinear" if conv.opaque else "budget")

    def _disjunct_unsat(self, literals, fm_steps) -> str:
        bools = {}
        int_atoms = []
        for pol, atom in literals:
            if atom[0] == "bool":
                key = atom[1]
                if bools.setdefault(key, pol) != pol:
                    return "unsat"
            else:
                _, rel, coeffs, const = atom
                int_atoms.append(_negate_int_atom(rel, coeffs, const) if not pol
                                 else (rel, coeffs, const))
        return self._fm_with_ne(int_atoms, fm_steps)

    def _fm_with_ne(self, atoms, fm_steps) -> str:
        nes = [a for a in atoms if a[0] == "ne"]
        rest = [a for a in atoms if a[0] != "ne"]
        if not nes:
            return _fm_unsat(rest, self.fm_budget, fm_steps)
        if len(nes) > 8:
            return "budget"
        rel, coeffs, const = nes[0]
        lo = ("le", coeffs, const + 1)                       # e <= -1
        hi = ("le", _scale(coeffs, -1), -const + 1)          # e >= 1
        r1 = self._fm_with_ne(rest + [lo] + nes[1:], fm_steps)
        if r1 == "budget":
            return "budget"
        r2 = self._fm_with_ne(rest + [hi] + nes[1:], fm_steps)
        if r2 == "budget":
            return "budget"
        return "unsat" if (r1 == "unsat" and r2 == "unsat") else "sat"

    # -- counterexample search --------------------------------------------------

    def _search_witness(self, sctx, plain, goal, conv):
        """Bounded enumeration for a concrete falsifying assignment.

        Returns (counterexample|None, exact) where exact means the search
        space provably covered every potential counterexample.
        """
        ints, bools, ok = _collect_enum_vars(self.sig, sctx, plain, goal)
        if not ok:
            return None, False
        bounds, bounded = _hyp_bounds(plain, ints, self.witness_radius)
        exact = bounded and not conv.opaque
        domains = []
        for x in ints:
            lo, hi = bounds[x]
            if hi - lo > 2 * self.witness_radius + 8:
                exact = False
                mid = 0 if lo <= 0 <= hi else (lo + hi) // 2
                lo2 = max(lo, mid - self.witness_radius)
                hi2 = min(hi, mid + self.witness_radius)
                lo, hi = lo2, hi2
            domains.append(sorted(range(lo, hi + 1), key=abs))
        for x in bools:
            domains.append([False, True])
        total = 1
        for d in domains:
            total *= max(len(d), 1)
        if total > self.enum_budget:
            return None, False
        names = list(ints) + list(bools)
        evaluated_all = True
        for point in itertools.product(*domains) if domains else [()]:
            assign = dict(zip(names, point))
            r = _eval_constraint(self.sig, plain, goal, assign)
            if r is None:
                evaluated_all = False
                continue
            hyps_ok, goal_val = r
            if hyps_ok and goal_val is False:
                return Counterexample(tuple(sorted(assign.items()))), exact
        return None, exact and evaluated_all


# ---------------------------------------------------------------------------
# Hypothesis preprocessing
# ---------------------------------------------------------------------------


def _flatten_hyps(sctx, new_hyps, plain=(), quants=()):
    """Split conjunctions, skolemize existentials, set aside universals."""
    sctx2 = sctx
    plain2 = list(plain)
    quants2 = list(quants)
    todo = [whnf_static(h) for h in new_hyps]
    while todo:
        h = todo.pop(0)
        match h:
            case SCst("true", ()):
                continue
            case SCst("and", (a, b)):
                todo[:0] = [whnf_static(a), whnf_static(b)]
            case SCst("exists", (SLam() as lam,)):
                name, body = open_fresh(lam)
                sctx2 = sctx2.extend(name, lam.sort)
                todo.insert(0, whnf_static(body))
            case SCst("forall", _):
                quants2.append(h)
            case _:
                plain2.append(h)
    return sctx2, plain2, quants2


class _RewriteMap:
    """Oriented variable->term rewrites harvested from equality hypotheses.

    Only equations over non-arithmetic sorts are used; integer equalities
    stay with the linear solver.
    """

    def __init__(self, rules):
        self.rules = rules

    @classmethod
    def from_hyps(cls, sig, sctx, plain):
        from minats.statics import free_svars
        rules = {}
        for h in plain:
            match h:
                case SCst("eq", (a, b)):
                    try:
                        s = sort_of(sig, sctx, a)
                    except SortError:
                        continue
                    if s in (INT, BOOL) or not isinstance(s, Base):
                        continue
                    for lhs, rhs in ((a, b), (b, a)):
                        if isinstance(lhs, SVar) and lhs.name not in free_svars(rhs) \
                                and lhs.name not in rules:
                            rules[lhs.name] = rhs
                            break
        return cls(rules)

    def __call__(self, term):
        for _ in range(24):
            new = whnf_static(subst_static(term, {n: t for n, t in self.rules.items()}))
            if new == term:
                return term
            term = new
        return term


def _is_constructor_head(sig, head: str) -> bool:
    if head in ("add", "sub", "mul", "div", "and", "imp", "eq", "ne",
                "lt", "le", "gt", "ge", "subty", "subpr"):
        return False
    if as_int_literal(SCst(head)) is not None:
        return True
    return head in sig.scx or head in ("forall", "exists")


def _head_of(t):
    return t.head if isinstance(t, SCst) else None


def _subterms(t, acc=None):
    if acc is None:
        acc = []
    acc.append(t)
    match t:
        case SCst(_, args):
            for a in args:
                _subterms(a, acc)
        case SApp(f, a):
            _subterms(f, acc)
            _subterms(a, acc)
        case SLam(_, _, body):
            _subterms(body, acc)
        case _:
            pass
    return acc


# ---------------------------------------------------------------------------
# Formulas, linear atoms, DNF
# ---------------------------------------------------------------------------

_F_TRUE = ("true",)
_F_FALSE = ("false",)


def _f_and(parts):
    out = []
    for p in parts:
        if p == _F_FALSE:
            return _F_FALSE
        if p == _F_TRUE:
            continue
        out.append(p)
    return ("and", out) if out else _F_TRUE


def _f_or(parts):
    out = []
    for p in parts:
        if p == _F_TRUE:
            return _F_TRUE
        if p == _F_FALSE:
            continue
        out.append(p)
    return ("or", out) if out else _F_FALSE


_CMP = {"lt": 1, "le": 0, "gt": 1, "ge": 0}


class _FormulaBuilder:
    """Converts boolean static terms to NNF formulas over linear atoms."""

    def __init__(self, sig, sctx):
        self.sig = sig
        self.sctx = sctx
        self.opaque = {}  # StaticTerm -> opaque variable name

    def convert(self, term, pol):
        term = whnf_static(term)
        match term:
            case SCst("true", ()):
                return _F_TRUE if pol else _F_FALSE
            case SCst("false", ()):
                return _F_FALSE if pol else _F_TRUE
            case SCst("and", (a, b)):
                fa, fb = self.convert(a, pol), self.convert(b, pol)
                return _f_and([fa, fb]) if pol else _f_or([fa, fb])
            case SCst("imp", (a, b)):
                if pol:
                    return _f_or([self.convert(a, False), self.convert(b, True)])
                return _f_and([self.convert(a, True), self.convert(b, False)])
            case SCst(("lt" | "le" | "gt" | "ge") as op, (a, b)):
                return self._cmp(op, a, b, pol)
            case SCst(("eq" | "ne") as op, (a, b)):
                return self._eq(op, a, b, pol)
        return ("lit", pol, ("bool", term))

    def _cmp(self, op, a, b, pol):
        la, lb = self._linear(a), self._linear(b)
        if op in ("gt", "ge"):
            la, lb = lb, la
        coeffs, const = _sub_lin(la, lb)
        const += _CMP[op]
        atom = ("int", "le", coeffs, const)
        return ("lit", pol, atom)

    def _eq(self, op, a, b, pol):
        try:
            s = sort_of(self.sig, self.sctx, a)
        except SortError:
            s = None
        if s == INT:
            coeffs, const = _sub_lin(self._linear(a), self._linear(b))
            atom = ("int", "eq" if op == "eq" else "ne", coeffs, const)
            return ("lit", pol, atom)
        if s == BOOL:
            fa_t, fa_f = self.convert(a, True), self.convert(a, False)
            fb_t, fb_f = self.convert(b, True), self.convert(b, False)
            same = op == "eq"
            if not pol:
                same = not same
            if same:
                return _f_or([_f_and([fa_t, fb_t]), _f_and([fa_f, fb_f])])
            return _f_or([_f_and([fa_t, fb_f]), _f_and([fa_f, fb_t])])
        # Non-arithmetic equality inside a formula: decide structurally if
        # ground-equal, otherwise keep it opaque.
        if a == b:
            return _F_TRUE if (pol == (op == "eq")) else _F_FALSE
        return ("lit", pol, ("bool", SCst(op, (a, b))))

    def _linear(self, t):
        """Linearize an integer term; nonlinear parts become opaque variables."""
        t = whnf_static(t)
        lit = as_int_literal(t)
        if lit is not None:
            return {}, lit
        match t:
            case SVar(x):
                return {x: 1}, 0
            case SCst("add", (a, b)):
                return _add_lin(self._linear(a), self._linear(b))
            case SCst("sub", (a, b)):
                return _sub_lin(self._linear(a), self._linear(b))
            case SCst("mul", (a, b)):
                la, ca = as_int_literal(whnf_static(a)), as_int_literal(whnf_static(b))
                if la is not None:
                    coeffs, const = self._linear(b)
                    return _scale(coeffs, la), const * la
                if ca is not None:
                    coeffs, const = self._linear(a)
                    return _scale(coeffs, ca), const * ca
                return {self._opaque_var(t): 1}, 0
            case SCst("div", (a, b)):
                la, cb = as_int_literal(whnf_static(a)), as_int_literal(whnf_static(b))
                if la is not None and cb not in (None, 0):
                    from minats.signature import int_div
                    return {}, int_div(la, cb)
                return {self._opaque_var(t): 1}, 0
        return {self._opaque_var(t): 1}, 0

    def _opaque_var(self, t):
        if t not in self.opaque:
            self.opaque[t] = f"$o{len(self.opaque)}"
        return self.opaque[t]


def _add_lin(l1, l2):
    c1, k1 = l1
    c2, k2 = l2
    out = dict(c1)
    for x, c in c2.items():
        out[x] = out.get(x, 0) + c
        if out[x] == 0:
            del out[x]
    return out, k1 + k2


def _sub_lin(l1, l2):
    c2, k2 = l2
    return _add_lin(l1, (_scale(c2, -1), -k2))


def _scale(coeffs, k):
    return {x: c * k for x, c in coeffs.items() if c * k != 0}


def _negate_int_atom(rel, coeffs, const):
    if rel == "le":  # not(e <= 0)  <=>  -e + 1 <= 0
        return ("le", _scale(coeffs, -1), -const + 1)
    if rel == "eq":
        return ("ne", coeffs, const)
    return ("eq", coeffs, const)


def _dnf(f, budget):
    """Disjunctive normal form as a list of literal lists, or None over budget."""
    match f:
        case ("true",):
            return [[]]
        case ("false",):
            return []
        case ("lit", pol, atom):
            return [[(pol, atom)]]
        case ("and", parts):
            acc = [[]]
            for p in parts:
                sub = _dnf(p, budget)
                if sub is None:
                    return None
                acc = [a + b for a in acc for b in sub]
                if len(acc) > budget:
                    return None
            return acc
        case ("or", parts):
            acc = []
            for p in parts:
                sub = _dnf(p, budget)
                if sub is None:
                    return None
                acc.extend(sub)
                if len(acc) > budget:
                    return None
            return acc
    raise AssertionError(f"bad formula {f!r}")


# ---------------------------------------------------------------------------
# Fourier-Motzkin with integer tightening
# ---------------------------------------------------------------------------


def _tighten(coeffs, const):
    """Divide a `sum c_i x_i + const <= 0` through by gcd, rounding the bound."""
    if not coeffs:
        return coeffs, const
    g = 0
    for c in coeffs.values():
        g = gcd(g, abs(c))
    if g <= 1:
        return coeffs, const
    # sum c_i x_i <= -const  becomes  sum (c_i/g) x_i <= floor(-const/g)
    bound = (-const) // g
    return {x: c // g for x, c in coeffs.items()}, -bound


def _fm_unsat(atoms, budget, steps) -> str:
    """Decide a conjunction of le/eq linear atoms; sound for 'unsat'."""
    les = []
    eqs = []
    for rel, coeffs, const in atoms:
        if rel == "eq":
            eqs.append((dict(coeffs), const))
        else:
            les.append(_tighten(dict(coeffs), const))

    # Use equalities with a unit coefficient as exact substitutions.
    changed = True
    while changed:
        changed = False
        for i, (coeffs, const) in enumerate(eqs):
            if not coeffs:
                if const != 0:
                    return "unsat"
                eqs.pop(i)
                changed = True
                break
            g = 0
            for c in coeffs.values():
                g = gcd(g, abs(c))
            if g > 1:
                if const % g != 0:
                    return "unsat"
                coeffs = {x: c // g for x, c in coeffs.items()}
                const //= g
                eqs[i] = (coeffs, const)
            unit = next((x for x, c in coeffs.items() if abs(c) == 1), None)
            if unit is None:
                continue
            c0 = coeffs[unit]
            # unit*c0 = -(rest + const)  =>  unit = (-(rest)+ -const)/c0
            rest = {x: c for x, c in coeffs.items() if x != unit}
            repl = (_scale(rest, -c0), -const * c0)  # c0 in {1,-1}
            eqs.pop(i)
            eqs = [_subst_lin(e, unit, repl) for e in eqs]
            les = [_tighten(*_subst_lin(e, unit, repl)) for e in les]
            changed = True
            break
    for coeffs, const in eqs:
        les.append((dict(coeffs), const))
        les.append((_scale(coeffs, -1), -const))

    les = [_tighten(c, k) for c, k in les]
    while True:
        for coeffs, const in les:
            if not coeffs and const > 0:
                return "unsat"
        les = [(c, k) for c, k in les if c]
        variables = {}
        for coeffs, _ in les:
            for x in coeffs:
                variables.setdefault(x, [0, 0])
        if not variables:
            return "sat"
        for coeffs, _ in les:
            for x, c in coeffs.items():
                variables[x][0 if c > 0 else 1] += 1
        x = min(variables, key=lambda v: variables[v][0] * variables[v][1])
        uppers = [(c, k) for c, k in les if c.get(x, 0) > 0]
        lowers = [(c, k) for c, k in les if c.get(x, 0) < 0]
        others = [(c, k) for c, k in les if c.get(x, 0) == 0]
        steps[0] += len(uppers) * len(lowers)
        if steps[0] > budget:
            return "budget"
        new = list(others)
        for cu, ku in uppers:
            for cl, kl in lowers:
                m_u, m_l = cu[x], -cl[x]
                comb = _add_lin((_scale(cu, m_l), ku * m_l), (_scale(cl, m_u), kl * m_u))
                comb = _tighten(dict(comb[0]), comb[1])
                if not comb[0] and comb[1] > 0:
                    return "unsat"
                if comb[0]:
                    new.append(comb)
        les = new
        if not les:
            return "sat"


def _subst_lin(lin, var, repl):
    coeffs, const = dict(lin[0]), lin[1]
    c = coeffs.pop(var, 0)
    if c == 0:
        return coeffs, const
    rc, rk = repl
    return _add_lin((coeffs, const), (_scale(rc, c), rk * c))


# ---------------------------------------------------------------------------
# Concrete evaluation for counterexample checking
# ---------------------------------------------------------------------------


def _collect_enum_vars(sig, sctx, plain, goal):
    """Free int/bool variables occurring in the constraint; ok=False when a
    variable of another sort occurs (no enumeration possible)."""
    from minats.statics import free_svars
    names = set()
    for h in plain:
        names |= free_svars(h)
    names |= free_svars(goal)
    ints, bools = [], []
    for n in sorted(names):
        s = sctx.lookup(n)
        if s == INT:
            ints.append(n)
        elif s == BOOL:
            bools.append(n)
        else:
            return [], [], False
    return ints, bools, True


def _hyp_bounds(plain, ints, radius):
    """Per-variable integer bounds implied by unit-coefficient hypotheses."""
    lo = {x: None for x in ints}
    hi = {x: None for x in ints}

    def visit(h):
        match h:
            case SCst(("le" | "lt" | "ge" | "gt" | "eq") as op, (a, b)):
                av, bv = as_int_literal(whnf_static(a)), as_int_literal(whnf_static(b))
                if isinstance(a, SVar) and bv is not None:
                    if op in ("le", "lt", "eq"):
                        v = bv - (1 if op == "lt" else 0)
                        hi[a.name] = v if hi.get(a.name) is None else min(hi[a.name], v)
                    if op in ("ge", "gt", "eq"):
                        v = bv + (1 if op == "gt" else 0)
                        lo[a.name] = v if lo.get(a.name) is None else max(lo[a.name], v)
                if isinstance(b, SVar) and av is not None:
                    if op in ("le", "lt", "eq"):
                        v = av + (1 if op == "lt" else 0)
                        lo[b.name] = v if lo.get(b.name) is None else max(lo[b.name], v)
                    if op in ("ge", "gt", "eq"):
                        v = av - (1 if op == "gt" else 0)
                        hi[b.name] = v if hi.get(b.name) is None else min(hi[b.name], v)

    for h in plain:
        visit(h)
    bounds = {}
    bounded = True
    for x in ints:
        l, h = lo[x], hi[x]
        if l is None or h is None:
            bounded = False
        l = -radius if l is None else l
        h = radius if h is None else h
        if l > h:
            h = l - 1  # empty domain: hypotheses already unsatisfiable pointwise
        bounds[x] = (l, h)
    return bounds, bounded


def _eval_constraint(sig, plain, goal, assign):
    """Evaluate hypotheses and goal at a concrete assignment.

    Returns (all_hyps_true, goal_value) or None when some part cannot be
    evaluated (uninterpreted atoms, division by zero, foreign sorts).
    """
    hyps_ok = True
    for h in plain:
        v = eval_static_bool(sig, h, assign)
        if v is None:
            return None
        if v is False:
            hyps_ok = False
            break
    g = eval_static_bool(sig, goal, assign)
    if g is None:
        return None
    return hyps_ok, g


def eval_static_int(sig, t, assign):
    t = whnf_static(t)
    lit = as_int_literal(t)
    if lit is not None:
        return lit
    match t:
        case SVar(x):
            v = assign.get(x)
            return v if isinstance(v, int) and not isinstance(v, bool) else None
        case SCst(("add" | "sub" | "mul" | "div") as op, (a, b)):
            va, vb = eval_static_int(sig, a, assign), eval_static_int(sig, b, assign)
            if va is None or vb is None:
                return None
            if op == "add":
                return va + vb
            if op == "sub":
                return va - vb
            if op == "mul":
                return va * vb
            if vb == 0:
                return None
            from minats.signature import int_div
            return int_div(va, vb)
    return None


def eval_static_bool(sig, t, assign):
    t = whnf_static(t)
    match t:
        case SCst("true", ()):
            return True
        case SCst("false", ()):
            return False
        case SVar(x):
            v = assign.get(x)
            return v if isinstance(v, bool) else None
        case SCst("and", (a, b)):
            va, vb = eval_static_bool(sig, a, assign), eval_static_bool(sig, b, assign)
            return None if va is None or vb is None else (va and vb)
        case SCst("imp", (a, b)):
            va, vb = eval_static_bool(sig, a, assign), eval_static_bool(sig, b, assign)
            return None if va is None or vb is None else ((not va) or vb)
        case SCst(("lt" | "le" | "gt" | "ge") as op, (a, b)):
            va, vb = eval_static_int(sig, a, assign), eval_static_int(sig, b, assign)
            if va is None or vb is None:
                return None
            return {"lt": va < vb, "le": va <= vb, "gt": va > vb, "ge": va >= vb}[op]
        case SCst(("eq" | "ne") as op, (a, b)):
            va, vb = eval_static_int(sig, a, assign), eval_static_int(sig, b, assign)
            if va is None or vb is None:
                return None
            return (va == vb) if op == "eq" else (va != vb)
    return None


# ---------------------------------------------------------------------------
# Module-level convenience entry points
# ---------------------------------------------------------------------------


def entails(sig, c: Constraint, solver: Solver = None) -> Verdict:
    return (solver or Solver(sig)).entails(c)


def subtype_ty(sig, sctx, hyps, t1, t2, solver: Solver = None) -> Verdict:
    return (solver or Solver(sig)).subtype_ty(sctx, hyps, t1, t2)


def subtype_pr(sig, sctx, hyps, p1, p2, solver: Solver = None) -> Verdict:
    return (solver or Solver(sig)).subtype_pr(sctx, hyps, p1, p2)


def assume_internalized(sig, sctx, hyps, b) -> tuple:
    """Append an assumption to the hypotheses in scope.

    Universally quantified assumptions are beyond the built-in solver;
    `entails` answers Unknown(quantified-hypothesis) whenever a goal is not
    discharged structurally, and such constraints are meant for export.
    """
    try:
        if sort_of(sig, sctx, b) != BOOL:
            raise IllSorted(f"assumption is not boolean: {b}")
    except SortError as e:
        raise IllSorted(str(e)) from e
    return tuple(hyps) + (whnf_static(b),)


# ---------------------------------------------------------------------------
# Dump format and emission log
# ---------------------------------------------------------------------------


def verdict_to_sexpr(v: Verdict):
    if v is None:
        return "pending"
    if v.is_valid:
        return ["valid"]
    if v.is_invalid:
        if v.cex is not None and v.cex.assignment:
            return ["invalid", [[pretty_name(n), str(val).lower() if isinstance(val, bool)
                                 else str(val)] for n, val in v.cex.assignment]]
        return ["invalid", v.cex.note.replace(" ", "-") if v.cex else "refuted"]
    return ["unknown", v.reason]


def constraint_to_sexpr(c: Constraint, verdict: Verdict = None):
    return ["constraint",
            ["ctx"] + [[pretty_name(n), statics_sort_sx(s)] for n, s in c.sctx],
            ["hyps"] + [static_to_sexpr(h) for h in c.hyps],
            ["goal", static_to_sexpr(c.goal)],
            ["verdict", verdict_to_sexpr(verdict)]]


def statics_sort_sx(s):
    from minats.statics import sort_to_sexpr
    return sort_to_sexpr(s)


def dump_constraints(entries) -> str:
    """`entries` is a list of (Constraint, Verdict)."""
    return "\n".join(sexpr.dumps(constraint_to_sexpr(c, v)) for c, v in entries) + "\n"


class ConstraintLog:
    """Emission-ordered record of the queries a checking session raised.

    `entries` holds every top-level query the checker made; `solver_queries`
    holds only the residual constraints that actually reached the arithmetic
    core (what the dump format and the export carry).
    """

    def __init__(self):
        self.entries = []         # (Constraint, Verdict, origin)
        self.solver_queries = []  # (Constraint, Verdict)

    def record(self, constraint, verdict, origin=""):
        self.entries.append((constraint, verdict, origin))

    def record_solver(self, constraint, verdict):
        self.solver_queries.append((constraint, verdict))

    def arithmetic(self):
        return list(self.solver_queries)

    def exported(self):
        return [(c, v) for c, v in self.solver_queries if v.is_unknown]

    def unknowns(self):
        return [(c, v, o) for c, v, o in self.entries if v.is_unknown]

    def invalids(self):
        return [(c, v, o) for c, v, o in self.entries if v.is_invalid]


# ---------------------------------------------------------------------------
# SMT-LIB 2 export
# ---------------------------------------------------------------------------

_SMT_SORT = {"int": "Int", "bool": "Bool"}

_SMT_OP = {"add": "+", "sub": "-", "mul": "*", "div": "div",
           "lt": "<", "le": "<=", "gt": ">", "ge": ">=",
           "and": "and", "imp": "=>", "eq": "=",
           "true": "true", "false": "false"}


def export_smtlib(sig, constraints) -> str:
    """Emit one check-sat block per constraint; `unsat` means the constraint
    is valid.  Constraints with arrow-sorted free variables are skipped with
    a note."""
    lines = ["(set-logic ALL)"]
    declared_sorts = set()
    declared_funs = {}
    blocks = []
    for c in constraints:
        try:
            blocks.append(_export_one(sig, c, declared_sorts, declared_funs))
        except UnsupportedSort as e:
            blocks.append(f"; skipped constraint: {e}")
    for s in sorted(declared_sorts):
        lines.append(f"(declare-sort {s} 0)")
    for name, decl in declared_funs.items():
        lines.append(decl)
    lines.extend(blocks)
    return "\n".join(lines) + "\n"


def _smt_sort(sort, declared_sorts):
    if isinstance(sort, Base):
        if sort.name in _SMT_SORT:
            return _SMT_SORT[sort.name]
        name = f"S_{sort.name}"
        declared_sorts.add(name)
        return name
    raise UnsupportedSort(f"free variable of arrow sort {sort}")


def _export_one(sig, c: Constraint, declared_sorts, declared_funs) -> str:
    decls = []
    for n, s in c.sctx:
        smt = _smt_sort(s, declared_sorts)
        decls.append(f"  (declare-const {_smt_name(n)} {smt})")
    body = []
    for h in c.hyps:
        body.append(f"  (assert {_smt_term(sig, h, declared_sorts, declared_funs)})")
    body.append(f"  (assert (not {_smt_term(sig, c.goal, declared_sorts, declared_funs)}))")
    return "(push 1)\n" + "\n".join(decls + body) + "\n  (check-sat)\n(pop 1)"


def _smt_name(n):
    return n.replace("#", "_")


def _smt_term(sig, t, declared_sorts, declared_funs, env=()):
    t = whnf_static(t)
    lit = as_int_literal(t)
    if lit is not None:
        return str(lit) if lit >= 0 else f"(- {abs(lit)})"
    match t:
        case SVar(n):
            return _smt_name(n)
        case SCst(("forall" | "exists") as q, (SLam() as lam,)):
            name, body = open_fresh(lam)
            smt = _smt_sort(lam.sort, declared_sorts)
            inner = _smt_term(sig, whnf_static(body), declared_sorts, declared_funs, env)
            return f"({q} (({_smt_name(name)} {smt})) {inner})"
        case SCst("ne", (a, b)):
            sa = _smt_term(sig, a, declared_sorts, declared_funs, env)
            sb = _smt_term(sig, b, declared_sorts, declared_funs, env)
            return f"(not (= {sa} {sb}))"
        case SCst(head, ()) if head in _SMT_OP:
            return _SMT_OP[head]
        case SCst(head, args):
            parts = [_smt_term(sig, a, declared_sorts, declared_funs, env) for a in args]
            if head in _SMT_OP:
                return f"({_SMT_OP[head]} {' '.join(parts)})"
            _declare_fun(sig, head, args, declared_sorts, declared_funs)
            if not parts:
                return _smt_name(head)
            return f"({_smt_name(head)} {' '.join(parts)})"
    raise UnsupportedSort(f"cannot export term {t}")


def _declare_fun(sig, head, args, declared_sorts, declared_funs):
    if head in declared_funs:
        return
    overloads = sig.scx.get(head)
    if not overloads:
        raise UnsupportedSort(f"unknown constant {head}")
    cs = overloads[0]
    arg_s = " ".join(_smt_sort(s, declared_sorts) for s in cs.args)
    res = _smt_sort(cs.result, declared_sorts)
    if cs.args:
        declared_funs[head] = f"(declare-fun {_smt_name(head)} ({arg_s}) {res})"
    else:
        declared_funs[head] = f"(declare-const {_smt_name(head)} {res})"
