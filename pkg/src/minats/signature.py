"""Signatures: declared constants of the statics and dynamics.

A signature maps static constants to c-sorts (with overloading, since the
product/arrow/assert/guard constructors are shared between the bool, type
and prop layers), dynamic constants to c-types, and carries the delta rules
of primitive functions plus the proof-erasure target table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from minats.errors import ArityMismatch, SortMismatch, ElabError
from minats.statics import (
    Arrow, BOOL, Base, CSort, INT, PROP, SCst, SVar, Sort, StaticTerm, TYPE,
    s_forall, subst_static,
)

# Result bases admitted for the quantifier families forall/exists.
_QUANT_BASES_ATS0 = ("bool", "type")
_QUANT_BASES_PF = ("bool", "type", "prop")


@dataclass(frozen=True)
class CType:
    """Classifier of a dynamic constant: forall qvars. guards => (args) => result.

    `kind` is "dcc" for constructors (result headed by the associated scc),
    "dcf" for functions with delta rules, and "praxi" for assumed proof
    constants.
    """

    qvars: tuple = ()
    guards: tuple = ()
    args: tuple = ()
    result: StaticTerm = None
    kind: str = "dcc"
    scc: str = None

    def instantiate(self, sargs):
        if len(sargs) != len(self.qvars):
            raise ArityMismatch(
                f"expected {len(self.qvars)} static arguments, got {len(sargs)}")
        theta = {name: s for (name, _), s in zip(self.qvars, sargs)}
        guards = tuple(subst_static(g, theta) for g in self.guards)
        args = tuple(subst_static(a, theta) for a in self.args)
        return guards, args, subst_static(self.result, theta)

    def __str__(self):
        qs = "".join(f"{{{n}:{s}}}" for n, s in self.qvars)
        gs = "".join(f"{g} => " for g in self.guards)
        return f"{qs}{gs}({', '.join(str(a) for a in self.args)}) => {self.result}"


def int_literal_ctype(n: int) -> CType:
    return CType(result=SCst("int", (SCst(str(n)),)), kind="dcc", scc="int")


class Signature:
    """Mutable while declarations are elaborated, shared read-only afterwards."""

    def __init__(self, pf: bool = False):
        self.pf = pf
        self.base_sorts = {"bool", "int", "type"} | ({"prop"} if pf else set())
        self.scx = {}            # name -> [CSort]
        self.dcx = {}            # name -> CType
        self.dcc_of_scc = {}     # scc name -> [dcc names]
        self.delta = {}          # dcf name -> callable(sargs, argterms) -> term|None
        self.index_roles = {}    # scc name -> ("tyarg"|"index", ...)
        self.erase_target = {}   # prop scx name -> bool scx name
        self.axioms = []         # assumed closed bool terms (export obligations)
        self.datasorts = {}      # datasort name -> [constructor scx names]
        self.dataprops = set()   # scc names declared as dataprops
        self._install_builtins()

    # -- static constants ---------------------------------------------------

    def declare_scx(self, name: str, csort: CSort):
        self.scx.setdefault(name, [])
        if csort in self.scx[name]:
            raise ElabError(f"duplicate static constant {name} : {csort}")
        self.scx[name].append(csort)

    def resolve_scx(self, head: str, arg_sorts: tuple) -> CSort:
        try:
            int(head)
            if arg_sorts:
                raise ArityMismatch(f"integer literal {head} takes no arguments")
            return CSort((), INT)
        except ValueError:
            pass
        if head in ("forall", "exists"):
            if len(arg_sorts) != 1:
                raise ArityMismatch(f"{head} takes one argument")
            a = arg_sorts[0]
            bases = _QUANT_BASES_PF if self.pf else _QUANT_BASES_ATS0
            if isinstance(a, Arrow) and isinstance(a.cod, Base) and a.cod.name in bases:
                return CSort((a,), a.cod)
            raise SortMismatch(f"{head} applied to argument of sort {a}")
        if head in ("eq", "ne"):
            if len(arg_sorts) != 2:
                raise ArityMismatch(f"{head} takes two arguments")
            a, b = arg_sorts
            if a == b and isinstance(a, Base):
                return CSort((a, b), BOOL)
            raise SortMismatch(f"{head} applied to sorts {a}, {b}")
        overloads = self.scx.get(head)
        if overloads is None:
            raise SortMismatch(f"unknown static constant {head}")
        for cs in overloads:
            if cs.args == arg_sorts:
                return cs
        if all(len(cs.args) != len(arg_sorts) for cs in overloads):
            raise ArityMismatch(
                f"{head} takes {len(overloads[0].args)} arguments, got {len(arg_sorts)}")
        raise SortMismatch(
            f"no overload of {head} matches argument sorts ({', '.join(map(str, arg_sorts))})")

    def scx_overload_exists(self, head: str, arg_sorts: tuple) -> bool:
        try:
            self.resolve_scx(head, arg_sorts)
            return True
        except (SortMismatch, ArityMismatch):
            return False

    def meta_sort(self, ident: int):
        return None

    # -- dynamic constants --------------------------------------------------

    def declare_dcx(self, name: str, ctype: CType):
        if name in self.dcx:
            raise ElabError(f"duplicate dynamic constant {name}")
        self.dcx[name] = ctype
        if ctype.kind == "dcc" and ctype.scc is not None:
            self.dcc_of_scc.setdefault(ctype.scc, []).append(name)

    def lookup_dcx(self, name: str) -> CType:
        try:
            return int_literal_ctype(int(name))
        except ValueError:
            pass
        ct = self.dcx.get(name)
        if ct is None:
            raise ElabError(f"unknown dynamic constant {name}")
        return ct

    def has_dcx(self, name: str) -> bool:
        try:
            int(name)
            return True
        except ValueError:
            return name in self.dcx

    def delta_rule(self, name: str):
        return self.delta.get(name)

    # -- sorts --------------------------------------------------------------

    def declare_base_sort(self, name: str):
        if name in self.base_sorts:
            raise ElabError(f"duplicate sort {name}")
        self.base_sorts.add(name)

    def is_datasort(self, name: str) -> bool:
        return name in self.datasorts

    def datasort_constructors(self, sort_name: str):
        return self.datasorts.get(sort_name, [])

    def is_datasort_constructor(self, head: str) -> bool:
        return any(head in cs for cs in self.datasorts.values())

    # -- builtins -------------------------------------------------------------

    def _install_builtins(self):
        b, i, t = BOOL, INT, TYPE
        for name in ("true", "false"):
            self.declare_scx(name, CSort((), b))
        for name in ("add", "sub", "mul", "div"):
            self.declare_scx(name, CSort((i, i), i))
        for name in ("lt", "le", "gt", "ge"):
            self.declare_scx(name, CSort((i, i), b))
        self.declare_scx("and", CSort((b, b), b))
        self.declare_scx("imp", CSort((b, b), b))
        self.declare_scx("tup", CSort((t, t), t))
        self.declare_scx("fun", CSort((t, t), t))
        self.declare_scx("asrt", CSort((b, t), t))
        self.declare_scx("guard", CSort((b, t), t))
        self.declare_scx("subty", CSort((t, t), b))
        self.declare_scx("int", CSort((i,), t))
        self.declare_scx("bool", CSort((b,), t))
        self.declare_scx("list", CSort((t, i), t))
        self.declare_scx("unit", CSort((), t))
        self.index_roles["int"] = ("index",)
        self.index_roles["bool"] = ("index",)
        self.index_roles["list"] = ("tyarg", "index")
        self.index_roles["unit"] = ()
        if self.pf:
            p = PROP
            self.declare_scx("tup", CSort((p, p), p))
            self.declare_scx("tup", CSort((p, t), t))
            self.declare_scx("fun", CSort((p, p), p))
            self.declare_scx("fun", CSort((p, t), t))
            self.declare_scx("asrt", CSort((b, p), p))
            self.declare_scx("guard", CSort((b, p), p))
            self.declare_scx("subpr", CSort((p, p), b))
            self.declare_scx("unit_p", CSort((), p))
            self.index_roles["unit_p"] = ()

        self._install_builtin_dcx()

    def _install_builtin_dcx(self):
        a1, a2 = SVar("a1"), SVar("a2")
        int_a1 = SCst("int", (a1,))
        int_a2 = SCst("int", (a2,))

        def arith(op):
            return CType(
                qvars=(("a1", INT), ("a2", INT)),
                args=(int_a1, int_a2),
                result=SCst("int", (SCst(op, (a1, a2)),)),
                kind="dcf")

        self.declare_dcx("iadd", arith("add"))
        self.declare_dcx("isub", arith("sub"))
        self.declare_dcx("imul", arith("mul"))
        self.declare_dcx("idiv", CType(
            qvars=(("a1", INT), ("a2", INT)),
            guards=(SCst("ne", (a2, SCst("0"))),),
            args=(int_a1, int_a2),
            result=SCst("int", (SCst("div", (a1, a2)),)),
            kind="dcf"))

        def cmp_ctype(op):
            return CType(
                qvars=(("a1", INT), ("a2", INT)),
                args=(int_a1, int_a2),
                result=SCst("bool", (SCst(op, (a1, a2)),)),
                kind="dcf")

        for dname, op in (("ilt", "lt"), ("ile", "le"), ("igt", "gt"),
                          ("ige", "ge"), ("ieq", "eq"), ("ine", "ne")):
            self.declare_dcx(dname, cmp_ctype(op))

        av = SVar("a")
        nv = SVar("n")
        self.declare_dcx("nil", CType(
            qvars=(("a", TYPE),),
            result=SCst("list", (av, SCst("0"))),
            kind="dcc", scc="list"))
        self.declare_dcx("cons", CType(
            qvars=(("a", TYPE), ("n", INT)),
            guards=(SCst("ge", (nv, SCst("0"))),),
            args=(av, SCst("list", (av, nv))),
            result=SCst("list", (av, SCst("add", (nv, SCst("1"))))),
            kind="dcc", scc="list"))
        self.declare_dcx("unitv", CType(result=SCst("unit"), kind="dcc", scc="unit"))
        self.declare_dcx("btrue", CType(
            result=SCst("bool", (SCst("true"),)), kind="dcc", scc="bool"))
        self.declare_dcx("bfalse", CType(
            result=SCst("bool", (SCst("false"),)), kind="dcc", scc="bool"))

        self.delta.update(_DELTA_RULES)


# ---------------------------------------------------------------------------
# Delta rules for the builtin integer primitives
# ---------------------------------------------------------------------------


def int_div(m: int, n: int) -> int:
    """Integer division truncating toward zero (C convention)."""
    q = m // n
    if m % n != 0 and (m < 0) != (n < 0):
        q += 1
    return q


def _lit(term):
    # Imported lazily to avoid a cycle with the dynamics module.
    from minats.dynamics import DCst
    if isinstance(term, DCst) and not term.args and not term.sargs:
        try:
            return int(term.head)
        except ValueError:
            return None
    return None


def _int_result(n: int):
    from minats.dynamics import DCst
    return DCst(str(n), (), ())


def _bool_result(b: bool):
    from minats.dynamics import DCst
    return DCst("btrue" if b else "bfalse", (), ())


def _arith_delta(fn, guard=None):
    def rule(sargs, args):
        if len(args) != 2:
            return None
        m, n = _lit(args[0]), _lit(args[1])
        if m is None or n is None:
            return None
        if guard is not None and not guard(m, n):
            return None
        return fn(m, n)
    return rule


_DELTA_RULES = {
    "iadd": _arith_delta(lambda m, n: _int_result(m + n)),
    "isub": _arith_delta(lambda m, n: _int_result(m - n)),
    "imul": _arith_delta(lambda m, n: _int_result(m * n)),
    "idiv": _arith_delta(lambda m, n: _int_result(int_div(m, n)), guard=lambda m, n: n != 0),
    "ilt": _arith_delta(lambda m, n: _bool_result(m < n)),
    "ile": _arith_delta(lambda m, n: _bool_result(m <= n)),
    "igt": _arith_delta(lambda m, n: _bool_result(m > n)),
    "ige": _arith_delta(lambda m, n: _bool_result(m >= n)),
    "ieq": _arith_delta(lambda m, n: _bool_result(m == n)),
    "ine": _arith_delta(lambda m, n: _bool_result(m != n)),
}


class SigView:
    """A read-only view of a signature extended with unification-variable sorts.

    The checker threads one of these through sorting calls so metavariables
    can be sorted without mutating the shared signature.
    """

    def __init__(self, sig: Signature, meta_sorts: dict):
        self._sig = sig
        self._meta_sorts = meta_sorts

    def meta_sort(self, ident: int):
        return self._meta_sorts.get(ident)

    def __getattr__(self, item):
        return getattr(self._sig, item)
