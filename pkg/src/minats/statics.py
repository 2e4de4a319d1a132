"""The static language: sorts, static terms, sorting, and substitution.

Static terms form a simply typed lambda-calculus over a set of constants.
Types and props are just static terms of base sort `type` / `prop`.

Representation: locally nameless.  Variables bound by a static lambda are
de Bruijn indices (`SBound`); free variables are named (`SVar`).  As a
consequence structural equality *is* alpha-equivalence, and substitution
of locally closed terms can never capture.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from minats.errors import ArityMismatch, SortMismatch, UnboundStaticVar, SyntaxError_
from minats import sexpr

# ---------------------------------------------------------------------------
# Sorts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sort:
    pass


@dataclass(frozen=True)
class Base(Sort):
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Arrow(Sort):
    dom: Sort
    cod: Sort

    def __str__(self):
        return f"({self.dom} -> {self.cod})"


BOOL = Base("bool")
INT = Base("int")
TYPE = Base("type")
PROP = Base("prop")


@dataclass(frozen=True)
class CSort:
    """Classifier of a static constant: (s1,...,sn) => b.

    The result is a base sort only; a c-sort is not itself a sort.
    """

    args: tuple
    result: Base

    def __str__(self):
        return "(" + ", ".join(str(a) for a in self.args) + ") => " + str(self.result)


# ---------------------------------------------------------------------------
# Static terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StaticTerm:
    pass


@dataclass(frozen=True)
class SVar(StaticTerm):
    name: str

    def __str__(self):
        return pretty_name(self.name)


@dataclass(frozen=True)
class SBound(StaticTerm):
    index: int

    def __str__(self):
        return f"#{self.index}"


@dataclass(frozen=True)
class SCst(StaticTerm):
    head: str
    args: tuple = ()

    def __str__(self):
        return str_static(self)


@dataclass(frozen=True)
class SLam(StaticTerm):
    # The hint is a printing name only; it does not take part in equality.
    hint: str = field(compare=False)
    sort: Sort
    body: StaticTerm

    def __str__(self):
        return str_static(self)


@dataclass(frozen=True)
class SApp(StaticTerm):
    fun: StaticTerm
    arg: StaticTerm

    def __str__(self):
        return str_static(self)


@dataclass(frozen=True)
class SMeta(StaticTerm):
    """Checker-internal unification variable.  Never occurs in final terms."""

    ident: int

    def __str__(self):
        return f"?{self.ident}"


_fresh_counter = itertools.count(1)


def fresh_name(base: str = "a") -> str:
    return f"{base.split('#')[0]}#{next(_fresh_counter)}"


def pretty_name(name: str) -> str:
    return name.split("#")[0] if "#" in name else name


# Constructors doing the index bookkeeping ---------------------------------


def s_int(n: int) -> SCst:
    return SCst(str(n))


def as_int_literal(s: StaticTerm):
    if isinstance(s, SCst) and not s.args:
        try:
            return int(s.head)
        except ValueError:
            return None
    return None


def s_lam(name: str, sort: Sort, body: StaticTerm) -> SLam:
    """Bind the free variable `name` in `body`."""
    return SLam(name, sort, close_term(body, name))


def s_quant(q: str, name: str, sort: Sort, body: StaticTerm) -> SCst:
    return SCst(q, (s_lam(name, sort, body),))


def s_forall(name: str, sort: Sort, body: StaticTerm) -> SCst:
    return s_quant("forall", name, sort, body)


def s_exists(name: str, sort: Sort, body: StaticTerm) -> SCst:
    return s_quant("exists", name, sort, body)


def close_term(term: StaticTerm, name: str, depth: int = 0) -> StaticTerm:
    match term:
        case SVar(n) if n == name:
            return SBound(depth)
        case SVar(_) | SBound(_) | SMeta(_) | SCst(_, ()):
            return term
        case SCst(head, args):
            return SCst(head, tuple(close_term(a, name, depth) for a in args))
        case SLam(hint, sort, body):
            return SLam(hint, sort, close_term(body, name, depth + 1))
        case SApp(fun, arg):
            return SApp(close_term(fun, name, depth), close_term(arg, name, depth))
    raise TypeError(f"not a static term: {term!r}")


def open_term(body: StaticTerm, replacement: StaticTerm, depth: int = 0) -> StaticTerm:
    """Replace the outermost bound variable of a lambda body."""
    match body:
        case SBound(i) if i == depth:
            return replacement
        case SVar(_) | SBound(_) | SMeta(_) | SCst(_, ()):
            return body
        case SCst(head, args):
            return SCst(head, tuple(open_term(a, replacement, depth) for a in args))
        case SLam(hint, sort, inner):
            return SLam(hint, sort, open_term(inner, replacement, depth + 1))
        case SApp(fun, arg):
            return SApp(open_term(fun, replacement, depth), open_term(arg, replacement, depth))
    raise TypeError(f"not a static term: {body!r}")


def open_fresh(lam: SLam) -> tuple:
    """Open a lambda body with a fresh named variable; returns (name, body)."""
    name = fresh_name(lam.hint or "a")
    return name, open_term(lam.body, SVar(name))


def subst_static(term: StaticTerm, theta: dict) -> StaticTerm:
    """Simultaneous substitution of free variables.

    Capture is impossible: bound variables are indices and the replacement
    terms are locally closed.
    """
    if not theta:
        return term
    match term:
        case SVar(n):
            return theta.get(n, term)
        case SBound(_) | SMeta(_) | SCst(_, ()):
            return term
        case SCst(head, args):
            return SCst(head, tuple(subst_static(a, theta) for a in args))
        case SLam(hint, sort, body):
            return SLam(hint, sort, subst_static(body, theta))
        case SApp(fun, arg):
            return SApp(subst_static(fun, theta), subst_static(arg, theta))
    raise TypeError(f"not a static term: {term!r}")


def subst_metas(term: StaticTerm, solution: dict) -> StaticTerm:
    match term:
        case SMeta(i):
            t = solution.get(i)
            return term if t is None else subst_metas(t, solution)
        case SVar(_) | SBound(_) | SCst(_, ()):
            return term
        case SCst(head, args):
            return SCst(head, tuple(subst_metas(a, solution) for a in args))
        case SLam(hint, sort, body):
            return SLam(hint, sort, subst_metas(body, solution))
        case SApp(fun, arg):
            return SApp(subst_metas(fun, solution), subst_metas(arg, solution))
    raise TypeError(f"not a static term: {term!r}")


def free_svars(term: StaticTerm, acc=None) -> set:
    if acc is None:
        acc = set()
    match term:
        case SVar(n):
            acc.add(n)
        case SCst(_, args):
            for a in args:
                free_svars(a, acc)
        case SLam(_, _, body):
            free_svars(body, acc)
        case SApp(fun, arg):
            free_svars(fun, acc)
            free_svars(arg, acc)
        case _:
            pass
    return acc


def metas_of(term: StaticTerm, acc=None) -> set:
    if acc is None:
        acc = set()
    match term:
        case SMeta(i):
            acc.add(i)
        case SCst(_, args):
            for a in args:
                metas_of(a, acc)
        case SLam(_, _, body):
            metas_of(body, acc)
        case SApp(fun, arg):
            metas_of(fun, acc)
            metas_of(arg, acc)
        case _:
            pass
    return acc


# ---------------------------------------------------------------------------
# Static contexts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SCtx:
    """Ordered static variable context; rightmost binding wins."""

    bindings: tuple = ()

    def extend(self, name: str, sort: Sort) -> "SCtx":
        return SCtx(self.bindings + ((name, sort),))

    def lookup(self, name: str):
        for n, s in reversed(self.bindings):
            if n == name:
                return s
        return None

    def names(self):
        return [n for n, _ in self.bindings]

    def __iter__(self):
        return iter(self.bindings)

    def __len__(self):
        return len(self.bindings)

    def __str__(self):
        return ", ".join(f"{pretty_name(n)}:{s}" for n, s in self.bindings)


EMPTY_SCTX = SCtx()


# ---------------------------------------------------------------------------
# Sorting
# ---------------------------------------------------------------------------


def sort_of(sig, ctx: SCtx, term: StaticTerm) -> Sort:
    """Assign the unique sort of a static term.

    Deterministic because lambda binders carry sort annotations; constant
    overloads are resolved from already-sorted arguments.
    """
    match term:
        case SVar(n):
            s = ctx.lookup(n)
            if s is None:
                raise UnboundStaticVar(f"unbound static variable {pretty_name(n)}")
            return s
        case SMeta(i):
            s = sig.meta_sort(i)
            if s is None:
                raise UnboundStaticVar(f"unresolved unification variable ?{i}")
            return s
        case SCst(head, args):
            arg_sorts = tuple(sort_of(sig, ctx, a) for a in args)
            cs = sig.resolve_scx(head, arg_sorts)
            return cs.result
        case SLam(_, sort, _):
            name, body = open_fresh(term)
            return Arrow(sort, sort_of(sig, ctx.extend(name, sort), body))
        case SApp(fun, arg):
            fs = sort_of(sig, ctx, fun)
            if not isinstance(fs, Arrow):
                raise SortMismatch(f"application of non-arrow sort {fs}")
            asort = sort_of(sig, ctx, arg)
            if asort != fs.dom:
                raise SortMismatch(f"argument sort {asort} does not match {fs.dom}")
            return fs.cod
        case SBound(_):
            raise UnboundStaticVar("dangling bound variable")
    raise TypeError(f"not a static term: {term!r}")


# ---------------------------------------------------------------------------
# Beta-normalization
# ---------------------------------------------------------------------------


def whnf_static(term: StaticTerm) -> StaticTerm:
    """Beta-normal form of a well-sorted static term.

    Terminates because the statics is simply typed.  Quantified types are
    applications of `forall`/`exists` to a lambda, so normalizing makes the
    binder notation transparent to all comparisons.
    """
    match term:
        case SVar(_) | SBound(_) | SMeta(_) | SCst(_, ()):
            return term
        case SCst(head, args):
            return SCst(head, tuple(whnf_static(a) for a in args))
        case SLam(hint, sort, body):
            return SLam(hint, sort, whnf_static(body))
        case SApp(fun, arg):
            nf = whnf_static(fun)
            na = whnf_static(arg)
            if isinstance(nf, SLam):
                return whnf_static(open_term(nf.body, na))
            return SApp(nf, na)
    raise TypeError(f"not a static term: {term!r}")


def alpha_eq(a: StaticTerm, b: StaticTerm) -> bool:
    """Alpha-equivalence; plain equality thanks to the representation."""
    return a == b


# ---------------------------------------------------------------------------
# Printing / reading (s-expression format)
# ---------------------------------------------------------------------------

QUANTS = ("forall", "exists")


def sort_to_sexpr(sort: Sort):
    match sort:
        case Base(name):
            return name
        case Arrow(dom, cod):
            return ["->", sort_to_sexpr(dom), sort_to_sexpr(cod)]
    raise TypeError(f"not a sort: {sort!r}")


def sort_from_sexpr(sx) -> Sort:
    if isinstance(sx, str):
        return Base(sx)
    if len(sx) == 3 and sx[0] == "->":
        return Arrow(sort_from_sexpr(sx[1]), sort_from_sexpr(sx[2]))
    raise SyntaxError_(f"bad sort s-expression: {sexpr.dumps(sx)}")


def static_to_sexpr(term: StaticTerm, env: tuple = ()):
    """Print with binder names restored; `env` maps de Bruijn levels to names."""
    match term:
        case SVar(n):
            return pretty_name(n)
        case SMeta(i):
            return f"?{i}"
        case SBound(i):
            if i < len(env):
                return env[len(env) - 1 - i]
            return f"#{i}"
        case SCst(q, (SLam(hint, sort, body),)) if q in QUANTS:
            name = _unshadow(pretty_name(hint or "a"), env)
            return [q, [name, sort_to_sexpr(sort)], static_to_sexpr(body, env + (name,))]
        case SCst(head, ()):
            return head
        case SCst(head, args):
            return [head] + [static_to_sexpr(a, env) for a in args]
        case SLam(hint, sort, body):
            name = _unshadow(pretty_name(hint or "a"), env)
            return ["lam", [name, sort_to_sexpr(sort)], static_to_sexpr(body, env + (name,))]
        case SApp(fun, arg):
            return ["app", static_to_sexpr(fun, env), static_to_sexpr(arg, env)]
    raise TypeError(f"not a static term: {term!r}")


def _unshadow(name: str, env: tuple) -> str:
    if name not in env:
        return name
    k = 1
    while f"{name}{k}" in env:
        k += 1
    return f"{name}{k}"


def static_from_sexpr(sx, bound: tuple = ()) -> StaticTerm:
    if isinstance(sx, str):
        if sx in bound:
            return SVar(sx)
        try:
            int(sx)
            return SCst(sx)
        except ValueError:
            pass
        if sx in ("true", "false"):
            return SCst(sx)
        return SVar(sx)
    head = sx[0]
    if head in QUANTS and len(sx) == 3 and isinstance(sx[1], list):
        name, sortsx = sx[1]
        body = static_from_sexpr(sx[2], bound + (name,))
        return s_quant(head, name, sort_from_sexpr(sortsx), body)
    if head == "lam" and len(sx) == 3 and isinstance(sx[1], list):
        name, sortsx = sx[1]
        body = static_from_sexpr(sx[2], bound + (name,))
        return s_lam(name, sort_from_sexpr(sortsx), body)
    if head == "app" and len(sx) == 3:
        return SApp(static_from_sexpr(sx[1], bound), static_from_sexpr(sx[2], bound))
    if isinstance(head, str):
        return SCst(head, tuple(static_from_sexpr(a, bound) for a in sx[1:]))
    raise SyntaxError_(f"bad static term s-expression: {sexpr.dumps(sx)}")


def str_static(term: StaticTerm) -> str:
    return sexpr.dumps(static_to_sexpr(term))
