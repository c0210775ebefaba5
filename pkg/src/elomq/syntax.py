"""Syntax of EL/ELI TBoxes, ABoxes, CQs and OMQs, plus normalization and
generic homomorphism search.

All values are immutable after construction; operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Optional

from .errors import DialectError


# ---------------------------------------------------------------------------
# Roles and concepts


@dataclass(frozen=True)
class Role:
    name: str
    inverted: bool = False

    def inverse(self) -> "Role":
        return Role(self.name, not self.inverted)

    def key(self):
        return (self.name, self.inverted)


class Concept:
    __slots__ = ()


@dataclass(frozen=True)
class Top(Concept):
    __slots__ = ()


TOP = Top()


@dataclass(frozen=True)
class Atom(Concept):
    name: str


@dataclass(frozen=True)
class Exists(Concept):
    role: Role
    arg: Concept


@dataclass(frozen=True)
class And(Concept):
    # Flat, sorted, deduplicated; always at least two conjuncts.
    args: tuple


def concept_key(c: Concept):
    if isinstance(c, Top):
        return (0,)
    if isinstance(c, Atom):
        return (1, c.name)
    if isinstance(c, Exists):
        return (2, c.role.name, c.role.inverted, concept_key(c.arg))
    return (3, tuple(concept_key(a) for a in c.args))


def conj(*concepts: Concept) -> Concept:
    """Conjunction canonicalized as a sorted flat set of conjuncts."""
    flat = []
    for c in concepts:
        if isinstance(c, And):
            flat.extend(c.args)
        else:
            flat.append(c)
    uniq = sorted(set(flat), key=concept_key)
    if not uniq:
        return TOP
    if len(uniq) == 1:
        return uniq[0]
    return And(tuple(uniq))


def concept_names(c: Concept) -> frozenset:
    if isinstance(c, Atom):
        return frozenset([c.name])
    if isinstance(c, Exists):
        return concept_names(c.arg)
    if isinstance(c, And):
        out = frozenset()
        for a in c.args:
            out |= concept_names(a)
        return out
    return frozenset()


def role_names(c: Concept) -> frozenset:
    if isinstance(c, Exists):
        return frozenset([c.role.name]) | role_names(c.arg)
    if isinstance(c, And):
        out = frozenset()
        for a in c.args:
            out |= role_names(a)
        return out
    return frozenset()


def has_inverse(c: Concept) -> bool:
    if isinstance(c, Exists):
        return c.role.inverted or has_inverse(c.arg)
    if isinstance(c, And):
        return any(has_inverse(a) for a in c.args)
    return False


def concept_size(c: Concept) -> int:
    """Symbol count: every concept or role name counts as one symbol."""
    if isinstance(c, (Top, Atom)):
        return 1
    if isinstance(c, Exists):
        return 1 + concept_size(c.arg)
    return sum(concept_size(a) for a in c.args)


# ---------------------------------------------------------------------------
# TBox


@dataclass(frozen=True)
class CI:
    lhs: Concept
    rhs: Concept

    def key(self):
        return (concept_key(self.lhs), concept_key(self.rhs))


@dataclass(frozen=True)
class TBox:
    cis: tuple

    def __init__(self, cis: Iterable[CI]):
        object.__setattr__(self, "cis", tuple(sorted(set(cis), key=CI.key)))

    @cached_property
    def dialect(self) -> str:
        for ci in self.cis:
            if has_inverse(ci.lhs) or has_inverse(ci.rhs):
                return "ELI"
        return "EL"

    @cached_property
    def concept_names(self) -> frozenset:
        out = frozenset()
        for ci in self.cis:
            out |= concept_names(ci.lhs) | concept_names(ci.rhs)
        return out

    @cached_property
    def role_names(self) -> frozenset:
        out = frozenset()
        for ci in self.cis:
            out |= role_names(ci.lhs) | role_names(ci.rhs)
        return out

    @cached_property
    def size(self) -> int:
        return sum(concept_size(ci.lhs) + concept_size(ci.rhs) for ci in self.cis)


# ---------------------------------------------------------------------------
# Normalized TBox

_NORMAL_SHAPES = ("exists_lhs", "top_lhs", "conj_lhs", "atomic", "exists_rhs")


def _normal_shape(ci: CI) -> Optional[str]:
    l, r = ci.lhs, ci.rhs
    if isinstance(r, Atom):
        if isinstance(l, Exists) and isinstance(l.arg, Atom):
            return "exists_lhs"
        if isinstance(l, Top):
            return "top_lhs"
        if isinstance(l, Atom):
            return "atomic"
        if isinstance(l, And) and len(l.args) == 2 and all(isinstance(a, Atom) for a in l.args):
            return "conj_lhs"
        return None
    if isinstance(l, Atom) and isinstance(r, Exists) and isinstance(r.arg, Atom):
        return "exists_rhs"
    return None


@dataclass(frozen=True)
class NormalizedTBox:
    cis: tuple
    fresh_names: frozenset

    def __init__(self, cis: Iterable[CI], fresh_names: Iterable[str] = ()):
        cis = tuple(sorted(set(cis), key=CI.key))
        for ci in cis:
            if _normal_shape(ci) is None:
                raise ValueError(f"concept inclusion not in normal form: {ci}")
        object.__setattr__(self, "cis", cis)
        object.__setattr__(self, "fresh_names", frozenset(fresh_names))

    def as_tbox(self) -> TBox:
        return TBox(self.cis)

    @cached_property
    def dialect(self) -> str:
        return self.as_tbox().dialect

    @cached_property
    def concept_names(self) -> frozenset:
        return self.as_tbox().concept_names

    @cached_property
    def role_names(self) -> frozenset:
        return self.as_tbox().role_names


class _NameAllocator:
    def __init__(self, prefix: str, taken: Iterable[str]):
        self._prefix = prefix
        self._taken = set(taken)
        self._n = 0

    def fresh(self) -> str:
        while True:
            name = f"{self._prefix}{self._n}"
            self._n += 1
            if name not in self._taken:
                self._taken.add(name)
                return name


def normalize(tbox: TBox, prefix: str = "_nrm") -> NormalizedTBox:
    """Rewrite a TBox into normal form, introducing fresh concept names.

    The result is a conservative extension: answers of any OMQ over the
    original signature are unchanged.
    """
    alloc = _NameAllocator(prefix, tbox.concept_names)
    out: list[CI] = []
    fresh: list[str] = []
    lhs_memo: dict[Concept, str] = {}
    rhs_memo: dict[Concept, str] = {}

    def fresh_name() -> str:
        n = alloc.fresh()
        fresh.append(n)
        return n

    def lhs_atom(c: Concept) -> Concept:
        # Returns an atomic concept X with c <= X entailed by emitted CIs.
        if isinstance(c, Atom):
            return c
        if c in lhs_memo:
            return Atom(lhs_memo[c])
        x = fresh_name()
        lhs_memo[c] = x
        emit(c, Atom(x))
        return Atom(x)

    def rhs_atom(c: Concept) -> Concept:
        # Returns an atomic concept X with X <= c entailed by emitted CIs.
        if isinstance(c, Atom):
            return c
        if c in rhs_memo:
            return Atom(rhs_memo[c])
        x = fresh_name()
        rhs_memo[c] = x
        emit(Atom(x), c)
        return Atom(x)

    def emit(l: Concept, r: Concept):
        if isinstance(r, And):
            for part in r.args:
                emit(l, part)
            return
        if isinstance(r, Top):
            return
        if isinstance(r, Exists):
            base = rhs_atom(r.arg)
            if not isinstance(l, Atom):
                l = lhs_atom(l)
            out.append(CI(l, Exists(r.role, base)))
            return
        # r is atomic
        if isinstance(l, (Top, Atom)):
            out.append(CI(l, r))
            return
        if isinstance(l, Exists):
            base = l.arg if isinstance(l.arg, Atom) else lhs_atom(l.arg)
            out.append(CI(Exists(l.role, base), r))
            return
        # l is a conjunction: atomize members, then chain pairwise
        atoms = []
        for part in l.args:
            if isinstance(part, Top):
                continue
            atoms.append(lhs_atom(part))
        if not atoms:
            out.append(CI(TOP, r))
            return
        if len(atoms) == 1:
            out.append(CI(atoms[0], r))
            return
        cur = atoms[0]
        for nxt in atoms[1:-1]:
            step = Atom(fresh_name())
            out.append(CI(conj(cur, nxt), step))
            cur = step
        out.append(CI(conj(cur, atoms[-1]), r))

    for ci in tbox.cis:
        emit(ci.lhs, ci.rhs)
    return NormalizedTBox(out, fresh)


# ---------------------------------------------------------------------------
# ABox and signature


@dataclass(frozen=True)
class ABox:
    concepts: frozenset  # of (concept_name, individual)
    roles: frozenset  # of (role_name, source, target)

    def __init__(self, concepts: Iterable = (), roles: Iterable = ()):
        object.__setattr__(self, "concepts", frozenset(tuple(x) for x in concepts))
        object.__setattr__(self, "roles", frozenset(tuple(x) for x in roles))

    @cached_property
    def individuals(self) -> frozenset:
        out = {a for _, a in self.concepts}
        for _, a, b in self.roles:
            out.add(a)
            out.add(b)
        return frozenset(out)

    @cached_property
    def out_edges(self) -> Mapping[str, tuple]:
        m: dict[str, list] = {}
        for r, a, b in sorted(self.roles):
            m.setdefault(a, []).append((r, b))
        return {k: tuple(v) for k, v in m.items()}

    @cached_property
    def in_edges(self) -> Mapping[str, tuple]:
        m: dict[str, list] = {}
        for r, a, b in sorted(self.roles):
            m.setdefault(b, []).append((r, a))
        return {k: tuple(v) for k, v in m.items()}

    @cached_property
    def labels(self) -> Mapping[str, frozenset]:
        m: dict[str, set] = {}
        for c, a in self.concepts:
            m.setdefault(a, set()).add(c)
        return {k: frozenset(v) for k, v in m.items()}

    def label(self, ind: str) -> frozenset:
        return self.labels.get(ind, frozenset())

    def union(self, other: "ABox") -> "ABox":
        return ABox(self.concepts | other.concepts, self.roles | other.roles)

    def restrict(self, inds: Iterable[str]) -> "ABox":
        s = set(inds)
        return ABox(
            {(c, a) for c, a in self.concepts if a in s},
            {(r, a, b) for r, a, b in self.roles if a in s and b in s},
        )

    def without(self, assertion) -> "ABox":
        if len(assertion) == 2:
            return ABox(self.concepts - {tuple(assertion)}, self.roles)
        return ABox(self.concepts, self.roles - {tuple(assertion)})

    def assertions(self) -> list:
        """All assertions in codec order: concept assertions, then roles."""
        return sorted(self.concepts) + sorted(self.roles)

    def degree(self) -> int:
        succ: dict[str, set] = {}
        for _, a, b in self.roles:
            succ.setdefault(a, set()).add(b)
        return max((len(v) for v in succ.values()), default=0)

    def rename(self, mapping: Mapping[str, str]) -> "ABox":
        f = lambda x: mapping.get(x, x)
        return ABox(
            {(c, f(a)) for c, a in self.concepts},
            {(r, f(a), f(b)) for r, a, b in self.roles},
        )

    @cached_property
    def signature(self) -> "Signature":
        return Signature({c for c, _ in self.concepts}, {r for r, _, _ in self.roles})

    def is_empty(self) -> bool:
        return not self.concepts and not self.roles


@dataclass(frozen=True)
class Signature:
    concepts: frozenset
    roles: frozenset

    def __init__(self, concepts: Iterable[str] = (), roles: Iterable[str] = ()):
        object.__setattr__(self, "concepts", frozenset(concepts))
        object.__setattr__(self, "roles", frozenset(roles))

    def admits(self, abox: ABox) -> bool:
        return (
            {c for c, _ in abox.concepts} <= self.concepts
            and {r for r, _, _ in abox.roles} <= self.roles
        )


# ---------------------------------------------------------------------------
# Conjunctive queries


@dataclass(frozen=True)
class CQ:
    answer_vars: tuple
    unary: frozenset  # of (concept_name, var)
    binary: frozenset  # of (role_name, var, var)
    equalities: frozenset = field(default_factory=frozenset)  # of (var, var)

    def __init__(self, answer_vars=(), unary=(), binary=(), equalities=()):
        object.__setattr__(self, "answer_vars", tuple(answer_vars))
        object.__setattr__(self, "unary", frozenset(tuple(x) for x in unary))
        object.__setattr__(self, "binary", frozenset(tuple(x) for x in binary))
        object.__setattr__(self, "equalities", frozenset(tuple(x) for x in equalities))

    @cached_property
    def variables(self) -> frozenset:
        out = set(self.answer_vars)
        for _, x in self.unary:
            out.add(x)
        for _, x, y in self.binary:
            out.add(x)
            out.add(y)
        for x, y in self.equalities:
            out.add(x)
            out.add(y)
        return frozenset(out)

    @property
    def arity(self) -> int:
        return len(self.answer_vars)

    @property
    def is_boolean(self) -> bool:
        return self.arity == 0

    @cached_property
    def size(self) -> int:
        """Symbol count of the query: unary atoms weigh 2, binary atoms 3."""
        return 2 * len(self.unary) + 3 * len(self.binary) + 2 * len(self.equalities)

    def as_abox(self) -> ABox:
        return ABox({(c, x) for c, x in self.unary}, {(r, x, y) for r, x, y in self.binary})

    def restrict(self, variables: Iterable[str]) -> "CQ":
        s = set(variables)
        return CQ(
            tuple(v for v in self.answer_vars if v in s),
            {(c, x) for c, x in self.unary if x in s},
            {(r, x, y) for r, x, y in self.binary if x in s and y in s},
        )

    def rename(self, mapping: Mapping[str, str]) -> "CQ":
        f = lambda x: mapping.get(x, x)
        return CQ(
            tuple(f(v) for v in self.answer_vars),
            {(c, f(x)) for c, x in self.unary},
            {(r, f(x), f(y)) for r, x, y in self.binary},
            {(f(x), f(y)) for x, y in self.equalities},
        )

    @cached_property
    def concept_names(self) -> frozenset:
        return frozenset(c for c, _ in self.unary)

    @cached_property
    def role_names(self) -> frozenset:
        return frozenset(r for r, _, _ in self.binary)


def eliminate_equalities(q: CQ) -> CQ:
    """Identify variables along equality atoms; survivor is the least name.

    Answer-variable positions collapse onto their representatives, so the
    arity can shrink when two answer variables are identified.
    """
    if not q.equalities:
        return q
    parent: dict[str, str] = {v: v for v in q.variables}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for x, y in sorted(q.equalities):
        rx, ry = find(x), find(y)
        if rx != ry:
            lo, hi = min(rx, ry), max(rx, ry)
            parent[hi] = lo
    mapping = {v: find(v) for v in q.variables}
    seen = set()
    answers = []
    for v in q.answer_vars:
        rv = mapping[v]
        if rv not in seen:
            seen.add(rv)
            answers.append(rv)
    return CQ(
        tuple(answers),
        {(c, mapping[x]) for c, x in q.unary},
        {(r, mapping[x], mapping[y]) for r, x, y in q.binary},
    )


# ---------------------------------------------------------------------------
# OMQ


@dataclass(frozen=True)
class OMQ:
    tbox: TBox
    sigma: Signature
    query: CQ

    def __init__(self, tbox: TBox, sigma: Signature, query: CQ):
        object.__setattr__(self, "tbox", tbox)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "query", eliminate_equalities(query))

    @property
    def arity(self) -> int:
        return self.query.arity

    def is_aq(self) -> bool:
        q = self.query
        return (
            q.arity == 1
            and len(q.unary) == 1
            and not q.binary
            and next(iter(q.unary))[1] == q.answer_vars[0]
        )

    def require_dialect(self, dialect: str):
        if dialect == "EL" and self.tbox.dialect == "ELI":
            raise DialectError("inverse roles are not allowed in an EL OMQ")


# ---------------------------------------------------------------------------
# Homomorphism search


class AboxTarget:
    """Match target backed by a plain ABox."""

    def __init__(self, abox: ABox):
        self.abox = abox
        self._elements = sorted(abox.individuals)
        self._out: dict[tuple, list] = {}
        self._in: dict[tuple, list] = {}
        for r, a, b in sorted(abox.roles):
            self._out.setdefault((a, r), []).append(b)
            self._in.setdefault((b, r), []).append(a)

    def elements(self):
        return self._elements

    def named_elements(self):
        return self._elements

    def has_concept(self, e, name) -> bool:
        return (name, e) in self.abox.concepts

    def has_edge(self, role, e1, e2) -> bool:
        return (role, e1, e2) in self.abox.roles

    def out_neighbors(self, e, role):
        return self._out.get((e, role), [])

    def in_neighbors(self, e, role):
        return self._in.get((e, role), [])


def _element_key(e):
    return (0, e) if isinstance(e, str) else (1, e.idx)


def iter_homomorphisms(src, target, anchor: Optional[Mapping] = None,
                       named_vars: Iterable[str] = ()):
    """Yield all homomorphisms from `src` (ABox or CQ) into `target`.

    `anchor` pins source elements to target elements; `named_vars` restricts
    specific source variables to the target's named elements.  Variables are
    processed by decreasing atom-degree; candidates in element order, so the
    enumeration is deterministic.
    """
    if isinstance(src, CQ):
        unary = sorted(src.unary)
        binary = sorted(src.binary)
        variables = sorted(src.variables)
    else:
        unary = sorted((c, a) for c, a in src.concepts)
        binary = sorted(src.roles)
        variables = sorted(src.individuals)
    anchor = dict(anchor or {})
    named_vars = set(named_vars)

    degree: dict[str, int] = {v: 0 for v in variables}
    for _, x in unary:
        degree[x] += 1
    for _, x, y in binary:
        degree[x] += 1
        degree[y] += 1
    order = sorted(variables, key=lambda v: (-degree[v], v))

    unary_at: dict[str, list] = {v: [] for v in variables}
    for c, x in unary:
        unary_at[x].append(c)
    edges_at: dict[str, list] = {v: [] for v in variables}
    for r, x, y in binary:
        edges_at[x].append((r, x, y))
        if y != x:
            edges_at[y].append((r, x, y))

    def consistent(v, e, h):
        if v in named_vars and not isinstance(e, str):
            return False
        for c in unary_at[v]:
            if not target.has_concept(e, c):
                return False
        for r, x, y in edges_at[v]:
            hx = e if x == v else h.get(x)
            hy = e if y == v else h.get(y)
            if hx is not None and hy is not None and not target.has_edge(r, hx, hy):
                return False
        return True

    all_elements = list(target.elements())

    def candidates(v, h):
        if v in anchor:
            return [anchor[v]]
        best = None
        for r, x, y in edges_at[v]:
            if x == v and y in h:
                c = target.in_neighbors(h[y], r)
            elif y == v and x in h:
                c = target.out_neighbors(h[x], r)
            else:
                continue
            if best is None or len(c) < len(best):
                best = list(c)
        if best is None:
            best = all_elements
        return sorted(set(best), key=_element_key)

    def extend(i, h):
        if i == len(order):
            yield dict(h)
            return
        v = order[i]
        for e in candidates(v, h):
            if consistent(v, e, h):
                h[v] = e
                yield from extend(i + 1, h)
                del h[v]

    # Pre-validate anchors.
    for v, e in anchor.items():
        if v not in degree:
            return
    yield from extend(0, {})


def find_homomorphism(src, target, anchor: Optional[Mapping] = None,
                      named_vars: Iterable[str] = ()):
    """First homomorphism in deterministic order, or None."""
    if isinstance(target, ABox):
        target = AboxTarget(target)
    for h in iter_homomorphisms(src, target, anchor, named_vars):
        return h
    return None
