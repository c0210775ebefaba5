"""CQ structure: components, treeification, reach-set trees, and the TBox
extensions used by the hardness machinery."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, Iterable, Optional

from .errors import NotTreeifiable
from .evaluation import query_components, tree_shape_error
from .syntax import (
    And,
    Atom,
    CI,
    CQ,
    Concept,
    Exists,
    OMQ,
    Role,
    TBox,
    TOP,
    Top,
    concept_key,
    conj,
    normalize,
)


@dataclass(frozen=True)
class QueryShape:
    mccs: tuple
    connected: bool
    boolean: bool
    rooted: bool


def analyze(q: CQ) -> QueryShape:
    comps = tuple(query_components(q))
    rooted = all(c.answer_vars for c in comps)
    return QueryShape(comps, len(comps) == 1, q.is_boolean, rooted)


# ---------------------------------------------------------------------------
# Treeification by fork elimination


@dataclass(frozen=True)
class TreeifiedCQ:
    qtree: CQ
    collapse: tuple  # sorted (var of q, var of qtree) pairs

    def collapse_map(self) -> dict:
        return dict(self.collapse)


def treeify(q: CQ, order=None) -> Optional[TreeifiedCQ]:
    """Exhaustive fork elimination; None when the result is not tree-shaped.

    A fork is a pair of atoms r(x1,y), r(x2,y) with x1 != x2; eliminating it
    identifies x1 and x2 (survivor: the smaller name).  The result does not
    depend on the elimination order; `order` lets tests permute fork choices.
    """
    if not q.is_boolean:
        raise ValueError("treeification applies to Boolean queries")
    mapping = {v: v for v in q.variables}
    atoms = set(q.binary)

    def forks(atom_set):
        found = []
        targets: Dict[tuple, list] = {}
        for r, x, y in atom_set:
            targets.setdefault((r, y), []).append(x)
        for (r, y), xs in sorted(targets.items()):
            xs = sorted(set(xs))
            if len(xs) > 1:
                found.append((xs[0], xs[1]))
        return found

    while True:
        fs = forks(atoms)
        if not fs:
            break
        if order is not None:
            fs = order(fs)
        x1, x2 = fs[0]
        keep, drop = min(x1, x2), max(x1, x2)
        atoms = {(r, keep if x == drop else x, keep if y == drop else y)
                 for r, x, y in atoms}
        for v, t in list(mapping.items()):
            if t == drop:
                mapping[v] = keep
    qtree = CQ(
        (),
        {(c, mapping[x]) for c, x in q.unary},
        atoms,
    )
    if qtree.variables and tree_shape_error(qtree.as_abox()) is not None:
        return None
    return TreeifiedCQ(qtree, tuple(sorted(mapping.items())))


# ---------------------------------------------------------------------------
# Tree-shaped CQs as concepts and back


def concept_of_tree_cq(q: CQ) -> Concept:
    """View a tree-shaped Boolean CQ as a concept."""
    abox = q.as_abox()
    err = tree_shape_error(abox)
    if err:
        raise NotTreeifiable(f"query is not tree-shaped: {err}")
    children: Dict[str, list] = {v: [] for v in abox.individuals}
    indeg = {v: 0 for v in abox.individuals}
    for r, x, y in sorted(abox.roles):
        children[x].append((r, y))
        indeg[y] += 1
    root = sorted(v for v, d in indeg.items() if d == 0)[0]

    def build(v: str) -> Concept:
        parts = [Atom(c) for c, x in sorted(q.unary) if x == v]
        for r, y in children[v]:
            parts.append(Exists(Role(r), build(y)))
        return conj(*parts) if parts else TOP

    return build(root)


def tree_cq_of_concept(c: Concept, prefix: str = "v") -> CQ:
    """The tree-shaped Boolean CQ corresponding to a concept (no inverses)."""
    counter = itertools.count()
    unary = set()
    binary = set()

    def build(concept: Concept, var: str):
        if isinstance(concept, Atom):
            unary.add((concept.name, var))
        elif isinstance(concept, Exists):
            if concept.role.inverted:
                raise ValueError("inverse roles have no tree-CQ form")
            child = f"{prefix}{next(counter)}"
            binary.add((concept.role.name, var, child))
            build(concept.arg, child)
        elif isinstance(concept, And):
            for part in concept.args:
                build(part, var)

    root = f"{prefix}{next(counter)}"
    build(c, root)
    if not unary and not binary:
        raise ValueError("the top concept has no CQ form")
    return CQ((), unary, binary)


# ---------------------------------------------------------------------------
# trees(q): reach-set restrictions of guarded pairs


def reach_set(q: CQ, x: str, y: str) -> frozenset:
    """Fixpoint of the three reach rules for a guarded pair (x, y)."""
    level: Dict[str, set] = {}

    def put(v, i):
        if i not in level.setdefault(v, set()):
            level[v].add(i)
            return True
        return False

    put(x, 0)
    put(y, 1)
    changed = True
    while changed:
        changed = False
        for r, z, u in q.binary:
            for i in sorted(level.get(z, ())):
                if i > 0 and put(u, i + 1):
                    changed = True
            for i in sorted(level.get(u, ())):
                if i - 1 > 0 and put(z, i - 1):
                    changed = True
    return frozenset(level)


def trees_of(q: CQ):
    """Treeified reach-set restrictions, deduplicated by their concept."""
    out = {}
    for r, x, y in sorted(q.binary):
        reach = reach_set(q, x, y)
        p = q.restrict(reach)
        p = CQ((), p.unary, p.binary)
        t = treeify(p)
        if t is None:
            continue
        c = concept_of_tree_cq(t.qtree)
        out[concept_key(c)] = t.qtree
    return [out[k] for k in sorted(out)]


# ---------------------------------------------------------------------------
# The concept family over role paths of the treeified query


@dataclass(frozen=True)
class CqConceptSet:
    concepts: tuple

    def __init__(self, concepts: Iterable[Concept]):
        object.__setattr__(
            self, "concepts", tuple(sorted(set(concepts), key=concept_key))
        )


def role_paths(qtree: CQ) -> list:
    """Role-name sequences of descending paths in the tree query, incl. ()."""
    abox = qtree.as_abox()
    children: Dict[str, list] = {v: [] for v in abox.individuals}
    for r, x, y in sorted(abox.roles):
        children[x].append((r, y))
    paths = {()}

    def walk(v: str, acc: tuple):
        for r, y in children[v]:
            paths.add(acc + (r,))
            walk(y, acc + (r,))

    for v in sorted(abox.individuals):
        walk(v, ())
    return sorted(paths)


def cq_concepts(q: CQ) -> CqConceptSet:
    """Concepts of shape ex rn-. ... ex r1-.C for role paths of the treeified
    query, with C ranging over top, the query's concept names, and the
    members of trees(q) viewed as concepts."""
    t = treeify(q)
    if t is None:
        raise NotTreeifiable("query has no tree-shaped collapse")
    tails: list[Concept] = [TOP]
    tails += [Atom(c) for c in sorted(q.concept_names)]
    tails += [concept_of_tree_cq(p) for p in trees_of(q)]
    out = []
    for path in role_paths(t.qtree):
        for tail in tails:
            c = tail
            for r in path:
                c = Exists(Role(r, True), c)
            out.append(c)
    return CqConceptSet(out)


# ---------------------------------------------------------------------------
# TBox extension


def extend_tbox(omq: OMQ, mode: str = "trees") -> OMQ:
    """Extend the TBox with marker names for tree-shaped query fragments.

    mode "trees" adds C_p <= A_p for every member p of trees(q); mode
    "cq_concepts" additionally covers the inverse-path concepts and applies
    only to Boolean connected treeifiable queries, falling back to "trees"
    otherwise.  The result is normalized and answers the same on every
    signature ABox.
    """
    q = omq.query
    shape = analyze(q)
    concepts: list[Concept] = []
    if mode == "cq_concepts" and shape.boolean and shape.connected and treeify(q):
        concepts = list(cq_concepts(q).concepts)
        prefix = "_cc"
    else:
        concepts = [concept_of_tree_cq(p) for p in trees_of(q)]
        prefix = "_tr"
    taken = set(omq.tbox.concept_names) | set(q.concept_names)
    cis = list(omq.tbox.cis)
    for i, c in enumerate(concepts):
        if isinstance(c, Top):
            continue
        name = f"{prefix}{i}"
        while name in taken:
            name = "_" + name
        taken.add(name)
        cis.append(CI(c, Atom(name)))
    extended = TBox(cis)
    return OMQ(normalize(extended).as_tbox(), omq.sigma, q)
