"""Hardness-witness checking and search, gadget generation, classification
labels, and the width-hierarchy example family."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from .chase import engine_for, _saturate
from .cqstruct import analyze, extend_tbox, treeify
from .errors import BudgetExceeded, MalformedWitness, PreconditionViolated
from .evaluation import (
    PseudoTreeABox,
    abox_excise,
    abox_subtree,
    all_matches_core_close,
    holds,
    in_mq,
    minimize,
    normalize_omq,
    normalized,
    query_components,
)
from .structure import branching_number, leaf_count, leaves_bound, tree_depth
from .syntax import ABox, Atom, CI, CQ, OMQ, Signature, TBox, TOP, conj


# ---------------------------------------------------------------------------
# Witness objects


@dataclass(frozen=True)
class ReachWitness:
    pt: PseudoTreeABox
    answer: tuple
    b: str
    c: str
    t0: frozenset
    t1: frozenset

    @property
    def kind(self) -> str:
        return "reach"


@dataclass(frozen=True)
class PsaWitness:
    pt: PseudoTreeABox
    answer: tuple
    b: str
    c: str
    d: str
    t0: frozenset
    t1: frozenset

    @property
    def kind(self) -> str:
        return "psa"


@dataclass(frozen=True)
class WitnessReport:
    ok: bool
    conditions: tuple  # of (name, passed, detail)

    def failed(self) -> list:
        return [name for name, passed, _ in self.conditions if not passed]


def _type_of(omq: OMQ, abox: ABox, ind: str) -> frozenset:
    return _saturate(normalized(omq.tbox), abox).tp.get(ind, frozenset())


def _with_type(abox: ABox, ind: str, tp: Iterable[str]) -> ABox:
    return ABox(abox.concepts | {(c, ind) for c in tp}, abox.roles)


def check_witness(omq: OMQ, witness) -> WitnessReport:
    """Evaluate every condition of a hardness witness independently.

    The query is expected to be preprocessed by the tree-marker TBox
    extension.  For atomic queries the distance requirements are dropped,
    matching the simpler shape such witnesses take.
    """
    pt = witness.pt
    answer = tuple(witness.answer)
    whole = pt.whole()
    is_psa = witness.kind == "psa"
    marks = [witness.b, witness.c] + ([witness.d] if is_psa else [])
    for m in marks:
        if m not in whole.individuals:
            raise MalformedWitness(f"distinguished individual {m} not in the ABox")
    q = omq.query
    boolean = q.is_boolean
    aq = omq.is_aq()
    conditions: List[tuple] = []

    def cond(name, passed, detail=""):
        conditions.append((name, bool(passed), detail))

    ok_shape, why = pt.validate()
    cond("shape", ok_shape, why or "")
    cond("core-size", len(pt.core_individuals) <= q.size,
         f"{len(pt.core_individuals)} vs {q.size}")
    cond("tuple-in-core", len(answer) == q.arity and set(answer) <= pt.core_individuals)
    non_core = pt.non_core_individuals()
    cond("marks-non-core", all(m in non_core for m in marks))
    cond("descendants",
         pt.is_descendant(witness.b, witness.c)
         and (not is_psa or pt.is_descendant(witness.b, witness.d)))
    if is_psa:
        c_below_d = pt.is_descendant(witness.c, witness.d)
        d_below_c = witness.d and pt.is_descendant(witness.d, witness.c)
        cond("incomparable", not c_below_d and not d_below_c)
    if not aq:
        size = q.size
        db = pt.distance_from_core(witness.b)
        cond("distance-core-b", db is not None and db > size, f"{db} vs {size}")
        dist_pairs = [(witness.b, witness.c)]
        if is_psa:
            dist_pairs += [(witness.b, witness.d), (witness.c, witness.d)]
        for u, v in dist_pairs:
            duv = _tree_distance(pt, u, v)
            cond(f"distance-{u}-{v}", duv is not None and duv > size, f"{duv} vs {size}")
    cond("types-strict", witness.t0 < witness.t1,
         f"{sorted(witness.t0)} vs {sorted(witness.t1)}")

    cond("entailment", holds(omq, whole, answer))
    tags = [witness.b, witness.c] + ([witness.d] if is_psa else [])
    t1_ok = all(_type_of(omq, whole, m) == witness.t1 for m in tags)
    cond("t1-everywhere", t1_ok)

    if is_psa:
        target_cut = _with_type(abox_excise(whole, witness.b), witness.b, witness.t0)
        cond("cut-at-b-refutes", not holds(omq, target_cut, answer))
        for m in (witness.c, witness.d):
            cut = _with_type(abox_excise(whole, m), m, witness.t0)
            cond(f"replace-{m}-gives-t0",
                 _type_of(omq, cut, witness.b) == witness.t0)
    else:
        cut_c = _with_type(abox_excise(whole, witness.c), witness.c, witness.t0)
        cond("replace-c-gives-t0", _type_of(omq, cut_c, witness.b) == witness.t0)
        cut_b = _with_type(abox_excise(whole, witness.b), witness.b, witness.t0)
        cond("cut-at-b-refutes", not holds(omq, cut_b, answer))

    if boolean:
        cond("core-close", all_matches_core_close(omq, pt))
        if is_psa:
            size = q.size
            paths = {m: pt.ancestor_path(m, size) for m in tags}
            cond("ancestor-paths", len({paths[m] for m in tags}) == 1)

    return WitnessReport(all(p for _, p, _ in conditions), tuple(conditions))


def _tree_distance(pt: PseudoTreeABox, u: str, v: str) -> Optional[int]:
    t = pt.tree_of(u)
    if t is None or pt.tree_of(v) is not t:
        return None

    def path_to_root(x):
        out = [x]
        while x in t.in_edges:
            x = t.in_edges[x][0][1]
            out.append(x)
        return out

    pu, pv = path_to_root(u), path_to_root(v)
    su = set(pu)
    for i, x in enumerate(pv):
        if x in su:
            return pu.index(x) + i
    return None


# ---------------------------------------------------------------------------
# Gadget extraction and reduction ABoxes


@dataclass(frozen=True)
class GadgetSet:
    target: ABox  # everything above b, with b a bare leaf
    edge_or_wedge: ABox  # the subtree at b with the source subtrees cut off
    source: ABox  # the subtree at c
    b: str
    c: str
    d: Optional[str]
    answer: tuple


def gadget_set(witness) -> GadgetSet:
    whole = witness.pt.whole()
    target = abox_excise(whole, witness.b)
    sub_b = abox_subtree(whole, witness.b)
    if witness.kind == "psa":
        wedge = abox_excise(abox_excise(sub_b, witness.c), witness.d)
        return GadgetSet(target, wedge, abox_subtree(whole, witness.c),
                         witness.b, witness.c, witness.d, tuple(witness.answer))
    edge = abox_excise(sub_b, witness.c)
    return GadgetSet(target, edge, abox_subtree(whole, witness.c),
                     witness.b, witness.c, None, tuple(witness.answer))


@dataclass(frozen=True)
class Digraph:
    nodes: tuple
    edges: tuple  # of (u, v)
    source: str
    target: str

    def reachable(self) -> frozenset:
        out = {self.source}
        changed = True
        while changed:
            changed = False
            for u, v in self.edges:
                if u in out and v not in out:
                    out.add(v)
                    changed = True
        return frozenset(out)


@dataclass(frozen=True)
class PathSystem:
    nodes: tuple
    triples: tuple  # of (u, v, w): w from u and v
    sources: tuple
    target: str

    def accessible(self) -> frozenset:
        out = set(self.sources)
        changed = True
        while changed:
            changed = False
            for u, v, w in self.triples:
                if u in out and v in out and w not in out:
                    out.add(w)
                    changed = True
        return frozenset(out)


def _copy_with(abox: ABox, tag: str, pins: Dict[str, str]) -> ABox:
    renaming = {}
    for ind in sorted(abox.individuals):
        renaming[ind] = pins.get(ind, f"{tag}_{ind}")
    return abox.rename(renaming)


def build_gadget_abox(witness, instance) -> Tuple[ABox, tuple]:
    """The reduction ABox for a digraph (reach) or path system (psa).

    Node types then mirror reachability/accessibility, and the original
    answer tuple is entailed exactly for yes-instances.
    """
    g = gadget_set(witness)
    if isinstance(instance, Digraph):
        if g.d is not None:
            raise PreconditionViolated("digraph instance with a wedge witness")
        if instance.source == instance.target:
            raise PreconditionViolated("source and target must differ")
        if any(v == instance.source for _, v in instance.edges):
            raise PreconditionViolated("source must have indegree 0")
        if any(u == instance.target for u, _ in instance.edges):
            raise PreconditionViolated("target must have outdegree 0")
        node = {v: f"nd_{v}" for v in instance.nodes}
        out = _copy_with(g.target, "tgt", {g.b: node[instance.target]})
        for i, (u, v) in enumerate(sorted(instance.edges)):
            out = out.union(
                _copy_with(g.edge_or_wedge, f"e{i}", {g.b: node[v], g.c: node[u]})
            )
        out = out.union(_copy_with(g.source, "src", {g.c: node[instance.source]}))
        return out, g.answer
    if isinstance(instance, PathSystem):
        if g.d is None:
            raise PreconditionViolated("path-system instance with an edge witness")
        t = instance.target
        if t in instance.sources:
            raise PreconditionViolated("target must not be a source")
        if any(t in (u, v) for u, v, _ in instance.triples):
            raise PreconditionViolated("target only in third components")
        if any(w in instance.sources for _, _, w in instance.triples):
            raise PreconditionViolated("sources never in third components")
        node = {v: f"nd_{v}" for v in instance.nodes}
        out = _copy_with(g.target, "tgt", {g.b: node[t]})
        for i, (u, v, w) in enumerate(sorted(instance.triples)):
            out = out.union(_copy_with(
                g.edge_or_wedge, f"w{i}",
                {g.b: node[w], g.c: node[u], g.d: node[v]},
            ))
        for i, s in enumerate(sorted(instance.sources)):
            out = out.union(_copy_with(g.source, f"s{i}", {g.c: node[s]}))
        return out, g.answer
    raise TypeError(instance)


# ---------------------------------------------------------------------------
# Bounded witness search


@dataclass
class SearchBounds:
    depth: int = 6
    degree: int = 3
    core_size: int = 1
    budget: int = 20000


def _aq_witness_trees(omq: OMQ, bounds: SearchBounds):
    """Canonical minimal tree-shaped ABoxes entailing an atomic query.

    Trees are generated goal-directed from the query concept: a requirement
    is met by a signature assertion or by one concept inclusion applied
    backwards.  Enumeration is by increasing size, deduplicated.
    """
    nt = normalized(omq.tbox)
    eng = engine_for(nt)
    sigma = omq.sigma
    concept = next(iter(omq.query.unary))[0]

    # goal sets at one node: alternatives to satisfy a set of concepts
    def expansions(goals: frozenset, depth: int):
        """Yield (labels, children) with children = list of (role, goalset)."""
        goals = frozenset(g for g in goals if g not in eng.top_set)
        if not goals:
            yield frozenset(), ()
            return
        goal = sorted(goals)[0]
        rest = goals - {goal}
        seen = set()
        if goal in sigma.concepts:
            for labels, children in expansions(rest, depth):
                cand = (labels | {goal}, children)
                key = (cand[0], cand[1])
                if key not in seen:
                    seen.add(key)
                    yield cand
        for ci in nt.cis:
            rhs = ci.rhs
            if not isinstance(rhs, Atom) or rhs.name != goal:
                continue
            lhs = ci.lhs
            if isinstance(lhs, Atom):
                new_goals = rest | {lhs.name}
                for cand in expansions(new_goals, depth):
                    key = cand
                    if key not in seen:
                        seen.add(key)
                        yield cand
            elif hasattr(lhs, "args"):  # conjunction
                new_goals = rest | {a.name for a in lhs.args}
                for cand in expansions(new_goals, depth):
                    if cand not in seen:
                        seen.add(cand)
                        yield cand
            elif hasattr(lhs, "role") and not lhs.role.inverted and depth > 0:
                if lhs.role.name not in sigma.roles:
                    continue
                for labels, children in expansions(rest, depth):
                    if len(children) >= bounds.degree:
                        continue
                    cand = (labels, tuple(sorted(
                        children + ((lhs.role.name, frozenset([lhs.arg.name])),)
                    )))
                    if cand not in seen:
                        seen.add(cand)
                        yield cand

    counter = itertools.count()
    emitted = set()

    def build(goals: frozenset, depth: int):
        """All tree shapes (as nested tuples) meeting the goals."""
        for labels, children in expansions(goals, depth):
            child_options = []
            for role, child_goals in children:
                subs = list(build(child_goals, depth - 1))
                if not subs:
                    child_options = None
                    break
                child_options.append([(role, s) for s in subs])
            if child_options is None:
                continue
            for combo in itertools.product(*child_options):
                yield (frozenset(labels & sigma.concepts), tuple(sorted(combo)))

    def realize(shape, name: str, acc_concepts, acc_roles):
        labels, children = shape
        for c in sorted(labels):
            acc_concepts.add((c, name))
        for i, (role, sub) in enumerate(children):
            child = f"{name}_{i}"
            acc_roles.add((role, name, child))
            realize(sub, child, acc_concepts, acc_roles)

    shapes = []
    budget = bounds.budget
    for shape in build(frozenset([concept]), bounds.depth):
        shapes.append(shape)
        if len(shapes) > budget:
            raise BudgetExceeded("witness tree enumeration over budget")
    def shape_size(shape):
        labels, children = shape
        return 1 + sum(shape_size(s) for _, s in children)
    shapes.sort(key=lambda s: (shape_size(s), repr(s)))
    for shape in shapes:
        concepts: set = set()
        roles: set = set()
        realize(shape, "r", concepts, roles)
        abox = ABox(concepts, roles)
        key = (abox.concepts, abox.roles)
        if key in emitted:
            continue
        emitted.add(key)
        if holds(omq, abox, ("r",)):
            yield minimize(omq, abox, ("r",))


def _stabilized_t0(omq: OMQ, whole: ABox, b: str, cut_at: str) -> frozenset:
    cut = abox_excise(whole, cut_at)
    t = frozenset()
    while True:
        nxt = _type_of(omq, _with_type(cut, cut_at, t), b)
        if nxt == t:
            return t
        t = nxt


def search_witness(omq: OMQ, mode: str, bounds: Optional[SearchBounds] = None):
    """Bounded search for a hardness witness; None means none-at-bound.

    The query's TBox is extended with tree markers first (the inverse-path
    extension for Boolean treeifiable queries in psa mode).  Returned
    witnesses always pass check_witness; exhausting the bounds without a
    find is explicitly inconclusive.
    """
    bounds = bounds or SearchBounds()
    ext_mode = "cq_concepts" if mode == "psa" else "trees"
    ext = extend_tbox(omq, ext_mode)
    if not ext.is_aq():
        shape = analyze(ext.query)
        if not shape.connected:
            raise ValueError("witness search expects a connected query")
    candidates = _aq_witness_trees(ext, bounds) if ext.is_aq() else iter(())
    tried = 0
    for abox in candidates:
        tried += 1
        if tried > bounds.budget:
            raise BudgetExceeded("candidate budget exhausted")
        pt = PseudoTreeABox.decompose(abox)
        root = sorted(pt.core_individuals)[0]
        whole = pt.whole()
        tp = _saturate(normalized(ext.tbox), whole).tp
        non_core = sorted(pt.non_core_individuals())
        for b in non_core:
            t1 = tp[b]
            below_b = sorted(d for d in non_core if pt.is_descendant(b, d))
            if mode == "reach":
                for c in below_b:
                    if tp[c] != t1:
                        continue
                    t0 = _stabilized_t0(ext, whole, b, c)
                    if not t0 < t1:
                        continue
                    w = ReachWitness(pt, (root,), b, c, t0, t1)
                    if check_witness(ext, w).ok:
                        return w
            else:
                for c, d in itertools.combinations(below_b, 2):
                    if tp[c] != t1 or tp[d] != t1:
                        continue
                    if pt.is_descendant(c, d) or pt.is_descendant(d, c):
                        continue
                    t0 = _stabilized_t0(ext, whole, b, c)
                    if not t0 < t1:
                        continue
                    w = PsaWitness(pt, (root,), b, c, d, t0, t1)
                    if check_witness(ext, w).ok:
                        return w
    return None


# ---------------------------------------------------------------------------
# Classification


@dataclass(frozen=True)
class Classification:
    label: str  # FO/AC0-candidate | NL-complete | PTime-complete | inconclusive
    evidence: dict


_DEPTH_THRESHOLD_BASE = 3


def classify_omq(omq: OMQ, bounds: Optional[SearchBounds] = None) -> Classification:
    """Witness-backed classification label with attached evidence.

    PTime-complete iff a wedge witness is found, else NL-complete iff a
    chain witness is found, else FO/AC0-candidate when the bounded witness
    scan saw no deep minimal witness.  Everything here is a semi-decision:
    witnesses certify hardness, their absence within bounds does not.
    """
    bounds = bounds or SearchBounds()
    norm = normalize_omq(omq)
    if norm.empty:
        return Classification("FO/AC0-candidate", {"empty": True})
    evidence: dict = {"empty": False, "dropped_mccs": len(norm.dropped_mccs)}
    labels = []
    for i, comp in enumerate(query_components(norm.omq.query)):
        comp_omq = OMQ(norm.omq.tbox, norm.omq.sigma, comp)
        entry: dict = {}
        psa = search_witness(comp_omq, "psa", bounds)
        if psa is not None:
            entry["psa_witness"] = psa
            labels.append("PTime-complete")
        else:
            reach = search_witness(comp_omq, "reach", bounds)
            if reach is not None:
                entry["reach_witness"] = reach
                labels.append("NL-complete")
            else:
                threshold = (comp.size + 2) * _DEPTH_THRESHOLD_BASE ** \
                    TBox(norm.omq.tbox.cis).size + comp.size + 2
                entry["depth_threshold"] = threshold
                labels.append("FO/AC0-candidate")
        evidence[f"mcc{i}"] = entry
    order = ["FO/AC0-candidate", "NL-complete", "PTime-complete"]
    label = max(labels, key=order.index) if labels else "FO/AC0-candidate"
    return Classification(label, evidence)


# ---------------------------------------------------------------------------
# The width-hierarchy family


@dataclass(frozen=True)
class QkFamily:
    omq: OMQ
    abox: ABox
    k: int
    n: int


def qk_tbox(k: int) -> TBox:
    """The ontology whose markers certify full binary trees of each depth."""
    from .syntax import Exists, Role

    cis = [CI(TOP, Atom("A0"))]
    for x in "rstu":
        for i in range(k + 1):
            cis.append(CI(Exists(Role(x), Atom(f"A{i}")), Atom(f"B_{x}_{i}")))
            cis.append(CI(Exists(Role(x), Atom(f"B_{x}_{i}")), Atom(f"B_{x}_{i}")))
    for i in range(k):
        cis.append(CI(conj(Atom(f"B_r_{i}"), Atom(f"B_s_{i}")), Atom(f"A{i + 1}")))
        cis.append(CI(conj(Atom(f"B_t_{i}"), Atom(f"B_u_{i + 1}")), Atom(f"A{i + 1}")))
    return TBox(cis)


def qk_omq(k: int) -> OMQ:
    sigma = Signature((), ("r", "s", "t", "u"))
    return OMQ(qk_tbox(k), sigma, CQ(("x",), {(f"A{k}", "x")}, ()))


def qk_abox(k: int, n: int, prefix: str = "v") -> ABox:
    """The extremal tree of depth n and branching number k."""
    if k < 1 or n < 1:
        raise ValueError("k and n must be at least 1")
    counter = itertools.count()

    def fresh() -> str:
        return f"{prefix}{next(counter)}"

    roles: set = set()

    def build(kk: int, nn: int) -> str:
        me = fresh()
        if nn <= kk:
            # full binary tree of depth nn with r/s branching
            if nn >= 1:
                for role, sub in (("r", build(kk, nn - 1) if nn > 1 else fresh()),
                                  ("s", build(kk, nn - 1) if nn > 1 else fresh())):
                    roles.add((role, me, sub))
            return me
        if kk == 1:
            leaf = fresh()
            roles.add(("t", me, leaf))
            roles.add(("u", me, build(1, nn - 1)))
            return me
        roles.add(("t", me, build(kk - 1, nn - 1)))
        roles.add(("u", me, build(kk, nn - 1)))
        return me

    root = build(k, n)
    assert root == f"{prefix}0"
    return ABox((), roles)


def subdivide(abox: ABox, i: int) -> ABox:
    """Replace every edge by a path of length i+1 with the same role."""
    if i <= 0:
        return abox
    counter = itertools.count()
    roles: set = set()
    for r, a, b in sorted(abox.roles):
        cur = a
        for _ in range(i):
            mid = f"_sub{next(counter)}"
            roles.add((r, cur, mid))
            cur = mid
        roles.add((r, cur, b))
    return ABox(abox.concepts, roles)


def qk_family(k: int, n: int) -> QkFamily:
    return QkFamily(qk_omq(k), qk_abox(k, n), k, n)
