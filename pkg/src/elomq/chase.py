"""Universal models, type saturation, derivation trees and degree reduction.

Types are computed by a completion calculus: named individuals are saturated
by a worklist procedure, and the effect of anonymous subtrees is folded in
through a memoized successor-type function with a parent/child fixpoint for
inverse roles.  This terminates even where the chase itself is infinite, and
`chase_to_depth` materializes the anonymous part only up to a given depth,
labeling every node with its exact type.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, Optional

from .errors import NotEntailed
from .syntax import ABox, Atom, CI, Exists, NormalizedTBox, OMQ, Role, Top


# ---------------------------------------------------------------------------
# Completion engine


class TypeEngine:
    """Rule indexes and memoized anonymous-successor types for one TBox."""

    def __init__(self, nt: NormalizedTBox):
        self.nt = nt
        self.tops: list[str] = []
        self.conj_rules: list[tuple[frozenset, str]] = []
        self.conj_by_member: Dict[str, list] = {}
        self.forward: Dict[str, list] = {}  # r -> [(X, Y)] from "ex r.X <= Y"
        self.backward: Dict[str, list] = {}  # r -> [(X, Y)] from "ex r-.X <= Y"
        self.exists_rules: list[tuple[str, Role, str]] = []  # A <= ex rho.B
        for ci in nt.cis:
            l, r = ci.lhs, ci.rhs
            if isinstance(r, Exists):
                self.exists_rules.append((l.name, r.role, r.arg.name))
            elif isinstance(l, Top):
                self.tops.append(r.name)
            elif isinstance(l, Atom):
                self.conj_rules.append((frozenset([l.name]), r.name))
            elif isinstance(l, Exists):
                table = self.backward if l.role.inverted else self.forward
                table.setdefault(l.role.name, []).append((l.arg.name, r.name))
            else:  # binary conjunction
                self.conj_rules.append((frozenset(a.name for a in l.args), r.name))
        self.tops.sort()
        self.exists_rules.sort(key=lambda t: (t[0], t[1].name, t[1].inverted, t[2]))
        for members, rhs in self.conj_rules:
            for m in members:
                self.conj_by_member.setdefault(m, []).append((members, rhs))
        self.top_set = frozenset(self.tops)
        self._memo: Dict[tuple, frozenset] = {}
        self._active: set = set()
        self._dirty = False
        self._clo_cache: Dict[frozenset, frozenset] = {}

    # -- edge transfer: across an actual edge u --r--> v, u gains from
    # forward rules keyed on tp(v), and v gains from backward rules on tp(u).

    def gain_at_source(self, r: str, tp_target) -> set:
        return {y for x, y in self.forward.get(r, ()) if x in tp_target}

    def gain_at_target(self, r: str, tp_source) -> set:
        return {y for x, y in self.backward.get(r, ()) if x in tp_source}

    def child_gain(self, role: Optional[Role], parent_tp) -> set:
        if role is None:
            return set()
        if role.inverted:  # edge child --r--> parent
            return self.gain_at_source(role.name, parent_tp)
        return self.gain_at_target(role.name, parent_tp)

    def parent_gain(self, role: Role, child_tp) -> set:
        if role.inverted:
            return self.gain_at_target(role.name, child_tp)
        return self.gain_at_source(role.name, child_tp)

    def local_close(self, s: set) -> None:
        for a in self.tops:
            s.add(a)
        changed = True
        while changed:
            changed = False
            for members, rhs in self.conj_rules:
                if rhs not in s and members <= s:
                    s.add(rhs)
                    changed = True

    def _anon_once(self, seed: frozenset, role: Optional[Role], ptp: frozenset) -> frozenset:
        key = (seed, role, ptp)
        cur = self._memo.get(key)
        if key in self._active:
            return cur if cur is not None else frozenset()
        self._active.add(key)
        s = set(seed) | self.child_gain(role, ptp)
        if cur:
            s |= cur
        self.local_close(s)
        changed = True
        while changed:
            changed = False
            for a_name, rho, b_name in self.exists_rules:
                if a_name in s:
                    child = self._anon_once(frozenset([b_name]), rho, frozenset(s))
                    gain = self.parent_gain(rho, child)
                    if not gain <= s:
                        s |= gain
                        self.local_close(s)
                        changed = True
        self._active.discard(key)
        result = frozenset(s) | (cur or frozenset())
        if result != cur:
            self._memo[key] = result
            self._dirty = True
        return self._memo[key]

    def anon_tp(self, seed: frozenset, role: Optional[Role], ptp: frozenset) -> frozenset:
        """Exact type of a chase-created successor (seed via role under ptp)."""
        while True:
            self._dirty = False
            out = self._anon_once(frozenset(seed), role, frozenset(ptp))
            if not self._dirty:
                return out

    def clo(self, names: Iterable[str]) -> frozenset:
        """Closure under TBox consequence of a single individual's labels."""
        key = frozenset(names)
        hit = self._clo_cache.get(key)
        if hit is None:
            hit = self.anon_tp(key, None, frozenset())
            self._clo_cache[key] = hit
        return hit

    def entails_conj(self, premises: Iterable[str], concept: str) -> bool:
        return concept in self.clo(premises)

    def reachable_anon_types(self, root_types: Iterable[frozenset]) -> frozenset:
        """All types occurring in anonymous trees reachable from the roots."""
        seen: set = set()
        stack = []
        for t in root_types:
            for a_name, rho, b_name in self.exists_rules:
                if a_name in t:
                    stack.append(self.anon_tp(frozenset([b_name]), rho, t))
        while stack:
            t = stack.pop()
            if t in seen:
                continue
            seen.add(t)
            for a_name, rho, b_name in self.exists_rules:
                if a_name in t:
                    stack.append(self.anon_tp(frozenset([b_name]), rho, t))
        return frozenset(seen)


_ENGINES: Dict[NormalizedTBox, TypeEngine] = {}


def engine_for(nt: NormalizedTBox) -> TypeEngine:
    eng = _ENGINES.get(nt)
    if eng is None:
        eng = TypeEngine(nt)
        if len(_ENGINES) > 256:
            _ENGINES.clear()
        _ENGINES[nt] = eng
    return eng


# ---------------------------------------------------------------------------
# Saturation over named individuals


@dataclass
class Saturation:
    tp: Dict[str, frozenset]
    prov: Dict[tuple, tuple]


_SAT_CACHE: Dict[tuple, Saturation] = {}


def _saturate(nt: NormalizedTBox, abox: ABox) -> Saturation:
    key = (nt, abox)
    hit = _SAT_CACHE.get(key)
    if hit is not None:
        return hit
    eng = engine_for(nt)
    inds = sorted(abox.individuals)
    tp: Dict[str, set] = {a: set() for a in inds}
    prov: Dict[tuple, tuple] = {}
    queue: list = []

    def add(a: str, c: str, why: tuple) -> None:
        if c not in tp[a]:
            tp[a].add(c)
            prov[(a, c)] = why
            queue.append((a, c))

    for c, a in sorted(abox.concepts):
        add(a, c, ("asserted",))
    for a in inds:
        for t in eng.tops:
            add(a, t, ("top",))

    out_edges: Dict[str, list] = {a: [] for a in inds}
    in_edges: Dict[str, list] = {a: [] for a in inds}
    for r, a, b in sorted(abox.roles):
        out_edges[a].append((r, b))
        in_edges[b].append((r, a))

    def feedback(a: str) -> None:
        snapshot = frozenset(tp[a])
        for a_name, rho, b_name in eng.exists_rules:
            if a_name in snapshot:
                child = eng.anon_tp(frozenset([b_name]), rho, snapshot)
                for y in sorted(eng.parent_gain(rho, child)):
                    add(a, y, ("feedback", snapshot))

    for a in inds:
        feedback(a)

    while queue:
        a, c = queue.pop()
        for members, rhs in eng.conj_by_member.get(c, ()):
            if rhs not in tp[a] and members <= tp[a]:
                add(a, rhs, ("conj", members))
        # c at a crosses edges: incoming r(b, a) lets b gain via forward
        # rules; outgoing r(a, b) lets b gain via backward rules.
        for r, b in in_edges[a]:
            for x, y in eng.forward.get(r, ()):
                if x == c and y not in tp[b]:
                    add(b, y, ("edge", (r, b, a), Role(r, False), a, c))
        for r, b in out_edges[a]:
            for x, y in eng.backward.get(r, ()):
                if x == c and y not in tp[b]:
                    add(b, y, ("edge", (r, a, b), Role(r, True), a, c))
        feedback(a)

    sat = Saturation({a: frozenset(s) for a, s in tp.items()}, prov)
    if len(_SAT_CACHE) > 20000:
        _SAT_CACHE.clear()
    _SAT_CACHE[key] = sat
    return sat


def saturate_types(nt: NormalizedTBox, abox: ABox) -> Dict[str, frozenset]:
    """Certain concept memberships of every named individual."""
    return dict(_saturate(nt, abox).tp)


# ---------------------------------------------------------------------------
# Universal model, materialized to a depth bound


class AnonNode:
    __slots__ = ("idx", "parent", "role", "tp", "depth")

    def __init__(self, idx: int, parent, role: Role, tp: frozenset, depth: int):
        self.idx = idx
        self.parent = parent
        self.role = role
        self.tp = tp
        self.depth = depth

    def __repr__(self):
        return f"_anon{self.idx}"


@dataclass(frozen=True)
class UniversalModel:
    abox: ABox
    tbox: NormalizedTBox
    depth: int
    tp: dict
    nodes: tuple

    def elements(self):
        return sorted(self.abox.individuals) + list(self.nodes)

    def type_of(self, element) -> frozenset:
        if isinstance(element, str):
            return self.tp[element]
        return element.tp

    def root_individual(self, element) -> str:
        while not isinstance(element, str):
            element = element.parent
        return element

    def to_abox(self) -> ABox:
        concepts = {(c, a) for a, t in self.tp.items() for c in t}
        roles = set(self.abox.roles)
        for node in self.nodes:
            name = repr(node)
            parent = node.parent if isinstance(node.parent, str) else repr(node.parent)
            concepts |= {(c, name) for c in node.tp}
            if node.role.inverted:
                roles.add((node.role.name, name, parent))
            else:
                roles.add((node.role.name, parent, name))
        return ABox(concepts, roles)


def chase_to_depth(nt: NormalizedTBox, abox: ABox, depth: int) -> UniversalModel:
    """Materialize the universal model with anonymous trees up to `depth`.

    Existential requirements of elements above the bound are satisfied; the
    frontier may leave them open.  Node labels are exact types, so the named
    part is depth-independent.
    """
    eng = engine_for(nt)
    tp = _saturate(nt, abox).tp
    nodes: list[AnonNode] = []
    frontier: list = []

    def named_witness(a: str, rho: Role, b_name: str) -> bool:
        if rho.inverted:
            return any(r == rho.name and b_name in tp[src]
                       for r, src in abox.in_edges.get(a, ()))
        return any(r == rho.name and b_name in tp[dst]
                   for r, dst in abox.out_edges.get(a, ()))

    def expand(element, etp: frozenset, edepth: int):
        children = []
        for a_name, rho, b_name in eng.exists_rules:
            if a_name not in etp:
                continue
            if isinstance(element, str):
                if named_witness(element, rho, b_name):
                    continue
            else:
                # the parent can serve as witness across the connecting edge
                parent_tp = tp[element.parent] if isinstance(element.parent, str) \
                    else element.parent.tp
                if rho == element.role.inverse() and b_name in parent_tp:
                    continue
            if any(ch.role == rho and b_name in ch.tp for ch in children):
                continue
            node = AnonNode(len(nodes), element,
                            rho, eng.anon_tp(frozenset([b_name]), rho, etp), edepth + 1)
            nodes.append(node)
            children.append(node)
            if edepth + 1 < depth:
                frontier.append(node)
        return children

    if depth > 0:
        for a in sorted(abox.individuals):
            expand(a, tp[a], 0)
        while frontier:
            node = frontier.pop(0)
            expand(node, node.tp, node.depth)
    return UniversalModel(abox, nt, depth, dict(tp), tuple(nodes))


class ModelTarget:
    """Homomorphism-search target backed by a materialized universal model."""

    def __init__(self, model: UniversalModel):
        self.model = model
        self._elements = model.elements()
        self._out: Dict[tuple, list] = {}
        self._in: Dict[tuple, list] = {}
        self._edges: set = set()
        for r, a, b in sorted(model.abox.roles):
            self._add_edge(r, a, b)
        for node in model.nodes:
            if node.role.inverted:
                self._add_edge(node.role.name, node, node.parent)
            else:
                self._add_edge(node.role.name, node.parent, node)

    def _add_edge(self, r, a, b):
        self._out.setdefault((id_key(a), r), []).append(b)
        self._in.setdefault((id_key(b), r), []).append(a)
        self._edges.add((r, id_key(a), id_key(b)))

    def elements(self):
        return self._elements

    def named_elements(self):
        return sorted(self.model.abox.individuals)

    def has_concept(self, e, name) -> bool:
        return name in self.model.type_of(e)

    def has_edge(self, role, e1, e2) -> bool:
        return (role, id_key(e1), id_key(e2)) in self._edges

    def out_neighbors(self, e, role):
        return self._out.get((id_key(e), role), [])

    def in_neighbors(self, e, role):
        return self._in.get((id_key(e), role), [])


def id_key(e):
    return e if isinstance(e, str) else ("~anon", e.idx)


# ---------------------------------------------------------------------------
# Derivation trees for atomic queries


@dataclass(frozen=True)
class DerivationTree:
    individual: str
    concept: str
    rule: str  # "leaf-assertion" | "leaf-top" | "exists" | "conj"
    role: Optional[Role]
    children: tuple

    def depth(self) -> int:
        return 0 if not self.children else 1 + max(c.depth() for c in self.children)


def derivation_tree(nt: NormalizedTBox, abox: ABox,
                    goal: tuple) -> Optional[DerivationTree]:
    """A derivation tree for goal=(concept, individual), or None."""
    concept, ind = goal
    sat = _saturate(nt, abox)
    if ind not in sat.tp or concept not in sat.tp[ind]:
        return None
    eng = engine_for(nt)
    memo: Dict[tuple, DerivationTree] = {}

    def leafish(a: str, c: str) -> Optional[DerivationTree]:
        if (c, a) in abox.concepts:
            return DerivationTree(a, c, "leaf-assertion", None, ())
        if c in eng.top_set:
            return DerivationTree(a, c, "leaf-top", None, ())
        return None

    def build(a: str, c: str) -> DerivationTree:
        node = memo.get((a, c))
        if node is not None:
            return node
        node = leafish(a, c)
        if node is None:
            why = sat.prov[(a, c)]
            if why[0] == "edge":
                _, _assertion, rho, other, x = why
                node = DerivationTree(a, c, "exists", rho, (build(other, x),))
            else:
                premises = set(why[1]) if why[0] in ("conj", "feedback") else set()
                for p in sorted(premises):
                    trial = premises - {p}
                    if trial and c in eng.clo(trial):
                        premises = trial
                if not premises:
                    premises = {eng.tops[0]}
                node = DerivationTree(
                    a, c, "conj", None, tuple(build(a, p) for p in sorted(premises))
                )
        memo[(a, c)] = node
        return node

    return build(ind, concept)


def validate_derivation_tree(nt: NormalizedTBox, abox: ABox,
                             tree: DerivationTree, goal: tuple) -> bool:
    """Check the structural conditions of derivation trees."""
    eng = engine_for(nt)
    if (tree.concept, tree.individual) != tuple(goal):
        return False

    def role_edge(rho: Role, a: str, b: str) -> bool:
        if rho.inverted:
            return (rho.name, b, a) in abox.roles
        return (rho.name, a, b) in abox.roles

    def ok(node: DerivationTree) -> bool:
        a, c = node.individual, node.concept
        leaf_cond = (c, a) in abox.concepts or c in eng.top_set
        if not node.children:
            return leaf_cond
        if leaf_cond:
            return False
        exists_ok = False
        if len(node.children) == 1:
            child = node.children[0]
            exists_ok = any(
                y == c and b_name == child.concept and role_edge(rho, a, child.individual)
                for y, rho, b_name in _exists_lhs(eng)
            )
        conj_ok = (
            all(ch.individual == a for ch in node.children)
            and eng.entails_conj({ch.concept for ch in node.children}, c)
        )
        if not (exists_ok or conj_ok):
            return False
        return all(ok(ch) for ch in node.children)

    return ok(tree)


def _exists_lhs(eng: TypeEngine):
    out = []
    for r, pairs in eng.forward.items():
        for x, y in pairs:
            out.append((y, Role(r, False), x))
    for r, pairs in eng.backward.items():
        for x, y in pairs:
            out.append((y, Role(r, True), x))
    return out


# ---------------------------------------------------------------------------
# Degree reduction


def reduce_degree(omq: OMQ, abox: ABox, ind: str, nt: Optional[NormalizedTBox] = None) -> ABox:
    """Shrink an ABox to the role assertions that fed some completion step.

    For an atomic query this keeps entailment of the answer and bounds the
    out-degree by the number of concept inclusions.
    """
    from .syntax import normalize  # local import to avoid cycle noise

    if not omq.is_aq():
        raise ValueError("degree reduction is defined for atomic queries")
    if nt is None:
        nt = normalize(omq.tbox)
    concept = next(iter(omq.query.unary))[0]
    sat = _saturate(nt, abox)
    if concept not in sat.tp.get(ind, frozenset()):
        raise NotEntailed(f"{concept}({ind}) is not entailed")
    used = set()
    for (a, c), why in sat.prov.items():
        if why[0] == "edge":
            used.add(why[1])
    reduced = ABox(abox.concepts, used & abox.roles)
    return reduced
