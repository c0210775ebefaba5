"""OMQ evaluation and the pseudo-tree machinery around minimal witnesses."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, Optional, Tuple

from .chase import ModelTarget, chase_to_depth, engine_for, _saturate
from .errors import BoundTooSmall, NotEntailed, SignatureViolation
from .syntax import (
    ABox,
    CQ,
    NormalizedTBox,
    OMQ,
    Signature,
    TBox,
    find_homomorphism,
    iter_homomorphisms,
    normalize,
)


@lru_cache(maxsize=512)
def normalized(tbox: TBox) -> NormalizedTBox:
    return normalize(tbox)


def query_components(q: CQ) -> list[CQ]:
    """Maximal connected components, each keeping its answer variables."""
    parent = {v: v for v in q.variables}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for _, x, y in q.binary:
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[rx] = ry
    groups: Dict[str, set] = {}
    for v in q.variables:
        groups.setdefault(find(v), set()).add(v)
    comps = []
    for _, vs in sorted(groups.items()):
        comps.append(q.restrict(vs))
    comps.sort(key=lambda c: (sorted(c.unary), sorted(c.binary)))
    return comps


def _model_depth(nt: NormalizedTBox, abox: ABox, q: CQ) -> int:
    nvars = max(1, len(q.variables))
    eng = engine_for(nt)
    if not eng.exists_rules:
        return nvars
    rooted = all(any(v in c.answer_vars for v in c.variables) for c in query_components(q))
    if rooted and q.answer_vars:
        return nvars
    tps = set(_saturate(nt, abox).tp.values())
    return nvars + len(eng.reachable_anon_types(tps))


_MODEL_CACHE: Dict[tuple, ModelTarget] = {}


def _target_for(nt: NormalizedTBox, abox: ABox, depth: int) -> ModelTarget:
    key = (nt, abox, depth)
    hit = _MODEL_CACHE.get(key)
    if hit is None:
        hit = ModelTarget(chase_to_depth(nt, abox, depth))
        if len(_MODEL_CACHE) > 2048:
            _MODEL_CACHE.clear()
        _MODEL_CACHE[key] = hit
    return hit


def evaluate(omq: OMQ, abox: ABox, answer: Optional[Tuple] = None):
    """Certain answers of the OMQ on a signature ABox.

    Returns the set of answer tuples, or a bool when `answer` is given.
    Boolean queries yield set() or {()}.
    """
    if not omq.sigma.admits(abox):
        raise SignatureViolation("ABox uses symbols outside the OMQ signature")
    nt = normalized(omq.tbox)
    q = omq.query
    if omq.is_aq():
        concept = next(iter(q.unary))[0]
        tp = _saturate(nt, abox).tp
        if answer is not None:
            return len(answer) == 1 and concept in tp.get(answer[0], frozenset())
        return {(a,) for a, t in tp.items() if concept in t}

    target = _target_for(nt, abox, _model_depth(nt, abox, q))
    named = set(target.named_elements())

    def check(tup: Tuple) -> bool:
        anchor = {}
        for v, a in zip(q.answer_vars, tup):
            if anchor.get(v, a) != a:
                return False
            anchor[v] = a
        if any(a not in named for a in tup):
            return False
        return find_homomorphism(q, target, anchor, named_vars=q.answer_vars) is not None

    if answer is not None:
        return len(answer) == q.arity and check(tuple(answer))
    if q.is_boolean:
        return {()} if find_homomorphism(q, target) is not None else set()
    out = set()
    for tup in itertools.product(sorted(named), repeat=q.arity):
        if check(tup):
            out.add(tup)
    return out


def holds(omq: OMQ, abox: ABox, answer: Tuple) -> bool:
    return bool(evaluate(omq, abox, tuple(answer)))


def minimize(omq: OMQ, abox: ABox, answer: Tuple) -> ABox:
    """Greedy subset minimization keeping the answer entailed.

    Concept assertions are tried before role assertions, each in codec
    order, so results are deterministic and idempotent.
    """
    answer = tuple(answer)
    if not holds(omq, abox, answer):
        raise NotEntailed("tuple is not an answer on the given ABox")
    cur = abox
    for assertion in abox.assertions():
        trial = cur.without(assertion)
        if holds(omq, trial, answer):
            cur = trial
    return cur


# ---------------------------------------------------------------------------
# Pseudo tree-shaped ABoxes


def tree_shape_error(abox: ABox, root: Optional[str] = None) -> Optional[str]:
    """None if the ABox is tree-shaped (rooted, acyclic, no multi-edges)."""
    if not abox.individuals:
        return "empty"
    pairs = {}
    for r, a, b in abox.roles:
        pairs.setdefault((a, b), set()).add(r)
    for (a, b), roles in pairs.items():
        if len(roles) > 1:
            return f"multi-edge between {a} and {b}"
    indeg = {a: 0 for a in abox.individuals}
    for _, _, b in abox.roles:
        indeg[b] += 1
    roots = sorted(a for a, d in indeg.items() if d == 0)
    if len(roots) != 1:
        return f"expected one root, found {roots}"
    if root is not None and roots[0] != root:
        return f"root is {roots[0]}, expected {root}"
    if any(d > 1 for d in indeg.values()):
        bad = sorted(a for a, d in indeg.items() if d > 1)
        return f"{bad[0]} has several parents"
    # connected & acyclic: reachable-from-root covers everything
    seen = {roots[0]}
    stack = [roots[0]]
    while stack:
        u = stack.pop()
        for _, v in abox.out_edges.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    if seen != set(abox.individuals):
        return "not connected"
    return None


def descendants(abox: ABox, a: str) -> frozenset:
    seen = set()
    stack = [a]
    while stack:
        u = stack.pop()
        for _, v in abox.out_edges.get(u, ()):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    seen.discard(a)
    return frozenset(seen)


def abox_subtree(abox: ABox, a: str) -> ABox:
    """The tree-shaped part rooted at `a` (a's labels and everything below)."""
    keep = descendants(abox, a) | {a}
    return abox.restrict(keep)


def abox_excise(abox: ABox, a: str) -> ABox:
    """Drop everything below `a` and a's own concept assertions."""
    below = descendants(abox, a)
    return ABox(
        {(c, x) for c, x in abox.concepts if x != a and x not in below},
        {(r, u, v) for r, u, v in abox.roles if u not in below and v not in below
         and u != a},
    )


@dataclass(frozen=True)
class PseudoTreeABox:
    core: ABox
    trees: tuple  # of (root individual, tree ABox whose root is that individual)

    def __init__(self, core: ABox, trees: Iterable = ()):
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "trees", tuple((root, t) for root, t in trees))

    @property
    def core_individuals(self) -> frozenset:
        return self.core.individuals | frozenset(root for root, _ in self.trees)

    def whole(self) -> ABox:
        out = self.core
        for _, t in self.trees:
            out = out.union(t)
        return out

    def non_core_individuals(self) -> frozenset:
        out = set()
        for root, t in self.trees:
            out |= t.individuals - {root}
        return frozenset(out)

    def tree_of(self, a: str) -> Optional[ABox]:
        for root, t in self.trees:
            if a in t.individuals:
                return t
        return None

    def depth(self) -> int:
        def tree_depth(t: ABox, root: str) -> int:
            best = 0
            stack = [(root, 0)]
            while stack:
                u, d = stack.pop()
                best = max(best, d)
                for _, v in t.out_edges.get(u, ()):
                    stack.append((v, d + 1))
            return best

        return max((tree_depth(t, root) for root, t in self.trees), default=0)

    def validate(self) -> tuple[bool, Optional[str]]:
        seen_noncore: set = set()
        core_inds = self.core.individuals | {root for root, _ in self.trees}
        for root, t in self.trees:
            err = tree_shape_error(t, root)
            if err:
                return False, f"tree at {root}: {err}"
            others = t.individuals - {root}
            if others & core_inds:
                return False, f"tree at {root} reuses core individuals"
            if others & seen_noncore:
                return False, "trees share individuals"
            seen_noncore |= others
        for c, a in self.core.concepts:
            if a not in core_inds:
                return False, f"core concept assertion outside core: {a}"
        for r, a, b in self.core.roles:
            if a not in core_inds or b not in core_inds:
                return False, "core role assertion outside core"
        return True, None

    def distance_from_core(self, a: str) -> Optional[int]:
        for root, t in self.trees:
            if a in t.individuals:
                d = 0
                cur = a
                while cur != root:
                    cur = t.in_edges[cur][0][1]
                    d += 1
                return d
        return 0 if a in self.core_individuals else None

    def is_descendant(self, ancestor: str, a: str) -> bool:
        t = self.tree_of(a)
        return t is not None and a in descendants(t, ancestor)

    def ancestor_path(self, a: str, length: int) -> Optional[tuple]:
        """Roles on the last `length` steps of the path from the root to a."""
        t = self.tree_of(a)
        if t is None:
            return None
        path = []
        cur = a
        while cur in t.in_edges:
            r, p = t.in_edges[cur][0]
            path.append(r)
            cur = p
        if len(path) < length:
            return None
        return tuple(reversed(path[:length]))

    @staticmethod
    def decompose(abox: ABox) -> "PseudoTreeABox":
        """Canonical decomposition with the smallest possible core."""
        inds = abox.individuals
        in_asserts: Dict[str, list] = {a: [] for a in inds}
        for r, a, b in sorted(abox.roles):
            in_asserts[b].append((r, a))

        def pendant(x: str) -> bool:
            if len(in_asserts[x]) != 1:
                return False
            below = descendants(abox, x)
            if x in below or in_asserts[x][0][1] in below:
                return False
            for d in below:
                if len(in_asserts[d]) != 1:
                    return False
                if in_asserts[d][0][1] not in below | {x}:
                    return False
            return True

        non_core = {x for x in inds if pendant(x)}
        core_inds = sorted(inds - non_core)
        core = ABox(
            {(c, a) for c, a in abox.concepts if a in core_inds},
            {(r, a, b) for r, a, b in abox.roles if a not in non_core and b not in non_core},
        )
        trees = []
        for root in core_inds:
            hang = sorted(v for _, v in abox.out_edges.get(root, ()) if v in non_core)
            if not hang:
                continue
            members = set()
            for h in hang:
                members |= {h} | descendants(abox, h)
            t = ABox(
                {(c, a) for c, a in abox.concepts if a in members},
                {(r, a, b) for r, a, b in abox.roles
                 if (a == root and b in members) or (a in members and b in members)},
            )
            trees.append((root, t))
        return PseudoTreeABox(core, trees)


# ---------------------------------------------------------------------------
# Unraveling


def unravel(omq: OMQ, abox: ABox, answer: Tuple, depth_bound: int):
    """A pseudo tree-shaped witness mapping back into `abox`.

    Returns (pseudo_tree, hom) where hom is identity on the answer tuple.
    Trees are truncated at `depth_bound`; if that loses the entailment,
    BoundTooSmall is raised.
    """
    answer = tuple(answer)
    if len(query_components(omq.query)) > 1:
        raise ValueError("unravel requires a connected query")
    if not holds(omq, abox, answer):
        raise NotEntailed("tuple is not an answer on the given ABox")

    nt = normalized(omq.tbox)
    q = omq.query
    target = _target_for(nt, abox, _model_depth(nt, abox, q))
    anchor = dict(zip(q.answer_vars, answer))
    h = find_homomorphism(q, target, anchor, named_vars=q.answer_vars)
    roots = sorted({target.model.root_individual(e) for e in h.values()} | set(answer))
    core = abox.restrict(roots)
    trees = []
    hom = {a: a for a in roots}
    for idx, a in enumerate(roots):
        concepts: set = set()
        roles: set = set()
        counter = itertools.count()
        frontier = [(a, a, 0)]
        while frontier:
            node, ind, d = frontier.pop(0)
            if d == depth_bound:
                continue
            for r, v in sorted(abox.out_edges.get(ind, ())):
                child = f"_u{idx}_{next(counter)}"
                hom[child] = v
                roles.add((r, node, child))
                concepts |= {(c, child) for c in abox.label(v)}
                frontier.append((child, v, d + 1))
        if roles:
            trees.append((a, ABox(concepts, roles)))
    pt = PseudoTreeABox(core, trees)
    if not holds(omq, pt.whole(), answer):
        raise BoundTooSmall(f"unraveling truncated at depth {depth_bound} loses the answer")
    return pt, hom


# ---------------------------------------------------------------------------
# Minimal-witness membership


@dataclass(frozen=True)
class MQCertificate:
    abox: PseudoTreeABox
    answer: tuple
    ok: bool
    failures: tuple
    minimality_log: tuple


def in_mq(omq: OMQ, cert, answer: Tuple) -> MQCertificate:
    """Check membership among minimal pseudo-tree witnesses of the OMQ."""
    answer = tuple(answer)
    if isinstance(cert, ABox):
        cert = PseudoTreeABox.decompose(cert)
    failures = []
    ok_shape, why = cert.validate()
    if not ok_shape:
        failures.append(("shape", why))
    whole = cert.whole()
    if not omq.sigma.admits(whole):
        failures.append(("signature", "assertions outside the signature"))
        return MQCertificate(cert, answer, False, tuple(failures), ())
    if len(cert.core_individuals) > omq.query.size:
        failures.append(("core-size", f"{len(cert.core_individuals)} > {omq.query.size}"))
    if len(answer) != omq.arity or not set(answer) <= cert.core_individuals:
        failures.append(("tuple-in-core", "answer tuple must come from the core"))
    entailed = holds(omq, whole, answer)
    if not entailed:
        failures.append(("entailment", "tuple is not an answer"))
        return MQCertificate(cert, answer, False, tuple(failures), ())
    log = []
    minimal = True
    for assertion in whole.assertions():
        still = holds(omq, whole.without(assertion), answer)
        log.append((assertion, still))
        if still:
            minimal = False
    if not minimal:
        failures.append(("minimality", "a strict subset still entails the answer"))
    return MQCertificate(cert, answer, not failures, tuple(failures), tuple(log))


# ---------------------------------------------------------------------------
# Core-closeness


def element_root(element):
    while not isinstance(element, str):
        element = element.parent
    return element


def core_close(omq: OMQ, pt: PseudoTreeABox, hom: dict) -> bool:
    """Does the match touch the core or an anonymous tree below it?"""
    core = pt.core_individuals
    for e in hom.values():
        if isinstance(e, str):
            if e in core:
                return True
        elif element_root(e) in core:
            return True
    return False


def all_matches_core_close(omq: OMQ, pt: PseudoTreeABox) -> bool:
    """Exhaustively check every query match for core-closeness."""
    whole = pt.whole()
    nt = normalized(omq.tbox)
    q = omq.query
    target = _target_for(nt, whole, _model_depth(nt, whole, q))
    for h in iter_homomorphisms(q, target, named_vars=q.answer_vars):
        if not core_close(omq, pt, h):
            return False
    return True


# ---------------------------------------------------------------------------
# OMQ normalization: emptiness and redundancy


def sigma_aboxes(sigma: Signature, max_individuals: int):
    """Canonical enumeration of signature ABoxes, by size then bitmask."""
    for n in range(1, max_individuals + 1):
        inds = [f"u{i}" for i in range(n)]
        universe = [("c", c, a) for c in sorted(sigma.concepts) for a in inds]
        universe += [("r", r, a, b) for r in sorted(sigma.roles)
                     for a in inds for b in inds]
        for mask in range(1, 1 << len(universe)):
            concepts = []
            roles = []
            for i, item in enumerate(universe):
                if mask >> i & 1:
                    if item[0] == "c":
                        concepts.append((item[1], item[2]))
                    else:
                        roles.append((item[1], item[2], item[3]))
            abox = ABox(concepts, roles)
            if len(abox.individuals) == n:
                yield abox


@dataclass(frozen=True)
class NormalizedOMQ:
    omq: OMQ
    empty: bool
    dropped_mccs: tuple
    exact: bool  # False when redundancy pruning relied on the bounded search


def normalize_omq(omq: OMQ, search_bound: int = 2) -> NormalizedOMQ:
    """Decide emptiness exactly; drop Boolean components up to a bounded search.

    Emptiness reduces to the single full ABox over the signature because
    answers are preserved under ABox homomorphisms.  Redundancy of a Boolean
    component is only refuted up to `search_bound` individuals, so dropping
    is a semi-decision and is flagged via `exact=False`.
    """
    sigma = omq.sigma
    full = ABox(
        {(c, "u0") for c in sigma.concepts},
        {(r, "u0", "u0") for r in sigma.roles},
    )
    if full.is_empty():
        return NormalizedOMQ(omq, True, (), True)
    tup = ("u0",) * omq.arity
    if not holds(omq, full, tup):
        return NormalizedOMQ(omq, True, (), True)

    dropped = []
    cur = omq
    searched = False
    while True:
        comps = query_components(cur.query)
        boolean = [c for c in comps if not c.answer_vars]
        if len(comps) == 1 or not boolean:
            break
        progress = False
        for comp in boolean:
            rest = [c for c in comps if c is not comp]
            merged = CQ(
                cur.query.answer_vars,
                frozenset().union(*[c.unary for c in rest]) if rest else frozenset(),
                frozenset().union(*[c.binary for c in rest]) if rest else frozenset(),
            )
            candidate = OMQ(cur.tbox, cur.sigma, merged)
            comp_omq = OMQ(cur.tbox, cur.sigma, comp)
            searched = True
            counterexample = False
            for abox in sigma_aboxes(sigma, search_bound):
                if evaluate(comp_omq, abox):
                    continue
                answers = evaluate(candidate, abox)
                if answers if candidate.arity else answers == {()}:
                    counterexample = True
                    break
            if not counterexample:
                dropped.append(comp)
                cur = candidate
                progress = True
                break
        if not progress:
            break
    return NormalizedOMQ(cur, False, tuple(dropped), not searched)
