"""Pathwidth, path decompositions, branching numbers and tree minors.

Pathwidth is computed on the underlying undirected graph of an ABox.  Exact
values come from a vertex-separation subset DP (up to 14 vertices) or, for
trees of any size, from the three-branches characterization of vertex
separation.  Decompositions additionally place both endpoints of every edge
in a common bag, which the word encoding downstream relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterable, Optional

from .errors import NotATree, TooLarge
from .syntax import ABox

_EXACT_LIMIT = 14


@dataclass(frozen=True)
class PathDecomposition:
    bags: tuple

    def __init__(self, bags: Iterable):
        object.__setattr__(self, "bags", tuple(frozenset(b) for b in bags))

    @cached_property
    def width(self) -> int:
        return max((len(b) for b in self.bags), default=1) - 1

    @cached_property
    def max_interface(self) -> int:
        return max(
            (len(a & b) for a, b in zip(self.bags, self.bags[1:])),
            default=0,
        )

    def dedup(self) -> "PathDecomposition":
        out = []
        for bag in self.bags:
            if not out or out[-1] != bag:
                out.append(bag)
        return PathDecomposition(out)


def undirected_adjacency(abox: ABox) -> Dict[str, set]:
    adj: Dict[str, set] = {a: set() for a in abox.individuals}
    for _, a, b in abox.roles:
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    return adj


def validate_path_decomposition(pd: PathDecomposition, abox: ABox):
    """(ok, reason): vertex cover, contiguity, and edge coverage."""
    vertices = set(abox.individuals)
    covered = set().union(*pd.bags) if pd.bags else set()
    missing = vertices - covered
    if missing:
        return False, f"vertex {sorted(missing)[0]} is in no bag"
    position: Dict[str, list] = {}
    for i, bag in enumerate(pd.bags):
        for v in bag:
            position.setdefault(v, []).append(i)
    for v, places in position.items():
        if places[-1] - places[0] + 1 != len(places):
            return False, f"vertex {v} reappears after an absence"
    for r, a, b in sorted(abox.roles):
        if a == b:
            continue
        if not any(a in bag and b in bag for bag in pd.bags):
            return False, f"edge {r}({a},{b}) has no common bag"
    return True, None


def _components(vertices: set, adj: Dict[str, set]):
    seen: set = set()
    comps = []
    for v in sorted(vertices):
        if v in seen:
            continue
        comp = {v}
        stack = [v]
        seen.add(v)
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w in vertices and w not in seen:
                    seen.add(w)
                    comp.add(w)
                    stack.append(w)
        comps.append(frozenset(comp))
    return comps


def _is_forest(vertices: set, adj: Dict[str, set]) -> bool:
    edges = sum(len(adj[v] & vertices) for v in vertices) // 2
    return edges == len(vertices) - len(_components(vertices, adj))


def _order_to_bags(order: list, adj: Dict[str, set]) -> list:
    bags = []
    n = len(order)
    pos = {v: i for i, v in enumerate(order)}
    for i, v in enumerate(order):
        bag = {v}
        for j in range(i):
            u = order[j]
            if any(pos.get(w, -1) >= i for w in adj[u]):
                bag.add(u)
        bags.append(bag)
    return bags


# -- exact pathwidth on small graphs: vertex-separation subset DP


def _exact_small(vertices: list, adj: Dict[str, set]):
    n = len(vertices)
    index = {v: i for i, v in enumerate(vertices)}
    nb = [0] * n
    for v in vertices:
        for w in adj[v]:
            if w in index:
                nb[index[v]] |= 1 << index[w]
    full = (1 << n) - 1

    def boundary(mask: int) -> int:
        count = 0
        rest = mask
        outside = full & ~mask
        while rest:
            low = rest & -rest
            if nb[low.bit_length() - 1] & outside:
                count += 1
            rest ^= low
        return count

    INF = n + 1
    f = [INF] * (1 << n)
    choice = [-1] * (1 << n)
    f[0] = 0
    for mask in range(1, 1 << n):
        b = boundary(mask)
        best, who = INF, -1
        rest = mask
        while rest:
            low = rest & -rest
            v = low.bit_length() - 1
            cand = max(f[mask ^ low], b)
            if cand < best:
                best, who = cand, v
            rest ^= low
        f[mask] = best
        choice[mask] = who
    order = []
    mask = full
    while mask:
        v = choice[mask]
        order.append(vertices[v])
        mask ^= 1 << v
    order.reverse()
    return f[full], order


# -- exact pathwidth on trees: three-branches characterization


class _TreeSeparation:
    def __init__(self, vertices: frozenset, adj: Dict[str, set]):
        self.adj = adj
        self.vertices = vertices
        self._memo: Dict[tuple, bool] = {}
        # minimum tree sizes forcing vertex separation >= j
        self._min_size = [1, 2]
        while self._min_size[-1] <= len(vertices):
            self._min_size.append(3 * self._min_size[-1] + 1)

    def _parts(self, comp: frozenset, v: str):
        rest = set(comp) - {v}
        return _components(rest, self.adj)

    def vs_ge(self, comp: frozenset, j: int) -> bool:
        if j == 0:
            return True
        if j < len(self._min_size) and len(comp) < self._min_size[j]:
            return False
        if j == 1:
            return any(self.adj[v] & comp for v in comp)
        key = (comp, j)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        result = False
        for v in sorted(comp):
            heavy = 0
            for part in self._parts(comp, v):
                if self.vs_ge(part, j - 1):
                    heavy += 1
                    if heavy >= 3:
                        break
            if heavy >= 3:
                result = True
                break
        self._memo[key] = result
        return result

    def vs(self, comp: frozenset) -> int:
        j = 0
        while self.vs_ge(comp, j + 1):
            j += 1
        return j

    def layout(self, comp: frozenset, k: int) -> list:
        """A vertex order of the (sub)tree with separation at most k.

        Builds a main path through every k-heavy branch; the components
        hanging off the path all have separation below k and are laid out
        recursively right after their attachment vertex.
        """
        if len(comp) == 1:
            return [next(iter(comp))]
        heavy_parts = {
            v: [p for p in self._parts(comp, v) if self.vs_ge(p, k)]
            for v in sorted(comp)
        }
        two = sorted(v for v, ps in heavy_parts.items() if len(ps) >= 2)
        one = sorted(v for v, ps in heavy_parts.items() if len(ps) == 1)
        v0 = two[0] if two else (one[0] if one else sorted(comp)[0])

        def walk(start: str, first_part: frozenset) -> list:
            path = []
            prev, cur = start, sorted(self.adj[start] & first_part)[0]
            while True:
                path.append(cur)
                forward = [p for p in heavy_parts[cur] if prev not in p]
                if not forward:
                    return path
                if len(forward) > 1:
                    raise AssertionError("two heavy branches off the main path")
                prev, cur = cur, sorted(self.adj[cur] & forward[0])[0]

        path = [v0]
        parts0 = heavy_parts[v0]
        if parts0:
            path = path + walk(v0, parts0[0])
        if len(parts0) >= 2:
            path = list(reversed(walk(v0, parts0[1]))) + path

        on_path = set(path)
        hang: Dict[str, list] = {p: [] for p in path}
        for part in _components(set(comp) - on_path, self.adj):
            anchors = sorted(p for p in path if self.adj[p] & part)
            if len(anchors) != 1:
                raise AssertionError("off-path component with several anchors")
            if self.vs_ge(part, k):
                raise AssertionError("heavy component escaped the main path")
            hang[anchors[0]].append(part)
        order: list = []
        for p in path:
            order.append(p)
            for part in sorted(hang[p], key=min):
                order.extend(self.layout(part, k - 1))
        return order


def _tree_exact(comp: frozenset, adj: Dict[str, set]):
    ts = _TreeSeparation(comp, adj)
    k = ts.vs(comp)
    order = ts.layout(comp, k)
    return k, order


# -- public entry points


def pathwidth(abox: ABox, mode: str = "exact"):
    """(width, PathDecomposition) for the graph of an ABox.

    exact mode: minimum width; trees of any size, other graphs up to 14
    vertices.  tree-upper mode: the constructive decomposition with bag
    size at most branching number + 2, root in the last bag.
    """
    if mode == "tree-upper":
        return _tree_upper(abox)
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    adj = undirected_adjacency(abox)
    vertices = set(abox.individuals)
    if not vertices:
        return 0, PathDecomposition([])
    width = 0
    bags: list = []
    for comp in _components(vertices, adj):
        if _is_forest(set(comp), adj):
            w, order = _tree_exact(comp, adj)
        elif len(comp) <= _EXACT_LIMIT:
            w, order = _exact_small(sorted(comp), adj)
        else:
            raise TooLarge(
                f"component with {len(comp)} vertices and cycles exceeds the "
                f"exact budget of {_EXACT_LIMIT}"
            )
        width = max(width, w)
        bags.extend(_order_to_bags(order, adj))
    pd = PathDecomposition(bags).dedup()
    ok, why = validate_path_decomposition(pd, abox)
    if not ok:
        raise AssertionError(f"internal decomposition error: {why}")
    if pd.width > width:
        raise AssertionError("internal decomposition wider than computed width")
    return width, pd


# ---------------------------------------------------------------------------
# Directed trees: children, branching number, minors


def tree_children(abox: ABox) -> tuple:
    """(root, children map) of a tree-shaped ABox; raises NotATree."""
    from .evaluation import tree_shape_error

    err = tree_shape_error(abox)
    if err:
        raise NotATree(err)
    indeg = {a: 0 for a in abox.individuals}
    for _, _, b in abox.roles:
        indeg[b] += 1
    root = sorted(a for a, d in indeg.items() if d == 0)[0]
    children: Dict[str, list] = {a: [] for a in abox.individuals}
    for _, a, b in sorted(abox.roles):
        children[a].append(b)
    return root, children


def branching_number(abox: ABox):
    """(label of the root, embedding of the full binary tree of that depth).

    Leaves get label 0; an inner node gets the maximum child label, plus one
    if at least two children attain it.  The embedding maps binary strings
    (the nodes of the full binary tree) to individuals such that children map
    to descendants.
    """
    root, children = tree_children(abox)
    labels: Dict[str, int] = {}
    emb: Dict[str, dict] = {}

    def visit(a: str):
        if not children[a]:
            labels[a] = 0
            emb[a] = {"": a}
            return
        for c in children[a]:
            visit(c)
        m = max(labels[c] for c in children[a])
        winners = [c for c in children[a] if labels[c] == m]
        if len(winners) >= 2:
            labels[a] = m + 1
            left, right = winners[0], winners[1]
            mapping = {"": a}
            for w, ind in emb[left].items():
                mapping["1" + w] = ind
            for w, ind in emb[right].items():
                mapping["2" + w] = ind
            emb[a] = mapping
        else:
            labels[a] = m
            emb[a] = emb[winners[0]]

    visit(root)
    return labels[root], dict(emb[root])


def branching_labels(abox: ABox) -> Dict[str, int]:
    root, children = tree_children(abox)
    labels: Dict[str, int] = {}

    def visit(a: str):
        if not children[a]:
            labels[a] = 0
            return
        for c in children[a]:
            visit(c)
        m = max(labels[c] for c in children[a])
        labels[a] = m + 1 if sum(1 for c in children[a] if labels[c] == m) >= 2 else m

    visit(root)
    return labels


def validate_minor_embedding(abox: ABox, depth: int, mapping: Dict[str, str]) -> bool:
    """Does `mapping` embed the full binary tree of `depth` as a minor?"""
    root, children = tree_children(abox)
    desc_cache: Dict[str, frozenset] = {}

    def desc(a: str) -> frozenset:
        if a not in desc_cache:
            out = set()
            stack = list(children[a])
            while stack:
                u = stack.pop()
                out.add(u)
                stack.extend(children[u])
            desc_cache[a] = frozenset(out)
        return desc_cache[a]

    words = [""]
    for _ in range(depth):
        words = [w + c for w in words for c in "12"]
    all_words = {""}
    frontier = [""]
    for _ in range(depth):
        frontier = [w + c for w in frontier for c in "12"]
        all_words.update(frontier)
    for w in all_words:
        if w not in mapping:
            return False
        if w and mapping[w] not in desc(mapping[w[:-1]]):
            return False
    return True


def tree_depth(abox: ABox) -> int:
    root, children = tree_children(abox)
    best = 0
    stack = [(root, 0)]
    while stack:
        a, d = stack.pop()
        best = max(best, d)
        for c in children[a]:
            stack.append((c, d + 1))
    return best


def leaf_count(abox: ABox) -> int:
    root, children = tree_children(abox)
    return sum(1 for a in abox.individuals if not children[a])


def _tree_upper(abox: ABox):
    root, children = tree_children(abox)
    labels = branching_labels(abox)

    def build(a: str) -> list:
        kids = children[a]
        if not kids:
            return [frozenset([a])]
        m = max(labels[c] for c in kids)
        winners = [c for c in kids if labels[c] == m]
        if len(winners) >= 2:
            bags = []
            for c in kids:
                bags.extend(frozenset(bag | {a}) for bag in build(c))
            return bags
        first = winners[0]
        bags = list(build(first))
        bags.append(frozenset({a, first}))
        for c in kids:
            if c is first:
                continue
            bags.extend(frozenset(bag | {a}) for bag in build(c))
        return bags

    bags = build(root)
    if root not in bags[-1]:
        bags.append(frozenset([root]))
    pd = PathDecomposition(bags).dedup()
    ok, why = validate_path_decomposition(pd, abox)
    if not ok:
        raise AssertionError(f"internal tree decomposition error: {why}")
    width = labels[root] + 2 - 1  # bag size at most br+2
    if pd.width > width:
        raise AssertionError("tree decomposition exceeded the branching bound")
    return pd.width, pd


# ---------------------------------------------------------------------------
# Extremal leaf counts


def leaves_bound(d: int, k: int, n: int) -> int:
    """Maximum leaves of a degree-d depth-n tree without a full binary tree
    of depth k+1 as a minor."""
    if min(d, k, n) < 0:
        raise ValueError("arguments must be nonnegative")
    return sum((d - 1) ** i * math.comb(n, i) for i in range(k + 1))


def leaves_bound_recurrence(d: int, k: int, n: int) -> int:
    if k == 0 or n == 0:
        return 1
    return leaves_bound_recurrence(d, k, n - 1) + (d - 1) * leaves_bound_recurrence(
        d, k - 1, n - 1
    )
