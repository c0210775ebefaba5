"""Compilation of bounded-pathwidth OMQs into linear Datalog.

The pipeline encodes (ABox, tuple) pairs of pathwidth <= k as words whose
symbols are path-decomposition bags with interface tuples, builds a two-way
alternating word automaton that accepts exactly the encodings of entailing
pairs, converts it to a DFA by boundary-behavior tables, and emits one
Datalog rule per DFA transition.

The alphabet is exponential in k, so only symbols occurring in a supplied
corpus of encodings are materialized; the emitted program is sound on all
inputs and complete on inputs whose bag symbols were materialized (always
assuming pathwidth <= k).
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass
from functools import lru_cache, reduce
from typing import Dict, Iterable, List, Optional, Tuple

from .chase import ModelTarget, chase_to_depth, engine_for, _saturate
from .datalog import DatalogProgram, Rule
from .errors import StateBudgetExceeded
from .evaluation import normalized, query_components
from .structure import PathDecomposition
from .syntax import ABox, CQ, OMQ, iter_homomorphisms

LEFT, RIGHT, STAY = "left", "right", "stay"
LEND, REND = "<end", "end>"

NAMED, ANON = "named", "anon"


def reserved_names(k: int) -> list:
    return [f"n{i:02d}" for i in range(2 * k + 2)]


# ---------------------------------------------------------------------------
# Alphabet symbols and the word codec


@dataclass(frozen=True)
class AlphabetSymbol:
    left: tuple  # incoming interface (ascending reserved names)
    bag: ABox
    right: tuple  # outgoing interface
    fmap: tuple  # sorted (answer position, name) pairs

    def __init__(self, left, bag, right, fmap=()):
        object.__setattr__(self, "left", tuple(sorted(left)))
        object.__setattr__(self, "bag", bag)
        object.__setattr__(self, "right", tuple(sorted(right)))
        object.__setattr__(self, "fmap", tuple(sorted(fmap)))

    @property
    def names(self) -> tuple:
        out = set(self.left) | set(self.right) | {n for _, n in self.fmap}
        out |= self.bag.individuals
        return tuple(sorted(out))

    def to_json(self) -> dict:
        return {
            "b": list(self.left),
            "bag": {
                "concepts": sorted([c, a] for c, a in self.bag.concepts),
                "roles": sorted([r, a, b] for r, a, b in self.bag.roles),
            },
            "c": list(self.right),
            "f": {f"x{i + 1}": n for i, n in self.fmap},
        }

    @staticmethod
    def from_json(data: dict) -> "AlphabetSymbol":
        bag = ABox(
            [tuple(x) for x in data["bag"]["concepts"]],
            [tuple(x) for x in data["bag"]["roles"]],
        )
        fmap = [(int(k[1:]) - 1, v) for k, v in data["f"].items()]
        return AlphabetSymbol(data["b"], bag, data["c"], fmap)


def encode(abox: ABox, answer: Tuple, pd: PathDecomposition) -> list:
    """Encode (abox, answer) as a word along a path decomposition.

    Bags become signature ABoxes over the reserved names; consecutive bags
    share names exactly on their intersection, interfaces list those names
    ascending, and per-bag partial maps mark the answer individuals.
    """
    bags = [frozenset(b & abox.individuals) for b in pd.dedup().bags]
    bags = [b for b in bags if b]
    if not bags:
        raise ValueError("cannot encode an empty ABox")
    k = max(len(b) for b in bags) - 1
    pool = reserved_names(k)
    word = []
    prev_assign: Dict[str, str] = {}
    prev_bag: frozenset = frozenset()
    for i, bag in enumerate(bags):
        carried = bag & prev_bag
        assign = {ind: prev_assign[ind] for ind in carried}
        blocked = set(prev_assign.values())
        free = [n for n in pool if n not in blocked]
        for ind in sorted(bag - carried):
            if not free:
                raise ValueError("bag too large for the reserved name pool")
            assign[ind] = free.pop(0)
        nxt = bags[i + 1] & bag if i + 1 < len(bags) else frozenset()
        left = tuple(sorted(assign[x] for x in carried))
        right = tuple(sorted(assign[x] for x in nxt))
        fmap = [(j, assign[a]) for j, a in enumerate(answer) if a in bag]
        piece = abox.restrict(bag).rename(assign)
        word.append(AlphabetSymbol(left, piece, right, fmap))
        prev_assign = assign
        prev_bag = bag
    return word


def decode(word: Iterable[AlphabetSymbol]) -> Tuple[ABox, tuple]:
    """Rebuild (abox, answer) from a word; requires chained interfaces."""
    word = list(word)
    concepts: set = set()
    roles: set = set()
    answer_slots: Dict[int, str] = {}
    counter = itertools.count()
    prev_ids: Dict[str, str] = {}
    prev_right: tuple = ()
    arity = 0
    for i, sym in enumerate(word):
        if i == 0:
            if sym.left:
                raise ValueError("first symbol must have an empty left interface")
        elif sym.left != prev_right:
            raise ValueError(f"interfaces do not chain at position {i}")
        ids = {}
        for n in sym.names:
            if n in sym.left:
                ids[n] = prev_ids[n]
            else:
                ids[n] = f"i{next(counter)}"
        concepts |= {(c, ids[a]) for c, a in sym.bag.concepts}
        roles |= {(r, ids[a], ids[b]) for r, a, b in sym.bag.roles}
        for j, n in sym.fmap:
            arity = max(arity, j + 1)
            if answer_slots.get(j, ids[n]) != ids[n]:
                raise ValueError(f"answer slot {j} marked inconsistently")
            answer_slots[j] = ids[n]
        prev_ids = ids
        prev_right = sym.right
    if word and word[-1].right:
        raise ValueError("last symbol must have an empty right interface")
    if set(answer_slots) != set(range(arity)):
        raise ValueError("answer tuple is incompletely marked")
    return ABox(concepts, roles), tuple(answer_slots[j] for j in range(arity))


# ---------------------------------------------------------------------------
# Positive Boolean formulas


class Formula:
    __slots__ = ()

    def eval(self, ctx):
        raise NotImplementedError


class FTrue(Formula):
    __slots__ = ()

    def eval(self, ctx):
        return ctx.const(True)


class FFalse(Formula):
    __slots__ = ()

    def eval(self, ctx):
        return ctx.const(False)


TRUE, FALSE = FTrue(), FFalse()


class FAtom(Formula):
    __slots__ = ("move", "state")

    def __init__(self, move, state):
        self.move = move
        self.state = state

    def eval(self, ctx):
        return ctx.atom(self.move, self.state)


class FAnd(Formula):
    __slots__ = ("parts",)

    def __init__(self, parts):
        self.parts = tuple(parts)

    def eval(self, ctx):
        return reduce(ctx.and_, (p.eval(ctx) for p in self.parts), ctx.const(True))


class FOr(Formula):
    __slots__ = ("parts",)

    def __init__(self, parts):
        self.parts = tuple(parts)

    def eval(self, ctx):
        return reduce(ctx.or_, (p.eval(ctx) for p in self.parts), ctx.const(False))


class FMonotone(Formula):
    """A monotone predicate over the truth values of stay-atoms.

    Stands for the disjunction over all supporting subsets; by monotonicity
    it suffices to apply the predicate to the set of currently true atoms.
    """

    __slots__ = ("atoms", "predicate", "_antichain")

    def __init__(self, atoms, predicate):
        self.atoms = tuple(atoms)  # of (move, state)
        self.predicate = predicate  # frozenset of atom indices -> bool
        self._antichain = None

    def antichain(self):
        """Minimal supporting atom sets, or None when the atom set is too
        large to tabulate."""
        n = len(self.atoms)
        if n > 14:
            return None
        if self._antichain is None:
            table = [
                self.predicate(frozenset(i for i in range(n) if s >> i & 1))
                for s in range(1 << n)
            ]
            chain = []
            for s in range(1 << n):
                if not table[s]:
                    continue
                if all(not table[s & ~(1 << i)] for i in range(n) if s >> i & 1):
                    chain.append(tuple(i for i in range(n) if s >> i & 1))
            self._antichain = tuple(chain)
        return self._antichain

    def eval(self, ctx):
        return ctx.monotone(self)


def make_or(parts) -> Formula:
    parts = [p for p in parts if not isinstance(p, FFalse)]
    if any(isinstance(p, FTrue) for p in parts):
        return TRUE
    if not parts:
        return FALSE
    if len(parts) == 1:
        return parts[0]
    return FOr(parts)


def make_and(parts) -> Formula:
    parts = [p for p in parts if not isinstance(p, FTrue)]
    if any(isinstance(p, FFalse) for p in parts):
        return FALSE
    if not parts:
        return TRUE
    if len(parts) == 1:
        return parts[0]
    return FAnd(parts)


# ---------------------------------------------------------------------------
# Automaton states


@dataclass(frozen=True)
class MainState:
    assigned: frozenset  # query variables already matched
    satisfied: frozenset  # binary atoms already witnessed
    carry: tuple  # sorted (variable, reserved name) pairs still in interface


@dataclass(frozen=True)
class CheckState:
    concept: str
    name: str


class TwoWayAFA:
    """Two-way alternating word automaton over bag symbols.

    The transition function is lazy: `delta(state, symbol_or_marker)`
    returns a positive Boolean formula over (move, state) pairs, where
    moves are "left" / "right" / "stay".
    """

    def __init__(self, omq: OMQ, k: int):
        self.omq = omq
        self.k = k
        self.nt = normalized(omq.tbox)
        self.eng = engine_for(self.nt)
        q = omq.query
        self.query = q
        self.answer_vars = q.answer_vars
        self.all_vars = frozenset(q.variables)
        self.all_atoms = frozenset(q.binary)
        self.concept_names = tuple(sorted(
            set(self.nt.concept_names) | set(omq.sigma.concepts) | set(q.concept_names)
        ))
        self.initial = MainState(frozenset(), frozenset(), ())
        self._delta_cache: Dict[tuple, Formula] = {}
        self._rel_cache: Dict[tuple, bool] = {}
        self._rel_targets: Dict[frozenset, ModelTarget] = {}
        self._derivable_cache: Dict[tuple, frozenset] = {}

    # -- type-level helpers

    def _rel_target(self, tp: frozenset) -> ModelTarget:
        target = self._rel_targets.get(tp)
        if target is None:
            closed = self.eng.clo(tp)
            seed = ABox({(c, "w") for c in closed} | {("_elem", "w")}, ())
            depth = len(self.all_vars) + len(self.eng.reachable_anon_types([closed]))
            target = ModelTarget(chase_to_depth(self.nt, seed, depth))
            self._rel_targets[tp] = target
        return target

    def reach_relation(self, tp: frozenset, v1: frozenset, v2: frozenset) -> bool:
        """Can q|v2 match into the canonical tree over `tp`, with exactly v1
        on the root?"""
        key = (tp, v1, v2)
        hit = self._rel_cache.get(key)
        if hit is not None:
            return hit
        out = False
        if v1 <= v2 and v2 & set(self.answer_vars) <= v1:
            sub = self.query.restrict(v2)
            sub = CQ((), sub.unary, sub.binary)
            target = self._rel_target(tp)
            anchor = {v: "w" for v in v1}
            for h in iter_homomorphisms(sub, target, anchor):
                if all(h[v] != "w" for v in v2 - v1):
                    out = True
                    break
            if not v2:
                out = True
        self._rel_cache[key] = out
        return out

    def _type_leaf(self, name: str, judge) -> FMonotone:
        """A monotone leaf over the derived concept names at one individual."""
        atoms = tuple((STAY, CheckState(c, name)) for c in self.concept_names)
        cache: Dict[frozenset, bool] = {}
        concepts = self.concept_names

        def predicate(true_idx: frozenset) -> bool:
            t = frozenset(concepts[i] for i in true_idx)
            hit = cache.get(t)
            if hit is None:
                hit = judge(t)
                cache[t] = hit
            return hit

        return FMonotone(atoms, predicate)

    # -- partial matches

    def _matches(self, state: MainState, sym: AlphabetSymbol):
        """Valid partial matches extending the carried assignment."""
        universe = list(sym.names)
        carry = dict(state.carry)
        fmap = dict(sym.fmap)
        answer_pos = {v: i for i, v in enumerate(self.answer_vars)}
        free = sorted(self.all_vars - state.assigned)
        options = [(None, None)]
        options += [(u, NAMED) for u in universe] + [(u, ANON) for u in universe]

        def var_options(v):
            if v in answer_pos:
                pos = answer_pos[v]
                if pos in fmap:
                    return [(None, None), (fmap[pos], NAMED)]
                return [(None, None)]
            return options

        for combo in itertools.product(*(var_options(v) for v in free)):
            h = {v: (carry[v], NAMED) for v in carry}
            ok = True
            for v, (u, tag) in zip(free, combo):
                if u is not None:
                    h[v] = (u, tag)
            for r, x, y in self.query.binary:
                if x in h and y in h:
                    (ux, tx), (uy, ty) = h[x], h[y]
                    if tx == NAMED and ty == NAMED:
                        if (r, ux, uy) not in sym.bag.roles:
                            ok = False
                            break
                    elif ux != uy:
                        ok = False
                        break
            if ok:
                yield h

    def _main_delta(self, state: MainState, sym: AlphabetSymbol) -> Formula:
        right_names = set(sym.right)
        branches = []
        for h in self._matches(state, sym):
            assigned = state.assigned | set(h)
            satisfied = state.satisfied | {
                (r, x, y) for r, x, y in self.query.binary if x in h and y in h
            }
            carry = tuple(sorted(
                (v, u) for v, (u, tag) in h.items() if tag == NAMED and u in right_names
            ))
            succ = MainState(frozenset(assigned), frozenset(satisfied), carry)
            parts: List[Formula] = [FAtom(RIGHT, succ)]
            for v, (u, tag) in sorted(h.items()):
                if tag == NAMED:
                    for c, x in sorted(self.query.unary):
                        if x == v:
                            parts.append(FAtom(STAY, CheckState(c, u)))
            for u in sorted({u for u, tag in h.values() if tag == ANON}):
                v1 = frozenset(v for v, (w, tag) in h.items() if w == u and tag == NAMED)
                v2 = frozenset(v for v, (w, _) in h.items() if w == u)
                judge = (lambda t, _v1=v1, _v2=v2:
                         self.reach_relation(t, _v1, _v2))
                parts.append(self._type_leaf(u, judge))
            branches.append(make_and(parts))
        return make_or(branches)

    def _check_delta(self, state: CheckState, sym: AlphabetSymbol) -> Formula:
        a = state.name
        if a not in sym.names:
            return FALSE
        if (state.concept, a) in sym.bag.concepts:
            return TRUE
        eng = self.eng
        concept = state.concept
        parts: List[Formula] = []
        if a in sym.left:
            parts.append(FAtom(LEFT, state))
        if a in sym.right:
            parts.append(FAtom(RIGHT, state))
        # one completion step across a bag edge
        for r, u, v in sorted(sym.bag.roles):
            if u == a:
                for x, y in eng.forward.get(r, ()):
                    if y == concept:
                        parts.append(FAtom(STAY, CheckState(x, v)))
            if v == a:
                for x, y in eng.backward.get(r, ()):
                    if y == concept:
                        parts.append(FAtom(STAY, CheckState(x, u)))
        # all purely local consequences (conjunctions, top rules, feedback
        # from anonymous successors) folded into one closure leaf
        parts.append(self._type_leaf(a, lambda t: concept in eng.clo(t)))
        return make_or(parts)

    def delta(self, state, symbol) -> Formula:
        key = (state, symbol)
        hit = self._delta_cache.get(key)
        if hit is not None:
            return hit
        if symbol in (LEND, REND):
            if symbol == REND and isinstance(state, MainState):
                out = TRUE if (
                    state.assigned == self.all_vars
                    and state.satisfied == self.all_atoms
                    and not state.carry
                ) else FALSE
            else:
                out = FALSE
        elif isinstance(state, MainState):
            out = self._main_delta(state, symbol)
        else:
            out = self._check_delta(state, symbol)
        self._delta_cache[key] = out
        return out

    def is_accepting_main(self, state) -> bool:
        return isinstance(state, MainState) and isinstance(self.delta(state, REND), FTrue)


# ---------------------------------------------------------------------------
# Direct acceptance: least fixpoint over configurations


class _ScalarCtx:
    __slots__ = ("lookup",)

    def __init__(self, lookup):
        self.lookup = lookup

    def const(self, v):
        return v

    @staticmethod
    def and_(a, b):
        return a and b

    @staticmethod
    def or_(a, b):
        return a or b

    def atom(self, move, state):
        return self.lookup(move, state)

    def monotone(self, f: FMonotone):
        true_idx = frozenset(
            i for i, (move, state) in enumerate(f.atoms) if self.lookup(move, state)
        )
        return f.predicate(true_idx)


def afa_accepts(afa: TwoWayAFA, word: Iterable[AlphabetSymbol]) -> bool:
    """Least-fixpoint evaluation of the acceptance game on one word."""
    word = list(word)
    n = len(word)

    def symbol_at(i):
        if i == 0:
            return LEND
        if i == n + 1:
            return REND
        return word[i - 1]

    val: Dict[tuple, bool] = {}
    formula: Dict[tuple, Formula] = {}
    deps: Dict[tuple, set] = {}
    pending: List[tuple] = []

    def discover(cfg):
        if cfg in val:
            return
        val[cfg] = False
        i, state = cfg
        f = afa.delta(state, symbol_at(i))
        formula[cfg] = f
        pending.append(cfg)

    def atoms_of(f: Formula):
        out = []
        stack = [f]
        while stack:
            g = stack.pop()
            if isinstance(g, FAtom):
                out.append((g.move, g.state))
            elif isinstance(g, (FAnd, FOr)):
                stack.extend(g.parts)
            elif isinstance(g, FMonotone):
                out.extend(g.atoms)
        return out

    root = (1, afa.initial)
    discover(root)
    work = []
    while pending or work:
        while pending:
            cfg = pending.pop()
            i, _ = cfg
            for move, state in atoms_of(formula[cfg]):
                j = i + (1 if move == RIGHT else -1 if move == LEFT else 0)
                if 0 <= j <= n + 1:
                    tgt = (j, state)
                    discover(tgt)
                    deps.setdefault(tgt, set()).add(cfg)
            work.append(cfg)
        cfg = work.pop()
        if val[cfg]:
            continue
        i, _ = cfg

        def lookup(move, state, _i=i):
            j = _i + (1 if move == RIGHT else -1 if move == LEFT else 0)
            return val.get((j, state), False)

        if formula[cfg].eval(_ScalarCtx(lookup)):
            val[cfg] = True
            for parent in deps.get(cfg, ()):
                if not val[parent]:
                    work.append(parent)
    return val[root]


# ---------------------------------------------------------------------------
# Determinization via boundary-behavior tables


def _table_bits_limit() -> int:
    return int(os.environ.get("OMQ_MAX_TABLE_BITS", "14"))


def _max_states_default() -> int:
    return int(os.environ.get("OMQ_MAX_STATES", "20000"))


class _MaskCtx:
    """Evaluates formulas over bitmask integers: bit p is the truth value at
    the p-th valuation of the outgoing interface."""

    __slots__ = ("points", "full", "stay", "right_vecs", "left_value")

    def __init__(self, points, stay, right_vecs, left_value):
        self.points = points
        self.full = (1 << points) - 1
        self.stay = stay  # dict CheckState -> int
        self.right_vecs = right_vecs  # dict CheckState -> int
        self.left_value = left_value  # callable CheckState -> int

    def const(self, v):
        return self.full if v else 0

    @staticmethod
    def and_(a, b):
        return a & b

    @staticmethod
    def or_(a, b):
        return a | b

    def atom(self, move, state):
        if move == STAY:
            return self.stay.get(state, 0)
        if move == RIGHT:
            return self.right_vecs.get(state, 0)
        return self.left_value(state)

    def monotone(self, f: FMonotone):
        chain = f.antichain()
        if chain is None:
            return self._fallback(f)
        out = 0
        for support in chain:
            mask = self.full
            for i in support:
                mask &= self.atom(*f.atoms[i])
                if not mask:
                    break
            out |= mask
            if out == self.full:
                break
        return out

    def _fallback(self, f: FMonotone):
        vals = [self.atom(*a) for a in f.atoms]
        out = 0
        cache = {}
        for p in range(self.points):
            sig = 0
            for i, v in enumerate(vals):
                if v >> p & 1:
                    sig |= 1 << i
            hit = cache.get(sig)
            if hit is None:
                hit = f.predicate(frozenset(i for i in range(len(f.atoms)) if sig >> i & 1))
                cache[sig] = hit
            if hit:
                out |= 1 << p
        return out


@lru_cache(maxsize=64)
def _interface_masks(points: int, n_bits: int) -> tuple:
    """For each interface bit i: the mask of valuations with bit i set."""
    out = []
    for i in range(n_bits):
        mask = 0
        for p in range(points):
            if p >> i & 1:
                mask |= 1 << p
        out.append(mask)
    return tuple(out)


@dataclass(frozen=True)
class _DfaState:
    iface: tuple  # carried names, ascending
    checks: tuple  # sorted (CheckState, mask over interface valuations)
    mains: tuple  # sorted (MainState, mask over interface valuations)
    done: int  # mask over interface valuations


def _state_key(s):
    if isinstance(s, CheckState):
        return (0, s.concept, s.name)
    return (1, sorted(s.assigned), sorted(s.satisfied), s.carry)


def _main_branches(afa: TwoWayAFA, state: MainState, symbol) -> list:
    """[(successor main or None, obligation formula)] for one transition."""
    f = afa.delta(state, symbol)

    def walk(g: Formula) -> list:
        if isinstance(g, FFalse):
            return []
        if isinstance(g, FTrue):
            return [(None, TRUE)]
        if isinstance(g, FAtom):
            if g.move == RIGHT and isinstance(g.state, MainState):
                return [(g.state, TRUE)]
            return [(None, g)]
        if isinstance(g, FMonotone):
            return [(None, g)]
        if isinstance(g, FOr):
            out = []
            for p in g.parts:
                out.extend(walk(p))
            return out
        if isinstance(g, FAnd):
            combos = [([], [])]
            for p in g.parts:
                sub = walk(p)
                combos = [
                    (succs + ([s] if s else []), obls + [o])
                    for succs, obls in combos
                    for s, o in sub
                ]
            out = []
            for succs, obls in combos:
                if len(succs) > 1:
                    raise StateBudgetExceeded(
                        "main transition spawns several main successors"
                    )
                out.append((succs[0] if succs else None, make_and(obls)))
            return out
        raise TypeError(g)

    return walk(f)


class BoundaryDFA:
    """Deterministic automaton equivalent to the 2AFA.

    A state summarizes the behavior of the consumed prefix as functions of
    the truth values that will hold for the carried individuals' derivation
    checks at the next position: which checks succeed when re-entering the
    prefix, which main states the one-way match thread can be in, and
    whether the thread already finished.  Language equality holds on every
    word whose consecutive interfaces chain (all proper encodings do)."""

    def __init__(self, afa: TwoWayAFA, max_states: Optional[int] = None):
        self.afa = afa
        self.max_states = max_states or _max_states_default()
        self.concepts = afa.concept_names
        init = _DfaState((), (), ((afa.initial, 1),), 0)
        self._states: Dict[_DfaState, int] = {init: 0}
        self._by_id: List[_DfaState] = [init]
        self._trans: Dict[tuple, int] = {}
        self._accept_cache: Dict[int, bool] = {}
        self._branch_cache: Dict[tuple, list] = {}
        self._base_cache: Dict[AlphabetSymbol, dict] = {}

    def _domain(self, iface: tuple) -> list:
        return [CheckState(c, n) for n in iface for c in self.concepts]

    def state_id(self, state: _DfaState) -> int:
        sid = self._states.get(state)
        if sid is None:
            sid = len(self._by_id)
            if sid >= self.max_states:
                raise StateBudgetExceeded(f"more than {self.max_states} DFA states")
            self._states[state] = sid
            self._by_id.append(state)
        return sid

    def state(self, sid: int) -> _DfaState:
        return self._by_id[sid]

    @property
    def initial(self) -> int:
        return 0

    def size(self) -> int:
        return len(self._by_id)

    def transition(self, sid: int, symbol: AlphabetSymbol) -> int:
        key = (sid, symbol)
        hit = self._trans.get(key)
        if hit is not None:
            return hit
        data = self.state(sid)
        afa = self.afa
        universe = symbol.names
        chg = [CheckState(c, u) for u in universe for c in self.concepts]
        dom_in = self._domain(data.iface)
        dom_out = self._domain(tuple(symbol.right))
        bits_out = len(dom_out)
        if bits_out > _table_bits_limit():
            raise StateBudgetExceeded(
                f"interface table needs 2^{bits_out} entries; raise OMQ_MAX_TABLE_BITS"
            )
        points = 1 << bits_out
        full = (1 << points) - 1
        right_vecs = dict(zip(dom_out, _interface_masks(points, bits_out)))
        check_in = dict(data.checks)
        has_left = bool(dom_in) and any(check_in.values())

        stay: Dict[CheckState, int] = {s: 0 for s in chg}
        idx_vec: List[int] = [0] * points
        last_refresh = [None, 0]

        def refresh_idx():
            masks = tuple(stay.get(s, 0) for s in dom_in)
            if masks == last_refresh[0]:
                return
            last_refresh[0] = masks
            last_refresh[1] += 1
            if not any(masks):
                for p in range(points):
                    idx_vec[p] = 0
                return
            blobs = [m.to_bytes((points + 7) // 8, "little") for m in masks]
            for p in range(points):
                idx = 0
                byte, off = p >> 3, p & 7
                for i, blob in enumerate(blobs):
                    if blob[byte] >> off & 1:
                        idx |= 1 << i
                idx_vec[p] = idx

        left_cache: Dict[tuple, int] = {}

        def left_value(s: CheckState) -> int:
            mask_table = check_in.get(s)
            if not mask_table:
                return 0
            key = (s, last_refresh[1])
            hit = left_cache.get(key)
            if hit is not None:
                return hit
            if last_refresh[0] is None or not any(last_refresh[0]):
                out = full if mask_table & 1 else 0
            else:
                out = 0
                for p in range(points):
                    if mask_table >> idx_vec[p] & 1:
                        out |= 1 << p
            left_cache[key] = out
            return out

        ctx = _MaskCtx(points, stay, right_vecs, left_value)

        base = self._base_cache.get(symbol)
        if base is None:
            # state-independent pass: ignore re-entries into the prefix
            zero_ctx = _MaskCtx(points, stay, right_vecs, lambda s: 0)
            changed = True
            while changed:
                changed = False
                for s in chg:
                    cur = stay[s]
                    if cur == full:
                        continue
                    new = cur | afa.delta(s, symbol).eval(zero_ctx)
                    if new != cur:
                        stay[s] = new
                        changed = True
            base = dict(stay)
            self._base_cache[symbol] = base
        else:
            stay.update(base)

        changed = has_left
        while changed:
            changed = False
            refresh_idx()
            for s in chg:
                cur = stay[s]
                if cur == full:
                    continue
                new = cur | afa.delta(s, symbol).eval(ctx)
                if new != cur:
                    stay[s] = new
                    changed = True
        if dom_in:
            refresh_idx()

        checks_out = tuple(
            (s, stay[s]) for s in sorted(dom_out, key=_state_key) if stay[s]
        )

        # advance the one-way match thread
        def through_boundary(table: int) -> int:
            if not table:
                return 0
            if not dom_in or not any(last_refresh[0] or ()):
                return full if table & 1 else 0
            mask = 0
            for p in range(points):
                if table >> idx_vec[p] & 1:
                    mask |= 1 << p
            return mask

        active: Dict[MainState, int] = {}
        for m, table in data.mains:
            mask = through_boundary(table)
            if mask:
                active[m] = mask
        done = through_boundary(data.done)
        new_mains: Dict[MainState, int] = {}
        for m, mask in active.items():
            bkey = (m, symbol)
            branches = self._branch_cache.get(bkey)
            if branches is None:
                branches = _main_branches(afa, m, symbol)
                self._branch_cache[bkey] = branches
            for succ, obligation in branches:
                ob = obligation.eval(ctx) & mask
                if not ob:
                    continue
                if succ is None:
                    done |= ob
                else:
                    new_mains[succ] = new_mains.get(succ, 0) | ob

        new_state = _DfaState(
            tuple(symbol.right),
            checks_out,
            tuple(sorted(new_mains.items(), key=lambda kv: _state_key(kv[0]))),
            done,
        )
        nid = self.state_id(new_state)
        self._trans[key] = nid
        return nid

    def is_accepting(self, sid: int) -> bool:
        hit = self._accept_cache.get(sid)
        if hit is not None:
            return hit
        data = self.state(sid)
        afa = self.afa
        dom = self._domain(data.iface)
        check_in = dict(data.checks)
        val = {s: False for s in dom}

        def lookup(move, state):
            if move == STAY:
                return val.get(state, False)
            if move == LEFT:
                idx = 0
                for i, s in enumerate(dom):
                    if val[s]:
                        idx |= 1 << i
                table = check_in.get(state, 0)
                return bool(table >> idx & 1)
            return False

        ctx = _ScalarCtx(lookup)
        changed = True
        while changed:
            changed = False
            for s in dom:
                if not val[s] and afa.delta(s, REND).eval(ctx):
                    val[s] = True
                    changed = True
        idx = 0
        for i, s in enumerate(dom):
            if val[s]:
                idx |= 1 << i
        out = bool(data.done >> idx & 1)
        if not out:
            for m, table in data.mains:
                if table >> idx & 1 and afa.is_accepting_main(m):
                    out = True
                    break
        self._accept_cache[sid] = out
        return out

    def accepts(self, word: Iterable[AlphabetSymbol]) -> bool:
        sid = self.initial
        for symbol in word:
            sid = self.transition(sid, symbol)
        return self.is_accepting(sid)


@dataclass(frozen=True)
class DFA:
    """Explicit automaton over a materialized alphabet.

    Transitions exist only where the symbol's incoming interface chains with
    the state's outgoing interface; other pairs fall to the implicit trap.
    """

    alphabet: tuple
    initial: int
    accepting: frozenset
    transitions: tuple  # of ((symbol index, target state), ...) per state
    ifaces: tuple  # interface tuple per state

    def accepts(self, word) -> bool:
        index = {s: i for i, s in enumerate(self.alphabet)}
        trans = [dict(row) for row in self.transitions]
        sid = self.initial
        for symbol in word:
            nxt = trans[sid].get(index.get(symbol, -1))
            if nxt is None:
                return False
            sid = nxt
        return sid in self.accepting

    def size(self) -> int:
        return len(self.transitions)


def determinize(afa: TwoWayAFA, alphabet: Iterable[AlphabetSymbol],
                max_states: Optional[int] = None, minimize: bool = True) -> DFA:
    """An explicit DFA over `alphabet` with the language of the 2AFA on all
    interface-chaining words (every proper encoding is one)."""
    lazy = BoundaryDFA(afa, max_states)
    alphabet = tuple(alphabet)
    frontier = [lazy.initial]
    seen = {lazy.initial}
    table: Dict[int, list] = {}
    while frontier:
        sid = frontier.pop()
        iface = lazy.state(sid).iface
        row = []
        for j, symbol in enumerate(alphabet):
            if tuple(symbol.left) != iface:
                continue
            nid = lazy.transition(sid, symbol)
            row.append((j, nid))
            if nid not in seen:
                seen.add(nid)
                frontier.append(nid)
        table[sid] = row
    ids = sorted(seen)
    remap = {sid: i for i, sid in enumerate(ids)}
    transitions = tuple(
        tuple((j, remap[t]) for j, t in table[sid]) for sid in ids
    )
    accepting = frozenset(remap[sid] for sid in ids if lazy.is_accepting(sid))
    ifaces = tuple(lazy.state(sid).iface for sid in ids)
    dfa = DFA(alphabet, remap[lazy.initial], accepting, transitions, ifaces)
    return minimize_dfa(dfa) if minimize else dfa


def minimize_dfa(dfa: DFA) -> DFA:
    """Moore partition refinement over the partial transition table."""
    n = dfa.size()
    trap = n  # implicit dead state
    rows = [dict(row) for row in dfa.transitions]
    signature = {s: (s in dfa.accepting, dfa.ifaces[s]) for s in range(n)}
    labels = sorted(set(signature.values()))
    block = {s: labels.index(signature[s]) for s in range(n)}
    block[trap] = -1
    n_symbols = len(dfa.alphabet)
    while True:
        keys = {}
        for s in range(n):
            keys[s] = (
                block[s],
                tuple(block[rows[s].get(j, trap)] for j in range(n_symbols)),
            )
        new_labels = sorted(set(keys.values()))
        new_block = {s: new_labels.index(keys[s]) for s in range(n)}
        new_block[trap] = -1
        if new_block == block:
            break
        block = new_block
    count = len({b for s, b in block.items() if s != trap})
    reps: Dict[int, int] = {}
    for s in range(n):
        reps.setdefault(block[s], s)
    transitions = []
    ifaces = []
    for b in range(count):
        s = reps[b]
        transitions.append(tuple(sorted((j, block[t]) for j, t in rows[s].items())))
        ifaces.append(dfa.ifaces[s])
    accepting = frozenset(block[s] for s in dfa.accepting)
    return DFA(dfa.alphabet, block[dfa.initial], accepting,
               tuple(transitions), tuple(ifaces))


# ---------------------------------------------------------------------------
# DFA -> linear Datalog


def _bag_var(name: str) -> str:
    return name.upper()


def dfa_to_program(dfa: DFA, omq: OMQ, k: int) -> DatalogProgram:
    """One rule per DFA transition: the state relations carry the answer
    tuple plus the interface individuals of the current boundary."""
    ar = omq.arity
    answer_vars = tuple(f"X{i + 1}" for i in range(ar))

    # keep only states that can still reach an accepting state
    n = dfa.size()
    reach_accept = set(dfa.accepting)
    changed = True
    while changed:
        changed = False
        for s in range(n):
            if s in reach_accept:
                continue
            if any(t in reach_accept for _, t in dfa.transitions[s]):
                reach_accept.add(s)
                changed = True

    def rel(sid: int) -> str:
        return f"s{sid}"

    def state_atom(sid: int, interface: tuple) -> tuple:
        return (rel(sid), answer_vars + tuple(_bag_var(x) for x in interface))

    rules = []
    if dfa.initial in reach_accept:
        if ar:
            body = tuple(("top", (v,)) for v in answer_vars)
        else:
            body = (("top", ("Z0",)),)
        rules.append(Rule((rel(dfa.initial), answer_vars), body))

    for sid in range(n):
        if sid not in reach_accept:
            continue
        for j, tid in dfa.transitions[sid]:
            symbol = dfa.alphabet[j]
            if tid not in reach_accept:
                continue
            fmap = dict(symbol.fmap)
            xs = tuple(
                _bag_var(fmap[i]) if i in fmap else answer_vars[i] for i in range(ar)
            )
            head = (rel(tid), xs + tuple(_bag_var(x) for x in symbol.right))
            body = [(rel(sid), xs + tuple(_bag_var(x) for x in symbol.left))]
            for c, a in sorted(symbol.bag.concepts):
                body.append((c, (_bag_var(a),)))
            for r, a, b in sorted(symbol.bag.roles):
                body.append((r, (_bag_var(a), _bag_var(b))))
            covered = {t for _, args in body for t in args}
            for x in head[1]:
                if x not in covered:
                    body.append(("top", (x,)))
                    covered.add(x)
            rules.append(Rule(head, tuple(body)))

    for sid in sorted(dfa.accepting):
        iface_vars = tuple(_bag_var(x) for x in dfa.ifaces[sid])
        rules.append(Rule(("goal", answer_vars),
                          ((rel(sid), answer_vars + iface_vars),)))
    return DatalogProgram(rules)


# ---------------------------------------------------------------------------
# Corpus generation and the pipeline


def random_low_pathwidth_abox(sigma, k: int, rng, max_individuals: int = 10,
                              density: float = 0.55):
    """A random ABox built along a random bag sequence, so its pathwidth is
    at most k by construction.  Returns (abox, decomposition)."""
    concepts = sorted(sigma.concepts)
    roles = sorted(sigma.roles)
    n = rng.randint(1, max_individuals)
    names = [f"a{i}" for i in range(n)]
    bags = []
    current = names[: rng.randint(1, min(k + 1, n))]
    bags.append(list(current))
    nxt = len(current)
    while nxt < n:
        carry_n = rng.randint(0, min(k, len(current)))
        carried = sorted(rng.sample(current, carry_n))
        fresh_n = rng.randint(1, min(k + 1 - carry_n, n - nxt))
        fresh = names[nxt: nxt + fresh_n]
        nxt += fresh_n
        current = carried + fresh
        bags.append(list(current))
    concept_asserts = set()
    role_asserts = set()
    for bag in bags:
        for a in bag:
            for c in concepts:
                if rng.random() < density / 2:
                    concept_asserts.add((c, a))
        for a in bag:
            for b in bag:
                for r in roles:
                    if rng.random() < density / (2 * max(1, len(bag))):
                        role_asserts.add((r, a, b))
    # every individual must occur in some assertion
    for bag in bags:
        for a in bag:
            if not any(x == a for _, x in concept_asserts) and not any(
                a in (x, y) for _, x, y in role_asserts
            ):
                if concepts:
                    concept_asserts.add((concepts[0], a))
                else:
                    role_asserts.add((roles[0], a, a))
    abox = ABox(concept_asserts, role_asserts)
    return abox, PathDecomposition(bags)


@dataclass
class PipelineResult:
    program: DatalogProgram
    dfa: DFA
    afa: TwoWayAFA
    alphabet: tuple
    report: dict


def symbols_for(abox: ABox, pd: PathDecomposition, answers: Iterable[tuple]) -> set:
    out = set()
    for answer in answers:
        out.update(encode(abox, tuple(answer), pd))
    return out


def rewrite_pipeline(omq: OMQ, k: int, corpus: Optional[list] = None,
                     seed: int = 0, corpus_size: int = 40,
                     max_states: Optional[int] = None) -> PipelineResult:
    """encode-alphabet -> 2AFA -> DFA -> linear Datalog.

    `corpus` is a list of (abox, decomposition) pairs used to materialize
    the alphabet; when omitted, a seeded random corpus of pathwidth <= k is
    generated.  The program is a correct rewriting restricted to ABoxes of
    pathwidth <= k whose bag symbols were materialized; when the OMQ itself
    has pathwidth <= k this makes it a rewriting on every materialized
    input, otherwise inputs of higher pathwidth can be rejected.
    """
    import random as _random

    if corpus is None:
        rng = _random.Random(seed)
        corpus = [
            random_low_pathwidth_abox(omq.sigma, k, rng)
            for _ in range(corpus_size)
        ]
    alphabet = set()
    for abox, pd in corpus:
        inds = sorted(abox.individuals)
        answers = itertools.product(inds, repeat=omq.arity)
        alphabet |= symbols_for(abox, pd, answers)
    alphabet = tuple(sorted(alphabet, key=lambda s: json.dumps(s.to_json(), sort_keys=True)))
    afa = TwoWayAFA(omq, k)
    dfa = determinize(afa, alphabet, max_states)
    program = dfa_to_program(dfa, omq, k)
    report = {
        "pathwidth_cap": k,
        "alphabet_size": len(alphabet),
        "dfa_states": dfa.size(),
        "rules": len(program.rules),
        "caveat": (
            "sound on every signature ABox; complete only for inputs of "
            f"pathwidth <= {k} whose bag symbols were materialized from the corpus"
        ),
    }
    return PipelineResult(program, dfa, afa, alphabet, report)


def verify_rewriting(result: PipelineResult, omq: OMQ, corpus: list) -> list:
    """Compare program answers with chase answers; returns mismatches."""
    from .datalog import evaluate_program
    from .evaluation import evaluate

    mismatches = []
    for abox, _pd in corpus:
        want = evaluate(omq, abox)
        got = evaluate_program(result.program, abox).goal_facts
        if want != got:
            mismatches.append((abox, want, got))
    return mismatches
