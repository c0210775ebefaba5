"""Datalog IR, evaluation with derivation extraction, and the product program.

Terms whose first character is an upper-case letter are variables; all other
terms are constants.  EDB relations are the unary/binary symbols of the data;
`top(X)` is allowed as a body atom that holds for every individual.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional

from .errors import IDBInInput, NotLinear
from .syntax import ABox

TOP_REL = "top"


def is_variable(term: str) -> bool:
    return term[:1].isupper()


@dataclass(frozen=True)
class Rule:
    head: tuple  # (relation, args)
    body: tuple  # of (relation, args)

    def __init__(self, head, body):
        head = (head[0], tuple(head[1]))
        body = tuple((rel, tuple(args)) for rel, args in body)
        if not body:
            raise ValueError("empty rule body")
        head_vars = {t for t in head[1] if is_variable(t)}
        body_vars = {t for _, args in body for t in args if is_variable(t)}
        if not head_vars <= body_vars:
            raise ValueError(f"head variables {head_vars - body_vars} missing from body")
        object.__setattr__(self, "head", head)
        object.__setattr__(self, "body", body)

    def variables(self) -> frozenset:
        out = {t for t in self.head[1] if is_variable(t)}
        for _, args in self.body:
            out |= {t for t in args if is_variable(t)}
        return frozenset(out)


@dataclass(frozen=True)
class DatalogProgram:
    rules: tuple
    goal: str = "goal"

    def __init__(self, rules: Iterable[Rule], goal: str = "goal"):
        rules = tuple(rules)
        object.__setattr__(self, "rules", rules)
        object.__setattr__(self, "goal", goal)
        for rule in rules:
            for rel, _ in rule.body:
                if rel == goal:
                    raise ValueError("goal relation must not occur in rule bodies")

    @cached_property
    def idb(self) -> frozenset:
        return frozenset(rule.head[0] for rule in self.rules)

    @cached_property
    def edb(self) -> frozenset:
        out = set()
        for rule in self.rules:
            for rel, _ in rule.body:
                if rel not in self.idb and rel != TOP_REL:
                    out.add(rel)
        return frozenset(out)

    @cached_property
    def arity(self) -> int:
        arities = {len(rule.head[1]) for rule in self.rules if rule.head[0] == self.goal}
        if len(arities) > 1:
            raise ValueError("goal relation used with several arities")
        return arities.pop() if arities else 0

    def is_linear(self) -> bool:
        for rule in self.rules:
            if sum(1 for rel, _ in rule.body if rel in self.idb) > 1:
                return False
        return True


@dataclass(frozen=True)
class Metrics:
    linear: bool
    width: int
    diameter: int
    arity: int


def metrics(program: DatalogProgram) -> Metrics:
    width = 0
    diameter = 0
    for rule in program.rules:
        diameter = max(diameter, len(rule.variables()))
        if rule.head[0] != program.goal:
            width = max(width, len(rule.head[1]))
    return Metrics(program.is_linear(), width, diameter, program.arity)


# ---------------------------------------------------------------------------
# Evaluation


class EvaluationResult:
    """Derived facts plus enough provenance to rebuild derivations."""

    def __init__(self, program: DatalogProgram, abox: ABox, facts, prov):
        self._program = program
        self._abox = abox
        self._facts = facts
        self._prov = prov

    def facts(self, relation: str):
        return self._facts.get(relation, set())

    @property
    def goal_facts(self):
        return self.facts(self._program.goal)

    def holds(self, relation: str, args: tuple) -> bool:
        return tuple(args) in self._facts.get(relation, set())

    def derivation_of(self, args: tuple) -> Optional["Derivation"]:
        args = tuple(args)
        if args not in self.goal_facts:
            return None
        return self._build((self._program.goal, args))

    def _build(self, fact) -> "Derivation":
        rel, args = fact
        if rel not in self._program.idb:
            return Derivation(fact, None, None, ())
        rule_idx, subst = self._prov[fact]
        rule = self._program.rules[rule_idx]
        children = []
        for brel, bargs in rule.body:
            inst = tuple(subst.get(t, t) for t in bargs)
            if brel == TOP_REL:
                children.append(Derivation(_top_witness(self._abox, inst[0]), None, None, ()))
            elif brel in self._program.idb:
                children.append(self._build((brel, inst)))
            else:
                children.append(Derivation((brel, inst), None, None, ()))
        return Derivation(fact, rule_idx, tuple(sorted(subst.items())), tuple(children))


def _top_witness(abox: ABox, ind: str):
    """A concrete assertion mentioning `ind`, standing in for top(ind)."""
    for c, a in sorted(abox.concepts):
        if a == ind:
            return (c, (a,))
    for r, a, b in sorted(abox.roles):
        if ind in (a, b):
            return (r, (a, b))
    raise ValueError(f"individual {ind} not in ABox")


def _abox_facts(abox: ABox):
    facts: dict[str, set] = {}
    for c, a in abox.concepts:
        facts.setdefault(c, set()).add((a,))
    for r, a, b in abox.roles:
        facts.setdefault(r, set()).add((a, b))
    return facts


def evaluate_program(program: DatalogProgram, abox: ABox) -> EvaluationResult:
    """Least-fixpoint evaluation (semi-naive over IDB deltas) with provenance."""
    for rel in program.idb:
        if any(c == rel for c, _ in abox.concepts) or any(r == rel for r, _, _ in abox.roles):
            raise IDBInInput(f"input ABox uses IDB relation {rel!r}")
    edb_facts = _abox_facts(abox)
    domain = sorted(abox.individuals)
    edb_facts[TOP_REL] = {(a,) for a in domain}

    idb_facts: dict[str, set] = {}
    prov: dict[tuple, tuple] = {}

    def match(rule_idx, rule, delta_pos, delta):
        """Enumerate substitutions; atom at delta_pos must match delta facts."""
        new = []

        def rec(i, subst):
            if i == len(rule.body):
                head_args = tuple(subst[t] if is_variable(t) else t for t in rule.head[1])
                fact = (rule.head[0], head_args)
                if head_args not in idb_facts.get(rule.head[0], set()) and fact not in prov:
                    new.append((fact, dict(subst)))
                    prov[fact] = (rule_idx, dict(subst))
                return
            rel, args = rule.body[i]
            if i == delta_pos:
                pool = delta
            elif rel in program.idb:
                pool = idb_facts.get(rel, set())
            else:
                pool = edb_facts.get(rel, set())
            for tup in pool:
                if len(tup) != len(args):
                    continue
                local = {}
                ok = True
                for t, v in zip(args, tup):
                    if is_variable(t):
                        bound = subst.get(t, local.get(t))
                        if bound is None:
                            local[t] = v
                        elif bound != v:
                            ok = False
                            break
                    elif t != v:
                        ok = False
                        break
                if ok:
                    subst.update(local)
                    rec(i + 1, subst)
                    for t in local:
                        del subst[t]

        rec(0, {})
        return new

    # Round 0: rules whose bodies use no IDB relation.
    delta: dict[str, set] = {}
    for idx, rule in enumerate(program.rules):
        if any(rel in program.idb for rel, _ in rule.body):
            continue
        for fact, _ in match(idx, rule, -1, set()):
            rel, args = fact
            idb_facts.setdefault(rel, set()).add(args)
            delta.setdefault(rel, set()).add(args)

    while delta:
        new_delta: dict[str, set] = {}
        for idx, rule in enumerate(program.rules):
            idb_positions = [i for i, (rel, _) in enumerate(rule.body) if rel in program.idb]
            for pos in idb_positions:
                rel = rule.body[pos][0]
                if rel not in delta:
                    continue
                for fact, _ in match(idx, rule, pos, delta[rel]):
                    frel, fargs = fact
                    idb_facts.setdefault(frel, set()).add(fargs)
                    new_delta.setdefault(frel, set()).add(fargs)
        delta = new_delta

    return EvaluationResult(program, abox, idb_facts, prov)


# ---------------------------------------------------------------------------
# Derivations


@dataclass(frozen=True)
class Derivation:
    fact: tuple  # (relation, args)
    rule_index: Optional[int]
    subst: Optional[tuple]
    children: tuple

    def is_leaf(self) -> bool:
        return not self.children

    def to_text(self, indent: str = "") -> str:
        rel, args = self.fact
        line = f"{indent}{rel}({','.join(args)})"
        out = [line]
        for child in self.children:
            out.append(child.to_text(indent + "  "))
        return "\n".join(out)


def validate_derivation(program: DatalogProgram, abox: ABox, deriv: Derivation,
                        expect_args: Optional[tuple] = None) -> bool:
    """Check the three structural conditions of a derivation."""
    facts = _abox_facts(abox)
    if deriv.fact[0] != program.goal:
        return False
    if expect_args is not None and deriv.fact[1] != tuple(expect_args):
        return False

    def node_ok(node: Derivation) -> bool:
        rel, args = node.fact
        if node.is_leaf():
            return args in facts.get(rel, set())
        if node.rule_index is None:
            return False
        rule = program.rules[node.rule_index]
        subst = dict(node.subst or ())
        head_args = tuple(subst.get(t, t) for t in rule.head[1])
        if (rule.head[0], head_args) != node.fact:
            return False
        expected = []
        for brel, bargs in rule.body:
            inst = tuple(subst.get(t, t) for t in bargs)
            expected.append((brel, inst))
        got = [child.fact for child in node.children]
        if len(got) != len(expected):
            return False
        for (brel, inst), child_fact in zip(expected, got):
            if brel == TOP_REL:
                # sugar: the child stands in for top(x); it must mention x
                if inst[0] not in child_fact[1]:
                    return False
            elif child_fact != (brel, inst):
                return False
        return all(node_ok(child) for child in node.children)

    return node_ok(deriv)


def abox_of_derivation(deriv: Derivation):
    """The ABox induced by a derivation, with its homomorphism to the source.

    Returns (abox, hom) where hom maps the fresh copies back to the original
    individuals and is the identity on the goal tuple.
    """
    counter = [0]

    def fresh(orig: str) -> str:
        counter[0] += 1
        return f"_d{counter[0]}_{orig}"

    def build(node: Derivation):
        if node.is_leaf():
            rel, args = node.fact
            if len(args) == 1:
                return ABox([(rel, args[0])], []), {args[0]: args[0]}
            return ABox([], [(rel, args[0], args[1])]), {args[0]: args[0], args[1]: args[1]}
        keep = set(node.fact[1])
        concepts: set = set()
        roles: set = set()
        hom: dict[str, str] = {a: a for a in keep}
        for child in node.children:
            sub_abox, sub_hom = build(child)
            if child.is_leaf():
                concepts |= sub_abox.concepts
                roles |= sub_abox.roles
                hom.update(sub_hom)
                continue
            renaming = {}
            for ind in sorted(sub_abox.individuals):
                if sub_hom[ind] in keep and ind == sub_hom[ind]:
                    renaming[ind] = ind
                else:
                    renaming[ind] = fresh(sub_hom[ind])
            renamed = sub_abox.rename(renaming)
            concepts |= renamed.concepts
            roles |= renamed.roles
            for ind, new in renaming.items():
                hom[new] = sub_hom[ind]
        return ABox(concepts, roles), hom

    return build(deriv)


# ---------------------------------------------------------------------------
# Product of linear programs


def _rename_rule_vars(rule: Rule, prefix: str) -> Rule:
    ren = {v: f"{prefix}{v}" for v in rule.variables()}
    f = lambda t: ren.get(t, t)
    return Rule(
        (rule.head[0], tuple(f(t) for t in rule.head[1])),
        tuple((rel, tuple(f(t) for t in args)) for rel, args in rule.body),
    )


def _pair(r1: str, r2: str) -> str:
    return f"p__{r1}__{r2}"


def _binary_product(p1: DatalogProgram, p2: DatalogProgram) -> DatalogProgram:
    for p in (p1, p2):
        if not p.is_linear():
            raise NotLinear("product requires linear programs")
    rules1 = [_rename_rule_vars(r, "L") for r in p1.rules]
    rules2 = [_rename_rule_vars(r, "R") for r in p2.rules]
    idb1, idb2 = p1.idb, p2.idb
    arity1 = {}
    for r in p1.rules:
        arity1[r.head[0]] = len(r.head[1])
    arity2 = {}
    for r in p2.rules:
        arity2[r.head[0]] = len(r.head[1])

    def split(rules, idb):
        init, step = [], []
        for r in rules:
            idb_atoms = [i for i, (rel, _) in enumerate(r.body) if rel in idb]
            (init if not idb_atoms else step).append((r, idb_atoms[0] if idb_atoms else None))
        return init, step

    init1, step1 = split(rules1, idb1)
    init2, step2 = split(rules2, idb2)

    out = []
    # Both components start together.
    for r1, _ in init1:
        for r2, _ in init2:
            out.append(Rule(
                (_pair(r1.head[0], r2.head[0]), r1.head[1] + r2.head[1]),
                r1.body + r2.body,
            ))
    # One side steps; the other side's state is carried through.
    for r1, pos in step1:
        brel, bargs = r1.body[pos]
        rest = tuple(a for i, a in enumerate(r1.body) if i != pos)
        for s2 in sorted(idb2):
            carry = tuple(f"C{i}" for i in range(arity2[s2]))
            out.append(Rule(
                (_pair(r1.head[0], s2), r1.head[1] + carry),
                ((_pair(brel, s2), bargs + carry),) + rest,
            ))
    for r2, pos in step2:
        brel, bargs = r2.body[pos]
        rest = tuple(a for i, a in enumerate(r2.body) if i != pos)
        for s1 in sorted(idb1):
            carry = tuple(f"C{i}" for i in range(arity1[s1]))
            out.append(Rule(
                (_pair(s1, r2.head[0]), carry + r2.head[1]),
                ((_pair(s1, brel), carry + bargs),) + rest,
            ))
    # Couple the goals.
    xs = tuple(f"X{i}" for i in range(p1.arity + p2.arity))
    out.append(Rule(("goal", xs), ((_pair(p1.goal, p2.goal), xs),)))
    return DatalogProgram(out)


def product(programs: Iterable[DatalogProgram]) -> DatalogProgram:
    """A linear program answering the conjunction of the inputs.

    The output's goal arity is the sum of the inputs' arities, and
    goal(a1..an) holds iff every component i answers its slice ai.
    """
    programs = list(programs)
    if not programs:
        raise ValueError("product of no programs")
    if len(programs) == 1:
        if not programs[0].is_linear():
            raise NotLinear("product requires linear programs")
        return programs[0]
    acc = programs[0]
    for p in programs[1:]:
        acc = _binary_product(acc, p)
    return acc
