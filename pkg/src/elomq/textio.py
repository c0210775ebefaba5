"""Line-oriented text formats for TBoxes, ABoxes, CQs, OMQs and Datalog.

The grammar is UTF-8 with '#' comments:

    CONCEPT ::= "top" | NAME | CONCEPT "&" CONCEPT | "ex" ROLE "." CONCEPT
                | "(" CONCEPT ")"
    ROLE    ::= NAME | NAME "-"

'&' is left-associative and "ex" binds the tightest suffix, so
"ex r.A & B" reads as "(ex r.A) & B".  Printing produces the canonical
form: parse . print is the identity on objects.
"""

from __future__ import annotations

import re
from typing import Iterable

from .datalog import DatalogProgram, Rule
from .errors import DialectError, OmqSyntaxError
from .syntax import (
    ABox,
    And,
    Atom,
    CI,
    CQ,
    Concept,
    Exists,
    OMQ,
    Role,
    Signature,
    TBox,
    TOP,
    Top,
    conj,
)

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class _Tokens:
    def __init__(self, text: str, line: int):
        self.line = line
        self.items = []  # (kind, value, column)
        i = 0
        n = len(text)
        while i < n:
            ch = text[i]
            if ch in " \t":
                i += 1
                continue
            col = i + 1
            if text.startswith("<=", i):
                self.items.append(("<=", "<=", col))
                i += 2
                continue
            if ch in "&.()-=,":
                self.items.append((ch, ch, col))
                i += 1
                continue
            m = _NAME_RE.match(text, i)
            if m:
                word = m.group(0)
                kind = "name"
                if word == "top":
                    kind = "top"
                elif word == "ex":
                    kind = "ex"
                self.items.append((kind, word, col))
                i = m.end()
                continue
            raise OmqSyntaxError(f"unexpected character {ch!r}", line, col, "token")
        self.pos = 0

    def peek(self):
        return self.items[self.pos] if self.pos < len(self.items) else ("eof", "", -1)

    def next(self, kind=None):
        tok = self.peek()
        if kind is not None and tok[0] != kind:
            raise OmqSyntaxError(
                f"expected {kind}, found {tok[1]!r}", self.line, tok[2], kind
            )
        self.pos += 1
        return tok

    def done(self):
        return self.pos >= len(self.items)


def _parse_role(toks: _Tokens) -> Role:
    name = toks.next("name")[1]
    if toks.peek()[0] == "-":
        toks.next()
        return Role(name, True)
    return Role(name)


def _parse_unit(toks: _Tokens) -> Concept:
    kind, value, col = toks.peek()
    if kind == "top":
        toks.next()
        return TOP
    if kind == "name":
        toks.next()
        return Atom(value)
    if kind == "ex":
        toks.next()
        role = _parse_role(toks)
        toks.next(".")
        return Exists(role, _parse_unit(toks))
    if kind == "(":
        toks.next()
        c = _parse_concept(toks)
        toks.next(")")
        return c
    raise OmqSyntaxError(f"expected a concept, found {value!r}", toks.line, col, "concept")


def _parse_concept(toks: _Tokens) -> Concept:
    parts = [_parse_unit(toks)]
    while toks.peek()[0] == "&":
        toks.next()
        parts.append(_parse_unit(toks))
    return conj(*parts)


def parse_concept(text: str, line: int = 1) -> Concept:
    toks = _Tokens(text, line)
    c = _parse_concept(toks)
    if not toks.done():
        tok = toks.peek()
        raise OmqSyntaxError(f"trailing input {tok[1]!r}", line, tok[2], "end of line")
    return c


def print_role(role: Role) -> str:
    return role.name + ("-" if role.inverted else "")


def print_concept(c: Concept) -> str:
    if isinstance(c, Top):
        return "top"
    if isinstance(c, Atom):
        return c.name
    if isinstance(c, Exists):
        arg = print_concept(c.arg)
        if isinstance(c.arg, And):
            arg = f"({arg})"
        return f"ex {print_role(c.role)}.{arg}"
    return " & ".join(print_concept(a) for a in c.args)


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


# ---------------------------------------------------------------------------
# TBox


def parse_tbox(text: str, dialect: str | None = None) -> TBox:
    cis = []
    for lineno, line in _content_lines(text):
        toks = _Tokens(line, lineno)
        lhs = _parse_concept(toks)
        toks.next("<=")
        rhs = _parse_concept(toks)
        if not toks.done():
            tok = toks.peek()
            raise OmqSyntaxError(f"trailing input {tok[1]!r}", lineno, tok[2], "end of line")
        cis.append(CI(lhs, rhs))
    tbox = TBox(cis)
    if dialect == "EL" and tbox.dialect == "ELI":
        raise DialectError("inverse role in EL-dialect file")
    return tbox


def print_tbox(tbox: TBox) -> str:
    lines = [f"{print_concept(ci.lhs)} <= {print_concept(ci.rhs)}" for ci in tbox.cis]
    return "\n".join(sorted(lines)) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# ABox


def parse_abox(text: str) -> ABox:
    concepts = []
    roles = []
    for lineno, line in _content_lines(text):
        toks = _Tokens(line, lineno)
        name = toks.next("name")[1]
        toks.next("(")
        a = toks.next("name")[1]
        if toks.peek()[0] == ",":
            toks.next()
            b = toks.next("name")[1]
            toks.next(")")
            roles.append((name, a, b))
        else:
            toks.next(")")
            concepts.append((name, a))
        if not toks.done():
            tok = toks.peek()
            raise OmqSyntaxError(f"trailing input {tok[1]!r}", lineno, tok[2], "end of line")
    return ABox(concepts, roles)


def print_abox(abox: ABox) -> str:
    lines = [f"{c}({a})" for c, a in sorted(abox.concepts)]
    lines += [f"{r}({a},{b})" for r, a, b in sorted(abox.roles)]
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# CQ


_CQ_HEAD_RE = re.compile(r"q\(([^()]*)\)\s*:-\s*(.*)$")


def _split_atoms(body: str):
    atoms = []
    depth = 0
    cur = ""
    for ch in body:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            atoms.append(cur)
            cur = ""
        else:
            cur += ch
    if cur.strip():
        atoms.append(cur)
    return [a.strip() for a in atoms]


def parse_cq(text: str) -> CQ:
    lines = list(_content_lines(text))
    if not lines:
        raise OmqSyntaxError("empty query", 1, 1, "query")
    if len(lines) > 1:
        raise OmqSyntaxError("a query is a single line", lines[1][0], 1, "end of file")
    lineno, line = lines[0]
    m = _CQ_HEAD_RE.match(line)
    if not m:
        raise OmqSyntaxError("query must look like q(...) :- ...", lineno, 1, "q(VARS) :- ATOMS")
    answer = []
    if m.group(1).strip():
        for v in m.group(1).split(","):
            v = v.strip()
            if not _NAME_RE.fullmatch(v):
                raise OmqSyntaxError(f"bad answer variable {v!r}", lineno, 1, "NAME")
            answer.append(v)
    unary, binary, equalities = [], [], []
    for atom in _split_atoms(m.group(2)):
        if "=" in atom and "(" not in atom:
            x, y = (s.strip() for s in atom.split("=", 1))
            if not _NAME_RE.fullmatch(x) or not _NAME_RE.fullmatch(y):
                raise OmqSyntaxError(f"bad equality atom {atom!r}", lineno, 1, "VAR = VAR")
            equalities.append((x, y))
            continue
        am = re.fullmatch(r"([A-Za-z_]\w*)\(([A-Za-z_]\w*)(?:\s*,\s*([A-Za-z_]\w*))?\)", atom)
        if not am:
            raise OmqSyntaxError(f"bad atom {atom!r}", lineno, 1, "NAME(VAR[,VAR])")
        name, x, y = am.group(1), am.group(2), am.group(3)
        if y is None:
            unary.append((name, x))
        else:
            binary.append((name, x, y))
    if not unary and not binary and not equalities:
        raise OmqSyntaxError("query needs at least one atom", lineno, 1, "atom")
    return CQ(answer, unary, binary, equalities)


def print_cq(q: CQ) -> str:
    head = f"q({','.join(q.answer_vars)})"
    atoms = [f"{c}({x})" for c, x in sorted(q.unary)]
    atoms += [f"{r}({x},{y})" for r, x, y in sorted(q.binary)]
    atoms += [f"{x} = {y}" for x, y in sorted(q.equalities)]
    return f"{head} :- {', '.join(atoms)}\n"


# ---------------------------------------------------------------------------
# OMQ


def parse_omq(text: str) -> OMQ:
    section = None
    tbox_lines, sigma_lines, query_lines = [], [], []
    for lineno, line in _content_lines(text):
        if line.startswith("["):
            name = line.strip("[]").strip().lower()
            if name not in ("tbox", "sigma", "query"):
                raise OmqSyntaxError(f"unknown section [{name}]", lineno, 1, "[tbox]")
            section = name
            continue
        if section == "tbox":
            tbox_lines.append((lineno, line))
        elif section == "sigma":
            sigma_lines.append((lineno, line))
        elif section == "query":
            query_lines.append((lineno, line))
        else:
            raise OmqSyntaxError("content before any section", lineno, 1, "[tbox]")
    tbox = parse_tbox("\n".join(l for _, l in tbox_lines))
    concepts, roles = [], []
    for lineno, line in sigma_lines:
        parts = line.split()
        if len(parts) != 2 or parts[0] not in ("concept", "role"):
            raise OmqSyntaxError(f"bad sigma line {line!r}", lineno, 1, "concept NAME | role NAME")
        (concepts if parts[0] == "concept" else roles).append(parts[1])
    if not query_lines:
        raise OmqSyntaxError("missing [query] section", 1, 1, "[query]")
    query = parse_cq("\n".join(l for _, l in query_lines))
    return OMQ(tbox, Signature(concepts, roles), query)


def print_omq(omq: OMQ) -> str:
    out = ["[tbox]"]
    out.append(print_tbox(omq.tbox).rstrip("\n"))
    out.append("[sigma]")
    for c in sorted(omq.sigma.concepts):
        out.append(f"concept {c}")
    for r in sorted(omq.sigma.roles):
        out.append(f"role {r}")
    out.append("[query]")
    out.append(print_cq(omq.query).rstrip("\n"))
    return "\n".join(line for line in out if line != "") + "\n"


# ---------------------------------------------------------------------------
# Datalog


_ATOM_RE = re.compile(r"([A-Za-z_]\w*)\(([^()]*)\)")


def _parse_datalog_atom(text: str, lineno: int):
    m = _ATOM_RE.fullmatch(text.strip())
    if not m:
        raise OmqSyntaxError(f"bad atom {text!r}", lineno, 1, "REL(TERM,...)")
    rel = m.group(1)
    args = tuple(s.strip() for s in m.group(2).split(",")) if m.group(2).strip() else ()
    for a in args:
        if not _NAME_RE.fullmatch(a):
            raise OmqSyntaxError(f"bad term {a!r}", lineno, 1, "NAME")
    return (rel, args)


def parse_datalog(text: str) -> DatalogProgram:
    rules = []
    for lineno, line in _content_lines(text):
        if not line.endswith("."):
            raise OmqSyntaxError("rule must end with '.'", lineno, len(line), ".")
        line = line[:-1]
        if ":-" not in line:
            raise OmqSyntaxError("missing ':-'", lineno, 1, ":-")
        head_text, body_text = line.split(":-", 1)
        head = _parse_datalog_atom(head_text, lineno)
        body_atoms = tuple(_parse_datalog_atom(b, lineno) for b in _split_atoms(body_text))
        if not body_atoms:
            raise OmqSyntaxError("empty rule body", lineno, 1, "atom")
        rules.append(Rule(head, body_atoms))
    return DatalogProgram(rules)


def _print_datalog_atom(atom) -> str:
    rel, args = atom
    return f"{rel}({','.join(args)})"


def print_datalog(program: DatalogProgram) -> str:
    lines = []
    for rule in program.rules:
        body = ", ".join(_print_datalog_atom(a) for a in rule.body)
        lines.append(f"{_print_datalog_atom(rule.head)} :- {body}.")
    return "\n".join(sorted(lines)) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Unified codec


_PARSERS = {
    "tbox": parse_tbox,
    "abox": parse_abox,
    "cq": parse_cq,
    "omq": parse_omq,
    "datalog": parse_datalog,
}

_PRINTERS = {
    "tbox": print_tbox,
    "abox": print_abox,
    "cq": print_cq,
    "omq": print_omq,
    "datalog": print_datalog,
}


def codec(direction: str, kind: str, payload):
    """Parse text into an object or print an object as canonical text."""
    if kind not in _PARSERS:
        raise ValueError(f"unknown kind {kind!r}")
    if direction == "parse":
        return _PARSERS[kind](payload)
    if direction == "print":
        return _PRINTERS[kind](payload)
    raise ValueError(f"unknown direction {direction!r}")
