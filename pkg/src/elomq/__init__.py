"""Ontology-mediated querying for EL/ELI TBoxes with conjunctive queries.

The package covers chase-based evaluation, structural analysis of witness
ABoxes (pathwidth, branching), compilation of bounded-pathwidth OMQs into
linear Datalog through a two-way alternating word automaton, and support for
complexity classification via reachability/path-system witness checking and
hardness-gadget generation.
"""

from .syntax import (
    ABox,
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
    conj,
    find_homomorphism,
    normalize,
)
from .textio import codec

__all__ = [
    "ABox",
    "Atom",
    "CI",
    "CQ",
    "Concept",
    "Exists",
    "OMQ",
    "Role",
    "Signature",
    "TBox",
    "TOP",
    "codec",
    "conj",
    "find_homomorphism",
    "normalize",
]

__version__ = "0.1.0"
