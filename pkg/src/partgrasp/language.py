"""Template instruction generation, lexicon parsing and part resolution.

Seven language modes control which slots appear in the text:

==============================  ======  ====  ==========
mode                            object  part  affordance
==============================  ======  ====  ==========
known_all                       yes     yes   yes
part_known_object_unknown       no      yes   yes
part_unknown_object_known       yes     no    yes
part_unknown_object_unknown     no      no    yes
part_object_fragment            "<part> of <object>"
one_best_part                   known_all text about the object's best part
full_data                       one of the four template modes, drawn per sentence
==============================  ======  ====  ==========

A hidden slot is replaced by a generic noun phrase and never leaks a
surface term into the text.
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from typing import Protocol

import numpy as np

from .errors import UnknownId, Unresolvable

MODES = (
    "full_data",
    "known_all",
    "part_known_object_unknown",
    "part_unknown_object_known",
    "part_unknown_object_unknown",
    "part_object_fragment",
    "one_best_part",
)
TEMPLATE_MODES = MODES[1:5]
KINDS = ("imperative", "interrogative", "declarative", "conditional", "descriptive")

# which slots are written out in the text, per template mode
_VISIBLE = {
    "known_all": ("object", "part", "affordance"),
    "part_known_object_unknown": ("part", "affordance"),
    "part_unknown_object_known": ("object", "affordance"),
    "part_unknown_object_unknown": ("affordance",),
    "part_object_fragment": ("object", "part"),
    "one_best_part": ("object", "part", "affordance"),
}


def visible_slots(mode: str) -> tuple[str, ...]:
    if mode == "full_data":
        raise ValueError("full_data mixes modes; ask the sentence for its resolved mode")
    return _VISIBLE[mode]


def tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


@dataclass(frozen=True)
class Template:
    id: str
    kind: str
    text: str

    def fill(self, object_np: str, part_np: str, affordance: str) -> str:
        out = self.text.format(object=object_np, part=part_np, affordance=affordance)
        return out[0].upper() + out[1:]


class Lexicon:
    """Term tables for objects, parts and affordances plus the affordance table."""

    def __init__(self, data: dict):
        self.version = data["version"]
        self.objects: dict[str, list[str]] = data["objects"]
        self.parts: dict[str, list[str]] = data["parts"]
        self.affordances: dict[str, list[str]] = data["affordances"]
        self.object_parts: dict[str, dict[str, list[str]]] = data["object_parts"]
        self.affordance_rank: dict[str, list[str]] = data["affordance_rank"]
        self.best_part: dict[str, str] = data["best_part"]
        self.generic: dict[str, list[str]] = data["generic"]
        self._by_pair = {}
        for obj, parts in self.object_parts.items():
            for part, affs in parts.items():
                for aff in affs:
                    self._by_pair[(obj, aff)] = part
        # (token tuple) -> (slot, id); longest phrases are tried first when scanning
        self._terms: dict[tuple[str, ...], tuple[str, str]] = {}
        for slot, table in (("object", self.objects), ("part", self.parts), ("affordance", self.affordances)):
            for cid, terms in table.items():
                for term in terms:
                    key = tuple(tokenize(term))
                    if key in self._terms and self._terms[key] != (slot, cid):
                        raise ValueError(f"term {term!r} maps to two ids")
                    self._terms[key] = (slot, cid)
        self._max_len = max(len(k) for k in self._terms)

    @classmethod
    def load(cls, path=None) -> Lexicon:
        if path is None:
            return default_lexicon()
        with open(path) as fh:
            return cls(json.load(fh))

    def surface_terms(self, slot: str) -> list[str]:
        table = {"object": self.objects, "part": self.parts, "affordance": self.affordances}[slot]
        return [t for terms in table.values() for t in terms]

    def part_for(self, obj: str, affordance: str) -> str | None:
        return self._by_pair.get((obj, affordance))

    def affordances_for(self, obj: str, part: str) -> list[str]:
        try:
            return self.object_parts[obj][part]
        except KeyError:
            raise UnknownId(f"no part {part!r} on {obj!r}") from None

    def scan_spans(self, text: str) -> list[tuple[str, str, int, int]]:
        """Greedy longest-match scan: (slot, id, first token, end token) per match."""
        toks = tokenize(text)
        out, i = [], 0
        while i < len(toks):
            for n in range(min(self._max_len, len(toks) - i), 0, -1):
                hit = self._terms.get(tuple(toks[i:i + n]))
                if hit:
                    out.append((*hit, i, i + n))
                    i += n
                    break
            else:
                i += 1
        return out

    def scan(self, text: str) -> list[tuple[str, str]]:
        """(slot, id) for each matched phrase, in order."""
        return [(slot, cid) for slot, cid, _, _ in self.scan_spans(text)]

    def slot_features(self) -> list[tuple[str, str]]:
        return ([("object", k) for k in self.objects] + [("part", k) for k in self.parts]
                + [("affordance", k) for k in self.affordances])


@lru_cache(maxsize=None)
def default_lexicon() -> Lexicon:
    text = (resources.files("partgrasp") / "data" / "lexicon.json").read_text()
    return Lexicon(json.loads(text))


def load_templates(path=None) -> tuple[Template, ...]:
    if path is None:
        return default_templates()
    with open(path) as fh:
        return _parse_templates(json.load(fh))


def _parse_templates(data: dict) -> tuple[Template, ...]:
    bank = tuple(Template(**t) for t in data["templates"])
    for t in bank:
        if t.kind not in KINDS:
            raise ValueError(f"template {t.id}: unknown kind {t.kind!r}")
        for slot in ("{object}", "{part}", "{affordance}"):
            if slot not in t.text:
                raise ValueError(f"template {t.id} lacks {slot}")
    return bank


@lru_cache(maxsize=None)
def default_templates() -> tuple[Template, ...]:
    text = (resources.files("partgrasp") / "data" / "templates.json").read_text()
    return _parse_templates(json.loads(text))


@dataclass(frozen=True)
class Instruction:
    text: str
    mode: str
    object_id: str
    part_id: str
    affordance_id: str
    template_id: str | None = None
    seed: int = 0
    resolved_mode: str | None = None    # the concrete mode drawn for full_data

    @property
    def text_mode(self) -> str:
        return self.resolved_mode or self.mode

    def to_json(self) -> dict:
        d = asdict(self)
        return {
            "text": d["text"], "mode": d["mode"],
            "truth": {"object": self.object_id, "part": self.part_id, "affordance": self.affordance_id},
            "template_id": d["template_id"], "seed": d["seed"], "resolved_mode": d["resolved_mode"],
        }

    @classmethod
    def from_json(cls, d: dict) -> Instruction:
        t = d["truth"]
        return cls(d["text"], d["mode"], t["object"], t["part"], t["affordance"],
                   d.get("template_id"), d.get("seed", 0), d.get("resolved_mode"))


def _pick(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


def generate_sentence(object_id: str, part_id: str, affordance_id: str, mode: str, seed: int,
                      lexicon: Lexicon | None = None, templates=None) -> Instruction:
    lex = lexicon or default_lexicon()
    bank = templates or default_templates()
    if object_id not in lex.objects:
        raise UnknownId(f"unknown object {object_id!r}")
    if mode not in MODES:
        raise UnknownId(f"unknown language mode {mode!r}")
    rng = np.random.default_rng(seed)
    if mode == "one_best_part":
        part_id = lex.best_part[object_id]
        affordance_id = _pick(rng, lex.affordances_for(object_id, part_id))
    if affordance_id not in lex.affordances_for(object_id, part_id):
        raise UnknownId(f"affordance {affordance_id!r} does not fit {object_id}/{part_id}")
    resolved = _pick(rng, TEMPLATE_MODES) if mode == "full_data" else None
    text_mode = resolved or mode
    obj_term = _pick(rng, lex.objects[object_id])
    part_term = _pick(rng, lex.parts[part_id])
    if text_mode == "part_object_fragment":
        return Instruction(f"{part_term} of {obj_term}", mode, object_id, part_id, affordance_id, None, seed)
    vis = _VISIBLE[text_mode]
    kind = _pick(rng, KINDS)
    template = _pick(rng, [t for t in bank if t.kind == kind])
    obj_np = f"the {obj_term}" if "object" in vis else _pick(rng, lex.generic["object"])
    part_np = f"the {part_term}" if "part" in vis else _pick(rng, lex.generic["part"])
    aff = _pick(rng, lex.affordances[affordance_id])
    return Instruction(template.fill(obj_np, part_np, aff), mode, object_id, part_id, affordance_id,
                       template.id, seed, resolved)


def generate_sentences(object_id: str, part_id: str, affordance_id: str, modes=MODES, seed: int = 0,
                       lexicon: Lexicon | None = None, templates=None) -> list[Instruction]:
    """One instruction per requested mode; each mode gets its own derived seed."""
    seeds = np.random.default_rng(seed).integers(2**62, size=len(modes))
    return [generate_sentence(object_id, part_id, affordance_id, m, int(s), lexicon, templates)
            for m, s in zip(modes, seeds)]


def parse_instruction(text: str, lexicon: Lexicon | None = None) -> dict[str, str]:
    """Slots resolvable from ``text``; the first mention of each slot wins."""
    lex = lexicon or default_lexicon()
    out: dict[str, str] = {}
    for slot, cid in lex.scan(text):
        out.setdefault(slot, cid)
    return out


def resolve_part(slots: dict, object_hint: str | None = None, lexicon: Lexicon | None = None,
                 available=None) -> str:
    """Part to grasp: named part, else affordance table, else the object's best part.

    ``available`` optionally restricts affordance-only lookups to parts the
    object actually has.
    """
    lex = lexicon or default_lexicon()
    if "part" in slots:
        return slots["part"]
    obj = slots.get("object", object_hint)
    aff = slots.get("affordance")
    if aff is not None:
        if obj is not None:
            part = lex.part_for(obj, aff)
            if part is not None:
                return part
        ranked = lex.affordance_rank.get(aff, [])
        if available is not None:
            ranked = [p for p in ranked if p in available]
        if ranked:
            return ranked[0]
    if obj is not None and obj in lex.best_part:
        return lex.best_part[obj]
    raise Unresolvable("instruction names no part, affordance or known object")


def leaked_slots(instruction: Instruction, lexicon: Lexicon | None = None) -> list[str]:
    """Hidden slots whose surface terms appear in the text (word-boundary regex audit)."""
    lex = lexicon or default_lexicon()
    vis = _VISIBLE[instruction.text_mode]
    low = instruction.text.lower()
    bad = []
    for slot in ("object", "part"):
        if slot in vis:
            continue
        for term in lex.surface_terms(slot):
            if re.search(r"\b" + re.escape(term.lower()) + r"\b", low):
                bad.append(f"{slot}:{term}")
    return bad


class InstructionRewriter(Protocol):
    def rewrite(self, text: str) -> str: ...


class IdentityRewriter:
    """Default rewriter; a language-model rewriter can be plugged in with the same method."""

    def rewrite(self, text: str) -> str:
        return text
