"""Synthetic multi-domain fact-recall task.

Each domain owns disjoint subject, relation and object token ranges. A fact
(subject, relation) -> object is trained as the sequence
``[BOS, subject, relation, object]`` and asked as a multiple-choice item
with context ``[BOS, subject, relation]`` and single-token options drawn
from the same domain's objects.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from src.diagnostics.evaluate import MCItem
from src.errors import VocabularyError
from src.validation.schemas import TaskSpec

logger = logging.getLogger(__name__)

PAD, BOS, EOS = 0, 1, 2


@dataclass(frozen=True)
class Fact:
    domain: str
    subject: int
    relation: int
    obj: int

    def sequence(self) -> list[int]:
        return [BOS, self.subject, self.relation, self.obj]


@dataclass(frozen=True)
class DomainVocab:
    name: str
    subjects: range
    relations: range
    objects: range


@dataclass
class Corpus:
    spec: TaskSpec
    seed: int
    domains: list[DomainVocab]
    facts: list[Fact]
    items: list[MCItem] = field(default_factory=list)

    @property
    def domain_names(self) -> list[str]:
        return [d.name for d in self.domains]

    @property
    def vocab_needed(self) -> int:
        return max(d.objects.stop for d in self.domains)

    def sequences(self, domain: str | None = None) -> list[list[int]]:
        return [f.sequence() for f in self.facts if domain is None or f.domain == domain]

    def domain_items(self, domain: str | None = None) -> list[MCItem]:
        return [it for it in self.items if domain is None or it.domain == domain]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.model_dump(),
            "seed": self.seed,
            "facts": [[f.domain, f.subject, f.relation, f.obj] for f in self.facts],
            "items": [it.to_dict() for it in self.items],
        }

    @classmethod
    def from_dict(cls, data: dict) -> Corpus:
        spec = TaskSpec.model_validate(data["spec"])
        return cls(
            spec=spec,
            seed=data["seed"],
            domains=domain_vocabularies(spec),
            facts=[Fact(d, s, r, o) for d, s, r, o in data["facts"]],
            items=[MCItem.from_dict(it) for it in data["items"]],
        )

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path | str) -> Corpus:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def domain_vocabularies(spec: TaskSpec) -> list[DomainVocab]:
    """Consecutive, disjoint token ranges per domain after the reserved ids."""
    domains = []
    start = spec.reserved_tokens
    for k in range(spec.n_domains):
        s = range(start, start + spec.subjects_per_domain)
        r = range(s.stop, s.stop + spec.relations_per_domain)
        o = range(r.stop, r.stop + spec.objects_per_domain)
        domains.append(DomainVocab(f"d{k}", s, r, o))
        start = o.stop
    return domains


def gen_corpus(spec: TaskSpec, seed: int, vocab_size: int | None = None) -> Corpus:
    """Deterministic corpus and recall items for ``seed``."""
    domains = domain_vocabularies(spec)
    needed = domains[-1].objects.stop
    if vocab_size is not None and needed > vocab_size:
        raise VocabularyError(f"task needs {needed} token ids, vocabulary has {vocab_size}")
    pairs = spec.subjects_per_domain * spec.relations_per_domain
    if spec.facts_per_domain > pairs:
        raise VocabularyError(f"{spec.facts_per_domain} facts per domain exceed {pairs} subject/relation pairs")
    if spec.n_options > spec.objects_per_domain:
        raise VocabularyError(f"{spec.n_options} options exceed {spec.objects_per_domain} objects per domain")

    rng = np.random.default_rng(seed)
    facts: list[Fact] = []
    items: list[MCItem] = []
    for dom in domains:
        picks = rng.choice(pairs, size=spec.facts_per_domain, replace=False)
        for p in sorted(int(x) for x in picks):
            subject = dom.subjects[p // spec.relations_per_domain]
            relation = dom.relations[p % spec.relations_per_domain]
            obj = int(rng.choice(dom.objects))
            fact = Fact(dom.name, subject, relation, obj)
            facts.append(fact)

            others = [o for o in dom.objects if o != obj]
            distractors = [int(x) for x in rng.choice(others, size=spec.n_options - 1, replace=False)]
            answer = int(rng.integers(0, spec.n_options))
            options = distractors[:answer] + [obj] + distractors[answer:]
            items.append(MCItem(
                context=(BOS, subject, relation),
                options=tuple((o,) for o in options),
                answer=answer,
                domain=dom.name,
            ))
    logger.info("Generated %d facts over %d domains (seed %d)", len(facts), len(domains), seed)
    return Corpus(spec, seed, domains, facts, items)
