"""Tests for the synthetic fact-recall task."""

import pytest

from src.errors import VocabularyError
from src.harness.task import BOS, Corpus, domain_vocabularies, gen_corpus
from src.validation.schemas import TaskSpec


class TestDomainVocabularies:
    def test_disjoint_ranges_after_reserved(self, task_spec):
        domains = domain_vocabularies(task_spec)
        assert [d.name for d in domains] == ["d0", "d1"]
        seen: set[int] = set()
        for d in domains:
            ids = set(d.subjects) | set(d.relations) | set(d.objects)
            assert not ids & seen
            seen |= ids
        assert min(seen) == task_spec.reserved_tokens
        assert max(seen) == 3 + 2 * (3 + 2 + 5) - 1


class TestGenCorpus:
    def test_deterministic(self, task_spec):
        assert gen_corpus(task_spec, 7).to_dict() == gen_corpus(task_spec, 7).to_dict()
        assert gen_corpus(task_spec, 7).to_dict() != gen_corpus(task_spec, 8).to_dict()

    def test_sizes(self, corpus, task_spec):
        assert len(corpus.facts) == 2 * task_spec.facts_per_domain
        assert len(corpus.items) == len(corpus.facts)
        assert len(corpus.sequences("d1")) == task_spec.facts_per_domain
        assert len(corpus.domain_items("d0")) == task_spec.facts_per_domain

    def test_items_ask_their_fact(self, corpus, task_spec):
        for fact, item in zip(corpus.facts, corpus.items):
            assert item.context == (BOS, fact.subject, fact.relation)
            assert item.options[item.answer] == (fact.obj,)
            assert len(item.options) == task_spec.n_options
            assert len(set(item.options)) == task_spec.n_options
            assert item.domain == fact.domain

    def test_subject_relation_pairs_unique(self, corpus):
        keys = [(f.subject, f.relation) for f in corpus.facts]
        assert len(keys) == len(set(keys))

    def test_vocab_too_small(self, task_spec):
        with pytest.raises(VocabularyError):
            gen_corpus(task_spec, 0, vocab_size=10)

    def test_too_many_facts(self):
        with pytest.raises(VocabularyError):
            gen_corpus(TaskSpec(facts_per_domain=7, subjects_per_domain=3, relations_per_domain=2), 0)

    def test_too_many_options(self):
        with pytest.raises(VocabularyError):
            gen_corpus(TaskSpec(facts_per_domain=2, objects_per_domain=3, n_options=4), 0)

    def test_save_load(self, corpus, tmp_path):
        loaded = Corpus.load(corpus.save(tmp_path / "corpus.json"))
        assert loaded.to_dict() == corpus.to_dict()
        assert loaded.items == corpus.items
        assert loaded.vocab_needed == corpus.vocab_needed
