"""Synthetic entity-relation corpus with planted answers.

Every document describes one invented town. All attribute values are
fresh words or numbers, so each gold answer occurs in exactly one document.
Test questions are annotated by construction:

* question overlap: the identical question was asked in training;
* answer-overlap only: a paraphrase of a training question (same fact);
* no overlap: a fact never asked in training.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..records import QAExample, write_jsonl
from ..retrieval import Document
from ..rng import make_rng
from .artifacts import write_json

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "tr", "st"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
_CODAS = ["", "n", "r", "l", "s", "k", "th"]

# relation -> (sentence template, question templates); the first question
# form is used for training, the second is its paraphrase
RELATIONS = {
    "founder": ("{town} was founded by {value} .",
                ("who founded {town} ?", "who was the founder of {town} ?")),
    "year": ("the town dates from {value} .",
             ("when was {town} founded ?", "in what year was {town} founded ?")),
    "river": ("the {value} river flows past {town} .",
              ("which river flows past {town} ?", "what river runs by {town} ?")),
    "region": ("{town} lies in the {value} hills .",
               ("where is {town} ?", "in which hills does {town} lie ?")),
    "mayor": ("its mayor is {value} .",
              ("who is the mayor of {town} ?", "name the mayor of {town} .")),
    "population": ("about {value} people live there .",
                   ("how many people live in {town} ?", "what is the population of {town} ?")),
}


@dataclass(frozen=True)
class Fact:
    doc_id: str
    town: str
    relation: str
    value: str

    def question(self, form: int) -> str:
        return RELATIONS[self.relation][1][form].format(town=self.town)


@dataclass
class SynthData:
    documents: list[Document]
    train: list[QAExample]
    test: list[QAExample]


def _word_factory(rng):
    seen: set[str] = set()

    def fresh() -> str:
        while True:
            n = int(rng.integers(2, 4))
            w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                        + _CODAS[rng.integers(len(_CODAS))] for _ in range(n))
            if w not in seen and w not in {"the", "a", "an"}:
                seen.add(w)
                return w
    return fresh


def synthesize(num_documents: int = 200, num_train: int = 100, num_test: int = 60, seed: int = 0) -> SynthData:
    """Corpus of ``num_documents`` one-passage documents plus QA splits."""
    if min(num_documents, num_train, num_test) < 1:
        raise ValueError("sizes must be >= 1")
    facts_per_doc = len(RELATIONS)
    if num_train + num_test > num_documents * facts_per_doc:
        raise ValueError("not enough facts for the requested number of questions")
    rng = make_rng(seed, "synth")
    fresh = _word_factory(rng)
    numbers = iter(rng.permutation(9000) + 1000)

    documents, facts = [], []
    for n in range(num_documents):
        town = fresh()
        doc_id = f"doc{n:04d}"
        values = {
            "founder": fresh(), "year": str(next(numbers)), "river": fresh(),
            "region": fresh(), "mayor": fresh(), "population": str(next(numbers)),
        }
        order = list(RELATIONS)
        rng.shuffle(order)
        sentences = [f"{town} is a small town ."]
        for rel in order:
            sentences.append(RELATIONS[rel][0].format(town=town, value=values[rel]))
            facts.append(Fact(doc_id, town, rel, values[rel]))
        documents.append(Document(doc_id, town, " ".join(sentences)))

    picked = [facts[i] for i in rng.permutation(len(facts))]
    train_facts = picked[:num_train]
    unseen = picked[num_train:]
    train = [QAExample(f"train{i:04d}", f.question(0), [f.value]) for i, f in enumerate(train_facts)]

    # roughly a third of the test set in each overlap bucket
    n_qo = min(num_test // 3, num_train)
    n_ao = min(num_test // 3, num_train - n_qo)
    n_none = num_test - n_qo - n_ao
    if n_none > len(unseen):
        raise ValueError("not enough unseen facts for the test split")
    seen_order = [train_facts[i] for i in rng.permutation(num_train)]
    test = []
    for f in seen_order[:n_qo]:
        test.append((f.question(0), f.value, True, True))
    for f in seen_order[n_qo:n_qo + n_ao]:
        test.append((f.question(1), f.value, False, True))
    for f in unseen[:n_none]:
        test.append((f.question(int(rng.integers(2))), f.value, False, False))
    test_examples = [QAExample(f"test{i:04d}", q, [a], qo, ao) for i, (q, a, qo, ao) in enumerate(test)]
    return SynthData(documents, train, test_examples)


# desk-scale settings: shallow retrieval depth, early stopping on the training set
SMOKE_CONFIG = {
    "paths": {"corpus": "corpus.jsonl", "train": "train.jsonl", "dev": "train.jsonl", "test": "test.jsonl",
              "index": "work/index.bin", "checkpoints": "work/checkpoints", "outputs": "work/outputs"},
    "retrieval": {"k": 20, "k_values": [1, 5, 10, 20]},
    "generative": {"passages": 4},
    "trainer": {"target_em": 1.0, "patience": 30},
    "seeds": [0, 1],
}


def write_fixture(data: SynthData, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {name: out_dir / f"{name}.jsonl" for name in ("corpus", "train", "test")}
    write_jsonl(paths["corpus"], [{"id": d.id, "title": d.title, "text": d.text} for d in data.documents])
    write_jsonl(paths["train"], [ex.to_json() for ex in data.train])
    write_jsonl(paths["test"], [ex.to_json() for ex in data.test])
    paths["config"] = out_dir / "config.json"
    write_json(paths["config"], SMOKE_CONFIG)
    return paths
