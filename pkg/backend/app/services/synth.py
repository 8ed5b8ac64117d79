import logging
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from app.corefud.document import Document, Entity, Mention, Sentence, Token
from app.schemas import SynthSpec
from app.services.scorer import head_of_span

logger = logging.getLogger(__name__)

Span = Tuple[int, int]

MAX_MENTION_WIDTH = 4
# (form, lemma) shapes for generated empty nodes; "_" marks a missing value
EMPTY_NODE_SHAPES = (("_", "#PersPron"), ("_", "_"), ("pro", "_"))


def crosses(a: Span, b: Span) -> bool:
    return a[0] < b[0] <= a[1] < b[1] or b[0] < a[0] <= b[1] < a[1]


class SyntheticCorpusGenerator:
    """Seeded generator of CorefUD documents with nested, crossing and empty-node mentions.

    Spans are sampled per sentence and rejected when duplicated or deeper than `max_depth`;
    entities are grown by a Polya urn, never letting one entity own two crossing mentions.
    """

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)

    def generate(self) -> List[Document]:
        docs = [self._document(i) for i in range(self.spec.documents)]
        mentions = sum(len(e.mentions) for d in docs for e in d.entities)
        logger.info(f"Generated {len(docs)} documents with {mentions} mentions (seed {self.spec.seed})")
        return docs

    def _sentence(self, doc_id: str, index: int) -> Tuple[Sentence, List[int]]:
        spec, rng = self.spec, self.rng
        length = int(rng.integers(spec.min_sentence_length, spec.max_sentence_length + 1))
        tokens: List[Token] = []
        empties: List[int] = []
        for word in range(1, length + 1):
            form = f"w{int(rng.integers(spec.vocab_size))}"
            head = 0 if word == 1 else int(rng.integers(1, word))
            deprel = "root" if head == 0 else "dep"
            tokens.append(Token(form, word, form, head, surfaced_form=form, columns=("X", "_", "_", deprel, "_")))
            if rng.random() < spec.empty_node_prob:
                form, lemma = EMPTY_NODE_SHAPES[int(rng.integers(len(EMPTY_NODE_SHAPES)))]
                empties.append(len(tokens))
                tokens.append(Token(form, word, lemma, None, 1, form, ("PRON", "_", "_", "_", f"{word}:dep")))

        comments = [] if index else [("newdoc id", doc_id)]
        sentence_id = f"{doc_id}-s{index + 1}"
        comments += [("sent_id", sentence_id), ("text", " ".join(t.form for t in tokens if not t.is_empty))]
        return Sentence(tuple(tokens), sentence_id, tuple(comments)), empties

    def _fits(self, spans: List[Span], span: Span) -> bool:
        if span in spans:
            return False
        candidate = spans + [span]
        for t in range(span[0], span[1] + 1):
            if sum(1 for s, e in candidate if s <= t <= e) > self.spec.max_depth:
                return False
        return True

    def _try_add(self, spans: List[Span], span: Span) -> bool:
        if self._fits(spans, span):
            spans.append(span)
            return True
        return False

    def _add_crossing(self, spans: List[Span], length: int):
        options = [
            (c, d)
            for a, b in spans
            for c in range(a + 1, b + 1)
            for d in range(b + 1, min(length, c + MAX_MENTION_WIDTH))
        ]
        for k in self.rng.permutation(len(options)):
            if self._try_add(spans, options[int(k)]):
                return
        if length >= 3:
            a = int(self.rng.integers(0, length - 2))
            if self._fits(spans, (a, a + 1)) and self._fits(spans + [(a, a + 1)], (a + 1, a + 2)):
                spans += [(a, a + 1), (a + 1, a + 2)]

    def _sentence_spans(self, length: int, empties: List[int]) -> List[Span]:
        rng = self.rng
        spans: List[Span] = []
        for position in empties:
            if rng.random() < 0.5:
                self._try_add(spans, (position, position))
        for _ in range(int(rng.integers(1, max(2, length // 2 + 1)))):
            width = int(rng.integers(1, min(MAX_MENTION_WIDTH, length) + 1))
            start = int(rng.integers(0, length - width + 1))
            self._try_add(spans, (start, start + width - 1))
        if rng.random() < self.spec.crossing_prob:
            self._add_crossing(spans, length)
        return sorted(spans)

    def _assign_entities(self, spans: List[Span], sentence_of: List[int]) -> Dict[int, int]:
        """Polya urn over mentions in reading order; returns mention index -> entity index."""
        rng = self.rng
        limit = int(rng.integers(self.spec.min_entities, self.spec.max_entities + 1))
        assignment: Dict[int, int] = {}
        sizes: List[int] = []
        if limit == 0:
            return assignment
        for i, span in enumerate(spans):
            forbidden: Set[int] = {
                assignment[j] for j in range(i)
                if j in assignment and sentence_of[j] == sentence_of[i] and crosses(spans[j], span)
            }
            options = [k for k in range(len(sizes)) if k not in forbidden]
            weights = [float(sizes[k]) for k in options]
            if len(sizes) < limit:
                options.append(len(sizes))
                weights.append(1.0)
            if not options:
                continue
            probabilities = np.asarray(weights) / sum(weights)
            choice = options[int(rng.choice(len(options), p=probabilities))]
            if choice == len(sizes):
                sizes.append(0)
            sizes[choice] += 1
            assignment[i] = choice
        return assignment

    def _document(self, index: int) -> Document:
        doc_id = f"{self.spec.corpus_id}-doc{index + 1}"
        sentences = []
        spans: List[Span] = []
        sentence_of: List[int] = []
        offset = 0
        for s in range(self.spec.sentences_per_doc):
            sentence, empties = self._sentence(doc_id, s)
            for start, end in self._sentence_spans(len(sentence), empties):
                spans.append((offset + start, offset + end))
                sentence_of.append(s)
            sentences.append(sentence)
            offset += len(sentence)

        skeleton = Document(doc_id, tuple(sentences), (), self.spec.corpus_id)
        members: Dict[int, List[Mention]] = {}
        for i, k in self._assign_entities(spans, sentence_of).items():
            positions = tuple(range(spans[i][0], spans[i][1] + 1))
            members.setdefault(k, []).append(Mention(positions, head_of_span(positions, skeleton.parents)))
        entities = [Entity(f"e{k + 1}", tuple(mentions)) for k, mentions in sorted(members.items())]
        return skeleton.with_entities(entities)


def generate(spec: Optional[SynthSpec] = None) -> List[Document]:
    return SyntheticCorpusGenerator(spec or SynthSpec()).generate()
