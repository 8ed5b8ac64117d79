from dataclasses import dataclass, replace
from functools import cached_property
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from app.errors import AnnotationError

# Opaque CoNLL-U columns kept for round-tripping, in file order.
OPAQUE_COLUMNS = ("upos", "xpos", "feats", "deprel", "deps")


@dataclass(frozen=True)
class Token:
    form: str
    word_index: int
    lemma: str = "_"
    head: Optional[int] = None
    empty_index: Optional[int] = None
    surfaced_form: str = ""
    columns: Tuple[str, ...] = ("_",) * len(OPAQUE_COLUMNS)
    misc: Tuple[str, ...] = ()

    @property
    def is_empty(self) -> bool:
        return self.empty_index is not None

    @property
    def token_id(self) -> str:
        if self.is_empty:
            return f"{self.word_index}.{self.empty_index}"
        return str(self.word_index)


@dataclass(frozen=True)
class Sentence:
    tokens: Tuple[Token, ...]
    sentence_id: str = ""
    # (key, value) comment pairs in file order; value None for bare comments
    comments: Tuple[Tuple[str, Optional[str]], ...] = ()
    # multi-word token lines, stored as (index of the following token, raw line)
    ranges: Tuple[Tuple[int, str], ...] = ()

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Mention:
    token_positions: Tuple[int, ...]
    head_position: int

    def __post_init__(self):
        positions = tuple(self.token_positions)
        object.__setattr__(self, "token_positions", positions)
        if not positions:
            raise AnnotationError("mention has no tokens")
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise AnnotationError(f"mention positions {positions} are not strictly increasing")
        if self.head_position not in positions:
            raise AnnotationError(f"head {self.head_position} lies outside mention {positions}")

    @property
    def start(self) -> int:
        return self.token_positions[0]

    @property
    def end(self) -> int:
        return self.token_positions[-1]

    @property
    def span(self) -> Tuple[int, int]:
        return self.start, self.end

    @property
    def is_continuous(self) -> bool:
        return self.end - self.start + 1 == len(self.token_positions)

    def runs(self) -> List[Tuple[int, int]]:
        """Maximal runs of consecutive positions as (first, last) pairs."""
        runs = []
        first = prev = self.token_positions[0]
        for position in self.token_positions[1:]:
            if position != prev + 1:
                runs.append((first, prev))
                first = position
            prev = position
        runs.append((first, prev))
        return runs

    def sort_key(self) -> Tuple[int, int, Tuple[int, ...]]:
        return self.start, self.end, self.token_positions


@dataclass(frozen=True)
class Entity:
    entity_id: str
    mentions: Tuple[Mention, ...]
    etype: str = ""

    def __post_init__(self):
        if not self.mentions:
            raise AnnotationError("entity has no mentions", self.entity_id)
        object.__setattr__(self, "mentions", tuple(sorted(self.mentions, key=Mention.sort_key)))


@dataclass(frozen=True)
class Document:
    doc_id: str
    sentences: Tuple[Sentence, ...]
    entities: Tuple[Entity, ...] = ()
    corpus_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        entities = sorted(self.entities, key=lambda e: (e.mentions[0].sort_key(), e.entity_id))
        object.__setattr__(self, "entities", tuple(entities))
        for entity in self.entities:
            for mention in entity.mentions:
                if mention.end >= len(self.tokens) or mention.start < 0:
                    raise AnnotationError(f"mention {mention.token_positions} is outside the document", entity.entity_id)
                if self.sentence_of(mention.start) != self.sentence_of(mention.end):
                    raise AnnotationError(f"mention {mention.token_positions} crosses a sentence boundary", entity.entity_id)

    @cached_property
    def tokens(self) -> Tuple[Token, ...]:
        return tuple(token for sentence in self.sentences for token in sentence.tokens)

    @cached_property
    def sentence_offsets(self) -> Tuple[int, ...]:
        offsets, total = [], 0
        for sentence in self.sentences:
            offsets.append(total)
            total += len(sentence)
        return tuple(offsets)

    @cached_property
    def _sentence_index(self) -> Tuple[int, ...]:
        return tuple(i for i, sentence in enumerate(self.sentences) for _ in sentence.tokens)

    def sentence_of(self, position: int) -> int:
        return self._sentence_index[position]

    def sentence_span(self, sentence: int) -> Tuple[int, int]:
        """Global (first, last) positions of a sentence; last < first for an empty sentence."""
        start = self.sentence_offsets[sentence]
        return start, start + len(self.sentences[sentence]) - 1

    def sentence_spans(self) -> List[Tuple[int, int]]:
        return [self.sentence_span(i) for i in range(len(self.sentences))]

    def locate(self, position: int) -> Tuple[int, int]:
        sentence = self.sentence_of(position)
        return sentence, position - self.sentence_offsets[sentence]

    @cached_property
    def parents(self) -> Dict[int, Optional[int]]:
        """Global position of each token's syntactic parent (None for roots and unattached tokens)."""
        parents: Dict[int, Optional[int]] = {}
        for sentence, offset in zip(self.sentences, self.sentence_offsets):
            by_word = {t.word_index: offset + i for i, t in enumerate(sentence.tokens) if not t.is_empty}
            for i, token in enumerate(sentence.tokens):
                parents[offset + i] = by_word.get(token.head) if token.head else None
        return parents

    def mentions(self) -> Iterator[Tuple[Entity, Mention]]:
        for entity in self.entities:
            for mention in entity.mentions:
                yield entity, mention

    def sentence_mentions(self, sentence: int) -> List[Tuple[Entity, Mention]]:
        return [(e, m) for e, m in self.mentions() if self.sentence_of(m.start) == sentence]

    def with_entities(self, entities: Sequence[Entity]) -> "Document":
        return replace(self, entities=tuple(entities))

    def with_tokens(self, tokens: Sequence[Token]) -> "Document":
        """Replace every token (same count, same order) keeping sentence boundaries."""
        if len(tokens) != len(self.tokens):
            raise ValueError(f"expected {len(self.tokens)} tokens, got {len(tokens)}")
        sentences = tuple(
            replace(sentence, tokens=tuple(tokens[offset:offset + len(sentence)]))
            for sentence, offset in zip(self.sentences, self.sentence_offsets)
        )
        return replace(self, sentences=sentences)
