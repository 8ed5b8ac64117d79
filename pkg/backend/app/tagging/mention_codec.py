import logging
import re
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from app.config import settings
from app.corefud.document import Document, Entity, Mention, Sentence, Token
from app.errors import DecodeError, EncodingError, FormatError

logger = logging.getLogger(__name__)

PUSH = "PUSH"
POP = "POP"

Span = Tuple[int, int]

TAG_PATTERN = re.compile(r"^(?P<depth>\d+):(?P<body>.*)$")
CANONICAL_ORDER = re.compile(r"^P*U*P*$")


@dataclass(frozen=True)
class Instruction:
    kind: str
    pop_index: int = 0

    def __post_init__(self):
        if self.kind == PUSH and self.pop_index != 0:
            raise EncodingError("PUSH takes no pop index")
        if self.kind == POP and self.pop_index < 1:
            raise EncodingError(f"pop index must be at least 1, got {self.pop_index}")
        if self.kind not in (PUSH, POP):
            raise EncodingError(f"unknown instruction {self.kind!r}")

    def __str__(self) -> str:
        return PUSH if self.kind == PUSH else f"{POP}{self.pop_index}"


PUSH_INSTRUCTION = Instruction(PUSH)


def pop(index: int) -> Instruction:
    return Instruction(POP, index)


@dataclass(frozen=True)
class Tag:
    depth_before: int
    instructions: Tuple[Instruction, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))
        if self.depth_before < 0:
            raise EncodingError(f"negative depth {self.depth_before}")
        kinds = "".join("U" if i.kind == PUSH else "P" for i in self.instructions)
        if not CANONICAL_ORDER.match(kinds):
            raise EncodingError(f"instructions {self} do not follow POP* PUSH* POP*")
        depth = self.depth_before
        for instruction in self.instructions:
            if instruction.kind == PUSH:
                depth += 1
            elif instruction.pop_index > depth:
                raise EncodingError(f"{self} pops index {instruction.pop_index} from a stack of {depth}")
            else:
                depth -= 1

    @property
    def depth_after(self) -> int:
        pushes = sum(1 for i in self.instructions if i.kind == PUSH)
        return self.depth_before + pushes - (len(self.instructions) - pushes)

    @property
    def is_empty(self) -> bool:
        return not self.instructions

    def __str__(self) -> str:
        return format_tag(self)


def format_tag(tag: Tag) -> str:
    return f"{tag.depth_before}:" + ",".join(str(i) for i in tag.instructions)


def parse_tag(text: str) -> Tag:
    match = TAG_PATTERN.match(text.strip())
    if not match:
        raise FormatError(f"malformed tag {text!r}")
    instructions = []
    for item in filter(None, match["body"].split(",")):
        if item == PUSH:
            instructions.append(PUSH_INSTRUCTION)
        elif item.startswith(POP) and item[len(POP):].isdigit():
            instructions.append(pop(int(item[len(POP):])))
        else:
            raise FormatError(f"malformed instruction {item!r} in tag {text!r}")
    try:
        return Tag(int(match["depth"]), tuple(instructions))
    except EncodingError as e:
        raise FormatError(f"invalid tag {text!r}: {e.detail}")


def encode_mentions(sentence_length: int, spans: Iterable[Span]) -> List[Tag]:
    """Canonical stack-instruction tags for 1-based inclusive spans of one sentence."""
    spans = list(spans)
    if len(set(spans)) != len(spans):
        duplicates = sorted({s for s in spans if spans.count(s) > 1})
        raise EncodingError(f"duplicate spans {duplicates}")
    for start, end in spans:
        if not 1 <= start <= end <= sentence_length:
            raise EncodingError(f"span ({start}, {end}) outside a sentence of {sentence_length} tokens")

    starting: Dict[int, List[Span]] = {}
    for span in spans:
        starting.setdefault(span[0], []).append(span)

    stack: List[Span] = []
    tags = []
    for t in range(1, sentence_length + 1):
        depth_before = len(stack)
        instructions = []
        # Close every open mention ending here, most recently opened first.
        for k in range(len(stack) - 1, -1, -1):
            if stack[k][1] == t:
                instructions.append(pop(len(stack) - k))
                del stack[k]
        opened = sorted(starting.get(t, []), key=lambda s: -s[1])
        for span in opened:
            instructions.append(PUSH_INSTRUCTION)
            stack.append(span)
        if opened and opened[-1][1] == t:
            instructions.append(pop(1))
            stack.pop()
        tags.append(Tag(depth_before, tuple(instructions)))
    return tags


def decode_tags_with_report(tags: Sequence[Tag]) -> Tuple[Set[Span], int]:
    """Simulate the stack; returns the decoded spans and the number of spans left open."""
    stack: List[int] = []
    spans: Set[Span] = set()
    for t, tag in enumerate(tags, start=1):
        if tag.depth_before != len(stack):
            raise DecodeError(f"tag {tag} declares depth {tag.depth_before} but the stack holds {len(stack)}", t)
        for instruction in tag.instructions:
            if instruction.kind == PUSH:
                stack.append(t)
            elif instruction.pop_index > len(stack):
                raise DecodeError(f"POP{instruction.pop_index} on a stack of {len(stack)}", t)
            else:
                spans.add((stack.pop(len(stack) - instruction.pop_index), t))
    if stack:
        logger.warning(f"Discarded {len(stack)} mentions still open at the end of the sentence")
    return spans, len(stack)


def decode_tags(tags: Sequence[Tag]) -> Set[Span]:
    return decode_tags_with_report(tags)[0]


def reduce_discontinuous(mention: Mention) -> Mention:
    if mention.is_continuous:
        return mention
    for first, last in mention.runs():
        if first <= mention.head_position <= last:
            return Mention(tuple(range(first, last + 1)), mention.head_position)
    raise AssertionError("head outside every run")


def reduce_to_head(mention: Mention) -> Mention:
    return Mention((mention.head_position,), mention.head_position)


def sentence_mention_spans(doc: Document, sentence: int) -> List[Tuple[Span, str]]:
    """Sentence-local 1-based spans with their entity ids; discontinuous mentions reduced, duplicates dropped."""
    offset = doc.sentence_offsets[sentence]
    found: List[Tuple[Span, str]] = []
    seen: Set[Span] = set()
    for entity, mention in sorted(doc.sentence_mentions(sentence), key=lambda em: (em[1].sort_key(), em[0].entity_id)):
        reduced = reduce_discontinuous(mention)
        span = (reduced.start - offset + 1, reduced.end - offset + 1)
        if span in seen:
            logger.warning(
                f"Dropping duplicate mention {span} of entity {entity.entity_id} "
                f"in document {doc.doc_id!r}, sentence {sentence}"
            )
            continue
        seen.add(span)
        found.append((span, entity.entity_id))
    return found


def sentence_spans(doc: Document, sentence: int) -> List[Span]:
    return [span for span, _ in sentence_mention_spans(doc, sentence)]


def encode_sentence(doc: Document, sentence: int) -> List[Tag]:
    return encode_mentions(len(doc.sentences[sentence]), sentence_spans(doc, sentence))


def encode_document(doc: Document) -> List[List[Tag]]:
    return [encode_sentence(doc, i) for i in range(len(doc.sentences))]


class TagVocabulary:
    """Indexed tags; empty tags for every depth come first, so index 0 is the depth-0 empty tag."""

    def __init__(self, tags: Iterable[Tag]):
        observed = set(tags)
        self.max_depth = max((t.depth_before for t in observed), default=0)
        empties = [Tag(d) for d in range(self.max_depth + 1)]
        rest = sorted((t for t in observed if not t.is_empty), key=lambda t: (t.depth_before, format_tag(t)))
        self.tags: List[Tag] = empties + rest
        self.index: Dict[Tag, int] = {tag: i for i, tag in enumerate(self.tags)}

    def __len__(self) -> int:
        return len(self.tags)

    def __contains__(self, tag: Tag) -> bool:
        return tag in self.index

    def compatible(self, a: Tag, b: Tag) -> bool:
        return a.depth_after == b.depth_before

    def transition_mask(self) -> np.ndarray:
        after = np.array([t.depth_after for t in self.tags])
        before = np.array([t.depth_before for t in self.tags])
        return after[:, None] == before[None, :]

    def start_mask(self) -> np.ndarray:
        return np.array([t.depth_before == 0 for t in self.tags])

    def end_mask(self) -> np.ndarray:
        return np.array([t.depth_after == 0 for t in self.tags])

    def encode(self, tags: Sequence[Tag]) -> List[int]:
        indices = []
        for position, tag in enumerate(tags, start=1):
            if tag not in self.index:
                raise EncodingError(f"tag {tag} at token {position} is not in the vocabulary")
            indices.append(self.index[tag])
        return indices

    def decode(self, indices: Sequence[int]) -> List[Tag]:
        return [self.tags[i] for i in indices]

    def to_list(self) -> List[str]:
        return [format_tag(t) for t in self.tags]

    @classmethod
    def from_list(cls, texts: Sequence[str]) -> "TagVocabulary":
        vocabulary = cls(parse_tag(t) for t in texts)
        if vocabulary.to_list() != list(texts):
            raise FormatError("stored tag vocabulary is not in canonical order")
        return vocabulary


def build_tag_vocabulary(corpus: Iterable[Sequence[Tag]]) -> TagVocabulary:
    return TagVocabulary(tag for sequence in corpus for tag in sequence)


# Tag dumps: "# sent_id = ..." then one "form<TAB>tag" line per token, blank line between sentences.
def write_tag_dump(docs: Sequence[Document]) -> str:
    lines = []
    for doc in docs:
        lines.append(f"# newdoc id = {doc.doc_id}")
        for i, sentence in enumerate(doc.sentences):
            lines.append(f"# sent_id = {sentence.sentence_id}")
            for token, tag in zip(sentence.tokens, encode_sentence(doc, i)):
                lines.append(f"{token.surfaced_form or token.form}\t{format_tag(tag)}")
            lines.append("")
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class TaggedSentence:
    sentence_id: str
    forms: List[str]
    tags: List[Tag]
    doc_id: Optional[str] = None


def read_tag_dump(text: str) -> List[TaggedSentence]:
    sentences: List[TaggedSentence] = []
    current: Optional[TaggedSentence] = None
    doc_id = None
    for number, line in enumerate(text.replace("\r\n", "\n").split("\n"), start=1):
        if not line.strip():
            current = None
            continue
        if line.startswith("# newdoc id ="):
            doc_id = line.split("=", 1)[1].strip()
            continue
        if line.startswith("# sent_id ="):
            current = TaggedSentence(line.split("=", 1)[1].strip(), [], [], doc_id)
            sentences.append(current)
            doc_id = None
            continue
        if line.startswith("#"):
            continue
        if current is None:
            current = TaggedSentence("", [], [], doc_id)
            sentences.append(current)
            doc_id = None
        try:
            form, tag = line.split("\t")
        except ValueError:
            raise FormatError(f"line {number}: expected 'form<TAB>tag', got {line!r}")
        current.forms.append(form)
        current.tags.append(parse_tag(tag))
    return sentences


def head_reduced(doc: Document) -> Document:
    """Every mention replaced by its head token; mentions of one entity sharing a head collapse."""
    entities = [
        replace(e, mentions=tuple(dict.fromkeys(reduce_to_head(m) for m in e.mentions)))
        for e in doc.entities
    ]
    return doc.with_entities(entities)


def tagged_documents(sentences: Sequence[TaggedSentence], marker: Optional[str] = None, corpus_id: str = "") -> List[Document]:
    """CorefUD documents rebuilt from a tag dump; every decoded mention becomes its own entity.

    Marker-prefixed forms turn back into empty nodes after the preceding word.
    """
    marker = marker or settings.empty_node_marker
    groups: List[List[TaggedSentence]] = []
    for sentence in sentences:
        if not groups or sentence.doc_id is not None:
            groups.append([])
        groups[-1].append(sentence)

    docs = []
    for group in groups:
        doc_id = group[0].doc_id
        built: List[Sentence] = []
        spans: List[Span] = []
        offset = 0
        for index, tagged in enumerate(group):
            tokens: List[Token] = []
            word = empty = 0
            for form in tagged.forms:
                if form.startswith(marker):
                    empty += 1
                    text = form[len(marker):] or "_"
                    tokens.append(Token(text, word, empty_index=empty, surfaced_form=text))
                else:
                    word, empty = word + 1, 0
                    tokens.append(Token(form, word, surfaced_form=form))
            comments = [("newdoc id", doc_id)] if index == 0 and doc_id is not None else []
            if tagged.sentence_id:
                comments.append(("sent_id", tagged.sentence_id))
            built.append(Sentence(tuple(tokens), tagged.sentence_id, tuple(comments)))
            spans += [(offset + s - 1, offset + e - 1) for s, e in sorted(decode_tags(tagged.tags))]
            offset += len(tokens)
        entities = [
            Entity(f"m{k}", (Mention(tuple(range(s, e + 1)), s),))
            for k, (s, e) in enumerate(spans, start=1)
        ]
        docs.append(Document(doc_id or "", tuple(built), tuple(entities), corpus_id))
    return docs
