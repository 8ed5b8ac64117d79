import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from app.corefud.document import Document
from app.errors import WindowError
from app.linking.linker import links_to_clusters
from app.schemas import WindowConfig

logger = logging.getLogger(__name__)

Span = Tuple[int, int]


@dataclass(frozen=True)
class Window:
    sentence: int
    start: int  # first document position in the window
    end: int  # last document position in the window
    focus: Span  # (first, last) document positions of the focus sentence
    pieces: Tuple[int, ...]  # encoder pieces per window token
    reserved: int = 0

    @property
    def positions(self) -> range:
        return range(self.start, self.end + 1)

    @property
    def left_size(self) -> int:
        return sum(self.pieces[: self.focus[0] - self.start])

    @property
    def right_size(self) -> int:
        return sum(self.pieces[self.focus[1] - self.start + 1:])

    @property
    def encoder_length(self) -> int:
        return self.reserved + sum(self.pieces)

    def __len__(self) -> int:
        return self.end - self.start + 1

    def local(self, position: int) -> int:
        return position - self.start

    def contains(self, span: Span) -> bool:
        return self.start <= span[0] and span[1] <= self.end

    def in_pool(self, span: Span) -> bool:
        """Mentions visible to the linker: inside the window and not after the focus sentence."""
        return self.start <= span[0] and span[1] <= self.focus[1]

    def in_focus(self, span: Span) -> bool:
        return self.focus[0] <= span[0] and span[1] <= self.focus[1]


def build_windows(
    doc: Document,
    cfg: Optional[WindowConfig] = None,
    reserved: int = 0,
    pieces: Optional[Sequence[int]] = None,
) -> List[Window]:
    """One window per sentence: the sentence, up to `right_context` positions after it, left context
    before it, and any budget the left side cannot use handed back to the right side."""
    cfg = cfg or WindowConfig()
    budget = cfg.window_size - reserved
    if budget < 1:
        raise WindowError(f"window of {cfg.window_size} positions leaves no room after {reserved} reserved")
    counts = list(pieces) if pieces is not None else [1] * len(doc.tokens)
    if len(counts) != len(doc.tokens):
        raise WindowError(f"piece counts cover {len(counts)} of {len(doc.tokens)} tokens")

    windows = []
    total = len(counts)
    for index, sentence in enumerate(doc.sentences):
        first, last = doc.sentence_span(index)
        if last < first:
            continue
        used = sum(counts[first:last + 1])
        if used > budget:
            raise WindowError(
                f"sentence {sentence.sentence_id or index!r} of document {doc.doc_id!r} needs {used} positions, "
                f"more than the {budget} available"
            )
        end = last
        right_limit = min(cfg.right_context, budget - used)
        right = 0
        while end + 1 < total and right + counts[end + 1] <= right_limit:
            end += 1
            right += counts[end]
        start = first
        left = 0
        while start > 0 and used + right + left + counts[start - 1] <= budget:
            start -= 1
            left += counts[start]
        while end + 1 < total and used + right + left + counts[end + 1] <= budget:
            end += 1
            right += counts[end]
        windows.append(Window(index, start, end, (first, last), tuple(counts[start:end + 1]), reserved))
    logger.debug(f"Built {len(windows)} windows for document {doc.doc_id!r}")
    return windows


@dataclass
class WindowPrediction:
    window: Window
    # document spans of the window's mentions, in (start, end) order
    mentions: List[Span] = field(default_factory=list)
    # antecedent decisions made by this window: mention index -> antecedent index
    links: Dict[int, int] = field(default_factory=dict)


def stitch_predictions(predictions: Iterable[WindowPrediction]) -> List[List[Span]]:
    """Document-level clusters from per-window links; a later window overrides an earlier one per mention."""
    antecedent: Dict[Span, Span] = {}
    spans = set()
    for prediction in sorted(predictions, key=lambda p: (p.window.sentence, p.window.start)):
        spans.update(prediction.mentions)
        for i, j in prediction.links.items():
            mention, target = prediction.mentions[i], prediction.mentions[j]
            previous = antecedent.get(mention)
            if previous is not None and previous != target:
                logger.info(
                    f"Mention {mention} relinked from {previous} to {target} by window of sentence {prediction.window.sentence}"
                )
            antecedent[mention] = target

    ordered = sorted(spans)
    index = {span: i for i, span in enumerate(ordered)}
    links = [index[antecedent.get(span, span)] for span in ordered]
    return links_to_clusters(links, ordered)
