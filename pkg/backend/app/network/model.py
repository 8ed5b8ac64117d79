import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from app.linking.linker import LinkerHeads, antecedent_loss, decode_links, gold_antecedents, mention_representations
from app.network.encoder import CompactEncoder, TokenVocabulary
from app.schemas import TrainConfig
from app.tagging.crf import LinearChainCRF
from app.tagging.mention_codec import TagVocabulary, decode_tags

logger = logging.getLogger(__name__)

Span = Tuple[int, int]


@dataclass
class WindowExample:
    """Model input for one window; spans are window-local, inclusive."""

    token_ids: List[int]
    focus: Span
    reserved: int = 0
    corpus_id: str = ""
    gold_tags: Optional[List[int]] = None
    mentions: List[Span] = field(default_factory=list)
    entity_ids: List[Optional[str]] = field(default_factory=list)


@dataclass
class WindowOutput:
    tag_logits: torch.Tensor  # [focus length, V]
    mention_vectors: torch.Tensor  # [M, 2D]
    antecedent_logits: torch.Tensor  # [M, M]


class DetectionHead(nn.Module):
    def __init__(self, dim: int, tags: int):
        super().__init__()
        self.hidden = nn.Linear(dim, 4 * dim)
        self.output = nn.Linear(4 * dim, tags)

    def forward(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.output(torch.relu(self.hidden(hidden)))


class JointModel(nn.Module):
    """Shared encoder feeding a tag classifier with CRF and an antecedent linker."""

    def __init__(self, tokens: TokenVocabulary, tags: TagVocabulary, cfg: TrainConfig):
        super().__init__()
        self.tokens = tokens
        self.tags = tags
        self.cfg = cfg
        self.encoder = CompactEncoder(
            len(tokens), cfg.dim, cfg.layers, cfg.attention_heads, cfg.dropout, sparse=cfg.lazy_adam,
        )
        self.detection = DetectionHead(cfg.dim, len(tags))
        self.crf = LinearChainCRF(tags, cfg.learn_transitions)
        self.linker = LinkerHeads(cfg.dim, cfg.scale_attention)
        if cfg.dtype == "float64":
            self.double()

    def encode(self, example: WindowExample) -> torch.Tensor:
        """Contextual vectors for the window's tokens (reserved slots dropped)."""
        ids = torch.as_tensor(example.token_ids, dtype=torch.long, device=self.encoder.embedding.weight.device)
        return self.encoder(ids)[example.reserved:]

    def forward(self, example: WindowExample, mentions: Optional[Sequence[Span]] = None) -> WindowOutput:
        hidden = self.encode(example)
        first, last = example.focus
        tag_logits = self.detection(hidden[first:last + 1])
        vectors = mention_representations(hidden, example.mentions if mentions is None else mentions)
        return WindowOutput(tag_logits, vectors, self.linker(vectors))

    def window_losses(self, example: WindowExample) -> Tuple[torch.Tensor, torch.Tensor]:
        """(CRF negative log-likelihood, antecedent loss) against the example's gold annotation."""
        output = self(example)
        detection = self.crf.nll(output.tag_logits, example.gold_tags)
        targets = gold_antecedents(example.entity_ids, self.cfg.at_most_k_links)
        linking = antecedent_loss(output.antecedent_logits, targets, self.cfg.linking_loss)
        return detection, linking

    def loss(self, batch: Sequence[WindowExample]) -> torch.Tensor:
        total = None
        for example in batch:
            detection, linking = self.window_losses(example)
            value = self.cfg.detection_weight * detection + self.cfg.linking_weight * linking
            total = value if total is None else total + value
        return total / len(batch)

    @torch.no_grad()
    def infer(self, example: WindowExample, context: Sequence[Span] = ()) -> Tuple[List[int], List[Span], List[int]]:
        """Detect focus mentions, then link them against `context` (earlier window-local mentions).

        Returns the Viterbi tag path, the ordered mention pool and one antecedent index per pool mention.
        """
        hidden = self.encode(example)
        first, last = example.focus
        path = self.crf.decode(self.detection(hidden[first:last + 1]))
        spans = decode_tags(self.tags.decode(path))
        focus_mentions = sorted((first + s - 1, first + e - 1) for s, e in spans)
        pool = sorted(set(context)) + focus_mentions
        links = decode_links(self.linker(mention_representations(hidden, pool)))
        return path, pool, links
