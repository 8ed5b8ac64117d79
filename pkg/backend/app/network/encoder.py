import logging
import math
from collections import Counter
from typing import Dict, Iterable, List, Optional, Sequence

import torch
import torch.nn as nn

from app.config import settings
from app.corefud.document import Document
from app.services.sampling import corpus_token

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
EMPTY = "<empty>"
RESERVED = (PAD, UNK, EMPTY)


class TokenVocabulary:
    """Surfaced forms seen in training plus reserved markers; index 0 is padding."""

    def __init__(self, forms: Iterable[str], corpus_ids: Iterable[str] = (), marker: Optional[str] = None):
        self.marker = marker or settings.empty_node_marker
        self.items: List[str] = list(RESERVED)
        self.items += [corpus_token(c) for c in sorted(set(corpus_ids))]
        self.items += [f for f in dict.fromkeys(forms) if f not in self.items]
        self.index: Dict[str, int] = {item: i for i, item in enumerate(self.items)}

    @classmethod
    def build(cls, docs: Iterable[Document], min_count: int = 1, corpus_ids: Iterable[str] = (),
              marker: Optional[str] = None) -> "TokenVocabulary":
        counts = Counter(token.surfaced_form or token.form for doc in docs for token in doc.tokens)
        forms = sorted(f for f, n in counts.items() if n >= min_count)
        vocabulary = cls(forms, corpus_ids, marker)
        logger.info(f"Token vocabulary: {len(vocabulary)} entries from {len(counts)} distinct forms")
        return vocabulary

    def __len__(self) -> int:
        return len(self.items)

    def lookup(self, form: str) -> int:
        if form in self.index:
            return self.index[form]
        return self.index[EMPTY] if form.startswith(self.marker) else self.index[UNK]

    def encode(self, forms: Sequence[str]) -> List[int]:
        return [self.lookup(f) for f in forms]

    def corpus_index(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def to_list(self) -> List[str]:
        return list(self.items)

    @classmethod
    def from_list(cls, items: Sequence[str], marker: Optional[str] = None) -> "TokenVocabulary":
        vocabulary = cls((), (), marker)
        vocabulary.items = list(items)
        vocabulary.index = {item: i for i, item in enumerate(vocabulary.items)}
        return vocabulary


def sinusoidal_positions(length: int, dim: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    position = torch.arange(length, dtype=dtype)[:, None]
    frequencies = torch.exp(torch.arange(0, dim, 2, dtype=dtype) * (-math.log(10000.0) / dim))
    signal = torch.zeros(length, dim, dtype=dtype)
    signal[:, 0::2] = torch.sin(position * frequencies)
    signal[:, 1::2] = torch.cos(position * frequencies[: dim // 2])
    return signal


class CompactEncoder(nn.Module):
    """Self-attention encoder over whole surfaced words.

    Every token is one encoder position, so windows are built with unit piece counts and no
    pooling is needed; `build_windows` takes per-token piece counts for encoders that split words.
    """

    def __init__(self, vocab_size: int, dim: int = 64, layers: int = 2, heads: int = 4,
                 dropout: float = 0.1, sparse: bool = False):
        super().__init__()
        self.dim = dim
        self.embedding = nn.Embedding(vocab_size, dim, padding_idx=0, sparse=sparse)
        self.dropout = nn.Dropout(dropout)
        layer = nn.TransformerEncoderLayer(
            d_model=dim, nhead=heads, dim_feedforward=4 * dim, dropout=dropout, batch_first=True,
        )
        self.layers = nn.TransformerEncoder(layer, num_layers=layers, enable_nested_tensor=False) if layers else None
        self.norm = nn.LayerNorm(dim)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        """[T] token ids -> [T, D] contextual vectors."""
        weight = self.embedding.weight
        x = self.embedding(token_ids) * math.sqrt(self.dim)
        x = x + sinusoidal_positions(token_ids.size(0), self.dim, weight.dtype).to(weight.device)
        x = self.dropout(x)
        if self.layers is not None:
            x = self.layers(x[None])[0]
        return self.norm(x)
