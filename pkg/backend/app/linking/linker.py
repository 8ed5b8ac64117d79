import logging
from typing import Hashable, List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from app.errors import TrainingError

logger = logging.getLogger(__name__)


def mention_representations(hidden: torch.Tensor, spans: Sequence[Sequence[int]]) -> torch.Tensor:
    """Concatenated first and last token vectors, [M, 2D] from hidden [T, D] and window-local spans."""
    if not spans:
        return hidden.new_zeros((0, 2 * hidden.size(-1)))
    index = torch.as_tensor([[s, e] for s, e in spans], dtype=torch.long, device=hidden.device)
    return torch.cat([hidden[index[:, 0]], hidden[index[:, 1]]], dim=-1)


class LinkerHeads(nn.Module):
    """Query and key projections: 2D -> 4D (ReLU) -> D without bias."""

    def __init__(self, dim: int, scale: bool = False):
        super().__init__()
        self.dim = dim
        self.scale = scale
        self.query = nn.Sequential(nn.Linear(2 * dim, 4 * dim), nn.ReLU(), nn.Linear(4 * dim, dim, bias=False))
        self.key = nn.Sequential(nn.Linear(2 * dim, 4 * dim), nn.ReLU(), nn.Linear(4 * dim, dim, bias=False))

    def forward(self, mentions: torch.Tensor) -> torch.Tensor:
        return antecedent_logits(mentions, self)


def antecedent_logits(mentions: torch.Tensor, heads: LinkerHeads) -> torch.Tensor:
    """Masked dot-product scores [M, M]; entry (i, j) is -inf for j > i."""
    if mentions.dim() != 2 or mentions.size(-1) != 2 * heads.dim:
        raise ValueError(f"expected mention representations [M, {2 * heads.dim}], got {tuple(mentions.shape)}")
    scores = heads.query(mentions) @ heads.key(mentions).T
    if heads.scale:
        scores = scores / heads.dim ** 0.5
    allowed = torch.ones(scores.shape, dtype=torch.bool, device=scores.device).tril()
    return scores.masked_fill(~allowed, float("-inf"))


def gold_antecedents(entity_ids: Sequence[Optional[Hashable]], cap: Optional[int] = None) -> List[List[int]]:
    """G(i): earlier mentions of the same entity (the `cap` most recent), or [i] when there are none."""
    targets = []
    for i, entity in enumerate(entity_ids):
        earlier = [j for j in range(i) if entity is not None and entity_ids[j] == entity]
        if cap is not None:
            earlier = earlier[-cap:]
        targets.append(earlier or [i])
    return targets


def antecedent_loss(logits: torch.Tensor, targets: Sequence[Sequence[int]], mode: str = "uniform") -> torch.Tensor:
    if logits.size(0) != len(targets):
        raise TrainingError(f"{len(targets)} antecedent targets for {logits.size(0)} mentions")
    if logits.size(0) == 0:
        return logits.new_zeros(())
    gold = torch.zeros(logits.shape, dtype=torch.bool, device=logits.device)
    for i, antecedents in enumerate(targets):
        if not antecedents:
            raise TrainingError(f"mention {i} has no gold antecedent")
        if any(j > i or j < 0 for j in antecedents):
            raise TrainingError(f"mention {i} has antecedents {list(antecedents)} after itself")
        gold[i, list(antecedents)] = True

    log_probs = torch.log_softmax(logits, dim=-1)
    if mode == "uniform":
        weights = gold.to(logits.dtype) / gold.sum(dim=-1, keepdim=True)
        per_mention = -(torch.where(gold, log_probs, torch.zeros_like(log_probs)) * weights).sum(dim=-1)
    elif mode == "marginal":
        masked = torch.where(gold, log_probs, torch.full_like(log_probs, float("-inf")))
        per_mention = -torch.logsumexp(masked, dim=-1)
    else:
        raise ValueError(f"unknown linking loss {mode!r}")
    return per_mention.mean()


def decode_links(logits: torch.Tensor) -> List[int]:
    """Most probable antecedent per mention; ties go to the most recent candidate."""
    scores = logits.detach().cpu().double().numpy()
    links = []
    for i in range(scores.shape[0]):
        row = scores[i, : i + 1]
        links.append(i - int(np.argmax(row[::-1])))
    return links


def links_to_clusters(links: Sequence[int], identities: Optional[Sequence[Hashable]] = None) -> List[List[Hashable]]:
    """Connected components of the antecedent graph, ordered by their first mention."""
    count = len(links)
    if identities is None:
        identities = list(range(count))
    if count == 0:
        return []
    for i, j in enumerate(links):
        if not 0 <= j <= i:
            raise ValueError(f"mention {i} links to {j}, which is not an earlier mention")
    graph = coo_matrix((np.ones(count), (np.arange(count), np.asarray(links))), shape=(count, count))
    _, labels = connected_components(graph, directed=False)
    clusters = {}
    for i, label in enumerate(labels):
        clusters.setdefault(label, []).append(identities[i])
    return list(clusters.values())
