import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch
import torch.nn as nn

from app.errors import InvalidPathError, NoValidPathError
from app.tagging.mention_codec import TagVocabulary

logger = logging.getLogger(__name__)

# Log-space stand-in for -inf; keeps logsumexp and its gradient finite.
NEG = -1e9


@dataclass
class CrfParams:
    transitions: torch.Tensor  # [V, V]
    start_mask: torch.Tensor  # [V] bool
    end_mask: torch.Tensor  # [V] bool
    validity_mask: torch.Tensor  # [V, V] bool

    def masked_transitions(self) -> torch.Tensor:
        return torch.where(self.validity_mask, self.transitions, torch.full_like(self.transitions, NEG))

    def start_scores(self, like: torch.Tensor) -> torch.Tensor:
        return torch.where(self.start_mask, torch.zeros_like(like), torch.full_like(like, NEG))

    def end_scores(self, like: torch.Tensor) -> torch.Tensor:
        return torch.where(self.end_mask, torch.zeros_like(like), torch.full_like(like, NEG))


def log_partition(emissions: torch.Tensor, params: CrfParams) -> torch.Tensor:
    """Forward algorithm over emissions [T, V]."""
    if emissions.dim() != 2 or emissions.size(0) < 1:
        raise ValueError(f"expected emissions of shape [T>=1, V], got {tuple(emissions.shape)}")
    transitions = params.masked_transitions()
    alpha = emissions[0] + params.start_scores(emissions[0])
    for t in range(1, emissions.size(0)):
        alpha = torch.logsumexp(alpha[:, None] + transitions, dim=0) + emissions[t]
    result = torch.logsumexp(alpha + params.end_scores(alpha), dim=0)
    if result.item() < NEG / 2:
        raise NoValidPathError(f"no valid tag path through {emissions.size(0)} tokens")
    return result


def check_path(gold: Sequence[int], params: CrfParams) -> None:
    if not gold:
        raise InvalidPathError("empty path", 0)
    if not bool(params.start_mask[gold[0]]):
        raise InvalidPathError(f"tag {gold[0]} cannot start a sentence", 1)
    for t in range(1, len(gold)):
        if not bool(params.validity_mask[gold[t - 1], gold[t]]):
            raise InvalidPathError(f"tag {gold[t - 1]} cannot be followed by tag {gold[t]}", t + 1)
    if not bool(params.end_mask[gold[-1]]):
        raise InvalidPathError(f"tag {gold[-1]} cannot end a sentence", len(gold))


def path_score(emissions: torch.Tensor, gold: Sequence[int], params: CrfParams) -> torch.Tensor:
    index = torch.as_tensor(list(gold), dtype=torch.long, device=emissions.device)
    score = emissions.gather(1, index[:, None]).sum()
    if len(gold) > 1:
        score = score + params.transitions[index[:-1], index[1:]].sum()
    return score


def crf_nll(emissions: torch.Tensor, gold: Sequence[int], params: CrfParams) -> torch.Tensor:
    if len(gold) != emissions.size(0):
        raise ValueError(f"gold path has {len(gold)} tags for {emissions.size(0)} tokens")
    check_path(gold, params)
    return log_partition(emissions, params) - path_score(emissions, gold, params)


def viterbi_decode(emissions: torch.Tensor, params: CrfParams) -> List[int]:
    """Best valid path; among equal scores the lexicographically smallest index sequence."""
    scores = emissions.detach().cpu().double().numpy()
    transitions = params.masked_transitions().detach().cpu().double().numpy()
    start = np.where(params.start_mask.cpu().numpy(), 0.0, NEG)
    end = np.where(params.end_mask.cpu().numpy(), 0.0, NEG)
    length = scores.shape[0]

    # best[t, v]: best score of a suffix starting with tag v at token t
    best = np.empty_like(scores)
    best[-1] = scores[-1] + end
    for t in range(length - 2, -1, -1):
        best[t] = scores[t] + (transitions + best[t + 1][None, :]).max(axis=1)

    first = start + best[0]
    path = [int(np.argmax(first))]
    if first[path[0]] < NEG / 2:
        raise NoValidPathError(f"no valid tag path through {length} tokens")
    for t in range(1, length):
        path.append(int(np.argmax(transitions[path[-1]] + best[t])))
    return path


class LinearChainCRF(nn.Module):
    """CRF layer over a tag vocabulary with depth-derived validity masks."""

    def __init__(self, vocabulary: TagVocabulary, learn_transitions: bool = True):
        super().__init__()
        size = len(vocabulary)
        self.learn_transitions = learn_transitions
        self.register_buffer("start_mask", torch.as_tensor(vocabulary.start_mask()))
        self.register_buffer("end_mask", torch.as_tensor(vocabulary.end_mask()))
        self.register_buffer("validity_mask", torch.as_tensor(vocabulary.transition_mask()))
        if learn_transitions:
            self.transitions = nn.Parameter(torch.zeros(size, size))
        else:
            self.register_buffer("transitions", torch.zeros(size, size))

    def params(self) -> CrfParams:
        return CrfParams(self.transitions, self.start_mask, self.end_mask, self.validity_mask)

    def nll(self, emissions: torch.Tensor, gold: Sequence[int]) -> torch.Tensor:
        return crf_nll(emissions, gold, self.params())

    def decode(self, emissions: torch.Tensor) -> List[int]:
        return viterbi_decode(emissions, self.params())

    def extra_repr(self) -> str:
        return f"tags={self.start_mask.numel()}, learn_transitions={self.learn_transitions}"
