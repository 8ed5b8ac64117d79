import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, FrozenSet, Hashable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from app.errors import FormatError
from app.schemas import MetricScore, ScoreReport
from app.utils.parallel import map_documents

if TYPE_CHECKING:
    from app.corefud.document import Document, Mention

logger = logging.getLogger(__name__)

Clusters = Dict[Hashable, Set[Hashable]]


def head_of_span(positions: Sequence[int], parents: Mapping[int, Optional[int]]) -> int:
    """First token whose syntactic parent lies outside the span (or is the root)."""
    inside = set(positions)
    for position in positions:
        parent = parents.get(position)
        if parent is None or parent not in inside:
            return position
    return positions[0]


@dataclass
class MentionAlignment:
    # response index -> key index
    mapping: Dict[int, int] = field(default_factory=dict)
    unmatched_key: List[int] = field(default_factory=list)
    unmatched_response: List[int] = field(default_factory=list)


def is_eligible(key: "Mention", response: "Mention") -> bool:
    """Response contains the key head and stays inside the key span."""
    return key.head_position in response.token_positions and set(response.token_positions) <= set(key.token_positions)


def align_mentions(key: Sequence["Mention"], response: Sequence["Mention"]) -> MentionAlignment:
    alignment = MentionAlignment()
    if not key or not response:
        alignment.unmatched_key = list(range(len(key)))
        alignment.unmatched_response = list(range(len(response)))
        return alignment

    # Exact matches cost 0, other eligible pairs prefer small keys then reading order;
    # ineligible pairs cost more than any set of eligible ones, so cardinality wins.
    longest = max(len(m.token_positions) for m in key)
    forbidden = min(len(key), len(response)) + 2.0
    costs = np.full((len(response), len(key)), forbidden)
    for r, mention in enumerate(response):
        for k, gold in enumerate(key):
            if not is_eligible(gold, mention):
                continue
            if mention.token_positions == gold.token_positions:
                costs[r, k] = 0.0
            else:
                rank = (len(gold.token_positions) * len(key) + k) / ((longest + 1) * len(key))
                costs[r, k] = 0.5 + 0.5 * rank

    rows, cols = linear_sum_assignment(costs)
    for r, k in zip(rows, cols):
        if costs[r, k] < forbidden:
            alignment.mapping[int(r)] = int(k)
    matched_keys = set(alignment.mapping.values())
    alignment.unmatched_key = [k for k in range(len(key)) if k not in matched_keys]
    alignment.unmatched_response = [r for r in range(len(response)) if r not in alignment.mapping]
    return alignment


def mapping_to_sets(mapping: Mapping[Hashable, Hashable]) -> Clusters:
    sets: Clusters = defaultdict(set)
    for item, cluster in mapping.items():
        sets[cluster].add(item)
    return dict(sets)


def sets_to_mapping(sets: Clusters) -> Dict[Hashable, Hashable]:
    return {item: cluster for cluster, items in sets.items() for item in items}


def _vilain(a: Clusters, b_mapping: Mapping[Hashable, Hashable]) -> Tuple[float, float]:
    numerator = denominator = 0
    for cluster in a.values():
        corresponding = set()
        unaligned = 0
        for item in cluster:
            if item in b_mapping:
                corresponding.add(b_mapping[item])
            else:
                unaligned += 1
        numerator += len(cluster) - unaligned - len(corresponding)
        denominator += len(cluster) - 1
    return numerator, denominator


def muc(key: Clusters, response: Clusters) -> Tuple[float, float, float, float]:
    """Link-based counts as (p_num, p_den, r_num, r_den)."""
    p_num, p_den = _vilain(response, sets_to_mapping(key))
    r_num, r_den = _vilain(key, sets_to_mapping(response))
    return p_num, p_den, r_num, r_den


def _b_cubed(a: Clusters, b: Clusters) -> Tuple[float, float]:
    b_mapping = sets_to_mapping(b)
    total = 0.0
    count = 0
    for cluster in a.values():
        for item in cluster:
            other = b.get(b_mapping.get(item), set())
            total += len(cluster & other) / len(cluster)
            count += 1
    return total, count


def b_cubed(key: Clusters, response: Clusters) -> Tuple[float, float, float, float]:
    p_num, p_den = _b_cubed(response, key)
    r_num, r_den = _b_cubed(key, response)
    return p_num, p_den, r_num, r_den


def dice(a: FrozenSet, b: FrozenSet) -> float:
    if a and b:
        return 2 * len(a & b) / (len(a) + len(b))
    return 0.0


def entity_ceaf(key: Clusters, response: Clusters) -> Tuple[float, float, float, float]:
    key_clusters = list(key.values())
    response_clusters = list(response.values())
    if not key_clusters or not response_clusters:
        return 0.0, len(response_clusters), 0.0, len(key_clusters)
    similarities = np.array([[dice(k, r) for r in response_clusters] for k in key_clusters])
    rows, cols = linear_sum_assignment(similarities, maximize=True)
    best = float(similarities[rows, cols].sum())
    return best, len(response_clusters), best, len(key_clusters)


def _prf(p_num: float, p_den: float, r_num: float, r_den: float) -> MetricScore:
    p = min(p_num / p_den, 1.0) if p_den > 0 else 0.0
    r = min(r_num / r_den, 1.0) if r_den > 0 else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return MetricScore(precision=100 * p, recall=100 * r, f1=100 * f1)


def _mentions_by_entity(doc: "Document", with_singletons: bool) -> Tuple[List["Mention"], List[int]]:
    mentions, owners = [], []
    for index, entity in enumerate(doc.entities):
        if not with_singletons and len(entity.mentions) == 1:
            continue
        for mention in entity.mentions:
            mentions.append(mention)
            owners.append(index)
    return mentions, owners


def document_clusters(key: "Document", response: "Document", with_singletons: bool) -> Tuple[Clusters, Clusters]:
    """Key and response clusters over one mention universe built from the alignment."""
    key_mentions, key_owners = _mentions_by_entity(key, with_singletons)
    response_mentions, response_owners = _mentions_by_entity(response, with_singletons)
    alignment = align_mentions(key_mentions, response_mentions)

    key_clusters = mapping_to_sets({("key", i): owner for i, owner in enumerate(key_owners)})
    response_mapping = {}
    for r, owner in enumerate(response_owners):
        identity = ("key", alignment.mapping[r]) if r in alignment.mapping else ("response", r)
        response_mapping[identity] = owner
    return key_clusters, mapping_to_sets(response_mapping)


class ScoreAccumulator:
    """Sums metric numerators and denominators across documents."""

    METRICS = {"muc": muc, "b3": b_cubed, "ceafe": entity_ceaf}

    def __init__(self, with_singletons: bool = False):
        self.with_singletons = with_singletons
        self.counts = {name: np.zeros(4) for name in self.METRICS}
        self.key_mentions = 0
        self.documents = 0

    def counts_for(self, key: "Document", response: "Document") -> Tuple[Dict[str, np.ndarray], int]:
        """Metric counts and key mention total of one document pair; does not touch the sums."""
        key_clusters, response_clusters = document_clusters(key, response, self.with_singletons)
        counts = {name: np.array(metric(key_clusters, response_clusters), dtype=float) for name, metric in self.METRICS.items()}
        return counts, sum(len(c) for c in key_clusters.values())

    def merge(self, counts: Dict[str, np.ndarray], key_mentions: int):
        for name in self.METRICS:
            self.counts[name] += counts[name]
        self.key_mentions += key_mentions
        self.documents += 1

    def add(self, key: "Document", response: "Document"):
        self.merge(*self.counts_for(key, response))

    def report(self) -> ScoreReport:
        scores = {name: _prf(*self.counts[name]) for name in self.METRICS}
        empty_key = self.key_mentions == 0
        if empty_key:
            logger.warning("Key contains no mentions to score; reporting zeros")
        conll = sum(s.f1 for s in scores.values()) / 3
        return ScoreReport(
            **scores,
            conll=min(conll, 100.0),
            with_singletons=self.with_singletons,
            empty_key=empty_key,
            documents=self.documents,
        )


def score(key: "Document", response: "Document", with_singletons: bool = False) -> ScoreReport:
    accumulator = ScoreAccumulator(with_singletons)
    accumulator.add(key, response)
    return accumulator.report()


def pair_documents(key_docs: Sequence["Document"], response_docs: Sequence["Document"]) -> List[Tuple["Document", "Document"]]:
    if len(key_docs) != len(response_docs):
        raise FormatError(f"key has {len(key_docs)} documents but response has {len(response_docs)}")
    for key, response in zip(key_docs, response_docs):
        if key.doc_id != response.doc_id or len(key.tokens) != len(response.tokens):
            raise FormatError(
                f"key document {key.doc_id!r} ({len(key.tokens)} tokens) does not match "
                f"response document {response.doc_id!r} ({len(response.tokens)} tokens)"
            )
    return list(zip(key_docs, response_docs))


def score_corpus(
    key_docs: Sequence["Document"],
    response_docs: Sequence["Document"],
    with_singletons: bool = False,
    jobs: int = 1,
) -> ScoreReport:
    """Documents are scored on `jobs` threads and summed in file order."""
    accumulator = ScoreAccumulator(with_singletons)
    pairs = pair_documents(key_docs, response_docs)
    for counts, key_mentions in map_documents(lambda pair: accumulator.counts_for(*pair), pairs, jobs):
        accumulator.merge(counts, key_mentions)
    return accumulator.report()


def macro_average(reports: Mapping[str, ScoreReport]) -> float:
    if not reports:
        return 0.0
    return sum(r.conll for r in reports.values()) / len(reports)


def report_to_dict(report: ScoreReport) -> Dict:
    def metric(m: MetricScore) -> Dict[str, float]:
        return {"p": m.precision, "r": m.recall, "f1": m.f1}

    return {
        "muc": metric(report.muc),
        "b3": metric(report.b3),
        "ceafe": metric(report.ceafe),
        "conll": report.conll,
        "with_singletons": report.with_singletons,
        "empty_key": report.empty_key,
        "documents": report.documents,
    }


def reports_to_json(reports: Mapping[str, ScoreReport]) -> str:
    payload = {corpus: report_to_dict(report) for corpus, report in reports.items()}
    if len(reports) > 1:
        payload["macro_average"] = {"conll": macro_average(reports)}
    return json.dumps(payload, indent=2, sort_keys=True)


def format_report_table(reports: Mapping[str, ScoreReport]) -> str:
    header = ["corpus", "MUC P", "MUC R", "MUC F1", "B3 P", "B3 R", "B3 F1", "CEAFe P", "CEAFe R", "CEAFe F1", "CoNLL"]
    rows = []
    for corpus, r in reports.items():
        values = [r.muc.precision, r.muc.recall, r.muc.f1, r.b3.precision, r.b3.recall, r.b3.f1,
                  r.ceafe.precision, r.ceafe.recall, r.ceafe.f1, r.conll]
        rows.append([corpus] + [f"{v:.2f}" for v in values])
    if len(reports) > 1:
        rows.append(["macro"] + [""] * 9 + [f"{macro_average(reports):.2f}"])
    widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[0]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(row))
             for row in [header] + rows]
    return "\n".join(lines)
