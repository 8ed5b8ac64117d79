import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
import torch

from app.corefud.conllu_io import parse_corpus, serialize_corpus
from app.errors import CorefError, NoValidPathError
from app.linking.linker import gold_antecedents, links_to_clusters
from app.schemas import SynthSpec, TrainConfig
from app.services.sampling import logarithmic_weights
from app.services.scorer import score
from app.services.synth import generate
from app.services.training_service import TrainingService, build_examples
from app.tagging.crf import CrfParams, log_partition, viterbi_decode
from app.tagging.mention_codec import PUSH_INSTRUCTION, Tag, TagVocabulary, decode_tags, encode_mentions, pop

logger = logging.getLogger(__name__)

Span = Tuple[int, int]


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: List[str] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures


def random_span_set(rng: np.random.Generator, length: int, max_depth: int, attempts: int = 8) -> Set[Span]:
    """Distinct spans of one sentence (nested and crossing allowed), at most `max_depth` covering any token."""
    spans: Set[Span] = set()
    for _ in range(int(rng.integers(0, attempts + 1))):
        start = int(rng.integers(1, length + 1))
        end = int(rng.integers(start, length + 1))
        candidate = spans | {(start, end)}
        if all(sum(1 for s, e in candidate if s <= t <= e) <= max_depth for t in range(start, end + 1)):
            spans = candidate
    return spans


def random_crf(rng: np.random.Generator, size: int) -> CrfParams:
    """Random transitions and masks; index 0 is always a valid start, end and self-transition."""
    validity = rng.random((size, size)) < 0.6
    validity[0, 0] = True
    start = rng.random(size) < 0.6
    end = rng.random(size) < 0.6
    start[0] = end[0] = True
    return CrfParams(
        torch.as_tensor(rng.normal(size=(size, size))),
        torch.as_tensor(start),
        torch.as_tensor(end),
        torch.as_tensor(validity),
    )


def tag_vocabulary_crf(vocabulary: TagVocabulary, rng: np.random.Generator) -> CrfParams:
    size = len(vocabulary)
    return CrfParams(
        torch.as_tensor(rng.normal(size=(size, size))),
        torch.as_tensor(vocabulary.start_mask()),
        torch.as_tensor(vocabulary.end_mask()),
        torch.as_tensor(vocabulary.transition_mask()),
    )


def enumerate_paths(emissions: torch.Tensor, params: CrfParams):
    """Every valid path with its score, by exhaustive enumeration."""
    length, size = emissions.shape
    e = emissions.detach().double().numpy()
    w = params.transitions.detach().double().numpy()
    for path in itertools.product(range(size), repeat=length):
        if not params.start_mask[path[0]] or not params.end_mask[path[-1]]:
            continue
        if any(not params.validity_mask[a, b] for a, b in zip(path, path[1:])):
            continue
        yield list(path), sum(e[t, v] for t, v in enumerate(path)) + sum(w[a, b] for a, b in zip(path, path[1:]))


def brute_force_log_partition(emissions: torch.Tensor, params: CrfParams) -> Optional[float]:
    scores = [s for _, s in enumerate_paths(emissions, params)]
    if not scores:
        return None
    top = max(scores)
    return top + math.log(sum(math.exp(s - top) for s in scores))


def brute_force_viterbi(emissions: torch.Tensor, params: CrfParams) -> Optional[List[int]]:
    best: Optional[Tuple[float, List[int]]] = None
    for path, s in enumerate_paths(emissions, params):
        # paths arrive in lexicographic order, so strict improvement keeps the smallest among ties
        if best is None or s > best[0]:
            best = (s, path)
    return None if best is None else best[1]


def check_codec(cases: int = 10000, seed: int = 0, max_length: int = 30, max_depth: int = 4) -> SuiteResult:
    result = SuiteResult("codec round-trip")
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        length = int(rng.integers(1, max_length + 1))
        spans = random_span_set(rng, length, max_depth)
        decoded = decode_tags(encode_mentions(length, spans))
        if decoded != spans:
            result.failures.append(f"length {length}: {sorted(spans)} decoded as {sorted(decoded)}")
        result.cases += 1
    return result


def check_crf(cases: int = 500, seed: int = 0, max_length: int = 5, max_tags: int = 6, tolerance: float = 1e-9) -> SuiteResult:
    result = SuiteResult("CRF oracle")
    rng = np.random.default_rng(seed)
    fallback = [Tag(0), Tag(0, (PUSH_INSTRUCTION,)), Tag(1), Tag(1, (pop(1),)), Tag(0, (PUSH_INSTRUCTION, pop(1)))]
    for case in range(cases):
        length = int(rng.integers(1, max_length + 1))
        if case % 2:
            vocabulary = TagVocabulary(encode_mentions(length, random_span_set(rng, length, 1, attempts=2)))
            if len(vocabulary) > max_tags:
                vocabulary = TagVocabulary(fallback)
            params = tag_vocabulary_crf(vocabulary, rng)
        else:
            params = random_crf(rng, int(rng.integers(1, max_tags + 1)))
        emissions = torch.as_tensor(rng.normal(size=(length, params.start_mask.numel())))
        expected = brute_force_log_partition(emissions, params)
        result.cases += 1
        if expected is None:
            for operation in (log_partition, viterbi_decode):
                try:
                    operation(emissions, params)
                    result.failures.append(f"case {case}: {operation.__name__} accepted an instance without valid paths")
                except NoValidPathError:
                    pass
            continue
        actual = float(log_partition(emissions, params))
        if abs(actual - expected) > tolerance * max(1.0, abs(expected)):
            result.failures.append(f"case {case}: log partition {actual} != {expected}")
        path, best = viterbi_decode(emissions, params), brute_force_viterbi(emissions, params)
        if path != best:
            result.failures.append(f"case {case}: viterbi {path} != {best}")
    return result


def random_partition(rng: np.random.Generator, size: int) -> List[int]:
    labels: List[int] = []
    for _ in range(size):
        labels.append(int(rng.integers(0, (max(labels) + 2) if labels else 1)))
    return labels


def check_cluster_invariance(cases: int = 1000, seed: int = 0, max_mentions: int = 20) -> SuiteResult:
    """Any choice of gold antecedent per mention yields the gold partition."""
    result = SuiteResult("cluster invariance")
    rng = np.random.default_rng(seed)
    for case in range(cases):
        labels = random_partition(rng, int(rng.integers(1, max_mentions + 1)))
        expected = sorted(sorted(i for i, label in enumerate(labels) if label == k) for k in set(labels))
        targets = gold_antecedents(labels)
        links = [int(rng.choice(options)) for options in targets]
        clusters = sorted(sorted(c) for c in links_to_clusters(links))
        if clusters != expected:
            result.failures.append(f"case {case}: links {links} gave {clusters}, expected {expected}")
        result.cases += 1
    return result


def check_sampling() -> SuiteResult:
    result = SuiteResult("logarithmic weights")
    fixtures: Sequence[Tuple[Dict[str, int], Dict[str, float]]] = [
        ({"small": 457, "large": 40000}, {"small": 1.0, "large": 5.0}),
        ({"only": 1000}, {"only": 1.0}),
    ]
    for sizes, expected in fixtures:
        actual = logarithmic_weights(sizes)
        if actual != expected:
            result.failures.append(f"sizes {sizes}: weights {actual}, expected {expected}")
        result.cases += 1
    return result


def check_synthetic_corpus(seed: int = 0) -> SuiteResult:
    """Generated documents round-trip through CorefUD text, encode cleanly and score 100 against themselves."""
    result = SuiteResult("synthetic corpus")
    docs = generate(SynthSpec(documents=5, seed=seed, crossing_prob=0.5, empty_node_prob=0.3))
    try:
        if parse_corpus(serialize_corpus(docs), docs[0].corpus_id) != docs:
            result.failures.append("serialized corpus does not parse back to the generated documents")
    except CorefError as e:
        result.failures.append(f"serialized corpus does not parse: {e.detail}")
    for doc in docs:
        result.cases += 1
        try:
            for i, sentence in enumerate(doc.sentences):
                offset = doc.sentence_offsets[i]
                spans = [(m.start - offset + 1, m.end - offset + 1) for _, m in doc.sentence_mentions(i)]
                encode_mentions(len(sentence), spans)
            report = score(doc, doc, with_singletons=True)
        except CorefError as e:
            result.failures.append(f"document {doc.doc_id}: {e.detail}")
            continue
        if doc.entities and abs(report.conll - 100.0) > 1e-9:
            result.failures.append(f"document {doc.doc_id}: self-score {report.conll}")
    return result


def check_model_gradients(seed: int = 0, eps: float = 1e-6, tolerance: float = 1e-4, max_vocabulary: int = 10) -> SuiteResult:
    """Joint-loss gradients of a tiny float64 model against central differences, for every parameter entry."""
    result = SuiteResult("model gradients")
    cfg = TrainConfig(
        dim=8, layers=2, attention_heads=2, dropout=0.0, dtype="float64", window_size=64, right_context=8, seed=seed,
    )
    service = TrainingService(cfg)
    spec = SynthSpec(
        documents=2, sentences_per_doc=2, max_sentence_length=6, vocab_size=5, max_depth=2,
        crossing_prob=0.0, empty_node_prob=0.0, seed=seed,
    )
    docs = service.training_documents(generate(spec))
    model = service.build_model(docs)
    if len(model.tokens) > max_vocabulary:
        result.failures.append(f"token vocabulary has {len(model.tokens)} entries, more than {max_vocabulary}")
        return result
    examples = [e for doc in docs for e in build_examples(doc, model.tokens, model.tags, cfg)]
    batch = [max(examples, key=lambda e: len(e.mentions))]
    # dropout is 0, so train mode is deterministic
    model.train()
    model.zero_grad()
    model.loss(batch).backward()

    with torch.no_grad():
        for name, parameter in model.named_parameters():
            flat = parameter.data.view(-1)
            grad = torch.zeros_like(flat) if parameter.grad is None else parameter.grad.reshape(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                values = []
                for shift in (eps, -eps):
                    flat[i] = original + shift
                    values.append(model.loss(batch).item())
                flat[i] = original
                numeric = (values[0] - values[1]) / (2 * eps)
                analytic = grad[i].item()
                error = abs(analytic - numeric)
                if error > 1e-6 and error > tolerance * max(abs(analytic), abs(numeric)):
                    index = list(np.unravel_index(i, tuple(parameter.shape)))
                    result.failures.append(f"{name}{[int(k) for k in index]}: analytic {analytic:.6g}, numeric {numeric:.6g}")
                result.cases += 1
    return result


SUITES: Dict[str, Callable[[], SuiteResult]] = {
    "codec": check_codec,
    "crf": check_crf,
    "clusters": check_cluster_invariance,
    "sampling": check_sampling,
    "synth": check_synthetic_corpus,
    "gradients": check_model_gradients,
}


def run_selftest(names: Optional[Sequence[str]] = None) -> List[SuiteResult]:
    results = []
    for name in names or SUITES:
        started = time.perf_counter()
        try:
            suite = SUITES[name]()
        except CorefError as e:
            suite = SuiteResult(name, failures=[f"suite stopped: {e.detail}"])
        suite.seconds = time.perf_counter() - started
        level = logging.INFO if suite.passed else logging.ERROR
        logger.log(level, f"{suite.name}: {suite.cases} cases, {len(suite.failures)} failures in {suite.seconds:.2f}s")
        for failure in suite.failures[:10]:
            logger.error(f"{suite.name}: {failure}")
        results.append(suite)
    return results
