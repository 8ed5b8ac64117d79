import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import torch
import torch.nn as nn
from torch.optim.lr_scheduler import LambdaLR

from app.corefud.document import Document
from app.corefud.empty_nodes import surface_empty_nodes
from app.errors import TrainingError
from app.network.encoder import TokenVocabulary
from app.network.model import JointModel, WindowExample
from app.schemas import DatasetSize, EpochRecord, MixSpec, ScoreReport, TrainConfig
from app.services.prediction_service import PredictionService, window_example
from app.services.sampling import sample_stream
from app.services.scorer import macro_average, score_corpus
from app.services.windowing import build_windows
from app.tagging.mention_codec import (
    TagVocabulary,
    build_tag_vocabulary,
    encode_document,
    encode_sentence,
    sentence_mention_spans,
)

logger = logging.getLogger(__name__)

Span = Tuple[int, int]
State = Dict[str, torch.Tensor]


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Slanted triangular schedule: 0 -> peak over the first ceil(warmup_fraction * total) steps, then back to 0."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step == 0 or step == total_steps:
        return 0.0
    # total_steps >= 2 here; the peak sits strictly inside the schedule
    warm = min(max(1, math.ceil(cfg.warmup_fraction * total_steps)), total_steps - 1)
    if step <= warm:
        return cfg.peak_lr * step / warm
    return cfg.peak_lr * (total_steps - step) / (total_steps - warm)


def build_optimizers(
    module: nn.Module,
    cfg: TrainConfig,
    total_steps: int,
    sparse_parameters: Sequence[nn.Parameter] = (),
) -> Tuple[List[torch.optim.Optimizer], List[LambdaLR]]:
    """Adam (or SparseAdam for `sparse_parameters`) driven by lr_at.

    Update k (0-based) runs at lr_at(k + 1, total_steps + 1), so no update is taken at rate 0.
    """
    sparse_ids = {id(p) for p in sparse_parameters}
    dense = [p for p in module.parameters() if p.requires_grad and id(p) not in sparse_ids]
    betas = (cfg.beta1, cfg.beta2)
    optimizers: List[torch.optim.Optimizer] = []
    if dense:
        optimizers.append(torch.optim.Adam(dense, lr=cfg.peak_lr, betas=betas))
    if sparse_parameters:
        optimizers.append(torch.optim.SparseAdam(list(sparse_parameters), lr=cfg.peak_lr, betas=betas))

    def factor(k: int) -> float:
        return lr_at(min(k + 1, total_steps + 1), total_steps + 1, cfg) / cfg.peak_lr

    schedulers = [LambdaLR(optimizer, factor) for optimizer in optimizers]
    return optimizers, schedulers


def document_mention_spans(doc: Document) -> List[Tuple[Span, str]]:
    """Gold mentions as inclusive document spans with entity ids, in reading order."""
    spans = []
    for i in range(len(doc.sentences)):
        offset = doc.sentence_offsets[i]
        spans += [((offset + s - 1, offset + e - 1), eid) for (s, e), eid in sentence_mention_spans(doc, i)]
    return sorted(spans)


def build_examples(doc: Document, tokens: TokenVocabulary, tags: TagVocabulary, cfg: TrainConfig) -> List[WindowExample]:
    """One training example per sentence window of a surfaced document."""
    reserved = 1 if cfg.use_corpus_id else 0
    gold = document_mention_spans(doc)
    examples = []
    for window in build_windows(doc, cfg.window_config(), reserved=reserved):
        example = window_example(doc, window, tokens, cfg.use_corpus_id)
        example.gold_tags = tags.encode(encode_sentence(doc, window.sentence))
        pool = [(span, eid) for span, eid in gold if window.in_pool(span)]
        example.mentions = [(s - window.start, e - window.start) for (s, e), _ in pool]
        example.entity_ids = [eid for _, eid in pool]
        examples.append(example)
    return examples


def evaluate(
    docs: Sequence[Document], model: JointModel, cfg: TrainConfig, jobs: int = 1,
) -> Tuple[Dict[str, ScoreReport], float]:
    """Per-corpus scores of the model's predictions and their macro CoNLL average."""
    by_corpus: Dict[str, List[Document]] = defaultdict(list)
    for doc in docs:
        by_corpus[doc.corpus_id].append(doc)
    predictor = PredictionService(model)
    reports = {}
    for corpus_id in sorted(by_corpus):
        keys = by_corpus[corpus_id]
        responses = predictor.predict_corpus(keys, jobs)
        reports[corpus_id] = score_corpus(keys, responses, cfg.with_singletons, jobs)
    return reports, macro_average(reports)


def snapshot(model: nn.Module) -> State:
    return {name: value.detach().clone() for name, value in model.state_dict().items()}


@dataclass
class TrainResult:
    model: JointModel
    final_state: State
    best_state: State
    best_epoch: int
    history: List[EpochRecord] = field(default_factory=list)

    def load_best(self) -> JointModel:
        self.model.load_state_dict(self.best_state)
        return self.model

    def load_final(self) -> JointModel:
        self.model.load_state_dict(self.final_state)
        return self.model


class TrainingService:
    def __init__(self, cfg: TrainConfig, marker: Optional[str] = None, jobs: int = 1):
        self.cfg = cfg
        self.marker = marker
        self.jobs = jobs

    def training_documents(self, docs: Sequence[Document]) -> List[Document]:
        excluded = set(self.cfg.exclude)
        kept = [surface_empty_nodes(doc, self.marker) for doc in docs if doc.corpus_id not in excluded]
        if not kept:
            raise TrainingError(f"no training documents left after excluding {sorted(excluded)}")
        return kept

    def build_model(self, docs: Sequence[Document]) -> JointModel:
        torch.manual_seed(self.cfg.seed)
        corpus_ids = sorted({doc.corpus_id for doc in docs})
        tokens = TokenVocabulary.build(docs, self.cfg.min_count, corpus_ids, self.marker)
        tags = build_tag_vocabulary(tags for doc in docs for tags in encode_document(doc))
        logger.info(f"Tag vocabulary: {len(tags)} tags, maximum depth {tags.max_depth}")
        return JointModel(tokens, tags, self.cfg)

    def example_pools(self, docs: Sequence[Document], model: JointModel) -> Dict[str, List[WindowExample]]:
        pools: Dict[str, List[WindowExample]] = defaultdict(list)
        for doc in docs:
            pools[doc.corpus_id].extend(build_examples(doc, model.tokens, model.tags, self.cfg))
        return dict(pools)

    def mix_spec(self, pools: Mapping[str, Sequence[WindowExample]]) -> MixSpec:
        return MixSpec(
            datasets=[DatasetSize(corpus_id=c, size=len(pool)) for c, pool in sorted(pools.items()) if pool],
            strategy=self.cfg.mixing,
            target=self.cfg.half_focus_target,
            use_corpus_id=self.cfg.use_corpus_id,
            exclude=self.cfg.exclude,
            seed=self.cfg.seed,
        )

    def train(
        self,
        train_docs: Sequence[Document],
        dev_docs: Sequence[Document] = (),
        on_epoch: Optional[Callable[[EpochRecord, JointModel], None]] = None,
    ) -> TrainResult:
        cfg = self.cfg
        docs = self.training_documents(train_docs)
        model = self.build_model(docs)
        pools = self.example_pools(docs, model)
        stream = sample_stream(self.mix_spec(pools), pools)

        total = cfg.epochs * cfg.batches_per_epoch
        sparse = [model.encoder.embedding.weight] if cfg.lazy_adam else []
        optimizers, schedulers = build_optimizers(model, cfg, total, sparse)
        logger.info(
            f"Training on {sum(len(p) for p in pools.values())} windows from {len(docs)} documents "
            f"({len(pools)} corpora) for {total} updates"
        )

        history: List[EpochRecord] = []
        best_state, best_epoch, best_score = None, 0, -1.0
        step = 0
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            losses = []
            for _ in range(cfg.batches_per_epoch):
                samples = [next(stream) for _ in range(cfg.batch_size)]
                for optimizer in optimizers:
                    optimizer.zero_grad()
                loss = model.loss([s.example for s in samples])
                if not torch.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss {loss.item()} at epoch {epoch}, update {step + 1} "
                        f"(lr {schedulers[0].get_last_lr()[0]:.3g}, corpora {sorted({s.corpus_id for s in samples})})"
                    )
                loss.backward()
                for optimizer in optimizers:
                    optimizer.step()
                for scheduler in schedulers:
                    scheduler.step()
                losses.append(loss.item())
                step += 1

            record = EpochRecord(epoch=epoch, loss=sum(losses) / len(losses))
            if dev_docs:
                reports, macro = evaluate(dev_docs, model, cfg, self.jobs)
                record.dev_conll = {corpus_id: report.conll for corpus_id, report in reports.items()}
                record.dev_macro = macro
                if macro > best_score:
                    best_score, best_epoch, best_state = macro, epoch, snapshot(model)
            history.append(record)
            logger.info(
                f"Epoch {epoch}/{cfg.epochs}: loss {record.loss:.4f}"
                + (f", dev CoNLL {record.dev_macro:.2f}" if record.dev_macro is not None else "")
            )
            if on_epoch is not None:
                on_epoch(record, model)

        final_state = snapshot(model)
        if best_state is None:
            best_state, best_epoch = final_state, cfg.epochs
        logger.info(f"Best epoch {best_epoch}" + (f" with dev CoNLL {best_score:.2f}" if dev_docs else " (no dev data)"))
        model.eval()
        return TrainResult(model, final_state, best_state, best_epoch, history)
