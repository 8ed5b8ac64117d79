import logging
from typing import List, Optional, Sequence

from app.corefud.document import Document, Entity, Mention
from app.corefud.empty_nodes import restore_empty_nodes, surface_empty_nodes
from app.network.encoder import TokenVocabulary
from app.network.model import JointModel, WindowExample
from app.services.sampling import corpus_token
from app.services.scorer import head_of_span
from app.services.windowing import Window, WindowPrediction, build_windows, stitch_predictions
from app.tagging.mention_codec import head_reduced
from app.utils.parallel import map_documents

logger = logging.getLogger(__name__)


def window_example(doc: Document, window: Window, tokens: TokenVocabulary, use_corpus_id: bool) -> WindowExample:
    """Token ids for a surfaced document window, optionally led by the corpus token."""
    forms = [doc.tokens[p].surfaced_form or doc.tokens[p].form for p in window.positions]
    ids = tokens.encode(forms)
    reserved = 0
    if use_corpus_id:
        ids = [tokens.corpus_index(corpus_token(doc.corpus_id))] + ids
        reserved = 1
    focus = (window.local(window.focus[0]), window.local(window.focus[1]))
    return WindowExample(token_ids=ids, focus=focus, reserved=reserved, corpus_id=doc.corpus_id)


class PredictionService:
    def __init__(self, model: JointModel, marker: Optional[str] = None):
        self.model = model
        self.cfg = model.cfg
        self.marker = marker or model.tokens.marker

    def predict(self, doc: Document) -> Document:
        if not doc.sentences:
            return doc.with_entities([])
        self.model.eval()
        surfaced = surface_empty_nodes(doc, self.marker)
        reserved = 1 if self.cfg.use_corpus_id else 0
        windows = build_windows(surfaced, self.cfg.window_config(), reserved=reserved)

        predicted = []
        predictions = []
        for window in windows:
            example = window_example(surfaced, window, self.model.tokens, self.cfg.use_corpus_id)
            context = [(s - window.start, e - window.start) for s, e in predicted if window.in_pool((s, e))]
            _, pool, links = self.model.infer(example, context)
            spans = [(s + window.start, e + window.start) for s, e in pool]
            focus = range(len(context), len(pool))
            predictions.append(WindowPrediction(window, spans, {i: links[i] for i in focus}))
            predicted.extend(spans[len(context):])

        entities = []
        for k, cluster in enumerate(stitch_predictions(predictions), start=1):
            mentions = []
            for start, end in cluster:
                positions = tuple(range(start, end + 1))
                mentions.append(Mention(positions, head_of_span(positions, surfaced.parents)))
            entities.append(Entity(f"e{k}", tuple(mentions)))

        result = surfaced.with_entities(entities)
        if self.cfg.reduce_to_heads:
            result = head_reduced(result)
        logger.debug(f"Predicted {len(predicted)} mentions in {len(entities)} entities for document {doc.doc_id!r}")
        return restore_empty_nodes(result, self.marker)

    def predict_corpus(self, docs: Sequence[Document], jobs: int = 1) -> List[Document]:
        self.model.eval()
        return map_documents(self.predict, docs, jobs)
