import pytest

from app.config import settings
from app.corefud.conllu_io import parse_document
from app.schemas import SynthSpec, TrainConfig
from app.services.synth import generate

SAMPLE_CONLLU = (
    "# newdoc id = doc1\n"
    "# sent_id = doc1-s1\n"
    "# text = Mary saw her sister\n"
    "1\tMary\tMary\tPROPN\t_\t_\t2\tnsubj\t_\tEntity=(e1-person-1)\n"
    "2\tsaw\tsee\tVERB\t_\t_\t0\troot\t_\t_\n"
    "3\ther\tshe\tPRON\t_\t_\t4\tnmod\t_\tEntity=(e2-person-2(e1-person-1)\n"
    "4\tsister\tsister\tNOUN\t_\t_\t2\tobj\t_\tEntity=e2)\n"
    "\n"
    "# sent_id = doc1-s2\n"
    "# text = Left early\n"
    "1\tLeft\tleave\tVERB\t_\t_\t0\troot\t_\t_\n"
    "1.1\t_\t#PersPron\tPRON\t_\t_\t_\t_\t1:nsubj\tEntity=(e2-person-1)\n"
    "2\tearly\tearly\tADV\t_\t_\t1\tadvmod\t_\t_\n"
    "\n"
)


@pytest.fixture
def sample_text():
    return SAMPLE_CONLLU


@pytest.fixture
def sample_doc():
    return parse_document(SAMPLE_CONLLU, corpus_id="en_test")


@pytest.fixture
def synth_docs():
    return generate(SynthSpec(documents=3, sentences_per_doc=4, max_sentence_length=8, seed=7, empty_node_prob=0.3))


@pytest.fixture
def tiny_config():
    return TrainConfig(
        dim=8,
        layers=1,
        attention_heads=2,
        dropout=0.0,
        batch_size=2,
        batches_per_epoch=2,
        epochs=2,
        peak_lr=1e-3,
        window_size=64,
        right_context=8,
    )


@pytest.fixture(autouse=True)
def run_directory(tmp_path, monkeypatch):
    """Manifests of stdout-only commands land in a per-test run directory."""
    path = tmp_path / "runs"
    monkeypatch.setattr(settings, "output_dir", str(path))
    return path
