import json

import pytest
import yaml

from app.config import DEFAULT_EMPTY_NODE_MARKER as MARKER
from app.corefud.conllu_io import read_corpus_file
from app.errors import ConfigurationError
from app.main import main
from app.presets import preset_values, resolve_train_config


@pytest.fixture
def corpus_file(tmp_path, sample_text):
    path = tmp_path / "en_test-corefud-dev.conllu"
    path.write_text(sample_text, encoding="utf-8")
    return path


def test_score_identity(corpus_file, tmp_path, capsys):
    scores = tmp_path / "scores.json"
    assert main(["score", "--key", str(corpus_file), "--response", str(corpus_file), "--json", str(scores)]) == 0
    assert "100.00" in capsys.readouterr().out
    assert json.loads(scores.read_text())["en_test"]["conll"] == pytest.approx(100.0)


def test_tag_dump_pipeline_is_stable(corpus_file, tmp_path):
    dump, decoded, again = tmp_path / "tags.txt", tmp_path / "decoded.conllu", tmp_path / "again.txt"
    assert main(["tags", "encode", str(corpus_file), "-o", str(dump)]) == 0
    assert main(["tags", "decode", str(dump), "-o", str(decoded)]) == 0
    assert main(["tags", "encode", str(decoded), "-o", str(again)]) == 0
    assert again.read_text() == dump.read_text()
    assert f"{MARKER}#PersPron\t0:PUSH,POP1" in dump.read_text()


def test_convert_surface_and_restore(corpus_file, tmp_path, sample_text):
    surfaced, restored = tmp_path / "surfaced.conllu", tmp_path / "restored.conllu"
    assert main(["convert", str(corpus_file), "--surface", "-o", str(surfaced)]) == 0
    assert f"1.1\t{MARKER}#PersPron" in surfaced.read_text()
    assert main(["convert", str(surfaced), "--restore", "-o", str(restored)]) == 0
    assert restored.read_text() == sample_text


def test_custom_marker(corpus_file, tmp_path):
    surfaced = tmp_path / "surfaced.conllu"
    assert main(["--marker", "@", "convert", str(corpus_file), "--surface", "-o", str(surfaced)]) == 0
    assert "1.1\t@#PersPron" in surfaced.read_text()


def test_synth_writes_a_corpus(tmp_path):
    path = tmp_path / "synth-corefud-train.conllu"
    assert main(["synth", "--output", str(path), "--documents", "3", "--seed", "1"]) == 0
    docs = read_corpus_file(path)
    assert len(docs) == 3
    assert docs[0].corpus_id == "synth"


def test_mix_reports_ratios(tmp_path, capsys):
    config = tmp_path / "mix.yaml"
    config.write_text("datasets:\n  small: 457\n  large: 40000\n")
    assert main(["mix", "--config", str(config), "--samples", "600"]) == 0
    summary = yaml.safe_load(capsys.readouterr().out)
    assert summary["weights"] == {"small": 1.0, "large": 5.0}
    assert sum(summary["counts"].values()) == 600


def test_selftest_suite(capsys):
    assert main(["selftest", "--suite", "sampling"]) == 0
    assert "ok" in capsys.readouterr().out


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exit_info:
        main(["score", "--no-such-flag"])
    assert exit_info.value.code == 2
    with pytest.raises(SystemExit):
        main([])


def test_data_errors_exit_1(corpus_file, tmp_path, capsys):
    broken = tmp_path / "broken.conllu"
    broken.write_text("1\tword\n\n")
    assert main(["score", "--key", str(corpus_file), "--response", str(broken)]) == 1
    assert "error: line 1" in capsys.readouterr().err
    assert main(["score", "--key", str(tmp_path / "missing.conllu"), "--response", str(broken)]) == 1


def test_unknown_preset_is_rejected(corpus_file, capsys):
    with pytest.raises(SystemExit):
        main(["train", "--train", str(corpus_file), "--preset", "no-such-preset"])


def test_train_predict_score(tmp_path, capsys):
    corpus = tmp_path / "synth-corefud-train.conllu"
    main(["synth", "--output", str(corpus), "--documents", "2", "--seed", "3"])
    run = tmp_path / "run"
    flags = ["--epochs", "1", "--batches-per-epoch", "2", "--batch-size", "2", "--dim", "8", "--layers", "1",
             "--attention-heads", "2", "--window-size", "64", "--right-context", "8"]
    assert main(["train", "--train", str(corpus), "--dev", str(corpus), "--output-dir", str(run)] + flags) == 0

    manifest = yaml.safe_load((run / "run_manifest.yaml").read_text())
    assert manifest["command"] == "train"
    assert manifest["config"]["dim"] == 8
    assert len(manifest["fingerprint"]) == 64
    assert [r["epoch"] for r in json.loads((run / "history.json").read_text())] == [1]

    predicted = tmp_path / "synth-predicted.conllu"
    assert main(["predict", "--model", str(run / "model_best.ckpt"), "--input", str(corpus), "--output", str(predicted)]) == 0
    assert len(read_corpus_file(predicted)) == 2
    predict_manifest = yaml.safe_load((tmp_path / "synth-predicted.conllu.manifest.yaml").read_text(encoding="utf-8"))
    assert predict_manifest["config"]["train_config"]["dim"] == 8
    assert main(["score", "--key", str(corpus), "--response", str(predicted)]) == 0


def test_config_precedence(tmp_path):
    cfg = resolve_train_config(
        ["toy-overfit", "right-context-0"],
        {"right_context": 20, "epochs": 3},
        {"epochs": 5, "dim": None},
    )
    assert cfg.peak_lr == 1e-3
    assert cfg.right_context == 20
    assert cfg.epochs == 5
    assert cfg.dim == 64


def test_presets_combine_left_to_right():
    assert preset_values(["right-context-0", "right-context-100"]) == {"right_context": 100}
    with pytest.raises(ConfigurationError, match="unknown preset"):
        preset_values(["fastest"])


def test_preset_requirements():
    with pytest.raises(ConfigurationError, match="exclude"):
        resolve_train_config(["zero-shot"])
    assert resolve_train_config(["zero-shot"], flag_values={"exclude": ["cs_pdt"]}).exclude == ["cs_pdt"]
    with pytest.raises(ConfigurationError, match="target"):
        resolve_train_config(["half-focus"])
    with pytest.raises(ConfigurationError, match="invalid training configuration"):
        resolve_train_config(file_values={"dim": 10, "attention_heads": 4})


def test_every_output_gets_a_manifest(corpus_file, tmp_path, run_directory):
    surfaced, dump, scores = tmp_path / "surfaced.conllu", tmp_path / "tags.txt", tmp_path / "scores.json"
    synth = tmp_path / "synth-corefud-dev.conllu"
    config = tmp_path / "mix.yaml"
    config.write_text("datasets:\n  small: 457\n  large: 40000\n")
    assert main(["convert", str(corpus_file), "--surface", "-o", str(surfaced)]) == 0
    assert main(["tags", "encode", str(corpus_file), "-o", str(dump)]) == 0
    assert main(["score", "--key", str(corpus_file), "--response", str(corpus_file), "--json", str(scores)]) == 0
    assert main(["synth", "--output", str(synth), "--documents", "2"]) == 0
    assert main(["mix", "--config", str(config)]) == 0

    written = {
        "convert": tmp_path / "surfaced.conllu.manifest.yaml",
        "tags-encode": tmp_path / "tags.txt.manifest.yaml",
        "score": tmp_path / "scores.json.manifest.yaml",
        "synth": tmp_path / "synth-corefud-dev.conllu.manifest.yaml",
        "mix": run_directory / "mix.manifest.yaml",
    }
    for command, path in written.items():
        manifest = yaml.safe_load(path.read_text(encoding="utf-8"))
        assert manifest["command"] == command
        assert len(manifest["fingerprint"]) == 64
    assert yaml.safe_load(written["convert"].read_text(encoding="utf-8"))["config"]["direction"] == "surface"
    assert yaml.safe_load(written["synth"].read_text(encoding="utf-8"))["config"]["documents"] == 2
    assert yaml.safe_load(written["mix"].read_text(encoding="utf-8"))["config"]["datasets"][0]["corpus_id"] == "small"


def test_job_count_does_not_change_outputs(tmp_path):
    corpus = tmp_path / "synth-corefud-dev.conllu"
    assert main(["synth", "--output", str(corpus), "--documents", "4", "--seed", "5"]) == 0
    outputs = {}
    for jobs in ("1", "2"):
        surfaced, scores = tmp_path / f"surfaced-{jobs}.conllu", tmp_path / f"scores-{jobs}.json"
        assert main(["--jobs", jobs, "convert", str(corpus), "--surface", "-o", str(surfaced)]) == 0
        assert main(["--jobs", jobs, "score", "--key", str(corpus), "--response", str(surfaced),
                     "--json", str(scores)]) == 0
        outputs[jobs] = (surfaced.read_text(encoding="utf-8"), scores.read_text(encoding="utf-8"))
    assert outputs["1"] == outputs["2"]
