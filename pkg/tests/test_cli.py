import json
import math

import pytest

from fusionseq.ablation import ATTENTION_SETS, FEATURE_SETS, FUSION_SET, cell_configs, cells, load_grid
from fusionseq.cli import main
from fusionseq.config import SEED_ENV, build, dump, load_train_config, parse_pairs, seed_override
from fusionseq.errors import ConfigError
from fusionseq.model import ModelConfig
from fusionseq.training import TrainConfig

TINY = """\
# small enough for unit tests
d = 8
d_e = 8
d_a = 16
n_heads = 2
att_dim = 8
decoder = attention
fusion = conv1x1
multi_stage = true
beam_size = 2
max_answer_len = 4
lr = 0.005
batch_size = 16
max_epochs = 1
max_updates = 4
dropout_keep = 0.9
revision_updates = 3
seed = 7
"""


# --- config files ------------------------------------------------------------------

def test_parse_pairs():
    assert parse_pairs("a = 1\n# c\n\nb= x y  # tail\n") == {"a": "1", "b": "x y"}
    for bad in ("novalue", "= 3", "a = 1\na = 2"):
        with pytest.raises(ConfigError):
            parse_pairs(bad)


def test_build_coerces_types():
    mc = build(ModelConfig, {"d": "16", "multi_stage": "yes", "fusion": "sum"})
    assert mc.d == 16 and mc.multi_stage is True and mc.fusion == "sum"
    tc = build(TrainConfig, {"lr": "1e-3"}, TrainConfig(seed=4))
    assert tc.lr == 1e-3 and tc.seed == 4
    with pytest.raises(ConfigError):
        build(ModelConfig, {"d": "many"})
    with pytest.raises(ConfigError):
        build(ModelConfig, {"multi_stage": "maybe"})
    with pytest.raises(ConfigError):
        build(ModelConfig, {"colour": "red"})


def test_dump_round_trips():
    mc = ModelConfig(d=12, multi_stage=True)
    assert build(ModelConfig, parse_pairs(dump(mc))) == mc


def test_load_train_config(tmp_path, monkeypatch):
    path = tmp_path / "c.cfg"
    path.write_text(TINY)
    monkeypatch.delenv(SEED_ENV, raising=False)
    mc, tc = load_train_config(path)
    assert mc.decoder == "attention" and tc.max_updates == 4 and tc.seed == 7
    monkeypatch.setenv(SEED_ENV, "11")
    assert load_train_config(path)[1].seed == 11
    monkeypatch.setenv(SEED_ENV, "x")
    with pytest.raises(ConfigError):
        seed_override(0)
    path.write_text(TINY + "fusion = nope\n")
    with pytest.raises(ConfigError):
        load_train_config(path)


# --- ablation grids --------------------------------------------------------------

def test_named_grids():
    grid, fixed = load_grid("full")
    assert len(cells(grid)) == len(FUSION_SET) * len(FEATURE_SETS) * len(ATTENTION_SETS)
    assert fixed == {"decoder": "attention"}
    assert len(cells(load_grid("fusion")[0])) == 4


def test_grid_file(tmp_path):
    path = tmp_path / "g.txt"
    path.write_text("fusion = weight, sum\nlr = 0.1, 0.01, 0.001\n")
    grid, _ = load_grid(str(path))
    assert len(cells(grid)) == 6
    with pytest.raises(ConfigError):
        load_grid(str(tmp_path / "missing.txt"))


def test_cell_configs():
    mc, tc = cell_configs({"features": "dialogue", "lr": "0.1"}, ModelConfig(), TrainConfig(), {})
    assert (mc.use_caption, mc.use_dialogue, mc.use_vggish) == (False, True, False)
    assert tc.lr == 0.1
    with pytest.raises(ConfigError):
        cell_configs({"features": "smell"}, ModelConfig(), TrainConfig(), {})
    with pytest.raises(ConfigError):
        cell_configs({"bogus": "1"}, ModelConfig(), TrainConfig(), {})


# --- command line ------------------------------------------------------------------

@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    (tmp_path / "model.cfg").write_text(TINY)
    (tmp_path / "spec.cfg").write_text("seed = 3\nn_rounds = 2\n")
    return tmp_path


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["train", "--bogus"]) == 2
    assert "required: --config" in capsys.readouterr().err


def test_missing_checkpoint(workspace, capsys):
    code = main(["evaluate", "--ckpt", str(workspace / "none.ckpt"), "--data", str(workspace),
                 "--report", str(workspace / "r.json")])
    assert code == 1
    assert "checkpoint not found" in capsys.readouterr().err


def test_bad_spec_is_runtime_error(workspace):
    (workspace / "bad.cfg").write_text("caption_len = 2\n")
    assert main(["synth", "--spec", str(workspace / "bad.cfg"), "--out", str(workspace / "d")]) == 1


def _pipeline(ws, tag):
    data, ckpt, report = ws / f"data{tag}", ws / f"m{tag}.ckpt", ws / f"r{tag}.json"
    assert main(["synth", "--spec", str(ws / "spec.cfg"), "--out", str(data),
                 "--n-train", "40", "--n-dev", "10", "--n-test", "10"]) == 0
    assert main(["train", "--config", str(ws / "model.cfg"), "--data", str(data), "--out", str(ckpt)]) == 0
    assert main(["evaluate", "--ckpt", str(ckpt), "--data", str(data), "--report", str(report),
                 "--revise", "--generations", str(ws / f"g{tag}.jsonl")]) == 0
    return data, ckpt, report


def test_end_to_end_and_deterministic(workspace, capsys):
    data, ckpt, report = _pipeline(workspace, "a")
    _, _, report_b = _pipeline(workspace, "b")
    values = json.loads(report.read_text())
    assert set(values) == {"bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider", "n_examples"}
    assert all(math.isfinite(v) for v in values.values())
    assert values["n_examples"] == 20
    assert report.read_bytes() == report_b.read_bytes()
    lines = (workspace / "ga.jsonl").read_text().splitlines()
    assert len(lines) == 20 and "answer_tokens" in json.loads(lines[0])

    context = workspace / "ctx.json"
    context.write_text((data / "test.jsonl").read_text().splitlines()[0])
    capsys.readouterr()
    assert main(["generate", "--ckpt", str(ckpt), "--question", "what about k1",
                 "--context", str(context), "--revise"]) == 0
    out = capsys.readouterr().out
    assert out.endswith("\n") and len(out.splitlines()) == 1


def test_train_on_single_file(workspace):
    data = workspace / "d"
    assert main(["synth", "--out", str(data), "--n-train", "20", "--n-dev", "0", "--n-test", "0"]) == 0
    assert main(["train", "--config", str(workspace / "model.cfg"), "--data", str(data / "train.jsonl"),
                 "--out", str(workspace / "m.ckpt")]) == 0


def test_ablate_fusion_grid(workspace, capsys):
    report = workspace / "ab.json"
    code = main(["ablate", "--grid", "fusion", "--config", str(workspace / "model.cfg"),
                 "--spec", str(workspace / "spec.cfg"), "--n-train", "10", "--n-dev", "4",
                 "--report", str(report)])
    assert code == 0
    rows = json.loads(report.read_text())
    assert [r["fusion"] for r in rows] == list(FUSION_SET)
    assert all(r["status"] == "ok" for r in rows)
    table = capsys.readouterr().out.splitlines()
    assert len(table) == 1 + len(FUSION_SET) and table[0].startswith("fusion")


def test_ablate_invalid_cell_keeps_row(workspace, capsys):
    grid = workspace / "g.txt"
    grid.write_text("attention_values = caption, vggish\nfeatures = dialogue\n")
    report = workspace / "ab.json"
    assert main(["ablate", "--grid", str(grid), "--config", str(workspace / "model.cfg"),
                 "--spec", str(workspace / "spec.cfg"), "--n-train", "10", "--n-dev", "4",
                 "--report", str(report)]) == 0
    rows = json.loads(report.read_text())
    assert len(rows) == 2
    assert all(r["status"].startswith("invalid") for r in rows)


def test_feature_width_follows_data_unless_set(workspace):
    data = workspace / "d"
    assert main(["synth", "--spec", str(workspace / "spec.cfg"), "--out", str(data),
                 "--n-train", "20", "--n-dev", "4", "--n-test", "4"]) == 0
    no_width = workspace / "nw.cfg"
    no_width.write_text(TINY.replace("d_a = 16\n", ""))
    assert main(["train", "--config", str(no_width), "--data", str(data),
                 "--out", str(workspace / "m.ckpt")]) == 0
    wrong = workspace / "wrong.cfg"
    wrong.write_text(TINY.replace("d_a = 16", "d_a = 12"))
    assert main(["train", "--config", str(wrong), "--data", str(data),
                 "--out", str(workspace / "w.ckpt")]) == 1


def test_ablate_without_config_uses_spec_widths(workspace, monkeypatch):
    from fusionseq import cli

    monkeypatch.setattr(cli, "ModelConfig", lambda: ModelConfig(d=8, d_e=8, n_heads=2, att_dim=8,
                                                                max_answer_len=4))
    monkeypatch.setattr(cli, "TrainConfig", lambda: TrainConfig(max_epochs=1, max_updates=2,
                                                                revision_updates=0))
    report = workspace / "ab.json"
    assert main(["ablate", "--grid", "fusion", "--spec", str(workspace / "spec.cfg"),
                 "--n-train", "8", "--n-dev", "4", "--report", str(report)]) == 0
    assert all(r["status"] == "ok" for r in json.loads(report.read_text()))
