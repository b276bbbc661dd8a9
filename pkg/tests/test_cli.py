"""Command-line surface: exit codes, config precedence, run artifacts.

The expensive fixtures (corpus, one micro training run, a 3-cell ablation)
are module-scoped; everything else reuses them.
"""

import csv
import dataclasses
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from plita import cli
from plita.data.corpus import read_corpus, write_corpus

MICRO_CONFIG = """\
# smallest run that exercises every stage
iterations = 6
batch_size = 2
n_inputs = 3
window_s = 40
checkpoint_every = 3
encoder.input_len = 1000
encoder.patch = 100
encoder.dim = 16
encoder.depth = 1
encoder.heads = 2
heads.proj_hidden = 32
heads.proj_out = 16
heads.pred_hidden = 16
"""


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "corpus"
    rc = cli.main(
        ["gen", "--out", str(out), "--subjects", "4", "--duration", "120", "--seed", "8"]
    )
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def micro_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "micro.cfg"
    path.write_text(MICRO_CONFIG)
    return path


@pytest.fixture(scope="module")
def train_dir(tmp_path_factory, corpus_dir, micro_config_file):
    out = tmp_path_factory.mktemp("cli") / "run"
    rc = cli.main(
        ["train", "--corpus", str(corpus_dir), "--out", str(out),
         "--config", str(micro_config_file)]
    )
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(train_dir):
    path = train_dir / "checkpoint_000006.bin"
    assert path.is_file()
    return path


# ------------------------------------------------------------ config files

def test_read_config_file_types(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text(
        "iterations = 12  # trailing comment\n"
        "\n"
        "# full-line comment\n"
        "lr = 1e-3\n"
        "enable_tv = false\n"
        "quality = strict\n"
    )
    opts = cli.read_config_file(path)
    assert opts == {"iterations": 12, "lr": 1e-3, "enable_tv": False, "quality": "strict"}
    assert isinstance(opts["iterations"], int)


def test_read_config_file_rejects_bare_words(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("iterations = 6\njust_a_word\n")
    with pytest.raises(cli.UsageError, match="bad.cfg:2: expected key = value"):
        cli.read_config_file(path)


def test_config_precedence(tmp_path):
    cfgfile = tmp_path / "c.cfg"
    cfgfile.write_text("iterations = 5\nencoder.dim = 32\n")
    cfg = cli.build_train_config("desk", cfgfile, {"iterations": 7, "lr": None})
    assert cfg.iterations == 7  # flag beats file; None flags are unset, not overrides
    assert cfg.encoder.dim == 32  # file beats the profile's 64
    cfg = cli.build_train_config("desk", cfgfile)
    assert cfg.iterations == 5
    assert cli.build_train_config("desk").iterations == 2000


def test_nested_overrides_reach_configs():
    cfg = cli.build_train_config(
        "desk", None, {"heads.split_mode": True, "encoder.depth": 1}
    )
    assert cfg.heads.split_mode is True
    assert cfg.encoder.depth == 1


def test_unknown_profile():
    with pytest.raises(cli.UsageError, match="unknown profile 'mainframe'"):
        cli.build_train_config("mainframe")


def test_unknown_options_become_usage_errors():
    with pytest.raises(cli.UsageError, match="unknown training option"):
        cli.build_train_config("desk", None, {"momentum": 0.9})
    with pytest.raises(cli.UsageError):
        cli.build_train_config("desk", None, {"encoder.n_layers": 3})


# ------------------------------------------------------------ flag parsing

def test_parse_bool_flag():
    assert cli._parse_bool_flag("split", None) is None
    assert cli._parse_bool_flag("split", "TRUE") is True
    assert cli._parse_bool_flag("split", "false") is False
    with pytest.raises(cli.UsageError, match="--split takes true or false"):
        cli._parse_bool_flag("split", "1")


def test_augment_opts():
    assert cli._augment_opts(None) == {}
    assert cli._augment_opts("none") == {"augment_reverse": False, "augment_flip": False}
    assert cli._augment_opts("reverse") == {"augment_reverse": True, "augment_flip": False}
    assert cli._augment_opts("reverse,flip")["augment_flip"] is True
    with pytest.raises(cli.UsageError, match="takes reverse,flip or none"):
        cli._augment_opts("stretch")


def test_train_flags_reach_config():
    args = cli.build_parser().parse_args(
        ["train", "--corpus", "c", "--out", "o", "--enable-tv", "false",
         "--augment", "none", "--split", "true", "--N", "4"]
    )
    opts = cli._cli_train_opts(args)
    assert opts["enable_tv"] is False
    assert opts["n_inputs"] == 4
    assert opts["augment_reverse"] is False and opts["augment_flip"] is False
    assert opts["heads.split_mode"] is True
    cfg = cli.build_train_config("desk", None, opts)
    assert cfg.enable_tv is False
    assert cfg.n_inputs == 4
    assert cfg.heads.split_mode is True


def test_main_requires_a_command():
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2


# ------------------------------------------------------------ run plumbing

def test_write_manifest_never_overwrites(tmp_path):
    p1 = cli._write_manifest(tmp_path, "gen", {"a": 1}, {}, ["x"], seed=0)
    p2 = cli._write_manifest(tmp_path, "gen", {"a": 2}, {}, ["x"], seed=0)
    assert p1.name == "run_manifest.json"
    assert p2.name == "run_manifest_2.json"
    m = json.loads(p1.read_text())
    assert m["command"] == "gen"
    assert m["seed"] == 0
    assert m["config"] == {"a": 1}
    assert json.loads(p2.read_text())["config"] == {"a": 2}


def test_mark_complete_deterministic_mode(tmp_path, monkeypatch):
    monkeypatch.setenv("PLITA_DETERMINISTIC", "1")
    cli._mark_complete(tmp_path, "train", {"steps": 3})
    status = json.loads((tmp_path / "status.json").read_text())
    assert status == {"status": "complete", "command": "train", "steps": 3}
    monkeypatch.delenv("PLITA_DETERMINISTIC")
    cli._mark_complete(tmp_path, "train")
    assert "finished_at" in json.loads((tmp_path / "status.json").read_text())


def test_resolve_data_path(tmp_path, monkeypatch):
    sub = tmp_path / "corpora" / "mini"
    sub.mkdir(parents=True)
    monkeypatch.setenv("PLITA_DATA_DIR", str(tmp_path / "corpora"))
    assert cli._resolve_data_path("mini") == sub
    assert cli._resolve_data_path(str(sub)) == sub  # hits pass through untouched
    assert cli._resolve_data_path("nowhere") == Path("nowhere")


# ------------------------------------------------------------ gen

def test_gen_writes_readable_corpus(corpus_dir):
    records, manifest = read_corpus(corpus_dir)
    assert len(records) == 8
    assert manifest["meta"]["generator"]["subjects"] == 4
    assert (corpus_dir / "run_manifest.json").is_file()
    status = json.loads((corpus_dir / "status.json").read_text())
    assert status["status"] == "complete"
    assert status["records"] == 8


def test_gen_refuses_then_forces(tmp_path, capsys):
    out = tmp_path / "c"
    argv = ["gen", "--out", str(out), "--subjects", "2", "--duration", "120", "--seed", "1"]
    assert cli.main(argv) == 0
    assert "wrote 4 records" in capsys.readouterr().out
    assert cli.main(argv) == 2
    assert "already has contents" in capsys.readouterr().err
    assert cli.main(argv + ["--force"]) == 0
    assert (out / "run_manifest_2.json").is_file()


def test_gen_bad_config_is_usage_error(tmp_path, capsys):
    rc = cli.main(["gen", "--out", str(tmp_path / "c"), "--states", "1"])
    assert rc == 2
    assert "states" in capsys.readouterr().err


# ------------------------------------------------------------ train

def test_train_run_directory(train_dir, corpus_dir):
    assert (train_dir / "checkpoint_000003.bin").is_file()
    assert (train_dir / "checkpoint_000006.bin").is_file()
    assert (train_dir / "loss_curves.png").is_file()
    with open(train_dir / "metrics.csv") as f:
        header = f.readline().strip().split(",")
    assert header == ["iter", "l_iv", "l_tv", "total", "grad_norm", "ema_gap", "ms"]
    manifest = json.loads((train_dir / "run_manifest.json").read_text())
    assert manifest["command"] == "train"
    assert manifest["config"]["iterations"] == 6
    key = str(corpus_dir / "manifest.json")
    assert manifest["inputs"][key] == cli._sha256_file(corpus_dir / "manifest.json")
    status = json.loads((train_dir / "status.json").read_text())
    assert status["steps"] == 6


def test_train_infeasible_window_fails_fast(corpus_dir, micro_config_file, tmp_path, capsys):
    out = tmp_path / "run"
    rc = cli.main(
        ["train", "--corpus", str(corpus_dir), "--out", str(out),
         "--config", str(micro_config_file), "--W", "25"]
    )
    assert rc == 2
    assert "strip layout" in capsys.readouterr().err
    assert not out.exists()  # rejected before any output


def test_train_missing_corpus(tmp_path, capsys):
    rc = cli.main(
        ["train", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]
    )
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_train_resume_without_checkpoint(corpus_dir, micro_config_file, tmp_path, capsys):
    rc = cli.main(
        ["train", "--corpus", str(corpus_dir), "--out", str(tmp_path / "run"),
         "--config", str(micro_config_file), "--resume"]
    )
    assert rc == 1
    assert "no checkpoint" in capsys.readouterr().err


def test_corrupt_corpus_is_a_runtime_failure(corpus_dir, micro_config_file, tmp_path, capsys):
    bad = tmp_path / "bad"
    shutil.copytree(corpus_dir, bad)
    victim = sorted(bad.glob("signals/*"))[0]
    victim.write_bytes(victim.read_bytes() + b"x")
    rc = cli.main(
        ["train", "--corpus", str(bad), "--out", str(tmp_path / "o"),
         "--config", str(micro_config_file)]
    )
    assert rc == 1
    assert "checksum mismatch" in capsys.readouterr().err


def test_bad_architecture_is_usage_error(corpus_dir, tmp_path, capsys):
    cfgfile = tmp_path / "c.cfg"
    cfgfile.write_text("encoder.patch = 300\n")  # does not divide input_len
    rc = cli.main(
        ["train", "--corpus", str(corpus_dir), "--out", str(tmp_path / "o"),
         "--config", str(cfgfile)]
    )
    assert rc == 2
    assert "patch" in capsys.readouterr().err


# ------------------------------------------------------------ eval

def test_eval_probe(checkpoint, corpus_dir, tmp_path):
    out = tmp_path / "probe"
    rc = cli.main(
        ["eval", "--checkpoint", str(checkpoint), "--corpus", str(corpus_dir),
         "--out", str(out), "--task", "probe", "--folds", "2"]
    )
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report) >= {"accuracy", "macro_f1", "auc", "folds"}
    assert report["folds"]
    for fold in report["folds"]:
        assert 0.0 <= fold["accuracy"] <= 1.0
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["config"]["task"] == "probe"
    assert manifest["config"]["checkpoint_step"] == 6
    assert str(checkpoint) in manifest["inputs"]


def test_eval_probe_trait_field(checkpoint, corpus_dir, tmp_path):
    out = tmp_path / "trait"
    rc = cli.main(
        ["eval", "--checkpoint", str(checkpoint), "--corpus", str(corpus_dir),
         "--out", str(out), "--task", "probe", "--label-field", "trait",
         "--folds", "2"]
    )
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["folds"]


def test_eval_probe_loo(checkpoint, corpus_dir, tmp_path):
    out = tmp_path / "loo"
    rc = cli.main(
        ["eval", "--checkpoint", str(checkpoint), "--corpus", str(corpus_dir),
         "--out", str(out), "--task", "probe", "--loo"]
    )
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    # one fold per record unless a fold was skipped for degeneracy
    assert len(report["folds"]) + len(report["skipped"]) == 8


def test_eval_sequence(checkpoint, corpus_dir, tmp_path):
    out = tmp_path / "seq"
    rc = cli.main(
        ["eval", "--checkpoint", str(checkpoint), "--corpus", str(corpus_dir),
         "--out", str(out), "--task", "sequence"]
    )
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert "accuracy" in report
    assert "degenerate" in report


def test_eval_disentangle(checkpoint, corpus_dir, tmp_path):
    out = tmp_path / "dis"
    rc = cli.main(
        ["eval", "--checkpoint", str(checkpoint), "--corpus", str(corpus_dir),
         "--out", str(out), "--task", "disentangle"]
    )
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["dim"] == 16
    assert report["n_records"] == 8
    assert report["top_invariant"]
    assert (out / "disentangle.png").is_file()


def test_eval_importance(checkpoint, corpus_dir, tmp_path):
    out = tmp_path / "imp"
    rc = cli.main(
        ["eval", "--checkpoint", str(checkpoint), "--corpus", str(corpus_dir),
         "--out", str(out), "--task", "importance"]
    )
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report) >= {"baseline_accuracy", "drops", "ranking", "overlap"}
    assert len(report["drops"]) == 16


def test_eval_missing_checkpoint(corpus_dir, tmp_path, capsys):
    rc = cli.main(
        ["eval", "--checkpoint", str(tmp_path / "x.bin"), "--corpus", str(corpus_dir),
         "--out", str(tmp_path / "o"), "--task", "probe"]
    )
    assert rc == 2
    assert "not found" in capsys.readouterr().err


def test_eval_without_labels(checkpoint, corpus_dir, tmp_path, capsys):
    records, _ = read_corpus(corpus_dir)
    bare = [
        dataclasses.replace(r, labels=np.array([], dtype=np.int64)) for r in records
    ]
    corpus = tmp_path / "unlabeled"
    write_corpus(corpus, bare)
    rc = cli.main(
        ["eval", "--checkpoint", str(checkpoint), "--corpus", str(corpus),
         "--out", str(tmp_path / "o"), "--task", "probe"]
    )
    assert rc == 2
    assert "needs labels" in capsys.readouterr().err


def test_eval_dynamic_only_all_static(checkpoint, corpus_dir, tmp_path, capsys):
    records, _ = read_corpus(corpus_dir)
    flat = [dataclasses.replace(r, labels=np.zeros_like(r.labels)) for r in records]
    corpus = tmp_path / "static"
    write_corpus(corpus, flat)
    rc = cli.main(
        ["eval", "--checkpoint", str(checkpoint), "--corpus", str(corpus),
         "--out", str(tmp_path / "o"), "--task", "probe", "--dynamic-only"]
    )
    assert rc == 2
    assert "dynamic-label selection" in capsys.readouterr().err


# ------------------------------------------------------------ ablation

def test_parse_grid():
    axes = cli._parse_grid(["N=3,4,5", "W=90,120"])
    assert axes == {"N": [3, 4, 5], "W": [90, 120]}
    with pytest.raises(cli.UsageError, match="not KEY"):
        cli._parse_grid(["N:3"])
    with pytest.raises(cli.UsageError, match="axis must be N or W"):
        cli._parse_grid(["depth=2"])
    with pytest.raises(cli.UsageError, match="no values"):
        cli._parse_grid(["N="])
    with pytest.raises(cli.UsageError, match="empty grid"):
        cli._parse_grid([])


def test_grid_cells_one_factor_at_a_time():
    axes = {"N": [3, 4, 5], "W": [90, 120, 150]}
    cells = cli._grid_cells(axes, base_n=3, base_w=120.0)
    assert cells == [(3, 120.0), (4, 120.0), (5, 120.0), (3, 90.0), (3, 150.0)]
    # a single-axis grid still re-runs the base cell on the other axis
    assert cli._grid_cells({"N": [4]}, 3, 60.0) == [(4, 60.0), (3, 60.0)]


@pytest.fixture(scope="module")
def ablation_dir(tmp_path_factory, corpus_dir, micro_config_file):
    out = tmp_path_factory.mktemp("cli") / "ablation"
    rc = cli.main(
        ["ablate", "--corpus", str(corpus_dir), "--out", str(out),
         "--base-config", str(micro_config_file), "--grid", "N=3,4", "W=40,60"]
    )
    assert rc == 0
    return out


def test_ablate_table(ablation_dir):
    with open(ablation_dir / "ablation.csv", newline="") as f:
        reader = csv.DictReader(f)
        assert reader.fieldnames == cli.ABLATION_COLUMNS
        rows = list(reader)
    assert [(int(r["N"]), float(r["W"])) for r in rows] == [(3, 40.0), (4, 40.0), (3, 60.0)]
    for row in rows:
        for col in cli.ABLATION_COLUMNS[2:]:
            value = float(row[col])
            assert np.isnan(value) or 0.0 <= value <= 1.0


def test_ablate_rerun_reuses_cells(ablation_dir, corpus_dir, micro_config_file):
    before = (ablation_dir / "ablation.csv").read_bytes()
    rc = cli.main(
        ["ablate", "--corpus", str(corpus_dir), "--out", str(ablation_dir),
         "--base-config", str(micro_config_file), "--grid", "N=3,4", "W=40,60"]
    )
    assert rc == 0
    assert (ablation_dir / "ablation.csv").read_bytes() == before
    # cached cells never retrain, so the cell run dir gains no second manifest
    assert not (ablation_dir / "N3_W40" / "train" / "run_manifest_2.json").exists()


def test_ablate_cell_matches_direct_eval(ablation_dir, corpus_dir, tmp_path):
    row = json.loads((ablation_dir / "N3_W40" / "cell_result.json").read_text())
    ckpt = ablation_dir / "N3_W40" / "train" / "checkpoint_000006.bin"
    payload = cli._do_eval(ckpt, corpus_dir, tmp_path / "redo", "probe", quietly=True)
    assert payload["accuracy"] == row["state_accuracy"]
    assert payload["auc"] == row["state_auc"]
