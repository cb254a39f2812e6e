import json
import os

import pandas as pd
import pytest

from harmonize import main

SMOKE_CONFIG = """\
seed = 0
image-size = 16
flow.depth = 3
flow.iters = 3
flow.batch = 4
flow.ood-threshold = 25
harmonizer.iters = 3
harmonizer.batch = 4
segmenter.iters = 3
segmenter.batch = 4
adapt.lr = 1e-4
adapt.batch = 4
adapt.stopping = {stopping}
data.sites = site-a,site-b
data.n-per-site = 8
"""

STAGES = ["gen-data", "train-flow", "train-harmonizer", "train-segmenter", "adapt", "evaluate"]


def _config(tmp_path, stopping="fixed-steps,1", name="run.cfg"):
    path = tmp_path / name
    path.write_text(SMOKE_CONFIG.format(stopping=stopping))
    return str(path)


def _run(command, config, out, *extra):
    return main([command, "--config", config, "--out", out, "--quiet", *extra])


def _read(path):
    with open(path, "rb") as f:
        return f.read()


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("smoke")
    config = _config(tmp_path)
    out = str(tmp_path / "run")
    codes = [_run(stage, config, out) for stage in STAGES]
    return {"config": config, "out": out, "codes": codes, "tmp": tmp_path}


def test_every_stage_succeeds(smoke_run):
    assert smoke_run["codes"] == [0] * len(STAGES)


def test_run_directory_layout(smoke_run):
    out = smoke_run["out"]
    for name in ("flow", "harmonizer", "segmenter", "harmonizer_adapted_site-b"):
        assert os.path.exists(os.path.join(out, "checkpoints", f"{name}.hflw"))
    for name in ("flow_curve", "harmonizer_curve", "segmenter_curve", "adapt_trace_site-b", "adapt_summary",
                 "evaluation", "metric_table"):
        assert os.path.exists(os.path.join(out, "metrics", f"{name}.csv"))
    assert os.path.exists(os.path.join(out, "data", "manifest.txt"))
    assert os.path.exists(os.path.join(out, "resolved_config.txt"))
    assert not os.path.exists(os.path.join(out, "run.lock"))

    with open(os.path.join(out, "manifest.json")) as f:
        manifest = json.load(f)
    assert set(manifest["stages"]) == {stage for stage in STAGES}
    assert manifest["stages"]["train-flow"]["checkpoints"] == ["checkpoints/flow.hflw"]


def test_metric_table_rows(smoke_run):
    table = pd.read_csv(os.path.join(smoke_run["out"], "metrics", "evaluation.csv"))
    assert table["method"].tolist() == [
        "baseline", "hist-match", "pretrained-harmonizer", "harmonizing-flows", "source-oracle"
    ]
    assert table.loc[table["method"] == "source-oracle", "wd"].iloc[0] == 0.0


def test_rerun_is_byte_identical(smoke_run):
    out = str(smoke_run["tmp"] / "rerun")
    assert [_run(stage, smoke_run["config"], out) for stage in STAGES] == [0] * len(STAGES)
    for name in ("flow", "harmonizer", "segmenter", "harmonizer_adapted_site-b"):
        relative = os.path.join("checkpoints", f"{name}.hflw")
        assert _read(os.path.join(out, relative)) == _read(os.path.join(smoke_run["out"], relative))
    for name in ("flow_curve", "evaluation"):
        relative = os.path.join("metrics", f"{name}.csv")
        assert _read(os.path.join(out, relative)) == _read(os.path.join(smoke_run["out"], relative))


def test_zero_adaptation_epochs_reproduce_pretrained_checkpoint(smoke_run, tmp_path):
    config = _config(tmp_path, stopping="fixed-steps,0")
    assert _run("adapt", config, smoke_run["out"]) == 0
    checkpoints = os.path.join(smoke_run["out"], "checkpoints")
    assert _read(os.path.join(checkpoints, "harmonizer_adapted_site-b.hflw")) == _read(
        os.path.join(checkpoints, "harmonizer.hflw"))


def test_source_site_as_target_matches_oracle(smoke_run):
    assert _run("evaluate", smoke_run["config"], smoke_run["out"], "--target", "site-a", "--no-harmonize") == 0
    table = pd.read_csv(os.path.join(smoke_run["out"], "metrics", "evaluation.csv"))
    baseline = table.loc[table["method"] == "baseline", "dice"].iloc[0]
    oracle = table.loc[table["method"] == "source-oracle", "dice"].iloc[0]
    assert baseline == oracle


def test_sample(smoke_run):
    assert _run("sample", smoke_run["config"], smoke_run["out"], "--count", "3") == 0
    assert sorted(os.listdir(os.path.join(smoke_run["out"], "samples"))) == ["0000.pgm", "0001.pgm", "0002.pgm"]
    assert _run("sample", smoke_run["config"], smoke_run["out"], "--count", "0") == 1


def test_missing_upstream_artifacts(tmp_path, capsys):
    config = _config(tmp_path)
    out = str(tmp_path / "fresh")
    assert _run("train-flow", config, out) == 1
    assert "gen-data" in capsys.readouterr().err
    assert _run("gen-data", config, out) == 0
    assert _run("adapt", config, out) == 1
    assert "Checkpoint not found" in capsys.readouterr().err


def test_unknown_target(smoke_run):
    assert _run("evaluate", smoke_run["config"], smoke_run["out"], "--target", "site-z") == 1
