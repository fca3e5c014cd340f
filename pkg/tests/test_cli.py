import json
from pathlib import Path

import numpy as np
import pytest

from tumorseg.cli import main
from tumorseg.inference import sigmoid
from tumorseg.params import save_checkpoint
from tumorseg.pipeline import load_preprocessed
from tumorseg.trainkit import MicroConfig, build_micro, micro_forward
from tumorseg.volio import read_nifti, read_npy

SHAPE = "24,24,20"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--n", 3, "--shape", SHAPE, "--seed", 5, "--out", root / "data", "-q") == 0
    cfg = MicroConfig(hidden=6)
    ckpts = []
    for i in range(2):
        p = root / f"ckpt{i}"
        save_checkpoint(build_micro(cfg, seed=i), p, kind="micro", config=cfg.to_dict(), window=[32, 32, 32])
        ckpts.append(p)
    assert run("preprocess", "--data", root / "data", "--no-fit", "--out", root / "pre", "-q") == 0
    return root, ckpts, cfg


def _run_json(path):
    return json.loads(Path(path).read_text())


def test_synth_writes_cases_and_run_json(work):
    root, _, _ = work
    cases = sorted(p.name for p in (root / "data").iterdir() if p.is_dir())
    assert cases == ["SYN-000", "SYN-001", "SYN-002"]
    rec = _run_json(root / "data" / "run.json")
    assert rec["command"] == "synth" and rec["seed"] == 5
    assert set(rec["versions"]) >= {"tumorseg", "python", "numpy", "scipy"}


def test_evaluate_identical_files_lesionwise(work, tmp_path, capsys):
    root, _, _ = work
    gt = root / "data" / "SYN-000" / "SYN-000-seg.nii.gz"
    assert run("evaluate", "--pred", gt, "--gt", gt, "--lesionwise", "--out", tmp_path) == 0
    agg = json.loads(capsys.readouterr().out)
    report = json.loads((tmp_path / "report.json").read_text())
    case = report["cases"][0]
    assert case["dice"] == {"ET": 1.0, "TC": 1.0, "WT": 1.0}
    assert agg["mean_dice"] == 1.0
    rec = _run_json(tmp_path / "run.json")
    assert rec["config"]["lesionwise"] is True
    assert str(gt) in rec["inputs"]


def test_postprocess_flags_echoed(work, tmp_path):
    root, ckpts, _ = work
    img = root / "pre" / "SYN-001_img.npy"
    assert run("infer", "--input", img, "--checkpoint", ckpts[0], "--out", tmp_path / "p", "-q") == 0
    prob = tmp_path / "p" / "SYN-001_prob.npy"
    code = run("postprocess", "--input", prob, "--thresholds", "0.7,0.7,0.5", "--min-size", "100,150,500", "--out", tmp_path / "s", "-q")
    assert code == 0
    conf = _run_json(tmp_path / "s" / "run.json")["config"]
    assert conf["postprocess"]["binarize_thresholds"] == [0.7, 0.7, 0.5]
    assert conf["postprocess"]["min_sizes"] == [100, 150, 500]
    seg = read_nifti(tmp_path / "s" / "SYN-001-seg.nii.gz", kind="labels")
    assert seg.shape == (24, 24, 20)


def test_infer_small_case_matches_direct_prediction(work, tmp_path):
    root, ckpts, cfg = work
    img = root / "pre" / "SYN-002_img.npy"
    case = load_preprocessed(img)
    assert all(s < 32 for s in case.image.shape[1:])
    assert run("infer", "--input", img, "--checkpoint", ckpts[1], "--overlap", 0.7, "--out", tmp_path, "-q") == 0
    got = read_npy(tmp_path / "SYN-002_prob.npy")
    want = sigmoid(micro_forward(build_micro(cfg, seed=1), cfg, case.image))
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, atol=1e-6)
    assert _run_json(tmp_path / "run.json")["config"]["overlap"] == 0.7


def test_rerun_is_bit_exact_and_jobs_independent(work, tmp_path):
    root, ckpts, _ = work
    for name, jobs in (("a", 1), ("b", 1), ("c", 2)):
        assert run("infer", "--input", root / "pre", "--checkpoint", ckpts[0], "--jobs", jobs, "--out", tmp_path / name, "-q") == 0
        assert run("postprocess", "--input", tmp_path / name, "--profile", "ped", "--jobs", jobs, "--out", tmp_path / f"s{name}", "-q") == 0
    for f in sorted((tmp_path / "a").glob("*_prob.npy")):
        ref = f.read_bytes()
        assert (tmp_path / "b" / f.name).read_bytes() == ref
        assert (tmp_path / "c" / f.name).read_bytes() == ref
        assert f.with_suffix(".json").read_bytes() == (tmp_path / "c" / f.with_suffix(".json").name).read_bytes()
    for f in sorted((tmp_path / "sa").glob("*-seg.nii.gz")):
        assert (tmp_path / "sb" / f.name).read_bytes() == f.read_bytes()
        assert (tmp_path / "sc" / f.name).read_bytes() == f.read_bytes()


def test_pipeline_equals_manual_chain(work, tmp_path):
    root, ckpts, _ = work
    data = root / "data"
    m = tmp_path / "manual"
    assert run("preprocess", "--data", data, "--no-fit", "--out", m / "pre", "-q") == 0
    for i, c in enumerate(ckpts):
        assert run("infer", "--input", m / "pre", "--checkpoint", c, "--out", m / f"m{i}", "-q") == 0
    assert run("ensemble", m / "m0", m / "m1", "--out", m / "ens", "-q") == 0
    assert run("postprocess", "--input", m / "ens", "--out", m / "segs", "-q") == 0
    assert run("evaluate", "--pred", m / "segs", "--gt", data, "--out", m / "eval", "-q") == 0

    p = tmp_path / "pipe"
    argv = ["pipeline", "--data", data, "--out", p, "-q"]
    for c in ckpts:
        argv += ["--checkpoint", c]
    assert run(*argv) == 0

    segs = sorted(f.name for f in (p / "segs").glob("*-seg.nii.gz"))
    assert segs == sorted(f.name for f in (m / "segs").glob("*-seg.nii.gz")) and len(segs) == 3
    for name in segs:
        assert (p / "segs" / name).read_bytes() == (m / "segs" / name).read_bytes()
    for f in (m / "ens").glob("*_prob.npy"):
        assert (p / "probs" / "ensemble" / f.name).read_bytes() == f.read_bytes()
    manual = json.loads((m / "eval" / "report.json").read_text())
    piped = json.loads((p / "report.json").read_text())
    assert piped["cases"] == manual["cases"]
    assert piped["aggregate"] == manual["aggregate"]
    assert _run_json(p / "run.json")["command"] == "pipeline"


def test_config_file_and_flag_override(work, tmp_path):
    root, ckpts, _ = work
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"overlap": 0.7, "blend": "uniform", "checkpoints": [str(ckpts[0])]}))
    img = root / "pre" / "SYN-000_img.npy"
    assert run("infer", "--config", cfg, "--input", img, "--out", tmp_path / "a", "-q") == 0
    conf = _run_json(tmp_path / "a" / "run.json")["config"]
    assert conf["overlap"] == 0.7 and conf["blend"] == "uniform"
    assert run("infer", "--config", cfg, "--input", img, "--overlap", 0.5, "--out", tmp_path / "b", "-q") == 0
    conf = _run_json(tmp_path / "b" / "run.json")["config"]
    assert conf["overlap"] == 0.5 and conf["blend"] == "uniform"


def test_exit_codes(work, tmp_path, capsys):
    root, ckpts, _ = work
    img = root / "pre" / "SYN-000_img.npy"
    assert run("infer", "--input", img) == 1  # no checkpoint
    assert run("infer", "--input", img, "--checkpoint", ckpts[0], "--bogus") == 1
    assert run("nosuchcommand") == 1
    assert run("infer", "--input", img, "--checkpoint", ckpts[0], "--overlap", 0.6, "--out", tmp_path) == 1
    assert run("infer", "--input", img, "--checkpoint", ckpts[0], "--overlap", 0.6, "--allow-any-overlap", "--out", tmp_path / "ok", "-q") == 0
    assert run("infer", "--input", tmp_path / "missing_img.npy", "--checkpoint", ckpts[0], "--out", tmp_path) == 2
    assert run("evaluate", "--pred", tmp_path / "nope.nii.gz", "--gt", tmp_path / "nope2.nii.gz", "--out", tmp_path) == 2
    bad = tmp_path / "bad.nii.gz"
    bad.write_bytes(b"not a nifti")
    assert run("evaluate", "--pred", bad, "--gt", bad, "--out", tmp_path) == 2
    cfg = tmp_path / "unknown.json"
    cfg.write_text(json.dumps({"overlapp": 0.5}))
    assert run("infer", "--config", cfg, "--input", img, "--checkpoint", ckpts[0], "--out", tmp_path) == 1
    assert run("preprocess", "--data", root / "data", "--suffixes", "a,b", "--out", tmp_path) == 1
    err = capsys.readouterr().err
    assert "error:" in err


def test_sweep_ranks_and_writes(work, tmp_path):
    root, ckpts, _ = work
    assert run("infer", "--input", root / "pre", "--checkpoint", ckpts[0], "--out", tmp_path / "p", "-q") == 0
    code = run(
        "sweep", "--probs", tmp_path / "p", "--gt", root / "data",
        "--grid-thresholds", "0.5,0.5,0.5", "--grid-thresholds", "0.7,0.7,0.5",
        "--ped-min-sizes", "--out", tmp_path / "sw", "-q",
    )  # fmt: skip
    assert code == 0
    lines = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 3
    best = json.loads((tmp_path / "sw" / "best_postprocess.json").read_text())
    assert set(best) >= {"binarize_thresholds", "min_sizes"}
    assert (tmp_path / "sw" / "sweep.txt").read_text().strip()


def test_init_model_checkpoint_loads(tmp_path):
    assert run("init-model", "--preset", "toy", "--window", "32,32,32", "--out", tmp_path / "m", "-q") == 0
    rec = _run_json(tmp_path / "m" / "run.json")
    from tumorseg.pipeline import load_model

    model = load_model(tmp_path / "m")
    assert model.default_window == (32, 32, 32)
    assert rec["param_count"] > 0


def test_train_demo_cli(tmp_path, capsys):
    code = run("train-demo", "--cases", 5, "--shape", SHAPE, "--steps", 5, "--patch", "16,16,16", "--hidden", 4, "--out", tmp_path)
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary[0]["fold"] == 0
    assert (tmp_path / "fold0" / "checkpoint").is_dir()
    assert _run_json(tmp_path / "run.json")["config"]["steps"] == 5
