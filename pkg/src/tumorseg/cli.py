"""``tumorseg`` command line.

Exit codes: 0 success, 1 usage error (bad flag, bad config), 2 data error
(missing or malformed input files, geometry mismatches).

Every run writes ``run.json`` next to its outputs (or to ``--run-json``)
holding the effective config, seed, library versions and sha256 hashes of
the inputs.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import logging
import platform
import sys
from collections.abc import Sequence
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from . import pipeline as pl
from .mednext import MedNeXtConfig, build_model
from .metrics import HD95_PENALTY
from .params import save_checkpoint
from .postprocess import PED_MIN_SIZE_GRID, PostprocessConfig, format_min_size_table, sweep_csv
from .trainkit import MicroConfig, synth_dataset, train_demo
from .volio import discover_cases, load_case, save_case

log = logging.getLogger("tumorseg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- flag parsing helpers ----------------------------------------------------------


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _triple(conv):
    def parse(text):
        vals = conv(text)
        if len(vals) != 3:
            raise argparse.ArgumentTypeError(f"expected 3 comma-separated values, got {text!r}")
        return vals

    return parse


# config fields each subcommand may take from --config / flags
_PIPE_KEYS = {
    "data_root", "patch", "window", "overlap", "allow_any_overlap", "blend", "checkpoints", "profile",
    "thresholds", "min_sizes", "connectivity", "lesionwise", "dilation_iters", "min_lesion_volume",
    "output_dir", "seed", "jobs",
}  # fmt: skip


def effective_config(args, file_cfg: dict) -> pl.PipelineConfig:
    merged = {k: v for k, v in file_cfg.items()}
    for key in _PIPE_KEYS:
        v = getattr(args, key, None)
        if v is not None and v is not False:
            merged[key] = list(v) if key == "checkpoints" else v
    try:
        return pl.PipelineConfig.from_dict(merged)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid config: {e}") from None


def load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return data


# -- provenance ---------------------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_inputs(paths: Sequence) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file()):
                out[str(f)] = sha256_file(f)
        elif p.is_file():
            out[str(p)] = sha256_file(p)
    return out


def versions() -> dict[str, str]:
    v = {"tumorseg": __version__, "python": platform.python_version()}
    for pkg in ("numpy", "scipy", "numba"):
        try:
            v[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            v[pkg] = "missing"
    return v


def write_run_json(path: Path, command: str, argv: Sequence[str], config: dict, seed, inputs: Sequence, extra: dict | None = None):
    record = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "versions": versions(),
        "inputs": hash_inputs(inputs),
    }
    if extra:
        record.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True))
    return record


# -- subcommands ---------------------------------------------------------------------
# Each returns (config dict for run.json, input paths, output dir, extra run.json fields).


def cmd_synth(args, file_cfg):
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    cases = synth_dataset(args.n, seed, args.shape)
    out = Path(args.out)
    for c in cases:
        save_case(c, out, compress=not args.uncompressed)
    log.info("wrote %d synthetic cases to %s", len(cases), out)
    cfg = {"n": args.n, "seed": seed, "shape": list(args.shape), "compress": not args.uncompressed}
    return cfg, [], out, {"cases": [c.case_id for c in cases]}


def cmd_preprocess(args, file_cfg):
    cfg = effective_config(args, file_cfg)
    if not cfg.data_root:
        raise UsageError("preprocess needs --data (or data_root in the config)")
    patch = None if args.no_fit else cfg.patch
    suffixes = tuple(args.suffixes) if args.suffixes else None
    if suffixes is not None and len(suffixes) != 5:
        raise UsageError(f"--suffixes takes 5 names (4 modalities then seg), got {len(suffixes)}")
    root, out = Path(cfg.data_root), Path(args.out or cfg.output_dir)
    if suffixes:
        from .preprocess import PatchSpec, preprocess_case

        spec = PatchSpec(patch) if patch else None
        ids = pl.parallel_map(
            lambda cid: preprocess_case(load_case(root / cid, suffixes[:4], suffixes[4]), spec, out).case_id,
            discover_cases(root, suffixes[0]),
            cfg.jobs,
        )
    else:
        ids = pl.preprocess_dir(root, out, patch, cfg.jobs)
    if not ids:
        raise FileNotFoundError(f"no cases found under {root}")
    log.info("preprocessed %d cases into %s", len(ids), out)
    conf = {**cfg.to_json(), "fit": patch is not None, "suffixes": list(suffixes) if suffixes else None}
    return conf, [root], out, {"cases": ids}


def _img_inputs(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(path.glob("*_img.npy"))
        if not files:
            raise FileNotFoundError(f"no '*_img.npy' files in {path}")
        return files
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    return [path]


def cmd_infer(args, file_cfg):
    cfg = effective_config(args, file_cfg)
    if not cfg.checkpoints:
        raise UsageError("infer needs --checkpoint (or checkpoints in the config)")
    if len(cfg.checkpoints) != 1:
        raise UsageError("infer takes one checkpoint; run it per model and combine with 'ensemble'")
    model = pl.load_model(cfg.checkpoints[0])
    inputs = _img_inputs(Path(args.input))
    out = Path(args.out or cfg.output_dir)

    def one(img_path):
        case = pl.load_preprocessed(img_path)
        probs, side = pl.infer_case(case, model, cfg.window, cfg.overlap, cfg.blend)
        pl.save_probs(probs, side, out / f"{case.case_id}_prob.npy")
        return case.case_id

    ids = pl.parallel_map(one, inputs, cfg.jobs)
    log.info("inferred %d cases into %s", len(ids), out)
    return cfg.to_json(), [*inputs, Path(cfg.checkpoints[0])], out, {"cases": ids}


def cmd_ensemble(args, file_cfg):
    paths = [Path(p) for p in args.inputs]
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"input not found: {p}")
    out = Path(args.out)
    if all(p.is_dir() for p in paths):
        names = sorted(f.name for f in paths[0].glob("*_prob.npy"))
        if not names:
            raise FileNotFoundError(f"no '*_prob.npy' files in {paths[0]}")
        for p in paths[1:]:
            missing = [n for n in names if not (p / n).exists()]
            if missing:
                raise FileNotFoundError(f"{p} lacks {missing[0]} (member directories must hold the same cases)")
        jobs = file_cfg.get("jobs", 1) if args.jobs is None else args.jobs
        pl.parallel_map(lambda n: pl.ensemble_files([p / n for p in paths], out / n), names, jobs)
        cases = [n[: -len("_prob.npy")] for n in names]
        out_dir = out
    elif all(p.is_file() for p in paths):
        target = out if out.suffix == ".npy" else out / paths[0].name
        pl.ensemble_files(paths, target)
        cases, out_dir = [target.name], target.parent
    else:
        raise UsageError("ensemble inputs must be all files or all directories")
    log.info("averaged %d members", len(paths))
    return {"members": [str(p) for p in paths]}, paths, out_dir, {"cases": cases}


def cmd_postprocess(args, file_cfg):
    cfg = effective_config(args, file_cfg)
    post = cfg.postprocess_config()
    src = Path(args.input)
    files = sorted(src.glob("*_prob.npy")) if src.is_dir() else [src]
    if not files or not files[0].exists():
        raise FileNotFoundError(f"no probability maps at {src}")
    out = Path(args.out or cfg.output_dir)

    def one(f):
        cid = f.name[: -len("_prob.npy")] if f.name.endswith("_prob.npy") else f.stem
        pl.postprocess_file(f, post, out / f"{cid}-seg.nii.gz")
        return cid

    ids = pl.parallel_map(one, files, cfg.jobs)
    return {**cfg.to_json(), "postprocess": post.to_json()}, files, out, {"cases": ids}


def _eval_pairs(pred: Path, gt: Path) -> list[tuple[str, Path, Path]]:
    if pred.is_file() and gt.is_file():
        cid = pred.name.split("-seg")[0] if "-seg" in pred.name else pred.name.split(".")[0]
        return [(cid, pred, gt)]
    if pred.is_dir() and gt.is_dir():
        pairs = []
        for f in sorted(pred.glob("*-seg.nii*")):
            cid = f.name.split("-seg")[0]
            g = pl.gt_path(gt / cid, cid) or pl.gt_path(gt, cid)
            if g is None:
                raise FileNotFoundError(f"no ground truth for {cid} under {gt}")
            pairs.append((cid, f, g))
        if not pairs:
            raise FileNotFoundError(f"no '*-seg.nii[.gz]' predictions in {pred}")
        return pairs
    for p in (pred, gt):
        if not p.exists():
            raise FileNotFoundError(f"input not found: {p}")
    raise UsageError("--pred and --gt must both be files or both be directories")


def cmd_evaluate(args, file_cfg):
    cfg = effective_config(args, file_cfg)
    pairs = _eval_pairs(Path(args.pred), Path(args.gt))
    out = Path(args.out or cfg.output_dir)
    metrics = pl.evaluate_files(pairs, cfg.lesion_options(), cfg.jobs)
    options = {"lesionwise": cfg.lesionwise, "hd95_penalty": HD95_PENALTY, "mode": args.mode}
    if cfg.lesionwise:
        options["lesion"] = {"connectivity": cfg.connectivity, "dilation_iters": cfg.dilation_iters, "min_lesion_volume": cfg.min_lesion_volume}
    from .metrics import report_csv, report_json

    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(metrics, options, args.mode))
    (out / "report.csv").write_text(report_csv(metrics, args.mode))
    agg = json.loads((out / "report.json").read_text())["aggregate"]
    if not args.quiet:
        print(json.dumps(agg, indent=2))
    inputs = [p for _, a, b in pairs for p in (a, b)]
    return {**cfg.to_json(), "mode": args.mode}, inputs, out, {"cases": [c for c, _, _ in pairs]}


def _sweep_grid(args, cfg: pl.PipelineConfig) -> list[PostprocessConfig]:
    base = PostprocessConfig.profile(cfg.profile, connectivity=cfg.connectivity)
    ths = args.grid_thresholds or [base.binarize_thresholds]
    if args.ped_min_sizes:
        mss = list(PED_MIN_SIZE_GRID)
    else:
        mss = args.grid_min_sizes or [base.min_sizes]
    return [PostprocessConfig(t, m, cfg.connectivity) for t, m in itertools.product(ths, mss)]


def cmd_sweep(args, file_cfg):
    cfg = effective_config(args, file_cfg)
    probs_dir, gt_root = Path(args.probs), Path(args.gt)
    files = sorted(probs_dir.glob("*_prob.npy"))
    if not files:
        raise FileNotFoundError(f"no '*_prob.npy' files in {probs_dir}")
    pairs = []
    for f in files:
        cid = f.name[: -len("_prob.npy")]
        g = pl.gt_path(gt_root / cid, cid) or pl.gt_path(gt_root, cid)
        if g is None:
            raise FileNotFoundError(f"no ground truth for {cid} under {gt_root}")
        pairs.append((f, g))
    grid = _sweep_grid(args, cfg)
    rows = pl.sweep_files(pairs, grid, cfg.lesion_options(), args.group or "")
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(sweep_csv(rows))
    groups: dict[str, list] = {}
    for r in rows:
        t = r.config.binarize_thresholds
        label = args.group or "/".join(f"{v:g}" for v in t)
        groups.setdefault(label if not args.group else f"{label} {t}", []).append(r)
    (out / "sweep.txt").write_text(format_min_size_table(groups) + "\n")
    best = rows[0].config.to_json()
    (out / "best_postprocess.json").write_text(json.dumps(best, indent=2))
    if not args.quiet:
        print(sweep_csv(rows[:5]), end="")
    conf = {**cfg.to_json(), "grid": [g.to_json() for g in grid]}
    return conf, [p for pair in pairs for p in pair], out, {"best": best}


def cmd_train_demo(args, file_cfg):
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    if args.data:
        root = Path(args.data)
        cases = [load_case(root / cid) for cid in discover_cases(root)]
        if not cases:
            raise FileNotFoundError(f"no cases found under {root}")
        inputs = [root]
    else:
        cases = synth_dataset(args.cases, seed, args.shape)
        inputs = []
    mcfg = MicroConfig(depth=args.depth, hidden=args.hidden)
    out = Path(args.out)
    results = train_demo(
        cases, mcfg, folds=args.folds, k=args.k, steps=args.steps, lr=args.lr, seed=seed,
        batch_size=args.batch_size, patch=args.patch, out_dir=out,
    )  # fmt: skip
    summary = [
        {"fold": r.fold, "initial_loss": r.initial_loss, "final_loss": r.final_loss, "val_dice": r.mean_val_dice}
        for r in results
    ]
    if not args.quiet:
        print(json.dumps(summary, indent=2))
    conf = {
        "cases": len(cases), "synthetic": not args.data, "shape": list(args.shape), "model": mcfg.to_dict(),
        "folds": list(args.folds), "k": args.k, "steps": args.steps, "lr": args.lr,
        "batch_size": args.batch_size, "patch": list(args.patch), "seed": seed,
    }  # fmt: skip
    return conf, inputs, out, {"folds": summary}


def cmd_pipeline(args, file_cfg):
    cfg = effective_config(args, file_cfg)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if not cfg.data_root:
        raise UsageError("pipeline needs --data (or data_root in the config)")
    if not cfg.checkpoints:
        raise UsageError("pipeline needs at least one --checkpoint (or checkpoints in the config)")
    summary = pl.run_pipeline(cfg)
    if not args.quiet and "aggregate" in summary:
        print(json.dumps(summary["aggregate"], indent=2))
    return cfg.to_json(), [Path(cfg.data_root), *map(Path, cfg.checkpoints)], Path(cfg.output_dir), {"cases": summary["cases"]}


def cmd_init_model(args, file_cfg):
    if args.preset == "toy":
        mcfg = MedNeXtConfig(base_channels=args.base_channels, blocks_per_stage=(1,) * 9, expansion_ratios=(2,) * 9)
    else:
        mcfg = MedNeXtConfig.preset(args.preset)
    seed = args.seed if args.seed is not None else file_cfg.get("seed", 0)
    model = build_model(mcfg, seed)
    out = Path(args.out)
    save_checkpoint(model, out, kind="mednext", config=mcfg.to_dict(), seed=seed, window=list(args.window) if args.window else None)
    log.info("%s: %d parameters", args.preset, model.count())
    return {"preset": args.preset, "config": mcfg.to_dict(), "seed": seed}, [], out, {"param_count": model.count()}


# -- parser ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, out_required: bool = False):
    g = p.add_argument_group("common")
    g.add_argument("--config", help="JSON config file; flags override its fields")
    g.add_argument("--out", required=out_required, help="output directory")
    g.add_argument("--run-json", help="where to write run.json (default: <out>/run.json)")
    g.add_argument("--jobs", type=int, help="parallel workers across cases (results do not depend on it)")
    g.add_argument("--seed", type=int)
    g.add_argument("-q", "--quiet", action="store_true")
    g.add_argument("-v", "--verbose", action="store_true")


def _window_flags(p):
    p.add_argument("--window", type=_triple(_ints), help="window shape X,Y,Z (default: checkpoint window)")
    p.add_argument("--overlap", type=float, help="window overlap, 0.5 or 0.7 (default 0.5)")
    p.add_argument("--allow-any-overlap", action="store_true", dest="allow_any_overlap", default=None)
    p.add_argument("--blend", choices=("uniform", "gaussian"))


def _post_flags(p):
    p.add_argument("--profile", choices=("ssa", "ped"))
    p.add_argument("--thresholds", type=_triple(_floats), help="ET,TC,WT probability thresholds")
    p.add_argument("--min-size", type=_triple(_ints), dest="min_sizes", help="ET,TC,WT minimum component sizes")
    p.add_argument("--connectivity", type=int, choices=(6, 18, 26))


def _lesion_flags(p):
    p.add_argument("--lesionwise", action="store_true", default=None)
    p.add_argument("--dilation-iters", type=int, dest="dilation_iters")
    p.add_argument("--min-lesion-volume", type=int, dest="min_lesion_volume")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tumorseg", description="Brain tumor segmentation pipeline tools.")
    parser.add_argument("--version", action="version", version=f"tumorseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write synthetic multi-modal cases with labels")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--shape", type=_triple(_ints), default=(48, 48, 40))
    p.add_argument("--uncompressed", action="store_true", help="write .nii instead of .nii.gz")
    _common(p, out_required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="crop, normalize and fit cases to the patch")
    p.add_argument("--data", dest="data_root", help="dataset root with one directory per case")
    p.add_argument("--patch", type=_triple(_ints))
    p.add_argument("--no-fit", action="store_true", help="keep the cropped size (no pad/crop to patch)")
    p.add_argument("--suffixes", type=lambda s: s.split(","), help="five file suffixes: 4 modalities then seg")
    _common(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("infer", help="sliding-window prediction for preprocessed cases")
    p.add_argument("--input", required=True, help="a '{id}_img.npy' file or a directory of them")
    p.add_argument("--checkpoint", dest="checkpoints", action="append")
    _window_flags(p)
    _common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ensemble", help="average probability maps (files or per-model directories)")
    p.add_argument("inputs", nargs="+")
    _common(p, out_required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("postprocess", help="threshold, remove small components, write label maps")
    p.add_argument("--input", required=True, help="a '{id}_prob.npy' file or a directory of them")
    _post_flags(p)
    _common(p)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("evaluate", help="Dice / HD95 (and lesion-wise) reports")
    p.add_argument("--pred", required=True, help="prediction file or directory of '{id}-seg.nii.gz'")
    p.add_argument("--gt", required=True, help="ground-truth file or dataset root")
    p.add_argument("--mode", choices=("region-mean", "case-mean"), default="region-mean")
    _lesion_flags(p)
    p.add_argument("--connectivity", type=int, choices=(6, 18, 26))
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid search over thresholds and minimum sizes")
    p.add_argument("--probs", required=True, help="directory of '{id}_prob.npy'")
    p.add_argument("--gt", required=True, help="ground-truth dataset root")
    p.add_argument("--grid-thresholds", type=_triple(_floats), action="append", help="repeatable ET,TC,WT triple")
    p.add_argument("--grid-min-sizes", type=_triple(_ints), action="append", help="repeatable ET,TC,WT triple")
    p.add_argument("--ped-min-sizes", action="store_true", help="use the built-in pediatric min-size grid")
    p.add_argument("--group", help="label for the table (e.g. the learning rate)")
    p.add_argument("--profile", choices=("ssa", "ped"))
    p.add_argument("--connectivity", type=int, choices=(6, 18, 26))
    _lesion_flags(p)
    _common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train-demo", help="train the per-voxel micro-model on synthetic cases")
    p.add_argument("--data", help="train on these cases instead of synthetic ones")
    p.add_argument("--cases", type=int, default=8)
    p.add_argument("--shape", type=_triple(_ints), default=(48, 48, 40))
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=2, dest="batch_size")
    p.add_argument("--patch", type=_triple(_ints), default=(32, 32, 32))
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--folds", type=_ints, default=(0,))
    _common(p, out_required=True)
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("pipeline", help="preprocess, infer per checkpoint, ensemble, postprocess, evaluate")
    p.add_argument("--data", dest="data_root")
    p.add_argument("--checkpoint", dest="checkpoints", action="append")
    _window_flags(p)
    _post_flags(p)
    _lesion_flags(p)
    _common(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("init-model", help="write a freshly initialized MedNeXt checkpoint")
    p.add_argument("--preset", choices=("B", "M", "toy"), default="B")
    p.add_argument("--base-channels", type=int, default=4, dest="base_channels", help="toy preset only")
    p.add_argument("--window", type=_triple(_ints))
    _common(p, out_required=True)
    p.set_defaults(func=cmd_init_model)
    return parser


def _setup_logging(quiet: bool, verbose: bool) -> None:
    level = logging.ERROR if quiet else logging.DEBUG if verbose else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("tumorseg")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    _setup_logging(args.quiet, args.verbose)
    try:
        if args.jobs is not None and args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        file_cfg = load_config_file(args.config)
        conf, inputs, out_dir, extra = args.func(args, file_cfg)
        run_path = Path(args.run_json) if args.run_json else Path(out_dir) / "run.json"
        seed = conf.get("seed", args.seed)
        write_run_json(run_path, args.command, argv, conf, seed, inputs, extra)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, np.linalg.LinAlgError) as e:
        # includes FileNotFoundError, NIfTI/NPY format errors and geometry mismatches
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
