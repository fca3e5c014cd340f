"""File-level steps shared by the CLI subcommands and ``pipeline``.

Artifact layout inside an output directory:

* ``{id}_img.npy`` / ``{id}_reg.npy`` / ``{id}_meta.json`` -- preprocessed case
* ``{id}_prob.npy`` + ``{id}_prob.json`` -- (3, X, Y, Z) probabilities in the
  preprocessed frame, sidecar with meta, window plan and model ids
* ``{id}-seg.nii.gz`` -- final labels in the original frame
* ``report.json`` / ``report.csv`` -- metrics
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .inference import MedNeXtPredictor, ensemble_mean, plan_windows, sliding_window_predict
from .mednext import MedNeXtConfig
from .metrics import CaseMetrics, LesionOptions, evaluate_case, report_csv, report_json
from .params import load_checkpoint
from .postprocess import PostprocessConfig, SweepRow, postprocess, sweep_thresholds
from .preprocess import (
    PatchSpec,
    PreprocessedCase,
    PreprocMeta,
    load_meta,
    preprocess_case,
    restore_geometry,
    restore_labels,
)
from .trainkit.micro import MicroConfig, MicroPredictor
from .volcore import LabelMap, RegionProbs
from .volio import discover_cases, load_case, read_nifti, read_npy, write_nifti, write_npy

log = logging.getLogger(__name__)

STANDARD_OVERLAPS = (0.5, 0.7)


@dataclass
class PipelineConfig:
    data_root: str | None = None
    patch: tuple[int, int, int] = (128, 160, 112)
    window: tuple[int, int, int] | None = None  # defaults to the checkpoint's window, else patch
    overlap: float = 0.5
    allow_any_overlap: bool = False
    blend: str = "gaussian"
    checkpoints: list[str] = field(default_factory=list)
    profile: str = "ssa"
    thresholds: tuple[float, float, float] | None = None
    min_sizes: tuple[int, int, int] | None = None
    connectivity: int = 26
    lesionwise: bool = False
    dilation_iters: int = 3
    min_lesion_volume: int = 0
    output_dir: str = "out"
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        for name in ("patch", "window", "thresholds", "min_sizes"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, tuple(v))
        if not self.allow_any_overlap and self.overlap not in STANDARD_OVERLAPS:
            raise ValueError(f"overlap must be one of {STANDARD_OVERLAPS} (use allow_any_overlap to override), got {self.overlap}")
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError(f"overlap must be in [0, 1), got {self.overlap}")
        if self.blend not in ("uniform", "gaussian"):
            raise ValueError(f"blend must be uniform or gaussian, got {self.blend!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}; valid keys: {sorted(known)}")
        return cls(**d)

    def postprocess_config(self) -> PostprocessConfig:
        return PostprocessConfig.profile(
            self.profile, binarize_thresholds=self.thresholds, min_sizes=self.min_sizes, connectivity=self.connectivity
        )

    def lesion_options(self) -> LesionOptions | None:
        if not self.lesionwise:
            return None
        return LesionOptions(self.connectivity, self.dilation_iters, self.min_lesion_volume)

    def to_json(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Order-preserving map; results do not depend on ``jobs``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# -- preprocess -------------------------------------------------------------------


def case_dirs(root) -> list[Path]:
    root = Path(root)
    return [root / cid for cid in discover_cases(root)]


def preprocess_dir(root, out_dir, patch: tuple[int, int, int] | None, jobs: int = 1) -> list[str]:
    """Preprocess every case under ``root``; ``patch=None`` keeps the cropped size."""
    spec = PatchSpec(patch) if patch else None

    def one(d: Path) -> str:
        bundle = load_case(d)
        preprocess_case(bundle, spec, out_dir)
        return bundle.case_id

    return parallel_map(one, case_dirs(root), jobs)


def load_preprocessed(img_path) -> PreprocessedCase:
    img_path = Path(img_path)
    if not img_path.name.endswith("_img.npy"):
        raise ValueError(f"{img_path}: expected a '{{id}}_img.npy' file from preprocess")
    cid = img_path.name[: -len("_img.npy")]
    meta = load_meta(img_path.with_name(f"{cid}_meta.json"))
    reg_path = img_path.with_name(f"{cid}_reg.npy")
    regions = read_npy(reg_path) if reg_path.exists() else None
    return PreprocessedCase(cid, read_npy(img_path), regions, meta)


# -- inference ------------------------------------------------------------------------


@dataclass
class LoadedModel:
    model_id: str
    predictor_factory: Callable[[tuple[int, int, int]], object]
    default_window: tuple[int, int, int] | None


def load_model(path) -> LoadedModel:
    params, manifest = load_checkpoint(path)
    kind = manifest.get("kind")
    window = tuple(manifest["window"]) if manifest.get("window") else None
    if kind == "mednext":
        cfg = MedNeXtConfig.from_dict(manifest["config"])
        factory = lambda w: MedNeXtPredictor(params, cfg, tuple(w))  # noqa: E731
    elif kind == "micro":
        mcfg = MicroConfig(**manifest["config"])
        factory = lambda w: MicroPredictor(params, mcfg, tuple(w))  # noqa: E731
    else:
        raise ValueError(f"{path}: unknown checkpoint kind {kind!r}")
    return LoadedModel(str(Path(path)), factory, window)


def infer_case(case: PreprocessedCase, model: LoadedModel, window, overlap: float, blend: str) -> tuple[RegionProbs, dict]:
    window = tuple(window or model.default_window or (128, 160, 112))
    plan = plan_windows(case.image.shape[1:], window, overlap, blend)
    probs = sliding_window_predict(case.image, model.predictor_factory(window), plan, case.meta.spacing)
    sidecar = {
        "case_id": case.case_id,
        "meta": case.meta.to_json(),
        "plan": plan.to_json(),
        "models": [model.model_id],
    }
    return probs, sidecar


def save_probs(probs: RegionProbs, sidecar: dict, npy_path) -> None:
    npy_path = Path(npy_path)
    write_npy(probs.data, npy_path)
    npy_path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))


def load_probs(npy_path) -> tuple[RegionProbs, dict]:
    npy_path = Path(npy_path)
    data = read_npy(npy_path)
    side_path = npy_path.with_suffix(".json")
    sidecar = json.loads(side_path.read_text()) if side_path.exists() else {}
    spacing = tuple(sidecar.get("meta", {}).get("spacing", (1.0, 1.0, 1.0)))
    return RegionProbs(data, spacing, "probabilities"), sidecar


def ensemble_files(paths: Sequence, out_path) -> RegionProbs:
    loaded = [load_probs(p) for p in paths]
    merged = ensemble_mean([p for p, _ in loaded])
    side = dict(loaded[0][1])
    side["models"] = [m for _, s in loaded for m in s.get("models", [])]
    side["members"] = [str(p) for p in paths]
    save_probs(merged, side, out_path)
    return merged


# -- postprocess / evaluate ---------------------------------------------------------


def postprocess_file(npy_path, config: PostprocessConfig, out_path) -> LabelMap:
    probs, sidecar = load_probs(npy_path)
    labels = postprocess(probs, config)
    if "meta" in sidecar:
        labels = restore_labels(labels, PreprocMeta.from_json(sidecar["meta"]))
    write_nifti(labels, out_path)
    return labels


def evaluate_files(pairs: Iterable[tuple[str, Path, Path]], lesion: LesionOptions | None, jobs: int = 1) -> list[CaseMetrics]:
    def one(item):
        cid, pred_path, gt_path = item
        pred = read_nifti(pred_path, kind="labels")
        gt = read_nifti(gt_path, kind="labels")
        return evaluate_case(pred, gt, cid, lesion)

    return parallel_map(one, list(pairs), jobs)


def write_reports(cases: Sequence[CaseMetrics], out_dir, options: dict) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jp, cp = out_dir / "report.json", out_dir / "report.csv"
    jp.write_text(report_json(cases, options))
    cp.write_text(report_csv(cases))
    return jp, cp


def original_frame_probs(npy_path) -> RegionProbs:
    """Probabilities pasted back into the original grid (zeros outside the box).

    Zero probability never survives binarization, so postprocessing these
    equals postprocessing in the preprocessed frame and restoring labels.
    """
    probs, sidecar = load_probs(npy_path)
    if "meta" not in sidecar:
        return probs
    meta = PreprocMeta.from_json(sidecar["meta"])
    return RegionProbs(restore_geometry(probs.data, meta, fill=0.0), meta.spacing, "probabilities")


def sweep_files(
    pairs: Sequence[tuple[Path, Path]], grid: Sequence[PostprocessConfig], lesion: LesionOptions | None = None, group: str = ""
) -> list[SweepRow]:
    cases = [(original_frame_probs(p), read_nifti(g, kind="labels")) for p, g in pairs]
    metric = (lambda pred, gt: evaluate_case(pred, gt, "", lesion)) if lesion else None
    return sweep_thresholds(cases, grid, metric, group)


# -- whole pipeline -------------------------------------------------------------------


def run_pipeline(cfg: PipelineConfig) -> dict:
    """preprocess -> infer (each checkpoint) -> ensemble -> postprocess -> evaluate."""
    if not cfg.checkpoints:
        raise ValueError("pipeline needs at least one checkpoint")
    if not cfg.data_root:
        raise ValueError("pipeline needs data_root")
    out = Path(cfg.output_dir)
    pre_dir, prob_dir, seg_dir = out / "preprocessed", out / "probs", out / "segs"
    ids = preprocess_dir(cfg.data_root, pre_dir, None, cfg.jobs)
    models = [load_model(c) for c in cfg.checkpoints]
    post_cfg = cfg.postprocess_config()

    def one(cid: str):
        case = load_preprocessed(pre_dir / f"{cid}_img.npy")
        members = []
        for m_idx, model in enumerate(models):
            probs, side = infer_case(case, model, cfg.window, cfg.overlap, cfg.blend)
            path = prob_dir / f"m{m_idx}" / f"{cid}_prob.npy"
            save_probs(probs, side, path)
            members.append(path)
        ens_path = prob_dir / "ensemble" / f"{cid}_prob.npy"
        ensemble_files(members, ens_path)
        postprocess_file(ens_path, post_cfg, seg_dir / f"{cid}-seg.nii.gz")
        return cid

    parallel_map(one, ids, cfg.jobs)
    pairs = []
    for cid in ids:
        gt = gt_path(Path(cfg.data_root) / cid, cid)
        if gt is not None:
            pairs.append((cid, seg_dir / f"{cid}-seg.nii.gz", gt))
    summary = {"cases": ids, "segs": str(seg_dir)}
    if pairs:
        metrics = evaluate_files(pairs, cfg.lesion_options(), cfg.jobs)
        jp, _ = write_reports(metrics, out, {"postprocess": post_cfg.to_json(), "lesionwise": cfg.lesionwise})
        summary["report"] = str(jp)
        summary["aggregate"] = json.loads(jp.read_text())["aggregate"]
    return summary


def gt_path(case_dir: Path, cid: str) -> Path | None:
    for ext in (".nii.gz", ".nii"):
        p = case_dir / f"{cid}-seg{ext}"
        if p.exists():
            return p
    return None
