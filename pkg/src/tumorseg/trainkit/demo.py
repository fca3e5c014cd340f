"""End-to-end training run on synthetic cases with the per-voxel micro-model."""

from __future__ import annotations

import csv
import json
import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..inference import plan_windows, sliding_window_predict
from ..metrics import CaseMetrics, aggregate, evaluate_case
from ..params import ParamTree, save_checkpoint
from ..postprocess import PostprocessConfig, postprocess
from ..preprocess import AugmentSpec, PreprocessedCase, augment, fit_array, preprocess_case, restore_labels
from ..volio import CaseBundle
from .data import kfold_split
from .losses import LossConfig, dice_focal_loss
from .micro import MicroConfig, MicroPredictor, build_micro, micro_backward, micro_forward
from .optim import sfadamw_init, sfadamw_step

log = logging.getLogger(__name__)


@dataclass
class FoldResult:
    fold: int
    train_ids: list[str]
    val_ids: list[str]
    initial_loss: float
    final_loss: float
    history: list[dict] = field(default_factory=list)
    val_metrics: list[CaseMetrics] = field(default_factory=list)
    params: ParamTree | None = None

    @property
    def mean_val_dice(self) -> dict[str, float]:
        return aggregate(self.val_metrics).region_dice

    def summary(self) -> dict:
        rep = aggregate(self.val_metrics)
        return {
            "fold": self.fold,
            "train_ids": self.train_ids,
            "val_ids": self.val_ids,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "val_dice": rep.region_dice,
            "val_hd95": rep.region_hd95,
            "val_mean_dice": rep.mean_dice,
            "val_cases": [asdict(c) for c in self.val_metrics],
        }


def _eval_batch(cases: Sequence[PreprocessedCase], patch) -> tuple[np.ndarray, np.ndarray]:
    imgs = np.stack([fit_array(c.image, patch)[0] for c in cases])
    regs = np.stack([fit_array(c.regions, patch)[0] for c in cases])
    return imgs, regs.astype(np.float64)


def _loss_and_grads(params, config: MicroConfig, imgs, targets, loss_cfg: LossConfig):
    logits, cache = micro_forward(params, config, imgs, keep=True)
    loss, dlogits, parts = dice_focal_loss(logits, targets, loss_cfg)
    return loss, micro_backward(params, config, cache, dlogits), parts


def predict_case(params: ParamTree, config: MicroConfig, case: PreprocessedCase, window, overlap: float = 0.5, blend: str = "uniform"):
    plan = plan_windows(case.image.shape[1:], window, overlap, blend)
    return sliding_window_predict(case.image, MicroPredictor(params, config, tuple(window)), plan, case.meta.spacing)


def train_fold(
    train: Sequence[PreprocessedCase],
    config: MicroConfig,
    steps: int,
    lr: float,
    seed: int,
    batch_size: int = 2,
    patch=(32, 32, 32),
    loss_cfg: LossConfig = LossConfig(),
    augment_spec: AugmentSpec | None = None,
) -> tuple[ParamTree, list[dict], float, float]:
    if len(train) < batch_size:
        raise ValueError(f"need at least {batch_size} training cases, got {len(train)}")
    rng = np.random.default_rng(seed)
    params = build_micro(config, seed)
    state = sfadamw_init(params, lr=lr)
    aug = augment_spec or AugmentSpec(tuple(patch))
    eval_imgs, eval_tgts = _eval_batch(train, patch)
    initial = _loss_and_grads(params, config, eval_imgs, eval_tgts, loss_cfg)[0]
    history = []
    for step in range(1, steps + 1):
        picks = rng.choice(len(train), size=batch_size, replace=False)
        batch = [augment(train[i].image, train[i].regions, rng, aug) for i in picks]
        imgs = np.stack([b[0] for b in batch])
        tgts = np.stack([b[1] for b in batch]).astype(np.float64)
        parts_box = {}

        def grad_fn(y):
            loss, grads, parts = _loss_and_grads(y, config, imgs, tgts, loss_cfg)
            parts_box.update(parts)
            return loss, grads

        state, params = sfadamw_step(state, params, grad_fn)
        history.append({"step": step, "loss": state.last_loss, **parts_box})
    final = _loss_and_grads(params, config, eval_imgs, eval_tgts, loss_cfg)[0]
    return params, history, float(initial), float(final)


def train_demo(
    cases: Sequence[CaseBundle],
    config: MicroConfig = MicroConfig(),
    folds: Sequence[int] = (0,),
    k: int = 5,
    steps: int = 200,
    lr: float = 0.01,
    seed: int = 0,
    batch_size: int = 2,
    patch=(32, 32, 32),
    overlap: float = 0.5,
    post: PostprocessConfig = PostprocessConfig((0.5, 0.5, 0.5)),
    out_dir=None,
) -> list[FoldResult]:
    """Train one micro-model per requested fold and score it on that fold's
    validation cases through sliding-window inference, postprocessing and
    the metrics path. The evaluated weights are the averaged iterate x.
    """
    by_id = {c.case_id: c for c in cases}
    prepped = {cid: preprocess_case(c, spec=None) for cid, c in sorted(by_id.items())}
    splits = kfold_split(list(by_id), k, seed)
    results = []
    for f in folds:
        split = splits[f]
        log.info("fold %d: %d train / %d val", f, len(split.train), len(split.val))
        params, history, initial, final = train_fold(
            [prepped[i] for i in split.train], config, steps, lr, seed + 1000 * f, batch_size, patch
        )
        metrics = []
        for cid in split.val:
            case = prepped[cid]
            probs = predict_case(params, config, case, patch, overlap)
            labels = restore_labels(postprocess(probs, post), case.meta)
            metrics.append(evaluate_case(labels, by_id[cid].seg, cid))
        res = FoldResult(f, list(split.train), list(split.val), initial, final, history, metrics, params)
        log.info("fold %d: loss %.4f -> %.4f, val WT dice %.3f", f, initial, final, res.mean_val_dice["WT"])
        if out_dir is not None:
            write_fold(res, config, Path(out_dir), seed=seed, lr=lr, steps=steps, patch=list(patch))
        results.append(res)
    return results


def write_fold(res: FoldResult, config: MicroConfig, out_dir: Path, **extra) -> None:
    fold_dir = out_dir / f"fold{res.fold}"
    rest = {k: v for k, v in extra.items() if k != "patch"}
    save_checkpoint(res.params, fold_dir / "checkpoint", kind="micro", config=config.to_dict(), window=extra.get("patch"), **rest)
    with open(fold_dir / "train_log.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["step", "loss", "dice", "focal"], lineterminator="\n")
        w.writeheader()
        for row in res.history:
            w.writerow({k: row.get(k) for k in ("step", "loss", "dice", "focal")})
    (fold_dir / "metrics.json").write_text(json.dumps(res.summary(), indent=2))
