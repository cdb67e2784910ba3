"""Training loop, inference, and dataset evaluation.

Determinism contract: the rng driving step t is seeded from
(train.seed, t) alone, so a run resumed from a step-k checkpoint replays
steps k..n bit-exactly against an uninterrupted run. Checkpoints carry the
full run config, every parameter, and the optimizer moments.
"""

from __future__ import annotations

import os

import numpy as np

from . import config as config_mod
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import augment, random_crop
from .errors import CheckpointError, ConfigError, TrainingError
from .losses import FeatureExtractor, target_features, total_loss
from .metrics import metric_record, records_to_csv
from .network import RASM
from .optim import AdamW, Schedule, clip_gradients, lr_at
from .tensor import Tensor


def assign_parameters(model: RASM, arrays):
    """Load a path -> ndarray map into a model, validating paths and shapes."""
    params = model.parameters()
    missing = set(params) - set(arrays)
    extra = set(arrays) - set(params)
    if missing or extra:
        raise CheckpointError(
            f"parameter paths do not match model: missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(extra)[:3]}")
    for k, p in params.items():
        a = np.asarray(arrays[k])
        if a.shape != p.shape:
            raise CheckpointError(f"shape mismatch at {k}: {a.shape} vs {p.shape}")
        p.data = a.astype(p.dtype).copy()


def load_model(path):
    """Rebuild (run_config, model, checkpoint) from a checkpoint file."""
    ckpt = load_checkpoint(path)
    run = config_mod.from_text(ckpt.config_text)
    model = RASM(run.model, seed=run.train.seed)
    assign_parameters(model, ckpt.params)
    return run, model, ckpt


def _validate_train_setup(run, dataset):
    if len(dataset) == 0:
        raise TrainingError("dataset is empty")
    f = 2 ** run.model.depth
    if run.train.crop_size % f:
        raise ConfigError(
            f"crop_size {run.train.crop_size} must be divisible by {f} "
            f"(model depth {run.model.depth})")
    if run.loss.alpha_per > 0 and (run.train.crop_size < 32
                                   or run.train.crop_size % 16):
        raise ConfigError(
            f"crop_size {run.train.crop_size} too small for the perceptual "
            f"term (needs >= 32 and divisible by 16); set loss.alpha_per = 0 "
            f"or enlarge the crop")


def _draw_batch(run, dataset, rng):
    """Returns (sample, fixed) pairs; fixed means the sample reached the
    batch untouched, so its target is bit-identical on every draw."""
    n = len(dataset)
    batch = []
    for _ in range(run.train.batch_size):
        smp = dataset[int(rng.integers(n))]
        fixed = not run.train.augment
        if run.train.augment:
            partner = dataset[int(rng.integers(n))] if run.train.mixup else None
            smp = augment(smp, rng, mixup_partner=partner, hsv=run.train.hsv)
        h, w = smp.shadow.shape[1:]
        if run.train.crop_size < min(h, w):
            smp = random_crop(smp, run.train.crop_size, rng)
            fixed = False
        batch.append((smp, fixed))
    return batch


def train(run, dataset, steps, out_dir, resume=None, log=print, model=None):
    """Run ``steps`` optimization steps; returns (final ckpt path, loss curve).

    ``resume`` is a checkpoint path; training continues from its stored step
    with restored optimizer moments. Aborts on a non-finite loss or gradient,
    leaving the last written checkpoint in place. ``model`` injects a
    pre-built network (ablation variants); parameter paths must still satisfy
    the checkpoint writer.
    """
    _validate_train_setup(run, dataset)
    os.makedirs(out_dir, exist_ok=True)
    if model is None:
        model = RASM(run.model, seed=run.train.seed)
    params = model.parameters()
    opt = AdamW(params, weight_decay=run.train.weight_decay)
    extractor = FeatureExtractor(seed=run.train.extractor_seed)
    cfg_text = config_mod.to_text(run)

    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.config_text != cfg_text:
            raise TrainingError(
                "resume checkpoint was written with a different config")
        assign_parameters(model, ckpt.params)
        if ckpt.optimizer_state is not None:
            opt.load_state_dict(ckpt.optimizer_state)
        start = ckpt.step
    if steps < start:
        raise TrainingError(f"target step {steps} is before checkpoint step {start}")

    schedule = Schedule(total_steps=steps, lr_init=run.train.lr_init,
                        lr_final=run.train.lr_final,
                        warmup_steps=run.train.warmup_steps) if steps > 0 else None

    final_path = os.path.join(out_dir, "final.rasm")
    last_good = resume
    curve = []
    # Target features depend only on the frozen extractor, so they can be
    # memoized for samples that are never augmented or cropped.
    feat_cache = {}

    for step in range(start, steps):
        rng = np.random.default_rng(
            np.random.SeedSequence([run.train.seed, step]))
        lr = lr_at(schedule, step)
        batch = _draw_batch(run, dataset, rng)
        total = None
        for smp, fixed in batch:
            feats = None
            if fixed and smp.name:
                feats = feat_cache.get(smp.name)
                if feats is None:
                    feats = target_features(Tensor(smp.gt), extractor)
                    feat_cache[smp.name] = feats
            pred = model(Tensor(smp.shadow), Tensor(smp.mask), training=True)
            loss, _ = total_loss(pred, Tensor(smp.gt), extractor, run.loss,
                                 target_feats=feats)
            total = loss if total is None else total + loss
        total = total * (1.0 / len(batch))
        value = float(total.data)
        if not np.isfinite(value):
            raise TrainingError(
                f"non-finite loss at step {step}; last good checkpoint: "
                f"{last_good or 'none written'}")
        opt.zero_grad()
        total.backward()
        if run.train.grad_clip:
            clip_gradients(params, run.train.grad_clip)
        opt.step(lr)
        curve.append((step, value))
        done = step + 1
        if done % run.train.log_every == 0 or done == steps:
            log(f"step={done} loss={value:.6f} lr={lr:.6e}")
        if run.train.ckpt_every and done % run.train.ckpt_every == 0 and done < steps:
            p = os.path.join(out_dir, f"ckpt_{done:07d}.rasm")
            save_checkpoint(p, params, cfg_text, done, opt.state_dict())
            last_good = p

    save_checkpoint(final_path, params, cfg_text, steps,
                    opt.state_dict() if steps > 0 else None)
    return final_path, curve


def infer(model: RASM, shadow, mask):
    """Restore one image: reflect-pad to the stride multiple, forward, crop."""
    shadow = np.asarray(shadow.data if isinstance(shadow, Tensor) else shadow)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    h, w = shadow.shape[1:]
    f = 2 ** model.config.depth
    ph = (-h) % f
    pw = (-w) % f
    sp = np.pad(shadow, ((0, 0), (0, ph), (0, pw)), mode="reflect") if ph or pw \
        else shadow
    mp = np.pad(mask, ((0, 0), (0, ph), (0, pw)), mode="reflect") if ph or pw \
        else mask
    with T.no_grad():
        out = model(Tensor(sp), Tensor(mp), training=False)
    return np.ascontiguousarray(out.data[:, :h, :w])


def evaluate(model: RASM, dataset):
    """Metric records over a dataset; returns (records, csv text)."""
    records = []
    for i in range(len(dataset)):
        smp = dataset[i]
        pred = infer(model, smp.shadow, smp.mask)
        records.append(metric_record(smp.name or f"sample_{i:05d}",
                                     pred, smp.gt, smp.mask))
    return records, records_to_csv(records)


def dataset_psnr(model: RASM, dataset):
    """Mean whole-image PSNR of predictions against ground truth."""
    from .metrics import psnr
    vals = []
    for i in range(len(dataset)):
        smp = dataset[i]
        vals.append(psnr(infer(model, smp.shadow, smp.mask), smp.gt))
    return float(np.mean(vals))
