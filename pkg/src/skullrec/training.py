"""Dataset splitting, the training loop, reconstruction and evaluation."""
from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .defects import DatasetManifest
from .formats import VolumeIOError, load_volume
from .losses import argmax_mask, dice_both_channels, dice_loss, dice_metric, one_hot
from .nn.model import InvalidConfig, Model, ModelConfig, build_autoencoder, forward
from .nn.tensor import Tensor, no_grad
from .optim import Adam
from .volume import Volume, binarize
from .voxel_ops import CropRegion, axial_region, crop, crop_axial, resize_area, uncrop



class InsufficientData(ValueError):
    pass


class DataError(RuntimeError):
    pass


class ResumeMismatch(ValueError):
    pass


# Fields that do not change what a training step computes.
_NON_COMPUTE_FIELDS = ("checkpoint_dir", "manifest", "epochs", "workers")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    resize: tuple[int, int, int] = (256, 256, 128)
    crop_axial: int | None = None
    crop_before_resize: bool = True
    lr: float = 1e-3
    batch_size: int = 1
    epochs: int = 1
    seed: int = 0
    workers: int = 1
    validate_every: int = 1
    checkpoint_dir: str = "checkpoints"
    manifest: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "resize", tuple(int(n) for n in self.resize))
        if len(self.resize) != 3:
            raise InvalidConfig("resize must have 3 entries")
        if self.batch_size < 1 or self.epochs < 1 or self.workers < 1 or self.validate_every < 1:
            raise InvalidConfig("batch_size, epochs, workers and validate_every must be >= 1")
        sp = self.model.stride_product
        for axis, n in zip("xyz", self.resize):
            if n % sp:
                raise InvalidConfig(f"resize {axis}={n} is not divisible by stride product {sp}")
        if self.crop_axial is not None:
            if self.crop_axial < 1:
                raise InvalidConfig("crop_axial must be >= 1")
            if not self.crop_before_resize and (self.crop_axial > self.resize[2] or self.crop_axial % sp):
                raise InvalidConfig(f"crop_axial={self.crop_axial} must be <= resize z and divisible by {sp} "
                                    "when cropping after resize")

    def to_json(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_json()
        d["resize"] = list(self.resize)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["model"] = ModelConfig.from_json(d.get("model", {}))
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        """Read a JSON config; a relative ``manifest`` / ``checkpoint_dir`` resolves against the file."""
        path = Path(path)
        cfg = cls.from_json(json.loads(path.read_text()))
        base = path.parent
        updates = {}
        if cfg.manifest and not Path(cfg.manifest).is_absolute():
            updates["manifest"] = str(base / cfg.manifest)
        if not Path(cfg.checkpoint_dir).is_absolute():
            updates["checkpoint_dir"] = str(base / cfg.checkpoint_dir)
        return replace(cfg, **updates)

    def snapshot(self) -> dict:
        """The part of the config that determines the computation."""
        d = self.to_json()
        for key in _NON_COMPUTE_FIELDS:
            d.pop(key, None)
        return d


# -- splitting --------------------------------------------------------------

def split_dataset(completes: list, counts, seed: int) -> DatasetManifest:
    """Shuffle ``completes`` by ``seed`` and assign train/val/test by ``counts``.

    Test rows are flagged ``both_kinds`` so pair building creates both a
    cranial and a facial defect for each. Items beyond sum(counts) are
    left out.
    """
    n_train, n_val, n_test = (int(c) for c in counts)
    if min(n_train, n_val, n_test) < 0:
        raise ValueError("split counts must be non-negative")
    total = n_train + n_val + n_test
    if total > len(completes):
        raise InsufficientData(f"requested {total} cases but only {len(completes)} completes available")
    order = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5B17])).permutation(len(completes))
    entries = []
    for rank, idx in enumerate(order[:total]):
        item = completes[int(idx)]
        entry = dict(item) if isinstance(item, dict) else {"complete": str(item)}
        entry.setdefault("id", Path(entry["complete"]).name.split(".")[0])
        if rank < n_train:
            entry["split"] = "train"
        elif rank < n_train + n_val:
            entry["split"] = "val"
        else:
            entry["split"] = "test"
            entry["both_kinds"] = True
        entries.append(entry)
    return DatasetManifest(entries)


# -- preprocessing ----------------------------------------------------------

def preprocess_volume(vol: Volume, cfg: TrainConfig) -> np.ndarray:
    """binarize -> axial crop -> area resize, as a network-grid array.

    With ``crop_before_resize=False`` the whole volume is resized first and
    ``crop_axial`` counts slices of the resized grid instead.
    """
    vol = binarize(vol, 0.5)
    if cfg.crop_axial is None:
        out = resize_area(vol, cfg.resize)
    elif cfg.crop_before_resize:
        out = resize_area(crop_axial(vol, cfg.crop_axial), cfg.resize)
    else:
        out = crop_axial(resize_area(vol, cfg.resize), cfg.crop_axial)
    return np.asarray(out.data, dtype=np.float32)


def restore_geometry(mask: np.ndarray, like: Volume, cfg: TrainConfig) -> Volume:
    """Inverse of :func:`preprocess_volume` for a binary network-grid mask."""
    net = Volume(np.ascontiguousarray(mask, dtype=np.uint8))
    if cfg.crop_axial is None:
        back = binarize(resize_area(net, like.dims), 0.5)
    elif cfg.crop_before_resize:
        region = axial_region(like.dims, cfg.crop_axial)
        frame = tuple(h - l for l, h in zip(region.lo, region.hi))
        back = uncrop(binarize(resize_area(net, frame), 0.5), region, like.dims)
    else:
        full = uncrop(net, axial_region(cfg.resize, cfg.crop_axial), cfg.resize)
        back = binarize(resize_area(full, like.dims), 0.5)
    return Volume(back.data, like.spacing, like.origin)


def load_checked(path) -> Volume:
    try:
        return load_volume(path)
    except (OSError, VolumeIOError, ValueError) as exc:
        raise DataError(f"cannot load {path}: {exc}") from exc


def preprocess_entry(manifest: DatasetManifest, entry: dict, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """(network input from the defective skull, one-hot target from the complete skull)."""
    x = preprocess_volume(load_checked(manifest.path(entry["defective"])), cfg)
    y = preprocess_volume(load_checked(manifest.path(entry["complete"])), cfg)
    target = one_hot((y > 0.5).astype(np.uint8)[None])[0]
    return x[None], target


class SampleLoader:
    """Preprocesses samples on a thread pool; results come back in request order."""

    def __init__(self, manifest: DatasetManifest, cfg: TrainConfig, cache: bool = True):
        self.manifest = manifest
        self.cfg = cfg
        self.cache = {} if cache else None
        self.pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None

    def _one(self, entry):
        key = entry["id"]
        if self.cache is not None and key in self.cache:
            return self.cache[key]
        sample = preprocess_entry(self.manifest, entry, self.cfg)
        if self.cache is not None:
            self.cache[key] = sample
        return sample

    def batch(self, entries: list[dict]) -> tuple[np.ndarray, np.ndarray]:
        samples = list(self.pool.map(self._one, entries)) if self.pool else [self._one(e) for e in entries]
        return np.stack([s[0] for s in samples]), np.stack([s[1] for s in samples])

    def close(self):
        if self.pool:
            self.pool.shutdown()


# -- training ---------------------------------------------------------------

def _emit(line: str, stream) -> None:
    if stream is not None:
        print(line, file=stream, flush=True)


def _predict_masks(model: Model, x: np.ndarray) -> np.ndarray:
    with no_grad():
        logits = forward(model, Tensor(x)).data
    return argmax_mask(logits)


def validate(model: Model, loader: SampleLoader, entries: list[dict]) -> float:
    """Mean foreground Dice on the network grid; does not touch parameters."""
    scores = []
    for entry in entries:
        x, target = loader.batch([entry])
        pred = _predict_masks(model, x)[0]
        truth = target[0, 1].astype(np.uint8)
        total = int(pred.sum()) + int(truth.sum())
        scores.append(1.0 if total == 0 else 2.0 * int((pred & truth).sum()) / total)
    return float(np.mean(scores))


def train(manifest: DatasetManifest, cfg: TrainConfig, resume: Checkpoint | str | Path | None = None,
          progress=sys.stderr) -> Checkpoint:
    """Train the autoencoder on the manifest's train split.

    Writes ``last.skrc`` after every epoch and ``best.skrc`` whenever the
    validation foreground Dice strictly improves. Returns the final
    checkpoint.
    """
    train_entries = manifest.split("train")
    if not train_entries:
        raise DataError("manifest has no usable train entries")
    val_entries = manifest.split("val")
    for e in train_entries + val_entries:
        for key in ("defective", "complete"):
            if not manifest.path(e[key]).exists():
                raise DataError(f"missing {key} file for {e['id']}: {manifest.path(e[key])}")

    model = build_autoencoder(cfg.model, cfg.seed)
    start_epoch, best_dice, best_epoch = 0, -1.0, 0
    snapshot = cfg.snapshot()
    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        if ckpt.config != snapshot:
            diff = sorted(k for k in set(snapshot) | set(ckpt.config) if snapshot.get(k) != ckpt.config.get(k))
            raise ResumeMismatch(f"checkpoint config differs from current config in: {', '.join(diff)}")
        model.load_flat_parameters(ckpt.params)
        opt = Adam(model.parameters(), state=ckpt.restore_optimizer(model))
        start_epoch = ckpt.epoch
        best_dice = ckpt.info.get("best_val_dice", -1.0)
        best_epoch = ckpt.info.get("best_epoch", 0)
    else:
        opt = Adam(model.parameters(), lr=cfg.lr)

    out_dir = Path(cfg.checkpoint_dir)
    loader = SampleLoader(manifest, cfg)
    last = None
    try:
        for epoch in range(start_epoch + 1, cfg.epochs + 1):
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
            order = rng.permutation(len(train_entries))
            for step, start in enumerate(range(0, len(order), cfg.batch_size), 1):
                batch = [train_entries[i] for i in order[start:start + cfg.batch_size]]
                x, target = loader.batch(batch)
                model.zero_grad()
                loss = dice_loss(forward(model, Tensor(x)), target)
                loss_value = loss.item()
                loss.backward()
                opt.step()
                _emit(f"epoch={epoch} step={step} loss={loss_value!r}", progress)

            info = {"best_val_dice": best_dice, "best_epoch": best_epoch}
            improved = False
            if val_entries and (epoch % cfg.validate_every == 0 or epoch == cfg.epochs):
                val_dice = validate(model, loader, val_entries)
                _emit(f"epoch={epoch} val_dice={val_dice!r}", progress)
                if val_dice > best_dice:
                    best_dice, best_epoch, improved = val_dice, epoch, True
                info = {"best_val_dice": best_dice, "best_epoch": best_epoch, "val_dice": val_dice}
            last = Checkpoint.capture(model, opt.state, snapshot, epoch, **info)
            save_checkpoint(out_dir / "last.skrc", last)
            if improved:
                save_checkpoint(out_dir / "best.skrc", last)
    finally:
        loader.close()
    if last is None:
        # resumed at or beyond the requested epoch count
        last = Checkpoint.capture(model, opt.state, snapshot, start_epoch,
                                  best_val_dice=best_dice, best_epoch=best_epoch)
    return last


# -- inference --------------------------------------------------------------

def _as_checkpoint(checkpoint) -> Checkpoint:
    return checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)


def train_config_of(ckpt: Checkpoint) -> TrainConfig:
    return TrainConfig.from_json(ckpt.config)


def reconstruct(checkpoint, defective: Volume, model: Model | None = None) -> Volume:
    """Predicted complete skull on the input's grid (binary)."""
    ckpt = _as_checkpoint(checkpoint)
    cfg = train_config_of(ckpt)
    model = model or ckpt.build_model()
    x = preprocess_volume(defective, cfg)
    mask = _predict_masks(model, x[None, None])[0]
    return restore_geometry(mask, defective, cfg)


def evaluate_cases(cases, predict) -> dict:
    """Dice report over ``cases`` (dicts with id/complete/implant volumes)."""
    rows = []
    for case in cases:
        pred, truth, implant = predict(case), case["complete"], case["implant"]
        row = {
            "id": case["id"],
            "dice": dice_metric(pred, truth),
            "dice_both": dice_both_channels(pred, truth),
        }
        idx = np.nonzero(implant.data)
        if len(idx[0]):
            region = CropRegion(tuple(int(i.min()) for i in idx), tuple(int(i.max()) + 1 for i in idx))
            row["border_dice"] = dice_metric(crop(pred, region), crop(truth, region))
        else:
            row["border_dice"] = float("nan")
        rows.append(row)
    if not rows:
        raise ValueError("no cases to evaluate")
    report = {"n": len(rows), "cases": rows}
    for key in ("dice", "dice_both", "border_dice"):
        vals = np.array([r[key] for r in rows], dtype=np.float64)
        report[f"mean_{key}"] = float(np.nanmean(vals))
        report[f"std_{key}"] = float(np.nanstd(vals))
    return report


def load_cases(manifest: DatasetManifest, split: str) -> list[dict]:
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"split {split!r} has no entries")
    cases = []
    for e in entries:
        cases.append({
            "id": e["id"],
            "defective": binarize(load_checked(manifest.path(e["defective"]))),
            "complete": binarize(load_checked(manifest.path(e["complete"]))),
            "implant": binarize(load_checked(manifest.path(e["implant"]))),
        })
    return cases


def evaluate(checkpoint, manifest: DatasetManifest, split: str) -> dict:
    ckpt = _as_checkpoint(checkpoint)
    model = ckpt.build_model()
    report = evaluate_cases(load_cases(manifest, split), lambda c: reconstruct(ckpt, c["defective"], model))
    report["split"] = split
    return report
