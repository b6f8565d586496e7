"""Training loop: curriculum batch order, Adam/SGD, logs, checkpoints.

Runs are deterministic: every shuffle is keyed by (seed, epoch, group),
optimizer state travels inside checkpoints, and resuming from an epoch
boundary reproduces the uninterrupted run bit for bit.
"""

import hashlib
import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import metrics as _metrics
from .checkpoint import save_checkpoint, load_checkpoint
from .vit import ViTConfig, forward_logits, init_params

__all__ = [
    "TrainConfig",
    "TrainResult",
    "train",
    "predict_proba",
    "predict_labels",
    "evaluate_model",
    "FINAL_CHECKPOINT",
    "TRAIN_LOG_JSON",
    "TRAIN_LOG_CSV",
]

FINAL_CHECKPOINT = "checkpoint_final.bvt"
TRAIN_LOG_JSON = "train_log.json"
TRAIN_LOG_CSV = "train_log.csv"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 3e-4
    optimizer: str = "adam"          # adam | sgd
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    curriculum_mode: str = "ordered"  # ordered | staged
    seed: int = 0
    checkpoint_every: int = 0         # epochs between snapshots, 0 = final only

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.curriculum_mode not in ("ordered", "staged"):
            raise ValueError(f"unknown curriculum_mode {self.curriculum_mode!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainResult:
    params: dict
    model_config: ViTConfig
    train_config: TrainConfig
    history: list = field(default_factory=list)
    step: int = 0
    classes: tuple = ()


def _trainable(params):
    return {name: p for name, p in params.items() if p.requires_grad}


def _adam_update(p, m, v, step, cfg):
    g = p.grad
    m *= cfg.beta1
    m += (1.0 - cfg.beta1) * g
    v *= cfg.beta2
    v += (1.0 - cfg.beta2) * g * g
    mhat = m / (1.0 - cfg.beta1 ** step)
    vhat = v / (1.0 - cfg.beta2 ** step)
    p.data -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)


def _groups_for_epoch(epoch, cfg, k):
    """Blur groups visited in one epoch, most blurred first.

    ordered: all k groups every epoch.  staged: the epoch budget is cut
    into k contiguous stages and stage j trains on the cumulative set
    {k-1, ..., k-1-j}, so sharper groups join over time.
    """
    if cfg.curriculum_mode == "ordered" or k == 1:
        return list(range(k - 1, -1, -1))
    base, extra = divmod(cfg.epochs, k)
    bounds = np.cumsum([base + (1 if s < extra else 0) for s in range(k)])
    stage = int(np.searchsorted(bounds, epoch, side="right"))
    stage = min(stage, k - 1)
    return list(range(k - 1, k - 2 - stage, -1))


def _epoch_pass(params, opt_state, dataset, model_config, cfg, epoch, step):
    """One epoch of updates.

    Returns (mean loss, train accuracy, groups, step records, step); each
    record is one optimizer step as (step, epoch, group, loss).
    """
    trainable = _trainable(params)
    loss_sum = 0.0
    n_correct = 0
    n_seen = 0
    records = []
    groups = _groups_for_epoch(epoch, cfg, dataset.schedule.k)
    for b in groups:
        order = dataset.group_epoch_order(cfg.seed, epoch, b)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            images = dataset.images[batch]
            labels = dataset.labels[batch]
            for p in trainable.values():
                p.zero_grad()
            logits = forward_logits(params, model_config, images)
            loss = ad.cross_entropy(logits, labels)
            ad.backward(loss)
            step += 1
            if cfg.optimizer == "adam":
                for name, p in trainable.items():
                    m, v = opt_state[name]
                    _adam_update(p, m, v, step, cfg)
            else:
                for p in trainable.values():
                    p.data -= cfg.learning_rate * p.grad
            loss_sum += loss.item()
            records.append((step, epoch, b, loss.item()))
            n_correct += int((logits.data.argmax(axis=1) == labels).sum())
            n_seen += len(batch)
    return loss_sum / len(records), n_correct / n_seen, groups, records, step


def _make_opt_state(params, extra, dtype):
    """Per-parameter (m, v) moment arrays, seeded from checkpoint extras."""
    state = {}
    for name, p in _trainable(params).items():
        m = extra.get(f"adam_m.{name}")
        v = extra.get(f"adam_v.{name}")
        state[name] = (np.zeros_like(p.data) if m is None else m.astype(dtype),
                       np.zeros_like(p.data) if v is None else v.astype(dtype))
    return state


def _opt_state_arrays(opt_state):
    out = {}
    for name, (m, v) in opt_state.items():
        out[f"adam_m.{name}"] = m
        out[f"adam_v.{name}"] = v
    return out


def _save(out_dir, filename, params, opt_state, model_config, meta):
    save_checkpoint(Path(out_dir) / filename, params, model_config,
                    meta=meta, extra=_opt_state_arrays(opt_state))


def _config_hash(model_config, cfg):
    blob = json.dumps({"model": model_config.to_dict(), "train": cfg.to_dict()},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _append_step_records(out_dir, records, lr):
    with open(Path(out_dir) / TRAIN_LOG_CSV, "a") as fh:
        for step, epoch, b, loss in records:
            fh.write(f"{step},{epoch},{b},{loss!r},{lr!r}\n")


def _write_json_log(out_dir, history, model_config, cfg):
    payload = {
        "format": "blurvit-train-log/1",
        "seed": cfg.seed,
        "config_hash": _config_hash(model_config, cfg),
        "model_config": model_config.to_dict(),
        "train_config": cfg.to_dict(),
        "epochs": history,
        "final": history[-1],
    }
    (Path(out_dir) / TRAIN_LOG_JSON).write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n")


def train(dataset, model_config, train_config, out_dir=None, resume_from=None,
          meta=None, verbose=False):
    """Fit the model on a curriculum dataset.

    If out_dir is set, writes checkpoint_final.bvt plus train logs (and
    periodic checkpoint_epoch_NNNN.bvt when checkpoint_every > 0).
    resume_from restarts from a checkpoint written by this function; the
    continuation matches an uninterrupted run exactly.
    """
    cfg = train_config
    if len(dataset) == 0:
        raise ValueError("curriculum dataset is empty")
    if cfg.curriculum_mode == "staged":
        sizes = np.bincount(dataset.groups, minlength=dataset.schedule.k)
        if cfg.batch_size > sizes.min():
            raise ValueError(f"staged mode needs batch_size <= smallest group "
                             f"({sizes.min()}), got {cfg.batch_size}")
    meta = dict(meta or {})
    if dataset.classes is not None:
        meta.setdefault("classes", list(dataset.classes))
    history = []
    start_epoch = 0
    step = 0
    if resume_from is not None:
        ck = load_checkpoint(resume_from, expect_config=model_config)
        params = ck.params
        start_epoch = int(ck.meta["epoch"])
        step = int(ck.meta["step"])
        history = list(ck.meta.get("history", []))
        opt_state = _make_opt_state(params, ck.extra, model_config.dtype)
    else:
        params = init_params(model_config, cfg.seed)
        opt_state = _make_opt_state(params, {}, model_config.dtype)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / TRAIN_LOG_CSV).write_text("step,epoch,group,loss,lr\n")

    for epoch in range(start_epoch, cfg.epochs):
        mean_loss, train_acc, groups, records, step = _epoch_pass(
            params, opt_state, dataset, model_config, cfg, epoch, step)
        history.append({"epoch": epoch, "mean_loss": mean_loss,
                        "train_accuracy": train_acc,
                        "blur_levels": [int(b) for b in groups]})
        if verbose:
            print(f"epoch {epoch + 1}/{cfg.epochs}  loss {mean_loss:.4f}  "
                  f"train acc {train_acc:.3f}")
        if out_dir is not None:
            _append_step_records(out_dir, records, cfg.learning_rate)
            ck_meta = {**meta, "epoch": epoch + 1, "step": step,
                       "train_config": cfg.to_dict(), "history": history}
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0 \
                    and epoch + 1 < cfg.epochs:
                _save(out_dir, f"checkpoint_epoch_{epoch + 1:04d}.bvt",
                      params, opt_state, model_config, ck_meta)
            if epoch + 1 == cfg.epochs:
                _save(out_dir, FINAL_CHECKPOINT, params, opt_state,
                      model_config, ck_meta)
                _write_json_log(out_dir, history, model_config, cfg)

    classes = dataset.classes or tuple(str(c) for c in range(dataset.n_classes))
    return TrainResult(params=params, model_config=model_config, train_config=cfg,
                       history=history, step=step, classes=tuple(classes))


def predict_proba(params, config, images, batch_size=64):
    """Softmax class probabilities, computed without recording a graph."""
    images = np.asarray(images, dtype=config.dtype)
    out = []
    with ad.no_grad():
        for start in range(0, len(images), batch_size):
            logits = forward_logits(params, config, images[start:start + batch_size]).data
            z = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(z)
            out.append(e / e.sum(axis=1, keepdims=True))
    return np.concatenate(out, axis=0)


def predict_labels(params, config, images, batch_size=64):
    return predict_proba(params, config, images, batch_size).argmax(axis=1)


def evaluate_model(params, config, images, labels, class_names, batch_size=64):
    """Evaluation report for a labelled image set."""
    prob = predict_proba(params, config, images, batch_size)
    return _metrics.evaluate(labels, prob, class_names)
