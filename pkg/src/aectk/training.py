"""Multitask optimization: weighted waveform MSE plus classification CE,
Adam with a geometric learning-rate schedule, validation-based early stopping,
and resumable checkpoints."""

import configparser
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import audio_io
from .autodiff import Tensor, backward
from .autodiff import ops
from .model import AecModelParams, ModelConfig, forward, init_params
from .synth import TalkLabelSequence, labels_on_grid

N_CLASSES = 4


class TrainingDiverged(RuntimeError):
    pass


class EarlyStopper:
    """Stop when the validation loss has not decreased for ``patience`` epochs."""

    def __init__(self, patience: int, best: float = math.inf, bad_epochs: int = 0):
        self.patience = patience
        self.best = best
        self.bad_epochs = bad_epochs

    def update(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; True means stop now."""
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved(self) -> bool:
        return self.bad_epochs == 0


@dataclass
class TrainConfig:
    alpha: float = 0.001
    lr_start: float = 1e-4
    lr_end: float = 1e-8
    epochs: int = 200
    patience: int = 10
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must be in [0, 1]")
        if not (self.lr_start >= self.lr_end > 0.0):
            raise ValueError("need lr_start >= lr_end > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class OptimizerState:
    """Adam moment accumulators, keyed like the parameter dict."""
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: AecModelParams) -> "OptimizerState":
        state = cls()
        for name, t in params.named().items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adam_step(params: AecModelParams, state: OptimizerState, lr: float) -> None:
    """One bias-corrected Adam update; missing gradients count as zero."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.named().items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Geometric interpolation from lr_start to lr_end across the epoch range;
    both endpoints are hit exactly."""
    if not (0 <= epoch < cfg.epochs):
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch == 0 or cfg.epochs == 1:
        return cfg.lr_start
    if epoch == cfg.epochs - 1:
        return cfg.lr_end
    frac = epoch / (cfg.epochs - 1)
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac


def one_hot(classes: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    classes = np.asarray(classes, dtype=np.int64)
    out = np.zeros((classes.size, n_classes))
    out[np.arange(classes.size), classes] = 1.0
    return out


def combine_losses(mse: float, ce: float, alpha: float) -> float:
    """The weighting arithmetic of the total loss, (1-alpha)*mse + alpha*ce."""
    return (1.0 - alpha) * mse + alpha * ce


def multitask_loss(s_hat: Tensor, s, class_probs: Tensor, labels,
                   alpha: float) -> Tensor:
    """(1 - alpha) * sum-of-squares waveform error + alpha * frame-mean CE.

    ``labels`` may be an int class array on the classifier's frame grid, a
    one-hot matrix, or a TalkLabelSequence whose frame count already matches.
    """
    if isinstance(labels, TalkLabelSequence):
        labels = labels.labels
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = one_hot(labels, class_probs.data.shape[1])
    if labels.shape != class_probs.data.shape:
        raise ValueError(f"multitask_loss: labels {labels.shape} vs "
                         f"probs {class_probs.data.shape}")
    mse = ops.mse_loss(s_hat, s)
    ce = ops.cross_entropy_loss(class_probs, labels)
    return ops.add(ops.scale(mse, 1.0 - alpha), ops.scale(ce, alpha))


# ---------------------------------------------------------------------------
# Config file parsing
# ---------------------------------------------------------------------------

def parse_training_config(path) -> tuple[ModelConfig, TrainConfig]:
    """Read [model] and [train] sections of a key=value config file."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(f"config file not found: {path}")
    m = cp["model"] if "model" in cp else {}
    t = cp["train"] if "train" in cp else {}

    def geti(sec, key, default):
        return int(sec.get(key, default))

    model_cfg = ModelConfig(
        n_basis=geti(m, "n_basis", 512),
        frame_len=geti(m, "frame_len", 160),
        hop=geti(m, "hop", 80),
        bottleneck=geti(m, "bottleneck", 256),
        hidden=geti(m, "hidden", 256),
        attention_window=geti(m, "attention_window", 100),
        mask_prelu_position=m.get("mask_prelu_position", "pre_conv") if m else "pre_conv",
    )
    train_cfg = TrainConfig(
        alpha=float(t.get("alpha", 0.001)),
        lr_start=float(t.get("lr_start", 1e-4)),
        lr_end=float(t.get("lr_end", 1e-8)),
        epochs=geti(t, "epochs", 200),
        patience=geti(t, "patience", 10),
        seed=geti(t, "seed", 0),
        val_fraction=float(t.get("val_fraction", 0.1)),
    )
    return model_cfg, train_cfg


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainItem:
    mixture: np.ndarray
    far: np.ndarray
    near: np.ndarray
    frame_classes: np.ndarray  # on the encoder grid


def load_train_items(manifest_path, model_cfg: ModelConfig) -> list[TrainItem]:
    manifest = audio_io.load_manifest(manifest_path)
    items = []
    for rec in manifest.records:
        def full(p):
            return audio_io.resolve_record_path(manifest_path, p)
        mixture = audio_io.read_wav(full(rec.mixture_path)).samples
        far = audio_io.read_wav(full(rec.far_end_path)).samples
        near = audio_io.read_wav(full(rec.near_end_path)).samples
        raw = audio_io.read_labels(full(rec.label_path))
        labels = TalkLabelSequence(raw)
        from .model import padded_length
        t_hat = (padded_length(len(mixture), model_cfg) - model_cfg.frame_len) \
            // model_cfg.hop + 1
        grid = labels_on_grid(labels, t_hat, model_cfg.hop)
        items.append(TrainItem(mixture, far, near, grid))
    return items


def _run_loss(item: TrainItem, params, model_cfg, alpha) -> Tensor:
    s_hat, probs = forward(item.mixture, item.far, params, model_cfg)
    return multitask_loss(s_hat, item.near, probs, item.frame_classes, alpha)


@dataclass
class TrainResult:
    checkpoint_path: str
    last_checkpoint_path: str
    history_path: str
    history: list  # (epoch, train_loss, val_loss)
    stopped_early: bool


def train(manifest_path, model_cfg: ModelConfig, train_cfg: TrainConfig,
          out_dir, resume_from=None, log_fn=None,
          stop_after_epoch: int | None = None) -> TrainResult:
    """Optimize the model; writes best/last checkpoints and a loss history.

    The best-validation checkpoint is ``checkpoint.aeck``; ``checkpoint_last.aeck``
    additionally carries Adam state and counters so a later call with
    ``resume_from`` continues the schedule exactly where it stopped.
    ``stop_after_epoch`` pauses the run after that epoch index without
    touching the early-stopping state (the schedule still spans cfg.epochs).
    """
    os.makedirs(out_dir, exist_ok=True)
    items = load_train_items(manifest_path, model_cfg)
    if not items:
        raise ValueError("empty training manifest")

    split_rng = np.random.default_rng([train_cfg.seed, 55])
    order = split_rng.permutation(len(items))
    n_val = int(round(train_cfg.val_fraction * len(items)))
    if len(items) == 1:
        train_items = val_items = [items[0]]
    else:
        n_val = max(1, min(n_val, len(items) - 1))
        val_items = [items[i] for i in order[:n_val]]
        train_items = [items[i] for i in order[n_val:]]

    def snapshot(arrays):
        return {k: v.copy() for k, v in arrays.items()}

    start_epoch = 0
    params = init_params(model_cfg, seed=train_cfg.seed)
    opt = OptimizerState.for_params(params)
    stopper = EarlyStopper(train_cfg.patience)
    best_arrays = snapshot(params.arrays())
    best_epoch = -1
    if resume_from is not None:
        arrays, meta, opt_state = audio_io.load_checkpoint(resume_from)
        params.load_arrays(arrays)
        if opt_state is not None:
            opt.m = opt_state["m"]
            opt.v = opt_state["v"]
        opt.step = int(meta["opt_step"])
        start_epoch = int(meta["epoch"]) + 1
        stopper = EarlyStopper(train_cfg.patience, best=float(meta["best_val"]),
                               bad_epochs=int(meta["bad_epochs"]))
        best_epoch = int(meta.get("best_epoch", -1))
        sibling_best = os.path.join(os.path.dirname(os.path.abspath(resume_from)),
                                    "checkpoint.aeck")
        if best_epoch >= 0 and os.path.exists(sibling_best):
            best_arrays = snapshot(audio_io.load_checkpoint(sibling_best)[0])
        else:
            best_arrays = snapshot(params.arrays())

    ckpt_path = os.path.join(out_dir, "checkpoint.aeck")
    last_path = os.path.join(out_dir, "checkpoint_last.aeck")
    history_path = os.path.join(out_dir, "history.tsv")

    def base_meta(epoch, lr):
        return {"model_config": model_cfg.to_meta(), "epoch": epoch, "lr": lr,
                "opt_step": opt.step, "best_val": stopper.best,
                "bad_epochs": stopper.bad_epochs, "best_epoch": best_epoch,
                "init": "uniform_fan_in", "seed": train_cfg.seed}

    history = []
    stopped_early = False
    hist_mode = "a" if (start_epoch > 0 and os.path.exists(history_path)) else "w"
    with open(history_path, hist_mode, encoding="utf-8") as hist:
        for epoch in range(start_epoch, train_cfg.epochs):
            lr = lr_at(epoch, train_cfg)
            epoch_rng = np.random.default_rng([train_cfg.seed, 1000 + epoch])
            losses = []
            for idx in epoch_rng.permutation(len(train_items)):
                item = train_items[idx]
                params.zero_grad()
                try:
                    loss = _run_loss(item, params, model_cfg, train_cfg.alpha)
                except FloatingPointError as exc:
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}: {exc}") from exc
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    raise TrainingDiverged(f"loss diverged at epoch {epoch}: {loss_val}")
                backward(loss)
                adam_step(params, opt, lr)
                losses.append(loss_val)
            train_loss = float(np.mean(losses))
            val_losses = [_run_loss(it, params, model_cfg, train_cfg.alpha).item()
                          for it in val_items]
            val_loss = float(np.mean(val_losses))
            if not math.isfinite(val_loss):
                raise TrainingDiverged(f"validation loss diverged at epoch {epoch}")
            history.append((epoch, train_loss, val_loss))
            hist.write(f"{epoch}\t{train_loss!r}\t{val_loss!r}\n")
            if log_fn is not None:
                log_fn(f"epoch {epoch}: train {train_loss:.6g} val {val_loss:.6g} lr {lr:.3g}")

            should_stop = stopper.update(val_loss)
            if stopper.improved:
                best_arrays = snapshot(params.arrays())
                best_epoch = epoch
            audio_io.save_checkpoint(last_path, params.arrays(),
                                     meta=base_meta(epoch, lr),
                                     opt_state={"m": opt.m, "v": opt.v})
            if should_stop:
                stopped_early = True
                break
            if stop_after_epoch is not None and epoch >= stop_after_epoch:
                break

    final_epoch = best_epoch if best_epoch >= 0 else start_epoch - 1
    audio_io.save_checkpoint(ckpt_path, best_arrays,
                             meta=base_meta(final_epoch,
                                            lr_at(max(0, min(final_epoch,
                                                             train_cfg.epochs - 1)),
                                                  train_cfg)))
    return TrainResult(ckpt_path, last_path, history_path, history, stopped_early)


def load_model(checkpoint_path) -> tuple[AecModelParams, ModelConfig]:
    arrays, meta, _ = audio_io.load_checkpoint(checkpoint_path)
    cfg = ModelConfig.from_meta(meta["model_config"])
    params = init_params(cfg, seed=0)
    params.load_arrays(arrays)
    return params, cfg
