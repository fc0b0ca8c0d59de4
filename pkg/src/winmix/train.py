"""Training loop: decoupled-weight-decay Adam, warmup + cosine schedule,
label-smoothed cross-entropy, deterministic batching, and bit-exact
checkpoint/resume.

The loop is a pure function of (config, data, hyperparams, seed): batches are
drawn from a dedicated PCG64 stream whose state is checkpointed, parameter
updates replace the table atomically between steps, and metric history is
recorded as plain floats, so identical seeds reproduce identical histories.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import SyntheticDataset
from .io import load_checkpoint, save_checkpoint
from .model import Model, ModelConfig, build_model, forward
from .tensor import NumericError, Tensor

__all__ = [
    "Hyperparams",
    "TrainState",
    "DivergenceError",
    "train",
    "evaluate",
    "save_state",
    "load_state",
    "lr_at",
]


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss; carries the last-good checkpoint path."""

    def __init__(self, step: int, checkpoint: str | None):
        self.step = step
        self.checkpoint = checkpoint
        where = f", last-good checkpoint at {checkpoint}" if checkpoint else ""
        super().__init__(f"non-finite loss at step {step}{where}")


@dataclass(frozen=True)
class Hyperparams:
    lr: float = 1e-3
    weight_decay: float = 0.05
    warmup_frac: float = 0.05
    steps: int = 2000
    batch_size: int = 32
    label_smoothing: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 100
    target_accuracy: float | None = None  # early-stop threshold on val accuracy

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if self.steps < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("steps, batch_size and eval_every must be >= 1")
        if not (0.0 <= self.warmup_frac <= 1.0):
            raise ValueError("warmup_frac must lie in [0, 1]")
        if not (0.0 <= self.label_smoothing < 1.0):
            raise ValueError("label_smoothing must lie in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "Hyperparams":
        return Hyperparams(**d)


@dataclass
class TrainState:
    model: Model
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int
    seed: int
    hp: Hyperparams
    rng_state: dict
    step_losses: list[float] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)

    @property
    def final_val_accuracy(self) -> float | None:
        return self.evals[-1]["val_acc"] if self.evals else None


def lr_at(hp: Hyperparams, step: int) -> float:
    """Learning rate for 1-based step: linear warmup then cosine to zero."""
    warmup = int(round(hp.warmup_frac * hp.steps))
    if warmup > 0 and step <= warmup:
        return hp.lr * step / warmup
    span = max(1, hp.steps - warmup)
    t = (step - warmup) / span
    return hp.lr * 0.5 * (1.0 + float(np.cos(np.pi * min(t, 1.0))))


def _decays(name: str, t: Tensor) -> bool:
    return t.ndim >= 2 and not name.endswith("rel_bias")


def smoothed_cross_entropy(logits: Tensor, labels: np.ndarray, smoothing: float) -> Tensor:
    """Mean of -sum(q * log p) with q the smoothed one-hot targets."""
    k = logits.shape[-1]
    q = np.full((labels.size, k), smoothing / k, dtype=logits.data.dtype)
    q[np.arange(labels.size), labels] += 1.0 - smoothing
    logp = T.log_softmax_last_axis(logits)
    return T.tmean(T.tsum(Tensor(q) * logp, axis=1)) * -1.0


def _adamw_step(state: TrainState, grads: dict[str, np.ndarray], lr: float) -> None:
    hp = state.hp
    t = state.step
    c1 = 1.0 - hp.beta1 ** t
    c2 = 1.0 - hp.beta2 ** t
    new_params: dict[str, Tensor] = {}
    for name, p in state.model.params.items():
        g = grads[name]
        m = state.m[name] = hp.beta1 * state.m[name] + (1 - hp.beta1) * g
        v = state.v[name] = hp.beta2 * state.v[name] + (1 - hp.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + hp.eps)
        if _decays(name, p):
            update = update + hp.weight_decay * p.data
        new_params[name] = Tensor((p.data - lr * update).astype(p.data.dtype),
                                  requires_grad=True)
    state.model = state.model.replace_params(new_params)


def evaluate(model: Model, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 64) -> tuple[float, float]:
    """Top-1 accuracy and mean cross-entropy over a dataset split."""
    n = images.shape[0]
    correct = 0
    losses = np.empty(n, dtype=np.float64)
    with T.no_grad():
        for start in range(0, n, batch_size):
            xb = Tensor(images[start:start + batch_size])
            yb = labels[start:start + batch_size]
            logits = forward(model, xb)
            logp = T.log_softmax_last_axis(logits).data
            correct += int((logp.argmax(axis=1) == yb).sum())
            losses[start:start + batch_size] = -logp[np.arange(yb.size), yb]
    return correct / n, float(losses.mean())


def train(cfg: ModelConfig, data: SyntheticDataset, hp: Hyperparams,
          seed: int = 0, state: TrainState | None = None,
          out_dir=None, checkpoint_every: int | None = None,
          until: int | None = None) -> TrainState:
    """Run (or resume) the training loop up to hp.steps.

    Pass ``state`` from load_state to continue a run bit-exactly; ``until``
    pauses earlier than hp.steps while keeping the full-run schedule (the
    warmup/cosine shape depends on hp.steps, not on where you pause). A
    non-finite loss aborts with DivergenceError after writing the last-good
    checkpoint (when out_dir is given).
    """
    if state is None:
        model = build_model(cfg, seed=seed)
        rng = np.random.Generator(np.random.PCG64(seed + 1))
        state = TrainState(
            model=model,
            m={k: np.zeros_like(t.data) for k, t in model.params.items()},
            v={k: np.zeros_like(t.data) for k, t in model.params.items()},
            step=0, seed=seed, hp=hp, rng_state=rng.bit_generator.state,
        )
    else:
        if state.model.config != cfg:
            raise ValueError("resumed state was trained with a different config")
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = state.rng_state
        hp = state.hp

    n = data.train_images.shape[0]
    out_path = None
    if out_dir is not None:
        import pathlib

        out_dir = pathlib.Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        out_path = out_dir / "last_good.wmix"

    stop = hp.steps if until is None else min(until, hp.steps)
    while state.step < stop:
        idx = rng.integers(0, n, hp.batch_size)
        xb = Tensor(data.train_images[idx])
        yb = data.train_labels[idx]
        params = state.model.params
        try:
            logits = forward(state.model, xb)
            loss = smoothed_cross_entropy(logits, yb, hp.label_smoothing)
            for p in params.values():
                p.grad = None
            T.backward(loss)
        except NumericError:
            if out_path is not None:
                save_state(out_path, state)
            raise DivergenceError(state.step + 1, str(out_path) if out_path else None)
        grads = {k: p.grad if p.grad is not None else np.zeros_like(p.data)
                 for k, p in params.items()}
        state.step += 1
        state.step_losses.append(loss.item())
        _adamw_step(state, grads, lr_at(hp, state.step))
        state.rng_state = rng.bit_generator.state

        done = state.step >= hp.steps
        if state.step % hp.eval_every == 0 or done:
            acc, vloss = evaluate(state.model, data.val_images, data.val_labels)
            state.evals.append({
                "step": state.step,
                "lr": lr_at(hp, state.step),
                "train_loss": state.step_losses[-1],
                "val_acc": acc,
                "val_loss": vloss,
            })
            if hp.target_accuracy is not None and acc >= hp.target_accuracy:
                break
        if checkpoint_every and state.step % checkpoint_every == 0 and out_path is not None:
            save_state(out_path, state)

    if out_path is not None:
        save_state(out_path, state)
    return state


# -- persistence --------------------------------------------------------------


def save_state(path, state: TrainState) -> None:
    """Checkpoint the full training state (bit-exact round trip)."""
    blob = {
        "schema_version": 1,
        "model": state.model.config.to_dict(),
        "train": {
            "step": state.step,
            "seed": state.seed,
            "hp": state.hp.to_dict(),
            "rng_state": _encode_rng(state.rng_state),
            "step_losses": state.step_losses,
            "evals": state.evals,
        },
    }
    tensors = {k: t.data for k, t in state.model.params.items()}
    for k, arr in state.m.items():
        tensors[f"opt.m.{k}"] = arr
    for k, arr in state.v.items():
        tensors[f"opt.v.{k}"] = arr
    save_checkpoint(path, blob, tensors)


def load_state(path) -> TrainState:
    blob, tensors = load_checkpoint(path)
    cfg = ModelConfig.from_dict(blob["model"])
    tr = blob["train"]
    params = {k: Tensor(v, requires_grad=True) for k, v in tensors.items()
              if not k.startswith("opt.")}
    model = Model(config=cfg, params=params,
                  dtype=next(iter(params.values())).data.dtype)
    return TrainState(
        model=model,
        m={k[len("opt.m."):]: v for k, v in tensors.items() if k.startswith("opt.m.")},
        v={k[len("opt.v."):]: v for k, v in tensors.items() if k.startswith("opt.v.")},
        step=tr["step"],
        seed=tr["seed"],
        hp=Hyperparams.from_dict(tr["hp"]),
        rng_state=_decode_rng(tr["rng_state"]),
        step_losses=list(tr["step_losses"]),
        evals=list(tr["evals"]),
    )


def _encode_rng(rs: dict) -> dict:
    return {
        "bit_generator": rs["bit_generator"],
        "state": {"state": str(rs["state"]["state"]), "inc": str(rs["state"]["inc"])},
        "has_uint32": rs["has_uint32"],
        "uinteger": rs["uinteger"],
    }


def _decode_rng(enc: dict) -> dict:
    return {
        "bit_generator": enc["bit_generator"],
        "state": {"state": int(enc["state"]["state"]), "inc": int(enc["state"]["inc"])},
        "has_uint32": enc["has_uint32"],
        "uinteger": enc["uinteger"],
    }
