"""Recurrent encoder/decoder forecaster with a stable-mixture head and parametric baselines.

The backbone is an LSTM encoder over the standardized context and a one-step
LSTM decoder fed ``[feedback, c]`` where ``c`` is the encoder summary. Each
decoder state is projected to distribution parameters for that horizon.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Scaler, WindowedDataset
from .mixture import MixtureParams, cf_loss_tensor, entropy_tensor, make_grid
from .optim import Adam, CosineSchedule, clip_and_step
from .sampler import RngStream, sample_component, sample_stable_arrays
from .stable import StableParams

log = logging.getLogger(__name__)

HEAD_KINDS = ("levy_mixture", "gaussian", "student_t", "asym_student_t", "gaussian_mixture", "student_t_mixture")
CHECKPOINT_FORMAT = "levyforecast-checkpoint"
CHECKPOINT_VERSION = 1
MIN_BATCH = 128
SKEW_MARGIN = 0.98


class BatchSizeError(ValueError):
    pass


class NumericalAbort(RuntimeError):
    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


@dataclass
class ModelConfig:
    context_length: int = 50
    horizon: int = 20
    hidden_dim: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 1
    n_components: int = 3
    alpha_min: float = 0.1
    alpha_max: float = 1.95
    eps_beta_max: float = 0.02
    eps_gamma: float = 1e-4
    lambda_ent: float = 0.01
    grid_m: int = 129
    tau_max: float = 15.0
    weighting: str = "adaptive"
    head_kind: str = "levy_mixture"
    learning_rate: float = 5e-4
    batch_size: int = 256
    epochs: int = 100
    max_grad_norm: float = 1.0
    allow_small_batch: bool = False

    def __post_init__(self):
        if not 0 < self.alpha_min < self.alpha_max <= 2:
            raise ValueError("need 0 < alpha_min < alpha_max <= 2")
        if not 0 < self.eps_beta_max < 1:
            raise ValueError("eps_beta_max must lie in (0, 1)")
        if self.n_components < 1 or self.context_length < 1 or self.horizon < 1:
            raise ValueError("n_components, context_length and horizon must be >= 1")
        if self.hidden_dim < 1 or self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ValueError("network sizes must be >= 1")
        if self.head_kind not in HEAD_KINDS:
            raise ValueError(f"head_kind must be one of {HEAD_KINDS}")
        if self.weighting not in ("adaptive", "uniform"):
            raise ValueError("weighting must be 'adaptive' or 'uniform'")
        if self.eps_gamma <= 0 or self.lambda_ent < 0 or self.learning_rate <= 0:
            raise ValueError("eps_gamma and learning_rate must be positive, lambda_ent nonnegative")

    @property
    def k(self) -> int:
        """Components actually used by the head."""
        return 1 if self.head_kind in ("gaussian", "student_t", "asym_student_t") else self.n_components

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


def _head_fields(kind: str):
    if kind == "levy_mixture":
        return ("pi", "alpha", "beta", "gamma", "delta")
    base = ["pi", "loc", "scale"]
    if "student_t" in kind:
        base.append("dof")
    if kind == "asym_student_t":
        base.append("skew")
    return tuple(base)


# parameters ---------------------------------------------------------------------

def init_params(config: ModelConfig, seed: int = 0) -> dict:
    """LSTM weights uniform in ``±1/sqrt(d)``; head weights small, head biases zero."""
    gen = RngStream(seed, 0).generator
    d = config.hidden_dim
    bound = 1.0 / math.sqrt(d)
    p = {}

    def lstm(prefix, n_in):
        p[f"{prefix}.Wx"] = gen.uniform(-bound, bound, (n_in, 4 * d))
        p[f"{prefix}.Wh"] = gen.uniform(-bound, bound, (d, 4 * d))
        p[f"{prefix}.b"] = gen.uniform(-bound, bound, 4 * d)

    for layer in range(config.encoder_layers):
        lstm(f"enc.{layer}", 1 if layer == 0 else d)
    for layer in range(config.decoder_layers):
        lstm(f"dec.{layer}", 1 + d if layer == 0 else d)
    for name in _head_fields(config.head_kind):
        p[f"head.{name}.W"] = gen.normal(0.0, 0.1 * bound, (d, config.k))
        p[f"head.{name}.b"] = np.zeros(config.k)
    return {name: ad.parameter(v, name) for name, v in p.items()}


def zero_params(config: ModelConfig) -> dict:
    params = init_params(config, 0)
    for t in params.values():
        t.value = np.zeros_like(t.value)
    return params


# backbone -----------------------------------------------------------------------

def lstm_cell(params, prefix, x_proj, state):
    """One LSTM step given the already-projected input ``x @ Wx``."""
    h, mem = state
    d = h.shape[-1]
    z = x_proj + h @ params[f"{prefix}.Wh"] + params[f"{prefix}.b"]
    both = ad.lstm_gates(z, mem)
    return both[:, :d], both[:, d:]


def encode(params, config: ModelConfig, context):
    """Encode standardized contexts (B, T) into ``(c, memory)`` of shape (B, d) each."""
    x = np.asarray(context.value if isinstance(context, ad.Tensor) else context, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != config.context_length:
        raise ValueError(f"context length {x.shape[1]} does not match config T={config.context_length}")
    b, t = x.shape
    d = config.hidden_dim
    seq = [ad.Tensor(x[:, step:step + 1]) for step in range(t)]
    state = None
    for layer in range(config.encoder_layers):
        prefix = f"enc.{layer}"
        state = (ad.Tensor(np.zeros((b, d))), ad.Tensor(np.zeros((b, d))))
        outs = []
        for inp in seq:
            state = lstm_cell(params, prefix, inp @ params[f"{prefix}.Wx"], state)
            outs.append(state[0])
        seq = outs
    return state


def init_decoder_state(config: ModelConfig, enc_state):
    """Every decoder layer starts from the encoder summary ``(c, memory)``."""
    return [enc_state] * config.decoder_layers


def decode_step(params, config: ModelConfig, c, state, y_feedback):
    """Advance the decoder one horizon; returns the new per-layer state list.

    ``y_feedback`` is the realized previous target in training and a sampled
    value at inference, shape (B,).
    """
    y = ad.as_tensor(y_feedback)
    y = ad.reshape(y, (y.shape[0], 1))
    inp = ad.concat([y, c], axis=1)
    new = []
    for layer in range(config.decoder_layers):
        prefix = f"dec.{layer}"
        h_mem = lstm_cell(params, prefix, inp @ params[f"{prefix}.Wx"], state[layer])
        new.append(h_mem)
        inp = h_mem[0]
    return new


# heads ----------------------------------------------------------------------------

def _affine(params, name, h):
    return h @ params[f"head.{name}.W"] + params[f"head.{name}.b"]


def project_heads(params, config: ModelConfig, h) -> dict:
    """Map a decoder state (B, d) to constrained head parameters, each (B, K)."""
    kind = config.head_kind
    out = {"pi": ad.softmax(_affine(params, "pi", h), axis=-1)}
    if kind == "levy_mixture":
        span = config.alpha_max - config.alpha_min
        out["alpha"] = ad.sigmoid(_affine(params, "alpha", h)) * span + config.alpha_min
        out["beta"] = ad.tanh(_affine(params, "beta", h)) * (1.0 - config.eps_beta_max)
        out["gamma"] = ad.softplus(_affine(params, "gamma", h)) + config.eps_gamma
        out["delta"] = _affine(params, "delta", h)
        return out
    out["loc"] = _affine(params, "loc", h)
    out["scale"] = ad.softplus(_affine(params, "scale", h)) + config.eps_gamma
    if "dof" in _head_fields(kind):
        out["dof"] = ad.softplus(_affine(params, "dof", h)) + 2.0
    if kind == "asym_student_t":
        out["skew"] = ad.tanh(_affine(params, "skew", h)) * SKEW_MARGIN
    return out


baseline_heads = project_heads


def _log_t(z, dof):
    return (ad.lgamma((dof + 1.0) * 0.5) - ad.lgamma(dof * 0.5) - 0.5 * ad.log(dof * math.pi)
            - (dof + 1.0) * 0.5 * ad.log(1.0 + z * z / dof))


def baseline_nll(kind: str, heads: dict, y):
    """Exact negative log-likelihood per (sample, horizon) for the closed-form heads."""
    y = np.asarray(y, dtype=float)[..., None]
    loc, scale = heads["loc"], heads["scale"]
    if kind == "asym_student_t":
        side = np.sign(y - loc.value)
        side_scale = scale * (1.0 + heads["skew"] * side)
        z = (y - loc) / side_scale
        comp = _log_t(z, heads["dof"]) - ad.log(scale)
    else:
        z = (y - loc) / scale
        if "dof" in heads:
            comp = _log_t(z, heads["dof"]) - ad.log(scale)
        else:
            comp = -0.5 * math.log(2 * math.pi) - ad.log(scale) - 0.5 * z * z
    return -ad.logsumexp(ad.log(heads["pi"] + 1e-300) + comp, axis=-1)


# forward / loss -------------------------------------------------------------------

def forward(params, config: ModelConfig, contexts, targets):
    """Teacher-forced pass; returns head tensors stacked to (B, H, K)."""
    contexts = np.asarray(contexts, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if targets.shape[1] != config.horizon:
        raise ValueError(f"target horizon {targets.shape[1]} does not match config H={config.horizon}")
    enc = encode(params, config, contexts)
    c = enc[0]
    state = init_decoder_state(config, enc)
    feedback = contexts[:, -1]
    per_h = []
    for step in range(config.horizon):
        state = decode_step(params, config, c, state, feedback)
        per_h.append(project_heads(params, config, state[-1][0]))
        feedback = targets[:, step]
    return {key: ad.stack([hd[key] for hd in per_h], axis=1) for key in per_h[0]}


def loss_terms(params, config: ModelConfig, contexts, targets, grid=None, effective=None):
    """Training objective and its parts: ``(total, fit_term, entropy, heads)``.

    The stable head uses the spectral loss minus ``lambda_ent`` times mixing
    entropy; baselines use NLL summed over horizons and averaged over the batch.
    ``effective`` pins the adaptive frequency weights (see ``cf_loss_tensor``).
    """
    heads = forward(params, config, contexts, targets)
    targets = np.asarray(targets, dtype=float)
    if config.head_kind == "levy_mixture":
        grid = grid or make_grid(config.grid_m, config.tau_max)
        fit = cf_loss_tensor(heads["pi"], heads["alpha"], heads["beta"], heads["gamma"], heads["delta"],
                             targets, grid, config.weighting, effective)
        ent = entropy_tensor(heads["pi"])
        total = fit - config.lambda_ent * ent if config.lambda_ent else fit
    else:
        fit = ad.sum(baseline_nll(config.head_kind, heads, targets)) * (1.0 / targets.shape[0])
        ent = entropy_tensor(heads["pi"])
        total = fit
    return total, fit, ent, heads


def evaluation_loss(params, config: ModelConfig, contexts, targets, chunk: int = 1024) -> float:
    """Teacher-forced objective over a whole split, exactly averaged over windows."""
    n = len(contexts)
    if n == 0:
        return float("nan")
    grid = make_grid(config.grid_m, config.tau_max)
    acc = 0.0
    detached = {k: ad.Tensor(v.value) for k, v in params.items()}
    for s in range(0, n, chunk):
        total, _, _, _ = loss_terms(detached, config, contexts[s:s + chunk], targets[s:s + chunk], grid)
        acc += total.item() * len(contexts[s:s + chunk])
    return acc / n


# forecasting ----------------------------------------------------------------------

@dataclass
class BaselineLaw:
    """Per-horizon closed-form predictive law; ``skew``/``dof`` unused by some kinds."""

    kind: str
    weights: np.ndarray
    loc: np.ndarray
    scale: np.ndarray
    dof: np.ndarray | None = None
    skew: np.ndarray | None = None


@dataclass
class ForecastResult:
    laws: list  # one MixtureParams or BaselineLaw per horizon, original units
    samples: np.ndarray  # (H, n_trajectories), original units


def _sample_heads(kind, heads, rng: RngStream):
    """One draw per row from head parameters given as arrays (N, K)."""
    k = sample_component(heads["pi"], rng)
    rows = np.arange(len(k))
    pick = {name: v[rows, k] for name, v in heads.items() if name != "pi"}
    if kind == "levy_mixture":
        return sample_stable_arrays(pick["alpha"], pick["beta"], pick["gamma"], pick["delta"], rng)
    gen = rng.generator
    n = len(k)
    if "dof" in pick:
        t = gen.standard_t(pick["dof"], size=n)
    else:
        t = gen.standard_normal(n)
    if kind == "asym_student_t":
        s = pick["skew"]
        left = gen.random(n) < (1.0 - s) / 2.0
        mag = np.abs(t)
        return pick["loc"] + pick["scale"] * np.where(left, -(1.0 - s) * mag, (1.0 + s) * mag)
    return pick["loc"] + pick["scale"] * t


def _to_original_units(kind, heads_row: dict, scaler: Scaler):
    s, c = scaler.spread, scaler.center
    if kind == "levy_mixture":
        comps = tuple(StableParams(float(a), float(b), float(g * s), float(dl * s + c))
                      for a, b, g, dl in zip(heads_row["alpha"], heads_row["beta"], heads_row["gamma"], heads_row["delta"]))
        w = np.asarray(heads_row["pi"], dtype=float)
        return MixtureParams(w / w.sum(), comps)
    return BaselineLaw(kind, np.asarray(heads_row["pi"]), heads_row["loc"] * s + c, heads_row["scale"] * s,
                       heads_row.get("dof"), heads_row.get("skew"))


def rollout(params, config: ModelConfig, contexts, n_trajectories: int, rng: RngStream):
    """Autoregressive sampled rollouts in standardized units.

    Returns ``(samples, heads)``: samples of shape (B, n, H) and, for each
    horizon, a dict of head arrays of shape (B, n, K). The decoder is fed the
    drawn value at every step.
    """
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    b = contexts.shape[0]
    detached = {k: ad.Tensor(v.value) for k, v in params.items()}
    c, mem = encode(detached, config, contexts)
    rep = lambda t: ad.Tensor(np.repeat(t.value, n_trajectories, axis=0))
    c, mem = rep(c), rep(mem)
    state = init_decoder_state(config, (c, mem))
    feedback = np.repeat(contexts[:, -1], n_trajectories)
    samples = np.empty((b * n_trajectories, config.horizon))
    head_path = []
    for step in range(config.horizon):
        state = decode_step(detached, config, c, state, feedback)
        heads = {k: v.value for k, v in project_heads(detached, config, state[-1][0]).items()}
        draw = _sample_heads(config.head_kind, heads, rng)
        samples[:, step] = draw
        head_path.append({k: v.reshape(b, n_trajectories, -1) for k, v in heads.items()})
        feedback = draw
    return samples.reshape(b, n_trajectories, config.horizon), head_path


@dataclass
class Forecaster:
    config: ModelConfig
    params: dict
    scaler: Scaler = field(default_factory=lambda: Scaler(0.0, 1.0))
    meta: dict = field(default_factory=dict)

    def forecast(self, context, n_trajectories: int = 100, rng: RngStream | None = None) -> ForecastResult:
        """Sample ``n_trajectories`` paths from a raw-unit context of length T."""
        if n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        rng = rng or RngStream(0, 0)
        ctx = self.scaler.transform(np.asarray(context, dtype=float))
        samples, path = rollout(self.params, self.config, ctx[None, :], n_trajectories, rng)
        laws = [_to_original_units(self.config.head_kind, {k: v[0, 0] for k, v in hp.items()}, self.scaler)
                for hp in path]
        return ForecastResult(laws, self.scaler.inverse(samples[0].T))

    def forecast_batch(self, contexts, n_trajectories: int = 100, rng: RngStream | None = None,
                       chunk: int = 256) -> np.ndarray:
        """Raw-unit samples of shape (cases, H, n_trajectories) for many contexts."""
        rng = rng or RngStream(0, 0)
        ctx = self.scaler.transform(np.atleast_2d(np.asarray(contexts, dtype=float)))
        out = np.empty((len(ctx), self.config.horizon, n_trajectories))
        for s in range(0, len(ctx), chunk):
            samples, _ = rollout(self.params, self.config, ctx[s:s + chunk], n_trajectories, rng)
            out[s:s + chunk] = np.swapaxes(samples, 1, 2)
        return self.scaler.inverse(out)

    # checkpoint I/O -----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "scaler": {"center": self.scaler.center, "spread": self.scaler.spread},
            "meta": self.meta,
            "tensors": {name: {"shape": list(t.shape), "values": t.value.ravel().tolist()}
                        for name, t in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forecaster":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a checkpoint file")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        config = ModelConfig.from_dict(d["config"])
        expected = {k: v.shape for k, v in init_params(config, 0).items()}
        params = {}
        for name, entry in d["tensors"].items():
            shape = tuple(entry["shape"])
            if expected.get(name) != shape:
                raise ValueError(f"tensor {name} has shape {shape}, config expects {expected.get(name)}")
            params[name] = ad.parameter(np.array(entry["values"], dtype=float).reshape(shape), name)
        if set(params) != set(expected):
            raise ValueError(f"checkpoint tensors do not match config: missing {sorted(set(expected) - set(params))}")
        return cls(config, params, Scaler(d["scaler"]["center"], d["scaler"]["spread"]), dict(d.get("meta", {})))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Forecaster":
        return cls.from_dict(json.loads(Path(path).read_text()))


def param_count(params: dict, prefix: str = "") -> int:
    return sum(t.size for name, t in params.items() if name.startswith(prefix))


# training ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    forecaster: Forecaster
    log: list
    best_val_loss: float
    best_epoch: int


def _batch_dump(heads, contexts, targets):
    return {"contexts": np.asarray(contexts).tolist(), "targets": np.asarray(targets).tolist(),
            "heads": {k: v.value.tolist() for k, v in heads.items()}}


def train(dataset: WindowedDataset, config: ModelConfig, seed: int = 0, params: dict | None = None,
          progress=None) -> TrainResult:
    """Fit the model with clipped Adam steps under a cosine schedule.

    Keeps the weights of the epoch with the lowest validation objective (last
    epoch if there is no validation split).
    """
    if config.batch_size < MIN_BATCH and not config.allow_small_batch:
        raise BatchSizeError(f"batch size {config.batch_size} is below {MIN_BATCH}: the spectral loss needs "
                         "large batches to average empirical-CF noise (set allow_small_batch to override)")
    if dataset.context_length != config.context_length or dataset.horizon != config.horizon:
        raise ValueError("dataset window shape does not match config")
    x_tr, y_tr = dataset.arrays("train")
    x_va, y_va = dataset.arrays("val")
    if len(x_tr) == 0:
        raise ValueError("no training windows")
    params = params or init_params(config, seed)
    names = sorted(params)
    plist = [params[n] for n in names]
    opt = Adam(plist)
    steps_per_epoch = math.ceil(len(x_tr) / config.batch_size)
    schedule = CosineSchedule(config.learning_rate, steps_per_epoch * config.epochs)
    grid = make_grid(config.grid_m, config.tau_max)
    best = (math.inf, -1, None)
    rows, step = [], 0
    for epoch in range(config.epochs):
        order = RngStream(seed, 1000 + epoch).generator.permutation(len(x_tr))
        tot = ent_sum = norm_sum = norm_max = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = order[s:s + config.batch_size]
            total, fit, ent, heads = loss_terms(params, config, x_tr[idx], y_tr[idx], grid)
            if not math.isfinite(total.item()):
                raise NumericalAbort(f"non-finite loss at epoch {epoch}, step {step}",
                                     _batch_dump(heads, x_tr[idx], y_tr[idx]))
            grads = ad.grad(total, plist)
            lr = schedule(step)
            norm = clip_and_step(opt, grads, lr, config.max_grad_norm)
            if not math.isfinite(norm):
                raise NumericalAbort(f"non-finite gradient at epoch {epoch}, step {step}",
                                     _batch_dump(heads, x_tr[idx], y_tr[idx]))
            step += 1
            tot += total.item() * len(idx)
            ent_sum += ent.item() * len(idx)
            norm_sum += norm
            norm_max = max(norm_max, norm)
        val = evaluation_loss(params, config, x_va, y_va) if len(x_va) else float("nan")
        row = {"epoch": epoch, "train_loss": tot / len(x_tr), "val_loss": val, "entropy": ent_sum / len(x_tr),
               "lr": schedule(step), "grad_norm_mean": norm_sum / steps_per_epoch, "grad_norm_max": norm_max}
        rows.append(row)
        if progress:
            progress(row)
        score = val if math.isfinite(val) else -epoch
        if score < best[0] or best[2] is None:
            best = (score, epoch, {k: v.value.copy() for k, v in params.items()})
    final = {k: ad.parameter(v, k) for k, v in best[2].items()}
    fc = Forecaster(config, final, dataset.scaler, {"seed": seed, "best_epoch": best[1]})
    best_val = best[0] if len(x_va) else float("nan")
    return TrainResult(fc, rows, best_val, best[1])


def config_digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]
