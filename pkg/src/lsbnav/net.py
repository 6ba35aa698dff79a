"""Residual MLP clearance regressor, implemented directly on numpy.

Architecture (width h, h divisible by 4):

* input stack: three affine+batchnorm+GELU layers, 3 -> h/4 -> h/2 -> h
* n_blocks residual blocks, each two affine+batchnorm+GELU layers at width h
  with an identity shortcut: z_b = z_{b-1} + f_b(z_{b-1})
* long-range skips between non-adjacent blocks: for each source i in
  ``skip_sources``, z_{i+stride} += z_i @ A_i^T (A_i is h-by-h, trainable)
* head: affine+batchnorm+GELU h -> h/2 -> h/4, then a plain affine to 1

All tensors are float64.  Batch norm follows the usual conventions: biased
variance for normalisation, unbiased variance folded into the running
estimate with momentum 0.1, eps 1e-5.  Training mode with batches smaller
than 2 is rejected.

Training: AdamW (decoupled weight decay on weight matrices only), global
gradient-norm clipping, triangular cyclic learning rate whose amplitude
halves every cycle, early stopping on validation loss.  Loss is plain MSE in
the normalised target space.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .dataset import NormStats

_MAGIC = b"LSBC"
_VERSION = 1
_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class VersionMismatchError(Exception):
    """Checkpoint written by an incompatible format version."""


class CorruptChecksumError(Exception):
    """Checkpoint failed its integrity check (bad magic, truncation, CRC)."""


def _gelu(y: np.ndarray) -> np.ndarray:
    return 0.5 * y * (1.0 + erf(y / _SQRT2))


def _gelu_prime(y: np.ndarray) -> np.ndarray:
    # Phi(y) + y * phi(y)
    return 0.5 * (1.0 + erf(y / _SQRT2)) \
        + y * _INV_SQRT_2PI * np.exp(-0.5 * y * y)


def default_skip_sources(n_blocks: int, stride: int) -> tuple[int, ...]:
    """Source blocks 1, 1+stride, ... while the target i+stride still exists."""
    out = []
    i = 1
    while i + stride <= n_blocks:
        out.append(i)
        i += stride
    return tuple(out)


@dataclass(frozen=True)
class MlpConfig:
    """Architecture hyperparameters.

    ``skip_sources`` may be given explicitly; None selects
    :func:`default_skip_sources`.
    """

    width: int = 128
    n_blocks: int = 4
    skip_stride: int = 2
    skip_sources: tuple[int, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.width < 4 or self.width % 4 != 0:
            raise ValueError("width must be a positive multiple of 4")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.skip_stride < 1:
            raise ValueError("skip_stride must be >= 1")
        src = tuple(self.skip_sources) if self.skip_sources is not None \
            else default_skip_sources(self.n_blocks, self.skip_stride)
        object.__setattr__(self, "skip_sources", src)
        if len(set(src)) != len(src) or list(src) != sorted(src):
            raise ValueError("skip_sources must be strictly increasing")
        for i in src:
            if i < 1 or i + self.skip_stride > self.n_blocks:
                raise ValueError(
                    f"skip source {i} has no target block {i + self.skip_stride}")

    @property
    def resolved_skip_sources(self) -> tuple[int, ...]:
        return self.skip_sources


def desk_config(seed: int = 0) -> MlpConfig:
    """Small configuration for laptop-scale experiments: width 128, four
    blocks, skips 1->3 and 2->4."""
    return MlpConfig(width=128, n_blocks=4, skip_stride=2,
                     skip_sources=(1, 2), seed=seed)


def paper_config(seed: int = 0) -> MlpConfig:
    """Full-scale configuration: width 2048, six blocks, skips 1->3, 3->5."""
    return MlpConfig(width=2048, n_blocks=6, skip_stride=2, seed=seed)


def _bn_layer_dims(cfg: MlpConfig) -> list[tuple[str, int, int]]:
    h = cfg.width
    q, hh = h // 4, h // 2
    dims = [("in0", 3, q), ("in1", q, hh), ("in2", hh, h)]
    for b in range(1, cfg.n_blocks + 1):
        dims.append((f"blk{b}a", h, h))
        dims.append((f"blk{b}b", h, h))
    dims.append(("head0", h, hh))
    dims.append(("head1", hh, q))
    return dims


def parameter_order(cfg: MlpConfig) -> list[str]:
    """Canonical tensor ordering used for init, optimisation and storage."""
    keys = []
    for name, _, _ in _bn_layer_dims(cfg):
        keys.extend([f"{name}.W", f"{name}.b", f"{name}.g", f"{name}.beta"])
    for i in cfg.resolved_skip_sources:
        keys.append(f"skip{i}.A")
    keys.extend(["out.W", "out.b"])
    return keys


def running_order(cfg: MlpConfig) -> list[str]:
    keys = []
    for name, _, _ in _bn_layer_dims(cfg):
        keys.extend([f"{name}.mean", f"{name}.var"])
    return keys


def _tensor_shapes(cfg: MlpConfig) -> dict[str, tuple[int, ...]]:
    h, q = cfg.width, cfg.width // 4
    shapes: dict[str, tuple[int, ...]] = {}
    for name, nin, nout in _bn_layer_dims(cfg):
        shapes[f"{name}.W"] = (nin, nout)
        shapes[f"{name}.b"] = (nout,)
        shapes[f"{name}.g"] = (nout,)
        shapes[f"{name}.beta"] = (nout,)
        shapes[f"{name}.mean"] = (nout,)
        shapes[f"{name}.var"] = (nout,)
    for i in cfg.resolved_skip_sources:
        shapes[f"skip{i}.A"] = (h, h)
    shapes["out.W"] = (q, 1)
    shapes["out.b"] = (1,)
    return shapes


class MlpModel:
    """Parameter container plus forward/backward machinery."""

    def __init__(self, cfg: MlpConfig, params: dict[str, np.ndarray],
                 running: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params
        self.running = running
        self._dims = _bn_layer_dims(cfg)

    @classmethod
    def init(cls, cfg: MlpConfig) -> "MlpModel":
        """Kaiming-normal weights (gain sqrt(2)), zero biases, unit BN scale."""
        rng = np.random.default_rng(cfg.seed)
        shapes = _tensor_shapes(cfg)
        params: dict[str, np.ndarray] = {}
        for key in parameter_order(cfg):
            shape = shapes[key]
            if key.endswith(".W") or key.endswith(".A"):
                fan_in = shape[0]
                params[key] = rng.normal(0.0, math.sqrt(2.0 / fan_in),
                                         size=shape)
            elif key.endswith(".g"):
                params[key] = np.ones(shape)
            else:
                params[key] = np.zeros(shape)
        running = {}
        for key in running_order(cfg):
            running[key] = np.ones(shapes[key]) if key.endswith(".var") \
                else np.zeros(shapes[key])
        return cls(cfg, params, running)

    def copy(self) -> "MlpModel":
        return MlpModel(self.cfg,
                        {k: v.copy() for k, v in self.params.items()},
                        {k: v.copy() for k, v in self.running.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- single layer -------------------------------------------------------

    def _layer_forward(self, name: str, a: np.ndarray, train: bool,
                       cache: dict | None, update_running: bool) -> np.ndarray:
        p = self.params
        z = a @ p[f"{name}.W"] + p[f"{name}.b"]
        if train:
            B = z.shape[0]
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            std = np.sqrt(var + _BN_EPS)
            xhat = (z - mu) / std
            if update_running:
                r = self.running
                ub = var * B / (B - 1)
                r[f"{name}.mean"] *= 1.0 - _BN_MOMENTUM
                r[f"{name}.mean"] += _BN_MOMENTUM * mu
                r[f"{name}.var"] *= 1.0 - _BN_MOMENTUM
                r[f"{name}.var"] += _BN_MOMENTUM * ub
        else:
            r = self.running
            std = np.sqrt(r[f"{name}.var"] + _BN_EPS)
            xhat = (z - r[f"{name}.mean"]) / std
        y = p[f"{name}.g"] * xhat + p[f"{name}.beta"]
        if cache is not None:
            cache[name] = {"a": a, "xhat": xhat, "std": std, "y": y}
        return _gelu(y)

    def _layer_backward(self, name: str, dout: np.ndarray, cache: dict,
                        grads: dict | None, train: bool) -> np.ndarray:
        """Backprop one affine+BN+GELU layer; returns gradient w.r.t. input.

        With grads=None only the input gradient is produced (eval path).
        """
        p = self.params
        c = cache[name]
        dy = dout * _gelu_prime(c["y"])
        dxhat = dy * p[f"{name}.g"]
        if train:
            B = dy.shape[0]
            xhat = c["xhat"]
            # full batch-norm backward including the mean/var couplings
            dz = (dxhat - dxhat.mean(axis=0)
                  - xhat * (dxhat * xhat).mean(axis=0)) / c["std"]
        else:
            dz = dxhat / c["std"]
        if grads is not None:
            grads[f"{name}.beta"] = dy.sum(axis=0)
            grads[f"{name}.g"] = (dy * c["xhat"]).sum(axis=0)
            grads[f"{name}.W"] = c["a"].T @ dz
            grads[f"{name}.b"] = dz.sum(axis=0)
        return dz @ p[f"{name}.W"].T

    # -- full network -------------------------------------------------------

    def _forward(self, x: np.ndarray, train: bool, cache: dict | None,
                 update_running: bool = False):
        """Returns (out (B,), residual-stream list z) and fills the cache."""
        cfg = self.cfg
        sources = set(cfg.resolved_skip_sources)
        a = x
        for name in ("in0", "in1", "in2"):
            a = self._layer_forward(name, a, train, cache, update_running)
        z = [a]
        for b in range(1, cfg.n_blocks + 1):
            h = self._layer_forward(f"blk{b}a", z[b - 1], train, cache,
                                    update_running)
            h = self._layer_forward(f"blk{b}b", h, train, cache,
                                    update_running)
            zb = z[b - 1] + h
            src = b - cfg.skip_stride
            if src in sources:
                zb = zb + z[src] @ self.params[f"skip{src}.A"].T
            z.append(zb)
        a = self._layer_forward("head0", z[-1], train, cache, update_running)
        a = self._layer_forward("head1", a, train, cache, update_running)
        if cache is not None:
            cache["out_in"] = a
        out = (a @ self.params["out.W"] + self.params["out.b"])[:, 0]
        return out, z

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Normalised-space prediction: (B, 3) -> (B,), or (3,) -> scalar.

        Eval mode (default) uses running statistics: outputs are independent
        of batch composition.  Train mode requires B >= 2 and does not touch
        the running statistics unless asked via the training loop.
        """
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != 3:
            raise ValueError("x must be (B, 3)")
        if train and x.shape[0] < 2:
            raise ValueError("train-mode forward needs a batch of >= 2")
        out, _ = self._forward(x, train, None)
        return float(out[0]) if squeeze else out

    def _backward(self, dout: np.ndarray, z: list, cache: dict, train: bool,
                  collect_params: bool):
        cfg = self.cfg
        sources = set(cfg.resolved_skip_sources)
        grads: dict[str, np.ndarray] | None = {} if collect_params else None
        layer_grads = grads if collect_params else None
        d2 = dout[:, None]
        if collect_params:
            grads["out.W"] = cache["out_in"].T @ d2
            grads["out.b"] = d2.sum(axis=0)
        da = d2 @ self.params["out.W"].T
        da = self._layer_backward("head1", da, cache, layer_grads, train)
        da = self._layer_backward("head0", da, cache, layer_grads, train)
        dz = [None] * (cfg.n_blocks + 1)
        dz[cfg.n_blocks] = da
        for b in range(cfg.n_blocks, 0, -1):
            g = dz[b]
            src = b - cfg.skip_stride
            if src in sources:
                if collect_params:
                    grads[f"skip{src}.A"] = g.T @ z[src]
                if dz[src] is None:
                    dz[src] = g @ self.params[f"skip{src}.A"]
                else:
                    dz[src] = dz[src] + g @ self.params[f"skip{src}.A"]
            dh = self._layer_backward(f"blk{b}b", g, cache, layer_grads, train)
            dh = self._layer_backward(f"blk{b}a", dh, cache, layer_grads, train)
            if dz[b - 1] is None:
                dz[b - 1] = g + dh
            else:
                dz[b - 1] = dz[b - 1] + g + dh
        din = dz[0]
        for name in ("in2", "in1", "in0"):
            din = self._layer_backward(name, din, cache, layer_grads, train)
        return din, grads

    def value_and_input_gradient(self, x: np.ndarray):
        """Eval-mode outputs and d(out)/d(input), shapes (B,), (B, 3)."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        cache: dict = {}
        out, z = self._forward(x, train=False, cache=cache)
        din, _ = self._backward(np.ones_like(out), z, cache, train=False,
                                collect_params=False)
        if squeeze:
            return float(out[0]), din[0]
        return out, din

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.value_and_input_gradient(x)[1]


def loss_and_gradients(model: MlpModel, xbar: np.ndarray, ybar: np.ndarray,
                       update_running: bool = False):
    """Train-mode MSE and gradients for every parameter tensor.

    Inputs and targets are in normalised space.  ``update_running`` folds the
    batch statistics into the running estimates (the training loop sets it;
    gradient checks leave it off so repeated calls are reproducible).
    """
    xbar = np.asarray(xbar, dtype=float)
    ybar = np.asarray(ybar, dtype=float)
    if xbar.ndim != 2 or xbar.shape[1] != 3 or ybar.shape != (xbar.shape[0],):
        raise ValueError("need xbar (B, 3) and ybar (B,)")
    B = xbar.shape[0]
    if B < 2:
        raise ValueError("training batches must have >= 2 samples")
    cache: dict = {}
    out, z = model._forward(xbar, train=True, cache=cache,
                            update_running=update_running)
    err = out - ybar
    mse = float(np.mean(err * err))
    dout = 2.0 * err / B
    _, grads = model._backward(dout, z, cache, train=True, collect_params=True)
    return mse, grads


# ---------------------------------------------------------------------------
# training loop

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 60
    base_lr: float = 1e-4
    max_lr: float = 1e-3
    cycle_epochs: int = 4
    clip_norm: float = 1.0
    weight_decay: float = 1e-4
    patience: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0


def _cyclic_lr(step: int, steps_per_cycle: int, cfg: TrainConfig) -> float:
    """Triangular wave between base_lr and max_lr; amplitude halves each cycle."""
    cycle = step // steps_per_cycle
    frac = (step % steps_per_cycle) / steps_per_cycle
    tri = 1.0 - abs(2.0 * frac - 1.0)
    return cfg.base_lr + (cfg.max_lr - cfg.base_lr) * (0.5 ** cycle) * tri


def train(model: MlpModel, train_data, val_data, cfg: TrainConfig) -> dict:
    """AdamW training with early stopping; mutates ``model`` in place.

    ``train_data`` / ``val_data`` are (xbar, ybar) tuples in normalised
    space.  Returns a history dict (per-epoch train/val MSE, learning rate,
    best epoch, divergence flag).  On divergence the model is rolled back to
    the best finite snapshot.
    """
    xtr, ytr = (np.asarray(a, dtype=float) for a in train_data)
    xva, yva = (np.asarray(a, dtype=float) for a in val_data)
    n = xtr.shape[0]
    if n < 2:
        raise ValueError("need at least 2 training samples")
    rng = np.random.default_rng(cfg.seed)
    mstate = {k: np.zeros_like(v) for k, v in model.params.items()}
    vstate = {k: np.zeros_like(v) for k, v in model.params.items()}
    order = parameter_order(model.cfg)
    decay_keys = {k for k in order if k.endswith(".W") or k.endswith(".A")}

    n_batches = n // cfg.batch_size + (1 if n % cfg.batch_size > 1 else 0)
    n_batches = max(1, n_batches)
    steps_per_cycle = max(1, cfg.cycle_epochs * n_batches)

    history = {"train_mse": [], "val_mse": [], "lr": [],
               "best_epoch": -1, "diverged": False}
    best_val = math.inf
    best_snapshot = model.copy()
    bad_epochs = 0
    t = 0

    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(n)
        epoch_losses = []
        lr = cfg.base_lr
        diverged = False
        for bi in range(n_batches):
            idx = perm[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]
            if idx.size < 2:
                continue
            lr = _cyclic_lr(t, steps_per_cycle, cfg)
            mse, grads = loss_and_gradients(model, xtr[idx], ytr[idx],
                                            update_running=True)
            if not math.isfinite(mse):
                diverged = True
                break
            epoch_losses.append(mse)
            # global-norm clip
            sq = 0.0
            for k in order:
                g = grads[k]
                sq += float((g * g).sum())
            gn = math.sqrt(sq)
            scale = cfg.clip_norm / gn if gn > cfg.clip_norm else 1.0
            t += 1
            b1t = 1.0 - cfg.beta1 ** t
            b2t = 1.0 - cfg.beta2 ** t
            for k in order:
                g = grads[k] * scale
                mstate[k] *= cfg.beta1
                mstate[k] += (1.0 - cfg.beta1) * g
                vstate[k] *= cfg.beta2
                vstate[k] += (1.0 - cfg.beta2) * g * g
                step = (mstate[k] / b1t) / (np.sqrt(vstate[k] / b2t)
                                            + cfg.adam_eps)
                if k in decay_keys and cfg.weight_decay > 0.0:
                    step = step + cfg.weight_decay * model.params[k]
                model.params[k] -= lr * step
        if diverged or not epoch_losses:
            history["diverged"] = True
            break
        # overflow here is the divergence signal, not an error
        with np.errstate(over="ignore", invalid="ignore"):
            val_pred = model.forward(xva)
            val_mse = float(np.mean((val_pred - yva) ** 2))
        history["train_mse"].append(float(np.mean(epoch_losses)))
        history["val_mse"].append(val_mse)
        history["lr"].append(lr)
        if not math.isfinite(val_mse):
            history["diverged"] = True
            break
        if val_mse < best_val:
            best_val = val_mse
            best_snapshot = model.copy()
            history["best_epoch"] = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                break
    model.params = best_snapshot.params
    model.running = best_snapshot.running
    return history


# ---------------------------------------------------------------------------
# evaluation and metric-space prediction

@dataclass
class EvalReport:
    """Metric-space accuracy, overall and grouped by planar location."""

    n: int
    mse: float
    norm_mse: float
    locations: np.ndarray      # (n_loc, 2)
    location_mse: np.ndarray   # (n_loc,)
    location_count: np.ndarray

    @property
    def median_location_mse(self) -> float:
        return float(np.median(self.location_mse))

    def frac_locations_below(self, threshold: float) -> float:
        return float(np.mean(self.location_mse < threshold))


def predict_metric(model: MlpModel, stats: NormStats,
                   xytheta: np.ndarray) -> np.ndarray:
    """Metric clearance prediction for raw configurations (B, 3) -> (B,)."""
    from .dataset import denormalize, normalize_inputs
    xytheta = np.asarray(xytheta, dtype=float)
    squeeze = xytheta.ndim == 1
    if squeeze:
        xytheta = xytheta[None, :]
    out = model.forward(normalize_inputs(xytheta, stats))
    d = np.exp(out * stats.sigma_log + stats.mu_log) - stats.epsilon
    return float(d[0]) if squeeze else d


def predict_metric_with_gradient(model: MlpModel, stats: NormStats,
                                 xytheta: np.ndarray):
    """Metric prediction and its gradient w.r.t. the raw (x, y, theta).

    Chains the exp/shift denormalisation and the input standardisation
    around the network's eval-mode input gradient.
    """
    from .dataset import normalize_inputs
    xytheta = np.asarray(xytheta, dtype=float)
    squeeze = xytheta.ndim == 1
    if squeeze:
        xytheta = xytheta[None, :]
    xbar = normalize_inputs(xytheta, stats)
    out, din = model.value_and_input_gradient(xbar)
    expo = np.exp(out * stats.sigma_log + stats.mu_log)
    d = expo - stats.epsilon
    grad = (expo * stats.sigma_log)[:, None] * din / np.asarray(stats.sigma_x)
    if squeeze:
        return float(d[0]), grad[0]
    return d, grad


def evaluate(model: MlpModel, samples, stats: NormStats,
             chunk: int = 16384) -> EvalReport:
    """Metric-space MSE on a labelled sample set, grouped by (x, y) location.

    The per-location average over the heading grid is the field-quality
    number reported by the experiments; the median over locations summarises
    a map.
    """
    from .dataset import normalize_inputs, normalize_target
    n = len(samples)
    xbar = normalize_inputs(samples.xytheta, stats)
    pred_norm = np.empty(n)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        pred_norm[lo:hi] = model.forward(xbar[lo:hi])
    pred_d = np.exp(pred_norm * stats.sigma_log + stats.mu_log) - stats.epsilon
    err2 = (pred_d - samples.d) ** 2
    ybar = normalize_target(samples.d, stats)
    norm_mse = float(np.mean((pred_norm - ybar) ** 2))
    locs, inv = np.unique(samples.xytheta[:, :2], axis=0, return_inverse=True)
    sums = np.zeros(locs.shape[0])
    counts = np.zeros(locs.shape[0])
    np.add.at(sums, inv, err2)
    np.add.at(counts, inv, 1.0)
    return EvalReport(n=n, mse=float(err2.mean()), norm_mse=norm_mse,
                      locations=locs, location_mse=sums / counts,
                      location_count=counts)


# ---------------------------------------------------------------------------
# checkpointing

def save_checkpoint(path, model: MlpModel, stats: NormStats | None) -> None:
    """Binary checkpoint: config header, optional normalisation stats, all
    parameter and running tensors as float64 in canonical order, CRC32
    trailer over everything after the magic."""
    cfg = model.cfg
    src = cfg.resolved_skip_sources
    parts = [struct.pack("<IIIII", _VERSION, cfg.width, cfg.n_blocks,
                         cfg.skip_stride, len(src))]
    parts.append(struct.pack(f"<{len(src)}I", *src) if src else b"")
    parts.append(struct.pack("<q", cfg.seed))
    if stats is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.append(struct.pack("<3d", *stats.mu_x))
        parts.append(struct.pack("<3d", *stats.sigma_x))
        parts.append(struct.pack("<3d", stats.mu_log, stats.sigma_log,
                                 stats.epsilon))
    for key in parameter_order(cfg):
        parts.append(np.ascontiguousarray(model.params[key],
                                          dtype="<f8").tobytes())
    for key in running_order(cfg):
        parts.append(np.ascontiguousarray(model.running[key],
                                          dtype="<f8").tobytes())
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptChecksumError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple[MlpModel, NormStats | None]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != _MAGIC:
        raise CorruptChecksumError("not a checkpoint file")
    payload, trailer = blob[4:-4], blob[-4:]
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    if struct.unpack("<I", trailer)[0] != crc:
        raise CorruptChecksumError("checksum mismatch")
    rd = _Reader(payload)
    version, width, n_blocks, stride, n_src = rd.unpack("<IIIII")
    if version != _VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, "
                                   f"reader supports {_VERSION}")
    sources = rd.unpack(f"<{n_src}I") if n_src else ()
    seed, = rd.unpack("<q")
    cfg = MlpConfig(width=width, n_blocks=n_blocks, skip_stride=stride,
                    skip_sources=tuple(sources), seed=seed)
    has_stats, = rd.unpack("<B")
    stats = None
    if has_stats:
        mu_x = rd.unpack("<3d")
        sigma_x = rd.unpack("<3d")
        mu_log, sigma_log, epsilon = rd.unpack("<3d")
        stats = NormStats(mu_x=mu_x, sigma_x=sigma_x, mu_log=mu_log,
                          sigma_log=sigma_log, epsilon=epsilon)
    shapes = _tensor_shapes(cfg)
    params = {}
    for key in parameter_order(cfg):
        shape = shapes[key]
        count = int(np.prod(shape))
        arr = np.frombuffer(rd.take(count * 8), dtype="<f8").copy()
        params[key] = arr.reshape(shape)
    running = {}
    for key in running_order(cfg):
        shape = shapes[key]
        count = int(np.prod(shape))
        arr = np.frombuffer(rd.take(count * 8), dtype="<f8").copy()
        running[key] = arr.reshape(shape)
    if rd.pos != len(payload):
        raise CorruptChecksumError("trailing bytes in checkpoint")
    return MlpModel(cfg, params, running), stats
