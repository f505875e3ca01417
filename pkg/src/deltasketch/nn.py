"""Small fully-connected regression network with manual reverse mode.

The network is a chain of affine layers with a scalar linear output; hidden
activations are tanh (default) or relu.  Parameters live in one flat float64
vector so that downstream code can treat the model as a point in R^p:

    params = [W_1.ravel(), ..., W_L.ravel(), b_1, ..., b_L]

where W_l has shape (in_l, out_l) in row-major order.  Training minimizes
the sum-of-squares objective sum_i (f(x_i) - y_i)^2 + lam * ||w||^2 with
Adam on shuffled mini-batches; the per-batch gradient estimates the full
objective's gradient scaled by 1/n, which leaves Adam's trajectory invariant
to n.  Everything is seeded and single-threaded: identical inputs and seeds
give bitwise-identical parameters.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, TrainingDivergedError
from .validation import check_matrix, check_vector

ACTIVATIONS = ("tanh", "relu")

CHECKPOINT_MAGIC = b"MLPC"
CHECKPOINT_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def n_params(layer_sizes) -> int:
    sizes = list(layer_sizes)
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def _check_layer_sizes(layer_sizes) -> tuple[int, ...]:
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError("layer_sizes needs at least input and output entries")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    if sizes[-1] != 1:
        raise ValueError(f"output dimension must be 1, got {sizes[-1]}")
    return sizes


def init_params(layer_sizes, seed) -> np.ndarray:
    """Glorot-uniform weights, zero biases, from a seeded generator."""
    sizes = _check_layer_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
    total_bias = sum(sizes[1:])
    chunks.append(np.zeros(total_bias))
    return np.concatenate(chunks)


@dataclass
class Mlp:
    """Flat-parameter multilayer perceptron with scalar output."""

    layer_sizes: tuple
    params: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.layer_sizes = _check_layer_sizes(self.layer_sizes)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.ndim != 1 or self.params.shape[0] != n_params(self.layer_sizes):
            raise ValueError(
                f"params must be a flat vector of length {n_params(self.layer_sizes)}"
            )

    @property
    def n_params(self) -> int:
        return self.params.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    def weights_and_biases(self):
        """Views into params as ((W_1, b_1), ..., (W_L, b_L))."""
        sizes = self.layer_sizes
        shapes = list(zip(sizes[:-1], sizes[1:]))
        out = []
        off = 0
        for a, b in shapes:
            out.append(self.params[off : off + a * b].reshape(a, b))
            off += a * b
        for i, (_, b) in enumerate(shapes):
            out[i] = (out[i], self.params[off : off + b])
            off += b
        return out

    def _act(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "tanh":
            return np.tanh(z)
        return np.maximum(z, 0.0)

    def _act_grad(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        # relu derivative at exactly 0 is taken as 0
        if self.activation == "tanh":
            return 1.0 - a * a
        return (z > 0.0).astype(np.float64)

    def _forward_pass(self, x: np.ndarray):
        """Activations and pre-activations for a batch; x is n x m."""
        acts = [x]
        pre = []
        layers = self.weights_and_biases()
        a = x
        for i, (w, b) in enumerate(layers):
            z = a @ w + b
            pre.append(z)
            a = self._act(z) if i < len(layers) - 1 else z
            acts.append(a)
        return pre, acts

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        x = check_matrix(x, "x")
        if x.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} features, got {x.shape[1]}")
        _, acts = self._forward_pass(x)
        return acts[-1][:, 0]

    def forward(self, x: np.ndarray) -> float:
        x = check_vector(x, "x", length=self.n_inputs)
        return float(self.forward_batch(x[None, :])[0])

    def _param_offsets(self):
        layers = self.weights_and_biases()
        w_offsets = []
        off = 0
        for w, _ in layers:
            w_offsets.append(off)
            off += w.size
        b_offsets = []
        for _, b in layers:
            b_offsets.append(off)
            off += b.size
        return layers, w_offsets, b_offsets

    def _gradient_row(self, x, layers, w_offsets, b_offsets, out):
        # per-row matvecs keep each example's arithmetic independent of how
        # rows are batched, so jacobian_rows matches param_gradient bitwise
        pre = []
        acts = [x]
        a = x
        for i, (w, b) in enumerate(layers):
            z = a @ w + b
            pre.append(z)
            a = self._act(z) if i < len(layers) - 1 else z
            acts.append(a)
        g = np.ones(1)
        for i in range(len(layers) - 1, -1, -1):
            w, b = layers[i]
            out[w_offsets[i] : w_offsets[i] + w.size] = np.outer(acts[i], g).ravel()
            out[b_offsets[i] : b_offsets[i] + b.size] = g
            if i > 0:
                g = (w @ g) * self._act_grad(pre[i - 1], acts[i])

    def param_gradient_batch(self, x: np.ndarray) -> np.ndarray:
        """Per-example gradients of the scalar output, shape n x p.

        Row i is d f(x_i) / d params in params order, i.e. one Jacobian row,
        bitwise identical to ``param_gradient(x[i])``.
        """
        x = check_matrix(x, "x")
        if x.shape[1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} features, got {x.shape[1]}")
        layers, w_offsets, b_offsets = self._param_offsets()
        grads = np.empty((x.shape[0], self.n_params))
        for i in range(x.shape[0]):
            self._gradient_row(x[i], layers, w_offsets, b_offsets, grads[i])
        return grads

    def param_gradient(self, x: np.ndarray) -> np.ndarray:
        x = check_vector(x, "x", length=self.n_inputs)
        layers, w_offsets, b_offsets = self._param_offsets()
        out = np.empty(self.n_params)
        self._gradient_row(x, layers, w_offsets, b_offsets, out)
        return out


def jacobian_rows(net: Mlp, x: np.ndarray, block_size: int = 512):
    """Yield one output-gradient row per example, in dataset order.

    Rows are produced in blocks to keep peak memory at block_size x p while
    the consumer (the sketch) needs only O(k m).
    """
    x = check_matrix(x, "x")
    for start in range(0, x.shape[0], block_size):
        block = net.param_gradient_batch(x[start : start + block_size])
        yield from block


def sum_squares_loss(net: Mlp, x: np.ndarray, y: np.ndarray, lam: float) -> float:
    """Full training objective: sum of squared residuals + lam * ||w||^2."""
    r = net.forward_batch(x) - check_vector(y, "y", length=x.shape[0])
    w = net.params
    return float(r @ r + lam * (w @ w))


@dataclass
class TrainConfig:
    """Optimization settings; lam has no default on purpose.

    The same lam must be used for training, the sketch score, and the
    covariance assembly, so it is always passed explicitly.
    """

    lam: float
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    epoch_grid: tuple | None = None
    validation_fraction: float = 0.2

    def __post_init__(self):
        self.lam = float(self.lam)
        if not np.isfinite(self.lam) or self.lam < 0.0:
            raise ValueError(f"lam must be finite and >= 0, got {self.lam}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0.0:
            raise ValueError("learning_rate must be positive")
        if self.epoch_grid is not None:
            grid = tuple(int(e) for e in self.epoch_grid)
            if not grid or any(e < 1 for e in grid):
                raise ValueError("epoch_grid entries must be >= 1")
            self.epoch_grid = grid
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")


DEFAULT_EPOCH_GRID = (40, 100, 200, 400)


def _batch_objective_grad(net: Mlp, xb, yb, lam_over_n):
    """Gradient of mean squared residual + lam/n * ||w||^2 over one batch.

    Standard accumulation backprop: O(p) memory, no per-example rows.
    Returns (loss, grad); loss is the batch mean squared residual, used only
    for divergence detection.
    """
    nb = xb.shape[0]
    layers = net.weights_and_biases()
    # overflow here is legal: it surfaces as a non-finite loss, which the
    # caller turns into TrainingDivergedError
    with np.errstate(over="ignore", invalid="ignore"):
        pre, acts = net._forward_pass(xb)
        r = acts[-1][:, 0] - yb
        loss = float(r @ r) / nb
    if not np.isfinite(loss):
        return loss, None
    grad = np.empty_like(net.params)
    w_off = 0
    offsets = []
    for w, _ in layers:
        offsets.append(w_off)
        w_off += w.size
    b_off = w_off
    g = (2.0 / nb) * r[:, None]
    for i in range(len(layers) - 1, -1, -1):
        w, b = layers[i]
        grad[offsets[i] : offsets[i] + w.size] = (acts[i].T @ g).ravel()
        bo = b_off + sum(l[1].size for l in layers[:i])
        grad[bo : bo + b.size] = g.sum(axis=0)
        if i > 0:
            g = (g @ w.T) * net._act_grad(pre[i - 1], acts[i])
    grad += 2.0 * lam_over_n * net.params
    return loss, grad


def _fit(x, y, layer_sizes, activation, lam, epochs, batch_size, lr,
         init_seed, shuffle_seed, record_epochs=None, x_val=None, y_val=None):
    """Run Adam for a fixed epoch count; optionally record validation MSE."""
    n = x.shape[0]
    net = Mlp(layer_sizes, init_params(layer_sizes, init_seed), activation)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    m = np.zeros_like(net.params)
    v = np.zeros_like(net.params)
    t = 0
    lam_over_n = lam / n
    record = {}
    for epoch in range(epochs):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            loss, grad = _batch_objective_grad(net, x[idx], y[idx], lam_over_n)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}", epoch=epoch
                )
            t += 1
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad
            m_hat = m / (1.0 - ADAM_BETA1**t)
            v_hat = v / (1.0 - ADAM_BETA2**t)
            net.params -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if record_epochs and (epoch + 1) in record_epochs:
            r = net.forward_batch(x_val) - y_val
            record[epoch + 1] = float(r @ r) / x_val.shape[0]
    return net, record


def train(x, y, layer_sizes, cfg: TrainConfig, activation: str = "tanh",
          init_seed=None) -> Mlp:
    """Train on (x, y); with an epoch_grid, tune the epoch count first.

    Grid tuning holds out validation_fraction of the rows (seeded shuffle),
    trains once to max(grid) recording validation MSE at each grid mark
    (prefixes of one Adam run coincide with shorter runs), picks the mark
    with the lowest validation MSE (ties break toward fewer epochs), then
    retrains from scratch on all rows for that many epochs.
    """
    x = check_matrix(x, "x")
    y = check_vector(y, "y", length=x.shape[0])
    if x.shape[0] < 1:
        raise DataError("training data is empty")
    if init_seed is None:
        init_seed = cfg.seed
    epochs = cfg.epochs
    if cfg.epoch_grid is not None:
        grid = sorted(set(cfg.epoch_grid))
        n = x.shape[0]
        n_val = max(1, int(round(cfg.validation_fraction * n)))
        if n_val >= n:
            raise DataError("too few rows for a validation split")
        perm = np.random.default_rng([cfg.seed, 2]).permutation(n)
        val_idx, tr_idx = perm[:n_val], perm[n_val:]
        _, record = _fit(
            x[tr_idx], y[tr_idx], layer_sizes, activation, cfg.lam,
            max(grid), cfg.batch_size, cfg.learning_rate,
            init_seed=[init_seed, 0], shuffle_seed=[cfg.seed, 1],
            record_epochs=set(grid), x_val=x[val_idx], y_val=y[val_idx],
        )
        epochs = min(grid, key=lambda e: (record[e], e))
    net, _ = _fit(
        x, y, layer_sizes, activation, cfg.lam, epochs,
        cfg.batch_size, cfg.learning_rate,
        init_seed=[init_seed, 0], shuffle_seed=[cfg.seed, 1],
    )
    return net


# ---------------------------------------------------------------------------
# checkpoint container: "MLPC", little-endian, bit-exact round-trip
# ---------------------------------------------------------------------------

_CKPT_HEAD = struct.Struct("<4sIII")  # magic, version, activation code, n layers

_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}


def checkpoint_to_bytes(net: Mlp) -> bytes:
    head = _CKPT_HEAD.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION, _ACT_CODES[net.activation],
        len(net.layer_sizes),
    )
    sizes = struct.pack(f"<{len(net.layer_sizes)}Q", *net.layer_sizes)
    return head + sizes + np.ascontiguousarray(net.params, dtype="<f8").tobytes()


def checkpoint_from_bytes(buf: bytes) -> Mlp:
    if len(buf) < _CKPT_HEAD.size:
        raise DataError("checkpoint truncated")
    magic, version, act_code, n_layers = _CKPT_HEAD.unpack_from(buf)
    if magic != CHECKPOINT_MAGIC:
        raise DataError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    if act_code >= len(ACTIVATIONS):
        raise DataError(f"unknown activation code {act_code}")
    off = _CKPT_HEAD.size
    if len(buf) < off + 8 * n_layers:
        raise DataError("checkpoint truncated in layer sizes")
    sizes = struct.unpack_from(f"<{n_layers}Q", buf, off)
    off += 8 * n_layers
    expect = off + 8 * n_params(sizes)
    if len(buf) != expect:
        raise DataError(f"checkpoint has {len(buf)} bytes, expected {expect}")
    params = np.frombuffer(buf, dtype="<f8", offset=off).copy()
    return Mlp(sizes, params, ACTIVATIONS[act_code])


def save_checkpoint(net: Mlp, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(net))


def load_checkpoint(path) -> Mlp:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
