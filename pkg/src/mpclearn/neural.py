"""ReLU multilayer perceptron with exact input Jacobians.

The training loss penalizes both the value mismatch and the mismatch of
the network's input Jacobian against the supplied law gradients. Because
hidden activations are ReLU and the output layer is affine, the network is
piecewise affine: inside one activation pattern the Jacobian is the plain
product of masked weight matrices, and the parameter gradient of the
Jacobian-matching term has a closed form with the masks held fixed (exact
almost everywhere).

The output layer is affine rather than ReLU: a nonnegative output could
never reproduce negative control actions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .dataset import Dataset

PARAMS_FORMAT_VERSION = "v1"


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden_widths: tuple
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input and output dimensions must be positive")
        if len(self.hidden_widths) < 1:
            raise ValueError("at least one hidden layer is required")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")

    @property
    def layer_dims(self) -> tuple:
        return (self.input_dim, *self.hidden_widths, self.output_dim)


class MlpParams:
    """Per-layer weights and biases; weight l maps layer l to layer l+1."""

    __slots__ = ("weights", "biases")

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias vector per weight matrix")
        self.weights = [np.array(W, dtype=float, ndmin=2) for W in weights]
        self.biases = [np.asarray(b, dtype=float).ravel() for b in biases]
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[0] != b.size:
                raise ValueError(f"layer {l}: weight rows {W.shape[0]} != bias size {b.size}")
            if l > 0 and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: input width {W.shape[1]} does not chain")
        for arr in (*self.weights, *self.biases):
            arr.flags.writeable = False

    @property
    def layer_dims(self) -> tuple:
        return (self.weights[0].shape[1], *(W.shape[0] for W in self.weights))

    @property
    def architecture(self) -> MlpArchitecture:
        dims = self.layer_dims
        return MlpArchitecture(dims[0], dims[1:-1], dims[-1])

    @property
    def size(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def to_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    @classmethod
    def from_flat(cls, arch: MlpArchitecture, theta) -> "MlpParams":
        theta = np.asarray(theta, dtype=float).ravel()
        dims = arch.layer_dims
        weights, biases, pos = [], [], 0
        for l in range(len(dims) - 1):
            rows, cols = dims[l + 1], dims[l]
            weights.append(theta[pos : pos + rows * cols].reshape(rows, cols))
            pos += rows * cols
            biases.append(theta[pos : pos + rows])
            pos += rows
        if pos != theta.size:
            raise ValueError(f"flat vector has {theta.size} entries, architecture needs {pos}")
        return cls(weights, biases)

    def __eq__(self, other):
        if not isinstance(other, MlpParams):
            return NotImplemented
        return len(self.weights) == len(other.weights) and all(
            np.array_equal(a, b)
            for a, b in zip((*self.weights, *self.biases), (*other.weights, *other.biases))
        )

    def __repr__(self) -> str:
        return f"MlpParams(layer_dims={self.layer_dims})"


def init_params(arch: MlpArchitecture, seed: int) -> MlpParams:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    dims = arch.layer_dims
    weights, biases = [], []
    for l in range(len(dims) - 1):
        fan_in, fan_out = dims[l], dims[l + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def _forward_batch(params: MlpParams, X: np.ndarray):
    """Activations per layer for row-stacked inputs; output layer is affine."""
    acts = [X]
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ W.T + b
        acts.append(z if l == last else np.maximum(z, 0.0))
    return acts


def forward(params: MlpParams, x) -> np.ndarray:
    """Network output for a single state or a row-stacked batch of states."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out = _forward_batch(params, np.atleast_2d(x))[-1]
    return out[0] if single else out


def _jacobian_batch(params: MlpParams, X: np.ndarray) -> np.ndarray:
    """Input Jacobians (batch, out, in); exact zero pre-activations mask to 0."""
    acts = _forward_batch(params, X)
    J = np.broadcast_to(params.weights[0], (X.shape[0], *params.weights[0].shape)).copy()
    for l in range(1, len(params.weights)):
        mask = acts[l] > 0.0
        J = np.einsum("ij,bjn->bin", params.weights[l], mask[:, :, None] * J)
    return J


def input_jacobian(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("input_jacobian expects a single state vector")
    return _jacobian_batch(params, x[None, :])[0]


def _pack_batch(batch):
    samples = batch.samples if isinstance(batch, Dataset) else list(batch)
    if not samples:
        raise ValueError("batch must not be empty")
    X = np.asarray([s.x for s in samples], dtype=float)
    U = np.asarray([s.u for s in samples], dtype=float)
    UG = np.asarray([s.u_grad for s in samples], dtype=float)
    return X, U, UG


def _loss_arrays(params, X, U, UG, gamma: float) -> float:
    out = _forward_batch(params, X)[-1]
    total = float(np.sum((out - U) ** 2))
    if gamma > 0.0:
        total += gamma * float(np.sum((_jacobian_batch(params, X) - UG) ** 2))
    return total


def sobolev_loss(params: MlpParams, batch, gamma: float) -> float:
    """Sum over the batch of value error plus gamma-weighted Jacobian error."""
    if gamma < 0.0:
        raise ValueError("gamma must be nonnegative")
    return _loss_arrays(params, *_pack_batch(batch), gamma)


def _grad_arrays(params: MlpParams, X, U, UG, gamma: float):
    """Exact parameter gradient of the batch loss.

    The Jacobian J factors as R_l W_l Q_l around every layer, so the
    gradient of ||J - UG||^2 in W_l is 2 R_l' E Q_l' with E = J - UG and
    the activation masks held fixed.
    """
    L = len(params.weights)
    acts = _forward_batch(params, X)
    masks = [acts[l] > 0.0 for l in range(1, L)]

    gW = [np.zeros_like(W) for W in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]

    delta = 2.0 * (acts[-1] - U)
    for l in range(L - 1, -1, -1):
        gW[l] += delta.T @ acts[l]
        gb[l] += delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l]) * masks[l - 1]

    if gamma > 0.0:
        # forward partial products Q_l = D_{l-1} W_{l-1} ... D_0 W_0
        Q = [None] * L
        for l in range(1, L):
            inner = params.weights[l - 1] if l == 1 else np.einsum(
                "ij,bjn->bin", params.weights[l - 1], Q[l - 1]
            )
            Q[l] = masks[l - 1][:, :, None] * inner
        E = np.einsum("ij,bjn->bin", params.weights[-1], Q[L - 1]) - UG

        R = np.broadcast_to(
            np.eye(params.weights[-1].shape[0]), (X.shape[0], *([params.weights[-1].shape[0]] * 2))
        )
        for l in range(L - 1, -1, -1):
            T = np.einsum("bmi,bmn->bin", R, E)
            if l == 0:
                gW[0] += 2.0 * gamma * T.sum(axis=0)
            else:
                gW[l] += 2.0 * gamma * np.einsum("bin,bjn->ij", T, Q[l])
                R = np.einsum("bij,jk->bik", R, params.weights[l]) * masks[l - 1][:, None, :]
    return gW, gb


def loss_gradient(params: MlpParams, batch, gamma: float) -> MlpParams:
    """Gradient of sobolev_loss with respect to every weight and bias."""
    if gamma < 0.0:
        raise ValueError("gamma must be nonnegative")
    gW, gb = _grad_arrays(params, *_pack_batch(batch), gamma)
    return MlpParams(gW, gb)


class StopReason(Enum):
    TARGET_REACHED = "target_reached"
    EPOCH_CAP = "epoch_cap"


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 1.0
    batch_size: int = 5
    learning_rate: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    loss_target: float = 0.01
    max_epochs: int = 50_000
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.gamma < 0.0:
            raise ValueError("gamma must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.loss_target <= 0.0:
            raise ValueError("loss_target must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class TrainReport:
    final_params: MlpParams
    epochs_run: int
    loss_history: np.ndarray
    stop_reason: StopReason


_CHUNK_EPOCHS = 1024


def train(ds: Dataset, arch: MlpArchitecture, cfg: TrainConfig, backend: str = "auto") -> TrainReport:
    """Mini-batch Adam until the total training loss reaches the target.

    The full-dataset loss is recorded after every epoch. Runs are a pure
    function of (ds, arch, cfg) for a fixed backend; the batch order comes
    from a dedicated stream seeded with (cfg.seed, 1).
    """
    if ds.kind != "train":
        raise ValueError(f"training requires a train dataset, got kind={ds.kind!r}")
    if ds.state_dim != arch.input_dim or ds.input_dim != arch.output_dim:
        raise ValueError(
            f"dataset dims ({ds.state_dim}->{ds.input_dim}) do not match "
            f"architecture ({arch.input_dim}->{arch.output_dim})"
        )
    if len(ds) == 0:
        raise ValueError("training dataset is empty")
    if backend not in ("auto", "numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")

    X, U, UG = _pack_batch(ds)
    step = None
    if backend in ("auto", "numba"):
        try:
            from ._kernels import run_epochs as step
        except ImportError:
            if backend == "numba":
                raise
    if step is None:
        step = _run_epochs_numpy

    arch_meta = _flat_layout(arch)
    theta = init_params(arch, cfg.seed).to_flat()
    mom = np.zeros_like(theta)
    vel = np.zeros_like(theta)
    order_rng = np.random.default_rng([cfg.seed, 1])

    ntr = len(ds)
    history: list[float] = []
    t_adam = 0
    stop = StopReason.EPOCH_CAP
    while len(history) < cfg.max_epochs:
        chunk = min(_CHUNK_EPOCHS, cfg.max_epochs - len(history))
        if cfg.shuffle:
            perms = np.stack([order_rng.permutation(ntr) for _ in range(chunk)])
        else:
            perms = np.tile(np.arange(ntr), (chunk, 1))
        losses = np.empty(chunk)
        done, t_adam, status = step(
            theta, mom, vel, t_adam, arch_meta, X, U, UG, perms,
            cfg.batch_size, cfg.gamma, cfg.learning_rate,
            cfg.adam_betas[0], cfg.adam_betas[1], cfg.adam_eps,
            cfg.loss_target, losses,
        )
        history.extend(losses[:done].tolist())
        if status == 2:
            raise RuntimeError(
                f"training loss became non-finite at epoch {len(history)}; "
                "reduce learning_rate or gamma"
            )
        if status == 1:
            stop = StopReason.TARGET_REACHED
            break
    return TrainReport(
        final_params=MlpParams.from_flat(arch, theta),
        epochs_run=len(history),
        loss_history=np.asarray(history),
        stop_reason=stop,
    )


def _flat_layout(arch: MlpArchitecture):
    """(dims, weight offsets, bias offsets) describing the flat vector."""
    dims = np.asarray(arch.layer_dims, dtype=np.int64)
    L = dims.size - 1
    woff = np.zeros(L, dtype=np.int64)
    boff = np.zeros(L, dtype=np.int64)
    pos = 0
    for l in range(L):
        woff[l] = pos
        pos += int(dims[l + 1] * dims[l])
        boff[l] = pos
        pos += int(dims[l + 1])
    return dims, woff, boff


def _run_epochs_numpy(theta, mom, vel, t_adam, arch_meta, X, U, UG, perms,
                      batch_size, gamma, lr, beta1, beta2, eps, target, losses):
    """Reference epoch loop; semantics identical to the compiled kernel."""
    dims, _, _ = arch_meta
    arch = MlpArchitecture(int(dims[0]), tuple(int(w) for w in dims[1:-1]), int(dims[-1]))
    ntr = X.shape[0]
    for ep in range(perms.shape[0]):
        perm = perms[ep]
        for lo in range(0, ntr, batch_size):
            idx = perm[lo : lo + batch_size]
            params = MlpParams.from_flat(arch, theta)
            gW, gb = _grad_arrays(params, X[idx], U[idx], UG[idx], gamma)
            grad = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(gW, gb)])
            t_adam += 1
            mom[:] = beta1 * mom + (1.0 - beta1) * grad
            vel[:] = beta2 * vel + (1.0 - beta2) * grad * grad
            mhat = mom / (1.0 - beta1 ** t_adam)
            vhat = vel / (1.0 - beta2 ** t_adam)
            theta -= lr * mhat / (np.sqrt(vhat) + eps)
        total = _loss_arrays(MlpParams.from_flat(arch, theta), X, U, UG, gamma)
        losses[ep] = total
        if not np.isfinite(total):
            return ep + 1, t_adam, 2
        if total <= target:
            return ep + 1, t_adam, 1
    return perms.shape[0], t_adam, 0


def save_params(params: MlpParams, path, meta: dict | None = None) -> None:
    arch = params.architecture
    doc = {
        "version": PARAMS_FORMAT_VERSION,
        "input_dim": arch.input_dim,
        "hidden_widths": list(arch.hidden_widths),
        "output_dim": arch.output_dim,
        "weights": [W.tolist() for W in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_params(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if doc.get("version") != PARAMS_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported parameter format {doc.get('version')!r}")
    params = MlpParams(
        [np.asarray(W, dtype=float) for W in doc["weights"]],
        [np.asarray(b, dtype=float) for b in doc["biases"]],
    )
    expect = (doc["input_dim"], *doc["hidden_widths"], doc["output_dim"])
    if params.layer_dims != tuple(expect):
        raise ValueError(f"{path}: stored arrays do not match the architecture header")
    return params, doc.get("meta", {})


def write_loss_history(history, path) -> None:
    lines = ["epoch,loss"]
    for i, val in enumerate(np.asarray(history, dtype=float)):
        lines.append(f"{i + 1},{float(val)!r}")
    Path(path).write_text("\n".join(lines) + "\n")
