"""Small dense networks with hand-derived gradients, plus Adam and checkpoints.

Everything runs in float64 on the CPU. A network is an affine-ReLU stack
with an affine output layer; forward returns the cached pre-activations so
backward can produce exact parameter gradients for any scalar loss whose
output gradient the caller supplies. The networks here are tiny, so this
beats dragging in an autodiff framework and keeps runs bit-reproducible.

Checkpoint file layout (little-endian, version 1):

    magic b"PVCB" | u32 version | u32 n | u32 action_dim
    u32 len + u32[] actor layer sizes | u32 len + u32[] critic layer sizes
    raw float64 arrays, in declaration order [W0, b0, W1, b1, ...], for:
    actor, critic1, critic2, target1, target2, then log_alpha (one float64),
    then the optimizer states for actor, critic1, critic2, log_alpha as
    u64 step | f64 lr | f64 beta1 | f64 beta2 | f64 eps | m arrays | v arrays.

Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

MAGIC = b"PVCB"
VERSION = 1


class NonFiniteError(RuntimeError):
    """Raised when a gradient or loss stops being finite."""


@dataclass
class MlpParams:
    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        """Parameters in declaration order [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())


def init_mlp(sizes: Sequence[int], rng: np.random.Generator) -> MlpParams:
    """Uniform +/-1/sqrt(fan_in) initialization for weights and biases."""
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output dimension")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(tuple(sizes), weights, biases)


def forward(params: MlpParams, x: np.ndarray):
    """Affine-ReLU stack with an affine final layer.

    Returns (output, cache); feed the cache back into `backward`. Accepts a
    single input vector or a (batch, dim) matrix.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    a = x[None, :] if squeeze else x
    if a.shape[1] != params.sizes[0]:
        raise ValueError(f"input dim {a.shape[1]}, network expects {params.sizes[0]}")
    inputs, preacts = [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w + b
        preacts.append(z)
        a = z if i == last else np.maximum(z, 0.0)
    out = a[0] if squeeze else a
    return out, (inputs, preacts, squeeze)


def backward(params: MlpParams, cache, grad_output: np.ndarray) -> list[np.ndarray]:
    """Exact parameter gradients, in the same order as params.arrays()."""
    inputs, preacts, squeeze = cache
    g = np.asarray(grad_output, dtype=float)
    if squeeze:
        g = g[None, :]
    if g.shape != preacts[-1].shape:
        raise ValueError(
            f"output gradient shape {g.shape} does not match forward cache "
            f"{preacts[-1].shape}"
        )
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    delta = g
    for i in range(len(params.weights) - 1, -1, -1):
        grads_w[i] = inputs[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (preacts[i - 1] > 0.0)
    out = []
    for gw, gb in zip(grads_w, grads_b):
        out.extend((gw, gb))
    return out


@dataclass
class OptimState:
    """Adam moments for one parameter list (bias-corrected update)."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = None
    v: list[np.ndarray] = None

    @classmethod
    def for_arrays(cls, arrays: Sequence[np.ndarray], lr: float, **kw) -> "OptimState":
        state = cls(lr=lr, **kw)
        state.m = [np.zeros_like(a) for a in arrays]
        state.v = [np.zeros_like(a) for a in arrays]
        return state


def adam_step(
    arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray], opt: OptimState
) -> None:
    """In-place adaptive-moment update; raises NonFiniteError on bad grads."""
    if len(arrays) != len(opt.m):
        raise ValueError("parameter/optimizer shape mismatch")
    for g in grads:
        if not np.isfinite(g).all():
            raise NonFiniteError("non-finite gradient encountered")
    opt.step_count += 1
    t = opt.step_count
    bias1 = 1.0 - opt.beta1**t
    bias2 = 1.0 - opt.beta2**t
    for a, g, m, v in zip(arrays, grads, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * np.square(g)
        a -= opt.lr * (m / bias1) / (np.sqrt(v / bias2) + opt.eps)


def flatten(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([a.ravel() for a in arrays])


def unflatten_into(arrays: Sequence[np.ndarray], vector: np.ndarray) -> None:
    pos = 0
    for a in arrays:
        a[...] = vector[pos : pos + a.size].reshape(a.shape)
        pos += a.size


# -- checkpoint serialization -------------------------------------------------


def _write_sizes(f: BinaryIO, sizes: Sequence[int]) -> None:
    f.write(struct.pack("<I", len(sizes)))
    f.write(struct.pack(f"<{len(sizes)}I", *sizes))


def _read_sizes(f: BinaryIO) -> tuple[int, ...]:
    (count,) = struct.unpack("<I", f.read(4))
    return struct.unpack(f"<{count}I", f.read(4 * count))


def _write_arrays(f: BinaryIO, arrays: Sequence[np.ndarray]) -> None:
    for a in arrays:
        f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_arrays(f: BinaryIO, like: Sequence[np.ndarray]) -> list[np.ndarray]:
    out = []
    for a in like:
        raw = f.read(8 * a.size)
        out.append(np.frombuffer(raw, dtype="<f8").astype(float).reshape(a.shape))
    return out


def _mlp_like(sizes: Sequence[int]) -> MlpParams:
    weights = [np.zeros((i, o)) for i, o in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(o) for o in sizes[1:]]
    return MlpParams(tuple(sizes), weights, biases)


def _write_opt(f: BinaryIO, opt: OptimState) -> None:
    f.write(struct.pack("<Qdddd", opt.step_count, opt.lr, opt.beta1, opt.beta2, opt.eps))
    _write_arrays(f, opt.m)
    _write_arrays(f, opt.v)


def _read_opt(f: BinaryIO, like: Sequence[np.ndarray]) -> OptimState:
    step_count, lr, beta1, beta2, eps = struct.unpack("<Qdddd", f.read(8 + 32))
    opt = OptimState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step_count=step_count)
    opt.m = _read_arrays(f, like)
    opt.v = _read_arrays(f, like)
    return opt


def save_checkpoint(
    path,
    *,
    n: int,
    action_dim: int,
    actor: MlpParams,
    critic1: MlpParams,
    critic2: MlpParams,
    target1: MlpParams,
    target2: MlpParams,
    log_alpha: float,
    opt_actor: OptimState,
    opt_critic1: OptimState,
    opt_critic2: OptimState,
    opt_alpha: OptimState,
) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", VERSION, n, action_dim))
        _write_sizes(f, actor.sizes)
        _write_sizes(f, critic1.sizes)
        for params in (actor, critic1, critic2, target1, target2):
            _write_arrays(f, params.arrays())
        f.write(struct.pack("<d", log_alpha))
        _write_opt(f, opt_actor)
        _write_opt(f, opt_critic1)
        _write_opt(f, opt_critic2)
        _write_opt(f, opt_alpha)


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into a dict keyed like save_checkpoint's
    keyword arguments (plus "n" and "action_dim")."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        version, n, action_dim = struct.unpack("<III", f.read(12))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        actor_sizes = _read_sizes(f)
        critic_sizes = _read_sizes(f)
        nets = {}
        for name, sizes in (
            ("actor", actor_sizes),
            ("critic1", critic_sizes),
            ("critic2", critic_sizes),
            ("target1", critic_sizes),
            ("target2", critic_sizes),
        ):
            params = _mlp_like(sizes)
            loaded = _read_arrays(f, params.arrays())
            params.weights = loaded[0::2]
            params.biases = loaded[1::2]
            nets[name] = params
        (log_alpha,) = struct.unpack("<d", f.read(8))
        opts = {}
        for name, like in (
            ("opt_actor", nets["actor"].arrays()),
            ("opt_critic1", nets["critic1"].arrays()),
            ("opt_critic2", nets["critic2"].arrays()),
            ("opt_alpha", [np.zeros(1)]),
        ):
            opts[name] = _read_opt(f, like)
    return {"n": n, "action_dim": action_dim, "log_alpha": log_alpha, **nets, **opts}
