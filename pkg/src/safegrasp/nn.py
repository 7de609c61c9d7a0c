"""Dense networks over the autodiff substrate, Adam, and checkpoint IO.

Parameters are plain float64 arrays held in a :class:`ParameterSet`; the
layer convention is ``w{i}`` of shape (fan_in, fan_out) and ``b{i}`` of shape
(1, fan_out).  Arrays may carry an extra leading ensemble axis (used by the
critic ensemble); every routine here broadcasts over it transparently.

Checkpoints are a small binary container (magic, shape table, row-major
float64 payload) with a JSON sidecar for hyperparameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor

CHECKPOINT_MAGIC = b"SGNET001"

_ACTIVATIONS = ("identity", "tanh")


@dataclass(frozen=True)
class Mlp:
    """Layer widths plus the output activation; hidden layers are rectified."""

    sizes: tuple
    output_activation: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 3:
            raise ValueError("an Mlp needs input, at least one hidden, and output widths")
        if any(s < 1 for s in sizes):
            raise ValueError("all widths must be >= 1")
        if self.output_activation not in _ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {_ACTIVATIONS}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1


class ParameterSet:
    """Ordered name -> array mapping with shapes fixed at construction."""

    def __init__(self, arrays: dict):
        self._arrays = {}
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name!r} contains non-finite values")
            self._arrays[str(name)] = arr
        self._shapes = {name: arr.shape for name, arr in self._arrays.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if name not in self._shapes:
            raise KeyError(f"unknown parameter {name!r}")
        if value.shape != self._shapes[name]:
            raise ValueError(
                f"shape mismatch for {name!r}: {value.shape} != {self._shapes[name]}"
            )
        self._arrays[name] = value

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def __contains__(self, name) -> bool:
        return name in self._arrays

    def names(self) -> list:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self._arrays.items()})

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet({k: np.zeros_like(v) for k, v in self._arrays.items()})

    def as_dict(self) -> dict:
        return dict(self._arrays)


def init_mlp_params(
    net: Mlp, rng: np.random.Generator, ensemble: int | None = None
) -> ParameterSet:
    """He-uniform initialisation; the output layer gets a smaller gain."""
    arrays = {}
    lead = () if ensemble is None else (int(ensemble),)
    for i in range(net.n_layers):
        fan_in, fan_out = net.sizes[i], net.sizes[i + 1]
        bound = np.sqrt(6.0 / fan_in)
        if i == net.n_layers - 1:
            bound *= 0.01  # keep initial outputs near zero
        arrays[f"w{i}"] = rng.uniform(-bound, bound, size=lead + (fan_in, fan_out))
        arrays[f"b{i}"] = np.zeros(lead + (1, fan_out))
    return ParameterSet(arrays)


def _apply_layers(net: Mlp, params, x):
    """Shared forward; works on Tensors and on raw arrays via ParameterSet."""
    h = x
    for i in range(net.n_layers):
        h = h @ params[f"w{i}"] + params[f"b{i}"]
        if i < net.n_layers - 1:
            h = h.relu()
        elif net.output_activation == "tanh":
            h = h.tanh()
    return h


def forward(net: Mlp, params: ParameterSet, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass on plain arrays.

    Accepts a single input vector or a batch; the output matches.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if x.shape[-1] != net.sizes[0]:
        raise ValueError(
            f"input width {x.shape[-1]} does not match the network ({net.sizes[0]})"
        )
    h = Tensor(np.atleast_2d(x))
    tensors = {name: Tensor(arr) for name, arr in params.items()}
    out = _apply_layers(net, tensors, h).data
    return out[0] if single else out


def forward_tape(net: Mlp, params: dict, x: Tensor) -> Tensor:
    """Forward pass through Tensors for gradient computation."""
    return _apply_layers(net, params, x)


def gradients(net: Mlp, params: ParameterSet, x: np.ndarray, loss_fn) -> dict:
    """Exact reverse-mode gradients of a scalar loss of the network outputs.

    ``loss_fn`` receives the output Tensor and must build a scalar Tensor.
    Returns a dict of arrays shaped like the parameters.
    """
    tensors = {
        name: Tensor(arr, requires_grad=True) for name, arr in params.items()
    }
    out = forward_tape(net, tensors, Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64))))
    loss = loss_fn(out)
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ValueError("loss_fn must produce a scalar Tensor")
    loss.backward()
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in tensors.items()
    }


class AdamState:
    """First/second moment accumulators plus the step counter."""

    def __init__(self, params: ParameterSet):
        self.m = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.t = 0


def adam_update(
    params: ParameterSet,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1.0e-8,
):
    """Bias-corrected adaptive-moment step (updates arrays in place)."""
    state.t += 1
    correction1 = 1.0 - beta1**state.t
    correction2 = 1.0 - beta2**state.t
    for name, arr in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != arr.shape:
            raise ValueError(
                f"gradient shape mismatch for {name!r}: {grad.shape} != {arr.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


# ---------------------------------------------------------------------------
# checkpoint serialisation
# ---------------------------------------------------------------------------

def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    """Write arrays to the flat binary layout plus a JSON sidecar."""
    path = Path(path)
    entries = []
    payload = []
    for name, arr in arrays.items():
        # asarray keeps 0-d arrays 0-d; tobytes() always emits C order
        arr = np.asarray(arr, dtype=np.float64)
        name_bytes = str(name).encode("utf-8")
        entry = struct.pack("<H", len(name_bytes)) + name_bytes
        entry += struct.pack("<B", arr.ndim)
        entry += struct.pack(f"<{arr.ndim}I", *arr.shape)
        entries.append(entry)
        payload.append(arr.tobytes())
    blob = CHECKPOINT_MAGIC + struct.pack("<I", len(entries))
    blob += b"".join(entries) + b"".join(payload)
    path.write_bytes(blob)
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    sidecar.write_text(json.dumps(meta or {}, indent=2, sort_keys=True) + "\n")


def load_checkpoint(path):
    """Read a checkpoint; returns ``(arrays, meta)``."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    shapes = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        shapes.append((name, shape))
    arrays = {}
    for name, shape in shapes:
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(shape)
        offset += size * 8
        arrays[name] = arr.copy()
    sidecar = path.with_suffix(path.suffix + ".meta.json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return arrays, meta
