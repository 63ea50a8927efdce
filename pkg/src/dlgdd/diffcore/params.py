"""Named parameter storage, Adam, gradient clipping and checkpoint files.

Checkpoint layout (``.npz``, numpy's zip-of-arrays container):

* ``__format__``  -- 0-d unicode array holding JSON ``{"format": "dlgdd-params",
  "version": 1, "names": [...], "meta": {...}}``
* ``p/<name>``    -- float64 parameter array, one entry per name
* ``m/<name>``, ``v/<name>`` -- Adam moments (present when ``with_state``)
* ``__step__``    -- 0-d int64 Adam step counter (present when ``with_state``)
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from ..errors import DataError, NumericError, UsageError
from .tensor import Tensor

CHECKPOINT_VERSION = 1


def write_npz(path, arrays: dict[str, np.ndarray]):
    """Same container as ``np.savez`` but with fixed entry timestamps, so equal arrays give equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


class ParameterStore:
    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise UsageError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.size for t in self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, t in self.params.items():
            if name not in arrays:
                raise DataError(f"checkpoint lacks parameter {name!r}")
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != t.shape:
                raise DataError(f"parameter {name!r}: checkpoint shape {a.shape}, model {t.shape}")
            t.data = a.copy()

    def save(self, path, meta: dict | None = None, with_state: bool = False):
        header = {
            "format": "dlgdd-params",
            "version": CHECKPOINT_VERSION,
            "names": list(self.params),
            "meta": meta or {},
        }
        arrays = {"__format__": np.array(json.dumps(header, sort_keys=True))}
        for name, t in self.params.items():
            arrays[f"p/{name}"] = t.data
        if with_state:
            arrays["__step__"] = np.array(self.step, dtype=np.int64)
            for name, (m, v) in self.moments.items():
                arrays[f"m/{name}"] = m
                arrays[f"v/{name}"] = v
        write_npz(path, arrays)

    @staticmethod
    def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
        path = Path(path)
        try:
            with np.load(path, allow_pickle=False) as z:
                header = json.loads(str(z["__format__"]))
                arrays = {k[2:]: z[k] for k in z.files if k.startswith("p/")}
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"{path}: not a parameter checkpoint ({exc})") from None
        if header.get("format") != "dlgdd-params":
            raise DataError(f"{path}: unknown checkpoint format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {header.get('version')}")
        return header, arrays

    def load(self, path) -> dict:
        header, arrays = self.read_checkpoint(path)
        self.load_arrays(arrays)
        return header.get("meta", {})


def global_grad_norm(store: ParameterStore) -> float:
    total = 0.0
    for t in store.params.values():
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    return float(np.sqrt(total))


def clip_grad_norm(store: ParameterStore, max_norm: float) -> float:
    norm = global_grad_norm(store)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for t in store.params.values():
            if t.grad is not None:
                t.grad = t.grad * scale
    return norm


def adam_step(
    store: ParameterStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update over every parameter; gradients are cleared afterwards."""
    for name, t in store.params.items():
        if t.grad is None:
            raise UsageError(f"adam_step: parameter {name!r} has no gradient")
    store.step += 1
    c1 = 1.0 - beta1**store.step
    c2 = 1.0 - beta2**store.step
    for name, t in store.params.items():
        m, v = store.moments.get(name) or (np.zeros_like(t.data), np.zeros_like(t.data))
        m = beta1 * m + (1.0 - beta1) * t.grad
        v = beta2 * v + (1.0 - beta2) * t.grad * t.grad
        store.moments[name] = (m, v)
        new = t.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if not np.isfinite(new).all():
            raise NumericError(f"adam_step: parameter {name!r} became non-finite")
        t.data = new
        t.grad = None
    return store
