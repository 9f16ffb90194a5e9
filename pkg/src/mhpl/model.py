"""Trainable adapter in front of a frozen linear classifier head.

    z      = A x + a  [+ V leaky(U x + c)]
    logits = W z + b          (W, b frozen)

``A`` starts at the identity and ``a``/``V`` at zero, so a fresh model
reproduces the head's predictions on the raw features exactly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

LEAK = 0.1
ADAPTER_KEYS = ("A", "a", "U", "c", "V")

_CKPT_MAGIC = b"MHPC"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIII")


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


@dataclass(eq=False)
class AdaptModel:
    head_W: np.ndarray
    head_b: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.head_W, self.head_b):
            arr.setflags(write=False)

    @classmethod
    def from_head(cls, W, b, hidden: int = 0, seed: int = 0, init_scale: float = 0.1) -> AdaptModel:
        W = np.array(W, dtype=np.float64)
        b = np.array(b, dtype=np.float64)
        d = W.shape[1]
        params = {"A": np.eye(d), "a": np.zeros(d)}
        if hidden:
            from .rng import make_rng
            rng = make_rng(seed)
            params["U"] = rng.normal(0.0, init_scale, size=(hidden, d))
            params["c"] = np.zeros(hidden)
            params["V"] = np.zeros((d, hidden))
        return cls(W, b, params)

    @property
    def d(self) -> int:
        return self.head_W.shape[1]

    @property
    def K(self) -> int:
        return self.head_W.shape[0]

    @property
    def hidden(self) -> int:
        return self.params["U"].shape[0] if "U" in self.params else 0

    def copy(self) -> AdaptModel:
        return AdaptModel(self.head_W, self.head_b, {k: v.copy() for k, v in self.params.items()})

    def with_params(self, params: dict) -> AdaptModel:
        return AdaptModel(self.head_W, self.head_b, params)

    def forward(self, x):
        """Return (logits, cache) for a batch of raw features."""
        p = self.params
        z = x @ p["A"].T + p["a"]
        cache = {"x": x}
        if "U" in p:
            pre = x @ p["U"].T + p["c"]
            hid = np.where(pre > 0, pre, LEAK * pre)
            z = z + hid @ p["V"].T
            cache["pre"], cache["hid"] = pre, hid
        cache["z"] = z
        return z @ self.head_W.T + self.head_b, cache

    def backward(self, dlogits, cache) -> dict:
        """Adapter gradients given d(loss)/d(logits)."""
        x = cache["x"]
        dz = dlogits @ self.head_W
        g = {"A": dz.T @ x, "a": dz.sum(axis=0)}
        if "U" in self.params:
            g["V"] = dz.T @ cache["hid"]
            dpre = (dz @ self.params["V"]) * np.where(cache["pre"] > 0, 1.0, LEAK)
            g["U"] = dpre.T @ x
            g["c"] = dpre.sum(axis=0)
        return g

    def embed(self, x):
        return self.forward(x)[1]["z"]

    def predict_proba(self, x):
        return softmax(self.forward(x)[0])

    def predict(self, x):
        return np.argmax(self.forward(x)[0], axis=1)


def save_checkpoint(model: AdaptModel, path) -> None:
    """Write ``MHPC`` v1: header (magic, version, d, K, hidden) then f64 LE
    arrays A, a, [U, c, V], W, b in that order."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, model.d, model.K, model.hidden))
        for key in ADAPTER_KEYS:
            if key in model.params:
                fh.write(np.ascontiguousarray(model.params[key], dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.head_W, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.head_b, dtype="<f8").tobytes())


def load_checkpoint(path) -> AdaptModel:
    raw = open(path, "rb").read()
    if len(raw) < _CKPT_HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, d, K, h = _CKPT_HEADER.unpack_from(raw, 0)
    if magic != _CKPT_MAGIC or version != _CKPT_VERSION:
        raise ValueError(f"{path}: not an MHPC v{_CKPT_VERSION} checkpoint")
    shapes = [("A", (d, d)), ("a", (d,))]
    if h:
        shapes += [("U", (h, d)), ("c", (h,)), ("V", (d, h))]
    shapes += [("W", (K, d)), ("b", (K,))]
    total = _CKPT_HEADER.size + 8 * sum(int(np.prod(s)) for _, s in shapes)
    if len(raw) != total:
        raise ValueError(f"{path}: expected {total} bytes, got {len(raw)}")
    off = _CKPT_HEADER.size
    arrays = {}
    for key, shape in shapes:
        cnt = int(np.prod(shape))
        arrays[key] = np.frombuffer(raw, dtype="<f8", count=cnt, offset=off).reshape(shape).astype(np.float64)
        off += 8 * cnt
    W, b = arrays.pop("W"), arrays.pop("b")
    return AdaptModel(W, b, arrays)
