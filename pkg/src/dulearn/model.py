"""Two-head MLP encoder, its hand-written backward pass, and checkpoint IO.

The trunk is a 2-layer tanh perceptron; two affine heads on the shared
trunk output produce the identity feature mu and the raw log-variance r
(so sigma = exp(r/2)). The sigma-head bias starts at -2 (sigma ~ 0.37) so
early sampling noise does not destabilize the softmax.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import LatentConfig, sigma_from_raw
from .errors import ContractViolation, MissingInputError
from .losses import ClassifierWeights

TRUNK_PARAMS = ("w1", "b1", "w2", "b2")
HEAD_PARAMS = ("wm", "bm", "ws", "bs")
PARAM_ORDER = TRUNK_PARAMS + HEAD_PARAMS

SIGMA_HEAD_BIAS_INIT = -2.0

CHECKPOINT_MAGIC = b"DULCKPT1"


def _affine_weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class EncoderModel:
    """Differentiable feature extractor with mu and sigma output heads."""

    in_dim: int
    hidden_dim: int
    latent: LatentConfig
    params: dict[str, np.ndarray] = field(repr=False)
    frozen_trunk: bool = False

    @classmethod
    def create(cls, in_dim: int, hidden_dim: int, embed_dim: int, seed: int) -> "EncoderModel":
        if in_dim < 1 or hidden_dim < 1:
            raise ContractViolation("in_dim and hidden_dim must be >= 1")
        latent = LatentConfig(dim=embed_dim)
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
        params = {
            "w1": _affine_weight(rng, in_dim, hidden_dim),
            "b1": np.zeros(hidden_dim),
            "w2": _affine_weight(rng, hidden_dim, hidden_dim),
            "b2": np.zeros(hidden_dim),
        }
        params.update(cls._head_params(rng, hidden_dim, embed_dim))
        return cls(in_dim=in_dim, hidden_dim=hidden_dim, latent=latent, params=params)

    @staticmethod
    def _head_params(rng: np.random.Generator, hidden_dim: int, embed_dim: int) -> dict[str, np.ndarray]:
        return {
            "wm": _affine_weight(rng, hidden_dim, embed_dim),
            "bm": np.zeros(embed_dim),
            "ws": _affine_weight(rng, hidden_dim, embed_dim),
            "bs": np.full(embed_dim, SIGMA_HEAD_BIAS_INIT),
        }

    @property
    def embed_dim(self) -> int:
        return self.latent.dim

    def reinit_heads(self, seed: int) -> None:
        """Replace both heads with freshly initialized parameters."""
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
        self.params.update(self._head_params(rng, self.hidden_dim, self.embed_dim))

    def copy(self) -> "EncoderModel":
        return EncoderModel(
            in_dim=self.in_dim,
            hidden_dim=self.hidden_dim,
            latent=self.latent,
            params={k: v.copy() for k, v in self.params.items()},
            frozen_trunk=self.frozen_trunk,
        )

    def forward(self, x):
        """Returns (mu, r, cache); the cache feeds :meth:`backward`."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ContractViolation(f"input must be (N, {self.in_dim}), got {x.shape}")
        p = self.params
        h1 = np.tanh(x @ p["w1"] + p["b1"])
        h2 = np.tanh(h1 @ p["w2"] + p["b2"])
        mu = h2 @ p["wm"] + p["bm"]
        r = h2 @ p["ws"] + p["bs"]
        return mu, r, {"x": x, "h1": h1, "h2": h2}

    def backward(self, cache, dmu, dr) -> dict[str, np.ndarray]:
        """Parameter gradients given upstream gradients on mu and r.

        With a frozen trunk the trunk entries come back as zeros and the
        trunk matmuls are skipped.
        """
        p = self.params
        h1, h2, x = cache["h1"], cache["h2"], cache["x"]
        grads = {
            "wm": h2.T @ dmu,
            "bm": dmu.sum(axis=0),
            "ws": h2.T @ dr,
            "bs": dr.sum(axis=0),
        }
        if self.frozen_trunk:
            for name in TRUNK_PARAMS:
                grads[name] = np.zeros_like(p[name])
            return grads
        dh2 = dmu @ p["wm"].T + dr @ p["ws"].T
        dz2 = dh2 * (1.0 - h2 * h2)
        grads["w2"] = h1.T @ dz2
        grads["b2"] = dz2.sum(axis=0)
        dh1 = dz2 @ p["w2"].T
        dz1 = dh1 * (1.0 - h1 * h1)
        grads["w1"] = x.T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        return grads

    def embed(self, x):
        """(mu, sigma) for a batch of inputs."""
        mu, r, _ = self.forward(x)
        return mu, sigma_from_raw(r)


def predict_labels(model: EncoderModel, weights: ClassifierWeights, x) -> np.ndarray:
    """Cosine-nearest class center per sample; ties go to the lowest index."""
    mu, _, _ = model.forward(x)
    norms = np.linalg.norm(mu, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ContractViolation("zero-norm embedding")
    cos = (mu / norms) @ weights.unit_columns()
    return np.argmax(cos, axis=1)


def save_checkpoint(path, model: EncoderModel, weights: ClassifierWeights,
                    meta: dict | None = None) -> None:
    """Serialize model + classifier to a flat binary file.

    Layout: magic, little-endian uint32 header length, JSON header (dims,
    layer sizes, flags, caller metadata), then the parameter arrays in
    declaration order (w1 b1 w2 b2 wm bm ws bs) followed by the classifier
    matrix, all float64 little-endian.
    """
    header = {
        "format": 1,
        "in_dim": model.in_dim,
        "hidden_dim": model.hidden_dim,
        "embed_dim": model.embed_dim,
        "frozen_trunk": bool(model.frozen_trunk),
        "num_classes": weights.num_classes,
        "normalized_w": bool(weights.normalized),
        "meta": dict(meta or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with path.open("wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in PARAM_ORDER:
            f.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(weights.w, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`: returns (model, weights, meta)."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ContractViolation(f"not a checkpoint file: {path}")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off: off + hlen].decode("utf-8"))
    off += hlen
    in_dim = header["in_dim"]
    hidden = header["hidden_dim"]
    embed = header["embed_dim"]
    shapes = {
        "w1": (in_dim, hidden), "b1": (hidden,),
        "w2": (hidden, hidden), "b2": (hidden,),
        "wm": (hidden, embed), "bm": (embed,),
        "ws": (hidden, embed), "bs": (embed,),
    }
    params = {}
    for name in PARAM_ORDER:
        shape = shapes[name]
        count = int(np.prod(shape))
        params[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape).copy()
        off += count * 8
    wshape = (embed, header["num_classes"])
    wcount = int(np.prod(wshape))
    w = np.frombuffer(raw, dtype="<f8", count=wcount, offset=off).reshape(wshape).copy()
    model = EncoderModel(
        in_dim=in_dim,
        hidden_dim=hidden,
        latent=LatentConfig(dim=embed),
        params=params,
        frozen_trunk=bool(header["frozen_trunk"]),
    )
    weights = ClassifierWeights(w=w, normalized=bool(header["normalized_w"]))
    return model, weights, header.get("meta", {})
