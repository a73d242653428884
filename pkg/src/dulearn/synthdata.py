"""Synthetic datasets with ground-truth noise annotations.

Identity data: class centers on the unit sphere (minimum pairwise angle
enforced by rejection), isotropic Gaussian samples around each center, and
an optional corruption pass that adds large seeded noise to an exact
fraction of samples. Every sample carries its true noise level so the
uncertainty analyses can be scored against ground truth.

Also the 1-D heteroscedastic regression task y = f(x) + eps * sigma(x).

File formats (CSV and an equivalent binary) are documented on the
save/load functions; regeneration from a dataset's generator spec is
bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ContractViolation, MissingInputError

IDENTITY_BIN_MAGIC = b"DULIDS01"

_FUNC_KINDS = ("affine", "sine", "const")


def spec_hash(spec: dict) -> str:
    """Stable sha256 of a generator spec (canonical JSON)."""
    blob = json.dumps(spec, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class SyntheticIdentityDataset:
    """Labeled identity clusters with a per-sample ground-truth noise level."""

    x: np.ndarray
    labels: np.ndarray
    noise_levels: np.ndarray
    num_classes: int
    generator_spec: dict | None = None
    centers: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.noise_levels = np.asarray(self.noise_levels, dtype=np.float64)
        n = self.x.shape[0]
        if self.x.ndim != 2:
            raise ContractViolation("samples must form an (N, dim) matrix")
        if self.labels.shape != (n,) or self.noise_levels.shape != (n,):
            raise ContractViolation("labels and noise levels must match the sample count")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractViolation("label out of range")
        if np.any(self.noise_levels < 0):
            raise ContractViolation("noise levels must be >= 0")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    @property
    def seed(self) -> int:
        if self.generator_spec and "seed" in self.generator_spec:
            return int(self.generator_spec["seed"])
        return -1


def _draw_centers(rng: np.random.Generator, num_classes: int, input_dim: int,
                  min_angle: float, max_attempts: int) -> np.ndarray:
    centers = []
    attempts = 0
    budget = max_attempts * num_classes
    while len(centers) < num_classes:
        if attempts >= budget:
            raise ContractViolation(
                f"could not place {num_classes} centers with min angle {min_angle} "
                f"in dim {input_dim} within {budget} attempts"
            )
        attempts += 1
        v = rng.standard_normal(input_dim)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            continue
        v /= norm
        if centers:
            cos = np.array(centers) @ v
            if np.arccos(np.clip(cos, -1.0, 1.0)).min() < min_angle:
                continue
        centers.append(v)
    return np.array(centers)


def gen_identities(num_classes: int, per_class: int, input_dim: int,
                   center_spread: float, base_noise: float, seed: int,
                   max_attempts: int = 1000) -> SyntheticIdentityDataset:
    """Class centers on the unit sphere plus isotropic Gaussian samples.

    ``center_spread`` is the minimum pairwise angle (radians) between
    centers, enforced by rejection with a bounded attempt budget.
    """
    if num_classes < 2 or per_class < 2:
        raise ContractViolation("need num_classes >= 2 and per_class >= 2")
    if base_noise < 0:
        raise ContractViolation("base_noise must be >= 0")
    spec = {
        "kind": "identity",
        "num_classes": int(num_classes),
        "per_class": int(per_class),
        "input_dim": int(input_dim),
        "center_spread": float(center_spread),
        "base_noise": float(base_noise),
        "seed": int(seed),
        "corruptions": [],
    }
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    centers = _draw_centers(rng, num_classes, input_dim, center_spread, max_attempts)
    x = np.empty((num_classes * per_class, input_dim))
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    for c in range(num_classes):
        block = slice(c * per_class, (c + 1) * per_class)
        x[block] = centers[c] + base_noise * rng.standard_normal((per_class, input_dim))
    noise = np.full(x.shape[0], float(base_noise))
    return SyntheticIdentityDataset(
        x=x, labels=labels, noise_levels=noise,
        num_classes=num_classes, generator_spec=spec, centers=centers,
    )


def corrupt_fraction(ds: SyntheticIdentityDataset, fraction: float,
                     corruption_scale: float, seed: int) -> SyntheticIdentityDataset:
    """Add seeded Gaussian noise of the given scale to exactly
    floor(fraction * N + 0.5) samples.

    Labels never change; the affected samples' true noise level rises to
    sqrt(old^2 + scale^2) (independent noise adds in variance).
    """
    if not 0.0 <= fraction <= 1.0:
        raise ContractViolation("fraction must be in [0, 1]")
    if corruption_scale < 0:
        raise ContractViolation("corruption_scale must be >= 0")
    n_sel = int(np.floor(fraction * ds.n + 0.5))
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    idx = np.sort(rng.choice(ds.n, size=n_sel, replace=False))
    x = ds.x.copy()
    noise_levels = ds.noise_levels.copy()
    x[idx] += corruption_scale * rng.standard_normal((n_sel, ds.input_dim))
    noise_levels[idx] = np.sqrt(noise_levels[idx] ** 2 + corruption_scale ** 2)
    spec = None
    if ds.generator_spec is not None:
        spec = json.loads(json.dumps(ds.generator_spec))
        spec.setdefault("corruptions", []).append(
            {"fraction": float(fraction), "scale": float(corruption_scale), "seed": int(seed)}
        )
    return SyntheticIdentityDataset(
        x=x, labels=ds.labels.copy(), noise_levels=noise_levels,
        num_classes=ds.num_classes, generator_spec=spec,
        centers=None if ds.centers is None else ds.centers.copy(),
    )


def regenerate(spec: dict) -> SyntheticIdentityDataset:
    """Rebuild a dataset bit-identically from its generator spec."""
    if spec.get("kind") != "identity":
        raise ContractViolation("only identity specs can be regenerated")
    ds = gen_identities(
        num_classes=spec["num_classes"], per_class=spec["per_class"],
        input_dim=spec["input_dim"], center_spread=spec["center_spread"],
        base_noise=spec["base_noise"], seed=spec["seed"],
    )
    for corr in spec.get("corruptions", []):
        ds = corrupt_fraction(ds, corr["fraction"], corr["scale"], corr["seed"])
    return ds


@dataclass(frozen=True)
class FuncSpec:
    """A small evaluable function spec so dataset truth can live in files.

    Kinds: ``affine`` (a*x + b), ``sine`` (a*sin(b*x) + c), ``const`` (c).
    String form is ``kind:p1,p2,...``.
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.kind not in _FUNC_KINDS:
            raise ContractViolation(f"unknown function kind {self.kind!r}")
        want = {"affine": 2, "sine": 3, "const": 1}[self.kind]
        if len(self.params) != want:
            raise ContractViolation(f"{self.kind} takes {want} parameters")

    def evaluate(self, x):
        x = np.asarray(x, dtype=np.float64)
        p = self.params
        if self.kind == "affine":
            return p[0] * x + p[1]
        if self.kind == "sine":
            return p[0] * np.sin(p[1] * x) + p[2]
        return np.full_like(x, p[0])

    @classmethod
    def parse(cls, text: str) -> "FuncSpec":
        try:
            kind, rest = text.split(":", 1)
            params = tuple(float(t) for t in rest.split(","))
        except ValueError as exc:
            raise ContractViolation(f"bad function spec {text!r}") from exc
        return cls(kind=kind.strip(), params=params)

    def __str__(self) -> str:
        return f"{self.kind}:" + ",".join(repr(p) for p in self.params)


@dataclass
class HetRegDataset:
    """Scalar pairs y = f(x) + eps * sigma(x) with the truth kept evaluable."""

    x: np.ndarray
    y: np.ndarray
    f: FuncSpec
    sigma: FuncSpec
    x_range: tuple[float, float]
    seed: int

    @property
    def n(self) -> int:
        return self.x.shape[0]


def gen_hetreg(n: int, f: FuncSpec, sigma: FuncSpec, x_range: tuple[float, float],
               seed: int) -> HetRegDataset:
    """Uniform x on the range, targets corrupted by x-dependent noise."""
    if n < 10:
        raise ContractViolation("need n >= 10")
    lo, hi = float(x_range[0]), float(x_range[1])
    if not lo < hi:
        raise ContractViolation("x_range must be increasing")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    x = rng.uniform(lo, hi, size=n)
    sig = sigma.evaluate(x)
    if np.any(sig < 0):
        raise ContractViolation("sigma spec must be non-negative on the range")
    y = f.evaluate(x) + rng.standard_normal(n) * sig
    return HetRegDataset(x=x, y=y, f=f, sigma=sigma, x_range=(lo, hi), seed=int(seed))


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def save_identity_csv(path, ds: SyntheticIdentityDataset) -> None:
    """Text form: one header line ``N,dim,C,seed,spec_hash`` then one record
    per sample ``label,true_noise_level,x0,...,x{dim-1}``.

    Floats are written with shortest round-trip repr, so load/save is
    bit-exact.
    """
    h = spec_hash(ds.generator_spec) if ds.generator_spec else "unknown"
    lines = [f"{ds.n},{ds.input_dim},{ds.num_classes},{ds.seed},{h}"]
    for i in range(ds.n):
        feats = ",".join(repr(float(v)) for v in ds.x[i])
        lines.append(f"{int(ds.labels[i])},{repr(float(ds.noise_levels[i]))},{feats}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_identity_csv(path) -> SyntheticIdentityDataset:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"dataset not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    n, dim, c, _seed, _h = lines[0].split(",")
    n, dim, c = int(n), int(dim), int(c)
    labels = np.empty(n, dtype=np.int64)
    noise = np.empty(n)
    x = np.empty((n, dim))
    for i, line in enumerate(lines[1: n + 1]):
        parts = line.split(",")
        labels[i] = int(parts[0])
        noise[i] = float(parts[1])
        x[i] = [float(t) for t in parts[2: 2 + dim]]
    return SyntheticIdentityDataset(x=x, labels=labels, noise_levels=noise, num_classes=c)


def save_identity_bin(path, ds: SyntheticIdentityDataset) -> None:
    """Binary form, little-endian: magic ``DULIDS01``; header uint64 N,
    uint64 dim, uint64 C, int64 seed, uint32 hash length + ascii hash; then
    one record per sample (int64 label, float64 noise level, dim float64s).
    """
    h = (spec_hash(ds.generator_spec) if ds.generator_spec else "unknown").encode("ascii")
    rec = np.dtype([("label", "<i8"), ("noise", "<f8"), ("x", "<f8", (ds.input_dim,))])
    records = np.empty(ds.n, dtype=rec)
    records["label"] = ds.labels
    records["noise"] = ds.noise_levels
    records["x"] = ds.x
    with Path(path).open("wb") as f:
        f.write(IDENTITY_BIN_MAGIC)
        f.write(struct.pack("<QQQq", ds.n, ds.input_dim, ds.num_classes, ds.seed))
        f.write(struct.pack("<I", len(h)))
        f.write(h)
        f.write(records.tobytes())


def load_identity_bin(path) -> SyntheticIdentityDataset:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"dataset not found: {path}")
    raw = path.read_bytes()
    if raw[: len(IDENTITY_BIN_MAGIC)] != IDENTITY_BIN_MAGIC:
        raise ContractViolation(f"not an identity dataset file: {path}")
    off = len(IDENTITY_BIN_MAGIC)
    n, dim, c, _seed = struct.unpack_from("<QQQq", raw, off)
    off += struct.calcsize("<QQQq")
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4 + hlen
    rec = np.dtype([("label", "<i8"), ("noise", "<f8"), ("x", "<f8", (dim,))])
    records = np.frombuffer(raw, dtype=rec, count=n, offset=off)
    return SyntheticIdentityDataset(
        x=records["x"].copy(), labels=records["label"].copy(),
        noise_levels=records["noise"].copy(), num_classes=int(c),
    )


def load_identity(path) -> SyntheticIdentityDataset:
    """Load either format, sniffed by the binary magic."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"dataset not found: {path}")
    with path.open("rb") as f:
        head = f.read(len(IDENTITY_BIN_MAGIC))
    if head == IDENTITY_BIN_MAGIC:
        return load_identity_bin(path)
    return load_identity_csv(path)


def save_hetreg_csv(path, ds: HetRegDataset) -> None:
    """Header line ``n,seed,f,sigma,x_min,x_max`` then ``x,y`` records."""
    lines = [
        f"{ds.n},{ds.seed},{ds.f},{ds.sigma},{repr(ds.x_range[0])},{repr(ds.x_range[1])}"
    ]
    for xi, yi in zip(ds.x, ds.y):
        lines.append(f"{repr(float(xi))},{repr(float(yi))}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_hetreg_csv(path) -> HetRegDataset:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"dataset not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    # header fields: n, seed, f (kind:p,...), sigma (kind:p,...), x_min, x_max
    parts = lines[0].split(",")
    n = int(parts[0])
    seed = int(parts[1])
    # function specs contain commas; re-split on the kind prefixes
    f_spec, s_spec, lo, hi = _split_hetreg_header(",".join(parts[2:]))
    x = np.empty(n)
    y = np.empty(n)
    for i, line in enumerate(lines[1: n + 1]):
        a, b = line.split(",")
        x[i] = float(a)
        y[i] = float(b)
    return HetRegDataset(x=x, y=y, f=FuncSpec.parse(f_spec), sigma=FuncSpec.parse(s_spec),
                         x_range=(float(lo), float(hi)), seed=seed)


def _split_hetreg_header(rest: str):
    """Split ``f,sigma,x_min,x_max`` where the spec fields contain commas."""
    tokens = rest.split(",")
    # the last two tokens are the range; the specs split at the token that
    # starts a new kind prefix
    lo, hi = tokens[-2], tokens[-1]
    body = tokens[:-2]
    split_at = None
    for i in range(1, len(body)):
        if ":" in body[i]:
            split_at = i
            break
    if split_at is None:
        raise ContractViolation("malformed regression dataset header")
    return ",".join(body[:split_at]), ",".join(body[split_at:]), lo, hi
