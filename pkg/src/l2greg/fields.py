"""Coordinate-MLP fields: reconstruction field and per-frame warp field.

The reconstruction field maps (encoded) coordinates to color or to
color+density. The warp field maps a pixel coordinate plus a learned
frame embedding to Lie-algebra coordinates; its final layer starts at
zero so every initial per-pixel transform is exactly the identity.

Positional encoding uses sinusoids at frequencies 2^k * pi with a
coarse-to-fine window: band k is faded in as the progress value alpha
crosses k, via a raised-cosine ramp. alpha = 0 passes only the raw
coordinates, alpha = L is the full encoding.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field as dc_field

import numpy as np

from l2greg import autodiff as ad
from l2greg import lie
from l2greg.autodiff import Tensor, constant

__all__ = [
    "PositionalEncoding",
    "NeuralField",
    "WarpField",
    "frequency_weights",
    "encode",
    "eval_field",
    "warp_algebra",
    "eval_warp",
    "make_image_field",
    "make_volume_field",
    "make_warp_field",
    "parameters",
    "save_arrays",
    "load_arrays",
]


@dataclass
class PositionalEncoding:
    """Sinusoidal lift configuration with annealing progress alpha in [0, L]."""

    num_frequencies: int
    alpha: float
    include_input: bool = True

    def encoded_dim(self, in_dim: int) -> int:
        base = in_dim if self.include_input else 0
        return base + 2 * self.num_frequencies * in_dim


def frequency_weights(num_frequencies: int, alpha: float) -> np.ndarray:
    """Per-band window w_k: 0 before alpha reaches k, cosine ramp over one unit, then 1."""
    alpha = float(np.clip(alpha, 0.0, num_frequencies))
    k = np.arange(num_frequencies)
    ramp = np.clip(alpha - k, 0.0, 1.0)
    return (1.0 - np.cos(ramp * np.pi)) / 2.0


def encode(x: Tensor, pe: PositionalEncoding) -> Tensor:
    """[x?; w_k sin(2^k pi x); w_k cos(2^k pi x)] for k = 0..L-1, band-blocked."""
    x = constant(x)
    L = pe.num_frequencies
    if L == 0:
        return x
    batch = x.shape[:-1]
    d = x.shape[-1]
    freqs = (2.0 ** np.arange(L)) * np.pi
    w = frequency_weights(L, pe.alpha)

    args = x.reshape(batch + (1, d)) * Tensor(freqs[:, None])
    weights = Tensor(w[:, None])
    sines = ad.sin(args) * weights
    cosines = ad.cos(args) * weights
    bands = ad.stack([sines, cosines], axis=-2).reshape(batch + (2 * L * d,))
    if pe.include_input:
        return ad.concat([x, bands], axis=-1)
    return bands


# ---------------------------------------------------------------------------
# MLPs
# ---------------------------------------------------------------------------

def _init_layers(rng: np.random.Generator, sizes: list[int],
                 zero_last: bool = False) -> list[tuple[Tensor, Tensor]]:
    """Uniform fan-in init; optionally zero the final layer."""
    layers = []
    for i in range(len(sizes) - 1):
        n_in, n_out = sizes[i], sizes[i + 1]
        if zero_last and i == len(sizes) - 2:
            w = np.zeros((n_in, n_out))
            b = np.zeros(n_out)
        else:
            bound = 1.0 / np.sqrt(n_in)
            w = rng.uniform(-bound, bound, (n_in, n_out))
            b = rng.uniform(-bound, bound, n_out)
        layers.append((Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)))
    return layers


def _mlp_forward(layers, h: Tensor) -> Tensor:
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = h @ w + b
        if i < last:
            h = ad.relu(h)
    return h


@dataclass
class NeuralField:
    """MLP over encoded coordinates; output activation is 'sigmoid' or 'none'."""

    layers: list
    encoding: PositionalEncoding
    in_dim: int
    out_dim: int
    output_activation: str = "none"


def make_image_field(seed: int, hidden: int = 256, depth: int = 8,
                     num_frequencies: int = 8) -> NeuralField:
    """Color field over 2D coordinates, sigmoid-bounded to [0,1]^3."""
    pe = PositionalEncoding(num_frequencies, alpha=float(num_frequencies))
    rng = np.random.default_rng(seed)
    sizes = [pe.encoded_dim(2)] + [hidden] * depth + [3]
    return NeuralField(_init_layers(rng, sizes), pe, 2, 3, "sigmoid")


def make_volume_field(seed: int, hidden: int = 128, depth: int = 6,
                      num_frequencies: int = 6) -> NeuralField:
    """Raw color+density field over 3D points; activations applied by rendering."""
    pe = PositionalEncoding(num_frequencies, alpha=float(num_frequencies))
    rng = np.random.default_rng(seed)
    sizes = [pe.encoded_dim(3)] + [hidden] * depth + [4]
    return NeuralField(_init_layers(rng, sizes), pe, 3, 4, "none")


def eval_field(field: NeuralField, x: Tensor) -> Tensor:
    x = constant(x)
    if x.shape[-1] != field.in_dim:
        raise ValueError(
            f"field expects {field.in_dim}-D coordinates, got shape {x.shape}")
    out = _mlp_forward(field.layers, encode(x, field.encoding))
    if field.output_activation == "sigmoid":
        out = ad.sigmoid(out)
    return out


@dataclass
class WarpField:
    """Pixel-coordinate MLP with per-frame embeddings emitting algebra coords.

    Input coordinates are shifted/scaled to roughly [-1, 1] per axis before
    they are concatenated with the frame embedding; no positional encoding
    is applied so the emitted warp stays low-frequency.
    """

    layers: list
    embeddings: Tensor
    out_kind: str
    input_offset: np.ndarray = dc_field(default_factory=lambda: np.zeros(2))
    input_scale: np.ndarray = dc_field(default_factory=lambda: np.ones(2))

    @property
    def num_frames(self) -> int:
        return self.embeddings.shape[0]


def make_warp_field(num_frames: int, out_kind: str, seed: int,
                    hidden: int = 256, depth: int = 6, embed_dim: int = 128,
                    input_offset=(0.0, 0.0), input_scale=(1.0, 1.0)) -> WarpField:
    if out_kind not in lie.ALGEBRA_DIM:
        raise ValueError(f"unknown algebra kind '{out_kind}'")
    rng = np.random.default_rng(seed)
    sizes = [2 + embed_dim] + [hidden] * depth + [lie.ALGEBRA_DIM[out_kind]]
    layers = _init_layers(rng, sizes, zero_last=True)
    embeddings = Tensor(rng.normal(0.0, 0.1, (num_frames, embed_dim)),
                        requires_grad=True)
    return WarpField(layers, embeddings, out_kind,
                     np.asarray(input_offset, dtype=np.float64),
                     np.asarray(input_scale, dtype=np.float64))


def warp_algebra(warp: WarpField, x: Tensor, frames,
                 anchor_frame: int | None = None) -> Tensor:
    """Algebra coordinates per pixel; the anchor frame's rows are forced to 0."""
    x = constant(x)
    frames = np.asarray(frames)
    if frames.ndim == 0:
        frames = np.full(x.shape[:-1], int(frames), dtype=np.intp)
    if np.any(frames < 0) or np.any(frames >= warp.num_frames):
        raise IndexError(
            f"frame index out of range for {warp.num_frames} frames")
    normalized = (x - Tensor(warp.input_offset)) * Tensor(1.0 / warp.input_scale)
    emb = warp.embeddings[frames]
    coords = _mlp_forward(warp.layers, ad.concat([normalized, emb], axis=-1))
    if anchor_frame is not None:
        mask = (frames != anchor_frame).astype(np.float64)[..., None]
        coords = coords * Tensor(mask)
    return coords


def eval_warp(warp: WarpField, x: Tensor, frames,
              anchor_frame: int | None = None) -> lie.LieTransform:
    """Per-pixel transform: exp of the warp MLP output (one per input row)."""
    coords = warp_algebra(warp, x, frames, anchor_frame=anchor_frame)
    return lie.exp(lie.AlgebraCoords(warp.out_kind, coords))


def parameters(obj) -> list[Tensor]:
    """Trainable tensors of a NeuralField or WarpField, in a fixed order."""
    params = []
    for w, b in obj.layers:
        params.extend([w, b])
    if isinstance(obj, WarpField):
        params.append(obj.embeddings)
    return params


# ---------------------------------------------------------------------------
# array (de)serialization: bit-exact roundtrip via .npz
# ---------------------------------------------------------------------------

def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named float64 arrays plus a JSON metadata block to `path`.

    The container is a plain .npz (zip of .npy members) written with fixed
    zip timestamps, so identical state produces bit-identical files.
    """
    payload = dict(arrays)
    payload["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for key in sorted(payload):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(payload[key]))
            info = zipfile.ZipInfo(key + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    return arrays, meta


def field_arrays(prefix: str, obj) -> dict[str, np.ndarray]:
    out = {}
    for i, (w, b) in enumerate(obj.layers):
        out[f"{prefix}.w{i}"] = w.numpy()
        out[f"{prefix}.b{i}"] = b.numpy()
    if isinstance(obj, WarpField):
        out[f"{prefix}.embeddings"] = obj.embeddings.numpy()
        out[f"{prefix}.input_offset"] = obj.input_offset
        out[f"{prefix}.input_scale"] = obj.input_scale
    return out


def field_meta(obj) -> dict:
    if isinstance(obj, WarpField):
        return {"type": "warp", "out_kind": obj.out_kind,
                "num_layers": len(obj.layers)}
    return {
        "type": "field",
        "num_layers": len(obj.layers),
        "in_dim": obj.in_dim,
        "out_dim": obj.out_dim,
        "output_activation": obj.output_activation,
        "encoding": {
            "num_frequencies": obj.encoding.num_frequencies,
            "alpha": obj.encoding.alpha,
            "include_input": obj.encoding.include_input,
        },
    }


def restore_field(prefix: str, arrays: dict, meta: dict) -> NeuralField:
    layers = [
        (Tensor(arrays[f"{prefix}.w{i}"], requires_grad=True),
         Tensor(arrays[f"{prefix}.b{i}"], requires_grad=True))
        for i in range(meta["num_layers"])
    ]
    enc = meta["encoding"]
    pe = PositionalEncoding(enc["num_frequencies"], enc["alpha"], enc["include_input"])
    return NeuralField(layers, pe, meta["in_dim"], meta["out_dim"],
                       meta["output_activation"])


def restore_warp(prefix: str, arrays: dict, meta: dict) -> WarpField:
    layers = [
        (Tensor(arrays[f"{prefix}.w{i}"], requires_grad=True),
         Tensor(arrays[f"{prefix}.b{i}"], requires_grad=True))
        for i in range(meta["num_layers"])
    ]
    return WarpField(
        layers,
        Tensor(arrays[f"{prefix}.embeddings"], requires_grad=True),
        meta["out_kind"],
        arrays[f"{prefix}.input_offset"],
        arrays[f"{prefix}.input_scale"],
    )
