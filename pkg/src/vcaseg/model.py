"""Two-stream encoder, segmentation/contrastive heads, and the open-set
distance classifier.

The encoder runs one conv stack over appearance and one over depth (stride 2
in the first two blocks, so features sit at 1/4 resolution), concatenates the
streams, and fuses them with a 1x1 conv. Each head is four 3x3 conv blocks
plus a 1x1 projection. Classification happens in embedding space: squared
distance to per-class signatures (mu_k, sigma_k) forms C logits, a single
trainable constant forms the unknown logit, and a softmax over C+1 gives
per-pixel probabilities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import container, resample
from .autodiff import Tensor, concat, conv2d, group_norm, record_op, relu, softmax

UNKNOWN_OFFSET = 1  # unknown label id is C + 1


@dataclass(frozen=True)
class ModelDims:
    stream_width: int = 16
    d_h: int = 32
    d_m: int = 16
    d_z: int = 16
    head_width: int = 16
    groups: int = 4


@dataclass
class ConvBlockParams:
    weight: Tensor
    bias: Tensor
    gn_gamma: Tensor
    gn_beta: Tensor


@dataclass
class EncoderParams:
    appearance: list[ConvBlockParams]
    depth: list[ConvBlockParams]
    fuse_weight: Tensor
    fuse_bias: Tensor


@dataclass
class HeadParams:
    blocks: list[ConvBlockParams]
    proj_weight: Tensor
    proj_bias: Tensor


@dataclass
class ClassStats:
    """Per-class signatures: mu (C x D_m), log sigma (C), unknown constant."""

    mu: Tensor
    log_sigma: Tensor
    gamma: Tensor

    @property
    def num_classes(self) -> int:
        return self.mu.shape[0]


@dataclass
class ModelParams:
    dims: ModelDims
    class_names: list[str]
    encoder: EncoderParams
    seg_head: HeadParams
    contrastive_head: HeadParams
    stats: ClassStats
    dtype: np.dtype = field(default=np.dtype(np.float64))

    @property
    def num_known(self) -> int:
        return len(self.class_names)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}

        def add_blocks(prefix: str, blocks: list[ConvBlockParams]):
            for i, blk in enumerate(blocks):
                out[f"{prefix}.{i}.weight"] = blk.weight
                out[f"{prefix}.{i}.bias"] = blk.bias
                out[f"{prefix}.{i}.gn_gamma"] = blk.gn_gamma
                out[f"{prefix}.{i}.gn_beta"] = blk.gn_beta

        add_blocks("enc.app", self.encoder.appearance)
        add_blocks("enc.dep", self.encoder.depth)
        out["enc.fuse.weight"] = self.encoder.fuse_weight
        out["enc.fuse.bias"] = self.encoder.fuse_bias
        for name, head in (("head_seg", self.seg_head), ("head_ctr", self.contrastive_head)):
            add_blocks(name, head.blocks)
            out[f"{name}.proj.weight"] = head.proj_weight
            out[f"{name}.proj.bias"] = head.proj_bias
        out["stats.mu"] = self.stats.mu
        out["stats.log_sigma"] = self.stats.log_sigma
        out["stats.gamma"] = self.stats.gamma
        return out


def _conv_block(rng: np.random.Generator, c_in: int, c_out: int, dtype) -> ConvBlockParams:
    fan_in = c_in * 9
    std = np.sqrt(2.0 / fan_in)
    return ConvBlockParams(
        weight=Tensor(rng.normal(0.0, std, (c_out, c_in, 3, 3)).astype(dtype), requires_grad=True),
        bias=Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True),
        gn_gamma=Tensor(np.ones(c_out, dtype=dtype), requires_grad=True),
        gn_beta=Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True),
    )


def _proj(rng: np.random.Generator, c_in: int, c_out: int, dtype) -> tuple[Tensor, Tensor]:
    std = np.sqrt(2.0 / c_in)
    w = Tensor(rng.normal(0.0, std, (c_out, c_in, 1, 1)).astype(dtype), requires_grad=True)
    b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
    return w, b


def init_head(rng: np.random.Generator, c_in: int, width: int, c_out: int, dtype=np.float64) -> HeadParams:
    blocks = [_conv_block(rng, c_in, width, dtype)]
    blocks += [_conv_block(rng, width, width, dtype) for _ in range(3)]
    pw, pb = _proj(rng, width, c_out, dtype)
    return HeadParams(blocks=blocks, proj_weight=pw, proj_bias=pb)


def init_model(
    dims: ModelDims,
    class_names: list[str],
    seed: int,
    dtype=np.float64,
) -> ModelParams:
    if not class_names:
        raise ValueError("init_model: need at least one known class")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))
    s = dims.stream_width
    enc = EncoderParams(
        appearance=[
            _conv_block(rng, 3, s, dtype),
            _conv_block(rng, s, s, dtype),
            _conv_block(rng, s, s, dtype),
            _conv_block(rng, s, s, dtype),
        ],
        depth=[
            _conv_block(rng, 1, s, dtype),
            _conv_block(rng, s, s, dtype),
            _conv_block(rng, s, s, dtype),
            _conv_block(rng, s, s, dtype),
        ],
        fuse_weight=_proj(rng, 2 * s, dims.d_h, dtype)[0],
        fuse_bias=Tensor(np.zeros(dims.d_h, dtype=dtype), requires_grad=True),
    )
    seg = init_head(rng, dims.d_h, dims.head_width, dims.d_m, dtype)
    ctr = init_head(rng, dims.d_h, dims.head_width, dims.d_z, dtype)
    c = len(class_names)
    stats = ClassStats(
        mu=Tensor(rng.normal(0.0, 0.1, (c, dims.d_m)).astype(dtype), requires_grad=True),
        log_sigma=Tensor(np.zeros(c, dtype=dtype), requires_grad=True),
        gamma=Tensor(np.zeros((), dtype=dtype), requires_grad=True),
    )
    return ModelParams(
        dims=dims,
        class_names=list(class_names),
        encoder=enc,
        seg_head=seg,
        contrastive_head=ctr,
        stats=stats,
        dtype=np.dtype(dtype),
    )


def _run_block(x: Tensor, blk: ConvBlockParams, groups: int, stride: int) -> Tensor:
    x = conv2d(x, blk.weight, blk.bias, stride=stride, padding=1)
    x = group_norm(x, groups, blk.gn_gamma, blk.gn_beta)
    return relu(x)


def _run_stream(x: Tensor, blocks: list[ConvBlockParams], groups: int) -> Tensor:
    strides = (2, 2, 1, 1)
    for blk, s in zip(blocks, strides):
        x = _run_block(x, blk, groups, s)
    return x


def encode(params: ModelParams, appearance: Tensor, depth: Tensor) -> Tensor:
    """Fuse appearance (Nx3xHxW) and depth (Nx1xHxW) into features at H/4."""
    if appearance.ndim != 4 or appearance.shape[1] != 3:
        raise ValueError(f"encode: appearance must be Nx3xHxW, got {appearance.shape}")
    if depth.ndim != 4 or depth.shape[1] != 1:
        raise ValueError(f"encode: depth must be Nx1xHxW, got {depth.shape}")
    if appearance.shape[0] != depth.shape[0] or appearance.shape[2:] != depth.shape[2:]:
        raise ValueError(
            f"encode: appearance {appearance.shape} and depth {depth.shape} disagree"
        )
    h, w = appearance.shape[2], appearance.shape[3]
    if h % 4 or w % 4:
        raise ValueError(f"encode: spatial dims {h}x{w} must be divisible by 4")
    g = params.dims.groups
    fa = _run_stream(appearance, params.encoder.appearance, g)
    fd = _run_stream(depth, params.encoder.depth, g)
    fused = concat([fa, fd], axis=1)
    return conv2d(fused, params.encoder.fuse_weight, params.encoder.fuse_bias)


def _run_head(h: Tensor, head: HeadParams, groups: int) -> Tensor:
    if h.shape[1] != head.blocks[0].weight.shape[1]:
        raise ValueError(
            f"head: input has {h.shape[1]} channels, head expects {head.blocks[0].weight.shape[1]}"
        )
    x = h
    for blk in head.blocks:
        x = _run_block(x, blk, groups, stride=1)
    return conv2d(x, head.proj_weight, head.proj_bias)


def seg_head(params: ModelParams, h: Tensor) -> Tensor:
    return _run_head(h, params.seg_head, params.dims.groups)


def contrastive_head(params: ModelParams, h: Tensor) -> Tensor:
    return _run_head(h, params.contrastive_head, params.dims.groups)


def class_distances(m: Tensor, stats: ClassStats) -> Tensor:
    """Per-pixel logits: -||m - mu_k||^2 / (2 sigma_k^2) for k <= C, then the
    global unknown constant as channel C+1."""
    if m.ndim != 4:
        raise ValueError(f"class_distances: embeddings must be NxDxHxW, got {m.shape}")
    c, d = stats.mu.shape
    if m.shape[1] != d:
        raise ValueError(
            f"class_distances: embedding width {m.shape[1]} != signature width {d}"
        )
    n, _, hh, ww = m.shape
    sigma2 = np.exp(2.0 * stats.log_sigma.data)  # (C,)
    cross = np.einsum("ndhw,kd->nkhw", m.data, stats.mu.data, optimize=True)
    m_sq = (m.data ** 2).sum(axis=1)  # (N,H,W)
    mu_sq = (stats.mu.data ** 2).sum(axis=1)  # (C,)
    ss = m_sq[:, None] - 2.0 * cross + mu_sq[None, :, None, None]
    d_known = -ss / (2.0 * sigma2)[None, :, None, None]
    out_data = np.empty((n, c + 1, hh, ww), dtype=m.dtype)
    out_data[:, :c] = d_known
    out_data[:, c] = stats.gamma.data
    out = Tensor(out_data)

    def bwd(g):
        gk = g[:, :c]
        a = gk / sigma2[None, :, None, None]
        if m.requires_grad:
            dm = -m.data * a.sum(axis=1, keepdims=True) + np.einsum(
                "nkhw,kd->ndhw", a, stats.mu.data, optimize=True
            )
            m.accumulate_grad(dm.astype(m.dtype))
        if stats.mu.requires_grad:
            dmu = np.einsum("nkhw,ndhw->kd", a, m.data, optimize=True)
            dmu -= stats.mu.data * a.sum(axis=(0, 2, 3))[:, None]
            stats.mu.accumulate_grad(dmu.astype(stats.mu.dtype))
        if stats.log_sigma.requires_grad:
            # d(logit)/d(log sigma) = -2 * logit
            stats.log_sigma.accumulate_grad(
                (-2.0 * (gk * d_known).sum(axis=(0, 2, 3))).astype(stats.log_sigma.dtype)
            )
        if stats.gamma.requires_grad:
            stats.gamma.accumulate_grad(np.asarray(g[:, c].sum(), dtype=stats.gamma.dtype))

    return record_op(out, [m, stats.mu, stats.log_sigma, stats.gamma], bwd)


def class_probabilities(distances: Tensor) -> Tensor:
    return softmax(distances, axis=1)


def predict_labels(probs: Tensor | np.ndarray) -> np.ndarray:
    """Argmax channel per pixel as labels 1..C+1; ties go to the lowest id."""
    data = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return (np.argmax(data, axis=1) + 1).astype(np.int64)


def upsample_labels_nearest(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor upsample of an N x h x w integer label map."""
    return resample.resize_nearest(labels, out_h, out_w)


CHECKPOINT_MANIFEST = "manifest.json"


def save_checkpoint(path: str | Path, params: ModelParams) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    named = params.named_parameters()
    files = {}
    for name, tensor in named.items():
        fname = name.replace(".", "_") + ".cast"
        container.write_tensor(path / fname, tensor.data)
        files[name] = fname
    manifest = {
        "format": 1,
        "params": files,
        "meta": {
            "classes": params.class_names,
            "num_known": params.num_known,
            "stream_width": params.dims.stream_width,
            "d_h": params.dims.d_h,
            "d_m": params.dims.d_m,
            "d_z": params.dims.d_z,
            "head_width": params.dims.head_width,
            "groups": params.dims.groups,
            "dtype": params.dtype.name,
        },
    }
    with open(path / CHECKPOINT_MANIFEST, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path: str | Path) -> ModelParams:
    path = Path(path)
    with open(path / CHECKPOINT_MANIFEST, encoding="utf-8") as f:
        manifest = json.load(f)
    meta = manifest["meta"]
    dims = ModelDims(
        stream_width=meta["stream_width"],
        d_h=meta["d_h"],
        d_m=meta["d_m"],
        d_z=meta["d_z"],
        head_width=meta["head_width"],
        groups=meta["groups"],
    )
    dtype = np.dtype(meta["dtype"])
    params = init_model(dims, meta["classes"], seed=0, dtype=dtype)
    named = params.named_parameters()
    if set(named) != set(manifest["params"]):
        missing = set(named) ^ set(manifest["params"])
        raise ValueError(f"checkpoint parameter set mismatch: {sorted(missing)}")
    for name, fname in manifest["params"].items():
        arr = container.read_tensor(path / fname).astype(dtype)
        if arr.shape != named[name].shape:
            raise ValueError(
                f"checkpoint param {name}: shape {arr.shape} != expected {named[name].shape}"
            )
        named[name].data = arr
    return params
