"""Training objectives: segmentation cross-entropy, prototype contrastive loss
with a memory queue, temporal contrastive loss over flow-aligned regions, and
the image-level contrastive baseline.

All contrastive similarities are dot products of L2-normalized vectors scaled
by a temperature. Prototype anchors come from the current batch only; queue
entries enlarge the candidate set but never receive gradients.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import resample
from .autodiff import (
    Tensor,
    add,
    bilinear_sample,
    concat,
    l2_normalize,
    masked_logsumexp,
    matmul,
    mul,
    record_op,
    spatial_mean,
    sub,
    tensor_sum,
    transpose2d,
)

VARIANTS = ("none", "image", "prototype", "temporal")


@dataclass
class LossWeights:
    lam: float = 0.5
    tau: float = 0.07
    variant: str = "none"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")


@dataclass
class PrototypeBatch:
    """L2-normalized class prototypes with labels in [1, C+1]."""

    vectors: Tensor  # (B, D)
    labels: np.ndarray  # (B,) int

    def __len__(self) -> int:
        return int(self.vectors.shape[0]) if self.vectors.ndim == 2 else 0


class MemoryQueue:
    """Fixed-capacity FIFO of detached (vector, label) pairs."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError(f"queue capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self._entries: deque[tuple[np.ndarray, int]] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> list[tuple[np.ndarray, int]]:
        return list(self._entries)

    def vectors(self) -> np.ndarray:
        if not self._entries:
            return np.zeros((0, 0))
        return np.stack([v for v, _ in self._entries])

    def labels(self) -> np.ndarray:
        return np.array([l for _, l in self._entries], dtype=np.int64)


def queue_push(queue: MemoryQueue, batch: PrototypeBatch) -> MemoryQueue:
    """Append the batch's prototypes (detached), evicting oldest past capacity."""
    if len(batch) == 0:
        return queue
    if queue.capacity == 0:
        return queue
    for i in range(len(batch)):
        queue._entries.append((batch.vectors.data[i].copy(), int(batch.labels[i])))
    return queue


def seg_cross_entropy(
    probs: Tensor, target: np.ndarray, ignore: Optional[np.ndarray] = None
) -> Tensor:
    """Mean negative log-probability of the target class over non-ignored pixels.

    ``target`` holds labels in [1, C+1]; ``ignore`` marks pixels excluded from
    the loss. Returns a constant 0 when every pixel is ignored.
    """
    if probs.ndim != 4:
        raise ValueError(f"seg_cross_entropy: probs must be NxKxHxW, got {probs.shape}")
    n, k, h, w = probs.shape
    target = np.asarray(target)
    if target.shape != (n, h, w):
        raise ValueError(f"seg_cross_entropy: target shape {target.shape} != {(n, h, w)}")
    if ignore is None:
        active = np.ones((n, h, w), dtype=bool)
    else:
        ignore = np.asarray(ignore, dtype=bool)
        if ignore.shape != (n, h, w):
            raise ValueError(f"seg_cross_entropy: ignore shape {ignore.shape} != {(n, h, w)}")
        active = ~ignore
    labels = target[active]
    if labels.size and (labels.min() < 1 or labels.max() > k):
        bad = labels[(labels < 1) | (labels > k)][0]
        raise ValueError(f"seg_cross_entropy: target label {bad} outside [1, {k}]")
    count = int(active.sum())
    if count == 0:
        return Tensor(np.zeros((), dtype=probs.dtype))
    ni, yi, xi = np.nonzero(active)
    ki = target[ni, yi, xi] - 1
    tiny = np.finfo(probs.dtype).tiny
    p_sel = np.maximum(probs.data[ni, ki, yi, xi], tiny)
    out = Tensor(np.asarray(-np.log(p_sel).sum() / count, dtype=probs.dtype))

    def bwd(g):
        if probs.requires_grad:
            dp = np.zeros_like(probs.data)
            np.add.at(dp, (ni, ki, yi, xi), -g / (count * p_sel))
            probs.accumulate_grad(dp)

    return record_op(out, [probs], bwd)


def extract_prototypes(z: Tensor, mask: np.ndarray) -> PrototypeBatch:
    """Masked average pooling of z over each (image, class) region, normalized.

    ``mask`` must already be at z's spatial resolution; entries of 0 are
    treated as ignore and produce no prototype. Classes absent from an image
    are skipped. Row order: images in batch order, class ids ascending.
    """
    if z.ndim != 4:
        raise ValueError(f"extract_prototypes: z must be NxDxHxW, got {z.shape}")
    n, d, h, w = z.shape
    mask = np.asarray(mask)
    if mask.shape != (n, h, w):
        raise ValueError(f"extract_prototypes: mask shape {mask.shape} != {(n, h, w)}")
    rows = []
    labels = []
    index: list[tuple[int, np.ndarray, int]] = []
    for i in range(n):
        for cls in np.unique(mask[i]):
            if cls == 0:
                continue
            sel = mask[i] == cls
            cnt = int(sel.sum())
            rows.append(z.data[i][:, sel].mean(axis=1))
            labels.append(int(cls))
            index.append((i, sel, cnt))
    if not rows:
        return PrototypeBatch(Tensor(np.zeros((0, d), dtype=z.dtype)), np.zeros(0, dtype=np.int64))
    raw = Tensor(np.stack(rows).astype(z.dtype))

    def bwd(g):
        if z.requires_grad:
            dz = np.zeros_like(z.data)
            for row, (i, sel, cnt) in enumerate(index):
                dz[i][:, sel] += (g[row] / cnt)[:, None]
            z.accumulate_grad(dz)

    raw = record_op(raw, [z], bwd)
    return PrototypeBatch(l2_normalize(raw, axis=1), np.array(labels, dtype=np.int64))


def prototype_contrastive_loss(batch: PrototypeBatch, queue: MemoryQueue, tau: float) -> Tensor:
    """Supervised contrastive loss over current-batch anchors.

    Candidates are the current batch plus all queue entries, minus the anchor
    itself; positives are candidates sharing the anchor's label. Anchors with
    no positive are skipped; the loss sums the per-anchor means of
    -log softmax(similarity / tau) over positives.
    """
    if tau <= 0:
        raise ValueError(f"prototype_contrastive_loss: tau must be positive, got {tau}")
    b = len(batch)
    if b == 0:
        raise ValueError("prototype_contrastive_loss: empty prototype batch")
    if len(queue):
        qv = queue.vectors().astype(batch.vectors.data.dtype)
        cands = concat([batch.vectors, Tensor(qv)], axis=0)
        all_labels = np.concatenate([batch.labels, queue.labels()])
    else:
        cands = batch.vectors
        all_labels = batch.labels
    total = cands.shape[0]
    sims = mul(matmul(batch.vectors, transpose2d(cands)), 1.0 / tau)

    cand_mask = np.ones((b, total), dtype=bool)
    cand_mask[np.arange(b), np.arange(b)] = False  # anchor never its own candidate
    pos_mask = (all_labels[None, :] == batch.labels[:, None]) & cand_mask
    pos_counts = pos_mask.sum(axis=1)
    contributing = pos_counts > 0
    if not contributing.any():
        return Tensor(np.zeros((), dtype=batch.vectors.dtype))

    # Skipped rows keep a harmless all-true mask; their weight is zero below.
    lse_mask = np.where(contributing[:, None], cand_mask, True)
    lse = masked_logsumexp(sims, lse_mask)
    row_weight = contributing.astype(batch.vectors.data.dtype)
    pos_weight = np.zeros((b, total), dtype=batch.vectors.data.dtype)
    pos_weight[contributing] = (
        pos_mask[contributing] / pos_counts[contributing][:, None]
    )
    loss_lse = tensor_sum(mul(lse, Tensor(row_weight)))
    loss_pos = tensor_sum(mul(sims, Tensor(pos_weight)))
    return sub(loss_lse, loss_pos)


def warp_features(f_prev: Tensor, flow: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Backward-warp features from the previous frame to the current one.

    flow[n, :, y, x] is the displacement from (x, y) in the current frame to
    the matching location in the previous frame; the output at (x, y) samples
    f_prev at (x, y) + flow. Returns the warped features and an NxHxW bool
    validity mask (False where sampling left the frame).
    """
    if f_prev.ndim != 4:
        raise ValueError(f"warp_features: features must be NxDxHxW, got {f_prev.shape}")
    flow = flow.data if isinstance(flow, Tensor) else np.asarray(flow)
    n, _, h, w = f_prev.shape
    if flow.shape != (n, 2, h, w):
        raise ValueError(f"warp_features: flow shape {flow.shape} != {(n, 2, h, w)}")
    gx, gy = np.meshgrid(np.arange(w, dtype=f_prev.dtype), np.arange(h, dtype=f_prev.dtype))
    coords = np.empty((n, 2, h, w), dtype=f_prev.dtype)
    coords[:, 0] = gx[None] + flow[:, 0]
    coords[:, 1] = gy[None] + flow[:, 1]
    return bilinear_sample(f_prev, coords)


@dataclass
class RegionGrid:
    """L2-normalized region vectors with per-region validity."""

    regions: Tensor  # (N, D, Hr, Wr)
    validity: np.ndarray  # (N, 1, Hr, Wr) bool


def region_pool(f: Tensor, validity: Optional[np.ndarray], ap_factor: float) -> RegionGrid:
    """Average-pool dense features into a grid of max(1, floor(ap_factor * dim))
    regions per axis; windows are non-overlapping (kernel = stride = dim //
    out_dim, trailing remainder dropped). A region is valid when at least half
    of its window pixels are valid."""
    if f.ndim != 4:
        raise ValueError(f"region_pool: features must be NxDxHxW, got {f.shape}")
    if not 0 < ap_factor <= 1:
        raise ValueError(f"region_pool: ap_factor must be in (0, 1], got {ap_factor}")
    n, d, h, w = f.shape
    out_h = max(1, int(np.floor(ap_factor * h)))
    out_w = max(1, int(np.floor(ap_factor * w)))
    kh = h // out_h
    kw = w // out_w
    ch, cw = out_h * kh, out_w * kw
    inv = 1.0 / (kh * kw)
    pooled_data = (
        f.data[:, :, :ch, :cw].reshape(n, d, out_h, kh, out_w, kw).mean(axis=(3, 5))
    )
    pooled = Tensor(pooled_data)

    def bwd(g):
        if f.requires_grad:
            df = np.zeros_like(f.data)
            expanded = np.repeat(np.repeat(g * inv, kh, axis=2), kw, axis=3)
            df[:, :, :ch, :cw] = expanded
            f.accumulate_grad(df)

    pooled = record_op(pooled, [f], bwd)

    if validity is None:
        valid_grid = np.ones((n, 1, out_h, out_w), dtype=bool)
    else:
        validity = np.asarray(validity, dtype=bool)
        if validity.ndim == 4 and validity.shape[1] == 1:
            validity = validity[:, 0]
        if validity.shape != (n, h, w):
            raise ValueError(f"region_pool: validity shape {validity.shape} != {(n, h, w)}")
        frac = (
            validity[:, :ch, :cw]
            .reshape(n, out_h, kh, out_w, kw)
            .mean(axis=(2, 4))
        )
        valid_grid = (frac >= 0.5)[:, None]
    return RegionGrid(regions=l2_normalize(pooled, axis=1), validity=valid_grid)


def temporal_contrastive_loss(grid_t: RegionGrid, grid_prev_warped: RegionGrid, tau: float) -> Tensor:
    """InfoNCE over aligned region pairs: for each jointly valid grid cell the
    positive is the co-located warped region; negatives are the other jointly
    valid warped regions. Samples with fewer than two valid regions add 0."""
    if tau <= 0:
        raise ValueError(f"temporal_contrastive_loss: tau must be positive, got {tau}")
    if grid_t.regions.shape != grid_prev_warped.regions.shape:
        raise ValueError(
            f"temporal_contrastive_loss: grid shapes differ, {grid_t.regions.shape}"
            f" vs {grid_prev_warped.regions.shape}"
        )
    n, d, hr, wr = grid_t.regions.shape
    dtype = grid_t.regions.dtype
    total: Optional[Tensor] = None
    for i in range(n):
        joint = (grid_t.validity[i, 0] & grid_prev_warped.validity[i, 0]).reshape(-1)
        r = int(joint.sum())
        if r < 2:
            continue
        anchors = _gather_regions(grid_t.regions, i, joint)
        cands = _gather_regions(grid_prev_warped.regions, i, joint)
        sims = mul(matmul(anchors, transpose2d(cands)), 1.0 / tau)
        lse = masked_logsumexp(sims, np.ones((r, r), dtype=bool))
        aligned = tensor_sum(mul(sims, Tensor(np.eye(r, dtype=dtype))))
        term = sub(tensor_sum(lse), aligned)
        total = term if total is None else add(total, term)
    if total is None:
        return Tensor(np.zeros((), dtype=dtype))
    return total


def _gather_regions(regions: Tensor, sample: int, flat_mask: np.ndarray) -> Tensor:
    """Select one sample's valid region vectors as an (R, D) matrix."""
    n, d, h, w = regions.shape
    flat = regions.data[sample].reshape(d, h * w)
    out = Tensor(flat[:, flat_mask].T.copy())

    def bwd(g):
        if regions.requires_grad:
            dr = np.zeros_like(regions.data)
            dflat = dr[sample].reshape(d, h * w)
            dflat[:, flat_mask] = g.T
            regions.accumulate_grad(dr)

    return record_op(out, [regions], bwd)


def image_contrastive_loss(z_view1: Tensor, z_view2: Tensor, tau: float) -> Tensor:
    """NT-Xent over globally pooled, normalized embeddings of two paired views."""
    if tau <= 0:
        raise ValueError(f"image_contrastive_loss: tau must be positive, got {tau}")
    if z_view1.shape != z_view2.shape:
        raise ValueError(
            f"image_contrastive_loss: view shapes differ, {z_view1.shape} vs {z_view2.shape}"
        )
    n = z_view1.shape[0]
    if n < 2:
        raise ValueError(f"image_contrastive_loss: need batch of >= 2 pairs, got {n}")
    v1 = l2_normalize(spatial_mean(z_view1), axis=1)
    v2 = l2_normalize(spatial_mean(z_view2), axis=1)
    allv = concat([v1, v2], axis=0)
    sims = mul(matmul(allv, transpose2d(allv)), 1.0 / tau)
    m = 2 * n
    cand_mask = ~np.eye(m, dtype=bool)
    pair = np.concatenate([np.arange(n) + n, np.arange(n)])
    pos_weight = np.zeros((m, m), dtype=allv.dtype)
    pos_weight[np.arange(m), pair] = 1.0
    lse = tensor_sum(masked_logsumexp(sims, cand_mask))
    pos = tensor_sum(mul(sims, Tensor(pos_weight)))
    return mul(sub(lse, pos), 1.0 / m)


def total_loss(l_seg: Tensor, l_aux: Optional[Tensor], weights: LossWeights) -> Tensor:
    """l_seg + lambda * l_aux; the auxiliary term is dropped for variant none."""
    if weights.variant == "none" or l_aux is None:
        return l_seg
    return add(l_seg, mul(l_aux, weights.lam))


def downsample_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor downsample of integer masks (labels never interpolate)."""
    return resample.resize_nearest(mask, out_h, out_w)
