"""Tiny masked autoencoder over Mel patches, with Top-K anomaly scoring.

The encoder sees only the visible patches (plus a class token); the decoder
fills masked slots with a shared learnable token and reconstructs every
patch. Anomalies are scored as the mean reconstruction error of the worst
K% patches against per-patch-normalized targets.

Everything is float64 numpy with a hand-written backward pass, so training
is bit-deterministic per seed and gradients can be checked against central
finite differences. The optimizer is Adam (recorded in run metadata by the
CLI). Model files use the "SKYMAE1" container: magic, config block, then
parameter tensors in declaration order as little-endian float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.special import erf

from .errors import (CheckpointError, DivergedLoss, EmptyTrainingSet,
                     ShapeMismatch)
from .features import (MaskPartition, MelConfig, PatchGrid, mel_spectrogram,
                       normalize_patches, patchify, sample_mask, standardize)
from .scene import Waveform

_LN_EPS = 1e-6
_MAGIC = b"SKYMAE1"


@dataclass(frozen=True)
class MaeConfig:
    """Architecture and scoring hyperparameters (desk-scale defaults)."""

    patch_size: int = 8
    n_tokens: int = 128
    embed_dim: int = 64
    enc_depth: int = 2
    enc_heads: int = 4
    dec_dim: int = 32
    dec_depth: int = 1
    dec_heads: int = 2
    mlp_ratio: int = 4
    mask_ratio: float = 0.10
    top_k: float = 0.10

    def __post_init__(self):
        if self.embed_dim % self.enc_heads or self.dec_dim % self.dec_heads:
            raise ValueError("width must be divisible by head count")
        if not 0.0 < self.top_k <= 1.0:
            raise ValueError("top_k must be in (0, 1]")

    @property
    def patch_dim(self) -> int:
        return self.patch_size ** 2


@dataclass
class BlockParams:
    """One pre-norm transformer block: attention + 2-layer MLP."""

    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class MaeParams:
    """All learnable tensors, in serialization order."""

    embed: np.ndarray          # (P^2, D) patch projection
    pos_enc: np.ndarray        # (N, D) encoder positions
    cls_token: np.ndarray      # (1, D)
    enc_blocks: list
    enc_to_dec: np.ndarray     # (D, D_dec)
    mask_token: np.ndarray     # (1, D_dec)
    pos_dec: np.ndarray        # (N+1, D_dec), slot 0 is the class token
    dec_blocks: list
    head_w: np.ndarray         # (D_dec, P^2)
    head_b: np.ndarray         # (P^2,)


@dataclass(frozen=True)
class AnomalyVerdict:
    """Outcome of scoring one clip against a trigger threshold."""

    score: float
    threshold: float
    triggered: bool
    patch_errors: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-3
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0


def _init_block(rng: np.random.Generator, width: int, hidden: int) -> BlockParams:
    def w(shape):
        return rng.normal(0.0, 0.02, size=shape)

    return BlockParams(
        ln1_g=np.ones(width), ln1_b=np.zeros(width),
        wq=w((width, width)), bq=np.zeros(width),
        wk=w((width, width)), bk=np.zeros(width),
        wv=w((width, width)), bv=np.zeros(width),
        wo=w((width, width)), bo=np.zeros(width),
        ln2_g=np.ones(width), ln2_b=np.zeros(width),
        w1=w((width, hidden)), b1=np.zeros(hidden),
        w2=w((hidden, width)), b2=np.zeros(width),
    )


def init_params(cfg: MaeConfig, seed: int) -> MaeParams:
    """Fresh parameters, deterministic per seed."""
    rng = np.random.default_rng(seed)
    d, dd = cfg.embed_dim, cfg.dec_dim
    return MaeParams(
        embed=rng.normal(0.0, 0.02, size=(cfg.patch_dim, d)),
        pos_enc=rng.normal(0.0, 0.02, size=(cfg.n_tokens, d)),
        cls_token=rng.normal(0.0, 0.02, size=(1, d)),
        enc_blocks=[_init_block(rng, d, cfg.mlp_ratio * d) for _ in range(cfg.enc_depth)],
        enc_to_dec=rng.normal(0.0, 0.02, size=(d, dd)),
        mask_token=rng.normal(0.0, 0.02, size=(1, dd)),
        pos_dec=rng.normal(0.0, 0.02, size=(cfg.n_tokens + 1, dd)),
        dec_blocks=[_init_block(rng, dd, cfg.mlp_ratio * dd) for _ in range(cfg.dec_depth)],
        head_w=rng.normal(0.0, 0.02, size=(dd, cfg.patch_dim)),
        head_b=np.zeros(cfg.patch_dim),
    )


def iter_tensors(params: MaeParams):
    """Yield (name, array) pairs in declaration order."""
    yield "embed", params.embed
    yield "pos_enc", params.pos_enc
    yield "cls_token", params.cls_token
    for i, blk in enumerate(params.enc_blocks):
        for f in fields(BlockParams):
            yield f"enc{i}.{f.name}", getattr(blk, f.name)
    yield "enc_to_dec", params.enc_to_dec
    yield "mask_token", params.mask_token
    yield "pos_dec", params.pos_dec
    for i, blk in enumerate(params.dec_blocks):
        for f in fields(BlockParams):
            yield f"dec{i}.{f.name}", getattr(blk, f.name)
    yield "head_w", params.head_w
    yield "head_b", params.head_b


# -- layer primitives (forward returns a cache consumed by backward) ----------

def _layer_norm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv, g)


def _layer_norm_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _linear_fwd(x, w, b):
    y = x.reshape(-1, x.shape[-1]) @ w
    return y.reshape(*x.shape[:-1], w.shape[1]) + b, (x, w)


def _linear_bwd(dy, cache):
    x, w = cache
    dy2 = dy.reshape(-1, dy.shape[-1])
    dx = (dy2 @ w.T).reshape(x.shape)
    dw = x.reshape(-1, x.shape[-1]).T @ dy2
    db = dy2.sum(axis=0)
    return dx, dw, db


def _gelu_fwd(x):
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    return x * cdf, (x, cdf)


def _gelu_bwd(dy, cache):
    x, cdf = cache
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return dy * (cdf + x * pdf)


def _softmax_fwd(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_bwd(dy, s):
    return s * (dy - (dy * s).sum(axis=-1, keepdims=True))


def _split_heads(x, n_heads):
    b, s, d = x.shape
    return x.reshape(b, s, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, s, h * dh)


def _attention_fwd(x, blk: BlockParams, n_heads: int):
    q, cq = _linear_fwd(x, blk.wq, blk.bq)
    k, ck = _linear_fwd(x, blk.wk, blk.bk)
    v, cv = _linear_fwd(x, blk.wv, blk.bv)
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    attn = _softmax_fwd((qh @ kh.swapaxes(-1, -2)) * scale)
    ctx = attn @ vh
    merged = _merge_heads(ctx)
    out, co = _linear_fwd(merged, blk.wo, blk.bo)
    return out, (cq, ck, cv, qh, kh, vh, scale, attn, merged, co, n_heads)


def _attention_bwd(dout, cache):
    cq, ck, cv, qh, kh, vh, scale, attn, merged, co, n_heads = cache
    dmerged, dwo, dbo = _linear_bwd(dout, co)
    dctx = _split_heads(dmerged, n_heads)
    dattn = dctx @ vh.swapaxes(-1, -2)
    dvh = attn.swapaxes(-1, -2) @ dctx
    dscores = _softmax_bwd(dattn, attn) * scale
    dqh = dscores @ kh
    dkh = dscores.swapaxes(-1, -2) @ qh
    dq, dk, dv = (_merge_heads(t) for t in (dqh, dkh, dvh))
    dxq, dwq, dbq = _linear_bwd(dq, cq)
    dxk, dwk, dbk = _linear_bwd(dk, ck)
    dxv, dwv, dbv = _linear_bwd(dv, cv)
    grads = {"wq": dwq, "bq": dbq, "wk": dwk, "bk": dbk,
             "wv": dwv, "bv": dbv, "wo": dwo, "bo": dbo}
    return dxq + dxk + dxv, grads


def _block_fwd(x, blk: BlockParams, n_heads: int):
    h1, c_ln1 = _layer_norm_fwd(x, blk.ln1_g, blk.ln1_b)
    attn_out, c_attn = _attention_fwd(h1, blk, n_heads)
    x2 = x + attn_out
    h2, c_ln2 = _layer_norm_fwd(x2, blk.ln2_g, blk.ln2_b)
    z1, c_fc1 = _linear_fwd(h2, blk.w1, blk.b1)
    a1, c_act = _gelu_fwd(z1)
    z2, c_fc2 = _linear_fwd(a1, blk.w2, blk.b2)
    return x2 + z2, (c_ln1, c_attn, c_ln2, c_fc1, c_act, c_fc2)


def _block_bwd(dout, cache):
    c_ln1, c_attn, c_ln2, c_fc1, c_act, c_fc2 = cache
    da1, dw2, db2 = _linear_bwd(dout, c_fc2)
    dz1 = _gelu_bwd(da1, c_act)
    dh2, dw1, db1 = _linear_bwd(dz1, c_fc1)
    dx2_ln, dg2, dbeta2 = _layer_norm_bwd(dh2, c_ln2)
    dx2 = dout + dx2_ln
    dh1, attn_grads = _attention_bwd(dx2, c_attn)
    dx_ln, dg1, dbeta1 = _layer_norm_bwd(dh1, c_ln1)
    grads = {"ln1_g": dg1, "ln1_b": dbeta1, "ln2_g": dg2, "ln2_b": dbeta2,
             "w1": dw1, "b1": db1, "w2": dw2, "b2": db2}
    grads.update(attn_grads)
    return dx2 + dx_ln, grads


def _run_blocks_fwd(x, blocks, n_heads):
    caches = []
    for blk in blocks:
        x, cache = _block_fwd(x, blk, n_heads)
        caches.append(cache)
    return x, caches


def _run_blocks_bwd(dout, caches, prefix, grads):
    for i in reversed(range(len(caches))):
        dout, blk_grads = _block_bwd(dout, caches[i])
        for name, g in blk_grads.items():
            grads[f"{prefix}{i}.{name}"] = g
    return dout


# -- full model forward/backward (batched) ------------------------------------

def _forward_batch(patches_flat, visible_idx, params: MaeParams, cfg: MaeConfig):
    """Forward pass over a batch.

    patches_flat: (B, N, P^2) standardized-image patches.
    visible_idx: (B, nv) sorted visible indices per clip.
    Returns (pred, cache) with pred (B, N, P^2).
    """
    b = patches_flat.shape[0]
    x_v = np.take_along_axis(patches_flat, visible_idx[:, :, None], axis=1)
    tok = x_v @ params.embed + params.pos_enc[visible_idx]
    cls = np.broadcast_to(params.cls_token, (b, 1, cfg.embed_dim))
    tokens = np.concatenate([cls, tok], axis=1)
    z_enc, enc_caches = _run_blocks_fwd(tokens, params.enc_blocks, cfg.enc_heads)

    z_cls, z_vis = z_enc[:, :1, :], z_enc[:, 1:, :]
    h_cls = z_cls @ params.enc_to_dec
    h_vis = z_vis @ params.enc_to_dec
    h_full = np.tile(params.mask_token, (b, cfg.n_tokens, 1))
    np.put_along_axis(h_full, visible_idx[:, :, None], h_vis, axis=1)
    tokens_dec = np.concatenate([h_cls, h_full], axis=1) + params.pos_dec[None]
    z_dec, dec_caches = _run_blocks_fwd(tokens_dec, params.dec_blocks, cfg.dec_heads)
    pred = z_dec[:, 1:, :] @ params.head_w + params.head_b
    cache = (x_v, visible_idx, enc_caches, z_cls, z_vis, dec_caches, z_dec)
    return pred, cache


def _backward_batch(dpred, cache, params: MaeParams, cfg: MaeConfig):
    """Gradients of a scalar loss wrt all parameters, given d(loss)/d(pred)."""
    x_v, visible_idx, enc_caches, z_cls, z_vis, dec_caches, z_dec = cache
    b, nv = visible_idx.shape
    grads = {}

    dpred2 = dpred.reshape(-1, dpred.shape[-1])
    grads["head_w"] = z_dec[:, 1:, :].reshape(-1, z_dec.shape[-1]).T @ dpred2
    grads["head_b"] = dpred2.sum(axis=0)
    dz_dec = np.zeros_like(z_dec)
    dz_dec[:, 1:, :] = (dpred2 @ params.head_w.T).reshape(b, -1, z_dec.shape[-1])

    dtok_dec = _run_blocks_bwd(dz_dec, dec_caches, "dec", grads)
    grads["pos_dec"] = dtok_dec.sum(axis=0)
    dh_cls = dtok_dec[:, :1, :]
    dh_full = dtok_dec[:, 1:, :]
    dh_vis = np.take_along_axis(dh_full, visible_idx[:, :, None], axis=1)
    grads["mask_token"] = (dh_full.sum(axis=(0, 1)) - dh_vis.sum(axis=(0, 1)))[None, :]
    d = z_vis.shape[-1]
    grads["enc_to_dec"] = (
        z_vis.reshape(-1, d).T @ dh_vis.reshape(-1, dh_vis.shape[-1])
        + z_cls.reshape(-1, d).T @ dh_cls.reshape(-1, dh_cls.shape[-1]))
    dz_enc = np.concatenate([dh_cls @ params.enc_to_dec.T,
                             dh_vis @ params.enc_to_dec.T], axis=1)

    dtok_enc = _run_blocks_bwd(dz_enc, enc_caches, "enc", grads)
    grads["cls_token"] = dtok_enc[:, 0, :].sum(axis=0, keepdims=True)
    dtok = dtok_enc[:, 1:, :]
    grads["embed"] = x_v.reshape(-1, x_v.shape[-1]).T @ dtok.reshape(-1, cfg.embed_dim)
    dpos = np.zeros_like(params.pos_enc)
    np.add.at(dpos, visible_idx.ravel(), dtok.reshape(-1, cfg.embed_dim))
    grads["pos_enc"] = dpos
    return grads


def reconstruction_loss(pred, targets, masked_bool):
    """Mean per-cell squared error over masked patches (all patches if none).

    Returns (loss, dloss/dpred).
    """
    diff = pred - targets
    n_masked = int(masked_bool[0].sum()) if masked_bool.shape[0] else 0
    if n_masked > 0:
        weight = masked_bool[:, :, None].astype(float)
        denom = masked_bool.sum() * pred.shape[-1]
    else:
        weight = np.ones_like(pred)
        denom = diff.size
    loss = float((weight * diff * diff).sum() / denom)
    return loss, 2.0 * weight * diff / denom


def loss_and_grads(patches_flat, visible_idx, masked_bool, params, cfg):
    """One training step's loss and parameter gradients (no update)."""
    targets = normalize_patches(patches_flat)
    pred, cache = _forward_batch(patches_flat, visible_idx, params, cfg)
    loss, dpred = reconstruction_loss(pred, targets, masked_bool)
    grads = _backward_batch(dpred, cache, params, cfg)
    return loss, grads


# -- public single-clip operations --------------------------------------------

def _check_grid(grid: PatchGrid, cfg: MaeConfig):
    if grid.n_patches != cfg.n_tokens:
        raise ShapeMismatch(f"grid has {grid.n_patches} patches, model expects {cfg.n_tokens}")
    if grid.patch_size != cfg.patch_size:
        raise ShapeMismatch(f"grid patch size {grid.patch_size} != model {cfg.patch_size}")


def encode(grid: PatchGrid, mask: MaskPartition, params: MaeParams,
           cfg: MaeConfig) -> np.ndarray:
    """Encode visible patches; returns (|visible|+1, D) with the class token first."""
    _check_grid(grid, cfg)
    if mask.n_total != cfg.n_tokens:
        raise ShapeMismatch(f"mask covers {mask.n_total} patches, model expects {cfg.n_tokens}")
    flat = grid.flat()[None]
    z, _ = _encode_only(flat, mask.visible[None], params, cfg)
    return z[0]


def _encode_only(patches_flat, visible_idx, params, cfg):
    b = patches_flat.shape[0]
    x_v = np.take_along_axis(patches_flat, visible_idx[:, :, None], axis=1)
    tok = x_v @ params.embed + params.pos_enc[visible_idx]
    cls = np.broadcast_to(params.cls_token, (b, 1, cfg.embed_dim))
    tokens = np.concatenate([cls, tok], axis=1)
    return _run_blocks_fwd(tokens, params.enc_blocks, cfg.enc_heads)


def decode(z_enc: np.ndarray, mask: MaskPartition, params: MaeParams,
           cfg: MaeConfig) -> PatchGrid:
    """Reconstruct all N patches from encoder tokens and the mask layout.

    The returned grid uses a flat 1 x N layout; reconstruct() preserves the
    source image layout when it is known.
    """
    if z_enc.shape[0] != len(mask.visible) + 1:
        raise ShapeMismatch(
            f"encoder output has {z_enc.shape[0]} tokens, mask implies {len(mask.visible) + 1}")
    z = z_enc[None]
    visible_idx = mask.visible[None]
    z_cls, z_vis = z[:, :1, :], z[:, 1:, :]
    h_full = np.tile(params.mask_token, (1, cfg.n_tokens, 1))
    np.put_along_axis(h_full, visible_idx[:, :, None], z_vis @ params.enc_to_dec, axis=1)
    tokens_dec = np.concatenate([z_cls @ params.enc_to_dec, h_full], axis=1) + params.pos_dec[None]
    z_dec, _ = _run_blocks_fwd(tokens_dec, params.dec_blocks, cfg.dec_heads)
    pred = z_dec[:, 1:, :] @ params.head_w + params.head_b
    p = cfg.patch_size
    return PatchGrid(patches=pred[0].reshape(cfg.n_tokens, p, p),
                     rows=1, cols=cfg.n_tokens, patch_size=p)


def reconstruct(grid: PatchGrid, mask: MaskPartition, params: MaeParams,
                cfg: MaeConfig) -> PatchGrid:
    """encode + decode, preserving the input grid layout."""
    _check_grid(grid, cfg)
    pred, _ = _forward_batch(grid.flat()[None], mask.visible[None], params, cfg)
    return PatchGrid(patches=pred[0].reshape(cfg.n_tokens, cfg.patch_size, cfg.patch_size),
                     rows=grid.rows, cols=grid.cols, patch_size=grid.patch_size)


def anomaly_score(grid: PatchGrid, recon: PatchGrid, top_k: float,
                  restrict: np.ndarray | None = None):
    """Top-K anomaly score.

    Per-patch error is the mean squared difference between the normalized
    ground-truth patch and the reconstruction; the score averages the
    ceil(n * top_k) largest errors, where n is the number of scored patches.
    `restrict` limits the scored set to the given indices (the detector
    passes the masked set: only masked slots carry a trained reconstruction,
    see sentinel_detect); errors are still returned for every patch.

    Returns (score, per-patch errors).
    """
    if grid.n_patches != recon.n_patches:
        raise ShapeMismatch("grids differ in patch count")
    targets = normalize_patches(grid.flat())
    diff = targets - recon.flat()
    errors = (diff * diff).mean(axis=1)
    scored = errors if restrict is None or len(restrict) == 0 else errors[restrict]
    k = int(np.ceil(len(scored) * top_k))
    k = max(1, min(k, len(scored)))
    worst = np.partition(scored, -k)[-k:]
    return float(worst.mean()), errors


def sentinel_detect(clip: Waveform, params: MaeParams, cfg: MaeConfig,
                    mel_cfg: MelConfig, threshold: float, seed: int) -> AnomalyVerdict:
    """Score one listening clip; trigger iff score strictly exceeds threshold.

    Scoring is restricted to the masked patches: training supervises only
    masked slots, so visible-slot decoder outputs are uncalibrated and
    would swamp the Top-K set with constant spurious error.
    """
    img = standardize(mel_spectrogram(clip, mel_cfg))
    grid = patchify(img, cfg.patch_size)
    mask = sample_mask(grid.n_patches, cfg.mask_ratio, seed)
    recon = reconstruct(grid, mask, params, cfg)
    score, errors = anomaly_score(grid, recon, cfg.top_k, restrict=mask.masked)
    return AnomalyVerdict(score=score, threshold=threshold,
                          triggered=score > threshold, patch_errors=errors)


# -- training ------------------------------------------------------------------

def clips_to_patches(clips, cfg: MaeConfig, mel_cfg: MelConfig) -> np.ndarray:
    """Precompute standardized flattened patches for a clip list: (B, N, P^2)."""
    out = []
    for clip in clips:
        grid = patchify(standardize(mel_spectrogram(clip, mel_cfg)), cfg.patch_size)
        _check_grid(grid, cfg)
        out.append(grid.flat())
    return np.stack(out)


def pretrain(params: MaeParams, clips, cfg: MaeConfig, mel_cfg: MelConfig,
             hyper: TrainConfig):
    """Adam training on masked-patch reconstruction of noise clips.

    Masks are resampled per clip per epoch. Returns (params, epoch_losses);
    params are updated in place and also returned.

    Raises:
        EmptyTrainingSet: no clips.
        DivergedLoss: loss became non-finite.
    """
    if len(clips) == 0:
        raise EmptyTrainingSet("no training clips")
    data = clips_to_patches(clips, cfg, mel_cfg)
    return pretrain_on_patches(params, data, cfg, hyper)


def pretrain_on_patches(params: MaeParams, data: np.ndarray, cfg: MaeConfig,
                        hyper: TrainConfig):
    """Training loop over precomputed (B, N, P^2) patch arrays."""
    if data.shape[0] == 0:
        raise EmptyTrainingSet("no training clips")
    n_clips, n_tokens, _ = data.shape
    n_masked = int(np.floor(n_tokens * cfg.mask_ratio + 0.5))
    rng = np.random.default_rng(hyper.seed)
    opt = AdamState(lr=hyper.lr)
    losses = []
    for _epoch in range(hyper.epochs):
        order = rng.permutation(n_clips)
        total, count = 0.0, 0
        for lo in range(0, n_clips, hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            batch = data[idx]
            vis_rows, mask_rows = [], []
            for _ in range(len(idx)):
                perm = rng.permutation(n_tokens)
                mask_rows.append(perm[:n_masked])
                vis_rows.append(np.sort(perm[n_masked:]))
            visible_idx = np.stack(vis_rows)
            masked_bool = np.zeros((len(idx), n_tokens), dtype=bool)
            for r, row in enumerate(mask_rows):
                masked_bool[r, row] = True
            loss, grads = loss_and_grads(batch, visible_idx, masked_bool, params, cfg)
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss became {loss}")
            opt.update(params, grads)
            total += loss * len(idx)
            count += len(idx)
        losses.append(total / count)
    return params, losses


class AdamState:
    """Adam with bias correction, keyed by tensor name; updates in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def update(self, params: MaeParams, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for name, tensor in iter_tensors(params):
            g = grads[name].reshape(tensor.shape)
            m = self.m.setdefault(name, np.zeros_like(tensor))
            v = self.v.setdefault(name, np.zeros_like(tensor))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            tensor -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


def calibrate_threshold(params: MaeParams, cfg: MaeConfig, mel_cfg: MelConfig,
                        clips, margin: float = 1.1, seed: int = 0) -> float:
    """Trigger threshold from the max score over reference noise clips."""
    scores = []
    for i, clip in enumerate(clips):
        verdict = sentinel_detect(clip, params, cfg, mel_cfg,
                                  threshold=np.inf, seed=seed + i)
        scores.append(verdict.score)
    return float(np.max(scores) * margin)


# -- checkpoint container ------------------------------------------------------

_CFG_STRUCT = struct.Struct("<9i3d")


def save_checkpoint(path, cfg: MaeConfig, params: MaeParams,
                    threshold: float = float("nan")) -> None:
    """Write the versioned binary container (bit-exact round trip)."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_CFG_STRUCT.pack(
            cfg.patch_size, cfg.n_tokens, cfg.embed_dim, cfg.enc_depth,
            cfg.enc_heads, cfg.dec_dim, cfg.dec_depth, cfg.dec_heads,
            cfg.mlp_ratio, cfg.mask_ratio, cfg.top_k, threshold))
        for _name, tensor in iter_tensors(params):
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a container written by save_checkpoint.

    Returns (cfg, params, threshold).

    Raises:
        CheckpointError: bad magic or truncated file.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        header = fh.read(_CFG_STRUCT.size)
        if len(header) != _CFG_STRUCT.size:
            raise CheckpointError("truncated config block")
        (patch, n_tokens, embed, enc_depth, enc_heads, dec_dim, dec_depth,
         dec_heads, mlp_ratio, mask_ratio, top_k, threshold) = _CFG_STRUCT.unpack(header)
        cfg = MaeConfig(patch_size=patch, n_tokens=n_tokens, embed_dim=embed,
                        enc_depth=enc_depth, enc_heads=enc_heads, dec_dim=dec_dim,
                        dec_depth=dec_depth, dec_heads=dec_heads, mlp_ratio=mlp_ratio,
                        mask_ratio=mask_ratio, top_k=top_k)
        params = init_params(cfg, seed=0)
        for name, tensor in iter_tensors(params):
            raw = fh.read(tensor.size * 8)
            if len(raw) != tensor.size * 8:
                raise CheckpointError(f"truncated tensor {name}")
            tensor[...] = np.frombuffer(raw, dtype="<f8").reshape(tensor.shape)
        if fh.read(1):
            raise CheckpointError("trailing bytes after last tensor")
    return cfg, params, threshold
