"""Geometry-modulated multi-head attention with a gated output stage.

Attention over detected image regions gets two additions on top of the
usual scaled dot-product form. First, every ordered pair of bounding
boxes (m, n) is summarized by a 4-vector of relative position and
log-size ratios; a sinusoidal expansion of that vector, projected
through a learned matrix and rectified, yields a non-negative geometric
weight per head. The content scores are multiplied elementwise by the
exponential of those weights before the row softmax, so geometry can
only amplify, never flip, a content score. Second, an optional gate
recombines the attended vectors with the original queries through two
affine maps, passing through a sigmoid-gated information vector instead
of a plain output projection.

All functions here are pure with respect to their tensor inputs and
build on the autodiff ops in :mod:`geocap.tensor`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ShapeError, ValidationError
from .tensor import (
    Tensor,
    add,
    exp,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_rows,
    stack,
    tensor,
    transpose,
)

__all__ = [
    "Box",
    "GeometryConfig",
    "AttentionParams",
    "relative_geometry",
    "geometry_embedding",
    "pair_embedding_matrix",
    "geometric_weights",
    "scaled_dot_scores",
    "combined_scores",
    "object_attention",
    "aoa_gate",
    "multi_head_attention",
    "multi_head_object_aoa",
]


@dataclass(frozen=True)
class Box:
    """One region's geometry in pixels: center point plus width/height."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValidationError(f"box width/height must be positive, got {self.w}x{self.h}")

    def shifted(self, dx: float, dy: float) -> "Box":
        return Box(self.cx + dx, self.cy + dy, self.w, self.h)

    def scaled(self, s: float) -> "Box":
        return Box(self.cx * s, self.cy * s, self.w * s, self.h * s)


@dataclass(frozen=True)
class GeometryConfig:
    """Settings for the box-pair feature expansion.

    ``d_g`` must be divisible by 8: the 4 pair features each get an
    equal block of interleaved sine/cosine pairs. ``eps_clamp`` floors
    the normalized center distances before their log, which would
    otherwise diverge for coincident centers.
    """

    d_g: int = 64
    wave_base: float = 1000.0
    eps_clamp: float = 1e-3

    def __post_init__(self):
        if self.d_g <= 0 or self.d_g % 8 != 0:
            raise ValidationError(f"d_g must be a positive multiple of 8, got {self.d_g}")
        if self.eps_clamp <= 0:
            raise ValidationError("eps_clamp must be positive")
        if self.wave_base <= 0:
            raise ValidationError("wave_base must be positive")


@dataclass
class AttentionParams:
    """Parameters for one attention block.

    ``w_q``/``w_k``/``w_v`` hold one (d_model, d_head) projection per
    head. ``w_geo`` maps the d_g-wide pair embedding to one geometric
    weight per head; it is present only on geometry-aware blocks.
    Gated blocks carry the six gate/information parameters; plain
    blocks carry an output projection instead.
    """

    w_q: list[Tensor]
    w_k: list[Tensor]
    w_v: list[Tensor]
    w_geo: Optional[Tensor] = None
    gate_wq: Optional[Tensor] = None
    gate_wv: Optional[Tensor] = None
    gate_b: Optional[Tensor] = None
    info_wq: Optional[Tensor] = None
    info_wv: Optional[Tensor] = None
    info_b: Optional[Tensor] = None
    out_w: Optional[Tensor] = None
    out_b: Optional[Tensor] = None

    def __post_init__(self):
        if not (len(self.w_q) == len(self.w_k) == len(self.w_v)) or not self.w_q:
            raise ValidationError("need equal, nonzero per-head projection counts")
        d_model, d_head = self.w_q[0].shape
        if self.n_heads * d_head != d_model:
            raise ValidationError(
                f"n_heads*d_head must equal d_model, got {self.n_heads}*{d_head} != {d_model}")

    @property
    def n_heads(self) -> int:
        return len(self.w_q)

    @property
    def d_head(self) -> int:
        return self.w_q[0].shape[1]

    @property
    def d_model(self) -> int:
        return self.w_q[0].shape[0]


def relative_geometry(m: Box, n: Box, cfg: GeometryConfig) -> np.ndarray:
    """4-vector describing box n relative to box m.

    Components: log of the clamped normalized center distances along x
    and y, then the log width and height ratios. The distance terms are
    floored at ``eps_clamp`` before the log; the size terms are already
    logarithms and get no second one. Every component is a ratio of
    same-unit quantities, so the vector is invariant to translating or
    uniformly rescaling both boxes.
    """
    t_x = max(abs(m.cx - n.cx) / m.w, cfg.eps_clamp)
    t_y = max(abs(m.cy - n.cy) / m.h, cfg.eps_clamp)
    return np.array([
        math.log(t_x),
        math.log(t_y),
        math.log(m.w / n.w),
        math.log(m.h / n.h),
    ])


def geometry_embedding(lam: np.ndarray, cfg: GeometryConfig) -> np.ndarray:
    """Expand a 4-vector to d_g sinusoidal features.

    Each component owns a d_g/4 block of interleaved sin/cos values at
    geometric wavelengths wave_base**(8k/d_g), k = 0..d_g/8 - 1.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (4,):
        raise ShapeError(f"expected a 4-vector, got shape {lam.shape}")
    n_freq = cfg.d_g // 8
    waves = cfg.wave_base ** (8.0 * np.arange(n_freq) / cfg.d_g)
    out = np.empty(cfg.d_g)
    block = cfg.d_g // 4
    for c in range(4):
        base = c * block
        phase = lam[c] / waves
        out[base:base + block:2] = np.sin(phase)
        out[base + 1:base + block:2] = np.cos(phase)
    return out


def pair_embedding_matrix(boxes: Sequence[Box], cfg: GeometryConfig) -> np.ndarray:
    """(seq*seq, d_g) matrix of pair embeddings, row index m*seq + n."""
    seq = len(boxes)
    out = np.empty((seq * seq, cfg.d_g))
    for m_idx, m in enumerate(boxes):
        for n_idx, n in enumerate(boxes):
            lam = relative_geometry(m, n, cfg)
            out[m_idx * seq + n_idx] = geometry_embedding(lam, cfg)
    return out


def geometric_weights(boxes: Sequence[Box],
                      params: AttentionParams,
                      cfg: GeometryConfig,
                      pair_emb: Optional[np.ndarray] = None) -> Tensor:
    """Per-head non-negative geometric score matrix, shape (H, seq, seq).

    Entry [h][m][n] is the rectified projection of the (m, n) pair
    embedding onto head h's column of the geometry matrix. ``pair_emb``
    may carry a precomputed embedding matrix for the same boxes; the
    result is identical either way.
    """
    if not boxes:
        raise ValidationError("need at least one box")
    if params.w_geo is None:
        raise ValidationError("attention block has no geometry projection")
    seq = len(boxes)
    if pair_emb is None:
        pair_emb = pair_embedding_matrix(boxes, cfg)
    emb = tensor(pair_emb)
    per_pair = relu(matmul(emb, params.w_geo))          # (seq*seq, H)
    per_head = transpose(per_pair, (1, 0))              # (H, seq*seq)
    return reshape(per_head, (params.n_heads, seq, seq))


def scaled_dot_scores(q: Tensor, k: Tensor) -> Tensor:
    """Content attention scores q @ k^T / sqrt(d_head).

    Accepts a single (seq, d_head) pair or head-stacked 3-D inputs.
    """
    if q.ndim not in (2, 3) or q.ndim != k.ndim:
        raise ShapeError(f"incompatible score inputs {q.shape} and {k.shape}")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"head widths differ: {q.shape} vs {k.shape}")
    d_head = q.shape[-1]
    axes = (1, 0) if k.ndim == 2 else (0, 2, 1)
    return scale(matmul(q, transpose(k, axes)), 1.0 / math.sqrt(d_head))


def combined_scores(omega_a: Tensor, omega_w: Tensor) -> Tensor:
    """Fuse content and geometric scores: omega_a * exp(omega_w).

    The exponential is at least 1 wherever the geometric weights are
    non-negative, so each content score keeps its sign and can only
    grow in magnitude.
    """
    if omega_a.shape != omega_w.shape:
        raise ShapeError(f"score shapes differ: {omega_a.shape} vs {omega_w.shape}")
    return mul(omega_a, exp(omega_w))


def object_attention(omega: Tensor, v: Tensor,
                     mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-softmax the scores and average the value rows accordingly.

    A 2-D ``v`` is shared across all heads of a 3-D score matrix.
    """
    if omega.ndim == 3 and v.ndim == 2:
        v = stack([v] * omega.shape[0])
    if omega.ndim != v.ndim:
        raise ShapeError(f"rank mismatch: scores {omega.shape}, values {v.shape}")
    return matmul(softmax_rows(omega, mask), v)


def aoa_gate(q_in: Tensor, attended: Tensor, params: AttentionParams) -> Tensor:
    """Sigmoid-gated recombination of queries and attended vectors.

    Two affine maps of the concatenation-free pair (q_in, attended)
    produce a gate and an information vector; the output is their
    elementwise product, so it is bounded by the information vector in
    magnitude.
    """
    if q_in.shape != attended.shape:
        raise ShapeError(f"query/attended shapes differ: {q_in.shape} vs {attended.shape}")
    if params.gate_wq is None:
        raise ValidationError("attention block has no gate parameters")
    gate = sigmoid(add(add(matmul(q_in, params.gate_wq),
                           matmul(attended, params.gate_wv)), params.gate_b))
    info = add(add(matmul(q_in, params.info_wq),
                   matmul(attended, params.info_wv)), params.info_b)
    return mul(gate, info)


def _project_heads(x: Tensor, weights: list[Tensor]) -> Tensor:
    """Apply per-head projections and stack to (H, seq, d_head)."""
    return stack([matmul(x, w) for w in weights])


def _concat_heads(attended: Tensor) -> Tensor:
    """(H, seq, d_head) -> (seq, H*d_head), heads side by side."""
    n_heads, seq, d_head = attended.shape
    return reshape(transpose(attended, (1, 0, 2)), (seq, n_heads * d_head))


def multi_head_attention(q_in: Tensor, kv_in: Tensor, params: AttentionParams,
                         mask: Optional[np.ndarray] = None) -> Tensor:
    """Plain multi-head attention with a learned output projection.

    ``mask`` is a (seq_q, seq_k) boolean matrix shared by all heads;
    False entries receive exactly zero attention.
    """
    if params.out_w is None:
        raise ValidationError("attention block has no output projection")
    q = _project_heads(q_in, params.w_q)
    k = _project_heads(kv_in, params.w_k)
    v = _project_heads(kv_in, params.w_v)
    scores = scaled_dot_scores(q, k)
    if mask is not None:
        mask = np.broadcast_to(mask, scores.shape)
    attended = object_attention(scores, v, mask)
    merged = _concat_heads(attended)
    return add(matmul(merged, params.out_w), params.out_b)


def multi_head_object_aoa(x: Tensor,
                          boxes: Sequence[Box],
                          params: AttentionParams,
                          cfg: GeometryConfig,
                          aoa_enabled: bool,
                          pair_emb: Optional[np.ndarray] = None) -> Tensor:
    """Geometry-aware multi-head self-attention over region vectors.

    Per head: project queries, keys, and values; form content scores;
    multiply by the exponentiated geometric weights; softmax; average
    values. The head outputs are concatenated and either passed through
    the sigmoid gate (``aoa_enabled``) or a plain output projection.
    """
    if x.ndim != 2:
        raise ShapeError(f"expected (seq, d_model) input, got {x.shape}")
    if len(boxes) != x.shape[0]:
        raise ShapeError(f"{len(boxes)} boxes for {x.shape[0]} region vectors")
    q = _project_heads(x, params.w_q)
    k = _project_heads(x, params.w_k)
    v = _project_heads(x, params.w_v)
    omega_a = scaled_dot_scores(q, k)
    omega_w = geometric_weights(boxes, params, cfg, pair_emb=pair_emb)
    omega = combined_scores(omega_a, omega_w)
    attended = object_attention(omega, v)
    merged = _concat_heads(attended)
    if aoa_enabled:
        return aoa_gate(x, merged, params)
    return add(matmul(merged, params.out_w), params.out_b)
