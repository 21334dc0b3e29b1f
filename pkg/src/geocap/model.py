"""Full captioner: geometry-aware encoder, causal decoder, decoding, persistence.

The encoder projects region features to the model width and stacks
self-attention blocks whose scores are modulated by box geometry; it
uses no sequence positions at all, so region order carries no signal.
The decoder is a standard causal transformer over token embeddings
plus sinusoidal positions, cross-attending into the encoder memory.
Post-norm residual wiring throughout: sublayer, add, layer norm.

A :class:`Checkpoint` owns the configuration, a flat name-to-tensor
parameter map, and trainer metadata. The on-disk format is a text
header (magic line, JSON metadata, one shape line per parameter)
followed by raw little-endian float64 payloads in header order, which
makes save/load round-trips byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attention import (
    AttentionParams,
    GeometryConfig,
    multi_head_attention,
    multi_head_object_aoa,
    pair_embedding_matrix,
)
from .data import BOS_ID, EOS_ID, PAD_ID, ImageRecord
from .errors import ContractError, ParseError, ValidationError
from .tensor import (
    Tensor,
    add,
    dropout,
    embedding_lookup,
    layer_norm,
    matmul,
    no_grad,
    relu,
    tensor,
)

__all__ = [
    "ModelConfig",
    "Checkpoint",
    "EncodedImage",
    "param_spec",
    "init_model",
    "clone_checkpoint",
    "encode",
    "decode_logits",
    "greedy_decode",
    "beam_decode",
    "save_checkpoint",
    "load_checkpoint",
]

LN_EPS = 1e-5
_MAGIC = "geocap-checkpoint-v1"


@dataclass
class ModelConfig:
    """Architecture hyperparameters; every field has a usable default
    except the two that depend on the data."""

    vocab_size: int
    d_feat: int
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ffn: int = 128
    d_g: int = 64
    max_caption_len: int = 20
    aoa_enabled: bool = True
    eps_clamp: float = 1e-3
    wave_base: float = 1000.0
    dropout_rate: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValidationError("d_model must be divisible by n_heads")
        if min(self.vocab_size, self.d_feat, self.d_model, self.n_heads,
               self.d_ffn, self.d_g) < 1:
            raise ValidationError("all widths must be positive")
        if self.vocab_size < 4:
            raise ValidationError("vocab must hold at least the 4 specials")
        if self.n_enc_layers < 0 or self.n_dec_layers < 0:
            raise ValidationError("layer counts cannot be negative")
        if self.max_caption_len < 2:
            raise ValidationError("max_caption_len must be at least 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("dropout_rate must lie in [0, 1)")
        GeometryConfig(d_g=self.d_g, wave_base=self.wave_base,
                       eps_clamp=self.eps_clamp)

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def geometry(self) -> GeometryConfig:
        return GeometryConfig(d_g=self.d_g, wave_base=self.wave_base,
                              eps_clamp=self.eps_clamp)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg


@dataclass
class Checkpoint:
    """Parameters plus everything needed to reproduce or resume a run."""

    config: ModelConfig
    params: dict
    step: int = 0
    stage: str = "xe"
    dev_scores: dict = field(default_factory=dict)


@dataclass
class EncodedImage:
    """Encoder output for one image."""

    memory: Tensor
    seq_len: int


def _mha_names(prefix: str, cfg: ModelConfig, *, geo: bool, gated: bool) -> list:
    names = []
    for h in range(cfg.n_heads):
        names += [(f"{prefix}.wq{h}", (cfg.d_model, cfg.d_head), "weight"),
                  (f"{prefix}.wk{h}", (cfg.d_model, cfg.d_head), "weight"),
                  (f"{prefix}.wv{h}", (cfg.d_model, cfg.d_head), "weight")]
    if geo:
        names.append((f"{prefix}.wgeo", (cfg.d_g, cfg.n_heads), "weight"))
    if gated:
        names += [(f"{prefix}.gate_wq", (cfg.d_model, cfg.d_model), "weight"),
                  (f"{prefix}.gate_wv", (cfg.d_model, cfg.d_model), "weight"),
                  (f"{prefix}.gate_b", (cfg.d_model,), "bias"),
                  (f"{prefix}.info_wq", (cfg.d_model, cfg.d_model), "weight"),
                  (f"{prefix}.info_wv", (cfg.d_model, cfg.d_model), "weight"),
                  (f"{prefix}.info_b", (cfg.d_model,), "bias")]
    else:
        names += [(f"{prefix}.wo", (cfg.d_model, cfg.d_model), "weight"),
                  (f"{prefix}.bo", (cfg.d_model,), "bias")]
    return names


def _ln_names(prefix: str, cfg: ModelConfig) -> list:
    return [(f"{prefix}.gain", (cfg.d_model,), "gain"),
            (f"{prefix}.bias", (cfg.d_model,), "bias")]


def _ffn_names(prefix: str, cfg: ModelConfig) -> list:
    return [(f"{prefix}.w1", (cfg.d_model, cfg.d_ffn), "weight"),
            (f"{prefix}.b1", (cfg.d_ffn,), "bias"),
            (f"{prefix}.w2", (cfg.d_ffn, cfg.d_model), "weight"),
            (f"{prefix}.b2", (cfg.d_model,), "bias")]


def param_spec(cfg: ModelConfig) -> list:
    """Ordered (name, shape, kind) registry for a config.

    The order here is the canonical checkpoint order; init, save, and
    load all follow it.
    """
    spec = [("input_proj.w", (cfg.d_feat, cfg.d_model), "weight"),
            ("input_proj.b", (cfg.d_model,), "bias")]
    for i in range(cfg.n_enc_layers):
        spec += _mha_names(f"enc{i}.attn", cfg, geo=True, gated=cfg.aoa_enabled)
        spec += _ln_names(f"enc{i}.ln1", cfg)
        spec += _ffn_names(f"enc{i}.ffn", cfg)
        spec += _ln_names(f"enc{i}.ln2", cfg)
    spec.append(("tok_embed", (cfg.vocab_size, cfg.d_model), "weight"))
    for j in range(cfg.n_dec_layers):
        spec += _mha_names(f"dec{j}.self", cfg, geo=False, gated=False)
        spec += _ln_names(f"dec{j}.ln1", cfg)
        spec += _mha_names(f"dec{j}.cross", cfg, geo=False, gated=False)
        spec += _ln_names(f"dec{j}.ln2", cfg)
        spec += _ffn_names(f"dec{j}.ffn", cfg)
        spec += _ln_names(f"dec{j}.ln3", cfg)
    spec += [("out_proj.w", (cfg.d_model, cfg.vocab_size), "weight"),
             ("out_proj.b", (cfg.vocab_size,), "bias")]
    return spec


def init_model(cfg: ModelConfig) -> Checkpoint:
    """Fresh checkpoint: Glorot-uniform weights, zero biases, unit gains.

    Deterministic in ``cfg.seed``; the gate biases start at zero so
    every gate opens halfway on the first forward pass.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape, kind in param_spec(cfg):
        if kind == "weight":
            fan_in, fan_out = shape if len(shape) == 2 else (shape[0], shape[0])
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-bound, bound, shape)
        elif kind == "bias":
            data = np.zeros(shape)
        else:
            data = np.ones(shape)
        params[name] = Tensor(data, requires_grad=True)
    return Checkpoint(config=cfg, params=params)


def clone_checkpoint(ckpt: Checkpoint) -> Checkpoint:
    """Deep copy of parameters and metadata."""
    return Checkpoint(
        config=dataclasses.replace(ckpt.config),
        params={k: Tensor(v.data, requires_grad=True) for k, v in ckpt.params.items()},
        step=ckpt.step,
        stage=ckpt.stage,
        dev_scores=dict(ckpt.dev_scores),
    )


def _attn(ckpt: Checkpoint, prefix: str, *, geo: bool, gated: bool) -> AttentionParams:
    p = ckpt.params
    cfg = ckpt.config
    kwargs = dict(
        w_q=[p[f"{prefix}.wq{h}"] for h in range(cfg.n_heads)],
        w_k=[p[f"{prefix}.wk{h}"] for h in range(cfg.n_heads)],
        w_v=[p[f"{prefix}.wv{h}"] for h in range(cfg.n_heads)],
    )
    if geo:
        kwargs["w_geo"] = p[f"{prefix}.wgeo"]
    if gated:
        kwargs.update(gate_wq=p[f"{prefix}.gate_wq"], gate_wv=p[f"{prefix}.gate_wv"],
                      gate_b=p[f"{prefix}.gate_b"], info_wq=p[f"{prefix}.info_wq"],
                      info_wv=p[f"{prefix}.info_wv"], info_b=p[f"{prefix}.info_b"])
    else:
        kwargs.update(out_w=p[f"{prefix}.wo"], out_b=p[f"{prefix}.bo"])
    return AttentionParams(**kwargs)


def _ffn(x: Tensor, ckpt: Checkpoint, prefix: str) -> Tensor:
    p = ckpt.params
    hidden = relu(add(matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
    return add(matmul(hidden, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])


def _ln(x: Tensor, ckpt: Checkpoint, prefix: str) -> Tensor:
    p = ckpt.params
    return layer_norm(x, p[f"{prefix}.gain"], p[f"{prefix}.bias"], LN_EPS)


def _maybe_drop(x: Tensor, cfg: ModelConfig, train: bool,
                rng: Optional[np.random.Generator]) -> Tensor:
    if not train or cfg.dropout_rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training forward needs a dropout generator")
    return dropout(x, cfg.dropout_rate, rng)


def encode(record: ImageRecord, ckpt: Checkpoint, *,
           train: bool = False,
           rng: Optional[np.random.Generator] = None) -> EncodedImage:
    """Run the geometry-aware encoder over one image's regions."""
    cfg = ckpt.config
    if record.features.ndim != 2 or record.features.shape[1] != cfg.d_feat:
        raise ValidationError(
            f"record {record.id}: feature width {record.features.shape} "
            f"does not match input projection ({cfg.d_feat})")
    if len(record.boxes) != record.features.shape[0]:
        raise ValidationError(f"record {record.id}: box/feature count mismatch")
    geo = cfg.geometry()
    pair_emb = pair_embedding_matrix(record.boxes, geo) if cfg.n_enc_layers else None
    x = add(matmul(tensor(record.features), ckpt.params["input_proj.w"]),
            ckpt.params["input_proj.b"])
    x = _maybe_drop(x, cfg, train, rng)
    for i in range(cfg.n_enc_layers):
        attn = multi_head_object_aoa(x, record.boxes,
                                     _attn(ckpt, f"enc{i}.attn", geo=True,
                                           gated=cfg.aoa_enabled),
                                     geo, cfg.aoa_enabled, pair_emb=pair_emb)
        x = _ln(add(x, _maybe_drop(attn, cfg, train, rng)), ckpt, f"enc{i}.ln1")
        ff = _ffn(x, ckpt, f"enc{i}.ffn")
        x = _ln(add(x, _maybe_drop(ff, cfg, train, rng)), ckpt, f"enc{i}.ln2")
    return EncodedImage(memory=x, seq_len=len(record.boxes))


def sinusoidal_positions(n: int, d_model: int, base: float = 10000.0) -> np.ndarray:
    """Classic interleaved sin/cos position table, shape (n, d_model)."""
    pos = np.arange(n)[:, None]
    idx = np.arange(d_model)[None, :]
    angle = pos / np.power(base, (idx // 2 * 2) / d_model)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def decode_logits(memory: EncodedImage, token_prefix: Sequence[int],
                  ckpt: Checkpoint, *,
                  train: bool = False,
                  rng: Optional[np.random.Generator] = None) -> Tensor:
    """Teacher-forced decoder logits for every position of the prefix.

    The prefix must start with <bos> and fit in max_caption_len. A
    causal mask keeps each position blind to later tokens.
    """
    cfg = ckpt.config
    prefix = list(token_prefix)
    if not prefix:
        raise ContractError("token prefix must be non-empty")
    if prefix[0] != BOS_ID:
        raise ContractError("token prefix must start with <bos>")
    if len(prefix) > cfg.max_caption_len:
        raise ContractError(
            f"prefix length {len(prefix)} exceeds max_caption_len {cfg.max_caption_len}")
    t_len = len(prefix)
    y = add(embedding_lookup(ckpt.params["tok_embed"], prefix),
            tensor(sinusoidal_positions(t_len, cfg.d_model)))
    y = _maybe_drop(y, cfg, train, rng)
    causal = np.tril(np.ones((t_len, t_len), dtype=bool))
    for j in range(cfg.n_dec_layers):
        self_attn = multi_head_attention(
            y, y, _attn(ckpt, f"dec{j}.self", geo=False, gated=False), mask=causal)
        y = _ln(add(y, _maybe_drop(self_attn, cfg, train, rng)), ckpt, f"dec{j}.ln1")
        cross = multi_head_attention(
            y, memory.memory, _attn(ckpt, f"dec{j}.cross", geo=False, gated=False))
        y = _ln(add(y, _maybe_drop(cross, cfg, train, rng)), ckpt, f"dec{j}.ln2")
        ff = _ffn(y, ckpt, f"dec{j}.ffn")
        y = _ln(add(y, _maybe_drop(ff, cfg, train, rng)), ckpt, f"dec{j}.ln3")
    return add(matmul(y, ckpt.params["out_proj.w"]), ckpt.params["out_proj.b"])


def _strip_specials(ids: Sequence[int]) -> list:
    return [t for t in ids if t not in (PAD_ID, BOS_ID, EOS_ID)]


def greedy_decode(record: ImageRecord, ckpt: Checkpoint) -> list:
    """Argmax decoding; ties break toward the lowest token id."""
    cfg = ckpt.config
    with no_grad():
        memory = encode(record, ckpt)
        prefix = [BOS_ID]
        while len(prefix) < cfg.max_caption_len:
            logits = decode_logits(memory, prefix, ckpt)
            nxt = int(np.argmax(logits.data[-1]))
            prefix.append(nxt)
            if nxt == EOS_ID:
                break
    return _strip_specials(prefix[1:])


def _log_softmax_row(row: np.ndarray) -> np.ndarray:
    z = row - row.max()
    return z - np.log(np.exp(z).sum())


def beam_decode(record: ImageRecord, ckpt: Checkpoint, beam_width: int) -> list:
    """Beam search ranked by total log-probability.

    Finished beams (those that emitted <eos> or hit the length cap)
    freeze and keep competing on their final score. No length
    normalization; score ties prefer the lexicographically smaller
    token sequence, so results are reproducible.
    """
    if beam_width < 1:
        raise ContractError("beam_width must be at least 1")
    cfg = ckpt.config
    max_emit = cfg.max_caption_len - 1
    with no_grad():
        memory = encode(record, ckpt)
        # (negated score, tokens, finished); sorting ascending puts the
        # best-scoring, lexicographically smallest beam first.
        beams = [(0.0, (), False)]
        while any(not fin for _, _, fin in beams):
            candidates = [b for b in beams if b[2]]
            for neg_score, tokens, fin in beams:
                if fin:
                    continue
                logits = decode_logits(memory, [BOS_ID, *tokens], ckpt)
                logp = _log_softmax_row(logits.data[-1])
                for tok in range(cfg.vocab_size):
                    seq = tokens + (tok,)
                    done = tok == EOS_ID or len(seq) == max_emit
                    candidates.append((neg_score - logp[tok], seq, done))
            candidates.sort(key=lambda c: (c[0], c[1]))
            beams = candidates[:beam_width]
    return _strip_specials(beams[0][1])


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write header plus raw float64 payloads; the write is atomic."""
    meta = {
        "config": ckpt.config.to_dict(),
        "dev_scores": ckpt.dev_scores,
        "stage": ckpt.stage,
        "step": ckpt.step,
    }
    spec = param_spec(ckpt.config)
    lines = [_MAGIC, json.dumps(meta, sort_keys=True)]
    for name, shape, _ in spec:
        lines.append(f"param {name} {'x'.join(str(s) for s in shape)}")
    lines.append("end")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for name, shape, _ in spec:
            t = ckpt.params[name]
            if t.shape != shape:
                raise ValidationError(f"parameter {name} has shape {t.shape}, "
                                      f"config expects {shape}")
            fh.write(t.data.astype("<f8", copy=False).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    """Parse and validate a checkpoint file.

    The parameter names and shapes in the header must exactly match
    what the embedded config generates, in order; otherwise the file
    is rejected as incompatible.
    """
    with open(path, "rb") as fh:
        magic = fh.readline().decode("utf-8", errors="replace").rstrip("\n")
        if magic != _MAGIC:
            raise ParseError(f"{path}: not a checkpoint file")
        try:
            meta = json.loads(fh.readline().decode("utf-8"))
            cfg = ModelConfig.from_dict(meta["config"])
        except (json.JSONDecodeError, KeyError, TypeError, UnicodeDecodeError) as err:
            raise ParseError(f"{path}: bad metadata header: {err}") from err
        header = []
        while True:
            raw = fh.readline()
            if not raw:
                raise ParseError(f"{path}: truncated header")
            line = raw.decode("utf-8", errors="replace").rstrip("\n")
            if line == "end":
                break
            parts = line.split(" ")
            if len(parts) != 3 or parts[0] != "param":
                raise ParseError(f"{path}: malformed header line {line!r}")
            try:
                shape = tuple(int(s) for s in parts[2].split("x"))
            except ValueError as err:
                raise ParseError(f"{path}: bad shape in {line!r}") from err
            header.append((parts[1], shape))
        expected = [(name, shape) for name, shape, _ in param_spec(cfg)]
        if header != expected:
            raise ValidationError(
                f"{path}: parameter map does not match the embedded config")
        params = {}
        for name, shape in header:
            n_bytes = int(np.prod(shape)) * 8
            payload = fh.read(n_bytes)
            if len(payload) != n_bytes:
                raise ParseError(f"{path}: truncated payload for {name}")
            data = np.frombuffer(payload, dtype="<f8").reshape(shape)
            params[name] = Tensor(data, requires_grad=True)
        if fh.read(1):
            raise ParseError(f"{path}: trailing bytes after payload")
    return Checkpoint(config=cfg, params=params,
                      step=int(meta.get("step", 0)),
                      stage=str(meta.get("stage", "xe")),
                      dev_scores=dict(meta.get("dev_scores", {})))
