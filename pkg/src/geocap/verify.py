"""Self-contained verification suites: gradient checks, structural
invariants, and brute-force metric oracles.

The oracles here are deliberately written in a different style from
the production code they check (explicit loops, list counting,
memoized recursion) so that a bug would have to appear twice,
independently, to slip through. The CLI's verify command and the test
suite both run these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import (
    AttentionParams,
    Box,
    GeometryConfig,
    aoa_gate,
    combined_scores,
    geometric_weights,
    multi_head_object_aoa,
    relative_geometry,
    scaled_dot_scores,
)
from .data import BOS_ID, EOS_ID, ImageRecord, synth_generate
from .model import (
    Checkpoint,
    ModelConfig,
    beam_decode,
    decode_logits,
    encode,
    greedy_decode,
    init_model,
)
from .metrics import bleu, build_corpus_stats, cider, rouge_l
from .training import OptimizerState, adam_step, noam_lr

__all__ = [
    "CheckResult",
    "gradcheck_suite",
    "invariants_suite",
    "metrics_oracle_suite",
    "run_suites",
    "naive_bleu",
    "naive_cider",
    "naive_rouge_l",
    "vanilla_attention_reference",
    "tiny_model_config",
    "random_image_record",
]


@dataclass
class CheckResult:
    name: str
    max_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_err <= self.tol


# ---------------------------------------------------------------------------
# Shared fixtures
# ---------------------------------------------------------------------------

def tiny_model_config(vocab_size: int = 10, **overrides) -> ModelConfig:
    """The small config used for whole-model gradient checks."""
    base = dict(vocab_size=vocab_size, d_feat=8, d_model=16, n_heads=2,
                n_enc_layers=1, n_dec_layers=1, d_ffn=32, d_g=16,
                max_caption_len=8, dropout_rate=0.0, seed=3)
    base.update(overrides)
    return ModelConfig(**base)


def random_boxes(rng: np.random.Generator, count: int) -> list:
    boxes = []
    for _ in range(count):
        w = float(rng.uniform(5.0, 60.0))
        h = float(rng.uniform(5.0, 60.0))
        cx = float(rng.uniform(w / 2, 224 - w / 2))
        cy = float(rng.uniform(h / 2, 224 - h / 2))
        boxes.append(Box(cx, cy, w, h))
    return boxes


def random_image_record(rng: np.random.Generator, n_regions: int,
                        d_feat: int, rec_id: str = "rand") -> ImageRecord:
    rec = ImageRecord(
        id=rec_id,
        image_width=224.0,
        image_height=224.0,
        boxes=random_boxes(rng, n_regions),
        features=rng.uniform(-1.0, 1.0, (n_regions, d_feat)),
    )
    rec.validate()
    return rec


def _random_attention_params(rng: np.random.Generator, d_model: int,
                             n_heads: int, d_g: int, *, gated: bool) -> AttentionParams:
    d_head = d_model // n_heads
    def w(*shape):
        return T.parameter(rng.uniform(-0.5, 0.5, shape))
    kwargs = dict(
        w_q=[w(d_model, d_head) for _ in range(n_heads)],
        w_k=[w(d_model, d_head) for _ in range(n_heads)],
        w_v=[w(d_model, d_head) for _ in range(n_heads)],
        w_geo=w(d_g, n_heads),
    )
    if gated:
        kwargs.update(gate_wq=w(d_model, d_model), gate_wv=w(d_model, d_model),
                      gate_b=w(d_model), info_wq=w(d_model, d_model),
                      info_wv=w(d_model, d_model), info_b=w(d_model))
    else:
        kwargs.update(out_w=w(d_model, d_model), out_b=w(d_model))
    return AttentionParams(**kwargs)


def _attention_param_dict(params: AttentionParams) -> dict:
    out = {}
    for h in range(params.n_heads):
        out[f"wq{h}"] = params.w_q[h]
        out[f"wk{h}"] = params.w_k[h]
        out[f"wv{h}"] = params.w_v[h]
    for name in ("w_geo", "gate_wq", "gate_wv", "gate_b",
                 "info_wq", "info_wv", "info_b", "out_w", "out_b"):
        t = getattr(params, name)
        if t is not None:
            out[name] = t
    return out


# ---------------------------------------------------------------------------
# Gradient suite
# ---------------------------------------------------------------------------

def _weighted(out: T.Tensor, rng: np.random.Generator) -> T.Tensor:
    """Project an op output to a scalar with fixed random weights, so a
    transposed or permuted gradient cannot cancel out."""
    w = T.tensor(rng.uniform(-1.0, 1.0, out.shape))
    return T.sum_all(T.mul(out, w))


def _check(name: str, params: dict, f, tol: float = 1e-4) -> CheckResult:
    report = T.finite_diff_check(f, params, h=1e-5, tol=tol)
    return CheckResult(name=name, max_err=report.max_rel_err, tol=tol)


def gradcheck_suite(seed: int = 0) -> list:
    """Finite-difference checks for every differentiable op and the full model."""
    rng = np.random.default_rng(seed)
    results = []

    a = T.parameter(rng.uniform(-2, 2, (3, 4)))
    b = T.parameter(rng.uniform(-2, 2, (3, 4)))
    col = T.parameter(rng.uniform(-2, 2, (3, 1)))
    row = T.parameter(rng.uniform(-2, 2, (4,)))
    for kind in ("add", "sub", "mul"):
        results.append(_check(
            f"elementwise_{kind}", {"a": a, "b": b},
            lambda k=kind: _weighted(T.elementwise(k, a, b), np.random.default_rng(1))))
    results.append(_check(
        "elementwise_mul_broadcast", {"a": a, "col": col, "row": row},
        lambda: _weighted(T.mul(T.add(a, row), col), np.random.default_rng(2))))
    for kind in ("sigmoid", "relu", "exp"):
        results.append(_check(
            f"elementwise_{kind}", {"a": a},
            lambda k=kind: _weighted(T.elementwise(k, a), np.random.default_rng(3))))
    pos = T.parameter(rng.uniform(0.5, 2.5, (3, 4)))
    results.append(_check(
        "elementwise_log", {"pos": pos},
        lambda: _weighted(T.log(pos), np.random.default_rng(4))))

    m1 = T.parameter(rng.uniform(-2, 2, (3, 4)))
    m2 = T.parameter(rng.uniform(-2, 2, (4, 5)))
    results.append(_check(
        "matmul_2d", {"m1": m1, "m2": m2},
        lambda: _weighted(T.matmul(m1, m2), np.random.default_rng(5))))
    b1 = T.parameter(rng.uniform(-2, 2, (2, 3, 4)))
    b2 = T.parameter(rng.uniform(-2, 2, (2, 4, 3)))
    results.append(_check(
        "matmul_batched", {"b1": b1, "b2": b2},
        lambda: _weighted(T.matmul(b1, b2), np.random.default_rng(6))))

    sm = T.parameter(rng.uniform(-2, 2, (4, 5)))
    results.append(_check(
        "softmax_rows", {"sm": sm},
        lambda: _weighted(T.softmax_rows(sm), np.random.default_rng(7))))
    mask = np.ones((4, 5), dtype=bool)
    mask[:, 3] = False
    mask[2, :2] = False
    results.append(_check(
        "softmax_rows_masked", {"sm": sm},
        lambda: _weighted(T.softmax_rows(sm, mask), np.random.default_rng(8))))

    lx = T.parameter(rng.uniform(-2, 2, (3, 6)))
    lg = T.parameter(rng.uniform(0.5, 1.5, (6,)))
    lb = T.parameter(rng.uniform(-0.5, 0.5, (6,)))
    results.append(_check(
        "layer_norm", {"lx": lx, "lg": lg, "lb": lb},
        lambda: _weighted(T.layer_norm(lx, lg, lb, 1e-5), np.random.default_rng(9))))

    table = T.parameter(rng.uniform(-2, 2, (7, 5)))
    ids = [3, 1, 3, 6]
    results.append(_check(
        "embedding_lookup", {"table": table},
        lambda: _weighted(T.embedding_lookup(table, ids), np.random.default_rng(10))))

    logits = T.parameter(rng.uniform(-2, 2, (5, 6)))
    targets = [2, 0, 5, 0, 1]
    results.append(_check(
        "cross_entropy", {"logits": logits},
        lambda: T.cross_entropy(logits, targets, pad_id=0)))
    results.append(_check(
        "picked_log_probs", {"logits": logits},
        lambda: _weighted(T.picked_log_probs(logits, targets), np.random.default_rng(12))))

    st = [T.parameter(rng.uniform(-2, 2, (3, 4))) for _ in range(3)]
    results.append(_check(
        "reshape_transpose_stack", {f"st{i}": t for i, t in enumerate(st)},
        lambda: _weighted(T.reshape(T.transpose(T.stack(st), (1, 0, 2)), (3, 12)),
                          np.random.default_rng(13))))

    geo = GeometryConfig(d_g=16)
    boxes = random_boxes(np.random.default_rng(seed + 1), 3)
    gated = _random_attention_params(np.random.default_rng(seed + 2), 8, 2, 16, gated=True)
    x_in = T.parameter(np.random.default_rng(seed + 3).uniform(-1, 1, (3, 8)))
    results.append(_check(
        "geometric_weights", {"w_geo": gated.w_geo},
        lambda: _weighted(geometric_weights(boxes, gated, geo), np.random.default_rng(14))))
    attended = T.parameter(np.random.default_rng(seed + 4).uniform(-1, 1, (3, 8)))
    results.append(_check(
        "aoa_gate", dict(_attention_param_dict(gated), x=x_in, att=attended),
        lambda: _weighted(aoa_gate(x_in, attended, gated), np.random.default_rng(15))))
    results.append(_check(
        "multi_head_object_aoa_gated", dict(_attention_param_dict(gated), x=x_in),
        lambda: _weighted(multi_head_object_aoa(x_in, boxes, gated, geo, True),
                          np.random.default_rng(16))))
    plain = _random_attention_params(np.random.default_rng(seed + 5), 8, 2, 16, gated=False)
    results.append(_check(
        "multi_head_object_aoa_plain", dict(_attention_param_dict(plain), x=x_in),
        lambda: _weighted(multi_head_object_aoa(x_in, boxes, plain, geo, False),
                          np.random.default_rng(17))))

    results.append(_full_model_gradcheck(seed))
    return results


def _full_model_gradcheck(seed: int) -> CheckResult:
    """Cross-entropy loss of the whole captioner against central differences."""
    rng = np.random.default_rng(seed + 10)
    cfg = tiny_model_config()
    ckpt = init_model(cfg)
    record = random_image_record(rng, 3, cfg.d_feat)
    caption = [BOS_ID, 5, 7, 4, EOS_ID]

    def loss_fn():
        memory = encode(record, ckpt)
        logits = decode_logits(memory, caption[:-1], ckpt)
        return T.cross_entropy(logits, caption[1:], pad_id=0)

    report = T.finite_diff_check(loss_fn, ckpt.params, h=1e-5, tol=1e-4)
    return CheckResult(name="full_model", max_err=report.max_rel_err, tol=1e-4)


# ---------------------------------------------------------------------------
# Invariants suite
# ---------------------------------------------------------------------------

def vanilla_attention_reference(x: np.ndarray, params: AttentionParams) -> np.ndarray:
    """Independent plain multi-head attention in raw numpy."""
    heads = []
    d_head = params.d_head
    for wq, wk, wv in zip(params.w_q, params.w_k, params.w_v):
        q = x @ wq.data
        k = x @ wk.data
        v = x @ wv.data
        scores = q @ k.T / math.sqrt(d_head)
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights = e / e.sum(axis=1, keepdims=True)
        heads.append(weights @ v)
    return np.concatenate(heads, axis=1) @ params.out_w.data + params.out_b.data


def invariants_suite(seed: int = 0, n_pairs: int = 1000) -> list:
    rng = np.random.default_rng(seed)
    results = []
    geo = GeometryConfig(d_g=16)

    # Pair-geometry invariance under translation and uniform scaling.
    t_err = s_err = 0.0
    for _ in range(n_pairs):
        m, n = random_boxes(rng, 2)
        lam = relative_geometry(m, n, geo)
        dx, dy = rng.uniform(-500, 500, 2)
        lam_t = relative_geometry(m.shifted(dx, dy), n.shifted(dx, dy), geo)
        t_err = max(t_err, float(np.abs(lam - lam_t).max()))
        s = float(rng.uniform(0.1, 10.0))
        lam_s = relative_geometry(m.scaled(s), n.scaled(s), geo)
        s_err = max(s_err, float(np.abs(lam - lam_s).max()))
    results.append(CheckResult("lambda_translation_invariance", t_err, 1e-12))
    results.append(CheckResult("lambda_scale_invariance", s_err, 1e-9))

    # Geometric weights are non-negative, so their exp only amplifies.
    params = _random_attention_params(rng, 8, 2, 16, gated=True)
    boxes = random_boxes(rng, 4)
    omega_w = geometric_weights(boxes, params, geo)
    results.append(CheckResult("geometric_weights_nonneg",
                               max(0.0, -float(omega_w.data.min())), 0.0))
    omega_a = T.tensor(rng.uniform(-2, 2, omega_w.shape))
    amplified = combined_scores(omega_a, omega_w)
    shrink = float((np.abs(omega_a.data) - np.abs(amplified.data)).max())
    results.append(CheckResult("combined_scores_amplifies", max(0.0, shrink), 0.0))
    identity = combined_scores(omega_a, T.tensor(np.zeros(omega_w.shape)))
    results.append(CheckResult("combined_scores_zero_geometry",
                               float(np.abs(identity.data - omega_a.data).max()), 0.0))

    # Row-stochastic softmax.
    sm = T.softmax_rows(T.tensor(rng.uniform(-30, 30, (50, 7))))
    row_err = float(np.abs(sm.data.sum(axis=1) - 1.0).max())
    range_err = max(0.0, float(-sm.data.min()), float(sm.data.max() - 1.0))
    results.append(CheckResult("softmax_rows_sum_to_one", row_err, 1e-9))
    results.append(CheckResult("softmax_rows_in_unit_interval", range_err, 0.0))

    # Gate output is bounded by the information vector.
    x_in = T.tensor(rng.uniform(-2, 2, (4, 8)))
    att = T.tensor(rng.uniform(-2, 2, (4, 8)))
    gate_out = aoa_gate(x_in, att, params)
    info = (x_in.data @ params.info_wq.data + att.data @ params.info_wv.data
            + params.info_b.data)
    bound_err = float((np.abs(gate_out.data) - np.abs(info)).max())
    results.append(CheckResult("aoa_gate_bounded_by_info", max(0.0, bound_err), 1e-15))

    # Value-level matmul associativity.
    a3, b3, c3 = (rng.uniform(-2, 2, (4, 4)) for _ in range(3))
    left = T.matmul(T.matmul(T.tensor(a3), T.tensor(b3)), T.tensor(c3)).data
    right = T.matmul(T.tensor(a3), T.matmul(T.tensor(b3), T.tensor(c3))).data
    results.append(CheckResult("matmul_associativity",
                               float(np.abs(left - right).max()), 1e-9))

    # Encoder region-permutation equivariance.
    cfg = tiny_model_config()
    ckpt = init_model(cfg)
    record = random_image_record(rng, 4, cfg.d_feat)
    base = encode(record, ckpt).memory.data
    perm = rng.permutation(4)
    permuted = ImageRecord(id="perm", image_width=record.image_width,
                           image_height=record.image_height,
                           boxes=[record.boxes[i] for i in perm],
                           features=record.features[perm])
    out_perm = encode(permuted, ckpt).memory.data
    results.append(CheckResult("encode_permutation_equivariance",
                               float(np.abs(out_perm - base[perm]).max()), 1e-9))

    # Decoder causality: future tokens cannot change earlier logits.
    memory = encode(record, ckpt)
    prefix = [BOS_ID, 4, 6, 5]
    full = decode_logits(memory, prefix, ckpt).data
    tampered = decode_logits(memory, prefix[:2] + [9, 8], ckpt).data
    results.append(CheckResult("decoder_causality",
                               float(np.abs(full[:2] - tampered[:2]).max()), 0.0))

    # Greedy decoding is beam search with width 1.
    beam_err = 0.0
    for trial in range(20):
        cfg_t = tiny_model_config(seed=100 + trial)
        ckpt_t = init_model(cfg_t)
        rec_t = random_image_record(rng, int(rng.integers(1, 5)), cfg_t.d_feat)
        if greedy_decode(rec_t, ckpt_t) != beam_decode(rec_t, ckpt_t, 1):
            beam_err = 1.0
    results.append(CheckResult("beam1_equals_greedy", beam_err, 0.0))

    # Reduction to a vanilla attention layer when both additions are off.
    plain = _random_attention_params(rng, 8, 2, 16, gated=False)
    plain.w_geo.data[:] = 0.0
    x_red = T.tensor(rng.uniform(-1, 1, (5, 8)))
    red_boxes = random_boxes(rng, 5)
    ours = multi_head_object_aoa(x_red, red_boxes, plain, geo, False).data
    ref = vanilla_attention_reference(x_red.data, plain)
    results.append(CheckResult("reduces_to_vanilla_attention",
                               float(np.abs(ours - ref).max()), 1e-9))

    # Gradients accumulate additively across repeated use (k=3).
    xk = T.parameter(rng.uniform(-2, 2, (3,)))
    c1 = T.tensor(rng.uniform(-2, 2, (3,)))
    c2 = T.tensor(rng.uniform(-2, 2, (3,)))
    c3 = T.tensor(rng.uniform(-2, 2, (3,)))
    T.backward(T.sum_all(T.add(T.add(T.mul(xk, c1), T.mul(xk, c2)), T.mul(xk, c3))))
    acc_err = float(np.abs(xk.grad - (c1.data + c2.data + c3.data)).max())
    results.append(CheckResult("backward_accumulates_k_uses", acc_err, 1e-12))

    # Warmup schedule is continuous at its peak.
    lr_err = abs(noam_lr(400, 64, 400)
                 - 64 ** -0.5 * 400 ** -0.5)
    results.append(CheckResult("noam_continuity_at_warmup", lr_err, 0.0))

    # Adam from rest with zero gradients leaves parameters alone.
    p = {"w": T.parameter(rng.uniform(-1, 1, (4,)))}
    before = p["w"].data.copy()
    state = OptimizerState.for_params(p)
    adam_step(p, {"w": np.zeros(4)}, state, lr=0.1)
    results.append(CheckResult("adam_zero_grad_fixed_point",
                               float(np.abs(p["w"].data - before).max()), 0.0))
    return results


# ---------------------------------------------------------------------------
# Metric oracles
# ---------------------------------------------------------------------------

def _naive_ngram_list(seq: Sequence[str], n: int) -> list:
    return [tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)]


def naive_bleu(candidates, references, max_n: int) -> float:
    """Corpus BLEU recomputed with plain list counting."""
    cand_total = 0
    ref_total = 0
    matched = {n: 0 for n in range(1, max_n + 1)}
    total = {n: 0 for n in range(1, max_n + 1)}
    for cand, refs in zip(candidates, references):
        cand_total += len(cand)
        best_len = None
        for ref in refs:
            if best_len is None:
                best_len = len(ref)
            elif abs(len(ref) - len(cand)) < abs(best_len - len(cand)):
                best_len = len(ref)
            elif abs(len(ref) - len(cand)) == abs(best_len - len(cand)):
                best_len = min(best_len, len(ref))
        ref_total += best_len
        for n in range(1, max_n + 1):
            grams = _naive_ngram_list(cand, n)
            total[n] += len(grams)
            for gram in set(grams):
                have = grams.count(gram)
                allow = max((_naive_ngram_list(ref, n).count(gram) for ref in refs),
                            default=0)
                matched[n] += min(have, allow)
    if cand_total == 0:
        return 0.0
    product = 1.0
    for n in range(1, max_n + 1):
        if total[n] == 0 or matched[n] == 0:
            return 0.0
        product *= (matched[n] / total[n]) ** (1.0 / max_n)
    penalty = math.exp(min(0.0, 1.0 - ref_total / cand_total))
    return penalty * product


def naive_cider(candidate, refs, stats) -> float:
    """Consensus score recomputed with explicit dictionaries."""
    score_sum = 0.0
    for n in range(1, 5):
        per_ref = []
        cand_vec = {}
        for gram in _naive_ngram_list(candidate, n):
            cand_vec[gram] = cand_vec.get(gram, 0.0) + 1.0
        for gram in cand_vec:
            df = stats.doc_freq[n - 1].get(gram, 0)
            cand_vec[gram] *= math.log(stats.n_docs / max(df, 1))
        for ref in refs:
            ref_vec = {}
            for gram in _naive_ngram_list(ref, n):
                ref_vec[gram] = ref_vec.get(gram, 0.0) + 1.0
            for gram in ref_vec:
                df = stats.doc_freq[n - 1].get(gram, 0)
                ref_vec[gram] *= math.log(stats.n_docs / max(df, 1))
            nu = math.sqrt(sum(v * v for v in cand_vec.values()))
            nv = math.sqrt(sum(v * v for v in ref_vec.values()))
            if nu == 0.0 or nv == 0.0:
                per_ref.append(0.0)
            else:
                dot = sum(cand_vec[g] * ref_vec.get(g, 0.0) for g in cand_vec)
                per_ref.append(dot / (nu * nv))
        score_sum += sum(per_ref) / len(per_ref)
    return 10.0 * score_sum / 4.0


def naive_rouge_l(candidate, refs) -> float:
    """LCS F1 recomputed with memoized recursion."""
    cand = tuple(candidate)

    @lru_cache(maxsize=None)
    def lcs(i: int, j: int, ref) -> int:
        if i == 0 or j == 0:
            return 0
        if cand[i - 1] == ref[j - 1]:
            return lcs(i - 1, j - 1, ref) + 1
        return max(lcs(i - 1, j, ref), lcs(i, j - 1, ref))

    best = 0.0
    for ref in refs:
        ref = tuple(ref)
        length = lcs(len(cand), len(ref), ref)
        if length == 0 or not cand:
            continue
        p = length / len(cand)
        r = length / len(ref)
        best = max(best, 2 * p * r / (p + r))
    return best


def metrics_oracle_suite(seed: int = 0, n_pairs: int = 500) -> list:
    """Random small-sequence cross-checks plus the frozen hand examples."""
    rng = np.random.default_rng(seed)
    alphabet = ["a", "b", "c"]

    def rand_seq():
        length = int(rng.integers(1, 7))
        return [alphabet[int(rng.integers(3))] for _ in range(length)]

    corpus = [[rand_seq() for _ in range(int(rng.integers(1, 4)))]
              for _ in range(n_pairs)]
    stats = build_corpus_stats(corpus)
    cands = [rand_seq() for _ in range(n_pairs)]

    bleu_err = cider_err = rouge_err = 0.0
    for cand, refs in zip(cands, corpus):
        for n in range(1, 5):
            bleu_err = max(bleu_err, abs(bleu([cand], [refs], n)
                                         - naive_bleu([cand], [refs], n)))
        cider_err = max(cider_err, abs(cider(cand, refs, stats)
                                       - naive_cider(cand, refs, stats)))
        rouge_err = max(rouge_err, abs(rouge_l(cand, refs)
                                       - naive_rouge_l(cand, refs)))
    corpus_bleu_err = 0.0
    for n in range(1, 5):
        corpus_bleu_err = max(corpus_bleu_err,
                              abs(bleu(cands, corpus, n) - naive_bleu(cands, corpus, n)))

    results = [
        CheckResult("bleu_vs_bruteforce", bleu_err, 1e-12),
        CheckResult("bleu_corpus_vs_bruteforce", corpus_bleu_err, 1e-12),
        CheckResult("cider_vs_bruteforce", cider_err, 1e-12),
        CheckResult("rouge_l_vs_bruteforce", rouge_err, 1e-12),
    ]

    # Frozen hand-worked examples.
    clipped = bleu([["the"] * 7],
                   [[["the", "cat", "is", "on", "the", "mat"]]], 1)
    results.append(CheckResult("bleu_hand_clipping", abs(clipped - 2.0 / 7.0), 1e-12))
    rl = rouge_l(["a", "c", "d"], [["a", "b", "c", "d"]])
    results.append(CheckResult("rouge_l_hand_example", abs(rl - 6.0 / 7.0), 1e-12))
    two_img = [[["w", "x", "y", "z"]], [["p", "q", "r", "s"]]]
    st = build_corpus_stats(two_img)
    perfect = cider(["w", "x", "y", "z"], two_img[0], st)
    results.append(CheckResult("cider_perfect_match", abs(perfect - 10.0), 1e-12))
    return results


_SUITES = {
    "gradcheck": gradcheck_suite,
    "invariants": invariants_suite,
    "metrics-oracle": metrics_oracle_suite,
}


def run_suites(which: str = "all") -> list:
    """Run one named suite or all of them, returning every check result."""
    names = list(_SUITES) if which == "all" else [which]
    results = []
    for name in names:
        results.extend(_SUITES[name]())
    return results
