"""Two-stage training: teacher-forced cross-entropy, then self-critical refinement.

Stage one minimizes next-token cross-entropy with Adam under the
inverse-square-root warmup schedule. Stage two treats the decoder as a
stochastic policy: for each image it samples one caption token by
token, scores it and the greedy caption with the consensus metric, and
ascends the advantage-weighted log-likelihood of the sample. The
greedy caption is the baseline, so an update only happens when
sampling found something better or worse than the model's own best
guess. Consensus idf statistics are frozen from the training
references before the stage starts.

Everything is seed-deterministic: shuffling, caption choice, dropout,
and sampling all draw from generators derived from the run seed, and
the emitted log lines are reproducible token for token.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import BOS_ID, EOS_ID, PAD_ID, PairedExample, Vocabulary, encode_caption
from .errors import ContractError, ValidationError
from .metrics import bleu, build_corpus_stats, cider, rouge_l, tokenize
from .model import (
    Checkpoint,
    ModelConfig,
    beam_decode,
    clone_checkpoint,
    decode_logits,
    encode,
    greedy_decode,
    init_model,
)
from .tensor import (
    Tensor,
    add,
    backward,
    cross_entropy,
    no_grad,
    picked_log_probs,
    scale,
    sum_all,
    zero_grads,
)

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "RewardRecord",
    "noam_lr",
    "adam_step",
    "clip_global_norm",
    "evaluate_split",
    "train_xe_epoch",
    "scst_step",
    "select_best",
    "run_two_stage",
]

GRAD_CLIP_NORM = 1.0
METRIC_KEYS = ("bleu1", "bleu2", "bleu3", "bleu4", "bleu_avg4", "cider", "rouge_l")


@dataclass
class TrainConfig:
    """Knobs for both stages; defaults suit desk-scale runs."""

    batch_size: int = 32
    warmup_steps: int = 400
    xe_max_epochs: int = 100
    scst_lr: float = 5e-6
    scst_max_steps: int = 200
    eval_every: int = 10
    patience: int = 3
    selection_metric: str = "cider"
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")
        if self.scst_lr <= 0:
            raise ValidationError("scst_lr must be positive")
        if self.patience < 1:
            raise ValidationError("patience must be at least 1")
        if self.warmup_steps < 1:
            raise ValidationError("warmup_steps must be at least 1")
        if self.eval_every < 1:
            raise ValidationError("eval_every must be at least 1")
        if self.selection_metric not in ("cider", "bleu_avg4"):
            raise ValidationError("selection_metric must be cider or bleu_avg4")


@dataclass
class OptimizerState:
    """Adam accumulators, one pair of moment arrays per parameter."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def for_params(cls, params: dict) -> "OptimizerState":
        return cls(m={k: np.zeros_like(t.data) for k, t in params.items()},
                   v={k: np.zeros_like(t.data) for k, t in params.items()})

    def save(self, path) -> None:
        arrays = {f"m::{k}": v for k, v in self.m.items()}
        arrays.update({f"v::{k}": v for k, v in self.v.items()})
        arrays["scalars"] = np.array([self.step, self.beta1, self.beta2, self.eps_adam])
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "OptimizerState":
        data = np.load(path)
        scalars = data["scalars"]
        state = cls(m={}, v={}, step=int(scalars[0]), beta1=float(scalars[1]),
                    beta2=float(scalars[2]), eps_adam=float(scalars[3]))
        for key in data.files:
            if key.startswith("m::"):
                state.m[key[3:]] = data[key]
            elif key.startswith("v::"):
                state.v[key[3:]] = data[key]
        return state


@dataclass
class RewardRecord:
    """Outcome of one self-critical episode."""

    sampled_ids: list
    greedy_ids: list
    sampled_reward: float
    greedy_reward: float

    @property
    def advantage(self) -> float:
        return self.sampled_reward - self.greedy_reward


def noam_lr(step: int, d_model: int, warmup_steps: int) -> float:
    """Inverse-sqrt schedule with linear warmup; peaks at step == warmup."""
    if step < 1:
        raise ContractError("schedule step starts at 1")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


def clip_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is <= max_norm.

    Returns the pre-clip norm.
    """
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if total > max_norm and total > 0:
        factor = max_norm / total
        for g in grads:
            g *= factor
    return total


def adam_step(params: dict, grads: dict, state: OptimizerState, lr: float) -> None:
    """One bias-corrected Adam update over a named parameter map."""
    if lr <= 0:
        raise ContractError("learning rate must be positive")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValidationError(f"gradient shape mismatch for {name}")
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1 ** t)
        v_hat = state.v[name] / (1 - b2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps_adam)


def _decode_fn(ckpt: Checkpoint, beam_width: int):
    if beam_width <= 1:
        return lambda rec: greedy_decode(rec, ckpt)
    return lambda rec: beam_decode(rec, ckpt, beam_width)


def evaluate_split(ckpt: Checkpoint, examples: Sequence[PairedExample],
                   vocab: Vocabulary, beam_width: int = 1) -> dict:
    """Decode every image and score against its references.

    Consensus idf comes from this split's own references. Returns a
    metric-name to value map covering the BLEU family, the consensus
    score, and the LCS F-measure.
    """
    if not examples:
        raise ValidationError("cannot evaluate an empty split")
    decode = _decode_fn(ckpt, beam_width)
    candidates = [vocab.tokens_of(decode(ex.record)) for ex in examples]
    references = [[tokenize(c) for c in ex.captions] for ex in examples]
    stats = build_corpus_stats(references)
    scores = {f"bleu{n}": bleu(candidates, references, n) for n in range(1, 5)}
    scores["bleu_avg4"] = sum(scores[f"bleu{n}"] for n in range(1, 5)) / 4.0
    scores["cider"] = float(np.mean([cider(c, r, stats)
                                     for c, r in zip(candidates, references)]))
    scores["rouge_l"] = float(np.mean([rouge_l(c, r)
                                       for c, r in zip(candidates, references)]))
    return scores


def _xe_batch_loss(ckpt: Checkpoint, batch: Sequence[tuple],
                   dropout_rng: np.random.Generator) -> tuple:
    """Token-weighted cross-entropy over a batch of (record, ids) pairs."""
    lengths = [len(ids) - 1 for _, ids in batch]
    total_tokens = sum(lengths)
    loss = None
    for (record, ids), t_len in zip(batch, lengths):
        memory = encode(record, ckpt, train=True, rng=dropout_rng)
        logits = decode_logits(memory, ids[:-1], ckpt, train=True, rng=dropout_rng)
        term = scale(cross_entropy(logits, ids[1:], PAD_ID), t_len / total_tokens)
        loss = term if loss is None else add(loss, term)
    return loss, total_tokens


def train_xe_epoch(ckpt: Checkpoint, examples: Sequence[PairedExample],
                   vocab: Vocabulary, cfg: TrainConfig, opt: OptimizerState,
                   rng: np.random.Generator,
                   dropout_rng: np.random.Generator) -> float:
    """One pass of shuffled teacher-forced minibatches; returns mean loss.

    When an image has several references, one is drawn uniformly for
    this epoch. The learning rate follows the warmup schedule on the
    global optimizer step.
    """
    if not examples:
        raise ValidationError("training split is empty")
    mcfg = ckpt.config
    chosen = []
    for ex in examples:
        pick = int(rng.integers(len(ex.captions))) if len(ex.captions) > 1 else 0
        ids = encode_caption(ex.captions[pick], vocab, mcfg.max_caption_len)
        chosen.append((ex.record, ids))
    order = rng.permutation(len(chosen))
    epoch_loss = 0.0
    epoch_tokens = 0
    for start in range(0, len(chosen), cfg.batch_size):
        batch = [chosen[i] for i in order[start:start + cfg.batch_size]]
        zero_grads(ckpt.params.values())
        loss, n_tokens = _xe_batch_loss(ckpt, batch, dropout_rng)
        backward(loss)
        grads = {k: t.grad_array() for k, t in ckpt.params.items()}
        clip_global_norm(list(grads.values()), GRAD_CLIP_NORM)
        lr = noam_lr(opt.step + 1, mcfg.d_model, cfg.warmup_steps)
        adam_step(ckpt.params, grads, opt, lr)
        ckpt.step = opt.step
        epoch_loss += loss.item() * n_tokens
        epoch_tokens += n_tokens
    return epoch_loss / epoch_tokens


def _sample_caption(memory, ckpt: Checkpoint, rng: np.random.Generator) -> list:
    """Draw one caption by per-step multinomial sampling; returns emitted ids."""
    cfg = ckpt.config
    prefix = [BOS_ID]
    emitted = []
    while len(prefix) < cfg.max_caption_len:
        logits = decode_logits(memory, prefix, ckpt)
        row = logits.data[-1]
        z = np.exp(row - row.max())
        probs = z / z.sum()
        tok = int(rng.choice(cfg.vocab_size, p=probs))
        emitted.append(tok)
        prefix.append(tok)
        if tok == EOS_ID:
            break
    return emitted


def _caption_reward(ids: Sequence[int], refs_tokens, vocab: Vocabulary,
                    stats) -> float:
    return cider(vocab.tokens_of(ids), refs_tokens, stats)


def scst_step(ckpt: Checkpoint, batch: Sequence[PairedExample],
              vocab: Vocabulary, cfg: TrainConfig, opt: OptimizerState,
              corpus_stats, rng: np.random.Generator) -> list:
    """One self-critical update over a batch of images.

    Requires a model that has been through cross-entropy training.
    Rewards are treated as constants; only the sampled tokens'
    log-probabilities carry gradient.
    """
    if not (ckpt.stage == "scst" or (ckpt.stage == "xe" and ckpt.step > 0)):
        raise ContractError("self-critical stage needs a cross-entropy trained model")
    if not batch:
        raise ValidationError("batch is empty")
    records = []
    terms = []
    zero_grads(ckpt.params.values())
    for ex in batch:
        refs_tokens = [tokenize(c) for c in ex.captions]
        with no_grad():
            memory_frozen = encode(ex.record, ckpt)
            sampled = _sample_caption(memory_frozen, ckpt, rng)
        greedy_ids = greedy_decode(ex.record, ckpt)
        r_sample = _caption_reward(sampled, refs_tokens, vocab, corpus_stats)
        r_greedy = _caption_reward(greedy_ids, refs_tokens, vocab, corpus_stats)
        rec = RewardRecord(sampled_ids=sampled, greedy_ids=greedy_ids,
                           sampled_reward=r_sample, greedy_reward=r_greedy)
        records.append(rec)
        memory = encode(ex.record, ckpt)
        logits = decode_logits(memory, [BOS_ID] + sampled[:-1], ckpt)
        log_prob = sum_all(picked_log_probs(logits, sampled))
        terms.append(scale(log_prob, -rec.advantage / len(batch)))
    loss = terms[0]
    for term in terms[1:]:
        loss = add(loss, term)
    backward(loss)
    grads = {k: t.grad_array() for k, t in ckpt.params.items()}
    clip_global_norm(list(grads.values()), GRAD_CLIP_NORM)
    adam_step(ckpt.params, grads, opt, cfg.scst_lr)
    ckpt.step += 1
    ckpt.stage = "scst"
    return records


def select_best(candidates: Sequence[Checkpoint], metric: str) -> Checkpoint:
    """Highest dev score wins; ties go to the earliest (least trained) step."""
    if not candidates:
        raise ContractError("no candidates to select from")
    for c in candidates:
        if metric not in c.dev_scores:
            raise ContractError(f"candidate at step {c.step} lacks metric {metric!r}")
    return min(candidates, key=lambda c: (-c.dev_scores[metric], c.step))


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _log_line(**fields) -> str:
    return " ".join(f"{k}={_fmt(v)}" for k, v in fields.items())


def run_two_stage(train_split: Sequence[PairedExample],
                  dev_split: Sequence[PairedExample],
                  mcfg: ModelConfig, tcfg: TrainConfig,
                  vocab: Vocabulary,
                  stages: tuple = ("xe", "scst"),
                  start: Optional[Checkpoint] = None) -> tuple:
    """Full training pipeline; returns (best checkpoint, log lines).

    Each stage evaluates on the dev split and stops after ``patience``
    evaluations without improvement on the selection metric; the best
    checkpoint is kept retrospectively. With an empty dev split there
    is no early stopping and the last checkpoint wins. The second
    stage starts from the first stage's best model; ``start`` lets a
    caller resume from a saved checkpoint instead.
    """
    tcfg.validate()
    train_ids = {ex.record.id for ex in train_split}
    if any(ex.record.id in train_ids for ex in dev_split):
        raise ValidationError("train and dev splits share image ids")
    if not train_split:
        raise ValidationError("training split is empty")
    log: list = []
    shuffle_rng = np.random.default_rng([tcfg.seed, 0])
    dropout_rng = np.random.default_rng([tcfg.seed, 1])
    sample_rng = np.random.default_rng([tcfg.seed, 2])

    ckpt = clone_checkpoint(start) if start is not None else init_model(mcfg)
    metric = tcfg.selection_metric

    def dev_eval(c: Checkpoint) -> dict:
        scores = evaluate_split(c, dev_split, vocab) if dev_split else {}
        c.dev_scores = dict(scores)
        return scores

    best = ckpt
    if "xe" in stages:
        opt = OptimizerState.for_params(ckpt.params)
        opt.step = ckpt.step
        best, bad = None, 0
        for epoch in range(1, tcfg.xe_max_epochs + 1):
            loss = train_xe_epoch(ckpt, train_split, vocab, tcfg, opt,
                                  shuffle_rng, dropout_rng)
            scores = dev_eval(ckpt)
            lr = noam_lr(max(opt.step, 1), mcfg.d_model, tcfg.warmup_steps)
            log.append(_log_line(stage="xe", epoch=epoch, step=ckpt.step, lr=lr,
                                 loss=loss, **{f"dev_{k}": v for k, v in scores.items()}))
            if not dev_split:
                best = ckpt
                continue
            if best is None or scores[metric] > best.dev_scores[metric]:
                best = clone_checkpoint(ckpt)
                bad = 0
            else:
                bad += 1
                if bad >= tcfg.patience:
                    break
        best = clone_checkpoint(best if best is not None else ckpt)

    if "scst" in stages:
        ckpt = clone_checkpoint(best)
        if ckpt.stage == "xe" and ckpt.step == 0:
            raise ContractError("self-critical stage needs a cross-entropy trained model")
        references = [[tokenize(c) for c in ex.captions] for ex in train_split]
        corpus_stats = build_corpus_stats(references)
        opt = OptimizerState.for_params(ckpt.params)
        if not ckpt.dev_scores and dev_split:
            dev_eval(ckpt)
        candidates = [clone_checkpoint(ckpt)]
        bad = 0
        order: list = []
        for step in range(1, tcfg.scst_max_steps + 1):
            if len(order) < tcfg.batch_size:
                order += list(shuffle_rng.permutation(len(train_split)))
            batch = [train_split[i] for i in order[:tcfg.batch_size]]
            order = order[tcfg.batch_size:]
            records = scst_step(ckpt, batch, vocab, tcfg, opt, corpus_stats,
                                sample_rng)
            mean_reward = float(np.mean([r.sampled_reward for r in records]))
            fields = dict(stage="scst", step=ckpt.step, lr=tcfg.scst_lr,
                          mean_reward=mean_reward)
            if dev_split and step % tcfg.eval_every == 0:
                scores = dev_eval(ckpt)
                fields.update({f"dev_{k}": v for k, v in scores.items()})
                candidates.append(clone_checkpoint(ckpt))
                if scores[metric] > max(c.dev_scores[metric] for c in candidates[:-1]):
                    bad = 0
                else:
                    bad += 1
                log.append(_log_line(**fields))
                if bad >= tcfg.patience:
                    break
                continue
            log.append(_log_line(**fields))
        best = (select_best(candidates, metric) if dev_split else
                clone_checkpoint(ckpt))
    return best, log
