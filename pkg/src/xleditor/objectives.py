"""Training losses and the training loop."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .encoding import ComposedBatch, SpanSample, Vocabulary, collate, compose, sample_interval
from .model import ModelConfig, XLEditorModel, init_params, save_model_bundle
from .numerics import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    steps: int = 5000
    lr: float = 3e-4
    warmup: int = 200
    seed: int = 0
    lambda_ins: float = 1.0
    lambda_cls: float = 1.0
    strict_intervals: bool = False
    l2r_mode: bool = False
    clip: float = 1.0
    log_every: int = 50
    checkpoint_every: int = 0
    min_doc_len: int = 3
    record_tps: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 0 or self.log_every < 1:
            raise ValueError("batch_size, steps and log_every must be positive")
        if self.lambda_ins < 0 or self.lambda_cls < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossReport:
    step: int
    ins_nll: float
    cls_ce: float
    tps: float

    def to_json(self, with_tps: bool = True) -> str:
        return json.dumps({"step": self.step, "ins_nll": self.ins_nll, "cls_ce": self.cls_ce,
                           "tps": self.tps if with_tps else None})


def insertion_loss(model: XLEditorModel, batch: ComposedBatch,
                   rng: np.random.Generator | None = None) -> tuple[Tensor, int]:
    """Summed span NLL per row (EOI slot included outside l2r), averaged over rows.

    Also returns the number of predicted tokens.
    """
    logp, plan = model.forward_train(batch, rng)
    picked = nx.gather_last(logp, plan.targets[..., None])
    mask = plan.qvalid[..., None].astype(logp.dtype)
    total = nx.sum_all(nx.mul(picked, mask))
    B = batch.tokens.shape[0]
    return nx.scale(total, -1.0 / B), int(plan.qvalid.sum())


def style_loss(model: XLEditorModel, rows: Sequence[Sequence[int]], labels: Sequence[int],
               rng: np.random.Generator | None = None) -> Tensor:
    """Mean cross-entropy of the style classifier."""
    M = model.config.n_styles
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= M):
        raise ValueError(f"style label outside [0, {M})")
    logp = nx.log_softmax(model.style_logits(rows, rng))
    picked = nx.gather_last(logp, labels[:, None])
    return nx.scale(nx.mean_all(picked), -1.0)


def compose_batch(docs: Sequence[Sequence[int]], vocab: Vocabulary, rng: np.random.Generator,
                  styles: Sequence[int] | None = None, strict: bool = False,
                  l2r: bool = False) -> ComposedBatch:
    rows = []
    for k, x in enumerate(docs):
        i, j = sample_interval(len(x), rng, strict=strict)
        s = None if styles is None else styles[k]
        rows.append(compose(SpanSample(tuple(x), i, j, s), vocab, conditional=s is not None, l2r=l2r))
    return collate(rows, pad_id=vocab.pad_id, styles=styles, l2r=l2r)


def combined_loss(model: XLEditorModel, batch: ComposedBatch | None, cls_rows, cls_labels,
                  cfg: TrainConfig, rng=None) -> tuple[Tensor, float, float, int]:
    terms = []
    ins_val, cls_val, n_tok = 0.0, 0.0, 0
    if batch is not None and cfg.lambda_ins > 0:
        ins, n_tok = insertion_loss(model, batch, rng)
        ins_val = float(ins.data) * batch.tokens.shape[0] / max(n_tok, 1)
        terms.append(nx.scale(ins, cfg.lambda_ins))
    if cls_rows is not None and cfg.lambda_cls > 0 and model.config.n_styles > 0:
        cl = style_loss(model, cls_rows, cls_labels, rng)
        cls_val = float(cl.data)
        terms.append(nx.scale(cl, cfg.lambda_cls))
    if not terms:
        raise ValueError("nothing to optimise: both loss weights are zero")
    loss = terms[0] if len(terms) == 1 else nx.add(terms[0], terms[1])
    return loss, ins_val, cls_val, n_tok


def lr_at(step: int, cfg: TrainConfig) -> float:
    if cfg.warmup > 0 and step < cfg.warmup:
        return cfg.lr * (step + 1) / cfg.warmup
    return cfg.lr


def train(docs: Sequence[Sequence[int]], vocab: Vocabulary, train_cfg: TrainConfig,
          model_cfg: ModelConfig, styles: Sequence[int] | None = None,
          checkpoint_path: str | Path | None = None, metrics_path: str | Path | None = None,
          on_report: Callable[[LossReport], None] | None = None,
          model: XLEditorModel | None = None) -> tuple[XLEditorModel, list[LossReport]]:
    """Fit a model on token-id documents; deterministic for a fixed seed.

    With ``styles`` the insertion objective is style-conditional and the style
    classifier head is trained alongside it.
    """
    if model_cfg.l2r != train_cfg.l2r_mode:
        model_cfg = ModelConfig(**{**model_cfg.__dict__, "l2r": train_cfg.l2r_mode})
    keep = [k for k, x in enumerate(docs) if len(x) >= train_cfg.min_doc_len]
    if not keep:
        raise ValueError("corpus has no document long enough to train on")
    if styles is not None and model_cfg.n_styles < 1:
        raise ValueError("styled corpus needs a model with n_styles > 0")
    seed = train_cfg.seed
    if model is None:
        model = XLEditorModel(model_cfg, init_params(model_cfg, nx.spawn_rng(seed, 0)))
    data_rng = nx.spawn_rng(seed, 1)
    drop_rng = nx.spawn_rng(seed, 2) if model_cfg.dropout > 0 else None
    opt = nx.adam_init(model.params, lr=train_cfg.lr)
    reports: list[LossReport] = []
    metrics = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    order: list[int] = []
    win_ins, win_cls, win_tok, win_t0 = 0.0, 0.0, 0, time.perf_counter()
    win_n = 0
    try:
        for step in range(1, train_cfg.steps + 1):
            if len(order) < train_cfg.batch_size:
                order += [keep[k] for k in data_rng.permutation(len(keep))]
            pick, order = order[: train_cfg.batch_size], order[train_cfg.batch_size:]
            bdocs = [docs[k] for k in pick]
            bstyles = [styles[k] for k in pick] if styles is not None else None
            batch = compose_batch(bdocs, vocab, data_rng, bstyles, strict=train_cfg.strict_intervals,
                                  l2r=model_cfg.l2r) if train_cfg.lambda_ins > 0 else None
            for p in model.params.values():
                p.grad = None
            loss, ins_val, cls_val, n_tok = combined_loss(
                model, batch, bdocs if bstyles is not None else None, bstyles, train_cfg, drop_rng)
            grads = nx.backward(loss)
            grads = {k: grads[k] if grads.get(k) is not None else np.zeros_like(p.data)
                     for k, p in model.params.items()}
            if train_cfg.clip > 0:
                nx.clip_grad_norm(grads, train_cfg.clip)
            nx.adam_step(model.params, grads, opt, lr=lr_at(step - 1, train_cfg))
            win_ins += ins_val * max(n_tok, 1)
            win_tok += n_tok
            win_cls += cls_val
            win_n += 1
            if step % train_cfg.log_every == 0 or step == train_cfg.steps:
                dt = time.perf_counter() - win_t0
                rep = LossReport(step=step, ins_nll=win_ins / max(win_tok, 1), cls_ce=win_cls / win_n,
                                 tps=win_tok / dt if dt > 0 else 0.0)
                if not (np.isfinite(rep.ins_nll) and np.isfinite(rep.cls_ce)):
                    raise FloatingPointError(f"non-finite loss at step {step}")
                reports.append(rep)
                log.info("step %d ins_nll %.4f cls_ce %.4f tps %.0f", rep.step, rep.ins_nll, rep.cls_ce, rep.tps)
                if metrics:
                    metrics.write(rep.to_json(with_tps=train_cfg.record_tps) + "\n")
                    metrics.flush()
                if on_report:
                    on_report(rep)
                win_ins, win_cls, win_tok, win_n, win_t0 = 0.0, 0.0, 0, 0, time.perf_counter()
            if checkpoint_path and train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0:
                save_model_bundle(model, vocab, checkpoint_path)
    finally:
        if metrics:
            metrics.close()
    if checkpoint_path:
        save_model_bundle(model, vocab, checkpoint_path)
    return model, reports
