"""Reader training with per-epoch dev selection.

One optimisation step per question (shuffled each epoch), Adam with the
linear warmup/decay schedule over all steps of the run. After every
``eval_every`` epochs the dev set is scored; the best-scoring parameters are
kept (later epochs win ties). Training stops early when dev EM reaches
``target_em`` or fails to improve for ``patience`` evaluations.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..checkpoint import atomic_write_bytes
from ..evaluation import exact_match
from ..extractive import PdrConfig
from ..generative import AdvConfig
from ..optim import OptimizerState, adam_step, lr_schedule
from ..records import QAExample, load_dataset
from ..retrieval import load_index
from ..rng import make_rng
from .artifacts import (NoTrainableDataError, build_vocab, checkpoint_path, input_hashes, make_reader,
                        manifest_path, reader_checkpoint_bytes, top_passages, write_json)
from .config import RunConfig

log = logging.getLogger(__name__)


@dataclass
class FitResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_em: float = -1.0
    best_params: dict[str, np.ndarray] = field(default_factory=dict)
    seconds: float = 0.0


def fit(model, train_items: list, step_fn, dev_em_fn, cfg: RunConfig, lr: float, seed: int) -> FitResult:
    """Generic loop. ``step_fn(item)`` returns ``(loss value, grads by name)``."""
    tr = cfg.trainer
    names = list(model.params)
    state = OptimizerState.for_params({n: model.params[n].data for n in names})
    total_steps = tr.epochs * len(train_items)
    res = FitResult()
    stale = 0
    step = 0
    t0 = time.perf_counter()
    for epoch in range(1, tr.epochs + 1):
        order = make_rng(seed, "shuffle", epoch).permutation(len(train_items))
        losses = []
        for i in order:
            value, grads = step_fn(train_items[i])
            losses.append(value)
            rate = lr_schedule(step, total_steps, tr.warmup_ratio, lr)
            new = adam_step({n: model.params[n].data for n in names}, grads, state, lr=rate)
            for n in names:
                model.params[n].data = new[n]
            step += 1
        entry = {"epoch": epoch, "loss": float(np.mean(losses))}
        if epoch % tr.eval_every == 0 or epoch == tr.epochs:
            em = dev_em_fn()
            entry["dev_em"] = em
            if em >= res.best_dev_em:
                stale = 0 if em > res.best_dev_em else stale + 1
                res.best_dev_em, res.best_epoch = em, epoch
                res.best_params = {n: model.params[n].data.copy() for n in names}
            else:
                stale += 1
        res.history.append(entry)
        log.info("epoch %d loss %.4f%s", epoch, entry["loss"],
                 f" dev_em {entry['dev_em']:.4f}" if "dev_em" in entry else "")
        if "dev_em" in entry:
            if tr.target_em is not None and entry["dev_em"] >= tr.target_em:
                log.info("dev EM reached target %.3f; stopping", tr.target_em)
                break
            if tr.patience is not None and stale >= tr.patience:
                log.info("no dev improvement for %d evaluations; stopping", stale)
                break
    res.seconds = time.perf_counter() - t0
    return res


def _restore(model, params: dict[str, np.ndarray]) -> None:
    for n, a in params.items():
        model.params[n].data = a


def _extractive_run(cfg, vocab, index, train, dev, seed, gamma):
    model = make_reader(cfg, "extractive", vocab, seed)
    n = cfg.extractive.passages
    items = [model.prepare(ex.question_id, ex.question, top_passages(index, ex.question, n), ex.answers)
             for ex in train]
    items = [it for it in items if it.trainable]
    if not items:
        raise NoTrainableDataError("no training question has a correct span in its retrieved passages")
    dev_items = [(model.prepare(ex.question_id, ex.question, top_passages(index, ex.question, n)), ex)
                 for ex in dev]
    pdr = PdrConfig(cfg.trainer.noise_scale, gamma)
    noise_rng = make_rng(seed, "pdr-noise", repr(gamma))
    names = list(model.params)

    def step(inst):
        loss, _ = model.loss_total(inst, pdr, noise_rng)
        grads = T.grad(loss, [model.params[k] for k in names])
        return loss.item(), dict(zip(names, grads))

    def dev_em():
        hits = []
        for inst, ex in dev_items:
            preds = model.predict(inst)
            hits.append(exact_match(preds[0].answer if preds else "", ex.answers))
        return float(np.mean(hits))

    res = fit(model, items, step, dev_em, cfg, cfg.trainer.extractive_lr, seed)
    _restore(model, res.best_params)
    return model, res, len(items)


def _generative_run(cfg, vocab, index, train, dev, seed):
    model = make_reader(cfg, "generative", vocab, seed)
    n = cfg.generative.passages
    items = [model.prepare(ex.question_id, ex.question, top_passages(index, ex.question, n), ex.answers[0])
             for ex in train]
    if not items:
        raise NoTrainableDataError("the training set is empty")
    dev_items = [(model.prepare(ex.question_id, ex.question, top_passages(index, ex.question, n)), ex)
                 for ex in dev]
    tr = cfg.trainer
    adv = AdvConfig(tr.epsilon_adv, tr.alpha, tr.beta)

    def step(inst):
        value, grads, _ = model.loss_and_grads(inst, adv)
        return value, grads

    def dev_em():
        return float(np.mean([exact_match(model.greedy_decode(inst).answer, ex.answers)
                              for inst, ex in dev_items]))

    res = fit(model, items, step, dev_em, cfg, tr.generative_lr, seed)
    _restore(model, res.best_params)
    return model, res, len(items)


def train_reader(cfg: RunConfig, reader: str, seed: int, out: Path | None = None) -> dict:
    """Train one reader for one seed; writes checkpoint(s) and a manifest."""
    t_start = time.perf_counter()
    cfg.require("index", "train", "dev")
    index = load_index(cfg.path("index"))
    train: list[QAExample] = load_dataset(cfg.path("train"))
    dev: list[QAExample] = load_dataset(cfg.path("dev"))
    if not index.passages:
        raise NoTrainableDataError("the index holds no passages")
    vocab = build_vocab(index, train)
    final = Path(out) if out is not None else checkpoint_path(cfg, reader, seed)
    inputs = {"index": cfg.path("index"), "train": cfg.path("train"), "dev": cfg.path("dev")}
    manifest = {
        "reader": reader,
        "seed": seed,
        "config": cfg.snapshot(),
        "inputs": input_hashes(inputs),
        "checkpoint": final.name,
    }
    timings = {}
    if reader == "extractive":
        sweep = []
        best = None
        for gamma in cfg.trainer.gammas:
            log.info("training extractive reader, seed %d, gamma %g", seed, gamma)
            model, res, n_items = _extractive_run(cfg, vocab, index, train, dev, seed, gamma)
            blob = reader_checkpoint_bytes(model, cfg.extractive.passages, {
                "seed": seed, "gamma": gamma, "noise_scale": cfg.trainer.noise_scale,
                "epoch": res.best_epoch, "dev_em": res.best_dev_em})
            cand = final.with_name(f"{final.stem}-gamma{gamma:g}.ckpt")
            atomic_write_bytes(cand, blob)
            sweep.append({"gamma": gamma, "best_epoch": res.best_epoch, "best_dev_em": res.best_dev_em,
                          "epochs_run": len(res.history), "trainable_questions": n_items,
                          "history": res.history, "checkpoint": cand.name})
            timings[f"gamma{gamma:g}_seconds"] = res.seconds
            # earlier gammas in the list win ties
            if best is None or res.best_dev_em > best[0]:
                best = (res.best_dev_em, gamma, blob, res)
        best_em, gamma, blob, res = best
        atomic_write_bytes(final, blob)
        manifest.update({"gamma_sweep": sweep, "selected_gamma": gamma})
    elif reader == "generative":
        log.info("training generative reader, seed %d", seed)
        model, res, n_items = _generative_run(cfg, vocab, index, train, dev, seed)
        tr = cfg.trainer
        blob = reader_checkpoint_bytes(model, cfg.generative.passages, {
            "seed": seed, "epsilon_adv": tr.epsilon_adv, "alpha": tr.alpha, "beta": tr.beta,
            "epoch": res.best_epoch, "dev_em": res.best_dev_em})
        atomic_write_bytes(final, blob)
        timings["train_seconds"] = res.seconds
        manifest.update({"history": res.history, "trainable_questions": n_items})
    else:
        raise ValueError(f"unknown reader {reader!r}")
    manifest["metrics"] = {str(seed): {"best_epoch": res.best_epoch, "best_dev_em": res.best_dev_em}}
    timings["total_seconds"] = time.perf_counter() - t_start
    manifest["timings"] = timings
    write_json(manifest_path(final), manifest)
    return manifest
