"""Two-stage training loop with CIDEr-validated early stopping.

Stage 1 trains the photo encoder, scene encoder, attention, and sentence
decoder on word NLL plus the order margin (reconstruction weight treated
as zero, reconstructor untouched). Stage 2 freezes everything upstream of
the sentence decoder and adds the reconstruction term.

A "step" is one optimizer update over a batch of (album, story) examples;
losses are summed over the batch, so batching equals padded batching with
zero-masked slots. Albums with several reference stories contribute one
example per reference. Order-loss derangements are redrawn each epoch.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import decode_ids, tokenize
from .losses import derangement
from .metrics import EvalPair, cider
from .model import ModelConfig, build_parameters, generate_story, story_objective

STAGE1_FROZEN = ("reconstructor",)
STAGE2_FROZEN = ("photo_encoder", "scene_encoder", "attention")


@dataclass
class TrainConfig:
    model: ModelConfig
    stage: str = "all"          # "1", "2", or "all"
    lr: float = 0.0004
    lam: float = 0.2
    mu: float = 0.8
    batch_size: int = 1
    max_steps: int = 1000       # per stage
    validate_every: int = 100
    patience: int = 30          # consecutive non-improving validations
    seed: int = 0
    nll_stop: float = 0.0       # stop a stage early below this per-word NLL

    def __post_init__(self):
        if self.stage not in ("1", "2", "all"):
            raise ValueError(f"stage must be 1, 2, or all, got {self.stage!r}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_steps < 0 or self.validate_every < 1:
            raise ValueError("batch_size/validate_every must be >= 1, max_steps >= 0")


@dataclass
class TrainResult:
    params: T.ParamStore         # best-validation weights (last good on divergence)
    final_params: T.ParamStore   # weights at the last completed step
    log: list
    best_cider: float
    steps: int
    diverged: bool = False
    stop_reason: str = "max_steps"


def validate(params, cfg: ModelConfig, albums, vocab, generate_fn=generate_story):
    """Greedy-decode every album and score corpus CIDEr against all refs."""
    pairs = []
    for album in albums:
        hyp = generate_fn(album, params, cfg)
        cand = []
        for ids in hyp.sentences:
            cand.extend(decode_ids(ids, vocab))
        refs = []
        for story in album.raw_stories:
            toks = []
            for sent in story:
                toks.extend(tokenize(sent))
            refs.append(toks)
        pairs.append(EvalPair(cand, refs))
    return cider(pairs)


def _examples(albums):
    return [(ai, si) for ai, album in enumerate(albums)
            for si in range(len(album.stories))]


def _run_stage(stage_no: int, params, train_set, val_set, tcfg: TrainConfig,
               vocab, start_step: int = 0) -> TrainResult:
    cfg = tcfg.model
    mu = 0.0 if stage_no == 1 else tcfg.mu
    params.unfreeze_all()
    params.freeze(*(STAGE1_FROZEN if stage_no == 1 else STAGE2_FROZEN))
    opt = T.Adam(params, lr=tcfg.lr)
    rng = np.random.default_rng([tcfg.seed, stage_no])
    examples = _examples(train_set)
    n_sent = cfg.sentences

    best = params.copy()
    best_cider = -np.inf
    bad_validations = 0
    log, step = [], start_step
    t0 = time.time()
    stop_reason = "max_steps"
    diverged = False

    done = tcfg.max_steps == 0
    while not done:
        order = rng.permutation(len(examples))
        for lo in range(0, len(order), tcfg.batch_size):
            batch = [examples[i] for i in order[lo:lo + tcfg.batch_size]]
            params.zero_grads()
            sums = {"nll": 0.0, "rank": 0.0, "recon": 0.0, "total": 0.0}
            words = 0
            ok = True
            for ai, si in batch:
                album = train_set[ai]
                der = derangement(n_sent, rng) if n_sent >= 2 else None
                loss, rep = story_objective(album, si, params, cfg,
                                            derange=der, lam=tcfg.lam, mu=mu)
                if not np.isfinite(rep.total):
                    ok = False
                    break
                loss.backward()
                for k in sums:
                    sums[k] += getattr(rep, k)
                words += rep.word_count
            if not ok:
                diverged, stop_reason, done = True, "diverged", True
                break
            try:
                opt.step()
            except T.EvaluationError:
                diverged, stop_reason, done = True, "diverged", True
                break
            step += 1
            entry = {"step": step, "stage": stage_no,
                     "nll": sums["nll"], "rank": sums["rank"],
                     "recon": sums["recon"], "total": sums["total"],
                     "word_count": words,
                     "per_word_nll": sums["nll"] / max(1, words)}
            if step % tcfg.validate_every == 0:
                score = validate(params, cfg, val_set, vocab)
                entry["val_cider"] = score
                if score > best_cider:
                    best_cider = score
                    best = params.copy()
                    bad_validations = 0
                else:
                    bad_validations += 1
            entry["wall_time"] = round(time.time() - t0, 6)
            log.append(entry)
            if bad_validations >= tcfg.patience:
                stop_reason, done = "patience", True
                break
            if tcfg.nll_stop > 0 and entry["per_word_nll"] < tcfg.nll_stop:
                stop_reason, done = "nll_stop", True
                break
            if step - start_step >= tcfg.max_steps:
                done = True
                break

    if not diverged:
        # close with a final validation so `best` reflects the end state
        if log and "val_cider" not in log[-1]:
            score = validate(params, cfg, val_set, vocab)
            log[-1]["val_cider"] = score
            if score > best_cider:
                best_cider = score
                best = params.copy()
        elif not log:
            best_cider = validate(params, cfg, val_set, vocab)
            best = params.copy()
    return TrainResult(best, params.copy(), log, float(best_cider), step,
                       diverged, stop_reason)


def run_stage1(train_set, val_set, tcfg: TrainConfig, vocab,
               params=None) -> TrainResult:
    if params is None:
        params = build_parameters(tcfg.model, np.random.default_rng(tcfg.seed))
    return _run_stage(1, params, train_set, val_set, tcfg, vocab)


def run_stage2(params, train_set, val_set, tcfg: TrainConfig, vocab,
               start_step: int = 0) -> TrainResult:
    return _run_stage(2, params, train_set, val_set, tcfg, vocab,
                      start_step=start_step)


def run_training(train_set, val_set, tcfg: TrainConfig, vocab, init_params=None):
    """Run the configured stage(s); returns (stage1 result, stage2 result),
    either possibly None. init_params seeds stage 1 (warm start) or, for
    stage "2" alone, supplies the stage-1 checkpoint."""
    r1 = r2 = None
    if tcfg.stage in ("1", "all"):
        r1 = run_stage1(train_set, val_set, tcfg, vocab, params=init_params)
        if r1.diverged and tcfg.stage == "all":
            return r1, None
    if tcfg.stage in ("2", "all"):
        if r1 is not None:
            # stage 2 continues from the stage-1 checkpoint, i.e. its best weights
            base, start = r1.params.copy(), r1.steps
        elif init_params is not None:
            base, start = init_params, 0
        else:
            raise ValueError("stage 2 needs stage-1 parameters")
        r2 = run_stage2(base, train_set, val_set, tcfg, vocab, start_step=start)
    return r1, r2


def write_log(path, entries, header: dict | None = None):
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"log_header": header}, sort_keys=True) + "\n")
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")


def canonical_log(path) -> list:
    """Log lines with the header and per-entry wall times removed; two runs
    of the same config+seed must agree on this view byte for byte."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "log_header" in rec:
                continue
            rec.pop("wall_time", None)
            out.append(json.dumps(rec, sort_keys=True))
    return out
