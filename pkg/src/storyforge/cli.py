"""Command-line entry point.

Subcommands: synth-data, build-vocab, train, generate, inspect-scenes,
evaluate, grad-check, sweep. Configuration resolves in three layers:
built-in defaults, then a key=value config file (--config flag or the
STORYFORGE_CONFIG environment variable), then explicit command flags.
Unknown config keys are rejected. Every run writes its resolved
configuration into the output directory.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import tensor as T
from .data import (DataFormatError, SynthSpec, Vocabulary, build_vocab,
                   load_albums, save_albums, synth_dataset, synth_vocab,
                   tokenize)
from .metrics import EvalPair, bleu, cider, rouge_l
from .model import (ModelConfig, encode_album, full_pipeline_grad_check,
                    generate_story)
from .scene_encoder import scene_indices
from .trainer import TrainConfig, run_training, write_log

CONFIG_ENV = "STORYFORGE_CONFIG"

# key: (default, type). Paths default to None (required where used).
DEFAULTS = {
    # paths
    "train_data": (None, str),
    "val_data": (None, str),
    "vocab_file": (None, str),
    "checkpoint": (None, str),
    "stories": (None, str),
    "data": (None, str),
    "out_dir": (".", str),
    # model dims
    "feature_dim": (8, int),
    "photo_hidden": (16, int),
    "attn_hidden": (32, int),
    "attn_score_dim": (32, int),
    "dec_hidden": (32, int),
    "emb_dim": (32, int),
    "mlp_hidden": (32, int),
    "alpha_len": (0, int),
    "max_words": (25, int),
    "sentences": (5, int),
    "max_photos": (40, int),
    # training
    "stage": ("all", str),
    "lr": (0.0004, float),
    "lam": (0.2, float),
    "mu": (0.8, float),
    "batch_size": (1, int),
    "max_steps": (1000, int),
    "validate_every": (100, int),
    "patience": (30, int),
    "seed": (0, int),
    "nll_stop": (0.0, float),
    "min_count": (5, int),
    # synthetic data
    "n_albums": (8, int),
    "scenes_lo": (2, int),
    "scenes_hi": (3, int),
    "photos_lo": (2, int),
    "photos_hi": (4, int),
    "separation": (4.0, float),
    "noise": (0.05, float),
    "vocab_size": (30, int),
    # decoding
    "mode": ("greedy", str),
    "beam_width": (3, int),
    # grad-check / sweep
    "gc_seeds": (20, int),
    "tolerance": (1e-4, float),
    "sweep_grid": ("both", str),
    "sweep_steps": (20, int),
}


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; the contract reserves 2 for
    # runtime failures, so route usage errors through ConfigError instead
    def error(self, message):
        raise ConfigError(message)


def parse_config_file(path) -> dict:
    raw = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{line_no}: expected key=value")
            key, value = text.split("=", 1)
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{line_no}: unknown key '{key}'")
            raw[key] = value.strip()
    return raw


def resolve_config(args) -> dict:
    cfg = {k: v for k, (v, _) in DEFAULTS.items()}
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        for key, text in parse_config_file(path).items():
            _, typ = DEFAULTS[key]
            try:
                cfg[key] = typ(text)
            except ValueError as e:
                raise ConfigError(f"config key '{key}': {e}") from e
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def write_resolved(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "resolved_config.txt", "w", encoding="utf-8") as fh:
        for key in sorted(cfg):
            if cfg[key] is not None:
                fh.write(f"{key}={cfg[key]}\n")


def _require(cfg, *keys):
    for key in keys:
        if cfg[key] is None:
            raise ConfigError(f"missing required key '{key.replace('_', '-')}'")


def model_config(cfg, vocab_size) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, feature_dim=cfg["feature_dim"],
                       photo_hidden=cfg["photo_hidden"],
                       attn_hidden=cfg["attn_hidden"],
                       attn_score_dim=cfg["attn_score_dim"],
                       dec_hidden=cfg["dec_hidden"], emb_dim=cfg["emb_dim"],
                       mlp_hidden=cfg["mlp_hidden"], alpha_len=cfg["alpha_len"],
                       max_words=cfg["max_words"], sentences=cfg["sentences"],
                       max_photos=cfg["max_photos"])


def _synth_spec(cfg) -> SynthSpec:
    return SynthSpec(albums=cfg["n_albums"],
                     scenes_per_album=(cfg["scenes_lo"], cfg["scenes_hi"]),
                     photos_per_scene=(cfg["photos_lo"], cfg["photos_hi"]),
                     feature_dim=cfg["feature_dim"],
                     cluster_separation=cfg["separation"],
                     noise_scale=cfg["noise"], vocab_size=cfg["vocab_size"],
                     sentences=cfg["sentences"], seed=cfg["seed"])


def _load_model(cfg):
    """Checkpoint + vocab + the model config recorded at training time."""
    _require(cfg, "checkpoint", "vocab_file")
    params, meta = T.load_checkpoint(cfg["checkpoint"])
    vocab = Vocabulary.load(cfg["vocab_file"])
    saved = meta.get("config", {})
    merged = dict(cfg)
    for key in ("feature_dim", "photo_hidden", "attn_hidden", "attn_score_dim",
                "dec_hidden", "emb_dim", "mlp_hidden", "alpha_len", "max_words",
                "sentences", "max_photos"):
        if key in saved:
            merged[key] = saved[key]
    return params, vocab, model_config(merged, len(vocab))


def _story_refs(album):
    refs = []
    for story in album.raw_stories:
        toks = []
        for sent in story:
            toks.extend(tokenize(sent))
        refs.append(toks)
    return refs


def _metric_lines(pairs):
    b = bleu(pairs)
    lines = [f"bleu-{n} {b[n]:.4f} {len(pairs)}" for n in (1, 2, 3, 4)]
    lines.append(f"rouge-l {rouge_l(pairs):.4f} {len(pairs)}")
    lines.append(f"cider {cider(pairs):.4f} {len(pairs)}")
    return lines


def cmd_synth_data(cfg) -> int:
    out = Path(cfg["out_dir"])
    write_resolved(cfg, out)
    spec = _synth_spec(cfg)
    vocab = synth_vocab(spec)
    albums = synth_dataset(spec, vocab)
    save_albums(out / "albums.jsonl", albums)
    vocab.save(out / "vocab.txt")
    print(f"wrote {len(albums)} albums, vocab {len(vocab)} -> {out}")
    return 0


def cmd_build_vocab(cfg) -> int:
    _require(cfg, "train_data")
    out = Path(cfg["out_dir"])
    write_resolved(cfg, out)
    sentences = []
    with open(cfg["train_data"], encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            for story in rec.get("stories", []):
                sentences.extend(story)
    vocab = build_vocab(sentences, min_count=cfg["min_count"])
    vocab.save(out / "vocab.txt")
    print(f"vocab {len(vocab)} tokens (min_count={cfg['min_count']}) -> {out}")
    return 0


def cmd_train(cfg) -> int:
    _require(cfg, "train_data", "vocab_file")
    out = Path(cfg["out_dir"])
    write_resolved(cfg, out)
    vocab = Vocabulary.load(cfg["vocab_file"])
    mcfg = model_config(cfg, len(vocab))
    loader = lambda p: load_albums(p, vocab, max_photos=cfg["max_photos"],
                                   n_sentences=cfg["sentences"],
                                   max_words=cfg["max_words"])
    train_set = loader(cfg["train_data"])
    val_set = loader(cfg["val_data"]) if cfg["val_data"] else train_set
    tcfg = TrainConfig(model=mcfg, stage=cfg["stage"], lr=cfg["lr"],
                       lam=cfg["lam"], mu=cfg["mu"],
                       batch_size=cfg["batch_size"], max_steps=cfg["max_steps"],
                       validate_every=cfg["validate_every"],
                       patience=cfg["patience"], seed=cfg["seed"],
                       nll_stop=cfg["nll_stop"])

    # the checkpoint meta echoes the run config so generate/inspect can
    # rebuild the model; output location is irrelevant to that and would
    # break byte-level reproducibility across directories
    snapshot = {k: v for k, v in sorted(cfg.items())
                if v is not None and k != "out_dir"}
    init = None
    if cfg["stage"] == "2":
        _require(cfg, "checkpoint")
        init, _ = T.load_checkpoint(cfg["checkpoint"])
    r1, r2 = run_training(train_set, val_set, tcfg, vocab, init_params=init)

    entries = (r1.log if r1 else []) + (r2.log if r2 else [])
    write_log(out / "train_log.jsonl", entries,
              header={"command": "train", "config": snapshot})
    for stage_no, res in (("1", r1), ("2", r2)):
        if res is None:
            continue
        T.save_checkpoint(out / f"stage{stage_no}.ckpt.json", res.params,
                          meta={"stage": stage_no, "steps": res.steps,
                                "best_cider": res.best_cider,
                                "config": snapshot})
        print(f"stage {stage_no}: steps={res.steps} stop={res.stop_reason} "
              f"best_cider={res.best_cider:.4f}")
        if res.diverged:
            print("training diverged; kept last good checkpoint", file=sys.stderr)
            return 2
    return 0


def cmd_generate(cfg) -> int:
    _require(cfg, "data")
    params, vocab, mcfg = _load_model(cfg)
    out = Path(cfg["out_dir"])
    write_resolved(cfg, out)
    albums = load_albums(cfg["data"], vocab, max_photos=mcfg.max_photos,
                         n_sentences=mcfg.sentences, max_words=mcfg.max_words)
    path = Path(cfg["stories"]) if cfg["stories"] else out / "stories.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for album in albums:
            hyp = generate_story(album, params, mcfg, mode=cfg["mode"],
                                 beam_width=cfg["beam_width"])
            rec = {"album_id": album.album_id,
                   "sentences": [" ".join(vocab.decode(i) for i in ids
                                          if i not in (0, 1, 2))
                                 for ids in hyp.sentences],
                   "flags": hyp.flags,
                   "alpha": [[round(float(w), 6) for w in a] for a in hyp.alphas]}
            fh.write(json.dumps(rec) + "\n")
    print(f"wrote {len(albums)} stories -> {path}")
    return 0


def cmd_inspect_scenes(cfg) -> int:
    _require(cfg, "data")
    params, vocab, mcfg = _load_model(cfg)
    out = Path(cfg["out_dir"])
    write_resolved(cfg, out)
    albums = load_albums(cfg["data"], vocab, max_photos=mcfg.max_photos,
                         n_sentences=mcfg.sentences, max_words=mcfg.max_words)
    lines = []
    for album in albums:
        with T.no_grad():
            enc = encode_album(album.features, params, mcfg)
        seg = enc.scenes
        idx = scene_indices(seg.flags)
        for i in range(album.num_photos):
            lines.append(f"{album.album_id} photo={i} soft={seg.softs[i]:.4f} "
                         f"flag={seg.flags[i]} scene={idx[i]}")
        lines.append(f"{album.album_id} scenes={seg.u}")
    text = "\n".join(lines)
    (out / "scenes.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_evaluate(cfg) -> int:
    _require(cfg, "stories", "data", "vocab_file")
    out = Path(cfg["out_dir"])
    write_resolved(cfg, out)
    vocab = Vocabulary.load(cfg["vocab_file"])
    albums = load_albums(cfg["data"], vocab, max_photos=cfg["max_photos"],
                         n_sentences=cfg["sentences"], max_words=cfg["max_words"])
    refs = {a.album_id: _story_refs(a) for a in albums}
    pairs = []
    with open(cfg["stories"], encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["album_id"] not in refs:
                raise DataFormatError(
                    f"line {line_no}: album '{rec['album_id']}' not in reference data")
            cand = []
            for sent in rec["sentences"]:
                cand.extend(tokenize(sent))
            pairs.append(EvalPair(cand, refs[rec["album_id"]]))
    if not pairs:
        raise DataFormatError("story file holds no records")
    lines = _metric_lines(pairs)
    (out / "metrics.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def cmd_grad_check(cfg) -> int:
    out = Path(cfg["out_dir"])
    write_resolved(cfg, out)
    worst = 0.0
    for seed in range(cfg["gc_seeds"]):
        err = full_pipeline_grad_check(seed=cfg["seed"] + seed,
                                       lam=cfg["lam"], mu=cfg["mu"])
        worst = max(worst, err)
        print(f"seed {cfg['seed'] + seed} max_rel_err {err:.3e}")
    ok = worst < cfg["tolerance"]
    print(f"grad-check worst={worst:.3e} tolerance={cfg['tolerance']:.1e} "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 2


def _sweep_cells(cfg):
    if cfg["sweep_grid"] not in ("lambda", "mu", "both"):
        raise ConfigError(f"unknown sweep_grid '{cfg['sweep_grid']}'")
    cells = []
    if cfg["sweep_grid"] in ("lambda", "both"):
        cells += [(round(0.1 * i, 1), 0.0, "1") for i in range(6)]
    if cfg["sweep_grid"] in ("mu", "both"):
        cells += [(0.2, round(0.2 * i, 1), "all") for i in range(6)]
    return cells


def cmd_sweep(cfg) -> int:
    out = Path(cfg["out_dir"])
    write_resolved(cfg, out)
    spec = _synth_spec(cfg)
    vocab = synth_vocab(spec)
    albums = synth_dataset(spec, vocab)
    mcfg = model_config(cfg, len(vocab))
    lines = []
    with open(out / "sweep.txt", "w", encoding="utf-8") as fh:
        for lam, mu, stage in _sweep_cells(cfg):
            tcfg = TrainConfig(model=mcfg, stage=stage, lr=cfg["lr"], lam=lam,
                               mu=mu, batch_size=cfg["batch_size"],
                               max_steps=cfg["sweep_steps"],
                               validate_every=max(1, cfg["sweep_steps"]),
                               patience=cfg["patience"], seed=cfg["seed"])
            r1, r2 = run_training(albums, albums, tcfg, vocab)
            res = r2 if r2 is not None else r1
            params = res.params
            pairs = []
            for album in albums:
                hyp = generate_story(album, params, mcfg)
                cand = []
                for ids in hyp.sentences:
                    cand.extend(vocab.decode(i) for i in ids if i not in (0, 1, 2))
                pairs.append(EvalPair(cand, _story_refs(album)))
            b = bleu(pairs)
            line = (f"cell lambda={lam:.1f} mu={mu:.1f} "
                    f"bleu-1={b[1]:.4f} bleu-4={b[4]:.4f} "
                    f"rouge-l={rouge_l(pairs):.4f} cider={cider(pairs):.4f}")
            fh.write(line + "\n")
            fh.flush()
            lines.append(line)
            print(line)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="storyforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, keys):
        p = sub.add_parser(name)
        p.set_defaults(func=func)
        p.add_argument("--config", default=None)
        p.add_argument("--out-dir", dest="out_dir", default=None)
        for key in keys:
            _, typ = DEFAULTS[key]
            flag = "--" + key.replace("_", "-")
            if key == "lam":
                flag = "--lambda"
            p.add_argument(flag, dest=key, type=typ, default=None)
        return p

    dims = ["feature_dim", "photo_hidden", "attn_hidden", "attn_score_dim",
            "dec_hidden", "emb_dim", "mlp_hidden", "alpha_len", "max_words",
            "sentences", "max_photos"]
    synth = ["n_albums", "scenes_lo", "scenes_hi", "photos_lo", "photos_hi",
             "separation", "noise", "vocab_size", "seed"]
    train = ["stage", "lr", "lam", "mu", "batch_size", "max_steps",
             "validate_every", "patience", "seed", "nll_stop"]

    add("synth-data", cmd_synth_data, synth + ["feature_dim", "sentences"])
    add("build-vocab", cmd_build_vocab, ["train_data", "min_count"])
    add("train", cmd_train,
        ["train_data", "val_data", "vocab_file", "checkpoint"] + dims + train)
    add("generate", cmd_generate,
        ["data", "checkpoint", "vocab_file", "stories", "mode", "beam_width"])
    add("inspect-scenes", cmd_inspect_scenes, ["data", "checkpoint", "vocab_file"])
    add("evaluate", cmd_evaluate,
        ["stories", "data", "vocab_file", "max_photos", "sentences", "max_words"])
    add("grad-check", cmd_grad_check, ["gc_seeds", "tolerance", "lam", "mu", "seed"])
    add("sweep", cmd_sweep,
        ["sweep_grid", "sweep_steps", "lr", "batch_size", "patience"]
        + synth + dims[:7])
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        return args.func(cfg)
    except (ConfigError, FileNotFoundError, DataFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, T.DimensionError, T.EvaluationError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
