"""Command-line entry point: ``fseend <subcommand>``.

Subcommands: simulate, train, infer, stream, score, bench, dump-embeddings.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import config as run_config
from . import datasim, evalkit, streaming
from .labels import ActivityLabels, read_label_csv, read_rttm, write_rttm
from .model import FSEEND, rng_stream
from .training import Trainer

log = logging.getLogger("fseend")


def _corpus(cfg: run_config.RunConfig, split: str, n: int):
    out = []
    for k in cfg.data.speaker_counts:
        spec = cfg.data.mixture_spec(k, cfg.model.input_dim, cfg.model.frame_period)
        seed = int(rng_stream(cfg.seed, f"data.{split}.{k}").integers(2**31))
        out += datasim.generate_corpus(n, spec, seed=seed)
    return out


def cmd_simulate(cfg: run_config.RunConfig, out_dir, n: int | None = None) -> list[Path]:
    """Write generated mixtures as ``mixNNN.feat`` + ``mixNNN.rttm`` pairs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (x, labels) in enumerate(_corpus(cfg, "sim", n or cfg.data.n_mixtures)):
        stem = out_dir / f"mix{i:03d}"
        datasim.save_features(stem.with_suffix(".feat"), x, labels.frame_period)
        write_rttm(stem.with_suffix(".rttm"), labels, rec_id=stem.name)
        paths.append(stem.with_suffix(".feat"))
    return paths


def cmd_train(cfg: run_config.RunConfig, resume: str | None = None) -> Path:
    """Train on simulated data; returns the final checkpoint path."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_config.dump(cfg, out / "config.yaml")
    train_cfg = replace(cfg.train, seed=cfg.seed)
    corpus = _corpus(cfg, "train", cfg.data.n_mixtures)
    if resume:
        state = ckpt.load(resume)
        if state.config != cfg.model:
            raise ValueError("checkpoint model config differs from the run config")
        model = state.model()
    else:
        model = FSEEND.init(cfg.model, cfg.seed)
    mode = "a" if resume else "w"
    with open(out / "train.jsonl", mode) as logf:
        trainer = Trainer(model, corpus, train_cfg, log=logf)
        if resume:
            trainer.optimizer.load_state_dict(state.optimizer_state)
            trainer.state.step = int(state.meta["step"])

        def save(path):
            last = trainer.state.history[-1] if trainer.state.history else {}
            meta = {"step": trainer.state.step, "seed": cfg.seed, "loss": last.get("total"), "run": cfg.to_dict()}
            ckpt.save(path, model, meta, trainer.optimizer.state_dict())

        try:
            while trainer.state.step < train_cfg.steps:
                nxt = min(train_cfg.steps, (trainer.state.step // cfg.checkpoint_every + 1) * cfg.checkpoint_every)
                trainer.run(until=nxt)
                save(out / "last.ckpt")
                if trainer.state.reached_target_at is not None:
                    break
        except FloatingPointError as err:
            log.error("training aborted at step %d: %s", trainer.state.step, err)
            save(out / "last_good.ckpt")
            raise
    final = out / "model.ckpt"
    save(final)
    heldout = _corpus(cfg, "heldout", cfg.data.n_heldout)
    report = evalkit.evaluate_corpus(model, heldout, collar=0.25)
    (out / "metrics.json").write_text(report.to_json())
    (out / "metrics.txt").write_text(report.table("fseend (toy)") + "\n")
    return final


def _load_features(path, model):
    return datasim.load_features(path, expected_dim=model.config.input_dim)


def cmd_infer(checkpoint_path, features_path, mode: str = "offline", out_rttm=None, out_json=None, threshold=0.5):
    """Posteriors for one feature file; writes RTTM and line-JSON emissions when paths are given."""
    model = ckpt.load(checkpoint_path).model()
    feats = _load_features(features_path, model)
    cfg = model.config
    if mode == "offline":
        post = model.infer(feats.data)
        hyp = evalkit.posteriors_to_labels(post, cfg.s_max, feats.frame_period, threshold)
        frames = [
            streaming.DiarizationFrame(t, post[t], hyp.matrix[t].astype(bool), 0) for t in range(len(post))
        ]
        seen = np.zeros(cfg.s_max, dtype=bool)
        for f in frames:
            seen |= f.decisions
            f.n_speakers = int(seen.sum())
        extra = {}
    elif mode == "stream":
        state = model.open_stream(threshold)
        frames, lags = [], []
        for x in feats.data:
            f = state.push(x)
            if f is not None:
                frames.append(f)
                lags.append(state.frames_in - 1 - f.index)
        frames += state.flush()
        post = streaming.stack_posteriors(frames, cfg.n_slots)
        hyp = streaming.frames_to_labels(frames, cfg.s_max, feats.frame_period)
        extra = {
            "latency_frames": cfg.right_pad,
            "latency_seconds": cfg.right_pad * feats.frame_period,
            "observed_lag_frames": sorted(set(lags)),
        }
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if out_rttm:
        write_rttm(out_rttm, hyp, rec_id=Path(features_path).stem, speaker_names=[f"spk{i + 1}" for i in range(cfg.s_max)])
    if out_json:
        with open(out_json, "w") as fh:
            for f in frames:
                fh.write(f.to_json() + "\n")
    return post, extra


def _read_labels(path, frame_period, speakers=None, n_frames=None):
    if str(path).endswith(".csv"):
        return read_label_csv(path, frame_period), None
    return read_rttm(path, frame_period, n_frames=n_frames, speakers=speakers)


def cmd_score(ref_path, hyp_path, collar: float = 0.25, mode: str = "optimal", frame_period: float = 0.1):
    ref, _ = _read_labels(ref_path, frame_period)
    hyp, _ = _read_labels(hyp_path, frame_period)
    return evalkit.der(ref, hyp, collar, mode)


def cmd_bench(checkpoint_path=None, duration: float = 60.0, frame_period: float | None = None, seed: int = 0, model=None):
    """Stream ``duration`` seconds of random features through the model and time it."""
    if model is None:
        model = ckpt.load(checkpoint_path).model()
    fp = frame_period or model.config.frame_period
    T = int(round(duration / fp))
    x = rng_stream(seed, "bench").normal(size=(T, model.config.input_dim))
    return streaming.measure_rtf(model, x, fp)


def cmd_dump_embeddings(checkpoint_path, features_path, out_csv, labels_path=None):
    model = ckpt.load(checkpoint_path).model()
    feats = _load_features(features_path, model)
    labels = None
    if labels_path:
        labels, _ = _read_labels(labels_path, feats.frame_period, n_frames=len(feats.data))
    rows = evalkit.dump_embeddings(model, feats.data, labels)
    evalkit.write_embeddings_csv(out_csv, rows, model.config.d_model)
    return rows


def _apply_overrides(raw: dict, pairs) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars."""
    import yaml

    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        *path, leaf = key.split(".")
        node = raw
        for part in path:
            node = node.setdefault(part, {})
        node[leaf] = yaml.safe_load(value)
    return raw


def _base_config(args) -> run_config.RunConfig:
    base = run_config.load(args.config) if args.config else run_config.RunConfig()
    cfg = run_config.from_dict(_apply_overrides(base.to_dict(), getattr(args, "set", None)))
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "steps", None) is not None:
        cfg.train = replace(cfg.train, steps=args.steps)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fseend", description="Frame-wise streaming end-to-end neural diarization")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write synthetic mixtures")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config field")
    s.add_argument("--seed", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", help="train on synthetic mixtures")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config field")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--out")
    s.add_argument("--resume")

    for name in ("infer", "stream"):
        s = sub.add_parser(name, help="offline or frame-by-frame inference" if name == "infer" else "emit line-JSON frames as they become available")
        s.add_argument("checkpoint")
        s.add_argument("features")
        s.add_argument("--threshold", type=float, default=0.5)
        s.add_argument("--rttm")
        if name == "infer":
            s.add_argument("--mode", choices=["offline", "stream"], default="offline")
            s.add_argument("--json")

    s = sub.add_parser("score", help="DER of a hypothesis against a reference")
    s.add_argument("ref")
    s.add_argument("hyp")
    s.add_argument("--collar", type=float, default=0.25)
    s.add_argument("--mode", choices=["optimal", "appearance"], default="optimal")
    s.add_argument("--frame-period", type=float, default=0.1)

    s = sub.add_parser("bench", help="real-time factor of the streaming runtime")
    s.add_argument("checkpoint")
    s.add_argument("--duration", type=float, default=60.0)
    s.add_argument("--frame-period", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--json")

    s = sub.add_parser("dump-embeddings", help="write post-look-ahead embeddings as CSV")
    s.add_argument("checkpoint")
    s.add_argument("features")
    s.add_argument("--labels")
    s.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            paths = cmd_simulate(_base_config(args), args.out, args.n)
            print(f"wrote {len(paths)} mixtures to {args.out}")
        elif args.command == "train":
            print(cmd_train(_base_config(args), resume=args.resume))
        elif args.command == "infer":
            _, extra = cmd_infer(args.checkpoint, args.features, args.mode, args.rttm, args.json, args.threshold)
            if extra:
                print(json.dumps(extra))
        elif args.command == "stream":
            model = ckpt.load(args.checkpoint).model()
            feats = _load_features(args.features, model)
            state = model.open_stream(args.threshold)
            frames = []
            for x in feats.data:
                f = state.push(x)
                if f is not None:
                    frames.append(f)
                    print(f.to_json(), flush=True)
            for f in state.flush():
                frames.append(f)
                print(f.to_json())
            if args.rttm:
                hyp = streaming.frames_to_labels(frames, model.config.s_max, feats.frame_period)
                write_rttm(args.rttm, hyp, rec_id=Path(args.features).stem)
        elif args.command == "score":
            report = cmd_score(args.ref, args.hyp, args.collar, args.mode, args.frame_period)
            print(json.dumps(report.to_dict(), indent=2))
        elif args.command == "bench":
            report = cmd_bench(args.checkpoint, args.duration, args.frame_period, args.seed)
            print(report.table())
            if args.json:
                Path(args.json).write_text(json.dumps(report.to_dict(), indent=2))
        elif args.command == "dump-embeddings":
            rows = cmd_dump_embeddings(args.checkpoint, args.features, args.out, args.labels)
            print(f"wrote {len(rows)} rows to {args.out}")
    except (ValueError, RuntimeError, FileNotFoundError) as err:
        log.error("%s", err)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
