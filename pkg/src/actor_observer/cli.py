"""Command-line entry point.

    actor-observer synth    --out DIR
    actor-observer train    --data MANIFEST --out DIR
    actor-observer eval     {corr,align,zeroshot} --checkpoint CK --data MANIFEST
    actor-observer retrieve --checkpoint CK --data MANIFEST --query PAIR:MOD:INDEX
    actor-observer inspect  [--checkpoint CK]

Global flags (before or after the subcommand): ``--config`` (``key = value``
file, keys prefixed ``synth.``, ``train.`` or ``eval.``), ``--seed``, ``--out``.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from . import formats as fmt
from .errors import ActorObserverError, ConfigError
from .sampling import EGO, THIRD, cross_person_triplets, enumerate_test_triplets
from .synthetic import LatentOracle, SyntheticConfig, synthesize
from .training import TrainConfig, learning_rate, train

log = logging.getLogger("actor_observer")

CORR_FRACTIONS = (1.0, 0.5, 0.1, 0.05)
EVAL_DEFAULTS = {"split": "test", "window": 1.0, "random_draws": 200, "k": 5}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="key = value config file")
    parser.add_argument("--seed", type=int, default=default, help="overrides every seed key")
    parser.add_argument("--out", default=default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="actor-observer", description="Actor/observer shared-embedding toolkit")
    _globals(p, suppress=False)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a planted synthetic dataset")
    _globals(s, True)

    t = sub.add_parser("train", help="train on a manifest")
    _globals(t, True)
    t.add_argument("--data", required=True, help="manifest.jsonl")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--epochs", type=int)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    esub = e.add_subparsers(dest="protocol", required=True, parser_class=_Parser)
    for name, help_ in (("corr", "third/first correspondence"),
                        ("align", "one-second moment alignment"),
                        ("zeroshot", "zero-shot first-person recognition")):
        q = esub.add_parser(name, help=help_)
        _globals(q, True)
        q.add_argument("--data", required=True, help="manifest.jsonl")
        src = q.add_mutually_exclusive_group(required=True)
        src.add_argument("--checkpoint")
        src.add_argument("--oracle", metavar="SIDECAR",
                         help="evaluate the planted-latent oracle instead of a model")
        q.add_argument("--split", choices=("test", "train", "all"))
        if name == "corr":
            q.add_argument("--cross-person", action="store_true",
                           help="pair each third-person video with another actor's ego video")

    r = sub.add_parser("retrieve", help="nearest ego frames for a third-person frame")
    _globals(r, True)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--query", required=True, help="PAIR_ID:MODALITY:FRAME_INDEX")
    r.add_argument("--gallery", choices=(THIRD, EGO), default=EGO)
    r.add_argument("-k", type=int)

    i = sub.add_parser("inspect", help="dump checkpoint metadata, or the defaults")
    _globals(i, True)
    i.add_argument("--checkpoint")
    return p


# -- configuration --------------------------------------------------------

def _sections(args) -> dict[str, dict]:
    sections = fmt.load_config(args.config) if args.config else {}
    unknown = set(sections) - {"synth", "train", "eval"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}; "
                          "prefix keys with synth., train. or eval.")
    if args.seed is not None:
        for name in ("synth", "train"):
            sections.setdefault(name, {})["seed"] = args.seed
    return sections


def _eval_options(sections) -> dict:
    opts = dict(EVAL_DEFAULTS)
    extra = set(sections.get("eval", {})) - set(opts)
    if extra:
        raise ConfigError(f"unknown eval keys {sorted(extra)}")
    opts.update(sections.get("eval", {}))
    return opts


def _out_dir(args) -> Path:
    return Path(args.out) if args.out else Path(".")


def _record(args, out: Path, config: dict) -> None:
    seed = args.seed
    if seed is None:
        seed = config.get("train", config.get("synth", {})).get("seed")
    record = {"command": args.command, "protocol": getattr(args, "protocol", None),
              "config": config, "seed": seed, "formats": fmt.FORMAT_VERSIONS,
              "version": __version__}
    name = "_".join(x for x in (args.command, getattr(args, "protocol", None)) if x)
    fmt.atomic_write(out / f"run_record_{name}.json", json.dumps(record, sort_keys=True, indent=1) + "\n")


# -- subcommands ----------------------------------------------------------

def cmd_synth(args, sections) -> dict:
    cfg = SyntheticConfig.from_dict(sections.get("synth", {}))
    out = _out_dir(args)
    manifest = fmt.write_synthetic(synthesize(cfg), out)
    print(f"wrote {cfg.n_pairs} pairs to {manifest}")
    return {"synth": cfg.as_dict()}


def cmd_train(args, sections) -> dict:
    values = dict(sections.get("train", {}))
    if args.epochs is not None:
        values["epochs"] = args.epochs
    state = split = None
    if args.resume:
        state, header = fmt.read_checkpoint(args.resume)
        merged = dict(header["config"])
        merged.update(values)
        values = merged
        split = (header["split"]["train"], header["split"]["test"])
    cfg = TrainConfig.from_dict(values)
    pairs = fmt.load_dataset(args.data, cfg.n_classes if cfg.mixed_mode else None)
    out = _out_dir(args)
    result = train(cfg, pairs, state=state, split=split,
                   progress=lambda s: print(json.dumps(s, sort_keys=True)))
    fmt.write_checkpoint(out / "checkpoint.aock", result.state, cfg.as_dict(),
                         {"train": result.train_ids, "test": result.test_ids})
    fmt.write_jsonl(out / "history.jsonl", result.history)
    print(f"checkpoint: {out / 'checkpoint.aock'}")
    return {"train": cfg.as_dict()}


def _eval_pairs(args, opts, header):
    pairs = fmt.load_dataset(args.data)
    split = opts["split"]
    if split == "all" or header is None or not header.get("split"):
        return list(pairs.values())
    ids = header["split"][split]
    missing = [i for i in ids if i not in pairs]
    if missing:
        raise ConfigError(f"split lists pairs absent from the manifest: {missing[:5]}")
    return [pairs[i] for i in ids]


def _eval_model(args):
    if args.oracle:
        return LatentOracle(fmt.read_sidecar(args.oracle)), None
    state, header = fmt.read_checkpoint(args.checkpoint)
    return state.model, header


def cmd_eval(args, sections) -> dict:
    opts = _eval_options(sections)
    if args.split:
        opts["split"] = args.split
    model, header = _eval_model(args)
    train_cfg = TrainConfig.from_dict(header["config"]) if header else TrainConfig()
    sampler = train_cfg.sampler()
    pairs = _eval_pairs(args, opts, header)
    out = _out_dir(args)
    rows = []
    if args.protocol == "corr":
        if args.cross_person:
            by_scen: dict = {}
            for p in pairs:
                by_scen.setdefault(p.scenario, []).append(p)
            triplets = []
            for group in by_scen.values():
                for a, b in zip(group, group[1:] + group[:1]):
                    if a is not b:
                        triplets += cross_person_triplets(a, b, sampler)
        else:
            triplets = [t for p in pairs for t in enumerate_test_triplets(p, sampler)]
        weightings = ["selector", "margin", "feature_margin"] if header else ["margin",
                                                                            "feature_margin"]
        print(f"{'weighting':<15}" + "".join(f"{f'top {f:g}':>10}" for f in CORR_FRACTIONS))
        for w in weightings:
            res = ev.correspondence_accuracy(model, triplets, CORR_FRACTIONS[1:], w,
                                             videos=ev.pair_videos(pairs))
            accs = [res.accuracy_all] + [res.accuracy_at[f] for f in CORR_FRACTIONS[1:]]
            print(f"{w:<15}" + "".join(f"{a:>10.4f}" for a in accs))
            rows += [{"protocol": "corr", "weighting": w, "fraction": f, "accuracy": a,
                      "n_triplets": res.n_triplets} for f, a in zip(CORR_FRACTIONS, accs)]
        header_cols = ["weighting", "fraction", "accuracy", "n_triplets"]
    elif args.protocol == "align":
        res = ev.alignment_errors(model, pairs, window=opts["window"])
        rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 3]))
        rand = ev.random_alignment_errors(pairs, int(opts["random_draws"]), rng, opts["window"])
        print(f"median error {res.median_error:.3f}s (mean {res.mean_error:.3f}s); "
              f"random baseline median {np.median(rand):.3f}s")
        rows = [{"protocol": "align", "pair_id": pid, "error": e}
                for pid, e in sorted(res.per_pair_error.items())]
        rows.append({"protocol": "align", "pair_id": "*median", "error": res.median_error})
        rows.append({"protocol": "align", "pair_id": "*random_median",
                     "error": float(np.median(rand))})
        header_cols = ["pair_id", "error"]
    else:
        n_classes = model.n_classes
        res = ev.zero_shot_map(model, pairs, n_classes)
        print(f"ego-video mAP {res.map:.4f} over {res.n_videos} videos, "
              f"{res.classes_used} classes with positives")
        rows = [{"protocol": "zeroshot", "class": c, "ap": float(a)}
                for c, a in enumerate(res.per_class_ap) if not np.isnan(a)]
        rows.append({"protocol": "zeroshot", "class": "*map", "ap": res.map})
        header_cols = ["class", "ap"]
    fmt.write_jsonl(out / f"results_{args.protocol}.jsonl",
                    [{**r, "results_version": fmt.RESULTS_VERSION} for r in rows])
    fmt.write_csv(out / f"results_{args.protocol}.csv", header_cols,
                  ([r[c] for c in header_cols] for r in rows))
    return {"train": train_cfg.as_dict(), "eval": opts}


def _parse_query(text: str):
    parts = text.split(":")
    if len(parts) != 3 or parts[1] not in (THIRD, EGO):
        raise ConfigError(f"query must look like PAIR_ID:{THIRD}|{EGO}:INDEX, got {text!r}")
    try:
        return parts[0], parts[1], int(parts[2])
    except ValueError:
        raise ConfigError(f"bad frame index in query {text!r}") from None


def cmd_retrieve(args, sections) -> dict:
    opts = _eval_options(sections)
    k = args.k if args.k is not None else int(opts["k"])
    state, header = fmt.read_checkpoint(args.checkpoint)
    pairs = fmt.load_dataset(args.data)
    pid, mod, idx = _parse_query(args.query)
    if pid not in pairs:
        raise ConfigError(f"unknown pair {pid!r}")
    frames = pairs[pid].video(mod).frames
    if not 0 <= idx < len(frames):
        raise ConfigError(f"frame index {idx} outside [0, {len(frames)})")
    gallery = [fr for p in pairs.values() for fr in p.video(args.gallery).frames]
    hits = ev.nearest_neighbors(state.model, frames[idx], gallery, k)
    rows = []
    for rank, h in enumerate(hits, 1):
        print(f"{rank:>3} {h.frame.video_id}[{h.frame.index}] t={h.frame.timestamp:.3f} "
              f"d={h.distance:.4f}")
        rows.append({"rank": rank, "video_id": h.frame.video_id, "index": h.frame.index,
                     "timestamp": h.frame.timestamp, "distance": h.distance})
    fmt.write_jsonl(_out_dir(args) / "results_retrieve.jsonl", rows)
    return {"train": header["config"], "eval": {"k": k, "query": args.query}}


def inspect_payload(header: dict | None, sections: dict | None = None) -> dict:
    """Checkpoint metadata, or the effective defaults (after any config overrides)."""
    sections = sections or {}
    if header is None:
        cfg = TrainConfig.from_dict(sections.get("train", {}))
        payload = {"source": "config" if sections else "defaults", "config": cfg.as_dict(),
                   "synthetic": SyntheticConfig.from_dict(sections.get("synth", {})).as_dict()}
    else:
        cfg = TrainConfig.from_dict(header["config"])
        payload = {"source": "checkpoint", "config": header["config"],
                   "optimizer": header["optimizer"], "split": header["split"],
                   "n_accumulators": len(header["accumulators"]),
                   "loss_count": header["loss_count"],
                   "tensors": {t["name"]: t["shape"] for t in header["tensors"]},
                   "model": {k: v for k, v in header["model"].items() if k != "groups"}}
    payload["lr_schedule"] = [learning_rate(cfg, e) for e in range(max(cfg.epochs, 9))]
    payload["formats"] = fmt.FORMAT_VERSIONS
    return payload


def cmd_inspect(args, sections) -> dict:
    header = fmt.read_checkpoint(args.checkpoint)[1] if args.checkpoint else None
    payload = inspect_payload(header, sections)
    print(json.dumps(payload, sort_keys=True, indent=1))
    return {"train": payload["config"]}


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "retrieve": cmd_retrieve, "inspect": cmd_inspect}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        sections = _sections(args)
        config = COMMANDS[args.command](args, sections)
        _record(args, _out_dir(args), config)
    except (ActorObserverError, OSError, KeyError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
