"""Command-line front end: corpus synthesis, training, enhancement,
selection, evaluation, and full experiments under one binary.

Exit codes: 0 success, 2 bad usage, 3 I/O failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import AudioError, read_wav, stft, write_wav
from .data import (DataError, generate_corpus, load_manifest, realize)
from .experiment import AXES, ExperimentError, load_plan, make_plan, run
from .metrics import MetricError, sdr, snr, stoi
from .network import (DropoutSpec, ModelFormatError, NetworkError,
                      MODEL_FORMAT_VERSION, init_weights, load_network,
                      save_network)
from .selector import SelectionError, select
from .training import (RpropConfig, TrainingError, build_dae_dataset,
                       build_denoiser_dataset, train, write_loss_curve)

log = logging.getLogger("mnn")

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _atomic_write_text(path, text: str) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _training_config(manifest_path, seed_override):
    """Pull the config block out of a training manifest."""
    with open(manifest_path) as f:
        doc = json.load(f)
    cfg = doc.get("config", {})
    rprop = RpropConfig(**cfg.get("rprop", {}))
    drop_doc = cfg.get("dropout", {})
    drop = DropoutSpec(keep=drop_doc.get("keep", 1.0),
                       mode=drop_doc.get("mode", "off"),
                       seed=drop_doc.get("seed", 0))
    seed = seed_override if seed_override is not None else cfg.get("seed", 0)
    return {
        "frame_size": cfg.get("frame_size", 1024),
        "hop": cfg.get("hop", cfg.get("frame_size", 1024) // 4),
        "context": cfg.get("context", 3),
        "dims": cfg.get("dims"),
        "activations": cfg.get("activations"),
        "rprop": rprop,
        "dropout": drop,
        "seed": seed,
    }


def cmd_synth(args) -> int:
    layout = generate_corpus(args.out, speakers=args.speakers,
                             utterances=args.utterances, seed=args.seed)
    if args.with_plans:
        for axis in AXES:
            make_plan(args.out, axis, Path(args.out) / "plans", seed=args.seed)
    print(f"wrote {len(layout['clean'])} clean utterances and "
          f"{len(layout['noise'])} noise files to {args.out}")
    return 0


def _cmd_train(args, kind: str) -> int:
    cfg = _training_config(args.manifest, args.seed)
    manifest = load_manifest(args.manifest)
    base = Path(args.base_dir or Path(args.manifest).parent)

    if kind == "module":
        pairs = []
        for rec in manifest.records:
            clean, noise, _ = realize(rec, base)
            pairs.append((clean, noise, rec.snr_db))
        data = build_denoiser_dataset(pairs, cfg["frame_size"], cfg["hop"],
                                      cfg["context"])
        default_act_last = "logistic"
    else:
        cleans = [read_wav(base / rec.clean_path) for rec in manifest.records]
        data = build_dae_dataset(cleans, cfg["frame_size"], cfg["hop"],
                                 cfg["context"])
        default_act_last = "modified-relu"

    D = cfg["frame_size"] // 2 + 1
    dims = cfg["dims"] or [cfg["context"] * D, 128, D]
    acts = cfg["activations"] or (
        ["modified-relu"] * (len(dims) - 2) + [default_act_last])
    net = init_weights(dims, acts, cfg["seed"])
    net, losses = train(net, data, cfg["rprop"], cfg["dropout"], cfg["seed"])
    save_network(net, args.out)
    if args.loss_curve:
        write_loss_curve(args.loss_curve, losses)
    log.info("trained %s: final mean loss %.6g", args.out, losses[-1])
    return 0


def cmd_enhance(args) -> int:
    net = load_network(args.model)
    mixture = read_wav(getattr(args, "in"))
    X = stft(mixture, args.frame_size, args.hop)
    from .selector import enhance_with_module
    _, wave = enhance_with_module(net, X, args.context)
    write_wav(args.out, wave)
    print(f"wrote {args.out}")
    return 0


def cmd_select(args) -> int:
    modules = {Path(p).stem: load_network(p) for p in args.modules}
    dae = load_network(args.dae)
    mixture = read_wav(args.mixture)
    X = stft(mixture, args.frame_size, args.hop)
    reference = read_wav(args.reference) if args.reference else None
    drop = None
    num_draws = 1
    if args.sampled_dropout:
        drop = DropoutSpec(keep=0.8, mode="sampled", seed=args.seed)
        num_draws = args.sampled_dropout
    report, outputs = select(modules, dae, X, args.context, metric=args.metric,
                             seed=args.seed, reference=reference, drop=drop,
                             num_draws=num_draws, threads=args.threads,
                             utterance=str(args.mixture))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_wav(out_dir / "enhanced.wav", outputs[report.chosen].enhanced_wave)
    _atomic_write_text(out_dir / "report.json",
                       json.dumps(report.to_dict(), indent=2) + "\n")
    print(report.chosen)
    return 0


def cmd_eval(args) -> int:
    est = read_wav(args.est)
    ref = read_wav(args.ref)
    result = {"sdr_db": sdr(est, ref)}
    try:
        result["stoi"] = stoi(est, ref)
    except MetricError as e:
        result["stoi"] = None
        log.warning("stoi unavailable: %s", e)
    from .audio import Waveform
    result["snr_db"] = snr(ref, Waveform(est.samples - ref.samples, ref.sample_rate)) \
        if not np.array_equal(est.samples, ref.samples) else 100.0
    print(json.dumps(result))
    return 0


def cmd_experiment(args) -> int:
    plan = load_plan(args.plan)
    if args.seed is not None:
        plan.seed = args.seed
    table = run(plan, args.out, cache_dir=args.cache, threads=args.threads)
    print(f"report written to {args.out} "
          f"({table.num_utterances} test utterances)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mnn",
        description="Modular speech enhancement with autoencoder-based "
                    "module selection",
    )
    p.add_argument("--version", action="version",
                   version=f"mnn {__version__} (model format {MODEL_FORMAT_VERSION})")
    p.add_argument("--log-level", default="warning",
                   choices=["debug", "info", "warning", "error"])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate the substitute corpus")
    s.add_argument("--speakers", type=int, default=6)
    s.add_argument("--utterances", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--with-plans", action="store_true",
                   help="also emit ready-to-run experiment plans")
    s.set_defaults(func=cmd_synth)

    for name, kind in (("train-module", "module"), ("train-dae", "dae")):
        s = sub.add_parser(name, help=f"train a {kind} network from a manifest")
        s.add_argument("--manifest", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--base-dir", default=None)
        s.add_argument("--loss-curve", default=None,
                       help="optional CSV path for the loss curve")
        s.set_defaults(func=lambda a, k=kind: _cmd_train(a, k))

    s = sub.add_parser("enhance", help="run one model on one WAV")
    s.add_argument("--model", required=True)
    s.add_argument("--in", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--frame-size", type=int, default=1024)
    s.add_argument("--hop", type=int, default=None)
    s.add_argument("--context", type=int, default=3)
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("select", help="enhance with every module, keep the best")
    s.add_argument("--mixture", required=True)
    s.add_argument("--modules", nargs="+", required=True)
    s.add_argument("--dae", required=True)
    s.add_argument("--metric", choices=["ae", "snr"], default="ae")
    s.add_argument("--reference", default=None)
    s.add_argument("--frame-size", type=int, default=1024)
    s.add_argument("--hop", type=int, default=None)
    s.add_argument("--context", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--sampled-dropout", type=int, default=0, metavar="N",
                   help="average N sampled corruption draws instead of "
                        "deterministic scaled inference")
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("eval", help="SDR/STOI/SNR of an estimate vs reference")
    s.add_argument("--est", required=True)
    s.add_argument("--ref", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("experiment", help="experiment workflows")
    esub = s.add_subparsers(dest="experiment_command", required=True)
    r = esub.add_parser("run", help="run a full experiment plan")
    r.add_argument("--plan", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--cache", default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--threads", type=int, default=1)
    r.set_defaults(func=cmd_experiment)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, FileNotFoundError) as e:
        print(f"error: {json.dumps({'kind': 'io', 'message': str(e)})}",
              file=sys.stderr)
        return EXIT_IO
    except (TrainingError, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"error: {json.dumps({'kind': 'numeric', 'message': str(e)})}",
              file=sys.stderr)
        return EXIT_NUMERIC
    except (AudioError, DataError, NetworkError, ModelFormatError, MetricError,
            SelectionError, ExperimentError, ValueError) as e:
        print(f"error: {json.dumps({'kind': 'usage', 'message': str(e)})}",
              file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())
