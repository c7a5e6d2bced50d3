"""Experiment orchestration: train a module set along one variation axis,
run selection over a labeled test set, and emit cross tables with Chance,
per-metric selector, and Oracle columns.

Outputs per run: report.csv, report.txt, selection.jsonl, per-module loss
curves, and rendered figures (SDR cross-table heatmap, policy comparison).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import read_wav, stft
from .data import (DatasetManifest, MixtureRecord, load_manifest,
                   save_manifest, validate_noise_disjoint, NOISE_KINDS)
from .metrics import sdr, stoi
from .network import DropoutSpec, init_weights, load_network, save_network
from .selector import (ModuleOutput, enhance_with_module, oracle_select,
                       score_module)
from .training import (RpropConfig, TrainingError, build_dae_dataset,
                       build_denoiser_dataset, train, write_loss_curve)

AXES = ("noise", "speaker-group", "snr")


class ExperimentError(RuntimeError):
    """Raised for invalid plans or missing inputs."""


@dataclass
class ModuleConfig:
    id: str
    axis_value: str
    manifest: str  # path to this module's training manifest
    hidden: list = field(default_factory=lambda: [128])


@dataclass
class DaeConfig:
    id: str
    context: int = 1
    hidden: list = field(default_factory=lambda: [128])


@dataclass
class ExperimentPlan:
    axis: str
    modules: list
    daes: list
    test_manifest: str
    dae_clean_paths: list
    base_dir: str = "."
    sample_rate: int = 16000
    frame_size: int = 512
    hop: int = 128
    context: int = 3
    rprop: RpropConfig = field(default_factory=RpropConfig)
    dropout_keep: float = 0.8
    dropout_mode: str = "sampled"
    chance_draws: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.axis not in AXES:
            raise ExperimentError(f"unknown axis {self.axis!r}")
        if len(self.modules) < 2:
            raise ExperimentError("an experiment needs at least 2 modules")

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "base_dir": self.base_dir,
            "sample_rate": self.sample_rate,
            "frame_size": self.frame_size,
            "hop": self.hop,
            "context": self.context,
            "seed": self.seed,
            "chance_draws": self.chance_draws,
            "dropout": {"keep": self.dropout_keep, "mode": self.dropout_mode},
            "rprop": {
                "eta_minus": self.rprop.eta_minus,
                "eta_plus": self.rprop.eta_plus,
                "step_min": self.rprop.step_min,
                "step_max": self.rprop.step_max,
                "initial_step": self.rprop.initial_step,
                "iterations": self.rprop.iterations,
                "batch_size": self.rprop.batch_size,
            },
            "modules": [
                {"id": m.id, "axis_value": m.axis_value, "manifest": m.manifest,
                 "hidden": list(m.hidden)}
                for m in self.modules
            ],
            "daes": [
                {"id": d.id, "context": d.context, "hidden": list(d.hidden)}
                for d in self.daes
            ],
            "test_manifest": self.test_manifest,
            "dae_clean_paths": list(self.dae_clean_paths),
        }


def save_plan(plan: ExperimentPlan, path) -> None:
    with open(path, "w") as f:
        json.dump(plan.to_dict(), f, indent=2)
        f.write("\n")


def load_plan(path) -> ExperimentPlan:
    with open(path) as f:
        doc = json.load(f)
    rp = doc.get("rprop", {})
    dr = doc.get("dropout", {})
    return ExperimentPlan(
        axis=doc["axis"],
        modules=[ModuleConfig(m["id"], m["axis_value"], m["manifest"],
                              m.get("hidden", [128])) for m in doc["modules"]],
        daes=[DaeConfig(d["id"], d.get("context", 1), d.get("hidden", [128]))
              for d in doc["daes"]],
        test_manifest=doc["test_manifest"],
        dae_clean_paths=doc["dae_clean_paths"],
        base_dir=doc.get("base_dir", "."),
        sample_rate=doc.get("sample_rate", 16000),
        frame_size=doc.get("frame_size", 512),
        hop=doc.get("hop", 128),
        context=doc.get("context", 3),
        rprop=RpropConfig(**rp) if rp else RpropConfig(),
        dropout_keep=dr.get("keep", 0.8),
        dropout_mode=dr.get("mode", "sampled"),
        chance_draws=doc.get("chance_draws", 10),
        seed=doc.get("seed", 0),
    )


# ---------------------------------------------------------------------------
# Training with content-hash caching
# ---------------------------------------------------------------------------

def _cache_key(kind: str, plan: ExperimentPlan, extra: dict) -> str:
    doc = {"kind": kind, "frame_size": plan.frame_size, "hop": plan.hop,
           "sample_rate": plan.sample_rate, "seed": plan.seed,
           "rprop": plan.to_dict()["rprop"],
           "dropout": {"keep": plan.dropout_keep, "mode": plan.dropout_mode}}
    doc.update(extra)
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _train_module(plan: ExperimentPlan, cfg: ModuleConfig, base: Path,
                  cache_dir: Path | None, out_dir: Path):
    manifest = load_manifest(base / cfg.manifest)
    records = [
        {"clean": r.clean_path, "noise": r.noise_path, "snr": r.snr_db,
         "offset": r.noise_offset} for r in manifest.records
    ]
    key = _cache_key("module", plan, {"id": cfg.id, "hidden": list(cfg.hidden),
                                      "context": plan.context, "records": records})
    cache_path = (cache_dir / f"module_{cfg.id}_{key}.mnn") if cache_dir else None
    if cache_path is not None and cache_path.exists():
        return load_network(cache_path)

    from .data import realize
    pairs = []
    for r in manifest.records:
        clean, noise, _ = realize(r, base)
        pairs.append((clean, noise, r.snr_db))
    data = build_denoiser_dataset(pairs, plan.frame_size, plan.hop, plan.context)

    D = plan.frame_size // 2 + 1
    dims = [plan.context * D] + list(cfg.hidden) + [D]
    acts = ["modified-relu"] * len(cfg.hidden) + ["logistic"]
    net = init_weights(dims, acts, seed=plan.seed + _stable_offset(cfg.id))
    drop = DropoutSpec(keep=plan.dropout_keep, mode=plan.dropout_mode,
                       seed=plan.seed + _stable_offset(cfg.id) + 1)
    net, losses = train(net, data, plan.rprop, drop,
                        seed=plan.seed + _stable_offset(cfg.id) + 2)
    write_loss_curve(out_dir / f"loss_module_{cfg.id}.csv", losses)
    _plot_loss(out_dir / f"loss_module_{cfg.id}.png", losses,
               f"module {cfg.id}")

    target = cache_path if cache_path is not None else out_dir / f"module_{cfg.id}.mnn"
    save_network(net, target)
    return load_network(target)  # use the float32 on-disk values everywhere


def _train_dae(plan: ExperimentPlan, cfg: DaeConfig, base: Path,
               cache_dir: Path | None, out_dir: Path):
    key = _cache_key("dae", plan, {"id": cfg.id, "hidden": list(cfg.hidden),
                                   "context": cfg.context,
                                   "cleans": list(plan.dae_clean_paths)})
    cache_path = (cache_dir / f"dae_{cfg.id}_{key}.mnn") if cache_dir else None
    if cache_path is not None and cache_path.exists():
        return load_network(cache_path)

    cleans = [read_wav(base / p) for p in plan.dae_clean_paths]
    data = build_dae_dataset(cleans, plan.frame_size, plan.hop, cfg.context)
    D = plan.frame_size // 2 + 1
    dims = [cfg.context * D] + list(cfg.hidden) + [D]
    acts = ["modified-relu"] * (len(cfg.hidden) + 1)
    net = init_weights(dims, acts, seed=plan.seed + _stable_offset(cfg.id))
    drop = DropoutSpec(keep=plan.dropout_keep, mode=plan.dropout_mode,
                       seed=plan.seed + _stable_offset(cfg.id) + 1)
    net, losses = train(net, data, plan.rprop, drop,
                        seed=plan.seed + _stable_offset(cfg.id) + 2)
    write_loss_curve(out_dir / f"loss_dae_{cfg.id}.csv", losses)
    _plot_loss(out_dir / f"loss_dae_{cfg.id}.png", losses, f"DAE {cfg.id}")

    target = cache_path if cache_path is not None else out_dir / f"dae_{cfg.id}.mnn"
    save_network(net, target)
    return load_network(target)


def _stable_offset(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:2], "little")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class ReportTable:
    axis: str
    module_ids: list
    policy_ids: list  # chance, sel-*, oracle column names
    rows: dict  # (metric, test_value) -> {column -> float}
    accuracy: dict  # policy id -> selector==oracle rate
    num_utterances: int

    def cell(self, metric: str, test_value: str, column: str) -> float:
        return self.rows[(metric, test_value)][column]


def run(plan: ExperimentPlan, out_dir, cache_dir=None, threads: int = 1) -> ReportTable:
    """Train (or load cached) modules and DAEs, evaluate the test set, and
    write report.csv / report.txt / selection.jsonl plus figures."""
    base = Path(plan.base_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = Path(cache_dir) if cache_dir else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)

    modules = {m.id: _train_module(plan, m, base, cache, out) for m in plan.modules}
    daes = {d.id: _train_dae(plan, d, base, cache, out) for d in plan.daes}

    test = load_manifest(base / plan.test_manifest)
    if not test.records:
        raise ExperimentError("test manifest has no records")
    for r in test.records:
        if r.label is None:
            raise ExperimentError(
                f"test record {r.clean_path} is missing its axis label")

    module_ids = list(modules)
    policy_ids = ["chance"]
    for did in daes:
        policy_ids += [f"sel-ae-{did}", f"sel-snr-{did}"]
    policy_ids.append("oracle")

    from .data import realize

    def eval_record(idx_rec):
        idx, rec = idx_rec
        selection_lines = []
        clean, _, mixture = realize(rec, base)
        X = stft(mixture, plan.frame_size, plan.hop)
        outputs = {}
        metrics = {}
        for mid, net in modules.items():
            spec, wave = enhance_with_module(net, X, plan.context)
            outputs[mid] = ModuleOutput(mid, spec, wave)
            metrics[mid] = {"SDR": sdr(wave, clean), "STOI": stoi(wave, clean)}
        oracle = oracle_select(list(outputs.values()), clean)

        chance_rng = np.random.default_rng([plan.seed, 1000 + idx])
        chance_picks = [module_ids[int(chance_rng.integers(len(module_ids)))]
                        for _ in range(plan.chance_draws)]

        picks = {"oracle": oracle}
        utt_name = f"{rec.clean_path}|{rec.noise_path}|{rec.snr_db:g}dB"
        for did, dae in daes.items():
            scores = [score_module(dae, outputs[mid]) for mid in module_ids]
            ae_pick = module_ids[int(np.argmin([s.ae_error for s in scores]))]
            snr_pick = module_ids[int(np.argmax([s.snr_db for s in scores]))]
            picks[f"sel-ae-{did}"] = ae_pick
            picks[f"sel-snr-{did}"] = snr_pick
            selection_lines.append(json.dumps({
                "utterance": utt_name,
                "dae": did,
                "label": rec.label,
                "scores": [{"module": s.module_id, "ae_error": s.ae_error,
                            "snr_db": s.snr_db} for s in scores],
                "sdr": {mid: metrics[mid]["SDR"] for mid in module_ids},
                "chosen_ae": ae_pick,
                "chosen_snr": snr_pick,
                "oracle": oracle,
                "chance": chance_picks[0],
                "seed": plan.seed,
            }))
        return ({"label": rec.label, "metrics": metrics,
                 "picks": picks, "chance": chance_picks}, selection_lines)

    items = list(enumerate(test.records))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(eval_record, items))
    else:
        results = [eval_record(it) for it in items]
    per_utt = [r[0] for r in results]
    selection_lines = [line for r in results for line in r[1]]

    labels = sorted({u["label"] for u in per_utt})
    rows = {}
    for metric in ("SDR", "STOI"):
        for label in labels:
            utts = [u for u in per_utt if u["label"] == label]
            row = {}
            for mid in module_ids:
                row[mid] = float(np.mean([u["metrics"][mid][metric] for u in utts]))
            row["chance"] = float(np.mean(
                [np.mean([u["metrics"][p][metric] for p in u["chance"]])
                 for u in utts]))
            for pid in policy_ids:
                if pid == "chance":
                    continue
                row[pid] = float(np.mean(
                    [u["metrics"][u["picks"][pid]][metric] for u in utts]))
            rows[(metric, label)] = row

    accuracy = {}
    for pid in policy_ids:
        if pid in ("chance", "oracle"):
            continue
        hits = [u["picks"][pid] == u["picks"]["oracle"] for u in per_utt]
        accuracy[pid] = float(np.mean(hits))

    table = ReportTable(plan.axis, module_ids, policy_ids, rows, accuracy,
                        len(per_utt))
    _write_csv(table, out / "report.csv")
    _write_text(table, out / "report.txt")
    (out / "selection.jsonl").write_text("\n".join(selection_lines) + "\n")
    _plot_report(table, out)
    return table


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _columns(table: ReportTable):
    return table.module_ids + table.policy_ids


def _write_csv(table: ReportTable, path) -> None:
    lines = ["metric,test_value,column,value"]
    for (metric, label), row in sorted(table.rows.items()):
        for col in _columns(table):
            if col not in row:
                raise ExperimentError(f"missing cell {metric}/{label}/{col}")
            lines.append(f"{metric},{label},{col},{row[col]!r}")
    for pid, acc in sorted(table.accuracy.items()):
        lines.append(f"accuracy,all,{pid},{acc!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_report_csv(path) -> dict:
    """Parse report.csv back into {(metric, test_value, column): value}."""
    cells = {}
    with open(path) as f:
        header = f.readline()
        if header.strip() != "metric,test_value,column,value":
            raise ExperimentError(f"{path}: unexpected report header")
        for line in f:
            metric, label, col, value = line.rstrip("\n").split(",")
            cells[(metric, label, col)] = float(value)
    return cells


def _write_text(table: ReportTable, path) -> None:
    cols = _columns(table)
    width = max(10, max(len(c) for c in cols) + 2)
    lines = [f"axis: {table.axis}   test utterances: {table.num_utterances}", ""]
    for metric in ("SDR", "STOI"):
        lines.append(metric)
        lines.append("  " + "test".ljust(14)
                     + "".join(c.rjust(width) for c in cols))
        for (m, label), row in sorted(table.rows.items()):
            if m != metric:
                continue
            cells = "".join(f"{row[c]:{width}.4f}" for c in cols)
            lines.append("  " + label.ljust(14) + cells)
        lines.append("")
    lines.append("selection accuracy (selector == oracle):")
    for pid, acc in sorted(table.accuracy.items()):
        lines.append(f"  {pid.ljust(20)} {acc:.4f}")
    Path(path).write_text("\n".join(lines) + "\n")


def _plot_loss(path, losses, title: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(losses, lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean batch loss")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _plot_report(table: ReportTable, out_dir: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = sorted({lab for (m, lab) in table.rows if m == "SDR"})
    matrix = np.array([[table.rows[("SDR", lab)][mid] for mid in table.module_ids]
                       for lab in labels])

    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(matrix, cmap="viridis")
    ax.set_xticks(range(len(table.module_ids)), table.module_ids, rotation=30)
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("trained module")
    ax.set_ylabel("test condition")
    ax.set_title("mean SDR (dB)")
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(j, i, f"{matrix[i, j]:.1f}", ha="center", va="center",
                    color="w", fontsize=8)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(out_dir / "sdr_matrix.png", dpi=110)
    plt.close(fig)

    policies = table.policy_ids
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / len(policies)
    xs = np.arange(len(labels))
    for k, pid in enumerate(policies):
        vals = [table.rows[("SDR", lab)][pid] for lab in labels]
        ax.bar(xs + k * width, vals, width, label=pid)
    ax.set_xticks(xs + 0.4 - width / 2, labels)
    ax.set_ylabel("mean SDR (dB)")
    ax.set_title("selection policies")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_dir / "policies_sdr.png", dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Desk-scale plan construction from a generated corpus
# ---------------------------------------------------------------------------

def make_plan(corpus_dir, axis: str, plan_dir, seed: int = 0,
              snr_db: float = 0.0, hidden=None, dae_hidden=None,
              iterations: int = 600, batch_size: int = 256,
              dropout_keep: float = 0.8, dropout_mode: str = "sampled",
              frame_size: int = 512, hop: int = 128, context: int = 3,
              train_fraction: float = 2 / 3) -> ExperimentPlan:
    """Build manifests and a ready-to-run plan from a substitute corpus.

    Train records draw noise segments from the first half of each noise
    file and test records from the second half, so the splits never share
    noise material.
    """
    if axis not in AXES:
        raise ExperimentError(f"unknown axis {axis!r}")
    corpus = Path(corpus_dir)
    plans = Path(plan_dir)
    plans.mkdir(parents=True, exist_ok=True)
    with open(corpus / "corpus.json") as f:
        layout = json.load(f)

    cleans = layout["clean"]
    speakers = sorted({c["speaker"] for c in cleans})
    cut = max(1, int(round(len(speakers) * train_fraction)))
    train_speakers = set(speakers[:cut])
    train_cleans = [c for c in cleans if c["speaker"] in train_speakers]
    test_cleans = [c for c in cleans if c["speaker"] not in train_speakers]
    if not test_cleans:
        raise ExperimentError("no test speakers left; add speakers")

    utt_len = layout["utterance_samples"]
    half = layout["noise_samples"] // 2
    span = max(half - utt_len, 1)

    def offset(split: str, i: int) -> int:
        base = 0 if split == "train" else half
        return base + (i * 4099) % span

    noise_paths = layout["noise"]
    snrs = {"noise": [snr_db], "speaker-group": [snr_db],
            "snr": [-5.0, 0.0, 5.0]}[axis]

    modules = []
    manifests = {}
    if axis == "noise":
        for kind in NOISE_KINDS:
            records = [
                MixtureRecord(c["path"], noise_paths[kind], snr_db,
                              offset("train", i), label=kind)
                for i, c in enumerate(train_cleans)
            ]
            manifests[kind] = records
            modules.append(ModuleConfig(kind, kind, f"train_{kind}.json",
                                        hidden or [128]))
        test_records = [
            MixtureRecord(c["path"], noise_paths[kind], snr_db,
                          offset("test", i * len(NOISE_KINDS) + k), label=kind)
            for i, c in enumerate(test_cleans)
            for k, kind in enumerate(NOISE_KINDS)
        ]
    elif axis == "speaker-group":
        groups = sorted({c["group"] for c in cleans})
        for g in groups:
            records = [
                MixtureRecord(c["path"], noise_paths[kind], snr_db,
                              offset("train", i * len(NOISE_KINDS) + k))
                for i, c in enumerate(train_cleans) if c["group"] == g
                for k, kind in enumerate(NOISE_KINDS)
            ]
            manifests[g] = records
            modules.append(ModuleConfig(g, g, f"train_{g}.json", hidden or [128]))
        test_records = [
            MixtureRecord(c["path"], noise_paths[kind], snr_db,
                          offset("test", i * len(NOISE_KINDS) + k),
                          label=c["group"])
            for i, c in enumerate(test_cleans)
            for k, kind in enumerate(NOISE_KINDS)
        ]
    else:  # snr axis
        for level in snrs:
            name = f"{level:+.0f}dB"
            records = [
                MixtureRecord(c["path"], noise_paths[kind], level,
                              offset("train", i * len(NOISE_KINDS) + k))
                for i, c in enumerate(train_cleans)
                for k, kind in enumerate(NOISE_KINDS)
            ]
            manifests[name] = records
            modules.append(ModuleConfig(name, name, f"train_{name}.json",
                                        hidden or [128]))
        test_records = [
            MixtureRecord(c["path"], noise_paths[kind], level,
                          offset("test", (li * len(test_cleans) + i)
                                 * len(NOISE_KINDS) + k),
                          label=f"{level:+.0f}dB")
            for li, level in enumerate(snrs)
            for i, c in enumerate(test_cleans)
            for k, kind in enumerate(NOISE_KINDS)
        ]

    sample_rate = layout["sample_rate"]
    for name, records in manifests.items():
        save_manifest(DatasetManifest(records, "train", sample_rate),
                      plans / f"train_{name}.json")
    test_manifest = DatasetManifest(test_records, "test", sample_rate)
    save_manifest(test_manifest, plans / "test.json")
    for name, records in manifests.items():
        validate_noise_disjoint(DatasetManifest(records, "train", sample_rate),
                                test_manifest, corpus)

    plan = ExperimentPlan(
        axis=axis,
        modules=modules,
        daes=[DaeConfig("dae128", context=1, hidden=dae_hidden or [128])],
        test_manifest=str((plans / "test.json").resolve()),
        dae_clean_paths=[c["path"] for c in train_cleans],
        base_dir=str(corpus.resolve()),
        sample_rate=sample_rate,
        frame_size=frame_size,
        hop=hop,
        context=context,
        rprop=RpropConfig(iterations=iterations, batch_size=batch_size),
        dropout_keep=dropout_keep,
        dropout_mode=dropout_mode,
        seed=seed,
    )
    # manifests live in plan_dir, audio in corpus_dir; store manifest paths absolute
    for m in plan.modules:
        m.manifest = str((plans / m.manifest).resolve())
    save_plan(plan, plans / f"plan_{axis}.json")
    return plan
