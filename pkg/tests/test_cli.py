import json

import numpy as np
import pytest

from mnn.audio import write_wav
from mnn.cli import main
from mnn.data import (generate_corpus, mix_at_snr, synth_noise,
                      synth_utterance)
from mnn.network import init_weights, save_network

SR = 16000


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "MNN1" in capsys.readouterr().out


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--no-such-flag"])
    assert exc.value.code == 2


def test_missing_file_exits_3(tmp_path):
    assert main(["eval", "--est", str(tmp_path / "a.wav"),
                 "--ref", str(tmp_path / "b.wav")]) == 3


def test_synth(tmp_path, capsys):
    assert main(["synth", "--speakers", "2", "--utterances", "1",
                 "--seed", "3", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "corpus.json").exists()
    assert (tmp_path / "c" / "noise" / "chirps.wav").exists()


def test_eval_identical_caps(tmp_path, capsys):
    w = synth_utterance(np.random.default_rng(0), "low", 1.0, SR)
    write_wav(tmp_path / "w.wav", w)
    assert main(["eval", "--est", str(tmp_path / "w.wav"),
                 "--ref", str(tmp_path / "w.wav")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["sdr_db"] == 100.0
    assert doc["snr_db"] == 100.0


def _training_manifest(tmp_path, kind="module"):
    rng = np.random.default_rng(1)
    clean = synth_utterance(rng, "low", 0.8, SR)
    noise = synth_noise("clicks", 2.0, SR, rng)
    write_wav(tmp_path / "clean.wav", clean)
    write_wav(tmp_path / "noise.wav", noise)
    doc = {
        "split": "train",
        "sample_rate": SR,
        "metadata": {},
        "records": [{"clean_path": "clean.wav", "noise_path": "noise.wav",
                     "snr_db": 0.0, "noise_offset": 0, "seed": 0}],
        "config": {
            "frame_size": 256,
            "hop": 64,
            "context": 1 if kind == "dae" else 3,
            "dims": None,
            "activations": None,
            "rprop": {"iterations": 40, "batch_size": 32},
            "dropout": {"keep": 0.9, "mode": "sampled", "seed": 1},
            "seed": 5,
        },
    }
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


def test_train_module_deterministic(tmp_path):
    manifest = _training_manifest(tmp_path)
    for name in ("a.mnn", "b.mnn"):
        assert main(["train-module", "--manifest", str(manifest),
                     "--out", str(tmp_path / name), "--seed", "7"]) == 0
    assert (tmp_path / "a.mnn").read_bytes() == (tmp_path / "b.mnn").read_bytes()


def test_train_dae_and_loss_curve(tmp_path):
    manifest = _training_manifest(tmp_path, kind="dae")
    assert main(["train-dae", "--manifest", str(manifest),
                 "--out", str(tmp_path / "dae.mnn"),
                 "--loss-curve", str(tmp_path / "loss.csv")]) == 0
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "iteration,mean_loss"
    assert len(lines) == 41


def test_enhance_and_select_end_to_end(tmp_path, capsys):
    rng = np.random.default_rng(2)
    clean = synth_utterance(rng, "high", 1.0, SR)
    noise = synth_noise("chirps", 2.0, SR, rng)
    mix, _ = mix_at_snr(clean, noise, 0.0)
    write_wav(tmp_path / "mix.wav", mix)
    write_wav(tmp_path / "ref.wav", clean)

    D = 129  # frame 256
    for i in range(2):
        net = init_weights([3 * D, 16, D], ["modified-relu", "logistic"], i)
        save_network(net, tmp_path / f"mod{i}.mnn")
    dae = init_weights([D, 16, D], ["modified-relu", "modified-relu"], 9)
    save_network(dae, tmp_path / "dae.mnn")

    assert main(["enhance", "--model", str(tmp_path / "mod0.mnn"),
                 "--in", str(tmp_path / "mix.wav"),
                 "--out", str(tmp_path / "enh.wav"),
                 "--frame-size", "256"]) == 0
    assert (tmp_path / "enh.wav").exists()

    assert main(["select", "--mixture", str(tmp_path / "mix.wav"),
                 "--modules", str(tmp_path / "mod0.mnn"),
                 str(tmp_path / "mod1.mnn"),
                 "--dae", str(tmp_path / "dae.mnn"),
                 "--metric", "ae", "--frame-size", "256",
                 "--reference", str(tmp_path / "ref.wav"),
                 "--out-dir", str(tmp_path / "sel")]) == 0
    chosen = capsys.readouterr().out.strip().splitlines()[-1]
    assert chosen in ("mod0", "mod1")
    assert (tmp_path / "sel" / "enhanced.wav").exists()
    report = json.loads((tmp_path / "sel" / "report.json").read_text())
    assert report["chosen"] == chosen
    assert report["oracle"] in ("mod0", "mod1")


def test_experiment_run_cli(tmp_path, capsys):
    generate_corpus(tmp_path / "corpus", speakers=4, utterances=2, seed=5,
                    noise_seconds=20.0)
    from mnn.experiment import make_plan
    make_plan(tmp_path / "corpus", "noise", tmp_path / "plans", seed=5,
              iterations=40, batch_size=64, hidden=[16], dae_hidden=[16])
    assert main(["experiment", "run",
                 "--plan", str(tmp_path / "plans" / "plan_noise.json"),
                 "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "report.csv").exists()
