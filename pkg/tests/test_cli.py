import csv
import json

import numpy as np
import pytest

from arcnet.cli import ExperimentSpec, build_parser, main, run_experiment
from arcnet.degradation import DegradationParams
from arcnet.fundus_io import FundusImage, load_image, save_image
from arcnet.network import load_checkpoint
from arcnet.toydata import make_toy_corpus

TINY_TRAIN = dict(phase1_epochs=1, phase2_epochs=1, batch_size=2, crop=32,
                  resize_scales=[36, 40], depth=5, base_width=8, checkpoint_every=100)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return make_toy_corpus(tmp_path_factory.mktemp("cli_toy"), n_source=4, n_target=2,
                           n_heldout=2, size=32, seed=11)


def spec_for(corpus, out, **kw):
    d = dict(name="t", source_manifest=str(corpus["source_manifest"]),
             target_manifest=str(corpus["target_manifest"]),
             eval_manifest=str(corpus["heldout_manifest"]), out_dir=str(out), seed=0,
             train=dict(TINY_TRAIN))
    d.update(kw)
    return ExperimentSpec(**d)


def test_simulate_writes_sidecars(tmp_path, corpus):
    out = tmp_path / "sim"
    assert main(["simulate", "--input-dir", str(corpus["source_clear"]), "--output-dir", str(out),
                 "--seed", "5"]) == 0
    pngs = sorted(out.glob("*.png"))
    assert len(pngs) == 4
    side = json.loads((out / f"{pngs[0].stem}.json").read_text())
    p = DegradationParams.from_dict({k: v for k, v in side.items() if k != "source"})
    assert 0.6 <= p.alpha <= 0.95
    first = load_image(pngs[0]).pixels
    main(["simulate", "--input-dir", str(corpus["source_clear"]), "--output-dir", str(out),
          "--seed", "5"])
    assert np.array_equal(load_image(pngs[0]).pixels, first)


def test_simulate_fixed_params(tmp_path, corpus):
    params = tmp_path / "p.json"
    params.write_text(json.dumps(dict(alpha=1.0, beta=0.0, panel_center=[0, 0], r_b=0,
                                      sigma_b=1.0, r_l=0, sigma_l=1.0, seed=0)))
    out = tmp_path / "sim"
    assert main(["simulate", "--input-dir", str(corpus["source_clear"]), "--output-dir",
                 str(out), "--params", str(params)]) == 0
    src = sorted(corpus["source_clear"].glob("*.png"))[0]
    assert np.array_equal(load_image(out / src.name).pixels, load_image(src).pixels)


def test_decompose_files(tmp_path):
    save_image(FundusImage(np.full((40, 40, 3), 0.4)), tmp_path / "c.png")
    assert main(["decompose", "--input", str(tmp_path / "c.png"), "--rp", "5", "--sigma", "2",
                 "--out-prefix", str(tmp_path / "P")]) == 0
    assert np.allclose(load_image(tmp_path / "P_lfc.png").pixels, 102 / 255)
    # zero HFC maps to mid-grey in the visualization file
    assert np.abs(load_image(tmp_path / "P_hfc.png").pixels - 0.5).max() <= 1 / 255


def test_evaluate_command(tmp_path, corpus, capsys):
    out = tmp_path / "r.json"
    d = corpus["heldout_clear"]
    assert main(["evaluate", "--pred", str(d), "--ref", str(d), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["mean_ssim"] == 1.0
    assert (tmp_path / "r.csv").exists()


def test_unknown_flag_is_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["evaluate", "--pred", "a", "--ref", "b", "--out", "c", "--bogus"])
    assert exc.value.code == 2


def test_help_documents_every_flag():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert set(sub.choices) >= {"simulate", "decompose", "train", "restore", "evaluate",
                                "experiment"}
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
            if action.option_strings and action.dest != "help":
                assert action.help, (name, action.dest)


def test_exit_codes(tmp_path):
    assert main(["decompose", "--input", str(tmp_path / "missing.png"),
                 "--out-prefix", str(tmp_path / "x")]) == 3
    save_image(FundusImage(np.zeros((8, 8, 3))), tmp_path / "z.png")
    assert main(["decompose", "--input", str(tmp_path / "z.png"), "--rp", "0",
                 "--out-prefix", str(tmp_path / "x")]) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["train", "--config", str(tmp_path / "bad.json")]) == 2


def test_train_and_restore_commands(tmp_path, corpus):
    cfg = dict(TINY_TRAIN, source_manifest=str(corpus["source_manifest"]),
               target_manifest=str(corpus["target_manifest"]), out_dir=str(tmp_path / "run"))
    (tmp_path / "train.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "train.json")]) == 0
    ckpt = tmp_path / "run" / "ckpt_4.arcnet"
    assert ckpt.exists()
    assert main(["restore", "--checkpoint", str(ckpt), "--input",
                 str(corpus["heldout_degraded"]), "--output", str(tmp_path / "rest")]) == 0
    outs = sorted((tmp_path / "rest").glob("*.png"))
    assert len(outs) == 2 and load_image(outs[0]).pixels.shape == (32, 32, 3)


def test_structure_loss_without_guidance_is_config_error(tmp_path, corpus):
    spec = spec_for(corpus, tmp_path / "x", use_hfc=False)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(vars(spec)))
    assert main(["experiment", "--spec", str(path)]) == 2


def log_rows(out):
    with open(out / "train" / "train_log.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def test_experiment_all_flags_false(tmp_path, corpus):
    spec = spec_for(corpus, tmp_path / "abl", use_hfc=False, use_structure_loss=False,
                    use_domain_loss=False)
    row = run_experiment(spec)
    bundle = load_checkpoint(row["checkpoint"])
    assert bundle.generator.spec.in_channels == 3
    rows = log_rows(tmp_path / "abl")
    assert all(float(r["l_s"]) == 0.0 and float(r["l_d"]) == 0.0 for r in rows)
    assert row["n"] == 2


def test_experiment_equals_composition(tmp_path, corpus):
    row = run_experiment(spec_for(corpus, tmp_path / "exp"))
    assert json.loads((tmp_path / "exp" / "result.json").read_text())["mean_ssim"] == row["mean_ssim"]
    cfg = dict(TINY_TRAIN, source_manifest=str(corpus["source_manifest"]),
               target_manifest=str(corpus["target_manifest"]), out_dir=str(tmp_path / "manual"))
    (tmp_path / "t.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "t.json")]) == 0
    assert main(["restore", "--checkpoint", str(tmp_path / "manual" / "ckpt_4.arcnet"),
                 "--input", str(corpus["heldout_degraded"]), "--output",
                 str(tmp_path / "manual_rest")]) == 0
    assert main(["evaluate", "--pred", str(tmp_path / "manual_rest"), "--ref",
                 str(corpus["heldout_clear"]), "--out", str(tmp_path / "m.json")]) == 0
    manual = json.loads((tmp_path / "m.json").read_text())
    assert manual["mean_ssim"] == pytest.approx(row["mean_ssim"], abs=1e-12)
    assert manual["mean_psnr"] == pytest.approx(row["mean_psnr"], abs=1e-9)


def test_seed_changes_row_not_fingerprint(tmp_path, corpus):
    a = run_experiment(spec_for(corpus, tmp_path / "s0", seed=0))
    b = run_experiment(spec_for(corpus, tmp_path / "s1", seed=1))
    assert a["fingerprint"] == b["fingerprint"]
    assert a["seed"] != b["seed"] and a["final_total"] != b["final_total"]
