"""``arcnet`` command line: simulate, decompose, train, restore, evaluate, experiment."""

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from arcnet.degradation import DegradationParams, SamplingRanges, sample_params, simulate_cataract
from arcnet.errors import ArcNetError, ConfigError, DataError
from arcnet.evaluation import evaluate_dir
from arcnet.frequency import decompose
from arcnet.fundus_io import (DatasetManifest, list_images, load_image, resize_image,
                              save_image)
from arcnet.network import load_checkpoint, restore
from arcnet.training import TrainConfig, fit

log = logging.getLogger("arcnet")

RESULT_COLUMNS = ("name", "seed", "fingerprint", "use_hfc", "use_structure_loss",
                  "use_domain_loss", "n", "mean_ssim", "mean_psnr", "baseline_ssim",
                  "baseline_psnr", "final_total", "checkpoint")


def image_seed(root_seed, index):
    return int(np.random.SeedSequence([int(root_seed), 4, int(index)]).generate_state(1)[0])


def simulate_dir(input_dir, output_dir, seed=0, params=None):
    """Degrade every image in ``input_dir``; one ``<stem>.json`` sidecar per image.

    ``params`` may be a fixed :class:`DegradationParams` (applied to all
    images) or :class:`SamplingRanges` for per-image sampling.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, path in enumerate(list_images(input_dir)):
        img = load_image(path)
        h, w = img.shape
        if isinstance(params, DegradationParams):
            p = params
        else:
            p = sample_params(h, w, image_seed(seed, i), params)
        out = output_dir / f"{path.stem}.png"
        save_image(simulate_cataract(img, p), out)
        (output_dir / f"{path.stem}.json").write_text(
            json.dumps({"source": str(path), **p.to_dict()}, indent=2))
        written.append(out)
    return written


def _load_params(path):
    d = json.loads(Path(path).read_text())
    if isinstance(d.get("alpha"), (int, float)):
        return DegradationParams.from_dict(d)
    return SamplingRanges.from_dict(d)


def restore_paths(bundle, inputs, output_dir):
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    size = (bundle.image_size, bundle.image_size)
    outs = []
    for path in inputs:
        img = resize_image(load_image(path), size)
        out = output_dir / f"{Path(path).stem}.png"
        save_image(restore(bundle, img), out)
        outs.append(out)
    return outs


@dataclass
class ExperimentSpec:
    name: str
    source_manifest: str
    target_manifest: Optional[str]
    eval_manifest: str
    out_dir: str
    seed: int = 0
    use_hfc: bool = True
    use_structure_loss: bool = True
    use_domain_loss: bool = True
    train: dict = field(default_factory=dict)

    def validate(self):
        if self.use_structure_loss and not self.use_hfc:
            raise ConfigError("structure loss without HFC guidance is undefined")
        return self

    def train_config(self):
        d = dict(self.train)
        d.update(source_manifest=self.source_manifest,
                 target_manifest=self.target_manifest if self.use_domain_loss else None,
                 out_dir=str(Path(self.out_dir) / "train"), seed=self.seed,
                 use_hfc=self.use_hfc, use_structure_loss=self.use_structure_loss,
                 use_domain_loss=self.use_domain_loss)
        return TrainConfig.from_dict(d)

    @classmethod
    def load(cls, path):
        path = Path(path)
        d = json.loads(path.read_text())
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for key in ("source_manifest", "target_manifest", "eval_manifest", "out_dir"):
            v = getattr(spec, key)
            if v and not Path(v).is_absolute():
                setattr(spec, key, str((path.parent / v).resolve()))
        return spec


def _stage_eval_set(manifest_path, out_dir, size):
    """Resize eval inputs and references to the model size under ``out_dir``."""
    m = DatasetManifest.load(manifest_path).validate()
    refs = {e.pair_id: e for e in m.by_role("reference")}
    inputs = [e for e in m.by_role("target") + m.by_role("source-degraded")]
    if not inputs:
        raise ConfigError(f"{manifest_path}: no target/source-degraded entries to restore")
    deg_dir, ref_dir = Path(out_dir) / "degraded", Path(out_dir) / "reference"
    deg_dir.mkdir(parents=True, exist_ok=True)
    ref_dir.mkdir(parents=True, exist_ok=True)
    staged = []
    for e in inputs:
        stem = e.pair_id or Path(e.path).stem
        if stem not in refs:
            raise DataError(f"no reference for eval input {e.path}")
        p = deg_dir / f"{stem}.png"
        save_image(resize_image(load_image(m.resolve(e)), size), p)
        save_image(resize_image(load_image(m.resolve(refs[stem])), size), ref_dir / f"{stem}.png")
        staged.append(p)
    return staged, deg_dir, ref_dir


def run_experiment(spec, progress=None):
    """Train, restore the evaluation set, score it; returns the result row dict.

    Writes ``result.json``/``result.csv`` (one row), ``report.json``/``.csv``
    for the restorations and ``baseline.json``/``.csv`` for the unrestored
    inputs into ``spec.out_dir``.
    """
    spec.validate()
    cfg = spec.train_config()
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = fit(cfg, progress=progress)
    bundle = load_checkpoint(ckpt)
    size = (bundle.image_size, bundle.image_size)
    staged, deg_dir, ref_dir = _stage_eval_set(spec.eval_manifest, out, size)
    restore_paths(bundle, staged, out / "restored")
    fp = cfg.fingerprint()
    report = evaluate_dir(out / "restored", ref_dir, fingerprint=fp)
    report.write(out / "report.json")
    baseline = evaluate_dir(deg_dir, ref_dir, fingerprint=fp)
    baseline.write(out / "baseline.json")
    with open(Path(cfg.out_dir) / "train_log.csv", newline="") as fh:
        last = list(csv.DictReader(fh))[-1]
    row = {"name": spec.name, "seed": spec.seed, "fingerprint": fp,
           "use_hfc": spec.use_hfc, "use_structure_loss": spec.use_structure_loss,
           "use_domain_loss": spec.use_domain_loss, "n": len(report.rows),
           "mean_ssim": report.mean_ssim, "mean_psnr": report.mean_psnr,
           "baseline_ssim": baseline.mean_ssim, "baseline_psnr": baseline.mean_psnr,
           "final_total": float(last["total"]), "checkpoint": str(ckpt)}
    (out / "result.json").write_text(json.dumps(row, indent=2))
    with open(out / "result.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        w.writerow(row)
    return row


def _cmd_simulate(args):
    params = _load_params(args.params) if args.params else None
    outs = simulate_dir(args.input_dir, args.output_dir, args.seed, params)
    print(f"wrote {len(outs)} degraded images to {args.output_dir}")


def _cmd_decompose(args):
    img = load_image(args.input)
    pair = decompose(img, args.rp, args.sigma)
    prefix = str(args.out_prefix)
    save_image(np.clip(pair.lfc, 0.0, 1.0), prefix + "_lfc.png")
    save_image(np.clip((pair.hfc + 1.0) / 2.0, 0.0, 1.0), prefix + "_hfc.png")
    print(f"wrote {prefix}_lfc.png and {prefix}_hfc.png")


def _cmd_train(args):
    cfg = TrainConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    ckpt = fit(cfg, resume=args.resume)
    print(ckpt)


def _cmd_restore(args):
    bundle = load_checkpoint(args.checkpoint)
    src = Path(args.input)
    inputs = list_images(src) if src.is_dir() else [src]
    if not inputs:
        raise DataError(f"no images found in {src}")
    outs = restore_paths(bundle, inputs, args.output)
    print(f"restored {len(outs)} images into {args.output}")


def _cmd_evaluate(args):
    report = evaluate_dir(args.pred, args.ref, args.mask)
    json_path, csv_path = report.write(args.out)
    print(json.dumps({"n": len(report.rows), "mean_ssim": report.mean_ssim,
                      "mean_psnr": report.mean_psnr, "skipped": len(report.skipped)}))


def _cmd_experiment(args):
    spec = ExperimentSpec.load(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    row = run_experiment(spec)
    print(json.dumps(row))


def _cmd_toy(args):
    from arcnet.toydata import make_toy_corpus
    paths = make_toy_corpus(args.out, args.n_source, args.n_target, args.n_heldout,
                            args.size, args.seed)
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))


def build_parser():
    p = argparse.ArgumentParser(prog="arcnet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthesize cataract-like images from clear ones")
    s.add_argument("--input-dir", required=True, help="directory of clear PNG/JPEG images")
    s.add_argument("--output-dir", required=True, help="where degraded images and sidecars go")
    s.add_argument("--seed", type=int, default=0, help="root seed for parameter sampling")
    s.add_argument("--params", help="JSON with fixed degradation params or sampling ranges")
    s.set_defaults(func=_cmd_simulate)

    s = sub.add_parser("decompose", help="write the low/high frequency split of one image")
    s.add_argument("--input", required=True, help="input image")
    s.add_argument("--rp", type=int, default=26, help="low-pass radius (default 26)")
    s.add_argument("--sigma", type=float, default=9.0, help="low-pass sigma (default 9)")
    s.add_argument("--out-prefix", required=True, help="output prefix for _lfc/_hfc PNGs")
    s.set_defaults(func=_cmd_decompose)

    s = sub.add_parser("train", help="train a restoration model from a JSON config")
    s.add_argument("--config", required=True, help="TrainConfig JSON")
    s.add_argument("--resume", help="checkpoint to resume from")
    s.add_argument("--seed", type=int, help="override the config's root seed")
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("restore", help="restore images with a trained checkpoint")
    s.add_argument("--checkpoint", required=True, help="arcnet-ckpt-v1 archive")
    s.add_argument("--input", required=True, help="image file or directory")
    s.add_argument("--output", required=True, help="output directory")
    s.set_defaults(func=_cmd_restore)

    s = sub.add_parser("evaluate", help="SSIM/PSNR of predictions against references")
    s.add_argument("--pred", required=True, help="directory of restored images")
    s.add_argument("--ref", required=True, help="directory of reference images")
    s.add_argument("--mask", help="directory of overlap masks (matched by stem)")
    s.add_argument("--out", required=True, help="report JSON path; CSV written alongside")
    s.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser("experiment", help="train + restore + evaluate from an ExperimentSpec")
    s.add_argument("--spec", required=True, help="ExperimentSpec JSON")
    s.add_argument("--seed", type=int, help="override the spec's seed")
    s.set_defaults(func=_cmd_experiment)

    s = sub.add_parser("toy-corpus", help="generate a synthetic toy corpus with manifests")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--n-source", type=int, default=32, help="paired source images")
    s.add_argument("--n-target", type=int, default=16, help="unpaired target images")
    s.add_argument("--n-heldout", type=int, default=16, help="held-out evaluation pairs")
    s.add_argument("--size", type=int, default=128, help="image side length")
    s.add_argument("--seed", type=int, default=0, help="corpus seed")
    s.set_defaults(func=_cmd_toy)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ArcNetError as exc:
        print(f"arcnet: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"arcnet: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"arcnet: config error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
