"""Domain-adaptive training loop: augmentation, alternating updates, schedule, checkpoints."""

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from arcnet.degradation import SamplingRanges, sample_params, simulate_cataract
from arcnet.errors import ConfigError, NumericError
from arcnet.frequency import DEFAULT_RP, DEFAULT_SIGMA_P, HFCGuidance
from arcnet.fundus_io import DatasetManifest, FundusImage, load_image
from arcnet.network import build_bundle, load_checkpoint, save_checkpoint, to_network
from arcnet.objectives import (LOG_COLUMNS, LossReport, LossWeights, adversarial_loss,
                               image_l1, structure_l1, total_generator_loss)

log = logging.getLogger(__name__)

# named random streams, all derived from the root seed
STREAM_SHUFFLE, STREAM_AUG, STREAM_TARGET, STREAM_PARAMS = 1, 2, 3, 4

# keys left out of the config fingerprint
_UNFINGERPRINTED = ("seed", "out_dir", "checkpoint_every")


@dataclass
class TrainConfig:
    source_manifest: str
    target_manifest: Optional[str] = None
    out_dir: str = "runs/train"
    phase1_epochs: int = 80
    phase2_epochs: int = 20
    lr_phase1: float = 2e-4
    lr_phase2: float = 5e-5
    batch_size: int = 8
    crop: int = 256
    resize_scales: tuple = (286, 306, 326, 346)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 1000
    r_p: int = DEFAULT_RP
    sigma_p: float = DEFAULT_SIGMA_P
    depth: int = 8
    base_width: int = 64
    use_hfc: bool = True
    use_structure_loss: bool = True
    use_domain_loss: bool = True
    synthesize_source: bool = False
    degradation_ranges: Optional[dict] = None
    deterministic: bool = True
    max_steps: Optional[int] = None

    @property
    def epochs(self):
        return self.phase1_epochs + self.phase2_epochs

    def validate(self):
        if self.phase1_epochs < 0 or self.phase2_epochs < 0 or self.epochs < 1:
            raise ConfigError("epoch counts must be nonnegative with at least one epoch")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1 when set")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.resize_scales or self.crop > min(self.resize_scales):
            raise ConfigError(f"crop {self.crop} exceeds smallest resize scale {self.resize_scales}")
        if self.crop % (2 ** self.depth):
            raise ConfigError(f"crop {self.crop} not divisible by 2**depth ({2 ** self.depth})")
        if self.use_structure_loss and not self.use_hfc:
            raise ConfigError("structure loss requires HFC guidance (use_hfc)")
        if self.use_domain_loss and not self.target_manifest:
            raise ConfigError("domain loss requires a target manifest")
        return self

    def to_dict(self):
        d = asdict(self)
        d["resize_scales"] = list(self.resize_scales)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        epochs = d.pop("epochs", None)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        if "resize_scales" in d:
            d["resize_scales"] = tuple(int(v) for v in d["resize_scales"])
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        if epochs is not None and epochs != cfg.epochs:
            raise ConfigError(f"epochs={epochs} but phases sum to {cfg.epochs}")
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        cfg = cls.from_dict(d)
        # relative paths in a config file are relative to the file
        for key in ("source_manifest", "target_manifest", "out_dir"):
            v = getattr(cfg, key)
            if v and not Path(v).is_absolute():
                setattr(cfg, key, str((path.parent / v).resolve()))
        return cfg

    def fingerprint(self):
        d = {k: v for k, v in self.to_dict().items() if k not in _UNFINGERPRINTED}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def lr_for_epoch(config, epoch):
    """Step schedule: phase-1 rate for the first ``phase1_epochs`` epochs, then phase 2."""
    return config.lr_phase1 if epoch < config.phase1_epochs else config.lr_phase2


def stream_rng(seed, stream, *keys):
    return np.random.default_rng([int(seed), stream, *[int(k) for k in keys]])


@dataclass
class TrainState:
    bundle: object
    epoch: int = 0
    batch_index: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    use_structure_loss: bool = True
    use_domain_loss: bool = True

    @property
    def step(self):
        return self.bundle.step


def _to_chw(pixels):
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(pixels, -1, 0))).float()


def draw_window(rng, scales, crop):
    """(scale, top, left): a uniformly chosen scale and crop offset within it."""
    scale = int(scales[rng.integers(len(scales))])
    if crop > scale:
        raise ConfigError(f"crop {crop} larger than scale {scale}")
    top = int(rng.integers(0, scale - crop + 1))
    left = int(rng.integers(0, scale - crop + 1))
    return scale, top, left


def augment(img, paired=None, rng=None, scales=(286, 306, 326, 346), crop=256):
    """Random square rescale to one of ``scales`` then a random ``crop`` window.

    The same scale and window are applied to ``paired``, keeping pixel
    correspondence. Accepts HxWx3 arrays or FundusImages and returns arrays.
    """
    rng = rng if rng is not None else np.random.default_rng()
    scale, top, left = draw_window(rng, scales, crop)

    def apply(x):
        pix = x.pixels if isinstance(x, FundusImage) else np.asarray(x)
        t = _to_chw(pix)[None]
        t = F.interpolate(t, size=(scale, scale), mode="bilinear", align_corners=False)
        t = t[:, :, top:top + crop, left:left + crop].clamp(0.0, 1.0)
        return np.moveaxis(t[0].double().numpy(), 0, -1)

    out = apply(img)
    if paired is None:
        return out
    return out, apply(paired)


def _set_requires_grad(module, flag):
    for p in module.parameters():
        p.requires_grad_(flag)


def train_step(state, source_batch, target_batch=None):
    """One D_p update, one D_d update, one generator update.

    ``source_batch`` is ``(degraded, clear)``, both (N, 3, H, W) tensors in
    [0, 1]; ``target_batch`` is (N, 3, H, W) in [0, 1] or None when the
    domain loss is off. Returns the generator-side losses of this step.
    """
    b = state.bundle
    g, dp, dd = b.generator, b.d_pixel, b.d_domain
    degraded, clear = source_batch
    use_d = state.use_domain_loss and target_batch is not None
    if use_d and target_batch.shape[0] != degraded.shape[0]:
        raise ConfigError("source and target batches must have equal size")
    guidance = HFCGuidance(b.r_p, b.sigma_p) if b.use_hfc else None
    g.train()
    dp.train()
    dd.train()

    s_hat = (g(b.guidance_input(degraded)) + 1.0) / 2.0
    t_hat = (g(b.guidance_input(target_batch)) + 1.0) / 2.0 if use_d else None

    _set_requires_grad(dp, True)
    b.opt_dp.zero_grad(set_to_none=True)
    loss_dp = _term("D_p loss", lambda: adversarial_loss(
        dp(to_network(clear)), dp(to_network(s_hat.detach())), "discriminator"))
    loss_dp.backward()
    b.opt_dp.step()

    loss_dd = torch.zeros(())
    if use_d:
        _set_requires_grad(dd, True)
        b.opt_dd.zero_grad(set_to_none=True)
        loss_dd = _term("D_d loss", lambda: adversarial_loss(
            dd(to_network(s_hat.detach())), dd(to_network(t_hat.detach())), "discriminator"))
        loss_dd.backward()
        b.opt_dd.step()

    _set_requires_grad(dp, False)
    _set_requires_grad(dd, False)
    try:
        zero = torch.zeros((), dtype=s_hat.dtype)
        l_p = _term("l_p", lambda: adversarial_loss(None, dp(to_network(s_hat)), "generator"))
        l_i = _term("l_i", lambda: image_l1(s_hat, clear))
        l_s = (_term("l_s", lambda: structure_l1(s_hat, clear, guidance))
               if state.use_structure_loss else zero)
        l_d = (_term("l_d", lambda: adversarial_loss(None, dd(to_network(t_hat)), "generator"))
               if use_d else zero)
        # weighted sum in float64 so the logged total equals the logged parts
        parts = LossReport(l_p=l_p.double(), l_i=l_i.double(), l_s=l_s.double(),
                           l_d=l_d.double(), total=None)
        total = total_generator_loss(parts, state.weights)
        _check("total", total)
        b.opt_g.zero_grad(set_to_none=True)
        total.backward()
        b.opt_g.step()
    finally:
        _set_requires_grad(dp, True)
        _set_requires_grad(dd, True)

    b.step += 1
    return LossReport(l_p=l_p.item(), l_i=l_i.item(), l_s=l_s.item(), l_d=l_d.item(),
                      total=total.item(), step=b.step, d_pixel=loss_dp.item(),
                      d_domain=loss_dd.item())


def _check(name, value):
    if not torch.isfinite(value).all():
        raise NumericError(f"loss term {name} is not finite ({value.item()})")


def _term(name, compute):
    try:
        value = compute()
    except NumericError as exc:
        raise NumericError(f"loss term {name}: {exc}") from exc
    _check(name, value)
    return value


class _Corpus:
    """In-memory source pairs / clear images and target images for one run."""

    def __init__(self, config):
        if not config.source_manifest:
            raise ConfigError("source_manifest is required")
        src = DatasetManifest.load(config.source_manifest).validate()
        self.config = config
        self.ranges = SamplingRanges.from_dict(config.degradation_ranges or {})
        pairs = src.pairs()
        if config.synthesize_source:
            clear = src.by_role("source-clear")
            if not clear:
                raise ConfigError("source manifest has no source-clear entries")
            self.clear = [load_image(src.resolve(e)) for e in clear]
            self.degraded = None
        else:
            if not pairs:
                raise ConfigError("source manifest has no (source-degraded, source-clear) pairs; "
                                  "set synthesize_source to degrade clear images on the fly")
            self.degraded = [load_image(src.resolve(d)) for d, _ in pairs]
            self.clear = [load_image(src.resolve(c)) for _, c in pairs]
        self.target = []
        if config.use_domain_loss:
            tgt = DatasetManifest.load(config.target_manifest).validate()
            entries = tgt.by_role("target")
            if not entries:
                raise ConfigError("target manifest has no target entries")
            self.target = [load_image(tgt.resolve(e)) for e in entries]

    def __len__(self):
        return len(self.clear)

    def n_batches(self):
        return math.ceil(len(self) / self.config.batch_size)

    def source_pair(self, index, epoch):
        if self.degraded is not None:
            return self.degraded[index], self.clear[index]
        clear = self.clear[index]
        seed = int(np.random.SeedSequence(
            [self.config.seed, STREAM_PARAMS, epoch, index]).generate_state(1)[0])
        h, w = clear.shape
        return simulate_cataract(clear, sample_params(h, w, seed, self.ranges)), clear

    def batch(self, epoch, k):
        cfg = self.config
        order = stream_rng(cfg.seed, STREAM_SHUFFLE, epoch).permutation(len(self))
        idx = order[k * cfg.batch_size:(k + 1) * cfg.batch_size]
        rng = stream_rng(cfg.seed, STREAM_AUG, epoch, k)
        deg, cl = [], []
        for i in idx:
            d, c = self.source_pair(int(i), epoch)
            d, c = augment(d, c, rng, cfg.resize_scales, cfg.crop)
            deg.append(_to_chw(d))
            cl.append(_to_chw(c))
        target = None
        if self.target:
            trng = stream_rng(cfg.seed, STREAM_TARGET, epoch, k)
            n = len(idx)
            tidx = trng.choice(len(self.target), size=n, replace=len(self.target) < n)
            target = torch.stack([_to_chw(augment(self.target[int(i)], None, trng,
                                                  cfg.resize_scales, cfg.crop))
                                  for i in tidx])
        return (torch.stack(deg), torch.stack(cl)), target


def set_deterministic(flag=True):
    torch.use_deterministic_algorithms(flag)
    if flag:
        torch.backends.cudnn.benchmark = False


def _read_log(path, upto_step):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh)][1:]
    return [r for r in rows if r and int(r[0]) <= upto_step]


def fit(config, resume=None, progress=None):
    """Run the two-phase schedule; returns the path of the final checkpoint.

    Writes ``train_log.csv`` (one row per step), ``config.json`` and
    ``ckpt_<step>.arcnet`` files into ``config.out_dir``.
    """
    config.validate()
    if config.deterministic:
        set_deterministic(True)
    torch.manual_seed(config.seed)
    corpus = _Corpus(config)
    if len(corpus) == 0:
        raise ConfigError("source manifest is empty")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2))
    fp = config.fingerprint()

    if resume is not None:
        bundle = load_checkpoint(resume)
        if bundle.fingerprint != fp:
            raise ConfigError(f"checkpoint fingerprint {bundle.fingerprint} != config {fp}")
        epoch = int(bundle.extra.get("epoch", 0))
        batch_index = int(bundle.extra.get("batch_index", 0))
    else:
        bundle = build_bundle(seed=config.seed, depth=config.depth, image_size=config.crop,
                              use_hfc=config.use_hfc, r_p=config.r_p, sigma_p=config.sigma_p,
                              lr=config.lr_phase1, fingerprint=fp,
                              base_width=config.base_width)
        epoch, batch_index = 0, 0
    bundle.extra["config"] = config.to_dict()
    state = TrainState(bundle, epoch, batch_index, config.weights,
                       config.use_structure_loss, config.use_domain_loss)

    log_path = out / "train_log.csv"
    kept = _read_log(log_path, bundle.step) if resume is not None and log_path.exists() else []
    n_batches = corpus.n_batches()
    last = None
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        writer.writerows(kept)
        while state.epoch < config.epochs and not _done(config, bundle):
            bundle.set_lr(lr_for_epoch(config, state.epoch))
            while state.batch_index < n_batches and not _done(config, bundle):
                source, target = corpus.batch(state.epoch, state.batch_index)
                try:
                    report = train_step(state, source, target)
                except NumericError as exc:
                    raise NumericError(f"step {bundle.step + 1} (epoch {state.epoch}): {exc}") from exc
                state.batch_index += 1
                writer.writerow([repr(v) if isinstance(v, float) else v for v in report.row()])
                fh.flush()
                if progress is not None:
                    progress(report)
                if bundle.step % config.checkpoint_every == 0:
                    last = _checkpoint(state, out, n_batches)
            if state.batch_index < n_batches:
                break
            state.epoch += 1
            state.batch_index = 0
            log.info("epoch %d/%d done at step %d", state.epoch, config.epochs, bundle.step)
    if last is None or last.name != f"ckpt_{bundle.step}.arcnet":
        last = _checkpoint(state, out, n_batches)
    return last


def _done(config, bundle):
    return config.max_steps is not None and bundle.step >= config.max_steps


def _checkpoint(state, out, n_batches):
    epoch, batch_index = state.epoch, state.batch_index
    if batch_index >= n_batches:
        epoch, batch_index = epoch + 1, 0
    state.bundle.extra.update(epoch=epoch, batch_index=batch_index)
    return save_checkpoint(state.bundle, out / f"ckpt_{state.bundle.step}.arcnet")
