"""U-Net generator, patch discriminators, model bundle and checkpoints."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from arcnet.errors import ConfigError, ShapeError
from arcnet.frequency import DEFAULT_RP, DEFAULT_SIGMA_P, decompose
from arcnet.fundus_io import FundusImage

CKPT_FORMAT = "arcnet-ckpt-v1"
LEAK = 0.2
INIT_STD = 0.02


@dataclass
class GeneratorSpec:
    in_channels: int = 6
    out_channels: int = 3
    depth: int = 8
    base_width: int = 64
    max_width: int = 512

    def widths(self):
        return [min(self.base_width * 2 ** i, self.max_width) for i in range(self.depth)]


@dataclass
class DiscriminatorSpec:
    in_channels: int = 3
    channels: tuple = (64, 128, 256, 512, 1)
    strides: tuple = (2, 2, 2, 1, 1)
    kernel_size: int = 4
    padding: int = 1


class UNetGenerator(nn.Module):
    """Encoder/decoder with a skip connection between every pair of mirrored levels.

    Down level i: LeakyReLU -> stride-2 conv -> BatchNorm (the first level has
    no activation in front, the innermost no normalization). Up level i:
    ReLU -> stride-2 transposed conv -> BatchNorm, and the outermost level
    ends in Tanh instead. No dropout.
    """

    def __init__(self, spec=None):
        super().__init__()
        spec = spec or GeneratorSpec()
        if spec.depth < 2:
            raise ConfigError("generator depth must be at least 2")
        self.spec = spec
        w = spec.widths()
        d = spec.depth
        downs = [nn.Conv2d(spec.in_channels, w[0], 4, 2, 1)]
        for i in range(1, d):
            innermost = i == d - 1
            layers = [nn.LeakyReLU(LEAK, inplace=False),
                      nn.Conv2d(w[i - 1], w[i], 4, 2, 1, bias=innermost)]
            if not innermost:
                layers.append(nn.BatchNorm2d(w[i]))
            downs.append(nn.Sequential(*layers))
        self.downs = nn.ModuleList(downs)

        ups = []
        for i in range(d - 1, 0, -1):
            cin = w[i] if i == d - 1 else 2 * w[i]
            ups.append(nn.Sequential(
                nn.ReLU(inplace=False),
                nn.ConvTranspose2d(cin, w[i - 1], 4, 2, 1, bias=False),
                nn.BatchNorm2d(w[i - 1])))
        ups.append(nn.Sequential(
            nn.ReLU(inplace=False),
            nn.ConvTranspose2d(2 * w[0], spec.out_channels, 4, 2, 1),
            nn.Tanh()))
        self.ups = nn.ModuleList(ups)

    def forward(self, x, zero_bottleneck=False):
        div = 2 ** self.spec.depth
        if x.shape[-1] % div or x.shape[-2] % div:
            raise ShapeError(f"input spatial size {tuple(x.shape[-2:])} not divisible by {div}")
        if x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"expected {self.spec.in_channels} input channels, got {x.shape[1]}")
        skips = []
        for down in self.downs:
            x = down(x)
            skips.append(x)
        if zero_bottleneck:
            x = torch.zeros_like(x)
        skips.pop()
        for up in self.ups[:-1]:
            x = torch.cat([up(x), skips.pop()], dim=1)
        return self.ups[-1](x)


class PatchDiscriminator(nn.Module):
    """Fully convolutional classifier returning a map of raw patch logits."""

    def __init__(self, spec=None):
        super().__init__()
        spec = spec or DiscriminatorSpec()
        self.spec = spec
        layers = []
        cin = spec.in_channels
        n = len(spec.channels)
        for i, (cout, stride) in enumerate(zip(spec.channels, spec.strides)):
            last = i == n - 1
            norm = 0 < i < n - 1
            layers.append(nn.Conv2d(cin, cout, spec.kernel_size, stride, spec.padding,
                                    bias=not norm))
            if norm:
                layers.append(nn.BatchNorm2d(cout))
            if not last:
                layers.append(nn.LeakyReLU(LEAK, inplace=False))
            cin = cout
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


def init_weights(module, seed):
    g = torch.Generator().manual_seed(int(seed))
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=g) * INIT_STD)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    return module


def build_generator(spec=None, seed=0):
    return init_weights(UNetGenerator(spec), seed)


def build_discriminator(spec=None, seed=0):
    return init_weights(PatchDiscriminator(spec), seed)


def count_parameters(module):
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def to_network(x01):
    return x01 * 2.0 - 1.0


def from_network(y):
    return (y + 1.0) / 2.0


def image_to_tensor(pixels):
    """HxWx3 [0, 1] array -> (1, 3, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(pixels, -1, 0))).float()[None]


def tensor_to_image(t):
    return np.moveaxis(t.detach().cpu().double().numpy()[0], 0, -1)


def init_seeds(seed, n=3):
    """Independent initialization seeds for G, D_p and D_d."""
    return [int(v) for v in np.random.SeedSequence([int(seed), 0x1A17]).generate_state(n)]


@dataclass
class ModelBundle:
    generator: UNetGenerator
    d_pixel: PatchDiscriminator
    d_domain: PatchDiscriminator
    opt_g: Optional[torch.optim.Optimizer] = None
    opt_dp: Optional[torch.optim.Optimizer] = None
    opt_dd: Optional[torch.optim.Optimizer] = None
    step: int = 0
    fingerprint: str = ""
    r_p: int = DEFAULT_RP
    sigma_p: float = DEFAULT_SIGMA_P
    use_hfc: bool = True
    image_size: int = 256
    extra: dict = field(default_factory=dict)

    def make_optimizers(self, lr, betas=(0.5, 0.999)):
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=lr, betas=betas)
        self.opt_dp = torch.optim.Adam(self.d_pixel.parameters(), lr=lr, betas=betas)
        self.opt_dd = torch.optim.Adam(self.d_domain.parameters(), lr=lr, betas=betas)

    def set_lr(self, lr):
        for opt in (self.opt_g, self.opt_dp, self.opt_dd):
            if opt is not None:
                for group in opt.param_groups:
                    group["lr"] = lr

    def guidance_input(self, x01):
        """Network input for a batch of [0, 1] images: image (and HFC) channels."""
        from arcnet.frequency import hfc_torch
        if not self.use_hfc:
            return to_network(x01)
        return torch.cat([to_network(x01), hfc_torch(x01, self.r_p, self.sigma_p)], dim=1)

    def meta(self):
        return {
            "generator_spec": vars(self.generator.spec).copy(),
            "discriminator_spec": {k: list(v) if isinstance(v, tuple) else v
                                   for k, v in vars(self.d_pixel.spec).items()},
            "r_p": self.r_p, "sigma_p": self.sigma_p, "use_hfc": self.use_hfc,
            "image_size": self.image_size,
        }


def build_bundle(seed=0, depth=8, image_size=256, use_hfc=True, r_p=DEFAULT_RP,
                 sigma_p=DEFAULT_SIGMA_P, lr=2e-4, fingerprint="", base_width=64):
    sg, sp, sd = init_seeds(seed)
    gspec = GeneratorSpec(in_channels=6 if use_hfc else 3, depth=depth, base_width=base_width)
    bundle = ModelBundle(
        generator=build_generator(gspec, sg),
        d_pixel=build_discriminator(DiscriminatorSpec(), sp),
        d_domain=build_discriminator(DiscriminatorSpec(), sd),
        fingerprint=fingerprint, r_p=int(r_p), sigma_p=float(sigma_p),
        use_hfc=use_hfc, image_size=int(image_size))
    bundle.make_optimizers(lr)
    return bundle


def save_checkpoint(bundle, path):
    """Write all weights, optimizer states and bookkeeping to one archive."""
    path = Path(path)
    payload = {
        "format": CKPT_FORMAT,
        "meta": bundle.meta(),
        "step": bundle.step,
        "fingerprint": bundle.fingerprint,
        "extra": bundle.extra,
        "generator": bundle.generator.state_dict(),
        "d_pixel": bundle.d_pixel.state_dict(),
        "d_domain": bundle.d_domain.state_dict(),
        "opt_g": bundle.opt_g.state_dict() if bundle.opt_g else None,
        "opt_dp": bundle.opt_dp.state_dict() if bundle.opt_dp else None,
        "opt_dd": bundle.opt_dd.state_dict() if bundle.opt_dd else None,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path, lr=2e-4):
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CKPT_FORMAT:
        raise ConfigError(f"{path}: not an {CKPT_FORMAT} checkpoint")
    meta = payload["meta"]
    dspec = meta["discriminator_spec"]
    dspec = DiscriminatorSpec(**{k: tuple(v) if isinstance(v, list) else v
                                 for k, v in dspec.items()})
    bundle = ModelBundle(
        generator=UNetGenerator(GeneratorSpec(**meta["generator_spec"])),
        d_pixel=PatchDiscriminator(dspec),
        d_domain=PatchDiscriminator(dspec),
        step=int(payload["step"]), fingerprint=payload["fingerprint"],
        r_p=meta["r_p"], sigma_p=meta["sigma_p"], use_hfc=meta["use_hfc"],
        image_size=meta["image_size"], extra=dict(payload.get("extra") or {}))
    bundle.generator.load_state_dict(payload["generator"])
    bundle.d_pixel.load_state_dict(payload["d_pixel"])
    bundle.d_domain.load_state_dict(payload["d_domain"])
    bundle.make_optimizers(lr)
    for name in ("opt_g", "opt_dp", "opt_dd"):
        if payload.get(name) is not None:
            getattr(bundle, name).load_state_dict(payload[name])
    return bundle


def restore(bundle, degraded):
    """Restore one image with the generator in inference mode.

    The image must already have the bundle's inference size; the HFC is
    computed with the bundle's recorded low-pass parameters.
    """
    img = degraded if isinstance(degraded, FundusImage) else FundusImage(degraded)
    h, w = img.shape
    if (h, w) != (bundle.image_size, bundle.image_size):
        raise ShapeError(f"image is {h}x{w}, model expects "
                         f"{bundle.image_size}x{bundle.image_size}")
    x = image_to_tensor(img.pixels)
    if bundle.use_hfc:
        hfc = decompose(img.pixels, bundle.r_p, bundle.sigma_p).hfc
        x = torch.cat([to_network(x), image_to_tensor(hfc)], dim=1)
    else:
        x = to_network(x)
    g = bundle.generator
    was_training = g.training
    g.eval()
    try:
        with torch.no_grad():
            y = from_network(g(x))
    finally:
        g.train(was_training)
    return img.with_pixels(np.clip(tensor_to_image(y), 0.0, 1.0))
