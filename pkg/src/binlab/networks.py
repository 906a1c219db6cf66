"""Generators and discriminators for the adversarial binarization game.

Five networks play: a texture generator that superimposes a degraded
reference's texture onto a clean page, a binarizer that maps degraded
pages back to clean ones, one patch discriminator per generator, and a
joint discriminator over channel-concatenated (clean-like, degraded-like)
pairs. Encoders are strided conv blocks that double channels per level;
decoders mirror them with skip connections from the content path.
Generators squash outputs into [0, 1], discriminators emit a spatial
grid of probabilities in (0, 1).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

ROLES = (
    "content_encoder",
    "style_encoder",
    "decoder",
    "binarizer",
    "patch_discriminator",
    "joint_discriminator",
)


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description from which parameter counts are derivable."""

    role: str
    base_channels: int = 32
    depth: int = 4
    input_channels: int = 1

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}, expected one of {ROLES}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.input_channels < 1:
            raise ValueError(f"input_channels must be >= 1, got {self.input_channels}")


def _level_channels(base: int, depth: int) -> list[int]:
    return [base * 2 ** i for i in range(depth)]


def _check_spatial(x: torch.Tensor, depth: int, channels: int) -> None:
    if x.dim() != 4:
        raise ValueError(f"expected a (B, C, H, W) tensor, got shape {tuple(x.shape)}")
    if x.shape[1] != channels:
        raise ValueError(f"expected {channels} input channels, got {x.shape[1]}")
    h, w = x.shape[2], x.shape[3]
    factor = 2 ** depth
    if h % factor or w % factor:
        raise ValueError(f"spatial dims {h}x{w} must be divisible by {factor}")


class ConvEncoder(nn.Module):
    """Strided conv pyramid returning the feature map of every level."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        if spec.role not in ("content_encoder", "style_encoder"):
            raise ValueError(f"ConvEncoder cannot take role {spec.role!r}")
        self.spec = spec
        chans = _level_channels(spec.base_channels, spec.depth)
        blocks = []
        c_in = spec.input_channels
        for c_out in chans:
            blocks.append(
                nn.Sequential(
                    nn.Conv2d(c_in, c_out, 4, stride=2, padding=1),
                    nn.InstanceNorm2d(c_out),
                    nn.LeakyReLU(0.2, inplace=True),
                )
            )
            c_in = c_out
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        _check_spatial(x, self.spec.depth, self.spec.input_channels)
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        return feats


class MixDecoder(nn.Module):
    """Decoder for the texture generator: mirrors the encoders, skip-fed
    by the content path, starting from the concatenated bottlenecks."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        if spec.role != "decoder":
            raise ValueError(f"MixDecoder cannot take role {spec.role!r}")
        self.spec = spec
        base, depth = spec.base_channels, spec.depth
        ups = []
        for level in range(depth, 0, -1):
            c_in = 2 * base * 2 ** (level - 1)
            c_out = base * 2 ** (level - 2) if level > 1 else base
            ups.append(
                nn.Sequential(
                    nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1),
                    nn.InstanceNorm2d(c_out),
                    nn.ReLU(inplace=True),
                )
            )
        self.ups = nn.ModuleList(ups)
        self.out = nn.Conv2d(base, 1, 3, stride=1, padding=1)

    def forward(self, bottleneck: torch.Tensor, skips: list[torch.Tensor]) -> torch.Tensor:
        x = bottleneck
        depth = self.spec.depth
        for idx, up in enumerate(self.ups):
            x = up(x)
            level = depth - idx
            if level > 1:
                x = torch.cat([x, skips[level - 2]], dim=1)
        return torch.sigmoid(self.out(x))


class TextureGenerator(nn.Module):
    """Two-encoder generator: content from the clean page, style from the
    degraded reference, decoded together into a pseudo-degraded page.

    ``forward`` also returns the per-level style features of the
    reference and of the generated output, which feed the Gram-matrix
    texture loss. With the default depth of 5 these are the five
    designated style layers.
    """

    def __init__(self, base_channels: int = 32, depth: int = 5):
        super().__init__()
        self.base_channels = base_channels
        self.depth = depth
        self.content_encoder = ConvEncoder(
            NetworkSpec("content_encoder", base_channels, depth)
        )
        self.style_encoder = ConvEncoder(
            NetworkSpec("style_encoder", base_channels, depth)
        )
        self.decoder = MixDecoder(NetworkSpec("decoder", base_channels, depth))

    def specs(self) -> tuple[NetworkSpec, NetworkSpec, NetworkSpec]:
        return (
            self.content_encoder.spec,
            self.style_encoder.spec,
            self.decoder.spec,
        )

    def style_features(self, x: torch.Tensor) -> list[torch.Tensor]:
        return self.style_encoder(x)

    def forward(
        self, clean: torch.Tensor, degraded: torch.Tensor
    ) -> tuple[torch.Tensor, list[torch.Tensor], list[torch.Tensor]]:
        if clean.shape != degraded.shape:
            raise ValueError(
                f"clean {tuple(clean.shape)} and degraded {tuple(degraded.shape)} "
                "patches must share dims"
            )
        content_feats = self.content_encoder(clean)
        style_ref = self.style_encoder(degraded)
        bottleneck = torch.cat([content_feats[-1], style_ref[-1]], dim=1)
        generated = self.decoder(bottleneck, content_feats)
        style_gen = self.style_encoder(generated)
        return generated, style_ref, style_gen


class Binarizer(nn.Module):
    """U-Net style encoder-decoder mapping degraded pages to clean ones."""

    def __init__(self, base_channels: int = 32, depth: int = 5):
        super().__init__()
        self.base_channels = base_channels
        self.depth = depth
        self.spec = NetworkSpec("binarizer", base_channels, depth)
        self.encoder = ConvEncoder(NetworkSpec("content_encoder", base_channels, depth))
        ups = []
        for level in range(depth, 0, -1):
            c = base_channels * 2 ** (level - 1)
            c_in = c if level == depth else 2 * c
            c_out = base_channels * 2 ** (level - 2) if level > 1 else base_channels
            ups.append(
                nn.Sequential(
                    nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1),
                    nn.InstanceNorm2d(c_out),
                    nn.ReLU(inplace=True),
                )
            )
        self.ups = nn.ModuleList(ups)
        self.out = nn.Conv2d(base_channels, 1, 3, stride=1, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.encoder(x)
        y = feats[-1]
        for idx, up in enumerate(self.ups):
            y = up(y)
            level = self.depth - idx
            if level > 1:
                y = torch.cat([y, feats[level - 2]], dim=1)
        return torch.sigmoid(self.out(y))


class PatchDiscriminator(nn.Module):
    """Patch-level classifier emitting a grid of realness probabilities.

    No normalization on the first block, instance norm afterwards; the
    final stride-1 conv keeps a spatial grid rather than a scalar.
    """

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        if spec.role not in ("patch_discriminator", "joint_discriminator"):
            raise ValueError(f"PatchDiscriminator cannot take role {spec.role!r}")
        self.spec = spec
        chans = _level_channels(spec.base_channels, spec.depth)
        layers: list[nn.Module] = [
            nn.Conv2d(spec.input_channels, chans[0], 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        for c_in, c_out in zip(chans[:-1], chans[1:]):
            layers += [
                nn.Conv2d(c_in, c_out, 4, stride=2, padding=1),
                nn.InstanceNorm2d(c_out),
                nn.LeakyReLU(0.2, inplace=True),
            ]
        layers.append(nn.Conv2d(chans[-1], 1, 4, stride=1, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_spatial(x, self.spec.depth, self.spec.input_channels)
        return torch.sigmoid(self.net(x))


def joint_pair(clean_like: torch.Tensor, degraded_like: torch.Tensor) -> torch.Tensor:
    """Concatenate a pair channel-wise in the canonical order.

    The first channel always carries the clean-like member, the second
    the degraded-like one: (C, G) for the texture branch and (B', D)
    for the binarization branch.
    """
    if clean_like.shape != degraded_like.shape:
        raise ValueError(
            f"pair members must share dims, got {tuple(clean_like.shape)} "
            f"and {tuple(degraded_like.shape)}"
        )
    return torch.cat([clean_like, degraded_like], dim=1)


def build_network(spec: NetworkSpec) -> nn.Module:
    if spec.role in ("content_encoder", "style_encoder"):
        return ConvEncoder(spec)
    if spec.role == "decoder":
        return MixDecoder(spec)
    if spec.role == "binarizer":
        return Binarizer(spec.base_channels, spec.depth)
    return PatchDiscriminator(spec)


def _conv_params(c_in: int, c_out: int, kernel: int) -> int:
    return c_in * c_out * kernel * kernel + c_out


def parameter_count(spec: NetworkSpec) -> int:
    """Exact learnable parameter count implied by a spec.

    Instance norms are non-affine and contribute nothing, so every
    parameter lives in a conv or transposed conv (kernel 4) plus the
    kernel-3 output head of decoders.
    """
    b, d = spec.base_channels, spec.depth
    chans = _level_channels(b, d)

    def encoder_params(in_ch: int) -> int:
        total = 0
        c_in = in_ch
        for c_out in chans:
            total += _conv_params(c_in, c_out, 4)
            c_in = c_out
        return total

    def decoder_params(first_in_factor: int) -> int:
        total = 0
        for level in range(d, 0, -1):
            c = b * 2 ** (level - 1)
            c_in = first_in_factor * c if level == d else 2 * c
            c_out = b * 2 ** (level - 2) if level > 1 else b
            total += _conv_params(c_in, c_out, 4)
        return total + _conv_params(b, 1, 3)

    if spec.role in ("content_encoder", "style_encoder"):
        return encoder_params(spec.input_channels)
    if spec.role == "decoder":
        return decoder_params(2)
    if spec.role == "binarizer":
        return encoder_params(spec.input_channels) + decoder_params(1)
    return encoder_params(spec.input_channels) + _conv_params(chans[-1], 1, 4)


def initialize_weights(module: nn.Module, generator: torch.Generator) -> None:
    """Gaussian(0, 0.02) conv init, zero biases, drawn from the given RNG."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.normal_(0.0, 0.02, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()


def to_tensor(img: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(H, W) or (B, H, W) array in [0, 1] to a (B, 1, H, W) tensor."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise ValueError(f"expected (H, W) or (B, H, W), got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr[:, None, :, :])).to(dtype)


def from_tensor(t: torch.Tensor) -> np.ndarray:
    """(1, 1, H, W) tensor back to an (H, W) float64 array clipped to [0, 1]."""
    arr = t.detach().cpu().numpy().astype(np.float64)
    arr = np.squeeze(arr, axis=(0, 1)) if arr.ndim == 4 else arr
    return np.clip(arr, 0.0, 1.0)


def save_state_npz(path: str | os.PathLike, module: nn.Module) -> None:
    """One tensor archive per network, keyed by layer path."""
    arrays = {
        key: value.detach().cpu().numpy()
        for key, value in module.state_dict().items()
    }
    np.savez(path, **arrays)


def load_state_npz(path: str | os.PathLike, module: nn.Module) -> None:
    with np.load(path) as data:
        state = {key: torch.from_numpy(np.array(data[key])) for key in data.files}
    module.load_state_dict(state)
