"""Discrete autoencoder: frames in [0,1] to K codebook tokens and back."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from tokenworld.config import TokenizerConfig


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(max(1, channels // 8), channels)


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.norm1 = _norm(channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = _norm(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class AttnBlock(nn.Module):
    """Single-head self-attention over spatial positions."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = _norm(channels)
        self.q = nn.Conv2d(channels, channels, 1)
        self.k = nn.Conv2d(channels, channels, 1)
        self.v = nn.Conv2d(channels, channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        y = self.norm(x)
        q = self.q(y).reshape(b, c, h * w).transpose(1, 2)
        k = self.k(y).reshape(b, c, h * w).transpose(1, 2)
        v = self.v(y).reshape(b, c, h * w).transpose(1, 2)
        out = F.scaled_dot_product_attention(q, k, v)
        out = out.transpose(1, 2).reshape(b, c, h, w)
        return x + self.proj(out)


class Encoder(nn.Module):
    """Conv trunk mapping a frame to a (tokens, embed_dim) grid."""

    def __init__(self, cfg: TokenizerConfig):
        super().__init__()
        c = cfg.channels
        self.conv_in = nn.Conv2d(3, c, 3, padding=1)
        stages: list[nn.Module] = []
        resolution = cfg.frame_size
        for _ in range(cfg.levels):
            for _ in range(cfg.res_blocks):
                stages.append(ResBlock(c))
            if resolution in cfg.attn_resolutions:
                stages.append(AttnBlock(c))
            stages.append(nn.Conv2d(c, c, 3, stride=2, padding=1))
            resolution //= 2
        self.stages = nn.Sequential(*stages)
        self.norm_out = _norm(c)
        self.conv_out = nn.Conv2d(c, cfg.embed_dim, 3, padding=1)
        self.grid = resolution

    def forward(self, x):
        h = self.stages(self.conv_in(x))
        h = self.conv_out(F.silu(self.norm_out(h)))
        # (B, d, g, g) -> (B, K, d), row-major token order
        return h.flatten(2).transpose(1, 2)


class Decoder(nn.Module):
    """Mirror of the encoder; emits an unbounded residual image in [-1,1] convention."""

    def __init__(self, cfg: TokenizerConfig):
        super().__init__()
        c = cfg.channels
        self.grid = cfg.frame_size // (2 ** cfg.levels)
        self.conv_in = nn.Conv2d(cfg.embed_dim, c, 3, padding=1)
        stages: list[nn.Module] = []
        resolution = self.grid
        for _ in range(cfg.levels):
            stages.append(nn.Upsample(scale_factor=2, mode="nearest"))
            stages.append(nn.Conv2d(c, c, 3, padding=1))
            resolution *= 2
            for _ in range(cfg.res_blocks):
                stages.append(ResBlock(c))
            if resolution in cfg.attn_resolutions:
                stages.append(AttnBlock(c))
        self.stages = nn.Sequential(*stages)
        self.norm_out = _norm(c)
        self.conv_out = nn.Conv2d(c, 3, 3, padding=1)

    def forward(self, z):
        # (B, K, d) -> (B, d, g, g)
        b, k, d = z.shape
        h = z.transpose(1, 2).reshape(b, d, self.grid, self.grid)
        h = self.stages(self.conv_in(h))
        return self.conv_out(F.silu(self.norm_out(h)))


class RandomFeatures(nn.Module):
    """Frozen random conv stack used as the perceptual feature space."""

    def __init__(self, seed: int):
        super().__init__()
        widths = [3, 16, 32, 64]
        gen = torch.Generator().manual_seed(seed)
        self.convs = nn.ModuleList(
            [nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1) for i in range(3)]
        )
        for conv in self.convs:
            fan_in = conv.weight.shape[1] * 9
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) * math.sqrt(2.0 / fan_in)
                )
                conv.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x01):
        feats = []
        h = x01 * 2.0 - 1.0
        for conv in self.convs:
            h = F.relu(conv(h))
            feats.append(h)
        return feats


def quantize(y: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """Nearest codebook row per vector; ties break to the lowest index."""
    if y.shape[-1] != codebook.shape[-1]:
        raise ValueError(f"dim mismatch: vectors {y.shape[-1]} vs codebook {codebook.shape[-1]}")
    flat = y.reshape(-1, y.shape[-1])
    dist = (
        flat.pow(2).sum(1, keepdim=True)
        - 2.0 * flat @ codebook.t()
        + codebook.pow(2).sum(1)[None, :]
    )
    n = codebook.shape[0]
    lowest = dist.min(dim=1, keepdim=True).values
    idx = torch.arange(n, device=y.device).expand_as(dist)
    tokens = torch.where(dist == lowest, idx, n).min(dim=1).values
    return tokens.reshape(y.shape[:-1])


def lookup(tokens: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """Token ids to embedding rows."""
    n = codebook.shape[0]
    if tokens.numel() and (tokens.min() < 0 or tokens.max() >= n):
        raise IndexError(f"token out of range [0, {n})")
    return codebook[tokens]


def straight_through(pre: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """Quantized values with an identity Jacobian back to the pre-quant inputs."""
    quantized = lookup(quantize(pre, codebook), codebook)
    return pre + (quantized - pre).detach()


class FrameTokenizer(nn.Module):
    def __init__(self, cfg: TokenizerConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        bound = 1.0 / cfg.vocab_size
        self.codebook = nn.Parameter(
            torch.empty(cfg.vocab_size, cfg.embed_dim).uniform_(-bound, bound)
        )
        self.perceptual = RandomFeatures(cfg.perceptual_seed) if cfg.perceptual == "random" else None

    def _check_frames(self, frames: torch.Tensor) -> None:
        s = self.cfg.frame_size
        if frames.ndim != 4 or frames.shape[1] != 3 or frames.shape[2:] != (s, s):
            raise ValueError(f"expected frames of shape (B, 3, {s}, {s}), got {tuple(frames.shape)}")

    def encode_pre(self, frames01: torch.Tensor) -> torch.Tensor:
        """Pre-quantization encoder output, shape (B, K, d)."""
        self._check_frames(frames01)
        return self.encoder(frames01 * 2.0 - 1.0)

    def encode(self, frames01: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        pre = self.encode_pre(frames01)
        return pre, quantize(pre, self.codebook)

    def decode_raw(self, z: torch.Tensor) -> torch.Tensor:
        """Decoder output mapped to [0,1] convention, without clamping."""
        return (self.decoder(z) + 1.0) / 2.0

    def decode(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.ndim == 1:
            tokens = tokens[None]
        return self.decode_raw(lookup(tokens, self.codebook)).clamp(0.0, 1.0)

    def reconstruct(self, frames01: torch.Tensor) -> torch.Tensor:
        """decode(encode(x)): what the policy observes instead of raw frames."""
        _, tokens = self.encode(frames01)
        return self.decode(tokens)

    def loss_given_pre(
        self, frames01: torch.Tensor, pre: torch.Tensor
    ) -> dict[str, torch.Tensor]:
        """Loss components given fixed pre-quantization outputs (see loss())."""
        tokens = quantize(pre, self.codebook)
        embedded = lookup(tokens, self.codebook)
        commit = F.mse_loss(pre.detach(), embedded) + F.mse_loss(embedded.detach(), pre)
        st = pre + (embedded - pre).detach()
        rec01 = self.decode_raw(st)
        recon = (frames01 - rec01).abs().mean()
        if self.perceptual is not None:
            f_x = self.perceptual(frames01)
            f_r = self.perceptual(rec01)
            perceptual = torch.stack(
                [F.mse_loss(a, b) for a, b in zip(f_x, f_r)]
            ).mean()
        else:
            perceptual = torch.zeros((), dtype=pre.dtype, device=pre.device)
        return {
            "total": recon + commit + perceptual,
            "recon": recon,
            "commit": commit,
            "perceptual": perceptual,
        }

    def loss(self, frames01: torch.Tensor) -> dict[str, torch.Tensor]:
        """Reconstruction + two-sided commitment + perceptual terms, unit weights."""
        return self.loss_given_pre(frames01, self.encode_pre(frames01))

    @torch.no_grad()
    def reinit_unused_codes(self, pre: torch.Tensor, tokens: torch.Tensor, generator=None) -> int:
        """Re-seed codebook rows unused in this batch from encoder outputs. Off by default."""
        used = torch.zeros(self.cfg.vocab_size, dtype=torch.bool, device=tokens.device)
        used[tokens.reshape(-1)] = True
        dead = (~used).nonzero().squeeze(-1)
        if dead.numel() == 0:
            return 0
        flat = pre.reshape(-1, pre.shape[-1])
        picks = torch.randint(0, flat.shape[0], (dead.numel(),), generator=generator)
        self.codebook.data[dead] = flat[picks]
        return int(dead.numel())
