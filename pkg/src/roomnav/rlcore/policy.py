"""Goal-conditioned recurrent actor-critic."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..langspec import PAD_INDEX, VOCAB_SIZE


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ArchConfig:
    image_size: int = 64
    convs: tuple = ((16, 8, 4), (32, 4, 2), (32, 3, 1))  # (channels, kernel, stride)
    feat_dim: int = 256
    vocab_size: int = VOCAB_SIZE
    embed_dim: int = 32
    hidden: int = 128

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        d = dict(d)
        d["convs"] = tuple(tuple(c) for c in d.get("convs", cls.convs))
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["convs"] = [list(c) for c in self.convs]
        return d


class ImageEncoder(nn.Module):
    """uint8 or float ``(B, H, W, 3)`` images to ``(B, feat_dim)`` features."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        layers, ch, size = [], 3, arch.image_size
        for out, k, s in arch.convs:
            layers += [nn.Conv2d(ch, out, k, s), nn.ReLU()]
            ch, size = out, (size - k) // s + 1
            if size < 1:
                raise ConfigError("arch.convs", f"image of {arch.image_size}px collapses to nothing")
        self.convs = nn.Sequential(*layers)
        self.fc = nn.Linear(ch * size * size, arch.feat_dim)
        self.image_size = arch.image_size

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        if obs.shape[-3:] != (self.image_size, self.image_size, 3):
            raise ConfigError("obs", f"expected (*, {self.image_size}, {self.image_size}, 3), got {tuple(obs.shape)}")
        x = obs.to(self.fc.weight.dtype)
        if obs.dtype == torch.uint8:
            x = x / 255.0
        x = self.convs(x.permute(0, 3, 1, 2))
        return F.relu(self.fc(x.flatten(1)))


class TokenEncoder(nn.Module):
    """Mean of token embeddings, ignoring padding."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.embed = nn.Embedding(arch.vocab_size, arch.embed_dim)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        mask = (tokens != PAD_INDEX).to(self.embed.weight.dtype)
        e = self.embed(tokens) * mask[..., None]
        return e.sum(-2) / mask.sum(-1, keepdim=True).clamp(min=1.0)


class RecurrentPolicy(nn.Module):
    def __init__(self, n_actions: int, arch: ArchConfig = ArchConfig()):
        super().__init__()
        self.arch = arch
        self.n_actions = n_actions
        self.image = ImageEncoder(arch)
        self.tokens = TokenEncoder(arch)
        self.core = nn.GRUCell(arch.feat_dim + arch.embed_dim, arch.hidden)
        self.pi = nn.Linear(arch.hidden, n_actions)
        self.v = nn.Linear(arch.hidden, 1)

    def initial_state(self, batch: int) -> torch.Tensor:
        return torch.zeros(batch, self.arch.hidden, dtype=self.pi.weight.dtype)

    def features(self, obs, tokens):
        return torch.cat([self.image(obs), self.tokens(tokens)], dim=-1)

    def step(self, obs, tokens, hidden):
        """One timestep: ``(logits, value, next_hidden)``."""
        if hidden.shape[-1] != self.arch.hidden:
            raise ConfigError("state", f"hidden size {hidden.shape[-1]} != {self.arch.hidden}")
        h = self.core(self.features(obs, tokens), hidden)
        return self.pi(h), self.v(h).squeeze(-1), h

    def forward_sequence(self, obs, tokens, starts, h0):
        """Unroll over ``(T, B, ...)`` inputs; hidden is zeroed where ``starts`` is set."""
        T, B = starts.shape
        x = self.features(obs.reshape(T * B, *obs.shape[2:]), tokens.reshape(T * B, -1)).reshape(T, B, -1)
        keep = 1.0 - starts.to(x.dtype)
        h, outs = h0, []
        for t in range(T):
            h = self.core(x[t], h * keep[t, :, None])
            outs.append(h)
        hs = torch.stack(outs)
        return self.pi(hs), self.v(hs).squeeze(-1)


def policy_forward(model: RecurrentPolicy, obs, tokens, hidden):
    """Single-step forward on unbatched or batched inputs."""
    single = obs.dim() == 3
    if single:
        obs, tokens, hidden = obs[None], tokens[None], hidden[None]
    logits, value, h = model.step(obs, tokens, hidden)
    if single:
        return logits[0], value[0], h[0]
    return logits, value, h


def tiny_arch(image_size: int = 4) -> ArchConfig:
    """Architecture with every width at most 4, for gradient checks."""
    return ArchConfig(image_size=image_size, convs=((1, 2, 2),), feat_dim=4, embed_dim=4, hidden=4)
