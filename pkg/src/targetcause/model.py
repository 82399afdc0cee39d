"""Axial-attention feature extractor and dot-product cause scorer."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 10
    embed_dim: int = 16
    heads: int = 16
    ff_hidden: int = 96

    def __post_init__(self):
        if self.layers < 0 or self.embed_dim < 1 or self.heads < 1 or self.ff_hidden < 1:
            raise ValueError(f"invalid model config {self}")
        if self.embed_dim % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide embed_dim ({self.embed_dim})")


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (batch, length, dim); attention runs over `length`
        b, length, dim = x.shape
        q, k, v = self.qkv(x).view(b, length, 3, self.heads, dim // self.heads).permute(2, 0, 3, 1, 4)
        y = F.scaled_dot_product_attention(q, k, v)
        return self.out(y.transpose(1, 2).reshape(b, length, dim))


class AxialBlock(nn.Module):
    """Pre-norm residual sublayers: variable attention, observation attention, feed-forward."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.embed_dim
        self.norm_var = nn.LayerNorm(d)
        self.attn_var = SelfAttention(d, cfg.heads)
        self.norm_obs = nn.LayerNorm(d)
        self.attn_obs = SelfAttention(d, cfg.heads)
        self.norm_ff = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, cfg.ff_hidden), nn.GELU(), nn.Linear(cfg.ff_hidden, d))

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        # h: (B, n, m, d)
        B, n, m, d = h.shape
        z = self.norm_var(h).transpose(1, 2).reshape(B * m, n, d)
        h = h + self.attn_var(z).reshape(B, m, n, d).transpose(1, 2)
        z = self.norm_obs(h).reshape(B * n, m, d)
        h = h + self.attn_obs(z).reshape(B, n, m, d)
        return h + self.ff(self.norm_ff(h))


class CauseModel(nn.Module):
    """``g``: stacked (X, M) -> per-variable (cause, target) features; ``h``: dot product."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.embed = nn.Linear(2, d)
        self.blocks = nn.ModuleList(AxialBlock(cfg) for _ in range(cfg.layers))
        self.norm_out = nn.LayerNorm(d)
        self.head_cause = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, d))
        self.head_target = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, d))

    def features(self, X: torch.Tensor, M: torch.Tensor) -> torch.Tensor:
        """(B, n, m) inputs -> (B, n, 2, d) features."""
        h = self.embed(torch.stack([X, M], dim=-1))
        for block in self.blocks:
            h = block(h)
        pooled = self.norm_out(h).mean(dim=2)
        return torch.stack([self.head_cause(pooled), self.head_target(pooled)], dim=2)

    def forward(self, X: torch.Tensor, M: torch.Tensor) -> torch.Tensor:
        """All-pairs logits ``S[b, t, j]`` = score of j as a cause of target t."""
        return score_all(self.features(X, M))


ModelParams = CauseModel


def init_params(cfg: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> CauseModel:
    """Fresh model with PyTorch's fan-in scaled default initialization under ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = CauseModel(cfg)
    return model.to(dtype)


def count_params(cfg: ModelConfig) -> int:
    return sum(p.numel() for p in CauseModel(cfg).parameters())


def _as_tensor(a, like: nn.Module) -> torch.Tensor:
    dtype = next(like.parameters()).dtype
    if isinstance(a, torch.Tensor):
        return a.to(dtype)
    return torch.as_tensor(np.asarray(a), dtype=dtype)


def extract_features(p: CauseModel, X_VO, M_VO) -> torch.Tensor:
    """(n', m') or (B, n', m') inputs -> (n', 2, d) or (B, n', 2, d)."""
    X = _as_tensor(X_VO, p)
    M = _as_tensor(M_VO, p)
    if X.shape != M.shape or X.dim() not in (2, 3):
        raise ValueError(f"X and M must share a (n, m) or (B, n, m) shape, got {tuple(X.shape)}, {tuple(M.shape)}")
    if X.dim() == 2:
        return p.features(X[None], M[None])[0]
    return p.features(X, M)


def score(F_: torch.Tensor, target_pos: int) -> torch.Tensor:
    """``s[j] = <F[j, 0], F[target_pos, 1]>``."""
    if not 0 <= target_pos < F_.shape[-3]:
        raise IndexError(f"target_pos {target_pos} out of range for {F_.shape[-3]} variables")
    return F_[..., :, 0, :] @ F_[..., target_pos, 1, :, None][..., 0]


def score_all(F_: torch.Tensor) -> torch.Tensor:
    """Scores for every target at once: row t equals ``score(F, t)``."""
    return F_[..., :, 1, :] @ F_[..., :, 0, :].transpose(-1, -2)


def forward(p: CauseModel, X_VO, M_VO, target_pos: int) -> torch.Tensor:
    return score(extract_features(p, X_VO, M_VO), target_pos)


# --- checkpoints -----------------------------------------------------------


def save_checkpoint(p: CauseModel, directory: str | Path, extra: dict | None = None) -> Path:
    from safetensors.torch import save_file

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tensors = {k: v.detach().contiguous().cpu() for k, v in p.state_dict().items()}
    save_file(tensors, str(d / "weights.safetensors"), metadata={"format_version": str(CHECKPOINT_VERSION)})
    config = {
        "format_version": CHECKPOINT_VERSION,
        "model": asdict(p.cfg),
        "dtype": str(next(p.parameters()).dtype).removeprefix("torch."),
        "param_count": sum(t.numel() for t in tensors.values()),
    }
    if extra:
        config["training"] = extra
    (d / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return d


def load_checkpoint(directory: str | Path) -> CauseModel:
    from safetensors.torch import load_file

    d = Path(directory)
    cfg_path = d / "config.json"
    if not cfg_path.exists():
        raise FileNotFoundError(f"no checkpoint at {d} (missing config.json)")
    config = json.loads(cfg_path.read_text())
    if config.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{d}: unsupported checkpoint version {config.get('format_version')!r}")
    model = CauseModel(ModelConfig(**config["model"])).to(getattr(torch, config.get("dtype", "float32")))
    model.load_state_dict(load_file(str(d / "weights.safetensors")))
    model.eval()
    return model
