"""Transformer encoder and RNN classifiers, float64 end to end."""
import logging
import math
from typing import Dict, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.optim import Optimizer

from ..errors import DimensionMismatchError, NonFiniteError, NonFiniteGradientError
from ..models import ClassifierKind, RnnConfig, TrainConfig, TransformerConfig

logger = logging.getLogger(__name__)

DTYPE = torch.float64
PE_BASE = 10000.0
# Per-module dropout seeds are spread apart so masks never collide.
DROPOUT_SEED_STRIDE = 1_000_003


def sinusoidal_encoding(n_positions: int, emb_dim: int) -> torch.Tensor:
    """Fixed (n_positions, emb_dim) table: sin on even channels, cos on odd."""
    position = torch.arange(n_positions, dtype=DTYPE).unsqueeze(1)
    channel = torch.arange(0, emb_dim, 2, dtype=DTYPE)
    angle = position / PE_BASE ** (channel / emb_dim)
    pe = torch.zeros(n_positions, emb_dim, dtype=DTYPE)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle)
    return pe


def attention(Q: torch.Tensor, K: torch.Tensor, V: torch.Tensor) -> torch.Tensor:
    """
    Scaled dot-product attention over the last two axes.

    Args:
        Q: (..., T_q, d_k) queries
        K: (..., T_k, d_k) keys
        V: (..., T_k, d_v) values

    Returns:
        torch.Tensor: (..., T_q, d_v)

    Raises:
        NonFiniteError: If any input holds NaN
    """
    for name, t in (("Q", Q), ("K", K), ("V", V)):
        if torch.isnan(t).any():
            raise NonFiniteError(f"attention input {name} holds NaN")
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise DimensionMismatchError(
            f"attention shapes do not conform: Q{tuple(Q.shape)} K{tuple(K.shape)} V{tuple(V.shape)}"
        )
    scores = Q @ K.transpose(-2, -1) / math.sqrt(Q.shape[-1])
    scores = scores - scores.amax(dim=-1, keepdim=True)
    weights = torch.softmax(scores, dim=-1)
    return weights @ V


class SeededDropout(nn.Module):
    """Inverted dropout whose masks come from (seed, call counter) only."""

    def __init__(self, p: float, seed: int):
        super().__init__()
        self.p = p
        self.seed = seed
        self.calls = 0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.training or self.p == 0.0:
            return x
        gen = torch.Generator().manual_seed(self.seed * DROPOUT_SEED_STRIDE + self.calls)
        self.calls += 1
        keep = (torch.rand(x.shape, generator=gen, dtype=x.dtype) >= self.p).to(x.dtype)
        return x * keep / (1.0 - self.p)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, emb_dim: int, heads: int, dropout: float, seed: int):
        super().__init__()
        self.heads = heads
        self.d_k = emb_dim // heads
        self.q_proj = nn.Linear(emb_dim, emb_dim)
        self.k_proj = nn.Linear(emb_dim, emb_dim)
        self.v_proj = nn.Linear(emb_dim, emb_dim)
        self.out_proj = nn.Linear(emb_dim, emb_dim)
        self.dropout = SeededDropout(dropout, seed)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.heads, self.d_k).transpose(1, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, e = x.shape
        out = attention(self._split(self.q_proj(x)), self._split(self.k_proj(x)), self._split(self.v_proj(x)))
        out = out.transpose(1, 2).reshape(b, t, e)
        return self.dropout(self.out_proj(out))


class EncoderBlock(nn.Module):
    """Pre-norm block: x + MHSA(LN(x)), then x + FF(LN(x))."""

    def __init__(self, cfg: TransformerConfig, seed: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.emb_dim)
        self.attn = MultiHeadSelfAttention(cfg.emb_dim, cfg.heads, cfg.dropout, seed)
        self.norm2 = nn.LayerNorm(cfg.emb_dim)
        self.ff = nn.Sequential(
            nn.Linear(cfg.emb_dim, cfg.ff_dim),
            nn.GELU(),
            SeededDropout(cfg.dropout, seed + 1),
            nn.Linear(cfg.ff_dim, cfg.emb_dim),
        )
        self.ff_dropout = SeededDropout(cfg.dropout, seed + 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ff_dropout(self.ff(self.norm2(x)))


def _init_parameters(module: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("weight_hh_l0"):
                nn.init.orthogonal_(p, generator=gen)
            elif p.dim() >= 2:
                nn.init.xavier_uniform_(p, generator=gen)
            elif "norm" in name and name.endswith("weight"):
                nn.init.ones_(p)
            else:
                nn.init.zeros_(p)


class TransformerClassifier(nn.Module):
    kind = ClassifierKind.transformer

    def __init__(self, cfg: TransformerConfig, feature_dim: int, seed: int = 42):
        super().__init__()
        self.cfg = cfg
        self.feature_dim = feature_dim
        self.seed = seed
        self.proj = nn.Linear(feature_dim, cfg.emb_dim)
        self.register_buffer("pe", sinusoidal_encoding(cfg.max_tokens, cfg.emb_dim), persistent=False)
        self.blocks = nn.ModuleList(
            [EncoderBlock(cfg, seed=seed * 16 + 3 * i) for i in range(cfg.layers)]
        )
        self.head = nn.Linear(cfg.emb_dim, cfg.n_classes)
        self.to(DTYPE)
        _init_parameters(self, seed)

    def embed(self, features: torch.Tensor) -> torch.Tensor:
        """Affine projection per token plus the positional table."""
        if features.shape[-1] != self.feature_dim:
            raise DimensionMismatchError(
                f"tokens carry {features.shape[-1]} features, projection expects {self.feature_dim}"
            )
        n_tokens = features.shape[-2]
        if n_tokens > self.cfg.max_tokens:
            raise DimensionMismatchError(f"{n_tokens} tokens exceeds max_tokens={self.cfg.max_tokens}")
        return self.proj(features) + self.pe[:n_tokens]

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        unbatched = features.dim() == 2
        x = self.embed(features.unsqueeze(0) if unbatched else features)
        for block in self.blocks:
            x = block(x)
        logits = self.head(x.mean(dim=1))
        return logits.squeeze(0) if unbatched else logits


class RNNClassifier(nn.Module):
    """Single-layer tanh RNN over raw samples, head on the final hidden state."""

    kind = ClassifierKind.rnn

    def __init__(self, cfg: RnnConfig, seed: int = 42):
        super().__init__()
        self.cfg = cfg
        self.seed = seed
        self.rnn = nn.RNN(1, cfg.hidden, num_layers=1, nonlinearity="tanh", batch_first=True)
        self.head = nn.Linear(cfg.hidden, cfg.n_classes)
        self.to(DTYPE)
        _init_parameters(self, seed)

    def forward(self, samples: torch.Tensor) -> torch.Tensor:
        unbatched = samples.dim() == 1
        x = samples.unsqueeze(0) if unbatched else samples
        if x.shape[1] == 0:
            raise DimensionMismatchError("RNN input sequence is empty")
        _, h_n = self.rnn(x.unsqueeze(-1))
        logits = self.head(h_n[-1])
        return logits.squeeze(0) if unbatched else logits


Classifier = TransformerClassifier | RNNClassifier


def embed_tokens(features: torch.Tensor, model: TransformerClassifier) -> torch.Tensor:
    return model.embed(features)


def transformer_forward(tokens: torch.Tensor, model: TransformerClassifier, train_mode: bool) -> torch.Tensor:
    model.train(train_mode)
    return model(tokens)


def rnn_forward(samples: torch.Tensor, model: RNNClassifier) -> torch.Tensor:
    model.eval()
    return model(samples)


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood; a single logit row with a scalar label is accepted."""
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
        labels = torch.as_tensor(labels).reshape(1)
    return F.cross_entropy(logits, labels)


def backward(
    model: nn.Module, inputs: torch.Tensor, labels: torch.Tensor, train_mode: bool = False
) -> Dict[str, torch.Tensor]:
    """Gradients of the mean batch loss, keyed by parameter name."""
    model.train(train_mode)
    model.zero_grad(set_to_none=True)
    loss = cross_entropy(model(inputs), labels)
    loss.backward()
    return {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }


@torch.no_grad()
def predict(model: nn.Module, inputs: torch.Tensor, batch: int = 256) -> torch.Tensor:
    model.eval()
    return torch.cat([model(inputs[i : i + batch]).argmax(dim=-1) for i in range(0, len(inputs), batch)])


class AdamW(Optimizer):
    """
    AdamW with decoupled weight decay.

    Every gradient is checked before any parameter moves, so a non-finite
    gradient leaves parameters and moments untouched.
    """

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        if lr <= 0.0:
            raise ValueError(f"Invalid lr: {lr}")
        if not (0.0 <= betas[0] < 1.0) or not (0.0 <= betas[1] < 1.0):
            raise ValueError(f"Invalid betas: {betas}")
        if eps <= 0.0:
            raise ValueError(f"Invalid eps: {eps}")
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay))

    @classmethod
    def from_config(cls, params, cfg: TrainConfig) -> "AdamW":
        return cls(params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)

    @torch.no_grad()
    def step(self, closure=None) -> Optional[torch.Tensor]:
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is not None and not torch.isfinite(p.grad).all():
                    raise NonFiniteGradientError(
                        f"non-finite gradient in parameter of shape {tuple(p.shape)}; step aborted"
                    )

        for group in self.param_groups:
            lr = group["lr"]
            beta1, beta2 = group["betas"]
            eps = group["eps"]
            wd = group["weight_decay"]

            for p in group["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                state = self.state[p]
                if len(state) == 0:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)

                state["step"] += 1
                t = state["step"]
                exp_avg = state["exp_avg"]
                exp_avg_sq = state["exp_avg_sq"]

                if wd != 0.0:
                    p.mul_(1.0 - lr * wd)

                exp_avg.mul_(beta1).add_(grad, alpha=1 - beta1)
                exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
                m_hat = exp_avg / (1 - beta1**t)
                v_hat = exp_avg_sq / (1 - beta2**t)
                p.addcdiv_(m_hat, v_hat.sqrt().add_(eps), value=-lr)

        return loss


def build_classifier(
    kind: ClassifierKind,
    seed: int,
    transformer: Optional[TransformerConfig] = None,
    rnn: Optional[RnnConfig] = None,
    feature_dim: Optional[int] = None,
) -> Classifier:
    if kind is ClassifierKind.transformer:
        if transformer is None or feature_dim is None:
            raise ValueError("a transformer needs its config and feature_dim")
        return TransformerClassifier(transformer, feature_dim, seed=seed)
    if rnn is None:
        raise ValueError("an RNN needs its config")
    return RNNClassifier(rnn, seed=seed)
