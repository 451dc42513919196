"""Heteroscedastic transformer forecaster for load and PV.

Encoder-only transformer over sliding feature windows with dual Gaussian
output heads per target (mean + softplus variance), a physics mask that
zeroes the PV mean outside daylight, and a composite training loss:
Gaussian NLL + temporal smoothness + a nighttime-PV penalty evaluated on
the pre-mask PV mean (post-mask it would be identically zero).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .profiles import FEATURE_DIM, WindowedDataset

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ForecasterConfig:
    d_model: int = 16
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 64
    dropout: float = 0.1
    window: int = 24
    horizon: int = 3
    feature_dim: int = FEATURE_DIM
    alpha_smooth: float = 0.01
    beta_night: float = 0.1
    epsilon_stab: float = 1e-6
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout out of [0, 1): {self.dropout}")
        if self.epsilon_stab <= 0:
            raise ValueError("epsilon_stab must be positive")


@dataclass
class ForecastDistribution:
    """Per-horizon-step Gaussians for load and PV (kWh, kWh^2)."""
    mu_load: np.ndarray
    var_load: np.ndarray
    mu_pv: np.ndarray
    var_pv: np.ndarray


@dataclass
class LossBreakdown:
    nll: float
    smoothness: float
    night_pv_penalty: float
    total: float


def multi_head_attention(x: torch.Tensor, w_q: torch.Tensor, w_k: torch.Tensor,
                         w_v: torch.Tensor, w_o: torch.Tensor,
                         n_heads: int) -> torch.Tensor:
    """Scaled dot-product self-attention over a (batch, seq, d_model) input.

    Weight matrices are (d_model, d_model); heads are contiguous column
    blocks of the Q/K/V projections, concatenated and mixed by w_o.
    """
    squeeze = x.dim() == 2
    if squeeze:
        x = x.unsqueeze(0)
    b, seq, d_model = x.shape
    if w_q.shape != (d_model, d_model):
        raise ValueError(f"projection shape {tuple(w_q.shape)} != ({d_model}, {d_model})")
    if d_model % n_heads != 0:
        raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
    d_k = d_model // n_heads

    def split(t: torch.Tensor) -> torch.Tensor:
        return t.view(b, seq, n_heads, d_k).transpose(1, 2)  # (b, h, seq, d_k)

    q = split(x @ w_q)
    k = split(x @ w_k)
    v = split(x @ w_v)
    scores = q @ k.transpose(-2, -1) / math.sqrt(d_k)
    attn = torch.softmax(scores, dim=-1)
    out = (attn @ v).transpose(1, 2).reshape(b, seq, d_model) @ w_o
    return out.squeeze(0) if squeeze else out


class EncoderLayer(nn.Module):
    """Self-attention + position-wise feedforward, residuals, post-norm."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.w_q = nn.Parameter(torch.empty(d_model, d_model))
        self.w_k = nn.Parameter(torch.empty(d_model, d_model))
        self.w_v = nn.Parameter(torch.empty(d_model, d_model))
        self.w_o = nn.Parameter(torch.empty(d_model, d_model))
        for w in (self.w_q, self.w_k, self.w_v, self.w_o):
            nn.init.xavier_uniform_(w)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.ReLU(),
                                nn.Linear(d_ff, d_model))
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        attn = multi_head_attention(x, self.w_q, self.w_k, self.w_v, self.w_o,
                                    self.n_heads)
        x = self.norm1(x + self.dropout(attn))
        x = self.norm2(x + self.dropout(self.ff(x)))
        return x


def apply_pv_physics_mask(mu_pv_raw: torch.Tensor, daylight_flag: torch.Tensor,
                          norm_daylight: torch.Tensor) -> torch.Tensor:
    """softplus(raw) x daylight flag x normalized day length, elementwise."""
    return F.softplus(mu_pv_raw) * daylight_flag * norm_daylight


class TransformerForecaster(nn.Module):
    def __init__(self, cfg: ForecasterConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.input_proj = nn.Sequential(
            nn.Linear(cfg.feature_dim, d), nn.LayerNorm(d), nn.ReLU(),
            nn.Linear(d, d), nn.LayerNorm(d), nn.ReLU())
        self.pos = nn.Parameter(torch.zeros(cfg.window, d))
        nn.init.normal_(self.pos, std=0.02)
        self.layers = nn.ModuleList(
            EncoderLayer(d, cfg.n_heads, cfg.d_ff, cfg.dropout)
            for _ in range(cfg.n_layers))
        self.head_mu_load = nn.Linear(d, cfg.horizon)
        self.head_var_load = nn.Linear(d, cfg.horizon)
        self.head_mu_pv = nn.Linear(d, cfg.horizon)
        self.head_var_pv = nn.Linear(d, cfg.horizon)

    def forward(self, x: torch.Tensor, exo_flag: torch.Tensor,
                exo_norm: torch.Tensor) -> dict[str, torch.Tensor]:
        """x: (batch, window, feature_dim); exo_*: (batch, horizon).

        Returns mu/var per target plus the pre-mask softplus PV mean used
        by the nighttime penalty.
        """
        if x.shape[1] != self.cfg.window:
            raise ValueError(
                f"window length {x.shape[1]} != configured {self.cfg.window}")
        eps = self.cfg.epsilon_stab
        h = self.input_proj(x) + self.pos
        for layer in self.layers:
            h = layer(h)
        pooled = h[:, -1]  # most recent position
        mu_pv_premask = F.softplus(self.head_mu_pv(pooled))
        return {
            "mu_load": self.head_mu_load(pooled),
            "var_load": F.softplus(self.head_var_load(pooled)) + eps,
            "mu_pv": apply_pv_physics_mask(self.head_mu_pv(pooled), exo_flag, exo_norm),
            "var_pv": F.softplus(self.head_var_pv(pooled)) + eps,
            "mu_pv_premask": mu_pv_premask,
        }


def composite_loss(pred: dict[str, torch.Tensor], targets: torch.Tensor,
                   daylight_flag: torch.Tensor, cfg: ForecasterConfig,
                   ) -> tuple[torch.Tensor, LossBreakdown]:
    """Gaussian NLL + alpha * smoothness + beta * nighttime-PV penalty.

    targets: (batch, horizon, 2) with load in column 0 and PV in column 1.
    Every term is summed over targets/steps and averaged over the batch.
    """
    eps = cfg.epsilon_stab
    y_load, y_pv = targets[..., 0], targets[..., 1]

    def nll_term(y, mu, var):
        if torch.any(var <= 0):
            raise ValueError("non-positive variance in loss input")
        v = var + eps
        return 0.5 * (torch.log(v) + (y - mu) ** 2 / v).sum(dim=-1)

    nll = (nll_term(y_load, pred["mu_load"], pred["var_load"])
           + nll_term(y_pv, pred["mu_pv"], pred["var_pv"])).mean()
    smooth = (pred["mu_load"].diff(dim=-1).abs().sum(dim=-1)
              + pred["mu_pv"].diff(dim=-1).abs().sum(dim=-1)).mean()
    night = (pred["mu_pv_premask"] * (1.0 - daylight_flag)).sum(dim=-1).mean()
    total = nll + cfg.alpha_smooth * smooth + cfg.beta_night * night
    # Reconstruct the scalar total from its logged components so the
    # decomposition identity holds exactly in float64.
    breakdown = LossBreakdown(
        nll=nll.item(), smoothness=smooth.item(), night_pv_penalty=night.item(),
        total=nll.item() + cfg.alpha_smooth * smooth.item()
        + cfg.beta_night * night.item())
    return total, breakdown


@dataclass
class EpochLog:
    epoch: int
    train_nll: float
    val_nll: float
    smoothness: float
    night_penalty: float
    total: float


def _to_tensors(ds: WindowedDataset, dtype=torch.float32):
    return (torch.as_tensor(ds.inputs, dtype=dtype),
            torch.as_tensor(ds.targets, dtype=dtype),
            torch.as_tensor(ds.exo_daylight, dtype=dtype),
            torch.as_tensor(ds.exo_norm_daylight, dtype=dtype))


def train(dataset: WindowedDataset, cfg: ForecasterConfig,
          ) -> tuple[TransformerForecaster, list[EpochLog]]:
    """Minibatch Adam on the composite loss with early stopping.

    Deterministic given cfg.seed; returns the best-validation parameters
    and the per-epoch loss log.  Aborts on NaN loss naming the epoch.
    """
    torch.manual_seed(cfg.seed)
    model = TransformerForecaster(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    gen = torch.Generator().manual_seed(cfg.seed)

    tr = dataset.split("train")
    va = dataset.split("val")
    x_tr, y_tr, f_tr, n_tr = _to_tensors(tr)
    x_va, y_va, f_va, n_va = _to_tensors(va)

    logs: list[EpochLog] = []
    best_val = float("inf")
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        perm = torch.randperm(len(x_tr), generator=gen)
        train_nll = 0.0
        for start in range(0, len(perm), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            pred = model(x_tr[idx], f_tr[idx], n_tr[idx])
            loss, bd = composite_loss(pred, y_tr[idx], f_tr[idx], cfg)
            if not math.isfinite(bd.total):
                raise RuntimeError(f"training diverged (NaN loss) at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            train_nll += bd.nll * len(idx)
        train_nll /= max(len(perm), 1)

        model.eval()
        with torch.no_grad():
            pred = model(x_va, f_va, n_va)
            _, vbd = composite_loss(pred, y_va, f_va, cfg)
        if not math.isfinite(vbd.total):
            raise RuntimeError(f"training diverged (NaN loss) at epoch {epoch}")
        logs.append(EpochLog(epoch, train_nll, vbd.nll, vbd.smoothness,
                             vbd.night_pv_penalty, vbd.total))
        if vbd.total < best_val - 1e-12:
            best_val = vbd.total
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return model, logs


def predict(model: TransformerForecaster, inputs: np.ndarray,
            exo_flag: np.ndarray, exo_norm: np.ndarray) -> ForecastDistribution:
    """Forward pass in evaluation mode over a (n, window, feat) batch."""
    model.eval()
    with torch.no_grad():
        out = model(torch.as_tensor(inputs, dtype=torch.float32),
                    torch.as_tensor(exo_flag, dtype=torch.float32),
                    torch.as_tensor(exo_norm, dtype=torch.float32))
    return ForecastDistribution(out["mu_load"].numpy(), out["var_load"].numpy(),
                                out["mu_pv"].numpy(), out["var_pv"].numpy())


def predict_with_intervals(model: TransformerForecaster, inputs: np.ndarray,
                           exo_flag: np.ndarray, exo_norm: np.ndarray,
                           n_samples: int = 1000, level: float = 0.9,
                           seed: int = 0):
    """Empirical quantile intervals from Gaussian sampling; PV clamped at 0.

    Returns dicts {target: (lower, upper, mean)} with arrays (n, horizon).
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level out of (0, 1): {level}")
    dist = predict(model, inputs, exo_flag, exo_norm)
    rng = np.random.default_rng(seed)
    lo_q, hi_q = (1.0 - level) / 2.0, (1.0 + level) / 2.0
    out = {}
    for name, mu, var, clamp in (("load", dist.mu_load, dist.var_load, False),
                                 ("pv", dist.mu_pv, dist.var_pv, True)):
        samples = rng.normal(mu, np.sqrt(var), size=(n_samples,) + mu.shape)
        if clamp:
            samples = np.maximum(samples, 0.0)
        lower = np.quantile(samples, lo_q, axis=0)
        upper = np.quantile(samples, hi_q, axis=0)
        out[name] = (lower, upper, mu)
    return out, dist


# --- calibration metrics ----------------------------------------------------

def picp(lower: np.ndarray, upper: np.ndarray, targets: np.ndarray) -> float:
    """Fraction of targets inside their intervals."""
    inside = (targets >= lower) & (targets <= upper)
    return float(np.mean(inside))


def mpiw(lower: np.ndarray, upper: np.ndarray) -> float:
    """Mean interval width."""
    return float(np.mean(upper - lower))


def crps_gaussian(mu, sigma, y) -> np.ndarray | float:
    """Closed-form CRPS of a Gaussian forecast against observation y."""
    mu, sigma, y = np.asarray(mu, float), np.asarray(sigma, float), np.asarray(y, float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    z = (y - mu) / sigma
    pdf = np.exp(-0.5 * z ** 2) / math.sqrt(2.0 * math.pi)
    cdf = 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))
    out = sigma * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / math.sqrt(math.pi))
    return float(out) if out.ndim == 0 else out


# --- persistence ------------------------------------------------------------

def save_checkpoint(path, model: TransformerForecaster,
                    norm_mean: np.ndarray | None = None,
                    norm_std: np.ndarray | None = None) -> None:
    torch.save({"version": CHECKPOINT_VERSION, "config": asdict(model.cfg),
                "state_dict": model.state_dict(),
                "norm_mean": norm_mean, "norm_std": norm_std}, path)


def load_checkpoint(path) -> TransformerForecaster:
    blob = torch.load(path, weights_only=False)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {blob.get('version')}")
    cfg = ForecasterConfig(**blob["config"])
    model = TransformerForecaster(cfg)
    try:
        model.load_state_dict(blob["state_dict"])
    except RuntimeError as e:
        raise ValueError(f"checkpoint does not match config: {e}") from None
    model.norm_mean = blob.get("norm_mean")
    model.norm_std = blob.get("norm_std")
    model.eval()
    return model


def write_training_log(path, logs: list[EpochLog]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_nll", "val_nll", "smoothness",
                    "night_penalty", "total"])
        for log in logs:
            w.writerow([log.epoch, repr(log.train_nll), repr(log.val_nll),
                        repr(log.smoothness), repr(log.night_penalty),
                        repr(log.total)])
