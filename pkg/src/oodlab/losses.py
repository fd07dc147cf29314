"""Training objectives: cross-entropy, label smoothing, adaptive label smoothing.

All batch losses take softmax probabilities (not logits) and reduce by the mean
over rows. ``log`` clamps its input at 1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ForwardOut
from .tensor import Tensor

# keeps d/dv sqrt(v) finite when all non-max probabilities coincide
NMPC_SQRT_EPS = 1e-24

STRATEGIES = ("only_corr", "ramp_all")


@dataclass(frozen=True)
class LSConfig:
    alpha: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class ALSConfig:
    lam: float = 5.0
    strategy: str = "only_corr"
    ramp_epochs: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.ramp_epochs < 0:
            raise ValueError("ramp_epochs must be >= 0")


def cross_entropy(probs: Tensor, targets) -> Tensor:
    return -probs.log().gather(targets).mean()


def smooth_targets(n_classes: int, alpha: float, true_index: int) -> np.ndarray:
    y = np.full(n_classes, alpha / (n_classes - 1))
    y[true_index] = 1.0 - alpha
    return y


def ls_loss(probs: Tensor, targets, cfg: LSConfig) -> Tensor:
    if cfg.alpha == 0.0:
        return cross_entropy(probs, targets)
    n, n_classes = probs.shape
    targets = np.asarray(targets, dtype=np.int64)
    soft = np.full((n, n_classes), cfg.alpha / (n_classes - 1))
    soft[np.arange(n), targets] = 1.0 - cfg.alpha
    return -(probs.log() * soft).sum() * (1.0 / n)


def nmpc_penalty(prob_row) -> float:
    """Population std of the probabilities left after removing the (first) max."""
    p = np.asarray(prob_row, dtype=np.float64)
    rest = np.delete(p, int(np.argmax(p)))
    # the mean of equal floats can round away from their value
    if np.all(rest == rest[0]):
        return 0.0
    return float(np.sqrt(np.mean((rest - rest.mean()) ** 2)))


def nmpc_rows(probs: Tensor) -> Tensor:
    """Differentiable per-row NMPC std, shape (n, 1).

    The argmax position is treated as a constant selection.
    """
    n, n_classes = probs.shape
    mask = np.ones((n, n_classes))
    mask[np.arange(n), np.argmax(probs.data, axis=1)] = 0.0
    col = np.ones((n_classes, 1))
    row = np.ones((1, n_classes))
    scale = 1.0 / (n_classes - 1)
    mean = ((probs * mask) @ col) * scale
    dev = (probs - mean @ row) * mask
    var = ((dev * dev) @ col) * scale
    return (var + NMPC_SQRT_EPS).sqrt()


def lambda_schedule(epoch: int, ramp_epochs: int, lam: float) -> float:
    if ramp_epochs == 0:
        return lam
    return min(epoch / ramp_epochs, 1.0) * lam


def effective_lambda(cfg: ALSConfig, epoch: int) -> float:
    if cfg.strategy == "ramp_all":
        return lambda_schedule(epoch, cfg.ramp_epochs, cfg.lam)
    return cfg.lam


def als_loss(fwd: ForwardOut, targets, cfg: ALSConfig, epoch: int = 0) -> Tensor:
    """Cross-entropy plus ``lambda_eff`` times the NMPC std averaged over eligible rows.

    With ``only_corr`` a row is eligible when its current argmax equals its
    target; ``ramp_all`` uses every row with a ramped lambda.
    """
    probs = fwd.probs
    ce = cross_entropy(probs, targets)
    lam = effective_lambda(cfg, epoch)
    if lam == 0.0:
        return ce
    targets = np.asarray(targets, dtype=np.int64)
    if cfg.strategy == "only_corr":
        eligible = np.argmax(probs.data, axis=1) == targets
    else:
        eligible = np.ones(len(targets), dtype=bool)
    count = int(eligible.sum())
    if count == 0:
        return ce
    weights = (eligible / count).reshape(-1, 1)
    penalty = (nmpc_rows(probs) * weights).sum()
    return ce + penalty * lam
