"""Post-hoc knownness scores and the threshold decision rule.

Every score follows the same sign convention: higher means more likely to be
a known-class sample. Entropy-style scores are negated to fit it. Functions
accept a single row or a batch (rows along the first axis).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

UNKNOWN_LABEL = -1


class CalibrationError(ValueError):
    pass


class Decision(enum.Enum):
    KNOWN = "known"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Threshold:
    tau: float

    def __post_init__(self):
        if not np.isfinite(self.tau):
            raise ValueError("threshold must be finite")


@dataclass(frozen=True)
class ReactCalib:
    clip: float


@dataclass(frozen=True)
class VimCalib:
    feature_mean: np.ndarray
    principal_basis: np.ndarray  # (h, r), orthonormal columns
    alpha_v: float


@dataclass
class ScoredSample:
    logits: np.ndarray
    probs: np.ndarray
    features: np.ndarray
    score: float
    pred_class: int
    label: int  # UNKNOWN_LABEL for unknown-class samples


def msp(probs):
    return np.max(probs, axis=-1)


def neg_entropy(probs):
    p = np.asarray(probs, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    return np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=-1)


def gen(probs, gamma: float = 0.1):
    """Negated generalized entropy, summed over all classes."""
    p = np.clip(np.asarray(probs, dtype=np.float64), 0.0, 1.0)
    return -np.sum(p**gamma * (1.0 - p) ** gamma, axis=-1)


def max_logit(logits):
    return np.max(logits, axis=-1)


def energy(logits):
    """``logsumexp`` of the logits (negative free energy)."""
    x = np.asarray(logits, dtype=np.float64)
    m = np.max(x, axis=-1, keepdims=True)
    return np.squeeze(m, axis=-1) + np.log(np.sum(np.exp(x - m), axis=-1))


def react_fit(train_features, percentile: float = 0.9) -> ReactCalib:
    acts = np.asarray(train_features, dtype=np.float64).ravel()
    if acts.size == 0:
        raise CalibrationError("ReAct calibration needs at least one activation")
    return ReactCalib(clip=float(np.quantile(acts, percentile)))


def react_score(features, weight, bias, calib: ReactCalib):
    clipped = np.minimum(np.asarray(features, dtype=np.float64), calib.clip)
    return energy(clipped @ weight + bias)


def grad_norm_score(features, probs):
    """L1 norm of the last-layer weight gradient of CE against uniform targets.

    That gradient is the outer product ``f (p - u)^T``, so its entrywise L1
    norm factorises.
    """
    p = np.asarray(probs, dtype=np.float64)
    f = np.asarray(features, dtype=np.float64)
    return np.sum(np.abs(p - 1.0 / p.shape[-1]), axis=-1) * np.sum(np.abs(f), axis=-1)


def _residual_norm(features, calib: VimCalib):
    centred = np.asarray(features, dtype=np.float64) - calib.feature_mean
    b = calib.principal_basis
    return np.linalg.norm(centred - (centred @ b) @ b.T, axis=-1)


def vim_fit(train_features, train_logits, dim: Optional[int] = None) -> VimCalib:
    """Fit the principal subspace and the virtual-logit scale on training data.

    ``dim`` defaults to half the feature width (rounded down).
    """
    feats = np.asarray(train_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise CalibrationError("ViM calibration needs a (n >= 2, h) feature matrix")
    h = feats.shape[1]
    dim = h // 2 if dim is None else dim
    if not 0 <= dim < h:
        raise CalibrationError(f"subspace dimension must satisfy 0 <= r < h={h}, got {dim}")
    mean = feats.mean(axis=0)
    centred = feats - mean
    cov = centred.T @ centred / (feats.shape[0] - 1)
    # eigh returns ascending eigenvalues; keep the top `dim`
    _, vecs = np.linalg.eigh(cov)
    basis = vecs[:, h - dim:][:, ::-1].copy()
    probe = VimCalib(mean, basis, 1.0)
    residual = _residual_norm(feats, probe).mean()
    scale = max(1.0, float(np.abs(centred).max()))
    if residual <= 1e-12 * scale:
        raise CalibrationError("features lie inside the principal subspace; residual norm is zero")
    alpha = float(np.mean(max_logit(train_logits)) / residual)
    if not alpha > 0:
        raise CalibrationError(f"virtual-logit scale must be positive, got {alpha}")
    return VimCalib(mean, basis, alpha)


def vim_score(features, logits, calib: VimCalib):
    return energy(logits) - calib.alpha_v * _residual_norm(features, calib)


def decide(score: float, tau: Threshold) -> Decision:
    return Decision.KNOWN if score > tau.tau else Decision.UNKNOWN


SCORE_NAMES = ("msp", "entropy", "gen", "max_logit", "energy", "react", "grad_norm", "vim")


@dataclass(frozen=True)
class Calibration:
    """Everything the score functions need besides the per-sample outputs."""

    weight: np.ndarray
    bias: np.ndarray
    react: Optional[ReactCalib] = None
    vim: Optional[VimCalib] = None
    gen_gamma: float = 0.1


def calibrate(weight, bias, train_features, train_logits, names=SCORE_NAMES,
              react_percentile: float = 0.9, vim_dim: Optional[int] = None) -> Calibration:
    react = react_fit(train_features, react_percentile) if "react" in names else None
    vim = vim_fit(train_features, train_logits, vim_dim) if "vim" in names else None
    return Calibration(np.asarray(weight), np.asarray(bias), react, vim)


def compute_score(name: str, features, logits, probs, calib: Optional[Calibration] = None):
    """Dispatch a score function by name over a batch."""
    if name == "msp":
        return msp(probs)
    if name == "entropy":
        return neg_entropy(probs)
    if name == "gen":
        return gen(probs, calib.gen_gamma if calib else 0.1)
    if name == "max_logit":
        return max_logit(logits)
    if name == "energy":
        return energy(logits)
    if name == "grad_norm":
        return grad_norm_score(features, probs)
    if name == "react":
        if calib is None or calib.react is None:
            raise CalibrationError("react needs a fitted ReactCalib")
        return react_score(features, calib.weight, calib.bias, calib.react)
    if name == "vim":
        if calib is None or calib.vim is None:
            raise CalibrationError("vim needs a fitted VimCalib")
        return vim_score(features, logits, calib.vim)
    raise KeyError(f"unknown score function {name!r}; choose from {SCORE_NAMES}")


def scored_samples(name, features, logits, probs, labels, calib=None) -> list[ScoredSample]:
    scores = compute_score(name, features, logits, probs, calib)
    preds = np.argmax(probs, axis=1)
    return [
        ScoredSample(logits[i], probs[i], features[i], float(scores[i]), int(preds[i]), int(labels[i]))
        for i in range(len(scores))
    ]
