"""Anomaly scores, per-domain covariance fitting, thresholding, and the decision.

Two operating modes share one trained autoencoder:
  * mse: score = mean squared reconstruction error over the clip's stacked
    vectors, i.e. (1 / (D*K)) * sum_k ||psi_k - r(psi_k)||^2.
  * mahalanobis: per frame, the smaller of two quadratic forms
    e_k' inv_sigma_d e_k on the residual e_k, one per domain, averaged with
    the same 1 / (D*K) normalization.

Note the Mahalanobis form is the *squared* one (no square root): with identity
covariances it then reduces exactly to the mse score, and the 1/(D*K)
normalization stays dimensionally consistent across modes.

Scoring always runs in float64 regardless of the model's parameter dtype.
Scoring functions are pure; concurrent calls on different clips are safe.
"""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientDataError, ModelFileError
from .model import AeModel, forward

MODES = ("mse", "mahalanobis")
COV_MAGIC = b"ASDK-CV\x00"
COV_VERSION = 1
DEFAULT_RIDGE = 1e-3
# keeps the ridge term positive even when the sample covariance is all zero
RIDGE_TRACE_FLOOR = 1e-12
DEFAULT_PERCENTILE = 90.0


@dataclass
class AnomalyScore:
    value: float
    clip_id: str | None = None
    mode: str = "mse"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown scoring mode {self.mode!r}")
        if not np.isfinite(self.value) or self.value < 0:
            raise ConfigError(f"anomaly score must be finite and >= 0, got {self.value}")


@dataclass
class DomainCovariances:
    inv_sigma_source: np.ndarray
    inv_sigma_target: np.ndarray
    ridge: float
    n_source: int
    n_target: int

    @property
    def dim(self) -> int:
        return self.inv_sigma_source.shape[0]


@dataclass
class Threshold:
    phi: float
    percentile: float = DEFAULT_PERCENTILE
    split: str = "train"
    mode: str = "mse"


def _residuals(model: AeModel, features: np.ndarray) -> np.ndarray:
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[None, :]
    if feats.shape[0] < 1:
        raise ConfigError("need at least one feature vector")
    recon = np.asarray(forward(model, feats), dtype=np.float64)
    return feats - recon


def score_mse(model: AeModel, features: np.ndarray,
              clip_id: str | None = None) -> AnomalyScore:
    """Mean squared reconstruction error over all stacked vectors of a clip."""
    residuals = _residuals(model, features)
    value = float(np.mean(residuals**2))
    return AnomalyScore(value=value, clip_id=clip_id, mode="mse")


def mahalanobis_frame_scores(residuals: np.ndarray, inv_sigma: np.ndarray) -> np.ndarray:
    """Quadratic form e' inv_sigma e for each residual row (squared form)."""
    e = np.asarray(residuals, dtype=np.float64)
    return np.sum((e @ inv_sigma) * e, axis=1)


def score_mahalanobis(model: AeModel, features: np.ndarray, cov: DomainCovariances,
                      clip_id: str | None = None) -> AnomalyScore:
    """Per-frame minimum of the source/target quadratic forms, averaged over D*K."""
    residuals = _residuals(model, features)
    d = residuals.shape[1]
    if cov.dim != d:
        raise ConfigError(f"covariance dim {cov.dim} does not match feature dim {d}")
    q_source = mahalanobis_frame_scores(residuals, cov.inv_sigma_source)
    q_target = mahalanobis_frame_scores(residuals, cov.inv_sigma_target)
    value = float(np.sum(np.minimum(q_source, q_target)) / residuals.size)
    return AnomalyScore(value=value, clip_id=clip_id, mode="mahalanobis")


def _fit_one_covariance(residuals: np.ndarray, ridge: float):
    n = residuals.shape[0]
    if n < 2:
        raise InsufficientDataError(
            f"need at least 2 residual vectors per domain, got {n}")
    sigma = np.cov(residuals, rowvar=False, ddof=1)
    sigma = np.atleast_2d(sigma)
    mean_diag = float(np.trace(sigma)) / sigma.shape[0]
    ridge_scale = ridge * max(mean_diag, RIDGE_TRACE_FLOOR)
    sigma = sigma + ridge_scale * np.eye(sigma.shape[0])
    inv = np.linalg.inv(sigma)
    return (inv + inv.T) / 2.0  # enforce symmetry against round-off


def fit_covariances(model: AeModel, source_features: np.ndarray,
                    target_features: np.ndarray,
                    ridge: float = DEFAULT_RIDGE) -> DomainCovariances:
    """Fit inverse residual covariances per domain from training features.

    Covariance = mean-centered sample covariance (divisor N-1) plus
    ridge * max(trace/D, floor) * I, then inverted. The ridge keeps the target
    matrix invertible even with very few target-domain clips.
    """
    if ridge <= 0:
        raise ConfigError(f"ridge must be > 0, got {ridge}")
    res_s = _residuals(model, source_features)
    res_t = _residuals(model, target_features)
    return DomainCovariances(
        inv_sigma_source=_fit_one_covariance(res_s, ridge),
        inv_sigma_target=_fit_one_covariance(res_t, ridge),
        ridge=ridge, n_source=res_s.shape[0], n_target=res_t.shape[0])


def identity_covariances(dim: int) -> DomainCovariances:
    """Identity inverse covariances; makes the mahalanobis mode equal the mse mode."""
    return DomainCovariances(inv_sigma_source=np.eye(dim),
                             inv_sigma_target=np.eye(dim),
                             ridge=0.0, n_source=0, n_target=0)


def fit_threshold(training_scores, percentile: float = DEFAULT_PERCENTILE,
                  split: str = "train", mode: str = "mse") -> Threshold:
    """Empirical percentile (linear interpolation) of training-split scores."""
    values = [s.value if isinstance(s, AnomalyScore) else float(s)
              for s in training_scores]
    if not values:
        raise ConfigError("cannot fit a threshold on an empty score list")
    if not (0.0 < percentile <= 100.0):
        raise ConfigError(f"percentile must be in (0, 100], got {percentile}")
    phi = float(np.percentile(np.asarray(values, dtype=np.float64), percentile))
    return Threshold(phi=phi, percentile=percentile, split=split, mode=mode)


def decide(score: AnomalyScore, threshold: Threshold) -> str:
    """'anomaly' iff the score strictly exceeds phi, else 'normal'."""
    return "anomaly" if score.value > threshold.phi else "normal"


# ---------------------------------------------------------------------------
# artifact I/O

def save_covariances(cov: DomainCovariances, path) -> None:
    d = cov.dim
    if cov.inv_sigma_source.shape != (d, d) or cov.inv_sigma_target.shape != (d, d):
        raise ModelFileError("covariance matrices must be square and same-sized")
    blob = bytearray()
    blob += COV_MAGIC
    blob += struct.pack("<III", COV_VERSION, d, 0)
    blob += struct.pack("<dQQ", cov.ridge, cov.n_source, cov.n_target)
    blob += np.ascontiguousarray(cov.inv_sigma_source, dtype=np.float64).tobytes()
    blob += np.ascontiguousarray(cov.inv_sigma_target, dtype=np.float64).tobytes()
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(blob))
    os.replace(tmp, str(path))


def load_covariances(path) -> DomainCovariances:
    with open(path, "rb") as fh:
        blob = fh.read()
    header = len(COV_MAGIC) + 12 + 24
    if len(blob) < header:
        raise ModelFileError(f"{path}: truncated covariance file")
    if blob[:len(COV_MAGIC)] != COV_MAGIC:
        raise ModelFileError(f"{path}: not a covariance file (bad magic)")
    version, d, _ = struct.unpack_from("<III", blob, len(COV_MAGIC))
    if version != COV_VERSION:
        raise ModelFileError(f"{path}: unsupported covariance version {version}")
    ridge, n_source, n_target = struct.unpack_from("<dQQ", blob, len(COV_MAGIC) + 12)
    matrix_bytes = d * d * 8
    if len(blob) != header + 2 * matrix_bytes:
        raise ModelFileError(f"{path}: covariance payload size mismatch")
    inv_s = np.frombuffer(blob, dtype=np.float64, count=d * d,
                          offset=header).reshape(d, d).copy()
    inv_t = np.frombuffer(blob, dtype=np.float64, count=d * d,
                          offset=header + matrix_bytes).reshape(d, d).copy()
    return DomainCovariances(inv_sigma_source=inv_s, inv_sigma_target=inv_t,
                             ridge=ridge, n_source=int(n_source), n_target=int(n_target))


def save_thresholds(thresholds: dict[str, Threshold], path) -> None:
    payload = {mode: {"phi": t.phi, "percentile": t.percentile,
                      "split": t.split, "mode": t.mode}
               for mode, t in thresholds.items()}
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, str(path))


def load_thresholds(path) -> dict[str, Threshold]:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (json.JSONDecodeError, OSError) as exc:
        raise ModelFileError(f"{path}: unreadable threshold file ({exc})") from exc
    return {mode: Threshold(**fields) for mode, fields in payload.items()}


def write_score_csv(rows, path) -> None:
    """rows: iterable of (clip_path, score_value, decision)."""
    tmp = str(path) + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_path", "score", "decision"])
        for clip_path, value, decision in rows:
            writer.writerow([clip_path, repr(float(value)), decision])
    os.replace(tmp, str(path))


def read_score_csv(path) -> list[tuple[str, float, str]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"clip_path", "score"}
        if not required <= set(reader.fieldnames or []):
            raise ConfigError(f"{path}: score CSV needs columns {sorted(required)}")
        for row in reader:
            out.append((row["clip_path"], float(row["score"]),
                        row.get("decision", "")))
    return out
