"""One-class SVM trained on high-quality contours only.

Solves the dual QP

    min  1/2 a' K a   s.t.  0 <= a_i <= 1/(nu n),  sum a = 1

with sequential pairwise optimization: pick the most-violating pair,
minimize the two-variable subproblem in closed form, repeat until the KKT
gap falls under tolerance. Hyperparameters come from a grid search scored
against Gaussian pseudo-outliers drawn in standardized feature space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConvergenceError, FormatError, ValidationError
from .features import FeatureVector, StandardizationStats, fit_standardization

MODEL_FORMAT = "ocsvm-v1"

DEFAULT_TOLERANCE = 1e-6
DEFAULT_NUS = (0.01, 0.05, 0.1, 0.2)
DEFAULT_NOISE_SIGMA = 3.0
DEFAULT_NOISE_COUNT = 256

HIGH = "high"
LOW = "low"


@dataclass(frozen=True)
class KernelParams:
    gamma: float
    kind: str = "rbf"

    def __post_init__(self):
        if self.kind != "rbf":
            raise ValidationError(f"unsupported kernel kind {self.kind!r}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValidationError("gamma must be finite and > 0")


@dataclass(frozen=True)
class TrainConfig:
    nu: float
    kernel: KernelParams
    tolerance: float = DEFAULT_TOLERANCE
    max_passes: int | None = None  # None -> 10 n^2 pair updates
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.nu <= 1):
            raise ValidationError(f"nu must be in (0, 1], got {self.nu}")
        if not self.tolerance > 0:
            raise ValidationError("tolerance must be > 0")
        if self.max_passes is not None and self.max_passes < 1:
            raise ValidationError("max_passes must be >= 1")


@dataclass(frozen=True)
class OcsvmModel:
    """Support vectors are stored already standardized."""

    support_vectors: np.ndarray
    alphas: np.ndarray
    rho: float
    nu: float
    kernel: KernelParams
    standardization: StandardizationStats
    schema_id: str
    train_size: int

    def __post_init__(self):
        sv = np.asarray(self.support_vectors, dtype=np.float64)
        al = np.asarray(self.alphas, dtype=np.float64).reshape(-1)
        if sv.ndim != 2 or sv.shape[0] != al.size or sv.shape[0] < 1:
            raise ValidationError("support_vectors must be (n_sv, D) matching alphas")
        if not np.all(np.isfinite(sv)):
            raise ValidationError("support vectors must be finite")
        if not (0 < self.nu <= 1):
            raise ValidationError(f"nu must be in (0, 1], got {self.nu}")
        if self.train_size < sv.shape[0] or self.train_size < 2:
            raise ValidationError("train_size must be >= max(2, n_sv)")
        cap = 1.0 / (self.nu * self.train_size)
        if np.any(al <= 0) or np.any(al > cap + 1e-12):
            raise ValidationError("alphas must satisfy 0 < a_i <= 1/(nu n)")
        if abs(float(al.sum()) - 1.0) > 1e-6:
            raise ValidationError("alphas must sum to 1 within 1e-6")
        if not math.isfinite(self.rho):
            raise ValidationError("rho must be finite")
        if self.standardization.dim != sv.shape[1]:
            raise ValidationError("standardization dimension must match SVs")
        object.__setattr__(self, "support_vectors", sv)
        object.__setattr__(self, "alphas", al)

    @property
    def box_cap(self) -> float:
        return 1.0 / (self.nu * self.train_size)


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """k(x,y) = exp(-gamma ||x-y||^2) for row pairs of a and b."""
    d2 = cdist(np.atleast_2d(a), np.atleast_2d(b), "sqeuclidean")
    return np.exp(-gamma * d2)


def dual_objective(gram: np.ndarray, alpha: np.ndarray) -> float:
    return 0.5 * float(alpha @ gram @ alpha)


def _solve_dual(
    gram: np.ndarray,
    nu: float,
    tol: float,
    max_updates: int,
    seed: int,
    history: list | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Return (alpha, gradient) at convergence; gradient g = K alpha."""
    n = gram.shape[0]
    cap = 1.0 / (nu * n)
    alpha = np.zeros(n, dtype=np.float64)
    k = min(int(math.floor(nu * n)), n)
    alpha[:k] = cap
    rem = 1.0 - k * cap
    if rem > 1e-15 and k < n:
        alpha[k] = rem

    g = gram @ alpha
    # seeded scan order: numpy argmin/argmax take the first of equal
    # extremes, so ties among KKT violators break by this permutation
    order = np.random.default_rng(seed).permutation(n)
    g_ord = g[order]
    alpha_ord = alpha[order]

    if history is not None:
        history.append(dual_objective(gram, alpha))

    for _ in range(max_updates):
        up = np.where(alpha_ord < cap, g_ord, np.inf)
        down = np.where(alpha_ord > 0.0, g_ord, -np.inf)
        pi = int(np.argmin(up))
        pj = int(np.argmax(down))
        i = int(order[pi])
        j = int(order[pj])
        gap = g[j] - g[i]
        if gap <= tol:
            return alpha, g
        eta = max(gram[i, i] + gram[j, j] - 2.0 * gram[i, j], 1e-12)
        delta = gap / eta
        cap_i = cap - alpha[i]
        cap_j = alpha[j]
        delta = min(delta, cap_i, cap_j)
        alpha[i] += delta
        alpha[j] -= delta
        # land exactly on the bound so box membership stays exact
        if delta == cap_i:
            alpha[i] = cap
        if delta == cap_j:
            alpha[j] = 0.0
        g += delta * (gram[:, i] - gram[:, j])
        alpha_ord[pi] = alpha[i]
        alpha_ord[pj] = alpha[j]
        g_ord = g[order]
        if history is not None:
            history.append(dual_objective(gram, alpha))

    up = np.where(alpha_ord < cap, g_ord, np.inf)
    down = np.where(alpha_ord > 0.0, g_ord, -np.inf)
    final_gap = float(g[order[int(np.argmax(down))]] - g[order[int(np.argmin(up))]])
    raise ConvergenceError(
        f"dual solver did not converge within {max_updates} pair updates "
        f"(KKT violation {final_gap:.3e}, tolerance {tol:.3e})"
    )


def _rho_from_gradient(g: np.ndarray, alpha: np.ndarray, cap: float) -> float:
    unbounded = (alpha > 0.0) & (alpha < cap)
    if unbounded.any():
        return float(g[unbounded].mean())
    # no margin SVs: rho lies between the bounded-SV and zero-alpha sides
    bounded = alpha >= cap
    zero = alpha <= 0.0
    if bounded.any() and zero.any():
        return 0.5 * (float(g[bounded].max()) + float(g[zero].min()))
    if bounded.any():
        return float(g[bounded].max())
    return float(g[zero].min())


def train(data: list[FeatureVector], cfg: TrainConfig) -> OcsvmModel:
    """Fit standardization on the inliers, then solve the dual QP."""
    n = len(data)
    if n < 2:
        raise ValidationError(f"need at least 2 training vectors, got {n}")
    if cfg.nu * n < 1.0:
        raise ValidationError(
            f"nu*n must be >= 1 (nu={cfg.nu}, n={n}); the box cap would exceed 1"
        )
    schema = data[0].schema_id
    if any(v.schema_id != schema for v in data):
        raise ValidationError("all training vectors must share one schema")

    stats = fit_standardization(data)
    x = np.vstack([(v.values - stats.mean) / stats.std for v in data])

    gram = rbf_kernel(x, x, cfg.kernel.gamma)
    max_updates = cfg.max_passes if cfg.max_passes is not None else 10 * n * n
    alpha, g = _solve_dual(gram, cfg.nu, cfg.tolerance, max_updates, cfg.seed)
    cap = 1.0 / (cfg.nu * n)
    rho = _rho_from_gradient(g, alpha, cap)

    keep = alpha > 0.0
    return OcsvmModel(
        support_vectors=x[keep],
        alphas=alpha[keep],
        rho=rho,
        nu=cfg.nu,
        kernel=cfg.kernel,
        standardization=stats,
        schema_id=schema,
        train_size=n,
    )


def decision_raw(model: OcsvmModel, x: np.ndarray) -> np.ndarray:
    """Scores for raw (unstandardized) row vectors; positive = inlier side."""
    arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if arr.shape[1] != model.standardization.dim:
        raise ValidationError(
            f"dimension mismatch: {arr.shape[1]} vs model {model.standardization.dim}"
        )
    z = (arr - model.standardization.mean) / model.standardization.std
    k = rbf_kernel(z, model.support_vectors, model.kernel.gamma)
    return k @ model.alphas - model.rho


def decision(model: OcsvmModel, x: FeatureVector) -> float:
    if x.schema_id != model.schema_id:
        raise ValidationError(
            f"schema mismatch: vector {x.schema_id!r} vs model {model.schema_id!r}"
        )
    return float(decision_raw(model, x.values)[0])


def predict(model: OcsvmModel, x: FeatureVector) -> str:
    """high iff decision >= 0; the boundary itself does not trigger review."""
    return HIGH if decision(model, x) >= 0.0 else LOW


def default_gamma_grid(dim: int) -> tuple[float, ...]:
    d = float(dim)
    return (1.0 / (2.0 * d), 1.0 / d, 2.0 / d, 4.0 / d)


@dataclass(frozen=True)
class CalibrationResult:
    nu: float
    gamma: float
    report: tuple[dict, ...]


def calibrate(
    train_features: list[FeatureVector],
    nus,
    gammas,
    noise_count: int = DEFAULT_NOISE_COUNT,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    seed: int = 0,
    tolerance: float = DEFAULT_TOLERANCE,
) -> CalibrationResult:
    """Grid-search (nu, gamma) by balanced accuracy on a held-out fifth of
    the inliers plus seeded zero-mean Gaussian pseudo-outliers.

    Noise is drawn once in the standardized space of the fit split (std
    sigma_n per dimension) and mapped back to raw units, so every grid cell
    scores the same calibration set. Ties prefer smaller nu, then gamma.
    """
    nus = list(nus)
    gammas = list(gammas)
    if not nus or not gammas:
        raise ValidationError("calibration grid must be nonempty")
    if noise_count < 1:
        raise ValidationError("noise count must be >= 1")
    if noise_sigma <= 0:
        raise ValidationError("noise sigma must be > 0")
    n = len(train_features)
    n_fit = int(round(0.8 * n))
    n_val = n - n_fit
    if n_fit < 2 or n_val < 2:
        raise ValidationError(
            f"degenerate 80/20 split: {n_fit}/{n_val} from {n} inliers"
        )

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fit_set = [train_features[i] for i in perm[:n_fit]]
    val_set = [train_features[i] for i in perm[n_fit:]]

    fit_stats = fit_standardization(fit_set)
    z = rng.normal(0.0, noise_sigma, size=(noise_count, fit_stats.dim))
    noise_raw = fit_stats.mean + z * fit_stats.std
    val_raw = np.vstack([v.values for v in val_set])

    report = []
    best = None
    for nu in sorted(nus):
        for gamma in sorted(gammas):
            if nu * n_fit < 1.0:
                report.append(
                    {"nu": nu, "gamma": gamma, "ba": None,
                     "note": f"skipped: nu*n_fit = {nu * n_fit:.3g} < 1"}
                )
                continue
            cfg = TrainConfig(nu=nu, kernel=KernelParams(gamma=gamma),
                              tolerance=tolerance, seed=seed)
            model = train(fit_set, cfg)
            tn = int(np.count_nonzero(decision_raw(model, val_raw) >= 0.0))
            tp = int(np.count_nonzero(decision_raw(model, noise_raw) < 0.0))
            ba = 0.5 * (tp / noise_count + tn / n_val)
            report.append({"nu": nu, "gamma": gamma, "ba": ba, "note": ""})
            if best is None or ba > best[0]:
                best = (ba, nu, gamma)
    if best is None:
        raise ValidationError(
            "every grid cell was infeasible (nu * n_fit < 1 throughout)"
        )
    return CalibrationResult(nu=best[1], gamma=best[2], report=tuple(report))


def save_model(model: OcsvmModel, path) -> None:
    obj = {
        "format": MODEL_FORMAT,
        "schema_id": model.schema_id,
        "nu": model.nu,
        "kernel": {"kind": model.kernel.kind, "gamma": model.kernel.gamma},
        "rho": model.rho,
        "alphas": [float(a) for a in model.alphas],
        "support_vectors": [[float(v) for v in row] for row in model.support_vectors],
        "standardization": {
            "mean": [float(v) for v in model.standardization.mean],
            "std": [float(v) for v in model.standardization.std],
        },
        "train_size": model.train_size,
    }
    Path(path).write_text(json.dumps(obj) + "\n", encoding="utf-8")


def load_model(path) -> OcsvmModel:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or obj.get("format") != MODEL_FORMAT:
        raise FormatError(f"{path}: not a {MODEL_FORMAT} model file")
    try:
        kernel_obj = obj["kernel"]
        std_obj = obj["standardization"]
        kernel = KernelParams(kind=kernel_obj["kind"], gamma=float(kernel_obj["gamma"]))
        stats = StandardizationStats(
            mean=np.array(std_obj["mean"], dtype=np.float64),
            std=np.array(std_obj["std"], dtype=np.float64),
            schema_id=obj["schema_id"],
        )
        return OcsvmModel(
            support_vectors=np.array(obj["support_vectors"], dtype=np.float64),
            alphas=np.array(obj["alphas"], dtype=np.float64),
            rho=float(obj["rho"]),
            nu=float(obj["nu"]),
            kernel=kernel,
            standardization=stats,
            schema_id=obj["schema_id"],
            train_size=int(obj["train_size"]),
        )
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed model file: {exc}") from exc
