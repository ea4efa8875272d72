"""Joint Gaussian mixture estimation and conditioning.

A model is fit over the full feature vector ``[xi_input, xi_output...]``
with EM, then used at detection time by conditioning the joint mixture on
the input block (Gaussian mixture regression) and collapsing the
conditional mixture to a single moment-matched Gaussian.

Calibration records, per (component, modality), the largest Mahalanobis
deviation seen on the training data; those maxima are the denominators of
the runtime deviation ratio. Calibration and replay share one batched
sweep (``modality_deviations``) so replaying the calibration data
reproduces each maximum bitwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

import numpy as np
from scipy.special import logsumexp

from anomoe import backend
from anomoe.data import FeatureSchema, Frame, SkillDataset
from anomoe.errors import (
    DataFormatError,
    EmCollapseError,
    InsufficientDataError,
    NotCalibratedError,
    SchemaMismatchError,
)

MODEL_FORMAT = "gmr-anomaly-model"
MODEL_VERSION = 1

_SYM_TOL = 1e-10
_WEIGHT_SUM_TOL = 1e-9


@dataclass
class EmConfig:
    """Settings for expectation maximization."""

    seed: int = 0
    max_iter: int = 300
    tol: float = 1e-7  # relative log-likelihood improvement to declare convergence
    reg_scale: float = 1e-6  # diagonal floor, times the mean per-feature variance
    weight_floor: float = 1e-8  # component weight below this is a collapse
    max_restarts: int = 5

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "max_iter": self.max_iter,
            "tol": self.tol,
            "reg_scale": self.reg_scale,
            "weight_floor": self.weight_floor,
            "max_restarts": self.max_restarts,
        }

    @classmethod
    def from_json_dict(cls, obj: dict[str, Any]) -> "EmConfig":
        return cls(**obj)


@dataclass
class GaussianComponent:
    weight: float
    mean: np.ndarray
    covariance: np.ndarray


@dataclass
class ConditionalGaussian:
    """Predictive output distribution for one input point."""

    mean: np.ndarray
    covariance: np.ndarray


@dataclass
class _Precomp:
    """Quantities derived from the parameters once, reused every frame."""

    log_w: np.ndarray  # (k,)
    chol_full: np.ndarray  # (k, L, L)
    mu_in: np.ndarray  # (k, di)
    chol_in: np.ndarray  # (k, di, di)
    mu_out: np.ndarray  # (k, do)
    reg_mats: np.ndarray  # (k, do, di)
    cond_covs: np.ndarray  # (k, do, do)


@dataclass
class GmmModel:
    """A trained joint mixture plus per-modality deviation ceilings.

    ``thresholds`` maps modality name to a length-K array of calibrated
    maxima; ``+inf`` marks a component never visited during calibration.
    It is None until ``calibrate_thresholds`` runs.
    """

    schema: FeatureSchema
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, L)
    covariances: np.ndarray  # (k, L, L)
    alpha: float = 5.0
    em_config: EmConfig = field(default_factory=EmConfig)
    thresholds: dict[str, np.ndarray] | None = None
    unvisited_components: tuple[int, ...] = ()
    ll_trace: tuple[float, ...] = ()

    _pre: _Precomp | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.covariances = np.asarray(self.covariances, dtype=float)
        if self.thresholds is not None:
            self.thresholds = {
                m: np.asarray(v, dtype=float) for m, v in self.thresholds.items()
            }

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def input_dims(self) -> slice:
        return slice(0, self.schema.input_dim)

    @property
    def output_dims(self) -> slice:
        return slice(self.schema.input_dim, self.schema.total_dim)

    @property
    def components(self) -> list[GaussianComponent]:
        return [
            GaussianComponent(float(w), m.copy(), c.copy())
            for w, m, c in zip(self.weights, self.means, self.covariances)
        ]

    @property
    def is_calibrated(self) -> bool:
        return self.thresholds is not None

    def validate(self) -> None:
        k = self.n_components
        L = self.schema.total_dim
        if k < 1:
            raise SchemaMismatchError("model needs at least one component")
        if self.means.shape != (k, L) or self.covariances.shape != (k, L, L):
            raise SchemaMismatchError(
                f"parameter shapes {self.means.shape}/{self.covariances.shape} do not "
                f"match K={k}, L={L}"
            )
        if abs(float(self.weights.sum()) - 1.0) > _WEIGHT_SUM_TOL:
            raise SchemaMismatchError(f"weights sum to {self.weights.sum()!r}, expected 1")
        if np.any(self.weights <= 0):
            raise SchemaMismatchError("non-positive component weight")
        asym = np.max(np.abs(self.covariances - np.swapaxes(self.covariances, 1, 2)))
        if asym > _SYM_TOL:
            raise SchemaMismatchError(f"covariance asymmetry {asym:.3e} exceeds {_SYM_TOL}")
        if self.thresholds is not None:
            if set(self.thresholds) != set(self.schema.modalities):
                raise SchemaMismatchError("threshold modalities do not match schema")
            for m, arr in self.thresholds.items():
                if arr.shape != (k,):
                    raise SchemaMismatchError(f"thresholds[{m!r}] has shape {arr.shape}")
                if np.any(arr[np.isfinite(arr)] < 0):
                    raise SchemaMismatchError(f"negative threshold in modality {m!r}")
        if self.alpha < 0:
            raise SchemaMismatchError("alpha must be >= 0")

    @property
    def precomp(self) -> _Precomp:
        if self._pre is None:
            di = self.schema.input_dim
            sig = self.covariances
            sig_ii = np.ascontiguousarray(sig[:, :di, :di])
            sig_io = sig[:, :di, di:]
            sig_oo = sig[:, di:, di:]
            chol_in = np.linalg.cholesky(sig_ii)
            # A_k^T solves Sigma_II A_k^T = Sigma_IO (no explicit inverse)
            reg_t = np.linalg.solve(sig_ii, sig_io)  # (k, di, do)
            reg_mats = np.ascontiguousarray(np.swapaxes(reg_t, 1, 2))
            cond = sig_oo - np.swapaxes(reg_t, 1, 2) @ sig_io
            cond = 0.5 * (cond + np.swapaxes(cond, 1, 2))
            self._pre = _Precomp(
                log_w=np.log(self.weights),
                chol_full=np.linalg.cholesky(self.covariances),
                mu_in=np.ascontiguousarray(self.means[:, :di]),
                chol_in=chol_in,
                mu_out=np.ascontiguousarray(self.means[:, di:]),
                reg_mats=reg_mats,
                cond_covs=np.ascontiguousarray(cond),
            )
        return self._pre


# -- estimation ----------------------------------------------------------


def _kmeanspp_centers(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Pick k rows of X by distance-squared weighted seeding."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            probs = d2 / total
            idx = int(rng.choice(n, p=probs))
        else:
            idx = int(rng.integers(n))  # duplicate points; any choice works
        centers[i] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[i]) ** 2, axis=1))
    return centers


def _em_once(
    X: np.ndarray, k: int, config: EmConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[float]]:
    """One EM pass. Raises EmCollapseError if a component starves."""
    n, L = X.shape
    mean_var = float(np.mean(np.var(X, axis=0)))
    # constant data has zero variance; fall back to an absolute floor
    reg = config.reg_scale * (mean_var if mean_var > 0 else 1.0)
    reg_eye = reg * np.eye(L)

    means = _kmeanspp_centers(X, k, rng)
    base_cov = np.cov(X, rowvar=False).reshape(L, L) + reg_eye
    covs = np.repeat(base_cov[None], k, axis=0)
    weights = np.full(k, 1.0 / k)

    trace: list[float] = []
    prev_ll = -np.inf
    prev_params = None
    for _ in range(config.max_iter):
        chols = np.linalg.cholesky(covs)
        log_r = backend.component_logpdfs(X, means, chols) + np.log(weights)
        log_norm = logsumexp(log_r, axis=1)
        ll = float(log_norm.sum())

        if ll < prev_ll - 1e-12 * max(1.0, abs(prev_ll)):
            # regularization can nudge the bound; keep the better parameters
            weights, means, covs = prev_params
            break
        trace.append(ll)
        if np.isfinite(prev_ll) and ll - prev_ll < config.tol * max(1.0, abs(prev_ll)):
            break
        prev_ll = ll
        prev_params = (weights, means, covs)

        resp = np.exp(log_r - log_norm[:, None])
        nk = resp.sum(axis=0)
        if np.any(nk / n < config.weight_floor):
            raise EmCollapseError(
                f"component weight fell below {config.weight_floor:g}"
            )
        weights = nk / n
        means = (resp.T @ X) / nk[:, None]
        covs = np.empty_like(covs)
        for j in range(k):
            diff = X - means[j]
            covs[j] = (resp[:, j] * diff.T) @ diff / nk[j] + reg_eye
            covs[j] = 0.5 * (covs[j] + covs[j].T)
    return weights, means, covs, trace


def fit_gmm_params(
    X: np.ndarray, n_components: int, config: EmConfig | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[float]]:
    """Fit mixture parameters to raw feature rows.

    Returns ``(weights, means, covariances, log_likelihood_trace)``.
    Deterministic for a given config.seed; collapses trigger reseeded
    restarts up to ``config.max_restarts``.
    """
    config = config or EmConfig()
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2:
        raise DataFormatError(f"feature matrix must be 2-D, got shape {X.shape}")
    if X.shape[0] < n_components:
        raise InsufficientDataError(
            f"{X.shape[0]} frames cannot support {n_components} components"
        )
    seeds = np.random.SeedSequence(config.seed).spawn(config.max_restarts + 1)
    last: EmCollapseError | None = None
    for seq in seeds:
        try:
            return _em_once(X, n_components, config, np.random.default_rng(seq))
        except EmCollapseError as exc:
            last = exc
    raise EmCollapseError(
        f"EM collapsed in all {config.max_restarts + 1} attempts: {last}"
    )


def fit_em(
    dataset: SkillDataset,
    n_components: int,
    config: EmConfig | None = None,
    alpha: float = 5.0,
) -> GmmModel:
    """Fit a joint mixture over a dataset's full feature vectors.

    The returned model has no thresholds yet; run ``calibrate_thresholds``
    before using it for detection.
    """
    dataset.validate()
    X = dataset.feature_matrix()
    weights, means, covs, trace = fit_gmm_params(X, n_components, config)
    model = GmmModel(
        schema=dataset.schema,
        weights=weights,
        means=means,
        covariances=covs,
        alpha=alpha,
        em_config=config or EmConfig(),
        ll_trace=tuple(trace),
    )
    model.validate()
    return model


# -- inference -----------------------------------------------------------


def _frames_matrix(model: GmmModel, frames: Iterable[Frame]) -> np.ndarray:
    rows = [f.full_vector(model.schema) for f in frames]
    if not rows:
        return np.empty((0, model.schema.total_dim))
    return np.stack(rows)


def log_likelihood(model: GmmModel, frames: Iterable[Frame]) -> float:
    """Sum of per-frame log mixture densities."""
    X = _frames_matrix(model, frames)
    if X.shape[0] == 0:
        return 0.0
    pre = model.precomp
    log_r = backend.component_logpdfs(X, model.means, pre.chol_full) + pre.log_w
    return float(logsumexp(log_r, axis=1).sum())


def _input_log_resp(model: GmmModel, Xin: np.ndarray) -> np.ndarray:
    pre = model.precomp
    return backend.component_logpdfs(Xin, pre.mu_in, pre.chol_in) + pre.log_w


def input_posterior(model: GmmModel, xi_input: np.ndarray) -> np.ndarray:
    """P(component | input), from weights times input-marginal densities."""
    xi_input = np.asarray(xi_input, dtype=float)
    log_r = _input_log_resp(model, xi_input[None, :])[0]
    log_r -= logsumexp(log_r)
    return np.exp(log_r)


def select_component(model: GmmModel, xi_input: np.ndarray) -> int:
    """Index of the most responsible component; ties go to the lowest index."""
    xi_input = np.asarray(xi_input, dtype=float)
    return int(np.argmax(_input_log_resp(model, xi_input[None, :])[0]))


def condition_batch(
    model: GmmModel, Xin: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Moment-matched conditional for each input row.

    Returns ``(posteriors, means, covariances)`` with shapes
    (n, k), (n, do), (n, do, do).
    """
    pre = model.precomp
    Xin = np.ascontiguousarray(Xin, dtype=float)
    return backend.gmr_moments(
        Xin, pre.log_w, pre.mu_in, pre.chol_in, pre.mu_out, pre.reg_mats, pre.cond_covs
    )


def condition(model: GmmModel, xi_input: np.ndarray) -> ConditionalGaussian:
    """Moment-matched predictive Gaussian over the output block."""
    xi_input = np.asarray(xi_input, dtype=float)
    _, mean, cov = condition_batch(model, xi_input[None, :])
    return ConditionalGaussian(mean=mean[0], covariance=cov[0])


def modality_deviations(
    model: GmmModel, X: np.ndarray
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Component assignment and per-modality Mahalanobis deviation per row.

    This single sweep backs both threshold calibration and runtime
    detection, so a frame replayed from the calibration set reproduces its
    calibration-time deviation exactly.
    """
    X = np.ascontiguousarray(X, dtype=float)
    di = model.schema.input_dim
    Xin = X[:, :di]
    assigned = np.argmax(_input_log_resp(model, Xin), axis=1)
    _, mean, cov = condition_batch(model, Xin)
    out = X[:, di:]
    devs: dict[str, np.ndarray] = {}
    for modality, sl in model.schema.modality_slices().items():
        diffs = out[:, sl] - mean[:, sl]
        devs[modality] = backend.mahalanobis_batch(diffs, cov[:, sl, sl])
    return assigned, devs


def calibrate_thresholds(model: GmmModel, dataset: SkillDataset) -> GmmModel:
    """Record the per-(component, modality) deviation maxima of a dataset.

    Components that no training frame maps to keep an infinite ceiling and
    are listed in the returned model's ``unvisited_components``.
    """
    dataset.validate()
    if dataset.schema != model.schema:
        raise SchemaMismatchError("calibration dataset schema differs from the model's")
    if dataset.n_frames == 0:
        raise InsufficientDataError("cannot calibrate on an empty dataset")
    assigned, devs = modality_deviations(model, dataset.feature_matrix())
    k = model.n_components
    visited = np.zeros(k, dtype=bool)
    visited[np.unique(assigned)] = True
    thresholds: dict[str, np.ndarray] = {}
    for modality, d in devs.items():
        d_max = np.full(k, -np.inf)
        np.maximum.at(d_max, assigned, d)
        d_max[~visited] = np.inf
        thresholds[modality] = d_max
    calibrated = replace(
        model,
        thresholds=thresholds,
        unvisited_components=tuple(int(i) for i in np.flatnonzero(~visited)),
        _pre=model._pre,
    )
    calibrated.validate()
    return calibrated


# -- serialization -------------------------------------------------------


def save_model(model: GmmModel, path, meta: dict[str, Any] | None = None) -> None:
    """Write a model as JSON. Infinite thresholds are stored as null."""
    model.validate()
    obj: dict[str, Any] = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "schema": model.schema.to_json_dict(),
        "n_components": model.n_components,
        "alpha": float(model.alpha),
        "em_config": model.em_config.to_json_dict(),
        "components": [
            {
                "weight": float(w),
                "mean": [float(x) for x in mu],
                "covariance": [[float(x) for x in row] for row in cov],
            }
            for w, mu, cov in zip(model.weights, model.means, model.covariances)
        ],
    }
    if model.ll_trace:
        obj["ll_trace"] = [float(v) for v in model.ll_trace]
    if model.thresholds is not None:
        obj["thresholds"] = [
            {
                "component": k,
                "modality": m,
                "d_max": None if math.isinf(arr[k]) else float(arr[k]),
            }
            for m, arr in model.thresholds.items()
            for k in range(model.n_components)
        ]
        obj["unvisited_components"] = list(model.unvisited_components)
    if meta is not None:
        obj["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def load_model(path) -> GmmModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    if obj.get("format") != MODEL_FORMAT:
        raise DataFormatError(f"{path}: not a {MODEL_FORMAT} file")
    try:
        schema = FeatureSchema.from_json_dict(obj["schema"])
        comps = obj["components"]
        weights = np.array([c["weight"] for c in comps], dtype=float)
        means = np.array([c["mean"] for c in comps], dtype=float)
        covs = np.array([c["covariance"] for c in comps], dtype=float)
        thresholds = None
        if "thresholds" in obj:
            k = len(comps)
            thresholds = {m: np.full(k, np.nan) for m in schema.modalities}
            for entry in obj["thresholds"]:
                val = entry["d_max"]
                thresholds[entry["modality"]][entry["component"]] = (
                    np.inf if val is None else float(val)
                )
            for m, arr in thresholds.items():
                if np.any(np.isnan(arr)):
                    raise DataFormatError(f"{path}: missing threshold in modality {m!r}")
        model = GmmModel(
            schema=schema,
            weights=weights,
            means=means,
            covariances=covs,
            alpha=float(obj["alpha"]),
            em_config=EmConfig.from_json_dict(obj["em_config"]),
            thresholds=thresholds,
            unvisited_components=tuple(obj.get("unvisited_components", [])),
            ll_trace=tuple(float(v) for v in obj.get("ll_trace", [])),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise DataFormatError(f"{path}: malformed model file: {exc}") from exc
    model.validate()
    return model


def require_calibrated(model: GmmModel) -> None:
    if not model.is_calibrated:
        raise NotCalibratedError(
            "model has no deviation thresholds; run calibration first"
        )
