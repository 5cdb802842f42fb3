"""One-dimensional Gaussian-process regression with an RBF kernel.

Dense GPs are fitted by maximizing the log marginal likelihood; the fitted
model is then compressed to a FITC sparse GP over a small set of inducing
inputs. ``GpTriplet`` bundles three independent sparse models, one per body
axis, mapping accelerometer readings to residual accelerations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, optimize

DEFAULT_INDUCING = 50
FORMAT_TAG = "gpmhe-sparse-gp"


class GpFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class RbfHyperparams:
    length_scale: float
    signal_var: float
    noise_var: float

    def __post_init__(self):
        for name in ("length_scale", "signal_var"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        # zero noise is allowed for interpolation checks
        if self.noise_var < 0:
            raise ValueError("noise_var must be non-negative")

    @property
    def log_params(self) -> np.ndarray:
        """``(log L, log σ_f, log σ_n)``, the optimization coordinates."""
        return np.array([
            math.log(self.length_scale),
            0.5 * math.log(self.signal_var),
            0.5 * math.log(self.noise_var),
        ])

    @classmethod
    def from_log(cls, theta) -> "RbfHyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(float(np.exp(theta[0])), float(np.exp(2 * theta[1])),
                   float(np.exp(2 * theta[2])))


@dataclass(frozen=True)
class TrainingSet:
    z: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).ravel()
        c = np.asarray(self.c, dtype=float).ravel()
        if z.shape != c.shape:
            raise ValueError("inputs and targets must have equal length")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(c))):
            raise ValueError("training data must be finite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "c", c)

    def __len__(self):
        return self.z.size


def kernel(zi, zj, hp: RbfHyperparams) -> np.ndarray:
    """RBF covariance ``σ_f² exp(-(zi - zj)² / 2L²)``; noise is not included."""
    d = np.asarray(zi, dtype=float) - np.asarray(zj, dtype=float)
    return hp.signal_var * np.exp(-0.5 * d * d / hp.length_scale ** 2)


def _gram(z1, z2, hp):
    return kernel(z1[:, None], z2[None, :], hp)


def _cholesky(k: np.ndarray, max_tries: int = 6) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter on failure."""
    try:
        return linalg.cholesky(k, lower=True)
    except linalg.LinAlgError:
        pass
    scale = max(float(np.mean(np.diag(k))), 1e-300)
    jitter = 1e-10 * scale
    for _ in range(max_tries):
        try:
            return linalg.cholesky(k + jitter * np.eye(k.shape[0]), lower=True)
        except linalg.LinAlgError:
            jitter *= 10.0
    raise GpFitError(f"Gram matrix not positive definite (jitter up to {jitter:.3g})")


def log_marginal_likelihood(theta, z, c):
    """Log marginal likelihood and its gradient w.r.t. ``(log L, log σ_f, log σ_n)``."""
    hp = RbfHyperparams.from_log(theta)
    z = np.asarray(z, dtype=float)
    c = np.asarray(c, dtype=float)
    n = z.size
    d2 = (z[:, None] - z[None, :]) ** 2
    kf = hp.signal_var * np.exp(-0.5 * d2 / hp.length_scale ** 2)
    k = kf + hp.noise_var * np.eye(n)
    chol = _cholesky(k)
    alpha = linalg.cho_solve((chol, True), c)
    lml = -0.5 * c @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * math.log(2 * math.pi)
    kinv = linalg.cho_solve((chol, True), np.eye(n))
    outer = np.outer(alpha, alpha) - kinv
    grads = (
        kf * d2 / hp.length_scale ** 2,
        2.0 * kf,
        2.0 * hp.noise_var * np.eye(n),
    )
    grad = np.array([0.5 * np.sum(outer * g) for g in grads])
    return float(lml), grad


@dataclass
class DenseGp:
    hyperparams: RbfHyperparams
    train: TrainingSet
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    @classmethod
    def from_hyperparams(cls, ts: TrainingSet, hp: RbfHyperparams) -> "DenseGp":
        k = _gram(ts.z, ts.z, hp) + hp.noise_var * np.eye(len(ts))
        chol = _cholesky(k)
        alpha = linalg.cho_solve((chol, True), ts.c)
        return cls(hp, ts, chol, alpha)

    def predict(self, z_star, clamp: bool = True):
        """Posterior mean and latent variance at ``z_star``."""
        zs = np.atleast_1d(np.asarray(z_star, dtype=float))
        ks = _gram(self.train.z, zs.ravel(), self.hyperparams)
        mean = ks.T @ self.alpha
        v = linalg.solve_triangular(self.chol, ks, lower=True)
        var = self.hyperparams.signal_var - np.sum(v * v, axis=0)
        if clamp:
            var = np.maximum(var, 0.0)
        shape = np.shape(z_star)
        return mean.reshape(shape), var.reshape(shape)

    def log_marginal_likelihood(self) -> float:
        return log_marginal_likelihood(self.hyperparams.log_params, self.train.z,
                                       self.train.c)[0]


def predict_dense(gp: DenseGp, z_star):
    return gp.predict(z_star)


def _starts(ts: TrainingSet, init: RbfHyperparams):
    sz = float(np.std(ts.z)) or 1.0
    sc = float(np.std(ts.c)) or 1.0
    data = RbfHyperparams(sz, sc ** 2, (0.1 * sc) ** 2)
    wide = RbfHyperparams(3.0 * sz, sc ** 2, (0.3 * sc) ** 2)
    return [init.log_params, data.log_params, wide.log_params]


def _bounds(ts: TrainingSet):
    sz = float(np.std(ts.z)) or 1.0
    sc = float(np.std(ts.c)) or 1.0
    return [
        (math.log(1e-3 * sz), math.log(1e3 * sz)),
        (math.log(1e-3 * sc), math.log(1e2 * sc)),
        (math.log(max(1e-3 * sc, 1e-6)), math.log(1e1 * sc)),
    ]


def fit_dense(ts: TrainingSet, init: RbfHyperparams | None = None, *,
              max_iter: int = 200, gtol: float = 1e-6) -> DenseGp:
    """Fit hyperparameters by multi-start ascent of the log marginal likelihood."""
    if len(ts) < 2:
        raise ValueError("need at least two training points")
    if init is None:
        init = RbfHyperparams(float(np.std(ts.z)) or 1.0, float(np.var(ts.c)) or 1.0,
                              0.01 * (float(np.var(ts.c)) or 1.0))
    if np.all(ts.c == 0.0):
        return DenseGp.from_hyperparams(ts, init)

    bounds = _bounds(ts)

    def negative(theta):
        try:
            lml, grad = log_marginal_likelihood(theta, ts.z, ts.c)
        except GpFitError:
            return 1e300, np.zeros(3)
        return -lml, -grad

    best = None
    for theta0 in _starts(ts, init):
        theta0 = np.clip(theta0, [b[0] for b in bounds], [b[1] for b in bounds])
        res = optimize.minimize(negative, theta0, jac=True, method="L-BFGS-B",
                                bounds=bounds,
                                options={"maxiter": max_iter, "gtol": gtol})
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun) or best.fun >= 1e300:
        raise GpFitError("marginal-likelihood optimization failed at every start")
    return DenseGp.from_hyperparams(ts, RbfHyperparams.from_log(best.x))


def inducing_quantiles(z, m: int) -> np.ndarray:
    """Inducing inputs at empirical quantiles of ``z``; duplicates are spread apart."""
    z = np.asarray(z, dtype=float)
    if m == 1:
        u = np.array([np.median(z)])
    else:
        u = np.quantile(z, np.linspace(0.0, 1.0, m))
    return _spread_duplicates(u, float(np.ptp(z)) or 1.0)


def _spread_duplicates(u, scale):
    u = np.sort(np.asarray(u, dtype=float))
    step = 1e-6 * scale
    for i in range(1, u.size):
        if u[i] <= u[i - 1]:
            u[i] = u[i - 1] + step
    return u


@dataclass
class SparseGp:
    """FITC posterior summarized on ``m`` inducing inputs.

    Prediction uses only the inducing inputs: the mean is ``k_u(z)·weights``
    and the latent variance ``k(z,z) - k_u(z)ᵀ var_matrix k_u(z)``.
    """

    hyperparams: RbfHyperparams
    inducing: np.ndarray
    weights: np.ndarray = field(repr=False)
    var_matrix: np.ndarray = field(repr=False)
    mean_variance: float = 0.0

    def predict(self, z_star, clamp: bool = True):
        zs = np.asarray(z_star, dtype=float)
        ku = kernel(zs[..., None], self.inducing, self.hyperparams)
        mean = ku @ self.weights
        var = self.hyperparams.signal_var - np.einsum("...i,ij,...j->...", ku,
                                                       self.var_matrix, ku)
        if clamp:
            var = np.maximum(var, 0.0)
        return mean, var

    def to_dict(self) -> dict:
        hp = self.hyperparams
        return {
            "length_scale": hp.length_scale,
            "signal_var": hp.signal_var,
            "noise_var": hp.noise_var,
            "inducing": self.inducing.tolist(),
            "weights": self.weights.tolist(),
            "var_matrix": self.var_matrix.tolist(),
            "mean_variance": self.mean_variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SparseGp":
        hp = RbfHyperparams(d["length_scale"], d["signal_var"], d["noise_var"])
        return cls(hp, np.array(d["inducing"], dtype=float),
                   np.array(d["weights"], dtype=float),
                   np.array(d["var_matrix"], dtype=float).reshape(
                       len(d["inducing"]), len(d["inducing"])),
                   float(d.get("mean_variance", 0.0)))


def sparsify(gp: DenseGp, m: int = DEFAULT_INDUCING, inducing=None) -> SparseGp:
    """Compress a fitted dense GP into a FITC sparse GP with ``m`` inducing inputs."""
    ts = gp.train
    n = len(ts)
    hp = gp.hyperparams
    if inducing is None:
        if not 1 <= m <= n:
            raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
        u = inducing_quantiles(ts.z, m)
    else:
        u = _spread_duplicates(inducing, float(np.ptp(ts.z)) or 1.0)
    m = u.size

    kuu = _gram(u, u, hp) + 1e-12 * hp.signal_var * np.eye(m)
    lu = _cholesky(kuu)
    kuf = _gram(u, ts.z, hp)
    v = linalg.solve_triangular(lu, kuf, lower=True)
    # FITC: exact diagonal of the training prior, low-rank elsewhere
    lam = hp.signal_var - np.sum(v * v, axis=0) + hp.noise_var
    lam = np.maximum(lam, 1e-12 * hp.signal_var)
    vl = v / lam
    a = np.eye(m) + vl @ v.T
    la = _cholesky(a)
    # weights = Kuu^-1/2ᵀ A^-1 V Λ^-1 c
    b = linalg.cho_solve((la, True), vl @ ts.c)
    weights = linalg.solve_triangular(lu, b, lower=True, trans="T")
    # var_matrix = Kuu^-1 - Σ, with Σ = Lu^-T A^-1 Lu^-1
    inner = np.eye(m) - linalg.cho_solve((la, True), np.eye(m))
    tmp = linalg.solve_triangular(lu, inner, lower=True, trans="T")
    var_matrix = linalg.solve_triangular(lu, tmp.T, lower=True, trans="T")
    var_matrix = 0.5 * (var_matrix + var_matrix.T)

    sparse = SparseGp(hp, u, weights, var_matrix)
    _, var = sparse.predict(ts.z)
    sparse.mean_variance = float(np.mean(var) + hp.noise_var)
    return sparse


@dataclass
class GpTriplet:
    """Three independent per-axis GPs mapping body acceleration to its residual."""

    models: tuple

    def __post_init__(self):
        if len(self.models) != 3:
            raise ValueError("a triplet needs exactly three models")
        self.models = tuple(self.models)

    def predict(self, a_meas):
        a = np.asarray(a_meas, dtype=float)
        means, vars_ = zip(*(mdl.predict(a[..., i]) for i, mdl in enumerate(self.models)))
        return np.stack(means, axis=-1), np.stack(vars_, axis=-1)

    @property
    def channel_variance(self) -> np.ndarray:
        return np.array([mdl.mean_variance for mdl in self.models])

    def to_dict(self) -> dict:
        return {"format": FORMAT_TAG, "version": 1,
                "axes": {ax: mdl.to_dict() for ax, mdl in zip("xyz", self.models)}}

    @classmethod
    def from_dict(cls, d: dict) -> "GpTriplet":
        if d.get("format") != FORMAT_TAG:
            raise ValueError("not a GP triplet file")
        return cls(tuple(SparseGp.from_dict(d["axes"][ax]) for ax in "xyz"))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "GpTriplet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict_triplet(gpt: GpTriplet, a_meas):
    return gpt.predict(a_meas)


def fit_triplet(training_sets, m: int = DEFAULT_INDUCING, max_points: int | None = 600
                ) -> GpTriplet:
    """Fit dense GPs per axis (optionally on an evenly strided subset) and sparsify."""
    models = []
    for ts in training_sets:
        if max_points is not None and len(ts) > max_points:
            idx = np.linspace(0, len(ts) - 1, max_points).round().astype(int)
            ts = TrainingSet(ts.z[idx], ts.c[idx])
        dense = fit_dense(ts)
        models.append(sparsify(dense, min(m, len(ts))))
    return GpTriplet(tuple(models))
