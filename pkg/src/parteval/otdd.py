"""Optimal-transport dataset distance with class-conditional Gaussian label geometry."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import NumericalError, ProtocolError

DEFAULT_MAX_ITER = 2000
DEFAULT_TOL = 1e-7
EPSILON_COST_FRACTION = 0.05


@dataclass(frozen=True)
class LabeledPointCloud:
    """Feature vectors with class labels; the unit OTDD compares."""

    points: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise ProtocolError(f"cloud {self.name!r}: points must be a non-empty n x d matrix")
        if labels.shape != (points.shape[0],):
            raise ProtocolError(
                f"cloud {self.name!r}: {labels.shape} labels for {points.shape[0]} points"
            )
        if not np.all(np.isfinite(points)):
            raise ProtocolError(f"cloud {self.name!r}: points contain non-finite values")
        points = points.copy()
        labels = labels.copy()
        points.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.labels))

    def content_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.points.tobytes())
        h.update(self.labels.tobytes())
        h.update(self.name.encode())
        return h.hexdigest()


@dataclass(frozen=True)
class GaussianSummary:
    """Empirical mean and covariance of one class."""

    class_id: int
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ProtocolError(
                f"class {self.class_id}: mean/covariance shapes {mean.shape}/{cov.shape} inconsistent"
            )
        scale = max(1.0, float(np.abs(cov).max()) if cov.size else 1.0)
        if not np.allclose(cov, cov.T, atol=1e-10 * scale, rtol=0.0):
            raise NumericalError(f"class {self.class_id}: covariance not symmetric within tolerance")
        cov = 0.5 * (cov + cov.T)
        mean = mean.copy()
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return int(self.mean.size)


def class_gaussian(cloud: LabeledPointCloud, class_id: int) -> GaussianSummary:
    """Population-divisor moments of one class; a single point gets zero covariance."""
    sel = cloud.points[cloud.labels == class_id]
    if sel.shape[0] == 0:
        raise ProtocolError(f"cloud {cloud.name!r}: class {class_id} has no points")
    mean = sel.mean(axis=0)
    centered = sel - mean
    cov = centered.T @ centered / sel.shape[0]
    return GaussianSummary(class_id=int(class_id), mean=mean, covariance=cov)


def _clamped_eigvals(sym: np.ndarray, label: str) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, slightly-negative ones clamped to zero.

    The clamp tolerance scales with the spectral radius so large-magnitude
    covariances are not rejected for ordinary rounding noise.
    """
    w = np.linalg.eigvalsh(0.5 * (sym + sym.T))
    scale = max(1.0, float(np.abs(w).max()) if w.size else 1.0)
    floor = -1e-10 * scale
    if w.min() < floor:
        raise NumericalError(
            f"{label}: matrix is not PSD within tolerance "
            f"(min eigenvalue {w.min():.3e}, max eigenvalue {w.max():.3e}, clamp floor {floor:.3e})"
        )
    return np.clip(w, 0.0, None)


def _psd_sqrt(sym: np.ndarray, label: str) -> np.ndarray:
    sym = 0.5 * (sym + sym.T)
    w, v = np.linalg.eigh(sym)
    scale = max(1.0, float(np.abs(w).max()) if w.size else 1.0)
    floor = -1e-10 * scale
    if w.min() < floor:
        raise NumericalError(
            f"{label}: matrix is not PSD within tolerance "
            f"(min eigenvalue {w.min():.3e}, max eigenvalue {w.max():.3e}, clamp floor {floor:.3e})"
        )
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def bures_w2_squared(a: GaussianSummary, b: GaussianSummary) -> float:
    """Squared 2-Wasserstein distance between two Gaussians.

    ||mu_a - mu_b||^2 + tr(S_a) + tr(S_b) - 2 tr((S_b^1/2 S_a S_b^1/2)^1/2),
    with the cross trace taken as the sum of clamped eigenvalue square roots.
    """
    if a.dim != b.dim:
        raise ProtocolError(f"Gaussian dimensions differ: {a.dim} vs {b.dim}")
    delta = a.mean - b.mean
    mean_term = float(delta @ delta)
    sqrt_b = _psd_sqrt(b.covariance, f"covariance of class {b.class_id}")
    inner = sqrt_b @ a.covariance @ sqrt_b
    cross = float(np.sqrt(_clamped_eigvals(inner, "Gaussian cross term")).sum())
    value = mean_term + float(np.trace(a.covariance)) + float(np.trace(b.covariance)) - 2.0 * cross
    return max(0.0, value)


def _squared_distances(x: np.ndarray, y: np.ndarray, chunk: int = 128) -> np.ndarray:
    out = np.empty((x.shape[0], y.shape[0]), dtype=np.float64)
    for start in range(0, x.shape[0], chunk):
        stop = min(start + chunk, x.shape[0])
        diff = x[start:stop, None, :] - y[None, :, :]
        out[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _label_distance_matrix(
    src: LabeledPointCloud,
    dst: LabeledPointCloud,
    src_gaussians: Mapping[int, GaussianSummary],
    dst_gaussians: Mapping[int, GaussianSummary],
) -> np.ndarray:
    memo: dict[tuple[int, int], float] = {}
    out = np.empty((src.size, dst.size), dtype=np.float64)
    src_labels = src.labels
    dst_labels = dst.labels
    for la in np.unique(src_labels):
        row_sel = src_labels == la
        for lb in np.unique(dst_labels):
            key = (int(la), int(lb))
            if key not in memo:
                memo[key] = bures_w2_squared(src_gaussians[int(la)], dst_gaussians[int(lb)])
            out[np.ix_(row_sel, dst_labels == lb)] = memo[key]
    return out


def pairwise_cost(
    src: LabeledPointCloud,
    dst: LabeledPointCloud,
    *,
    _src_gaussians: Mapping[int, GaussianSummary] | None = None,
    _dst_gaussians: Mapping[int, GaussianSummary] | None = None,
) -> np.ndarray:
    """Ground cost: squared feature distance plus label-to-label Gaussian W2^2."""
    if src.dim != dst.dim:
        raise ProtocolError(f"feature dimensions differ: {src.dim} vs {dst.dim}")
    src_g = _src_gaussians or {c: class_gaussian(src, c) for c in src.classes}
    dst_g = _dst_gaussians or {c: class_gaussian(dst, c) for c in dst.classes}
    cost = _squared_distances(src.points, dst.points)
    cost += _label_distance_matrix(src, dst, src_g, dst_g)
    return cost


@dataclass(frozen=True)
class SinkhornResult:
    plan: np.ndarray
    cost: float
    converged: bool
    marginal_violation: float
    iterations: int

    def __post_init__(self):
        plan = np.asarray(self.plan, dtype=np.float64)
        plan = plan.copy()
        plan.flags.writeable = False
        object.__setattr__(self, "plan", plan)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - amax), axis=axis)) + np.squeeze(amax, axis=axis)
    return out


def _sinkhorn_stage(cost, mu, nu, log_mu, log_nu, eps, max_iter, tol, f, g, omega, check_every=8):
    neg_scaled = -cost / eps
    row_base = neg_scaled + log_nu[None, :]
    col_base = neg_scaled + log_mu[:, None]

    def current_plan():
        # Pre-convergence potentials can overflow the probe plan; the resulting
        # inf violation just means "keep iterating".
        with np.errstate(over="ignore"):
            return np.exp(neg_scaled + (f / eps + log_mu)[:, None] + (g / eps + log_nu)[None, :])

    def violation(plan):
        return float(np.abs(plan.sum(axis=1) - mu).sum() + np.abs(plan.sum(axis=0) - nu).sum())

    it = 0
    for it in range(1, max_iter + 1):
        f = omega * (-eps * _logsumexp(row_base + (g / eps)[None, :], axis=1)) + (1.0 - omega) * f
        g = omega * (-eps * _logsumexp(col_base + (f / eps)[:, None], axis=0)) + (1.0 - omega) * g
        # Checking the marginals costs as much as a sweep; probe periodically.
        if it % check_every == 0 or it == max_iter:
            plan = current_plan()
            viol = violation(plan)
            if viol < tol or it == max_iter:
                return plan, f, g, viol, it
    plan = current_plan()
    return plan, f, g, violation(plan), it


def sinkhorn(
    cost: np.ndarray,
    mu: np.ndarray,
    nu: np.ndarray,
    epsilon: float,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    *,
    epsilon_scaling: bool = True,
    over_relaxation: float = 1.5,
) -> SinkhornResult:
    """Log-domain Sinkhorn; returns the transport plan and its cost <plan, cost>.

    With ``epsilon_scaling`` the potentials are warm-started through a
    geometric epsilon schedule ending at the target, which keeps tiny epsilons
    (1e-4) convergent where the flat iteration stalls. ``over_relaxation``
    (1 = plain iteration, valid below 2) damps the slow tail on degenerate
    instances. ``max_iter`` caps each stage; non-convergence is reported via
    the flag, not an exception.
    """
    cost = np.asarray(cost, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    if cost.ndim != 2 or cost.shape != (mu.size, nu.size):
        raise ProtocolError(
            f"cost shape {cost.shape} inconsistent with weights ({mu.size}, {nu.size})"
        )
    if epsilon <= 0:
        raise ProtocolError(f"epsilon must be positive, got {epsilon}")
    if not 1.0 <= over_relaxation < 2.0:
        raise ProtocolError(f"over_relaxation must lie in [1, 2), got {over_relaxation}")
    for name, w in (("mu", mu), ("nu", nu)):
        if np.any(w < 0):
            raise ProtocolError(f"{name} contains negative weights")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ProtocolError(f"{name} sums to {w.sum()!r}, expected 1 within 1e-12")

    with np.errstate(divide="ignore"):
        log_mu = np.log(mu)
        log_nu = np.log(nu)

    schedule = [float(epsilon)]
    if epsilon_scaling:
        top = float(cost.max(initial=0.0))
        eps_k = top / 10.0
        while eps_k > epsilon:
            schedule.append(eps_k)
            eps_k /= 10.0
        schedule.reverse()

    f = np.zeros_like(mu)
    g = np.zeros_like(nu)
    total_iters = 0
    plan = None
    viol = np.inf
    for eps_k in schedule:
        plan, f, g, viol, it = _sinkhorn_stage(
            cost, mu, nu, log_mu, log_nu, eps_k, max_iter, tol, f, g, over_relaxation
        )
        total_iters += it
    transported = float((plan * cost).sum())
    return SinkhornResult(
        plan=plan,
        cost=transported,
        converged=viol < tol,
        marginal_violation=viol,
        iterations=total_iters,
    )


@dataclass(frozen=True)
class OtddResult:
    """Debiased OTDD value plus the solver settings that produced it."""

    value: float
    source: str
    target: str
    epsilon: float
    max_iter: int
    tol: float
    converged: bool


def otdd_divergence(
    a: LabeledPointCloud,
    b: LabeledPointCloud,
    *,
    epsilon: float | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> OtddResult:
    """Debiased entropic OTDD: OT(a,b) - (OT(a,a) + OT(b,b)) / 2, clamped at zero.

    The two clouds are ordered by a content digest before solving so the result
    is bit-identical under argument swap; weights are uniform over points.
    """
    if a.dim != b.dim:
        raise ProtocolError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    name_a, name_b = a.name, b.name
    if a.content_digest() > b.content_digest():
        a, b = b, a
    ga = {c: class_gaussian(a, c) for c in a.classes}
    gb = {c: class_gaussian(b, c) for c in b.classes}
    cost_ab = pairwise_cost(a, b, _src_gaussians=ga, _dst_gaussians=gb)
    cost_aa = pairwise_cost(a, a, _src_gaussians=ga, _dst_gaussians=ga)
    cost_bb = pairwise_cost(b, b, _src_gaussians=gb, _dst_gaussians=gb)
    eps = float(epsilon) if epsilon is not None else max(EPSILON_COST_FRACTION * float(cost_ab.mean()), 1e-12)
    mu = np.full(a.size, 1.0 / a.size)
    nu = np.full(b.size, 1.0 / b.size)
    r_ab = sinkhorn(cost_ab, mu, nu, eps, max_iter, tol)
    r_aa = sinkhorn(cost_aa, mu, mu, eps, max_iter, tol)
    r_bb = sinkhorn(cost_bb, nu, nu, eps, max_iter, tol)
    value = max(0.0, r_ab.cost - 0.5 * r_aa.cost - 0.5 * r_bb.cost)
    return OtddResult(
        value=value,
        source=name_a,
        target=name_b,
        epsilon=eps,
        max_iter=max_iter,
        tol=tol,
        converged=r_ab.converged and r_aa.converged and r_bb.converged,
    )


def otdd_distance(
    a: LabeledPointCloud,
    b: LabeledPointCloud,
    epsilon: float | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> float:
    """Scalar form of :func:`otdd_divergence`."""
    return otdd_divergence(a, b, epsilon=epsilon, max_iter=max_iter, tol=tol).value


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling (half-pixel centers) for 2-D or HxWxC rasters."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ProtocolError(f"expected a 2-D or 3-D raster, got shape {img.shape}")
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    fy = ys - y0f
    fx = xs - x0f
    y0 = np.clip(y0f.astype(np.int64), 0, h - 1)
    y1 = np.clip(y0f.astype(np.int64) + 1, 0, h - 1)
    x0 = np.clip(x0f.astype(np.int64), 0, w - 1)
    x1 = np.clip(x0f.astype(np.int64) + 1, 0, w - 1)
    w00 = (1.0 - fy)[:, None] * (1.0 - fx)[None, :]
    w01 = (1.0 - fy)[:, None] * fx[None, :]
    w10 = fy[:, None] * (1.0 - fx)[None, :]
    w11 = fy[:, None] * fx[None, :]
    if img.ndim == 3:
        w00, w01, w10, w11 = (w[..., None] for w in (w00, w01, w10, w11))
    return (
        w00 * img[np.ix_(y0, x0)]
        + w01 * img[np.ix_(y0, x1)]
        + w10 * img[np.ix_(y1, x0)]
        + w11 * img[np.ix_(y1, x1)]
    )


def cloud_from_rasters(
    rasters: Sequence[np.ndarray],
    labels: Sequence[int],
    name: str,
    side: int = 32,
) -> LabeledPointCloud:
    """Flatten bilinearly-downscaled rasters into a labeled point cloud."""
    if len(rasters) != len(labels):
        raise ProtocolError(f"{len(rasters)} rasters but {len(labels)} labels")
    points = [bilinear_resize(r, side, side).ravel() for r in rasters]
    dims = {p.size for p in points}
    if len(dims) != 1:
        raise ProtocolError(f"rasters disagree on channel count; flattened dims {sorted(dims)}")
    return LabeledPointCloud(points=np.stack(points), labels=np.asarray(labels), name=name)
