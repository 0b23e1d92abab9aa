"""Adversary toolkit: everything here sees only worker-side observables.

Four audits of the obfuscation: unsupervised clustering scored by adjusted
Rand index, a strong adversary retraining a fresh head on labeled backbone
outputs, projected gradient descent inversion of the secret against a
Frechet realism score over pixel statistics, and a least-squares regression
from bound tensors to secrets. Each attack also has a planted-solution mode
in the tests that must succeed, so a low score on genuine traffic means the
defense held, not that the attack is broken.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError
from .tensor import RngStream
from .vsa import Secret, cosine, unbind

EPS_PSD = 1e-8


# ----------------------------------------------------------------- reporting

@dataclass(frozen=True)
class AttackReport:
    """Outcome of one attack run, reproducible from (inputs, seed)."""

    name: str
    score: float
    score_kind: str
    seed: int
    threshold: float
    verdict: str  # "pass" when the defense held at the threshold
    params: dict = field(default_factory=dict)


def _verdict(score: float, threshold: float, defense_holds_below: bool = True) -> str:
    holds = score <= threshold if defense_holds_below else score >= threshold
    return "pass" if holds else "fail"


# ------------------------------------------------------------ gaussian stats

@dataclass(frozen=True)
class GaussianStats:
    """First and second moments of a point cloud; covariance kept PSD."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        if self.mean.ndim != 1 or self.cov.shape != (self.mean.size, self.mean.size):
            raise ParameterError("mean must be length-p and cov p x p")


def fit_gaussian_stats(points: np.ndarray) -> GaussianStats:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ParameterError("need at least two points to fit statistics")
    mean = points.mean(axis=0)
    centered = points - mean
    cov = centered.T @ centered / (points.shape[0] - 1)
    return GaussianStats(mean, 0.5 * (cov + cov.T))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    if np.min(w) < -EPS_PSD * max(1.0, float(np.max(np.abs(w)))):
        raise ParameterError(f"matrix is not PSD within tolerance (min eig {np.min(w):.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Squared 2-Wasserstein distance between Gaussians.

    ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), with
    matrix square roots by symmetric eigendecomposition and negative
    eigenvalues clamped to zero.
    """
    if a.mean.shape != b.mean.shape:
        raise ParameterError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    root_a = _psd_sqrt(a.cov)
    cross = _psd_sqrt(root_a @ b.cov @ root_a)
    mean_term = float(np.sum((a.mean - b.mean) ** 2))
    return mean_term + float(np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))


# -------------------------------------------------------------------- kmeans

def kmeans(points, k: int, rng: RngStream, max_iter: int = 100, tol: float = 1e-6,
           return_history: bool = False):
    """Lloyd iterations from k-means++ seeding; deterministic given rng.

    Empty clusters are re-seeded from the point farthest from its center.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        pts = pts.reshape(len(pts), -1)
    n = pts.shape[0]
    if k > n:
        raise ParameterError(f"k={k} exceeds the number of points {n}")

    # k-means++ seeding
    first, rng = rng.integers(0, n, 1)
    centers = [pts[first[0]]]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0:
            pick, rng = rng.integers(0, n, 1)
            idx = pick[0]
        else:
            u, rng = rng.uniform([1])
            idx = int(np.searchsorted(np.cumsum(d2 / total), u[0]))
            idx = min(idx, n - 1)
        centers.append(pts[idx])
        d2 = np.minimum(d2, np.sum((pts - centers[-1]) ** 2, axis=1))
    centers = np.stack(centers)

    history = []
    labels = np.zeros(n, dtype=np.int64)
    prev_inertia = np.inf
    for _ in range(max_iter):
        dists = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(dists, axis=1)
        inertia = float(dists[np.arange(n), labels].sum())
        history.append(inertia)
        new_centers = centers.copy()
        for c in range(k):
            members = labels == c
            if np.any(members):
                new_centers[c] = pts[members].mean(axis=0)
            else:
                farthest = int(np.argmax(dists[np.arange(n), labels]))
                new_centers[c] = pts[farthest]
        if np.max(np.abs(new_centers - centers)) < tol and inertia <= prev_inertia:
            centers = new_centers
            break
        centers = new_centers
        prev_inertia = inertia
    if return_history:
        return labels, centers, history
    return labels


def ari(labels_a, labels_b) -> float:
    """Adjusted Rand index from the contingency table."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ParameterError("labelings must be equal-length 1D sequences")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(n)
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        return 1.0  # both labelings degenerate and identical in structure
    return float((sum_ij - expected) / (maximum - expected))


def clustering_attack(outputs, true_labels, k: int, rng: RngStream,
                      target: str = "r", threshold: float = 0.05) -> AttackReport:
    """Cluster worker-visible tensors and score label recovery by ARI."""
    if target not in ("r", "x_bound"):
        raise ParameterError(f"unknown clustering target {target!r}")
    flat = np.asarray(outputs, dtype=np.float64).reshape(len(outputs), -1)
    labels = kmeans(flat, k, rng)
    score = ari(labels, true_labels)
    return AttackReport(
        name="cluster",
        score=score,
        score_kind="ari",
        seed=rng.seed,
        threshold=threshold,
        verdict=_verdict(score, threshold),
        params={"k": k, "target": target, "n": len(flat)},
    )


# ----------------------------------------------------------- strong adversary

def _train_fresh_head(x_flat, labels, n_classes, seed, epochs=60, batch=32, lr=1e-3):
    """Train a head with the adversarial architecture from scratch."""
    from .backbone import leaky_relu_backward, leaky_relu_forward
    from .trainer import softmax

    n, d = x_flat.shape
    hidden = 64
    rng = RngStream(seed, counter=7 << 32)
    w1, rng = rng.normal((hidden, d), 2.0 / d)
    b1 = np.zeros(hidden)
    w2, rng = rng.normal((n_classes, hidden), 1.0 / hidden)
    b2 = np.zeros(n_classes)
    params = [w1, b1, w2, b2]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    t = 0
    for _ in range(epochs):
        order, rng = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            x, y = x_flat[idx], labels[idx]
            z1 = x @ params[0].T + params[1]
            a1 = leaky_relu_forward(z1, 0.1)
            probs = softmax(a1 @ params[2].T + params[3])
            dz2 = probs.copy()
            dz2[np.arange(len(idx)), y] -= 1.0
            dz2 /= len(idx)
            gw2 = dz2.T @ a1
            gb2 = dz2.sum(axis=0)
            dz1 = leaky_relu_backward(z1, dz2 @ params[2], 0.1)
            gw1 = dz1.T @ x
            gb1 = dz1.sum(axis=0)
            t += 1
            for i, g in enumerate((gw1, gb1, gw2, gb2)):
                m[i] = 0.9 * m[i] + 0.1 * g
                v[i] = 0.999 * v[i] + 0.001 * g * g
                params[i] = params[i] - lr * (m[i] / (1 - 0.9 ** t)) / (
                    np.sqrt(v[i] / (1 - 0.999 ** t)) + 1e-8
                )

    def predict(xq):
        from .backbone import leaky_relu_forward as lr_fwd
        a = lr_fwd(xq @ params[0].T + params[1], 0.1)
        return np.argmax(a @ params[2].T + params[3], axis=1)

    return predict


def strong_adversary(train_r, train_labels, test_r, test_labels, seed: int,
                     n_classes: int | None = None, threshold: float = 0.45,
                     epochs: int = 60) -> AttackReport:
    """Retrain an adversarial-architecture head on labeled backbone outputs."""
    train_flat = np.asarray(train_r, dtype=np.float64).reshape(len(train_r), -1)
    test_flat = np.asarray(test_r, dtype=np.float64).reshape(len(test_r), -1)
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    classes = n_classes or int(train_labels.max()) + 1
    predict = _train_fresh_head(train_flat, train_labels, classes, seed, epochs=epochs)
    score = float(np.mean(predict(test_flat) == test_labels))
    return AttackReport(
        name="strong",
        score=score,
        score_kind="accuracy",
        seed=seed,
        threshold=threshold,
        verdict=_verdict(score, threshold),
        params={"n_train": len(train_flat), "n_test": len(test_flat), "classes": classes},
    )


# ----------------------------------------------------------------- inversion

@dataclass(frozen=True)
class PixelPca:
    """Linear reduction of flattened pixels fitted on the adversary's data."""

    center: np.ndarray
    components: np.ndarray  # (p, d)

    def project(self, flat: np.ndarray) -> np.ndarray:
        return (flat - self.center) @ self.components.T


def fit_pixel_pca(images: np.ndarray, p: int = 16) -> PixelPca:
    flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    if p > min(flat.shape):
        raise ParameterError(f"cannot keep {p} components from data of shape {flat.shape}")
    center = flat.mean(axis=0)
    _, _, vt = np.linalg.svd(flat - center, full_matrices=False)
    return PixelPca(center, vt[:p])


@dataclass(frozen=True)
class ReferencePrior:
    """What the adversary believes real inputs look like."""

    pca: PixelPca
    stats: GaussianStats


def build_reference(images: np.ndarray, p: int = 16) -> ReferencePrior:
    pca = fit_pixel_pca(images, p)
    flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    return ReferencePrior(pca, fit_gaussian_stats(pca.project(flat)))


@dataclass
class InversionResult:
    secret: Secret
    trajectory: list
    report: AttackReport
    recovery_cosine: float | None = None


def _frechet_score_and_mean_grad(z: np.ndarray, ref: GaussianStats):
    """Score and per-point gradient of the Frechet distance of z's stats."""
    n = z.shape[0]
    stats = fit_gaussian_stats(z)
    score = frechet_distance(stats, ref)
    # transport map T = S^-1/2 (S^1/2 R S^1/2)^1/2 S^-1/2; grad_S = I - T
    sym = 0.5 * (stats.cov + stats.cov.T)
    w, v = np.linalg.eigh(sym)
    w = np.clip(w, 1e-12, None)
    root = (v * np.sqrt(w)) @ v.T
    inv_root = (v / np.sqrt(w)) @ v.T
    cross = _psd_sqrt(root @ ref.cov @ root)
    transport = inv_root @ cross @ inv_root
    grad_cov = np.eye(z.shape[1]) - transport
    centered = z - stats.mean
    grad_z = (2.0 / n) * (stats.mean - ref.mean)[None, :] + \
        (2.0 / (n - 1)) * centered @ grad_cov.T
    return score, grad_z


def inversion_attack(bound, reference: ReferencePrior, steps: int, lr: float,
                     rng: RngStream, x_true=None, s_init: Secret | None = None,
                     validate_gradient: bool = True,
                     recovery_threshold: float = 0.2) -> InversionResult:
    """Projected gradient descent on a candidate secret's spectrum.

    ``bound`` is the batch of bound tensors the adversary collected; one
    shared candidate is optimized to make the whole unbound batch look like
    the reference distribution. After every step the candidate is
    re-projected to unit spectral magnitude. The analytic gradient through
    the unbinding map is finite-difference checked once at the start.
    """
    batch = np.asarray(bound, dtype=np.float64)
    if batch.ndim == 4 and batch.shape[-1] == 1:
        batch = batch[..., 0]
    if batch.ndim != 3:
        raise ShapeError(f"expected a batch of 2D bound tensors, got shape {batch.shape}")
    n, h, w = batch.shape
    specs = np.fft.fft2(batch, axes=(1, 2))

    if s_init is not None:
        psi = 1.0 / np.fft.fft2(s_init.tensor.reshape(h, w))
    else:
        raw, rng = rng.normal((h, w), 1.0)
        f = np.fft.fft2(raw)
        psi = np.conj(f / np.abs(f))

    def score_and_grad(psi_now):
        u = np.fft.ifft2(specs * psi_now[None, :, :], axes=(1, 2)).real
        z = reference.pca.project(u.reshape(n, -1))
        score, grad_z = _frechet_score_and_mean_grad(z, reference.stats)
        grad_u = (grad_z @ reference.pca.components).reshape(n, h, w)
        grad_psi = np.sum(np.conj(specs) * np.fft.fft2(grad_u, axes=(1, 2)), axis=0) / (h * w)
        return score, grad_psi

    if validate_gradient:
        _validate_inversion_gradient(score_and_grad, psi, rng)

    trajectory = []
    score, grad = score_and_grad(psi)
    trajectory.append(score)
    for step in range(steps):
        if not np.all(np.isfinite(grad.view(np.float64))):
            raise ParameterError(f"non-finite inversion gradient at step {step}")
        psi = psi - lr * grad
        mags = np.abs(psi)
        mags[mags < 1e-300] = 1.0
        psi = psi / mags  # re-project to unit spectral magnitude
        score, grad = score_and_grad(psi)
        trajectory.append(score)

    s_hat = Secret(np.fft.ifft2(np.conj(psi)).real, seed=rng.seed,
                   counter=rng.counter, projected=True)
    recovery = None
    if x_true is not None:
        x0 = np.asarray(x_true, dtype=np.float64).reshape(h, w)
        recovery = cosine(x0, unbind(batch[0], Secret(s_hat.tensor, projected=True)))
    report = AttackReport(
        name="invert",
        score=trajectory[-1],
        score_kind="frechet",
        seed=rng.seed,
        threshold=recovery_threshold,
        verdict=_verdict(recovery, recovery_threshold) if recovery is not None else "n/a",
        params={"steps": steps, "lr": lr, "batch": n,
                "recovery_cosine": recovery},
    )
    return InversionResult(s_hat, trajectory, report, recovery)


def _validate_inversion_gradient(score_and_grad, psi, rng, eps=1e-6, tol=1e-3):
    """FD-check the analytic gradient in the real filter domain."""
    h, w = psi.shape
    filt = np.fft.ifft2(psi).real
    _, grad_psi = score_and_grad(np.fft.fft2(filt))
    # pull the Wirtinger gradient back to the real filter: d/dw = n*Re(ifft(D))
    grad_filt = (h * w) * np.real(np.fft.ifft2(grad_psi))
    idx, _ = rng.integers(0, filt.size, 3)
    for i in idx:
        probe = filt.copy().ravel()
        probe[i] += eps
        hi, _ = score_and_grad(np.fft.fft2(probe.reshape(h, w)))
        probe[i] -= 2 * eps
        lo, _ = score_and_grad(np.fft.fft2(probe.reshape(h, w)))
        fd = (hi - lo) / (2 * eps)
        analytic = grad_filt.ravel()[i]
        if abs(fd - analytic) > tol * max(1.0, abs(fd)):
            raise ParameterError(
                f"inversion gradient check failed at index {i}: "
                f"analytic {analytic:.6g} vs finite-difference {fd:.6g}"
            )


# ---------------------------------------------------------- secret regression

def secret_regression_attack(pairs, n_holdout: int = 16,
                             threshold: float = 0.15, seed: int = 0) -> AttackReport:
    """Least-squares linear map from bound tensors to their secrets.

    Fits on all but the last ``n_holdout`` pairs and reports the held-out
    normalized residual and cosine. Needs at least 2d training pairs for a
    d-dimensional flattened space.
    """
    if n_holdout < 2:
        raise ParameterError("need at least 2 held-out pairs")
    if len(pairs) <= n_holdout:
        raise ParameterError("not enough pairs for a holdout split")
    bound = np.stack([np.asarray(b, dtype=np.float64).reshape(-1) for b, _ in pairs])
    secrets = np.stack([
        (s.tensor if isinstance(s, Secret) else np.asarray(s)).reshape(-1)
        for _, s in pairs
    ])
    d = bound.shape[1]
    train_b, test_b = bound[:-n_holdout], bound[-n_holdout:]
    train_s, test_s = secrets[:-n_holdout], secrets[-n_holdout:]
    if train_b.shape[0] < 2 * d:
        raise ParameterError(
            f"need >= {2 * d} training pairs for d={d}, got {train_b.shape[0]}"
        )
    mapping, _, rank, _ = np.linalg.lstsq(train_b, train_s, rcond=None)
    pred = test_b @ mapping
    residuals = np.linalg.norm(pred - test_s, axis=1) / np.linalg.norm(test_s, axis=1)
    cosines = [cosine(p, s) for p, s in zip(pred, test_s)]
    mean_cos = float(np.mean(cosines))
    return AttackReport(
        name="regress",
        score=float(np.mean(residuals)),
        score_kind="residual",
        seed=seed,
        threshold=threshold,
        verdict=_verdict(mean_cos, threshold),
        params={
            "mean_cosine": mean_cos,
            "n_train": len(train_b),
            "n_holdout": n_holdout,
            "rank_deficient": bool(rank < d),
        },
    )
