"""HRR binding algebra: projection, binding, inverses, bundles, probes.

Binding is circular convolution computed as pointwise spectral
multiplication; 1D tensors use the 1D transform, 2D the 2D transform, and
3D (H×W×D, channel-last) tensors bind each channel independently with its
own 2D transform. A projected secret has unit spectral magnitude at every
frequency, which makes unbinding exact rather than approximate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateSpectrumError,
    NearSingularInverseError,
    ParameterError,
    ShapeError,
)
from .tensor import RngStream

# Spectral magnitudes below this are treated as degenerate for projection
# and reciprocal inversion.
EPS_PROJ = 1e-12

# Resample attempts in sample_secret before giving up on a degenerate draw.
_SAMPLE_RETRIES = 3


def spectrum(t: np.ndarray) -> np.ndarray:
    """Forward transform matching the tensor's rank (per-channel for 3D)."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1:
        return np.fft.fft(t)
    if t.ndim == 2:
        return np.fft.fft2(t)
    if t.ndim == 3:
        return np.fft.fft2(t, axes=(0, 1))
    raise ShapeError(f"binding algebra supports 1D-3D tensors, got {t.ndim}D")


def from_spectrum(s: np.ndarray) -> np.ndarray:
    """Inverse of :func:`spectrum`; discards the tiny imaginary residue."""
    s = np.asarray(s, dtype=np.complex128)
    if s.ndim == 1:
        return np.fft.ifft(s).real.copy()
    if s.ndim == 2:
        return np.fft.ifft2(s).real.copy()
    if s.ndim == 3:
        return np.fft.ifft2(s, axes=(0, 1)).real.copy()
    raise ShapeError(f"binding algebra supports 1D-3D spectra, got {s.ndim}D")


@dataclass(frozen=True)
class Secret:
    """A client-held binding key plus the stream state that generated it."""

    tensor: np.ndarray
    seed: int = 0
    counter: int = 0
    projected: bool = False

    @property
    def dims(self):
        return self.tensor.shape

    def erase(self) -> None:
        """Best-effort scrub of the key material in place."""
        self.tensor.fill(0.0)


def _secret_tensor(s) -> np.ndarray:
    return s.tensor if isinstance(s, Secret) else np.asarray(s, dtype=np.float64)


def project(v: np.ndarray) -> np.ndarray:
    """Normalize every spectral coefficient to unit magnitude.

    Idempotent and scale-invariant. A channel whose spectrum touches zero
    (e.g. an exactly constant channel) cannot be projected and raises
    DegenerateSpectrumError.
    """
    v = np.asarray(v, dtype=np.float64)
    spec = spectrum(v)
    mags = np.abs(spec)
    if np.min(mags) < EPS_PROJ:
        raise DegenerateSpectrumError(
            f"spectral magnitude {np.min(mags):.3e} below {EPS_PROJ:.0e}; "
            "cannot project onto the unit-magnitude ball"
        )
    return from_spectrum(spec / mags)


def bind(x: np.ndarray, s) -> np.ndarray:
    """Circular convolution of ``x`` with the secret tensor.

    Commutative and linear in both arguments; with a unit impulse secret it
    is the identity.
    """
    x = np.asarray(x, dtype=np.float64)
    st = _secret_tensor(s)
    if x.shape != st.shape:
        raise ShapeError(f"bind shape mismatch: {x.shape} vs {st.shape}")
    return from_spectrum(spectrum(x) * spectrum(st))


def bind_transpose(g: np.ndarray, s) -> np.ndarray:
    """Adjoint of ``x -> bind(x, s)``: circular correlation with the secret.

    This is the backward rule when binding is treated as a fixed linear map.
    """
    g = np.asarray(g, dtype=np.float64)
    st = _secret_tensor(s)
    if g.shape != st.shape:
        raise ShapeError(f"bind_transpose shape mismatch: {g.shape} vs {st.shape}")
    return from_spectrum(spectrum(g) * np.conj(spectrum(st)))


def _reciprocal_spectrum(st: np.ndarray) -> np.ndarray:
    spec = spectrum(st)
    mags = np.abs(spec)
    if np.min(mags) < EPS_PROJ:
        raise NearSingularInverseError(
            f"spectral magnitude {np.min(mags):.3e} below {EPS_PROJ:.0e}; "
            "reciprocal inverse is near-singular"
        )
    return 1.0 / spec


def inverse(s) -> "Secret | np.ndarray":
    """Reciprocal-spectrum inverse: binding with it undoes binding with s.

    For projected secrets the reciprocal equals the conjugate, so the
    inverse is projected too and is an involution.
    """
    st = _secret_tensor(s)
    inv = from_spectrum(_reciprocal_spectrum(st))
    if isinstance(s, Secret):
        return Secret(inv, seed=s.seed, counter=s.counter, projected=s.projected)
    return inv


def unbind(b: np.ndarray, s) -> np.ndarray:
    """Retrieve a bound component: bind with the inverse secret.

    Exact (to float precision) when the secret is projected; approximate
    retrieval from multi-term bundles degrades with term count.
    """
    b = np.asarray(b, dtype=np.float64)
    st = _secret_tensor(s)
    if b.shape != st.shape:
        raise ShapeError(f"unbind shape mismatch: {b.shape} vs {st.shape}")
    return from_spectrum(spectrum(b) * _reciprocal_spectrum(st))


def sample_secret(dims, rng: RngStream) -> tuple[Secret, RngStream]:
    """Draw a fresh projected secret; returns (secret, successor stream).

    Samples N(0, 1/d) and projects (projection is scale-invariant, so the
    variance choice is immaterial). A degenerate draw is retried on the
    successor stream up to 3 times.
    """
    dims = tuple(int(d) for d in dims)
    d = int(np.prod(dims))
    if d <= 0:
        raise ShapeError(f"invalid dims {dims}")
    last_err = None
    for _ in range(1 + _SAMPLE_RETRIES):
        state = rng
        raw, rng = rng.normal(dims, 1.0 / d)
        try:
            return (
                Secret(project(raw), seed=state.seed, counter=state.counter, projected=True),
                rng,
            )
        except DegenerateSpectrumError as err:  # pragma: no cover - measure-zero draw
            last_err = err
    raise last_err  # pragma: no cover


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two equal-shape tensors, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"cosine shape mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ParameterError("cosine undefined for zero-norm input")
    return float(np.clip(np.vdot(a.ravel(), b.ravel()) / (na * nb), -1.0, 1.0))


@dataclass
class Bundle:
    """Superposition of bound pairs; retrieval noise grows with term_count."""

    tensor: np.ndarray
    term_count: int = 0

    @classmethod
    def empty(cls, dims) -> "Bundle":
        return cls(np.zeros(tuple(dims), dtype=np.float64), 0)


def bundle_add(bundle: Bundle, x: np.ndarray, y) -> Bundle:
    """Accumulate one bound pair into the bundle (pure; returns a new one)."""
    bound = bind(x, y)
    if bundle.tensor.shape != bound.shape:
        raise ShapeError(
            f"bundle shape mismatch: {bundle.tensor.shape} vs {bound.shape}"
        )
    return Bundle(bundle.tensor + bound, bundle.term_count + 1)


def presence_probe(bundle: Bundle, y, x_candidate: np.ndarray, use_projection: bool = True) -> float:
    """Score whether the pair (x_candidate, y) is present in the bundle.

    Returns cosine(unbind(bundle, y), x_candidate): near 1 for the present
    pair of a single-term bundle, near 0 for absent pairs. The flag must
    match how the probe pair was drawn; it guards against mixing the
    projected and naive harness modes.
    """
    if isinstance(y, Secret) and y.projected != use_projection:
        raise ParameterError(
            f"probe mode mismatch: secret projected={y.projected}, "
            f"use_projection={use_projection}"
        )
    return cosine(unbind(bundle.tensor, y), x_candidate)


def _probe_dims(d: int):
    side = int(np.sqrt(d))
    if side * side == d:
        return (side, side)
    return (d,)


def probe_curves(d: int = 1024, ks=(1, 2, 4, 8, 16, 32), n_seeds: int = 100,
                 seed: int = 0, modes=("projected", "naive")) -> list[dict]:
    """Monte-Carlo present/absent retrieval curves over bundle sizes.

    For each seed and bundle size k, binds k random pairs, then probes one
    present pair and one fresh absent pair. Perfect-square d runs the 2D
    algebra on a sqrt(d) x sqrt(d) grid, other d fall back to 1D. Returns
    one row per (k, mode) with mean/std of both scores, ready for CSV.
    """
    dims = _probe_dims(int(d))
    var = 1.0 / int(d)
    rows = []
    for mode_idx, mode in enumerate(modes):
        if mode not in ("projected", "naive"):
            raise ParameterError(f"unknown probe mode {mode!r}")
        projected = mode == "projected"
        for k_idx, k in enumerate(ks):
            present, absent = [], []
            for i in range(n_seeds):
                # Disjoint counter blocks keep every (mode, k, seed) draw
                # independent and reproducible.
                base = ((mode_idx * 64 + k_idx) * n_seeds + i) * 4096
                rng = RngStream(seed, counter=base)
                bundle = Bundle.empty(dims)
                pairs = []
                for _ in range(int(k)):
                    x, rng = _draw_probe_vector(dims, var, projected, rng)
                    y, rng = _draw_probe_secret(dims, var, projected, rng)
                    pairs.append((x, y))
                    bundle = bundle_add(bundle, x, y)
                xa, rng = _draw_probe_vector(dims, var, projected, rng)
                ya, rng = _draw_probe_secret(dims, var, projected, rng)
                present.append(presence_probe(bundle, pairs[0][1], pairs[0][0], projected))
                absent.append(presence_probe(bundle, ya, xa, projected))
            rows.append({
                "k": int(k),
                "mode": mode,
                "present_mean": float(np.mean(present)),
                "absent_mean": float(np.mean(absent)),
                "present_std": float(np.std(present)),
                "absent_std": float(np.std(absent)),
            })
    return rows


def _draw_probe_vector(dims, var, projected, rng):
    raw, rng = rng.normal(dims, var)
    return (project(raw) if projected else raw), rng


def _draw_probe_secret(dims, var, projected, rng):
    state = rng
    raw, rng = rng.normal(dims, var)
    tensor = project(raw) if projected else raw
    return Secret(tensor, state.seed, state.counter, projected=projected), rng
