"""Ablation binding operators: VTB, orthogonal iVTB, and Hilbert+1D HRR.

VTB binds by a block-diagonal matrix built from the secret vector. The
block is the vector reshaped to m x m and scaled by d^(1/4); with N(0, 1/d)
entries that scaling makes the block approximately orthogonal, so applying
the transpose per chunk works as an approximate inverse. The improved
variant draws the block from a QR decomposition instead, making that
inverse exact. The Hilbert route linearizes a 2^k x 2^k image along a
space-filling curve and applies the ordinary 1D binding algebra.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ShapeError
from .tensor import RngStream
from .vsa import Secret, bind, unbind


def _square_side(d: int) -> int:
    m = int(np.sqrt(d))
    if m * m != d:
        raise ShapeError(f"VTB needs a perfect-square dimension, got {d}")
    return m


@dataclass(frozen=True)
class VtbSecret:
    """Secret vector for VTB binding; ``orthogonal`` marks the iVTB variant."""

    vector: np.ndarray
    orthogonal: bool = False

    @property
    def block(self) -> np.ndarray:
        d = self.vector.size
        m = _square_side(d)
        return d ** 0.25 * self.vector.reshape(m, m)


def vtb_secret(d: int, rng: RngStream) -> tuple[VtbSecret, RngStream]:
    """Plain VTB secret: N(0, 1/d) vector whose scaled block is only
    approximately orthogonal."""
    _square_side(d)
    vec, rng = rng.normal([d], 1.0 / d)
    return VtbSecret(vec, orthogonal=False), rng


def ivtb_secret(d: int, rng: RngStream) -> tuple[VtbSecret, RngStream]:
    """Improved VTB secret: block is the orthogonal factor of a Gaussian QR.

    The R factor's diagonal is forced positive so the factorization (and
    hence the secret) is unique and platform-stable.
    """
    m = _square_side(d)
    raw, rng = rng.normal([m, m], 1.0)
    q, r = np.linalg.qr(raw)
    signs = np.where(np.diag(r) >= 0, 1.0, -1.0)
    q = q * signs
    return VtbSecret((d ** -0.25) * q.reshape(-1), orthogonal=True), rng


def vtb_bind(x: np.ndarray, y: VtbSecret) -> np.ndarray:
    """Multiply each consecutive m-chunk of x by the secret block."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != y.vector.size:
        raise ShapeError(f"vtb_bind expects a length-{y.vector.size} vector, got {x.shape}")
    m = _square_side(x.size)
    return (x.reshape(m, m) @ y.block.T).reshape(-1)


def vtb_unbind(z: np.ndarray, y: VtbSecret) -> np.ndarray:
    """Apply the transposed block per chunk; exact for orthogonal secrets."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size != y.vector.size:
        raise ShapeError(f"vtb_unbind expects a length-{y.vector.size} vector, got {z.shape}")
    m = _square_side(z.size)
    return (z.reshape(m, m) @ y.block).reshape(-1)


# ------------------------------------------------------------- Hilbert curve

def _rank_to_cell(order: int, rank: int) -> tuple[int, int]:
    # iterative Gray-code construction; visit order at order 1 is
    # (0,0),(0,1),(1,1),(1,0) in (row, col) coordinates
    n = 1 << order
    r = c = 0
    t = rank
    s = 1
    while s < n:
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        if ry == 0:
            if rx == 1:
                r = s - 1 - r
                c = s - 1 - c
            r, c = c, r
        r += s * rx
        c += s * ry
        t //= 4
        s *= 2
    return r, c


@dataclass(frozen=True)
class HilbertMap:
    """Bijection between curve ranks and cells of a 2^order square grid."""

    order: int
    forward: np.ndarray  # (4^order, 2) rank -> (row, col)
    inverse: np.ndarray  # (side, side) cell -> rank


@lru_cache(maxsize=None)
def hilbert_map(order: int) -> HilbertMap:
    if order < 1:
        raise ShapeError(f"hilbert order must be >= 1, got {order}")
    side = 1 << order
    forward = np.zeros((side * side, 2), dtype=np.int64)
    inverse = np.zeros((side, side), dtype=np.int64)
    for rank in range(side * side):
        r, c = _rank_to_cell(order, rank)
        forward[rank] = (r, c)
        inverse[r, c] = rank
    return HilbertMap(order, forward, inverse)


def _padded_order(h: int, w: int) -> int:
    side = max(h, w)
    order = max(1, int(np.ceil(np.log2(side))))
    return order


def hilbert_encode(img: np.ndarray) -> np.ndarray:
    """Linearize a 2D image along the Hilbert curve.

    Non-power-of-two inputs are zero-padded to the next 2^k square; callers
    keep the original dims for cropping on decode.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError(f"hilbert_encode expects a 2D image, got {img.ndim}D")
    h, w = img.shape
    order = _padded_order(h, w)
    side = 1 << order
    if (h, w) != (side, side):
        padded = np.zeros((side, side))
        padded[:h, :w] = img
        img = padded
    m = hilbert_map(order)
    return img[m.forward[:, 0], m.forward[:, 1]].copy()


def hilbert_decode(vec: np.ndarray, dims=None) -> np.ndarray:
    """Invert :func:`hilbert_encode`, cropping to ``dims`` when given."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1:
        raise ShapeError(f"hilbert_decode expects a 1D vector, got {vec.ndim}D")
    side = int(round(np.sqrt(vec.size)))
    if side * side != vec.size or side & (side - 1):
        raise ShapeError(f"encoded length {vec.size} is not a power-of-four grid")
    order = side.bit_length() - 1
    m = hilbert_map(order)
    img = np.zeros((side, side))
    img[m.forward[:, 0], m.forward[:, 1]] = vec
    if dims is not None:
        h, w = dims
        img = img[:h, :w].copy()
    return img


def hilbert_hrr_bind(img: np.ndarray, s1d) -> np.ndarray:
    """1D-bind the Hilbert linearization; channels bind independently."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        cols = [hilbert_hrr_bind(img[..., c], s1d) for c in range(img.shape[-1])]
        return np.stack(cols, axis=-1)
    encoded = hilbert_encode(img)
    st = s1d.tensor if isinstance(s1d, Secret) else np.asarray(s1d)
    if st.shape != encoded.shape:
        raise ShapeError(f"secret length {st.shape} != encoded length {encoded.shape}")
    return bind(encoded, s1d)


def hilbert_hrr_unbind(bound: np.ndarray, s1d, dims) -> np.ndarray:
    """Retrieve the image: 1D-unbind then decode and crop to ``dims``."""
    bound = np.asarray(bound, dtype=np.float64)
    if bound.ndim == 2:
        chans = [hilbert_hrr_unbind(bound[..., c], s1d, dims) for c in range(bound.shape[-1])]
        return np.stack(chans, axis=-1)
    return hilbert_decode(unbind(bound, s1d), dims)


# ------------------------------------------------------------------ ablation

ABLATION_OPERATORS = ("hrr2d", "hrr1d", "vtb", "ivtb", "hilbert")


def ablation_rows(seed: int = 0, side: int = 16) -> list[dict]:
    """Bind/retrieve one image under every operator; rows ready for CSV.

    reconstruction_cosine compares the retrieved image with the original;
    bound_input_cosine shows how little the bound tensor resembles it.
    """
    from .tensor import RngStream
    from .vsa import cosine, sample_secret

    rng = RngStream(seed)
    img, rng = rng.normal((side, side), 1.0)
    img /= np.linalg.norm(img)
    noise, rng = rng.normal((side, side), 0.09)
    img = img + noise
    flat = img.reshape(-1)
    d = flat.size
    rows = []
    for op in ABLATION_OPERATORS:
        if op == "hrr2d":
            s, rng = sample_secret((side, side), rng)
            bound = bind(img, s)
            rec = unbind(bound, s)
            b_flat, rec_img = bound.reshape(-1), rec
        elif op == "hrr1d":
            s, rng = sample_secret((d,), rng)
            bound = bind(flat, s)
            rec = unbind(bound, s)
            b_flat, rec_img = bound, rec.reshape(side, side)
        elif op in ("vtb", "ivtb"):
            maker = ivtb_secret if op == "ivtb" else vtb_secret
            s, rng = maker(d, rng)
            bound = vtb_bind(flat, s)
            rec = vtb_unbind(bound, s)
            b_flat, rec_img = bound, rec.reshape(side, side)
        else:  # hilbert
            s, rng = sample_secret((d,), rng)
            bound = hilbert_hrr_bind(img, s)
            rec = hilbert_hrr_unbind(bound, s, (side, side))
            b_flat, rec_img = bound, rec
        rows.append({
            "operator": op,
            "reconstruction_cosine": cosine(img, rec_img),
            "bound_input_cosine": cosine(flat, b_flat),
        })
    return rows
