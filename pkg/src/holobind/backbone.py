"""Worker-side tensor-to-tensor functions and their layer primitives.

A backbone is a chain of layers with a validated shape chain; specs used in
the split-inference protocol must preserve the input shape so the client's
secret matches the output. Convolutions use circular padding throughout,
which keeps every linear backbone inside the circulant algebra that binding
relies on. Layer forward/backward passes here are also the building blocks
of the toy trainer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpecError, ShapeError
from .tensor import RngStream
from .vsa import bind, unbind


# ------------------------------------------------------------ layer kernels

def circconv_forward(kernel: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Circular cross-correlation with a centered kernel.

    ``kernel`` has shape (KH, KW, Cin, Cout); ``x`` is (..., H, W, Cin) with
    an optional leading batch axis. Stride 1, wrap-around padding.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    kh, kw, cin, cout = kernel.shape
    if x.shape[-1] != cin:
        raise ShapeError(f"input channels {x.shape[-1]} != kernel cin {cin}")
    ch, cw = kh // 2, kw // 2
    out = np.zeros(x.shape[:-1] + (cout,))
    for i in range(kh):
        for j in range(kw):
            shifted = np.roll(x, shift=(ch - i, cw - j), axis=(-3, -2))
            out += shifted @ kernel[i, j]
    return out


def circconv_backward(kernel: np.ndarray, x: np.ndarray, grad_out: np.ndarray):
    """Gradients of circconv_forward w.r.t. kernel and input.

    Returns (grad_kernel, grad_input); shapes mirror the forward arguments.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    kh, kw, cin, cout = kernel.shape
    ch, cw = kh // 2, kw // 2
    grad_kernel = np.zeros_like(kernel)
    grad_input = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            x_shift = np.roll(x, shift=(ch - i, cw - j), axis=(-3, -2))
            grad_kernel[i, j] = x_shift.reshape(-1, cin).T @ grad_out.reshape(-1, cout)
            g_shift = np.roll(grad_out, shift=(i - ch, j - cw), axis=(-3, -2))
            grad_input += g_shift @ kernel[i, j].T
    return grad_kernel, grad_input


def leaky_relu_forward(x: np.ndarray, alpha: float) -> np.ndarray:
    return np.where(x > 0, x, alpha * x)


def leaky_relu_backward(x: np.ndarray, grad_out: np.ndarray, alpha: float) -> np.ndarray:
    return grad_out * np.where(x > 0, 1.0, alpha)


def dense_forward(weight: np.ndarray, x_flat: np.ndarray) -> np.ndarray:
    """Affine-free dense map on flattened input: out = x @ weight.T."""
    return x_flat @ weight.T


def dense_backward(weight: np.ndarray, x_flat: np.ndarray, grad_out: np.ndarray):
    grad_weight = grad_out.reshape(-1, weight.shape[0]).T @ x_flat.reshape(-1, weight.shape[1])
    grad_input = grad_out @ weight
    return grad_weight, grad_input


# ------------------------------------------------------------------- layers

@dataclass(frozen=True)
class Identity:
    def output_dims(self, dims):
        return dims

    def apply(self, t):
        return t


@dataclass(frozen=True)
class CircConv2d:
    kernel: np.ndarray
    seed: int

    @classmethod
    def from_seed(cls, kh, kw, cin, cout, seed):
        """Materialize a fan-in-scaled Gaussian kernel from its seed."""
        kernel = RngStream(seed).normal([kh, kw, cin, cout], 1.0 / (kh * kw * cin))[0]
        return cls(kernel, seed)

    def output_dims(self, dims):
        if len(dims) != 3:
            raise SpecError(f"circconv2d needs H x W x D input, got {dims}")
        kh, kw, cin, cout = self.kernel.shape
        if dims[2] != cin:
            raise SpecError(f"circconv2d cin {cin} does not chain from input depth {dims[2]}")
        return (dims[0], dims[1], cout)

    def apply(self, t):
        return circconv_forward(self.kernel, t)


@dataclass(frozen=True)
class Pointwise:
    alpha: float

    def output_dims(self, dims):
        return dims

    def apply(self, t):
        return leaky_relu_forward(t, self.alpha)


@dataclass(frozen=True)
class DenseLayer:
    weight: np.ndarray
    seed: int

    @classmethod
    def from_seed(cls, rows, cols, seed):
        weight = RngStream(seed).normal([rows, cols], 1.0 / cols)[0]
        return cls(weight, seed)

    def output_dims(self, dims):
        size = int(np.prod(dims))
        rows, cols = self.weight.shape
        if size != cols:
            raise SpecError(f"dense cols {cols} does not chain from input size {size}")
        return (rows,)

    def apply(self, t):
        return dense_forward(self.weight, np.reshape(t, -1))


@dataclass(frozen=True)
class BackboneSpec:
    """Validated layer chain; immutable and safe to share across threads."""

    input_dims: tuple
    layers: tuple
    output_dims: tuple = field(init=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.input_dims)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise SpecError(f"input dims must be three positive extents, got {dims}")
        object.__setattr__(self, "input_dims", dims)
        for layer in self.layers:
            dims = layer.output_dims(dims)
        object.__setattr__(self, "output_dims", tuple(dims))

    @property
    def shape_preserving(self) -> bool:
        return self.output_dims == self.input_dims

    def apply(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if t.shape != self.input_dims:
            raise ShapeError(f"input dims {t.shape} != spec input {self.input_dims}")
        for layer in self.layers:
            t = layer.apply(t)
        return t


def apply(spec: BackboneSpec, t: np.ndarray) -> np.ndarray:
    return spec.apply(t)


# -------------------------------------------------------------- text format

def parse_spec(text: str) -> BackboneSpec:
    """Parse the line-oriented spec format.

    First non-empty line: ``input H W D``; then one layer per line:
    ``circconv2d kh kw cin cout seed`` | ``pointwise leaky_relu alpha`` |
    ``dense rows cols seed`` | ``identity``. Weights come deterministically
    from the per-layer seeds. Shape errors surface here, not at apply time.
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("input"):
        raise SpecError("spec must start with an 'input H W D' line")
    header = lines[0].split()
    if len(header) != 4:
        raise SpecError(f"bad input line: {lines[0]!r}")
    input_dims = tuple(int(v) for v in header[1:])
    layers = []
    for ln in lines[1:]:
        parts = ln.split()
        kind = parts[0]
        try:
            if kind == "identity":
                layers.append(Identity())
            elif kind == "circconv2d":
                kh, kw, cin, cout, seed = (int(v) for v in parts[1:6])
                layers.append(CircConv2d.from_seed(kh, kw, cin, cout, seed))
            elif kind == "pointwise":
                if parts[1] != "leaky_relu":
                    raise SpecError(f"unknown pointwise op {parts[1]!r}")
                layers.append(Pointwise(float(parts[2])))
            elif kind == "dense":
                rows, cols, seed = int(parts[1]), int(parts[2]), int(parts[3])
                layers.append(DenseLayer.from_seed(rows, cols, seed))
            else:
                raise SpecError(f"unknown layer kind {kind!r}")
        except (IndexError, ValueError) as err:
            raise SpecError(f"bad layer line {ln!r}: {err}") from err
    return BackboneSpec(input_dims, tuple(layers))


def serialize_spec(spec: BackboneSpec) -> str:
    lines = ["input {} {} {}".format(*spec.input_dims)]
    for layer in spec.layers:
        if isinstance(layer, Identity):
            lines.append("identity")
        elif isinstance(layer, CircConv2d):
            kh, kw, cin, cout = layer.kernel.shape
            lines.append(f"circconv2d {kh} {kw} {cin} {cout} {layer.seed}")
        elif isinstance(layer, Pointwise):
            lines.append(f"pointwise leaky_relu {layer.alpha}")
        elif isinstance(layer, DenseLayer):
            rows, cols = layer.weight.shape
            lines.append(f"dense {rows} {cols} {layer.seed}")
        else:
            raise SpecError(f"unknown layer type {type(layer).__name__}")
    return "\n".join(lines) + "\n"


def load_spec(path) -> BackboneSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_spec(fh.read())


def identity_spec(dims) -> BackboneSpec:
    return BackboneSpec(tuple(dims), (Identity(),))


def toy_fw_spec(dims=(16, 16, 1), seed: int = 100) -> BackboneSpec:
    """Reference nonlinear stack used by the toy trainer and benchmarks."""
    h, w, d = dims
    layers = (
        CircConv2d.from_seed(3, 3, d, 16, seed),
        Pointwise(0.1),
        CircConv2d.from_seed(3, 3, 16, 16, seed + 1),
        Pointwise(0.1),
        CircConv2d.from_seed(3, 3, 16, d, seed + 2),
    )
    return BackboneSpec((h, w, d), layers)


def linear_circconv_spec(dims, n_layers: int = 1, seed: int = 200) -> BackboneSpec:
    """Purely linear single-channel circconv chain (commutes with binding)."""
    layers = tuple(
        CircConv2d.from_seed(3, 3, 1, 1, seed + i) for i in range(n_layers)
    )
    return BackboneSpec(tuple(dims), layers)


# ---------------------------------------------------------------- contracts

def linear_circconv_commutation_check(spec: BackboneSpec, x: np.ndarray, s) -> float:
    """Residual of f(x (*) s) (*) s^-1 == f(x) for a linear circconv chain.

    Circular convolutions are simultaneously diagonalized by the Fourier
    basis, so a purely linear single-channel backbone commutes with binding
    exactly; any nonlinearity voids the contract.
    """
    for layer in spec.layers:
        ok = isinstance(layer, Identity) or (
            isinstance(layer, CircConv2d)
            and layer.kernel.shape[2] == 1
            and layer.kernel.shape[3] == 1
        )
        if not ok:
            raise SpecError(
                "commutation check requires only identity or 1-channel "
                f"circconv2d layers, found {type(layer).__name__}"
            )
    through_binding = unbind(spec.apply(bind(x, s)), s)
    direct = spec.apply(np.asarray(x, dtype=np.float64))
    return float(np.max(np.abs(through_binding - direct)))


# ------------------------------------------------------------- FLOP account

@dataclass(frozen=True)
class FlopReport:
    """Remote/local multiply-add split plus traffic for a workload."""

    remote_flops: int
    local_flops: int
    bytes_up: int
    bytes_down: int

    @property
    def remote_fraction(self) -> float:
        total = self.remote_flops + self.local_flops
        return self.remote_flops / total if total else 0.0


def fft_flops(n: int) -> int:
    """Documented convention: one length-n transform costs 5 n log2(n)."""
    return int(round(5 * n * np.log2(n))) if n > 1 else 0


def transform_cost(dims) -> int:
    """Cost of one bind or unbind: three 2D transforms per channel."""
    h, w = dims[0], dims[1]
    depth = dims[2] if len(dims) > 2 else 1
    return 3 * depth * fft_flops(h * w)


def count_flops(spec: BackboneSpec) -> int:
    """Multiply-add count of one forward pass through the spec."""
    total = 0
    dims = spec.input_dims
    for layer in spec.layers:
        if isinstance(layer, CircConv2d):
            kh, kw, cin, cout = layer.kernel.shape
            total += dims[0] * dims[1] * kh * kw * cin * cout
        elif isinstance(layer, DenseLayer):
            rows, cols = layer.weight.shape
            total += rows * cols
        dims = layer.output_dims(dims)
    return total
