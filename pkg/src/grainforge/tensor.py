"""Dense tensor kernels: convolution, pooling, dense products, activations.

Tensors are plain numpy arrays in row-major (C) order; an array's
``shape``/flat buffer pair is the value, and no kernel ever mutates its
inputs.  Convolutions use valid padding with stride 1 and pooling uses a
2x2 window with stride 2, the only configurations the network layer ever
requests.  Forward kernels return the auxiliary state (pooling argmax
indices, pre-activation caches) needed by the explicit backward passes in
:mod:`grainforge.network`.

Convolutions run as shift-and-accumulate matrix products so the heavy
lifting lands in BLAS; the test suite checks every kernel element-by-
element against naive nested-loop oracles.
"""

from __future__ import annotations

import numpy as np

Tensor = np.ndarray


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _crop(x: Tensor, dy: int, dx: int, oh: int, ow: int) -> Tensor:
    """Contiguous (B*oh*ow, C) copy of the window anchored at (dy, dx)."""
    b, _, _, c = x.shape
    return np.ascontiguousarray(x[:, dy : dy + oh, dx : dx + ow, :]).reshape(-1, c)


def conv2d_batch(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Valid-padding stride-1 convolution of (B,H,W,Cin) with (Kh,Kw,Cin,Cout).

    Computed by shift-and-accumulate: one (B*H'*W', Cin) x (Cin, Cout)
    product per kernel offset, which keeps every copy and product on
    contiguous buffers.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv input must be 4-d (B,H,W,C), got shape {x.shape}")
    if kernels.ndim != 4:
        raise ShapeError(f"kernels must be 4-d (Kh,Kw,Cin,Cout), got shape {kernels.shape}")
    b, h, w, cin = x.shape
    kh, kw, kcin, cout = kernels.shape
    if cin != kcin:
        raise ShapeError(
            f"input channel axis ({cin}) does not match kernel input channels ({kcin})"
        )
    if h < kh or w < kw:
        raise ShapeError(
            f"input spatial axes {h}x{w} smaller than kernel {kh}x{kw}"
        )
    if bias.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {bias.shape}")
    oh, ow = h - kh + 1, w - kw + 1
    out = np.empty((b * oh * ow, cout), dtype=np.result_type(x, kernels))
    out[:] = bias
    for dy in range(kh):
        for dx in range(kw):
            out += _crop(x, dy, dx, oh, ow) @ kernels[dy, dx]
    return out.reshape(b, oh, ow, cout)


def conv2d_forward(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Single-image convolution: (H,W,Cin) -> (H-Kh+1, W-Kw+1, Cout)."""
    if x.ndim != 3:
        raise ShapeError(f"conv input must be 3-d (H,W,C), got shape {x.shape}")
    return conv2d_batch(x[None], kernels, bias)[0]


def conv2d_backward(x: Tensor, kernels: Tensor, dout: Tensor):
    """Gradients of a valid conv given upstream (B,H',W',Cout) gradient.

    Returns (dx, dkernels, dbias).
    """
    b, h, w, cin = x.shape
    kh, kw, _, cout = kernels.shape
    oh, ow = h - kh + 1, w - kw + 1

    dbias = dout.sum(axis=(0, 1, 2))
    dout_flat = dout.reshape(b * oh * ow, cout)
    dkernels = np.empty_like(kernels, dtype=dout.dtype)
    dx = np.zeros_like(x, dtype=dout.dtype)
    for dy in range(kh):
        for dx_ in range(kw):
            dkernels[dy, dx_] = _crop(x, dy, dx_, oh, ow).T @ dout_flat
            spread = (dout_flat @ kernels[dy, dx_].T).reshape(b, oh, ow, cin)
            dx[:, dy : dy + oh, dx_ : dx_ + ow, :] += spread
    return dx, dkernels, dbias


def maxpool2d_batch(x: Tensor):
    """2x2 stride-2 max pooling of (B,H,W,C); trailing odd row/col dropped.

    Returns (pooled, argmax) where argmax holds the within-window winner
    index in {0,1,2,3} (row-major over the window) for the backward pass.
    Ties go to the first maximum in that order.
    """
    if x.ndim != 4:
        raise ShapeError(f"pool input must be 4-d (B,H,W,C), got shape {x.shape}")
    b, h, w, c = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"pool input spatial axes {h}x{w} must be at least 2x2")
    oh, ow = h // 2, w // 2
    corners = np.stack(
        [
            x[:, 0 : 2 * oh : 2, 0 : 2 * ow : 2, :],
            x[:, 0 : 2 * oh : 2, 1 : 2 * ow : 2, :],
            x[:, 1 : 2 * oh : 2, 0 : 2 * ow : 2, :],
            x[:, 1 : 2 * oh : 2, 1 : 2 * ow : 2, :],
        ],
        axis=-1,
    )  # (B, oh, ow, C, 4), window positions row-major
    argmax = corners.argmax(axis=-1)
    pooled = np.take_along_axis(corners, argmax[..., None], axis=-1)[..., 0]
    return pooled, argmax


def maxpool2d_forward(x: Tensor):
    """Single-image pooling: (H,W,C) -> (floor(H/2), floor(W/2), C)."""
    if x.ndim != 3:
        raise ShapeError(f"pool input must be 3-d (H,W,C), got shape {x.shape}")
    pooled, argmax = maxpool2d_batch(x[None])
    return pooled[0], argmax[0]


def maxpool2d_backward(x_shape, argmax: Tensor, dout: Tensor) -> Tensor:
    """Scatter upstream gradient back to each window's argmax position."""
    b, h, w, c = x_shape
    oh, ow = h // 2, w // 2
    corners = np.zeros((b, oh, ow, c, 4), dtype=dout.dtype)
    np.put_along_axis(corners, argmax[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, 0 : 2 * oh : 2, 0 : 2 * ow : 2, :] = corners[..., 0]
    dx[:, 0 : 2 * oh : 2, 1 : 2 * ow : 2, :] = corners[..., 1]
    dx[:, 1 : 2 * oh : 2, 0 : 2 * ow : 2, :] = corners[..., 2]
    dx[:, 1 : 2 * oh : 2, 1 : 2 * ow : 2, :] = corners[..., 3]
    return dx


def dense_forward(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """x^T W + b for a single vector or a (B,N) batch."""
    n, m = weights.shape
    if x.shape[-1] != n:
        raise ShapeError(
            f"input length ({x.shape[-1]}) does not match weight rows ({n})"
        )
    if bias.shape != (m,):
        raise ShapeError(f"bias must have shape ({m},), got {bias.shape}")
    return x @ weights + bias


def dense_backward(x: Tensor, weights: Tensor, dout: Tensor):
    """Gradients for a (B,N) batch dense layer; returns (dx, dweights, dbias)."""
    dweights = x.T @ dout
    dbias = dout.sum(axis=0)
    dx = dout @ weights.T
    return dx, dweights, dbias


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def relu_backward(x: Tensor, dout: Tensor) -> Tensor:
    return dout * (x > 0)


def softmax(logits: Tensor) -> Tensor:
    """Exp-normalized probabilities over the last axis, max-subtracted."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def check_finite(x: Tensor, name: str) -> Tensor:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in tensor {name!r}")
    return x
