"""Layer specifications, the two CNN architectures, and explicit backprop.

A network is an ordered list of layer specs (conv 3x3 / maxpool 2x2 /
flatten / dense) plus an input shape and class count.  The forward pass
caches per-layer activations so the backward pass can produce exact
analytic gradients of the cross-entropy + L2 objective; softmax and
cross-entropy are fused at the logits as (p - y) / B.

Weights serialize to a bit-exact container: ASCII magic "GFW1", an 8-byte
little-endian header length, a JSON header describing layers and tensor
order, then each tensor's raw little-endian float32 values row-major.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng
from .tensor import (
    Tensor,
    conv2d_backward,
    conv2d_batch,
    dense_backward,
    dense_forward,
    maxpool2d_backward,
    maxpool2d_batch,
    relu,
    relu_backward,
    softmax,
)

LOG_EPSILON = 1e-12
KERNEL_SIZE = 3

MAGIC = b"GFW1"


class NetworkError(ValueError):
    pass


class WeightsFormatError(ValueError):
    """Malformed weights file; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv2d | maxpool2d | flatten | dense
    filters: int = 0
    units: int = 0
    activation: str = "none"  # relu | softmax | none


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    num_classes: int


@dataclass
class LayerParams:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class Parameters:
    """Per-layer weight/bias tensors aligned with a NetworkSpec's layers."""

    layers: list[LayerParams | None] = field(default_factory=list)

    def scalar_count(self) -> int:
        return sum(
            lp.weight.size + lp.bias.size for lp in self.layers if lp is not None
        )

    def copy(self) -> "Parameters":
        return Parameters(
            [
                LayerParams(lp.weight.copy(), lp.bias.copy()) if lp else None
                for lp in self.layers
            ]
        )

    def astype(self, dtype) -> "Parameters":
        return Parameters(
            [
                LayerParams(lp.weight.astype(dtype), lp.bias.astype(dtype))
                if lp
                else None
                for lp in self.layers
            ]
        )


def infer_shapes(spec: NetworkSpec) -> list[tuple[int, ...]]:
    """Output shape after each layer; raises NetworkError on any mismatch."""
    if not spec.layers:
        raise NetworkError("network must have at least one layer")
    shape: tuple[int, ...] = tuple(spec.input_shape)
    if len(shape) != 3 or any(d < 1 for d in shape):
        raise NetworkError(f"input shape must be positive (H,W,C), got {shape}")
    shapes = []
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv2d":
            if len(shape) != 3:
                raise NetworkError(f"layer {i}: conv2d needs (H,W,C) input, got {shape}")
            h, w, _ = shape
            if h < KERNEL_SIZE or w < KERNEL_SIZE:
                raise NetworkError(f"layer {i}: input {h}x{w} smaller than 3x3 kernel")
            if layer.filters < 1:
                raise NetworkError(f"layer {i}: conv2d needs a positive filter count")
            shape = (h - KERNEL_SIZE + 1, w - KERNEL_SIZE + 1, layer.filters)
        elif layer.kind == "maxpool2d":
            if len(shape) != 3:
                raise NetworkError(f"layer {i}: maxpool needs (H,W,C) input, got {shape}")
            h, w, c = shape
            if h < 2 or w < 2:
                raise NetworkError(f"layer {i}: input {h}x{w} smaller than 2x2 window")
            shape = (h // 2, w // 2, c)
        elif layer.kind == "flatten":
            if len(shape) != 3:
                raise NetworkError(f"layer {i}: flatten needs (H,W,C) input, got {shape}")
            shape = (shape[0] * shape[1] * shape[2],)
        elif layer.kind == "dense":
            if len(shape) != 1:
                raise NetworkError(f"layer {i}: dense needs a flat input, got {shape}")
            if layer.units < 1:
                raise NetworkError(f"layer {i}: dense needs a positive unit count")
            shape = (layer.units,)
        else:
            raise NetworkError(f"layer {i}: unknown kind {layer.kind!r}")
        if layer.activation not in ("relu", "softmax", "none"):
            raise NetworkError(f"layer {i}: unknown activation {layer.activation!r}")
        if layer.activation == "softmax" and i != len(spec.layers) - 1:
            raise NetworkError(f"layer {i}: softmax is only valid on the final layer")
        shapes.append(shape)
    last = spec.layers[-1]
    if last.kind != "dense" or last.activation != "softmax" or last.units != spec.num_classes:
        raise NetworkError(
            "final layer must be dense with softmax over "
            f"{spec.num_classes} classes, got {last}"
        )
    return shapes


def build_rice_cnn() -> NetworkSpec:
    """Five-variety rice grain classifier over 50x50 RGB inputs."""
    return NetworkSpec(
        input_shape=(50, 50, 3),
        layers=(
            LayerSpec("conv2d", filters=32, activation="relu"),
            LayerSpec("maxpool2d"),
            LayerSpec("conv2d", filters=64, activation="relu"),
            LayerSpec("maxpool2d"),
            LayerSpec("flatten"),
            LayerSpec("dense", units=32, activation="relu"),
            LayerSpec("dense", units=5, activation="softmax"),
        ),
        num_classes=5,
    )


def build_disease_cnn() -> NetworkSpec:
    """Four-class leaf disease classifier over 224x224 RGB inputs."""
    return NetworkSpec(
        input_shape=(224, 224, 3),
        layers=(
            LayerSpec("conv2d", filters=32, activation="relu"),
            LayerSpec("maxpool2d"),
            LayerSpec("conv2d", filters=64, activation="relu"),
            LayerSpec("maxpool2d"),
            LayerSpec("conv2d", filters=64, activation="relu"),
            LayerSpec("maxpool2d"),
            LayerSpec("flatten"),
            LayerSpec("dense", units=128, activation="relu"),
            LayerSpec("dense", units=4, activation="softmax"),
        ),
        num_classes=4,
    )


def layer_param_counts(spec: NetworkSpec) -> list[int]:
    """Trainable scalar count per layer (0 for pool/flatten)."""
    shapes = infer_shapes(spec)
    counts = []
    shape = tuple(spec.input_shape)
    for layer, out_shape in zip(spec.layers, shapes):
        if layer.kind == "conv2d":
            cin = shape[2]
            counts.append(KERNEL_SIZE * KERNEL_SIZE * cin * layer.filters + layer.filters)
        elif layer.kind == "dense":
            counts.append(shape[0] * layer.units + layer.units)
        else:
            counts.append(0)
        shape = out_shape
    return counts


def param_count(spec: NetworkSpec) -> int:
    return sum(layer_param_counts(spec))


def init_parameters(spec: NetworkSpec, rng: Rng, dtype=np.float64) -> Parameters:
    """He-normal weights for relu layers, Glorot-uniform otherwise, zero biases.

    Each layer draws from its own derived stream, so adding or removing a
    layer does not perturb the draws of the others.
    """
    shapes = infer_shapes(spec)
    params = Parameters()
    shape = tuple(spec.input_shape)
    for i, (layer, out_shape) in enumerate(zip(spec.layers, shapes)):
        if layer.kind == "conv2d":
            cin = shape[2]
            fan_in = KERNEL_SIZE * KERNEL_SIZE * cin
            fan_out = KERNEL_SIZE * KERNEL_SIZE * layer.filters
            wshape = (KERNEL_SIZE, KERNEL_SIZE, cin, layer.filters)
            bshape = (layer.filters,)
        elif layer.kind == "dense":
            fan_in, fan_out = shape[0], layer.units
            wshape = (shape[0], layer.units)
            bshape = (layer.units,)
        else:
            params.layers.append(None)
            shape = out_shape
            continue
        stream = rng.child(f"layer{i}")
        if layer.activation == "relu":
            weight = stream.normal(0.0, np.sqrt(2.0 / fan_in), wshape)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weight = stream.uniform(-limit, limit, wshape)
        params.layers.append(
            LayerParams(weight.astype(dtype), np.zeros(bshape, dtype=dtype))
        )
        shape = out_shape
    return params


def check_parameters(spec: NetworkSpec, params: Parameters) -> None:
    shapes = infer_shapes(spec)
    if len(params.layers) != len(spec.layers):
        raise NetworkError(
            f"parameter list length {len(params.layers)} does not match "
            f"{len(spec.layers)} layers"
        )
    shape = tuple(spec.input_shape)
    for i, (layer, out_shape) in enumerate(zip(spec.layers, shapes)):
        lp = params.layers[i]
        if layer.kind == "conv2d":
            expect_w = (KERNEL_SIZE, KERNEL_SIZE, shape[2], layer.filters)
            expect_b = (layer.filters,)
        elif layer.kind == "dense":
            expect_w = (shape[0], layer.units)
            expect_b = (layer.units,)
        else:
            if lp is not None:
                raise NetworkError(f"layer {i} ({layer.kind}) must not carry parameters")
            shape = out_shape
            continue
        if lp is None or lp.weight is None or lp.bias is None:
            raise NetworkError(f"layer {i} ({layer.kind}) is missing parameters")
        if lp.weight.shape != expect_w or lp.bias.shape != expect_b:
            raise NetworkError(
                f"layer {i}: expected weight {expect_w} / bias {expect_b}, "
                f"got {lp.weight.shape} / {lp.bias.shape}"
            )
        shape = out_shape


def forward(spec: NetworkSpec, params: Parameters, batch: Tensor):
    """Class probabilities for a (B,H,W,C) batch, plus the backward cache.

    A single (H,W,C) sample is accepted and returns a (K,) probability
    vector computed through the identical batched path.
    """
    single = batch.ndim == 3
    x = batch[None] if single else batch
    if x.ndim != 4 or x.shape[1:] != tuple(spec.input_shape):
        raise NetworkError(
            f"batch shape {batch.shape} does not match input {spec.input_shape}"
        )
    cache = []
    for layer, lp in zip(spec.layers, params.layers):
        if layer.kind == "conv2d":
            pre = conv2d_batch(x, lp.weight, lp.bias)
            out = relu(pre) if layer.activation == "relu" else pre
            cache.append({"x": x, "pre": pre})
        elif layer.kind == "maxpool2d":
            out, argmax = maxpool2d_batch(x)
            cache.append({"x_shape": x.shape, "argmax": argmax})
        elif layer.kind == "flatten":
            out = x.reshape(x.shape[0], -1)
            cache.append({"in_shape": x.shape})
        else:  # dense
            pre = dense_forward(x, lp.weight, lp.bias)
            if layer.activation == "relu":
                out = relu(pre)
            elif layer.activation == "softmax":
                out = softmax(pre)
            else:
                out = pre
            cache.append({"x": x, "pre": pre})
        x = out
    probs = x
    cache.append({"probs": probs})
    return (probs[0], cache) if single else (probs, cache)


def l2_penalty(params: Parameters, lam: float) -> float:
    """lam * sum of squared weights; biases are exempt."""
    if not lam:
        return 0.0
    return lam * sum(
        float(np.sum(lp.weight.astype(np.float64) ** 2))
        for lp in params.layers
        if lp is not None
    )


def loss(probs: Tensor, onehot: Tensor, params: Parameters, lam: float) -> float:
    """Mean categorical cross-entropy plus lam * sum(w^2) over weights."""
    p = np.atleast_2d(probs)
    y = np.atleast_2d(onehot)
    ce = -np.sum(y * np.log(np.maximum(p, LOG_EPSILON))) / p.shape[0]
    return float(ce) + l2_penalty(params, lam)


def backward(
    spec: NetworkSpec,
    params: Parameters,
    cache: list,
    onehot: Tensor,
    lam: float = 0.0,
) -> Parameters:
    """Analytic gradients of :func:`loss` for the cached forward batch."""
    if spec.layers[-1].activation != "softmax":
        raise NetworkError("backward requires a softmax final layer")
    probs = cache[-1]["probs"]
    y = np.atleast_2d(onehot).astype(probs.dtype)
    batch = probs.shape[0]
    dout = (probs - y) / batch

    grads = Parameters([None] * len(spec.layers))
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        entry = cache[i]
        if layer.kind == "dense":
            if layer.activation == "relu":
                dout = relu_backward(entry["pre"], dout)
            # softmax gradient is already fused into dout at the logits
            dout, dw, db = dense_backward(entry["x"], params.layers[i].weight, dout)
            grads.layers[i] = LayerParams(dw, db)
        elif layer.kind == "flatten":
            dout = dout.reshape(entry["in_shape"])
        elif layer.kind == "maxpool2d":
            dout = maxpool2d_backward(entry["x_shape"], entry["argmax"], dout)
        else:  # conv2d
            if layer.activation == "relu":
                dout = relu_backward(entry["pre"], dout)
            dout, dw, db = conv2d_backward(entry["x"], params.layers[i].weight, dout)
            grads.layers[i] = LayerParams(dw, db)

    if lam:
        for lp, g in zip(params.layers, grads.layers):
            if lp is not None:
                g.weight += 2.0 * lam * lp.weight
    return grads


# ---------------------------------------------------------------------------
# Weight serialization
# ---------------------------------------------------------------------------


def _spec_to_header(spec: NetworkSpec) -> dict:
    return {
        "format": "grainforge-weights",
        "version": 1,
        "dtype": "f32",
        "input_shape": list(spec.input_shape),
        "num_classes": spec.num_classes,
        "layers": [
            {
                "kind": layer.kind,
                "filters": layer.filters,
                "units": layer.units,
                "activation": layer.activation,
            }
            for layer in spec.layers
        ],
    }


def save_weights(spec: NetworkSpec, params: Parameters, path) -> None:
    """Write the bit-exact weights container; params are stored as float32."""
    check_parameters(spec, params)
    header = _spec_to_header(spec)
    tensors = []
    blobs = []
    for i, lp in enumerate(params.layers):
        if lp is None:
            continue
        for name, arr in (("weight", lp.weight), ("bias", lp.bias)):
            tensors.append({"layer": i, "name": name, "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header["tensors"] = tensors
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_weights(path) -> tuple[NetworkSpec, Parameters]:
    """Read a weights container back into (spec, float32 parameters)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:3] == MAGIC[:3] and data[:4] != MAGIC:
        raise WeightsFormatError(
            f"unsupported weights version {data[3:4]!r}, expected {MAGIC[3:4]!r}", 3
        )
    if data[:4] != MAGIC:
        raise WeightsFormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", 0)
    if len(data) < 12:
        raise WeightsFormatError("truncated header length field", len(data))
    (header_len,) = struct.unpack("<Q", data[4:12])
    if len(data) < 12 + header_len:
        raise WeightsFormatError("truncated JSON header", len(data))
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"unreadable JSON header: {exc}", 12) from exc
    if header.get("version") != 1:
        raise WeightsFormatError(f"unsupported header version {header.get('version')}", 12)
    if header.get("dtype") != "f32":
        raise WeightsFormatError(f"unsupported dtype {header.get('dtype')!r}", 12)

    spec = NetworkSpec(
        input_shape=tuple(header["input_shape"]),
        layers=tuple(
            LayerSpec(
                kind=entry["kind"],
                filters=entry["filters"],
                units=entry["units"],
                activation=entry["activation"],
            )
            for entry in header["layers"]
        ),
        num_classes=header["num_classes"],
    )
    infer_shapes(spec)

    params = Parameters([None] * len(spec.layers))
    pos = 12 + header_len
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape))
        if len(data) - pos < nbytes:
            raise WeightsFormatError(
                f"truncated tensor payload for layer {entry['layer']} {entry['name']}",
                len(data),
            )
        arr = np.frombuffer(data, dtype="<f4", count=int(np.prod(shape)), offset=pos)
        arr = arr.reshape(shape).copy()
        pos += nbytes
        i = entry["layer"]
        if params.layers[i] is None:
            params.layers[i] = LayerParams(None, None)  # filled by both names
        setattr(params.layers[i], entry["name"], arr)
    if pos != len(data):
        raise WeightsFormatError(f"{len(data) - pos} unexpected trailing bytes", pos)
    check_parameters(spec, params)
    return spec, params
