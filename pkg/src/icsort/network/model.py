"""Three-branch convolutional classifier over component feature sets.

The scalp topography passes through three strided 4x4 convolutions
(32x32x1 -> 16x16x128 -> 8x8x256 -> 4x4x512).  The power spectrum and the
autocorrelation each pass through three strided length-3 convolutions
(100x1 -> 50x128 -> 25x256 -> 13x1), are zero-padded to 16 values, and are
reshaped to 4x4x1 maps.  The three maps are concatenated to 4x4x514 and a
final unpadded 4x4 convolution with 7 filters produces the category
logits, which a softmax turns into probabilities.

All hidden layers use leaky-ReLU activations with slope 0.2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..categories import N_CATEGORIES
from ..errors import DataError, NumericError
from . import convops

LEAKY_SLOPE = 0.2
PSD_PAD_TO = 16  # trailing zero-pad of the 13-value branch output


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one convolution layer."""

    name: str
    kind: str  # "conv2d" or "conv1d"
    kernel: int
    stride: int
    in_channels: int
    out_channels: int
    padding: str
    activation: str  # "lrelu" or "linear"

    @property
    def weight_shape(self) -> tuple:
        if self.kind == "conv2d":
            return (self.kernel, self.kernel, self.in_channels, self.out_channels)
        return (self.kernel, self.in_channels, self.out_channels)

    @property
    def fan_in(self) -> int:
        if self.kind == "conv2d":
            return self.kernel * self.kernel * self.in_channels
        return self.kernel * self.in_channels


def _branch_1d(prefix: str) -> tuple:
    return (
        LayerSpec(f"{prefix}1", "conv1d", 3, 2, 1, 128, "same", "lrelu"),
        LayerSpec(f"{prefix}2", "conv1d", 3, 2, 128, 256, "same", "lrelu"),
        LayerSpec(f"{prefix}3", "conv1d", 3, 2, 256, 1, "same", "lrelu"),
    )


ARCHITECTURE: tuple = (
    LayerSpec("topo1", "conv2d", 4, 2, 1, 128, "same", "lrelu"),
    LayerSpec("topo2", "conv2d", 4, 2, 128, 256, "same", "lrelu"),
    LayerSpec("topo3", "conv2d", 4, 2, 256, 512, "same", "lrelu"),
    *_branch_1d("psd"),
    *_branch_1d("acf"),
    LayerSpec("out", "conv2d", 4, 1, 514, N_CATEGORIES, "valid", "linear"),
)

LAYER_ORDER: tuple = tuple(spec.name for spec in ARCHITECTURE)
_SPEC_BY_NAME = {spec.name: spec for spec in ARCHITECTURE}


@dataclass
class NetworkWeights:
    """Kernel and bias arrays for every layer, keyed by layer name."""

    kernels: dict = field(default_factory=dict)
    biases: dict = field(default_factory=dict)
    version: int = 1

    def validate(self) -> None:
        for spec in ARCHITECTURE:
            if spec.name not in self.kernels or spec.name not in self.biases:
                raise DataError(f"weights are missing layer {spec.name!r}")
            k, b = self.kernels[spec.name], self.biases[spec.name]
            if k.shape != spec.weight_shape:
                raise DataError(
                    f"layer {spec.name!r} kernel must be {spec.weight_shape}, got {k.shape}"
                )
            if b.shape != (spec.out_channels,):
                raise DataError(
                    f"layer {spec.name!r} bias must be ({spec.out_channels},), got {b.shape}"
                )
            if not np.all(np.isfinite(k)) or not np.all(np.isfinite(b)):
                raise NumericError(f"layer {spec.name!r} contains non-finite weights")

    def astype(self, dtype) -> "NetworkWeights":
        return NetworkWeights(
            kernels={n: k.astype(dtype) for n, k in self.kernels.items()},
            biases={n: b.astype(dtype) for n, b in self.biases.items()},
            version=self.version,
        )

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(
            kernels={n: k.copy() for n, k in self.kernels.items()},
            biases={n: b.copy() for n, b in self.biases.items()},
            version=self.version,
        )

    @property
    def dtype(self):
        return self.kernels[LAYER_ORDER[0]].dtype


def _truncated_normal(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    """Normal(0, sigma) with draws beyond two sigma redrawn."""
    out = rng.normal(0.0, sigma, size=shape)
    bad = np.abs(out) > 2.0 * sigma
    while np.any(bad):
        out[bad] = rng.normal(0.0, sigma, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * sigma
    return out


def initialize_weights(seed: int = 0, dtype=np.float32) -> NetworkWeights:
    """Fresh weights: truncated-normal kernels with sigma = sqrt(2 / fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    weights = NetworkWeights()
    for spec in ARCHITECTURE:
        sigma = np.sqrt(2.0 / spec.fan_in)
        weights.kernels[spec.name] = _truncated_normal(rng, spec.weight_shape, sigma).astype(dtype)
        weights.biases[spec.name] = np.zeros(spec.out_channels, dtype=dtype)
    return weights


def _as_network_inputs(topo: np.ndarray, psd: np.ndarray, autocorr: np.ndarray, dtype):
    topo = np.asarray(topo, dtype=dtype)
    psd = np.asarray(psd, dtype=dtype)
    autocorr = np.asarray(autocorr, dtype=dtype)
    if topo.ndim != 3 or topo.shape[1:] != (32, 32):
        raise DataError(f"topo batch must be (n, 32, 32), got {topo.shape}")
    n = topo.shape[0]
    if psd.shape != (n, 100) or autocorr.shape != (n, 100):
        raise DataError("psd and autocorr batches must be (n, 100) matching the topo batch")
    return topo[..., None], psd[..., None], autocorr[..., None]


def _check_finite(name: str, activations: np.ndarray) -> None:
    if not np.all(np.isfinite(activations)):
        raise NumericError(f"non-finite activations in layer {name!r}")


def _run_branch(weights: NetworkWeights, prefix: str, x: np.ndarray, cache: dict | None):
    forward_fn = convops.conv2d_forward if prefix == "topo" else convops.conv1d_forward
    for i in (1, 2, 3):
        spec = _SPEC_BY_NAME[f"{prefix}{i}"]
        pre = forward_fn(
            x, weights.kernels[spec.name], weights.biases[spec.name], spec.stride, spec.padding
        )
        _check_finite(spec.name, pre)
        if cache is not None:
            cache[spec.name] = (x, pre)
        x = convops.leaky_relu(pre, LEAKY_SLOPE)
    return x


def forward(
    weights: NetworkWeights,
    topo: np.ndarray,
    psd: np.ndarray,
    autocorr: np.ndarray,
    cache: dict | None = None,
) -> np.ndarray:
    """Class probabilities (n, 7) for a batch of feature sets.

    Inputs are cast to the weight dtype.  When ``cache`` is a dict it is
    filled with per-layer (input, pre-activation) pairs for the backward
    pass.
    """
    weights.validate()
    xt, xp, xa = _as_network_inputs(topo, psd, autocorr, weights.dtype)
    n = xt.shape[0]

    topo_map = _run_branch(weights, "topo", xt, cache)
    psd_out = _run_branch(weights, "psd", xp, cache)
    acf_out = _run_branch(weights, "acf", xa, cache)

    pad = PSD_PAD_TO - psd_out.shape[1]
    psd_map = np.pad(psd_out, ((0, 0), (0, pad), (0, 0))).reshape(n, 4, 4, 1)
    acf_map = np.pad(acf_out, ((0, 0), (0, pad), (0, 0))).reshape(n, 4, 4, 1)
    merged = np.concatenate([topo_map, psd_map, acf_map], axis=3)

    spec = _SPEC_BY_NAME["out"]
    logits = convops.conv2d_forward(
        merged, weights.kernels["out"], weights.biases["out"], spec.stride, spec.padding
    ).reshape(n, N_CATEGORIES)
    _check_finite("out", logits)
    if cache is not None:
        cache["out"] = (merged, logits)
        cache["branch_len"] = psd_out.shape[1]
    probs = convops.softmax(logits)
    if cache is not None:
        cache["probs"] = probs
    return probs


def _branch_backward(weights: NetworkWeights, prefix: str, cache: dict, dy: np.ndarray, grads):
    backward_fn = convops.conv2d_backward if prefix == "topo" else convops.conv1d_backward
    for i in (3, 2, 1):
        spec = _SPEC_BY_NAME[f"{prefix}{i}"]
        x, pre = cache[spec.name]
        dy = dy * convops.leaky_relu_grad(pre, LEAKY_SLOPE)
        dy, dw, db = backward_fn(x, weights.kernels[spec.name], spec.stride, spec.padding, dy)
        grads[0][spec.name] = dw
        grads[1][spec.name] = db
    return dy  # gradient with respect to the branch input


def forward_backward(
    weights: NetworkWeights,
    topo: np.ndarray,
    psd: np.ndarray,
    autocorr: np.ndarray,
    targets: np.ndarray,
    class_weights: np.ndarray,
    return_input_grads: bool = False,
):
    """Loss, parameter gradients, and probabilities for one batch.

    Returns ``(loss, kernel_grads, bias_grads, probs)`` where the gradient
    dicts mirror the weight dicts and the loss is the batch mean of the
    class-weighted cross entropy.  With ``return_input_grads`` a fifth
    element maps "topo"/"psd"/"autocorr" to the loss gradient with respect
    to each input batch.
    """
    cache: dict = {}
    probs = forward(weights, topo, psd, autocorr, cache)
    targets = np.asarray(targets, dtype=probs.dtype)
    class_weights = np.asarray(class_weights, dtype=probs.dtype)
    if targets.shape != probs.shape:
        raise DataError(f"targets must be {probs.shape}, got {targets.shape}")

    loss = convops.weighted_cross_entropy(probs, targets, class_weights)
    dlogits = convops.softmax_cross_entropy_grad(probs, targets, class_weights)

    kernel_grads: dict = {}
    bias_grads: dict = {}
    grads = (kernel_grads, bias_grads)
    n = probs.shape[0]

    merged, _ = cache["out"]
    spec = _SPEC_BY_NAME["out"]
    dmerged, dw, db = convops.conv2d_backward(
        merged, weights.kernels["out"], spec.stride, spec.padding,
        dlogits.reshape(n, 1, 1, N_CATEGORIES),
    )
    kernel_grads["out"] = dw
    bias_grads["out"] = db

    dtopo = dmerged[:, :, :, :512]
    branch_len = cache["branch_len"]
    dpsd = dmerged[:, :, :, 512].reshape(n, PSD_PAD_TO, 1)[:, :branch_len, :]
    dacf = dmerged[:, :, :, 513].reshape(n, PSD_PAD_TO, 1)[:, :branch_len, :]

    din_topo = _branch_backward(weights, "topo", cache, dtopo, grads)
    din_psd = _branch_backward(weights, "psd", cache, dpsd, grads)
    din_acf = _branch_backward(weights, "acf", cache, dacf, grads)
    if return_input_grads:
        input_grads = {
            "topo": din_topo[..., 0],
            "psd": din_psd[..., 0],
            "autocorr": din_acf[..., 0],
        }
        return loss, kernel_grads, bias_grads, probs, input_grads
    return loss, kernel_grads, bias_grads, probs


def _forward_batched(weights, topo, psd, autocorr, batch_size):
    n = topo.shape[0]
    out = np.empty((n, N_CATEGORIES), dtype=np.float64)
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        out[start:stop] = forward(
            weights, topo[start:stop], psd[start:stop], autocorr[start:stop]
        )
    return out


def classify(
    weights: NetworkWeights,
    topo: np.ndarray,
    psd: np.ndarray,
    autocorr: np.ndarray,
    batch_size: int = 128,
) -> np.ndarray:
    """Orbit-averaged class probabilities (n, 7) for a batch of feature sets.

    Each feature set is evaluated four times (identity, mirrored topography,
    negated topography, both) and the probabilities are averaged in double
    precision, making the output invariant to those transforms of the input
    up to rounding.
    """
    topo = np.asarray(topo)
    psd = np.asarray(psd)
    autocorr = np.asarray(autocorr)
    if topo.ndim != 3:
        raise DataError(f"topo batch must be (n, 32, 32), got {topo.shape}")
    mirrored = topo[:, :, ::-1]
    total = _forward_batched(weights, topo, psd, autocorr, batch_size)
    total += _forward_batched(weights, mirrored, psd, autocorr, batch_size)
    total += _forward_batched(weights, -topo, psd, autocorr, batch_size)
    total += _forward_batched(weights, -mirrored, psd, autocorr, batch_size)
    return total / 4.0


def shape_trace(n: int = 1) -> dict:
    """Activation shapes of every layer for a batch of n, without any weights.

    Useful for auditing the graph: keys are layer names plus "merged" and
    "probs"; values are the output shapes produced by each stage.
    """
    shapes = {}
    size2d, size1d = 32, 100
    for spec in ARCHITECTURE[:3]:
        lead, trail = convops.same_padding(size2d, spec.kernel, spec.stride)
        size2d = (size2d + lead + trail - spec.kernel) // spec.stride + 1
        shapes[spec.name] = (n, size2d, size2d, spec.out_channels)
    for prefix in ("psd", "acf"):
        size = size1d
        for i in (1, 2, 3):
            spec = _SPEC_BY_NAME[f"{prefix}{i}"]
            lead, trail = convops.same_padding(size, spec.kernel, spec.stride)
            size = (size + lead + trail - spec.kernel) // spec.stride + 1
            shapes[spec.name] = (n, size, spec.out_channels)
    shapes["merged"] = (n, 4, 4, 514)
    shapes["out"] = (n, 1, 1, N_CATEGORIES)
    shapes["probs"] = (n, N_CATEGORIES)
    return shapes
