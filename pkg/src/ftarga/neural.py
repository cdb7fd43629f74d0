"""Small dense value networks with hand-written exact gradients.

Everything here is float64 numpy. A network is one to three hidden layers of
a fixed activation followed by a linear read-out; parameters live in a single
flat vector so the optimizer and checkpoint code never care about shapes.

Flat layout (documented, relied on by tests and checkpoints):
    [read-out weights (last width,),
     layer-1 weights row-major (width1 * input_dim,), layer-1 biases (width1,),
     layer-2 weights row-major, layer-2 biases, ...]
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("sigmoid", "relu")
CHECKPOINT_FORMAT = "ftarga-mlp"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Non-finite numbers reached the optimizer; carries the offending step."""

    def __init__(self, step: int, detail: str = "non-finite gradient"):
        self.step = step
        super().__init__(f"{detail} at optimizer step {step}")


def _layout(input_dim: int, widths: tuple[int, ...]):
    """Slices into the flat vector: (total, readout_slice, [(w_sl, b_sl, shape)])."""
    off = widths[-1]
    readout = slice(0, off)
    per_layer = []
    fan_in = input_dim
    for w in widths:
        w_sl = slice(off, off + w * fan_in)
        off += w * fan_in
        b_sl = slice(off, off + w)
        off += w
        per_layer.append((w_sl, b_sl, (w, fan_in)))
        fan_in = w
    return off, readout, per_layer


@dataclass
class MlpParams:
    """Network shape plus the flat parameter vector.

    ``widths`` holds the hidden-layer widths (depth 1 to 3). ``output_clip``,
    when set to B, clamps the read-out to [-B, B]; the parameter gradient is
    zero wherever the clamp is active.
    """

    input_dim: int
    widths: tuple[int, ...]
    activation: str = "sigmoid"
    output_clip: float | None = None
    theta: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not 1 <= len(self.widths) <= 3 or min(self.widths) < 1:
            raise ValueError(f"widths must be 1-3 positive ints, got {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_clip is not None and not self.output_clip > 0:
            raise ValueError("output_clip must be positive or None")
        n, self._readout_sl, self._layer_sl = _layout(self.input_dim, self.widths)
        if self.theta is None:
            self.theta = np.zeros(n)
        else:
            self.theta = np.asarray(self.theta, dtype=np.float64)
            if self.theta.shape != (n,):
                raise ValueError(
                    f"theta has shape {self.theta.shape}, layout needs ({n},)"
                )

    @property
    def width(self) -> int:
        return self.widths[0]

    @property
    def n_params(self) -> int:
        return self.theta.size

    @property
    def readout_weights(self) -> np.ndarray:
        return self.theta[self._readout_sl]

    def layer_weights(self, layer: int) -> np.ndarray:
        w_sl, _, shape = self._layer_sl[layer]
        return self.theta[w_sl].reshape(shape)

    def layer_biases(self, layer: int) -> np.ndarray:
        _, b_sl, _ = self._layer_sl[layer]
        return self.theta[b_sl]

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.input_dim, self.widths, self.activation, self.output_clip,
            self.theta.copy(),
        )


def init_params(
    seed,
    input_dim: int,
    width: int,
    activation: str = "sigmoid",
    output_clip: float | None = None,
    depth: int = 1,
    scale_rule: str = "fan-in-uniform",
) -> MlpParams:
    """Deterministic init: every weight uniform on (-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Hidden layers see fan_in = their input width (input_dim for the first);
    the read-out sees fan_in = the last hidden width. Same seed, same params.
    """
    if scale_rule != "fan-in-uniform":
        raise ValueError(f"unknown scale_rule {scale_rule!r}")
    widths = (width,) * depth
    params = MlpParams(input_dim, widths, activation, output_clip)
    rng = np.random.default_rng(seed)
    s = 1.0 / np.sqrt(widths[-1])
    params.readout_weights[:] = rng.uniform(-s, s, size=widths[-1])
    fan_in = input_dim
    for layer, w in enumerate(widths):
        s = 1.0 / np.sqrt(fan_in)
        params.layer_weights(layer)[:] = rng.uniform(-s, s, size=(w, fan_in))
        params.layer_biases(layer)[:] = rng.uniform(-s, s, size=w)
        fan_in = w
    return params


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        # exp may overflow for very negative z; the limit 0.0 is the right value
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-z))
    return np.maximum(z, 0.0)


def _activate_deriv(h: np.ndarray, z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return h * (1.0 - h)
    # relu: derivative taken as 0 at the kink
    return (z > 0.0).astype(np.float64)


def _check_batch(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(
            f"expected points of shape (n, {params.input_dim}), got {x.shape}"
        )
    return x


def forward_many(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Network values at a batch of points, shape (n, input_dim) -> (n,)."""
    h = _check_batch(params, x)
    for layer in range(len(params.widths)):
        z = h @ params.layer_weights(layer).T + params.layer_biases(layer)
        h = _activate(z, params.activation)
    out = h @ params.readout_weights
    if params.output_clip is not None:
        b = params.output_clip
        out = np.clip(out, -b, b)
    return out


def forward(params: MlpParams, x) -> float:
    """Network value at a single point."""
    return float(forward_many(params, np.asarray(x, dtype=np.float64)[None, :])[0])


def value_and_grad_many(params: MlpParams, x: np.ndarray):
    """Values and exact parameter gradients at a batch of points.

    Returns (values (n,), grads (n, n_params)) with gradient columns in the
    flat layout order. Reverse mode by hand; no autodiff anywhere.
    """
    x = _check_batch(params, x)
    n = x.shape[0]
    depth = len(params.widths)
    hs = [x]          # inputs to each layer
    derivs = []       # activation derivative at each layer
    h = x
    for layer in range(depth):
        z = h @ params.layer_weights(layer).T + params.layer_biases(layer)
        h = _activate(z, params.activation)
        derivs.append(_activate_deriv(h, z, params.activation))
        hs.append(h)
    a = params.readout_weights
    raw = h @ a

    grads = np.empty((n, params.n_params))
    grads[:, params._readout_sl] = h
    delta = a[None, :] * derivs[-1]
    for layer in range(depth - 1, -1, -1):
        w_sl, b_sl, _ = params._layer_sl[layer]
        grads[:, w_sl] = (delta[:, :, None] * hs[layer][:, None, :]).reshape(n, -1)
        grads[:, b_sl] = delta
        if layer > 0:
            delta = (delta @ params.layer_weights(layer)) * derivs[layer - 1]

    if params.output_clip is not None:
        b = params.output_clip
        saturated = (raw > b) | (raw < -b)
        if saturated.any():
            grads[saturated] = 0.0
        values = np.clip(raw, -b, b)
    else:
        values = raw
    return values, grads


def grad_params(params: MlpParams, x) -> np.ndarray:
    """Exact gradient of the network value w.r.t. the flat parameter vector."""
    _, g = value_and_grad_many(params, np.asarray(x, dtype=np.float64)[None, :])
    return g[0]


def pinned_value_many(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """forward(x) - forward(0) + 1, vectorized; exactly 1.0 at the origin."""
    x = _check_batch(params, x)
    pin = forward_many(params, np.zeros((1, params.input_dim)))[0]
    return forward_many(params, x) - pin + 1.0


def pinned_value(params: MlpParams, x) -> float:
    return float(pinned_value_many(params, np.asarray(x, dtype=np.float64)[None, :])[0])


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    """Bias-corrected Adam moments. ``first``/``second`` match theta's layout."""

    step_size: float
    first: np.ndarray
    second: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0 or self.step_size <= 0:
            raise ValueError("step_size and eps must be positive")


def init_adam(
    n_params: int,
    step_size: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    return AdamState(step_size, np.zeros(n_params), np.zeros(n_params),
                     0, beta1, beta2, eps)


def adam_step(state: AdamState, params: MlpParams, grad: np.ndarray):
    """One Adam update. Mutates ``state`` and ``params`` in place and returns them.

    Raises TrainingDiverged (with the 1-based step index) if the gradient has
    non-finite entries.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.theta.shape:
        raise ValueError(f"grad shape {grad.shape} != theta shape {params.theta.shape}")
    if not np.isfinite(grad).all():
        raise TrainingDiverged(state.t + 1)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.first *= b1
    state.first += (1.0 - b1) * grad
    state.second *= b2
    state.second += (1.0 - b2) * np.square(grad)
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    denom = np.sqrt(state.second / corr2)
    denom += state.eps
    params.theta -= (state.step_size / corr1) * state.first / denom
    return state, params


# ---------------------------------------------------------------------------
# Checkpoints

def save_params(path, params: MlpParams) -> None:
    """Write a versioned JSON checkpoint; float round-trip is exact."""
    record = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_dim": params.input_dim,
        "widths": list(params.widths),
        "activation": params.activation,
        "output_clip": params.output_clip,
        "theta": params.theta.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(record, fh)
        fh.write("\n")


def load_params(path) -> MlpParams:
    with open(path) as fh:
        record = json.load(fh)
    if record.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {record.get('version')}")
    return MlpParams(
        record["input_dim"],
        tuple(record["widths"]),
        record["activation"],
        record["output_clip"],
        np.array(record["theta"], dtype=np.float64),
    )
