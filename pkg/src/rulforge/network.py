"""Network graphs: layer descriptors, parameters, forward/backward, files.

A network is a ``NetworkSpec``: an input shape plus an ordered tuple of
typed layer descriptors (Conv, Pool, Flatten, Dense). Parameters live
outside the spec in a ``ParamSet`` (arrays plus Adam moment estimates),
so updates are functional: every optimizer step returns a fresh
ParamSet and never mutates the old one.

``forward`` records a tape of intermediates; ``backward`` consumes the
tape and returns exact parameter gradients. Dense layers are named
"fc_1", "fc_2", ... in order of appearance, and forward can expose
their post-activation outputs as taps, which is how one network's
hidden representation becomes another network's input.

Model files are a single JSON header line (spec, array names/shapes,
step count, caller metadata) followed by the raw little-endian float64
payload: weight arrays in declaration order, then first-moment arrays,
then second-moment arrays. Save/load round trips are bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ShapeError
from .netops import (
    ACTIVATIONS,
    activation_backward,
    activation_forward,
    conv2d_backward,
    conv2d_forward,
    conv_output_dims,
    dense_backward,
    dense_forward,
    dropout_mask,
    maxpool_2x1_backward,
    maxpool_2x1_forward,
    penalty_grad,
    penalty_value,
    rmse_loss_grad,
)

MODEL_FORMAT = "rulforge-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class Conv:
    filters: int
    kernel: tuple[int, int]
    dilation: int = 1
    activation: str = "tanh"


@dataclass(frozen=True)
class Pool:
    """2x1 max pool, stride 2 on the height axis."""


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = "identity"
    dropout: float = 0.0


class NetworkSpec:
    """Validated layer graph; computes every intermediate shape once."""

    __slots__ = ("input_shape", "layers", "shapes", "dense_names")

    def __init__(self, input_shape: tuple[int, int, int], layers):
        input_shape = tuple(int(d) for d in input_shape)
        layers = tuple(layers)
        if len(input_shape) != 3 or min(input_shape) < 1:
            raise ShapeError(f"input shape must be 3 positive dims, got {input_shape}")
        if not layers:
            raise ShapeError("a network needs at least one layer")

        shapes = []
        names = {}
        fc_ordinal = 0
        shape: tuple = input_shape
        for i, layer in enumerate(layers):
            if isinstance(layer, Conv):
                if len(shape) != 3:
                    raise ShapeError(f"layer {i}: conv needs a 3-d input, have {shape}")
                kh, kw = layer.kernel
                if kh < 1 or kw < 1 or layer.filters < 1 or layer.dilation < 1:
                    raise ShapeError(f"layer {i}: bad conv geometry {layer}")
                if layer.activation not in ACTIVATIONS:
                    raise ShapeError(f"layer {i}: unknown activation {layer.activation!r}")
                ho, wo = conv_output_dims(shape[0], shape[1], kh, kw, layer.dilation)
                if ho < 1 or wo < 1:
                    raise ShapeError(
                        f"layer {i}: kernel {kh}x{kw} at dilation {layer.dilation} "
                        f"does not fit input {shape[0]}x{shape[1]}"
                    )
                shape = (ho, wo, layer.filters)
            elif isinstance(layer, Pool):
                if len(shape) != 3:
                    raise ShapeError(f"layer {i}: pool needs a 3-d input, have {shape}")
                if shape[0] < 2:
                    raise ShapeError(f"layer {i}: cannot 2x1-pool height {shape[0]}")
                shape = (shape[0] // 2, shape[1], shape[2])
            elif isinstance(layer, Flatten):
                if len(shape) != 3:
                    raise ShapeError(f"layer {i}: flatten needs a 3-d input, have {shape}")
                shape = (shape[0] * shape[1] * shape[2],)
            elif isinstance(layer, Dense):
                if len(shape) != 1:
                    raise ShapeError(f"layer {i}: dense needs a flat input, have {shape}")
                if layer.units < 1:
                    raise ShapeError(f"layer {i}: dense units must be >= 1")
                if layer.activation not in ACTIVATIONS:
                    raise ShapeError(f"layer {i}: unknown activation {layer.activation!r}")
                if not 0.0 <= layer.dropout < 1.0:
                    raise ShapeError(f"layer {i}: dropout must lie in [0, 1)")
                fc_ordinal += 1
                names[i] = f"fc_{fc_ordinal}"
                shape = (layer.units,)
            else:
                raise ShapeError(f"layer {i}: unknown layer type {type(layer).__name__}")
            shapes.append(shape)

        object.__setattr__(self, "input_shape", input_shape)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "shapes", tuple(shapes))
        object.__setattr__(self, "dense_names", names)

    def __setattr__(self, name, value):
        raise AttributeError("NetworkSpec is immutable")

    @property
    def output_shape(self) -> tuple:
        return self.shapes[-1]

    @property
    def tap_names(self) -> tuple[str, ...]:
        return tuple(self.dense_names[i] for i in sorted(self.dense_names))

    def tap_width(self, name: str) -> int:
        for i, nm in self.dense_names.items():
            if nm == name:
                return self.layers[i].units
        raise ValueError(f"no dense layer named {name!r}; have {self.tap_names}")

    def param_shapes(self) -> dict[str, tuple]:
        """Array name -> shape, in declaration (layer) order."""
        out: dict[str, tuple] = {}
        shape: tuple = self.input_shape
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                kh, kw = layer.kernel
                out[f"L{i}.kernel"] = (kh, kw, shape[2], layer.filters)
                out[f"L{i}.bias"] = (layer.filters,)
            elif isinstance(layer, Dense):
                out[f"L{i}.weight"] = (shape[0], layer.units)
                out[f"L{i}.bias"] = (layer.units,)
            shape = self.shapes[i]
        return out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            if isinstance(layer, Conv):
                layers.append({
                    "kind": "conv", "filters": layer.filters,
                    "kernel": list(layer.kernel), "dilation": layer.dilation,
                    "activation": layer.activation,
                })
            elif isinstance(layer, Pool):
                layers.append({"kind": "pool"})
            elif isinstance(layer, Flatten):
                layers.append({"kind": "flatten"})
            else:
                layers.append({
                    "kind": "dense", "units": layer.units,
                    "activation": layer.activation, "dropout": layer.dropout,
                })
        return {"input_shape": list(self.input_shape), "layers": layers}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        layers = []
        for ld in d["layers"]:
            kind = ld["kind"]
            if kind == "conv":
                layers.append(Conv(
                    filters=int(ld["filters"]), kernel=tuple(ld["kernel"]),
                    dilation=int(ld["dilation"]), activation=ld["activation"],
                ))
            elif kind == "pool":
                layers.append(Pool())
            elif kind == "flatten":
                layers.append(Flatten())
            elif kind == "dense":
                layers.append(Dense(
                    units=int(ld["units"]), activation=ld["activation"],
                    dropout=float(ld["dropout"]),
                ))
            else:
                raise ParseError(f"unknown layer kind {kind!r}")
        return cls(tuple(d["input_shape"]), layers)

    def __eq__(self, other):
        return (
            isinstance(other, NetworkSpec)
            and self.input_shape == other.input_shape
            and self.layers == other.layers
        )

    def __repr__(self):
        return f"NetworkSpec(input={self.input_shape}, layers={len(self.layers)}, params={self.n_params})"


@dataclass
class ParamSet:
    """Weight arrays plus Adam moment estimates; treated as immutable."""

    arrays: dict
    m: dict
    v: dict
    t: int = 0

    def copy(self) -> "ParamSet":
        return ParamSet(dict(self.arrays), dict(self.m), dict(self.v), self.t)


def params_equal(a: ParamSet, b: ParamSet) -> bool:
    """Bit-exact equality, Adam state included."""
    if a.t != b.t or a.arrays.keys() != b.arrays.keys():
        return False
    return all(
        np.array_equal(a.arrays[k], b.arrays[k])
        and np.array_equal(a.m[k], b.m[k])
        and np.array_equal(a.v[k], b.v[k])
        for k in a.arrays
    )


def init_params(spec: NetworkSpec, seed) -> ParamSet:
    """Glorot-uniform weights, zero biases, zero Adam moments."""
    rng = np.random.default_rng(seed)
    arrays: dict = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".bias"):
            arrays[name] = np.zeros(shape, dtype=np.float64)
        elif name.endswith(".kernel"):
            kh, kw, cin, f = shape
            fan_in, fan_out = kh * kw * cin, kh * kw * f
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
        else:
            fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
    zeros = {k: np.zeros_like(w) for k, w in arrays.items()}
    return ParamSet(arrays, dict(zeros), {k: z.copy() for k, z in zeros.items()}, t=0)


class Tape:
    """Intermediates saved by forward for one backward pass."""

    __slots__ = ("params", "train", "records", "out_shape")

    def __init__(self, params, train):
        self.params = params
        self.train = train
        self.records = []
        self.out_shape = None


def forward(
    spec: NetworkSpec,
    params: ParamSet,
    x: np.ndarray,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
    taps: dict | None = None,
):
    """Run the network on a batch; returns (output, tape).

    `x` must be (batch, *input_shape) for convolutional inputs or
    (batch, dim) for flat ones. With train=True, dense dropout is
    active and draws its masks from `rng`. If a dict is passed as
    `taps`, each dense layer's post-activation output (before dropout)
    is stored under its "fc_i" name.
    """
    x = np.asarray(x, dtype=np.float64)
    expect = spec.input_shape if len(spec.input_shape) == 3 else spec.input_shape
    if x.shape[1:] != expect:
        raise ShapeError(f"batch shape {x.shape[1:]} does not match network input {expect}")
    needs_drop = train and any(
        isinstance(l, Dense) and l.dropout > 0 for l in spec.layers
    )
    if needs_drop and rng is None:
        raise ValueError("training forward with dropout needs an rng")

    tape = Tape(params, train)
    cur = x
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            kernel = params.arrays[f"L{i}.kernel"]
            bias = params.arrays[f"L{i}.bias"]
            z = conv2d_forward(cur, kernel, bias, layer.dilation)
            y = activation_forward(layer.activation, z)
            tape.records.append(("conv", cur, z, y))
            cur = y
        elif isinstance(layer, Pool):
            y, argmax = maxpool_2x1_forward(cur)
            tape.records.append(("pool", cur.shape, argmax))
            cur = y
        elif isinstance(layer, Flatten):
            tape.records.append(("flatten", cur.shape))
            cur = cur.reshape(cur.shape[0], -1)
        else:
            weight = params.arrays[f"L{i}.weight"]
            bias = params.arrays[f"L{i}.bias"]
            z = dense_forward(cur, weight, bias)
            a = activation_forward(layer.activation, z)
            if taps is not None:
                taps[spec.dense_names[i]] = a
            mask = None
            if train and layer.dropout > 0:
                mask = dropout_mask(a.shape, layer.dropout, rng)
                y = a * mask
            else:
                y = a
            tape.records.append(("dense", cur, z, a, mask))
            cur = y
    tape.out_shape = cur.shape
    return cur, tape


def backward(spec: NetworkSpec, params: ParamSet, tape: Tape, dout: np.ndarray) -> dict:
    """Exact parameter gradients for the forward pass recorded on `tape`."""
    if tape.params is not params:
        raise ValueError("tape was recorded with a different ParamSet; rerun forward")
    if dout.shape != tape.out_shape:
        raise ShapeError(f"dout shape {dout.shape} does not match output {tape.out_shape}")
    grads: dict = {}
    cur = np.asarray(dout, dtype=np.float64)
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        rec = tape.records[i]
        if isinstance(layer, Conv):
            _, x_in, z, y = rec
            dz = activation_backward(layer.activation, z, y, cur)
            cur, dk, db = conv2d_backward(x_in, params.arrays[f"L{i}.kernel"], layer.dilation, dz)
            grads[f"L{i}.kernel"] = dk
            grads[f"L{i}.bias"] = db
        elif isinstance(layer, Pool):
            _, in_shape, argmax = rec
            cur = maxpool_2x1_backward(cur, argmax, in_shape)
        elif isinstance(layer, Flatten):
            _, in_shape = rec
            cur = cur.reshape(in_shape)
        else:
            _, x_in, z, a, mask = rec
            if mask is not None:
                cur = cur * mask
            dz = activation_backward(layer.activation, z, a, cur)
            cur, dw, db = dense_backward(x_in, params.arrays[f"L{i}.weight"], dz)
            grads[f"L{i}.weight"] = dw
            grads[f"L{i}.bias"] = db
    return grads


def predict(spec: NetworkSpec, params: ParamSet, x: np.ndarray) -> np.ndarray:
    """Evaluation-mode forward; size-1 outputs come back as a (batch,) vector."""
    out, _ = forward(spec, params, x, train=False)
    if out.ndim == 2 and out.shape[1] == 1:
        return out[:, 0]
    return out


def predict_batched(
    spec: NetworkSpec, params: ParamSet, x: np.ndarray, chunk: int = 256
) -> np.ndarray:
    """predict() in bounded-memory chunks along the batch axis."""
    if chunk < 1:
        raise ValueError(f"chunk must be >= 1, got {chunk}")
    outs = [predict(spec, params, x[lo : lo + chunk]) for lo in range(0, x.shape[0], chunk)]
    return np.concatenate(outs)


def weight_keys(params: ParamSet) -> tuple[str, ...]:
    """Penalized arrays: kernels and dense weights, never biases."""
    return tuple(k for k in params.arrays if k.endswith((".kernel", ".weight")))


def loss_and_grads(
    spec: NetworkSpec,
    params: ParamSet,
    x: np.ndarray,
    y: np.ndarray,
    *,
    l1: float = 0.0,
    l2: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    """One full pass: returns (data_loss, total_loss, grads).

    data_loss is the batch RMSE; total_loss adds the weight penalties
    and is what the gradients describe.
    """
    out, tape = forward(spec, params, x, train=train, rng=rng)
    data_loss, dflat = rmse_loss_grad(out, np.asarray(y, dtype=np.float64))
    grads = backward(spec, params, tape, dflat.reshape(tape.out_shape))
    wk = weight_keys(params)
    pen = penalty_value({k: params.arrays[k] for k in wk}, l1, l2)
    if l1 or l2:
        for k in wk:
            grads[k] = grads[k] + penalty_grad(params.arrays[k], l1, l2)
    return data_loss, data_loss + pen, grads


def adam_step(
    params: ParamSet,
    grads: dict,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamSet:
    """One bias-corrected Adam update; returns a new ParamSet."""
    t = params.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    arrays, ms, vs = {}, {}, {}
    for k, w in params.arrays.items():
        g = grads[k]
        m = beta1 * params.m[k] + (1.0 - beta1) * g
        v = beta2 * params.v[k] + (1.0 - beta2) * (g * g)
        arrays[k] = w - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        ms[k] = m
        vs[k] = v
    return ParamSet(arrays, ms, vs, t)


# ---------------------------------------------------------------------------
# Gradient verification.


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_err: float
    worst_array: str
    n_checked: int


def _perturbed(params: ParamSet, key: str, flat_idx: int, value: float) -> ParamSet:
    arrays = dict(params.arrays)
    w = arrays[key].copy()
    w.flat[flat_idx] = value
    arrays[key] = w
    return ParamSet(arrays, params.m, params.v, params.t)


def grad_check(
    spec: NetworkSpec,
    params: ParamSet,
    x: np.ndarray,
    y: np.ndarray,
    *,
    l1: float = 0.0,
    l2: float = 0.0,
    h: float = 1e-5,
    dropout_seed: int = 0,
    sample_per_array: int | None = None,
    sample_seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    The loss is total (data plus penalties). Dropout masks are redrawn
    from a generator freshly seeded with `dropout_seed` on every
    evaluation, so perturbed and unperturbed passes see identical
    masks. Relative error uses max(|analytic|, |numeric|, 1) as the
    denominator. With sample_per_array set, at most that many entries
    per array are checked (chosen deterministically via sample_seed).

    Relu networks are only piecewise differentiable, and two artifacts
    must not be mistaken for wrong gradients. A perturbation that
    carries a pre-activation across a kink (or flips a pool argmax)
    corrupts the central difference with an O(1) error that vanishes at
    a smaller step, so a disagreeing coordinate is re-measured at
    h/100. A coordinate sitting exactly on a kink (a dead layer under a
    zero-initialized bias does this reliably) has no two-sided
    derivative at any step; there the analytic value must match one of
    the two one-sided slopes, which is exactly the subgradient
    condition. A broken backward pass matches neither side.
    """
    uses_dropout = any(isinstance(l, Dense) and l.dropout > 0 for l in spec.layers)
    train = uses_dropout

    def total_loss(p: ParamSet) -> float:
        rng = np.random.default_rng(dropout_seed) if train else None
        out, _ = forward(spec, p, x, train=train, rng=rng)
        loss, _ = rmse_loss_grad(out, np.asarray(y, dtype=np.float64))
        wk = weight_keys(p)
        return loss + penalty_value({k: p.arrays[k] for k in wk}, l1, l2)

    rng = np.random.default_rng(dropout_seed) if train else None
    _, _, grads = loss_and_grads(spec, params, x, y, l1=l1, l2=l2, train=train, rng=rng)

    def rel_err(analytic: float, numeric: float) -> float:
        return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1.0)

    pick = np.random.default_rng(sample_seed)
    f0 = None  # unperturbed loss, needed only when a kink is suspected
    worst, worst_key, n_checked = 0.0, "", 0
    for key, w in params.arrays.items():
        if sample_per_array is not None and w.size > sample_per_array:
            idxs = pick.choice(w.size, size=sample_per_array, replace=False)
        else:
            idxs = np.arange(w.size)
        for flat_idx in idxs:
            orig = float(w.flat[flat_idx])
            analytic = float(grads[key].flat[flat_idx])
            rel = math.inf
            for step in (h, h / 100.0):
                up = total_loss(_perturbed(params, key, int(flat_idx), orig + step))
                down = total_loss(_perturbed(params, key, int(flat_idx), orig - step))
                rel = min(rel, rel_err(analytic, (up - down) / (2.0 * step)))
                if rel < 1e-5:
                    break
            if rel >= 1e-5:
                if f0 is None:
                    f0 = total_loss(params)
                rel = min(rel, rel_err(analytic, (up - f0) / step),
                          rel_err(analytic, (f0 - down) / step))
            n_checked += 1
            if rel > worst:
                worst, worst_key = rel, key
    return GradCheckReport(max_rel_err=worst, worst_array=worst_key, n_checked=n_checked)


# ---------------------------------------------------------------------------
# Model files.


def save_model(path, spec: NetworkSpec, params: ParamSet, extra: dict | None = None) -> None:
    """Write header line plus raw float64 payload; bit-exact on reload."""
    order = list(params.arrays.keys())
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "spec": spec.to_dict(),
        "arrays": [[k, list(params.arrays[k].shape)] for k in order],
        "step": params.t,
        "extra": extra if extra is not None else {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for group in (params.arrays, params.m, params.v):
            for k in order:
                fh.write(np.ascontiguousarray(group[k], dtype="<f8").tobytes())


def load_model(path):
    """Read a model file; returns (spec, params, extra)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise ParseError(f"{path}: missing header line")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad header: {exc}") from None
    if header.get("format") != MODEL_FORMAT:
        raise ParseError(f"{path}: not a model file (format {header.get('format')!r})")
    if header.get("version") != MODEL_VERSION:
        raise ParseError(f"{path}: unsupported version {header.get('version')!r}")
    spec = NetworkSpec.from_dict(header["spec"])
    names = [k for k, _ in header["arrays"]]
    shapes = {k: tuple(s) for k, s in header["arrays"]}
    expect = {k: tuple(s) for k, s in spec.param_shapes().items()}
    if shapes != expect:
        raise ParseError(f"{path}: array shapes disagree with the network spec")

    payload = blob[nl + 1 :]
    sizes = {k: int(np.prod(shapes[k])) for k in names}
    total = 3 * sum(sizes.values()) * 8
    if len(payload) != total:
        raise ParseError(f"{path}: payload is {len(payload)} bytes, expected {total}")
    groups = []
    offset = 0
    for _ in range(3):
        group = {}
        for k in names:
            nbytes = sizes[k] * 8
            arr = np.frombuffer(payload, dtype="<f8", count=sizes[k], offset=offset)
            group[k] = arr.astype(np.float64).reshape(shapes[k])
            offset += nbytes
        groups.append(group)
    params = ParamSet(groups[0], groups[1], groups[2], t=int(header["step"]))
    return spec, params, header.get("extra", {})
