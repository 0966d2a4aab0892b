"""Encoder-decoder and dilated temporal conv nets on top of :mod:`tcn_seg.nn`.

Parameters live in a flat ``{name: ndarray}`` store. Forward passes record a
cache that the matching backward pass consumes, so a training step is
``forward -> cross_entropy -> backward -> adam_step``.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


def receptive_field_ed(d, L):
    """Frames covered by the encoder of an ED-TCN with ``L`` layers of duration ``d``."""
    if d < 1 or L < 1:
        raise ConfigError(f"need d >= 1 and L >= 1, got d={d}, L={L}")
    return d * (2**L - 1) + 1


def receptive_field_dilated(B, L):
    """Nominal receptive field of ``B`` blocks with ``L`` dilated layers each."""
    if B < 1 or L < 1:
        raise ConfigError(f"need B >= 1 and L >= 1, got B={B}, L={L}")
    return B * 2**L


# --------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class EDTCNSpec:
    num_classes: int
    input_dim: int
    num_layers: int = 2
    filter_duration: int = 15
    activation: str = "normalized_relu"
    causal: bool = False
    filters: tuple = None  # per-layer override of 96 + 32*l

    kind = "ed_tcn"

    def __post_init__(self):
        if self.filters is not None:
            object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        _validate_common(self)
        if self.num_layers < 1 or self.filter_duration < 1:
            raise ConfigError("ED-TCN needs num_layers >= 1 and filter_duration >= 1")
        if self.filters is not None and (
            len(self.filters) != self.num_layers or min(self.filters) < 1
        ):
            raise ConfigError(f"filters must list {self.num_layers} positive counts")

    @property
    def layer_filters(self):
        if self.filters is not None:
            return self.filters
        return tuple(96 + 32 * l for l in range(1, self.num_layers + 1))

    @property
    def receptive_field(self):
        return receptive_field_ed(self.filter_duration, self.num_layers)

    @property
    def mode(self):
        return "causal" if self.causal else "acausal"


@dataclass(frozen=True)
class DilatedTCNSpec:
    num_classes: int
    input_dim: int
    num_blocks: int = 4
    layers_per_block: int = 5
    width: int = 128
    activation: str = "gated"
    causal: bool = False

    kind = "dilated_tcn"

    def __post_init__(self):
        _validate_common(self)
        if self.num_blocks < 1 or self.layers_per_block < 1 or self.width < 1:
            raise ConfigError("dilated TCN needs num_blocks, layers_per_block and width >= 1")

    @property
    def dilations(self):
        """Dilation of every layer in stacking order: ``2**l`` for l = 0..L-1, per block."""
        return [2**l for _ in range(self.num_blocks) for l in range(self.layers_per_block)]

    @property
    def taps(self):
        return 2 if self.causal else 3

    @property
    def receptive_field(self):
        return receptive_field_dilated(self.num_blocks, self.layers_per_block)

    @property
    def mode(self):
        return "causal" if self.causal else "acausal"


SPEC_TYPES = {cls.kind: cls for cls in (EDTCNSpec, DilatedTCNSpec)}


def _validate_common(spec):
    if spec.num_classes < 1 or spec.input_dim < 1:
        raise ConfigError("num_classes and input_dim must be >= 1")
    if spec.activation not in nn.ACTIVATIONS:
        raise ConfigError(f"unknown activation {spec.activation!r}")


def spec_to_dict(spec):
    out = {"kind": spec.kind}
    for name in spec.__dataclass_fields__:
        value = getattr(spec, name)
        out[name] = list(value) if isinstance(value, tuple) else value
    return out


def spec_from_dict(record):
    record = dict(record)
    kind = record.pop("kind", None)
    if kind not in SPEC_TYPES:
        raise ConfigError(f"unknown model kind {kind!r}")
    try:
        return SPEC_TYPES[kind](**record)
    except TypeError as exc:
        raise ConfigError(f"bad {kind} spec record: {exc}") from None


# --------------------------------------------------------------------------
# model container


@dataclass(frozen=True)
class TrainedModel:
    """A spec with its parameters. Parameter arrays are read-only."""

    spec: object
    params: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for value in self.params.values():
            value.flags.writeable = False

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def forward(self, features):
        return forward(self, features)

    def predict(self, features):
        return predict_labels(self, features)


def parameter_shapes(spec):
    """Ordered ``{name: shape}`` for every learnable array of ``spec``."""
    shapes = {}
    act = spec.activation
    if isinstance(spec, EDTCNSpec):
        d, fl = spec.filter_duration, spec.layer_filters
        prev = spec.input_dim
        for l, width in enumerate(fl, start=1):
            shapes[f"enc{l}.w"] = (nn.activation_width(act, width), prev, d)
            shapes[f"enc{l}.b"] = (nn.activation_width(act, width),)
            prev = width
        for l in range(spec.num_layers, 0, -1):
            width = fl[l - 1]
            shapes[f"dec{l}.w"] = (nn.activation_width(act, width), prev, d)
            shapes[f"dec{l}.b"] = (nn.activation_width(act, width),)
            prev = width
        shapes["out.w"] = (spec.num_classes, fl[0])
        shapes["out.b"] = (spec.num_classes,)
        return shapes
    if isinstance(spec, DilatedTCNSpec):
        w = spec.width
        shapes["in.w"] = (w, spec.input_dim)
        shapes["in.b"] = (w,)
        for j in range(1, spec.num_blocks + 1):
            for l in range(1, spec.layers_per_block + 1):
                key = f"block{j}.layer{l}"
                shapes[f"{key}.w"] = (nn.activation_width(act, w), w, spec.taps)
                shapes[f"{key}.b"] = (nn.activation_width(act, w),)
                shapes[f"{key}.v"] = (w, w)
                shapes[f"{key}.e"] = (w,)
        shapes["skip.w"] = (w, w)
        shapes["skip.b"] = (w,)
        shapes["out.w"] = (spec.num_classes, w)
        shapes["out.b"] = (spec.num_classes,)
        return shapes
    raise ConfigError(f"not a model spec: {spec!r}")


def parameter_audit(spec):
    """Rows of ``(name, shape, dilation)``; dilation is None for non-conv arrays."""
    dilations = {}
    if isinstance(spec, DilatedTCNSpec):
        it = iter(spec.dilations)
        for j in range(1, spec.num_blocks + 1):
            for l in range(1, spec.layers_per_block + 1):
                dilations[f"block{j}.layer{l}.w"] = next(it)
    elif isinstance(spec, EDTCNSpec):
        dilations = {n: 1 for n in parameter_shapes(spec) if n.endswith(".w") and n[:3] in ("enc", "dec")}
    return [(name, shape, dilations.get(name)) for name, shape in parameter_shapes(spec).items()]


def build(spec, seed=0, dtype=np.float32):
    """Allocate and initialise parameters (Glorot-uniform weights, zero biases)."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(spec).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        receptive = shape[2] if len(shape) == 3 else 1
        params[name] = nn.glorot_uniform(
            rng, shape, shape[1] * receptive, shape[0] * receptive, dtype
        )
    return TrainedModel(spec, params, {"init_seed": int(seed), "epochs": 0, "loss_curve": []})


# --------------------------------------------------------------------------
# forward / backward


def _check_input(spec, features):
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] != spec.input_dim:
        raise DataError(
            f"model expects ({spec.input_dim}, T) features, got shape {features.shape}"
        )
    if features.shape[1] < 1:
        raise DataError("feature sequence has no frames")
    return features


def _act_dropout(z, kind, rate, rng):
    a = nn.activation(z, kind)
    mask = None
    if rng is not None and rate > 0:
        mask = nn.dropout_mask(a.shape[0], rate, rng, a.dtype)
        a = a * mask
    return a, mask


def _ed_forward(spec, params, x, rate, rng):
    offsets = nn.tap_offsets(spec.filter_duration, spec.mode)
    kind = spec.activation
    enc, dec = [], []
    h = x
    for l in range(1, spec.num_layers + 1):
        z, cols = nn.conv_forward_cached(h, params[f"enc{l}.w"], params[f"enc{l}.b"], offsets)
        a, mask = _act_dropout(z, kind, rate, rng)
        pooled, arg = nn.max_pool_time(a, spec.causal)
        enc.append((cols, z, mask, arg, a.shape[1]))
        h = pooled
    for l in range(spec.num_layers, 0, -1):
        frames = enc[l - 1][4]
        u = nn.upsample_time(h, frames)
        z, cols = nn.conv_forward_cached(u, params[f"dec{l}.w"], params[f"dec{l}.b"], offsets)
        a, mask = _act_dropout(z, kind, rate, rng)
        dec.append((cols, z, mask, h.shape[1]))
        h = a
    logits = nn.dense_forward(h, params["out.w"], params["out.b"])
    return logits, {"enc": enc, "dec": dec, "top": h, "offsets": offsets}


def _ed_backward(spec, params, cache, dlogits):
    grads = {}
    kind, offsets = spec.activation, cache["offsets"]
    dh, grads["out.w"], grads["out.b"] = nn.dense_backward(cache["top"], params["out.w"], dlogits)
    for l, (cols, z, mask, coarse) in zip(range(1, spec.num_layers + 1), reversed(cache["dec"])):
        da = dh if mask is None else dh * mask
        dz = nn.activation_backward(da, z, kind)
        du, grads[f"dec{l}.w"], grads[f"dec{l}.b"] = nn.conv_backward_cached(
            cols, params[f"dec{l}.w"], dz, offsets
        )
        dh = nn.upsample_time_backward(du, coarse)
    for l in range(spec.num_layers, 0, -1):
        cols, z, mask, arg, frames = cache["enc"][l - 1]
        da = nn.max_pool_time_backward(dh, arg, frames)
        if mask is not None:
            da = da * mask
        dz = nn.activation_backward(da, z, kind)
        dh, grads[f"enc{l}.w"], grads[f"enc{l}.b"] = nn.conv_backward_cached(
            cols, params[f"enc{l}.w"], dz, offsets
        )
    return grads, dh


def _dilated_forward(spec, params, x, rate, rng):
    kind = spec.activation
    h = nn.dense_forward(x, params["in.w"], params["in.b"])
    skip = np.zeros_like(h)
    layers = []
    dilation = iter(spec.dilations)
    for j in range(1, spec.num_blocks + 1):
        for l in range(1, spec.layers_per_block + 1):
            key = f"block{j}.layer{l}"
            offsets = nn.tap_offsets(spec.taps, spec.mode, next(dilation))
            z, cols = nn.conv_forward_cached(h, params[f"{key}.w"], params[f"{key}.b"], offsets)
            a, mask = _act_dropout(z, kind, rate, rng)
            h = h + nn.dense_forward(a, params[f"{key}.v"], params[f"{key}.e"])
            layers.append((key, offsets, cols, z, mask, a))
        skip += h
    z0 = np.maximum(skip, 0.0)
    z1_pre = nn.dense_forward(z0, params["skip.w"], params["skip.b"])
    z1 = np.maximum(z1_pre, 0.0)
    logits = nn.dense_forward(z1, params["out.w"], params["out.b"])
    cache = {"x": x, "layers": layers, "skip": skip, "z0": z0, "z1_pre": z1_pre, "z1": z1}
    return logits, cache


def _dilated_backward(spec, params, cache, dlogits):
    grads = {}
    kind = spec.activation
    dz1, grads["out.w"], grads["out.b"] = nn.dense_backward(cache["z1"], params["out.w"], dlogits)
    dz1 = np.where(cache["z1_pre"] > 0, dz1, 0.0)
    dz0, grads["skip.w"], grads["skip.b"] = nn.dense_backward(cache["z0"], params["skip.w"], dz1)
    dskip = np.where(cache["skip"] > 0, dz0, 0.0)
    dh = np.zeros_like(dskip)
    layers = cache["layers"]
    per_block = spec.layers_per_block
    for i in range(len(layers) - 1, -1, -1):
        if (i + 1) % per_block == 0:
            dh = dh + dskip
        key, offsets, cols, z, mask, a = layers[i]
        da, grads[f"{key}.v"], grads[f"{key}.e"] = nn.dense_backward(a, params[f"{key}.v"], dh)
        if mask is not None:
            da = da * mask
        dz = nn.activation_backward(da, z, kind)
        dprev, grads[f"{key}.w"], grads[f"{key}.b"] = nn.conv_backward_cached(
            cols, params[f"{key}.w"], dz, offsets
        )
        dh = dh + dprev
    dx, grads["in.w"], grads["in.b"] = nn.dense_backward(cache["x"], params["in.w"], dh)
    return grads, dx


_IMPL = {
    EDTCNSpec: (_ed_forward, _ed_backward),
    DilatedTCNSpec: (_dilated_forward, _dilated_backward),
}


def forward_logits(spec, params, features, dropout=0.0, rng=None):
    """Logits and backward cache. Dropout is active only when ``rng`` is given."""
    fwd, _ = _IMPL[type(spec)]
    x = _check_input(spec, features).astype(next(iter(params.values())).dtype, copy=False)
    return fwd(spec, params, x, dropout, rng)


def backward(spec, params, cache, dlogits):
    """Parameter gradients and the gradient wrt the input features."""
    _, bwd = _IMPL[type(spec)]
    grads, dx = bwd(spec, params, cache, dlogits)
    return {name: grads[name] for name in params}, dx


def forward(model, features):
    """Per-frame class probabilities, shape ``(C, T)``. Inference mode."""
    logits, _ = forward_logits(model.spec, model.params, features)
    return nn.softmax_frames(logits)


def forward_ed(model, features):
    if not isinstance(model.spec, EDTCNSpec):
        raise ConfigError("forward_ed needs an ED-TCN model")
    return forward(model, features)


def forward_dilated(model, features):
    if not isinstance(model.spec, DilatedTCNSpec):
        raise ConfigError("forward_dilated needs a dilated TCN model")
    return forward(model, features)


def input_projection(model, features):
    """Single-tap linear map from the input features to the dilated stack width."""
    if not isinstance(model.spec, DilatedTCNSpec):
        raise ConfigError("input_projection applies to dilated TCN models")
    x = _check_input(model.spec, features)
    return nn.dense_forward(x, model.params["in.w"], model.params["in.b"])


def argmax_labels(probs):
    """Per-frame argmax of a ``(C, T)`` array; ties resolve to the lowest class index."""
    return np.argmax(np.asarray(probs), axis=0).astype(np.int64)


def predict_labels(model, features):
    return argmax_labels(forward(model, features))


def loss_and_grads(spec, params, features, labels, dropout=0.0, rng=None):
    logits, cache = forward_logits(spec, params, features, dropout, rng)
    loss, dlogits = nn.cross_entropy(nn.softmax_frames(logits), labels)
    grads, _ = backward(spec, params, cache, dlogits)
    return loss, grads


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dropout: float = 0.3
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")


def _check_dataset(spec, dataset):
    if not dataset:
        raise ConfigError("training dataset is empty")
    checked = []
    for i, (features, labels) in enumerate(dataset):
        features = _check_input(spec, features)
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (features.shape[1],):
            raise DataError(f"sequence {i}: {labels.size} labels for {features.shape[1]} frames")
        if labels.min() < 0 or labels.max() >= spec.num_classes:
            raise DataError(f"sequence {i}: labels must lie in [0, {spec.num_classes})")
        checked.append((features, labels))
    return checked


def train(model, dataset, config=None, progress=None):
    """Adam on one sequence at a time; returns a new model with its loss curve.

    ``progress`` is an optional ``callback(epoch, mean_loss)``.
    """
    config = config or TrainConfig()
    spec = model.spec
    data = _check_dataset(spec, dataset)
    dtype = model.dtype
    data = [(f.astype(dtype), y) for f, y in data]
    params = {name: value.copy() for name, value in model.params.items()}
    state = nn.AdamState.for_params(
        params,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.epsilon,
    )
    order_rng, drop_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2))
    curve = list(model.metadata.get("loss_curve", []))
    for epoch in range(config.epochs):
        order = order_rng.permutation(len(data)) if config.shuffle else np.arange(len(data))
        total = 0.0
        for i in order:
            features, labels = data[i]
            loss, grads = loss_and_grads(spec, params, features, labels, config.dropout, drop_rng)
            nn.adam_step(params, grads, state)
            total += loss
        curve.append(total / len(data))
        if progress is not None:
            progress(epoch, curve[-1])
        log.debug("epoch %d loss %.5f", epoch, curve[-1])
    metadata = dict(model.metadata)
    metadata.update(
        epochs=int(model.metadata.get("epochs", 0)) + config.epochs,
        seed=int(config.seed),
        loss_curve=[float(v) for v in curve],
    )
    return TrainedModel(spec, params, metadata)


def with_params(model, **updates):
    """Copy of ``model`` with some parameter arrays replaced."""
    params = {name: value.copy() for name, value in model.params.items()}
    for name, value in updates.items():
        if name not in params or np.shape(value) != params[name].shape:
            raise ConfigError(f"no parameter {name} with shape {np.shape(value)}")
        params[name] = np.array(value, dtype=model.dtype)
    return replace(model, params=params)


# --------------------------------------------------------------------------
# receptive-field probes


def _shift_or(mask, offsets):
    """Boolean conv: row t is the OR of rows ``t + offset`` that exist."""
    frames = mask.shape[0]
    out = np.zeros_like(mask)
    for off in offsets:
        lo, hi = max(0, -off), min(frames, frames - off)
        if lo < hi:
            out[lo:hi] |= mask[lo + off : hi + off]
    return out


def _pool_or(mask, causal):
    frames = mask.shape[0]
    pooled = (frames + 1) // 2
    out = np.zeros((pooled, mask.shape[1]), dtype=bool)
    base = -1 if causal else 0
    for p in range(pooled):
        for t in (2 * p + base, 2 * p + base + 1):
            if 0 <= t < frames:
                out[p] |= mask[t]
    return out


def dependency_mask(spec, frames):
    """Boolean ``(frames, frames)`` array; entry ``[t, s]`` is True when output
    frame t is wired to input frame s through the architecture."""
    mask = np.eye(frames, dtype=bool)
    if isinstance(spec, EDTCNSpec):
        offsets = nn.tap_offsets(spec.filter_duration, spec.mode)
        lengths = []
        for _ in range(spec.num_layers):
            mask = _shift_or(mask, offsets)
            lengths.append(mask.shape[0])
            mask = _pool_or(mask, spec.causal)
        for frames_l in reversed(lengths):
            mask = np.repeat(mask, 2, axis=0)[:frames_l]
            mask = _shift_or(mask, offsets)
        return mask
    skip = np.zeros_like(mask)
    dilation = iter(spec.dilations)
    for _ in range(spec.num_blocks):
        for _ in range(spec.layers_per_block):
            mask = mask | _shift_or(mask, nn.tap_offsets(spec.taps, spec.mode, next(dilation)))
        skip |= mask
    return skip


def footprint_span(mask, frame):
    """``(first, last)`` input frame reaching output ``frame``; None if nothing does."""
    hits = np.flatnonzero(mask[frame])
    if hits.size == 0:
        return None
    return int(hits[0]), int(hits[-1])


def gradient_footprint(model, frames, frame, trials=8, seed=0):
    """Input frames whose gradient wrt output ``frame`` is nonzero for some trial.

    Each trial draws a random input and a random projection of the output
    frame's logits; dropout is off. Returns a boolean array over input frames.
    """
    spec = model.spec
    rng = np.random.default_rng(seed)
    params = {name: value.astype(np.float64) for name, value in model.params.items()}
    seen = np.zeros(frames, dtype=bool)
    for _ in range(trials):
        x = rng.normal(size=(spec.input_dim, frames))
        logits, cache = forward_logits(spec, params, x)
        dlogits = np.zeros_like(logits)
        dlogits[:, frame] = rng.normal(size=logits.shape[0])
        _, dx = backward(spec, params, cache, dlogits)
        seen |= np.any(dx != 0, axis=0)
    return seen
