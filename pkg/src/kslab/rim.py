"""Recurrent Inference Machine for multicoil MRI reconstruction.

Each time step feeds the current estimate and the likelihood gradient through

    conv k_in -> ReLU -> convGRU (state 1) -> conv k -> ReLU -> convGRU (state 2) -> conv k_out

and adds the two output channels to the estimate as a complex update. Weights
are shared across time steps. Training uses the tape in :mod:`kslab.autodiff`
and Adam with a linear warm-up followed by step decay.

Internally images are stacked real/imaginary channels in the
(channels, batch, height, width) layout used by :func:`kslab.autodiff.conv2d`.
"""

from __future__ import annotations

import dataclasses
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from kslab import autodiff as ad
from kslab.errors import InvalidArgumentError, NumericalDivergenceError, TensorFormatError
from kslab.forward import NllConfig, _decode, _encode, _mask_bits, check_sensitivities
from kslab.metrics import SSIM_SIGMA, SSIM_WINDOW, filter_valid, gaussian_window_1d, ssim, ssim_map
from kslab.tensorio import read_tensor_from, tensor_to_bytes

CHECKPOINT_MAGIC = b"RIMCKPT1"

__all__ = [
    "AdamState",
    "RimConfig",
    "RimModel",
    "RimState",
    "Schedule",
    "TrainingSample",
    "TrainResult",
    "init_model",
    "learning_rate",
    "load_checkpoint",
    "rim_infer",
    "rim_loss",
    "rim_step",
    "rim_train",
    "save_checkpoint",
    "tape_gradcheck",
]


@dataclass(frozen=True)
class RimConfig:
    """Network shape. ``kernel_sizes`` is (input conv, hidden convs, output conv)."""

    time_steps: int = 8
    hidden_channels: int = 16
    kernel_sizes: tuple = (5, 3, 3)
    normalize_inputs: bool = True

    def __post_init__(self):
        if self.time_steps < 1 or self.hidden_channels < 1:
            raise InvalidArgumentError("time_steps and hidden_channels must be positive")
        if len(self.kernel_sizes) != 3 or any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise InvalidArgumentError(f"kernel sizes must be three odd integers, got {self.kernel_sizes}")
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))


def parameter_shapes(config):
    """Ordered mapping of parameter name to shape; independent of ``time_steps``."""
    h = config.hidden_channels
    k_in, k_hid, k_out = config.kernel_sizes
    shapes = {
        "conv_in.weight": (h, 4, k_in, k_in),
        "conv_in.bias": (h,),
    }
    for gru, after in (("gru1", "conv_mid"), ("gru2", None)):
        shapes[f"{gru}.gates.weight"] = (2 * h, 2 * h, k_hid, k_hid)
        shapes[f"{gru}.gates.bias"] = (2 * h,)
        shapes[f"{gru}.candidate.weight"] = (h, 2 * h, k_hid, k_hid)
        shapes[f"{gru}.candidate.bias"] = (h,)
        if after:
            shapes[f"{after}.weight"] = (h, h, k_hid, k_hid)
            shapes[f"{after}.bias"] = (h,)
    shapes["conv_out.weight"] = (2, h, k_out, k_out)
    shapes["conv_out.bias"] = (2,)
    return shapes


@dataclass(eq=False)
class RimModel:
    """Parameters of the update network plus the input scaling constant.

    ``input_scale`` divides the image and gradient channels before the first
    convolution and multiplies the produced update; it is recorded once from
    training data when ``config.normalize_inputs`` is set and is 1 otherwise.
    """

    config: RimConfig
    params: dict
    input_scale: float = 1.0

    def copy(self):
        return RimModel(self.config, {k: v.copy() for k, v in self.params.items()}, self.input_scale)

    @property
    def n_parameters(self):
        return int(sum(v.size for v in self.params.values()))

    def scale(self):
        return self.input_scale if self.config.normalize_inputs else 1.0


@dataclass(eq=False)
class RimState:
    """Recurrent states, each of shape (hidden_channels, height, width)."""

    s1: np.ndarray
    s2: np.ndarray

    @classmethod
    def zeros(cls, config, shape):
        return cls(np.zeros((config.hidden_channels,) + tuple(shape)), np.zeros((config.hidden_channels,) + tuple(shape)))


def init_model(config=RimConfig(), seed=0, zero_output=True):
    """Uniform ``+-sqrt(1/fan_in)`` weights and zero biases.

    With ``zero_output`` the output convolution starts at zero, so the untrained
    network returns the zero-filled SENSE image at every step.
    """
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias") or (zero_output and name.startswith("conv_out")):
            params[name] = np.zeros(shape)
        else:
            bound = math.sqrt(1.0 / (shape[1] * shape[2] * shape[3]))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return RimModel(config, params)


# --- network ---------------------------------------------------------------


def _gru(x, h, p, prefix, hidden):
    """ConvGRU: ``z, r = sigmoid(W_g * [x, h])``, ``n = tanh(W_n * [x, r h])``,
    ``h' = h + z (n - h)``."""
    gates = ad.sigmoid(ad.conv2d(ad.concat([x, h]), p[f"{prefix}.gates.weight"], p[f"{prefix}.gates.bias"]))
    update, reset = gates[:hidden], gates[hidden:]
    candidate = ad.tanh(
        ad.conv2d(ad.concat([x, reset * h]), p[f"{prefix}.candidate.weight"], p[f"{prefix}.candidate.bias"])
    )
    return h + update * (candidate - h)


def _cell(p, config, scale, x, grad, s1, s2):
    """One update-network evaluation on Vars; returns (delta_x, s1, s2)."""
    hidden = config.hidden_channels
    inputs = ad.concat([x, grad]) * (1.0 / scale)
    h = ad.relu(ad.conv2d(inputs, p["conv_in.weight"], p["conv_in.bias"]))
    s1 = _gru(h, s1, p, "gru1", hidden)
    h = ad.relu(ad.conv2d(s1, p["conv_mid.weight"], p["conv_mid.bias"]))
    s2 = _gru(h, s2, p, "gru2", hidden)
    delta = ad.conv2d(s2, p["conv_out.weight"], p["conv_out.bias"]) * scale
    return delta, s1, s2


def _to_channels(z):
    """Complex (B, H, W) -> real (2, B, H, W)."""
    return np.stack([z.real, z.imag])


def _to_complex(v):
    return v[0] + 1j * v[1]


@dataclass(frozen=True, eq=False)
class _Problem:
    """Batched likelihood: k-space (B, C, H, W), maps (B, C, H, W), bits (B, H, W)."""

    y: np.ndarray
    maps: np.ndarray
    bits: np.ndarray
    sigma_sq: float

    def x0(self):
        return _decode(self.y, self.maps, self.bits)

    def normal(self, v):
        """Real-stacked ``A^H A v / sigma^2``; self-adjoint for the real inner product."""
        z = _to_complex(v)
        return _to_channels(_decode(_encode(z, self.maps, self.bits), self.maps, self.bits) / self.sigma_sq)

    def gradient_offset(self):
        return -_to_channels(_decode(self.y, self.maps, self.bits) / self.sigma_sq)


def _problem(y, maps, mask, cfg):
    maps = check_sensitivities(maps, y.shape)
    bits = _mask_bits(mask if mask is not None else y.mask, y.shape)
    if bits is None:
        bits = np.ones(y.shape, dtype=np.uint8)
    return _Problem(y.coils[None], maps[None], bits[None], cfg.sigma_sq)


def _unroll(tape, pvars, model, problem, time_steps=None):
    """Run the recurrence on a tape; returns the Var trajectory x_1..x_T."""
    config = model.config
    time_steps = config.time_steps if time_steps is None else time_steps
    x0 = _to_channels(problem.x0())
    _, batch, height, width = x0.shape
    x = tape.variable(x0)
    s1 = tape.variable(np.zeros((config.hidden_channels, batch, height, width)))
    s2 = tape.variable(np.zeros((config.hidden_channels, batch, height, width)))
    offset = problem.gradient_offset()
    trajectory = []
    for _ in range(time_steps):
        grad = ad.linear(x, problem.normal, problem.normal, offset)
        delta, s1, s2 = _cell(pvars, config, model.scale(), x, grad, s1, s2)
        x = x + delta
        if not np.all(np.isfinite(x.value)):
            raise NumericalDivergenceError(f"non-finite RIM estimate at step {len(trajectory) + 1}")
        trajectory.append(x)
    return trajectory


def _param_vars(tape, model):
    return {name: tape.variable(value) for name, value in model.params.items()}


def rim_step(model, x_t, grad_t, state):
    """Apply the update network once.

    Args:
        model: network parameters.
        x_t: complex image (H, W).
        grad_t: likelihood gradient at ``x_t``, complex (H, W).
        state: recurrent state from the previous step.

    Returns:
        (delta_x, next_state): the complex update and the new recurrent state.
    """
    x_t, grad_t = np.asarray(x_t), np.asarray(grad_t)
    if x_t.shape != grad_t.shape or x_t.ndim != 2:
        raise InvalidArgumentError(f"image and gradient must share a 2D shape, got {x_t.shape} and {grad_t.shape}")
    expected = (model.config.hidden_channels,) + x_t.shape
    if state.s1.shape != expected or state.s2.shape != expected:
        raise InvalidArgumentError(f"state shape must be {expected}")
    tape = ad.Tape(record=False)
    pvars = _param_vars(tape, model)
    delta, s1, s2 = _cell(
        pvars,
        model.config,
        model.scale(),
        tape.variable(_to_channels(x_t[None])),
        tape.variable(_to_channels(grad_t[None])),
        tape.variable(state.s1[:, None]),
        tape.variable(state.s2[:, None]),
    )
    return _to_complex(delta.value)[0], RimState(s1.value[:, 0], s2.value[:, 0])


def rim_infer(model, y, maps, mask=None, cfg=NllConfig()):
    """Reconstruct from subsampled data; returns the estimates ``[x_1, ..., x_T]``.

    The recurrence starts at the zero-filled SENSE image with zero states and
    recomputes the likelihood gradient at every estimate.
    """
    tape = ad.Tape(record=False)
    trajectory = _unroll(tape, _param_vars(tape, model), model, _problem(y, maps, mask, cfg))
    return [_to_complex(x.value)[0] for x in trajectory]


def _ssim_taps():
    return gaussian_window_1d(SSIM_WINDOW, SSIM_SIGMA)


def _loss_var(trajectory, target):
    """Mean over steps of L1 (per-pixel mean) plus ``1 - SSIM`` on magnitudes.

    ``target`` has shape (B, H, W); SSIM uses each target's maximum as data range.
    """
    taps = _ssim_taps()
    data_range = target.reshape(target.shape[0], -1).max(axis=1)[:, None, None]
    terms = []
    for x in trajectory:
        mag = ad.magnitude(x)
        l1 = ad.mean(ad.absolute(mag - target))
        similarity = ad.mean(ssim_map(mag, target, data_range, lambda a: _filter(a, taps)))
        terms.append(l1 + (1.0 - similarity))
    loss = terms[0]
    for term in terms[1:]:
        loss = loss + term
    return loss * (1.0 / len(terms))


def _filter(a, taps):
    return ad.filter_valid(a, taps) if isinstance(a, ad.Var) else filter_valid(a, taps)


def rim_loss(trajectory, target):
    """Average over the trajectory of ``mean|target - |x_t|| + 1 - SSIM(|x_t|, target)``."""
    if len(trajectory) == 0:
        raise InvalidArgumentError("empty trajectory")
    target = np.asarray(target, dtype=float)
    total = 0.0
    for x in trajectory:
        mag = np.abs(np.asarray(x))
        if mag.shape != target.shape:
            raise InvalidArgumentError(f"shape mismatch: {mag.shape} vs {target.shape}")
        total += float(np.mean(np.abs(mag - target))) + 1.0 - ssim(mag, target)
    return total / len(trajectory)


# --- training --------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Adam hyper-parameters and the warm-up / step-decay learning rate schedule."""

    iterations: int = 2000
    batch_size: int = 2
    lr: float = 1e-4
    warmup: int = 100
    decay_every: int = 1000
    decay_ratio: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    accelerations: tuple = (5, 10)
    seed: int = 0


def learning_rate(schedule, iteration):
    """Linear warm-up to ``lr`` over ``warmup`` iterations, then division by
    ``decay_ratio`` every ``decay_every`` iterations."""
    lr = schedule.lr
    if schedule.warmup > 0 and iteration < schedule.warmup:
        return lr * (iteration + 1) / schedule.warmup
    if schedule.decay_every > 0:
        lr /= schedule.decay_ratio ** (iteration // schedule.decay_every)
    return lr


@dataclass(eq=False)
class AdamState:
    step: int
    m: dict
    v: dict

    @classmethod
    def zeros(cls, model):
        return cls(0, {k: np.zeros_like(p) for k, p in model.params.items()},
                   {k: np.zeros_like(p) for k, p in model.params.items()})


def adam_update(model, grads, state, lr, schedule):
    state.step += 1
    b1, b2 = schedule.beta1, schedule.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        model.params[name] = model.params[name] - lr * (m / c1) / (np.sqrt(v / c2) + schedule.eps)


@dataclass(frozen=True, eq=False)
class TrainingSample:
    """A fully sampled training slice.

    ``volume`` groups slices that share one mask per draw; ``maps`` fixes the
    sensitivities (otherwise they are estimated from each draw's ACS region).
    """

    kspace: np.ndarray
    target: np.ndarray
    volume: int = 0
    maps: np.ndarray | None = None


@dataclass(eq=False)
class TrainResult:
    model: RimModel
    losses: list
    adam: AdamState
    iteration: int
    best_model: RimModel | None = None
    best_score: float = -math.inf
    validation: list = field(default_factory=list)


def loss_and_gradients(model, problem, target, time_steps=None):
    """Loss of one batch and its gradient for every parameter."""
    tape = ad.Tape()
    pvars = _param_vars(tape, model)
    loss = _loss_var(_unroll(tape, pvars, model, problem, time_steps), target)
    names = list(pvars)
    grads = tape.gradient(loss, [pvars[n] for n in names])
    return float(loss.value), dict(zip(names, grads))


def batch_problem(samples, masks, cfg=NllConfig()):
    """Stack subsampled slices into one batched likelihood.

    ``masks[i]`` is the mask applied to ``samples[i]``; samples without fixed
    maps get ACS-estimated sensitivities from their subsampled data.
    """
    from kslab.forward import MulticoilKSpace, estimate_sensitivities_from_acs
    from kslab.sampling import apply_mask, extract_acs

    ys, maps, bits = [], [], []
    for sample, mask in zip(samples, masks):
        y = apply_mask(mask, MulticoilKSpace(sample.kspace))
        ys.append(y.coils)
        if sample.maps is not None:
            maps.append(sample.maps)
        else:
            maps.append(estimate_sensitivities_from_acs(y, extract_acs(mask)))
        bits.append(mask.bits)
    return _Problem(np.stack(ys), np.stack(maps), np.stack(bits), cfg.sigma_sq)


def draw_masks(scheme, samples, acceleration, seed, draw):
    """One mask per distinct volume in ``samples`` for draw number ``draw``."""
    from kslab.sampling import make_mask

    masks, by_volume = [], {}
    for sample in samples:
        if sample.volume not in by_volume:
            mask_seed = int(np.random.SeedSequence([int(seed), int(draw), int(sample.volume)]).generate_state(1)[0])
            height, width = sample.target.shape
            by_volume[sample.volume] = make_mask(scheme, height, width, acceleration, mask_seed)
        masks.append(by_volume[sample.volume])
    return masks


def estimate_input_scale(samples, scheme, schedule, cfg=NllConfig()):
    """Standard deviation of the zero-filled SENSE channels over one batch."""
    rng = np.random.Generator(np.random.PCG64([schedule.seed, 0xC0FFEE]))
    idx = rng.choice(len(samples), size=min(len(samples), max(schedule.batch_size, 4)), replace=False)
    chosen = [samples[i] for i in sorted(idx)]
    masks = draw_masks(scheme, chosen, max(schedule.accelerations), schedule.seed, 2**32 - 1)
    x0 = _to_channels(batch_problem(chosen, masks, cfg).x0())
    return float(np.std(x0)) or 1.0


def rim_train(
    model,
    samples,
    scheme,
    schedule=Schedule(),
    cfg=NllConfig(),
    resume=None,
    validate=None,
    validate_every=0,
    on_iteration=None,
):
    """Train ``model`` in place of a copy with Adam on the trajectory loss.

    Iteration ``i`` draws its batch, its acceleration (uniform over
    ``schedule.accelerations``) and one mask per volume from generators seeded
    by ``(schedule.seed, i)``, so a run resumed from a :class:`TrainResult` at
    iteration ``i`` continues exactly as an uninterrupted run would.

    Args:
        model: initial parameters (copied).
        samples: non-empty list of :class:`TrainingSample` of one image size.
        scheme: mask scheme used for every draw.
        schedule: optimizer and schedule settings.
        resume: state returned by an earlier call to continue from.
        validate: optional callable ``model -> score`` (higher is better); the
            best-scoring model is kept in ``best_model``.
        validate_every: validation cadence in iterations (0 disables).
        on_iteration: optional callback ``(iteration, loss, result)``.

    Raises:
        NumericalDivergenceError: the loss becomes non-finite.
    """
    if not samples:
        raise InvalidArgumentError("training needs at least one sample")
    shapes = {s.target.shape for s in samples}
    if len(shapes) != 1:
        raise InvalidArgumentError(f"training samples mix image sizes {sorted(shapes)}")

    if resume is None:
        model = model.copy()
        result = TrainResult(model=model, losses=[], adam=AdamState.zeros(model), iteration=0)
    else:
        result = resume
        model = result.model

    while result.iteration < schedule.iterations:
        it = result.iteration
        rng = np.random.Generator(np.random.PCG64([schedule.seed, it]))
        batch = [samples[i] for i in rng.choice(len(samples), size=min(schedule.batch_size, len(samples)), replace=False)]
        acceleration = schedule.accelerations[int(rng.integers(len(schedule.accelerations)))]
        masks = draw_masks(scheme, batch, acceleration, schedule.seed, it)
        problem = batch_problem(batch, masks, cfg)
        target = np.stack([s.target for s in batch])
        try:
            loss, grads = loss_and_gradients(model, problem, target)
        except NumericalDivergenceError as exc:
            raise NumericalDivergenceError(f"iteration {it}: {exc}", it - 1) from exc
        if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericalDivergenceError(f"non-finite loss at iteration {it}", it - 1)
        adam_update(model, grads, result.adam, learning_rate(schedule, it), schedule)
        result.losses.append(loss)
        result.iteration = it + 1
        if validate is not None and validate_every > 0 and result.iteration % validate_every == 0:
            score = float(validate(model))
            result.validation.append((result.iteration, score))
            if score > result.best_score:
                result.best_score = score
                result.best_model = model.copy()
        if on_iteration is not None:
            on_iteration(it, loss, result)
    return result


# --- gradient check --------------------------------------------------------


def tape_gradcheck(
    model,
    y,
    maps,
    target,
    mask=None,
    cfg=NllConfig(),
    step=1e-4,
    samples_per_group=6,
    seed=0,
    loss_scale=1.0,
    freeze_branches=False,
):
    """Largest relative error between tape gradients and central differences.

    For every parameter group, ``samples_per_group`` randomly chosen entries are
    perturbed by ``+-step``; the error of a group is
    ``||analytic - numeric|| / max(||analytic||, ||numeric||)`` over those
    entries, or 0 when both norms are below 1e-8.

    The loss is only piecewise smooth (ReLU and the L1 term have kinks), so a
    perturbation can cross a kink and spoil the difference quotient. With
    ``freeze_branches`` the perturbed evaluations replay the kink decisions of
    the unperturbed one, which differentiates the smooth piece the tape
    differentiates.
    """
    problem = _problem(y, maps, mask, cfg)
    target = np.asarray(target, dtype=float)[None]
    base = ad.BranchLog() if freeze_branches else None

    tape = ad.Tape(branches=base)
    pvars = _param_vars(tape, model)
    loss = _loss_var(_unroll(tape, pvars, model, problem), target) * loss_scale
    names = list(pvars)
    analytic = dict(zip(names, tape.gradient(loss, [pvars[n] for n in names])))

    def loss_of(m):
        replay = ad.BranchLog(base.masks) if freeze_branches else None
        probe_tape = ad.Tape(record=False, branches=replay)
        traj = _unroll(probe_tape, _param_vars(probe_tape, m), m, problem)
        return loss_scale * float(_loss_var(traj, target).value)

    rng = np.random.Generator(np.random.PCG64(int(seed)))
    worst = 0.0
    probe = model.copy()
    for name in names:
        flat = probe.params[name].reshape(-1)
        picks = rng.choice(flat.size, size=min(samples_per_group, flat.size), replace=False)
        numeric = np.empty(len(picks))
        for j, idx in enumerate(picks):
            original = flat[idx]
            flat[idx] = original + step
            up = loss_of(probe)
            flat[idx] = original - step
            down = loss_of(probe)
            flat[idx] = original
            numeric[j] = (up - down) / (2 * step)
        exact = analytic[name].reshape(-1)[picks]
        scale = max(np.linalg.norm(exact), np.linalg.norm(numeric))
        if scale >= 1e-8:
            worst = max(worst, float(np.linalg.norm(exact - numeric) / scale))
    return worst


def parameter_gradients(model, y, maps, target, mask=None, cfg=NllConfig(), loss_scale=1.0):
    """Tape gradients of the (scaled) trajectory loss for a single slice."""
    problem = _problem(y, maps, mask, cfg)
    tape = ad.Tape()
    pvars = _param_vars(tape, model)
    loss = _loss_var(_unroll(tape, pvars, model, problem), np.asarray(target, dtype=float)[None]) * loss_scale
    names = list(pvars)
    return float(loss.value), dict(zip(names, tape.gradient(loss, [pvars[n] for n in names])))


# --- checkpoints -----------------------------------------------------------


def checkpoint_bytes(model, extra=None):
    """Serialize a model (and optional extra named tensors) to checkpoint bytes.

    Layout: magic ``RIMCKPT1``; uint32 count of config integers followed by
    them as int64 (time_steps, hidden_channels, three kernel sizes,
    normalize_inputs); float64 input scale; uint32 tensor count; then per
    tensor a uint16 name length, the UTF-8 name and a KSLAB001 tensor record.
    """
    c = model.config
    ints = (c.time_steps, c.hidden_channels, *c.kernel_sizes, int(c.normalize_inputs))
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<I", len(ints)))
    out.write(struct.pack(f"<{len(ints)}q", *ints))
    out.write(struct.pack("<d", model.input_scale))
    tensors = dict(model.params)
    if extra:
        tensors.update(extra)
    out.write(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(tensor_to_bytes(value))
    return out.getvalue()


def parse_checkpoint(raw):
    """Inverse of :func:`checkpoint_bytes`; returns (model, extra tensors)."""
    stream = io.BytesIO(raw)
    if stream.read(8) != CHECKPOINT_MAGIC:
        raise TensorFormatError("not a RIM checkpoint")
    try:
        (n_ints,) = struct.unpack("<I", stream.read(4))
        ints = struct.unpack(f"<{n_ints}q", stream.read(8 * n_ints))
        (scale,) = struct.unpack("<d", stream.read(8))
        (n_tensors,) = struct.unpack("<I", stream.read(4))
        tensors = {}
        for _ in range(n_tensors):
            (n_name,) = struct.unpack("<H", stream.read(2))
            name = stream.read(n_name).decode("utf-8")
            tensors[name] = read_tensor_from(stream)
    except struct.error as exc:
        raise TensorFormatError(f"truncated checkpoint: {exc}") from exc
    if stream.read(1):
        raise TensorFormatError("trailing bytes after checkpoint")
    config = RimConfig(time_steps=ints[0], hidden_channels=ints[1], kernel_sizes=tuple(ints[2:5]),
                       normalize_inputs=bool(ints[5]))
    expected = parameter_shapes(config)
    params = {}
    for name, shape in expected.items():
        if name not in tensors or tensors[name].shape != shape:
            raise TensorFormatError(f"checkpoint tensor {name!r} missing or misshaped")
        params[name] = tensors.pop(name).astype(float)
    return RimModel(config, params, scale), tensors


def save_checkpoint(path, model, extra=None):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, extra))


def load_checkpoint(path):
    """Load a checkpoint written by :func:`save_checkpoint`; returns the model."""
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())[0]


def training_state_tensors(result):
    """Adam moments, step and iteration counter as named tensors for resuming."""
    extra = {"train.counters": np.array([result.iteration, result.adam.step], dtype=float),
             "train.losses": np.array(result.losses, dtype=float),
             "train.best_score": np.array([result.best_score if math.isfinite(result.best_score) else -1.0])}
    for name in result.adam.m:
        extra[f"adam.m.{name}"] = result.adam.m[name]
        extra[f"adam.v.{name}"] = result.adam.v[name]
    if result.validation:
        extra["train.validation"] = np.array(result.validation, dtype=float)
    return extra


def restore_training_state(model, extra, best_model=None):
    iteration, step = (int(v) for v in extra["train.counters"])
    adam = AdamState(step, {}, {})
    for name in model.params:
        adam.m[name] = extra[f"adam.m.{name}"]
        adam.v[name] = extra[f"adam.v.{name}"]
    validation = [(int(i), float(s)) for i, s in extra.get("train.validation", np.zeros((0, 2)))]
    best = float(extra["train.best_score"][0]) if validation else -math.inf
    if not validation:
        best_model = None
    return TrainResult(model=model, losses=list(extra["train.losses"]), adam=adam, iteration=iteration,
                       best_model=best_model, best_score=best, validation=validation)
