import dataclasses
import math

import numpy as np
import pytest

from rim_cases import instance
from kslab import rim
from kslab.errors import InvalidArgumentError, NumericalDivergenceError, TensorFormatError
from kslab.forward import AcquisitionSim, MulticoilKSpace, NllConfig, _decode, _encode, adjoint, nll_gradient
from kslab.forward import simulate_acquisition, simulate_sensitivities
from kslab.phantom import shepp_logan_phantom


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def manual_trajectory(model, y, maps, mask, sigma_sq=1.0):
    """Reference recurrence built from rim_step and the gradient A^H A x - A^H y."""
    bits = mask.bits
    x = adjoint(y, maps)
    state = rim.RimState.zeros(model.config, x.shape)
    out = []
    for _ in range(model.config.time_steps):
        grad = _decode(_encode(x, maps, bits), maps, bits) / sigma_sq - _decode(y.coils, maps, bits) / sigma_sq
        delta, state = rim.rim_step(model, x, grad, state)
        x = x + delta
        out.append(x)
    return out


def test_parameter_shapes_do_not_depend_on_time_steps():
    a = rim.parameter_shapes(rim.RimConfig(time_steps=1, hidden_channels=8))
    b = rim.parameter_shapes(rim.RimConfig(time_steps=8, hidden_channels=8))
    assert a == b
    assert a["conv_in.weight"] == (8, 4, 5, 5)
    assert a["gru1.gates.weight"] == (16, 16, 3, 3)
    assert a["conv_out.weight"] == (2, 8, 3, 3)


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        rim.RimConfig(kernel_sizes=(4, 3, 3))
    with pytest.raises(InvalidArgumentError):
        rim.RimConfig(time_steps=0)


def test_init_is_seeded_and_bounded():
    a = rim.init_model(rim.RimConfig(hidden_channels=4), seed=1)
    b = rim.init_model(rim.RimConfig(hidden_channels=4), seed=1)
    for name, value in a.params.items():
        np.testing.assert_array_equal(value, b.params[name])
        if name.endswith("bias") or name.startswith("conv_out"):
            assert not value.any()
        else:
            bound = math.sqrt(1 / np.prod(value.shape[1:]))
            assert np.abs(value).max() <= bound


@pytest.mark.parametrize("seed", range(3))
def test_all_zero_parameters_keep_the_initial_estimate(seed):
    model, y, maps, _, mask = instance(seed)
    for name in model.params:
        model.params[name][...] = 0.0
    x0 = adjoint(y, maps)
    for x in rim.rim_infer(model, y, maps, mask):
        np.testing.assert_array_equal(x, x0)


def test_zero_output_init_is_identity_even_with_random_hidden_layers():
    model, y, maps, _, mask = instance(4, zero_output=True)
    x0 = adjoint(y, maps)
    assert all(np.array_equal(x, x0) for x in rim.rim_infer(model, y, maps, mask))


@pytest.mark.parametrize("seed", [0, 1])
def test_inference_replays_step_by_step_bit_exactly(seed):
    model, y, maps, _, mask = instance(seed)
    for got, want in zip(rim.rim_infer(model, y, maps, mask), manual_trajectory(model, y, maps, mask)):
        np.testing.assert_array_equal(got, want)


def test_single_step_trajectory_is_one_manual_step():
    model, y, maps, _, mask = instance(2, time_steps=1)
    (x1,) = rim.rim_infer(model, y, maps, mask)
    x0 = adjoint(y, maps)
    delta, _ = rim.rim_step(model, x0, nll_gradient(x0, y, maps, mask), rim.RimState.zeros(model.config, x0.shape))
    np.testing.assert_allclose(x1, x0 + delta, rtol=1e-12, atol=1e-12)


def test_longer_runs_extend_shorter_ones():
    model, y, maps, _, mask = instance(3, time_steps=2)
    longer = dataclasses.replace(model.config, time_steps=4)
    short = rim.rim_infer(model, y, maps, mask)
    long = rim.rim_infer(rim.RimModel(longer, model.params, model.input_scale), y, maps, mask)
    assert len(long) == 4
    for a, b in zip(short, long):
        np.testing.assert_array_equal(a, b)


def test_step_matches_hand_rolled_scalar_network(rng):
    # One pixel with 3x3 kernels: only the center taps take part.
    config = rim.RimConfig(time_steps=1, hidden_channels=1, kernel_sizes=(3, 3, 3), normalize_inputs=True)
    params = {name: rng.standard_normal(shape) for name, shape in rim.parameter_shapes(config).items()}
    params["conv_in.bias"][:] = 2.0  # keep the first ReLU active
    params["conv_mid.bias"][:] = 2.0
    model = rim.RimModel(config, params, input_scale=1.7)
    x, g = 0.3 - 0.2j, -0.5 + 0.4j
    s1, s2 = 0.25, -0.4
    p = {k: v[..., 1, 1] if v.ndim == 4 else v for k, v in params.items()}

    def gru(inp, h, prefix):
        wg, bg = p[f"{prefix}.gates.weight"], p[f"{prefix}.gates.bias"]
        z = sigmoid(wg[0, 0] * inp + wg[0, 1] * h + bg[0])
        r = sigmoid(wg[1, 0] * inp + wg[1, 1] * h + bg[1])
        wc, bc = p[f"{prefix}.candidate.weight"], p[f"{prefix}.candidate.bias"]
        n = math.tanh(wc[0, 0] * inp + wc[0, 1] * r * h + bc[0])
        return h + z * (n - h)

    feats = np.array([x.real, x.imag, g.real, g.imag]) / 1.7
    h = max(0.0, float(p["conv_in.weight"][0] @ feats + p["conv_in.bias"][0]))
    s1_new = gru(h, s1, "gru1")
    h = max(0.0, p["conv_mid.weight"][0, 0] * s1_new + p["conv_mid.bias"][0])
    s2_new = gru(h, s2, "gru2")
    out = (p["conv_out.weight"][:, 0] * s2_new + p["conv_out.bias"]) * 1.7

    delta, state = rim.rim_step(
        model, np.array([[x]]), np.array([[g]]), rim.RimState(np.array([[[s1]]]), np.array([[[s2]]]))
    )
    assert delta[0, 0] == pytest.approx(out[0] + 1j * out[1], abs=1e-14)
    assert state.s1[0, 0, 0] == pytest.approx(s1_new, abs=1e-14)
    assert state.s2[0, 0, 0] == pytest.approx(s2_new, abs=1e-14)


def test_step_rejects_bad_shapes():
    model = rim.init_model(rim.RimConfig(hidden_channels=2))
    with pytest.raises(InvalidArgumentError):
        rim.rim_step(model, np.zeros((4, 4)), np.zeros((4, 5)), rim.RimState.zeros(model.config, (4, 4)))
    with pytest.raises(InvalidArgumentError):
        rim.rim_step(model, np.zeros((4, 4)), np.zeros((4, 4)), rim.RimState.zeros(model.config, (4, 5)))


def test_loss_oracles():
    target = shepp_logan_phantom(24, 24)
    assert rim.rim_loss([target.astype(complex)] * 3, target) == pytest.approx(0.0, abs=1e-12)
    # a zero image: L1 is the mean of the target, SSIM uses the closed form
    zero = np.zeros_like(target, dtype=complex)
    from kslab.metrics import ssim

    expected = float(np.mean(target)) + 1.0 - ssim(np.zeros_like(target), target)
    assert rim.rim_loss([zero], target) == pytest.approx(expected, rel=1e-12)
    # the loss averages over the trajectory
    assert rim.rim_loss([zero, target + 0j], target) == pytest.approx(expected / 2, rel=1e-12)
    with pytest.raises(InvalidArgumentError):
        rim.rim_loss([], target)


def test_tape_loss_matches_numpy_loss():
    model, y, maps, target, mask = instance(5)
    traj = rim.rim_infer(model, y, maps, mask)
    loss, _ = rim.parameter_gradients(model, y, maps, target, mask)
    assert loss == pytest.approx(rim.rim_loss(traj, target), rel=1e-12)


def test_dead_relu_blocks_gradients_upstream():
    model, y, maps, target, mask = instance(6)
    model.params["conv_in.bias"][:] = -1e6
    _, grads = rim.parameter_gradients(model, y, maps, target, mask)
    assert not grads["conv_in.weight"].any()
    assert grads["conv_out.bias"].any()


def test_scaled_loss_scales_gradients():
    model, y, maps, target, mask = instance(7)
    loss1, g1 = rim.parameter_gradients(model, y, maps, target, mask)
    loss2, g2 = rim.parameter_gradients(model, y, maps, target, mask, loss_scale=2.0)
    assert loss2 == 2 * loss1
    for name in g1:
        np.testing.assert_allclose(g2[name], 2 * g1[name], rtol=1e-12, atol=1e-300)


def test_small_step_against_gradient_decreases_loss():
    model, y, maps, target, mask = instance(8)
    loss, grads = rim.parameter_gradients(model, y, maps, target, mask)
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    moved = model.copy()
    for name, g in grads.items():
        moved.params[name] = moved.params[name] - 1e-3 * g / norm
    assert rim.rim_loss(rim.rim_infer(moved, y, maps, mask), target) < loss


@pytest.mark.parametrize("seed", [0, 1])
def test_frozen_branch_gradcheck(seed):
    model, y, maps, target, mask = instance(seed)
    assert rim.tape_gradcheck(model, y, maps, target, mask, seed=seed, freeze_branches=True) < 1e-4


def test_same_weights_run_on_other_image_sizes():
    model, *_ = instance(9)
    for size in (16, 20):
        image = shepp_logan_phantom(size, size + 4).astype(complex)
        maps = simulate_sensitivities(size, size + 4, 2)
        y, _ = simulate_acquisition(AcquisitionSim(image, maps, 0.0, 0))
        traj = rim.rim_infer(model, y, maps)
        assert traj[-1].shape == (size, size + 4)


def test_divergence_is_reported():
    model, y, maps, _, mask = instance(10)
    model.params["conv_out.bias"][:] = np.inf
    with pytest.raises(NumericalDivergenceError):
        rim.rim_infer(model, y, maps, mask)


# --- schedule and training ---------------------------------------------------


def test_learning_rate_schedule():
    s = rim.Schedule(lr=1e-3, warmup=10, decay_every=100, decay_ratio=5.0)
    assert rim.learning_rate(s, 0) == pytest.approx(1e-4)
    assert rim.learning_rate(s, 9) == pytest.approx(1e-3)
    assert rim.learning_rate(s, 99) == pytest.approx(1e-3)
    assert rim.learning_rate(s, 100) == pytest.approx(2e-4)
    assert rim.learning_rate(s, 250) == pytest.approx(4e-5)


def test_adam_first_step_moves_each_weight_by_lr():
    model = rim.init_model(rim.RimConfig(hidden_channels=2))
    grads = {k: np.full_like(v, -3.0) for k, v in model.params.items()}
    before = model.copy()
    rim.adam_update(model, grads, rim.AdamState.zeros(model), 0.01, rim.Schedule())
    for name in grads:
        np.testing.assert_allclose(model.params[name] - before.params[name], 0.01, rtol=1e-6)


def training_set(n=4, size=16):
    samples = []
    maps = simulate_sensitivities(size, size, 2)
    for i in range(n):
        rng = np.random.Generator(np.random.PCG64(i))
        from kslab.phantom import perturbed_ellipses

        image = shepp_logan_phantom(size, size, perturbed_ellipses(rng)).astype(complex)
        ksp, target = simulate_acquisition(AcquisitionSim(image, maps, 0.005, i))
        samples.append(rim.TrainingSample(ksp.coils, target, volume=i // 2, maps=maps))
    return samples


SMALL = rim.RimConfig(time_steps=2, hidden_channels=4)


def small_schedule(**kw):
    base = dict(iterations=6, batch_size=2, lr=1e-3, warmup=2, decay_every=4, accelerations=(2, 3), seed=1)
    base.update(kw)
    return rim.Schedule(**base)


def test_zero_learning_rate_keeps_parameters():
    model = rim.init_model(SMALL, seed=0, zero_output=False)
    result = rim.rim_train(model, training_set(), "rectilinear", small_schedule(lr=0.0))
    for name, value in model.params.items():
        np.testing.assert_array_equal(result.model.params[name], value)


def test_training_is_deterministic_and_does_not_touch_the_input():
    model = rim.init_model(SMALL, seed=0)
    snapshot = model.copy()
    a = rim.rim_train(model, training_set(), "rectilinear", small_schedule())
    b = rim.rim_train(model, training_set(), "rectilinear", small_schedule())
    assert a.losses == b.losses
    for name in model.params:
        np.testing.assert_array_equal(model.params[name], snapshot.params[name])
        np.testing.assert_array_equal(a.model.params[name], b.model.params[name])


def test_resume_continues_like_an_uninterrupted_run():
    samples = training_set()
    model = rim.init_model(SMALL, seed=2)
    full = rim.rim_train(model, samples, "rectilinear", small_schedule())
    part = rim.rim_train(model, samples, "rectilinear", small_schedule(iterations=3))
    raw = rim.checkpoint_bytes(part.model, rim.training_state_tensors(part))
    restored_model, extra = rim.parse_checkpoint(raw)
    resumed = rim.rim_train(model, samples, "rectilinear", small_schedule(),
                            resume=rim.restore_training_state(restored_model, extra))
    assert resumed.losses == full.losses
    for name in full.model.params:
        np.testing.assert_array_equal(resumed.model.params[name], full.model.params[name])


def test_validation_keeps_best_model():
    scores = iter([0.5, 0.9, 0.7])
    result = rim.rim_train(rim.init_model(SMALL), training_set(), "rectilinear", small_schedule(),
                           validate=lambda m: next(scores), validate_every=2)
    assert result.validation == [(2, 0.5), (4, 0.9), (6, 0.7)]
    assert result.best_score == 0.9
    assert result.best_model is not None and result.best_model is not result.model


def test_masks_are_shared_within_a_volume():
    samples = training_set()
    masks = rim.draw_masks("rectilinear", samples, 3, seed=0, draw=5)
    assert masks[0] is masks[1] and masks[2] is masks[3]
    assert not np.array_equal(masks[0].bits, masks[2].bits)
    again = rim.draw_masks("rectilinear", samples, 3, seed=0, draw=5)
    assert all(a == b for a, b in zip(masks, again))


def test_training_rejects_mixed_sizes():
    samples = training_set() + training_set(1, 20)
    with pytest.raises(InvalidArgumentError):
        rim.rim_train(rim.init_model(SMALL), samples, "radial", small_schedule())


# --- checkpoints -------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    model = rim.init_model(rim.RimConfig(time_steps=3, hidden_channels=5, kernel_sizes=(3, 3, 1)), seed=4)
    model.input_scale = 0.123
    path = tmp_path / "m.rimckpt"
    rim.save_checkpoint(path, model)
    back = rim.load_checkpoint(path)
    assert back.config == model.config and back.input_scale == 0.123
    for name, value in model.params.items():
        np.testing.assert_array_equal(back.params[name], value)
    assert rim.checkpoint_bytes(back) == path.read_bytes()


def test_corrupt_checkpoints_are_rejected():
    raw = rim.checkpoint_bytes(rim.init_model(rim.RimConfig(hidden_channels=2)))
    for bad in (b"XXXXXXXX" + raw[8:], raw[:-3], raw + b"\x00"):
        with pytest.raises(TensorFormatError):
            rim.parse_checkpoint(bad)
