import numpy as np
import pytest

from pmn import container
from pmn.config import PRESETS, load_config, parameter_count, parse_config_text
from pmn.errors import ConfigurationError, DimensionError, FormatError, ParameterError
from pmn.pipeline import (
    FrameRecord,
    forward_prepared,
    frames_from_arrays,
    new_state,
    prepare_frame,
    prepare_sequence,
    process_frame,
    run_sequence,
    sweep_k,
)
from pmn.synth import ObjectSpec, flow_to_color, make_colorwheel, occlusion_scene, synth_generate, toy_scene
from pmn.weights import flatten, from_tensors, init_weights, load_weights, save_weights, to_tensors, unflatten

TOY = PRESETS["toy"]


@pytest.fixture(scope="module")
def toy_frames():
    seq = toy_scene()
    return frames_from_arrays(seq.rgb, seq.flow, seq.gt)


@pytest.fixture(scope="module")
def toy_weights():
    return init_weights(TOY, 0)


# config


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\npipeline.k = 7\npsm.residuals = off\nencoder.channels = 4,5,6\n\nslic.iters=3\n")
    cfg = load_config(path, "toy", {"pipeline.k": "9"})
    assert cfg.k == 9 and cfg.residuals is False and cfg.encoder_channels == (4, 5, 6) and cfg.slic_iters == 3
    assert load_config(None, "desk").height == 64


@pytest.mark.parametrize("text", ["nonsense", "pipeline.bogus = 1", "psm.residuals = maybe", "pipeline.k = x"])
def test_config_errors(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        load_config(path, "toy")


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TOY.replace(height=40)
    with pytest.raises(ConfigurationError):
        TOY.replace(sampler="hexagon")
    with pytest.raises(ConfigurationError):
        TOY.replace(channels=6, heads=4)
    with pytest.raises(ConfigurationError):
        load_config(None, "huge")
    assert parse_config_text("a = b = c") == {"a": "b = c"}


def test_paper_defaults():
    cfg = PRESETS["paper"]
    assert (cfg.height, cfg.width, cfg.n_segments, cfg.k) == (352, 352, 100, 50)
    assert cfg.heads == 4 and cfg.hidden == 2 * cfg.channels
    assert cfg.slic_compactness == 10.0 and cfg.slic_iters == 10


@pytest.mark.parametrize("cfg", [TOY, TOY.replace(tie_streams=False), PRESETS["desk"], TOY.replace(k=0, tau_channels=3)])
def test_parameter_count_formula(cfg):
    assert parameter_count(cfg) == len(flatten(init_weights(cfg, 0)))


def test_toy_is_small():
    assert parameter_count(TOY) <= 2000


# weights


def test_init_deterministic(tmp_path):
    a = container.dumps(to_tensors(init_weights(TOY, 3)))
    assert a == container.dumps(to_tensors(init_weights(TOY, 3)))
    assert a != container.dumps(to_tensors(init_weights(TOY, 4)))


def test_init_glorot_bounds_and_shapes():
    cfg = PRESETS["desk"]
    w = init_weights(cfg, 0)
    t = to_tensors(w)
    assert t["rgb.pgm.0.weight"].shape == (cfg.channels, cfg.encoder_channels[0])
    assert t["decoder.conv0.kernel"].shape == (cfg.decoder_width, 2 * cfg.k, 3, 3)
    bound = np.sqrt(6 / (cfg.channels + cfg.hidden))
    assert np.abs(t["rgb.psm.fc1.weight"]).max() <= bound
    assert np.all(t["rgb.psm.fc1.bias"] == 0) and np.all(t["rgb.psm.norm1.scale"] == 1)
    assert "flow.pgm.0.weight" in t


def test_weights_file_round_trip(tmp_path, toy_weights):
    save_weights(tmp_path / "w.pmnt", toy_weights)
    back = load_weights(tmp_path / "w.pmnt", TOY.heads)
    a, b = to_tensors(toy_weights), to_tensors(back)
    assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
    assert back.tied
    tensors = to_tensors(toy_weights)
    del tensors["decoder.head.bias"]
    with pytest.raises(FormatError, match="decoder.head.bias"):
        from_tensors(tensors, TOY.heads)


def test_flatten_round_trip(toy_weights):
    pv = flatten(toy_weights)
    again = flatten(unflatten(pv.values, pv.manifest, TOY.heads))
    assert np.array_equal(pv.values, again.values) and pv.manifest == again.manifest
    batch = unflatten(np.stack([pv.values, pv.values + 1]), pv.manifest, TOY.heads)
    assert batch.decoder.head.weight.shape == (2, 1, TOY.decoder_width)


# synthetic data


def test_zero_velocity_is_mid_gray():
    seq = synth_generate(ObjectSpec(velocity=(0.0, 0.0)), 3, (32, 32))
    assert all(np.allclose(f, 0.5) for f in seq.flow)
    assert np.allclose(flow_to_color(0.0, 0.0), 0.5)


def test_flow_wheel_colors():
    wheel = make_colorwheel()
    assert wheel.shape == (55, 3) and np.array_equal(wheel[0], [1.0, 0.0, 0.0])
    seq = synth_generate(ObjectSpec(velocity=(0.0, 2.0)), 3, (32, 32))
    # rightward 2 px at max_flow 4: half way between gray and wheel[0]
    assert np.allclose(seq.flow[0][seq.gt[0]], [0.75, 0.25, 0.25])
    assert np.allclose(seq.flow[0][~seq.gt[0]], 0.5)
    # downward 2 px: angle -pi/2 lands at wheel position 13.5 (red-yellow ramp)
    g = (np.floor(255 * 13 / 15) + np.floor(255 * 14 / 15)) / 2 / 255
    assert np.allclose(flow_to_color(0.0, 2.0), 0.25 + 0.5 * np.array([1.0, g, 0.0]))


def test_synth_gt_area_and_bounds():
    seq = synth_generate(ObjectSpec(size=(6, 8), velocity=(1.0, 2.0)), 6, (32, 32))
    assert len(seq.rgb) == 6 and len(seq.flow) == 5
    assert {int(m.sum()) for m in seq.gt} == {48}
    with pytest.raises(ParameterError):
        synth_generate(ObjectSpec(start=(4.0, 20.0), velocity=(0.0, 3.0)), 6, (32, 32))


def test_occlusion_scene_hides_object():
    seq = occlusion_scene()
    assert [int(m.sum()) for m in seq.gt][2:6] == [100, 0, 0, 100]
    assert np.allclose(seq.flow[3], 0.5)


# pipeline


def test_first_frame_bank_sizes(toy_frames, toy_weights):
    inputs = prepare_frame(toy_frames[0], TOY)
    _, state, taus = forward_prepared(new_state(TOY), inputs, toy_weights, TOY)
    for s in ("rgb", "flow"):
        assert len(state.bank(s)) == min(len(inputs[s].masks), TOY.k)
        assert taus[s].channels == TOY.k


def test_memory_off_keeps_banks_empty(toy_frames, toy_weights):
    cfg = TOY.replace(memory=False)
    state = new_state(cfg)
    for frame in toy_frames[:3]:
        _, state = process_frame(state, frame, toy_weights, cfg)
        assert len(state.rgb) == 0 and len(state.flow) == 0


def test_identical_frames(toy_frames, toy_weights):
    f = toy_frames[0]
    state = new_state(TOY)
    m1, _ = process_frame(state, f, toy_weights, TOY)
    m2, _ = process_frame(state, f, toy_weights, TOY)
    assert np.array_equal(m1.values, m2.values)
    cfg = TOY.replace(memory=False)
    m1, s1 = process_frame(new_state(cfg), f, toy_weights, cfg)
    m2, _ = process_frame(s1, FrameRecord(1, f.rgb, f.flow), toy_weights, cfg)
    assert np.array_equal(m1.values, m2.values)


def test_run_sequence_basics(toy_frames, toy_weights):
    one = run_sequence(toy_frames[:1], toy_weights, TOY)
    assert len(one.masks) == 1 and one.metrics is not None
    a = run_sequence(toy_frames, toy_weights, TOY)
    b = run_sequence(toy_frames, toy_weights, TOY)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a.masks, b.masks))
    assert all(m.values.shape == (32, 32) for m in a.masks)
    assert set(a.scores[0]) == {"rgb", "flow"}
    with pytest.raises(ParameterError):
        run_sequence([], toy_weights, TOY)


def test_sequence_isolation(toy_weights):
    s1, s2 = toy_scene(seed=0), occlusion_scene(seed=5)
    f1 = frames_from_arrays(s1.rgb, s1.flow)
    f2 = frames_from_arrays(s2.rgb, s2.flow)
    serial1 = [m.values for m in run_sequence(f1, toy_weights, TOY).masks]
    serial2 = [m.values for m in run_sequence(f2, toy_weights, TOY).masks]
    st1, st2 = new_state(TOY, "a"), new_state(TOY, "b")
    for t in range(len(f1)):
        m1, st1 = process_frame(st1, f1[t], toy_weights, TOY)
        m2, st2 = process_frame(st2, f2[t], toy_weights, TOY)
        assert np.array_equal(m1.values, serial1[t]) and np.array_equal(m2.values, serial2[t])


def _frame2_tau(frames, weights, cfg):
    prepared = prepare_sequence(frames, cfg)
    state = new_state(cfg)
    _, state, _ = forward_prepared(state, prepared[0], weights, cfg, 0)
    _, _, taus = forward_prepared(state, prepared[1], weights, cfg, 1)
    return taus


def test_memory_dependence(toy_frames, toy_weights):
    rng = np.random.default_rng(0)
    perturbed = list(toy_frames)
    f0 = toy_frames[0]
    perturbed[0] = FrameRecord(0, np.clip(f0.rgb + 0.2 * rng.random(f0.rgb.shape), 0, 1), f0.flow, f0.gt)
    for memory, expect_change in ((True, True), (False, False)):
        cfg = TOY.replace(memory=memory)
        a = _frame2_tau(toy_frames[:2], toy_weights, cfg)
        b = _frame2_tau(perturbed[:2], toy_weights, cfg)
        changed = any(not np.array_equal(x, y) for x, y in zip(a["rgb"].tau, b["rgb"].tau))
        assert changed == expect_change


def test_error_context(toy_weights):
    bad = FrameRecord(0, np.zeros((16, 16, 3)), None)
    with pytest.raises(DimensionError, match="frame 0, stream rgb"):
        process_frame(new_state(TOY), bad, toy_weights, TOY)


def test_decoder_channel_check(toy_weights):
    with pytest.raises(ConfigurationError):
        run_sequence([FrameRecord(0, np.zeros((32, 32, 3)))], toy_weights, TOY.replace(k=3))


def test_last_frame_reuses_flow(toy_frames):
    prepared = prepare_sequence(toy_frames, TOY)
    last, prev = prepared[-1]["flow"].pyramid, prepared[-2]["flow"].pyramid
    assert toy_frames[-1].flow is None
    assert all(np.array_equal(a, b) for a, b in zip(last.levels, prev.levels))


def test_frames_from_arrays_lengths():
    img = np.zeros((32, 32, 3))
    assert len(frames_from_arrays([img] * 3, [img] * 3)) == 3
    with pytest.raises(ParameterError):
        frames_from_arrays([img] * 3, [img])


@pytest.mark.parametrize("sampler", ["superpixel", "grid", "random"])
@pytest.mark.parametrize("scorer", ["transformer", "mlp"])
def test_all_switches_run(toy_frames, sampler, scorer):
    cfg = TOY.replace(sampler=sampler, scorer=scorer, residuals=scorer == "mlp", store_raw=sampler == "grid")
    res = run_sequence(toy_frames[:3], init_weights(cfg, 1), cfg)
    assert 0 <= res.metrics.jf <= 1


def test_sweep_k(toy_frames, toy_weights):
    rows = sweep_k(toy_frames[:4], toy_weights, TOY, [6, 0, 2, 2])
    assert [r["k"] for r in rows] == [0, 2, 6]
    off = run_sequence(toy_frames[:4], toy_weights, TOY.replace(memory=False))
    assert all(np.array_equal(a.values, b.values) for a, b in zip(rows[0]["masks"], off.masks))
    on = run_sequence(toy_frames[:4], toy_weights, TOY)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(rows[2]["masks"], on.masks))
    with pytest.raises(ParameterError):
        sweep_k(toy_frames[:2], toy_weights, TOY, [-1])
