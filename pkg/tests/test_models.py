import numpy as np
import pytest

from predlab.models import (
    CheckpointError,
    FcnnConfig,
    RecurrentConfig,
    RecurrentState,
    default_config,
    fcnn_forward,
    init_params,
    load_checkpoint,
    param_count,
    param_shapes,
    read_checkpoint,
    recurrent_step,
    save_checkpoint,
    zero_params,
)
from predlab.optim import AdamState, adam_step
from predlab.tensor import ShapeError, Tensor, backward, mse_loss, no_grad

from oracles import central_diff, max_rel_err

TINY = {
    "crnn": RecurrentConfig("crnn", channels=4, num_res_blocks=1),
    "clstm": RecurrentConfig("clstm", channels=4, num_res_blocks=1),
    "fcnn": FcnnConfig(input_frames=3, channels=4, num_res_blocks=1),
}


def test_reference_parameter_counts():
    assert param_count(default_config("crnn")) == 702_849
    assert param_count(default_config("clstm")) == 1_037_121
    assert param_count(default_config("fcnn")) == 38_376_193


def test_count_closed_forms():
    crnn = 37_568 + 73_856 + 8 * 73_856 + 577
    clstm = 150_272 + 295_424 + 8 * 73_856 + 577
    fcnn = (8 * 9 * 256 + 256) + 32 * 2 * (256 ** 2 * 9 + 256) + (256 ** 2 * 9 + 256) + (256 * 9 + 1)
    assert (crnn, clstm, fcnn) == (702_849, 1_037_121, 38_376_193)
    assert param_count(default_config("crnn")) == crnn


@pytest.mark.parametrize("arch", ["crnn", "clstm"])
def test_recurrent_param_count_from_params_matches_config(arch):
    cfg = default_config(arch)
    assert param_count(init_params(cfg, 0)) == param_count(cfg)


def test_init_deterministic_and_zero_biases():
    a, b = init_params(TINY["clstm"], 5), init_params(TINY["clstm"], 5)
    for n in a.tensors:
        assert np.array_equal(a[n].data, b[n].data)
        if a[n].data.ndim == 1:
            assert np.all(a[n].data == 0)
    c = init_params(TINY["clstm"], 6)
    assert not np.array_equal(a["rnn2.w_h.i"].data, c["rnn2.w_h.i"].data)


def test_init_weight_std_is_he_uniform():
    p = init_params(default_config("crnn"), 0)
    w = p["rnn2.w_h"].data  # 64x64x3x3
    fan_in = 64 * 9
    expected = np.sqrt(6 / fan_in) / np.sqrt(3)  # uniform(-b, b) std = b / sqrt(3) = sqrt(2 / fan_in)
    assert abs(w.std() / expected - 1) < 0.15
    assert np.isclose(expected, np.sqrt(2 / fan_in))


@pytest.mark.parametrize("arch", ["crnn", "clstm"])
def test_recurrent_zero_params_predict_zero(arch):
    cfg = TINY[arch]
    p = zero_params(cfg)
    frame = Tensor(np.random.default_rng(0).uniform(-1, 1, (2, 1, 6, 7)))
    pred, state = recurrent_step(frame, RecurrentState.zeros(cfg, 2, 6, 7), p)
    assert np.all(pred.data == 0)
    assert (state.layers[0].c is not None) == (arch == "clstm")


@pytest.mark.parametrize("arch", ["crnn", "clstm"])
def test_recurrent_default_patch_shape(arch):
    cfg = RecurrentConfig(arch, channels=2, num_res_blocks=1)
    p = init_params(cfg, 0)
    with no_grad():
        pred, _ = recurrent_step(Tensor(np.zeros((4, 1, 184, 184))), RecurrentState.zeros(cfg, 4, 184, 184), p)
    assert pred.shape == (4, 1, 184, 184)


def test_recurrent_state_mismatch():
    cfg = TINY["crnn"]
    with pytest.raises(ShapeError):
        recurrent_step(Tensor(np.zeros((1, 1, 5, 5))), RecurrentState.zeros(cfg, 1, 6, 5), init_params(cfg))


@pytest.mark.parametrize("arch", ["crnn", "clstm"])
def test_forward_values_do_not_depend_on_graph(arch):
    cfg = TINY[arch]
    p = init_params(cfg, 1)
    rng = np.random.default_rng(2)
    f1, f2 = (Tensor(rng.uniform(-1, 1, (1, 1, 5, 5))) for _ in range(2))
    s0 = RecurrentState.zeros(cfg, 1, 5, 5)
    _, s1 = recurrent_step(f1, s0, p)
    out_graph, _ = recurrent_step(f2, s1, p)
    out_detached, _ = recurrent_step(f2, s1.detach(), p)
    assert np.array_equal(out_graph.data, out_detached.data)
    assert s1.detach().layers[0].h.node is None


def test_fcnn_zero_params_output_zero():
    cfg = TINY["fcnn"]
    out = fcnn_forward(Tensor(np.random.default_rng(0).uniform(-1, 1, (2, 3, 5, 5))), zero_params(cfg))
    assert np.all(out.data == 0)


def test_fcnn_output_bounded():
    cfg = FcnnConfig(input_frames=8, channels=4, num_res_blocks=2)
    p = init_params(cfg, 3)
    for t in p.tensors.values():
        t.data *= 20  # push pre-activations far into saturation
    out = fcnn_forward(Tensor(np.random.default_rng(1).uniform(-1, 1, (2, 8, 48, 48))), p)
    assert out.shape == (2, 1, 48, 48)
    assert out.data.min() >= -1 and out.data.max() <= 1


def test_fcnn_wrong_frame_count():
    with pytest.raises(ShapeError):
        fcnn_forward(Tensor(np.zeros((1, 2, 5, 5))), init_params(TINY["fcnn"]))


@pytest.mark.parametrize("arch", ["crnn", "clstm", "fcnn"])
def test_interior_translation_equivariance(arch):
    cfg = TINY[arch]
    p = init_params(cfg, 4)
    rng = np.random.default_rng(5)
    k = 1 if arch != "fcnn" else cfg.input_frames
    size = 24
    x = rng.uniform(-1, 1, (1, k, size, size))
    shifted = np.roll(x, 1, axis=3)

    def run(a):
        with no_grad():
            if arch == "fcnn":
                return fcnn_forward(Tensor(a), p).data
            return recurrent_step(Tensor(a), RecurrentState.zeros(cfg, 1, size, size), p)[0].data

    y, ys = run(x), run(shifted)
    radius = 2 * cfg.num_res_blocks + 3  # one pixel per 3x3 conv on the input-to-output path
    lo, hi = radius + 1, size - radius - 1
    assert hi - lo >= 8
    assert np.abs(ys[..., lo:hi, lo + 1:hi + 1] - y[..., lo:hi, lo:hi]).max() < 1e-12
    # near the border zero padding breaks the symmetry
    assert np.abs(ys[..., 0, 1] - y[..., 0, 0]).max() > 0


def _params_fd_check(arch, names):
    cfg = TINY[arch]
    p = init_params(cfg, 7)
    rng = np.random.default_rng(8)
    k = cfg.input_frames if arch == "fcnn" else 1
    x = rng.uniform(-1, 1, (1, k, 4, 4))
    tgt = rng.uniform(-1, 1, (1, 1, 4, 4))
    state = RecurrentState.zeros(cfg, 1, 4, 4) if arch != "fcnn" else None

    def forward():
        if arch == "fcnn":
            return fcnn_forward(Tensor(x), p)
        pred, s = recurrent_step(Tensor(x), state, p)
        pred, _ = recurrent_step(Tensor(x[:, :, ::-1].copy()), s, p)  # two steps exercise the hidden path
        return pred

    backward(mse_loss(forward(), Tensor(tgt)))
    for name in names:
        t = p[name]
        analytic = t.grad.copy()
        orig = t.data.copy()

        def f(v):
            t.data[...] = v
            with no_grad():
                return mse_loss(forward(), Tensor(tgt)).item()

        numeric = central_diff(f, orig)
        t.data[...] = orig
        assert max_rel_err(analytic, numeric) < 1e-4, name
    assert all(t.grad is not None for t in p.tensors.values())


def test_recurrent_param_gradients_crnn():
    _params_fd_check("crnn", ["rnn1.w_x", "rnn1.b_h", "rnn2.w_h", "res0.conv1.weight", "out.bias"])


def test_recurrent_param_gradients_clstm():
    _params_fd_check("clstm", ["rnn1.w_x.f", "rnn1.w_h.i", "rnn2.b_x.o", "rnn2.w_h.g", "out.weight"])


def test_fcnn_param_gradients():
    _params_fd_check("fcnn", ["head.weight", "res0.conv2.weight", "body_end.bias", "tail.weight"])


# --- checkpoints ----------------------------------------------------------------

@pytest.mark.parametrize("arch", ["crnn", "clstm", "fcnn"])
def test_checkpoint_round_trip_default_models(arch, tmp_path):
    cfg = default_config(arch)
    p = init_params(cfg, 11) if arch != "fcnn" else zero_params(cfg)
    if arch == "fcnn":
        p["tail.weight"].data[:] = np.random.default_rng(0).normal(size=p["tail.weight"].shape)
    path = save_checkpoint(p, tmp_path / f"{arch}.ckpt")
    q = load_checkpoint(path, cfg)
    assert q.arch == arch and q.config == cfg
    assert list(q.tensors) == list(p.tensors)
    for n in p.tensors:
        assert np.array_equal(p[n].data, q[n].data)
    if arch == "fcnn":
        assert param_count(q) == 38_376_193


def test_checkpoint_includes_optimizer(tmp_path):
    cfg = TINY["crnn"]
    p = init_params(cfg, 0)
    opt = AdamState(lr=1e-3)
    for t in p.tensors.values():
        t.grad = np.ones_like(t.data)
    adam_step(p.tensors, opt)
    ck = read_checkpoint(save_checkpoint(p, tmp_path / "c.ckpt", opt, meta={"updates": 1}))
    assert ck.optimizer.t == 1 and ck.optimizer.lr == 1e-3
    for n in p.tensors:
        assert np.array_equal(ck.optimizer.m[n], opt.m[n])
        assert np.array_equal(ck.optimizer.v[n], opt.v[n])
    assert ck.meta == {"updates": 1}


def test_checkpoint_arch_guard(tmp_path):
    path = save_checkpoint(init_params(TINY["crnn"]), tmp_path / "c.ckpt")
    with pytest.raises(CheckpointError, match="architecture"):
        load_checkpoint(path, RecurrentConfig("clstm", channels=4, num_res_blocks=1))
    with pytest.raises(CheckpointError, match="config"):
        load_checkpoint(path, RecurrentConfig("crnn", channels=4, num_res_blocks=2))


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "missing.ckpt")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + b"\0" * 20)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)
    good = save_checkpoint(init_params(TINY["crnn"]), tmp_path / "t.ckpt")
    good.write_bytes(good.read_bytes()[:-16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(good)


def test_param_shapes_follow_config():
    shapes = dict(param_shapes(TINY["clstm"]))
    assert shapes["rnn1.w_x.i"] == (4, 1, 3, 3)
    assert shapes["rnn2.w_h.g"] == (4, 4, 3, 3)
    assert shapes["out.weight"] == (1, 4, 3, 3)
    assert dict(param_shapes(TINY["fcnn"]))["head.weight"] == (4, 3, 3, 3)
