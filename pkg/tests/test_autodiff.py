import numpy as np
import pytest

from xmodal import autodiff as ad
from xmodal.autodiff import gradcheck
from xmodal.autodiff.optim import adam_update
from xmodal.autodiff.tensor import check_finite, topological_order
from xmodal.errors import ConfigError, DivergenceError, FormatError, ShapeError, UndefinedLossError


def T(a, grad=True):
    return ad.Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def conv_reference(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w) + b
    return out


# -- conv2d -------------------------------------------------------------------

def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    w = np.eye(3).reshape(3, 3, 1, 1)
    with ad.float64_mode():
        y = ad.conv2d(T(x), T(w), T(np.zeros(3)))
    assert np.array_equal(y.data, x)


def test_conv_box_filter_preserves_constants():
    x = np.full((1, 1, 6, 6), 2.5)
    w = np.full((1, 1, 3, 3), 1 / 9)
    with ad.float64_mode():
        y = ad.conv2d(T(x), T(w)).data
    assert np.allclose(y[0, 0, 1:-1, 1:-1], 2.5, atol=1e-12)


@pytest.mark.parametrize("stride,pad", [(1, "same"), (1, 0), (2, 1), (2, 0)])
def test_conv_matches_loop_reference(rng, stride, pad):
    x = rng.standard_normal((2, 3, 7, 7))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    with ad.float64_mode():
        y = ad.conv2d(T(x), T(w), T(b), stride=stride, padding=pad).data
    assert np.allclose(y, conv_reference(x, w, b, stride, 1 if pad == "same" else pad), atol=1e-12)


def test_conv_errors(rng):
    with ad.float64_mode():
        with pytest.raises(ShapeError):
            ad.conv2d(T(np.zeros((1, 2, 4, 4))), T(np.zeros((1, 3, 3, 3))))
        with pytest.raises(ConfigError):
            ad.conv2d(T(np.zeros((1, 1, 4, 4))), T(np.zeros((1, 1, 3, 3))), stride=2, padding=1)
        with pytest.raises(ConfigError):
            ad.conv2d(T(np.zeros((1, 1, 4, 4))), T(np.zeros((1, 1, 2, 2))))


def test_conv_gradient_eps_1e4(rng):
    """Analytic vs central differences at eps 1e-4 on a 2x3x5x5 input."""
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    r = gradcheck.check(lambda a, k, c: ad.conv2d(a, k, c), [x, w, b], rng, "conv", step=1e-4)
    assert r.rel_error < 1e-5


# -- elementwise / structural ------------------------------------------------

def test_relu_values_and_kink():
    with ad.float64_mode():
        x = T([-1.0, 0.0, 2.0])
        y = ad.relu(x)
        ad.backward(ad.weighted_sum([y], [1.0]) if y.data.size == 1 else _sum(y))
    assert y.data.tolist() == [0.0, 0.0, 2.0]
    assert x.grad.tolist() == [0.0, 0.0, 1.0]


def _sum(t):
    return gradcheck._project(t, np.ones_like(t.data))


def test_downsample_block_mean():
    with ad.float64_mode():
        y = ad.downsample_avg(T(np.array([[[[1.0, 3.0], [5.0, 7.0]]]])), 2)
    assert y.data.item() == 4.0


@pytest.mark.parametrize("factor", [2, 4])
def test_up_down_constants_fixed(factor):
    x = np.full((1, 2, 8, 8), -3.25)
    with ad.float64_mode():
        d = ad.downsample_avg(T(x), factor)
        u = ad.upsample_bilinear(d, factor)
    assert np.allclose(u.data, x, atol=1e-12) and u.shape == x.shape


def test_upsample_align_corners_false():
    # 1-D ramp [0, 1] upsampled x2: samples at source coords -0.25, 0.25, 0.75, 1.25 clamped
    x = np.array([0.0, 1.0]).reshape(1, 1, 1, 2)
    with ad.float64_mode():
        y = ad.upsample_bilinear(T(np.repeat(x, 2, axis=2)), 2).data[0, 0, 0]
    assert np.allclose(y, [0.0, 0.25, 0.75, 1.0])


def test_factor_must_be_power_of_two():
    with pytest.raises(ConfigError):
        ad.upsample_bilinear(T(np.zeros((1, 1, 2, 2))), 3)


def test_concat_split_gradients(rng):
    a, b = rng.standard_normal((2, 1, 3, 3)), rng.standard_normal((2, 2, 3, 3))
    g = rng.standard_normal((2, 3, 3, 3))
    with ad.float64_mode():
        ta, tb = T(a), T(b)
        y = ad.concat_channels([ta, tb])
        ad.backward(y, g)
    assert np.array_equal(np.concatenate([ta.grad, tb.grad], axis=1), g)
    with pytest.raises(ShapeError):
        ad.concat_channels([T(np.zeros((1, 1, 2, 2))), T(np.zeros((1, 1, 3, 2)))])


def test_normalize_unit(rng):
    with ad.float64_mode():
        y = ad.normalize_channels(T(rng.standard_normal((2, 3, 4, 4)))).data
    assert np.allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-12)


# -- losses -------------------------------------------------------------------

def test_ce_uniform_and_saturated():
    tgt = np.zeros((1, 2, 2), dtype=int)
    with ad.float64_mode():
        assert abs(ad.softmax_cross_entropy(T(np.zeros((1, 4, 2, 2))), tgt).data - np.log(4)) < 1e-12
        z = np.zeros((1, 4, 2, 2))
        z[:, 0] = 100
        assert ad.softmax_cross_entropy(T(z), tgt).data < 1e-6


def test_ce_gradient_formula(rng):
    z = rng.standard_normal((1, 3, 2, 2))
    tgt = rng.integers(0, 3, (1, 2, 2))
    with ad.float64_mode():
        t = T(z)
        ad.backward(ad.softmax_cross_entropy(t, tgt))
    p = np.exp(z) / np.exp(z).sum(1, keepdims=True)
    onehot = np.moveaxis(np.eye(3)[tgt], -1, 1)
    assert np.allclose(t.grad, (p - onehot) / 4, atol=1e-12)


def test_ce_all_masked():
    with pytest.raises(UndefinedLossError):
        ad.softmax_cross_entropy(T(np.zeros((1, 2, 2, 2))), np.zeros((1, 2, 2), int),
                                 np.ones((1, 2, 2), bool))


def test_epe_loss_cases():
    with ad.float64_mode():
        gt = np.zeros((1, 2, 1, 1))
        assert abs(ad.epe_loss(T(np.array([3.0, 4.0]).reshape(1, 2, 1, 1)), gt).data - 5.0) < 1e-6
        assert ad.epe_loss(T(gt), gt).data <= 1e-6
        with pytest.raises(UndefinedLossError):
            ad.epe_loss(T(gt), gt, np.zeros((1, 1, 1), bool))


def test_cosine_loss_extremes():
    n = np.zeros((1, 3, 2, 2))
    n[:, 2] = -1
    with ad.float64_mode():
        assert abs(ad.cosine_normal_loss(T(2 * n), n).data) < 1e-12
        assert abs(ad.cosine_normal_loss(T(-n), n).data - 2.0) < 1e-12
        with pytest.raises(UndefinedLossError):
            ad.cosine_normal_loss(T(n), n, np.zeros((1, 2, 2), bool))


def test_loss_permutation_invariant(rng):
    z = rng.standard_normal((4, 3, 3, 3))
    tgt = rng.integers(0, 3, (4, 3, 3))
    perm = [2, 0, 3, 1]
    with ad.float64_mode():
        a = ad.softmax_cross_entropy(T(z), tgt).data
        b = ad.softmax_cross_entropy(T(z[perm]), tgt[perm]).data
    assert abs(a - b) < 1e-12


# -- graph ---------------------------------------------------------------------

def test_backward_order_and_reachability(rng):
    with ad.float64_mode():
        w1 = ad.Parameter(rng.standard_normal((2, 1, 3, 3)), "w1")
        w2 = ad.Parameter(rng.standard_normal((1, 2, 1, 1)), "w2")
        x = ad.Tensor(rng.standard_normal((1, 1, 4, 4)))
        h = ad.relu(ad.conv2d(x, w1))
        y = ad.conv2d(h, w2)
        loss = ad.epe_loss(ad.concat_channels([y, y]), np.zeros((1, 2, 4, 4)))
        order = topological_order(loss)
        visited = ad.backward(loss)
    pos = {id(n): i for i, n in enumerate(order)}
    for node in order:
        for p in node.parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(node)]
    assert [id(n) for n in visited] == [id(n) for n in reversed(order)]
    assert w1.grad is not None and w2.grad is not None


# -- optimizer ------------------------------------------------------------------

def test_adam_zero_gradient_fixed_point():
    p = np.array([1.0, -2.0])
    out = adam_update(p.copy(), np.zeros(2), np.zeros(2), np.zeros(2), 1, 1e-3)
    assert np.array_equal(out, p)


def test_adam_first_step_magnitude_is_lr():
    p = np.zeros(3)
    out = adam_update(p, np.array([0.5, -2.0, 7.0]), np.zeros(3), np.zeros(3), 1, 1e-3)
    assert np.allclose(out, [-1e-3, 1e-3, -1e-3], rtol=1e-6)


def test_adam_nonfinite_gradient_names_parameter():
    p = ad.Parameter(np.zeros(2, np.float32), "trunk.conv0.weight")
    opt = ad.Adam([p])
    p.grad = np.array([np.nan, 0.0], np.float32)
    with pytest.raises(DivergenceError, match="trunk.conv0.weight"):
        opt.step()


def test_training_mode_rejects_nan():
    with check_finite(), np.errstate(invalid="ignore"), pytest.raises(DivergenceError):
        ad.mul_scalar(ad.Tensor(np.array([np.inf]), requires_grad=True), 0.0)


def _adam_run(seed):
    rng = np.random.default_rng(seed)
    w = ad.Parameter(rng.standard_normal((2, 1, 3, 3)).astype(np.float32), "w")
    x = rng.standard_normal((1, 1, 5, 5)).astype(np.float32)
    gt = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
    opt = ad.Adam([w], lr=1e-2)
    for _ in range(5):
        opt.zero_grad()
        ad.backward(ad.epe_loss(ad.conv2d(ad.Tensor(x), w), gt))
        opt.step()
    return w.data.tobytes()


def test_adam_deterministic():
    assert _adam_run(3) == _adam_run(3)


# -- checkpoints -----------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, rng):
    ps = [ad.Parameter(rng.standard_normal((2, 3)).astype(np.float32), "a"),
          ad.Parameter(rng.standard_normal(4), "b.bias", dtype=np.float64)]
    p = str(tmp_path / "c.ckpt")
    ad.save_parameters(ps, p, {"k": 1})
    meta, arrays = ad.load_parameters(p)
    assert meta == {"k": 1} and list(arrays) == ["a", "b.bias"]
    for q in ps:
        assert arrays[q.name].dtype == q.data.dtype
        assert arrays[q.name].tobytes() == q.data.tobytes()


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"NOPE")
    with pytest.raises(FormatError):
        ad.load_parameters(str(p))


# -- finite-difference suite -------------------------------------------------------

@pytest.mark.parametrize("name", [n for n, _, _ in gradcheck.op_suite()])
def test_gradcheck_op(name):
    res = {r.name: r for r in gradcheck.check_ops()}
    assert res[name].rel_error < 1e-5


def test_gradcheck_model():
    assert gradcheck.check_model().rel_error < 1e-4


def test_gradcheck_detects_wrong_gradient(rng):
    from xmodal.autodiff.tensor import make_node

    def bad_square(t):
        return make_node(t.data ** 2, (t,), lambda g: (g * t.data,), "bad")  # missing factor 2
    r = gradcheck.check(bad_square, [rng.standard_normal(5)], rng, "bad")
    assert r.rel_error > 0.1
