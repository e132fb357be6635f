"""Positional encoding, coordinate MLPs, warp field, serialization."""

import numpy as np
import pytest

from l2greg import autodiff as ad
from l2greg import fields, lie
from l2greg.autodiff import Tensor

from oracles import check_gradient


def test_frequency_weights_endpoints():
    np.testing.assert_array_equal(fields.frequency_weights(4, 0.0), np.zeros(4))
    np.testing.assert_array_equal(fields.frequency_weights(4, 4.0), np.ones(4))


def test_frequency_weights_midpoint_window():
    np.testing.assert_allclose(
        fields.frequency_weights(4, 1.5), [1.0, 0.5, 0.0, 0.0], atol=1e-15)


def test_frequency_weights_clamps_alpha():
    np.testing.assert_array_equal(fields.frequency_weights(3, -2.0), np.zeros(3))
    np.testing.assert_array_equal(fields.frequency_weights(3, 99.0), np.ones(3))


def test_encode_alpha_zero_passes_only_input():
    pe = fields.PositionalEncoding(3, alpha=0.0)
    x = np.array([[0.3, -0.7]])
    out = fields.encode(Tensor(x), pe).numpy()
    assert out.shape == (1, 2 * (1 + 2 * 3))
    np.testing.assert_array_equal(out[:, :2], x)
    np.testing.assert_array_equal(out[:, 2:], 0.0)


def test_encode_alpha_full_matches_plain_sinusoids():
    pe = fields.PositionalEncoding(3, alpha=3.0)
    x = np.array([[0.25, -0.5], [0.1, 0.9]])
    out = fields.encode(Tensor(x), pe).numpy()
    expected = [x]
    for k in range(3):
        f = (2.0 ** k) * np.pi
        expected.append(np.concatenate([np.sin(f * x), np.cos(f * x)], axis=1))
    np.testing.assert_allclose(out, np.concatenate(expected, axis=1), atol=1e-15)


def test_encode_continuous_in_alpha_at_band_boundaries():
    pe_lo = fields.PositionalEncoding(4, alpha=2.0 - 1e-9)
    pe_hi = fields.PositionalEncoding(4, alpha=2.0 + 1e-9)
    x = Tensor(np.random.default_rng(0).uniform(-1, 1, (5, 2)))
    lo = fields.encode(x, pe_lo).numpy()
    hi = fields.encode(x, pe_hi).numpy()
    assert np.max(np.abs(hi - lo)) < 1e-8


def test_encode_gradient_flows_through_x():
    pe = fields.PositionalEncoding(4, alpha=2.3)
    err = check_gradient(
        lambda t: ad.sumsq(fields.encode(t.reshape((3, 2)), pe)),
        np.random.default_rng(1).uniform(-1, 1, 6))
    assert err < 1e-5


def test_zero_weight_field_is_constant():
    f = fields.make_image_field(seed=0, hidden=16, depth=2, num_frequencies=2)
    for w, b in f.layers:
        w.data[...] = 0.0
        b.data[...] = 0.0
    out = fields.eval_field(f, Tensor(np.random.default_rng(2).uniform(-1, 1, (7, 2))))
    np.testing.assert_allclose(out.numpy(), 0.5, atol=1e-15)  # sigmoid(0)


def test_batch_evaluation_matches_per_point():
    f = fields.make_image_field(seed=3, hidden=16, depth=2, num_frequencies=3)
    pts = np.random.default_rng(3).uniform(-1, 1, (6, 2))
    batched = fields.eval_field(f, Tensor(pts)).numpy()
    singles = np.stack([
        fields.eval_field(f, Tensor(pts[i:i + 1])).numpy()[0] for i in range(6)
    ])
    np.testing.assert_allclose(batched, singles, atol=1e-14)


def test_field_parameter_gradients_match_finite_differences():
    f = fields.make_image_field(seed=4, hidden=8, depth=2, num_frequencies=2)
    pts = Tensor(np.random.default_rng(4).uniform(-1, 1, (5, 2)))
    target = Tensor(np.random.default_rng(5).uniform(0, 1, (5, 3)))
    flat0 = np.concatenate([p.numpy().ravel() for p in fields.parameters(f)])

    def loss(theta):
        offset = 0
        for p in fields.parameters(f):
            n = p.size
            p.data[...] = theta.numpy()[offset:offset + n].reshape(p.shape)
            offset += n
        # rebuild graph on fresh leaves so FD sees the same parameters
        h = fields.encode(pts, f.encoding)
        offset = 0
        values = theta
        out = h
        last = len(f.layers) - 1
        for i, (w, b) in enumerate(f.layers):
            nw, nb = w.size, b.size
            wt = values[offset:offset + nw].reshape(w.shape)
            offset += nw
            bt = values[offset:offset + nb].reshape((b.size,))
            offset += nb
            out = out @ wt + bt
            if i < last:
                out = ad.relu(out)
        return ad.sumsq(ad.sigmoid(out) - target)

    assert check_gradient(loss, flat0) < 1e-5


@pytest.mark.parametrize("kind", ["se2", "sl3", "se3"])
def test_zero_initialized_warp_gives_identity(kind):
    warp = fields.make_warp_field(4, kind, seed=5, hidden=16, depth=2, embed_dim=8)
    x = Tensor(np.random.default_rng(6).uniform(-1, 1, (9, 2)))
    frames = np.random.default_rng(7).integers(0, 4, 9)
    t = fields.eval_warp(warp, x, frames)
    n = t.matrix.shape[-1]
    np.testing.assert_array_equal(
        t.matrix.numpy(), np.broadcast_to(np.eye(n), (9, n, n)))


def test_anchored_frame_stays_identity_with_trained_weights():
    warp = fields.make_warp_field(3, "se2", seed=8, hidden=16, depth=2, embed_dim=8)
    rng = np.random.default_rng(8)
    for w, b in warp.layers:  # overwrite the zero last layer too
        w.data[...] = rng.normal(0, 0.3, w.shape)
        b.data[...] = rng.normal(0, 0.3, b.shape)
    x = Tensor(rng.uniform(-1, 1, (12, 2)))
    frames = np.array([0, 1, 2] * 4)
    t = fields.eval_warp(warp, x, frames, anchor_frame=0)
    m = t.matrix.numpy()
    anchored = m[frames == 0]
    np.testing.assert_array_equal(anchored, np.broadcast_to(np.eye(3), anchored.shape))
    assert np.max(np.abs(m[frames != 0] - np.eye(3))) > 1e-3


def test_warp_frame_out_of_range_errors():
    warp = fields.make_warp_field(2, "se2", seed=9, hidden=8, depth=1, embed_dim=4)
    with pytest.raises(IndexError, match="frame index"):
        fields.eval_warp(warp, Tensor(np.zeros((1, 2))), np.array([5]))


def test_warp_gradient_through_exp_matches_finite_differences():
    warp = fields.make_warp_field(2, "se2", seed=10, hidden=8, depth=1, embed_dim=4)
    rng = np.random.default_rng(10)
    x = Tensor(rng.uniform(-1, 1, (6, 2)))
    frames = np.array([0, 1, 1, 0, 1, 0])
    params = fields.parameters(warp)
    flat0 = np.concatenate([p.numpy().ravel() for p in params])
    flat0 = flat0 + rng.normal(0, 0.05, flat0.shape)  # move off the zero init
    weights = Tensor(rng.standard_normal((6, 3, 3)))

    def loss(theta):
        offset = 0
        normalized = (x - Tensor(warp.input_offset)) * Tensor(1.0 / warp.input_scale)
        emb_size = warp.embeddings.size

        layer_tensors = []
        for w, b in warp.layers:
            wt = theta[offset:offset + w.size].reshape(w.shape)
            offset += w.size
            bt = theta[offset:offset + b.size].reshape((b.size,))
            offset += b.size
            layer_tensors.append((wt, bt))
        emb = theta[offset:offset + emb_size].reshape(warp.embeddings.shape)

        h = ad.concat([normalized, emb[frames]], axis=-1)
        for i, (wt, bt) in enumerate(layer_tensors):
            h = h @ wt + bt
            if i < len(layer_tensors) - 1:
                h = ad.relu(h)
        transform = lie.exp(lie.AlgebraCoords("se2", h))
        return ad.sumsq(transform.matrix * weights)

    assert check_gradient(loss, flat0) < 1e-4


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    f = fields.make_image_field(seed=11, hidden=16, depth=3, num_frequencies=4)
    warp = fields.make_warp_field(5, "sl3", seed=12, hidden=16, depth=2, embed_dim=8)
    rng = np.random.default_rng(13)
    for p in fields.parameters(f) + fields.parameters(warp):
        p.data[...] = rng.standard_normal(p.shape)

    arrays = {}
    arrays.update(fields.field_arrays("field", f))
    arrays.update(fields.field_arrays("warp", warp))
    meta = {"version": 1, "iteration": 1234,
            "field": fields.field_meta(f), "warp": fields.field_meta(warp)}
    path = tmp_path / "ckpt.npz"
    fields.save_arrays(path, arrays, meta)

    arrays2, meta2 = fields.load_arrays(path)
    assert meta2 == meta
    for key, value in arrays.items():
        assert arrays2[key].tobytes() == value.tobytes(), key

    f2 = fields.restore_field("field", arrays2, meta2["field"])
    warp2 = fields.restore_warp("warp", arrays2, meta2["warp"])
    pts = Tensor(rng.uniform(-1, 1, (4, 2)))
    assert (fields.eval_field(f2, pts).numpy().tobytes()
            == fields.eval_field(f, pts).numpy().tobytes())
    frames = np.array([0, 1, 2, 3])
    assert (fields.eval_warp(warp2, pts, frames).matrix.numpy().tobytes()
            == fields.eval_warp(warp, pts, frames).matrix.numpy().tobytes())
