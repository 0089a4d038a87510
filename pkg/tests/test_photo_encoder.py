import numpy as np
import pytest

from storyforge import tensor as T
from storyforge.photo_encoder import encode_photos


def np_gru_step(x, h, wx, wh, b):
    """Plain-numpy GRU step, written independently of the engine."""
    hid = h.shape[0]

    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))

    pre_x = x @ wx + b
    pre_h = h @ wh
    z = sig(pre_x[:hid] + pre_h[:hid])
    r = sig(pre_x[hid:2 * hid] + pre_h[hid:2 * hid])
    c = np.tanh(pre_x[2 * hid:] + (r * h) @ wh[:, 2 * hid:])
    return (1 - z) * h + z * c


def np_encode(features, ps):
    """Oracle for the full encoder: two recurrences plus ReLU skip."""
    wx_f, wh_f, b_f = (ps[f"photo.fwd.{k}"].data for k in ("w_x", "w_h", "b"))
    wx_b, wh_b, b_b = (ps[f"photo.bwd.{k}"].data for k in ("w_x", "w_h", "b"))
    skip = ps["photo.skip.w"].data
    hid = wh_f.shape[0]
    m = len(features)
    fwd, h = [], np.zeros(hid)
    for f in features:
        h = np_gru_step(f, h, wx_f, wh_f, b_f)
        fwd.append(h)
    bwd, h = [None] * m, np.zeros(hid)
    for i in range(m - 1, -1, -1):
        h = np_gru_step(features[i], h, wx_b, wh_b, b_b)
        bwd[i] = h
    rows = [np.maximum(0.0, np.concatenate([fwd[i], bwd[i]]) + features[i] @ skip)
            for i in range(m)]
    return np.stack(rows), fwd[-1], bwd[0]


def make_params(rng, f_dim, hid, zero=False):
    ps = T.ParamStore()
    draw = (lambda shape: np.zeros(shape)) if zero else \
           (lambda shape: 0.5 * rng.standard_normal(shape))
    for d in ("fwd", "bwd"):
        ps.add(f"photo.{d}.w_x", draw((f_dim, 3 * hid)), "photo_encoder")
        ps.add(f"photo.{d}.w_h", draw((hid, 3 * hid)), "photo_encoder")
        ps.add(f"photo.{d}.b", draw(3 * hid), "photo_encoder")
    ps.add("photo.skip.w", draw((f_dim, 2 * hid)), "photo_encoder")
    return ps


class TestEncodePhotos:
    def test_zero_parameters_give_zero_output(self):
        rng = np.random.default_rng(0)
        ps = make_params(rng, 4, 3, zero=True)
        enc = encode_photos([rng.standard_normal(4) for _ in range(5)], ps)
        np.testing.assert_array_equal(enc.V.data, np.zeros((5, 6)))

    def test_single_photo(self):
        rng = np.random.default_rng(1)
        ps = make_params(rng, 4, 3)
        f = rng.standard_normal(4)
        enc = encode_photos([f], ps)
        assert enc.V.shape == (1, 6)
        want_v, want_fwd, want_bwd = np_encode([f], ps)
        np.testing.assert_allclose(enc.fwd_final.data, want_fwd, rtol=1e-12)
        np.testing.assert_allclose(enc.bwd_final.data, want_bwd, rtol=1e-12)

    @pytest.mark.parametrize("seed", [2, 3, 4])
    def test_matches_numpy_oracle(self, seed):
        rng = np.random.default_rng(seed)
        f_dim, hid, m = 5, 3, 4
        ps = make_params(rng, f_dim, hid)
        feats = [rng.standard_normal(f_dim) for _ in range(m)]
        enc = encode_photos(feats, ps)
        want_v, want_fwd, want_bwd = np_encode(feats, ps)
        np.testing.assert_allclose(enc.V.data, want_v, rtol=1e-12)
        np.testing.assert_allclose(enc.fwd_final.data, want_fwd, rtol=1e-12)
        np.testing.assert_allclose(enc.bwd_final.data, want_bwd, rtol=1e-12)

    def test_output_nonnegative(self):
        rng = np.random.default_rng(5)
        ps = make_params(rng, 6, 4)
        enc = encode_photos([rng.standard_normal(6) for _ in range(7)], ps)
        assert (enc.V.data >= 0).all()

    def test_reversal_swaps_directions(self):
        # with tied direction weights, reversing the album turns the forward
        # hidden sequence into the reverse of the original backward sequence
        rng = np.random.default_rng(6)
        ps = make_params(rng, 4, 3)
        for k in ("w_x", "w_h", "b"):
            ps[f"photo.bwd.{k}"].data[...] = ps[f"photo.fwd.{k}"].data
        skip = ps["photo.skip.w"].data
        skip[:, 3:] = skip[:, :3]  # symmetric skip so the halves commute
        feats = [rng.standard_normal(4) for _ in range(5)]
        enc_fw = encode_photos(feats, ps)
        enc_rv = encode_photos(feats[::-1], ps)
        np.testing.assert_allclose(enc_rv.fwd_final.data, enc_fw.bwd_final.data,
                                   rtol=1e-12)
        np.testing.assert_allclose(enc_rv.bwd_final.data, enc_fw.fwd_final.data,
                                   rtol=1e-12)
        swapped = np.concatenate([enc_rv.V.data[::-1, 3:],
                                  enc_rv.V.data[::-1, :3]], axis=1)
        np.testing.assert_allclose(swapped, enc_fw.V.data, rtol=1e-12)

    def test_empty_album_rejected(self):
        ps = make_params(np.random.default_rng(0), 4, 3)
        with pytest.raises(ValueError):
            encode_photos([], ps)

    def test_feature_dim_mismatch(self):
        rng = np.random.default_rng(7)
        ps = make_params(rng, 4, 3)
        with pytest.raises(T.DimensionError):
            encode_photos([rng.standard_normal(9)], ps)

    def test_gradients(self):
        rng = np.random.default_rng(8)
        ps = make_params(rng, 4, 3)
        feats = [rng.standard_normal(4) for _ in range(3)]
        w = rng.standard_normal((3, 6))

        def fn(p):
            enc = encode_photos(feats, p)
            return T.arr_sum(enc.V * T.wrap(w)) + T.arr_sum(enc.fwd_final) \
                + T.arr_sum(enc.bwd_final)

        assert T.grad_check(fn, ps) < 1e-4
