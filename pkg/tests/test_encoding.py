import numpy as np
import pytest

from mfneural.autodiff import Tensor
from mfneural.encoding import EncoderConfigError, EncoderSpec, encode, encode_array, init_encoder, selector


@pytest.mark.parametrize("mode", ["linear", "nonlinear"])
@pytest.mark.parametrize("k_h,k_l", [(1, 1), (3, 2), (20, 20)])
def test_identity_at_init(mode, k_h, k_l):
    spec = EncoderSpec(mode, k_h, k_l)
    params = init_encoder(spec, np.random.default_rng(0))
    x = np.random.default_rng(1).uniform(-1, 1, (100, k_h))
    assert np.max(np.abs(encode_array(spec, params, x) - x @ selector(k_l, k_h).T)) <= 1e-15


def test_linear_identity_scalar():
    spec = EncoderSpec("linear", 1, 1)
    assert encode_array(spec, init_encoder(spec, np.random.default_rng(0)), np.array([[0.37]]))[0, 0] == 0.37


def test_selector_drops_trailing_coordinates():
    spec = EncoderSpec("linear", 3, 2)
    out = encode_array(spec, init_encoder(spec, np.random.default_rng(0)), np.array([[1.0, 2.0, 3.0]]))
    np.testing.assert_array_equal(out, [[1.0, 2.0]])


def test_linear_hand_product():
    spec = EncoderSpec("linear", 2, 2)
    params = init_encoder(spec, np.random.default_rng(0))
    params["W"].data[...] = [[0.0, 1.5], [1 / 30, -0.2]]
    np.testing.assert_allclose(encode_array(spec, params, np.array([[1.0, 1.0]])), [[1.5, -1 / 6]], atol=1e-15)


def test_none_requires_equal_dims():
    with pytest.raises(EncoderConfigError):
        EncoderSpec("none", 2, 1)
    with pytest.raises(EncoderConfigError):
        EncoderSpec("quadratic", 1, 1)


def test_none_is_passthrough():
    spec = EncoderSpec("none", 2, 2)
    assert init_encoder(spec, np.random.default_rng(0)) == {}
    x = Tensor(np.ones((3, 2)))
    assert encode(spec, {}, x) is x


def test_nonlinear_body_trains_away_from_identity():
    spec = EncoderSpec("nonlinear", 1, 1)
    params = init_encoder(spec, np.random.default_rng(0))
    params[f"b{spec.body_spec.n_layers - 1}"].data[...] = 0.25
    out = encode_array(spec, params, np.array([[0.1]]))
    assert out[0, 0] == pytest.approx(0.35)
