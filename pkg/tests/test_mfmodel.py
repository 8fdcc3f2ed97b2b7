import numpy as np
import pytest

from mfneural.autodiff import Tensor
from mfneural.benchmarks import make_problem
from mfneural.mfmodel import build_mf_model, build_sf_model, load_model, save_model
from mfneural.sampling import DesignSpec, Normalizers, build_datasets, fit_normalizers


def k1_wired():
    """K1 with the exact relation y_H = 2 y_L - 20 x + 20 written into the linear block."""
    p = make_problem("K1")
    model = build_mf_model(p, "mlp", 2, "none", Normalizers.identity(1, [1]), seed=0)
    model.lin_params["W"].data[...] = [[-20.0, 2.0]]
    model.lin_params["b"].data[...] = 20.0
    for t in model.nl_params.values():
        t.data[...] = 0.0
    return p, model


def fitted(name="K4", n=8, tier=1, encoding="nonlinear", seed=0, problem_scaled=True):
    p = make_problem(name)
    ds = build_datasets(p, DesignSpec(n, seed=seed))
    nz = fit_normalizers(ds, p if problem_scaled else None)
    return p, ds, build_mf_model(p, "mlp", tier, encoding, nz, seed)


def test_wired_k1_reproduces_hf():
    p, model = k1_wired()
    x = np.random.default_rng(0).uniform(0, 1, (100, 1))
    assert np.max(np.abs(model.predict(x) - p.hf.f(x))) < 1e-12


def test_zero_nonlinear_block_gives_linear_part():
    _, _, model = fitted()
    for t in model.nl_params.values():
        t.data[...] = 0.0
    pred = model.predict_hf(np.linspace(-1, 1, 7)[:, None])
    np.testing.assert_array_equal(pred.y.data, pred.y_lin.data)


def test_identity_encoder_composes_with_lf():
    p, ds, model = fitted(encoding="linear")
    x = ds.hf_train.x
    np.testing.assert_allclose(model.lf_composed(x)[0], p.lf[0].f(x), atol=1e-12)


def test_none_encoding_with_different_scalings():
    # data-fitted normalisers differ between HF and LF inputs; mode none must still feed y_L(x)
    p, ds, model = fitted(encoding="none", problem_scaled=False)
    x = ds.hf_test.x
    np.testing.assert_allclose(model.lf_composed(x)[0], p.lf[0].f(x), atol=1e-12)


def test_predict_lf_contracts():
    _, _, exact = fitted(tier=1)
    with pytest.raises(ValueError):
        exact.predict_lf(0, np.zeros((2, 1)))
    with pytest.raises(IndexError):
        exact.predict_lf(3, np.zeros((2, 1)))
    _, _, learned = fitted(tier=3)
    assert learned.predict_lf(0, np.zeros((0, 1))).shape == (0, 1)


def test_parameter_groups():
    _, _, m = fitted(tier=1, encoding="none")
    g = m.trainable_parameters()
    assert not g.lf and not g.enc
    _, _, m3 = fitted(tier=3, encoding="nonlinear")
    g3 = m3.trainable_parameters()
    assert g3.lf and g3.enc
    ids = [id(t) for t in g3.all().values()]
    assert len(ids) == len(set(ids))


def test_nonlinear_block_has_no_output_bias():
    _, _, m = fitted(tier=2)
    assert "b1" not in m.nl_params and "b0" in m.nl_params


def test_sf_and_mf_share_hidden_init():
    p = make_problem("K2")
    nz = fit_normalizers(build_datasets(p, DesignSpec(8)), p)
    mf = build_mf_model(p, "siren", 1, "none", nz, seed=11)
    sf = build_sf_model(p, "siren", 1, nz, seed=11)
    for k in ("W1", "W2", "b1", "b2"):
        np.testing.assert_array_equal(mf.nl_params[k].data, sf.params[k].data)


def test_2du_uses_selector_encoders():
    p = make_problem("2DU")
    nz = fit_normalizers(build_datasets(p, DesignSpec(8)), p)
    m = build_mf_model(p, "mlp", 2, "linear", nz, 0)
    assert m.enc_params[0]["W"].shape == (2, 3)
    with pytest.raises(ValueError):
        build_mf_model(p, "mlp", 2, "none", nz, 0)


def test_coefficient_round_trip_untrained():
    p, ds, m = fitted(tier=3, encoding="nonlinear", problem_scaled=False)
    for t in m.trainable_parameters().all().values():
        t.data += 0.1 * np.random.default_rng(0).standard_normal(t.shape)
    x = p.hf.domain.from_unit(np.random.default_rng(1).random((100, 1)))
    corr = m.unnormalized_correlation()
    np.testing.assert_allclose(corr(x, m.lf_composed(x)), m.predict(x), rtol=0, atol=1e-10)


@pytest.mark.parametrize("tier,encoding", [(1, "none"), (3, "nonlinear")])
def test_save_load_round_trip(tmp_path, tier, encoding):
    p, ds, m = fitted(tier=tier, encoding=encoding)
    for t in m.trainable_parameters().all().values():
        t.data += 0.01
    save_model(tmp_path / "m", m, p.name)
    m2 = load_model(tmp_path / "m", p)
    x = ds.hf_test.x
    np.testing.assert_array_equal(m.predict(x), m2.predict(x))


def test_sf_save_load(tmp_path):
    p = make_problem("K1")
    nz = fit_normalizers(build_datasets(p, DesignSpec(8)), p)
    sf = build_sf_model(p, "kan", 2, nz, 0)
    save_model(tmp_path / "s", sf, "K1")
    x = np.linspace(0, 1, 9)[:, None]
    np.testing.assert_array_equal(sf.predict(x), load_model(tmp_path / "s", p).predict(x))
