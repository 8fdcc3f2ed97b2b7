import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mfneural.autodiff import Tensor
from mfneural.box import HyperRectangle
from mfneural.loss import LossWeights, interval_score, loss_enc, loss_err, loss_reg, total_loss
from mfneural.mfmodel import ParameterGroups
from tests.test_mfmodel import fitted, k1_wired


def test_perfect_fit_zero_error():
    p, m = k1_wired()
    x = np.random.default_rng(0).uniform(0, 1, (20, 1))
    assert loss_err(m, x, p.hf.f(x)).item() < 1e-20


def test_single_point_error():
    p, m = k1_wired()
    x = np.array([[0.3]])
    assert loss_err(m, x, p.hf.f(x) - 0.5).item() == pytest.approx(0.25, abs=1e-12)


def test_learned_lf_needs_batch():
    _, ds, m = fitted(tier=3, encoding="none")
    with pytest.raises(ValueError, match="LF batch"):
        loss_err(m, ds.hf_train.x, ds.hf_train.y)


def test_reg_examples():
    w = {"W": Tensor(np.array([[3.0]]), requires_grad=True)}
    groups = ParameterGroups(lf={}, enc={}, lin={}, nl=w)
    assert loss_reg(groups, LossWeights()).item() == 0.0
    assert loss_reg(groups, LossWeights(lam_nl=1e-3)).item() == pytest.approx(3e-3)
    assert loss_reg(groups, LossWeights(lam_lf=1.0)).item() == 0.0


def test_reg_rejects_negative_weights():
    with pytest.raises(ValueError):
        LossWeights(lam_nl=-1.0)


def test_interval_score_examples():
    unit2 = HyperRectangle((0.0, 0.0), (1.0, 1.0))
    assert interval_score(np.array([[0.2, 0.9], [0.5, 0.5]]), unit2).item() == 0.0
    assert interval_score(np.array([[2.0, 0.5]]), unit2).item() == 1.0
    assert interval_score(np.array([[-1.0], [2.0]]), HyperRectangle((0.0,), (1.0,))).item() == 1.0
    assert interval_score(np.zeros((0, 2)), unit2).item() == 0.0


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (5, 2), elements=st.integers(-256, 256).map(lambda k: k / 64)),
       st.integers(-8, 8), st.integers(-8, 8))
def test_interval_score_translation_invariant(x, s1, s2):
    # dyadic points and shifts keep the arithmetic exact
    box = HyperRectangle((-1.0, 0.0), (1.0, 2.0))
    shift = np.array([s1, s2]) / 4.0
    a = interval_score(x, box).item()
    b = interval_score(x + shift, box.shift(shift)).item()
    assert a == b
    assert a >= 0


def test_loss_enc_terms():
    p, ds, m = fitted(encoding="linear")
    x = m.normalizers.x_hf.forward(ds.hf_train.x)
    boxes = [HyperRectangle((-1.0,), (1.0,))]
    assert loss_enc(m, x, boxes, LossWeights()).item() == 0.0
    for t in m.nl_params.values():
        t.data[...] = 0.0
    assert loss_enc(m, x, boxes, LossWeights(lam_lin=1.0, lam_domain=1.0)).item() == 0.0


def test_loss_enc_sums_nonlinear_part():
    p, ds, m = fitted(encoding="nonlinear")
    x = m.normalizers.x_hf.forward(ds.hf_train.x)
    pred = m.predict_hf(x)
    expected = float(np.sum(pred.y_nl.data**2))
    boxes = [HyperRectangle((-1.0,), (1.0,))]
    assert loss_enc(m, x, boxes, LossWeights(lam_lin=1.0)).item() == pytest.approx(expected, rel=1e-12)


def test_loss_enc_requires_encoder():
    _, ds, m = fitted(encoding="none")
    with pytest.raises(ValueError):
        loss_enc(m, ds.hf_train.x, [HyperRectangle((-1.0,), (1.0,))], LossWeights())


def test_total_loss_composes():
    p, ds, m = fitted(tier=3, encoding="nonlinear")
    nz = m.normalizers
    x, y = nz.x_hf.forward(ds.hf_train.x), nz.y_hf.forward(ds.hf_train.y)
    lf = {0: (nz.x_lf[0].forward(ds.lf_train[0].x), nz.y_lf[0].forward(ds.lf_train[0].y))}
    w = LossWeights(1e-3, 1e-3, 1.0, 1.0)
    boxes = [HyperRectangle((-1.0,), (1.0,))]
    parts = (loss_err(m, x, y, lf).item() + loss_reg(m.trainable_parameters(), w).item()
             + loss_enc(m, x, boxes, w).item())
    assert total_loss(m, x, y, lf, w, boxes).item() == pytest.approx(parts, rel=1e-12)
