import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mfneural.benchmarks import make_problem
from mfneural.box import HyperRectangle
from mfneural.sampling import (
    AffineNormalizer,
    Dataset,
    DesignSpec,
    Normalizers,
    augment_boundary,
    build_datasets,
    corners,
    fit_normalizers,
    recover_unnormalized_coefficients,
    sobol,
    sobol_block_start,
)

# ------------------------------------------------------------- reference Sobol'
# Independent construction from primitive polynomials and initial direction
# numbers (Joe-Kuo table, first three dimensions), no Gray-code ordering tricks.
BITS = 30
_JK = [None, (1, 0, [1]), (2, 1, [1, 3])]  # (degree s, coefficients a, m_1..m_s)


def _directions(d):
    if d == 0:
        return [1 << (BITS - 1 - k) for k in range(BITS)]
    s, a, m = _JK[d]
    m = list(m)
    for k in range(s, BITS):
        new = m[k - s] ^ (m[k - s] << s)
        for j in range(1, s):
            if (a >> (s - 1 - j)) & 1:
                new ^= m[k - j] << j
        m.append(new)
    return [m[k] << (BITS - 1 - k) for k in range(BITS)]


def reference_sobol(indices, dim):
    dirs = [_directions(d) for d in range(dim)]
    out = np.empty((len(indices), dim))
    for r, i in enumerate(indices):
        g = i ^ (i >> 1)  # Gray-code index, as the standard generator emits
        for d in range(dim):
            x = 0
            for k in range(BITS):
                if (g >> k) & 1:
                    x ^= dirs[d][k]
            out[r, d] = x / 2.0**BITS
    return out


def test_sobol_first_points_1d():
    np.testing.assert_array_equal(sobol(4, 1, offset=0)[:, 0], [0.5, 0.75, 0.25, 0.375])


@pytest.mark.parametrize("offset", [0, 16, 1024])
def test_sobol_matches_reference(offset):
    got = sobol(16, 3, offset=offset)
    np.testing.assert_array_equal(got, reference_sobol(range(offset + 1, offset + 17), 3))


def test_sobol_range_and_determinism():
    a = sobol(64, 5, seed=3, repetition_index=2)
    assert np.all((a >= 0) & (a < 1))
    np.testing.assert_array_equal(a, sobol(64, 5, seed=3, repetition_index=2))


def test_repetition_blocks_disjoint():
    n = 10
    starts = [sobol_block_start(n, 0, r) for r in range(4)]
    spans = [set(range(s + 1, s + n + 1)) for s in starts]
    for i in range(4):
        for j in range(i + 1, 4):
            assert not spans[i] & spans[j]
    assert all(s % 16 == 0 for s in starts)


def test_sobol_dim_limit():
    with pytest.raises(ValueError):
        sobol(4, 33)


def test_boundary_augmentation_counts():
    unit = HyperRectangle((0.0,), (1.0,))
    x = augment_boundary(sobol(8, 1, offset=0), unit)
    assert len(x) == 10 and {0.0, 1.0} <= set(x[:, 0])
    assert len(corners(HyperRectangle.cube(0, 1, 2))) == 4
    assert len(corners(HyperRectangle.cube(0, 1, 20))) == 2


def test_k1_design_sizes():
    ds = build_datasets(make_problem("K1"), DesignSpec(8))
    assert len(ds.hf_train) == 10
    assert len(ds.lf_train[0]) == 64
    assert len(ds.hf_test) == 8


def test_sf_and_mf_share_data():
    p = make_problem("K2")
    a = build_datasets(p, DesignSpec(16, seed=5, repetition_index=1))
    b = build_datasets(p, DesignSpec(16, seed=5, repetition_index=1), validation=True)
    np.testing.assert_array_equal(a.hf_train.x, b.hf_train.x)
    np.testing.assert_array_equal(a.hf_test.y, b.hf_test.y)
    assert b.hf_validation is not None and not np.array_equal(b.hf_validation.x, b.hf_test.x)


def test_dataset_csv_round_trip(tmp_path):
    d = Dataset(np.random.default_rng(0).random((5, 2)), np.arange(5.0))
    d.to_csv(tmp_path / "d.csv")
    e = Dataset.from_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(d.x, e.x)
    np.testing.assert_array_equal(d.y, e.y)


# ----------------------------------------------------------- normalisers

def test_min_max_k1():
    n = AffineNormalizer.from_box(HyperRectangle((0.0,), (1.0,)))
    assert n.alpha[0] == 0.5 and n.beta[0] == 0.5


def test_identity_like_and_degenerate():
    n = AffineNormalizer.min_max(np.array([[-1.0], [0.3], [1.0]]))
    assert n.alpha[0] == 1.0 and n.beta[0] == 0.0
    c = AffineNormalizer.min_max(np.array([[2.0, 1.0], [2.0, 3.0]]))
    assert c.alpha[0] == 1.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 2), elements=st.floats(-1e3, 1e3)))
def test_normalizer_round_trip(data):
    n = AffineNormalizer.min_max(data)
    np.testing.assert_allclose(n.inverse(n.forward(data)), data, rtol=1e-12, atol=1e-9)
    fwd = n.forward(data)
    assert np.all(fwd >= -1 - 1e-12) and np.all(fwd <= 1 + 1e-12)


def test_fit_normalizers_rejects_empty():
    p = make_problem("K1")
    ds = build_datasets(p, DesignSpec(4))
    ds.lf_train[0] = Dataset(np.zeros((0, 1)), np.zeros(0))
    with pytest.raises(ValueError):
        fit_normalizers(ds)


def test_recover_identity_unchanged():
    nz = Normalizers.identity(2, [1, 1])
    c = recover_unnormalized_coefficients([1.0, -2.0], [0.5, 3.0], 0.25, nz)
    np.testing.assert_array_equal(c.A, [1.0, -2.0])
    np.testing.assert_array_equal(c.B, [0.5, 3.0])
    assert c.C == 0.25


def test_recover_scalar_case():
    nz = Normalizers(AffineNormalizer.identity(1), (AffineNormalizer.identity(1),),
                     AffineNormalizer(2.0, 0.0), (AffineNormalizer(4.0, 0.0),))
    assert recover_unnormalized_coefficients([3.0], [0.0], 0.0, nz).A[0] == 1.5


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.floats(0.1, 5), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_recover_round_trip_linear(coef, alphas, betas):
    nz = Normalizers(AffineNormalizer(alphas[0], betas[0]), (AffineNormalizer.identity(1),),
                     AffineNormalizer(alphas[1], betas[1]), (AffineNormalizer(alphas[2], betas[2]),))
    A_t, B_t, C_t = coef[0], coef[1], coef[2]
    corr = recover_unnormalized_coefficients([A_t], [B_t], C_t, nz, lambda xt, zt: coef[3] * xt[:, 0] * zt[0])
    rng = np.random.default_rng(0)
    x, z = rng.uniform(-2, 2, (20, 1)), rng.uniform(-2, 2, 20)
    xt, zt = nz.x_hf.forward(x), nz.y_lf[0].forward(z)
    direct = nz.y_hf.inverse(A_t * zt + B_t * xt[:, 0] + C_t + coef[3] * xt[:, 0] * zt)
    np.testing.assert_allclose(corr(x, [z]), direct, rtol=1e-10, atol=1e-9)
