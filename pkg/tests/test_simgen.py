import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from kefnn.errors import InputError
from kefnn.simgen import (
    N_COEFFS,
    ProcessSpec,
    Standardizer,
    assign_splits,
    basis_inner_products,
    beta1,
    beta2,
    fourier_basis,
    gen_dataset,
    standardize,
    subsample_second_stage,
    true_response,
)


@pytest.fixture(scope="module")
def case3():
    return gen_dataset(3, m=4000, seed=11)


def test_basis_orthonormal():
    u, w = special.roots_legendre(10_000)
    t, w = 0.5 * (u + 1), 0.5 * w
    phi = fourier_basis(t)
    assert np.max(np.abs(phi.T @ (w[:, None] * phi) - np.eye(N_COEFFS))) <= 1e-8


def test_curve_value_at_zero(rng):
    c = rng.normal(size=N_COEFFS)
    f0 = ProcessSpec(3).curve(c)([0.0])[0]
    assert f0 == pytest.approx(c[0] + math.sqrt(2) * c[1:].sum(), rel=1e-13)


def test_case1_response_is_c5_squared(rng):
    c = rng.normal(size=N_COEFFS)
    c[4] = 2.0
    assert true_response(c, 1) == pytest.approx(4.0, rel=1e-15)
    d = c.copy()
    d[[0, 3, 5, 49]] += 7.0
    assert true_response(d, 1) == true_response(c, 1)


def test_case3_zero_coefficients():
    assert true_response(np.zeros(N_COEFFS), 3) == 0.0


def test_case3_response_form(rng):
    c = rng.normal(size=N_COEFFS)
    b1, b2 = basis_inner_products(beta1), basis_inner_products(beta2)
    assert true_response(c, 3) == pytest.approx(c @ b2 + (c @ b1) ** 2, rel=1e-12)
    assert true_response(c, 3, swap_betas=True) == pytest.approx(c @ b1 + (c @ b2) ** 2, rel=1e-12)
    batch = true_response(np.stack([c, 2 * c]), 3)
    assert batch.shape == (2,) and batch[0] == pytest.approx(true_response(c, 3))


@pytest.mark.parametrize("fn", [beta1, beta2])
def test_beta_inner_products_match_fine_riemann_sum(fn):
    n = 1_000_000
    t = (np.arange(n) + 0.5) / n
    ref = np.array([np.mean(fn(t) * fourier_basis(t[::1], k + 1)[:, k]) for k in range(0, N_COEFFS, 7)])
    np.testing.assert_allclose(basis_inner_products(fn)[::7], ref, atol=1e-6)


def test_unknown_case_rejected():
    with pytest.raises(InputError):
        ProcessSpec(5)
    with pytest.raises(InputError):
        gen_dataset(9, m=10)
    with pytest.raises(InputError):
        ProcessSpec(1, scales=(1.0,) * 3)


def test_coefficient_variances(case3):
    spec = ProcessSpec(1)
    c = spec.draw_coefficients(np.random.default_rng(0), 4000)
    np.testing.assert_allclose(c.var(axis=0), np.asarray(spec.scales) ** 2, rtol=0.1)
    assert np.all(np.abs(c) <= math.sqrt(3) * np.asarray(spec.scales))
    np.testing.assert_allclose(case3.coefficients.var(axis=0), 1.0, rtol=0.1)


def test_case_noise_defaults_and_metadata():
    for case, (s1, s2) in {1: (0, 0), 2: (11.4, 0.3), 3: (5, 0.1), 4: (5, 0.2)}.items():
        meta = gen_dataset(case, m=20, seed=1).metadata
        assert (meta["sigma1_sq"], meta["sigma2_sq"]) == (s1, s2)
        assert meta["case"] == case and meta["n"] == 51 and meta["m"] == 20


def test_noiseless_case_matches_truth():
    data = gen_dataset(1, m=30, seed=2)
    assert np.array_equal(data.responses, data.true_responses)
    grid = data.samples[0].nodes[:, 0]
    np.testing.assert_allclose(data.samples[4].values, fourier_basis(grid) @ data.coefficients[4], rtol=1e-13)
    assert np.array_equal(grid, np.linspace(0, 1, 51))


def test_response_noise_independent_of_truth(case3):
    noise = case3.responses - case3.true_responses
    assert abs(np.corrcoef(noise, case3.true_responses)[0, 1]) <= 0.05
    assert noise.var() == pytest.approx(0.1, rel=0.1)


def test_observation_noise_level(case3):
    grid = case3.samples[0].nodes[:, 0]
    clean = case3.coefficients @ fourier_basis(grid).T
    noisy = np.stack([s.values for s in case3.samples])
    assert (noisy - clean).var() == pytest.approx(5.0, rel=0.02)


@given(m=st.integers(1, 5000), seed=st.integers(0, 1000))
def test_split_counts(m, seed):
    labels = assign_splits(m, np.random.default_rng(seed))
    n_test, n_val = int(math.floor(0.2 * m)), int(math.floor(0.16 * m))
    assert (labels == "test").sum() == n_test
    assert (labels == "validation").sum() == n_val
    assert (labels == "train").sum() == m - n_test - n_val


def test_split_exact_at_default_size(case3):
    counts = {k: len(case3.indices(k)) for k in ("train", "validation", "test")}
    assert counts == {"train": 2560, "validation": 640, "test": 800}
    idx = [set(case3.indices(k)) for k in counts]
    assert not (idx[0] & idx[1]) and not (idx[0] & idx[2]) and not (idx[1] & idx[2])


def test_generation_deterministic_and_grid_independent():
    a, b = gen_dataset(2, m=50, seed=3), gen_dataset(2, m=50, seed=3)
    assert np.array_equal(np.stack([s.values for s in a.samples]), np.stack([s.values for s in b.samples]))
    assert np.array_equal(a.responses, b.responses) and np.array_equal(a.split, b.split)
    fine = gen_dataset(2, m=50, n_grid=101, seed=3)
    assert np.array_equal(fine.coefficients, a.coefficients) and np.array_equal(fine.responses, a.responses)


def test_invalid_generation_arguments():
    with pytest.raises(InputError):
        gen_dataset(1, m=0)
    with pytest.raises(InputError):
        gen_dataset(1, m=5, n_grid=1)
    with pytest.raises(InputError):
        gen_dataset(1, m=5, sigma1_sq=-1.0)


def test_standardize_training_moments(case3):
    data, (vstats, ystats) = standardize(case3)
    tr = data.indices("train")
    z = np.stack([data.samples[i].values for i in tr])
    assert np.max(np.abs(z.mean(axis=0))) <= 1e-10
    assert np.max(np.abs(z.std(axis=0) - 1)) <= 1e-10
    assert abs(data.responses[tr].mean()) <= 1e-10 and abs(data.responses[tr].std() - 1) <= 1e-10
    te = data.indices("test")
    zt = np.stack([data.samples[i].values for i in te])
    assert np.max(np.abs(zt.mean(axis=0))) > 1e-6
    assert abs(data.responses[te].std() - 1) > 1e-6


def test_standardize_round_trip(case3):
    data, (vstats, ystats) = standardize(case3)
    raw = np.stack([s.values for s in case3.samples])
    back = vstats.inverse_transform(np.stack([s.values for s in data.samples]))
    assert np.max(np.abs(back - raw)) <= 1e-12 * max(1.0, np.abs(raw).max())
    np.testing.assert_allclose(ystats.inverse_transform(data.responses[:, None])[:, 0], case3.responses,
                               atol=1e-12 * max(1.0, np.abs(case3.responses).max()))


def test_zero_variance_entry_is_floored():
    st_ = Standardizer.fit(np.array([[1.0, 2.0], [1.0, 3.0], [1.0, 5.0]]))
    assert st_.floored.tolist() == [True, False] and st_.std[0] == 1e-12
    assert np.all(np.isfinite(st_.transform([[1.0, 2.0]])))
    back = Standardizer.from_dict(st_.to_dict())
    assert np.array_equal(back.std, st_.std) and np.array_equal(back.floored, st_.floored)


def test_subsample_full_size_is_identity():
    data = gen_dataset(3, m=20, n_grid=60, seed=4)
    sub = subsample_second_stage(data, 60, seed=0)
    for a, b in zip(data.samples, sub.samples):
        assert np.array_equal(a.nodes, b.nodes) and np.array_equal(a.values, b.values)


def test_subsample_deterministic_and_valid():
    data = gen_dataset(3, m=20, n_grid=400, seed=4)
    a, b = subsample_second_stage(data, 50, seed=9), subsample_second_stage(data, 50, seed=9)
    for s, t, full in zip(a.samples, b.samples, data.samples):
        assert len(s) == 50 and np.array_equal(s.nodes, t.nodes) and np.array_equal(s.values, t.values)
        assert np.all(np.diff(s.nodes[:, 0]) > 0)
        assert np.all(np.isin(s.nodes[:, 0], full.nodes[:, 0]))
    c = subsample_second_stage(data, 50, seed=10)
    assert not np.array_equal(a.samples[0].nodes, c.samples[0].nodes)
    assert a.metadata["n"] == 50 and a.metadata["fine_n"] == 400


def test_subsample_too_many_rejected():
    with pytest.raises(InputError):
        subsample_second_stage(gen_dataset(3, m=5, n_grid=30), 31, seed=0)


def test_subsample_with_density_prefers_heavy_region():
    data = gen_dataset(3, m=200, n_grid=400, seed=4)
    sub = subsample_second_stage(data, 40, seed=1, density=lambda x: np.where(x[:, 0] < 0.5, 9.0, 1.0))
    frac = np.mean(np.concatenate([s.nodes[:, 0] for s in sub.samples]) < 0.5)
    assert frac > 0.75


def test_dataset_take_and_subset(case3):
    test = case3.subset("test")
    assert len(test) == 800 and set(test.split) == {"test"}
    assert np.array_equal(test.responses, case3.responses[case3.indices("test")])
    assert case3.has_common_grid()
