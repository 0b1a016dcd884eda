import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dkunfold.folding import ChannelHistogram, SpectralLine, channelize, fold
from dkunfold.kernels import KernelPair, catalog_labels, catalog_pair
from dkunfold.reconstruction import (build_m_surface, estimate_density, kernel_reach, prefix_sums,
                                     reconstruction_csv)
from dkunfold.response import DetectorModel, EnergyGrid, detector_response_matrix

ALL_PAIRS = catalog_labels() + ["delta-3"]


def realized(counts, eps=1.0, origin=0.0):
    return ChannelHistogram(eps, origin, np.asarray(counts, dtype=np.int64), "realized")


def expected(counts, eps=1.0, origin=0.0):
    return ChannelHistogram(eps, origin, np.asarray(counts, dtype=float), "expected")


def convolution_oracle(F, pair, eps):
    """(1/eps) * sum_ij d0_i d1_j F[n - o_i - o_j], NaN where an index leaves 0..N."""
    N = F.size - 1
    out = np.zeros(N + 1)
    ok = np.ones(N + 1, dtype=bool)
    n = np.arange(N + 1)
    for oi, a in zip(pair.offsets, pair.d0):
        for oj, b in zip(pair.offsets, pair.d1):
            idx = n - int(round(oi + oj))
            inside = (idx >= 0) & (idx <= N)
            ok &= inside
            out += np.where(inside, a * b * F[np.clip(idx, 0, N)], 0.0)
    return np.where(ok, out / eps, np.nan)


def smoothed(values, pair):
    """``values`` convolved with d0*d0 on the integer lattice; NaN near the ends."""
    c = np.convolve(pair.d0, pair.d0)
    offs = np.rint(np.arange(c.size) - (c.size - 1) / 2).astype(int)
    n = np.arange(values.size)
    out = np.zeros(values.size)
    ok = np.ones(values.size, dtype=bool)
    for ck, o in zip(c, offs):
        idx = n - o
        inside = (idx >= 0) & (idx < values.size)
        ok &= inside
        out += np.where(inside, ck * values[np.clip(idx, 0, values.size - 1)], 0.0)
    return np.where(ok, out, np.nan)


# prefix sums and the surface ------------------------------------------------

def test_prefix_sums_example():
    F = prefix_sums(realized([1, 2, 3, 4, 0, 0, 0, 0]))
    assert F.dtype == np.int64
    np.testing.assert_array_equal(F, [0, 1, 3, 6, 10, 10, 10, 10, 10])


def test_prefix_sum_is_exact_for_large_counts():
    counts = np.full(64, 2**45, dtype=np.int64)
    counts[::3] += 1
    F = prefix_sums(realized(counts))
    assert int(F[-1]) == sum(int(c) for c in counts)


def test_surface_example_value():
    s = build_m_surface(realized([1, 2, 3, 4, 0, 0, 0, 0]), 2)
    assert s.value(2, 2) == 7.0
    assert s.value(2, -2) == -3.0
    assert s.value(3, 0) == 0.0
    assert not s.is_valid(1, -2)
    assert np.isnan(s.value(1, -2))
    assert np.isnan(s.value(7, 2))


def test_constant_counts_give_linear_surface():
    s = build_m_surface(realized(np.full(20, 5)), 3)
    for n1 in range(3, 17):
        for n2 in range(-3, 4):
            assert s.value(n1, n2) == 5 * n2


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=9, max_size=40), st.integers(1, 4), st.data())
def test_antisymmetry_is_exact(counts, L, data):
    s = build_m_surface(realized(counts), L)
    N = s.n_channels
    n1 = data.draw(st.integers(0, N))
    n2 = data.draw(st.integers(1, L))
    if s.is_valid(n1, -n2):
        assert s.value(n1, -n2) == -s.value(n1 - n2, n2)


def test_short_histogram_rejected():
    with pytest.raises(ValueError, match="channels"):
        build_m_surface(realized(np.ones(8)), 4)
    with pytest.raises(ValueError):
        build_m_surface(realized(np.ones(8)), 0)


def test_kernel_reach():
    assert kernel_reach(catalog_pair("DK3")) == 1
    assert kernel_reach(catalog_pair("DK4")) == 2
    assert kernel_reach(catalog_pair("DK5")) == 2


def test_surface_too_narrow_for_pair():
    s = build_m_surface(realized(np.ones(16)), 1)
    with pytest.raises(ValueError, match="reach"):
        estimate_density(s, catalog_pair("DK5"))


# estimate_density -----------------------------------------------------------

@pytest.mark.parametrize("label", ALL_PAIRS)
@pytest.mark.parametrize("eps", [1.0, 4.0])
def test_constant_counts_recover_constant_density(label, eps):
    pair = catalog_pair(label)
    est = estimate_density(build_m_surface(expected(np.full(40, 7.0), eps), kernel_reach(pair) + 1), pair)
    assert est.valid.sum() > 30
    np.testing.assert_allclose(est.density[est.valid], 7.0 / eps, rtol=1e-12)
    assert np.all(np.isnan(est.density[~est.valid]))


@pytest.mark.parametrize("label", ALL_PAIRS)
def test_ramp_counts_recover_ramp(label):
    pair = catalog_pair(label)
    eps = 2.0
    est = estimate_density(build_m_surface(realized(np.arange(40)), kernel_reach(pair) + 1), pair)
    n1 = np.arange(41)[est.valid]
    np.testing.assert_allclose(est.density[est.valid], (n1 - 0.5) / 1.0, rtol=1e-12)
    est2 = estimate_density(build_m_surface(expected(np.arange(40.0), eps), kernel_reach(pair) + 1), pair)
    np.testing.assert_allclose(est2.density[est2.valid], (n1 - 0.5) / eps, rtol=1e-12)


@pytest.mark.parametrize("label", ALL_PAIRS)
def test_matches_convolution_oracle(label, rng):
    pair = catalog_pair(label)
    hist = realized(rng.poisson(50.0, size=60), eps=3.0, origin=12.0)
    est = estimate_density(build_m_surface(hist, kernel_reach(pair) + 2), pair)
    ref = convolution_oracle(prefix_sums(hist).astype(float), pair, 3.0)
    np.testing.assert_array_equal(est.valid, np.isfinite(ref))
    np.testing.assert_allclose(est.density[est.valid], ref[est.valid], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(est.energies, 12.0 + 3.0 * np.arange(61))


def test_unsmoothed_uses_identity_d0(rng):
    pair = catalog_pair("DK5")
    hist = realized(rng.poisson(20.0, size=30))
    est = estimate_density(build_m_surface(hist, 3), pair, smooth=False)
    identity = KernelPair(catalog_pair("delta-5").d0, pair.d1)
    ref = convolution_oracle(prefix_sums(hist).astype(float), identity, 1.0)
    np.testing.assert_allclose(est.density[est.valid], ref[est.valid], rtol=1e-12)
    with pytest.raises(ValueError, match="half-sample"):
        estimate_density(build_m_surface(hist, 3), catalog_pair("DK4"), smooth=False)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1e3), min_size=16, max_size=16),
       st.lists(st.floats(0, 1e3), min_size=16, max_size=16),
       st.floats(0, 10), st.sampled_from(ALL_PAIRS))
def test_estimate_is_linear(a, b, k, label):
    pair = catalog_pair(label)
    L = kernel_reach(pair) + 1

    def est(c):
        return estimate_density(build_m_surface(expected(c, 2.0), L), pair).density

    a, b = np.array(a), np.array(b)
    joint = est(a + k * b)
    split = est(a) + k * est(b)
    ok = np.isfinite(joint)
    np.testing.assert_allclose(joint[ok], split[ok], rtol=1e-9, atol=1e-9 * (1 + np.abs(split[ok]).max()))


def test_single_photopeak_dk5_fine_channels():
    grid = EnergyGrid(0.0, 1024.0, 1025)
    rhat = detector_response_matrix(DetectorModel(fwhm_a=2.0), grid)
    spec = fold([SpectralLine(500.0, 1e5)], rhat)
    hist = channelize(spec, 1.0)
    pair = catalog_pair("DK5")
    est = estimate_density(build_m_surface(hist, 3), pair)
    v = est.valid
    err = np.linalg.norm(est.density[v] - spec.density[v]) / np.linalg.norm(spec.density[v])
    assert err < 0.01


def test_designed_kernels_order_by_derivative_accuracy():
    # The estimate carries d0*d0 smoothing by construction; measured against
    # each pair's own smoothed truth, wider designed supports must do better.
    grid = EnergyGrid(0.0, 1024.0, 4097)
    rhat = detector_response_matrix(DetectorModel(fwhm_a=2.0), grid)
    spec = fold([SpectralLine(300.0, 1e4), SpectralLine(600.0, 5e3)], rhat)
    hist = channelize(spec, 4.0)
    truth = spec.density[::16][: hist.n_channels + 1]
    errs = {}
    for label in ("DK3", "DK4", "DK5", "gauss-5"):
        pair = catalog_pair(label)
        est = estimate_density(build_m_surface(hist, kernel_reach(pair) + 1), pair)
        ref = smoothed(truth, pair)
        ok = est.valid & np.isfinite(ref)
        errs[label] = np.linalg.norm(est.density[ok] - ref[ok]) / np.linalg.norm(ref[ok])
    assert errs["DK3"] > errs["DK4"] > errs["DK5"]
    assert errs["gauss-5"] > errs["DK5"]


def test_reconstruction_csv():
    pair = catalog_pair("DK3")
    est = estimate_density(build_m_surface(realized(np.full(10, 4)), 2), pair)
    rows = reconstruction_csv(est).splitlines()
    assert rows[0] == "energy_keV,density_per_keV,valid_flag"
    assert rows[1] == "0,nan,0"
    assert rows[3] == "2,4,1"
    assert len(rows) == 12
