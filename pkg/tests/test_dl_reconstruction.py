import numpy as np
import pytest
from oracles import crandn

from vcrtrack.channel_model import ModelParams, bessel_j0, doppler_from_alpha, phi_h
from vcrtrack.dl_reconstruction import (
    DlModelPartial,
    build_dl_training,
    dl_group_users,
    dl_observe_despread,
    map_alpha_dl,
    map_lambda_dl,
    map_support_bias,
    reconstruct_dl,
)


def _mask(n, bins):
    m = np.zeros(n, bool)
    m[list(bins)] = True
    return m


# ---------------------------------------------------------------- mapping


def test_equal_carriers_leave_model_unchanged():
    n = 32
    sup = _mask(n, range(5, 9))
    bias = np.where(sup, [0.1, -0.2, 0.3, 0.0] * 8, 0.0)
    p = ModelParams(0.98, np.where(sup, 0.1, 0.0), sup, bias, 0.01)
    for direction in ("stated", "physical"):
        dl = reconstruct_dl(p, 2e9, 2e9, 160, 1e-6, direction)
        assert np.array_equal(dl.support_dl, sup)
        assert np.allclose(dl.bias_dl, bias, atol=1e-12)
        assert dl.alpha_dl == pytest.approx(0.98, abs=1e-10)
        assert all(dl.source_bins[q] == [q] for q in range(5, 9))


def test_single_bin_scaled_by_two():
    sup = _mask(32, [10])
    bias = np.zeros(32)
    bias[10] = 0.2
    support, b, src = map_support_bias(sup, bias, 2.0)
    assert np.flatnonzero(support).tolist() == [20]
    assert b[20] == pytest.approx(0.4)
    assert src == {20: [10]}


def test_position_above_half_is_recentred():
    sup = _mask(32, [10])
    bias = np.zeros(32)
    bias[10] = 0.35
    support, b, _ = map_support_bias(sup, bias, 2.0)  # 20.7 -> bin 21, bias -0.3
    assert np.flatnonzero(support).tolist() == [21]
    assert b[21] == pytest.approx(-0.3)


def test_colliding_bins_average_their_biases():
    sup = _mask(32, [10, 11])
    bias = np.zeros(32)
    bias[10], bias[11] = 0.1, -0.3  # 5.05 and 5.35
    support, b, src = map_support_bias(sup, bias, 0.5)
    assert np.flatnonzero(support).tolist() == [5]
    assert b[5] == pytest.approx(0.2)
    assert src[5] == [10, 11]


def test_gaps_are_filled_and_lambda_interpolated():
    sup = _mask(32, [10, 11])
    support, b, src = map_support_bias(sup, np.zeros(32), 2.0)
    assert np.flatnonzero(support).tolist() == [20, 21, 22]
    assert src[21] == [] and b[21] == 0.0
    lam = np.zeros(32)
    lam[10], lam[11] = 1.0, 3.0
    out = map_lambda_dl(lam, src, 32)
    assert out[20] == 1.0 and out[22] == 3.0 and out[21] == pytest.approx(2.0)


def test_mapping_outside_grid_rejected():
    with pytest.raises(ValueError):
        map_support_bias(_mask(16, [12]), np.zeros(16), 2.0)
    with pytest.raises(ValueError):
        map_support_bias(_mask(16, [2]), np.zeros(16), 0.0)


@pytest.mark.parametrize("ratio", [0.5, 1.0, 1.25])
def test_alpha_mapping_directions(ratio):
    nu, lc, ts = 200.0, 160, 1e-6
    stated = map_alpha_dl(nu, lc, ts, ratio, "stated")
    physical = map_alpha_dl(nu, lc, ts, ratio, "physical")
    assert stated == pytest.approx(float(bessel_j0(2 * np.pi * ratio * nu * lc * ts)))
    assert physical == pytest.approx(float(bessel_j0(2 * np.pi * nu / ratio * lc * ts)))
    if ratio == 1.0:
        assert stated == physical


def test_alpha_mapping_round_trips_doppler():
    nu = doppler_from_alpha(0.97, 160, 1e-6)
    assert map_alpha_dl(nu, 160, 1e-6, 1.0) == pytest.approx(0.97, abs=1e-10)


@pytest.mark.parametrize("args", [(-1.0, 160, 1e-6, 1.0), (1.0, 160, 1e-6, 0.0)])
def test_alpha_mapping_rejects_bad_input(args):
    with pytest.raises(ValueError):
        map_alpha_dl(*args)
    with pytest.raises(ValueError):
        map_alpha_dl(100.0, 160, 1e-6, 1.0, "sideways")


def test_partial_model_validation():
    with pytest.raises(ValueError):
        DlModelPartial(1.5, _mask(8, [1]), np.zeros(8), 1.0, {})
    with pytest.raises(ValueError):
        DlModelPartial(0.9, _mask(8, [1, 3]), np.zeros(8), 1.0, {})


# ---------------------------------------------------------------- downlink training


def _group(n=32, on_grid=True):
    supports = {0: _mask(n, range(4, 8)), 1: _mask(n, range(14, 17))}
    rng = np.random.default_rng(0)
    biases = {k: (np.zeros(n) if on_grid else np.where(s, rng.uniform(-0.5, 0.5, n), 0.0))
              for k, s in supports.items()}
    return supports, biases


def test_grouping_disjoint_downlink_supports():
    supports, _ = _group()
    assert dl_group_users([supports[0], supports[1]]).groups == ((0, 1),)


def test_training_rows_are_orthogonal():
    supports, biases = _group()
    tr = build_dl_training([0, 1], supports, biases, pilot_power=2.0)
    assert tr.block_len == 4
    for s_k in tr.rows.values():
        assert np.allclose(s_k @ s_k.conj().T, tr.block_len * 2.0 * np.eye(s_k.shape[0]))


def test_noiseless_despread_returns_own_coefficients_on_grid():
    n = 32
    supports, biases = _group(n)
    tr = build_dl_training([0, 1], supports, biases)
    rng = np.random.default_rng(1)
    for k in (0, 1):
        idx = np.flatnonzero(supports[k])
        w = crandn(rng, 3, idx.size)
        g = w @ phi_h(biases[k])[:, idx].T
        y = dl_observe_despread(g, tr, k, 0.0, rng)
        # the other member's beams add nothing: their beam-domain columns are orthogonal
        assert np.allclose(y, w, atol=1e-12)


def test_despread_noise_variance():
    supports, biases = _group()
    tr = build_dl_training([0, 1], supports, biases, pilot_power=2.0)
    y = dl_observe_despread(np.zeros((20_000, 32)), tr, 0, 0.3, 5)
    assert np.mean(np.abs(y) ** 2) == pytest.approx(0.3 / 2.0, rel=0.05)
