import math

import numpy as np
import pytest

from ssfuse.fusion import init_weights
from ssfuse.scan import ScanOrder
from ssfuse.ssm import SsmWeights, kernel_lti, lti_params, scan_recurrent
from ssfuse.verify import (NumericError, check_scan_equivalence, count_flops, count_params,
                           erf_map, erf_to_pgm, fd_jacobian, make_block, make_conv3_ref,
                           sensitivity_fd, write_erf)


def test_fd_identity_block():
    F = np.random.default_rng(0).standard_normal((2, 3, 3))
    jac = fd_jacobian(lambda a, b: a, F, F)
    eye = np.eye(F.size).reshape(F.shape + F.shape)
    np.testing.assert_allclose(jac[0], eye, atol=1e-10)
    assert not np.any(jac[1])


def test_fd_linear_block_exact_to_rounding():
    F = np.random.default_rng(1).standard_normal((1, 2, 2))
    s = sensitivity_fd(lambda a, b: 2.0 * a + b, F, F, (0, 1, 0))
    assert abs(s[0, 0, 1, 0] - 2.0) <= 1e-8 and abs(s[1, 0, 1, 0] - 1.0) <= 1e-8
    s[0, 0, 1, 0] = s[1, 0, 1, 0] = 0.0
    assert np.max(np.abs(s)) <= 1e-8


def test_fd_nonfinite_raises():
    F = np.ones((1, 2, 2))
    with pytest.raises(NumericError), np.errstate(divide="ignore"):
        fd_jacobian(lambda a, b: a / 0.0, F, F)


def test_fd_of_lti_scan_equals_kernel():
    rng = np.random.default_rng(2)
    w = SsmWeights.init(1, 2, rng)
    L = 10
    B, C = rng.standard_normal((2, 1, 2))
    delta = np.array([0.4])
    params = lti_params(B, C, delta, L)
    x = rng.standard_normal((1, 1, L))  # one channel, H = 1, W = L
    jac = fd_jacobian(lambda a, b: scan_recurrent(np.swapaxes(a[..., 0, :, :], -1, -2), params, w)[0],
                      x, x)[0, 0, 0]  # (L_in, L_out, d)
    K = kernel_lti(w, B, C, delta, L)[0]
    for i in range(L):
        for k in range(L):
            expected = (K[i - k] + (w.D[0] if i == k else 0.0)) if k <= i else 0.0
            assert abs(jac[k, i, 0] - expected) <= 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_unidirectional_lti_erf_decays_with_raster_distance(seed):
    rng = np.random.default_rng(seed)
    w = SsmWeights.init(1, 1, rng)
    params = lti_params(rng.standard_normal((1, 1)), rng.standard_normal((1, 1)), [0.3], 16)
    block = lambda a, b: np.swapaxes(  # noqa: E731
        scan_recurrent(np.swapaxes(a.reshape(a.shape[:-2] + (1, 16)), -1, -2), params, w)[0],
        -1, -2).reshape(a.shape)
    erf = erf_map(block, (1, 4, 4), (3, 3), trials=2).values.ravel()
    behind = erf[::-1][1:]  # raster distance 1, 2, ... behind the probe
    assert np.all(np.diff(behind) <= 1e-9)


def test_conv3_support_is_3x3_neighbourhood():
    erf = erf_map(make_conv3_ref(2, 0), (2, 8, 8), (4, 4), trials=2)
    mask = np.zeros((8, 8), bool)
    mask[3:6, 3:6] = True
    np.testing.assert_array_equal(erf.support_mask(), mask)
    assert erf.values.max() == 1.0


def test_unidirectional_path_is_causal_in_raster_order():
    w = init_weights(2, 1, 3)
    erf = erf_map(make_block("ff_uni_12", w), (2, 8, 8), (3, 5), trials=2)
    support = erf.support_mask().ravel()
    idx = 3 * 8 + 5
    assert support[idx] and not np.any(support[idx + 1:])


def test_erf_bidirectional_support_contains_unidirectional():
    w = init_weights(2, 1, 4)
    uni = erf_map(make_block("ff_uni_12", w), (2, 8, 8), (0, 0), trials=2).support_mask()
    bi = erf_map(make_block("ff_bidir", w), (2, 8, 8), (0, 0), trials=2).support_mask()
    assert np.all(bi[uni]) and bi.sum() > uni.sum()


def test_erf_rejects_bad_center_and_block():
    with pytest.raises(ValueError):
        erf_map(make_conv3_ref(1, 0), (1, 4, 4), (4, 0))
    with pytest.raises(ValueError, match="conv3_ref"):
        make_block("mlp", init_weights(1, 1, 0))


def test_erf_thread_pool_is_deterministic():
    block = make_block("ff_bidir", init_weights(2, 1, 5))
    a = erf_map(block, (2, 4, 4), (1, 1), trials=3, workers=1)
    b = erf_map(block, (2, 4, 4), (1, 1), trials=3, workers=3)
    np.testing.assert_array_equal(a.values, b.values)


def test_pgm_format(tmp_path):
    erf = erf_map(make_conv3_ref(1, 0), (1, 8, 6), (4, 3), trials=1)
    lines = erf_to_pgm(erf).splitlines()
    assert lines[:4] == ["P2", "# ssfuse-erf", "6 8", "255"]
    levels = np.array([[int(v) for v in row.split()] for row in lines[4:]])
    assert levels.shape == (8, 6) and levels.max() == 255
    np.testing.assert_array_equal(levels > 0, erf.support_mask())
    pgm, csv = write_erf(erf, tmp_path / "erf")
    assert pgm.read_text().startswith("P2\n")
    np.testing.assert_array_equal(np.loadtxt(csv, delimiter=","), erf.values)


def test_equivalence_single_step_is_exact_up_to_rounding():
    for seed in range(5):
        rep = check_scan_equivalence(seed, 1, 1, 1)
        assert rep.max_rel_err <= 4 * np.finfo(float).eps and rep.passed


def test_equivalence_passes_at_tolerance():
    assert check_scan_equivalence(1, 4, 8, 64, tol=1e-9).passed


def test_equivalence_fault_injection():
    rep = check_scan_equivalence(1, 4, 8, 64, kernel_fault=1.0)
    assert rep.max_abs_err >= 1.0 and not rep.passed


def test_param_count_matches_weight_census():
    for d, s in [(1, 1), (2, 3), (4, 2), (4, 1)]:
        assert count_params(d, s).params == init_weights(d, s, 0).n_params()
    assert count_params(1, 1).params == 72


def test_flop_scaling():
    f = lambda H, m: count_flops(64, 1, H, 32, m).flops  # noqa: E731
    assert f(64, "ms2fusion") == 2 * f(32, "ms2fusion")
    assert f(64, "cnn_ref") == 2 * f(32, "cnn_ref")
    assert f(64, "attention_ref") / f(32, "attention_ref") >= 3.5
    assert f(32, "attention_ref") > f(32, "ms2fusion")


def test_flops_both_orders_double():
    one = count_flops(8, 1, 4, 4, "ms2fusion", directions=1).flops
    assert count_flops(8, 1, 4, 4, "ms2fusion", directions=2).flops == 2 * one


def test_params_independent_of_map_size():
    for m in ("ms2fusion", "cnn_ref", "attention_ref"):
        assert count_flops(16, 2, 4, 4, m).params == count_flops(16, 2, 32, 8, m).params


def test_unknown_method():
    with pytest.raises(ValueError, match="attention_ref"):
        count_params(4, 1, "rnn")


def test_attention_closed_form():
    # Q, K, V, O projections plus scores and weighted sum, two branches
    L, d = 256, 8
    assert count_flops(d, 1, 16, 16, "attention_ref").flops == 2 * (4 * L * d * d + 2 * L * L * d)
    assert count_params(d, 1, "attention_ref").params == 8 * (d * d + d)
    assert math.isclose(count_flops(d, 1, 32, 16, "attention_ref").flops
                        / count_flops(d, 1, 16, 16, "attention_ref").flops, 4.0, rel_tol=0.05)


def test_ms2fusion_both_orders_erf_covers_full_map():
    w = init_weights(2, 1, 0, scan_order=ScanOrder.ROWS_AND_COLUMNS)
    assert erf_map(make_block("ms2fusion", w), (2, 8, 8), (4, 4), trials=2).support() == 64
