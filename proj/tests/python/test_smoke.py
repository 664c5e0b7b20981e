import math

import numpy as np
import pytest

import deepsc


def test_presets_listed_and_loadable():
    names = deepsc.preset_names()
    assert "heston-power" in names
    cfg = deepsc.preset("example1-nonhara")
    assert cfg["T"] == 0.5 and cfg["x0"] == 1.0 and cfg["market"]["m"] == 5
    assert cfg["market"]["r"] == 0.05 and cfg["market"]["mu"] == 0.06


def test_defaults_are_filled():
    cfg = deepsc.validate_config(
        {"name": "d", "market": {"kind": "black-scholes"}, "utility": "power"}
    )
    assert cfg["batch"] == 64
    assert cfg["beta"] == 0.5
    assert cfg["constraint"]["penalty_weight"] == 1000.0


def test_unknown_key_and_bad_grid_rejected():
    with pytest.raises(ValueError):
        deepsc.validate_config({"name": "d", "itterations": 10})
    with pytest.raises(ValueError):
        deepsc.validate_config({"name": "d", "N": 0})


def test_heston_oracle_values():
    assert deepsc.heston_riccati_value(T=0.2) == pytest.approx(2.03289, abs=5e-5)
    assert deepsc.heston_riccati_value(T=0.5) == pytest.approx(2.07559, abs=5e-5)


def test_nonhara_zero_rate_case():
    sol = deepsc.nonhara_solution(0.0, 0.0, 2.0, 1.0)
    assert sol["y_hat"] == pytest.approx(1.0, abs=1e-14)
    assert sol["value"] == pytest.approx(10.0 / 3.0, abs=1e-12)


def test_fenchel_young_on_power():
    p = 0.5
    for x in (0.3, 1.0, 4.0):
        u, du, _ = deepsc.utility("power", x, p)
        ut, _, _ = deepsc.dual_utility("power", du, p)
        assert ut == pytest.approx(u - x * du, abs=1e-12)


def test_increments_reproducible_and_antithetic():
    a = deepsc.brownian_increments(7, 0, 4, 3, 2)
    b = deepsc.brownian_increments(7, 0, 4, 3, 2)
    assert len(a) == 3 and a[0].shape == (4, 2)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    np.testing.assert_array_equal(a[0][1], -a[0][0])


def test_projection_membership():
    v = deepsc.project("ball", np.array([3.0, 4.0]), 1.0)
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert (deepsc.project("cone", np.array([-1.0, 2.0])) >= 0).all()


def test_bond_only_run_matches_growth():
    cfg = {
        "name": "bond",
        "market": {"kind": "black-scholes", "m": 1},
        "constraint": "bond",
        "T": 0.5,
        "N": 2,
        "iterations": 60,
        "eval_paths": 1024,
    }
    rec = deepsc.run_experiment(cfg)
    expect = 2.0 * math.sqrt(math.exp(0.05 * 0.5))
    assert rec["oracle"] == pytest.approx(expect, rel=1e-12)
    assert abs(rec["rel_err"]["primal"]) < 1e-3
    assert rec["config"]["batch"] == 64


def test_emit_and_slope(tmp_path):
    assert deepsc.emit_results([], tmp_path)
    assert (tmp_path / "results.json").exists()
    assert deepsc.loglog_slope([5, 10, 20], [1 / 5, 1 / 10, 1 / 20]) == pytest.approx(-1.0)
