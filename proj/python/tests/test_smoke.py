# SPDX-License-Identifier: Apache-2.0
import math

import numpy as np
import pytest

import tuka


def test_param_counts():
    assert tuka.param_count("tuka", 1024, 1024, [8, 8, 64, 64], scenes=7, envs=4) == 279232
    assert tuka.param_count("lora", 1024, 1024, [128]) == 262144
    assert tuka.param_count_task_lora(24, 1024, 1024, 6) == 294912


def test_tucker_matches_einsum():
    rng = np.random.default_rng(0)
    core = rng.standard_normal((2, 3, 2, 4))
    factors = [rng.standard_normal((n, r)) for n, r in zip((3, 4, 2, 5), core.shape)]
    expected = np.einsum("abcd,ia,jb,kc,ld->ijkl", core, *factors)
    np.testing.assert_allclose(tuka.tucker_reconstruct(core, factors), expected, atol=1e-12)

    u1, u2 = rng.standard_normal((5, 2)), rng.standard_normal((6, 3))
    u3, u4 = rng.standard_normal(2), rng.standard_normal(4)
    dw = tuka.contract_adapter(core, u1, u2, u3, u4)
    np.testing.assert_allclose(dw, np.einsum("abcd,ia,jb,c,d->ij", core, u1, u2, u3, u4), atol=1e-12)


def test_null_losses():
    theta = np.linspace(-1, 1, 7)
    assert tuka.loss_ewc(theta, theta, np.ones(7), 0.2) == 0.0
    assert tuka.loss_consistency([1.0], [0.0], [2.0], [0.0], False, False, 0.2) == 0.0
    assert abs(tuka.orthogonality_penalty(np.eye(3))) <= 1e-12


def test_dimension_errors_are_value_errors():
    with pytest.raises(ValueError):
        tuka.cosine_sim([1.0, 0.0], [1.0])
    with pytest.raises(tuka.ConfigError, match="tasks"):
        tuka.config_hash({"tasks": 0})


def test_metrics():
    ep = tuka.episode_scores([[0, 0], [4, 0]], [4, 0], tl_ref=4.0)
    assert ep == {"sr": 1, "osr": 1, "spl": 1.0, "tl": 4.0}
    assert tuka.forgetting_rate(0.8, 0.6) == pytest.approx(0.25)
    assert tuka.forgetting_rate(None, 0.6) is None


def test_degrade():
    img = np.full((1, 1, 3), 0.5)
    hazy = tuka.scatter(img, np.full((1, 1), 200.0))
    assert hazy[0, 0, 0] == pytest.approx(0.5 * math.exp(-2) + 0.95 * (1 - math.exp(-2)), abs=1e-12)
    np.testing.assert_array_equal(tuka.scatter(img, np.ones((1, 1)), beta=0), img)
    rng = np.random.default_rng(1)
    frame = rng.random((6, 5, 3))
    dark = tuka.low_light(frame, seed=3)
    np.testing.assert_array_equal(dark, tuka.low_light(frame, seed=3))
    bright = tuka.overexpose(frame, seed=3, bloom=0.1)
    assert dark.min() >= 0 and bright.max() <= 1 and dark.shape == frame.shape
    with pytest.raises(tuka.ConfigError):
        tuka.low_light(frame, nonsense=1)


TINY = {
    "scenes": 3, "envs": 2, "obs_dim": 24, "instr_dim": 8, "hidden": 16, "horizon": 10,
    "tasks": 3, "n_train": 10, "n_test": 6, "epochs": 2, "ranks": [3, 3, 3, 3],
}


def test_run_stream_and_gradcheck():
    run = tuka.run_stream(TINY)
    assert len(run["scores"]) == 3
    assert 0.0 <= run["retrieval_accuracy"] <= 1.0
    assert run == tuka.run_stream(TINY)
    assert all(e["pass"] for e in tuka.gradcheck(TINY))


def test_train_resumes(tmp_path):
    assert tuka.train(TINY, tmp_path / "run", stop_after=1) == 1
    assert tuka.train(TINY, tmp_path / "run") == 3
    assert len(tuka.config_hash(TINY)) == 16
