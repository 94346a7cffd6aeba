import numpy as np
import pytest
from test_config import with_

from stosign.config import validate_config
from stosign.learning.simulation import (
    Simulation,
    lr_schedule,
    quadratic_trajectories,
    run_experiment,
)


def trajectory(cfg):
    sim = Simulation(cfg, track_metrics=False)
    state = sim.initial_state()
    ws = [state.w]
    for _ in range(cfg.rounds):
        state, _ = sim.run_round(state)
        ws.append(state.w)
    return np.array(ws)


def test_lr_schedules():
    assert lr_schedule("constant", 0.1, 500) == 0.1
    assert lr_schedule("multiplicative-decay", 1.0, 2, rate=0.99) == pytest.approx(0.9801)
    assert lr_schedule("theory", 1.0, 0, T=10_000, d=100) == pytest.approx(1e-3)
    ms = [(10, 10.0), (20, 100.0)]
    assert [lr_schedule("step-decay", 1.0, t, milestones=ms) for t in (9, 10, 25)] == [1.0, 0.1, 0.01]


def test_sign_first_step_goes_the_wrong_way():
    # local gradients at w=0 are [3, -1, -1]: the majority says -1, the mean says +1
    res = run_experiment(validate_config(with_(algorithm="sign", b=None, rounds=1)))
    assert res.state.w[0] == pytest.approx(0.001)
    assert res.metrics[0].wrong_agg_frac == 1.0


def test_homogeneous_targets_converge():
    for alg in ("sign", "sto", "full-precision"):
        cfg = validate_config(with_(algorithm=alg, b={"value": 4.0} if alg == "sto" else None,
                                    dataset={"kind": "quadratic", "targets": [2.0, 2.0, 2.0]},
                                    rounds=3000, lr={"eta0": 0.01}))
        assert abs(trajectory(cfg)[-100:].mean() - 2.0) < 0.05


@pytest.mark.parametrize("alg,B", [("sign", 0), ("sto", 0), ("ef-sto", 0), ("full-precision", 0),
                                   ("sto", 2), ("ef-sto", 2), ("full-precision", 1)])
def test_vectorized_quadratic_is_identical(alg, B):
    base = with_(algorithm=alg, b={"value": 4.0} if "sto" in alg else None,
                 byzantine={"count": B}, rounds=150)
    seeds = [0, 3, 11]
    batch = quadratic_trajectories(validate_config(base), seeds)
    for r, s in enumerate(seeds):
        np.testing.assert_array_equal(batch[r], trajectory(validate_config(dict(base, seed=s))))


def test_vectorized_rejects_unsupported():
    cfg = validate_config(with_(algorithm="dp", b=None, dp={"epsilon": 0.5, "delta": 1e-5, "clip": 1.0}))
    with pytest.raises(ValueError):
        quadratic_trajectories(cfg, [0])


def test_full_precision_linear_regression_loss_monotone():
    cfg = validate_config({
        "seed": 4, "algorithm": "full-precision", "M": 4,
        "model": {"kind": "linear-regression", "dims": [5]},
        "dataset": {"kind": "linear-regression", "samples": 400, "features": 5, "noise": 0.1},
        "rounds": 100, "lr": {"eta0": 0.05},
    })
    losses = [m.train_loss for m in run_experiment(cfg).metrics]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


@pytest.mark.parametrize("M", [3, 5, 31])
def test_homogeneous_sign_tolerates_m_minus_1(M):
    def first_direction(B):
        cfg = validate_config(with_(algorithm="sign", b=None, M=M, byzantine={"count": B},
                                    dataset={"kind": "quadratic", "targets": [1.0] * M}, rounds=1))
        return np.sign(run_experiment(cfg).state.w[0])
    # true gradient at w=0 is -1, so the correct step is upward
    assert all(first_direction(B) == 1 for B in range(M))
    assert first_direction(M) == -1


def test_ef_run_keeps_even_residual():
    cfg = validate_config(with_(algorithm="ef-sto", rounds=300))
    assert run_experiment(cfg).summary["residual_all_even"] is True


def test_dp_runs_report_privacy():
    cfg = validate_config(with_(algorithm="dp", b=None, rounds=20,
                                dp={"epsilon": 0.5, "delta": 1e-5, "clip": 4.0}))
    priv = run_experiment(cfg).summary["privacy"]
    assert priv["mu"] == pytest.approx(np.sqrt(20) * 4.0 / priv["scale"])


def test_skip_mode_payload():
    cfg = validate_config({
        "seed": 0, "algorithm": "dp-topk", "M": 3,
        "model": {"kind": "logistic-regression", "dims": [4, 3]},
        "dataset": {"kind": "gaussian-mixture", "samples": 300, "features": 4, "classes": 3},
        "rounds": 3, "lr": {"eta0": 0.01},
        "dp": {"epsilon": 0.5, "delta": 1e-5, "clip": 1.0, "topk_fraction": 0.25, "skip_untransmitted": True},
    })
    sim = Simulation(cfg)
    # k = 4 of d = 15 coordinates, each with a sign bit and a 4-bit index
    assert sim.uplink_payload_bits() == 4 * 5
    run_experiment(cfg)
