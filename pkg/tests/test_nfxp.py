import numpy as np
import pytest

from mnklab.expert import Dataset, ExpertModel, generate_dataset
from mnklab.game import GameError, decode, legal_actions, symmetries, transform_action
from mnklab.nfxp import (
    FitResult, Likelihood, MisspecReport, NfxpConfig, choice_probs, fit, loglik, loglik_grad,
    misspecification_experiment,
)
from mnklab.search import EvalParams

THETA = np.array([0.6, 2.0, 0.8, 2.5, 1.0])


@pytest.fixture(scope="module")
def data(spec):
    return generate_dataset(ExpertModel(spec, params=EvalParams(THETA)), 400, seed=11)


def fd_gradient(lik, theta, h=1e-5):
    g = np.zeros_like(theta)
    for j in range(len(theta)):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (lik.value(theta + e) - lik.value(theta - e)) / (2 * h)
    return g


def test_gradient_matches_finite_differences(data):
    lik = Likelihood(data, NfxpConfig())
    rng = np.random.default_rng(0)
    for _ in range(20):
        theta = rng.normal(0, 2, 5)
        _, g = lik.evaluate(theta)
        fd = fd_gradient(lik, theta)
        assert np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12) < 1e-4


def test_hessian_matches_gradient_differences(data):
    lik = Likelihood(data, NfxpConfig())
    theta = np.random.default_rng(1).normal(0, 1, 5)  # generic: away from minimax ties
    _, _, H = lik.evaluate(theta, hessian=True)
    h = 1e-6
    num = np.column_stack([(lik.evaluate(theta + h * e)[1] - lik.evaluate(theta - h * e)[1]) / (2 * h)
                           for e in np.eye(5)])
    assert np.allclose(H, num, rtol=1e-4, atol=1e-3)


def test_zero_weights_give_uniform_likelihood(data):
    early = data.subset(data.turn <= 3)  # no line can close within two plies
    expected = sum(np.log(1.0 / len(legal_actions(s))) for s in early.states())
    assert loglik(EvalParams(np.zeros(5)), early) == pytest.approx(expected, rel=1e-12)


def test_zero_weights_uniform_choice(spec):
    s = decode("100020000", spec)
    p = choice_probs(s, EvalParams(np.zeros(5)))
    assert np.allclose(p[legal_actions(s)], 1 / 7)


def test_choice_probs_equal_expert(spec, random_states):
    params = EvalParams(THETA)
    model = ExpertModel(spec, params=params, lam=1.0)
    for s in random_states:
        assert np.array_equal(choice_probs(s, params), model.probs(s))


def test_choice_probs_symmetry(spec, random_states):
    params = EvalParams(THETA)
    for s in random_states[:200]:
        p = choice_probs(s, params)
        for g, t in enumerate(symmetries(s)):
            q = choice_probs(t, params)
            for a in legal_actions(s):
                assert q[transform_action(spec, a, g)] == pytest.approx(p[a], abs=1e-12)


def test_truth_beats_zero_in_large_samples(spec):
    ds = generate_dataset(ExpertModel(spec, params=EvalParams(THETA)), 3000, seed=12)
    assert len(ds) >= 20_000
    assert loglik(EvalParams(THETA), ds) >= loglik(EvalParams(np.zeros(5)), ds)


def test_fit_from_truth_stays_near_truth(spec):
    ds = generate_dataset(ExpertModel(spec, params=EvalParams(THETA)), 2000, seed=13)
    res = fit(ds, init=THETA)
    assert res.converged and not res.diverged
    assert np.all(np.abs(res.theta - THETA) < 4 * res.se)
    assert res.grad_norm <= 1e-6


def test_accepted_steps_strictly_increase(data):
    res = fit(data)
    ll = [t["loglik"] for t in res.trace]
    assert all(b > a for a, b in zip(ll, ll[1:]))
    assert res.converged


def test_doubling_weights_changes_the_likelihood(data):
    res = fit(data)
    lik = Likelihood(data, NfxpConfig())
    assert lik.value(2 * res.theta) < res.loglik


def test_separation_is_reported(spec):
    s = decode("121211200", spec)  # player 2 to move, two non-winning options
    ds = Dataset(spec, np.array([s.cells], dtype=np.int8), np.array([7]), np.array([2], dtype=np.int8),
                 np.array([0]), np.array([8]))
    res = fit(ds, NfxpConfig(depth=1))
    assert res.diverged and not res.converged
    assert "separation" in res.message


def test_non_finite_likelihood_raises(data):
    lik = Likelihood(data, NfxpConfig())
    with pytest.raises(FloatingPointError, match="theta"):
        lik.value(np.array([np.nan, 0, 0, 0, 0]))


def test_bad_data_rejected(spec):
    s = decode("100020000", spec)
    ds = Dataset(spec, np.array([s.cells], dtype=np.int8), np.array([0]), np.array([1], dtype=np.int8),
                 np.array([0]), np.array([3]))
    with pytest.raises(GameError):
        Likelihood(ds, NfxpConfig())


def test_multistart_keeps_the_best(data):
    one = fit(data)
    many = fit(data, NfxpConfig(starts=4), seed=3)
    assert many.loglik >= one.loglik - 1e-9
    assert "best of 4 starts" in many.message


def test_fit_result_json_roundtrip(tmp_path, data):
    res = fit(data)
    res.to_json(tmp_path / "f.json")
    back = FitResult.from_json(tmp_path / "f.json")
    assert np.array_equal(back.theta, res.theta) and np.array_equal(back.se, res.se)
    assert back.trace == res.trace and back.loglik == res.loglik


def test_module_helpers_agree(data):
    params = EvalParams(THETA)
    ll, g = loglik_grad(params, data)
    assert ll == loglik(params, data)
    assert g.shape == (5,)


def test_config_validation():
    for bad in (dict(depth=0), dict(tol=0), dict(backtrack=1.0), dict(ridge=-1), dict(starts=0)):
        with pytest.raises(ValueError):
            NfxpConfig(**bad)


def test_homogeneous_split_agrees_and_roundtrips(tmp_path, spec):
    ds = generate_dataset(ExpertModel(spec, params=EvalParams(THETA), per_player_scales=(1.0, 1.0)), 2000,
                          seed=14)
    rpt = misspecification_experiment(ds)
    for sample in ("player1", "player2"):
        diff = np.abs(rpt.rows[sample]["theta"] - rpt.rows["pooled"]["theta"])
        assert np.all(diff < 4 * rpt.rows[sample]["se"])
    assert rpt.verdict == "no significant heterogeneity"
    rpt.to_csv(tmp_path / "m.csv")
    back = MisspecReport.from_csv(tmp_path / "m.csv", spec)
    assert back.feature_names == rpt.feature_names
    for sample in rpt.rows:
        assert np.array_equal(back.rows[sample]["theta"], rpt.rows[sample]["theta"])
        assert back.rows[sample]["loglik"] == rpt.rows[sample]["loglik"]
    assert back.lr_stat == rpt.lr_stat
