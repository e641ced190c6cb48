import numpy as np
import pytest

from mnklab.ccs import (
    CcsSample, TabularValue, fit_value_cnn, fit_value_tabular, read_samples, selfplay_sample, value_planes,
    write_samples,
)
from mnklab.game import apply, decode
from mnklab.nn import ConvNet, train
from mnklab.oracle import policy_value, soft_solve
from mnklab.policies import UniformPolicy


@pytest.fixture(scope="module")
def soft(spec):
    return soft_solve(spec, 2.0).policy()


def test_deterministic_policy_gives_one_trajectory(spec, table):
    pol = table.policy()
    samples = selfplay_sample(spec, pol, 50, seed=1)
    assert {s.outcome for s in samples} == {"draw"}
    assert {s.length for s in samples} == {9}
    s = spec.initial()
    path = {s.cells}
    while len(path) < 9:
        s = apply(s, int(pol.probs(s).argmax()))
        path.add(s.cells)
    assert {smp.cells for smp in samples} <= path


def test_one_sample_per_game(spec):
    samples = selfplay_sample(spec, UniformPolicy(), 321, seed=2)
    assert len(samples) == 321
    assert [s.game_id for s in samples] == list(range(321))


def test_root_outcome_frequencies_match_exact_values(spec, soft):
    n = 10_000
    samples = selfplay_sample(spec, soft, n, seed=3)
    exact = policy_value(spec, soft, soft).root
    for outcome, p in zip(("win", "loss", "draw"), exact):
        freq = np.mean([s.outcome == outcome for s in samples])
        assert abs(freq - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_samples_are_seeded_and_worker_independent(spec, soft):
    a = selfplay_sample(spec, soft, 200, seed=4)
    b = selfplay_sample(spec, soft, 200, seed=4, workers=2)
    c = selfplay_sample(spec, soft, 200, seed=5)
    assert a == b and a != c


def test_per_move_mode_keeps_every_position(spec):
    samples = selfplay_sample(spec, UniformPolicy(), 30, seed=6, per_move=True)
    by_game = {}
    for s in samples:
        by_game.setdefault(s.game_id, []).append(s)
    assert len(by_game) == 30
    for g, rows in by_game.items():
        assert rows[0].cells == spec.initial().cells
        assert len({r.outcome for r in rows}) == 1 and all(r.length == 1 for r in rows)


def test_state_only_in_won_games(spec):
    board = decode("120000000", spec).cells
    samples = [CcsSample(g, board, 1, "win", 5 + g) for g in range(4)]
    est = fit_value_tabular(samples, spec)
    assert est.probs(board)[0] == 1.0 and est.count(board) == 4
    assert est.value(decode("120000000", spec)) == 1.0


def test_tabular_simplex_and_pooling(spec, soft):
    samples = selfplay_sample(spec, soft, 2000, seed=7)
    est = fit_value_tabular(samples, spec, policies=("soft", "soft"))
    for key, row in est.counts.items():
        p = row / row.sum()
        assert p.sum() == pytest.approx(1) and np.all(p >= 0)
    assert est.policies == ("soft", "soft")
    assert sum(est.n.values()) == 2000
    s = decode("100000000", spec)
    assert est.count(s) == est.count(decode("001000000", spec))
    unseen = TabularValue(spec, {})
    assert unseen.probs(s) is None and unseen.value(s) == 0.0 and unseen.count(s) == 0


def test_length_weighting_removes_selection(spec):
    """Position s reached only in games of two lengths: weighting recovers the path probability."""
    s = decode("120000000", spec).cells
    short = [CcsSample(g, s, 1, "win", 5) for g in range(10)]  # half the games, sampled 1/5 of the time
    long = [CcsSample(100 + g, s, 1, "draw", 9) for g in range(10 * 5 // 9)]
    est = fit_value_tabular(short + long, spec)
    w = 10 * 5 / (10 * 5 + len(long) * 9)
    assert est.probs(s)[0] == pytest.approx(w)
    raw = fit_value_tabular(short + long, spec, weighted=False)
    assert raw.probs(s)[0] == pytest.approx(10 / (10 + len(long)))


def test_monte_carlo_error_shrinks_at_root_rate(spec, soft):
    exact = policy_value(spec, soft, soft).root[0]
    rmse = []
    for n in (50, 200, 800):
        errs = []
        for rep in range(24):
            samples = selfplay_sample(spec, soft, n, seed=1000 * n + rep, per_move=True)
            est = fit_value_tabular(samples, spec)
            errs.append(est.probs(spec.initial())[0] - exact)
        rmse.append(np.sqrt(np.mean(np.square(errs))))
    slope = np.polyfit(np.log([50, 200, 800]), np.log(rmse), 1)[0]
    assert -0.8 < slope < -0.25


def test_empty_samples_rejected(spec):
    with pytest.raises(ValueError):
        fit_value_tabular([], spec)
    with pytest.raises(ValueError):
        fit_value_cnn([], spec)
    with pytest.raises(ValueError):
        selfplay_sample(spec, UniformPolicy(), 0)


def test_value_planes_mover_plane(spec):
    x = value_planes(spec, np.array([spec.initial().cells, decode("100000000", spec).cells]))
    assert x.shape == (2, 4, 3, 3)
    assert np.all(x[0, 3] == 1) and np.all(x[1, 3] == 0)
    assert x[1, 1, 0, 0] == 1 and x[1, 0].sum() == 0  # the stone belongs to the opponent of the mover


def test_constant_outcome_is_learned(spec):
    base = selfplay_sample(spec, UniformPolicy(), 1500, seed=8)
    samples = [CcsSample(s.game_id, s.cells, s.mover, "win", s.length) for s in base]
    fit = fit_value_cnn(samples, spec, channels=(8,), epochs=15, batch=64, seed=0, held_out_frac=0.2)
    held = np.array([s.cells for s in samples if s.game_id % 5 == 0], dtype=np.int8)
    assert fit.win_prob(held).mean() > 0.98
    assert all(abs(row["mean_pred"] - row["empirical"]) < 0.02 for row in fit.calibration)


def test_mover_plane_flips_prediction(spec):
    rng = np.random.default_rng(9)
    samples = selfplay_sample(spec, UniformPolicy(), 400, seed=9)
    x = value_planes(spec, np.array([s.cells for s in samples], dtype=np.int8))
    flipped = x.copy()
    flipped[:, 3] = 1 - flipped[:, 3]
    y_own = x[:, 3, 0, 0]  # label: player 1 on move
    net = ConvNet.build(4, channels=(8,), kind="value", seed=1)
    train(net, np.concatenate([x, flipped]), np.concatenate([y_own, 1 - y_own]), epochs=30, lr=0.05, batch=64,
          seed=int(rng.integers(100)))
    p, q = net.predict(x), net.predict(flipped)
    assert np.all((p > 0.5) == (y_own == 1)) and np.all((q > 0.5) == (y_own == 0))


def test_outputs_in_unit_interval(spec):
    rng = np.random.default_rng(10)
    net = ConvNet.build(4, channels=(8, 8), kind="value", seed=2)
    net.set_flat(rng.normal(0, 30, net.n_params))
    cells = np.array([s.cells for s in selfplay_sample(spec, UniformPolicy(), 100, seed=10)], dtype=np.int8)
    p = net.predict(value_planes(spec, cells))
    assert np.all((p >= 0) & (p <= 1))


def test_samples_jsonl_roundtrip(tmp_path, spec, soft):
    samples = selfplay_sample(spec, soft, 50, seed=11)
    for name in ("s.jsonl", "s.jsonl.gz"):
        write_samples(samples, tmp_path / name)
        assert read_samples(tmp_path / name, spec) == samples
    (tmp_path / "bad.jsonl").write_text('{"game_id": 0, "state_key": "000000000", "mover": 1, "outcome": "tie"}\n')
    with pytest.raises(ValueError):
        read_samples(tmp_path / "bad.jsonl", spec)


def test_tabular_csv_roundtrip(tmp_path, spec, soft):
    est = fit_value_tabular(selfplay_sample(spec, soft, 500, seed=12), spec)
    est.to_csv(tmp_path / "v.csv")
    back = TabularValue.from_csv(tmp_path / "v.csv", spec)
    assert back.n == est.n
    for key in est.counts:
        assert np.allclose(back.counts[key] / back.counts[key].sum(), est.counts[key] / est.counts[key].sum())
