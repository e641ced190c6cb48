import numpy as np
import pytest

from mnklab.game import GameError, GameSpec, apply, classify, decode, legal_actions, symmetries
from mnklab.policies import UniformPolicy
from mnklab.search import (
    EvalParams, SearchAgent, SearchConfig, alphabeta, build_book, build_tablebase, calibrate, default_params,
    feature_matrix, feature_names, features, linear_eval, match_scores, minimax,
)

FULL = SearchConfig(depth=9)


def test_empty_board_features_are_mirror_symmetric(spec):
    x = features(spec.initial())
    names = feature_names(spec)
    p1 = x[[names.index("p1_open1"), names.index("p1_open2")]]
    p2 = x[[names.index("p2_open1"), names.index("p2_open2")]]
    assert np.array_equal(p1, -p2) or np.all(p1 == 0)
    assert np.all(features(spec.initial(), "net") == 0)


def test_center_stone_features(spec):
    x = features(apply(spec.initial(), 4))
    names = feature_names(spec)
    assert x[names.index("center")] == 1
    assert x[names.index("p1_open1")] == 4


def test_center_line_count_by_brute_force(spec):
    from reference_oracle import all_lines

    assert sum(4 in ln for ln in all_lines(3, 3, 3)) == 4


def test_features_symmetry_invariant(space):
    for i in range(0, len(space), 3):
        s = space.state(i)
        x = features(s)
        for t in symmetries(s):
            assert np.array_equal(features(t), x)


def test_feature_matrix_matches_scalar(space):
    cells = np.array([space.state(i).cells for i in range(len(space))], dtype=np.int8)
    X = feature_matrix(space.spec, cells)
    for i in range(0, len(space), 7):
        assert np.array_equal(X[i], features(space.state(i)))
    Xn = feature_matrix(space.spec, cells, "net")
    assert np.allclose(Xn[5], features(space.state(5), "net"))


def test_linear_eval_zero_and_linear(random_states, spec):
    zero = EvalParams.zeros(spec)
    p = default_params(spec)
    for s in random_states[:200]:
        assert linear_eval(s, zero) == 0
        assert linear_eval(s, EvalParams(2.5 * p.theta)) == pytest.approx(2.5 * linear_eval(s, p))


def test_default_weights_correlate_with_true_values(space, table):
    p = default_params(space.spec)
    ev, vs = [], []
    for i in space.cont_indices:
        s = space.state(i)
        ev.append(linear_eval(s, p))
        vs.append(table.value(s))
    assert np.corrcoef(ev, vs)[0, 1] > 0


def test_immediate_win_found_for_any_weights(spec):
    rng = np.random.default_rng(3)
    s = decode("110220000", spec)
    for _ in range(20):
        params = EvalParams(rng.normal(0, 5, 5))
        a, v = alphabeta(s, SearchConfig(depth=1), params)
        assert a == 2 and v == params.W


def test_full_depth_equals_oracle_everywhere(space, table):
    params = EvalParams.zeros(space.spec)
    for i in space.cont_indices:
        s = space.state(i)
        a, v = alphabeta(s, FULL, params)
        assert v / params.W == table.value(s)
        assert a in table.optimal_actions(s)


def test_pruning_does_not_change_results(random_states, spec):
    params = default_params(spec)
    for depth in (1, 2, 3):
        cfg = SearchConfig(depth=depth)
        for s in random_states:
            assert alphabeta(s, cfg, params) == minimax(s, cfg, params)


def test_depth_beyond_remaining_plies_is_stable(random_states, spec):
    params = default_params(spec)
    for s in random_states[:100]:
        full = alphabeta(s, SearchConfig(depth=s.empties), params)
        assert alphabeta(s, SearchConfig(depth=s.empties + 3), params) == full


def test_scaling_weights_keeps_the_choice(random_states, spec):
    params = default_params(spec)
    for s in random_states[:200]:
        a, v = alphabeta(s, SearchConfig(depth=2), params)
        a2, v2 = alphabeta(s, SearchConfig(depth=2), params.scaled(3.0))
        assert a == a2 and v2 == pytest.approx(3.0 * v)


def test_player_two_values_are_negated(spec):
    s = decode("110220100", spec)  # P2 to move, wins at 5
    a, v = alphabeta(s, SearchConfig(depth=1), default_params(spec))
    assert a == 5 and v == -1000.0


def test_tablebase_full_game_is_the_oracle(spec, table):
    tb = build_tablebase(spec, spec.cells, table)
    assert tb.values == table.values


def test_tablebase_search_agrees_with_oracle(space, table):
    tb = build_tablebase(space.spec, 4, table)
    cfg = SearchConfig(depth=1, use_tablebase=True)
    for i in space.cont_indices:
        s = space.state(i)
        if s.empties <= 5:
            a, v = alphabeta(s, cfg, EvalParams.zeros(space.spec), tablebase=tb)
            assert v / 1000.0 == table.value(s)


def test_book_recommends_center(spec, table):
    book = build_book(spec, 1, table)
    a = book.lookup(spec.initial())
    assert a in table.optimal_actions(spec.initial())
    assert 4 in table.optimal_actions(spec.initial())


def test_book_moves_are_legal(spec, table):
    book = build_book(spec, 3, table)
    for key in book.moves:
        s = decode(key, spec)
        for t in symmetries(s):
            assert book.lookup(t) in legal_actions(t)


def test_search_rejects_terminal_and_bad_weights(spec):
    with pytest.raises(GameError):
        alphabeta(decode("111220000", spec), SearchConfig(), default_params(spec))
    with pytest.raises(GameError):
        alphabeta(spec.initial(), SearchConfig(), EvalParams(np.zeros(3)))
    with pytest.raises(ValueError):
        EvalParams(np.array([np.nan] * 5))
    with pytest.raises(ValueError):
        SearchConfig(depth=0)


def test_params_csv_roundtrip(tmp_path, spec):
    p = EvalParams(np.array([0.1, -2.0, 3.5, 1e-9, 7.0]), "lines", 500.0)
    p.to_csv(tmp_path / "p.csv", spec)
    q = EvalParams.from_csv(tmp_path / "p.csv")
    assert np.array_equal(p.theta, q.theta) and q.W == 500.0 and q.schema == "lines"


def test_calibrate_zero_budget_returns_start(spec):
    theta0 = EvalParams.zeros(spec)
    res = calibrate(spec, theta0, UniformPolicy(), budget=0, seed=1)
    assert np.array_equal(res.params.theta, theta0.theta)


def test_calibration_is_reproducible(spec):
    theta0 = EvalParams.zeros(spec)
    a = calibrate(spec, theta0, UniformPolicy(), budget=300, seed=5, games_per_eval=50)
    b = calibrate(spec, theta0, UniformPolicy(), budget=300, seed=5, games_per_eval=50)
    assert a.trace == b.trace and np.array_equal(a.params.theta, b.params.theta)
    assert a.games_used <= 300
    with pytest.raises(ValueError):
        calibrate(spec, theta0, UniformPolicy(), budget=300, seed=5, games_per_eval=51)


def test_match_scores_seat_balanced(spec, table):
    agent = SearchAgent(EvalParams.zeros(spec), FULL)
    scores = match_scores(spec, agent, table.policy(), 10, seed=0)
    assert np.all(scores == 0.5)  # both optimal: every game drawn


def test_rectangular_board_search():
    spec = GameSpec(3, 4, 3)
    a, v = alphabeta(spec.initial(), SearchConfig(depth=2), default_params(spec))
    assert 0 <= a < 12 and np.isfinite(v)
    assert not classify(apply(spec.initial(), a)).terminal
