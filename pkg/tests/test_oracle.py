import math

import numpy as np
import pytest

from mnklab import kernels
from mnklab.game import GameError, GameSpec, apply, classify, decode, legal_actions, symmetries
from mnklab.oracle import ValueTable, policy_value, soft_choice, soft_solve, solve
from mnklab.policies import FunctionPolicy, UniformPolicy

from reference_oracle import make


def test_root_value_and_counts_match_reference(spec, table, space):
    bfs, minimax, *_ = make(3, 3, 3)
    assert minimax("0" * 9) == 0
    assert table.value(spec.initial()) == 0
    assert len(bfs()) == len(space) == 5478


def test_every_value_matches_naive_minimax(table, space):
    _, minimax, *_ = make(3, 3, 3)
    for i in range(len(space)):
        s = space.state(i)
        assert table.value(s) == minimax("".join(map(str, s.cells)))


def test_minimax_consistency_and_symmetry(table, space):
    for i in space.cont_indices:
        s = space.state(i)
        kids = [table.value(apply(s, a)) for a in legal_actions(s)]
        assert table.value(s) == (max(kids) if s.mover == 1 else min(kids))
        for t in symmetries(s):
            assert table.value(t) == table.value(s)


def test_immediate_win_valued_for_mover(spec, table):
    s = decode("110220000", spec)  # P1 to move, 2 completes the row
    assert table.value(s) == 1
    assert 2 in table.optimal_actions(s)
    s2 = decode("110220100", spec)  # P2 to move, 5 completes the row
    assert table.value(s2) == -1


def test_rectangular_board_matches_reference():
    _, minimax, *_ = make(3, 4, 3)
    t = solve(GameSpec(3, 4, 3))
    assert t.value(GameSpec(3, 4, 3).initial()) == minimax("0" * 12)


def test_csv_roundtrip(tmp_path, spec, table):
    table.to_csv(tmp_path / "v.csv")
    back = ValueTable.from_csv(tmp_path / "v.csv", spec)
    assert back.values == table.values and back.optimal == table.optimal


def test_optimal_vs_optimal_draws(spec, table):
    res = policy_value(spec, table.policy(), table.policy())
    assert res.root == (0.0, 0.0, 1.0)
    res_u = policy_value(spec, table.policy("uniform"), table.policy("uniform"))
    assert res_u.root == pytest.approx((0.0, 0.0, 1.0))


def test_policy_value_immediate_win(spec):
    s = decode("110220000", spec)
    wins_now = FunctionPolicy(lambda st: np.eye(9)[2] if st.cells == s.cells else UniformPolicy().probs(st))
    res = policy_value(spec, wins_now, UniformPolicy())
    assert res.at(s) == (1.0, 0.0, 0.0)


def test_uniform_vs_uniform_matches_playouts(spec):
    res = policy_value(spec, UniformPolicy(), UniformPolicy())
    n = 1_000_000
    w, l, d = kernels.playouts(spec.initial().cells, spec.lines, spec.through, n, 99)
    assert w + l + d == n
    for p, count in zip(res.root, (w, l, d)):
        se = math.sqrt(p * (1 - p) / n)
        assert abs(count / n - p) < 3 * se
    assert sum(res.root) == pytest.approx(1.0)


def test_policy_value_rejects_illegal_mass(spec):
    bad = FunctionPolicy(lambda st: np.full(9, 1 / 9))
    with pytest.raises(GameError):
        policy_value(spec, bad, UniformPolicy())


def test_soft_small_lambda_is_uniform(spec, space):
    soft = soft_solve(spec, 1e-9)
    for i in space.cont_indices[:300]:
        s = space.state(i)
        p = soft.probs(s)
        acts = legal_actions(s)
        assert np.allclose(p[acts], 1 / len(acts), atol=1e-8)


def test_soft_single_action_is_certain(spec):
    s = decode("121211220", spec)
    for lam in (0.1, 1.0, 50.0):
        assert soft_solve(spec, lam).probs(s)[8] == 1.0


def test_soft_lambda_ten_follows_unique_optimum(spec, table, space):
    soft = soft_solve(spec, 10.0)
    checked = 0
    for i in space.cont_indices:
        s = space.state(i)
        opt = table.optimal_actions(s)
        if len(opt) == 1:
            assert soft.probs(s)[opt[0]] > 0.99
            checked += 1
    assert checked > 100


def test_soft_argmax_shift_invariant():
    rng = np.random.default_rng(0)
    for _ in range(100):
        v = rng.normal(size=5)
        for mover in (1, 2):
            assert np.argmax(soft_choice(v, mover, 3.0)) == np.argmax(soft_choice(v + 7.5, mover, 3.0))


def test_soft_variants_and_validation(spec):
    a = soft_solve(spec, 2.0)
    b = soft_solve(spec, 2.0, variant="logsumexp")
    assert a.values[0] != b.values[0]
    with pytest.raises(ValueError):
        soft_solve(spec, 0.0)
    with pytest.raises(ValueError):
        soft_solve(spec, 1.0, variant="other")
    with pytest.raises(GameError):
        a.probs(decode("111220000", spec))
