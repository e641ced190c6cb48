from collections import defaultdict

import numpy as np
import pytest

from mnklab.ccp import (
    CCPTable, LogitModel, PolicyAgent, accuracy, fit_cnn, fit_logit, fit_tabular, legal_masks, policy_planes,
)
from mnklab.expert import Dataset, ExpertModel, generate_dataset
from mnklab.game import GameError, GameSpec, State, decode
from mnklab.nn import ConvNet, train
from mnklab.policies import UniformPolicy

# dihedral group of the 3x3 board as index maps, written out independently
_ROT = [6, 3, 0, 7, 4, 1, 8, 5, 2]
_FLIP = [2, 1, 0, 5, 4, 3, 8, 7, 6]


def _group():
    ident = list(range(9))
    out, g = [], ident
    for _ in range(4):
        out.append(g)
        out.append([g[i] for i in _FLIP])
        g = [g[i] for i in _ROT]
    return out


GROUP = _group()


def obs_dataset(spec, boards, actions):
    cells = np.array([[int(c) for c in b] for b in boards], dtype=np.int8)
    n = len(boards)
    filled = (cells != 0).sum(axis=1)
    return Dataset(spec, cells, np.asarray(actions, dtype=np.int64), np.where(filled % 2 == 0, 1, 2).astype(np.int8),
                   np.arange(n), filled + 1)


@pytest.fixture(scope="module")
def expert_data(spec):
    return generate_dataset(ExpertModel(spec=spec, lam=2.0), 300, seed=3)


def test_laplace_counts(spec):
    board = "121211200"  # empties 7 and 8, no symmetry
    ds = obs_dataset(spec, [board] * 4, [7, 7, 7, 8])
    table = fit_tabular(ds, alpha=1.0)
    p = table.probs(decode(board, spec))
    assert p[7] == pytest.approx(4 / 6) and p[8] == pytest.approx(2 / 6)
    assert p.sum() == pytest.approx(1) and np.all(p[:7] == 0)
    assert table.visits(decode(board, spec)) == 4


def test_unvisited_state_is_uniform(spec, expert_data):
    table = fit_tabular(expert_data, alpha=0.5)
    unseen = decode("000000012", spec)
    if table.visits(unseen) == 0:
        assert np.allclose(table.probs(unseen)[2:7], 1 / 7)
    empty_table = CCPTable(spec, 0.5)
    p = empty_table.probs(decode("112200000", spec))
    assert np.allclose(p[4:], 1 / 5) and np.all(p[:4] == 0)


def test_negative_alpha_rejected(expert_data):
    with pytest.raises(ValueError):
        fit_tabular(expert_data, alpha=-0.1)


def test_terminal_state_rejected(spec, expert_data):
    table = fit_tabular(expert_data)
    with pytest.raises(GameError):
        table.probs(decode("111220000", spec))
    with pytest.raises(GameError):
        PolicyAgent.table(table).probs(decode("111220000", spec))


def test_distributions_on_legal_simplex(spec, expert_data, random_states):
    table = fit_tabular(expert_data)
    logit = fit_logit(expert_data)
    net = ConvNet.build(3, channels=(4,), seed=0)
    agents = [PolicyAgent.table(table), PolicyAgent.logit(logit), PolicyAgent.cnn(spec, net)]
    cells = np.array([s.cells for s in random_states[:200]], dtype=np.int8)
    legal = legal_masks(cells)
    for agent in agents:
        P = agent.batch_probs(cells)
        assert np.allclose(P.sum(axis=1), 1) and np.all(P[~legal] == 0) and np.all(P >= 0)


def test_augmentation_pools_identically(expert_data):
    plain = fit_tabular(expert_data, alpha=0.5)
    aug = fit_tabular(expert_data.augment(), alpha=0.5 * 8)
    assert plain.counts.keys() == aug.counts.keys()
    for key in plain.counts:
        assert np.allclose(aug.counts[key], 8 * plain.counts[key])
        assert np.allclose(aug.canonical_probs(key), plain.canonical_probs(key))


def test_symmetric_states_get_symmetric_probabilities(spec, expert_data):
    table = fit_tabular(expert_data)
    for s in expert_data.states()[:100]:
        p = table.probs(s)
        for g in GROUP:
            t = State(spec, tuple(s.cells[i] for i in g))
            assert np.allclose(table.probs(t), p[g])


def test_memorization_accuracy_is_modal_frequency(spec, expert_data):
    table = fit_tabular(expert_data, alpha=0.0)
    per_key = defaultdict(lambda: defaultdict(float))
    sizes = {}
    for board, a in zip(expert_data.cells.tolist(), expert_data.action.tolist()):
        images = [("".join(str(board[i]) for i in g), g.index(a)) for g in GROUP]
        key = min(k for k, _ in images)
        cls = frozenset(b for k, b in images if k == key)
        per_key[key][cls] += 1
        sizes[cls] = len(cls)
    expected = sum(max(n / sizes[c] for c, n in row.items()) for row in per_key.values()) / len(expert_data)
    assert accuracy(PolicyAgent.table(table), expert_data, 1) == pytest.approx(expected, abs=1e-12)


def test_uniform_agent_accuracy(expert_data):
    empties = (expert_data.cells == 0).sum(axis=1)
    assert accuracy(UniformPolicy(), expert_data, 1) == pytest.approx(np.mean(1 / empties), abs=1e-12)
    assert accuracy(UniformPolicy(), expert_data, 2) == pytest.approx(np.mean(np.minimum(2 / empties, 1)))


def test_topk_nesting_and_full_k(expert_data):
    agent = PolicyAgent.table(fit_tabular(expert_data))
    accs = [accuracy(agent, expert_data, k) for k in range(1, 10)]
    assert all(b >= a for a, b in zip(accs, accs[1:]))
    assert accs[-1] == pytest.approx(1.0)


def test_accuracy_argument_errors(expert_data):
    agent = PolicyAgent.table(fit_tabular(expert_data))
    with pytest.raises(ValueError):
        accuracy(agent, expert_data, 0)
    with pytest.raises(ValueError):
        accuracy(agent, expert_data.subset(np.zeros(len(expert_data), bool)), 1)


def test_logit_recovers_known_coefficients(spec, expert_data):
    beta = np.array([0.4, 1.5, -0.3, 0.8, 0.6])
    truth = LogitModel(spec, beta)
    if truth.utilities(expert_data.cells[:1])[0].shape[1] != len(beta):
        pytest.skip("feature schema size changed")
    rng = np.random.default_rng(0)
    reps = np.tile(expert_data.cells, (20, 1))
    P = truth.batch_probs(reps)
    actions = np.array([rng.choice(9, p=p) for p in P])
    ds = obs_dataset(spec, ["".join(map(str, c)) for c in reps], actions)
    fit = fit_logit(ds)
    assert np.allclose(fit.beta, beta, atol=0.25)


def test_cnn_loss_is_negative_mean_loglik(spec, expert_data):
    x = policy_planes(spec, expert_data.cells)
    mask = legal_masks(expert_data.cells)
    diffs = []
    for seed in range(3):
        net = ConvNet.build(3, channels=(8,), seed=seed)
        agent = PolicyAgent.cnn(spec, net)
        ll = np.log(agent.batch_probs(expert_data.cells)[np.arange(len(expert_data)), expert_data.action]).sum()
        diffs.append(net.loss(x, expert_data.action, mask) * len(expert_data) + ll)
    assert np.allclose(diffs, 0.0, atol=1e-8)


def test_cnn_fit_is_seeded_and_logs_accuracy(expert_data):
    train_ds, test_ds = expert_data.split_by_game(0.1, seed=0)
    a = fit_cnn(train_ds, channels=(8,), epochs=2, batch=64, seed=5, held_out=test_ds)
    b = fit_cnn(train_ds, channels=(8,), epochs=2, batch=64, seed=5, held_out=test_ds)
    assert np.array_equal(a.net.get_flat(), b.net.get_flat())
    assert [e["epoch"] for e in a.log] == [1, 2]
    assert all(0 <= e["heldout_top1"] <= 1 and 0 <= e["train_top1"] <= 1 for e in a.log)


def test_split_is_by_game(expert_data):
    tr, te = expert_data.split_by_game(0.1, seed=1)
    assert not set(tr.game_id.tolist()) & set(te.game_id.tolist())
    assert len(tr) + len(te) == len(expert_data)
    assert te.n_games == 30


def test_divergence_names_the_step(spec, expert_data):
    net = ConvNet.build(3, channels=(8,), seed=0)
    x = policy_planes(spec, expert_data.cells)
    with pytest.raises(FloatingPointError, match="step"):
        with np.errstate(all="ignore"):
            train(net, x, expert_data.action, legal_masks(expert_data.cells), epochs=50, lr=1e200, momentum=0.0)


def test_empty_cnn_data_rejected(expert_data):
    with pytest.raises(ValueError):
        fit_cnn(expert_data.subset(np.zeros(len(expert_data), bool)))


def test_table_csv_roundtrip(tmp_path, spec, expert_data):
    table = fit_tabular(expert_data, alpha=0.5)
    table.to_csv(tmp_path / "t.csv")
    back = CCPTable.from_csv(tmp_path / "t.csv", spec, 0.5)
    for s in expert_data.states()[:200]:
        assert np.allclose(back.probs(s), table.probs(s))
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "canonical_key,action,probability,count"


def test_greedy_agent_plays_modal_move(spec, expert_data):
    table = fit_tabular(expert_data)
    agent = PolicyAgent.table(table, greedy=True)
    s = spec.initial()
    assert agent.act(s, np.random.default_rng(0)) == int(np.argmax(table.probs(s)))
