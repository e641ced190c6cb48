"""Acceptance criteria 1-12 at their stated scales and tolerances.

Each test prints one PASS/FAIL line (visible in ``pytest -v`` output). The
experiments run from the shipped reference configuration with its master
seed; criterion 12 reruns all of them on two workers and compares bytes.
"""
import filecmp
import time

import numpy as np
import pytest

from mnklab import config
from mnklab.game import apply, classify, legal_actions
from mnklab.harness import EXPERIMENTS, ExperimentSpec, run_experiment
from mnklab.mcts import MctsAgent, MctsConfig, mcts_search
from mnklab.nfxp import Likelihood, NfxpConfig
from mnklab.nn import ConvNet
from mnklab.oracle import solve
from mnklab.search import EvalParams, SearchConfig, alphabeta, default_params, minimax
from mnklab.space import state_space

from reference_oracle import make


@pytest.fixture
def verdict(capsys):
    def say(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {n:>2}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return say


class Runs:
    """Reference-config experiment runs, shared by the criteria that need them."""

    def __init__(self, root):
        self.root = root
        self.cfg = config.reference()
        self.seed = self.cfg["seed"]
        self.done = {}

    def get(self, name, workers=1):
        key = (name, workers)
        if key not in self.done:
            out = self.root / f"w{workers}"
            t0 = time.time()
            rep = run_experiment(ExperimentSpec(name, self.cfg, self.seed, out), workers=workers)
            self.done[key] = (rep, time.time() - t0, out)
        return self.done[key]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("acceptance"))


def test_criterion_01_oracle(verdict, spec):
    bfs, naive, *_ = make(3, 3, 3)
    ref_states, ref_root = len(bfs()), naive("0" * 9)
    t0 = time.time()
    table = solve(spec)
    sp = state_space(spec)
    elapsed = time.time() - t0
    agree = all(table.value(sp.state(i)) == naive("".join(map(str, sp.state(i).cells))) for i in range(len(sp)))
    ok = (ref_states == len(sp) == 5478 and ref_root == table.value(spec.initial()) == 0 and agree
          and elapsed < 5)
    verdict(1, ok, f"root value {table.value(spec.initial())}, {len(sp)} states (reference {ref_states}), "
                   f"all values agree={agree}, {elapsed:.2f}s")


def test_criterion_02_alphabeta(verdict, spec, table, space, random_states):
    t0 = time.time()
    zero = EvalParams.zeros(spec)
    full = SearchConfig(depth=9)
    bad = sum(alphabeta(space.state(i), full, zero)[1] / zero.W != table.value(space.state(i))
              for i in space.cont_indices)
    params = default_params(spec)
    diff = sum(alphabeta(s, full, params) != minimax(s, full, params) for s in random_states)
    elapsed = time.time() - t0
    verdict(2, bad == 0 and diff == 0 and elapsed < 30,
            f"{len(space.cont_indices)} states, {bad} value mismatches; pruning on/off differ on {diff}/1000; "
            f"{elapsed:.1f}s")


def test_criterion_03_nfxp_recovery(verdict, runs):
    rep, elapsed, _ = runs.get("nfxp-recovery")
    s = rep.summary
    verdict(3, rep.passed and elapsed < 600,
            f"{s['covered']}/{s['replications']} replications within 3 SE, mean relative error "
            f"{s['mean_rel_error']:.4f}; {elapsed:.0f}s")


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def test_criterion_04_gradients(verdict, spec):
    from mnklab.expert import ExpertModel, generate_dataset

    t0 = time.time()
    rng = np.random.default_rng(4)
    ds = generate_dataset(ExpertModel(spec), 300, seed=4)
    lik = Likelihood(ds, NfxpConfig())
    worst_nfxp = 0.0
    for _ in range(20):
        theta = rng.normal(0, 2, 5)
        g = lik.evaluate(theta)[1]
        h = 1e-5
        fd = np.array([(lik.value(theta + h * e) - lik.value(theta - h * e)) / (2 * h) for e in np.eye(5)])
        worst_nfxp = max(worst_nfxp, _rel(g, fd))

    worst_nn = 0.0
    for kind, n_in in (("policy", 3), ("value", 4)):
        net = ConvNet.build(n_in, channels=(3, 3), kernel=3, first_kernel=5, kind=kind, seed=1)
        x = rng.normal(size=(4, n_in, 3, 3))
        if kind == "policy":
            mask = rng.random((4, 9)) < 0.7
            mask[:, 4] = True
            target = np.full(4, 4)
        else:
            mask, target = None, rng.random(4)
        for _ in range(20):
            net.set_flat(rng.normal(0, 0.5, net.n_params))
            theta = net.get_flat()
            _, grads = net.backward(x, target, mask)
            for li, (dw, db) in enumerate(grads):  # every layer on its own
                off = sum(l.w.size + l.b.size for l in net.layers[:li])
                size = dw.size + db.size
                g = np.concatenate([dw.ravel(), db.ravel()])
                fd = np.zeros(size)
                for j in range(size):
                    for sign in (1, -1):
                        t = theta.copy()
                        t[off + j] += sign * 1e-6
                        net.set_flat(t)
                        fd[j] += sign * net.loss(x, target, mask) / 2e-6
                net.set_flat(theta)
                worst_nn = max(worst_nn, _rel(g, fd))
    elapsed = time.time() - t0
    verdict(4, worst_nfxp < 1e-4 and worst_nn < 1e-4 and elapsed < 60,
            f"worst relative error: likelihood {worst_nfxp:.1e}, network layers {worst_nn:.1e}; {elapsed:.1f}s")


def test_criterion_05_ccp_consistency(verdict, runs):
    rep, elapsed, _ = runs.get("ccp-accuracy")
    s = rep.summary
    ok = rep.checks["root_tv"] and rep.checks["rate"] and elapsed < 300
    verdict(5, ok, f"root TV {s['root_tv']:.4f} at 50,000 games, log-log slope {s['slope']:.3f}; "
                   f"{elapsed:.0f}s (whole ccp-accuracy run)")


def test_criterion_06_cnn_beats_logit(verdict, runs):
    rep, elapsed, _ = runs.get("ccp-accuracy")
    s = rep.summary
    verdict(6, rep.checks["cnn_beats_logit"] and elapsed < 900,
            f"held-out top-1: CNN {s['cnn_top1']:.4f}, logit {s['logit_top1']:.4f}, margin {s['margin']:.4f}; "
            f"{elapsed:.0f}s")


def test_criterion_07_ccs_consistency(verdict, runs):
    rep, elapsed, _ = runs.get("ccs-consistency")
    parts = ", ".join(f"{k}: {v['passed']}/{v['states']}" for k, v in rep.summary.items())
    verdict(7, rep.passed and elapsed < 300, f"states within 3 SE ({parts}); {elapsed:.0f}s")


def test_criterion_08_rl_ladder(verdict, runs):
    rep, elapsed, _ = runs.get("rl-ladder")
    s = rep.summary
    verdict(8, rep.passed and elapsed < 300,
            f"worst-case loss vs oracle ({s['oracle_loss_p1']}, {s['oracle_loss_p2']}), score vs initial "
            f"{s['sim_score_vs_initial']:.3f}, Wilson lower {s['wilson_low']:.3f}; {elapsed:.1f}s")


def test_criterion_09_mcts(verdict, spec, table, space):
    t0 = time.time()
    agent = MctsAgent(MctsConfig(budget=10_000), seed=9)
    losses = games = 0
    for seat in (1, 2):
        stack = [spec.initial()]
        while stack:
            s = stack.pop()
            out = classify(s)
            if out.terminal:
                games += 1
                losses += out.payoff1 == (-1 if seat == 1 else 1)
                continue
            moves = [agent.choose(s)] if s.mover == seat else table.optimal_actions(s)
            stack.extend(apply(s, a) for a in moves)
    wins = hits = 0
    for i in space.cont_indices:
        s = space.state(i)
        winning = [a for a in legal_actions(s) if classify(apply(s, a)).terminal
                   and classify(apply(s, a)).payoff1 != 0]
        if winning:
            wins += 1
            hits += mcts_search(s, MctsConfig(budget=10_000), seed=i).action in winning
    elapsed = time.time() - t0
    verdict(9, losses == 0 and hits == wins and elapsed < 600,
            f"{losses} losses in {games} exhaustive games vs every optimal line; immediate win taken at "
            f"{hits}/{wins} states; {elapsed:.0f}s")


def test_criterion_10_calibration(verdict, runs):
    rep, elapsed, _ = runs.get("calibrate-eval")
    s = rep.summary
    verdict(10, rep.passed and elapsed < 600,
            f"win-score {s['score_calibrated']:.3f} vs {s['score_initial']:.3f} over {s['games']} games, "
            f"one-sided p = {s['p_value']:.2g}; {elapsed:.1f}s")


def test_criterion_11_misspecification(verdict, runs):
    rep, elapsed, _ = runs.get("misspec-bias")
    het, null = rep.summary["heterogeneous"], rep.summary["null"]
    verdict(11, rep.passed and elapsed < 900,
            f"norm ratio {het['norm_ratio']:.2f} (LR p = {het['p_value']:.2g}); null run p = {null['p_value']:.2f} "
            f"({null['verdict']}); {elapsed:.0f}s")


def test_criterion_12_reproducibility(verdict, runs):
    compared = 0
    different = []
    for name in EXPERIMENTS:
        _, _, one = runs.get(name, workers=1)
        _, _, two = runs.get(name, workers=2)
        for path in sorted(one.glob(f"{name}_*.csv")):
            compared += 1
            if not filecmp.cmp(path, two / path.name, shallow=False):
                different.append(path.name)
    rerun = runs.root / "rerun"
    rep = run_experiment(ExperimentSpec("rl-ladder", runs.cfg, runs.seed, rerun))
    same_rerun = all(filecmp.cmp(p, runs.root / "w1" / p.name, shallow=False) for p in rerun.glob("*.csv"))
    verdict(12, compared > 0 and not different and same_rerun,
            f"{compared} report CSVs byte-identical at 1 and 2 workers"
            + (f"; differing: {', '.join(different)}" if different else "") + f"; same-seed rerun identical={same_rerun}")
