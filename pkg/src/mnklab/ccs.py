"""Second stage: value estimates from forward simulation under a fixed policy.

Self-play games are simulated with the same policy in both seats. Each game
contributes one state, drawn uniformly from the positions where a move was
made, labelled with the game's final outcome. Win/loss/draw frequencies are
then fitted per state (pooled over symmetries) or by a small value network.

A game of T moves offers each of its positions with probability 1/T, and
length is correlated with the outcome (wins end early, draws fill the
board). Each sample therefore carries its game length, and the estimators
weight by it, which undoes the selection.
"""
from __future__ import annotations

import csv
import gzip
import json
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .ccp import policy_planes
from .game import EMPTY, P1, GameSpec, Outcome, State, canonical_form, decode, encode
from .nn import ConvNet, train
from .parallel import chunked, pmap
from .policies import Policy, play_game

OUTCOMES = ("win", "loss", "draw")


@dataclass(frozen=True)
class CcsSample:
    game_id: int
    cells: tuple[int, ...]
    mover: int
    outcome: str  # player-1 perspective
    length: int = 1  # moves in the source game

    @property
    def key(self) -> str:
        return "".join(map(str, self.cells))


def _selfplay_chunk(spec: GameSpec, policy: Policy, seed: int, per_move: bool, games: range) -> list[CcsSample]:
    out = []
    for g in games:
        rng = np.random.default_rng([seed, g])
        rec = play_game(spec, policy, policy, rng)
        states = rec.states()[:-1]
        picks = range(len(states)) if per_move else [int(rng.integers(len(states)))]
        for t in picks:
            s = states[t]
            out.append(CcsSample(g, s.cells, s.mover, rec.outcome.value, 1 if per_move else len(states)))
    return out


def selfplay_sample(spec: GameSpec, policy: Policy, n_games: int, seed: int = 0, per_move: bool = False,
                    workers: int = 1) -> list[CcsSample]:
    """One uniformly drawn position per self-play game (every position with ``per_move``)."""
    if n_games < 1:
        raise ValueError("n_games must be at least 1")
    chunks = chunked(n_games, max(1, n_games // (8 * max(1, workers))))
    parts = pmap(partial(_selfplay_chunk, spec, policy, seed, per_move), chunks, workers)
    return [smp for part in parts for smp in part]


def write_samples(samples: list[CcsSample], path) -> None:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wt") as fh:
        for smp in samples:
            fh.write(json.dumps({"game_id": smp.game_id, "state_key": smp.key, "mover": smp.mover,
                                 "outcome": smp.outcome, "length": smp.length}) + "\n")


def read_samples(path, spec: GameSpec) -> list[CcsSample]:
    opener = gzip.open if str(path).endswith(".gz") else open
    out = []
    with opener(path, "rt") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                if d["outcome"] not in OUTCOMES:
                    raise ValueError(f"bad outcome {d['outcome']!r}")
                out.append(CcsSample(d["game_id"], decode(d["state_key"], spec).cells, d["mover"], d["outcome"],
                                     d.get("length", 1)))
    return out


# ---------------------------------------------------------------- tabular

@dataclass
class TabularValue:
    """Weighted outcome totals and raw sample counts per canonical state.

    Records the policy pair the samples were simulated under.
    """

    spec: GameSpec
    counts: dict[str, np.ndarray]  # key -> weighted (win, loss, draw)
    n: dict[str, int] = field(default_factory=dict)  # key -> number of samples
    policies: tuple[str, str] = ("?", "?")

    def count(self, s: State | tuple) -> int:
        cells = s.cells if isinstance(s, State) else s
        return self.n.get(canonical_form(self.spec, cells)[0], 0)

    def probs(self, s: State | tuple) -> np.ndarray | None:
        """(p_win, p_loss, p_draw) or None for an unseen state."""
        cells = s.cells if isinstance(s, State) else s
        row = self.counts.get(canonical_form(self.spec, cells)[0])
        return None if row is None else row / row.sum()

    def value(self, s: State) -> float:
        """p_win - p_loss (player 1), 0 for unseen states."""
        p = self.probs(s)
        return 0.0 if p is None else float(p[0] - p[1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["canonical_key", "p_win", "p_loss", "p_draw", "count"])
            for key in sorted(self.counts):
                row = self.counts[key]
                p = row / row.sum()
                w.writerow([key, repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), self.n[key]])

    @classmethod
    def from_csv(cls, path, spec: GameSpec) -> "TabularValue":
        counts, n = {}, {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                counts[row["canonical_key"]] = np.array([float(row["p_win"]), float(row["p_loss"]),
                                                         float(row["p_draw"])])
                n[row["canonical_key"]] = int(row["count"])
        return cls(spec, counts, n)


def fit_value_tabular(samples: list[CcsSample], spec: GameSpec, policies: tuple[str, str] = ("?", "?"),
                      weighted: bool = True) -> TabularValue:
    """Outcome frequencies per canonical state, length-weighted unless ``weighted`` is off."""
    if not samples:
        raise ValueError("no samples")
    counts: dict[str, np.ndarray] = {}
    n: dict[str, int] = {}
    for smp in samples:
        key = canonical_form(spec, smp.cells)[0]
        row = counts.get(key)
        if row is None:
            row = counts[key] = np.zeros(3)
            n[key] = 0
        row[OUTCOMES.index(smp.outcome)] += smp.length if weighted else 1
        n[key] += 1
    return TabularValue(spec, counts, n, policies)


# -------------------------------------------------------------------- CNN

def value_planes(spec: GameSpec, cells: np.ndarray) -> np.ndarray:
    """Policy planes plus a mover-identity plane (1 when player 1 is to move)."""
    cells = np.asarray(cells, dtype=np.int8).reshape(-1, spec.cells)
    x = policy_planes(spec, cells)
    p1_moves = ((cells != EMPTY).sum(axis=1) % 2 == 0).astype(float)
    mover = np.broadcast_to(p1_moves[:, None, None, None], (len(cells), 1, spec.m, spec.n))
    return np.concatenate([x, mover], axis=1)


@dataclass
class CnnValue:
    spec: GameSpec
    net: ConvNet
    log: list[dict] = field(default_factory=list)
    calibration: list[dict] = field(default_factory=list)
    policies: tuple[str, str] = ("?", "?")

    def win_prob(self, cells: np.ndarray) -> np.ndarray:
        return self.net.predict(value_planes(self.spec, cells))

    def value(self, s: State) -> float:
        return float(2.0 * self.win_prob(np.array([s.cells]))[0] - 1.0)


def calibration_table(pred: np.ndarray, y: np.ndarray, weight: np.ndarray | None = None,
                      bins: int = 10) -> list[dict]:
    """Mean prediction versus (weighted) empirical rate per prediction decile."""
    w = np.ones(len(pred)) if weight is None else np.asarray(weight, dtype=float)
    order = np.argsort(pred, kind="stable")
    out = []
    for i, idx in enumerate(np.array_split(order, bins)):
        if len(idx):
            out.append({"decile": i + 1, "n": int(len(idx)), "mean_pred": float(pred[idx].mean()),
                        "empirical": float(np.average(y[idx], weights=w[idx]))})
    return out


def fit_value_cnn(samples: list[CcsSample], spec: GameSpec, channels=(16, 16, 16), kernel: int = 3,
                  epochs: int = 10, lr: float = 0.05, momentum: float = 0.9, batch: int = 256, seed: int = 0,
                  held_out_frac: float = 0.1, policies: tuple[str, str] = ("?", "?")) -> CnnValue:
    """Value network trained by length-weighted log loss on the player-1 win indicator."""
    if not samples:
        raise ValueError("no samples")
    cells = np.array([smp.cells for smp in samples], dtype=np.int8)
    y = np.array([smp.outcome == "win" for smp in samples], dtype=float)
    games = np.array([smp.game_id for smp in samples])
    rng = np.random.default_rng(seed)
    uniq = np.unique(games)
    test_games = rng.choice(uniq, size=int(round(held_out_frac * len(uniq))), replace=False)
    test = np.isin(games, test_games)
    net = ConvNet.build(4, channels, kernel, kind="value", seed=seed)
    x = value_planes(spec, cells)
    w = np.array([smp.length for smp in samples], dtype=float)
    log = train(net, x[~test], y[~test], epochs=epochs, lr=lr, momentum=momentum, batch=batch, seed=seed,
                weight=w[~test])
    calib = []
    if test.any():
        calib = calibration_table(net.predict(x[test]), y[test], w[test])
    return CnnValue(spec, net, log.epochs, calib, policies)


def outcome_of(rec_outcome: Outcome) -> str:
    return rec_outcome.value


def state_key(s: State) -> str:
    return encode(s)


__all__ = [
    "CcsSample", "CnnValue", "TabularValue", "calibration_table", "fit_value_cnn", "fit_value_tabular",
    "read_samples", "selfplay_sample", "value_planes", "write_samples", "P1",
]
