"""Simulated human experts and the datasets every estimator consumes.

An expert backs up the linear evaluation over an L-ply lookahead (the
opponent assumed to share the evaluation) and then chooses by logit with
scale lambda; alternatively it plays the logit equilibrium of the exact game.
"""
from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .game import (
    EMPTY, P1, P2, GameError, GameRecord, GameSpec, Outcome, State, apply, canonical_form, classify,
    decode, encode,
)
from .lookahead import LookaheadTrees, all_state_trees, segment_log_softmax
from .oracle import soft_solve
from .parallel import chunked, pmap
from .search import EvalParams, default_params

MODES = ("depth_L_logit", "soft_equilibrium")
FULL_TABLE_MAX_CELLS = 12


@dataclass
class ExpertModel:
    spec: GameSpec = field(default_factory=GameSpec)
    mode: str = "depth_L_logit"
    params: EvalParams | None = None
    depth: int = 2
    lam: float = 1.0
    per_player_scales: tuple[float, float] | None = None
    lam_drift: tuple[float, float] | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown expert mode {self.mode!r}")
        if self.depth < 1:
            raise ValueError("lookahead depth must be at least one ply")
        if not self.lam > 0:
            raise ValueError("logit scale must be positive")
        if self.params is None:
            self.params = default_params(self.spec)
        self.params.check(self.spec)
        if self.per_player_scales is not None:
            if len(self.per_player_scales) != 2 or min(self.per_player_scales) <= 0:
                raise ValueError("per-player scales must be two positive numbers")
            self.per_player_scales = tuple(float(v) for v in self.per_player_scales)
        if self.mode == "soft_equilibrium" and (self.per_player_scales or self.lam_drift):
            raise ValueError("soft_equilibrium experts take a single logit scale")
        self._q: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}
        self._tables: dict[tuple, dict] = {}

    def scales(self, game_index: int = 0, n_games: int = 1) -> tuple[float, float]:
        """(lambda for player 1, lambda for player 2) in a given game."""
        if self.lam_drift is not None:
            lo, hi = self.lam_drift
            frac = game_index / max(1, n_games - 1)
            lam = lo + (hi - lo) * frac
            return lam, lam
        if self.per_player_scales is not None:
            return self.per_player_scales
        return self.lam, self.lam

    def config(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "mode": self.mode,
            "theta": [float(v) for v in self.params.theta],
            "schema": self.params.schema,
            "W": self.params.W,
            "depth": self.depth,
            "lam": self.lam,
            "per_player_scales": list(self.per_player_scales) if self.per_player_scales else None,
            "lam_drift": list(self.lam_drift) if self.lam_drift else None,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "ExpertModel":
        return cls(
            spec=GameSpec(**cfg["spec"]),
            mode=cfg["mode"],
            params=EvalParams(np.array(cfg["theta"]), cfg.get("schema", "lines"), cfg.get("W", 1000.0)),
            depth=cfg["depth"],
            lam=cfg["lam"],
            per_player_scales=tuple(cfg["per_player_scales"]) if cfg.get("per_player_scales") else None,
            lam_drift=tuple(cfg["lam_drift"]) if cfg.get("lam_drift") else None,
        )

    # ---- backed-up values

    def _trees_for(self, cells: tuple) -> tuple[LookaheadTrees, int]:
        if self.spec.cells <= FULL_TABLE_MAX_CELLS:
            trees = all_state_trees(self.spec, self.depth, self.params.W)
            return trees, trees.index[cells]
        return LookaheadTrees(self.spec, [cells], self.depth, self.params.W), 0

    def backed_up(self, s: State) -> tuple[np.ndarray, np.ndarray]:
        """(legal actions, backed-up values from the mover's perspective)."""
        hit = self._q.get(s.cells)
        if hit is None:
            trees, i = self._trees_for(s.cells)
            if self.spec.cells <= FULL_TABLE_MAX_CELLS and not self._q:
                q, _ = trees.backup(self.params.kernel_theta(self.spec))
                for j, r in enumerate(trees.roots):
                    lo, hi = trees.root_ptr[j], trees.root_ptr[j + 1]
                    self._q[r] = (trees.pair_action[lo:hi], q[lo:hi])
                hit = self._q[s.cells]
            else:
                q, _ = trees.backup(self.params.kernel_theta(self.spec))
                lo, hi = trees.root_ptr[i], trees.root_ptr[i + 1]
                hit = (trees.pair_action[lo:hi], q[lo:hi])
                self._q[s.cells] = hit
        return hit

    def probs(self, s: State, scales: tuple[float, float] | None = None) -> np.ndarray:
        if classify(s).terminal:
            raise GameError("no actions at terminal state")
        if self.mode == "soft_equilibrium":
            table = self._tables.get(("soft", self.lam))
            if table is None:
                table = soft_solve(self.spec, self.lam).choice
                self._tables[("soft", self.lam)] = table
            return table[s.cells]
        lam1, lam2 = scales or self.scales()
        lam = lam1 if s.mover == P1 else lam2
        acts, q = self.backed_up(s)
        logp = segment_log_softmax(lam * q, np.array([0]))
        p = np.zeros(self.spec.cells)
        p[acts] = np.exp(logp)
        return p


def expert_choice_probs(s: State, model: ExpertModel) -> np.ndarray:
    """The expert's choice distribution over cells (zero on occupied cells)."""
    return model.probs(s)


def _sample(p: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(p)
    a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    if a >= len(p) or p[a] == 0:
        a = int(np.flatnonzero(p)[-1])
    return a


def simulate_game(model: ExpertModel, seed: int, game_index: int = 0, n_games: int = 1) -> GameRecord:
    """One expert-vs-expert game; randomness from the stream (seed, game_index)."""
    rng = np.random.default_rng([seed, game_index])
    scales = model.scales(game_index, n_games)
    s = model.spec.initial()
    moves = []
    out = Outcome.CONT
    while not out.terminal:
        a = _sample(model.probs(s, scales), rng)
        s = apply(s, a)
        moves.append(a)
        out = classify(s)
    return GameRecord(model.spec, tuple(moves), out)


def _simulate_chunk(model: ExpertModel, seed: int, n_games: int, games: range) -> list[GameRecord]:
    return [simulate_game(model, seed, g, n_games) for g in games]


# ------------------------------------------------------------------ dataset

@dataclass
class Dataset:
    """Flattened (state, action) observations, optionally symmetry-augmented."""

    spec: GameSpec
    cells: np.ndarray  # (N, m*n) int8, board before the move
    action: np.ndarray
    player: np.ndarray
    game_id: np.ndarray
    turn: np.ndarray
    augmented: bool = False
    records: list[GameRecord] | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.action)

    @property
    def n_games(self) -> int:
        return len(np.unique(self.game_id))

    @classmethod
    def from_records(cls, records: list[GameRecord], augment: bool = False, meta: dict | None = None) -> "Dataset":
        if not records:
            raise ValueError("no game records")
        spec = records[0].spec
        cells, action, player, gid, turn = [], [], [], [], []
        for g, rec in enumerate(records):
            s = spec.initial()
            for t, a in enumerate(rec.moves, start=1):
                cells.append(s.cells)
                action.append(a)
                player.append(s.mover)
                gid.append(g)
                turn.append(t)
                s = apply(s, a)
        ds = cls(
            spec,
            np.array(cells, dtype=np.int8).reshape(-1, spec.cells),
            np.array(action, dtype=np.int64),
            np.array(player, dtype=np.int8),
            np.array(gid, dtype=np.int64),
            np.array(turn, dtype=np.int64),
            False,
            list(records),
            dict(meta or {}),
        )
        return ds.augment() if augment else ds

    def augment(self) -> "Dataset":
        """Expand every observation into its full symmetry orbit (observation-major)."""
        if self.augmented:
            return self
        T = self.spec.transforms
        inv = self.spec.inverse_transforms
        G = len(T)
        cells = self.cells[:, T].reshape(-1, self.spec.cells)  # (N, G, cells) -> (N*G, cells)
        action = inv[:, self.action].T.reshape(-1)
        rep = lambda x: np.repeat(x, G)  # noqa: E731
        return Dataset(self.spec, cells, action, rep(self.player), rep(self.game_id), rep(self.turn),
                       True, self.records, dict(self.meta, augmented=True))

    def subset(self, mask: np.ndarray) -> "Dataset":
        mask = np.asarray(mask)
        recs = None
        if self.records is not None:
            keep = set(np.unique(self.game_id[mask]).tolist())
            recs = [r for g, r in enumerate(self.records) if g in keep]
        return Dataset(self.spec, self.cells[mask], self.action[mask], self.player[mask], self.game_id[mask],
                       self.turn[mask], self.augmented, None if recs is None else recs, dict(self.meta))

    def split_by_game(self, test_frac: float = 0.1, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        games = np.unique(self.game_id)
        rng = np.random.default_rng(seed)
        n_test = int(round(test_frac * len(games)))
        test_games = set(rng.choice(games, size=n_test, replace=False).tolist())
        mask = np.array([g in test_games for g in self.game_id.tolist()])
        return self.subset(~mask), self.subset(mask)

    def states(self) -> list[State]:
        return [State(self.spec, tuple(int(v) for v in row)) for row in self.cells]

    def cell_tuples(self) -> list[tuple]:
        return [tuple(row) for row in self.cells.tolist()]

    def validate(self) -> None:
        for s, a in zip(self.states(), self.action.tolist()):
            if classify(s).terminal or s.cells[a] != EMPTY:
                raise GameError(f"observation ({encode(s)}, {a}) is not a legal move")

    # ---- I/O

    def to_jsonl(self, path) -> None:
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "wt") as fh:
            head = dict(self.meta)
            head.update({"spec": self.spec.to_dict(), "augmented": self.augmented, "n_obs": len(self)})
            fh.write(json.dumps({"header": head}, sort_keys=True) + "\n")
            for c, a, p, g, t in zip(self.cells.tolist(), self.action.tolist(), self.player.tolist(),
                                     self.game_id.tolist(), self.turn.tolist()):
                fh.write(json.dumps({"game_id": g, "turn": t, "state_key": "".join(map(str, c)),
                                     "action": a, "player": p}) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "Dataset":
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "rt") as fh:
            head = json.loads(fh.readline())["header"]
            rows = [json.loads(line) for line in fh if line.strip()]
        spec = GameSpec(**head["spec"])
        cells = np.array([decode(r["state_key"], spec).cells for r in rows], dtype=np.int8).reshape(-1, spec.cells)
        ds = cls(
            spec, cells,
            np.array([r["action"] for r in rows], dtype=np.int64),
            np.array([r["player"] for r in rows], dtype=np.int8),
            np.array([r["game_id"] for r in rows], dtype=np.int64),
            np.array([r["turn"] for r in rows], dtype=np.int64),
            bool(head.get("augmented", False)),
            None,
            {k: v for k, v in head.items() if k not in ("spec", "augmented", "n_obs")},
        )
        if not ds.augmented:
            ds.records = _records_from_obs(ds)
        return ds


def _records_from_obs(ds: Dataset) -> list[GameRecord]:
    out = []
    order = np.lexsort((ds.turn, ds.game_id))
    gids = ds.game_id[order]
    acts = ds.action[order]
    for g in np.unique(gids):
        moves = tuple(int(a) for a in acts[gids == g])
        s = ds.spec.initial()
        for a in moves:
            s = apply(s, a)
        out.append(GameRecord(ds.spec, moves, classify(s)))
    return out


def generate_dataset(model: ExpertModel, n_games: int, augment: bool = False, seed: int = 0,
                     workers: int = 1) -> Dataset:
    """``n_games`` independent expert games; game g uses the stream (seed, g)."""
    if n_games < 1:
        raise ValueError("n_games must be at least 1")
    if workers > 1:
        model.backed_up(model.spec.initial())  # warm the value cache before forking
    chunks = chunked(n_games, max(1, n_games // (8 * max(1, workers))))
    parts = pmap(partial(_simulate_chunk, model, seed, n_games), chunks, workers)
    records = [r for part in parts for r in part]
    meta = {"model": model.config(), "seed": seed, "n_games": n_games}
    return Dataset.from_records(records, augment=augment, meta=meta)


def conditional_entropy(ds: Dataset, player: int) -> float:
    """Plug-in H(action | state) over one player's observations, states pooled by symmetry."""
    counts: dict[str, dict[int, float]] = {}
    spec = ds.spec
    for cells, a, p in zip(ds.cell_tuples(), ds.action.tolist(), ds.player.tolist()):
        if p != player:
            continue
        key, g = canonical_form(spec, cells)
        ca = int(spec.inverse_transforms[g][a])
        row = counts.setdefault(key, {})
        row[ca] = row.get(ca, 0.0) + 1.0
    total = sum(sum(r.values()) for r in counts.values())
    h = 0.0
    for row in counts.values():
        n = np.array(list(row.values()))
        p = n / n.sum()
        h -= (n.sum() / total) * float((p * np.log(p)).sum())
    return h


__all__ = [
    "ExpertModel", "Dataset", "expert_choice_probs", "simulate_game", "generate_dataset", "conditional_entropy",
    "P2",
]
