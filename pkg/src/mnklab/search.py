"""Linear evaluation, truncated full-width search, tablebase, opening book
and automated calibration of the evaluation weights.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .game import EMPTY, GameError, GameSpec, State, canonical_form, classify
from .oracle import ValueTable, solve
from .policies import Policy, play_game, score_of

SCHEMAS = ("lines", "net")
TERMINAL_WEIGHT = 1000.0


def feature_names(spec: GameSpec, schema: str = "lines") -> list[str]:
    js = range(1, spec.k)
    if schema == "lines":
        return [f"p1_open{j}" for j in js] + [f"p2_open{j}" for j in js] + ["center"]
    if schema == "net":
        return [f"net_open{j}" for j in js] + ["center"]
    raise GameError(f"unknown feature schema {schema!r}")


def schema_map(spec: GameSpec, schema: str) -> np.ndarray:
    """Matrix A with kernel-layout weights = A @ schema weights."""
    k1 = spec.k - 1
    if schema == "lines":
        return np.eye(2 * k1 + 1)
    if schema == "net":
        A = np.zeros((2 * k1 + 1, k1 + 1))
        A[:k1, :k1] = np.eye(k1)
        A[k1:2 * k1, :k1] = np.eye(k1)
        A[2 * k1, k1] = 1.0
        return A
    raise GameError(f"unknown feature schema {schema!r}")


def features(s: State, schema: str = "lines") -> np.ndarray:
    """Player-1-perspective features.

    ``lines``: open-line counts per player and length, player 2's negated,
    then the center balance. ``net``: per-length differences and center.
    """
    spec = s.spec
    x = np.array(kernels.features(s.cells, spec.lines, spec.k, spec.center_cells))
    if schema == "lines":
        return x
    return x @ schema_map(spec, schema)


def feature_matrix(spec: GameSpec, cells: np.ndarray, schema: str = "lines") -> np.ndarray:
    """Vectorized ``features`` for an (N, m*n) array of boards."""
    cells = np.asarray(cells)
    lines = spec.lines
    c1 = (cells == 1)[:, lines].sum(axis=2)
    c2 = (cells == 2)[:, lines].sum(axis=2)
    k = spec.k
    out = np.zeros((len(cells), 2 * (k - 1) + 1))
    for j in range(1, k):
        out[:, j - 1] = ((c1 == j) & (c2 == 0)).sum(axis=1)
        out[:, k - 1 + j - 1] = -((c2 == j) & (c1 == 0)).sum(axis=1)
    centers = list(spec.center_cells)
    out[:, -1] = (cells[:, centers] == 1).sum(axis=1) - (cells[:, centers] == 2).sum(axis=1)
    if schema == "lines":
        return out
    return out @ schema_map(spec, schema)


@dataclass
class EvalParams:
    theta: np.ndarray
    schema: str = "lines"
    W: float = TERMINAL_WEIGHT

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.schema not in SCHEMAS:
            raise GameError(f"unknown feature schema {self.schema!r}")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("evaluation weights must be finite")
        if not self.W > 0:
            raise ValueError("terminal weight must be positive")

    @classmethod
    def zeros(cls, spec: GameSpec, schema: str = "lines", W: float = TERMINAL_WEIGHT) -> "EvalParams":
        return cls(np.zeros(len(feature_names(spec, schema))), schema, W)

    def check(self, spec: GameSpec) -> None:
        if len(self.theta) != len(feature_names(spec, self.schema)):
            raise GameError(
                f"theta has {len(self.theta)} weights, schema {self.schema!r} needs "
                f"{len(feature_names(spec, self.schema))}"
            )

    def kernel_theta(self, spec: GameSpec) -> np.ndarray:
        self.check(spec)
        return schema_map(spec, self.schema) @ self.theta

    def scaled(self, c: float) -> "EvalParams":
        return replace(self, theta=c * self.theta, W=c * self.W)

    def to_csv(self, path, spec: GameSpec) -> None:
        self.check(spec)
        with open(path, "w", newline="") as fh:
            fh.write(f"#schema={self.schema};W={self.W!r};spec={spec}\n")
            w = csv.writer(fh)
            w.writerow(["feature_name", "weight"])
            for name, v in zip(feature_names(spec, self.schema), self.theta):
                w.writerow([name, repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "EvalParams":
        with open(path, newline="") as fh:
            header = fh.readline().strip()
            if not header.startswith("#"):
                raise ValueError(f"{path}: missing '#schema=...;W=...' header")
            meta = dict(kv.split("=", 1) for kv in header[1:].split(";"))
            rows = list(csv.DictReader(fh))
        theta = [float(r["weight"]) for r in rows]
        return cls(np.array(theta), meta["schema"], float(meta["W"]))


# default hand-set weights: value own open twos, fear the opponent's, take the center
DEFAULT_THETA = {3: [0.5, 2.0, 0.5, 2.0, 1.0]}


def default_params(spec: GameSpec) -> EvalParams:
    theta = DEFAULT_THETA.get(spec.k)
    if theta is None:
        theta = [float(j) for j in range(1, spec.k)] * 2 + [1.0]
    return EvalParams(np.array(theta, dtype=float))


def linear_eval(s: State, params: EvalParams) -> float:
    if classify(s).terminal:
        raise GameError("linear evaluation is defined on non-terminal states")
    th = params.kernel_theta(s.spec)
    x = kernels.features(s.cells, s.spec.lines, s.spec.k, s.spec.center_cells)
    v = 0.0
    for j in range(len(x)):
        v += th[j] * x[j]
    return v


# ------------------------------------------------------------------ search

@dataclass
class SearchConfig:
    depth: int = 2
    use_tablebase: bool = False
    use_book: bool = False
    tablebase_empties: int = 3
    book_plies: int = 1

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("search depth must be at least one ply")


@dataclass
class Tablebase:
    spec: GameSpec
    max_empties: int
    values: dict[str, int]

    def lookup(self, cells) -> int:
        return self.values[canonical_form(self.spec, cells)[0]]

    def __contains__(self, s: State) -> bool:
        return s.empties <= self.max_empties

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["canonical_key", "value"])
            for key in sorted(self.values):
                w.writerow([key, self.values[key]])


@dataclass
class OpeningBook:
    spec: GameSpec
    plies: int
    moves: dict[str, int]

    def lookup(self, s: State) -> int | None:
        key, g = canonical_form(self.spec, s.cells)
        c = self.moves.get(key)
        if c is None:
            return None
        return int(self.spec.transforms[g][c])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["canonical_key", "action"])
            for key in sorted(self.moves):
                w.writerow([key, self.moves[key]])


def build_tablebase(spec: GameSpec, max_empties: int, table: ValueTable | None = None) -> Tablebase:
    table = table or solve(spec)
    vals = {k: v for k, v in table.values.items() if k.count("0") <= max_empties}
    return Tablebase(spec, max_empties, vals)


def build_book(spec: GameSpec, plies: int, table: ValueTable | None = None) -> OpeningBook:
    """Optimal replies for canonical positions with fewer than ``plies`` stones."""
    table = table or solve(spec)
    moves = {}
    for key, opt in table.optimal.items():
        if spec.cells - key.count("0") < plies:
            moves[key] = opt[0]
    return OpeningBook(spec, plies, moves)


def alphabeta(s: State, cfg: SearchConfig, params: EvalParams, prune: bool = True,
              tablebase: Tablebase | None = None) -> tuple[int, float]:
    """Best action and backed-up value (player-1 perspective).

    Leaves are +-W at wins and losses, 0 at draws, tablebase values scaled by
    W where enabled and available, else the linear evaluation.
    """
    if classify(s).terminal:
        raise GameError("search needs a non-terminal state")
    spec = s.spec
    th = params.kernel_theta(spec)
    table = None
    if cfg.use_tablebase and tablebase is not None:
        table = tablebase.lookup
    return kernels.negamax(
        s.cells, cfg.depth, th, params.W, spec.lines, spec.through, spec.k, spec.center_cells,
        prune=prune, table=table, table_empties=tablebase.max_empties if table else -1,
    )


def minimax(s: State, cfg: SearchConfig, params: EvalParams) -> tuple[int, float]:
    return alphabeta(s, cfg, params, prune=False)


class SearchAgent(Policy):
    """Deterministic player: book move if available, else alpha-beta."""

    def __init__(self, params: EvalParams, cfg: SearchConfig | None = None,
                 tablebase: Tablebase | None = None, book: OpeningBook | None = None, name: str = "search"):
        self.params = params
        self.cfg = cfg or SearchConfig()
        self.tablebase = tablebase
        self.book = book
        self.name = name
        self._cache: dict[tuple, int] = {}

    def choose(self, s: State) -> int:
        a = self._cache.get(s.cells)
        if a is None:
            if self.cfg.use_book and self.book is not None:
                a = self.book.lookup(s)
            if a is None:
                a = alphabeta(s, self.cfg, self.params, tablebase=self.tablebase)[0]
            self._cache[s.cells] = a
        return a

    def probs(self, s: State) -> np.ndarray:
        p = np.zeros(len(s.cells))
        p[self.choose(s)] = 1.0
        return p

    def act(self, s: State, rng) -> int:
        return self.choose(s)


# ------------------------------------------------------------- calibration

def match_scores(spec: GameSpec, agent: Policy, opponent: Policy, n_games: int, seed: int) -> np.ndarray:
    """Per-game win-scores of ``agent``; even games it moves first.

    Game ``g`` draws its randomness from the stream (seed, g).
    """
    out = np.empty(n_games)
    for g in range(n_games):
        rng = np.random.default_rng([seed, g])
        if g % 2 == 0:
            rec = play_game(spec, agent, opponent, rng)
            out[g] = score_of(rec.outcome, 1)
        else:
            rec = play_game(spec, opponent, agent, rng)
            out[g] = score_of(rec.outcome, 2)
    return out


@dataclass
class CalibrationResult:
    params: EvalParams
    win_score: float
    baseline_score: float
    games_used: int
    trace: list[dict] = field(default_factory=list)


def calibrate(spec: GameSpec, theta0: EvalParams, opponent: Policy, budget: int, seed: int,
              cfg: SearchConfig | None = None, games_per_eval: int = 100, step: float = 1.0) -> CalibrationResult:
    """Seeded coordinate hill climbing of the evaluation weights on win-score.

    Every candidate plays the same ``games_per_eval`` seeded games against
    ``opponent``; a candidate replaces the incumbent only if its score is
    strictly higher. The step halves after a full pass without improvement.
    """
    cfg = cfg or SearchConfig(depth=1)
    theta0.check(spec)
    if games_per_eval % 2:
        raise ValueError("games_per_eval must be even for seat balance")
    rng = np.random.default_rng(seed)
    eval_seed = int(rng.integers(2**32))
    if budget < games_per_eval:
        return CalibrationResult(theta0, float("nan"), float("nan"), 0, [])

    def evaluate(params: EvalParams) -> float:
        return float(match_scores(spec, SearchAgent(params, cfg), opponent, games_per_eval, eval_seed).mean())

    best = theta0
    best_score = base = evaluate(theta0)
    used = games_per_eval
    trace = [{"round": 0, "coordinate": -1, "delta": 0.0, "score": best_score, "accepted": True}]
    K = len(theta0.theta)
    rnd = 0
    while used + games_per_eval <= budget:
        improved = False
        for j in rng.permutation(K):
            if used + games_per_eval > budget:
                break
            rnd += 1
            delta = step if rng.random() < 0.5 else -step
            theta = best.theta.copy()
            theta[j] += delta
            cand = replace(best, theta=theta)
            score = evaluate(cand)
            used += games_per_eval
            accepted = score > best_score
            trace.append({"round": rnd, "coordinate": int(j), "delta": delta, "score": score, "accepted": accepted})
            if accepted:
                best, best_score, improved = cand, score, True
        if not improved:
            step *= 0.5
    return CalibrationResult(best, best_score, base, used, trace)
