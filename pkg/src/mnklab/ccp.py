"""First-stage estimation of the experts' conditional choice probabilities.

Three estimators share one agent interface: a symmetry-pooled frequency
table, the mini convolutional policy network, and a plain conditional logit
on the evaluation features of the position after each candidate move.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

from .expert import Dataset
from .game import EMPTY, P1, GameError, GameSpec, State, canonical_transforms, classify, decode
from .lookahead import segment_log_softmax
from .nn import ConvNet, softmax_masked, train
from .policies import Policy, sample
from .search import feature_matrix


# ------------------------------------------------------------ board planes

def policy_planes(spec: GameSpec, cells: np.ndarray) -> np.ndarray:
    """(N, 3, m, n) planes from the mover's point of view: own, opponent, empty."""
    cells = np.asarray(cells, dtype=np.int8).reshape(-1, spec.cells)
    filled = (cells != EMPTY).sum(axis=1)
    mover = np.where(filled % 2 == 0, 1, 2)[:, None]
    own = cells == mover
    opp = (cells != EMPTY) & ~own
    x = np.stack([own, opp, cells == EMPTY], axis=1).astype(float)
    return x.reshape(-1, 3, spec.m, spec.n)


def legal_masks(cells: np.ndarray) -> np.ndarray:
    return np.asarray(cells).reshape(len(cells), -1) == EMPTY


# ----------------------------------------------------------------- tabular

@lru_cache(maxsize=1 << 18)
def _canonical(spec: GameSpec, cells: tuple) -> tuple[str, tuple[int, ...]]:
    key, gs = canonical_transforms(spec, cells)
    return key, tuple(gs)


class _Canon:
    def __init__(self, spec: GameSpec):
        self.spec = spec

    def __call__(self, cells: tuple) -> tuple[str, tuple[int, ...]]:
        return _canonical(self.spec, cells)


@dataclass
class CCPTable:
    """Smoothed action frequencies per canonical state.

    An observation at a state fixed by several symmetries is spread evenly
    over the canonical actions those symmetries assign it, so the table is
    the same whether or not the data were augmented beforehand.
    """

    spec: GameSpec
    alpha: float
    counts: dict[str, np.ndarray] = field(default_factory=dict)  # canonical orientation

    def __post_init__(self):
        self._canon = _Canon(self.spec)

    def visits(self, s: State) -> float:
        row = self.counts.get(self._canon(s.cells)[0])
        return 0.0 if row is None else float(row.sum())

    def canonical_probs(self, key: str) -> np.ndarray:
        legal = np.array([c == "0" for c in key])
        row = self.counts.get(key)
        n = np.zeros(self.spec.cells) if row is None else row
        if row is None or (self.alpha == 0 and row.sum() == 0):
            return legal / legal.sum()
        num = np.where(legal, n + self.alpha, 0.0)
        return num / num.sum()

    def probs(self, s: State) -> np.ndarray:
        if classify(s).terminal:
            raise GameError("no actions at terminal state")
        key, gs = self._canon(s.cells)
        pc = self.canonical_probs(key)
        return pc[self.spec.inverse_transforms[gs[0]]]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["canonical_key", "action", "probability", "count"])
            for key in sorted(self.counts):
                p = self.canonical_probs(key)
                for a in np.flatnonzero([c == "0" for c in key]):
                    w.writerow([key, int(a), repr(float(p[a])), repr(float(self.counts[key][a]))])

    @classmethod
    def from_csv(cls, path, spec: GameSpec, alpha: float) -> "CCPTable":
        counts: dict[str, np.ndarray] = {}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                arr = counts.setdefault(row["canonical_key"], np.zeros(spec.cells))
                arr[int(row["action"])] = float(row["count"])
        return cls(spec, alpha, counts)


def fit_tabular(ds: Dataset, alpha: float = 0.5) -> CCPTable:
    if alpha < 0:
        raise ValueError("smoothing alpha must be non-negative")
    table = CCPTable(ds.spec, float(alpha))
    inv = ds.spec.inverse_transforms
    for cells, a in zip(ds.cell_tuples(), ds.action.tolist()):
        key, gs = table._canon(cells)
        row = table.counts.get(key)
        if row is None:
            row = table.counts[key] = np.zeros(ds.spec.cells)
        share = 1.0 / len(gs)
        for g in gs:
            row[inv[g][a]] += share
    return table


# ------------------------------------------------------------- plain logit

@dataclass
class LogitModel:
    """P(a | s) proportional to exp(sign * beta . x(apply(s, a))), sign = +1 for player 1."""

    spec: GameSpec
    beta: np.ndarray
    schema: str = "lines"

    def utilities(self, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(pair utilities, pair observation index, pair action) for every legal move."""
        cells = np.asarray(cells, dtype=np.int8).reshape(-1, self.spec.cells)
        obs, act = np.nonzero(cells == EMPTY)
        filled = (cells != EMPTY).sum(axis=1)
        mover = np.where(filled % 2 == 0, 1, 2)
        after = cells[obs].copy()
        after[np.arange(len(obs)), act] = mover[obs]
        X = feature_matrix(self.spec, after, self.schema)
        sign = np.where(mover[obs] == P1, 1.0, -1.0)
        return sign[:, None] * X, obs, act

    def batch_probs(self, cells: np.ndarray) -> np.ndarray:
        X, obs, act = self.utilities(cells)
        starts = np.flatnonzero(np.r_[True, obs[1:] != obs[:-1]])
        p = np.exp(segment_log_softmax(X @ self.beta, starts))
        out = np.zeros((len(np.asarray(cells).reshape(-1, self.spec.cells)), self.spec.cells))
        out[obs, act] = p
        return out


def fit_logit(ds: Dataset, schema: str = "lines") -> LogitModel:
    """Maximum-likelihood conditional logit (BFGS on the concave log-likelihood)."""
    model = LogitModel(ds.spec, np.zeros(0), schema)
    X, obs, act = model.utilities(ds.cells)
    starts = np.flatnonzero(np.r_[True, obs[1:] != obs[:-1]])
    chosen = np.flatnonzero(act == ds.action[obs])
    K = X.shape[1]

    def negll(beta):
        logp = segment_log_softmax(X @ beta, starts)
        p = np.exp(logp)
        mean = np.add.reduceat(p[:, None] * X, starts)
        return -logp[chosen].sum() / len(ds), -(X[chosen].sum(axis=0) - mean.sum(axis=0)) / len(ds)

    res = optimize.minimize(negll, np.zeros(K), jac=True, method="BFGS", options={"gtol": 1e-8})
    model.beta = res.x
    return model


# -------------------------------------------------------------------- CNN

@dataclass
class CnnFit:
    net: ConvNet
    log: list[dict]


def fit_cnn(ds: Dataset, channels=(16, 16, 16), kernel: int = 3, first_kernel: int | None = None,
            epochs: int = 10, lr: float = 0.05, momentum: float = 0.9, batch: int = 256, lr_decay: float = 0.8,
            seed: int = 0, held_out: Dataset | None = None, ridge: float = 0.0) -> CnnFit:
    """Maximum-likelihood policy network by minibatch SGD on the cross-entropy."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    spec = ds.spec
    net = ConvNet.build(3, channels, kernel, first_kernel, kind="policy", seed=seed)
    x = policy_planes(spec, ds.cells)
    mask = legal_masks(ds.cells)

    def report(n):
        agent = PolicyAgent.cnn(spec, n)
        out = {"train_top1": accuracy(agent, ds, 1)}
        if held_out is not None:
            out["heldout_top1"] = accuracy(agent, held_out, 1)
        return out

    log = train(net, x, ds.action, mask, epochs=epochs, lr=lr, momentum=momentum, batch=batch, seed=seed,
                lr_decay=lr_decay, ridge=ridge, callback=report)
    net.meta["training"] = {"epochs": epochs, "lr": lr, "momentum": momentum, "batch": batch,
                            "lr_decay": lr_decay, "seed": seed, "n_obs": len(ds)}
    return CnnFit(net, log.epochs)


# ------------------------------------------------------------------ agents

class PolicyAgent(Policy):
    """A fitted choice model used as a player; greedy plays the modal move."""

    def __init__(self, spec: GameSpec, kind: str, model, greedy: bool = False, name: str | None = None):
        if kind not in ("table", "cnn", "logit", "policy"):
            raise ValueError(f"unknown policy agent kind {kind!r}")
        self.spec = spec
        self.kind = kind
        self.model = model
        self.greedy = greedy
        self.name = name or kind

    @classmethod
    def table(cls, table: CCPTable, **kw) -> "PolicyAgent":
        return cls(table.spec, "table", table, **kw)

    @classmethod
    def cnn(cls, spec: GameSpec, net: ConvNet, **kw) -> "PolicyAgent":
        return cls(spec, "cnn", net, **kw)

    @classmethod
    def logit(cls, model: LogitModel, **kw) -> "PolicyAgent":
        return cls(model.spec, "logit", model, **kw)

    def batch_probs(self, cells: np.ndarray) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int8).reshape(-1, self.spec.cells)
        if self.kind == "cnn":
            return self.model.predict(policy_planes(self.spec, cells), legal_masks(cells))
        if self.kind == "logit":
            return self.model.batch_probs(cells)
        return np.array([self.model.probs(State(self.spec, tuple(int(v) for v in c))) for c in cells])

    def probs(self, s: State) -> np.ndarray:
        if classify(s).terminal:
            raise GameError("no actions at terminal state")
        return self.batch_probs(np.array([s.cells]))[0]

    def act(self, s: State, rng: np.random.Generator) -> int:
        p = self.probs(s)
        return int(np.argmax(p)) if self.greedy else sample(p, rng)


def predict(agent: Policy, s: State) -> np.ndarray:
    return agent.probs(s)


def accuracy(agent: Policy, ds: Dataset, topk: int = 1) -> float:
    """Share of observations whose action is among the agent's ``topk`` most probable.

    Probability ties at the cut-off are shared, which is the expected
    accuracy under random tie-breaking.
    """
    if len(ds) == 0:
        raise ValueError("empty dataset")
    if topk < 1:
        raise ValueError("topk must be at least 1")
    if isinstance(agent, PolicyAgent):
        P = agent.batch_probs(ds.cells)
    else:
        P = np.array([agent.probs(s) for s in ds.states()])
    legal = legal_masks(ds.cells)
    pa = P[np.arange(len(ds)), ds.action][:, None]
    higher = ((P > pa) & legal).sum(axis=1)
    equal = ((P == pa) & legal).sum(axis=1)
    credit = np.clip((topk - higher) / equal, 0.0, 1.0)
    return float(credit.mean())


def load_table_policy(path, spec: GameSpec, alpha: float = 0.5) -> PolicyAgent:
    return PolicyAgent.table(CCPTable.from_csv(path, spec, alpha))


def decode_state(key: str, spec: GameSpec) -> State:
    return decode(key, spec)


__all__ = [
    "CCPTable", "CnnFit", "LogitModel", "PolicyAgent", "accuracy", "fit_cnn", "fit_logit", "fit_tabular",
    "legal_masks", "policy_planes", "predict", "softmax_masked",
]
