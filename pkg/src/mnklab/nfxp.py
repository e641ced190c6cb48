"""Nested fixed-point maximum likelihood for the evaluation weights.

Every likelihood evaluation re-solves the truncated game tree below each
observed state, then scores the observed moves with the logit over the
backed-up values (scale fixed at one). The backup is piecewise linear in
the weights, so the score and Hessian come out in closed form: each action
value's derivative is the feature vector of the leaf it was backed up from.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .expert import FULL_TABLE_MAX_CELLS, Dataset, ExpertModel
from .game import GameError, GameSpec, State
from .lookahead import LookaheadTrees, all_state_trees, segment_log_softmax
from .search import TERMINAL_WEIGHT, EvalParams, feature_names, schema_map


@dataclass
class NfxpConfig:
    depth: int = 2
    W: float = TERMINAL_WEIGHT
    schema: str = "lines"
    max_iter: int = 100
    tol: float = 1e-6
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_halvings: int = 50
    ridge: float = 0.0
    starts: int = 1  # extra random starts beyond the first, drawn N(0, start_scale^2)
    start_scale: float = 5.0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("lookahead depth must be at least one ply")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo < 1:
            raise ValueError("line-search parameters must lie in (0, 1)")
        if self.ridge < 0:
            raise ValueError("ridge penalty must be non-negative")
        if self.starts < 1:
            raise ValueError("need at least one starting point")


_models: dict[tuple, ExpertModel] = {}


def choice_probs(s: State, params: EvalParams, cfg: NfxpConfig | None = None) -> np.ndarray:
    """Model CCP at ``s``: the depth-L logit expert with unit scale."""
    cfg = cfg or NfxpConfig()
    key = (s.spec, tuple(params.theta), params.schema, params.W, cfg.depth)
    model = _models.get(key)
    if model is None:
        if len(_models) > 64:
            _models.clear()
        model = _models[key] = ExpertModel(s.spec, params=params, depth=cfg.depth, lam=1.0)
    return model.probs(s)


class Likelihood:
    """Log-likelihood of a dataset as a function of the schema weights."""

    def __init__(self, ds: Dataset, cfg: NfxpConfig):
        if len(ds) == 0:
            raise ValueError("empty dataset")
        self.spec = ds.spec
        self.cfg = cfg
        self.n_obs = len(ds)
        cells = ds.cell_tuples()
        if self.spec.cells <= FULL_TABLE_MAX_CELLS:
            trees = all_state_trees(self.spec, cfg.depth, float(cfg.W))
        else:
            trees = LookaheadTrees(self.spec, sorted(set(cells)), cfg.depth, cfg.W)
        self.trees = trees
        try:
            root = np.array([trees.index[c] for c in cells], dtype=np.int64)
        except KeyError as exc:
            raise GameError("dataset contains a terminal or unreachable state") from exc
        C = self.spec.cells
        keys = trees.pair_root * C + trees.pair_action
        want = root * C + ds.action
        pair = np.searchsorted(keys, want)
        if np.any(pair >= len(keys)) or np.any(keys[np.minimum(pair, len(keys) - 1)] != want):
            raise GameError("dataset contains an illegal move")
        self.obs_root = root
        self.obs_pair = pair
        self.n_pair = np.bincount(pair, minlength=trees.n_pairs).astype(float)
        self.n_root = np.bincount(root, minlength=len(trees.roots)).astype(float)
        self.starts = trees.root_ptr[:-1]
        self.A = schema_map(self.spec, cfg.schema)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def _core(self, theta: np.ndarray):
        if not np.all(np.isfinite(theta)):
            raise FloatingPointError(f"non-finite log-likelihood at theta={theta.tolist()}")
        q, sel = self.trees.backup(self.A @ theta)
        logp = segment_log_softmax(q, self.starts)
        return q, sel, logp

    def value(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        _, _, logp = self._core(theta)
        ll = float(self.n_pair @ logp) - 0.5 * self.cfg.ridge * float(theta @ theta)
        if not np.isfinite(ll):
            raise FloatingPointError(f"non-finite log-likelihood at theta={theta.tolist()}")
        return ll

    def evaluate(self, theta: np.ndarray, hessian: bool = False):
        """(loglik, gradient[, Hessian]) at ``theta``."""
        theta = np.asarray(theta, dtype=float)
        _, sel, logp = self._core(theta)
        ll = float(self.n_pair @ logp) - 0.5 * self.cfg.ridge * float(theta @ theta)
        if not np.isfinite(ll):
            raise FloatingPointError(f"non-finite log-likelihood at theta={theta.tolist()}")
        dq = self.trees.value_gradients(sel) @ self.A
        p = np.exp(logp)
        mean = np.add.reduceat(p[:, None] * dq, self.starts)
        grad = self.n_pair @ dq - self.n_root @ mean - self.cfg.ridge * theta
        if not hessian:
            return ll, grad
        second = np.einsum("p,pi,pj->ij", self.n_root[self.trees.pair_root] * p, dq, dq)
        H = -(second - np.einsum("r,ri,rj->ij", self.n_root, mean, mean)) - self.cfg.ridge * np.eye(self.dim)
        return ll, grad, H

    def scores(self, theta: np.ndarray) -> np.ndarray:
        """Per-observation score vectors (rows)."""
        _, sel, logp = self._core(np.asarray(theta, dtype=float))
        dq = self.trees.value_gradients(sel) @ self.A
        p = np.exp(logp)
        mean = np.add.reduceat(p[:, None] * dq, self.starts)
        return dq[self.obs_pair] - mean[self.obs_root]


def loglik(params: EvalParams, ds: Dataset, cfg: NfxpConfig | None = None) -> float:
    cfg = cfg or NfxpConfig(schema=params.schema, W=params.W)
    return Likelihood(ds, cfg).value(params.theta)


def loglik_grad(params: EvalParams, ds: Dataset, cfg: NfxpConfig | None = None) -> tuple[float, np.ndarray]:
    cfg = cfg or NfxpConfig(schema=params.schema, W=params.W)
    return Likelihood(ds, cfg).evaluate(params.theta)


# ---------------------------------------------------------------------- fit

@dataclass
class FitResult:
    params: EvalParams
    loglik: float
    grad_norm: float
    converged: bool
    diverged: bool
    message: str
    n_obs: int
    iterations: int
    trace: list[dict] = field(default_factory=list)
    se: np.ndarray | None = None
    config: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def theta(self) -> np.ndarray:
        return self.params.theta

    def to_json(self, path=None) -> str:
        doc = {
            "theta": self.params.theta.tolist(),
            "schema": self.params.schema,
            "W": self.params.W,
            "loglik": self.loglik,
            "grad_norm": self.grad_norm,
            "converged": self.converged,
            "diverged": self.diverged,
            "message": self.message,
            "n_obs": self.n_obs,
            "iterations": self.iterations,
            "trace": self.trace,
            "se": None if self.se is None else self.se.tolist(),
            "config": self.config,
            "seed": self.seed,
        }
        text = json.dumps(doc, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "FitResult":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            with open(text) as fh:
                text = fh.read()
        d = json.loads(text)
        return cls(
            EvalParams(np.array(d["theta"]), d["schema"], d["W"]),
            d["loglik"], d["grad_norm"], d["converged"], d["diverged"], d["message"], d["n_obs"],
            d["iterations"], d["trace"], None if d["se"] is None else np.array(d["se"]), d["config"], d["seed"],
        )


def _newton_direction(g: np.ndarray, H: np.ndarray) -> tuple[np.ndarray, bool]:
    try:
        L = np.linalg.cholesky(-H)
    except np.linalg.LinAlgError:
        return g / max(1.0, np.linalg.norm(g)), False
    return np.linalg.solve(L.T, np.linalg.solve(L, g)), True


def _separated(lik: Likelihood, theta: np.ndarray, ll: float, H: np.ndarray) -> bool:
    """Likelihood still rising along the ray through theta with a flat curvature direction."""
    if not np.any(theta):
        return False
    eig = np.linalg.eigvalsh(-H / lik.n_obs)
    if eig.min() > 1e-6 * max(1.0, abs(eig.max())):
        return False
    return lik.value(2.0 * theta) > ll


def _ascend(lik: Likelihood, theta: np.ndarray, cfg: NfxpConfig):
    ll, g, H = lik.evaluate(theta, hessian=True)
    trace = [{"iter": 0, "loglik": ll, "grad_norm": float(np.linalg.norm(g)) / lik.n_obs, "step": 0.0}]
    converged = False
    message = "iteration limit reached"
    it = 0
    for it in range(1, cfg.max_iter + 1):
        gnorm = float(np.linalg.norm(g)) / lik.n_obs
        if gnorm <= cfg.tol:
            converged, message = True, "gradient tolerance met"
            it -= 1
            break
        d, newton = _newton_direction(g, H)
        slope = float(g @ d)
        t = 1.0
        accepted = False
        for _ in range(cfg.max_halvings):
            cand = theta + t * d
            ll_new = lik.value(cand)
            if ll_new > ll and ll_new >= ll + cfg.armijo * t * slope:
                accepted = True
                break
            t *= cfg.backtrack
        if not accepted:
            message = "line search failed to increase the likelihood"
            it -= 1
            break
        theta = cand
        ll, g, H = lik.evaluate(theta, hessian=True)
        trace.append({"iter": it, "loglik": ll, "grad_norm": float(np.linalg.norm(g)) / lik.n_obs,
                      "step": t, "newton": newton})
    return theta, ll, g, H, converged, message, it, trace


def fit(ds: Dataset, cfg: NfxpConfig | None = None, init: EvalParams | np.ndarray | None = None,
        seed: int | None = None, extra_inits: list[np.ndarray] | None = None) -> FitResult:
    """Newton ascent with Armijo backtracking (gradient steps where the Hessian is indefinite).

    The depth-L likelihood is not concave, so with ``cfg.starts > 1`` the
    ascent is repeated from seeded random starts (plus any ``extra_inits``)
    and the highest local maximum is kept.
    """
    cfg = cfg or NfxpConfig()
    lik = Likelihood(ds, cfg)
    if init is None:
        theta = np.zeros(lik.dim)
    elif isinstance(init, EvalParams):
        if init.schema != cfg.schema:
            raise ValueError(f"initial weights use schema {init.schema!r}, config expects {cfg.schema!r}")
        theta = init.theta.copy()
    else:
        theta = np.asarray(init, dtype=float).copy()
    inits = [theta] + [np.asarray(x, dtype=float).copy() for x in (extra_inits or [])]
    if cfg.starts > 1:
        rng = np.random.default_rng(0 if seed is None else seed)
        inits += list(rng.normal(0.0, cfg.start_scale, size=(cfg.starts - 1, lik.dim)))
    for x in inits:
        if x.shape != (lik.dim,) or not np.all(np.isfinite(x)):
            raise ValueError(f"initial weights must be {lik.dim} finite numbers")

    best = None
    for x in inits:
        run = _ascend(lik, x, cfg)
        if best is None or run[1] > best[1]:
            best = run
    theta, ll, g, H, converged, message, it, trace = best
    if len(inits) > 1:
        message = f"{message} (best of {len(inits)} starts)"
    diverged = False
    if _separated(lik, theta, ll, H):
        diverged, converged = True, False
        message = "separation: log-likelihood keeps rising along a ray, no finite maximizer"
    gnorm = float(np.linalg.norm(g)) / lik.n_obs
    if converged and gnorm > cfg.tol:
        converged = False
    se = None
    if not diverged:
        S = lik.scores(theta)
        try:
            cov = np.linalg.inv(S.T @ S)
            se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        except np.linalg.LinAlgError:
            se = None
    return FitResult(
        EvalParams(theta, cfg.schema, cfg.W), ll, gnorm, converged, diverged, message, lik.n_obs, it,
        trace, se, asdict(cfg), seed,
    )


# -------------------------------------------------------- misspecification

@dataclass
class MisspecReport:
    """Pooled versus per-player fits; heterogeneity judged by a likelihood-ratio test."""

    spec: GameSpec
    feature_names: list[str]
    rows: dict[str, dict]  # sample -> {n_obs, loglik, theta, se}
    alpha: float = 0.05

    def norm(self, sample: str) -> float:
        return float(np.linalg.norm(self.rows[sample]["theta"]))

    @property
    def norm_ratio(self) -> float:
        """Player-1 weight norm over player-2 weight norm."""
        return self.norm("player1") / self.norm("player2")

    @property
    def lr_stat(self) -> float:
        r = self.rows
        return 2.0 * (r["player1"]["loglik"] + r["player2"]["loglik"] - r["pooled"]["loglik"])

    @property
    def p_value(self) -> float:
        return float(stats.chi2.sf(max(self.lr_stat, 0.0), df=len(self.feature_names)))

    @property
    def heterogeneous(self) -> bool:
        return self.p_value < self.alpha

    @property
    def pooled_between(self) -> bool:
        lo, hi = sorted((self.norm("player1"), self.norm("player2")))
        return lo <= self.norm("pooled") <= hi

    @property
    def verdict(self) -> str:
        return "significant heterogeneity" if self.heterogeneous else "no significant heterogeneity"

    def to_csv(self, path) -> None:
        names = self.feature_names
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "n_obs", "loglik", "norm"] + names + [f"se_{n}" for n in names])
            for sample in ("pooled", "player1", "player2"):
                r = self.rows[sample]
                se = r["se"] if r["se"] is not None else [float("nan")] * len(names)
                w.writerow([sample, r["n_obs"], repr(float(r["loglik"])), repr(self.norm(sample))]
                           + [repr(float(v)) for v in r["theta"]] + [repr(float(v)) for v in se])

    @classmethod
    def from_csv(cls, path, spec: GameSpec) -> "MisspecReport":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            names = [h for h in header[4:] if not h.startswith("se_")]
            K = len(names)
            rows = {}
            for rec in reader:
                se = np.array([float(v) for v in rec[4 + K:4 + 2 * K]])
                rows[rec[0]] = {
                    "n_obs": int(rec[1]),
                    "loglik": float(rec[2]),
                    "theta": np.array([float(v) for v in rec[4:4 + K]]),
                    "se": None if np.all(np.isnan(se)) else se,
                }
        return cls(spec, names, rows)


def misspecification_experiment(ds: Dataset, cfg: NfxpConfig | None = None, seed: int = 0) -> MisspecReport:
    """Pooled fit, then per-player fits that also start from the pooled estimate."""
    cfg = cfg or NfxpConfig()
    rows = {}
    pooled = None
    for sample, mask in (("pooled", np.ones(len(ds), bool)), ("player1", ds.player == 1),
                         ("player2", ds.player == 2)):
        extra = [] if pooled is None else [pooled]
        res = fit(ds.subset(mask), cfg, seed=seed, extra_inits=extra)
        if pooled is None:
            pooled = res.theta
        if res.diverged:
            raise GameError(f"{sample} fit diverged: {res.message}")
        rows[sample] = {"n_obs": res.n_obs, "loglik": res.loglik, "theta": res.theta, "se": res.se}
    return MisspecReport(ds.spec, feature_names(ds.spec, cfg.schema), rows)
