"""Experiment orchestration: tournaments, the canonical experiments, reports.

Every experiment returns named tables plus pass/fail checks. ``run_experiment``
writes each table as a CSV (first line a comment naming the experiment,
master seed, config hash and command) and a JSON manifest. Report CSVs
depend only on the config and master seed, never on the worker count.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import sys
import time
import zlib
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__, config as config_mod, kernels
from .ccp import PolicyAgent, accuracy, fit_cnn, fit_logit, fit_tabular
from .ccs import fit_value_tabular, selfplay_sample
from .expert import ExpertModel, generate_dataset
from .game import GameSpec, decode
from .inference import binomial_se, one_sided_improvement, wilson_interval
from .nfxp import NfxpConfig, fit, misspecification_experiment
from .oracle import policy_value, soft_solve, solve
from .parallel import chunked, pmap
from .policies import Policy, UniformPolicy, play_game, score_of
from .rl import RlConfig, head_to_head, improve, uniform_matrix, worst_case_vs_oracle
from .search import EvalParams, SearchAgent, SearchConfig, calibrate, feature_names
from .space import state_space

EXPERIMENTS = ("nfxp-recovery", "ccp-accuracy", "ccs-consistency", "rl-ladder", "calibrate-eval", "misspec-bias")


def sub_seed(seed: int, *labels) -> int:
    """Independent, reproducible child seed for a labelled stage."""
    words = [int(seed)] + [zlib.crc32(str(x).encode()) for x in labels]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint32)[0])


def spec_of(cfg: dict) -> GameSpec:
    return GameSpec.parse(cfg["spec"])


def expert_of(cfg: dict, **over) -> ExpertModel:
    e = dict(cfg["expert"], **over)
    spec = spec_of(cfg)
    return ExpertModel(
        spec=spec, mode=e["mode"], params=EvalParams(np.array(e["theta"], dtype=float), e["schema"], e["W"]),
        depth=e["depth"], lam=e["lam"],
        per_player_scales=tuple(e["per_player_scales"]) if e.get("per_player_scales") else None,
        lam_drift=tuple(e["lam_drift"]) if e.get("lam_drift") else None,
    )


# ------------------------------------------------------------- tournaments

def _match_chunk(spec: GameSpec, a: Policy, b: Policy, seed: int, games: range) -> list[float]:
    out = []
    for g in games:
        rng = np.random.default_rng([seed, g])
        if g % 2 == 0:
            out.append(score_of(play_game(spec, a, b, rng).outcome, 1))
        else:
            out.append(score_of(play_game(spec, b, a, rng).outcome, 2))
    return out


def match(spec: GameSpec, a: Policy, b: Policy, games: int, seed: int, workers: int = 1) -> np.ndarray:
    """Per-game win-scores of ``a`` against ``b``; ``a`` moves first in even games."""
    chunks = chunked(games, max(1, games // (4 * max(1, workers))))
    parts = pmap(partial(_match_chunk, spec, a, b, seed), chunks, workers)
    return np.array([x for part in parts for x in part])


@dataclass
class PairResult:
    agent: str
    opponent: str
    games: int
    wins: int
    losses: int
    draws: int

    @property
    def win_score(self) -> float:
        return (self.wins + 0.5 * self.draws) / self.games

    @property
    def interval(self) -> tuple[float, float]:
        return wilson_interval(self.wins + 0.5 * self.draws, self.games)


@dataclass
class TournamentResult:
    pairs: list[PairResult] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for p in self.pairs:
            lo, hi = p.interval
            out.append({"agent": p.agent, "opponent": p.opponent, "games": p.games, "wins": p.wins,
                        "losses": p.losses, "draws": p.draws, "win_score": p.win_score, "ci_low": lo,
                        "ci_high": hi})
        return out


def tournament(spec: GameSpec, agents: list[Policy], games: int, seed: int, workers: int = 1,
               names: list[str] | None = None) -> TournamentResult:
    """Seat-balanced round robin; every pair plays ``games`` games, half in each seat."""
    if len(agents) < 2:
        raise ValueError("a tournament needs at least two agents")
    if games <= 0 or games % 2:
        raise ValueError("games per pair must be a positive even number (seat balance)")
    names = names or [getattr(a, "name", f"agent{i}") for i, a in enumerate(agents)]
    res = TournamentResult()
    for i in range(len(agents)):
        for j in range(i + 1, len(agents)):
            scores = match(spec, agents[i], agents[j], games, sub_seed(seed, "pair", i, j), workers)
            w = int(np.sum(scores == 1.0))
            loss = int(np.sum(scores == 0.0))
            res.pairs.append(PairResult(names[i], names[j], games, w, loss, games - w - loss))
    return res


# ------------------------------------------------------------ report type

@dataclass
class Report:
    name: str
    tables: dict[str, list[dict]] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def table_csv(rows: list[dict], header_comment: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {header_comment}\n")
    if rows:
        cols = list(rows[0].keys())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])
    return buf.getvalue()


# ------------------------------------------------------------ experiments

def _recovery_rep(cfg: dict, seed: int, rep: int) -> dict:
    exp = cfg["experiments"]["nfxp-recovery"]
    model = expert_of(cfg, lam=1.0)
    theta_star = model.params.theta
    ds = generate_dataset(model, exp["games"], seed=sub_seed(seed, "recovery", rep))
    ncfg = NfxpConfig(depth=model.depth, W=model.params.W, schema=model.params.schema,
                      max_iter=cfg["nfxp"]["max_iter"], tol=cfg["nfxp"]["tol"], ridge=cfg["nfxp"]["ridge"])
    res = fit(ds, ncfg)
    se = res.se if res.se is not None else np.full(len(theta_star), np.nan)
    z = (res.theta - theta_star) / se
    row = {"rep": rep, "n_obs": res.n_obs, "loglik": res.loglik, "converged": res.converged,
           "diverged": res.diverged, "iterations": res.iterations}
    names = feature_names(model.spec, model.params.schema)
    for k, name in enumerate(names):
        row[f"theta_{name}"] = res.theta[k]
    for k, name in enumerate(names):
        row[f"se_{name}"] = se[k]
    for k, name in enumerate(names):
        row[f"error_{name}"] = res.theta[k] - theta_star[k]
    row["max_abs_z"] = float(np.max(np.abs(z)))
    row["covered"] = bool(np.all(np.abs(z) <= exp["se_multiple"]))
    row["mean_rel_error"] = float(np.mean(np.abs(res.theta - theta_star) / np.abs(theta_star)))
    return row


def exp_nfxp_recovery(cfg: dict, seed: int, workers: int = 1) -> Report:
    exp = cfg["experiments"]["nfxp-recovery"]
    rows = pmap(partial(_recovery_rep, cfg, seed), range(exp["replications"]), workers)
    model = expert_of(cfg, lam=1.0)
    names = feature_names(model.spec, model.params.schema)
    truth = [{"feature": n, "theta_star": float(t)} for n, t in zip(names, model.params.theta)]
    covered = sum(r["covered"] for r in rows)
    mre = float(np.mean([r["mean_rel_error"] for r in rows]))
    rep = Report("nfxp-recovery", {"replications": rows, "truth": truth})
    rep.summary = {"covered": covered, "replications": len(rows), "mean_rel_error": mre}
    rep.checks = {"coverage": covered >= exp["min_covered"], "mean_rel_error": mre < exp["max_mean_rel_error"]}
    return rep


def ccp_consistency(cfg: dict, seed: int, workers: int = 1) -> Report:
    """Tabular CCP at the root: TV distance at full sample and its decay with visits."""
    exp = cfg["experiments"]["ccp-accuracy"]
    model = expert_of(cfg)
    spec = model.spec
    ds = generate_dataset(model, exp["tabular_games"], seed=sub_seed(seed, "ccp-tabular"), workers=workers)
    root = spec.initial()
    truth = model.probs(root)
    full = fit_tabular(ds, exp["alpha"])
    tv_full = 0.5 * float(np.abs(full.probs(root) - truth).sum())
    at_root = ds.subset(ds.turn == 1)
    rows = []
    for N in exp["visit_levels"]:
        tvs = []
        for lo in range(0, exp["tabular_games"] - N + 1, N):
            part = at_root.subset((at_root.game_id >= lo) & (at_root.game_id < lo + N))
            tab = fit_tabular(part, exp["alpha"])
            tvs.append(0.5 * float(np.abs(tab.probs(root) - truth).sum()))
        rows.append({"visits": N, "chunks": len(tvs), "mean_tv": float(np.mean(tvs)),
                     "sd_tv": float(np.std(tvs, ddof=1))})
    slope = float(np.polyfit(np.log([r["visits"] for r in rows]), np.log([r["mean_tv"] for r in rows]), 1)[0])
    lo, hi = exp["slope_range"]
    rep = Report("ccp-consistency", {"tv_curve": rows,
                                     "root": [{"games": exp["tabular_games"], "tv": tv_full, "slope": slope}]})
    rep.summary = {"root_tv": tv_full, "slope": slope}
    rep.checks = {"root_tv": tv_full < exp["max_root_tv"], "rate": lo <= slope <= hi}
    return rep


def ccp_cnn_vs_logit(cfg: dict, seed: int, workers: int = 1) -> Report:
    exp = cfg["experiments"]["ccp-accuracy"]
    model = expert_of(cfg, lam=exp["lam"])
    ds = generate_dataset(model, exp["games"], seed=sub_seed(seed, "ccp-data"), workers=workers)
    train_ds, test_ds = ds.split_by_game(exp["heldout"], seed=sub_seed(seed, "ccp-split"))
    logit = PolicyAgent.logit(fit_logit(train_ds))
    c = cfg["cnn"]
    cnn_fit = fit_cnn(train_ds, channels=tuple(c["channels"]), kernel=c["kernel"], first_kernel=c["first_kernel"],
                      epochs=c["epochs"], lr=c["lr"], momentum=c["momentum"], batch=c["batch"],
                      lr_decay=c["lr_decay"], seed=sub_seed(seed, "ccp-cnn"), held_out=test_ds)
    cnn = PolicyAgent.cnn(ds.spec, cnn_fit.net)
    table = PolicyAgent.table(fit_tabular(train_ds, exp["alpha"]))
    rows = []
    for name, agent in (("cnn", cnn), ("logit", logit), ("tabular", table)):
        rows.append({"model": name, "train_top1": accuracy(agent, train_ds, 1),
                     "heldout_top1": accuracy(agent, test_ds, 1), "heldout_top3": accuracy(agent, test_ds, 3)})
    margin = rows[0]["heldout_top1"] - rows[1]["heldout_top1"]
    rep = Report("ccp-cnn", {"accuracy": rows, "cnn_training": cnn_fit.log})
    rep.summary = {"cnn_top1": rows[0]["heldout_top1"], "logit_top1": rows[1]["heldout_top1"], "margin": margin}
    rep.checks = {"cnn_beats_logit": margin >= exp["min_margin"]}
    return rep


def exp_ccp_accuracy(cfg: dict, seed: int, workers: int = 1) -> Report:
    a = ccp_consistency(cfg, seed, workers)
    b = ccp_cnn_vs_logit(cfg, seed, workers)
    rep = Report("ccp-accuracy", {**a.tables, **b.tables}, {**a.checks, **b.checks}, {**a.summary, **b.summary})
    return rep


def conditioning_policy(cfg: dict, which: str, seed: int):
    spec = spec_of(cfg)
    if which == "rl":
        r = cfg["experiments"]["rl-ladder"]
        res = improve(spec, uniform_matrix(spec), RlConfig(rounds=r["rounds"], tau=r["tau"],
                                                           pool_size=r["pool_size"], operator=r["operator"]),
                      seed=sub_seed(seed, "rl"))
        return res.policy
    if which == "soft":
        lam = cfg["experiments"]["ccs-consistency"]["soft_lam"]
        return soft_solve(spec, lam).policy()
    raise ValueError(f"unknown conditioning policy {which!r}")


def exp_ccs_consistency(cfg: dict, seed: int, workers: int = 1) -> Report:
    exp = cfg["experiments"]["ccs-consistency"]
    spec = spec_of(cfg)
    sp = state_space(spec)
    rows = []
    checks = {}
    summary = {}
    for which in exp["policies"]:
        pol = conditioning_policy(cfg, which, seed)
        samples = selfplay_sample(spec, pol, exp["games"][which], seed=sub_seed(seed, "ccs", which),
                                  workers=workers)
        est = fit_value_tabular(samples, spec, policies=(which, which))
        exact = policy_value(spec, pol, pol)
        n_ok = n = 0
        for key in sorted(est.counts):
            count = est.n[key]
            if count < exp["min_samples"]:
                continue
            p = float(exact.p_win[sp.lookup(decode(key, spec))])
            p_hat = float(est.counts[key][0] / est.counts[key].sum())
            se = binomial_se(p, count)
            ok = abs(p_hat - p) < exp["sigma"] * se if se > 0 else abs(p_hat - p) < 1e-12
            n += 1
            n_ok += ok
            rows.append({"policy": which, "canonical_key": key, "samples": count, "p_win_hat": p_hat,
                         "p_win_exact": p, "se": se, "pass": ok})
        rate = n_ok / n if n else 0.0
        summary[which] = {"states": n, "passed": n_ok, "rate": rate}
        checks[f"{which}_pass_rate"] = n > 0 and rate >= exp["min_pass"]
    return Report("ccs-consistency", {"states": rows}, checks, summary)


def exp_rl_ladder(cfg: dict, seed: int, workers: int = 1) -> Report:
    exp = cfg["experiments"]["rl-ladder"]
    spec = spec_of(cfg)
    table = solve(spec)
    P0 = uniform_matrix(spec)
    res = improve(spec, P0, RlConfig(rounds=exp["rounds"], tau=exp["tau"], pool_size=exp["pool_size"],
                                     operator=exp["operator"]), seed=sub_seed(seed, "rl"), table=table)
    ladder = [dict(vars(e)) for e in res.ladder]
    worst = worst_case_vs_oracle(spec, res.matrix, table)
    exact_vs_initial = head_to_head(spec, res.matrix, P0)
    scores = match(spec, res.policy, UniformPolicy(), exp["eval_games"], sub_seed(seed, "rl-eval"), workers)
    lo, hi = wilson_interval(float(scores.sum()), len(scores))
    final = [{"oracle_loss_p1": worst[1], "oracle_loss_p2": worst[2], "exact_score_vs_initial": exact_vs_initial,
              "games": len(scores), "sim_score_vs_initial": float(scores.mean()), "wilson_low": lo, "wilson_high": hi}]
    rep = Report("rl-ladder", {"ladder": ladder, "final": final})
    rep.summary = final[0]
    rep.checks = {"never_loses_to_oracle": worst[1] == 0.0 and worst[2] == 0.0,
                  "beats_initial": lo > exp["tau"]}
    return rep


def exp_calibrate_eval(cfg: dict, seed: int, workers: int = 1) -> Report:
    exp = cfg["experiments"]["calibrate-eval"]
    spec = spec_of(cfg)
    scfg = SearchConfig(depth=exp["depth"], use_tablebase=False, use_book=False)
    theta0 = EvalParams.zeros(spec, cfg["expert"]["schema"], cfg["expert"]["W"])
    opp = UniformPolicy()
    res = calibrate(spec, theta0, opp, exp["budget"], seed=sub_seed(seed, "calibrate"), cfg=scfg,
                    games_per_eval=exp["games_per_eval"], step=exp["step"])
    new = match(spec, SearchAgent(res.params, scfg), opp, exp["eval_games"], sub_seed(seed, "cal-eval-new"), workers)
    old = match(spec, SearchAgent(theta0, scfg), opp, exp["eval_games"], sub_seed(seed, "cal-eval-old"), workers)
    z, p = one_sided_improvement(new, old)
    names = feature_names(spec, theta0.schema)
    final = [{"games": exp["eval_games"], "score_calibrated": float(new.mean()), "score_initial": float(old.mean()),
              "z": z, "p_value": p, **{f"theta_{n}": float(v) for n, v in zip(names, res.params.theta)}}]
    rep = Report("calibrate-eval", {"trace": res.trace, "evaluation": final})
    rep.summary = final[0]
    rep.checks = {"significant_improvement": p < exp["alpha"]}
    return rep


def exp_misspec_bias(cfg: dict, seed: int, workers: int = 1) -> Report:
    exp = cfg["experiments"]["misspec-bias"]
    rows = []
    summary = {}
    reports = {}
    for label, scales in (("heterogeneous", (exp["lam1"], exp["lam2"])), ("null", (exp["lam2"], exp["lam2"]))):
        model = expert_of(cfg, per_player_scales=list(scales))
        ds = generate_dataset(model, exp["games"], seed=sub_seed(seed, "misspec", label), workers=workers)
        ncfg = NfxpConfig(depth=model.depth, W=model.params.W, schema=model.params.schema,
                          max_iter=cfg["nfxp"]["max_iter"], tol=cfg["nfxp"]["tol"], starts=exp["starts"])
        rpt = misspecification_experiment(ds, ncfg, seed=sub_seed(seed, "misspec-starts", label))
        rpt.alpha = exp["alpha"]
        reports[label] = rpt
        for sample in ("pooled", "player1", "player2"):
            r = rpt.rows[sample]
            rows.append({"run": label, "lam1": scales[0], "lam2": scales[1], "sample": sample, "n_obs": r["n_obs"],
                         "loglik": r["loglik"], "norm": rpt.norm(sample),
                         **{f"theta_{n}": float(v) for n, v in zip(rpt.feature_names, r["theta"])}})
        summary[label] = {"norm_ratio": rpt.norm_ratio, "lr_stat": rpt.lr_stat, "p_value": rpt.p_value,
                          "verdict": rpt.verdict, "pooled_between": rpt.pooled_between}
    tests = [{"run": k, **v} for k, v in summary.items()]
    rep = Report("misspec-bias", {"fits": rows, "tests": tests}, summary=summary)
    het, null = reports["heterogeneous"], reports["null"]
    rep.checks = {"norm_ratio": het.norm_ratio > exp["min_ratio"], "heterogeneity_detected": het.heterogeneous,
                  "null_not_significant": not null.heterogeneous}
    return rep


RUNNERS = {
    "nfxp-recovery": exp_nfxp_recovery,
    "ccp-accuracy": exp_ccp_accuracy,
    "ccs-consistency": exp_ccs_consistency,
    "rl-ladder": exp_rl_ladder,
    "calibrate-eval": exp_calibrate_eval,
    "misspec-bias": exp_misspec_bias,
}


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``cause`` is the original error."""

    def __init__(self, experiment: str, stage: str, cause: BaseException):
        super().__init__(f"{experiment} [{stage}]: {type(cause).__name__}: {cause}")
        self.experiment = experiment
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentSpec:
    name: str
    config: dict
    seed: int
    out_dir: Path

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; choose from {', '.join(EXPERIMENTS)}")
        self.out_dir = Path(self.out_dir)


def run_experiment(spec: ExperimentSpec, workers: int = 1, command: str | None = None) -> Report:
    """Run one experiment end to end and write its CSV tables and manifest."""
    cfg = spec.config
    chash = config_mod.config_hash(dict(cfg, seed=spec.seed))
    t0 = time.time()
    try:
        report = RUNNERS[spec.name](cfg, spec.seed, workers)
    except Exception as e:
        raise StageError(spec.name, _failed_stage(e), e) from e
    elapsed = time.time() - t0
    try:
        spec.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StageError(spec.name, "write", e) from e
    canonical_cmd = f"mnklab experiment {spec.name} --seed {spec.seed}"
    header = f"experiment={spec.name} seed={spec.seed} config_hash={chash} command={canonical_cmd}"
    files = {}
    for name, rows in report.tables.items():
        text = table_csv(rows, header)
        path = spec.out_dir / f"{spec.name}_{name}.csv"
        path.write_text(text)
        files[path.name] = hashlib.sha256(text.encode()).hexdigest()
    manifest = {
        "experiment": spec.name,
        "seed": spec.seed,
        "config_hash": chash,
        "config": cfg,
        "command": command or " ".join(sys.argv),
        "canonical_command": canonical_cmd,
        "package_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "workers": workers,
        "elapsed_seconds": round(elapsed, 3),
        "files": files,
        "summary": _jsonable(report.summary),
        "checks": {k: bool(v) for k, v in report.checks.items()},
        "passed": report.passed,
    }
    (spec.out_dir / f"{spec.name}_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return report


def replay_manifest(path, out_dir, workers: int = 1) -> Report:
    """Rerun an experiment from nothing but its manifest."""
    m = json.loads(Path(path).read_text())
    return run_experiment(ExperimentSpec(m["experiment"], m["config"], m["seed"], out_dir), workers,
                          command=m["canonical_command"])


def _failed_stage(exc: BaseException) -> str:
    """Name the pipeline stage from the innermost package frame of a traceback."""
    stages = {"expert": "generate", "ccs": "generate", "nfxp": "fit", "ccp": "fit", "nn": "fit", "rl": "improve",
              "search": "evaluate", "policies": "evaluate", "oracle": "solve", "inference": "evaluate"}
    tb = exc.__traceback__
    stage = "run"
    while tb is not None:
        mod = Path(tb.tb_frame.f_code.co_filename).stem
        stage = stages.get(mod, stage)
        tb = tb.tb_next
    return stage


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return None if math.isnan(obj) else float(obj)
    return obj
