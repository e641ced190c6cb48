"""Command-line interface: ``mnklab <command> [options]``.

Global flags (--spec, --seed, --out-dir, --workers, --config) are accepted
before or after the command. Every command writes its files into --out-dir
together with ``<command>_manifest.json`` naming the seed, config hash, the
producing command and a checksum of each file.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, config as config_mod, kernels

AGENT_HELP = ("agent spec: oracle | random | expert | soft:<lam> | eval:<params.csv>[:<depth>] | ccp:<table.csv> | "
              "cnn:<net.json> | policy:<policy.csv> | mcts[:k=v,...]")


class CliError(Exception):
    pass


# ----------------------------------------------------------------- helpers

def _spec(args):
    from .game import GameSpec

    return GameSpec.parse(args.spec)


def _out(args, name: str) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _sha(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _manifest(args, command: str, files: list[Path], summary: dict | None = None) -> None:
    cfg = args.cfg
    data = {
        "command": command,
        "argv": ["mnklab"] + sys.argv[1:],
        "seed": args.seed,
        "spec": args.spec,
        "config_hash": config_mod.config_hash(dict(cfg, seed=args.seed, spec=args.spec)),
        "config": cfg,
        "package_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "workers": args.workers,
        "files": {Path(f).name: _sha(f) for f in files},
        "summary": summary or {},
    }
    path = _out(args, f"{command}_manifest.json")
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")


def _expert(args, **over):
    from .harness import expert_of

    return expert_of(dict(args.cfg, spec=args.spec), **over)


def parse_agent(text: str, spec, args=None, seed: int = 0):
    """Build a player from an agent spec string."""
    from .oracle import soft_solve, solve
    from .policies import UniformPolicy

    kind, _, rest = text.partition(":")
    if kind == "oracle":
        return solve(spec).policy("lowest")
    if kind == "random":
        return UniformPolicy()
    if kind == "expert":
        from .expert import ExpertModel
        from .policies import FunctionPolicy

        model = _expert(args) if args is not None else ExpertModel(spec)
        return FunctionPolicy(model.probs, name="expert")
    if kind == "soft":
        return soft_solve(spec, float(rest or 1.0)).policy()
    if kind == "eval":
        from .search import EvalParams, SearchAgent, SearchConfig

        path, _, depth = rest.partition(":")
        return SearchAgent(EvalParams.from_csv(path), SearchConfig(depth=int(depth or 2)), name=f"eval-d{depth or 2}")
    if kind == "ccp":
        from .ccp import load_table_policy

        return load_table_policy(rest, spec)
    if kind == "cnn":
        from .ccp import PolicyAgent
        from .nn import ConvNet

        return PolicyAgent.cnn(spec, ConvNet.from_json(rest))
    if kind == "policy":
        return read_policy_csv(rest, spec)
    if kind == "mcts":
        from .mcts import MctsAgent, MctsConfig

        base = dict(args.cfg["mcts"]) if args is not None else {}
        for item in filter(None, rest.split(",")):
            k, _, v = item.partition("=")
            if k not in MctsConfig.__dataclass_fields__:
                raise CliError(f"unknown mcts option {k!r}")
            base[k] = v
        types = {"budget": int, "c_uct": float, "beta": float}
        cfg = MctsConfig(**{k: types.get(k, str)(v) for k, v in base.items()})
        return MctsAgent(cfg, seed=seed)
    raise CliError(f"cannot parse agent {text!r}; {AGENT_HELP}")


def write_policy_csv(path, spec, P: np.ndarray) -> None:
    from .space import state_space

    sp = state_space(spec)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state", "action", "probability"])
        for i in sp.cont_indices:
            key = "".join(map(str, sp.state(i).cells))
            for a in np.flatnonzero(P[i]):
                w.writerow([key, int(a), repr(float(P[i, a]))])


def read_policy_csv(path, spec):
    from .policies import TablePolicy

    table: dict[tuple, np.ndarray] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cells = tuple(int(c) for c in row["state"])
            p = table.setdefault(cells, np.zeros(spec.cells))
            p[int(row["action"])] = float(row["probability"])
    return TablePolicy(table, name=Path(path).stem)


# ---------------------------------------------------------------- commands

def cmd_solve(args) -> int:
    from .oracle import soft_solve, solve
    from .space import state_space

    spec = _spec(args)
    t0 = time.time()
    table = solve(spec)
    path = _out(args, "solution.csv")
    table.to_csv(path)
    files = [path]
    summary = {"root_value": table.value(spec.initial()), "reachable_states": len(state_space(spec)),
               "canonical_states": len(table.values), "seconds": round(time.time() - t0, 3)}
    if args.soft is not None:
        soft = soft_solve(spec, args.soft)
        p = _out(args, f"soft_{args.soft:g}.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["state", "soft_value"])
            sp = state_space(spec)
            for i in range(len(sp)):
                w.writerow(["".join(map(str, sp.state(i).cells)), repr(float(soft.values[i]))])
        files.append(p)
        summary["soft_root_value"] = float(soft.values[0])
    _manifest(args, "solve", files, summary)
    print(f"root value {summary['root_value']:+d}  reachable {summary['reachable_states']}  "
          f"canonical {summary['canonical_states']}  -> {path}")
    return 0


def cmd_gen_data(args) -> int:
    from .expert import conditional_entropy, generate_dataset

    over = {}
    if args.mode:
        over["mode"] = args.mode
    if args.lam is not None:
        over["lam"] = args.lam
    if args.lam1 is not None or args.lam2 is not None:
        lam = args.lam if args.lam is not None else args.cfg["expert"]["lam"]
        over["per_player_scales"] = [args.lam1 or lam, args.lam2 or lam]
    if args.drift:
        over["lam_drift"] = [float(v) for v in args.drift.split(",")]
    model = _expert(args, **over)
    ds = generate_dataset(model, args.games, augment=args.augment, seed=args.seed, workers=args.workers)
    path = _out(args, args.out)
    ds.to_jsonl(path)
    summary = {"games": args.games, "observations": len(ds), "augmented": ds.augmented}
    if not ds.augmented:
        summary["entropy_p1"] = conditional_entropy(ds, 1)
        summary["entropy_p2"] = conditional_entropy(ds, 2)
    _manifest(args, "gen-data", [path], summary)
    print(f"{len(ds)} observations from {args.games} games -> {path}")
    return 0


def _load_ds(path):
    from .expert import Dataset

    return Dataset.from_jsonl(path)


def cmd_fit_nfxp(args) -> int:
    from .nfxp import NfxpConfig, fit, misspecification_experiment

    ds = _load_ds(args.data)
    n = args.cfg["nfxp"]
    cfg = NfxpConfig(depth=args.depth or n["depth"], W=args.cfg["expert"]["W"], schema=args.cfg["expert"]["schema"],
                     max_iter=n["max_iter"], tol=n["tol"], ridge=n["ridge"], starts=args.starts)
    if args.split:
        rpt = misspecification_experiment(ds, cfg, seed=args.seed)
        path = _out(args, "misspec.csv")
        rpt.to_csv(path)
        _manifest(args, "fit-nfxp", [path], {"norm_ratio": rpt.norm_ratio, "p_value": rpt.p_value,
                                              "verdict": rpt.verdict})
        print(f"norm ratio {rpt.norm_ratio:.3f}  LR {rpt.lr_stat:.2f}  p {rpt.p_value:.3g}  {rpt.verdict}")
        return 0
    res = fit(ds, cfg, seed=args.seed)
    path = _out(args, "nfxp_fit.json")
    res.to_json(path)
    ppath = _out(args, "nfxp_params.csv")
    res.params.to_csv(ppath, ds.spec)
    _manifest(args, "fit-nfxp", [path, ppath], {"loglik": res.loglik, "converged": res.converged,
                                               "diverged": res.diverged})
    print(f"theta {np.round(res.theta, 4).tolist()}  loglik {res.loglik:.3f}  {res.message}")
    return 0 if not res.diverged else 3


def cmd_fit_ccp(args) -> int:
    from .ccp import PolicyAgent, accuracy, fit_cnn, fit_logit, fit_tabular

    ds = _load_ds(args.data)
    train_ds, test_ds = ds.split_by_game(args.heldout, seed=args.seed) if args.heldout > 0 else (ds, None)
    files = []
    if args.model == "tabular":
        table = fit_tabular(train_ds, args.alpha)
        path = _out(args, "ccp_table.csv")
        table.to_csv(path)
        agent = PolicyAgent.table(table)
    elif args.model == "logit":
        model = fit_logit(train_ds)
        path = _out(args, "ccp_logit.json")
        path.write_text(json.dumps({"schema": model.schema, "beta": model.beta.tolist()}) + "\n")
        agent = PolicyAgent.logit(model)
    else:
        c = args.cfg["cnn"]
        res = fit_cnn(train_ds, channels=tuple(c["channels"]), kernel=c["kernel"], first_kernel=c["first_kernel"],
                      epochs=args.epochs or c["epochs"], lr=c["lr"], momentum=c["momentum"], batch=c["batch"],
                      lr_decay=c["lr_decay"], seed=args.seed, held_out=test_ds)
        path = _out(args, "ccp_cnn.json")
        res.net.to_json(path)
        agent = PolicyAgent.cnn(ds.spec, res.net)
    files.append(path)
    summary = {"model": args.model, "train_top1": accuracy(agent, train_ds, 1)}
    if test_ds is not None and len(test_ds):
        summary["heldout_top1"] = accuracy(agent, test_ds, 1)
    _manifest(args, "fit-ccp", files, summary)
    print("  ".join(f"{k} {v:.4f}" if isinstance(v, float) else f"{k} {v}" for k, v in summary.items()))
    return 0


def cmd_fit_value(args) -> int:
    from .ccs import fit_value_cnn, fit_value_tabular, selfplay_sample, write_samples

    spec = _spec(args)
    policy = parse_agent(args.policy, spec, args, seed=args.seed)
    samples = selfplay_sample(spec, policy, args.games, seed=args.seed, per_move=args.per_move, workers=args.workers)
    spath = _out(args, "ccs_samples.jsonl")
    write_samples(samples, spath)
    files = [spath]
    if args.model == "tabular":
        est = fit_value_tabular(samples, spec, policies=(args.policy, args.policy))
        path = _out(args, "value_table.csv")
        est.to_csv(path)
        summary = {"states": len(est.counts)}
    else:
        c = args.cfg["cnn"]
        res = fit_value_cnn(samples, spec, channels=tuple(c["channels"]), kernel=c["kernel"],
                            epochs=args.epochs or c["epochs"], lr=c["lr"], momentum=c["momentum"], batch=c["batch"],
                            seed=args.seed, policies=(args.policy, args.policy))
        path = _out(args, "value_cnn.json")
        res.net.to_json(path, extra={"calibration": res.calibration})
        summary = {"calibration": res.calibration}
    files.append(path)
    _manifest(args, "fit-value", files, summary)
    print(f"{len(samples)} samples -> {path}")
    return 0


def cmd_calibrate(args) -> int:
    from .search import EvalParams, SearchAgent, SearchConfig, calibrate, match_scores

    spec = _spec(args)
    opp = parse_agent(args.opponent, spec, args, seed=args.seed)
    scfg = SearchConfig(depth=args.depth)
    theta0 = EvalParams.zeros(spec, args.cfg["expert"]["schema"], args.cfg["expert"]["W"])
    res = calibrate(spec, theta0, opp, args.budget, seed=args.seed, cfg=scfg, games_per_eval=args.games_per_eval,
                    step=args.step)
    path = _out(args, "calibrated_params.csv")
    res.params.to_csv(path, spec)
    tpath = _out(args, "calibration_trace.csv")
    with open(tpath, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["round", "coordinate", "delta", "score", "accepted"], lineterminator="\n")
        w.writeheader()
        w.writerows(res.trace)
    summary = {"win_score": res.win_score, "baseline": res.baseline_score, "games_used": res.games_used}
    if args.eval_games:
        new = match_scores(spec, SearchAgent(res.params, scfg), opp, args.eval_games, args.seed + 1)
        summary["fresh_win_score"] = float(new.mean())
    _manifest(args, "calibrate", [path, tpath], summary)
    print(f"theta {res.params.theta.tolist()}  win-score {res.win_score:.3f} (from {res.baseline_score:.3f})")
    return 0


def cmd_improve(args) -> int:
    from .rl import RlConfig, improve, policy_matrix

    spec = _spec(args)
    pi0 = parse_agent(args.initial, spec, args, seed=args.seed)
    r = args.cfg["experiments"]["rl-ladder"]
    cfg = RlConfig(rounds=args.rounds or r["rounds"], tau=args.tau or r["tau"], pool_size=r["pool_size"],
                   operator=args.operator or r["operator"])
    res = improve(spec, policy_matrix(spec, pi0), cfg, seed=args.seed)
    path = _out(args, "rl_policy.csv")
    write_policy_csv(path, spec, res.matrix)
    lpath = _out(args, "rl_ladder.csv")
    with open(lpath, "w", newline="") as fh:
        fields = ["round", "accepted", "score_vs_pool", "score_vs_initial", "oracle_loss_p1", "oracle_loss_p2"]
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for e in res.ladder:
            w.writerow(vars(e))
    _manifest(args, "improve", [path, lpath], {"accepted_rounds": len(res.accepted)})
    for e in res.ladder:
        print(f"round {e.round}: {'accepted' if e.accepted else 'rejected'}  vs pool {e.score_vs_pool:.3f}  "
              f"vs initial {e.score_vs_initial:.3f}  oracle loss {e.oracle_loss_p1:.3f}/{e.oracle_loss_p2:.3f}")
    return 0


def cmd_play(args) -> int:
    from .policies import play_game

    spec = _spec(args)
    white = parse_agent(args.white, spec, args, seed=args.seed)
    black = parse_agent(args.black, spec, args, seed=args.seed + 1)
    path = _out(args, args.out)
    tally = {"win": 0, "loss": 0, "draw": 0}
    with open(path, "w") as fh:
        for g in range(args.games):
            rec = play_game(spec, white, black, np.random.default_rng([args.seed, g]))
            fh.write(rec.to_json() + "\n")
            tally[rec.outcome.value] += 1
    _manifest(args, "play", [path], tally)
    print(f"first player ({args.white}) wins {tally['win']}, second ({args.black}) wins {tally['loss']}, "
          f"draws {tally['draw']}")
    if args.games == 1:
        from .game import GameRecord

        print(GameRecord.from_json(path.read_text().splitlines()[0]).final_state())
    return 0


def cmd_tournament(args) -> int:
    from .harness import table_csv, tournament

    spec = _spec(args)
    agents = [parse_agent(a, spec, args, seed=args.seed) for a in args.agents]
    res = tournament(spec, agents, args.games, args.seed, args.workers, names=list(args.agents))
    chash = config_mod.config_hash(dict(args.cfg, seed=args.seed, spec=args.spec))
    path = _out(args, "tournament.csv")
    cmd = "mnklab tournament " + " ".join(args.agents) + f" --games {args.games} --seed {args.seed}"
    path.write_text(table_csv(res.rows(), f"experiment=tournament seed={args.seed} config_hash={chash} command={cmd}"))
    _manifest(args, "tournament", [path])
    for r in res.rows():
        print(f"{r['agent']:>20} vs {r['opponent']:<20} W{r['wins']} L{r['losses']} D{r['draws']}  "
              f"score {r['win_score']:.3f} [{r['ci_low']:.3f}, {r['ci_high']:.3f}]")
    return 0


def cmd_experiment(args) -> int:
    from .harness import ExperimentSpec, StageError, replay_manifest, run_experiment

    if args.name is None and args.from_manifest is None:
        raise CliError("name an experiment or pass --from-manifest")
    try:
        if args.from_manifest:
            rep = replay_manifest(args.from_manifest, Path(args.out_dir), args.workers)
            args.name = rep.name
        else:
            exp = ExperimentSpec(args.name, dict(args.cfg, spec=args.spec), args.seed, Path(args.out_dir))
            rep = run_experiment(exp, workers=args.workers, command=" ".join(["mnklab"] + sys.argv[1:]))
    except StageError as e:
        print(f"[{args.name}:{e.stage}] failed: {e.cause}", file=sys.stderr)
        return 2
    for k, v in rep.checks.items():
        print(f"{'PASS' if v else 'FAIL'}  {args.name}: {k}")
    return 0 if rep.passed else 1


PLOT_DEFAULTS = {
    "tv_curve": ("visits", "mean_tv", True),
    "ladder": ("round", "score_vs_pool", False),
    "trace": ("round", "score", False),
    "replications": ("rep", "mean_rel_error", False),
    "states": ("p_win_exact", "p_win_hat", False),
}


def cmd_plot(args) -> int:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise CliError("plotting needs matplotlib (pip install 'artifact[plot]')") from None
    with open(args.csv) as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    if not rows:
        raise CliError(f"{args.csv} has no rows")
    stem = Path(args.csv).stem
    default = next((v for k, v in PLOT_DEFAULTS.items() if stem.endswith(k)), None)
    x = args.x or (default[0] if default else list(rows[0])[0])
    y = args.y or (default[1] if default else list(rows[0])[1])
    log = args.log or (default[2] if default else False)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([float(r[x]) for r in rows], [float(r[y]) for r in rows], "o-")
    if log:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.set_title(stem)
    fig.tight_layout()
    path = _out(args, args.out or f"{stem}.png")
    fig.savefig(path, dpi=120)
    print(f"-> {path}")
    return 0


# ------------------------------------------------------------------ parser

def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--spec", default=d(None), help="board m,n,k (default from config)")
    parser.add_argument("--seed", type=int, default=d(None), help="master seed (default from config)")
    parser.add_argument("--out-dir", default=d("results"), help="output directory")
    parser.add_argument("--workers", type=int, default=d(None), help="worker processes")
    parser.add_argument("--config", default=d(None), help="YAML config overriding the reference config")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mnklab", description="m,n,k-game laboratory")
    p.add_argument("--version", action="version", version=f"mnklab {__version__}")
    _globals(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="exact solution of the board")
    s.add_argument("--soft", type=float, help="also write the logit-equilibrium values at this scale")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("gen-data", parents=[common], help="simulate structural expert games")
    s.add_argument("--games", type=int, default=5000)
    s.add_argument("--mode", choices=["depth_L_logit", "soft_equilibrium"])
    s.add_argument("--lam", type=float)
    s.add_argument("--lam1", type=float, help="player-1 logit scale")
    s.add_argument("--lam2", type=float, help="player-2 logit scale")
    s.add_argument("--drift", help="start,end logit scale across game indices")
    s.add_argument("--augment", action="store_true", help="add all board symmetries")
    s.add_argument("--out", default="expert.jsonl.gz")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("fit-nfxp", parents=[common], help="full-solution maximum likelihood")
    s.add_argument("--data", required=True)
    s.add_argument("--depth", type=int)
    s.add_argument("--starts", type=int, default=1)
    s.add_argument("--split", action="store_true", help="pooled versus per-player fits")
    s.set_defaults(func=cmd_fit_nfxp)

    s = sub.add_parser("fit-ccp", parents=[common], help="first-stage choice probabilities")
    s.add_argument("--data", required=True)
    s.add_argument("--model", choices=["tabular", "cnn", "logit"], default="tabular")
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--heldout", type=float, default=0.1)
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_fit_ccp)

    s = sub.add_parser("fit-value", parents=[common], help="self-play value estimation")
    s.add_argument("--policy", required=True, help=AGENT_HELP)
    s.add_argument("--games", type=int, default=20000)
    s.add_argument("--model", choices=["tabular", "cnn"], default="tabular")
    s.add_argument("--per-move", action="store_true", help="keep every position, not one per game")
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_fit_value)

    s = sub.add_parser("calibrate", parents=[common], help="hill-climb evaluation weights on win-score")
    s.add_argument("--opponent", default="random", help=AGENT_HELP)
    s.add_argument("--budget", type=int, default=2000)
    s.add_argument("--games-per-eval", type=int, default=100)
    s.add_argument("--step", type=float, default=1.0)
    s.add_argument("--depth", type=int, default=1)
    s.add_argument("--eval-games", type=int, default=0)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("improve", parents=[common], help="best-response ladder")
    s.add_argument("--initial", default="random", help=AGENT_HELP)
    s.add_argument("--rounds", type=int)
    s.add_argument("--tau", type=float)
    s.add_argument("--operator", choices=["exact_best_response", "simulated_greedy"])
    s.set_defaults(func=cmd_improve)

    s = sub.add_parser("play", parents=[common], help="play games between two agents")
    s.add_argument("--white", default="oracle", help="first player; " + AGENT_HELP)
    s.add_argument("--black", default="random", help="second player")
    s.add_argument("--games", type=int, default=1)
    s.add_argument("--out", default="games.jsonl")
    s.set_defaults(func=cmd_play)

    s = sub.add_parser("tournament", parents=[common], help="seat-balanced round robin")
    s.add_argument("agents", nargs="+", help=AGENT_HELP)
    s.add_argument("--games", type=int, default=200, help="games per pair (even)")
    s.set_defaults(func=cmd_tournament)

    s = sub.add_parser("experiment", parents=[common], help="run a canonical experiment")
    s.add_argument("name", nargs="?", choices=["nfxp-recovery", "ccp-accuracy", "ccs-consistency", "rl-ladder",
                                               "calibrate-eval", "misspec-bias"])
    s.add_argument("--from-manifest", help="rerun exactly what a previous manifest records")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("plot", parents=[common], help="static plot from a result CSV (needs matplotlib)")
    s.add_argument("csv")
    s.add_argument("--x")
    s.add_argument("--y")
    s.add_argument("--log", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.cfg = config_mod.load(args.config)
    except (OSError, ValueError) as e:
        print(f"mnklab: cannot read config: {e}", file=sys.stderr)
        return 2
    args.spec = args.spec or args.cfg["spec"]
    args.seed = args.cfg["seed"] if args.seed is None else args.seed
    args.workers = args.workers or args.cfg.get("workers", 1)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError, KeyError) as e:
        print(f"mnklab {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
