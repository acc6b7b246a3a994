"""Command line entry point ``lab``.

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .algorithms import Constants, ScheduleError, make_schedule, q_learning, run_combined
from .experiments import (ConfigError, emit_report, load_config, read_records, read_timings,
                          run_sweep, success_summary)
from .io import FormatError, load_chain, load_mdp, read_json, save_mdp, write_json
from .mdp import solve_exact, sup_norm

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class InvalidInput(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _emit(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=1, sort_keys=True, default=_default)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, np.bool_)):
        return x.item()
    raise TypeError(type(x))


def _policy_arg(text: str | None, n_states: int, fallback):
    if text is None:
        return fallback
    if text == "optimal":
        return None
    try:
        pi = np.array([int(a) for a in text.split(",")], dtype=np.int64)
    except ValueError as exc:
        raise InvalidInput(f"policy must be comma-separated integers: {text!r}") from exc
    if pi.shape != (n_states,):
        raise InvalidInput(f"policy needs {n_states} entries")
    return pi


def _mdp_and_policy(path: str, policy_text: str | None):
    mdp, stored = load_mdp(path)
    pi = _policy_arg(policy_text, mdp.n_states, stored)
    if pi is None:
        pi = solve_exact(mdp)[2]
    return mdp, pi


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = args.output or cfg.output
    if out is None:
        raise InvalidInput("no output directory: set 'output' in the config or pass --output")
    records = run_sweep(cfg, out, workers=args.workers, resume=not args.no_resume)
    emit_report(records, out, read_timings(out))
    failed = [r for r in records if r.status != "ok"]
    summary = success_summary(records)
    summary.update({"records": len(records), "failed": len(failed), "output": str(out),
                    "config_hash": cfg.config_hash})
    _emit(summary, None)
    return EXIT_RUNTIME if failed and len(failed) == len(records) else EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.records)
    records = read_records(path)
    if not records:
        raise InvalidInput(f"no records found at {path}")
    base = path if path.is_dir() else path.parent
    doc = emit_report(records, args.output or base, read_timings(base))
    _emit({k: doc[k] for k in ("n_records", "success_rate") if k in doc} | {"scaling": doc.get("scaling", {})}, None)
    return EXIT_OK


def cmd_mixing(args) -> int:
    from .mixing import verify_equivalence

    kernel, mdp, pi = load_chain(args.file)
    if mdp is not None and args.policy is not None:
        pi = _policy_arg(args.policy, mdp.n_states, pi)
        if pi is None:
            pi = solve_exact(mdp)[2]
        from .mdp import policy_kernel

        kernel = policy_kernel(mdp, pi)
    rep = verify_equivalence(kernel, m_max=args.m_max)
    doc = rep.to_dict()
    doc["residual"] = rep.best_decomposition.residual.tolist()
    if pi is not None:
        doc["policy"] = [int(a) for a in pi]
    if args.json or args.out:
        _emit(doc, args.out)
    else:
        d = rep.best_decomposition
        print(f"t_mix       {rep.t_mix}")
        print(f"t_minorize  {rep.t_minorize:.6g}  (m={d.m}, p={d.p:.6g}{', on search boundary' if rep.on_boundary else ''})")
        for name, ok in rep.checks.items():
            print(f"{name:26s}{'ok' if ok else 'VIOLATED'}")
    return EXIT_OK if rep.all_hold else EXIT_RUNTIME


def cmd_hard(args) -> int:
    from .hard import alternative_threshold, hard_report, make_alternative, make_hard_instance

    if (args.p is None) == (args.t_minorize is None):
        raise InvalidInput("give exactly one of --p or --t-minorize")
    p = args.p if args.p is not None else 1.0 / args.t_minorize
    h = make_hard_instance(p, args.gamma)
    n = args.n
    if n is not None and n <= 0:
        n = int(np.ceil(alternative_threshold(h)))
    doc = hard_report(h, n)
    if args.out_dir:
        out = Path(args.out_dir)
        save_mdp(out / "hard.json", h.mdp)
        if n is not None:
            alt = make_alternative(h, n, enforce_threshold=False)
            save_mdp(out / "alternative.json", alt.mdp_bar)
        write_json(out / "report.json", json.loads(json.dumps(doc, default=_default)))
    _emit(doc, None)
    return EXIT_OK


def cmd_split_sim(args) -> int:
    from .mdp import policy_kernel
    from .mixing import DoeblinDecomposition, minorization_time
    from .split_chain import regeneration_cycles, simulate_split_chain

    mdp, pi = _mdp_and_policy(args.mdp, args.policy)
    P = policy_kernel(mdp, pi)
    if args.decomposition == "auto":
        _, decomp = minorization_time(P)
    else:
        d = read_json(args.decomposition)
        if d.get("format") != "mixlab.doeblin":
            raise InvalidInput("decomposition file must have format 'mixlab.doeblin'")
        decomp = DoeblinDecomposition(int(d["m"]), float(d["p"]), np.asarray(d["psi"]),
                                      np.asarray(d["residual"]))
    if not decomp.certifies(P):
        raise InvalidInput("decomposition does not certify the policy kernel")
    trace = simulate_split_chain(decomp, P, args.start, args.horizon, args.seed)
    stats = regeneration_cycles(mdp, pi, decomp, args.cycles, args.seed)
    mean_len = stats.mean_length()
    cov = stats.discount_reward_covariance()
    doc = {
        "certificate": {"m": decomp.m, "p": decomp.p, "psi": decomp.psi.tolist()},
        "policy": [int(a) for a in pi],
        "trace": {"horizon": trace.horizon, "regen_times": trace.regen_times.tolist(),
                  "states": trace.states.tolist()},
        "cycles": {
            "n_cycles": stats.n_cycles,
            "mean_length": mean_len.value, "mean_length_se": mean_len.se,
            "expected_mean_length": decomp.m / decomp.p,
            "cov_discount_reward": cov.value, "cov_se": cov.se,
            "regen_state_freq": (np.bincount(stats.regen_states, minlength=mdp.n_states)
                                 / stats.n_cycles).tolist(),
        },
    }
    _emit(doc, args.out)
    return EXIT_OK


def _constants(args) -> Constants:
    return Constants(args.c0, args.c1, args.c2)


def cmd_ql(args) -> int:
    from .sampler import GenerativeModel

    mdp, _ = load_mdp(args.mdp)
    if args.steps < 1:
        raise InvalidInput("--steps must be >= 1")
    _, q_star, _ = solve_exact(mdp)
    out = []
    for seed in args.seeds:
        gm = GenerativeModel(mdp, seed)
        q = q_learning(gm, args.steps)
        out.append({"seed": seed, "steps": args.steps, "samples_used": gm.total,
                    "error": sup_norm(q - q_star), "q_hat": q.tolist()})
    _emit({"records": out}, args.out)
    return EXIT_OK


def cmd_vrql(args) -> int:
    from .mixing import minorization_time
    from .mdp import policy_kernel
    from .sampler import GenerativeModel

    mdp, _ = load_mdp(args.mdp)
    _, q_star, pi_star = solve_exact(mdp)
    t = args.t_minorize
    if t is None:
        t = minorization_time(policy_kernel(mdp, pi_star))[0]
    sched = make_schedule(args.setting, (mdp.n_states, mdp.n_actions), mdp.gamma, args.epsilon,
                          args.delta, t, _constants(args), warm_start=args.warm_start)
    out = []
    for seed in args.seeds:
        res = run_combined(GenerativeModel(mdp, seed), sched, q_star)
        out.append({"seed": seed, "samples_used": res.samples_used,
                    "final_error": res.final_error, "success": res.success(args.epsilon),
                    "per_epoch_errors": res.per_epoch_errors, "halving": res.halving_holds(sched.b),
                    "wall_time": res.wall_time, "q_hat": res.q_hat.tolist()})
    _emit({"schedule": sched.to_dict(), "records": out}, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lab", description="Mixing, regeneration and Q-learning laboratory.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run an experiment sweep from a YAML/JSON config")
    p.add_argument("config")
    p.add_argument("--output", help="output directory (overrides the config)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-resume", action="store_true", help="ignore existing records")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="write report.csv/report.json from records")
    p.add_argument("records", help="records.jsonl or the directory holding it")
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("mixing", help="mixing and minorization times of a kernel or MDP policy")
    p.add_argument("file")
    p.add_argument("--policy", help="comma-separated actions, or 'optimal'")
    p.add_argument("--m-max", type=int)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_mixing)

    p = sub.add_parser("hard", help="build the hard instance and its alternative")
    p.add_argument("--p", type=float)
    p.add_argument("--t-minorize", type=float)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--n", type=int, help="sample budget for the alternative (0 = threshold)")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_hard)

    p = sub.add_parser("split-sim", help="simulate the split chain and summarise cycles")
    p.add_argument("mdp")
    p.add_argument("--policy", help="comma-separated actions, or 'optimal' (default: stored or optimal)")
    p.add_argument("--decomposition", default="auto", help="'auto' or a decomposition JSON file")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--horizon", type=int, default=100)
    p.add_argument("--cycles", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_split_sim)

    for name, fn in (("ql", cmd_ql), ("vrql", cmd_vrql)):
        p = sub.add_parser(name, help="Q-learning" if name == "ql" else "variance-reduced Q-learning")
        p.add_argument("mdp")
        p.add_argument("--seeds", type=int, nargs="+", default=[0])
        p.add_argument("--out")
        if name == "ql":
            p.add_argument("--steps", type=int, required=True)
        else:
            p.add_argument("--setting", default="general")
            p.add_argument("--epsilon", type=float, required=True)
            p.add_argument("--delta", type=float, default=0.1)
            p.add_argument("--t-minorize", type=float)
            p.add_argument("--warm-start", default="general", choices=["general", "q_learning"])
            p.add_argument("--c0", type=float, default=1.0)
            p.add_argument("--c1", type=float, default=1.0)
            p.add_argument("--c2", type=float, default=1.0)
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, ScheduleError, InvalidInput, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"lab: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"lab: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
