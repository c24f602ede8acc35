"""Command-line front end.

Each subcommand builds a service request from files and flags. By default
the request is handled in-process; with ``--server URL`` it is sent to a
running ``bellstat serve`` instance instead and only file I/O stays local.

Exit codes: 0 success, 1 usage error, 2 input validation or parse error,
3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .scenario import Scenario
from .service import handlers, schemas as s

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

ROUTES = {
    "simulate": ("/simulate", handlers.simulate, s.SimulateResponse),
    "analyze": ("/analyze", handlers.analyze, s.AnalyzeResponse),
    "strength": ("/strength", handlers.strength, s.StrengthResponse),
    "gains": ("/gains", handlers.gains, s.GainsResponse),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def dispatch(name: str, req, server: str | None):
    path, local, model = ROUTES[name]
    if server is None:
        return local(req)
    import httpx

    resp = httpx.post(server.rstrip("/") + path, json=req.model_dump(mode="json"), timeout=None)
    if resp.status_code == 200:
        return model.model_validate(resp.json())
    detail = resp.json().get("detail", resp.text) if resp.headers.get("content-type", "").startswith("application/json") else resp.text
    if isinstance(detail, dict) and detail.get("kind") == "nonconvergence":
        raise handlers.ConvergenceError(detail.get("message", ""))
    if isinstance(detail, dict):
        raise handlers.InputError(detail.get("message", ""), detail.get("violations", []))
    raise handlers.InputError(str(detail))


def _emit(text: str, out: str | None):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _opt(v) -> str:
    """Header rendering of an optional setting."""
    return "none" if v is None else io.fmt(v)


def _grid(start: float, stop: float, step: float) -> list[float]:
    if step <= 0:
        raise UsageError("sweep step must be positive")
    if stop < start:
        return []
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 12) for k in range(count)]


def cmd_simulate(args) -> int:
    req = s.SimulateRequest(theta_deg=args.theta, eta=args.eta, vis=args.vis, trials=args.trials, seed=args.seed)
    res = dispatch("simulate", req, args.server)
    header = [
        f"bellstat {__version__} simulate",
        f"theta_deg: {io.fmt(res.theta_deg)} eta: {io.fmt(res.eta)} vis: {io.fmt(res.vis)}",
        f"trials: {len(res.trials)} seed: {res.seed}",
        "angles_deg: " + " ".join(io.fmt(a) for a in res.angles_deg),
        f"chsh_value: {io.fmt(res.chsh_value)}",
    ]
    sc = Scenario.chsh()
    sd = handlers.to_settings(sc, res.settings)
    _emit(io.format_trials(sc, sd, np.asarray(res.trials, dtype=np.int64).reshape(-1, 4), header), args.out)
    if args.out not in (None, "-"):
        for line in header:
            print(f"# {line}")
    return EXIT_OK


def _read_prior(args) -> s.DistributionModel | None:
    if args.prime is None:
        if args.prime_weight:
            raise UsageError("--prime-weight needs --prime")
        return None
    return handlers.distribution_model(io.read_distribution(args.prime))


def cmd_analyze(args) -> int:
    tf = io.read_trials(args.trials_file)
    protocols = [p.strip() for p in args.protocols.split(",") if p.strip()]
    bad = set(protocols) - {"pbr", "mart", "sd"}
    if bad or not protocols:
        raise UsageError(f"--protocols takes a subset of pbr,mart,sd; got {args.protocols!r}")
    functional = handlers.functional_model(io.read_functional(args.bell)) if args.bell else None
    req = s.AnalyzeRequest(
        scenario=handlers.scenario_model(tf.scenario),
        settings=[float(v) for v in tf.setting_dist.probs.reshape(-1)],
        trials=[tuple(int(v) for v in r) for r in tf.records],
        protocols=protocols, functional=functional, block_size=args.block_size,
        prior=_read_prior(args), prior_weight=args.prime_weight or 0.0, half_life=args.half_life,
        significance=args.significance, no_signaling=not args.no_ns,
    )
    res = dispatch("analyze", req, args.server)
    header = [
        f"analyze {Path(args.trials_file).name} trials: {len(res.n)}",
        f"protocols: {','.join(protocols)} block_size: {_opt(res.block_size)}",
        f"no_signaling: {not args.no_ns} half_life: {_opt(args.half_life)} significance: {_opt(args.significance)}",
        f"prime: {Path(args.prime).name if args.prime else 'none'} prime_weight: {_opt(args.prime_weight)}",
        f"bell: {Path(args.bell).name if args.bell else 'chsh'}",
    ] + [f"input: {c}" for c in tf.comments]
    cols = ["n", "log2p_pbr", "log2p_mart", "log2p_sd", "I_hat", "I_tilde", "sigma"]
    series = [res.n, res.log2p_pbr, res.log2p_mart, res.log2p_sd, res.I_hat, res.I_tilde, res.sigma]
    rows = ([str(k)] + [io.fmt(col[r]) if col is not None else "" for col in series[1:]]
            for r, k in enumerate(res.n))
    _emit(io.format_csv(cols, rows, header), args.out)
    return EXIT_OK


def cmd_strength(args) -> int:
    q = io.read_distribution(args.dist_file)
    req = s.StrengthRequest(distribution=handlers.distribution_model(q), tol=args.tol, max_iter=args.max_iter)
    res = dispatch("strength", req, args.server)
    print(f"strength_bits: {io.fmt(res.strength_bits)}")
    print(f"epsilon: {io.fmt(res.epsilon)}")
    print(f"iterations: {res.iterations}")
    print(f"converged: {res.converged}")
    if args.dump:
        lr = handlers.to_distribution(res.lr_distribution)
        io.write_distribution(args.dump, lr, [f"closest LR distribution to {Path(args.dist_file).name}",
                                              f"strength_bits: {io.fmt(res.strength_bits)}"])
    if not res.converged:
        print("error: KL minimization hit the iteration cap", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_gains(args) -> int:
    points = []
    if args.sweep_theta is not None:
        eta = 1.0 if args.eta is None else args.eta
        vis = 1.0 if args.vis is None else args.vis
        points += [s.GainPoint(theta_deg=t, eta=eta, vis=vis) for t in _grid(*args.sweep_theta)]
    if args.sweep_eta_vis is not None:
        e0, e1, de, v0, v1, dv = args.sweep_eta_vis
        theta = 45.0 if args.theta is None else args.theta
        points += [s.GainPoint(theta_deg=theta, eta=e, vis=v) for e in _grid(e0, e1, de) for v in _grid(v0, v1, dv)]
    if args.sweep_theta is None and args.sweep_eta_vis is None:
        if args.theta is None:
            raise UsageError("give --sweep-theta, --sweep-eta-vis, or a single point with --theta")
        points.append(s.GainPoint(theta_deg=args.theta, eta=1.0 if args.eta is None else args.eta,
                                  vis=1.0 if args.vis is None else args.vis))
    if not points:
        raise UsageError("sweep grid is empty")
    res = dispatch("gains", s.GainsRequest(points=points), args.server)
    header = [
        f"gains points: {len(points)}",
        f"sweep_theta: {' '.join(io.fmt(v) for v in args.sweep_theta) if args.sweep_theta else 'none'}",
        f"sweep_eta_vis: {' '.join(io.fmt(v) for v in args.sweep_eta_vis) if args.sweep_eta_vis else 'none'}",
        f"theta: {_opt(args.theta)} eta: {_opt(args.eta)} vis: {_opt(args.vis)}",
        "settings: uniform; angles optimized per point",
    ]
    cols = ["theta_deg", "eta", "vis", "chsh_value", "G_SD", "G_mart", "strength"]
    rows = ([r.theta_deg, r.eta, r.vis, r.chsh_value, r.g_sd, r.g_mart, r.strength] for r in res.rows)
    _emit(io.format_csv(cols, rows, header), args.out)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("bellstat.service.app:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bellstat", description="Valid running p-values for Bell tests.")
    p.add_argument("--version", action="version", version=f"bellstat {__version__}")
    p.add_argument("--server", help="send requests to a running bellstat service at this URL")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("simulate", help="sample a CHSH trial file")
    sp.add_argument("--theta", type=float, required=True, help="state angle in degrees")
    sp.add_argument("--eta", type=float, default=1.0)
    sp.add_argument("--vis", type=float, default=1.0)
    sp.add_argument("--trials", type=int, required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="running log2 p-values for a trial file")
    sp.add_argument("trials_file")
    sp.add_argument("--protocols", default="pbr,mart,sd")
    sp.add_argument("--block-size", type=int)
    sp.add_argument("--prime", help="distribution file used as prior")
    sp.add_argument("--prime-weight", type=float, help="prior weight in trial-equivalents")
    sp.add_argument("--half-life", type=float, help="forgetting half-life in trials")
    sp.add_argument("--significance", type=float, help="use R = 1 while n*S is below this")
    sp.add_argument("--no-ns", action="store_true", help="do not impose no-signaling on estimates")
    sp.add_argument("--bell", help="Bell functional file (default: CHSH)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("strength", help="statistical strength of a distribution")
    sp.add_argument("dist_file")
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--max-iter", type=int, default=10**6, help="EM iteration cap")
    sp.add_argument("--dump", help="write the closest LR distribution here")
    sp.set_defaults(func=cmd_strength)

    sp = sub.add_parser("gains", help="gain rates over a parameter sweep")
    sp.add_argument("--sweep-theta", type=float, nargs=3, metavar=("START", "STOP", "STEP"))
    sp.add_argument("--sweep-eta-vis", type=float, nargs=6,
                    metavar=("ETA0", "ETA1", "DETA", "VIS0", "VIS1", "DVIS"))
    sp.add_argument("--theta", type=float)
    sp.add_argument("--eta", type=float)
    sp.add_argument("--vis", type=float)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gains)

    sp = sub.add_parser("serve", help="run the HTTP service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    from pydantic import ValidationError

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.FormatError, handlers.InputError, ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        for v in getattr(exc, "violations", []):
            print(f"  {v}", file=sys.stderr)
        return EXIT_INPUT
    except handlers.ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
