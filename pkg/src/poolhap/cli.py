"""Command-line interface: ``poolhap <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import EnumerationOverflowError, PoolhapError
from .model import ConfigurationMatrix, preprocess

log = logging.getLogger("poolhap")

RESOLVED_CONFIG = "config.resolved.txt"


class CLIError(Exception):
    pass


# ---------------------------------------------------------------------------
# config files


def read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Keys may use dashes or underscores."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise CLIError(f"{path}:{lineno}: expected key = value")
        k, v = (t.strip() for t in s.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _apply_config(parser: argparse.ArgumentParser, argv, config: dict[str, str]) -> argparse.Namespace:
    ns = parser.parse_args(argv)
    sub = _subparser_for(parser, ns)
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in config.items():
        if k not in actions:
            raise CLIError(f"unknown config key {k!r} for this command")
        act = actions[k]
        if isinstance(act, argparse._StoreTrueAction):
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        else:
            defaults[k] = act.type(v) if act.type else v
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _subparser_for(parser, ns):
    p = parser
    for dest in ("command", "action"):
        name = getattr(ns, dest, None)
        if name is None:
            break
        for act in p._actions:
            if isinstance(act, argparse._SubParsersAction) and name in act.choices:
                p = act.choices[name]
                break
    return p


def _echo_config(args, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    skip = {"func", "config"}
    lines = [f"{k} = {v}" for k, v in sorted(vars(args).items()) if k not in skip and v is not None]
    (out_dir / RESOLVED_CONFIG).write_text(f"# poolhap {__version__}\n" + "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# helpers


def _csv_floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _pair(s: str) -> tuple[float, float]:
    v = _csv_floats(s)
    if len(v) != 2:
        raise CLIError(f"expected shape,scale but got {s!r}")
    return v[0], v[1]


def _load(args):
    from .io import load_dataset, read_haplotypes, read_subset_matrix
    haps = read_haplotypes(args.haplotypes)
    matrix = read_subset_matrix(args.subsets, haps) if getattr(args, "subsets", None) else None
    return load_dataset(args.pools, haps, matrix)


def _reduced(matrix: ConfigurationMatrix) -> ConfigurationMatrix:
    return preprocess(matrix, np.zeros(matrix.R, dtype=np.int64), 0)[0]


def _bases_from_file(path, dataset):
    from .markov_basis import import_basis
    basis = import_basis(path)
    out = {}
    for pool in dataset.pools:
        red = pool.reduced[0]
        if red.key not in out:
            out[red.key] = import_basis(path, red) if basis.matrix.H == red.H else basis
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    from .io import write_haplotypes, write_pool_table, write_truth
    from .simulate import TimeSeriesSimConfig, simulate_multi_marker, simulate_shared, simulate_timeseries
    out = Path(args.out_dir)
    rng = np.random.default_rng(args.seed)
    if args.kind == "shared":
        if args.markers:
            p, data, _ = simulate_multi_marker(args.markers, args.H, args.N, args.n, args.conc, rng)
        else:
            p, data, _ = simulate_shared(args.H, args.N, args.n, args.conc, rng)
        write_truth(out / "truth.tsv", ["shared"], data.haplotypes, p[None])
        names = [f"m{k + 1}" for k in range(data.marker_count)]
        write_pool_table(out / "pools.tsv", data, names)
    else:
        cfg = TimeSeriesSimConfig(H=args.H, N=args.N, n=args.n, dm_conc=args.dm_conc)
        truth, data = simulate_timeseries(cfg, rng)
        ids = [p.pool_id for p in data.pools]
        write_truth(out / "truth.tsv", ids, data.haplotypes, truth.pool_frequencies)
        grid = np.linspace(0.0, cfg.horizon, 201)
        write_truth(out / "truth_grid.tsv", [repr(float(t)) for t in grid], data.haplotypes, truth.frequencies(grid))
        names = [f"m{k + 1}" for k in range(data.marker_count)]
        write_pool_table(out / "pools.tsv", data, names, ["t"])
    write_haplotypes(out / "haplotypes.txt", data.haplotypes)
    return 0


def cmd_ligate(args) -> int:
    from .io import read_pool_table, write_haplotypes
    from .ligation import LigationConfig, partition_ligation
    _, sizes, Y, _, _, _ = read_pool_table(args.pools)
    cfg = LigationConfig(block_size=args.block_size, threshold=args.threshold, method=args.method,
                         alpha=args.alpha, cap=args.cap, chains=args.chains, burn_in=args.burn_in,
                         iters=args.iters, seed=args.seed, workers=args.threads)
    res = partition_ligation(Y, sizes, cfg)
    out = Path(args.out_dir)
    write_haplotypes(out / "haplotypes.txt", res.haplotypes)
    blocks = [{"markers": b["markers"], "estimates": b["estimates"]} for lvl in res.levels for b in lvl]
    _write_json(out / "blocks.json", blocks)
    return 0


def _basis_matrix(args) -> ConfigurationMatrix:
    from .io import read_haplotypes, read_subset_matrix
    from .model import build_allele_count_matrix
    if not getattr(args, "haplotypes", None):
        raise CLIError("--haplotypes is required")
    haps = read_haplotypes(args.haplotypes)
    if getattr(args, "subsets", None):
        return _reduced(read_subset_matrix(args.subsets, haps))
    return _reduced(build_allele_count_matrix(haps))


def cmd_markov_basis(args) -> int:
    from .markov_basis import compute_markov_basis, disconnected_fibers, export_basis, import_basis
    if args.action == "compute":
        a = _basis_matrix(args)
        basis = compute_markov_basis(a, seed=args.seed)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        export_basis(basis, out / "basis.txt")
        print(f"{len(basis)} moves written to {out / 'basis.txt'}")
        return 0
    if args.action == "import":
        a = _basis_matrix(args) if args.haplotypes else None
        basis = import_basis(args.basis, a)
        print(f"{len(basis)} moves valid for a {basis.matrix.R}x{basis.matrix.H} matrix")
        return 0
    a = _basis_matrix(args) if args.haplotypes else None
    basis = import_basis(args.basis, a)
    bad = disconnected_fibers(basis.matrix, basis, args.max_n)
    result = {"max_n": args.max_n, "moves": len(basis), "disconnected": bad, "connected": not bad}
    print(json.dumps(result))
    return 0 if not bad else 3


def cmd_infer(args) -> int:
    data = _load(args)
    bases = _bases_from_file(args.basis, data) if args.basis else None
    out = Path(args.out_dir)
    if args.model == "hier":
        from .hier_gp import HierConfig, Hyperpriors, run_hier_sampler
        hp = Hyperpriors(s=_pair(args.prior_s), tau=_pair(args.prior_tau), sigma=_pair(args.prior_sigma))
        cfg = HierConfig(variant=args.method, chains=args.chains, burn_in=args.burn_in, iters=args.iters,
                         seed=args.seed, epsilon=args.stabilize_eps, max_solutions=args.max_solutions,
                         max_seconds=args.max_seconds)
        draws = run_hier_sampler(data, cfg, bases, hp)
        draws.save(out / "draws.npz")
        return 0
    from .samplers import SamplerConfig, run_inference
    cfg = SamplerConfig(chains=args.chains, burn_in=args.burn_in, iters=args.iters, seed=args.seed,
                        method=args.method, epsilon=args.stabilize_eps, max_solutions=args.max_solutions,
                        max_seconds=args.max_seconds, updates_per_iter=args.updates_per_iter, workers=args.threads)
    draws = run_inference(data, args.alpha, cfg, bases)
    draws.to_tsv(out / "draws.tsv")
    _write_json(out / "sampler_stats.json",
                {k: v for k, v in draws.stats.items() if k not in ("stay", "final_latents")})
    return 0


def cmd_diagnose(args) -> int:
    from .diagnostics import credible_coverage, ess, rhat, tvd
    from .io import read_truth
    from .samplers import PosteriorDraws
    draws = PosteriorDraws.from_tsv(args.draws)
    out = Path(args.out_dir)
    levels = _csv_floats(args.levels)
    mean = draws.mean()
    lines = ["haplotype\tmean\tess\trhat"]
    for h, hap in enumerate(draws.haplotypes):
        x = draws.p[:, :, h]
        lines.append(f"{hap}\t{mean[h]!r}\t{ess(x)!r}\t{rhat(x)!r}")
    (out / "summary.tsv").write_text("\n".join(lines) + "\n")
    report = {"min_ess": min(ess(draws.p[:, :, h]) for h in range(draws.p.shape[2])),
              "max_rhat": max(rhat(draws.p[:, :, h]) for h in range(draws.p.shape[2]))}
    if args.truth:
        _, thaps, F = read_truth(args.truth)
        # truth may list haplotypes outside the input list; distance runs over the union
        union = sorted(set(thaps) | set(draws.haplotypes))
        est = np.array([mean[draws.haplotypes.index(u)] if u in draws.haplotypes else 0.0 for u in union])
        tru = np.array([F[0, thaps.index(u)] if u in thaps else 0.0 for u in union])
        report["tvd"] = tvd(est, tru)
        t_in = np.array([F[0, thaps.index(u)] if u in thaps else 0.0 for u in draws.haplotypes])
        cov = credible_coverage(draws.flat(), t_in, levels)
        (out / "coverage.tsv").write_text("level\tcoverage\n" + "".join(f"{k!r}\t{v!r}\n" for k, v in cov.items()))
        report["coverage"] = {str(k): v for k, v in cov.items()}
    _write_json(out / "diagnostics.json", report)
    print(json.dumps(report, default=float))
    return 0


def cmd_predict(args) -> int:
    from .hier_gp import HierDraws, posterior_predict, predictive_summary
    draws = HierDraws.load(args.draws)
    if args.times:
        times = np.array(_csv_floats(args.times))
    else:
        times = np.linspace(float(draws.times.min()), float(draws.times.max()), args.grid)
    pred = posterior_predict(draws, times, np.random.default_rng(args.seed))
    predictive_summary(pred, times, draws.haplotypes, Path(args.out_dir) / "predictive.tsv", args.level)
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, out=True):
    p.add_argument("--config", help="key = value file of option defaults")
    if out:
        p.add_argument("--out-dir", default=".", help="output directory (default: current)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker processes for independent chains")


def _budgets(p: argparse.ArgumentParser):
    p.add_argument("--max-solutions", type=int, default=10 ** 7, help="enumeration budget per pool")
    p.add_argument("--max-seconds", type=float, default=60.0, help="enumeration time budget per pool")
    p.add_argument("--stabilize-eps", type=float, default=1e-9, help="diagonal term of the Gaussian covariance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poolhap", description="Haplotype frequency inference from pooled allele counts.")
    parser.add_argument("--version", action="version", version=f"poolhap {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate synthetic pooled data")
    sim.add_argument("kind", choices=["shared", "timeseries"])
    sim.add_argument("--H", type=int, default=8)
    sim.add_argument("--N", type=int, default=20)
    sim.add_argument("--n", type=int, default=20)
    sim.add_argument("--conc", type=float, default=0.4, help="Dirichlet concentration (shared)")
    sim.add_argument("--markers", type=int, default=0,
                     help="draw H random haplotypes over this many markers (shared)")
    sim.add_argument("--dm-conc", type=float, default=200.0, help="Dirichlet-multinomial concentration (timeseries)")
    _common(sim)
    sim.set_defaults(func=cmd_simulate)

    lig = sub.add_parser("ligate", help="candidate haplotypes by partition ligation")
    lig.add_argument("--pools", required=True, help="pool table of per-marker allele counts")
    lig.add_argument("--block-size", type=int, default=4)
    lig.add_argument("--threshold", type=float, default=0.01)
    lig.add_argument("--method", choices=["approx", "exact", "latent"], default="approx")
    lig.add_argument("--alpha", type=float, default=1.0)
    lig.add_argument("--cap", type=int, default=256)
    lig.add_argument("--chains", type=int, default=1)
    lig.add_argument("--burn-in", type=int, default=300)
    lig.add_argument("--iters", type=int, default=300)
    _common(lig)
    lig.set_defaults(func=cmd_ligate)

    mb = sub.add_parser("markov-basis", help="compute, import or verify Markov bases")
    mbs = mb.add_subparsers(dest="action", required=True)
    for name in ("compute", "import", "verify"):
        q = mbs.add_parser(name)
        q.add_argument("--haplotypes")
        q.add_argument("--subsets", help="subset-matrix file; default is the allele-count matrix")
        if name != "compute":
            q.add_argument("--basis", required=True)
        if name == "verify":
            q.add_argument("--max-n", type=int, default=8)
        _common(q)
        q.set_defaults(func=cmd_markov_basis)

    inf = sub.add_parser("infer", help="posterior sampling of haplotype frequencies")
    inf.add_argument("--pools", required=True)
    inf.add_argument("--haplotypes", required=True)
    inf.add_argument("--subsets", help="subset-matrix file; default is the allele-count matrix")
    inf.add_argument("--model", choices=["shared", "hier"], default="shared")
    inf.add_argument("--method", choices=["exact", "approx", "latent"], default="latent")
    inf.add_argument("--alpha", type=float, default=0.4)
    inf.add_argument("--chains", type=int, default=5)
    inf.add_argument("--burn-in", type=int, default=500)
    inf.add_argument("--iters", type=int, default=500)
    inf.add_argument("--updates-per-iter", type=int, default=None, help="latent updates per iteration (default 5 x total n)")
    inf.add_argument("--basis", help="Markov basis file to use instead of computing one")
    inf.add_argument("--prior-s", default="3,3", help="inverse-gamma shape,scale of the GP scales (hier)")
    inf.add_argument("--prior-tau", default="3,5", help="inverse-gamma shape,scale of the GP timescales (hier)")
    inf.add_argument("--prior-sigma", default="3,1", help="inverse-gamma shape,scale of the noise level (hier)")
    _budgets(inf)
    _common(inf)
    inf.set_defaults(func=cmd_infer)

    dg = sub.add_parser("diagnose", help="ESS, R-hat, TVD and coverage of posterior draws")
    dg.add_argument("--draws", required=True)
    dg.add_argument("--truth")
    dg.add_argument("--levels", default="0.5,0.8,0.9,0.95")
    _common(dg)
    dg.set_defaults(func=cmd_diagnose)

    pr = sub.add_parser("predict", help="predictive frequency bands from hierarchical draws")
    pr.add_argument("--draws", required=True)
    pr.add_argument("--times", help="comma-separated times (default: grid over the observed range)")
    pr.add_argument("--grid", type=int, default=101)
    pr.add_argument("--level", type=float, default=0.95)
    _common(pr)
    pr.set_defaults(func=cmd_predict)
    return parser


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            args = _apply_config(parser, argv, read_config(args.config))
        if hasattr(args, "out_dir"):
            _echo_config(args, Path(args.out_dir))
        return args.func(args)
    except EnumerationOverflowError as exc:
        return _error("EnumerationOverflowError", str(exc), 4)
    except PoolhapError as exc:
        return _error(type(exc).__name__, str(exc), 2)
    except (CLIError, ValueError, OSError) as exc:
        return _error(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
