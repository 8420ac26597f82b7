"""Command-line front end: batch experiments over seeded generators.

Subcommands build cell configurations, pack and uniformize them, run walk
ensembles, evaluate the comparison metrics over radius/window grids, and run
the verification suite.  Exit status: 0 on success, 1 on a failed assertion
or verdict, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys

import numpy as np

from .compare import (
    CompareError,
    ExperimentConfig,
    compare_packing,
    compare_uniformization,
    covariance_gauge,
    packing_gauge,
    run_verify_suite,
    uniformization_gauge,
    verify_summary_text,
)


def _build_config(exp: ExperimentConfig, seed):
    from . import generators as gen

    spec = exp.generator_spec(seed)
    if spec.kind == "poisson-voronoi":
        return gen.poisson_voronoi(spec)
    if spec.kind == "hex-percolation":
        return gen.hex_percolation(spec)
    return gen.lattice_config(spec.lattice_kind, spec.window)


def _build_packing(cfg):
    from .circle_pack import FIXED, natural_boundary_radii, pack
    from .generators import config_triangulation

    tri = config_triangulation(cfg)
    root = int(np.argmin(np.abs(cfg.positions)))
    radii = natural_boundary_radii(tri, cfg.positions)
    return pack(tri, FIXED, boundary_radii=radii, root=root), root


def _build_uniformization(cfg, exp, side):
    from .surface import build_M_S, build_surface, uniformize_approx
    from .generators import config_triangulation

    surface = build_surface(config_triangulation(cfg))
    portion = build_M_S(cfg, surface, (0.0, 0.0, side))
    if portion.empty:
        raise CompareError(f"no disk-like window of side {side}: "
                           f"{portion.diagnostic}")
    return uniformize_approx(portion, exp.mesh_level), portion


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _out(exp, args, *parts):
    base = args.out or exp.out
    return os.path.join(base, *parts)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_generate(exp, args):
    for seed in exp.seeds:
        cfg = _build_config(exp, seed)
        _write(_out(exp, args, f"config_seed{seed}.txt"), cfg.to_text())
        print(f"seed {seed}: {len(cfg.cells)} cells, "
              f"carrier {cfg.carrier}")
    return 0


def _cmd_pack(exp, args):
    for seed in exp.seeds:
        cfg = _build_config(exp, seed)
        packing, root = _build_packing(cfg)
        _write(_out(exp, args, f"packing_seed{seed}.txt"), packing.to_text())
        packing.to_svg(_out(exp, args, f"packing_seed{seed}.svg"))
        res = float(np.nanmax(packing.tangency_residuals()))
        print(f"seed {seed}: packed {packing.tri.n_vertices} circles, "
              f"root {root}, tangency residual {res:.3g}")
    return 0


def _cmd_walk(exp, args):
    from .walks import dubejko_weights, walk_statistics

    status = 0
    for seed in exp.seeds:
        cfg = _build_config(exp, seed)
        packing, root = _build_packing(cfg)
        g = dubejko_weights(packing)
        exit_r = exp.exit_radius
        if math.isnan(exit_r):
            exit_r = exp.window / 2.0 - 2.0
        rep = walk_statistics(g, root, n_walks=exp.n_walks,
                              n_steps=exp.n_steps, seed=seed,
                              exit_radius=exit_r)
        _write(_out(exp, args, f"walks_seed{seed}.csv"), rep.to_csv())
        _write(_out(exp, args, f"walk_report_seed{seed}.txt"), rep.to_text())
        print(f"seed {seed}: drift {rep.drift_sigmas:.2f} sigma, "
              f"msd r2 {rep.msd_r2:.4f}")
        if not rep.drift_sigmas < 3.0:
            status = 1
    return status


def _cmd_uniformize(exp, args):
    side = 2.0 ** (max(exp.k_grid) + 1)
    side = min(side, exp.window * 0.75)
    for seed in exp.seeds:
        cfg = _build_config(exp, seed)
        dmap, portion = _build_uniformization(cfg, exp, side)
        rows = ["vertex,x,y"]
        for v in portion.vertices:
            z = dmap.vertex_image(int(v))
            rows.append(f"{int(v)},{z.real:.12g},{z.imag:.12g}")
        _write(_out(exp, args, f"images_seed{seed}.csv"),
               "\n".join(rows) + "\n")
        dmap.to_svg(_out(exp, args, f"embedding_seed{seed}.svg"))
        print(f"seed {seed}: mapped {len(portion.vertices)} vertices, "
              f"window side {portion.side}")
    return 0


def _cmd_compare(exp, args):
    rows = []
    passes = []
    for seed in exp.seeds:
        cfg = _build_config(exp, seed)
        if exp.pipeline == "pack":
            packing, _ = _build_packing(cfg)
            gauge = packing_gauge(cfg, packing, exp.calibration_inner,
                                  exp.calibration_outer)
            rep = compare_packing(
                cfg, packing, gauge, exp.radii,
                ratio_threshold=exp.ratio_threshold,
                calibration=(exp.calibration_inner, exp.calibration_outer),
                seed=seed)
        elif exp.pipeline == "uniformize":
            side = 2.0 ** (max(exp.k_grid) + 1)
            dmap, _ = _build_uniformization(cfg, exp, side)
            gauge = uniformization_gauge(cfg, dmap, exp.calibration_outer,
                                         inner=exp.calibration_inner)
            rep = compare_uniformization(
                cfg, dmap, gauge, exp.k_grid,
                ratio_threshold=exp.ratio_threshold,
                calibration_radius=exp.calibration_outer,
                calibration_inner=exp.calibration_inner, seed=seed)
        elif exp.pipeline == "walk":
            from .walks import dubejko_weights, walk_statistics

            packing, root = _build_packing(cfg)
            g = dubejko_weights(packing)
            exit_r = exp.exit_radius
            if math.isnan(exit_r):
                exit_r = exp.window / 2.0 - 2.0
            wrep = walk_statistics(g, root, n_walks=exp.n_walks,
                                   n_steps=exp.n_steps, seed=seed,
                                   exit_radius=exit_r)
            gauge = covariance_gauge(wrep)
            dev = float(np.linalg.norm(gauge.A - np.eye(2), 2))
            from .compare import ComparisonReport

            rep = ComparisonReport(
                "walk-gauge",
                [{"seed": seed, "metric": "gauge-deviation", "x": 0,
                  "value": dev,
                  "backlink": f"seed={seed};compare.covariance_gauge"}],
                gauge=gauge, verdicts={"gauge-near-identity": dev < 0.05},
                provenance={"seed": seed})
        else:
            raise CompareError(
                f"pipeline {exp.pipeline!r} has no comparison mode")
        rows.extend(rep.rows)
        passes.append(rep.passed)
        _write(_out(exp, args, f"report_seed{seed}.txt"), rep.to_text())
        print(f"seed {seed}: {'pass' if rep.passed else 'FAIL'} "
              f"({', '.join(k for k, v in rep.verdicts.items() if not v)})"
              if not rep.passed else f"seed {seed}: pass")
    header = "seed,metric,x,value,backlink"
    body = [header] + [
        f"{r['seed']},{r['metric']},{r['x']:.9g},{r['value']:.12g},"
        f"{r['backlink']}" for r in rows]
    _write(_out(exp, args, "compare.csv"), "\n".join(body) + "\n")
    majority = sum(passes) * 2 > len(passes)
    print(f"{sum(passes)}/{len(passes)} seeds pass")
    return 0 if majority else 1


def _cmd_verify(exp, args):
    scope = args.scope or exp.scope
    summary = run_verify_suite(scope=scope, budget=exp.budget)
    text = verify_summary_text(summary)
    _write(_out(exp, args, "verify.txt"), text)
    print(text, end="")
    return 0 if summary["status"] == "pass" else 1


def _cmd_report(exp, args):
    path = _out(exp, args, "compare.csv")
    if not os.path.exists(path):
        print(f"no comparison table at {path}; run 'compare' first",
              file=sys.stderr)
        return 2
    by_seed = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            key = (row["seed"], row["metric"])
            by_seed.setdefault(key, []).append(
                (float(row["x"]), float(row["value"])))
    lines = ["aggregate report"]
    ok = True
    for (seed, metric), vals in sorted(by_seed.items()):
        vals.sort()
        series = [v for _, v in vals]
        dec = all(b < a for a, b in zip(series, series[1:]))
        ratio = series[-1] < exp.ratio_threshold * series[0] \
            if series[0] > 0 else True
        ok &= dec and ratio
        lines.append(f"seed {seed} metric {metric} "
                     f"first {series[0]:.6g} last {series[-1]:.6g} "
                     f"decreasing {'yes' if dec else 'NO'} "
                     f"ratio {'yes' if ratio else 'NO'}")
    text = "\n".join(lines) + "\n"
    _write(_out(exp, args, "report.txt"), text)
    print(text, end="")
    return 0 if ok else 1


_COMMANDS = {
    "generate": _cmd_generate,
    "pack": _cmd_pack,
    "walk": _cmd_walk,
    "uniformize": _cmd_uniformize,
    "compare": _cmd_compare,
    "verify": _cmd_verify,
    "report": _cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cellpack",
        description="batch experiments on random cell configurations")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", metavar="PATH",
                        help="experiment config file (flat key = value)")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="override: run this single seed")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--scope", metavar="NAME",
                        help="verification scope (verify command)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        if args.config:
            exp = ExperimentConfig.from_file(args.config)
        else:
            exp = ExperimentConfig()
        if args.seed is not None:
            exp.seeds = [args.seed]
        return _COMMANDS[args.command](exp, args)
    except CompareError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AssertionError as exc:
        print(f"assertion failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
