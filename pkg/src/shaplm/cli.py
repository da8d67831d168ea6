"""Command line interface.

Subcommands::

    shaplm simulate --out DIR [--config FILE] [--seed N] [--KEY VALUE ...]
    shaplm fit --data FILE --out DIR [--mode shaplm|psccm] [--config FILE]
               [--mesh FILE] [--KEY VALUE ...]
    shaplm eval --fit FILE --truth FILE [--out FILE]
    shaplm bench --out DIR [--config FILE] [--KEY VALUE ...]

Configuration is JSON; any scalar config key can be overridden on the
command line as ``--key value`` (value parsed as JSON when possible).
Exit codes: 0 success, 1 usage or input errors, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .bench import BenchConfig, run_benchmark, write_bench_csv
from .geometry import load_mesh
from .pipeline import Dataset, ForestConfig, ShaplmFit, forest_fit, psccm_fit
from .metrics import mse_beta, mse_g, rand_index
from .simulate import ScenarioSpec, gen_scenario, write_data_csv, write_truth_csv

SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_overrides(tokens) -> dict:
    """Trailing ``--key value`` pairs; values go through JSON when they can."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise UsageError(f"expected --key value pairs, got {tok!r}")
        key = tok[2:].replace("-", "_")
        if i + 1 >= len(tokens):
            raise UsageError(f"missing value for {tok}")
        raw = tokens[i + 1]
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
        i += 2
    return out


def _load_json_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must be a JSON object")
    return cfg


def _forest_fields() -> set:
    return {f.name for f in dataclasses.fields(ForestConfig) if f.name != "mesh"}


def _forest_from_dict(d: dict) -> ForestConfig:
    extra = set(d) - _forest_fields()
    if extra:
        raise UsageError(f"unknown fit config keys: {sorted(extra)}")
    kwargs = dict(d)
    if "domain" in kwargs and kwargs["domain"] is not None:
        kwargs["domain"] = tuple(kwargs["domain"])
    try:
        return ForestConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad fit config: {exc}") from exc


def _forest_to_dict(config: ForestConfig) -> dict:
    out = {}
    for f in dataclasses.fields(ForestConfig):
        if f.name == "mesh":
            continue
        v = getattr(config, f.name)
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def read_data_csv(path) -> Dataset:
    """Fit input CSV: columns x, y, resp, x1..xp."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UsageError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:3] != ["x", "y", "resp"]:
            raise UsageError(f"{path}: header must start with x,y,resp")
        p = len(header) - 3
        if p < 1:
            raise UsageError(f"{path}: need at least one covariate column")
        for k in range(p):
            if header[3 + k] != f"x{k + 1}":
                raise UsageError(
                    f"{path}: covariate columns must be x1..x{p}, got {header[3 + k]!r}"
                )
        loc, X, y = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise UsageError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from exc
            loc.append(vals[:2])
            y.append(vals[2])
            X.append(vals[3:])
    if not y:
        raise UsageError(f"{path}: no data rows")
    try:
        return Dataset(np.array(loc), np.array(X), np.array(y))
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def read_truth_csv(path):
    """Truth CSV: x, y, resp, x1..xp, beta1..betap, g, label1..labelp."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise UsageError(f"{path}: empty file") from None
        cols = {name: i for i, name in enumerate(header)}
        for req in ("x", "y", "g"):
            if req not in cols:
                raise UsageError(f"{path}: missing column {req!r}")
        p = 0
        while f"beta{p + 1}" in cols:
            p += 1
        if p == 0:
            raise UsageError(f"{path}: missing beta columns")
        for k in range(p):
            if f"label{k + 1}" not in cols:
                raise UsageError(f"{path}: missing column label{k + 1}")
        loc, beta, g, labels = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise UsageError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                loc.append([float(row[cols["x"]]), float(row[cols["y"]])])
                beta.append([float(row[cols[f"beta{k + 1}"]]) for k in range(p)])
                g.append(float(row[cols["g"]]))
                labels.append([int(float(row[cols[f"label{k + 1}"]])) for k in range(p)])
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from exc
    if not g:
        raise UsageError(f"{path}: no data rows")
    return np.array(loc), np.array(beta), np.array(g), np.array(labels)


def _fit_payload(fit: ShaplmFit) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "method": fit.method,
        "n": int(fit.locations.shape[0]),
        "p": int(fit.beta.shape[1]),
        "lambda": fit.lambda_,
        "rho": fit.rho_,
        "converged": fit.converged,
        "kkt_residual": fit.kkt_residual,
        "n_iter": fit.n_iter,
        "mbic": [list(row) for row in fit.mbic_table],
        "bic": [list(row) for row in fit.bic_table] if fit.bic_table else None,
        "locations": fit.locations.tolist(),
        "beta": fit.beta.tolist(),
        "g": fit.g.tolist(),
        "clusters": [c.tolist() for c in fit.clusters],
        "intercept_clusters": (
            fit.intercept_clusters.tolist()
            if fit.intercept_clusters is not None
            else None
        ),
        "diagnostics": fit.diagnostics,
    }


def _write_clusters_csv(fit: ShaplmFit, path) -> None:
    p = len(fit.clusters)
    header = ["x", "y"] + [f"cluster{k + 1}" for k in range(p)]
    if fit.intercept_clusters is not None:
        header.append("cluster_intercept")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(fit.locations.shape[0]):
            row = [repr(float(fit.locations[i, 0])), repr(float(fit.locations[i, 1]))]
            row += [str(int(fit.clusters[k][i])) for k in range(p)]
            if fit.intercept_clusters is not None:
                row.append(str(int(fit.intercept_clusters[i])))
            w.writerow(row)


def _write_ghat_grid(fit: ShaplmFit, path, resolution=50) -> None:
    mesh = fit.spline.mesh
    xmin, ymin = mesh.vertices.min(axis=0)
    xmax, ymax = mesh.vertices.max(axis=0)
    gx = np.linspace(xmin, xmax, resolution)
    gy = np.linspace(ymin, ymax, resolution)
    xx, yy = np.meshgrid(gx, gy)
    pts = np.column_stack((xx.ravel(), yy.ravel()))
    vals = fit.spline(pts)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gx", "gy", "ghat"])
        for (px, py), v in zip(pts, vals):
            w.writerow([repr(float(px)), repr(float(py)), repr(float(v))])


def _cmd_simulate(args, overrides) -> int:
    cfg = _load_json_config(args.config) if args.config else {}
    seed = cfg.pop("seed", 0)
    if "seed" in overrides:
        seed = overrides.pop("seed")
    cfg.update(overrides)
    try:
        spec = ScenarioSpec.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad scenario config: {exc}") from exc
    sim = gen_scenario(spec, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_data_csv(sim, out / "data.csv")
    write_truth_csv(sim, out / "truth.csv")
    with open(out / "scenario.json", "w") as fh:
        json.dump(
            {"schema": SCHEMA_VERSION, "seed": seed, "scenario": spec.to_dict()},
            fh, indent=2,
        )
        fh.write("\n")
    print(f"simulated n={spec.n} p={spec.p} -> {out}")
    return 0


def _cmd_fit(args, overrides) -> int:
    cfg = _load_json_config(args.config) if args.config else {}
    cfg.update(overrides)
    config = _forest_from_dict(cfg)
    if args.mesh:
        config.mesh = load_mesh(args.mesh)
    data = read_data_csv(args.data)
    fitter = forest_fit if args.mode == "shaplm" else psccm_fit
    fit = fitter(data, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "fit.json", "w") as fh:
        json.dump(_fit_payload(fit), fh)
        fh.write("\n")
    _write_clusters_csv(fit, out / "clusters.csv")
    if fit.spline is not None:
        _write_ghat_grid(fit, out / "ghat_grid.csv")
    with open(out / "fit_config.json", "w") as fh:
        json.dump(
            {
                "schema": SCHEMA_VERSION,
                "mode": args.mode,
                "data": str(args.data),
                "forest": _forest_to_dict(config),
            },
            fh, indent=2,
        )
        fh.write("\n")
    sizes = [len(np.unique(c)) for c in fit.clusters]
    print(
        f"fit {args.mode}: lambda={fit.lambda_:.6g}"
        + (f" rho={fit.rho_:.6g}" if fit.rho_ is not None else "")
        + f" clusters={sizes} -> {out}"
    )
    if not fit.converged:
        print("warning: solver did not converge within max_iter", file=sys.stderr)
        return 2
    return 0


def _cmd_eval(args, overrides) -> int:
    if overrides:
        raise UsageError(f"eval takes no overrides: {sorted(overrides)}")
    try:
        with open(args.fit) as fh:
            fit = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {args.fit}: {exc}") from exc
    if fit.get("schema") != SCHEMA_VERSION:
        raise UsageError(f"{args.fit}: unsupported schema {fit.get('schema')!r}")
    loc_t, beta_t, g_t, labels_t = read_truth_csv(args.truth)
    loc_f = np.array(fit["locations"])
    if loc_f.shape != loc_t.shape or not np.allclose(loc_f, loc_t, atol=1e-8):
        raise UsageError("fit and truth files describe different sites")
    beta_f = np.array(fit["beta"])
    if beta_f.shape != beta_t.shape:
        raise UsageError("fit and truth files disagree on the covariate count")
    result = {
        "schema": SCHEMA_VERSION,
        "mse_beta": mse_beta(beta_t, beta_f),
        "mse_g": mse_g(g_t, np.array(fit["g"])),
        "rand_index": [
            rand_index(labels_t[:, k], np.array(fit["clusters"][k]))
            for k in range(beta_t.shape[1])
        ],
    }
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_bench(args, overrides) -> int:
    cfg = _load_json_config(args.config) if args.config else {}
    for key, val in overrides.items():
        if key in ("scenario", "forest") and not isinstance(val, dict):
            raise UsageError(f"--{key} must be a JSON object")
        cfg[key] = val
    try:
        config = BenchConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad benchmark config: {exc}") from exc
    rows, _ = run_benchmark(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_bench_csv(rows, out / "bench.csv")
    with open(out / "bench_config.json", "w") as fh:
        json.dump(
            {
                "schema": SCHEMA_VERSION,
                "replicates": config.replicates,
                "seed": config.seed,
                "methods": list(config.methods),
                "q_values": list(config.q_values),
                "correlations": list(config.correlations),
                "n_jobs": config.n_jobs,
                "scenario": config.scenario.to_dict(),
                "forest": _forest_to_dict(config.forest),
            },
            fh, indent=2,
        )
        fh.write("\n")
    for row in rows:
        print(
            f"{row['method']} {row['correlation']} Q={row['q_trees']}: "
            f"mse_beta={row['mse_beta']:.4f} mse_g={row['mse_g']:.4f} "
            f"ok={row['n_ok']}/{row['n_ok'] + row['n_fail']}"
        )
    print(f"wrote {out / 'bench.csv'}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="shaplm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="draw a synthetic dataset")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--config", help="scenario JSON")
    p_sim.add_argument("--seed", type=int, default=None)

    p_fit = sub.add_parser("fit", help="fit the model to a CSV dataset")
    p_fit.add_argument("--data", required=True, help="input CSV (x,y,resp,x1..)")
    p_fit.add_argument("--out", required=True, help="output directory")
    p_fit.add_argument("--mode", choices=["shaplm", "psccm"], default="shaplm")
    p_fit.add_argument("--config", help="pipeline JSON")
    p_fit.add_argument("--mesh", help="triangulation JSON (overrides the default grid)")

    p_eval = sub.add_parser("eval", help="score a fit against exported truth")
    p_eval.add_argument("--fit", required=True, help="fit.json from the fit command")
    p_eval.add_argument("--truth", required=True, help="truth.csv from simulate")
    p_eval.add_argument("--out", help="write metrics JSON here instead of stdout")

    p_bench = sub.add_parser("bench", help="replicated simulation benchmark")
    p_bench.add_argument("--out", required=True, help="output directory")
    p_bench.add_argument("--config", help="benchmark JSON")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
        overrides = _parse_overrides(rest)
        if getattr(args, "seed", None) is not None:
            overrides["seed"] = args.seed
        handler = {
            "simulate": _cmd_simulate,
            "fit": _cmd_fit,
            "eval": _cmd_eval,
            "bench": _cmd_bench,
        }[args.command]
        return handler(args, overrides)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
