"""Command line front end: ``wassreg {simulate,ingest,fit,predict,geodesic,render}``.

Every command writes its outputs plus one ``manifest.json`` into ``--out``.
Option values come from the command line, then from ``--config`` (a flat
``key = value`` file using the long option names), then from defaults.
``WASSREG_THREADS`` caps the threads of the linear algebra backend.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

__all__ = ["main", "build_parser"]

VERSION = "0.1.0"

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

# per command: option -> (type, default); None marks a required value
_OPTIONS = {
    "simulate": {
        "n": (int, [50, 100, 150, 200]), "mc": (int, 100), "seed": (int, 0),
        "grid": (int, None), "quantile_points": (int, 201), "lambda": (float, 0.4),
        "bandwidth": (float, 0.1), "kernel": (str, None), "tol": (float, 1e-5),
        "regions": (str, ["interp"]), "local": (bool, False), "family": (str, "gaussian"),
    },
    "ingest": {
        "input": (str, None), "bins": (int, 20), "grid": (int, 51), "box": (float, None),
        "range": (float, []), "bandwidth": (str, "silverman"), "transform": (str, "none"),
    },
    "fit": {
        "manifest": (str, None), "mode": (str, "global"), "solver": (str, "auto"),
        "lambda": (float, 0.4), "bandwidth": (float, 0.1), "kernel": (str, "gaussian"),
        "quantile_points": (int, 201), "tol": (float, 1e-6),
    },
    "predict": {"model": (str, None), "x": (str, None), "render": (bool, False)},
    "geodesic": {"a": (str, None), "b": (str, None), "t": (float, None), "lambda": (float, 0.0),
                 "render": (bool, False)},
    "render": {"input": (str, None)},
}
_LISTS = {"n", "regions", "box", "range", "x", "t"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wassreg", description="Regression of distributions in Wasserstein space."
    )
    parser.add_argument("--version", action="version", version=VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default=None, help="output directory (default: current)")
        p.add_argument("--config", default=None, help="flat key=value option file")
        return p

    p = common(sub.add_parser("simulate", help="Monte Carlo error tables"))
    p.add_argument("kind", choices=["1d", "2d"])
    p.add_argument("--n", type=int, nargs="+", help="sample sizes")
    p.add_argument("--mc", type=int, help="Monte Carlo runs per sample size")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", type=int, help="grid points per axis (1d: 101, 2d: 101)")
    p.add_argument("--quantile-points", type=int)
    p.add_argument("--lambda", type=float, help="entropic regularization (2d)")
    p.add_argument("--bandwidth", type=float, help="local kernel bandwidth")
    p.add_argument("--kernel", choices=["gaussian", "epanechnikov"],
                   help="local kernel (1d: epanechnikov, 2d: gaussian)")
    p.add_argument("--tol", type=float, help="barycenter tolerance (2d)")
    p.add_argument("--regions", nargs="+", choices=["interp", "extrap"], help="2d regions")
    p.add_argument("--local", action="store_const", const=True, help="also fit local models (2d)")
    p.add_argument("--family", choices=["gaussian", "t"], help="2d response family")

    p = common(sub.add_parser("ingest", help="observation table to per-bin density grids"))
    p.add_argument("--input", help="CSV with header x1,w1[,w2]")
    p.add_argument("--bins", type=int)
    p.add_argument("--grid", type=int, help="grid points per axis")
    p.add_argument("--box", type=float, nargs="+", help="lo1 hi1 [lo2 hi2]: response grid box")
    p.add_argument("--range", type=float, nargs=2, help="predictor binning range")
    p.add_argument("--bandwidth", help="silverman, sj or a number")
    p.add_argument("--transform", choices=["none", "minrange"])

    p = common(sub.add_parser("fit", help="assemble a model from an ingest manifest"))
    p.add_argument("--manifest", help="manifest.csv with center,file[,count]")
    p.add_argument("--mode", choices=["global", "local"])
    p.add_argument("--solver", choices=["auto", "exact1d", "sinkhorn"])
    p.add_argument("--lambda", type=float)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--kernel", choices=["gaussian", "epanechnikov"])
    p.add_argument("--quantile-points", type=int)
    p.add_argument("--tol", type=float)

    p = common(sub.add_parser("predict", help="predict distributions at new predictor values"))
    p.add_argument("--model", help="directory written by fit")
    p.add_argument("--x", nargs="+", help="predictor values (comma-separated for q > 1)")
    p.add_argument("--render", action="store_const", const=True, help="also write heat maps")

    p = common(sub.add_parser("geodesic", help="McCann interpolation between two grids"))
    p.add_argument("--a", help="grid file at t = 0")
    p.add_argument("--b", help="grid file at t = 1")
    p.add_argument("--t", type=float, nargs="+", help="positions along the geodesic")
    p.add_argument("--lambda", type=float, help="entropic plan (0: exact plan)")
    p.add_argument("--render", action="store_const", const=True)

    p = common(sub.add_parser("render", help="heat map of a 2-D grid file"))
    p.add_argument("--input", help="grid file")
    return parser


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for num, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{num}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _convert(kind, raw: str, is_list: bool):
    if kind is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    if is_list:
        return [kind(v) for v in raw.replace(",", " ").split()]
    return kind(raw)


def resolve(args: argparse.Namespace) -> dict:
    """Merge command line, config file and defaults for ``args.command``."""
    config = read_config(args.config) if args.config else {}
    values = {}
    for key, (kind, default) in _OPTIONS[args.command].items():
        cli = getattr(args, key, None)
        if cli is not None:
            values[key] = cli
        elif key in config:
            values[key] = _convert(kind, config[key], key in _LISTS)
        elif default is None and key not in ("grid", "kernel", "box"):
            raise ValueError(f"missing required option --{key.replace('_', '-')}")
        else:
            values[key] = default
    unknown = set(config) - set(_OPTIONS[args.command]) - {"out"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    values["out"] = args.out or config.get("out") or "."
    return values


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out: Path, command, values, inputs, outputs, error=None):
    manifest = {
        "command": command,
        "status": "ok" if error is None else "error",
        "error": error,
        "version": VERSION,
        "seed": values.get("seed"),
        "config": {k: v for k, v in sorted(values.items())},
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _fmt(v) -> str:
    return repr(float(v))


def _write_table(path: Path, columns, ns, means) -> Path:
    lines = ["metric," + ",".join(f"n={n}" for n in ns)]
    for j, col in enumerate(columns):
        lines.append(col + "," + ",".join(_fmt(m[j]) for m in means))
    path.write_text("\n".join(lines) + "\n")
    return path


def _write_runs(path: Path, result) -> Path:
    lines = ["run," + ",".join(result.columns)]
    for i, row in enumerate(result.per_run):
        lines.append(f"{i}," + ",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _sim_config(sim, kind, n, values):
    if kind == "1d":
        return sim.SimConfig1D(
            n=n, P=values["quantile_points"], grid=values["grid"] or 101, mc=values["mc"],
            seed=values["seed"], bandwidth=values["bandwidth"],
            kernel=values["kernel"] or "epanechnikov",
        )
    return sim.SimConfig2D(
        n=n, grid=values["grid"] or 101, lam=values["lambda"], mc=values["mc"],
        seed=values["seed"], family=values["family"], tol=values["tol"],
        regions=tuple(values["regions"]), local=values["local"],
        bandwidth=values["bandwidth"], kernel=values["kernel"] or "gaussian",
    )


def cmd_simulate(args, values, out: Path):
    from . import simulation as sim

    outputs, results = [], []
    # every configuration is validated before the first (long) run
    for n in values["n"]:
        try:
            cfg = _sim_config(sim, args.kind, n, values)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        results.append((cfg, None))
    for i, (cfg, _) in enumerate(results):
        res = sim.run_1d(cfg) if args.kind == "1d" else sim.run_2d(cfg)
        results[i] = (cfg, res)
        outputs.append(_write_runs(out / f"runs_{args.kind}_n{cfg.n}.csv", res))
        print(f"n={cfg.n}: " + ", ".join(f"{k}={v:.6g}" for k, v in res.summary().items()))
    columns = results[0][1].columns
    means = [[res.summary()[c] for c in columns] for _, res in results]
    ns = [cfg.n for cfg, _ in results]
    name = "table1.csv" if args.kind == "1d" else "table2.csv"
    if args.kind == "2d":
        floor_cols = [k for k in results[0][1].extra if k.startswith("floor_")]
        columns = list(columns) + floor_cols
        means = [m + [res.extra[k] for k in floor_cols] for m, (_, res) in zip(means, results)]
    outputs.append(_write_table(out / name, columns, ns, means))
    return [], outputs


def cmd_ingest(args, values, out: Path):
    from .grid import GridSpec
    from .io import read_observations
    from .kde import ingest

    _, W = read_observations(values["input"])
    d = W.shape[1]
    box = values["box"]
    if box is None:
        lo, hi = W.min(axis=0), W.max(axis=0)
        pad = 0.1 * (hi - lo)
        box = [v for a in range(d) for v in (lo[a] - pad[a], hi[a] + pad[a])]
    if len(box) != 2 * d:
        raise ValueError(f"--box needs {2 * d} numbers")
    spec = GridSpec(tuple(box[0::2]), tuple(box[1::2]), (values["grid"],) * d)
    rng = values["range"] or [None, None]
    bw = values["bandwidth"]
    bw = bw if bw in ("silverman", "sj") else float(bw)
    transform = None if values["transform"] == "none" else values["transform"]
    manifest = ingest(values["input"], out, spec, values["bins"], lower=rng[0], upper=rng[1],
                      bandwidth=bw, transform=transform)
    files = [out / line.split(",")[1] for line in manifest.read_text().splitlines()[1:]]
    return [values["input"]], files + [manifest]


def _load_manifest(path: Path):
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("center,file"):
        raise ValueError(f"{path}: expected a center,file[,count] manifest")
    centers, files = [], []
    for line in lines[1:]:
        if line.strip():
            fields = line.split(",")
            centers.append(float(fields[0]))
            files.append((path.parent / fields[1]).resolve())
    return centers, files


def _model_from_dir(model_dir: Path):
    from . import sinkhorn as sk
    from .frechet import KernelSpec
    from .io import read_measure
    from .regression import fit

    spec = json.loads((model_dir / "model.json").read_text())
    responses = [read_measure(model_dir / f) for f in spec["files"]]
    kernel = KernelSpec(spec["kernel"], (spec["bandwidth"],)) if spec["mode"] == "local" else None
    solver = None if spec["solver"] == "auto" else spec["solver"]
    settings = sk.SinkhornSettings(lam=spec["lambda"], tol=spec["tol"])
    return fit(spec["x"], responses, mode=spec["mode"], kernel=kernel, solver=solver,
               settings=settings, quantile_points=spec["quantile_points"])


def cmd_fit(args, values, out: Path):
    import shutil

    centers, files = _load_manifest(Path(values["manifest"]))
    names = []
    for i, f in enumerate(files):
        name = f"response_{i:03d}.csv"
        if (out / name).resolve() != f:
            shutil.copyfile(f, out / name)
        names.append(name)
    model = {
        "x": centers, "files": names, "mode": values["mode"], "solver": values["solver"],
        "lambda": values["lambda"], "bandwidth": values["bandwidth"], "kernel": values["kernel"],
        "quantile_points": values["quantile_points"], "tol": values["tol"],
    }
    path = out / "model.json"
    path.write_text(json.dumps(model, indent=2, sort_keys=True) + "\n")
    fitted = _model_from_dir(out)  # validates the assembled model
    print(f"model with {fitted.sample.n} responses, solver {fitted.solver}, mode {fitted.mode}")
    return [values["manifest"], *files], [path, *(out / n for n in names)]


def _parse_x(token: str):
    return [float(v) for v in token.split(",")]


def _write_prediction(out: Path, stem: str, fitted, spec, render: bool):
    from .io import write_grid
    from .ot1d import QuantileCurve, curve_to_measure
    from .render import render_heatmap

    outputs = []
    if isinstance(fitted, QuantileCurve):
        qpath = out / f"{stem}_quantiles.csv"
        qpath.write_text("t,q\n" + "".join(f"{_fmt(t)},{_fmt(q)}\n" for t, q in zip(fitted.t, fitted.values)))
        outputs.append(qpath)
        fitted = curve_to_measure(fitted, spec)
    outputs.append(write_grid(out / f"{stem}.csv", fitted))
    if render and spec.dim == 2:
        outputs.append(render_heatmap(fitted, out / f"{stem}.png")[0])
    return outputs


def cmd_predict(args, values, out: Path):
    from .regression import predict_path

    model_dir = Path(values["model"])
    model = _model_from_dir(model_dir)
    spec = json.loads((model_dir / "model.json").read_text())
    from .io import read_grid

    grid, _ = read_grid(model_dir / spec["files"][0])
    xs = [_parse_x(t) if isinstance(t, str) else [float(t)] for t in values["x"]]
    outputs = []
    for i, fitted in enumerate(predict_path(model, xs)):
        outputs += _write_prediction(out, f"pred_{i:03d}", fitted, grid, values["render"])
    return [model_dir / "model.json"], outputs


def cmd_geodesic(args, values, out: Path):
    from . import sinkhorn as sk
    from .io import read_measure, write_grid
    from .regression import mccann_interpolate
    from .render import render_heatmap

    a, b = read_measure(values["a"]), read_measure(values["b"])
    settings = sk.SinkhornSettings(lam=values["lambda"]) if values["lambda"] > 0 else "exact"
    outputs = []
    for i, t in enumerate(values["t"]):
        nu = mccann_interpolate(a, b, t, settings)
        outputs.append(write_grid(out / f"geo_{i:03d}.csv", nu))
        if values["render"] and nu.spec.dim == 2:
            outputs.append(render_heatmap(nu, out / f"geo_{i:03d}.png")[0])
    return [values["a"], values["b"]], outputs


def cmd_render(args, values, out: Path):
    from .io import read_grid
    from .grid import DensityGrid
    from .render import render_heatmap

    src = Path(values["input"])
    png, csv_path = render_heatmap(DensityGrid(*read_grid(src)), out / (src.stem + ".png"))
    return [src], [png, csv_path]


_COMMANDS = {
    "simulate": cmd_simulate, "ingest": cmd_ingest, "fit": cmd_fit,
    "predict": cmd_predict, "geodesic": cmd_geodesic, "render": cmd_render,
}


def _cap_threads():
    cap = os.environ.get("WASSREG_THREADS")
    if cap:
        if not cap.isdigit() or int(cap) < 1:
            raise SystemExit(f"wassreg: WASSREG_THREADS must be a positive integer, got {cap!r}")
        for var in _THREAD_VARS:
            os.environ[var] = cap


class UsageError(ValueError):
    """Invalid option values; reported with the usage text."""


def main(argv=None) -> int:
    _cap_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        values = resolve(args)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))
    out = Path(values["out"])
    out.mkdir(parents=True, exist_ok=True)
    config = dict(values, out=str(out))
    if args.command == "simulate":
        config["kind"] = args.kind
    inputs, outputs, error = [], [], None
    try:
        inputs, outputs = _COMMANDS[args.command](args, values, out)
    except UsageError as exc:
        error = str(exc)
        _write_manifest(out, args.command, config, inputs, outputs, error)
        parser.error(error)
    except (OSError, ValueError, RuntimeError) as exc:
        error = str(exc)
        print(f"wassreg {args.command}: error: {exc}", file=sys.stderr)
    _write_manifest(out, args.command, config, inputs, outputs, error)
    return 0 if error is None else 1


if __name__ == "__main__":
    sys.exit(main())
