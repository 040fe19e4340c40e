"""Command-line batch workflows.

Usage::

    spheretime <command> --config run.yaml [--seed N] [--out DIR]

Commands are ``validate``, ``simulate``, ``fit``, ``predict``, ``score``,
``spectra`` and ``dynspec``.  Exit codes: 0 success, 1 input, schema or IO
error, 2 kernel validation failure, 3 numerical failure (optimizer did not
converge, singular kriging system, failed factorization).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import dynspec as ds
from .fit import CLConfig, fit_cl, get_family
from .functions import InvalidParameterError
from .io import (
    DataFormatError,
    atomic_write,
    config_hash,
    format_csv,
    format_points,
    grid_from_points,
    points_to_observations,
    read_points,
)
from .kernels import KernelSpec, gram_matrix, validate_params
from .krige import SingularSystemError, drop_one_arrays, krige_arrays, scores_arrays
from .simulate import (
    MAX_DENSE,
    RotationLaw,
    SimulationError,
    cholesky_simulate,
    coefficient_models_from_series,
    coefficient_models_from_spec,
    kl_simulate,
    transport_simulate,
)
from .spectral import schoenberg_coefficients, validity_diagnostic
from .sphere import LatLonGrid, latlon_to_xyz, random_sites, xyz_to_latlon

log = logging.getLogger("spheretime")

SCHEMA_VERSION = 1
COMMANDS = ("validate", "simulate", "fit", "predict", "score", "spectra", "dynspec")

EXIT_OK, EXIT_INPUT, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    """Configuration does not match the schema."""


class CommandFailure(RuntimeError):
    """A command finished with a non-zero status after writing its outputs."""

    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# schema

NUM = (int, float)
NUM_LIST = "number_list"

COMPONENT_SCHEMA = {"tag": str, "params": dict}
KERNEL_KEYS = {"family", "params", "children", "temporal_correlation", "components"}

SCHEMA = {
    "schema_version": int,
    "command": str,
    "seed": int,
    "kernel": "kernel",
    "data": {"path": str, "targets": str},
    "validate": {
        "n": int, "k_max": int, "u_grid": NUM_LIST, "n_sites": int,
        "times": NUM_LIST, "quad_order": int, "eig_tol": NUM,
    },
    "spectra": {"n": int, "k_max": int, "u_grid": NUM_LIST, "quad_order": int},
    "simulate": {
        "sampler": str, "grid": {"n_lat": int, "n_lon": int}, "times": NUM_LIST,
        "k_trunc": int, "m_trunc": int, "quad_order": int,
    },
    "fit": {
        "families": list, "cutoff": NUM, "max_iter": int, "tol": NUM,
        "initial_step": NUM, "init": dict, "bounds": dict,
    },
    "predict": {},
    "score": {},
    "dynspec": {
        "period": int, "detrend_mode": str, "coherence": bool, "regions": list,
    },
}


def _check_type(value, expected, where: str):
    if expected is NUM_LIST:
        if not isinstance(value, list) or not all(
            isinstance(v, NUM) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"{where}: expected a list of numbers")
        return
    if expected is NUM:
        if isinstance(value, bool) or not isinstance(value, NUM):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return
    if expected is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if not isinstance(value, expected):
        raise ConfigError(f"{where}: expected {expected.__name__}, got {type(value).__name__}")


def _check_section(data, schema, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    for key, value in data.items():
        if key not in schema:
            raise ConfigError(f"{where}: unknown key {key!r}")
        expected = schema[key]
        sub = f"{where}.{key}" if where else key
        if expected == "kernel":
            _check_kernel(value, sub)
        elif isinstance(expected, dict):
            _check_section(value, expected, sub)
        elif value is not None:
            _check_type(value, expected, sub)


def _check_component(value, where):
    if isinstance(value, str):
        return
    _check_section(value, COMPONENT_SCHEMA, where)
    if "tag" not in value:
        raise ConfigError(f"{where}: component needs a 'tag'")


def _check_kernel(value, where: str):
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = set(value) - KERNEL_KEYS
    if unknown:
        raise ConfigError(f"{where}: unknown key {sorted(unknown)[0]!r}")
    if "family" not in value:
        raise ConfigError(f"{where}: missing 'family'")
    if not isinstance(value.get("params", {}), dict):
        raise ConfigError(f"{where}.params: expected a mapping")
    for i, child in enumerate(value.get("children", []) or []):
        _check_kernel(child, f"{where}.children[{i}]")
    if value.get("temporal_correlation") is not None:
        _check_component(value["temporal_correlation"], f"{where}.temporal_correlation")
    for name, comp in (value.get("components") or {}).items():
        _check_component(comp, f"{where}.components.{name}")


def validate_config(config, command: str) -> dict:
    """Check a parsed configuration against the schema."""
    if not isinstance(config, dict):
        raise ConfigError("configuration must be a mapping")
    _check_section(config, SCHEMA, "")
    version = config.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    if config.get("command", command) != command:
        raise ConfigError(f"config is for command {config['command']!r}, not {command!r}")
    needs_kernel = {"validate", "simulate", "predict", "score", "spectra"}
    if command in needs_kernel and "kernel" not in config:
        raise ConfigError(f"command {command!r} needs a 'kernel' section")
    if command in {"fit", "predict", "score", "dynspec"} and "path" not in config.get("data", {}):
        raise ConfigError(f"command {command!r} needs data.path")
    return config


def load_config(path, command: str, seed: int | None = None) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        config = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from None
    config = validate_config(config, command)
    if seed is not None:
        config["seed"] = int(seed)
    config.setdefault("seed", 0)
    data = config.get("data", {})
    for key in ("path", "targets"):
        if key in data and not Path(data[key]).is_absolute():
            data[key] = str((path.parent / data[key]).resolve())
    return config


class Run:
    """Output directory and hash shared by the files of one command."""

    def __init__(self, config: dict, out: Path):
        self.config = config
        self.out = Path(out)
        self.hash = config_hash(config)

    @property
    def comment(self) -> tuple[str, ...]:
        return (f"config_sha256={self.hash}",)

    def write(self, name: str, text: str) -> Path:
        return atomic_write(self.out / name, text)

    def write_json(self, name: str, data: dict) -> Path:
        payload = {"config_sha256": self.hash, "schema_version": SCHEMA_VERSION, **data}
        return self.write(name, json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def write_csv(self, name: str, header, rows) -> Path:
        return self.write(name, format_csv(header, rows, self.comment))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(type(obj).__name__)


def _kernel(config) -> KernelSpec:
    try:
        return KernelSpec.from_dict(config["kernel"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"kernel: {exc}") from None


def _require_valid(spec: KernelSpec):
    report = validate_params(spec)
    if not report.ok:
        raise InvalidParameterError(f"{spec.family}: {report}")


def _observations(config):
    return points_to_observations(read_points(config["data"]["path"]))


# ---------------------------------------------------------------------------
# commands


def cmd_validate(config, run: Run) -> int:
    opts = config.get("validate", {})
    spec = _kernel(config)
    report = validate_params(spec)
    out: dict = {
        "family": spec.family,
        "kernel": spec.to_dict(),
        "parameter_check": {"ok": report.ok, "violations": report.messages(), "warnings": list(report.warnings)},
    }
    passed = report.ok
    try:
        diag = validity_diagnostic(
            spec,
            n=int(opts.get("n", 2)),
            k_max=int(opts.get("k_max", 100)),
            u_grid=opts.get("u_grid", [0.0, 1.0, 2.0]),
            quad_order=opts.get("quad_order"),
        )
        out["diagnostic"] = {
            "passed": diag.passed,
            "summary": diag.summary(),
            "negative_degrees": diag.negative_degrees,
            "min_toeplitz_eigenvalue": diag.min_toeplitz_eigenvalue,
            "tail_mass": diag.tail_mass,
        }
        passed = passed and diag.passed
    except InvalidParameterError as exc:
        out["diagnostic"] = {"passed": None, "summary": f"not applicable: {exc}"}
    except (ValueError, ArithmeticError) as exc:
        out["diagnostic"] = {"passed": False, "summary": f"evaluation failed: {exc}"}
        passed = False
    if report.ok:
        rng = np.random.default_rng(config["seed"])
        sites = random_sites(int(opts.get("n_sites", 60)), rng)
        times = np.asarray(opts.get("times", [0.0, 1.0, 2.0]), dtype=float)
        gram = gram_matrix(spec, sites, times, gridded=True)
        min_eig = float(np.linalg.eigvalsh(gram)[0])
        tol = float(opts.get("eig_tol", 1e-8)) * abs(spec.variance)
        out["gram"] = {"min_eigenvalue": min_eig, "tolerance": -tol, "passed": min_eig >= -tol}
        passed = passed and min_eig >= -tol
    else:
        out["gram"] = {"passed": None, "summary": "skipped: parameters invalid"}
    out["passed"] = passed
    run.write_json("validate_report.json", out)
    lines = [f"kernel {spec.family}: {'PASS' if passed else 'FAIL'}"]
    lines += [f"  violation: {m}" for m in report.messages()]
    lines += [f"  warning: {w}" for w in report.warnings]
    lines.append(f"  diagnostic: {out['diagnostic']['summary']}")
    if "min_eigenvalue" in out["gram"]:
        lines.append(f"  gram min eigenvalue: {out['gram']['min_eigenvalue']:.3e}")
    else:
        lines.append(f"  gram: {out['gram']['summary']}")
    run.write("validate_report.txt", "\n".join(lines) + "\n")
    print(lines[0])
    return EXIT_OK if passed else EXIT_INVALID


def _grid_sites(opts):
    g = opts.get("grid", {"n_lat": 12, "n_lon": 24})
    grid = LatLonGrid.regular(int(g["n_lat"]), int(g["n_lon"]))
    return grid, grid.points


def cmd_simulate(config, run: Run) -> int:
    opts = config.get("simulate", {})
    spec = _kernel(config)
    _require_valid(spec)
    sampler = opts.get("sampler", "cholesky")
    grid, sites = _grid_sites(opts)
    times = np.asarray(opts.get("times", [0.0, 1.0]), dtype=float)
    seed = config["seed"]
    if sampler == "cholesky":
        if sites.shape[0] * times.size > MAX_DENSE:
            raise ConfigError(
                f"cholesky sampler limited to {MAX_DENSE} space-time points; use sampler 'kl'"
            )
        sample = cholesky_simulate(spec, sites, times, seed)
    elif sampler == "kl":
        k_trunc = int(opts.get("k_trunc", 50))
        if spec.family == "SchoenbergSeries":
            models = coefficient_models_from_series(spec)
        else:
            models = coefficient_models_from_spec(spec, k_trunc, times, opts.get("quad_order"))
        sample = kl_simulate(models, k_trunc, opts.get("m_trunc"), sites, times, seed)
    elif sampler == "transport":
        if spec.family != "LagrangianTransport":
            raise ConfigError("sampler 'transport' needs a LagrangianTransport kernel")
        law = RotationLaw.from_component(spec.components["law"])
        sample = transport_simulate(spec.children[0], law, sites, times, seed)
    else:
        raise ConfigError(f"unknown sampler {sampler!r}; choose cholesky, kl or transport")
    lat, lon = xyz_to_latlon(sites)
    ns, nt = sample.values.shape
    tt = np.repeat(times, ns)
    run.write("field.csv", format_points(np.tile(lat, nt), np.tile(lon, nt), tt, sample.values.T.ravel(), run.comment))
    site_idx = np.tile(np.arange(ns), nt)
    run.write_csv("plot_data.csv", ("site", "time", "value"), zip(site_idx.tolist(), tt, sample.values.T.ravel()))
    run.write_json("simulate_summary.json", {
        "sampler": sampler, "seed": seed, "n_rows": int(ns * nt), "n_sites": int(ns),
        "n_times": int(nt), "mean": float(sample.values.mean()),
        "variance": float(sample.values.var()), "kernel_variance": spec.variance,
    })
    print(f"simulated {ns * nt} values with {sampler}")
    return EXIT_OK


def cmd_fit(config, run: Run) -> int:
    opts = config.get("fit", {})
    obs = _observations(config)
    families = opts.get("families", ["ModifiedGneiting"])
    cl = CLConfig(
        cutoff=float(opts.get("cutoff", 1.0)),
        bounds={k: tuple(v) for k, v in (opts.get("bounds") or {}).items()},
        max_iter=int(opts.get("max_iter", 2000)),
        tol=float(opts.get("tol", 1e-6)),
        initial_step=float(opts.get("initial_step", 0.3)),
    )
    results = []
    for name in families:
        family = get_family(name)
        init_map = (opts.get("init") or {}).get(name, {})
        unknown = set(init_map) - set(family.names)
        if unknown:
            raise ConfigError(f"fit.init.{name}: unknown parameters {sorted(unknown)}")
        init = [float(init_map.get(n, v)) for n, v in zip(family.names, family.initial())]
        results.append(fit_cl(family, init, obs, cl))
    width = max(len(r.names) for r in results)
    header = ["family", "log_cl", "n_pairs", "iterations", "converged", "cutoff"]
    for i in range(width):
        header += [f"param{i + 1}", f"value{i + 1}"]
    rows = []
    for r in results:
        row = [r.family, float(r.log_cl), r.n_pairs, r.iterations, r.converged, cl.cutoff]
        for n, v in zip(r.names, r.estimates):
            row += [n, float(v)]
        row += [""] * (len(header) - len(row))
        rows.append(row)
        run.write_csv(f"trace_{r.family}.csv", ("iteration", "log_cl"), enumerate(map(float, r.trace)))
    run.write_csv("estimates.csv", header, rows)
    run.write_json("fit_metadata.json", {
        "cutoff": cl.cutoff, "n_observations": len(obs),
        "fitted_kernels": {r.family: r.spec().to_dict() for r in results},
    })
    for r in results:
        print(f"{r.family}: log CL {r.log_cl:.6g}, {r.as_dict()}")
    if not all(r.converged for r in results):
        bad = [r.family for r in results if not r.converged]
        raise CommandFailure(f"optimizer did not converge for {bad}; best-so-far estimates written", EXIT_NUMERIC)
    return EXIT_OK


def _score_block(run: Run, means, var, y):
    s = scores_arrays(means, var, y)
    run.write_csv("scores.csv", ("MSPE", "LSCORE", "CRPS"), [[s.mspe, s.lscore, s.crps]])
    print(f"MSPE {s.mspe:.6g}  LSCORE {s.lscore:.6g}  CRPS {s.crps:.6g}")
    return s


def cmd_predict(config, run: Run, write_predictions: bool = True) -> int:
    spec = _kernel(config)
    _require_valid(spec)
    obs = _observations(config)
    means, var = drop_one_arrays(spec, obs)
    if write_predictions:
        lat, lon = xyz_to_latlon(obs.sites)
        run.write_csv(
            "predictions.csv",
            ("lat_deg", "lon_deg", "time", "value", "mean", "variance"),
            zip(lat, lon, obs.times, obs.values, means, var),
        )
        target_path = config.get("data", {}).get("targets")
        if target_path:
            tgt = read_points(target_path, ("lat_deg", "lon_deg", "time"))
            xt = latlon_to_xyz(tgt["lat_deg"], tgt["lon_deg"])
            m, v = krige_arrays(spec, obs, (xt, tgt["time"]))
            run.write_csv(
                "target_predictions.csv",
                ("lat_deg", "lon_deg", "time", "mean", "variance"),
                zip(tgt["lat_deg"], tgt["lon_deg"], tgt["time"], m, v),
            )
    _score_block(run, means, var, obs.values)
    return EXIT_OK


def cmd_score(config, run: Run) -> int:
    return cmd_predict(config, run, write_predictions=False)


def cmd_spectra(config, run: Run) -> int:
    opts = config.get("spectra", {})
    spec = _kernel(config)
    _require_valid(spec)
    n = int(opts.get("n", 2))
    k_max = int(opts.get("k_max", 200))
    u_grid = opts.get("u_grid", [0.0])
    table = schoenberg_coefficients(spec, n, k_max, u_grid, opts.get("quad_order"))
    run.write("schoenberg.csv", f"# config_sha256={run.hash}\n" + table.to_text())
    print(f"wrote {k_max + 1} Schoenberg coefficients at {len(u_grid)} lags")
    return EXIT_OK


def _region_boxes(grid: LatLonGrid, regions):
    lat = np.degrees(grid.lat)
    lon = np.degrees(grid.lon)
    boxes = []
    for r, reg in enumerate(regions or []):
        if not isinstance(reg, dict) or set(reg) - {"name", "lat_deg", "lon_deg"}:
            raise ConfigError(f"dynspec.regions[{r}]: expected keys name, lat_deg, lon_deg")
        lo, hi = reg.get("lat_deg", [-90, 90])
        ii = np.flatnonzero((lat >= lo) & (lat <= hi))
        lo2, hi2 = reg.get("lon_deg", [0, 360])
        jj = np.flatnonzero((lon >= lo2) & (lon <= hi2))
        if ii.size == 0 or jj.size == 0 or np.any(np.diff(ii) != 1) or np.any(np.diff(jj) != 1):
            raise ConfigError(f"dynspec.regions[{r}]: box selects no contiguous grid cells")
        boxes.append((reg.get("name", f"region{r}"), (int(ii[0]), int(ii[-1]) + 1, int(jj[0]), int(jj[-1]) + 1)))
    if not boxes:
        boxes.append(("full", None))
    return boxes


def cmd_dynspec(config, run: Run) -> int:
    opts = config.get("dynspec", {})
    series = grid_from_points(read_points(config["data"]["path"]))
    boxes = _region_boxes(series.grid, opts.get("regions"))
    period = opts.get("period")
    anomalies = (
        ds.detrend(series, period, opts.get("detrend_mode", "phase"))[0] if period else series
    )
    start = time.perf_counter()
    result = ds.fit_pipeline(anomalies, None, coherence=False)
    t_base = time.perf_counter() - start
    model = result.model
    t_coh = 0.0
    coherent = None
    if opts.get("coherence", True) and series.grid.n_lat >= 2:
        start = time.perf_counter()
        eps = ds.innovations(anomalies, model.ar_coeffs)
        coh = ds.fit_coherence(ds.longitudinal_fft(eps), model.spectra(), series.grid.lat)
        t_coh = time.perf_counter() - start
        coherent = ds.DynSpecModel(series.grid, model.ar_coeffs, model.spectrum_params, coh.params)
    best = coherent or model
    run.write("model.json", best.to_text() + "\n")
    lat_deg = np.degrees(series.grid.lat)
    lon_deg = np.degrees(series.grid.lon)
    ii, jj = np.meshgrid(np.arange(lat_deg.size), np.arange(lon_deg.size), indexing="ij")
    run.write_csv("ar_coefficients.csv", ("lat_deg", "lon_deg", "phi", "flagged"),
                  zip(lat_deg[ii.ravel()], lon_deg[jj.ravel()], best.ar_coeffs.ravel(),
                      result.ar.flagged.ravel().tolist()))
    spectral = ds.longitudinal_fft(ds.innovations(anomalies, best.ar_coeffs))
    pgram = ds.periodogram(spectral)
    fitted = best.spectra()
    n_files = 0
    for i, fit in enumerate(result.spectrum_fits):
        if abs(lat_deg[i]) > ds.POLE_EXCLUSION_DEG:
            continue
        run.write_csv(f"spectra/spectrum_lat{i:03d}.csv", ("k", "periodogram", "fitted"),
                      zip(range(series.grid.n_lon), pgram[i], fitted[i]))
        n_files += 1
    kernel = _kernel(config) if "kernel" in config else None
    for name, box in boxes:
        rows = []
        candidates = [("VAR1-spectral independent latitudes", model, t_base)]
        if coherent is not None:
            candidates.insert(0, ("VAR1-spectral coherent", coherent, t_base + t_coh))
        for label, m, secs in candidates:
            ll = ds.model_loglik(m, anomalies, box)
            rows.append({"model": label, "n_params": ll.n_params, "time_minutes": secs / 60,
                         "normalized_loglik": ll.normalized, "bic": ll.bic})
        if kernel is not None:
            _require_valid(kernel)
            start = time.perf_counter()
            eps = ds.innovations(anomalies, best.ar_coeffs)
            n_par = len(kernel.flat_params())
            ll = ds.kernel_region_loglik(kernel, eps, box, n_par)
            rows.append({"model": f"kernel {kernel.family}", "n_params": n_par,
                         "time_minutes": (time.perf_counter() - start) / 60,
                         "normalized_loglik": ll.normalized, "bic": ll.bic})
        run.write(f"comparison_{name}.csv", f"# config_sha256={run.hash}\n# region={name} box={box}\n"
                  + ds.comparison_table(rows))
    run.write_json("dynspec_summary.json", {
        "n_lat": series.grid.n_lat, "n_lon": series.grid.n_lon, "n_times": series.n_times,
        "spectrum_files": n_files,
        "coherence_params": None if coherent is None else coherent.coherence_params,
        "regions": [n for n, _ in boxes],
    })
    print(f"fitted VAR(1)-spectral model on {series.grid.n_lat}x{series.grid.n_lon} grid")
    return EXIT_OK


HANDLERS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "score": cmd_score,
    "spectra": cmd_spectra,
    "dynspec": cmd_dynspec,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spheretime", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__name__.replace("cmd_", ""))
        p.add_argument("--config", required=True, help="YAML configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config, args.command, args.seed)
        run = Run(config, Path(args.out))
        return HANDLERS[args.command](config, run)
    except CommandFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InvalidParameterError as exc:
        print(f"invalid kernel: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SingularSystemError, SimulationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataFormatError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
