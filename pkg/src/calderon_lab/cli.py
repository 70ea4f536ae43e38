"""Command-line front end.

Every command reads a JSON config, writes its results (CSV/JSON) and a
``manifest.json`` to the output directory, and exits with

* 0 on success,
* 2 on an invalid config (a JSON diagnostic naming the key goes to stderr),
* 3 on a solver failure,
* 4 when an experiment misses its acceptance threshold.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import math
import platform
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CalderonLabError, ConfigError, DependencyError, SolverError
from .forward_solver import SolverConfig

log = logging.getLogger("calderon_lab")

SCHEMA_VERSION = "1"
COMMANDS = ("forward", "dn-measure", "linearize", "reconstruct", "cavity-exp", "partial-exp", "identity-check", "selftest")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_THRESHOLD = 0, 2, 3, 4

# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

NUM = (int, float)
OPT_DICT = (dict, type(None))

# key -> (accepted types, required, nested schema or None)
GEOMETRY = {
    "n": (int, True, None),
    "cavity": (OPT_DICT, False, None),
    "gamma": ((str, list), False, None),
    "notch": (OPT_DICT, False, None),
}
NONLINEARITY = {"coefficients": (dict, True, None)}
SOLVER = {f.name: (NUM, False, None) for f in fields(SolverConfig)}
LATTICE = {"kmax": (int, False, None), "radius": (NUM + (type(None),), False, None)}

COMMON = {
    "schema_version": (str, True, None),
    "output_dir": (str, False, None),
    "solver": (dict, False, SOLVER),
}

SCHEMAS = {
    "forward": {
        "geometry": (dict, True, GEOMETRY),
        "nonlinearity": (dict, True, NONLINEARITY),
        "data": (dict, True, None),
        "initial_guess": (str, False, None),
    },
    "dn-measure": {
        "geometry": (dict, True, GEOMETRY),
        "nonlinearity": (dict, True, NONLINEARITY),
        "probes": (list, True, None),
    },
    "linearize": {
        "geometry": (dict, True, GEOMETRY),
        "nonlinearity": (dict, True, NONLINEARITY),
        "probes": (list, True, None),
        "eps": (NUM, False, None),
    },
    "reconstruct": {
        "geometry": (dict, True, GEOMETRY),
        "nonlinearity": (dict, True, NONLINEARITY),
        "max_order": (int, False, None),
        "lattice": (dict, False, LATTICE),
        "eps": (NUM, False, None),
        "xi_max": (NUM, False, None),
        "k_max": (int, False, None),
        "fine_n": (int, False, None),
        "rcond": (NUM, False, None),
        "max_relative_l2": (NUM, False, None),
    },
    "cavity-exp": {
        "geometry": (dict, True, GEOMETRY),
        "nonlinearity": (dict, True, NONLINEARITY),
        "cavity1": (OPT_DICT, False, None),
        "cavity2": (OPT_DICT, False, None),
        "probes": (list, False, None),
        "eps": (NUM, False, None),
        "tau_sep": (NUM, False, None),
        "tau_floor": (NUM, False, None),
    },
    "partial-exp": {
        "geometry": (dict, True, GEOMETRY),
        "nonlinearity": (dict, True, NONLINEARITY),
        "variant1": (OPT_DICT, False, None),
        "variant2": (OPT_DICT, False, None),
        "probes": (list, False, None),
        "eps": (NUM, False, None),
        "tau_sep": (NUM, False, None),
        "tau_floor": (NUM, False, None),
    },
    "identity-check": {
        "geometry": (dict, True, GEOMETRY),
        "nonlinearity1": (dict, True, NONLINEARITY),
        "nonlinearity2": (dict, True, NONLINEARITY),
        "order": (int, True, None),
        "probes": (list, True, None),
        "eps": (NUM, False, None),
        "gap_tol": (NUM, False, None),
    },
    "selftest": {},
}


def _validate(obj: dict, schema: dict, path: str = "") -> None:
    for key in obj:
        if key not in schema:
            raise ConfigError(f"unknown config key {path + key!r}", key=path + key)
    for key, (types, required, sub) in schema.items():
        if key not in obj:
            if required:
                raise ConfigError(f"missing required config key {path + key!r}", key=path + key)
            continue
        val = obj[key]
        if isinstance(val, bool) or not isinstance(val, types):
            raise ConfigError(f"config key {path + key!r} has the wrong type", key=path + key)
        if sub is not None and isinstance(val, dict):
            _validate(val, sub, path + key + ".")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated command config; ``data`` is the parsed JSON object."""

    command: str
    data: dict

    @classmethod
    def from_dict(cls, command: str, data) -> "ExperimentConfig":
        if command not in SCHEMAS:
            raise ConfigError(f"unknown command {command!r}", key="command")
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        _validate(data, {**COMMON, **SCHEMAS[command]})
        if data["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {data['schema_version']!r}", key="schema_version")
        return cls(command, copy.deepcopy(data))

    @classmethod
    def load(cls, command: str, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", key="config") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}", key="config") from None
        return cls.from_dict(command, data)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def get(self, key, default=None):
        return self.data.get(key, default)

    def solver(self) -> SolverConfig:
        return SolverConfig(**self.data.get("solver", {}))


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _in_section(section: str, func, *args):
    """Call ``func`` and prefix the key of any ConfigError with ``section``."""
    try:
        return func(*args)
    except ConfigError as exc:
        if exc.key is not None and not exc.key.startswith(section + "."):
            exc.key = f"{section}.{exc.key}"
        raise


def _mask(cfg: ExperimentConfig):
    from .geometry import mask_from_config

    return _in_section("geometry", mask_from_config, cfg.data["geometry"])


def _grid(cfg: ExperimentConfig):
    from .geometry import build_grid

    return _in_section("geometry", build_grid, cfg.data["geometry"]["n"])


def _nonlinearity(section: dict, grid):
    from .nonlinearity import Nonlinearity

    return Nonlinearity.from_specs(grid, section["coefficients"])


def _probes(specs, mask, delta):
    from .probes import probe_from_config

    for p in specs:
        if not isinstance(p, dict):
            raise ConfigError("each probe must be a JSON object", key="probes")
    return [probe_from_config(p, mask, delta) for p in specs]


def _lattice(cfg: ExperimentConfig, xi_max: float):
    from .probes import frequency_lattice

    lat = cfg.get("lattice", {})
    radius = lat.get("radius", xi_max)
    return frequency_lattice(int(lat.get("kmax", 4)), radius if radius is not None else xi_max)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_forward(cfg: ExperimentConfig, out: Path, jobs) -> tuple[int, dict]:
    from .dn_map import DnOracle
    from .forward_solver import solve_semilinear
    from .io import write_field_csv

    mask = _mask(cfg)
    solver = cfg.solver()
    a = _nonlinearity(cfg.data["nonlinearity"], mask.grid)
    (f,) = _probes([cfg.data["data"]], mask, solver.delta)
    sol = solve_semilinear(a, mask, f, solver, cfg.get("initial_guess", "linearized"), details=True)
    write_field_csv(out / "solution.csv", mask, sol.u)
    dn = DnOracle(mask, a, solver).measure(f)
    from .dn_map import write_measurement_csv

    write_measurement_csv(out / "dn.csv", f, dn)
    return EXIT_OK, {"residual": sol.residual, "iterations": sol.iterations, "sup_norm": float(np.max(np.abs(sol.u)))}


def cmd_dn_measure(cfg: ExperimentConfig, out: Path, jobs) -> tuple[int, dict]:
    from .dn_map import DnOracle, write_measurement_csv

    mask = _mask(cfg)
    solver = cfg.solver()
    a = _nonlinearity(cfg.data["nonlinearity"], mask.grid)
    oracle = DnOracle(mask, a, solver)
    summary = {"measurements": []}
    for idx, f in enumerate(_probes(cfg.data["probes"], mask, solver.delta)):
        dn = oracle.measure(f)
        write_measurement_csv(out / f"dn_{idx}.csv", f, dn)
        summary["measurements"].append({"probe": idx, "sup": dn.sup_norm(), "l2": dn.l2_norm()})
    return EXIT_OK, summary


def cmd_linearize(cfg: ExperimentConfig, out: Path, jobs) -> tuple[int, dict]:
    from .dn_map import DnOracle
    from .io import write_json
    from .linearization import chain_terms_json, mixed_derivative

    mask = _mask(cfg)
    solver = cfg.solver()
    a = _nonlinearity(cfg.data["nonlinearity"], mask.grid)
    probes = _probes(cfg.data["probes"], mask, solver.delta)
    d = mixed_derivative(DnOracle(mask, a, solver), probes, cfg.get("eps"))
    d.write_csv(out / "derivative.csv")
    write_json(out / "chain_terms.json", chain_terms_json(d.order))
    return EXIT_OK, {"order": d.order, "eps": d.eps, "scales": list(d.scales), "integral": d.integrate()}


def cmd_reconstruct(cfg: ExperimentConfig, out: Path, jobs) -> tuple[int, dict]:
    from .dn_map import DnOracle
    from .experiments import RCOND, masked_coefficient_recovery
    from .io import write_csv
    from .probes import XI_MAX_DEFAULT
    from .reconstruction import FINE_N_DEFAULT, K_MAX_DEFAULT, reconstruct

    mask = _mask(cfg)
    solver = cfg.solver()
    a = _nonlinearity(cfg.data["nonlinearity"], mask.grid)
    oracle = DnOracle(mask, a, solver)
    xi_max = float(cfg.get("xi_max", XI_MAX_DEFAULT))
    lattice = _lattice(cfg, xi_max)
    if mask.is_plain_square:
        result = reconstruct(
            oracle,
            int(cfg.get("max_order", 2)),
            lattice,
            truth=a,
            eps=cfg.get("eps"),
            jobs=jobs,
            xi_max=xi_max,
            k_max=int(cfg.get("k_max", K_MAX_DEFAULT)),
            fine_n=int(cfg.get("fine_n", FINE_N_DEFAULT)),
        )
        metric = "relative_l2"
    else:
        if int(cfg.get("max_order", 2)) != 2:
            raise ConfigError("masked geometries support max_order 2 only", key="max_order")
        result = masked_coefficient_recovery(
            oracle, mask, lattice, truth=a, rcond=float(cfg.get("rcond", RCOND)), eps=cfg.get("eps"), jobs=jobs, xi_max=xi_max
        )
        metric = "relative_l2_truth"
    for k in sorted(result.fields):
        result.write_csv(out / f"q{k}_recovery.csv", k, mask)
        if k in result.samples:
            write_csv(out / f"q{k}_samples.csv", ("xi1", "xi2", "re", "im"), result.samples[k].to_rows())
    summary = result.summary()
    summary["eps"] = cfg.get("eps")
    summary["metric"] = metric
    code = EXIT_OK
    limit = cfg.get("max_relative_l2")
    if limit is not None:
        worst = max((e[metric] for e in result.errors.values()), default=0.0)
        summary["passed"] = worst <= limit
        code = EXIT_OK if summary["passed"] else EXIT_THRESHOLD
    return code, summary


def _report_result(rep, out: Path) -> tuple[int, dict]:
    rep.write(out, "report")
    return (EXIT_OK if rep.passed else EXIT_THRESHOLD), rep.to_json()


def cmd_cavity_exp(cfg: ExperimentConfig, out: Path, jobs) -> tuple[int, dict]:
    from .experiments import TAU_FLOOR, TAU_SEP, cavity_distinguishability
    from .geometry import cavity_from_config

    geo = cfg.data["geometry"]
    if geo.get("cavity") is not None or geo.get("notch") is not None or geo.get("gamma", "all") != "all":
        raise ConfigError("cavity-exp takes its cavities from cavity1/cavity2", key="geometry.cavity")
    grid = _grid(cfg)
    a = _nonlinearity(cfg.data["nonlinearity"], grid)
    solver = cfg.solver()
    probes = cfg.get("probes", [{"type": "constant", "value": solver.delta}])
    rep = cavity_distinguishability(
        a,
        cavity_from_config(cfg.get("cavity1")),
        cavity_from_config(cfg.get("cavity2")),
        probes,
        solver,
        cfg.get("eps"),
        float(cfg.get("tau_sep", TAU_SEP)),
        float(cfg.get("tau_floor", TAU_FLOOR)),
    )
    return _report_result(rep, out)


def cmd_partial_exp(cfg: ExperimentConfig, out: Path, jobs) -> tuple[int, dict]:
    from .experiments import PARTIAL_TAU_SEP, TAU_FLOOR, partial_data_distinguishability
    from .geometry import notch_from_config

    geo = cfg.data["geometry"]
    if geo.get("cavity") is not None or geo.get("notch") is not None:
        raise ConfigError("partial-exp takes its hidden boundaries from variant1/variant2", key="geometry.notch")
    grid = _grid(cfg)
    a = _nonlinearity(cfg.data["nonlinearity"], grid)
    solver = cfg.solver()
    rep = partial_data_distinguishability(
        a,
        geo.get("gamma", "all"),
        (notch_from_config(cfg.get("variant1")), notch_from_config(cfg.get("variant2"))),
        cfg.get("probes"),
        solver,
        cfg.get("eps"),
        float(cfg.get("tau_sep", PARTIAL_TAU_SEP)),
        float(cfg.get("tau_floor", TAU_FLOOR)),
    )
    return _report_result(rep, out)


def cmd_identity_check(cfg: ExperimentConfig, out: Path, jobs) -> tuple[int, dict]:
    from .experiments import GAP_TOL, verify_weighted_identity

    mask = _mask(cfg)
    a1 = _nonlinearity(cfg.data["nonlinearity1"], mask.grid)
    a2 = _nonlinearity(cfg.data["nonlinearity2"], mask.grid)
    for p in cfg.data["probes"]:
        if not isinstance(p, dict):
            raise ConfigError("each probe must be a JSON object", key="probes")
    rep = verify_weighted_identity(
        a1, a2, mask, int(cfg.data["order"]), cfg.data["probes"], cfg.solver(), cfg.get("eps"),
        float(cfg.get("gap_tol", GAP_TOL)),
    )
    return _report_result(rep, out)


def selftest_checks():
    """Small closed-form checks across all modules: ``[(name, ok, detail)]``."""
    from .dn_map import DnOracle
    from .experiments import cavity_distinguishability
    from .forward_solver import solve_linear, solve_semilinear
    from .geometry import Disk, Which, build_grid, build_mask
    from .linearization import BELL, assemble_RN, chain_terms
    from .nonlinearity import Nonlinearity, check_condition_1_2
    from .probes import calderon_pair, combination_ledger, weight_function
    from .reconstruction import recover_order2

    results = []

    def check(name, func):
        try:
            ok, detail = func()
        except Exception as exc:  # a crash is a failed check, reported not raised
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), str(detail)))

    grid = build_grid(16)
    mask = build_mask(grid)
    x, y = grid.coords

    def outer_length():
        total = float(np.sum(mask.trace(Which.OUTER).weights))
        return abs(total - 4.0) < 1e-12, total

    def zero_at_origin():
        a = Nonlinearity.from_specs(grid, {2: {"type": "constant", "value": 1.0}, 3: {"type": "constant", "value": 2.0}})
        v = float(np.max(np.abs(a.eval(np.zeros(grid.shape)))))
        return v == 0.0, v

    def condition_zero():
        return check_condition_1_2(Nonlinearity.zero(grid), grid, mask), "q1 = 0"

    def linear_exact():
        u = solve_semilinear(Nonlinearity.zero(grid), mask, 0.1 * x)
        err = float(np.max(np.abs(u - 0.1 * x)))
        return err < 1e-10, err

    def constant_weight():
        v0 = weight_function(mask)
        err = float(np.max(np.abs(v0 - 1.0)))
        return err < 1e-12, err

    def ledger():
        c = [e.coefficient for e in combination_ledger(2).entries]
        return c == [1, 1j, 1j, -1], c

    def zero_frequency():
        p = calderon_pair((0.0, 0.0), grid, 0.1)
        err = float(np.max(np.abs(p.f1.values - p.scale)))
        return err == 0.0 and p.scale == 0.1, p.scale

    def bell():
        counts = [len(chain_terms(m)) for m in range(1, 6)]
        return tuple(counts) == BELL[1:6], counts

    def r1_empty():
        one = np.ones(grid.shape)
        r = assemble_RN(chain_terms(2), {(1,): one, (2,): one}, {2: one})
        return not np.any(r), "R_1 = 0"

    def zero_target():
        oracle = DnOracle(mask, Nonlinearity.zero(grid))
        samples, fld = recover_order2(oracle, [(0.0, 0.0), (math.pi, 0.0)])
        worst = max(abs(v) for v in samples.values)
        return worst <= 1e-6 and not np.any(fld), worst

    def identical_cavities():
        g = build_grid(32)
        a = Nonlinearity.from_specs(g, {2: {"type": "constant", "value": 1.0}})
        rep = cavity_distinguishability(a, Disk((0.5, 0.5), 0.2), Disk((0.5, 0.5), 0.2), [{"type": "constant", "value": 0.1}])
        return rep.passed, rep.max_sup()

    def harmonic_zero_data():
        u = solve_linear(None, None, mask, None)
        return not np.any(u), "g = 0"

    for name, func in [
        ("geometry.outer_length", outer_length),
        ("nonlinearity.zero_at_origin", zero_at_origin),
        ("nonlinearity.condition_q1_zero", condition_zero),
        ("forward.zero_data", harmonic_zero_data),
        ("forward.linear_exactness", linear_exact),
        ("probes.constant_weight", constant_weight),
        ("probes.ledger_m2", ledger),
        ("probes.zero_frequency", zero_frequency),
        ("linearization.bell_numbers", bell),
        ("linearization.r1_empty", r1_empty),
        ("reconstruction.zero_target", zero_target),
        ("experiments.identical_cavities", identical_cavities),
    ]:
        check(name, func)
    return results


def cmd_selftest(cfg, out: Path, jobs) -> tuple[int, dict]:
    from .io import write_csv

    results = selftest_checks()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    write_csv(out / "selftest.csv", ("check", "passed", "detail"), [(n, int(ok), d) for n, ok, d in results])
    passed = all(ok for _, ok, _ in results)
    return (EXIT_OK if passed else EXIT_THRESHOLD), {"checks": len(results), "passed": passed}


HANDLERS = {
    "forward": cmd_forward,
    "dn-measure": cmd_dn_measure,
    "linearize": cmd_linearize,
    "reconstruct": cmd_reconstruct,
    "cavity-exp": cmd_cavity_exp,
    "partial-exp": cmd_partial_exp,
    "identity-check": cmd_identity_check,
    "selftest": cmd_selftest,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calderon-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "selftest", help="JSON config file")
        p.add_argument("--out", help="output directory (overrides output_dir in the config)")
        p.add_argument("--jobs", type=int, default=None, help="parallel workers (default: all CPUs)")
        p.add_argument("--verbose", action="store_true")
    return parser


def _diagnose(exc: Exception, code: int) -> None:
    diag = exc.diagnostic() if isinstance(exc, CalderonLabError) else {"error": type(exc).__name__, "message": str(exc)}
    diag["exit_code"] = code
    print(json.dumps(diag, sort_keys=True), file=sys.stderr)


def _versions() -> dict:
    import scipy

    return {"calderon_lab": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def run(command: str, config_path=None, out=None, jobs=None) -> int:
    """Run one command; returns the exit code."""
    from .io import write_json

    t0 = time.perf_counter()
    try:
        if jobs is not None and jobs < 1:
            raise ConfigError("--jobs must be >= 1", key="jobs")
        if command == "selftest" and config_path is None:
            cfg = ExperimentConfig("selftest", {"schema_version": SCHEMA_VERSION})
        else:
            cfg = ExperimentConfig.load(command, config_path)
        out_dir = Path(out or cfg.get("output_dir") or f"results/{command}")
        out_dir.mkdir(parents=True, exist_ok=True)
        code, summary = HANDLERS[command](cfg, out_dir, jobs)
    except (ConfigError, DependencyError) as exc:
        _diagnose(exc, EXIT_CONFIG)
        return EXIT_CONFIG
    except SolverError as exc:
        _diagnose(exc, EXIT_SOLVER)
        return EXIT_SOLVER
    runtime = time.perf_counter() - t0
    write_json(out_dir / "summary.json", summary)
    outputs = sorted(p.name for p in out_dir.iterdir() if p.is_file() and p.name != "manifest.json")
    write_json(
        out_dir / "manifest.json",
        {
            "command": command,
            "schema_version": SCHEMA_VERSION,
            "config": cfg.to_dict(),
            "config_hash": cfg.hash(),
            "versions": _versions(),
            "jobs": jobs,
            "runtime_s": runtime,
            "exit_code": code,
            "outputs": outputs,
        },
    )
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.config, args.out, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
