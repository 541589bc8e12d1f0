"""Command-line entry point.

Every command reads an optional INI configuration file. Each key of the
configuration can also be given as a flag named ``--section.key`` which takes
precedence over the file, e.g. ``--data.seed 7`` or ``--cost.R 1``.

Exit codes: 0 success, 2 infeasible, 3 verification failure, 4 I/O or
configuration error.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import hashlib
import json
import logging
import re
import sys
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import (CstrPreset, format_sweep, reproduce_cstr, seed_streams, seed_sweep)
from .consistency import build_pi_blocks
from .lti_sim import (DataSet, LtiSystem, NoiseModel, cstr_system, generate_dataset, load_dataset,
                      random_inputs, save_dataset)
from .mpc import (InitialInfeasibilityError, MpcConfig, RecursiveFeasibilityError,
                  run_closed_loop, run_to_csv, step_log_csv, summarize)
from .synthesis import (ORIGIN, ConstraintSets, CostWeights, SynthesisOptions, SynthesisResult,
                        format_report, synthesize)
from .verification import verify_certificate

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_VERIFY = 3
EXIT_CONFIG = 4

log = logging.getLogger("ddminmax")


class ConfigError(Exception):
    """Malformed configuration or input file; the message names the location."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def _parse_matrix(text: str) -> np.ndarray:
    text = text.strip()
    m = re.fullmatch(r"diag\((.*)\)", text)
    if m:
        return np.diag(np.atleast_1d(np.asarray(ast.literal_eval(f"[{m.group(1)}]"), dtype=float)))
    value = np.asarray(ast.literal_eval(text), dtype=float)
    if value.ndim > 2:
        raise ValueError("expected a scalar, a list of rows or diag(...)")
    return np.atleast_2d(value)


def _parse_vector(text: str) -> np.ndarray:
    value = np.asarray(ast.literal_eval(text.strip()), dtype=float)
    return np.atleast_1d(value).reshape(-1)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _parse_list(text: str) -> tuple:
    return tuple(s.strip().upper() for s in text.split(",") if s.strip())


def _parse_floats(text: str) -> tuple:
    return tuple(float(s) for s in text.split(",") if s.strip())


def _parse_optional_float(text: str) -> float | None:
    return None if text.strip().lower() == "none" else float(text)


_PRESET = CstrPreset()

# section -> key -> (parser, type description, CSTR default)
SCHEMA = {
    "plant": {
        "preset": (str, "name", "cstr"),
        "A": (_parse_matrix, "matrix", None),
        "B": (_parse_matrix, "matrix", None),
    },
    "data": {
        "T": (int, "integer", _PRESET.T),
        "eps": (float, "number", _PRESET.eps),
        "input_low": (float, "number", _PRESET.input_low),
        "input_high": (float, "number", _PRESET.input_high),
        "noise": (str, "noise kind", _PRESET.offline_noise),
        "x0": (_parse_vector, "vector", None),
        "seed": (int, "integer", _PRESET.seed),
    },
    "cost": {
        "Q": (_parse_matrix, "matrix", None),
        "R": (_parse_matrix, "matrix", None),
    },
    "constraints": {
        "enabled": (_parse_bool, "boolean", True),
        "S_u": (_parse_matrix, "matrix", None),
        "S_x": (_parse_matrix, "matrix", None),
    },
    "mpc": {
        "x0": (_parse_vector, "vector", None),
        "steps": (int, "integer", _PRESET.steps),
        "online_noise": (str, "noise kind", "zero"),
        "online_eps": (float, "number", _PRESET.online_eps),
        "convergence_threshold": (float, "number", _PRESET.convergence_threshold),
        "early_stop": (_parse_bool, "boolean", False),
    },
    "synthesis": {
        "solver": (str, "solver name", "CVXOPT"),
        "fallback_solvers": (_parse_list, "comma-separated list", ("CLARABEL",)),
        "multiplier_mode": (str, "mode", "per-sample"),
        "tau_scales": (_parse_floats, "comma-separated numbers", (1.0, 0.1, 10.0)),
        "incumbent_rtol": (_parse_optional_float, "number or none", 1e-6),
    },
    "verify": {
        "samples": (int, "integer", 1000),
        "states": (int, "integer", 100),
        "depth": (int, "integer", 20),
    },
}

_CSTR_MATRICES = {
    ("data", "x0"): np.zeros(2),
    ("cost", "Q"): np.array(_PRESET.Q),
    ("cost", "R"): np.atleast_2d(_PRESET.R),
    ("constraints", "S_u"): np.atleast_2d(_PRESET.S_u),
    ("constraints", "S_x"): np.array(_PRESET.S_x),
    ("mpc", "x0"): np.array(_PRESET.x0),
}


def _key_line(text: str, section: str, key: str) -> int | None:
    current = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        head = re.fullmatch(r"\[([^\]]+)\]", stripped)
        if head:
            current = head.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", stripped, re.IGNORECASE):
            return number
    return None


@dataclass
class Settings:
    values: dict
    sources: dict

    def __getitem__(self, item):
        return self.values[item]

    def plant(self) -> LtiSystem:
        if self.values["plant", "preset"] == "cstr" and self.values["plant", "A"] is None:
            return cstr_system()
        A, B = self.values["plant", "A"], self.values["plant", "B"]
        if A is None or B is None:
            raise ConfigError("[plant]: A and B are required unless preset = cstr")
        try:
            return LtiSystem(A, B)
        except ValueError as exc:
            raise ConfigError(f"[plant]: {exc}") from exc

    def weights(self) -> CostWeights:
        try:
            return CostWeights(self.values["cost", "Q"], self.values["cost", "R"])
        except ValueError as exc:
            raise ConfigError(f"[cost]: {exc}") from exc

    def constraints(self) -> ConstraintSets | None:
        if not self.values["constraints", "enabled"]:
            return None
        try:
            return ConstraintSets(self.values["constraints", "S_u"], self.values["constraints", "S_x"])
        except ValueError as exc:
            raise ConfigError(f"[constraints]: {exc}") from exc

    def synthesis(self) -> SynthesisOptions:
        try:
            return SynthesisOptions(multiplier_mode=self.values["synthesis", "multiplier_mode"],
                                    constrained=self.values["constraints", "enabled"],
                                    solver=self.values["synthesis", "solver"].upper(),
                                    fallback_solvers=self.values["synthesis", "fallback_solvers"],
                                    tau_scales=self.values["synthesis", "tau_scales"],
                                    incumbent_rtol=self.values["synthesis", "incumbent_rtol"])
        except ValueError as exc:
            raise ConfigError(f"[synthesis]: {exc}") from exc

    def noise(self, section: str) -> NoiseModel:
        kind_key, eps_key = (("noise", "eps") if section == "data" else ("online_noise", "online_eps"))
        try:
            return NoiseModel(self.values[section, eps_key], self.values[section, kind_key])
        except ValueError as exc:
            raise ConfigError(f"[{section}] {kind_key}: {exc}") from exc

    def as_lines(self) -> list:
        lines = []
        for (section, key), value in sorted(self.values.items()):
            if isinstance(value, np.ndarray):
                value = json.dumps(value.tolist())
            elif isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{section}.{key} = {value}")
        return lines


def load_settings(path: str | None, overrides: dict | None = None) -> Settings:
    """Merge defaults, the INI file at ``path`` and ``--section.key`` overrides."""
    text = ""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(str(exc).replace("\n", " ")) from exc
    where = str(path) if path is not None else "<flags>"
    raw, sources = {}, {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{where}: unknown section [{section}] (known: {', '.join(SCHEMA)})")
        lower = {k.lower(): k for k in SCHEMA[section]}
        for key, value in parser.items(section):
            if key.lower() not in lower:
                line = _key_line(text, section, key)
                raise ConfigError(f"{where}, line {line}: unknown key '{key}' in [{section}]")
            canon = lower[key.lower()]
            raw[section, canon] = value
            sources[section, canon] = f"{where}, line {_key_line(text, section, key)}"
    for (section, key), value in (overrides or {}).items():
        raw[section, key] = value
        sources[section, key] = f"flag --{section}.{key}"

    preset = raw.get(("plant", "preset"), "cstr").strip().lower()
    if preset not in ("cstr", "none"):
        raise ConfigError(f"{sources.get(('plant', 'preset'), where)}: [plant] preset: unknown "
                          f"preset '{preset}' (expected cstr or none)")
    values = {}
    for section, keys in SCHEMA.items():
        for key, (parse, kind, default) in keys.items():
            if (section, key) in raw:
                try:
                    values[section, key] = parse(raw[section, key])
                except (ValueError, SyntaxError, TypeError) as exc:
                    raise ConfigError(f"{sources[section, key]}: [{section}] {key}: expected {kind}, "
                                      f"got {raw[section, key]!r} ({exc})") from exc
            elif preset == "cstr" and (section, key) in _CSTR_MATRICES:
                values[section, key] = _CSTR_MATRICES[section, key]
            else:
                values[section, key] = default
    values["plant", "preset"] = preset
    settings = Settings(values, sources)
    plant = settings.plant()
    n, m = plant.n, plant.m
    required = {("data", "x0"): np.zeros(n), ("cost", "Q"): np.eye(n), ("cost", "R"): np.eye(m),
                ("constraints", "S_u"): None, ("constraints", "S_x"): None, ("mpc", "x0"): None}
    for (section, key), fallback in required.items():
        if values[section, key] is None:
            values[section, key] = fallback
    for (section, key), size in {("data", "x0"): n, ("mpc", "x0"): n}.items():
        if values[section, key] is not None and values[section, key].size != size:
            raise ConfigError(f"{sources.get((section, key), where)}: [{section}] {key}: expected "
                              f"length {size}, got {values[section, key].size}")
    for key, name in (("T", "data"), ("steps", "mpc")):
        if values[name, key] < (1 if key == "T" else 0):
            raise ConfigError(f"{sources.get((name, key), where)}: [{name}] {key}: must be "
                              f"{'positive' if key == 'T' else 'non-negative'}")
    if values["data", "eps"] < 0:
        raise ConfigError(f"{sources.get(('data', 'eps'), where)}: [data] eps: must be non-negative")
    return settings


# --------------------------------------------------------------------------
# file helpers
# --------------------------------------------------------------------------

def metadata_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".meta.txt")


def write_metadata(path, entries: dict) -> None:
    lines = [f"{k} = {v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_metadata(path) -> dict:
    out = {}
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}, line {number}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load_data(path, eps: float | None, settings: Settings | None = None) -> DataSet:
    if eps is None:
        meta = metadata_path(path)
        if meta.exists():
            try:
                eps = float(read_metadata(meta)["data.eps"])
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"{meta}: missing or malformed data.eps") from exc
        elif settings is not None:
            eps = settings["data", "eps"]
        else:
            raise ConfigError(f"{path}: noise bound unknown; pass --eps or keep {meta.name} "
                              "next to the data file")
    try:
        return load_dataset(path, eps)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _generate(settings: Settings, seed: int) -> DataSet:
    plant = settings.plant()
    rng = seed_streams(seed)["data"]
    U = random_inputs(rng, settings["data", "T"], plant.m, settings["data", "input_low"],
                      settings["data", "input_high"])
    return generate_dataset(plant, settings["data", "x0"], U, settings.noise("data"), rng)


def _write_data(data: DataSet, path: Path, settings: Settings) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(data, path)
    plant = settings.plant()
    write_metadata(metadata_path(path), {
        "artifact": "ddminmax", "version": __version__,
        **{k.split(" = ")[0]: k.split(" = ", 1)[1] for k in settings.as_lines()},
        "data.eps": repr(float(data.eps)), "data.T": data.T, "data.seed": settings["data", "seed"],
        "plant.A": json.dumps(plant.A.tolist()), "plant.B": json.dumps(plant.B.tolist()),
        "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
    })


def plot_script(settings: Settings) -> str:
    """Stand-alone matplotlib script that plots ``trajectory.csv`` with the
    axis-aligned extent of the constraint ellipsoids."""
    cons = settings.constraints()
    x_bounds = u_bounds = None
    if cons is not None:
        u_bounds = np.sqrt(np.diag(np.linalg.inv(cons.S_u))).tolist()
        if cons.S_x is not None:
            x_bounds = np.sqrt(np.diag(np.linalg.inv(cons.S_x))).tolist()
    return f'''"""Plot the closed-loop trajectory in this directory (needs matplotlib)."""
import csv
from pathlib import Path

import matplotlib.pyplot as plt

X_BOUNDS = {x_bounds!r}
U_BOUNDS = {u_bounds!r}

here = Path(__file__).resolve().parent
with open(here / "trajectory.csv") as fh:
    rows = list(csv.reader(fh))
header, rows = rows[0], rows[1:]
xs = [i for i, h in enumerate(header) if h.startswith("x")]
us = [i for i, h in enumerate(header) if h.startswith("u")]
t = [int(r[0]) for r in rows]
fig, axes = plt.subplots(len(xs) + len(us), 1, sharex=True, figsize=(7, 2.2 * (len(xs) + len(us))))
for ax, i in zip(axes, xs + us):
    is_input = i in us
    data = [(int(r[0]), float(r[i])) for r in rows if r[i] != ""]
    ax.plot([d[0] for d in data], [d[1] for d in data], drawstyle="steps-post" if is_input else "default")
    bounds = U_BOUNDS if is_input else X_BOUNDS
    k = (us if is_input else xs).index(i)
    if bounds is not None:
        for s in (-1, 1):
            ax.axhline(s * bounds[k], color="k", linestyle="--", linewidth=0.8)
    ax.set_ylabel(header[i])
axes[-1].set_xlabel("t")
fig.tight_layout()
fig.savefig(here / "trajectory.png", dpi=150)
print("wrote", here / "trajectory.png")
'''


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_generate_data(args, settings: Settings) -> int:
    data = _generate(settings, settings["data", "seed"])
    out = Path(args.out)
    _write_data(data, out, settings)
    print(f"wrote {out} ({data.T + 1} states, {data.T} inputs) and {metadata_path(out)}")
    return EXIT_OK


def _certificate_payload(result: SynthesisResult, x_t, weights: CostWeights,
                         cons: ConstraintSets | None, data: DataSet, data_path) -> dict:
    return {
        "version": __version__,
        "result": result.to_dict(),
        "x_t": np.asarray(x_t, dtype=float).tolist(),
        "Q": weights.Q.tolist(), "R": weights.R.tolist(),
        "S_u": None if cons is None else cons.S_u.tolist(),
        "S_x": None if cons is None or cons.S_x is None else cons.S_x.tolist(),
        "eps": float(data.eps), "n": data.n, "m": data.m, "T": data.T,
        "data": str(data_path),
    }


def cmd_synthesize(args, settings: Settings) -> int:
    data = _load_data(args.data, args.eps, settings)
    weights, cons = settings.weights(), settings.constraints()
    x_t = settings["mpc", "x0"] if args.x_t is None else _parse_vector(args.x_t)
    if x_t is None:
        raise ConfigError("no state given: pass --x-t or set [mpc] x0")
    if x_t.size != data.n or weights.n != data.n or weights.m != data.m:
        raise ConfigError(f"dimension mismatch: data has n={data.n}, m={data.m}; x_t has "
                          f"{x_t.size} entries, Q is {weights.n}x{weights.n}, R is "
                          f"{weights.m}x{weights.m}")
    result = synthesize(x_t, build_pi_blocks(data), weights, cons, settings.synthesis())
    print(format_report(result))
    if args.cert:
        Path(args.cert).parent.mkdir(parents=True, exist_ok=True)
        Path(args.cert).write_text(json.dumps(
            _certificate_payload(result, x_t, weights, cons, data, args.data), indent=2))
        print(f"certificate written to {args.cert}")
    return EXIT_OK if result.ok else EXIT_INFEASIBLE


def _write_run(out: Path, run, settings: Settings, m: int, extra: dict) -> str:
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectory.csv").write_text(run_to_csv(run, m))
    (out / "steps.csv").write_text(step_log_csv(run))
    summary = summarize(run, settings["mpc", "convergence_threshold"], cons=settings.constraints())
    text = summary.format() + f"\nconvergence threshold: {settings['mpc', 'convergence_threshold']:g}\n"
    (out / "summary.txt").write_text(text)
    write_metadata(out / "metadata.txt", {"artifact": "ddminmax", "version": __version__, **extra,
                                          **{k.split(" = ")[0]: k.split(" = ", 1)[1]
                                             for k in settings.as_lines()}})
    (out / "plot.py").write_text(plot_script(settings))
    return text


def cmd_simulate(args, settings: Settings) -> int:
    out = Path(args.out)
    seed = settings["data", "seed"]
    if args.data:
        data = _load_data(args.data, args.eps, settings)
    else:
        data = _generate(settings, seed)
        _write_data(data, out / "data.csv", settings)
    plant = settings.plant()
    if data.n != plant.n or data.m != plant.m:
        raise ConfigError(f"dimension mismatch: data has n={data.n}, m={data.m}, plant has "
                          f"n={plant.n}, m={plant.m}")
    cfg = MpcConfig(weights=settings.weights(), cons=settings.constraints(), data=data,
                    horizon_steps=settings["mpc", "steps"], online_noise=settings.noise("mpc"),
                    synthesis=settings.synthesis(),
                    convergence_threshold=settings["mpc", "convergence_threshold"],
                    early_stop=settings["mpc", "early_stop"])
    extra = {"seed": seed, "data": args.data or str(out / "data.csv")}
    try:
        run = run_closed_loop(plant, settings["mpc", "x0"], cfg, seed_streams(seed)["online"])
    except InitialInfeasibilityError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except RecursiveFeasibilityError as exc:
        _write_run(out, exc.run, settings, plant.m, {**extra, "failure": str(exc)})
        print(f"infeasible: {exc}; partial run written to {out}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(_write_run(out, run, settings, plant.m, extra), end="")
    print(f"run written to {out}")
    return EXIT_OK


def _arr_or_none(v):
    return None if v is None else np.atleast_2d(np.asarray(v, dtype=float))


def load_certificate(path) -> dict:
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}, line {exc.lineno}: {exc.msg}") from exc
    for key in ("result", "x_t", "Q", "R"):
        if key not in payload:
            raise ConfigError(f"{path}: missing field '{key}'")
    try:
        payload["result"] = SynthesisResult.from_dict(payload["result"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed result ({exc})") from exc
    return payload


def cmd_verify(args, settings: Settings) -> int:
    cert = load_certificate(args.cert)
    eps = args.eps if args.eps is not None else cert.get("eps")
    data = _load_data(args.data, eps, settings)
    result = cert["result"]
    x_t = np.asarray(cert["x_t"], dtype=float).reshape(-1)
    weights = CostWeights(_arr_or_none(cert["Q"]), _arr_or_none(cert["R"]))
    S_u = _arr_or_none(cert.get("S_u"))
    cons = None if S_u is None else ConstraintSets(S_u, _arr_or_none(cert.get("S_x")))
    n, m = data.n, data.m
    shapes = {"x_t": (x_t.size,), "Q": weights.Q.shape, "R": weights.R.shape}
    expected = {"x_t": (n,), "Q": (n, n), "R": (m, m)}
    if result.status != ORIGIN:
        shapes.update(F=np.shape(result.F), P=np.shape(result.P))
        expected.update(F=(m, n), P=(n, n))
    bad = [f"{k} has shape {shapes[k]}, expected {expected[k]}" for k in shapes
           if tuple(shapes[k]) != expected[k]]
    if bad:
        raise ConfigError(f"{args.cert} does not match {args.data} (n={n}, m={m}): "
                          + "; ".join(bad))
    if not result.ok:
        print(f"certificate status is {result.status}; nothing to verify")
        return EXIT_VERIFY
    rng = seed_streams(settings["data", "seed"])["verify"]
    report = verify_certificate(result, data, weights, cons, x_t, rng,
                                n_samples=settings["verify", "samples"],
                                n_states=settings["verify", "states"],
                                depth=settings["verify", "depth"])
    print(report.format())
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_reproduce_cstr(args, settings: Settings) -> int:
    preset = replace(CstrPreset(), synthesis=settings.synthesis(),
                     seed=settings["data", "seed"], steps=settings["mpc", "steps"],
                     convergence_threshold=settings["mpc", "convergence_threshold"])
    if args.seeds:
        print(format_sweep(seed_sweep(range(preset.seed, preset.seed + args.seeds), preset)))
        return EXIT_OK
    report = reproduce_cstr(preset, include_r1=not args.skip_r1)
    print(report.format())
    if args.out:
        out = Path(args.out)
        for case in report.cases:
            if case.run is None:
                continue
            name = f"{case.label}_R{case.R:g}"
            cs = Settings(dict(settings.values), settings.sources)
            cs.values["cost", "R"] = np.atleast_2d(case.R)
            cs.values["mpc", "online_noise"] = "uniform" if case.online_noise else "zero"
            _write_run(out / name, case.run, cs, 1, {"seed": preset.seed})
        print(f"runs written to {out}")
    if any(c.run is None for c in report.cases):
        return EXIT_INFEASIBLE
    return EXIT_OK if report.passed else EXIT_VERIFY


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with ``EXIT_CONFIG``.

    argparse's own code 2 is reserved for infeasibility.
    """

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ddminmax", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    keys = common.add_argument_group("configuration keys (override the file)")
    for section, entries in SCHEMA.items():
        for key, (_, kind, _) in entries.items():
            keys.add_argument(f"--{section}.{key}", dest=f"cfg:{section}.{key}", metavar=kind.upper()
                              .replace(" ", "_"), default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", parents=[common], help="record a noisy trajectory")
    p.add_argument("--out", default="data.csv", help="trajectory CSV path")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("synthesize", parents=[common], help="solve the SDP at one state")
    p.add_argument("--data", required=True, help="trajectory CSV")
    p.add_argument("--eps", type=float, help="noise bound (default: from the metadata file)")
    p.add_argument("--x-t", dest="x_t", help="state, e.g. '[-0.01, -0.04]' (default: [mpc] x0)")
    p.add_argument("--cert", help="write a certificate JSON file")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", parents=[common], help="run the receding-horizon loop")
    p.add_argument("--out", default="run", help="run directory")
    p.add_argument("--data", help="use this trajectory CSV instead of generating one")
    p.add_argument("--eps", type=float, help="noise bound for --data")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", parents=[common], help="sample-check a certificate")
    p.add_argument("--cert", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eps", type=float, help="noise bound (default: from the certificate)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("reproduce-cstr", parents=[common], help="run the CSTR benchmark")
    p.add_argument("--seeds", type=int, default=0,
                   help="instead of the benchmark, sweep this many seeds from [data] seed")
    p.add_argument("--skip-r1", action="store_true", help="skip the R = 1 run")
    p.add_argument("--out", help="write one run directory per case")
    p.set_defaults(func=cmd_reproduce_cstr)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        # solver status is reported per solve; the generic cvxpy hint adds nothing
        warnings.filterwarnings("ignore", message="Solution may be inaccurate")
    overrides = {}
    for dest, value in vars(args).items():
        if dest.startswith("cfg:") and value is not None:
            section, key = dest[4:].split(".", 1)
            overrides[section, key] = value
    try:
        settings = load_settings(args.config, overrides)
        return args.func(args, settings)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
