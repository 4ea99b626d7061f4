"""Batch command line front end.

Runs are described by an INI file with the sections ``[model]``,
``[method]``, ``[thermo]``, ``[oracle]``, ``[output]`` and (for ``sweep``)
``[sweep]``.  Every run writes CSV tables plus one ``manifest.json`` that
records all effective parameters; values that were not given explicitly are
marked as defaulted.

Exit codes: 0 success, 1 verification failed, 2 invalid configuration or
output location, 3 trajectory aborted, 4 oracle capacity exceeded.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import math
import os
import shutil
import sys
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import (
    CapacityError,
    ConfigurationError,
    DomainError,
    SectorError,
    TndosError,
    TrajectoryDivergenceError,
)
from .estimator import PATHWAYS, DosEstimator, make_spec
from .hs import BroadenedDos, TraceSeries, tune_parameters
from .models import OBSERVABLES
from .oracles import (
    DEFAULT_ED_CAP,
    broadened_dos_exact,
    error_metrics,
    exact_diag,
    ising_characteristic_trace,
    plateau_onset,
    resolution_sweep,
)
from .thermo import default_temperature_grid, entropy, free_energy, thermal_average

log = logging.getLogger("tndos")

OUTPUT_ROOT_ENV = "TNDOS_OUTPUT_ROOT"
MANIFEST_NAME = "manifest.json"

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_TRAJECTORY, EXIT_CAPACITY = 0, 1, 2, 3, 4


# ---------------------------------------------------------------------------
# configuration schema
# ---------------------------------------------------------------------------

def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean (true/false)")


def _optional(parse):
    def inner(text: str):
        return None if text.strip().lower() in ("", "none", "auto") else parse(text)
    return inner


def _name_list(text: str) -> list:
    return [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]


def _float_list(text: str) -> list:
    return [float(t) for t in _name_list(text)]


def _int_list(text: str) -> list:
    return [int(t) for t in _name_list(text)]


def _sector(text: str):
    t = text.strip().lower()
    if t in ("even", "odd", "half", "full", "default"):
        return t
    parts = [p for p in t.replace("(", "").replace(")", "").split(",") if p.strip()]
    return [int(p) for p in parts]


@dataclass(frozen=True)
class Field:
    parse: object
    default: object = None
    required: bool = False
    check: object = None  # callable(value) -> error message or None


def _positive(v):
    return None if v is None or v > 0 else "must be positive"


def _at_least_one(v):
    return None if v is None or v >= 1 else "must be at least 1"


def _open_unit(v):
    return None if 0 < v < 1 else "must lie strictly between 0 and 1"


def _choice(*options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(options)}"
    return check


SCHEMA = {
    "model": {
        "model": Field(str, "ising", check=_choice("ising", "hubbard")),
        "L": Field(int, required=True, check=_at_least_one),
        "h": Field(float, 1.0),
        "U": Field(float, 1.0),
        "J": Field(float, 1.0),
        "sector": Field(_sector, "default"),
    },
    "method": {
        "pathway": Field(str, "sampling", check=_choice(*PATHWAYS)),
        "m": Field(int, 16, check=_at_least_one),
        "n_samples": Field(int, 100, check=_at_least_one),
        "seed": Field(int, 0, check=lambda v: None if v >= 0 else "must be nonnegative"),
        "eta": Field(_optional(float), None, check=_positive),
        "chi": Field(float, 1e-10, check=_open_unit),
        "energy_points": Field(_optional(int), None, check=lambda v: None if v is None or v >= 2
                               else "must be at least 2"),
        "observables": Field(_name_list, []),
        "batch_size": Field(int, 250, check=_at_least_one),
        "cutoff": Field(float, 1e-24, check=lambda v: None if v >= 0 else "must be nonnegative"),
        "abort_threshold": Field(float, 1e-2, check=_positive),
        "quadrature": Field(str, "auto", check=_choice("auto", "direct", "czt")),
        "records": Field(_bool, False),
    },
    "thermo": {
        "t_min": Field(_optional(float), None, check=_positive),
        "t_max": Field(_optional(float), None, check=_positive),
        "n_points": Field(int, 200, check=lambda v: None if v >= 3 else "must be at least 3"),
        "dos_from": Field(_optional(str), None),
    },
    "oracle": {
        "route": Field(str, "auto", check=_choice("auto", "dense", "free_fermion")),
        "max_dim": Field(int, DEFAULT_ED_CAP, check=_at_least_one),
        "epsilon0_tol": Field(float, 0.05, check=_positive),
        "epsilon_prime_tol": Field(_optional(float), None, check=_positive),
    },
    "output": {
        "directory": Field(_optional(str), None),
        "formats": Field(_name_list, ["csv"], check=lambda v: None if set(v) <= {"csv"}
                         else "only csv output is supported"),
    },
    "sweep": {
        "eta_list": Field(_float_list, []),
        "m_list": Field(_int_list, []),
    },
}


@dataclass
class RunConfig:
    """Validated configuration; ``entries[section][key] = (value, defaulted)``."""

    entries: dict
    source: str = ""
    overrides: dict = field(default_factory=dict)

    def __getitem__(self, item):
        section, key = item
        return self.entries[section][key][0]

    def set(self, section: str, key: str, value, origin: str) -> None:
        self.entries[section][key] = (value, False)
        self.overrides[f"{section}.{key}"] = origin

    def manifest_view(self) -> dict:
        out = {}
        for section, items in self.entries.items():
            out[section] = {k: {"value": v, "defaulted": d} for k, (v, d) in items.items()}
        return out


class ConfigValidationError(ConfigurationError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def load_config(text: str, source: str = "") -> RunConfig:
    """Parse and validate configuration text; all problems are reported together."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigValidationError([f"unreadable configuration: {exc}"]) from exc
    problems = []
    for section in parser.sections():
        if section not in SCHEMA:
            problems.append(f"[{section}]: unknown section")
            continue
        for key in parser[section]:
            if key not in SCHEMA[section]:
                problems.append(f"{section}.{key}: unknown field")
    entries = {}
    for section, fields in SCHEMA.items():
        entries[section] = {}
        for key, spec in fields.items():
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    value = spec.parse(raw)
                except (TypeError, ValueError) as exc:
                    problems.append(f"{section}.{key}: cannot parse {raw!r} ({exc})")
                    continue
                msg = spec.check(value) if spec.check else None
                if msg:
                    problems.append(f"{section}.{key}: {msg}, got {raw.strip()}")
                    continue
                entries[section][key] = (value, False)
            elif spec.required:
                problems.append(f"{section}.{key}: required field is missing")
            else:
                entries[section][key] = (spec.default, True)
    if problems:
        raise ConfigValidationError(problems)
    cfg = RunConfig(entries, source)
    _resolve_dependent_defaults(cfg)
    return cfg


def _resolve_dependent_defaults(cfg: RunConfig) -> None:
    eta, defaulted = cfg.entries["method"]["eta"]
    if eta is None:
        cfg.entries["method"]["eta"] = (10.0 * cfg["model", "L"] ** 2, defaulted)
    sector = cfg["model", "sector"]
    if isinstance(sector, list):
        sector = tuple(sector)
    try:
        spec = make_spec(cfg["model", "model"], cfg["model", "L"], cfg["model", "h"], cfg["model", "U"],
                         cfg["model", "J"], sector)
    except TndosError as exc:
        raise ConfigValidationError([f"model.sector: {exc}"]) from exc
    unknown = [n for n in cfg["method", "observables"] if n not in OBSERVABLES[spec.model]]
    if unknown:
        raise ConfigValidationError([f"method.observables: unknown for {spec.model}: {', '.join(unknown)}; "
                                     f"available: {', '.join(OBSERVABLES[spec.model])}"])


def _spec_from(cfg: RunConfig):
    sector = cfg["model", "sector"]
    return make_spec(cfg["model", "model"], cfg["model", "L"], cfg["model", "h"], cfg["model", "U"],
                     cfg["model", "J"], tuple(sector) if isinstance(sector, list) else sector)


def _estimator_from(cfg: RunConfig, threads: int) -> DosEstimator:
    sector = cfg["model", "sector"]
    return DosEstimator(
        model=cfg["model", "model"], n_sites=cfg["model", "L"], h=cfg["model", "h"], U=cfg["model", "U"],
        J=cfg["model", "J"], sector=tuple(sector) if isinstance(sector, list) else sector,
        pathway=cfg["method", "pathway"], m=cfg["method", "m"], n_samples=cfg["method", "n_samples"],
        eta=cfg["method", "eta"], chi=cfg["method", "chi"], energy_points=cfg["method", "energy_points"],
        observables=tuple(cfg["method", "observables"]), seed=cfg["method", "seed"],
        batch_size=cfg["method", "batch_size"], threads=threads, cutoff=cfg["method", "cutoff"],
        abort_threshold=cfg["method", "abort_threshold"], quadrature=cfg["method", "quadrature"],
        ed_cap=cfg["oracle", "max_dim"],
    )


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".17g")


class OutputWriter:
    """Single owner of one write-once output directory.

    All file writes go through :meth:`write_table` / :meth:`write_manifest`,
    which are serialized by a lock so worker threads never touch files
    directly.
    """

    def __init__(self, directory: Path, overwrite: bool = False):
        self.directory = Path(directory)
        self._lock = threading.Lock()
        self.files = {}
        if self.directory.exists():
            if not self.directory.is_dir():
                raise ConfigurationError(f"output path {self.directory} exists and is not a directory")
            if any(self.directory.iterdir()):
                if not overwrite:
                    raise ConfigurationError(f"output directory {self.directory} is not empty; "
                                             "pass --overwrite to replace a previous run")
                if not (self.directory / MANIFEST_NAME).exists():
                    raise ConfigurationError(f"refusing to overwrite {self.directory}: it holds no "
                                             f"{MANIFEST_NAME} from a previous run")
                shutil.rmtree(self.directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _commit(self, name: str, text: str) -> None:
        data = text.encode()
        with self._lock:
            if name in self.files:
                raise ConfigurationError(f"{name} was already written in this run")
            (self.directory / name).write_bytes(data)
            self.files[name] = hashlib.sha256(data).hexdigest()

    def write_table(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])
        self._commit(name, buf.getvalue())

    def write_manifest(self, payload: dict) -> None:
        payload = dict(payload)
        payload["files"] = dict(sorted(self.files.items()))
        self._commit(MANIFEST_NAME, json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.ndarray, tuple)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def resolve_output_dir(cli_out: str | None, cfg: RunConfig, config_path: Path, command: str) -> Path:
    """``--out`` beats ``output.directory``; relative paths go under the
    output-root environment variable when it is set."""
    chosen = cli_out or cfg["output", "directory"] or f"{config_path.stem}_{command}"
    path = Path(chosen)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _base_manifest(command: str, cfg: RunConfig, spec, params) -> dict:
    return {
        "tool": "tndos",
        "version": __version__,
        "command": command,
        "config_source": cfg.source,
        "overrides": cfg.overrides,
        "config": cfg.manifest_view(),
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__,
                     "python": ".".join(map(str, sys.version_info[:3]))},
        "model": {"model": spec.model, "L": spec.n_sites, "sector": spec.sector, "sector_dim": spec.sector_dim,
                  **spec.param_dict},
        "derived": params.as_dict() | {"T_lim": params.T_lim},
    }


def _seed_manifest(cfg: RunConfig) -> dict:
    if cfg["method", "pathway"] != "sampling":
        return {"base": None, "count": 0, "rule": "deterministic pathway"}
    return {"base": cfg["method", "seed"], "count": cfg["method", "n_samples"], "rule": "trajectory r uses base + r"}


def _dos_rows(dos: BroadenedDos):
    se = dos.std_error if dos.std_error is not None else np.full(len(dos.energies), np.nan)
    return zip(dos.energies, dos.density, se)


def _diagnostics(est: DosEstimator) -> dict:
    dos = est.dos_
    out = {"spectral_mass": dos.spectral_mass, "negative_mass": dos.negative_mass,
           "mass_std_error": dos.mass_std_error}
    if est.series_ is not None:
        out["max_truncation"] = est.series_.max_truncation
        out["trace_method"] = est.series_.method
    return out


def _write_records(writer: OutputWriter, est: DosEstimator) -> None:
    series = est.series_
    if series is None or series.samples is None:
        rows = [] if series is None else (
            (str(k), t, v.real, v.imag) for k, (t, v) in enumerate(zip(series.times, series.values)))
        writer.write_table("trace.csv", ["k", "t", "re_trace", "im_trace"], rows)
        return

    def rows():
        for seed, sample in zip(series.seeds, series.samples):
            for k, (t, v) in enumerate(zip(series.times, sample)):
                yield str(seed), str(k), t, v.real, v.imag

    writer.write_table("trajectories.csv", ["seed", "k", "t", "re_overlap", "im_overlap"], rows())


def _temperatures(cfg: RunConfig, dos: BroadenedDos) -> np.ndarray:
    n = cfg["thermo", "n_points"]
    base = default_temperature_grid(dos, n)
    lo = cfg["thermo", "t_min"] or base[0]
    hi = cfg["thermo", "t_max"] or base[-1]
    if not hi > lo:
        raise ConfigValidationError([f"thermo.t_max: must exceed t_min ({lo:g}), got {hi:g}"])
    return np.logspace(math.log10(lo), math.log10(hi), n)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _fit(cfg: RunConfig, threads: int) -> DosEstimator:
    est = _estimator_from(cfg, threads)
    log.info("running %s pathway for %s L=%d", est.pathway, est.model, est.n_sites)
    return est.fit()


def cmd_dos(cfg: RunConfig, writer: OutputWriter, threads: int) -> int:
    est = _fit(cfg, threads)
    writer.write_table("dos.csv", ["E", "D", "std_error"], _dos_rows(est.dos_))
    if cfg["method", "records"]:
        _write_records(writer, est)
    manifest = _base_manifest("dos", cfg, est.spec_, est.params_)
    manifest.update(seeds=_seed_manifest(cfg), diagnostics=_diagnostics(est))
    writer.write_manifest(manifest)
    return EXIT_OK


def _dos_from_previous(directory: Path):
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    data = np.loadtxt(directory / "dos.csv", delimiter=",", skiprows=1, ndmin=2)
    model = manifest["model"]
    dos = BroadenedDos(data[:, 0], data[:, 1], manifest["derived"]["eta"],
                       tuple(model["sector"]) if model["sector"] is not None else None,
                       model["sector_dim"], model["L"])
    return dos, manifest


def cmd_thermo(cfg: RunConfig, writer: OutputWriter, threads: int) -> int:
    source = cfg["thermo", "dos_from"]
    if source:
        src = Path(source)
        if not (src / "dos.csv").exists() or not (src / MANIFEST_NAME).exists():
            raise ConfigValidationError([f"thermo.dos_from: {src} does not hold dos.csv and {MANIFEST_NAME}"])
        dos, previous = _dos_from_previous(src)
        spec = _spec_from(cfg)
        params = tune_parameters(spec, dos.eta, cfg["method", "chi"], cfg["method", "energy_points"])
        diagnostics = {"dos_from": str(src), "dos_manifest_files": previous.get("files", {})}
    else:
        est = _fit(cfg, threads)
        dos, spec, params = est.dos_, est.spec_, est.params_
        diagnostics = _diagnostics(est)
        writer.write_table("dos.csv", ["E", "D", "std_error"], _dos_rows(dos))
    curve = entropy(free_energy(dos, _temperatures(cfg, dos)))
    L = spec.n_sites
    writer.write_table(
        "thermo.csv", ["T", "F", "F_per_site", "S", "S_per_site", "below_threshold"],
        ((T, F, F / L, S, S / L, str(int(flag)))
         for T, F, S, flag in zip(curve.temperatures, curve.free_energy, curve.entropy, curve.below_threshold)))
    diagnostics["clamped_mass"] = curve.clamped_mass
    manifest = _base_manifest("thermo", cfg, spec, params)
    manifest.update(seeds=_seed_manifest(cfg), diagnostics=diagnostics)
    writer.write_manifest(manifest)
    return EXIT_OK


def cmd_spectral(cfg: RunConfig, writer: OutputWriter, threads: int) -> int:
    names = cfg["method", "observables"]
    if not names:
        raise ConfigValidationError(["method.observables: the spectral command needs at least one observable"])
    est = _fit(cfg, threads)
    dos = est.dos_
    spectra = [est.spectral_observable(n) for n in names]
    header = ["E", "D"]
    for n in names:
        header += [n, f"{n}_masked"]

    def rows():
        for i, (e, d) in enumerate(zip(dos.energies, dos.density)):
            row = [e, d]
            for s in spectra:
                row += [s.values[i], str(int(s.mask[i]))]
            yield row

    writer.write_table("spectral.csv", header, rows())
    T = _temperatures(cfg, dos)
    averages = [thermal_average(s, dos, T, tolerance=math.inf) for s in spectra]
    header = ["T", "below_threshold"]
    for n in names:
        header += [n, f"{n}_masked_weight"]
    flags = T <= 3.0 * dos.T_lim
    writer.write_table("thermal.csv", header,
                       ([T[i], str(int(flags[i]))] + [x for a in averages for x in (a.values[i], a.masked_weight[i])]
                        for i in range(len(T))))
    manifest = _base_manifest("spectral", cfg, est.spec_, est.params_)
    manifest.update(seeds=_seed_manifest(cfg), diagnostics=_diagnostics(est))
    writer.write_manifest(manifest)
    return EXIT_OK


def _reference(cfg: RunConfig, spec, params):
    """Exact broadened density chosen by ``oracle.route``; checked before any costly work."""
    route = cfg["oracle", "route"]
    cap = cfg["oracle", "max_dim"]
    if route == "auto":
        route = "free_fermion" if spec.model == "ising" and spec.sector_dim > cap else "dense"
    if route == "free_fermion":
        if spec.model != "ising":
            raise ConfigValidationError(["oracle.route: free_fermion applies to the Ising chain only"])
        parity = None if spec.sector is None else ("even" if spec.sector == (0,) else "odd")
        tr = ising_characteristic_trace(spec.n_sites, spec.h, params.times, parity)
        series = TraceSeries(params.times, tr, spec.sector, spec.sector_dim, method="free-fermion",
                             n_sites=spec.n_sites)
        return broadened_dos_exact(series, params.eta, params.energies), route
    if spec.sector_dim > cap:
        hint = "; set oracle.route = free_fermion" if spec.model == "ising" else ""
        raise CapacityError(f"sector dimension {spec.sector_dim} exceeds oracle.max_dim = {cap}{hint}")
    return broadened_dos_exact(exact_diag(spec, max_dim=cap), params.eta, params.energies), route


def cmd_verify(cfg: RunConfig, writer: OutputWriter, threads: int) -> int:
    spec = _spec_from(cfg)
    params = tune_parameters(spec, cfg["method", "eta"], cfg["method", "chi"], cfg["method", "energy_points"])
    reference, route = _reference(cfg, spec, params)
    est = _fit(cfg, threads)
    dos = est.dos_
    rep = error_metrics(dos, reference)
    T = _temperatures(cfg, dos)
    thermo_rep = error_metrics(free_energy(dos, T), free_energy(reference, T))
    tol0 = cfg["oracle", "epsilon0_tol"]
    tolp = cfg["oracle", "epsilon_prime_tol"]
    checks = [("epsilon0", rep.epsilon0, tol0), ("epsilon_m", thermo_rep.epsilon_m, None),
              ("epsilon_prime", thermo_rep.epsilon_prime, tolp)]
    passed = all(tol is None or val <= tol for _, val, tol in checks)
    writer.write_table("error_report.csv", ["metric", "value", "tolerance", "pass"],
                       ((name, val, "" if tol is None else tol, "" if tol is None else str(int(val <= tol)))
                        for name, val, tol in checks))
    writer.write_table("dos.csv", ["E", "D", "D_reference", "std_error"],
                       ((e, d, r, s) for (e, d, s), r in zip(_dos_rows(dos), reference.density)))
    manifest = _base_manifest("verify", cfg, spec, params)
    manifest.update(seeds=_seed_manifest(cfg), diagnostics=_diagnostics(est),
                    verification={"route": route, "passed": passed,
                                  "metrics": {n: v for n, v, _ in checks}})
    writer.write_manifest(manifest)
    for name, val, tol in checks:
        status = "" if tol is None else (" ok" if val <= tol else f" FAIL (> {tol:g})")
        print(f"{name} = {val:.6g}{status}")
    return EXIT_OK if passed else EXIT_FAILED


def cmd_sweep(cfg: RunConfig, writer: OutputWriter, threads: int) -> int:
    etas, ms = cfg["sweep", "eta_list"], cfg["sweep", "m_list"]
    problems = [f"sweep.{k}: must list at least one value" for k, v in (("eta_list", etas), ("m_list", ms)) if not v]
    problems += [f"sweep.eta_list: must be positive, got {e:g}" for e in etas if not e > 0]
    problems += [f"sweep.m_list: must be at least 1, got {m}" for m in ms if m < 1]
    if problems:
        raise ConfigValidationError(problems)
    if cfg["method", "pathway"] != "sampling":
        raise ConfigValidationError(["method.pathway: sweeps use the sampling pathway"])
    spec = _spec_from(cfg)
    chi = cfg["method", "chi"]

    def reference(p):
        return _reference(cfg, spec, p)[0]

    # fail fast on capacity before launching trajectories
    reference(tune_parameters(spec, min(etas), chi))
    cells = resolution_sweep(spec, etas, ms, cfg["method", "n_samples"], seed=cfg["method", "seed"], chi=chi,
                             batch_size=cfg["method", "batch_size"], threads=threads, reference=reference)
    writer.write_table("sweep.csv", ["eta", "m", "n_samples", "n_steps", "epsilon0", "spectral_mass"],
                       ((c.eta, str(c.m), str(c.n_samples), str(c.n_steps), c.epsilon0, c.spectral_mass)
                        for c in cells))
    onsets = []
    if len(set(etas)) >= 2:
        for m in ms:
            sel = sorted((c.eta, c.epsilon0) for c in cells if c.m == m)
            eta_bar = plateau_onset([e for e, _ in sel], [x for _, x in sel])
            onsets.append((str(m), eta_bar, eta_bar ** -0.5))
    writer.write_table("plateau.csv", ["m", "eta_onset", "resolution"], onsets)
    params = tune_parameters(spec, max(etas), chi)
    manifest = _base_manifest("sweep", cfg, spec, params)
    manifest.update(seeds=_seed_manifest(cfg))
    writer.write_manifest(manifest)
    return EXIT_OK


COMMANDS = {"dos": cmd_dos, "thermo": cmd_thermo, "spectral": cmd_spectral, "verify": cmd_verify,
            "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tndos", description="Broadened density of states and thermodynamics "
                                     "from tensor-network real-time evolution.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"dos": "broadened density of states", "thermo": "free energy and entropy",
             "spectral": "energy-resolved observables and thermal averages",
             "verify": "compare against an exact oracle", "sweep": "error over a grid of broadenings and m"}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path, help="INI configuration file")
        p.add_argument("--out", help=f"output directory (relative paths go under ${OUTPUT_ROOT_ENV} if set)")
        p.add_argument("--seed", type=int, help="base seed, overrides method.seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes for trajectories")
        p.add_argument("--overwrite", action="store_true", help="replace an existing run directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.threads < 1:
            raise ConfigValidationError(["--threads: must be at least 1"])
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigValidationError([f"--config: cannot read {args.config} ({exc.strerror})"]) from exc
        cfg = load_config(text, str(args.config))
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigValidationError(["--seed: must be nonnegative"])
            cfg.set("method", "seed", args.seed, "--seed")
        writer = OutputWriter(resolve_output_dir(args.out, cfg, args.config, args.command), args.overwrite)
        return COMMANDS[args.command](cfg, writer, args.threads)
    except ConfigValidationError as exc:
        for problem in exc.problems:
            print(f"configuration error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except TrajectoryDivergenceError as exc:
        print(f"trajectory aborted: seed {exc.seed}, step {exc.step}, truncation weight {exc.weight:.3e}",
              file=sys.stderr)
        return EXIT_TRAJECTORY
    except CapacityError as exc:
        print(f"capacity exceeded: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (ConfigurationError, DomainError, SectorError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
