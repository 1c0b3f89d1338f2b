"""Command-line front end.

Usage: ``tunneltime <subcommand> <config-file>``.  Config files are INI-style
(``[section]`` headers and ``key = value`` lines).  Output goes to
``[output] dir``, else ``$TUNNELTIME_OUTPUT_DIR``, else ``./tunneltime_out``.

Exit codes: 0 success, 2 configuration error, 3 numerical error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import calib, gpe, larmor
from .core import VelocityDistribution
from .errors import ConfigurationError, DomainError, NumericalError, TunnelTimeError
from .scattering import PotentialProfile

OUTPUT_ENV = "TUNNELTIME_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


# --- config -----------------------------------------------------------------------

def _float_list(s: str) -> list[float]:
    items = [x.strip() for x in s.replace(";", ",").split(",") if x.strip()]
    return [float(x) for x in items]


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_COMMON = {
    "output": {"dir": str},
    "run": {"seed": int, "workers": int},
}

_BARRIER = {"height": float, "heights": _float_list, "sigma": float, "slices": int}
_SCAN = {"v_min": float, "v_max": float, "v_step": float, "velocities": _float_list}

_PLAN_TYPES = {f.name: f.type for f in fields(gpe.SimulationPlan)}
_GPE_KEYS = {k: (str if k == "raman_profile" else float) for k in _PLAN_TYPES
             if k not in ("lens", "species")}
_GPE_KEYS["n_points"] = int
_GPE_KEYS["calibrate_lens"] = _bool
_GPE_KEYS["target_rms"] = float
_LENS_KEYS = {f.name: (int if f.name in ("ramp_segments", "imag_max_steps") else float)
              for f in fields(gpe.LensPlan)}

SCHEMAS: dict[str, dict[str, dict[str, Callable]]] = {
    "stationary-scan": {**_COMMON, "barrier": _BARRIER, "scan": _SCAN},
    "ensemble": {**_COMMON, "barrier": _BARRIER, "scan": _SCAN,
                 "distribution": {"kind": str, "rms": float, "weighting": str, "nodes": int}},
    "gpe-run": {**_COMMON, "gpe": _GPE_KEYS, "lens": _LENS_KEYS},
    "gpe-scan": {**_COMMON, "gpe": _GPE_KEYS, "lens": _LENS_KEYS, "scan": _SCAN},
    "snapshot": {**_COMMON, "gpe": _GPE_KEYS, "lens": _LENS_KEYS, "snapshot": {"times": _float_list}},
    "knife-edge": {**_COMMON, "knife_edge": {
        "input": str, "v0": float, "rms": float, "amplitude": float, "noise": float,
        "mode": str, "vb_min": float, "vb_max": float, "n_points": int, "sigma": float},
        "calibration": {"intensities": _float_list, "slope": float, "intercept": float,
                        "v_min": float, "v_max": float, "n_points": int, "sigma": float}},
}


class Config:
    """Validated, typed view of a config file for one subcommand."""

    def __init__(self, command: str, values: dict[str, dict[str, Any]], path: str = "<string>"):
        self.command = command
        self.values = values
        self.path = path

    def get(self, section: str, key: str, default=None):
        return self.values.get(section, {}).get(key, default)

    def section(self, name: str) -> dict:
        return dict(self.values.get(name, {}))


def _line_of(text: str, section: str, key: str) -> int:
    cur = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
        elif cur == section and "=" in s and s.split("=", 1)[0].strip().lower() == key:
            return i
    return 0


def parse_config(text: str, command: str, path: str = "<string>") -> Config:
    if command not in SCHEMAS:
        raise ConfigurationError(f"unknown subcommand {command!r}")
    schema = SCHEMAS[command]
    cp = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=path)
    except configparser.Error as e:
        raise ConfigurationError(f"{path}: {e}") from None
    values: dict[str, dict[str, Any]] = {}
    for sec in cp.sections():
        if sec not in schema:
            line = _line_of(text, sec, "") or next(
                (i for i, l in enumerate(text.splitlines(), 1) if l.strip() == f"[{sec}]"), 0)
            raise ConfigurationError(f"{path}:{line}: unknown section [{sec}] for {command}")
        values[sec] = {}
        for key, raw in cp.items(sec):
            line = _line_of(text, sec, key)
            if key not in schema[sec]:
                raise ConfigurationError(f"{path}:{line}: unknown key '{key}' in [{sec}]")
            try:
                values[sec][key] = schema[sec][key](raw)
            except ValueError as e:
                raise ConfigurationError(f"{path}:{line}: bad value for '{key}' in [{sec}]: {e}") from None
    return Config(command, values, path)


def load_config(path: str, command: str) -> Config:
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, command, path)


# --- output --------------------------------------------------------------------------

def output_dir(cfg: Config) -> Path:
    d = cfg.get("output", "dir") or os.environ.get(OUTPUT_ENV) or "tunneltime_out"
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _fmt(x) -> str:
    if isinstance(x, (str, np.str_)):
        return str(x)
    return f"{float(x):.9g}"


def write_csv(path: Path, header: list[str], rows, meta: dict | None = None) -> Path:
    """Metadata block (``# key = value``), header row, then data at 9 significant digits."""
    with open(path, "w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k} = {v}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")
    return path


def read_csv(path) -> tuple[dict, list[str], np.ndarray]:
    """Inverse of :func:`write_csv` for numeric tables."""
    meta, header, rows = {}, None, []
    with open(path) as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                k, v = s.lstrip("#").split("=", 1)
                meta[k.strip()] = v.strip()
            elif header is None:
                header = s.split(",")
            else:
                rows.append([_num(x) for x in s.split(",")])
    numeric = all(isinstance(x, float) for r in rows for x in r)
    return meta, header, np.array(rows, dtype=float if numeric else object)


def _num(x: str):
    try:
        return float(x)
    except ValueError:
        return x


# --- builders ---------------------------------------------------------------------

def _velocities(cfg: Config) -> np.ndarray:
    sc = cfg.section("scan")
    if "velocities" in sc:
        v = np.array(sc["velocities"], dtype=float)
    elif {"v_min", "v_max", "v_step"} <= sc.keys():
        if sc["v_step"] <= 0:
            raise ConfigurationError("[scan] v_step must be > 0")
        n = int(np.floor((sc["v_max"] - sc["v_min"]) / sc["v_step"] + 1e-9)) + 1
        v = sc["v_min"] + sc["v_step"] * np.arange(max(n, 0))
    else:
        raise ConfigurationError("[scan] needs 'velocities' or v_min/v_max/v_step")
    if v.size == 0:
        raise ConfigurationError("[scan] velocity list is empty")
    if np.any(v <= 0):
        raise ConfigurationError("[scan] velocities must be positive")
    return v


def _barriers(cfg: Config) -> list[PotentialProfile]:
    b = cfg.section("barrier")
    heights = b.get("heights") or [b.get("height", 4.71)]
    sigma = b.get("sigma", 1.3)
    if sigma <= 0 or any(h < 0 for h in heights):
        raise ConfigurationError("[barrier] needs sigma > 0 and heights >= 0")
    return [PotentialProfile.gaussian(h, sigma) for h in heights]


def _slices(cfg: Config) -> int:
    return int(cfg.get("barrier", "slices", 4096))


def _workers(cfg: Config) -> int:
    w = cfg.get("run", "workers")
    return max(1, int(w)) if w is not None else (os.cpu_count() or 1)


def _plan(cfg: Config, **over) -> gpe.SimulationPlan:
    g = {k: v for k, v in cfg.section("gpe").items() if k not in ("calibrate_lens", "target_rms")}
    if "n_points" in g:
        g["n_points"] = int(g["n_points"])
    lens = gpe.LensPlan(**cfg.section("lens"))
    return gpe.SimulationPlan(**{**g, **over}, lens=lens)


def _calibrated(cfg: Config, plan: gpe.SimulationPlan, ground) -> gpe.SimulationPlan:
    if not cfg.get("gpe", "calibrate_lens", False):
        return plan
    target = cfg.get("gpe", "target_rms", 0.35)
    ref = replace(plan, v0=4.26)
    lm = gpe.calibrate_lens(ref, target, ground=ground)
    return replace(plan, lens=replace(plan.lens, lens_ms=lm))


# --- commands ---------------------------------------------------------------------

def cmd_stationary_scan(cfg: Config) -> list[Path]:
    v = _velocities(cfg)
    out = output_dir(cfg)
    paths = []
    barriers = _barriers(cfg)
    for i, b in enumerate(barriers):
        scan = larmor.stationary_scan(b, v, slices=_slices(cfg))
        rows = zip(scan.v, scan.T, scan.tau_y, scan.tau_z, scan.phase)
        name = "times_vs_v.csv" if len(barriers) == 1 else f"times_vs_v_barrier{i}.csv"
        meta = {"command": "stationary-scan", "barrier_height_mm_s": _fmt(b.height),
                "barrier_sigma_um": _fmt(b.sigma)}
        paths.append(write_csv(out / name, ["v_mm_s", "T", "tau_y_ms", "tau_z_ms", "phi_rad"], rows, meta))
    return paths


def _distribution(cfg: Config, v0: float) -> VelocityDistribution:
    d = cfg.section("distribution")
    kind = d.get("kind", "thomas_fermi")
    rms = d.get("rms", 0.35)
    if rms < 0:
        raise ConfigurationError("[distribution] rms must be >= 0")
    if kind == "thomas_fermi":
        return VelocityDistribution.thomas_fermi_rms(v0, rms)
    if kind == "gaussian":
        return VelocityDistribution.gaussian(v0, rms)
    raise ConfigurationError(f"[distribution] unknown kind {kind!r}")


def cmd_ensemble(cfg: Config) -> list[Path]:
    v0s = _velocities(cfg)
    weighting = cfg.get("distribution", "weighting", "probability")
    nodes = cfg.get("distribution", "nodes", 96)
    out = output_dir(cfg)
    paths = []
    barriers = _barriers(cfg)
    for i, b in enumerate(barriers):
        def one(v0):
            e = larmor.ensemble_average_times(b, _distribution(cfg, v0), weighting, nodes, _slices(cfg))
            return (v0, e.transmission, e.tunneled_fraction, e.times.tau_y, e.times.tau_z)

        with ThreadPoolExecutor(_workers(cfg)) as ex:
            rows = list(ex.map(one, v0s))
        name = "ensemble.csv" if len(barriers) == 1 else f"ensemble_barrier{i}.csv"
        meta = {"command": "ensemble", "barrier_height_mm_s": _fmt(b.height),
                "barrier_sigma_um": _fmt(b.sigma), "weighting": weighting,
                "distribution": cfg.get("distribution", "kind", "thomas_fermi"),
                "rms_mm_s": _fmt(cfg.get("distribution", "rms", 0.35))}
        paths.append(write_csv(out / name, ["v0", "T", "tunneled_frac", "tau_y_ms", "tau_z_ms"], rows, meta))
    return paths


GPE_HEADER = ["v0", "T", "Sx", "Sy", "Sz", "tau_y_ms", "tau_z_ms", "incident_rms", "transmitted_mean_v"]


def _gpe_row(r: gpe.SimResult):
    return (r.v0, r.transmission, r.bloch.sx, r.bloch.sy, r.bloch.sz, r.times.tau_y, r.times.tau_z,
            r.incident_rms_v, r.transmitted_mean_v)


def _gpe_meta(plan: gpe.SimulationPlan, cmd: str) -> dict:
    return {"command": cmd, "barrier_height_mm_s": _fmt(plan.barrier_height),
            "omega_eff_hz": _fmt(plan.omega_eff_hz), "atom_number": _fmt(plan.atom_number),
            "lens_ms": _fmt(plan.lens.lens_ms), "dt_ms": _fmt(plan.dt)}


def cmd_gpe_run(cfg: Config) -> list[Path]:
    plan = _plan(cfg)
    ground = gpe.prepare_ground_state(plan)
    plan = _calibrated(cfg, plan, ground)
    res = gpe.run_larmor_experiment(plan, ground)
    return [write_csv(output_dir(cfg) / "gpe_run.csv", GPE_HEADER, [_gpe_row(res)],
                      _gpe_meta(plan, "gpe-run"))]


def cmd_gpe_scan(cfg: Config) -> list[Path]:
    v0s = _velocities(cfg)
    plan = _plan(cfg)
    ground = gpe.prepare_ground_state(plan)
    plan = _calibrated(cfg, plan, ground)

    def one(item):
        i, v0 = item
        try:
            return _gpe_row(gpe.run_larmor_experiment(replace(plan, v0=float(v0)), ground))
        except TunnelTimeError as e:
            e.args = (f"run {i} (v0 = {v0}): {e.args[0] if e.args else e}",) + tuple(e.args[1:])
            raise

    with ThreadPoolExecutor(_workers(cfg)) as ex:
        rows = list(ex.map(one, enumerate(v0s)))
    return [write_csv(output_dir(cfg) / "gpe_scan.csv", GPE_HEADER, rows, _gpe_meta(plan, "gpe-scan"))]


def cmd_snapshot(cfg: Config) -> list[Path]:
    times = cfg.get("snapshot", "times")
    if not times:
        raise ConfigurationError("[snapshot] times must list at least one time")
    plan = _plan(cfg)
    ground = gpe.prepare_ground_state(plan)
    plan = _calibrated(cfg, plan, ground)
    res = gpe.run_larmor_experiment(plan, ground, snapshot_times=times)
    out = output_dir(cfg) / "snapshots"
    out.mkdir(exist_ok=True)
    paths = []
    for s in res.snapshots:
        p = out / f"snapshot_{s.time:09.3f}ms.csv"
        gpe.write_snapshot_csv(p, s)
        paths.append(p)
    return paths


def cmd_knife_edge(cfg: Config) -> list[Path]:
    k = cfg.section("knife_edge")
    out = output_dir(cfg)
    seed = cfg.get("run", "seed", 0)
    if "input" in k:
        scan = calib.read_scan_csv(k["input"])
    else:
        v0 = k.get("v0", 4.26)
        rms = k.get("rms", 0.35)
        vb = np.linspace(k.get("vb_min", v0 - 1.5), k.get("vb_max", v0 + 1.5), int(k.get("n_points", 61)))
        mode = k.get("mode", "synthetic")
        if mode == "synthetic":
            vr = rms * np.sqrt(7.0)
            amp = k.get("amplitude", 15.0 / (16.0 * vr))
            scan = calib.synthetic_knife_edge_scan(vb, v0, vr, amp, k.get("noise", 0.0),
                                                   np.random.default_rng(seed))
        elif mode == "quantum":
            scan = calib.quantum_knife_edge_scan(vb, VelocityDistribution.thomas_fermi_rms(v0, rms),
                                                 k.get("sigma", 1.3))
        else:
            raise ConfigurationError(f"[knife_edge] unknown mode {mode!r}")
    scan_path = out / "knife_edge_scan.csv"
    calib.write_scan_csv(scan_path, scan)
    fit = calib.knife_edge_fit(scan)
    report = [("v_radius_mm_s", fit.v_radius), ("rms_width_mm_s", fit.rms_width),
              ("amplitude", fit.amplitude), ("residual_rms", fit.residual_rms),
              ("v0_mm_s", scan.v0)]
    paths = [scan_path]
    c = cfg.section("calibration")
    if c.get("intensities"):
        from .scattering import transmission_curve

        v = np.linspace(c.get("v_min", 3.0), c.get("v_max", 6.5), int(c.get("n_points", 71)))
        scans = []
        for I in c["intensities"]:
            vb2 = c.get("slope", 22.18) * I + c.get("intercept", 0.0)
            if vb2 <= 0:
                raise ConfigurationError("[calibration] implied barrier height is not positive")
            b = PotentialProfile.gaussian(float(np.sqrt(vb2)), c.get("sigma", 1.3))
            scans.append(calib.VelocityScan(I, v, transmission_curve(b, v, slices=2048).T))
        cal = calib.calibrate_barrier_height(scans)
        report += [("calibration_slope", cal.slope), ("calibration_intercept", cal.intercept),
                   ("calibration_slope_err", cal.slope_err),
                   ("calibration_intercept_err", cal.intercept_err)]
        paths.append(write_csv(out / "barrier_calibration.csv", ["intensity", "v_b_mm_s"],
                               zip(c["intensities"], cal.heights), {"command": "knife-edge"}))
    paths.append(write_csv(out / "knife_edge_fit.csv", ["quantity", "value"], report,
                           {"command": "knife-edge", "source": k.get("input", k.get("mode", "synthetic"))}))
    return paths


COMMANDS = {
    "stationary-scan": cmd_stationary_scan,
    "ensemble": cmd_ensemble,
    "gpe-run": cmd_gpe_run,
    "gpe-scan": cmd_gpe_scan,
    "snapshot": cmd_snapshot,
    "knife-edge": cmd_knife_edge,
}


def run(command: str, config_path: str) -> int:
    try:
        cfg = load_config(config_path, command)
        paths = COMMANDS[command](cfg)
    except (ConfigurationError, DomainError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    for p in paths:
        print(p)
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="tunneltime", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config")
    args = ap.parse_args(argv)
    return run(args.command, args.config)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
