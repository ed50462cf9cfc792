"""Configuration documents, run persistence, CSV reports and the CLI.

Configs are flat JSON key-value documents with explicit types; unknown
keys are rejected and every physical hypothesis is re-validated on load.
Snapshots and checkpoints are a one-line JSON header followed by raw
little-endian float64 arrays.  Reports are written atomically and are a
pure function of the configuration, so reruns reproduce them byte for
byte; the manifest carries a hash of the canonical config document.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import closure as cl
from . import diagnostics as dg
from . import grid as gr
from . import harness as hz
from . import solver as sv
from .errors import ConfigError, DomainError

PROFILES = ("uniform", "cosine-bump", "proportional-pair", "vacuum-region")

_DEFAULTS = {
    "dim": 1,
    "extent": 1.0,
    "cells": 128,
    "gamma_plus": 2.0,
    "gamma_minus": 2.0,
    "law": "implicit",
    "c0": None,              # inferred from the initial data when omitted
    "delta": 0.1,
    "B": None,               # ceil(A) + 2 when omitted
    "beta": 3.0,
    "epsilon": 0.01,
    "mu": 1.0,
    "lambda": 0.0,
    "nu": 1.0,
    "modes": 16,
    "dt": 1e-3,
    "t_end": 0.05,
    "sigma_weight": 1.0,
    "profile": "cosine-bump",
    "base_rho": 1.0,
    "base_n": 1.0,
    "amplitude": 0.2,
    "velocity_amplitude": 0.15,
    "magnetic_amplitude": 0.1,
    "sweep_axis": None,
    "sweep_values": [],
    "snapshots": 32,
    "seed": 0,
}

_INT_KEYS = {"dim", "modes", "snapshots", "seed"}
_STR_KEYS = {"law", "profile"}
_OPT_STR_KEYS = {"sweep_axis"}
_LIST_KEYS = {"sweep_values"}
_FLEX_KEYS = {"extent", "cells", "c0", "B"}  # scalars, lists, or null


@dataclasses.dataclass
class RunConfig:
    """A validated flat config document plus derived runtime objects."""

    raw: dict
    sim: sv.SimConfig
    initial: sv.InitialData
    sweep_axis: hz.SweepAxis | None
    sweep_values: tuple
    snapshots: int
    seed: int

    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(document: dict) -> str:
    canon = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _typecheck(key, value):
    if value is None:
        if key in _FLEX_KEYS or key in _OPT_STR_KEYS:
            return value
        raise ConfigError(f"config key {key!r} must not be null")
    if key in _INT_KEYS:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
        return value
    if key in _STR_KEYS or key in _OPT_STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} must be a string, got {value!r}")
        return value
    if key in _LIST_KEYS:
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"config key {key!r} must be a list of numbers")
        return value
    if key in _FLEX_KEYS and isinstance(value, list):
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"config key {key!r} list entries must be numbers")
        return value
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
    return value


def parse_config_document(document: dict) -> dict:
    unknown = sorted(set(document) - set(_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = dict(_DEFAULTS)
    merged.update(document)
    for key, value in merged.items():
        merged[key] = _typecheck(key, value)
    return merged


def _build_profile(name, grid, doc):
    base_rho = float(doc["base_rho"])
    base_n = float(doc["base_n"])
    amp = float(doc["amplitude"])
    u_amp = float(doc["velocity_amplitude"])
    h_amp = float(doc["magnetic_amplitude"])
    coords = grid.coords()

    bump = np.ones(grid.shape)
    second = np.ones(grid.shape)
    sine = np.ones(grid.shape)
    for ax, x in enumerate(coords):
        L = grid.extent[ax]
        bump = bump * np.cos(np.pi * x / L)
        second = second * np.cos(2.0 * np.pi * x / L)
        sine = sine * np.sin(np.pi * x / L)

    if name == "uniform":
        rho = np.full(grid.shape, base_rho)
        n = np.full(grid.shape, base_n)
        u_amp = 0.0
        h_amp = 0.0
    elif name == "cosine-bump":
        rho = base_rho * (1.0 + amp * bump)
        n = base_n * (1.0 + 0.5 * amp * second)
    elif name == "proportional-pair":
        rho = base_rho * (1.0 + amp * bump)
        n = (base_n / base_rho) * rho
    elif name == "vacuum-region":
        rho = base_rho * np.maximum(0.0, bump)
        n = (base_n / base_rho) * rho
    else:
        raise ConfigError(f"unknown profile {name!r}; know {PROFILES}")

    u = np.stack([u_amp * sine for _ in range(grid.dim)])
    if grid.dim == 2:
        u = np.stack([u_amp * sine, -0.5 * u_amp * sine])
    return sv.InitialData(
        rho0=gr.ScalarField(grid, rho, gr.NEUMANN),
        n0=gr.ScalarField(grid, n, gr.NEUMANN),
        u0=gr.VectorField(grid, u, gr.DIRICHLET),
        magnetic0=gr.ScalarField(grid, h_amp * sine, gr.DIRICHLET),
    )


def _infer_c0(data: sv.InitialData) -> float:
    rho = data.rho0.values
    n = data.n0.values
    both = (rho > 0.0) & (n > 0.0)
    either = (rho > 0.0) | (n > 0.0)
    if np.any(either & ~both):
        raise ConfigError(
            "cannot infer c0: one species vanishes where the other does not"
        )
    if not np.any(both):
        return 1.0
    ratios = np.maximum(rho[both] / n[both], n[both] / rho[both])
    return max(1.0, float(np.max(ratios)) * (1.0 + 1e-12))


def build_run_config(document: dict) -> RunConfig:
    doc = parse_config_document(document)
    try:
        grid = gr.make_grid(doc["dim"], doc["extent"], doc["cells"])
        initial = _build_profile(doc["profile"], grid, doc)
        c0 = float(doc["c0"]) if doc["c0"] is not None else _infer_c0(initial)
        law = cl.PressureLaw(doc["law"])
        params = cl.ClosureParams(
            gamma_plus=float(doc["gamma_plus"]),
            gamma_minus=float(doc["gamma_minus"]),
            law=law,
            c0=c0,
        )
        cap_b = (
            float(doc["B"])
            if doc["B"] is not None
            else math.ceil(params.growth_exponent) + 2.0
        )
        reg = cl.RegularizationParams(
            delta=float(doc["delta"]), B=cap_b, beta=float(doc["beta"])
        )
        sim = sv.SimConfig(
            closure=params,
            reg=reg,
            grid=grid,
            epsilon=float(doc["epsilon"]),
            mu=float(doc["mu"]),
            lam=float(doc["lambda"]),
            nu=float(doc["nu"]),
            modes=doc["modes"],
            dt=float(doc["dt"]),
            t_end=float(doc["t_end"]),
            sigma_weight=float(doc["sigma_weight"]),
        )
        sv.validate_initial_data(initial, c0)
    except ValueError as exc:  # DomainError is a ValueError
        raise ConfigError(str(exc)) from exc
    axis = None
    if doc["sweep_axis"] is not None:
        try:
            axis = hz.SweepAxis(doc["sweep_axis"])
        except ValueError as exc:
            raise ConfigError(f"unknown sweep axis {doc['sweep_axis']!r}") from exc
    return RunConfig(
        raw=doc,
        sim=sim,
        initial=initial,
        sweep_axis=axis,
        sweep_values=tuple(doc["sweep_values"]),
        snapshots=doc["snapshots"],
        seed=doc["seed"],
    )


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            document = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return build_run_config(document)


# ---------------------------------------------------------------------------
# snapshots and checkpoints


def write_snapshot(fh, grid: gr.Grid, fields: dict, time: float) -> None:
    header = {
        "dim": grid.dim,
        "cells": list(grid.cells),
        "extent": list(grid.extent),
        "fields": [[name, list(np.shape(arr))] for name, arr in fields.items()],
        "time": time,
    }
    fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for arr in fields.values():
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_snapshot(fh):
    header = json.loads(fh.readline().decode())
    fields = {}
    for name, shape in header["fields"]:
        count = int(np.prod(shape)) if shape else 1
        buf = fh.read(count * 8)
        fields[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return header, fields


def _atomic_write(path, write_fn, mode="wb"):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            write_fn(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint(state: sv.SimState, path) -> None:
    fields = {
        "rho": state.rho.values,
        "n": state.n.values,
        "u_coeffs": state.u_coeffs,
        "magnetic": state.magnetic.values,
    }
    _atomic_write(
        path, lambda fh: write_snapshot(fh, state.rho.grid, fields, state.time)
    )


def restore(path, config: sv.SimConfig) -> sv.SimState:
    with open(path, "rb") as fh:
        header, fields = read_snapshot(fh)
    g = config.grid
    if header["dim"] != g.dim or tuple(header["cells"]) != g.cells:
        raise ConfigError(
            f"checkpoint grid {header['cells']} does not match config {g.cells}"
        )
    if tuple(float(e) for e in header["extent"]) != g.extent:
        raise ConfigError("checkpoint extent does not match config")
    coeffs = fields["u_coeffs"]
    if coeffs.shape != (g.dim, config.modes):
        raise ConfigError(
            f"checkpoint carries {coeffs.shape} velocity coefficients, "
            f"config wants {(g.dim, config.modes)}"
        )
    basis = gr.make_basis(g, config.modes)
    return sv.SimState(
        time=float(header["time"]),
        rho=gr.ScalarField(g, fields["rho"], gr.NEUMANN),
        n=gr.ScalarField(g, fields["n"], gr.NEUMANN),
        u_coeffs=coeffs,
        magnetic=gr.ScalarField(g, fields["magnetic"], gr.DIRICHLET),
        basis=basis,
    )


# ---------------------------------------------------------------------------
# CSV reports


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    return repr(float(value))


def write_ledger_csv(path, ledgers) -> None:
    def emit(fh):
        fh.write("time,quantity,value\n")
        for led in ledgers:
            for f in dataclasses.fields(led):
                if f.name == "time":
                    continue
                fh.write(f"{_fmt(led.time)},{f.name},{_fmt(getattr(led, f.name))}\n")

    _atomic_write(path, emit, mode="w")


def write_defect_csv(path, report: dg.DefectReport) -> None:
    def emit(fh):
        fh.write(f"# {report.reference_note}\n")
        fh.write(f"# reference_index,{report.reference_index}\n")
        fh.write("index,functional,value\n")
        rows = {
            "nlogn_gap": report.nlogn_gap,
            "osc_measure": report.osc_measure,
            "evf_correlation": report.evf_correlation,
            "bogovskii_pressure": report.bogovskii_pressure,
            "bogovskii_exponents": report.bogovskii_exponents,
        }
        for p, vals in sorted(report.s_convergence.items()):
            rows[f"s_convergence_p{p:g}"] = vals
        for name in sorted(rows):
            for idx, value in enumerate(rows[name]):
                fh.write(f"{idx},{name},{_fmt(value)}\n")

    _atomic_write(path, emit, mode="w")


def write_convergence_csv(path, tables) -> None:
    def emit(fh):
        fh.write("case,level,quantity,value\n")
        for tab in tables:
            for i, (label, err) in enumerate(zip(tab.labels, tab.errors)):
                fh.write(f"{tab.case},{i},label,{_fmt(label)}\n")
                fh.write(f"{tab.case},{i},error,{_fmt(err)}\n")
            for i, order in enumerate(tab.orders):
                fh.write(f"{tab.case},{i},order,{_fmt(order)}\n")

    _atomic_write(path, emit, mode="w")


def write_audit_csv(path, report: hz.AuditReport) -> None:
    def emit(fh):
        fh.write("pair,inequality,worst_slack\n")
        for row in report.rows:
            pair = f"({row.gamma_plus:g};{row.gamma_minus:g})"
            for name in sorted(row.worst_slack):
                fh.write(f"{pair},{name},{_fmt(row.worst_slack[name])}\n")
            fh.write(f"{pair},fd_rel_max,{_fmt(row.fd_rel_max)}\n")
            fh.write(f"{pair},euler_ratio_max,{_fmt(row.euler_ratio_max)}\n")
            fh.write(f"{pair},monotone_witness,{_fmt(row.monotone_witness)}\n")

    _atomic_write(path, emit, mode="w")


def write_manifest(outdir, run_config: RunConfig, outputs) -> None:
    manifest = {
        "config_hash": run_config.config_hash(),
        "config": run_config.raw,
        "outputs": sorted(outputs),
    }
    _atomic_write(
        os.path.join(outdir, "manifest.json"),
        lambda fh: fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n"),
        mode="w",
    )


def write_report(report, outdir, run_config: RunConfig) -> list:
    """Write the CSV bundle for a sweep or a plain run; returns file names."""
    outputs = []
    if isinstance(report, hz.SweepReport):
        for idx, ledgers in enumerate(report.member_ledgers):
            name = f"member_{idx:02d}_ledger.csv"
            write_ledger_csv(os.path.join(outdir, name), ledgers)
            outputs.append(name)
        if report.defects is not None:
            write_defect_csv(os.path.join(outdir, "defects.csv"), report.defects)
            outputs.append("defects.csv")
    elif isinstance(report, sv.Trajectory):
        write_ledger_csv(os.path.join(outdir, "run_ledger.csv"), report.ledgers)
        outputs.append("run_ledger.csv")
    else:
        raise DomainError(f"cannot serialize report of type {type(report)!r}")
    write_manifest(outdir, run_config, outputs)
    outputs.append("manifest.json")
    return outputs


# ---------------------------------------------------------------------------
# command line


def _print_checks(checks) -> bool:
    ok_all = True
    for name, (value, ok) in checks.items():
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}: {value:.3e}")
        ok_all = ok_all and ok
    return ok_all


def _cmd_simulate(args) -> int:
    rc = load_config(args.config)
    snapshots = args.snapshots or rc.snapshots
    traj = sv.run_simulation(rc.sim, rc.initial, snapshots=snapshots)
    outputs = write_report(traj, args.out, rc)
    checkpoint(traj.final_state(), os.path.join(args.out, "final_state.snap"))
    print(f"simulate: {len(traj.ledgers) - 1} steps, outputs: {', '.join(outputs)}")
    ok = _print_checks(hz.invariant_suite(traj, rc.sim))
    return 0 if ok else 1


def _cmd_sweep(args) -> int:
    rc = load_config(args.config)
    if rc.sweep_axis is None or not rc.sweep_values:
        raise ConfigError("sweep command needs sweep_axis and sweep_values")
    plan = hz.SweepPlan(
        base=rc.sim,
        axis=rc.sweep_axis,
        values=rc.sweep_values,
        initial=rc.initial,
        snapshots=args.snapshots or rc.snapshots,
    )
    report = hz.run_sweep(plan)
    write_report(report, args.out, rc)
    print(
        f"sweep over {report.axis.value}: values {report.values}, "
        f"wall {report.wall_clock:.2f}s"
    )
    if report.failure:
        print(f"  [FAIL] member failure: {report.failure}")
        return 1
    ok = True
    for value, checks in zip(report.values, report.invariants):
        print(f" member {value}:")
        ok = _print_checks(checks) and ok
    return 0 if ok else 1


def _cmd_verify(args) -> int:
    rc = load_config(args.config)
    cases = list(hz.MANUFACTURED_CASES) if args.case == "all" else [args.case]
    tables = [hz.verify_manufactured(rc.sim, case) for case in cases]
    write_convergence_csv(os.path.join(args.out, "convergence.csv"), tables)
    write_manifest(args.out, rc, ["convergence.csv"])
    ok = True
    for tab in tables:
        if tab.case == "diffusion":
            good = all(abs(o - 2.0) <= 0.2 for o in tab.orders)
        elif tab.case == "coupled1d":
            good = all(o >= 1.8 for o in tab.orders)
        else:
            good = all(o >= 0.9 for o in tab.orders)
        ok = ok and good
        orders = ", ".join(f"{o:.2f}" for o in tab.orders)
        print(f"  [{'PASS' if good else 'FAIL'}] {tab.case}: orders {orders}")
    return 0 if ok else 1


def _cmd_audit(args) -> int:
    rc = load_config(args.config)
    pairs = list(hz.AuditPlan().exponent_pairs)
    own = (rc.sim.closure.gamma_plus, rc.sim.closure.gamma_minus)
    if own not in pairs:
        pairs.insert(0, own)
    plan = hz.AuditPlan(exponent_pairs=tuple(pairs))
    report = hz.closure_audit(rc.sim.closure, plan)
    write_audit_csv(os.path.join(args.out, "audit.csv"), report)
    write_manifest(args.out, rc, ["audit.csv"])
    for row in report.rows:
        status = "PASS" if row.passed() else "FAIL"
        print(
            f"  [{status}] ({row.gamma_plus:g}, {row.gamma_minus:g}): "
            f"worst slack {min(row.worst_slack.values()):.3e}, "
            f"fd {row.fd_rel_max:.3e}, euler {row.euler_ratio_max:.3e}"
        )
    print(f"audit runtime {report.runtime_s:.2f}s")
    return 0 if report.passed() else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bifluid-lab",
        description="two-fluid MHD laboratory: simulate, sweep, verify, audit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("simulate", _cmd_simulate),
        ("sweep", _cmd_sweep),
        ("verify", _cmd_verify),
        ("audit", _cmd_audit),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0,
                       help="reserved; runs are deterministic")
        p.add_argument("--snapshots", type=int, default=0,
                       help="snapshot count override")
        if name == "verify":
            p.add_argument(
                "--case",
                default="all",
                choices=("all",) + hz.MANUFACTURED_CASES,
            )
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
