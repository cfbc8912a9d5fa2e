"""Command-line entry points: spectrum, hautus, synthesize, simulate, verify.

Every command writes its files and a ``manifest.json`` (configuration,
its hash, seed, library versions and file checksums) to the output
directory. Floats are written in shortest round-trip form, so identical
configurations give byte-identical files.
"""

import argparse
import csv
import hashlib
import io
import json
import platform
import sys
import traceback
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import discretization as disc
from . import simulation as sim
from .config import load_config
from .delay_control import FeedbackLaw, delay_steps, export_kernel, synthesize
from .errors import CriterionError, FsiError
from .geometry import TorusGrid
from .spectral_analysis import compute_spectrum, hautus_test
from .transform_ops import StationaryState
from .verify import run_battery

COMMANDS = ("spectrum", "hautus", "synthesize", "simulate", "verify")


class Pipeline:
    """Lazily built objects of one configuration."""

    def __init__(self, cfg, scale=1.0):
        self.cfg = cfg
        self.scale = scale

    @cached_property
    def torus(self):
        n = int(round(self.cfg["geometry.n_modes"] * self.scale / 2.0)) * 2
        return TorusGrid(2, self.cfg["geometry.L1"], n)

    @cached_property
    def basis(self):
        nv = int(round(self.cfg["geometry.n_vertical"] * self.scale))
        return disc.build_basis(self.torus, nv, self.cfg["physics.alpha"])

    def _physics(self):
        c = self.cfg
        return {k: c[f"physics.{k}"] for k in ("nu", "alpha", "delta", "beta1", "beta2")}

    @cached_property
    def state(self):
        c = self.cfg
        phys = self._physics()
        amp_f, amp_h = c["stationary.forcing_amplitude"], c["stationary.plate_load_amplitude"]
        forcing = _forcing(c["stationary.forcing"], amp_f, c["geometry.L1"])
        load = _plate_load(c["stationary.plate_load"], amp_h, c["geometry.L1"])
        if forcing is None and load is None:
            return StationaryState.at_rest(self.basis.grid, **phys)
        st, _ = disc.steady_state_solve(self.basis, forcing=forcing, plate_load=load,
                                        tol=c["stationary.tol"], **phys)
        return disc.flatten_state(st, self.basis)

    @cached_property
    def open_system(self):
        return disc.assemble_AS(self.state, self.basis)

    @cached_property
    def shape(self):
        c = self.cfg
        return disc.ControlShape(self.torus, c["control.n_act"], c["control.actuators"], c["physics.beta1"])

    @cached_property
    def system(self):
        return disc.assemble_control(self.open_system, self.shape)

    @cached_property
    def pairs(self):
        return compute_spectrum(self.system)

    @cached_property
    def law(self):
        c = self.cfg
        return synthesize(self.system, c["control.gamma"], c["control.t0"], self.cfg.margin,
                          self.pairs, c["control.tol_rel"])

    def refined_system(self, factor):
        return Pipeline(self.cfg, self.scale * factor).system


def _forcing(kind, amp, L):
    if kind == "zero" or amp == 0.0:
        return None
    k = 2 * np.pi / L
    if kind == "uniform":
        return lambda x1, x3: np.array([amp + 0 * x1, 0 * x1])
    return lambda x1, x3: amp * np.array([np.sin(k * x1) * x3, np.cos(k * x1) * x3 * (1 - x3)])


def _plate_load(kind, amp, L):
    if kind == "zero" or amp == 0.0:
        return None
    return lambda x: amp * np.cos(2 * np.pi * x / L)


# ---------------------------------------------------------------------------
# output


class Output:
    """Collects files of a command and writes the manifest."""

    def __init__(self, directory, command, cfg):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.files = {}

    def text(self, name, text):
        path = self.dir / name
        path.write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    def csv(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        return self.text(name, buf.getvalue())

    def json(self, name, obj):
        return self.text(name, json.dumps(obj, indent=1, sort_keys=True) + "\n")

    def manifest(self, status):
        man = {
            "command": self.command,
            "status": status,
            "config": self.cfg.values,
            "config_sha256": self.cfg.digest(),
            "seed": self.cfg["seed"],
            "versions": {
                "fsidelay": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "files": dict(sorted(self.files.items())),
        }
        (self.dir / "manifest.json").write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------------------
# commands


def _with_conjugates(pairs, count):
    keep = list(pairs[:count])
    scale = max(1.0, max(abs(p.value) for p in pairs))
    for p in list(keep):
        if abs(p.value.imag) > 1e-12 * scale:
            if not any(abs(q.value - np.conj(p.value)) <= 1e-8 * scale for q in keep):
                partner = min(pairs, key=lambda q: abs(q.value - np.conj(p.value)))
                keep.append(partner)
    return keep


def cmd_spectrum(pipe, out):
    cfg = pipe.cfg
    count = cfg["spectrum.count"]
    if cfg["spectrum.mode"] == "plate_only":
        plate = disc.assemble_plate_ops(cfg["physics.alpha"], cfg["physics.delta"], pipe.torus)
        vals = disc.plate_only_eigenvalues(plate)
        vals = vals[np.lexsort((vals.imag, -vals.real))]
        out.csv("spectrum.csv", ["index", "real", "imag"],
                [(i, v.real, v.imag) for i, v in enumerate(vals)])
        out.json("spectrum.json", {"mode": "plate_only", "count": int(vals.size)})
        return 0
    pairs = _with_conjugates(pipe.pairs, count)
    pairs.sort(key=lambda p: (-p.value.real, p.value.imag))
    rows = [(i, p.value.real, p.value.imag, p.residual_right, p.residual_left, p.cluster, p.cond)
            for i, p in enumerate(pairs)]
    out.csv("spectrum.csv", ["index", "real", "imag", "residual_right", "residual_left", "cluster", "cond"], rows)
    out.json("spectrum.json", {
        "mode": "full",
        "n_state": int(pipe.system.n),
        "abscissa": float(max(p.value.real for p in pipe.pairs)),
        "basis": pipe.basis.describe(),
        "lambda0": float(pipe.system.lambda0),
    })
    return 0


def cmd_hautus(pipe, out):
    cfg = pipe.cfg
    rep = hautus_test(pipe.system, cfg["control.gamma"], cfg["control.tol_rel"], pipe.pairs)
    out.csv("hautus.csv", ["real", "imag", "ratio", "passed"], rep.rows())
    out.json("hautus.json", {"sigma": rep.sigma, "tol_rel": rep.tol_rel, "min_ratio": rep.min_ratio,
                             "passed": rep.passed, "complete": rep.complete})
    if not rep.passed:
        raise CriterionError(f"criterion failed: Hautus test at sigma={rep.sigma:g} (min ratio {rep.min_ratio:.3e})")
    return 0


def cmd_synthesize(pipe, out):
    cfg = pipe.cfg
    law = pipe.law
    out.text("feedback_law.json", law.to_json() + "\n")
    _, h = delay_steps(law.t0, cfg["simulation.dt"])
    n_lags = int(np.ceil(cfg["simulation.T"] / h)) + 1
    table = export_kernel(law, cfg["simulation.dt"], n_lags)
    N = law.count
    header = ["lag"] + [f"K_{i}_{j}" for i in range(N) for j in range(N)]
    out.csv("kernel.csv", header, [(lag,) + tuple(K.ravel()) for lag, K in zip(table.lags, table.values)])
    cl = law.closed_loop_eigenvalues()
    out.json("synthesis.json", {
        "count": law.count, "gamma": law.gamma, "t0": law.t0, "margin": law.margin,
        "closed_loop_real": [float(v) for v in np.sort(cl.real)],
        "closed_loop_imag": [float(v) for v in cl.imag[np.argsort(cl.real)]],
    })
    return 0


def cmd_simulate(pipe, out):
    cfg = pipe.cfg
    system = pipe.system
    law = pipe.law if cfg["simulation.feedback"] else None
    x0 = sim.initial_state(system, cfg["simulation.R"], cfg["seed"], pairs=pipe.pairs)
    T, dt = cfg["simulation.T"], cfg["simulation.dt"]
    if cfg["simulation.nonlinear"]:
        traj = sim.integrate_nonlinear(system, law, x0, T, dt, cfg["simulation.picard_tol"],
                                       cfg["simulation.max_picard"], cfg["simulation.form"])
    else:
        traj = sim.integrate_linear(system, law, x0, T, dt, form=cfg["simulation.form"])
    out.text("trajectory.csv", traj.to_csv())
    t_start = (cfg["control.t0"] + 2.0 / cfg["control.gamma"]) if law is not None else 0.25 * T
    summary = {"info": traj.info, "abscissa": float(max(p.value.real for p in pipe.pairs))}
    try:
        fit = sim.decay_fit(traj, t_start)
        summary["decay_rate"] = fit.rate
        summary["decay_band"] = list(fit.band)
    except FsiError as exc:
        summary["decay_rate"] = None
        summary["decay_note"] = str(exc)
    out.json("summary.json", summary)
    return 0


def cmd_verify(pipe, out):
    checks = run_battery(pipe, pipe.cfg["verify.level"])
    lines = [c.line() for c in checks]
    for line in lines:
        print(line)
    out.text("verify.txt", "\n".join(lines) + "\n")
    out.csv("verify.csv", ["name", "value", "relation", "threshold", "passed"],
            [(c.name, f"{c.value:.6e}", c.relation, f"{c.threshold:.6e}", c.passed) for c in checks])
    failed = [c.name for c in checks if not c.passed]
    if failed:
        raise CriterionError(f"criterion failed: {', '.join(failed)}")
    return 0


HANDLERS = {
    "spectrum": cmd_spectrum,
    "hautus": cmd_hautus,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
}


def _origin(exc):
    """Module of the innermost package frame that raised ``exc``."""
    name = "fsidelay"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("fsidelay"):
            name = mod
    return name


def run(command, cfg, out_dir=None):
    """Run one command; returns the exit code."""
    out = Output(out_dir or cfg["output.dir"], command, cfg)
    pipe = Pipeline(cfg)
    try:
        code = HANDLERS[command](pipe, out)
    except FsiError as exc:
        out.manifest(f"error: {exc}")
        print(f"error [{_origin(exc)}]: {exc}", file=sys.stderr)
        return exc.exit_code
    out.manifest("ok")
    return code


def build_parser():
    p = argparse.ArgumentParser(prog="fsidelay", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="TOML or JSON configuration file")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--seed", type=int, help="random seed (overrides seed)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration key (repeatable)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.override, args.seed)
    except FsiError as exc:
        print(f"error [fsidelay.config]: {exc}", file=sys.stderr)
        return exc.exit_code
    return run(args.command, cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
