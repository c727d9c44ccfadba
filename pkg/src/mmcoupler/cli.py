"""Command-line entry point: ``mmcoupler <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .model import ghz, mhz, unit_cell_model, to_ghz, to_mhz

log = logging.getLogger("mmcoupler")

SUBCOMMANDS = (
    "calibrate",
    "analytics",
    "cz-optimize",
    "cz-run",
    "sqg-scan",
    "decoherence",
    "spectators",
    "ipr",
    "occupations",
    "dump-pulse",
)


# --------------------------------------------------------------------------
# helpers


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


class Outputs:
    """Collects artifacts; CSV bodies are deterministic, timestamps live in the manifest."""

    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []
        root.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, header, rows):
        path = self.root / name
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        self.files.append(name)
        return path

    def json(self, name: str, data):
        path = self.root / name
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")
        self.files.append(name)
        return path


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    raise TypeError(f"not serializable: {type(x)}")


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "numba", "jsonschema"):
        try:
            out[pkg] = version(pkg)
        except PackageNotFoundError:
            out[pkg] = None
    try:
        out["mmcoupler"] = version("artifact")
    except PackageNotFoundError:
        out["mmcoupler"] = None
    return out


def _model(cfg, n_qubits=None, max_excitations="cfg"):
    s = cfg["system"]
    cap = s["max_excitations"] if max_excitations == "cfg" else max_excitations
    m = unit_cell_model(n_qubits or s["n_qubits"], s["levels"], cap)
    if s["mode_levels"]:
        m = m.with_truncation({k: v for k, v in s["mode_levels"].items() if k in m.labels})
    if s["idle_ghz"]:
        m = m.with_idle(**{k: ghz(v) for k, v in s["idle_ghz"].items()})
    return m


def _magnus(cfg, dt_key="dt"):
    from .propagate import MagnusConfig

    s = cfg["solver"]
    return MagnusConfig(dt=s[dt_key], krylov_dim=s["krylov_dim"], krylov_tol=s["krylov_tol"])


def _params_from_cfg(cfg):
    from .pulses import CZParams

    sch = cfg["schedule"]
    p = sch["params"]
    if p is None:
        return None
    return CZParams(mhz(p["A_q1_mhz"]), mhz(p["A_q2_mhz"]), mhz(p["A_c1_mhz"]), mhz(p["A_c2_mhz"]), p["sigma_c"], sch["sigma_q"], sch["tau"])


def _params_to_cfg(p) -> dict:
    return {
        "A_q1_mhz": to_mhz(p.A_q1),
        "A_q2_mhz": to_mhz(p.A_q2),
        "A_c1_mhz": to_mhz(p.A_c1),
        "A_c2_mhz": to_mhz(p.A_c2),
        "sigma_c": p.sigma_c,
    }


# --------------------------------------------------------------------------
# subcommands


def cmd_calibrate(cfg, out: Outputs, args):
    from .calibrate import KHZ, find_idle_configuration, zz_report

    model = _model(cfg)
    exp = cfg["experiment"]["calibrate"]
    freqs = model.frequencies()
    if exp["search"]:
        lo, hi = (ghz(x) for x in exp["coupler_window_ghz"])
        res = find_idle_configuration(model, (lo, hi), exp["n_scan"])
        freqs = model.frequencies(**res.frequencies)
    report = zz_report(model, freqs)
    out.csv("zz_report.csv", ["mode_a", "mode_b", "zeta_khz", "abs_zeta_khz"], [(*r.pair, r.zeta / KHZ, abs(r.zeta) / KHZ) for r in report])
    out.json("idle.json", {"frequencies_ghz": {m: to_ghz(w) for m, w in freqs.items()}, "max_abs_zz_khz": max(abs(r.zeta / KHZ) for r in report)})
    if getattr(args, "scan", False):
        from .calibrate import zz_landscape

        grid = np.linspace(*exp["coupler_window_ghz"], exp["landscape_points"])
        land = zz_landscape(model.with_idle(**freqs), ghz(grid), ghz(grid))
        rows = [(a, b, *p, z[i, j] / KHZ, abs(z[i, j]) / KHZ) for p, z in land.items() for i, a in enumerate(grid) for j, b in enumerate(grid)]
        out.csv("zz_landscape.csv", ["c1_ghz", "c2_ghz", "mode_a", "mode_b", "zeta_khz", "abs_zeta_khz"], rows)
    return 0


def cmd_analytics(cfg, out: Outputs, args):
    from .effective import (
        RATIO,
        duration_comparison,
        jacobi_propagator,
        manifold_matrices,
        resonance_ratio_check,
        schrieffer_wolff,
    )
    import scipy.linalg as sla

    model = unit_cell_model(2, cfg["system"]["levels"])
    eff = schrieffer_wolff(model)
    tau = cfg["schedule"]["tau"]
    g2 = math.pi / tau
    ok, dev = resonance_ratio_check(RATIO * g2, g2)
    omega = math.sqrt(2 * (RATIO * g2) ** 2 + g2**2)
    dur = duration_comparison(RATIO * g2)
    # Jacobi against exact exponentiation of the single-excitation block
    wa, wb = 1.15, 0.0
    mm = manifold_matrices(wa, wb, wb, -1.15, RATIO * g2, g2)
    ts = np.linspace(0.0, 100.0, 201)
    dev_j = max(np.max(np.abs(jacobi_propagator(wa, wb, RATIO * g2, g2, t) - sla.expm(-1j * mm.H1 * t))) for t in ts)
    out.json(
        "analytics.json",
        {
            "effective_mhz": {
                "omega_ghz": {k: to_ghz(v) for k, v in eff.omega.items()},
                "g_cq1": to_mhz(eff.g_cq1),
                "g_cq2": to_mhz(eff.g_cq2),
                "g_c1c2": to_mhz(eff.g_c1c2),
            },
            "resonance": {"g2_mhz": to_mhz(g2), "Omega_over_2g2": omega / (2 * g2), "ratio_deviation": dev, "passed": ok},
            "duration": dur,
            "duration_ratio_exact": (math.sqrt(2) + 1) / math.sqrt(3),
            "jacobi_max_deviation": dev_j,
        },
    )
    return 0


def _optimize(cfg, args, out: Outputs | None):
    from .calibrate import idle_spectrum
    from .gates import cz_seed, optimize_cz

    sch = cfg["schedule"]
    model = _model(cfg, max_excitations=cfg["solver"]["optimize_max_excitations"])
    ls = idle_spectrum(model)
    conf = _magnus(cfg, "optimize_dt")
    seed = _params_from_cfg(cfg)
    if seed is None:
        seed = cz_seed(model, sch["tau"], sch["sigma_q"], sch["sigma_c"], labeled=ls, config=conf)
    exp = cfg["experiment"]["cz"]
    res = optimize_cz(
        model,
        ls,
        seed,
        exp["objective"],
        conf,
        max_evals=exp["max_evals"],
        target=exp["target"],
        rng=np.random.default_rng(cfg["seed"]),
    )
    if out is not None:
        out.csv("convergence.csv", ["evaluation", "infidelity"], res.trace)
        out.json("optimum.json", {"params": _params_to_cfg(res.params), "infidelity": res.infidelity, "evaluations": res.evaluations, "seed_infidelity": res.initial_infidelity, "objective": exp["objective"]})
    return res


def cmd_cz_optimize(cfg, out: Outputs, args):
    _optimize(cfg, args, out)
    return 0


def cmd_cz_run(cfg, out: Outputs, args):
    from .calibrate import idle_spectrum
    from .gates import PROBE_STATE, run_cz
    from .pulses import schedule_cz

    if args.after_optimize:
        params = _optimize(cfg, args, out).params
    elif args.params:
        data = json.loads(Path(args.params).read_text())
        cfg = cfgmod.resolve({**{k: v for k, v in cfg.items()}, "schedule": {**cfg["schedule"], "params": data.get("params", data)}})
        params = _params_from_cfg(cfg)
    else:
        params = _params_from_cfg(cfg)
    if params is None:
        raise cfgmod.ConfigError("cz-run needs schedule.params, --params or --after-optimize")
    model = _model(cfg)
    ls = idle_spectrum(model)
    res = run_cz(model, ls, schedule_cz(params), PROBE_STATE, _magnus(cfg), n_snapshots=cfg["experiment"]["cz"]["n_snapshots"])
    # single-basis-state runs for the population panels
    panels = {}
    for name, c in (("01", [0, 1, 0, 0]), ("11", [0, 0, 0, 1])):
        panels[name] = run_cz(model, ls, schedule_cz(params), c, _magnus(cfg), n_snapshots=cfg["experiment"]["cz"]["n_snapshots"])
    labels = sorted(k for k in ls.labels() if sum(k) <= 2)
    names = ["".join(map(str, k)) for k in labels]
    header = ["t_ns", "phi_cp"] + [f"p{s}_{n}" for s in panels for n in names]
    rows = []
    for i, t in enumerate(res.times):
        row = [t, res.cp_trace[i]]
        for s, r in panels.items():
            row += [r.populations[k][i] for k in labels]
        rows.append(row)
    out.csv("populations.csv", header, rows)
    out.json(
        "cz_result.json",
        {
            "modes": list(model.labels),
            "infidelity": 1 - res.fidelity,
            "phases": res.phases,
            "leakage": res.leakage,
            "params": _params_to_cfg(params),
        },
    )
    return 0


def _sqg_point(payload):
    from .gates import sqg_scan_point
    from .propagate import MagnusConfig

    cfg, w, variant = payload
    exp = cfg["experiment"]["sqg"]
    model = unit_cell_model(2, cfg["system"]["levels"], exp["max_excitations"])
    conf = MagnusConfig(dt=cfg["solver"]["driven_dt"], krylov_dim=cfg["solver"]["krylov_dim"], krylov_tol=cfg["solver"]["krylov_tol"])
    tol = (mhz(exp["freq_tol_mhz"]), exp["amp_tol"])
    return sqg_scan_point(model, ghz(w), variant, exp["theta"], exp["duration"], exp["width"], conf, tol=tol)


def _pool_map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def cmd_sqg_scan(cfg, out: Outputs, args):
    exp = cfg["experiment"]["sqg"]
    variants = list(exp["variants"])
    for flag, name in ((args.parallel_q2, "parallel-q2"), (args.drive_center, "drive-center"), (args.excited_center, "excited-center")):
        if flag and name not in variants:
            variants.append(name)
    items = [(cfg, w, v) for v in variants for w in exp["omega_q1_ghz"]]
    pts = _pool_map(_sqg_point, items, args.threads)
    out.csv(
        "sqg_scan.csv",
        ["variant", "omega_q1_ghz", "drive_ghz", "amplitude", "infidelity"],
        [(p.variant, to_ghz(p.omega_q1), to_ghz(p.frequency), p.amplitude, p.infidelity) for p in pts],
    )
    return 0


def cmd_decoherence(cfg, out: Outputs, args):
    from .gates import NoiseSpec, ThreeModeGate, average_fidelity_with_decoherence, closed_form_decoherence_infidelity

    gate = ThreeModeGate(tau=cfg["schedule"]["tau"])
    exp = cfg["experiment"]["decoherence"]
    f0 = average_fidelity_with_decoherence(gate, NoiseSpec(), "lindblad")
    rows = []
    for T1 in exp["T1_us"]:
        T1n = T1 * 1e3
        T2n = 2 * T1n if cfg["noise"]["T2star_us"] is None else cfg["noise"]["T2star_us"] * 1e3 * T1 / cfg["noise"]["T1_us"]
        noise = NoiseSpec.uniform(gate.modes, T1n, T2n)
        closed = closed_form_decoherence_infidelity(gate.tau, dict.fromkeys(gate.modes, T1n), dict.fromkeys(gate.modes, T2n))
        row = [T1, T2n / 1e3, 1 - f0, closed]
        for r in ("lindblad", "perturbative"):
            row.append(1 - average_fidelity_with_decoherence(gate, noise, r) if r in exp["routes"] else float("nan"))
        rows.append(row)
    out.csv("decoherence.csv", ["T1_us", "T2star_us", "coherent", "closed_form", "lindblad", "perturbative"], rows)
    return 0


def cmd_spectators(cfg, out: Outputs, args):
    from .gates import spectator_study

    exp = cfg["experiment"]["spectators"]
    seed = _params_from_cfg(cfg)
    seeds = {sc: seed for sc in exp["sigma_c"]} if seed is not None else None
    rows = spectator_study(
        exp["n_qubits"],
        exp["sigma_c"],
        exp["levels"],
        exp["max_excitations"],
        cfg["schedule"]["tau"],
        _magnus(cfg, "optimize_dt"),
        exp["max_evals"],
        seeds,
        callback=lambda r: log.info("spectators N=%d sigma_c=%.3g infidelity %.3e after %d evaluations", r.n_qubits, r.sigma_c, r.infidelity, r.evaluations),
    )
    out.csv(
        "spectators.csv",
        ["n_qubits", "sigma_c_seed", "infidelity", "evaluations", "A_q1_mhz", "A_q2_mhz", "A_c1_mhz", "A_c2_mhz", "sigma_c", "center_residual", "coupler_leakage"],
        [
            (r.n_qubits, r.sigma_c, r.infidelity, r.evaluations, to_mhz(r.params.A_q1), to_mhz(r.params.A_q2), to_mhz(r.params.A_c1), to_mhz(r.params.A_c2), r.params.sigma_c, r.center_residual, r.coupler_leakage)
            for r in rows
        ],
    )
    out.csv(
        "occupation_diff.csv",
        ["n_qubits", "sigma_c", "mode", "delta"],
        [(r.n_qubits, r.sigma_c, m, d) for r in rows for m, d in r.delta.items()],
    )
    return 0


def _occupation_model(cfg):
    from .calibrate import idle_spectrum

    exp = cfg["experiment"]["occupations"]
    model = unit_cell_model(exp["n_qubits"], 3, exp["max_excitations"])
    if exp["levels"]:
        model = model.with_truncation(exp["levels"])
    return model, idle_spectrum(model, max_total_excitations=exp["n_qubits"])


def cmd_ipr(cfg, out: Outputs, args):
    from .analysis import occupation_map

    model, ls = _occupation_model(cfg)
    om = occupation_map(ls)
    out.csv("ipr.csv", ["state", "group", "ipr"], [("".join(map(str, lb)), g, ipr) for lb, g, _, _, ipr in om.rows()])
    return 0


def cmd_occupations(cfg, out: Outputs, args):
    from .analysis import mode_occupations, occupation_map

    model, ls = _occupation_model(cfg)
    om = occupation_map(ls)
    occ = mode_occupations(ls.basis(om.labels).T, ls.space)
    modes = list(ls.space.mode_order)
    header = ["state", "group"] + [f"n_{m}" for m in modes] + ["n_couplers", "ipr"]
    rows = [["".join(map(str, lb)), g, *(occ[m][k] for m in modes), c, ipr] for k, (lb, g, _, c, ipr) in enumerate(om.rows())]
    out.csv("occupations.csv", header, rows)
    return 0


def cmd_dump_pulse(cfg, out: Outputs, args):
    from .pulses import schedule_cz

    params = _params_from_cfg(cfg)
    if params is None:
        raise cfgmod.ConfigError("dump-pulse needs schedule.params")
    sched = schedule_cz(params)
    t = np.linspace(0.0, sched.duration, cfg["experiment"]["pulse"]["n_points"])
    modes = sorted(sched.flux)
    cols = [to_mhz(np.asarray(sched.offset(m, t))) for m in modes]
    out.csv("pulse.csv", ["t_ns"] + [f"{m}_mhz" for m in modes], zip(t, *cols))
    out.json("schedule.json", sched.to_dict())
    return 0


COMMANDS = {
    "calibrate": cmd_calibrate,
    "analytics": cmd_analytics,
    "cz-optimize": cmd_cz_optimize,
    "cz-run": cmd_cz_run,
    "sqg-scan": cmd_sqg_scan,
    "decoherence": cmd_decoherence,
    "spectators": cmd_spectators,
    "ipr": cmd_ipr,
    "occupations": cmd_occupations,
    "dump-pulse": cmd_dump_pulse,
}


# --------------------------------------------------------------------------
# entry


def _parse_truncation(text: str):
    """``LEVELS`` or ``LEVELS:CAP`` (``CAP`` may be ``none``)."""
    parts = text.split(":")
    try:
        levels = int(parts[0])
        cap = None if len(parts) < 2 or parts[1].lower() == "none" else int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad truncation {text!r}; expected LEVELS[:CAP]") from None
    return levels, cap


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (default: the bundled config)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="RNG seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps / numba threads")
    common.add_argument("--dt", type=float, help="Magnus step (ns) for verification runs")
    common.add_argument("--truncation", type=_parse_truncation, help="LEVELS[:CAP]")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="mmcoupler", description="Multi-mode coupler CZ gate simulations.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "calibrate":
            sp.add_argument("--scan", action="store_true", help="also write the coupler-frequency ZZ landscape")
        if name == "cz-run":
            sp.add_argument("--after-optimize", action="store_true", help="optimize first, then run the optimum")
            sp.add_argument("--params", help="optimum.json from cz-optimize")
        if name == "sqg-scan":
            sp.add_argument("--parallel-q2", action="store_true")
            sp.add_argument("--drive-center", action="store_true")
            sp.add_argument("--excited-center", action="store_true")
    return p


def run_experiment(cfg: dict, command: str, args=None) -> int:
    args = args or build_parser().parse_args([command])
    out = Outputs(Path(cfg["output"]))
    t0 = time.time()
    started = datetime.now(timezone.utc).isoformat()
    status = COMMANDS[command](cfg, out, args)
    manifest = {
        "command": command,
        "config_sha256": cfgmod.config_hash(cfg),
        "config": cfg,
        "versions": _versions(),
        "started": started,
        "wall_time_s": time.time() - t0,
        "files": sorted(out.files),
    }
    (out.root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config)
        if args.out:
            cfg["output"] = args.out
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.dt is not None:
            cfg["solver"]["dt"] = args.dt
        if args.truncation is not None:
            # uniform truncation replaces any per-mode overrides
            cfg["system"]["levels"], cfg["system"]["max_excitations"] = args.truncation
            cfg["system"]["mode_levels"] = {}
        cfgmod.validate(cfg)
    except (cfgmod.ConfigError, OSError) as exc:
        print(f"mmcoupler: {exc}", file=sys.stderr)
        return 2
    if args.threads > 1:
        import numba

        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        return run_experiment(cfg, args.command, args)
    except cfgmod.ConfigError as exc:
        print(f"mmcoupler: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surface module context
        mod = getattr(exc, "__module__", None) or type(exc).__module__
        print(f"mmcoupler [{args.command}]: {type(exc).__name__} ({mod}): {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
