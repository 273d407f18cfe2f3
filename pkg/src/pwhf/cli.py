"""Batch front end: solve, verify and compare runs from flat config files.

Config files are plain ``key = value`` lines (``#`` comments allowed)
with keys mirroring ScfConfig: z, ecut, ngrid, mode, nuclei, sigma,
max_iter, tol_residual, tol_energy, damping, damping_t, degeneracy_tol,
seed.  Outputs are a JSON report, a CSV band file and a state snapshot;
all are deterministic for a fixed config and seed.

Exit codes: 0 success, 2 unusable configuration, 3 SCF did not
converge, 4 a selected verification check failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import verify as verify_mod
from .energy import EnergyBreakdown, TransferTables, exchange_energy, total_energy
from .errors import InvalidParameterError
from .kernels import singular_average
from .scf import ScfConfig, ScfReport, run_scf
from .state import check_admissible, load_state, save_state

ALL_CHECKS = ("admissible", "projector", "fermi_shell", "inequalities")

_CONFIG_KEYS = {
    "z": float,
    "ecut": float,
    "ngrid": int,
    "mode": str,
    "nuclei": str,
    "sigma": float,
    "max_iter": int,
    "tol_residual": float,
    "tol_energy": float,
    "damping": str,
    "damping_t": float,
    "degeneracy_tol": float,
    "seed": int,
}


def parse_config(path) -> ScfConfig:
    """Read a flat key-value config file into a validated ScfConfig."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidParameterError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip().lower(), val.strip()
            if key not in _CONFIG_KEYS:
                raise InvalidParameterError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _CONFIG_KEYS[key](val)
            except ValueError as exc:
                raise InvalidParameterError(f"{path}:{lineno}: bad value for {key}: {val!r}") from exc
    if "z" not in values or "ecut" not in values or "ngrid" not in values:
        raise InvalidParameterError(f"{path}: z, ecut and ngrid are required")
    values["Z"] = values.pop("z")
    config = ScfConfig(**values)
    config.validate()
    return config


@dataclass
class RunManifest:
    config: ScfConfig
    report_path: str
    bands_path: str
    state_path: str
    verify_flags: tuple[str, ...] = ALL_CHECKS
    threads: int | None = None

    def validate(self):
        paths = [self.report_path, self.bands_path, self.state_path]
        if len(set(paths)) != len(paths):
            raise InvalidParameterError("output paths must be distinct")
        unknown = set(self.verify_flags) - set(ALL_CHECKS)
        if unknown:
            raise InvalidParameterError(f"unknown verify checks: {sorted(unknown)}")
        self.config.validate()


def write_bands_csv(report: ScfReport, path) -> None:
    """One row per (k-point, band), full-precision scientific notation."""
    lines = ["k_index,xi_x,xi_y,xi_z,band_index,eigenvalue_hartree,occupation"]
    for ki, (kp, lam, occ) in enumerate(
        zip(report.spectrum.grid, report.spectrum.eigenvalues, report.occupations)
    ):
        for b in range(len(lam)):
            lines.append(
                f"{ki},{kp.xi[0]:.16e},{kp.xi[1]:.16e},{kp.xi[2]:.16e},"
                f"{b},{lam[b]:.16e},{occ[b]:.16e}"
            )
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def run_checks(report_like: dict, state, spectrum, mu, degeneracy_tol, h, flags) -> list[dict]:
    """Evaluate the selected verification checks on one state.

    Each entry carries the check name, the property it measures, a
    numeric margin (nonnegative means pass at the stated tolerance) and
    the verdict.
    """
    out = []
    for name in flags:
        if name == "admissible":
            rep = check_admissible(state)
            margin = min(
                1e-12 - rep.hermiticity_defect,
                rep.min_eigenvalue + 1e-10,
                1.0 + 1e-10 - rep.max_eigenvalue,
            )
            entry = {
                "check": "admissible",
                "statement": "0 <= gamma <= 1 with Hermitian fibers",
                "margin": margin,
                "passed": bool(rep.passed),
            }
        elif name == "projector":
            resid = verify_mod.projector_residual(state)
            entry = {
                "check": "projector",
                "statement": "every fiber of a minimizer satisfies gamma^2 = gamma",
                "margin": 1e-8 - resid,
                "passed": bool(resid <= 1e-8),
            }
        elif name == "fermi_shell":
            shell = verify_mod.fermi_shell_report(state, spectrum, mu, degeneracy_tol)
            worst = float(np.max(np.minimum(shell.occupations, 1.0 - shell.occupations))) \
                if shell.occupations.size else 0.0
            entry = {
                "check": "fermi_shell",
                "statement": "states at the Fermi level are all empty or all filled",
                "margin": 1e-6 - worst,
                "passed": shell.flag != "mixed",
                "flag": shell.flag,
                "note": shell.note,
            }
        elif name == "inequalities":
            rep = verify_mod.inequality_suite(state, h)
            entry = {
                "check": "inequalities",
                "statement": (
                    "X_G(gamma,gamma) <= D(rho,rho); |gamma~(x,y)|^2 <= rho(x)rho(y); "
                    "2*T(gamma) >= int |grad sqrt(rho)|^2"
                ),
                "margin": min(rep.margins.values()),
                "passed": bool(rep.passed),
                "margins": rep.margins,
            }
        else:
            raise InvalidParameterError(f"unknown check {name!r}")
        out.append(entry)
    report_like["checks"] = out
    return out


def _config_dict(config: ScfConfig) -> dict:
    return {
        "z": config.Z,
        "ecut": config.ecut,
        "ngrid": config.ngrid,
        "mode": config.mode,
        "nuclei": config.nuclei,
        "sigma": config.sigma,
        "max_iter": config.max_iter,
        "tol_residual": config.tol_residual,
        "tol_energy": config.tol_energy,
        "damping": config.damping,
        "damping_t": config.damping_t,
        "degeneracy_tol": config.degeneracy_tol,
        "seed": config.seed,
    }


def _report_dict(report: ScfReport) -> dict:
    return {
        "config": _config_dict(report.config),
        "converged": report.converged,
        "iterations": report.iterations,
        "energy": report.energy.as_dict(),
        "mu": report.mu,
        "epsilon_flag": report.epsilon_flag,
        "shell_note": report.shell_note,
        "h": report.h,
        "v0": report.v0,
        "residual_trace": [
            {"iteration": it, "residual": res, "energy": en}
            for it, res, en in report.residual_trace
        ],
    }


def run(manifest: RunManifest) -> int:
    """Solve, write the three outputs, run the selected checks."""
    manifest.validate()
    report = run_scf(manifest.config)
    doc = _report_dict(report)
    checks = run_checks(
        doc,
        report.final_state,
        report.spectrum,
        report.mu,
        manifest.config.degeneracy_tol,
        report.h,
        manifest.verify_flags,
    )
    write_bands_csv(report, manifest.bands_path)
    save_state(
        report.final_state,
        manifest.state_path,
        extra={
            "config": _config_dict(manifest.config),
            "mu": report.mu,
            "h": report.h,
            "v0": report.v0,
            "epsilon_flag": report.epsilon_flag,
        },
    )
    with open(manifest.report_path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    if not report.converged:
        return 3
    if any(not c["passed"] for c in checks):
        return 4
    return 0


def compare_modes(manifest: RunManifest) -> tuple[dict, int]:
    """Run hf and reduced on identical settings and diff the outcomes."""
    manifest.validate()
    results = {}
    reports = {}
    for mode in ("hf", "reduced"):
        cfg = ScfConfig(**{**manifest.config.__dict__, "mode": mode})
        reports[mode] = run_scf(cfg)
        results[mode] = _report_dict(reports[mode])

    red, hf = reports["reduced"], reports["hf"]
    tables = TransferTables(red.final_state.bases)
    corr = singular_average(manifest.config.ngrid)
    x_red = exchange_energy(red.final_state, red.final_state, corr, tables=tables)
    hf_energy_of_reduced = total_energy(
        red.final_state, manifest.config.Z, red.h, corr, "hf",
        manifest.config.effective_sigma, tables,
    )
    results["comparison"] = {
        "exchange_at_reduced_minimizer": 0.5 * x_red,
        "hf_energy_at_reduced_minimizer": hf_energy_of_reduced.total,
        "hf_energy_at_hf_minimizer": hf.energy.total,
        "hf_minimality_margin": hf_energy_of_reduced.total - hf.energy.total,
        "band_gap_hf": _band_gap(hf),
        "band_gap_reduced": _band_gap(red),
        "epsilon_flag_hf": hf.epsilon_flag,
        "epsilon_flag_reduced": red.epsilon_flag,
        "reduced_shell_note": red.shell_note,
    }
    ok = (
        hf.converged
        and red.converged
        and red.epsilon_flag == "0"
        and hf_energy_of_reduced.total >= hf.energy.total - 1e-10
    )
    if not (hf.converged and red.converged):
        return results, 3
    return results, 0 if ok else 4


def _band_gap(report: ScfReport) -> float | None:
    filled, empty = [], []
    for lam, occ in zip(report.spectrum.eigenvalues, report.occupations):
        for v, o in zip(lam, occ):
            (filled if o > 0.5 else empty).append(v)
    if not filled or not empty:
        return None
    return float(min(empty) - max(filled))


def _limit_threads(n: int | None):
    if n is None:
        return None
    os.environ.setdefault("OMP_NUM_THREADS", str(n))
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=n)
    except ImportError:
        return None


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pwhf", description=__doc__)
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run the SCF and write report/bands/state")
    p_solve.add_argument("config")
    p_solve.add_argument("--out-dir", required=True)
    p_solve.add_argument("--checks", default="all")

    p_verify = sub.add_parser("verify", help="run checks on a state snapshot")
    p_verify.add_argument("snapshot")
    p_verify.add_argument("--checks", default="all")
    p_verify.add_argument("--out", default=None)

    p_compare = sub.add_parser("compare", help="run hf and reduced on one config")
    p_compare.add_argument("config")
    p_compare.add_argument("--out-dir", default=None)

    args = parser.parse_args(argv)
    limiter = _limit_threads(args.threads)
    try:
        return _dispatch(args)
    except InvalidParameterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        if limiter is not None:
            limiter.unregister()


def _parse_checks(text: str) -> tuple[str, ...]:
    if text.strip().lower() == "all":
        return ALL_CHECKS
    flags = tuple(t.strip() for t in text.split(",") if t.strip())
    unknown = set(flags) - set(ALL_CHECKS)
    if unknown:
        raise InvalidParameterError(f"unknown checks {sorted(unknown)}; choose from {ALL_CHECKS}")
    return flags


def _dispatch(args) -> int:
    if args.command == "solve":
        config = parse_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        os.makedirs(args.out_dir, exist_ok=True)
        manifest = RunManifest(
            config=config,
            report_path=os.path.join(args.out_dir, "report.json"),
            bands_path=os.path.join(args.out_dir, "bands.csv"),
            state_path=os.path.join(args.out_dir, "state.json"),
            verify_flags=_parse_checks(args.checks),
            threads=args.threads,
        )
        code = run(manifest)
        print(f"report: {manifest.report_path}  bands: {manifest.bands_path}  exit {code}")
        return code

    if args.command == "verify":
        state, extra = load_state(args.snapshot)
        flags = _parse_checks(args.checks)
        cfg_extra = extra.get("config")
        h = extra.get("h")
        doc = {"snapshot": str(args.snapshot)}
        spectrum = mu = None
        dtol = 1e-7
        if cfg_extra is not None:
            cfg = ScfConfig(
                Z=cfg_extra["z"],
                ecut=cfg_extra["ecut"],
                ngrid=cfg_extra["ngrid"],
                mode=cfg_extra.get("mode", "hf"),
                nuclei=cfg_extra.get("nuclei", "point"),
                sigma=cfg_extra.get("sigma", 0.1),
                degeneracy_tol=cfg_extra.get("degeneracy_tol", 1e-7),
                seed=cfg_extra.get("seed", 0),
            )
            dtol = cfg.degeneracy_tol
            from .meanfield import assemble_fock, diagonalize

            corr = singular_average(cfg.ngrid)
            if h is None:
                from .kernels import compute_h

                h = compute_h()
            fock = assemble_fock(
                state, cfg.Z, h, corr, cfg.mode, cfg.effective_sigma,
                TransferTables(state.bases),
            )
            spectrum = diagonalize(fock)
            mu = extra.get("mu")
        else:
            if h is None:
                from .kernels import compute_h

                h = compute_h()
            flags = tuple(f for f in flags if f not in ("fermi_shell",))
        if "fermi_shell" in flags and (spectrum is None or mu is None):
            flags = tuple(f for f in flags if f != "fermi_shell")
        checks = run_checks(doc, state, spectrum, mu, dtol, h, flags)
        text = json.dumps(doc, sort_keys=True, indent=1)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text + "\n")
        else:
            print(text)
        return 0 if all(c["passed"] for c in checks) else 4

    if args.command == "compare":
        config = parse_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        out_dir = args.out_dir or "."
        os.makedirs(out_dir, exist_ok=True)
        manifest = RunManifest(
            config=config,
            report_path=os.path.join(out_dir, "compare.json"),
            bands_path=os.path.join(out_dir, "compare_bands.csv"),
            state_path=os.path.join(out_dir, "compare_state.json"),
        )
        results, code = compare_modes(manifest)
        with open(manifest.report_path, "w") as fh:
            json.dump(results, fh, sort_keys=True, indent=1)
            fh.write("\n")
        print(f"comparison: {manifest.report_path}  exit {code}")
        return code

    raise InvalidParameterError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
