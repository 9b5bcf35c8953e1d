"""``cdilab`` command-line entry point.

Every command reads one key-value config, writes its artifacts to ``--out``
and finishes with ``summary.json``. The exit status is 0 when every stage
validation passed, 1 when a stage failed or a validation did not hold, and
2 when the config is invalid.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, load_config
from .decomposition import ProjectionMode, apply_L, decomposition_residual, decomposition_terms
from .fields import ScalarField, l2_norm
from .forward import DirichletProblem, current_density, max_principle_ok, min_gradient_check, solve_dirichlet
from .harness import (
    ampere_component,
    ampere_trial,
    current_component,
    run_sweep,
    slice_from_current,
    stability_trial,
    write_sweep,
)
from .reconstruction import PipelineError, full_pipeline
from .regions import level_components, stability_analysis

log = logging.getLogger("cdilab")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


class StageError(RuntimeError):
    def __init__(self, module: str, message: str):
        super().__init__(message)
        self.module = module


class Run:
    """Collects validations, results and errors of one command."""

    def __init__(self, cfg: RunConfig, out: Path, threads: int):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.validations: dict[str, bool] = {}
        self.results: dict = {}
        self.errors: list[dict] = []

    def check(self, name: str, ok) -> bool:
        self.validations[name] = bool(ok)
        log.info("validation %s: %s", name, "ok" if ok else "FAILED")
        return bool(ok)

    def path(self, name: str) -> Path:
        return self.out / name

    def summary(self) -> dict:
        passed = not self.errors and all(self.validations.values())
        return {
            "command": self.cfg.command,
            "config": _config_dict(self.cfg),
            "validations": self.validations,
            "passed": passed,
            "errors": self.errors,
            "results": self.results,
        }


def _config_dict(cfg: RunConfig) -> dict:
    d = {}
    for line in cfg.to_text().splitlines():
        k, v = (p.strip() for p in line.split("=", 1))
        d[k] = v
    return d


def _stage(module: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except PipelineError as exc:
        raise StageError(exc.stage, str(exc)) from exc
    except Exception as exc:  # noqa: BLE001 - labelled and reported
        raise StageError(module, f"{type(exc).__name__}: {exc}") from exc


def _forward(run: Run, sigma, label: str):
    f = run.cfg.boundary_values()
    u, rep = _stage("forward", solve_dirichlet, DirichletProblem(sigma, f))
    run.check(f"{label}_converged", rep.converged)
    run.check(f"{label}_max_principle", max_principle_ok(u, f))
    return u, rep


# ---------------------------------------------------------------------------
# commands


def cmd_forward(run: Run):
    cfg = run.cfg
    sigma = _stage("forward", cfg.sigma_field)
    u, rep = _forward(run, sigma, "u")
    io.write_field_csv(run.path("sigma.csv"), sigma)
    io.write_field_csv(run.path("u.csv"), u)
    io.write_field_csv(run.path("J.csv"), current_density(sigma, u))
    res = {"solver_u": rep.to_dict(),
           "weak_gradient_nodes_u": int(len(min_gradient_check(u, g_min=cfg.g_min)))}
    if cfg.has_perturbation():
        st = _stage("forward", cfg.sigma_tilde_field)
        ut, rep_t = _forward(run, st, "u_tilde")
        io.write_field_csv(run.path("sigma_tilde.csv"), st)
        io.write_field_csv(run.path("u_tilde.csv"), ut)
        res["solver_u_tilde"] = rep_t.to_dict()
    res["max_principle"] = all(v for k, v in run.validations.items() if k.endswith("_max_principle"))
    run.results.update(res)


def _potential_sum(run: Run):
    cfg = run.cfg
    sigma = _stage("forward", cfg.sigma_field)
    u, _ = _forward(run, sigma, "u")
    if cfg.has_perturbation():
        st = _stage("forward", cfg.sigma_tilde_field)
        ut, _ = _forward(run, st, "u_tilde")
    else:
        st, ut = sigma, u
    return sigma, st, u, ut


def _spot_check(run: Run, v, gamma_p, I, k: int = 16) -> float:
    """Agreement of ``I`` with a per-node contour test at ``k`` seeded random nodes."""
    g = v.grid
    nodes = np.argwhere(g.interior)
    rng = np.random.default_rng(run.cfg.seed)
    pick = nodes[rng.choice(len(nodes), size=min(k, len(nodes)), replace=False)]
    margin = 0.0 if gamma_p.is_full else 2 * g.h
    agree = 0
    for i, j in pick:
        ends = [e for c in level_components(v, v.values[i, j]) if c.end_params for e in c.end_params]
        inside = bool(np.all(gamma_p.contains(np.array(ends), margin=margin))) if ends else True
        agree += inside == bool(I.mask[i, j])
    return agree / len(pick)


def cmd_regions(run: Run):
    cfg = run.cfg
    _, _, u, ut = _potential_sum(run)
    v = u + ut
    gp = cfg.gamma_prime_set()
    res = _stage("regions", stability_analysis, gp, v, g_min=cfg.g_min, threads=run.threads)
    I, S = res.injectivity, res.region
    run.check("stability_within_injectivity", S.issubset(I))
    io.write_region_csv(run.path("region_I.csv"), I)
    io.write_region_csv(run.path("region_S.csv"), S)
    io.write_region_pgm(run.path("regions.pgm"), S, (I,))
    side = S.side[S.mask]
    run.results.update({
        "gamma_prime": gp.to_list(),
        "measure_I": I.measure,
        "measure_S": S.measure,
        "count_I": I.count,
        "count_S": S.count,
        "ratio_S_I": S.measure / I.measure if I.count else None,
        "side_counts": {lab: int(np.sum(side == k)) for k, lab in ((1, "+"), (2, "-"), (3, "both"))},
        "spot_check_agreement": _spot_check(run, v, gp, I),
    })


def cmd_decompose(run: Run):
    cfg = run.cfg
    sigma, st, u, ut = _potential_sum(run)
    res, rel = _stage("decomposition", decomposition_residual, sigma, st, u, ut, g_min=cfg.g_min)
    lhs, rhs, m = decomposition_terms(sigma, st, u, ut, g_min=cfg.g_min)
    Lw = _stage("decomposition", apply_L, sigma, st, u, ut, u + ut, g_min=cfg.g_min)
    scale = max(l2_norm(rhs, m), np.finfo(float).tiny)
    io.write_field_csv(run.path("decomposition_residual.csv"), res)
    io.write_field_csv(run.path("projected_divergence.csv"), lhs * 0.5)
    run.check("finite_residual", np.isfinite(rel))
    run.results.update({
        "relative_residual": rel,
        "L_of_sum_max_abs": Lw.max_abs(m),
        "L_of_sum_relative": l2_norm(Lw, m) / scale,
        "evaluation_nodes": int(m.sum()),
    })


def cmd_reconstruct(run: Run):
    cfg = run.cfg
    sigma = _stage("forward", cfg.sigma_field)
    st = _stage("forward", cfg.sigma_tilde_field)
    out = _stage("pipeline", full_pipeline, sigma, st, cfg.boundary_values(), cfg.gamma_set(),
                 cfg.gamma_prime_set(), threads=run.threads, g_min=cfg.g_min, factor=cfg.level_factor)
    for key in ("u", "u_tilde"):
        run.check(f"{key}_converged", out.report["forward"][key]["residual"] <= out.report["forward"][key]["tolerance"])
    run.check("stability_region_nonempty", out.region.count > 0)
    io.write_field_csv(run.path("delta_sigma.csv"), out.delta_sigma)
    io.write_field_csv(run.path("delta_sigma_true.csv"), out.truth)
    io.write_field_csv(run.path("delta_u.csv"), out.delta_u.delta_u)
    io.write_region_csv(run.path("region_I.csv"), out.injectivity)
    io.write_region_csv(run.path("region_S.csv"), out.region)
    io.write_region_pgm(run.path("regions.pgm"), out.region, (out.injectivity,))
    io.write_json(run.path("stages.json"), out.report)
    with open(run.path("levels.txt"), "w") as fh:
        fh.writelines(f"{float(c)!r}\n" for c in out.levels)
    run.results.update(out.report)


def cmd_sweep(run: Run):
    cfg = run.cfg
    spec = _stage("harness", cfg.perturbation_spec)
    res = _stage("harness", run_sweep, spec, cfg.boundary_values(), cfg.gamma_set(), cfg.gamma_prime_set(),
                 cfg.mode, cfg.alpha, cfg.g_min, threads=run.threads)
    write_sweep(res, run.path("sweep.json"), run.path("sweep.csv"))
    run.check("all_trials_valid", all(r.valid for r in res.records))
    run.check("holder_check", res.fit.get("passed", False))
    run.results.update(res.to_dict())


def cmd_ampere(run: Run):
    cfg = run.cfg
    sigma = _stage("forward", cfg.sigma_field)
    st = _stage("forward", cfg.sigma_tilde_field)
    axis = 0
    f = cfg.boundary_values()
    j = _stage("harness", current_component, sigma, st, f)
    dB = slice_from_current(j)
    j_rec = ampere_component(dB)
    ds = sigma - st
    rec_meas = _stage("harness", ampere_trial, j_rec, cfg.alpha, ds, axis, cfg.eps[0] if cfg.eps else None)
    rec_exact = _stage("harness", ampere_trial, j, cfg.alpha, ds, axis)
    direct = _stage("harness", stability_trial, sigma, st, f, cfg.gamma_set(), cfg.gamma_prime_set(),
                    ProjectionMode.EXACT_GRADIENT, cfg.alpha, cfg.g_min)
    gap = max(abs(rec_exact.rhs_div - direct.rhs_div), abs(rec_exact.rhs_h1 - direct.rhs_h1),
              abs(rec_exact.lhs - direct.lhs))
    io.write_field_csv(run.path("j.csv"), j)
    io.write_field_csv(run.path("j_from_B.csv"), j_rec)
    io.write_field_csv(run.path("dB.csv"), dB.dBy)
    g = j.grid
    err = (j_rec - j).max_abs(g.interior)
    run.check("channel_equivalence", gap <= 1e-10)
    run.results.update({
        "max_abs_j": j.max_abs(g.interior),
        "max_abs_recovery_error": err,
        "record_from_B": rec_meas.to_dict(),
        "record_from_j": rec_exact.to_dict(),
        "record_direct": direct.to_dict(),
        "channel_gap": gap,
    })


COMMAND_FUNCS = {
    "forward": cmd_forward,
    "regions": cmd_regions,
    "decompose": cmd_decompose,
    "reconstruct": cmd_reconstruct,
    "sweep": cmd_sweep,
    "ampere": cmd_ampere,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdilab", description="Projected current-density stability laboratory.")
    p.add_argument("--config", required=True, type=Path, help="key = value run configuration")
    p.add_argument("--out", type=Path, default=None, help="output directory (default: 'out' key or ./cdilab-out)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for streamlines, curves and sweeps")
    p.add_argument("--verbose", action="store_true", help="log stage progress to stderr")
    return p


def run(cfg: RunConfig, out: Path, threads: int = 1) -> tuple[int, dict]:
    """Execute ``cfg.command``; returns ``(exit status, summary)``."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.effective.txt").write_text(cfg.to_text())
    r = Run(cfg, out, max(1, int(threads)))
    try:
        COMMAND_FUNCS[cfg.command](r)
    except StageError as exc:
        log.error("[%s] %s", exc.module, exc)
        r.errors.append({"module": exc.module, "message": str(exc)})
    summary = r.summary()
    io.write_json(out / "summary.json", summary)
    return (EXIT_OK if summary["passed"] else EXIT_FAILED), summary


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        errors = exc.errors if isinstance(exc, ConfigError) else [str(exc)]
        payload = {"passed": False, "errors": [{"module": "config", "message": e} for e in errors]}
        if args.out is not None:
            args.out.mkdir(parents=True, exist_ok=True)
            io.write_json(args.out / "errors.json", payload)
        print(json.dumps(payload, indent=2), file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or Path(cfg.out or "cdilab-out")
    status, summary = run(cfg, out, args.threads)
    log.info("summary written to %s (passed=%s)", out / "summary.json", summary["passed"])
    return status


if __name__ == "__main__":
    sys.exit(main())
