"""Command-line harness: config parsing, run orchestration, report emission.

One JSON config file drives every subcommand. All randomness flows from a
single master seed through per-replicate streams, so a config plus a seed
pins every byte of the reports, whatever the worker count. Reports carry
no timestamps for the same reason.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .effects import EffectDef, ModelSpec, target_statistics
from .engine import ParameterPoint, simulate_period
from .errors import (
    CollinearityError,
    DegeneracyError,
    DivergenceError,
    ValidationError,
)
from .estimator import (
    EstimationSettings,
    MonitorPlan,
    Phase2Schedule,
    estimate,
    phase3,
)
from .inference import (
    composite_score_test,
    gof,
    psc,
    reparametrize_to_sd,
    score_test_overdispersion,
    standard_errors,
)
from .networks import PanelData, load_panel, save_network
from .streams import PHASE_ADHOC, PHASE_COVARIANCE, PHASE_GOF, replicate_seed

log = logging.getLogger(__name__)

SUBCOMMANDS = ("simulate", "estimate", "test", "gof", "psc")


@dataclass
class RunConfig:
    panel: PanelData
    spec: ModelSpec
    settings: EstimationSettings
    master_seed: int
    out_dir: Path
    sections: dict
    pp0: ParameterPoint | None


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


def _section(raw: dict, name: str, allowed: set[str], required: set[str] = frozenset()) -> dict:
    sec = raw.get(name, {})
    _require(isinstance(sec, dict), f"config section {name!r} must be an object")
    unknown = set(sec) - allowed
    _require(not unknown, f"unknown keys in config section {name!r}: {sorted(unknown)}")
    missing = required - set(sec)
    _require(not missing, f"config section {name!r} is missing: {sorted(missing)}")
    return sec


def parse_effect(obj, role: str = "fixed") -> EffectDef:
    """Effect from either {"kind": ..., "covariate": ...} or "kind(covariate)"."""
    if isinstance(obj, str):
        if obj.endswith(")") and "(" in obj:
            kind, _, rest = obj.partition("(")
            return EffectDef(kind=kind, covariate=rest[:-1], role=role)
        return EffectDef(kind=obj, role=role)
    if isinstance(obj, dict):
        unknown = set(obj) - {"kind", "covariate"}
        _require(not unknown, f"unknown effect keys: {sorted(unknown)}")
        _require("kind" in obj, "effect needs a 'kind'")
        return EffectDef(kind=obj["kind"], covariate=obj.get("covariate"), role=role)
    raise ValidationError(f"cannot parse effect from {obj!r}")


def parse_model(sec: dict) -> ModelSpec:
    unknown = set(sec) - {"fixed_effects", "random_effects", "variance_model", "rate"}
    _require(not unknown, f"unknown keys in model declaration: {sorted(unknown)}")
    _require("fixed_effects" in sec, "model declaration needs 'fixed_effects'")
    fixed = tuple(parse_effect(e, "fixed") for e in sec["fixed_effects"])
    rand = tuple(parse_effect(e, "random") for e in sec.get("random_effects", ()))
    return ModelSpec(
        fixed_effects=fixed,
        random_effects=rand,
        variance_model=sec.get("variance_model"),
        rate=sec.get("rate", "basic"),
    )


def parse_parameter_point(obj, spec: ModelSpec) -> ParameterPoint:
    """Parameter values from config: rate, beta (list or by-label dict), sigma."""
    _require(isinstance(obj, dict), "parameters must be an object")
    unknown = set(obj) - {"rate", "beta", "sigma"}
    _require(not unknown, f"unknown parameter keys: {sorted(unknown)}")
    _require("rate" in obj and "beta" in obj, "parameters need 'rate' and 'beta'")
    beta_raw = obj["beta"]
    if isinstance(beta_raw, dict):
        labels = [e.label for e in spec.fixed_effects]
        missing = set(labels) - set(beta_raw)
        _require(not missing, f"missing coefficients for: {sorted(missing)}")
        extra = set(beta_raw) - set(labels)
        _require(not extra, f"coefficients for effects not in the model: {sorted(extra)}")
        beta = [float(beta_raw[lab]) for lab in labels]
    else:
        beta = [float(v) for v in beta_raw]
        _require(len(beta) == spec.p, f"beta must have length {spec.p}")
    sigma = None
    if spec.q:
        _require("sigma" in obj, "model has random effects; parameters need 'sigma'")
        s = np.asarray(obj["sigma"], dtype=np.float64)
        if spec.variance_model == "scalar":
            _require(s.size == 1, "scalar variance model takes one variance value")
            sigma = s.reshape(1)
        elif spec.variance_model == "diagonal":
            _require(s.shape == (spec.q,), f"diagonal variance needs {spec.q} values")
            sigma = s
        else:
            _require(s.shape == (spec.q, spec.q), "unrestricted variance needs a full matrix")
            sigma = s
    else:
        _require("sigma" not in obj, "model has no random effects; drop 'sigma'")
    return ParameterPoint(lam=float(obj["rate"]), beta=np.asarray(beta), sigma=sigma)


def parse_config(
    path,
    seed: int | None = None,
    workers: int | None = None,
    out: str | None = None,
) -> RunConfig:
    """Read and validate a config file; CLI flags override its seed/workers/out."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    _require(isinstance(raw, dict), "config root must be an object")
    known = {"data", "model", "algorithm", "output", "test", "psc", "gof", "simulate"}
    unknown = set(raw) - known
    _require(not unknown, f"unknown config sections: {sorted(unknown)}")

    base = path.parent
    data = _section(raw, "data", {"wave1", "wave2", "covariates"}, {"wave1", "wave2"})
    cov_paths = data.get("covariates", {})
    _require(isinstance(cov_paths, dict), "data.covariates must map names to paths")
    panel = load_panel(
        base / data["wave1"],
        base / data["wave2"],
        {name: base / p for name, p in cov_paths.items()},
    )

    _require("model" in raw, "config needs a 'model' section")
    spec = parse_model(raw["model"])
    spec.validate_against(panel)

    alg = _section(
        raw,
        "algorithm",
        {
            "seed",
            "workers",
            "subphase_lengths",
            "tail_lengths",
            "initial_gain",
            "sigma_gain",
            "gain_reduction",
            "sigma_min",
            "phase1_replicates",
            "phase3_replicates",
            "warm_start",
            "collinearity_tmax",
            "monitor_effects",
            "monitor_dispersion",
            "aux_max_bin",
            "starting_values",
        },
    )
    sched_kwargs = {}
    if "subphase_lengths" in alg:
        sched_kwargs["subphase_lengths"] = tuple(int(v) for v in alg["subphase_lengths"])
    if "tail_lengths" in alg:
        sched_kwargs["tail_lengths"] = tuple(int(v) for v in alg["tail_lengths"])
    if "initial_gain" in alg:
        sched_kwargs["initial_gain_theta"] = float(alg["initial_gain"])
    if alg.get("sigma_gain") is not None:
        sched_kwargs["initial_gain_sigma"] = float(alg["sigma_gain"])
    if "gain_reduction" in alg:
        sched_kwargs["gain_reduction"] = float(alg["gain_reduction"])
    if "sigma_min" in alg:
        sched_kwargs["sigma_min"] = float(alg["sigma_min"])
    schedule = Phase2Schedule(**sched_kwargs)

    monitor = None
    if {"monitor_effects", "monitor_dispersion", "aux_max_bin"} & set(alg):
        monitor = MonitorPlan(
            extra_effects=tuple(
                parse_effect(e, "fixed") for e in alg.get("monitor_effects", ())
            ),
            extra_dispersion=(
                None
                if alg.get("monitor_dispersion") is None
                else tuple(parse_effect(e, "random") for e in alg["monitor_dispersion"])
            ),
            aux_max_bin=int(alg.get("aux_max_bin", 20)),
        )
    settings = EstimationSettings(
        schedule=schedule,
        phase1_replicates=int(alg.get("phase1_replicates", 200)),
        phase3_replicates=int(alg.get("phase3_replicates", 5000)),
        warm_start=bool(alg.get("warm_start", True)),
        workers=int(workers if workers is not None else alg.get("workers", 1)),
        monitor=monitor,
        collinearity_tmax=float(alg.get("collinearity_tmax", 2.0)),
    )
    _require(settings.workers >= 1, "workers must be at least 1")

    pp0 = None
    if "starting_values" in alg:
        pp0 = parse_parameter_point(alg["starting_values"], spec)

    out_sec = _section(raw, "output", {"directory"})
    out_dir = Path(out) if out is not None else base / out_sec.get("directory", ".")
    master_seed = int(seed if seed is not None else alg.get("seed", 0))
    _require(master_seed >= 0, "seed must be nonnegative")

    return RunConfig(
        panel=panel,
        spec=spec,
        settings=settings,
        master_seed=master_seed,
        out_dir=out_dir,
        sections=raw,
        pp0=pp0,
    )


# ---------------------------------------------------------------------------
# report plumbing


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else repr(v)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def _write_json(cfg: RunConfig, name: str, report: dict) -> Path:
    p = cfg.out_dir / name
    p.write_text(json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n")
    return p


def _write_chain(cfg: RunConfig, chain: np.ndarray) -> Path:
    p = cfg.out_dir / "chain.csv"
    # covariance labels contain commas; quote those header fields
    names = [f'"{n}"' if "," in n else n for n in cfg.spec.parameter_names()]
    np.savetxt(p, np.atleast_2d(chain), delimiter=",", header=",".join(names), comments="", fmt="%.17g")
    return p


def _parameter_table(names, estimates, ses, extra_rows=()) -> str:
    width = max(len(n) for n in names) + 2
    lines = [f"{'parameter':<{width}}{'estimate':>12}{'std. error':>12}"]
    for k, name in enumerate(names):
        se = "--" if ses is None else f"{ses[k]:.4f}"
        lines.append(f"{name:<{width}}{estimates[k]:>12.4f}{se:>12}")
    for name, est, se in extra_rows:
        lines.append(f"{name:<{width}}{est:>12.4f}{se:>12.4f}")
    return "\n".join(lines)


def _statistics_block(summ) -> dict:
    est = summ.est_slice
    return {
        "names": list(summ.names[: summ.est_dim]),
        "observed": summ.g_obs[est],
        "simulated_mean": summ.m_bar[est],
    }


# ---------------------------------------------------------------------------
# subcommands


def _cmd_estimate(cfg: RunConfig) -> int:
    result, summ = estimate(
        cfg.spec, cfg.panel, cfg.settings, cfg.master_seed, pp0=cfg.pp0
    )
    chain_path = _write_chain(cfg, result.chain)
    ses = None
    cov = None
    sd_block = None
    try:
        rep = standard_errors(summ)
        ses = rep.standard_errors
        cov = rep.C
        if cfg.spec.q and cfg.spec.variance_model in ("scalar", "diagonal"):
            s2 = result.theta_hat.sigma
            if (s2 > 0).all():
                sd_rep = reparametrize_to_sd(rep, s2)
                k = s2.shape[0]
                sd_block = {
                    "names": sd_rep.param_names[-k:],
                    "estimates": np.sqrt(s2),
                    "standard_errors": sd_rep.standard_errors[-k:],
                }
    except ValidationError as exc:
        log.warning("standard errors unavailable: %s", exc)
    names = result.param_names
    vec = result.theta_hat.as_vector(cfg.spec.variance_model)
    report = {
        "subcommand": "estimate",
        "seed": cfg.master_seed,
        "converged": result.converged,
        "tmax": result.tmax,
        "t_ratios": dict(zip(summ.names[: summ.est_dim], result.t_ratios)),
        "parameters": {
            "names": names,
            "estimates": vec,
            "standard_errors": ses,
        },
        "sd_parameterization": sd_block,
        "covariance": cov,
        "statistics": _statistics_block(summ),
        "replicates": {"phase3": summ.T, "aborted": summ.n_aborted},
        "chain_file": chain_path.name,
        "iterations": int(result.chain.shape[0]),
    }
    _write_json(cfg, "estimate.json", report)
    extra = []
    if sd_block is not None:
        extra = list(
            zip(sd_block["names"], sd_block["estimates"], sd_block["standard_errors"])
        )
    table = _parameter_table(names, vec, ses, extra)
    status = "converged" if result.converged else "NOT converged"
    table += f"\nconvergence: {status} (overall deviation {result.tmax:.3f})"
    (cfg.out_dir / "estimate.txt").write_text(table + "\n")
    print(table)
    return 0


def _null_summaries(cfg: RunConfig, sec: dict, monitor: MonitorPlan, phase: int):
    """Fitted-model archive for tests: estimate, or re-simulate at given values."""
    if "parameters" in sec:
        pp = parse_parameter_point(sec["parameters"], cfg.spec)
        return phase3(
            cfg.spec,
            cfg.panel,
            pp,
            T=int(sec.get("replicates", cfg.settings.phase3_replicates)),
            master_seed=cfg.master_seed,
            workers=cfg.settings.workers,
            monitor=monitor,
            phase=phase,
        )
    settings = replace(cfg.settings, monitor=monitor)
    _, summ = estimate(cfg.spec, cfg.panel, settings, cfg.master_seed, pp0=cfg.pp0)
    return summ


def _cmd_test(cfg: RunConfig) -> int:
    sec = _section(
        cfg.sections,
        "test",
        {"kind", "statistics", "dispersion_statistics", "row", "parameters", "replicates"},
        {"kind"},
    )
    kind = sec["kind"]
    _require(kind in ("overdispersion", "score"), "test.kind must be 'overdispersion' or 'score'")
    extra_effects = tuple(parse_effect(e, "fixed") for e in sec.get("statistics", ()))
    extra_disp = (
        tuple(parse_effect(e, "random") for e in sec["dispersion_statistics"])
        if "dispersion_statistics" in sec
        else None
    )
    if kind == "score":
        _require(bool(extra_effects), "score test needs test.statistics")
    monitor = MonitorPlan(
        extra_effects=extra_effects,
        extra_dispersion=extra_disp,
        aux_max_bin=0,
    )
    summ = _null_summaries(cfg, sec, monitor, phase=PHASE_COVARIANCE)
    observed = target_statistics(cfg.panel, cfg.spec)
    if kind == "overdispersion":
        out = score_test_overdispersion(summ, observed, row=sec.get("row"))
        stat_field = {"z": out.z_obs}
    else:
        out = composite_score_test(summ, observed, tested=[e.label for e in extra_effects])
        stat_field = {"z2": out.z_obs}
    report = {
        "subcommand": "test",
        "seed": cfg.master_seed,
        "kind": out.kind,
        "statistics": out.tested,
        **stat_field,
        "p_asymptotic": out.p_asymptotic,
        "p_empirical": out.p_empirical,
        "p_empirical_se": out.p_empirical_se,
        "T": int(out.replicate_z.shape[0]),
        "gamma": out.gamma,
        "xi": out.xi,
        "y_observed": out.y_obs,
        "y_simulated_mean": out.y_bar,
    }
    _write_json(cfg, "test.json", report)
    label = "z" if out.kind == "one-sided" else "z2"
    print(
        f"test[{', '.join(out.tested)}]: {label} = {out.z_obs:.4f}, "
        f"p_asymptotic = {out.p_asymptotic:.3g}, p_empirical = {out.p_empirical:.3g}"
    )
    return 0


def _cmd_gof(cfg: RunConfig) -> int:
    sec = _section(
        cfg.sections, "gof", {"ridge", "max_bin", "parameters", "replicates"}
    )
    monitor = MonitorPlan(
        extra_effects=(),
        extra_dispersion=(),
        aux_max_bin=int(sec.get("max_bin", 20)),
    )
    summ = _null_summaries(cfg, sec, monitor, phase=PHASE_GOF)
    out = gof(summ, ridge=float(sec.get("ridge", 0.2)))
    report = {
        "subcommand": "gof",
        "seed": cfg.master_seed,
        "statistic": "out-degree distribution",
        "bins": list(summ.names[summ.aux_slice]),
        "d_observed": out.d_obs,
        "p_value": out.p_value,
        "ridge": out.ridge,
        "observed": out.a_obs,
        "simulated_mean": out.a_bar,
        "T": int(out.distances.shape[0]),
    }
    _write_json(cfg, "gof.json", report)
    print(f"gof: distance = {out.d_obs:.4f}, p = {out.p_value:.3g}")
    return 0


def _cmd_psc(cfg: RunConfig) -> int:
    sec = _section(
        cfg.sections, "psc", {"models", "replicates", "penalty", "df"}, {"models"}
    )
    raw_models = sec["models"]
    _require(
        isinstance(raw_models, list) and raw_models,
        "psc.models must be a nonempty list",
    )
    models = []
    for j, m in enumerate(raw_models):
        _require(isinstance(m, dict), "each psc model must be an object")
        unknown = set(m) - {"name", "model", "parameters"}
        _require(not unknown, f"unknown psc model keys: {sorted(unknown)}")
        _require(
            "model" in m and "parameters" in m,
            "each psc model needs 'model' and 'parameters'",
        )
        spec = parse_model(m["model"])
        spec.validate_against(cfg.panel)
        pp = parse_parameter_point(m["parameters"], spec)
        models.append((m.get("name", f"model_{j + 1}"), spec, pp))
    names = [name for name, _, _ in models]
    _require(len(set(names)) == len(names), "psc model names must be unique")
    out = psc(
        models,
        cfg.panel,
        T=int(sec.get("replicates", 5000)),
        master_seed=cfg.master_seed,
        penalty=sec.get("penalty", "aic"),
        df_mode=sec.get("df", "n"),
        workers=cfg.settings.workers,
    )
    report = {
        "subcommand": "psc",
        "seed": cfg.master_seed,
        "penalty": out.penalty_kind,
        "df": out.df_value,
        "statistics": out.statistic_names,
        "observed": out.g0_observed,
        "best": out.best(),
        "models": [
            {
                "name": e.name,
                "fit": e.fit,
                "penalty_rebate": e.penalty,
                "psc": e.psc,
                "n_theta": e.n_theta,
                "n_variance": e.n_variance,
                "mean_replicate_quadratic": e.mean_replicate_quadratic,
            }
            for e in out.entries
        ],
    }
    _write_json(cfg, "psc.json", report)
    width = max(len(e.name) for e in out.entries) + 2
    print(f"{'model':<{width}}{'fit':>12}{'rebate':>10}{'psc':>12}")
    for e in out.entries:
        print(f"{e.name:<{width}}{e.fit:>12.2f}{e.penalty:>10.1f}{e.psc:>12.2f}")
    print(f"best: {out.best()}")
    return 0


def _cmd_simulate(cfg: RunConfig) -> int:
    sec = _section(
        cfg.sections,
        "simulate",
        {"replicates", "parameters", "write_networks"},
        {"parameters"},
    )
    pp = parse_parameter_point(sec["parameters"], cfg.spec)
    T = int(sec.get("replicates", 1))
    _require(T >= 1, "simulate.replicates must be at least 1")
    write_nets = bool(sec.get("write_networks", True))
    rows = []
    steps = []
    files = []
    for t in range(T):
        sim = simulate_period(
            cfg.panel.wave1,
            pp,
            cfg.spec,
            cfg.panel.actor_covariates,
            replicate_seed(cfg.master_seed, PHASE_ADHOC, t),
        )
        rows.append(sim.g_hat)
        steps.append(sim.n_ministeps)
        if write_nets:
            p = cfg.out_dir / f"simulated_wave_{t:04d}.txt"
            save_network(sim.end_network, p)
            files.append(p.name)
    report = {
        "subcommand": "simulate",
        "seed": cfg.master_seed,
        "statistic_names": cfg.spec.statistic_names(),
        "rows": rows,
        "n_ministeps": steps,
        "network_files": files,
    }
    _write_json(cfg, "simulate.json", report)
    print(f"simulated {T} period(s); mean change opportunities {np.mean(steps):.1f}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _write_error(cfg: RunConfig, exc: Exception, code: int) -> None:
    report = {
        "error": {
            "type": type(exc).__name__,
            "message": str(exc),
            "exit_code": code,
        }
    }
    chain = getattr(exc, "chain", None)
    if chain is not None and np.size(chain):
        report["error"]["chain_file"] = _write_chain(cfg, chain).name
    summ = getattr(exc, "summaries", None)
    if summ is not None:
        report["statistics"] = _statistics_block(summ)
    result = getattr(exc, "result", None)
    if result is not None:
        report["parameters"] = {
            "names": result.param_names,
            "estimates": result.theta_hat.as_vector(cfg.spec.variance_model),
        }
        report["tmax"] = result.tmax
    _write_json(cfg, "error.json", report)


def run(subcommand: str, cfg: RunConfig) -> int:
    """Dispatch one subcommand; map failures to exit codes and error reports."""
    _require(subcommand in SUBCOMMANDS, f"unknown subcommand {subcommand!r}")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    handlers = {
        "estimate": _cmd_estimate,
        "test": _cmd_test,
        "gof": _cmd_gof,
        "psc": _cmd_psc,
        "simulate": _cmd_simulate,
    }
    try:
        return handlers[subcommand](cfg)
    except ValidationError as exc:
        _write_error(cfg, exc, 2)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, CollinearityError) as exc:
        _write_error(cfg, exc, 3)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DegeneracyError as exc:
        _write_error(cfg, exc, 4)
        print(f"error: {exc}", file=sys.stderr)
        return 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="saomre",
        description=(
            "Stochastic actor-oriented network dynamics with actor-level "
            "random effects: simulation, moment estimation, tests, fit checks, "
            "and model comparison."
        ),
    )
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="path to the JSON run config")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--workers", type=int, default=None, help="worker count override")
    p.add_argument("--out", default=None, help="output directory override")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config, seed=args.seed, workers=args.workers, out=args.out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return run(args.subcommand, cfg)


if __name__ == "__main__":
    sys.exit(main())
