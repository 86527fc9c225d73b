"""Command line entry point.

Subcommands
-----------
kernels
    Free biharmonic kernel on seeded random distances with the agreement of
    the small-mu series and the splitting identity. CSV columns:
    ``mu_abs,r,re,im,series_closed_rel_err``.
classify
    Ladder classification with the singular-value table and, for singular
    thresholds, the resonance-function signatures. CSV columns:
    ``stage,index,singular_value,threshold``.
expand
    Samples of M(mu)^{-1} along a ray, the fitted expansion and the blow-up
    exponent. CSV columns: ``mu_abs,inverse_norm,fit_residual``.
decay
    Propagator matrix element, its low-energy piece and the decay fit.
    CSV columns: ``t,abs_element,abs_low,abs_high``.
tune
    Tune a bump layout to a class and write a fixture file. CSV columns:
    ``step,s,theta,value``.

Exit status is 0 on success, 2 on validation errors and 3 on numerical
failures; a JSON report with diagnostics is written in every case.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import pickle
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import kernels as K
from .config import RunConfig, fixture_dict, grid_for, load_config, load_fixture, provenance_hash
from .discretization import Discretization, RadialProblem, set_threads
from .errors import NumericalFailure, TuningFailure, ValidationError
from .ladder import build_ladder, verify_resonance_function
from .reports import build_report, write_csv, write_report

SUBCOMMANDS = ("kernels", "classify", "expand", "decay", "tune")
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


# ---------------------------------------------------------------------------
# problem resolution and cache
# ---------------------------------------------------------------------------


def _default_channels(d: int) -> tuple:
    return (0, 1) if d in (5, 6) else (0,)


def _source_key(cfg: RunConfig) -> dict:
    pot = cfg.potential
    if pot.family == "fixture":
        text = Path(pot.fixture).read_text() if Path(pot.fixture).exists() else pot.fixture
        return {"fixture_text": text}
    return {"dimension": cfg.dimension, "potential": pot.to_dict()}


def cache_key(cfg: RunConfig) -> str:
    """Hash of (fixture, grid, module version) identifying a resolved problem and ladder."""
    return provenance_hash({
        "source": _source_key(cfg),
        "grid": dataclasses.asdict(cfg.grid),
        "tau": cfg.tau,
        "version": __version__,
    })


@dataclasses.dataclass
class Resolved:
    """Problem, grid and ladder for a configuration."""

    problem: RadialProblem
    grid: object
    ladder: object
    declared: str | None
    fixture: dict
    tune_diagnostics: dict
    cache_key: str
    cache_hit: bool = False

    @property
    def provenance(self) -> dict:
        return {
            "fixture_hash": provenance_hash(self.fixture),
            "grid_hash": provenance_hash(np.concatenate([self.grid.nodes, self.grid.weights]).tolist()),
            "cache_key": self.cache_key,
            "cache_hit": self.cache_hit,
        }


def resolve(cfg: RunConfig, use_cache: bool = True) -> Resolved:
    """Build (or load from the cache) the problem, grid and ladder."""
    key = cache_key(cfg)
    path = Path(cfg.output.cache) / f"{key}.pkl" if (use_cache and cfg.output.cache) else None
    if path is not None and path.exists():
        try:
            with path.open("rb") as fh:
                res = pickle.load(fh)
            if isinstance(res, Resolved) and res.cache_key == key:
                res.cache_hit = True
                return res
        except (OSError, pickle.UnpicklingError, EOFError, AttributeError):
            pass
    res = _resolve_fresh(cfg, key)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as fh:
            pickle.dump(res, fh)
    return res


def _resolve_fresh(cfg: RunConfig, key: str) -> Resolved:
    from .tuner import preset_target, tune

    pot = cfg.potential
    d = cfg.dimension
    diag: dict = {}
    declared = None
    if pot.family == "tuned":
        target = preset_target(d, pot.classification)
        if pot.channels is not None:
            target = dataclasses.replace(target, channels=pot.channels)
        result = tune(target, N=cfg.grid.N, tau=cfg.tau, scheme=cfg.grid.scheme)
        problem, ladder, declared = result.problem, result.ladder, pot.classification
        grid = result.grid if cfg.grid.R is None else grid_for(problem, cfg.grid)
        if grid is not result.grid:
            ladder = build_ladder(problem, grid, cfg.tau)
        diag = result.diagnostics()
    else:
        if pot.family == "fixture":
            fx = load_fixture(pot.fixture)
            problem, declared = fx["problem"], fx["classification"]
            if problem.dimension != d:
                raise ValidationError(f"fixture dimension {problem.dimension} differs from config dimension {d}")
            gspec = fx["grid"] or cfg.grid
        else:
            problem = RadialProblem(d, tuple(b.build() for b in pot.bumps), pot.alpha,
                                    channels=pot.channels or _default_channels(d))
            gspec = cfg.grid
        grid = grid_for(problem, gspec)
        ladder = build_ladder(problem, grid, cfg.tau)
    return Resolved(problem, grid, ladder, declared, fixture_dict(problem, declared), diag, key)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_kernels(cfg: RunConfig, out: Path, threads: int) -> dict:
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dimension
    mus = np.geomspace(cfg.mu_sweep.min, cfg.mu_sweep.max, cfg.mu_sweep.count)
    radii = np.sort(rng.uniform(0.1, 10.0, 8))
    rows = []
    worst = 0.0
    for m in mus:
        p = K.SpectralPoint.on_ray(float(m), cfg.mu_sweep.angle)
        mu = p.mu
        auto = K.biharm_kernel(d, p, radii)
        series = K.biharm_kernel(d, p, radii, branch="series")
        closed = K.biharm_kernel(d, p, radii, branch="closed")
        err = np.abs(series - closed) / np.abs(closed)
        # both branches are accurate in the overlap band around the switch
        band = (np.abs(mu) * radii >= 0.3) & (np.abs(mu) * radii <= 3.0)
        if np.any(band):
            worst = max(worst, float(err[band].max()))
        for r, val, e in zip(radii, auto, err):
            rows.append((abs(mu), r, val.real, val.imag, e))
    write_csv(out / "kernels.csv", ["mu_abs", "r", "re", "im", "series_closed_rel_err"], rows)
    prov = {"fixture_hash": provenance_hash({"dimension": d, "radii": radii.tolist()})}
    return {
        "provenance": prov,
        "result": {"dimension": d, "radii": radii, "series_switch": K.SERIES_SWITCH,
                   "max_series_closed_relative_error_overlap": worst},
    }


def cmd_classify(cfg: RunConfig, out: Path, threads: int) -> dict:
    res = resolve(cfg)
    state = res.ladder
    rows = []
    for s in state.stages:
        for i, sv in enumerate(s.null.singular_values[:12]):
            rows.append((s.name, i, float(sv), float(s.null.threshold)))
    write_csv(out / "classify.csv", ["stage", "index", "singular_value", "threshold"], rows)
    result = {"classification": state.classification, "sigma_table": state.to_dict(),
              "declared_classification": res.declared}
    diag = {"tuning": res.tune_diagnostics}
    if state.classification != "Regular":
        rep = verify_resonance_function(state, res.problem, res.grid)
        result["resonance_functions"] = rep.to_dict()
    if res.declared is not None and res.declared != state.classification:
        diag["declared_mismatch"] = True
    return {"provenance": res.provenance, "result": result, "diagnostics": diag}


def cmd_expand(cfg: RunConfig, out: Path, threads: int) -> dict:
    from .expansion import blowup_exponent, compare_leading, expansion_model, fit_expansion, sample_inverse

    res = resolve(cfg)
    state = res.ladder
    disc = Discretization(res.problem, res.grid)
    mus = np.geomspace(cfg.mu_sweep.min, cfg.mu_sweep.max, cfg.mu_sweep.count)
    samples = sample_inverse(state, disc, mus, cfg.mu_sweep.angle)
    model = expansion_model(res.problem.dimension, state.classification)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = fit_expansion(samples, model)
    compare_leading(report, state, disc)
    norms = [float(np.linalg.norm(m)) for _, m in samples]
    # samples and report.mus are both in ascending |mu|
    rows = list(zip(np.abs(report.mus), norms, report.residual_norms))
    write_csv(out / "expand.csv", ["mu_abs", "inverse_norm", "fit_residual"], rows)
    result = {"classification": state.classification, "expansion": report.to_dict()}
    low = mus <= 1e-2 * (1 + 1e-12)
    if low.sum() >= 2:
        result["blowup_exponent"] = blowup_exponent(mus, [m for _, m in samples])
    else:
        result["blowup_exponent"] = float(np.polyfit(np.log(mus), np.log(norms), 1)[0])
    return {"provenance": res.provenance, "result": result, "diagnostics": {"warnings": report.warnings}}


def cmd_decay(cfg: RunConfig, out: Path, threads: int) -> dict:
    from .decay import (SpectralEngine, TestFunction, admissible_models, decay_times, fit_decay,
                        predicted_decay, propagator_table)

    res = resolve(cfg)
    d = res.problem.dimension
    cls = res.ladder.classification
    tf_spec = cfg.test_function
    channel = tf_spec.channel
    if channel is None:
        channel = 1 if cls == "SecondKind" and d in (5, 6) else 0
    if channel not in res.problem.channels:
        raise ValidationError(f"test function channel {channel} is not carried by the problem")
    f = TestFunction(tf_spec.width, tf_spec.center, channel)
    engine = SpectralEngine(res.problem, res.grid, f, tau=cfg.tau)
    table = propagator_table(engine, cfg.cutoff, threads=threads)
    pred = predicted_decay(d, engine.state.classification)
    if cfg.t_sweep.min is not None:
        t = np.geomspace(cfg.t_sweep.min, cfg.t_sweep.max, cfg.t_sweep.count)
    else:
        t = decay_times(pred, cfg.t_sweep.count)
    low, high = table.element(t, "low"), table.element(t, "high")
    rep = fit_decay(t, low, admissible_models(pred), pred)
    rep.diagnostics["fitted_part"] = "low"
    rep.diagnostics["high_to_low_max"] = float(np.max(np.abs(high) / np.abs(low)))
    write_csv(out / "decay.csv", ["t", "abs_element", "abs_low", "abs_high"],
              zip(t, np.abs(low + high), np.abs(low), np.abs(high)))
    bound = math.sqrt(table.norm_f * table.norm_g)
    check_t = np.concatenate([[0.0], np.geomspace(1e-2, 1e6, 50)])
    excess = float(max(0.0, np.max(np.abs(table.element(check_t))) - bound) / bound)
    result = {
        "classification": cls,
        "channel_classification": engine.state.classification,
        "test_function": f.to_dict(),
        "fit": rep.to_dict(),
        "normalization_defect": table.normalization_defect(),
        "unitarity_excess": excess,
        "zero_projection": table.zero_projection,
        "low_tail_model": {k: v for k, v in table.low_tail.items() if k != "integral"},
        "high_tail_model": table.high_tail,
    }
    return {"provenance": res.provenance, "result": result, "diagnostics": rep.diagnostics}


def cmd_tune(cfg: RunConfig, out: Path, threads: int) -> dict:
    from .tuner import preset_target, tune

    pot = cfg.potential
    if pot.family != "tuned":
        raise ValidationError("tune needs a potential with family: tuned")
    target = preset_target(cfg.dimension, pot.classification)
    if pot.channels is not None:
        target = dataclasses.replace(target, channels=pot.channels)
    result = tune(target, N=cfg.grid.N, tau=cfg.tau, scheme=cfg.grid.scheme)
    rows = [(i, e.get("s", math.nan), e.get("theta", math.nan), e.get("eigenvalue", e.get("moment", math.nan)))
            for i, e in enumerate(result.trace)]
    write_csv(out / "tune.csv", ["step", "s", "theta", "value"], rows)
    fx = fixture_dict(result.problem, result.ladder.classification, cfg.grid)
    (out / "fixture.yaml").write_text(yaml.safe_dump(fx, sort_keys=False))
    return {
        "provenance": {"fixture_hash": provenance_hash(fixture_dict(result.problem, result.ladder.classification))},
        "result": {"classification": result.ladder.classification, "fixture": fx,
                   "sigma_table": result.ladder.to_dict()},
        "diagnostics": result.diagnostics(),
    }


COMMANDS = {
    "kernels": cmd_kernels,
    "classify": cmd_classify,
    "expand": cmd_expand,
    "decay": cmd_decay,
    "tune": cmd_tune,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biharm-threshold",
        description="Threshold classification, resolvent expansions and decay rates for (-Delta)^2 + V.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=COMMANDS[name].__name__.replace("cmd_", ""))
        p.add_argument("--config", type=Path, help="YAML run configuration")
        p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        p.add_argument("--seed", type=int, help="seed for randomized checks (overrides config)")
    return parser


def run(command: str, cfg: RunConfig, out: Path | None = None, threads: int = 1) -> int:
    """Execute one subcommand and write its report; returns the exit status."""
    out = Path(out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    set_threads(threads)
    report_path = out / f"{command}.json"
    try:
        payload = COMMANDS[command](cfg, out, threads)
        status, code = "ok", EXIT_OK
    except ValidationError as exc:
        payload = {"diagnostics": {"error": type(exc).__name__, "message": str(exc)}}
        status, code = "validation_error", EXIT_VALIDATION
    except NumericalFailure as exc:
        diag = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, TuningFailure):
            diag["trace"] = exc.trace[-20:]
        payload = {"diagnostics": diag}
        status, code = "numerical_failure", EXIT_NUMERICAL
    except np.linalg.LinAlgError as exc:
        payload = {"diagnostics": {"error": "LinAlgError", "message": str(exc)}}
        status, code = "numerical_failure", EXIT_NUMERICAL
    report = build_report(command, status, payload.get("provenance", {}), payload.get("result"),
                          payload.get("diagnostics"), cfg.to_dict())
    write_report(report_path, report)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads < 1:
            raise ValidationError("--threads must be at least 1")
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
            RunConfig.from_dict(cfg.to_dict())
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    code = run(args.command, cfg, args.out, args.threads)
    if code:
        print(f"{args.command}: exit {code}, see report in {args.out or cfg.output.dir}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
