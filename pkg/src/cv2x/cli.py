"""Command line front end: config files, figure sweeps and comparison reports.

    cv2x analyze|simulate|compare [--config PATH] [--figure NAME]
         [--sweep KEY:FROM:TO:STEPS] [--drops N] [--seed S]
         [--scenario los|nlos] [--out PATH]

Config files are flat ``key = value`` lines whose keys are
:class:`~cv2x.channel.NetworkConfig` field names; ``#`` starts a comment.
Output is one CSV row per (sweep point, metric).  Exit codes: 0 success,
2 invalid input, 3 failed comparison, 4 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import AnalysisOptions, Mode, Model, Tier
from .channel import Direction, NetworkConfig, Scenario, ValidationError, speed_to_density
from .numerics import NonConvergence
from .simulator import SimulationOptions, run_monte_carlo

__all__ = [
    "ParseError",
    "Sweep",
    "ExperimentSpec",
    "ResultRow",
    "HEADER",
    "METRIC_GROUPS",
    "load_presets",
    "parse_config_text",
    "load_config",
    "parse_sweep",
    "build_spec",
    "run",
    "write_rows",
    "main",
]

EXIT_OK, EXIT_INVALID, EXIT_COMPARE, EXIT_NONCONVERGENCE = 0, 2, 3, 4

HEADER = (
    "experiment", "scenario", "sweep_key", "sweep_value", "metric_id", "case", "direction",
    "threshold", "analytic", "simulated", "ci95", "drops", "seed", "status",
)

SPECIAL_SWEEP_KEYS = ("lambda_ratio", "speed", "threshold_db")


class ParseError(ValueError):
    """Malformed config file or command line value."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# -- configuration --------------------------------------------------------------

_FIELDS = {f.name: f for f in dataclasses.fields(NetworkConfig)}


def _coerce(name: str, raw: str, line: int | None = None):
    default = _FIELDS[name].default
    try:
        if name == "scenario":
            return Scenario(raw.strip().upper())
        if isinstance(default, int) and not isinstance(default, bool):
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        return float(raw)
    except ValueError:
        raise ParseError(f"bad value {raw!r} for {name}", line) from None


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into NetworkConfig keyword overrides."""
    out: dict = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", n)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ParseError(f"unknown key {key!r}", n)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", n)
        out[key] = _coerce(key, value, n)
    return out


def load_config(path=None, scenario: str | None = None, preset: dict | None = None) -> NetworkConfig:
    """Validated config from an optional file.

    Precedence, lowest first: scenario defaults, preset values, file values.
    ``scenario`` overrides any scenario named in the file or preset.
    """
    file_values = parse_config_text(Path(path).read_text()) if path is not None else {}
    values = dict((preset or {}).get("config", {}))
    values.update(file_values)
    sc = scenario or values.pop("scenario", None) or (preset or {}).get("scenario", "LOS")
    values.pop("scenario", None)
    return NetworkConfig.for_scenario(sc, **values)


# -- experiment description ----------------------------------------------------------

@dataclass(frozen=True)
class Sweep:
    key: str
    values: tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise ParseError("sweep grid is empty")
        if self.key not in SPECIAL_SWEEP_KEYS and self.key not in _FIELDS:
            raise ParseError(f"unknown sweep key {self.key!r}")
        if self.key == "scenario":
            raise ParseError("scenario cannot be swept")


def parse_sweep(text: str) -> Sweep:
    """``KEY:FROM:TO:STEPS`` with an evenly spaced, inclusive grid."""
    parts = text.split(":")
    if len(parts) != 4:
        raise ParseError(f"sweep must look like KEY:FROM:TO:STEPS, got {text!r}")
    key, lo, hi, steps = parts
    try:
        lo_f, hi_f, n = float(lo), float(hi), int(steps)
    except ValueError:
        raise ParseError(f"bad sweep bounds in {text!r}") from None
    if n < 1:
        raise ParseError("sweep needs at least one step")
    return Sweep(key, tuple(float(v) for v in np.linspace(lo_f, hi_f, n)))


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    mode: str
    config: NetworkConfig
    sweep: Sweep | None = None
    metrics: tuple[str, ...] = ("assoc", "se_case", "se_system", "cp")
    drops: int = 2000
    seed: int = 0
    out: Path = Path("results.csv")
    estimator: str = "typical-only"
    thresholds_db: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        if self.mode not in ("analyze", "simulate", "compare"):
            raise ParseError(f"unknown mode {self.mode!r}")
        if self.mode != "analyze" and self.drops < 1:
            raise ParseError("drops must be >= 1")
        unknown = set(self.metrics) - set(METRIC_GROUPS)
        if unknown:
            raise ParseError(f"unknown metric groups {sorted(unknown)}")


@dataclass
class ResultRow:
    experiment: str
    scenario: str
    sweep_key: str
    sweep_value: float | None
    metric_id: str
    case: str
    direction: str
    threshold: float | None
    analytic: float | None = None
    simulated: float | None = None
    ci95: float | None = None
    drops: int | None = None
    seed: int | None = None
    status: str = ""

    def sort_key(self):
        nan_last = lambda v: (v is None, v if v is not None else 0.0)
        return (self.experiment, self.scenario, self.sweep_key, nan_last(self.sweep_value),
                self.metric_id, self.case, self.direction, nan_last(self.threshold))

    def cells(self) -> list[str]:
        out = []
        for name in HEADER:
            v = getattr(self, name)
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        return out


def load_presets() -> dict:
    return json.loads(resources.files("cv2x").joinpath("presets.json").read_text())


def build_spec(mode: str, figure: str | None = None, config_path=None, sweep: str | None = None,
               drops: int | None = None, seed: int = 0, scenario: str | None = None,
               out=None, estimator: str = "typical-only") -> ExperimentSpec:
    preset: dict = {}
    if figure is not None:
        presets = load_presets()
        if figure not in presets:
            raise ParseError(f"unknown figure {figure!r}; choose from {', '.join(sorted(presets))}")
        preset = presets[figure]
    config = load_config(config_path, scenario, preset)
    if sweep is not None:
        sw = parse_sweep(sweep)
    elif "sweep" in preset:
        p = preset["sweep"]
        values = p["values"] if "values" in p else np.linspace(p["from"], p["to"], p["steps"])
        sw = Sweep(p["key"], tuple(float(v) for v in values))
    else:
        sw = None
    kwargs = dict(name=figure or "custom", mode=mode, config=config, sweep=sw, seed=seed,
                  estimator=estimator)
    if "metrics" in preset:
        kwargs["metrics"] = tuple(preset["metrics"])
    if drops is not None or "drops" in preset:
        kwargs["drops"] = int(drops if drops is not None else preset["drops"])
    if out is not None:
        kwargs["out"] = Path(out)
    elif figure is not None:
        kwargs["out"] = Path(f"{figure}_{mode}.csv")
    return ExperimentSpec(**kwargs)


# -- metric catalogue ------------------------------------------------------------

_TIERS = (("mbs", Tier.MBS), ("sbs", Tier.SBS))
_DIRS = (("ul", Direction.UL), ("dl", Direction.DL))

# metric_id -> (case, direction) labels; CP ids are expanded per threshold
METRIC_GROUPS: dict[str, tuple[tuple[str, str, str], ...]] = {
    "assoc": tuple((f"p_case{k}", k, "") for k in "1234"),
    "se_case": tuple((f"se_case{k}_{d}", k, d.upper()) for k in "124" for d, _ in _DIRS),
    "se_weighted": tuple((f"se_weighted_case{k}", k, "") for k in "124"),
    "se_direction": tuple((f"se_system_{m}_{d}", "", d.upper())
                          for m in ("decoupled", "coupled") for d, _ in _DIRS),
    "se_system": tuple((f"se_system_{m}", "", "") for m in ("decoupled", "coupled")),
    "cp": tuple((f"cp_{t}_{d}", "", d.upper()) for t, _ in _TIERS for d, _ in _DIRS),
    "ul_inf": (("ul_sir_inf_rate", "", "UL"),),
}


class _Analytic:
    """Analytic metric values for one config, with divergence bookkeeping."""

    def __init__(self, config: NetworkConfig):
        self.model = Model(config, AnalysisOptions())
        self.diverged = False

    def _se(self, case, direction) -> float:
        res = self.model.se_link(case, direction)
        self.diverged |= res.diverged
        return res.value

    def value(self, metric_id: str, thresholds_db: Sequence[float]) -> list[float | None]:
        """One value per threshold for CP metrics, otherwise a single value."""
        m = self.model
        if metric_id.startswith("p_case"):
            return [m.assoc_prob(metric_id[-1])]
        if metric_id.startswith("se_case"):
            k, d = metric_id[7], metric_id[-2:].upper()
            return [self._se(k, d) if m.assoc_prob(k) > 0 else None]
        if metric_id.startswith("se_weighted_case"):
            k = metric_id[-1]
            p = m.assoc_prob(k)
            return [p * (self._se(k, "UL") + self._se(k, "DL")) if p > 0 else 0.0]
        if metric_id.startswith("se_system_"):
            parts = metric_id.split("_")
            mode = Mode(parts[2])
            direction = parts[3].upper() if len(parts) > 3 else None
            value = m.system_average_se(mode, direction)
            cases = ("1", "2", "4") if mode is Mode.DECOUPLED else ("M", "S")
            dirs = (direction,) if direction else ("UL", "DL")
            for k in cases:
                if m.assoc_prob(k) > 0:
                    for d in dirs:
                        self._se(k, d)  # cached; only picks up the divergence flags
            return [value]
        if metric_id.startswith("cp_"):
            _, tier, d = metric_id.split("_")
            th = 10.0 ** (np.asarray(thresholds_db, dtype=float) / 10.0)
            vals = np.atleast_1d(m.coverage_prob(tier.upper(), d.upper(), th))
            return [float(v) for v in vals]
        return [None]


def _point_config(base: NetworkConfig, key: str | None, value: float | None) -> NetworkConfig:
    if key is None or key == "threshold_db":
        return base
    if key == "lambda_ratio":
        return base.replace(lambda_s=value * base.lambda_m)
    if key == "speed":
        return base.replace(lambda_v=speed_to_density(value, base))
    return base.replace(**{key: _coerce(key, repr(value))})


def _passes(analytic: float, simulated: float, ci95: float) -> bool:
    if not (math.isfinite(analytic) and math.isfinite(simulated)):
        return analytic == simulated
    tol = max(0.02, 3.0 * ci95) if math.isfinite(ci95) else math.inf
    return abs(simulated - analytic) <= tol


@dataclass
class RunResult:
    rows: list[ResultRow] = field(default_factory=list)
    failures: int = 0
    diverged: bool = False


def _evaluate_point(spec: ExperimentSpec, key: str | None, value: float | None,
                    thresholds: tuple[float, ...], result: RunResult) -> None:
    cfg = _point_config(spec.config, key, value)
    metric_defs = [m for g in spec.metrics for m in METRIC_GROUPS[g]]
    do_an = spec.mode in ("analyze", "compare")
    do_sim = spec.mode in ("simulate", "compare")

    sim: dict = {}
    if do_sim:
        opts = SimulationOptions(
            estimator=spec.estimator,
            association_only=set(spec.metrics) <= {"assoc"},
            vehicle_cap=cfg.lambda_max_per_km if key == "speed" else None,
            thresholds_db=thresholds,
        )
        mc = run_monte_carlo(cfg, spec.drops, spec.seed, opts)
        sim = {(mt.metric_id, mt.threshold_db): e for mt, e in mc.estimates.items()}
    an = _Analytic(cfg) if do_an else None

    for metric_id, case, direction in metric_defs:
        is_cp = metric_id.startswith("cp_")
        ths: Sequence[float | None] = thresholds if is_cp else (None,)
        analytic = an.value(metric_id, thresholds) if an is not None else [None] * len(ths)
        for th, a in zip(ths, analytic):
            row = ResultRow(spec.name, cfg.scenario.value, key or "", value, metric_id, case,
                            direction, th)
            if a is not None:
                row.analytic = float(a)
            est = sim.get((metric_id, float(th) if th is not None else None))
            if do_sim:
                row.drops, row.seed = spec.drops, spec.seed
                if est is not None:
                    row.simulated, row.ci95 = est.mean, est.ci95_halfwidth
            if spec.mode == "compare":
                if row.analytic is None or row.simulated is None:
                    row.status = "n/a"
                elif _passes(row.analytic, row.simulated, row.ci95):
                    row.status = "pass"
                else:
                    row.status = "fail"
                    result.failures += 1
            if row.analytic is not None or row.simulated is not None:
                result.rows.append(row)
    if an is not None and an.diverged:
        result.diverged = True


def run(spec: ExperimentSpec, result: RunResult | None = None) -> RunResult:
    """Evaluate every (sweep point, metric); rows accumulate in ``result``."""
    result = result if result is not None else RunResult()
    sw = spec.sweep
    if sw is None:
        _evaluate_point(spec, None, None, spec.thresholds_db, result)
    elif sw.key == "threshold_db":
        # one evaluation covers the whole threshold grid
        _evaluate_point(spec, sw.key, None, sw.values, result)
        for row in result.rows:
            if row.threshold is not None:
                row.sweep_value = row.threshold
    else:
        for v in sw.values:
            _evaluate_point(spec, sw.key, v, spec.thresholds_db, result)
    return result


def write_rows(rows: Sequence[ResultRow], path) -> None:
    """Sorted rows under the fixed header; the file is rewritten atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for row in sorted(rows, key=ResultRow.sort_key):
            w.writerow(row.cells())
    tmp.replace(path)


# -- entry point -----------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cv2x", description="UL/DL decoupled C-V2X analysis and simulation")
    p.add_argument("mode", choices=("analyze", "simulate", "compare"))
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--figure", help="figure preset name")
    p.add_argument("--sweep", help="KEY:FROM:TO:STEPS")
    p.add_argument("--drops", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", type=str.upper, choices=("LOS", "NLOS"))
    p.add_argument("--estimator", choices=("typical-only", "all-vehicles"), default="typical-only")
    p.add_argument("--out")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        spec = build_spec(args.mode, args.figure, args.config, args.sweep, args.drops, args.seed,
                          args.scenario, args.out, args.estimator)
    except (ParseError, ValidationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    result = RunResult()
    try:
        run(spec, result)
    except NonConvergence as exc:
        write_rows(result.rows, spec.out)
        print(f"error: numerical non-convergence: {exc} (partial results in {spec.out})", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ValidationError, ValueError) as exc:
        write_rows(result.rows, spec.out)
        print(f"error: {exc} (partial results in {spec.out})", file=sys.stderr)
        return EXIT_INVALID
    write_rows(result.rows, spec.out)

    print(f"{spec.name} [{spec.mode}] {len(result.rows)} rows -> {spec.out}")
    if spec.mode == "compare":
        print(f"comparisons failed: {result.failures}")
    if result.diverged:
        print("warning: an SE tail integral hit its cap", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    if result.failures:
        return EXIT_COMPARE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
