"""Scenario files, solver orchestration, run reports and trajectory CSVs.

A scenario is a flat UTF-8 text file of ``key = value`` lines with ``#``
comments. Presets are ordinary scenario files shipped in ``presets/`` and can
be named instead of a path.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analytic, hjb, pmp
from .costs import CostSpec, running_cost as _running_cost
from .errors import (
    DomainError,
    GridExitError,
    IntegrationError,
    ScenarioError,
    SingularityError,
    SweepConvergenceError,
)
from .long_term import x_infinity
from .sir_core import ControlSchedule, Params, PiecewiseConstantSchedule, State, Trajectory, integrate

PRESET_DIR = Path(__file__).with_name("presets")
SOLVERS = ("analytic", "sweep", "hjb", "all")
REFERENCE_CONTROLS = ("constant_eradication", "threshold")
XINF_AGREEMENT = 5e-3
J_AGREEMENT = 1e-3
HOSPITAL_FRACTION = 0.02
CSV_COLUMNS = ("t", "x", "y", "z", "sigma", "sigma_over_sigma0", "x_inf_current")

# solver failures that still allow a partial report
SOLVER_FAILURES = (SweepConvergenceError, GridExitError, IntegrationError, SingularityError)


@dataclass(frozen=True)
class GridSettings:
    nx: int = 200
    ny: int = 200
    x_lo: float = hjb.DEFAULT_EPS
    x_hi: float = 1.0
    y_lo: float = hjb.DEFAULT_EPS
    y_hi: float = 1.0
    stride: int | None = None

    def build(self) -> hjb.Grid:
        return hjb.Grid(self.nx, self.ny, self.x_lo, self.x_hi, self.y_lo, self.y_hi)


@dataclass(frozen=True)
class SweepSettings:
    omega: float = 0.3
    tol: float = 1e-6
    max_iter: int = 500


@dataclass(frozen=True)
class CovidCalibration:
    """Per-capita costs from fatality ratios and the value of lost contact time.

    ``N`` is the population. ``y_max`` is a head count (``0.02 N``); the
    cost itself uses the fraction 0.02 with all weights multiplied by ``N``,
    which keeps per-capita trajectories independent of ``N``.
    """

    alpha: float
    eta: float
    epsilon: float
    d: float = 1e4
    N: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "eta", "epsilon", "d", "N"):
            if not getattr(self, name) > 0:
                raise DomainError(f"covid_{name} must be positive")

    @property
    def c1(self) -> float:
        return self.alpha * self.N

    @property
    def c2(self) -> float:
        return self.N * self.epsilon / self.d

    @property
    def c3(self) -> float:
        return self.N * self.eta

    @property
    def y_max(self) -> float:
        return HOSPITAL_FRACTION * self.N

    def cost(self) -> CostSpec:
        return CostSpec.hospital(
            self.epsilon / self.d, self.eta, HOSPITAL_FRACTION, c1=self.alpha
        ).scaled(self.N)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    params: Params
    s0: State
    T: float
    cost: CostSpec
    sigma_min: float = 0.0
    solver: str = "all"
    grid: GridSettings = field(default_factory=GridSettings)
    output: Path | None = None
    dt: float = 0.01
    sweep: SweepSettings = field(default_factory=SweepSettings)
    covid: CovidCalibration | None = None
    reference_controls: tuple[str, ...] = ()
    sweep_param: str | None = None
    sweep_values: tuple[float, ...] = ()
    source: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        validate(self)

    def with_value(self, key: str, value) -> "ScenarioConfig":
        """Copy with one scenario-file key changed, revalidated from scratch."""
        raw = dict(self.source)
        raw[key] = (str(value), 0)
        return _build(raw)


class InvalidSetting(DomainError):
    """Validation failure attributed to the scenario keys that caused it."""

    def __init__(self, message, *keys):
        super().__init__(message)
        self.keys = keys


def validate(cfg: ScenarioConfig) -> None:
    if cfg.solver not in SOLVERS:
        raise InvalidSetting(f"solver must be one of {SOLVERS}, got {cfg.solver!r}", "solver")
    if cfg.solver == "analytic" and cfg.cost.kind != "zero":
        raise InvalidSetting("solver=analytic requires cost = zero", "solver", "cost")
    if not (cfg.T > 0 and math.isfinite(cfg.T)):
        raise InvalidSetting("horizon T must be positive", "T")
    if not cfg.dt > 0:
        raise InvalidSetting("dt must be positive", "dt")
    if not 0.0 <= cfg.sigma_min <= cfg.params.sigma0:
        raise InvalidSetting("sigma_min must lie in [0, sigma0]", "sigma_min")
    g = cfg.grid
    if g.nx < 4 or g.ny < 4:
        raise InvalidSetting("grid needs at least 4 cells per axis", "grid_nx", "grid_ny")
    if not (0 < g.x_lo < g.x_hi <= 1 and 0 < g.y_lo < g.y_hi <= 1):
        raise InvalidSetting(
            "grid bounds must satisfy 0 < lo < hi <= 1", "grid_x_lo", "grid_x_hi", "grid_y_lo", "grid_y_hi"
        )
    if g.stride is not None and g.stride < 1:
        raise InvalidSetting("policy_stride must be at least 1", "policy_stride")
    if cfg.sweep.max_iter < 1 or not cfg.sweep.tol > 0 or not 0 < cfg.sweep.omega <= 1:
        raise InvalidSetting(
            "sweep needs max_iter >= 1, tol > 0 and omega in (0, 1]",
            "sweep_max_iter", "sweep_tol", "sweep_omega",
        )
    for r in cfg.reference_controls:
        if r not in REFERENCE_CONTROLS:
            raise InvalidSetting(
                f"unknown reference control {r!r}; expected {REFERENCE_CONTROLS}", "reference_controls"
            )


# ---------------------------------------------------------------- parsing

_FLOAT_KEYS = {
    "sigma0", "beta", "gamma", "x0", "y0", "T", "c1", "c2", "c3", "y_max", "sigma_min",
    "grid_x_lo", "grid_x_hi", "grid_y_lo", "grid_y_hi", "dt", "sweep_omega", "sweep_tol",
    "covid_alpha", "covid_eta", "covid_epsilon", "covid_d", "covid_N",
}
_INT_KEYS = {"grid_nx", "grid_ny", "policy_stride", "sweep_max_iter"}
_STR_KEYS = {"name", "cost", "solver", "output", "reference_controls", "sweep_param", "sweep_values"}
KEYS = _FLOAT_KEYS | _INT_KEYS | _STR_KEYS
COST_KINDS = ("zero", "quadratic", "quadratic_plus_hospital", "covid")


def parse_text(text: str) -> dict:
    """Split scenario text into ``{key: (value, line_number)}``."""
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ScenarioError(f"expected 'key = value', got {body!r}", n)
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in KEYS:
            raise ScenarioError(f"unknown key {key!r}", n)
        if key in raw:
            raise ScenarioError(f"duplicate key {key!r} (first on line {raw[key][1]})", n)
        if not value:
            raise ScenarioError(f"empty value for {key!r}", n)
        raw[key] = (value, n)
    return raw


def _typed(raw: dict, key: str, default=None):
    if key not in raw:
        return default
    value, line = raw[key]
    try:
        if key in _FLOAT_KEYS:
            v = float(value)
            if not math.isfinite(v):
                raise ValueError
            return v
        if key in _INT_KEYS:
            return int(value)
    except ValueError:
        kind = "number" if key in _FLOAT_KEYS else "integer"
        raise ScenarioError(f"{key} must be a finite {kind}, got {value!r}", line) from None
    return value


def _line(raw, *keys):
    lines = [raw[k][1] for k in keys if k in raw and raw[k][1]]
    return min(lines) if lines else None


def _guard(raw, keys, fn):
    """Run ``fn``, turning validation failures into line-numbered scenario errors."""
    try:
        return fn()
    except ScenarioError:
        raise
    except InvalidSetting as e:
        raise ScenarioError(str(e), _line(raw, *e.keys)) from None
    except (DomainError, ValueError) as e:
        named = [k for k in keys if k in str(e).split()] or keys
        raise ScenarioError(f"invalid {'/'.join(named)}: {e}", _line(raw, *named)) from None


def _require(raw, key):
    v = _typed(raw, key)
    if v is None:
        raise ScenarioError(f"missing required key {key!r}")
    return v


def _build(raw: dict) -> ScenarioConfig:
    t = lambda k, d=None: _typed(raw, k, d)  # noqa: E731

    gamma = _require(raw, "gamma")
    if ("sigma0" in raw) == ("beta" in raw):
        raise ScenarioError("give exactly one of sigma0 or beta", _line(raw, "sigma0", "beta"))
    params = _guard(
        raw, ("sigma0", "beta", "gamma"),
        lambda: Params(gamma, t("sigma0")) if "sigma0" in raw else Params.from_beta(t("beta"), gamma),
    )
    s0 = _guard(raw, ("x0", "y0"), lambda: State(_require(raw, "x0"), _require(raw, "y0")))

    kind = t("cost", "zero")
    if kind not in COST_KINDS:
        raise ScenarioError(f"cost must be one of {COST_KINDS}, got {kind!r}", _line(raw, "cost"))
    covid = None
    weights = ("c1", "c2", "c3", "y_max")
    if kind == "covid":
        clash = [k for k in weights if k in raw]
        if clash:
            raise ScenarioError(
                f"cost = covid derives {', '.join(clash)}; do not set them", _line(raw, *clash)
            )
        ck = ("covid_alpha", "covid_eta", "covid_epsilon", "covid_d", "covid_N")
        covid = _guard(raw, ck, lambda: CovidCalibration(
            _require(raw, "covid_alpha"), _require(raw, "covid_eta"),
            _require(raw, "covid_epsilon"), t("covid_d", 1e4), t("covid_N", 1.0),
        ))
        cost = covid.cost()
    else:
        stray = [k for k in raw if k.startswith("covid_")]
        if stray:
            raise ScenarioError(f"{stray[0]} needs cost = covid", _line(raw, *stray))
        cost = _guard(raw, ("cost",) + weights, lambda: CostSpec(
            kind, c2=t("c2", 0.0), c3=t("c3", 0.0), y_max=t("y_max", 1.0), c1=t("c1", 1.0)
        ))

    grid = GridSettings(
        nx=t("grid_nx", 200), ny=t("grid_ny", 200),
        x_lo=t("grid_x_lo", hjb.DEFAULT_EPS), x_hi=t("grid_x_hi", 1.0),
        y_lo=t("grid_y_lo", hjb.DEFAULT_EPS), y_hi=t("grid_y_hi", 1.0),
        stride=t("policy_stride"),
    )
    sweep = SweepSettings(t("sweep_omega", 0.3), t("sweep_tol", 1e-6), t("sweep_max_iter", 500))
    refs = tuple(s.strip() for s in t("reference_controls", "").split(",") if s.strip())
    values = ()
    if "sweep_values" in raw:
        values = _guard(raw, ("sweep_values",), lambda: tuple(
            float(v) for v in t("sweep_values").split(",") if v.strip()
        ))
    sp = t("sweep_param")
    if sp is not None and sp not in _FLOAT_KEYS | _INT_KEYS:
        raise ScenarioError(f"sweep_param must be a numeric key, got {sp!r}", _line(raw, "sweep_param"))
    out = t("output")

    all_keys = tuple(raw)
    return _guard(raw, all_keys, lambda: ScenarioConfig(
        name=t("name", "scenario"),
        params=params,
        s0=s0,
        T=_require(raw, "T"),
        cost=cost,
        sigma_min=t("sigma_min", 0.0),
        solver=t("solver", "all"),
        grid=grid,
        output=Path(out) if out else None,
        dt=t("dt", 0.01),
        sweep=sweep,
        covid=covid,
        reference_controls=refs,
        sweep_param=sp,
        sweep_values=values,
        source=dict(raw),
    ))


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.cfg"))


def resolve(path_or_name) -> Path:
    p = Path(path_or_name)
    if p.is_file():
        return p
    preset = PRESET_DIR / f"{path_or_name}.cfg"
    if preset.is_file():
        return preset
    raise FileNotFoundError(f"no scenario file or preset named {str(path_or_name)!r}")


def parse_scenario(text: str) -> ScenarioConfig:
    return _build(parse_text(text))


def load_scenario(path) -> ScenarioConfig:
    """Read and validate a scenario file, or a preset given by name.

    Raises
    ------
    ScenarioError
        On syntax errors, unknown keys or violated invariants; the message
        carries the offending line number where one applies.
    FileNotFoundError
        If neither a file nor a preset of that name exists.
    """
    p = resolve(path)
    return parse_scenario(p.read_text(encoding="utf-8"))


# ---------------------------------------------------------------- running


@dataclass
class SolverResult:
    """Outcome of one solver. Metrics are NaN unless ``status == 'ok'``."""

    name: str
    status: str = "ok"
    message: str = ""
    trajectory: Trajectory | None = None
    schedule: ControlSchedule | None = None
    x_inf: float = math.nan
    J: float = math.nan
    running_cost: float = math.nan
    peak_y: float = math.nan
    peak_time: float = math.nan
    max_excess: float = math.nan
    control_peak_time: float = math.nan
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def z_inf(self) -> float:
        return 1.0 - self.x_inf

    def metrics(self) -> dict:
        return {
            "status": self.status,
            "x_inf": self.x_inf,
            "z_inf": self.z_inf,
            "J": self.J,
            "running_cost": self.running_cost,
            "peak_y": self.peak_y,
            "peak_time": self.peak_time,
            "max_excess": self.max_excess,
            "control_peak_time": self.control_peak_time,
            "wall_time": self.wall_time,
            **self.extra,
        }


@dataclass
class RunReport:
    config: ScenarioConfig
    results: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __getitem__(self, name) -> SolverResult:
        return self.results[name]

    @property
    def failed(self) -> list:
        return [r for r in self.results.values() if r.status not in ("ok", "skipped")]

    def key_values(self) -> dict:
        out = {"scenario": self.config.name, "flags": ";".join(self.flags) or "none"}
        for name, r in self.results.items():
            for k, v in r.metrics().items():
                out[f"{name}.{k}"] = v
        return out

    def to_text(self) -> str:
        c = self.config
        lines = [
            f"scenario {c.name}: sigma0={c.params.sigma0:g} gamma={c.params.gamma:g} "
            f"s0=({c.s0.x:g}, {c.s0.y:g}) T={c.T:g} cost={c.cost.kind} "
            f"c1={c.cost.c1:g} c2={c.cost.c2:g} c3={c.cost.c3:g} y_max={c.cost.y_max:g}",
            "",
            f"{'solver':<22}{'status':<15}{'x_inf':>11}{'z_inf':>11}{'J':>14}"
            f"{'peak y':>10}{'at t':>8}{'excess':>10}{'wall s':>9}",
        ]
        for name, r in self.results.items():
            if r.ok:
                lines.append(
                    f"{name:<22}{r.status:<15}{r.x_inf:>11.6f}{r.z_inf:>11.6f}{r.J:>14.6g}"
                    f"{r.peak_y:>10.5f}{r.peak_time:>8.2f}{r.max_excess:>10.3g}{r.wall_time:>9.2f}"
                )
            else:
                lines.append(f"{name:<22}{r.status:<15}{r.message}")
        lines.append("")
        lines.append("flags: " + ("; ".join(self.flags) if self.flags else "none"))
        lines.append("")
        lines.append("[key=value]")
        for k, v in self.key_values().items():
            lines.append(f"{k} = {_fmt(v)}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_key_values(text: str) -> dict:
    """Read back the machine-readable block of :meth:`RunReport.to_text`."""
    _, _, block = text.partition("[key=value]\n")
    out = {}
    for line in block.splitlines():
        if " = " not in line:
            continue
        k, v = line.split(" = ", 1)
        try:
            out[k] = float(v)
        except ValueError:
            out[k] = v
    return out


def _metrics(res: SolverResult, traj: Trajectory, cfg: ScenarioConfig, schedule) -> SolverResult:
    res.trajectory, res.schedule = traj, schedule
    res.x_inf = float(x_infinity(traj.x[-1], traj.y[-1], cfg.params.sigma0))
    res.running_cost = traj.running_cost
    res.J = -cfg.cost.c1 * res.x_inf + res.running_cost
    k = int(np.argmax(traj.y))
    res.peak_y, res.peak_time = float(traj.y[k]), float(traj.times[k])
    res.max_excess = float(max(np.max(traj.y) - cfg.cost.y_max, 0.0))
    res.control_peak_time = float(traj.times[int(np.argmin(traj.sigma))])
    return res


def _cost_fn(cfg):
    s0, cost = cfg.params.sigma0, cfg.cost
    return lambda x, y, s: _running_cost(x, y, s, s0, cost)


def _open_loop(cfg, control, t_end=None):
    return integrate(cfg.s0, control, cfg.params, t_end or cfg.T, cfg.dt, running_cost=_cost_fn(cfg))


def run_baseline(cfg: ScenarioConfig) -> SolverResult:
    t0 = time.perf_counter()
    sched = PiecewiseConstantSchedule.constant(cfg.params.sigma0, cfg.params.sigma0, cfg.T)
    res = _metrics(SolverResult("baseline"), _open_loop(cfg, sched), cfg, sched)
    res.wall_time = time.perf_counter() - t0
    return res


def run_analytic(cfg: ScenarioConfig) -> SolverResult:
    t0 = time.perf_counter()
    p = cfg.params
    if cfg.sigma_min > 0:
        sol = analytic.optimal_bang_bang_floored(cfg.s0, p, cfg.T, cfg.sigma_min, cfg.dt)
    else:
        sol = analytic.optimal_bang_bang(cfg.s0, p, cfg.T, cfg.dt)
    sched = sol.schedule()
    res = _metrics(SolverResult("analytic"), _open_loop(cfg, sched), cfg, sched)
    res.extra["t_star"] = sol.t_star
    res.wall_time = time.perf_counter() - t0
    return res


def run_sweep(cfg: ScenarioConfig) -> SolverResult:
    t0 = time.perf_counter()
    sw = cfg.sweep
    r = pmp.forward_backward_sweep(
        cfg.s0, cfg.params, cfg.cost, cfg.T, cfg.dt,
        omega=sw.omega, max_iter=sw.max_iter, tol=sw.tol, sigma_min=cfg.sigma_min,
    )
    res = _metrics(SolverResult("sweep"), r.trajectory, cfg, r.schedule)
    res.extra["iterations"] = r.iterations
    res.wall_time = time.perf_counter() - t0
    return res


def run_hjb(cfg: ScenarioConfig, dump_dir: Path | None = None) -> SolverResult:
    t0 = time.perf_counter()
    stats = hjb.SolveStats()
    v, policy = hjb.solve(
        cfg.grid.build(), cfg.params, cfg.cost, cfg.T,
        stride=cfg.grid.stride, sigma_min=cfg.sigma_min, stats=stats,
    )
    r = hjb.synthesize_trajectory(cfg.s0, policy, cfg.params, cfg.dt, cfg.cost)
    res = _metrics(SolverResult("hjb"), r.trajectory, cfg, r.schedule)
    res.extra.update(
        value_at_s0=v.at(cfg.s0.x, cfg.s0.y), dt_pde=stats.dt, n_steps=stats.n_steps,
        policy_stride=stats.stride,
    )
    if dump_dir is not None:
        hjb.write_grid_dump(dump_dir / f"{cfg.name}_hjb_value.grid", v)
    res.wall_time = time.perf_counter() - t0
    return res


def run_reference(cfg: ScenarioConfig, which: str) -> SolverResult:
    """Infinite-horizon controls that land exactly on herd immunity.

    Integrated far past ``T`` (ten times the horizon) so that the epidemic
    has died out; ``x_inf`` is still evaluated from the final state.
    """
    t0 = time.perf_counter()
    p = cfg.params
    if which == "constant_eradication":
        s = analytic.constant_eradication_sigma(cfg.s0, p.sigma0)
        control = lambda t, x, y: s  # noqa: E731
        extra = {"sigma_star": s, "sigma_star_over_sigma0": s / p.sigma0}
    else:
        control = analytic.infinite_time_bang_bang(cfg.s0, p)
        extra = {"threshold": control.threshold}
    traj = _open_loop(cfg, control, 10.0 * cfg.T)
    res = _metrics(SolverResult(which), traj, cfg, None)
    res.extra.update(extra)
    res.wall_time = time.perf_counter() - t0
    return res


def planned_solvers(cfg: ScenarioConfig) -> list[str]:
    if cfg.solver != "all":
        return [cfg.solver]
    names = []
    if cfg.cost.kind == "zero":
        names.append("analytic")
    # a bang-bang cost gives the sweep no smooth fixed point to converge to
    if not cfg.cost.is_bang_bang:
        names.append("sweep")
    names.append("hjb")
    return names


def run(cfg: ScenarioConfig, solvers=None, write: bool = True) -> RunReport:
    """Run the requested solvers, the no-control baseline and any reference controls.

    Solver failures are recorded in the per-solver status and do not stop the
    remaining solvers. With an ``output`` directory and ``write=True``, every
    successful trajectory is written as CSV, along with the text report and
    a dump of the HJB value function at ``t = 0``.
    """
    out = Path(cfg.output) if (write and cfg.output) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = RunReport(cfg)
    runners = {
        "analytic": run_analytic,
        "sweep": run_sweep,
        "hjb": lambda c: run_hjb(c, out),
    }
    for name in solvers or planned_solvers(cfg):
        if name == "analytic" and cfg.cost.kind != "zero":
            report.results[name] = SolverResult(name, "skipped", "needs cost = zero")
            continue
        try:
            report.results[name] = runners[name](cfg)
        except SOLVER_FAILURES as e:
            status = "not_converged" if isinstance(e, SweepConvergenceError) else "failed"
            report.results[name] = SolverResult(name, status, f"{type(e).__name__}: {e}")
    for ref in cfg.reference_controls:
        report.results[ref] = run_reference(cfg, ref)
    report.results["baseline"] = run_baseline(cfg)
    report.flags.extend(_disagreements(report))

    if out is not None:
        for name, r in report.results.items():
            if r.ok:
                emit_csv(r.trajectory, r.schedule, out / f"{cfg.name}_{name}.csv", cfg.params.sigma0)
        _write_text(out / f"{cfg.name}_report.txt", report.to_text())
    return report


def _disagreements(report: RunReport) -> list[str]:
    res = report.results
    flags = []
    a, s, h = res.get("analytic"), res.get("sweep"), res.get("hjb")
    if a and h and a.ok and h.ok and abs(a.x_inf - h.x_inf) > XINF_AGREEMENT:
        flags.append(f"analytic/hjb x_inf differ by {abs(a.x_inf - h.x_inf):.3g} > {XINF_AGREEMENT:g}")
    if s and h and s.ok and h.ok:
        tol = J_AGREEMENT * report.config.cost.c1
        if abs(s.J - h.J) > tol:
            flags.append(f"sweep/hjb J differ by {abs(s.J - h.J):.3g} > {tol:g}")
    return flags


def sweep_param(cfg: ScenarioConfig, key: str | None = None, values=None, write: bool = True):
    """Rerun the scenario for each value of one numeric key.

    Returns
    -------
    list of (value, RunReport)
        One entry per value. With an output directory a summary table
        ``<name>_sweep_<key>.csv`` is written as well.
    """
    key = key or cfg.sweep_param
    values = tuple(values if values is not None else cfg.sweep_values)
    if key is None or not values:
        raise ScenarioError("sweep-param needs a parameter name and at least one value")
    if key not in _FLOAT_KEYS | _INT_KEYS:
        raise ScenarioError(f"cannot sweep non-numeric key {key!r}")
    rows, out = [], []
    for v in values:
        sub = cfg.with_value(key, int(v) if key in _INT_KEYS else v)
        sub = replace(sub, name=f"{cfg.name}_{key}{v:g}", output=cfg.output)
        rep = run(sub, write=write)
        out.append((v, rep))
        for name, r in rep.results.items():
            rows.append([v, name, r.status, r.x_inf, r.z_inf, r.J, r.running_cost, r.peak_y,
                         r.peak_time, r.max_excess, r.wall_time])
    if write and cfg.output:
        path = Path(cfg.output) / f"{cfg.name}_sweep_{key}.csv"
        header = [key, "solver", "status", "x_inf", "z_inf", "J", "running_cost", "peak_y",
                  "peak_time", "max_excess", "wall_time"]
        _write_rows(path, header, rows)
    return out


def format_sweep_table(key: str, results) -> str:
    lines = [f"{key:>10} {'solver':<22}{'status':<15}{'x_inf':>11}{'J':>14}{'peak y':>10}"]
    for v, rep in results:
        for name, r in rep.results.items():
            lines.append(f"{v:>10g} {name:<22}{r.status:<15}{r.x_inf:>11.6f}{r.J:>14.6g}{r.peak_y:>10.5f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- files


def _io_error(path, e: OSError) -> OSError:
    return OSError(e.errno, f"{e.strerror or e}", str(path))


def _write_text(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise _io_error(path, e) from e


def _write_rows(path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([f"{v:.12g}" if isinstance(v, float) else v for v in row])
    except OSError as e:
        raise _io_error(path, e) from e


def emit_csv(traj: Trajectory, schedule, path, sigma0: float | None = None) -> Path:
    """Write one row per trajectory sample with 12 significant digits.

    ``sigma`` is read from ``schedule`` when it is a :class:`ControlSchedule`
    and from the trajectory samples otherwise. ``x_inf_current`` is the
    limit the epidemic would reach if control stopped at that sample.
    """
    if sigma0 is None:
        if schedule is None:
            raise ValueError("sigma0 is required when no schedule is given")
        sigma0 = schedule.sigma0
    if isinstance(schedule, ControlSchedule):
        sig = np.array([schedule(float(t)) for t in traj.times])
    else:
        sig = np.asarray(traj.sigma)
    if sig.size != len(traj):
        raise ValueError("schedule and trajectory lengths differ")
    xinf = x_infinity(np.asarray(traj.x), np.asarray(traj.y), sigma0)
    cols = np.column_stack([traj.times, traj.x, traj.y, traj.z, sig, sig / sigma0, xinf])
    _write_rows(path, CSV_COLUMNS, cols.tolist())
    return Path(path)


def read_csv(path) -> dict:
    """Load a trajectory CSV written by :func:`emit_csv` into column arrays."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise _io_error(path, e) from e
    header = tuple(rows[0])
    if header != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    data = np.array(rows[1:], dtype=float).reshape(-1, len(header))
    return {k: data[:, i] for i, k in enumerate(header)}
