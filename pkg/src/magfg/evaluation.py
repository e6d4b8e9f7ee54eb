"""Error metrics and Monte Carlo studies.

Metrics compare an estimate with simulation truth:

* ``rmse_field``: RMS of ``|e_i| - |e_hat_i|`` over steps ``1..k``,
* ``eps_hi``: Euclidean hard-iron error, nT,
* ``eps_scale``: RMS error of ``k_x, k_y, k_z``,
* ``eps_ortho``: RMS error of ``alpha, beta, gamma``, rad.

A study runs every requested estimator on the same simulated measurements
for each (field q, hard-iron magnitude, run) cell. Run ``r`` always uses
the seed ``SeedSequence([base_seed, r])``, so cells differing only in
magnitude or q share the platform, profile and noise draws.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .baselines import tolles_lawson_calibrate, twostep_calibrate
from .errors import DimensionMismatchError, MagfgError
from .graph import GraphConfig, StateVector
from .measurements import MeasurementSet, NoiseSpec
from .simulator import ProfileSpec, TruthRecord, TruthSpec, simulate, synthesize_measurements, make_truth
from .solver import SolverConfig, calibrate

ESTIMATORS = ("factor-graph", "factor-graph-fixed-field", "twostep", "tolles-lawson")
METHOD_ALIASES = {
    "fg": "factor-graph",
    "fg-fixed": "factor-graph-fixed-field",
    "twostep": "twostep",
    "tl": "tolles-lawson",
}
METRICS = ("eps_hi", "rmse_field", "eps_scale", "eps_ortho")
DEFAULT_MAGNITUDES = (0.0, 500.0, 1000.0, 2500.0, 5000.0)
DELTA_HI_REFERENCE = np.array([-260.97, -122.07, -1742.65])
DEFAULT_D_WEIGHT = 10.0


@dataclass
class MetricsReport:
    rmse_field: float
    eps_hi: float
    eps_scale: float
    eps_ortho: float
    hi_error: np.ndarray = field(default_factory=lambda: np.full(3, np.nan))

    def as_row(self):
        return {
            "eps_hi": self.eps_hi,
            "hi_err_x": float(self.hi_error[0]),
            "hi_err_y": float(self.hi_error[1]),
            "hi_err_z": float(self.hi_error[2]),
            "rmse_field": self.rmse_field,
            "eps_scale": self.eps_scale,
            "eps_ortho": self.eps_ortho,
        }


def field_rmse(true_fields, est_fields):
    """RMS difference of field magnitudes over steps ``1..k``.

    Rotating both sequences by the same DCM leaves the value unchanged.
    """
    a = np.linalg.norm(np.asarray(true_fields, float), axis=-1)
    b = np.linalg.norm(np.asarray(est_fields, float), axis=-1)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"field sequences differ in length: {a.size} vs {b.size}")
    d = (a - b)[1:] if a.size > 1 else a - b
    return float(np.sqrt(np.mean(d * d)))


def drift_rms(true_fields):
    """RMS deviation of ``|e_i|`` from its mean over steps ``1..k``.

    This is the smallest field-magnitude RMSE any constant-field estimate can
    reach, so it is what a fixed-field assumption costs at best.
    """
    m = np.linalg.norm(np.asarray(true_fields, float), axis=-1)
    m = m[1:] if m.size > 1 else m
    return float(np.sqrt(np.mean((m - m.mean()) ** 2)))


def compute_metrics(truth: TruthRecord, estimate: StateVector) -> MetricsReport:
    """Hard-iron, scale, orthogonality and field errors of a full estimate."""
    if estimate.n != truth.n:
        raise DimensionMismatchError(f"estimate has {estimate.n} steps, truth has {truth.n}")
    p = truth.params
    err = estimate.h_hi - p.h_hi
    dk = estimate.t_vec[:3] - p.t_vec[:3]
    da = estimate.t_vec[3:] - p.t_vec[3:]
    return MetricsReport(
        rmse_field=field_rmse(truth.fields, estimate.fields),
        eps_hi=float(np.linalg.norm(err)),
        eps_scale=float(np.sqrt(np.mean(dk * dk))),
        eps_ortho=float(np.sqrt(np.mean(da * da))),
        hi_error=err,
    )


def hard_iron_metrics(true_h, est_h) -> MetricsReport:
    """Metrics for estimators that only produce a hard-iron vector."""
    err = np.asarray(est_h, float) - np.asarray(true_h, float)
    nan = float("nan")
    return MetricsReport(nan, float(np.linalg.norm(err)), nan, nan, err)


@dataclass
class HardIronEstimate:
    """Hard-iron estimate from any of the four methods."""

    method: str
    h_hi: np.ndarray
    iterations: int = 0
    converged: bool = True
    state: StateVector | None = None
    detail: object = None


def estimate_hard_iron(meas: MeasurementSet, method="factor-graph", e_magnitude=None,
                       graph_config: GraphConfig | None = None,
                       solver_config: SolverConfig | None = None) -> HardIronEstimate:
    """Run one calibrator and return its hard-iron estimate.

    ``e_magnitude`` is the reference field magnitude TWOSTEP needs; when it
    is omitted the median of the total-field channel is used.
    """
    method = METHOD_ALIASES.get(method, method)
    if method in ("factor-graph", "factor-graph-fixed-field"):
        cfg = graph_config or GraphConfig()
        if method == "factor-graph-fixed-field":
            cfg = replace(cfg, fixed_field=True)
        rep = calibrate(meas, cfg, solver_config)
        return HardIronEstimate(method, rep.state.h_hi.copy(), rep.iterations, rep.converged,
                                rep.state, rep)
    if method == "twostep":
        if e_magnitude is None:
            e_magnitude = float(np.median(meas.mag_scalar))
        res = twostep_calibrate(meas, e_magnitude)
        return HardIronEstimate(method, res.bias.copy(), res.iterations, res.converged, None, res)
    if method == "tolles-lawson":
        res = tolles_lawson_calibrate(meas)
        return HardIronEstimate(method, res.permanent.copy(), 0, True, None, res)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class StudySpec:
    """Monte Carlo study definition.

    ``field_qs`` lists the external-field random-walk intensities
    (nT/sqrt(hr)); 0 means a constant field. ``d_weight`` is the q used to
    weight the field-change factors; ``None`` matches the simulated q when
    it is positive and falls back to 10 nT/sqrt(hr) otherwise.
    """

    runs: int = 20
    magnitudes: tuple = (5000.0,)
    field_qs: tuple = (0.0,)
    estimators: tuple = ("factor-graph",)
    base_seed: int = 0
    workers: int = 1
    zero_noise: bool = False
    d_weight: float | None = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    profile: ProfileSpec = field(default_factory=ProfileSpec)
    truth: TruthSpec = field(default_factory=TruthSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("run count must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not self.magnitudes or any(m < 0 for m in self.magnitudes):
            raise ValueError("hard-iron magnitudes must be a nonempty list of values >= 0")
        if not self.field_qs or any(q < 0 for q in self.field_qs):
            raise ValueError("field q values must be a nonempty list of values >= 0")
        names = [METHOD_ALIASES.get(e, e) for e in self.estimators]
        bad = [e for e in names if e not in ESTIMATORS]
        if bad or not names:
            raise ValueError(f"unknown estimators: {bad}")
        object.__setattr__(self, "estimators", tuple(names))
        object.__setattr__(self, "magnitudes", tuple(float(m) for m in self.magnitudes))
        object.__setattr__(self, "field_qs", tuple(float(q) for q in self.field_qs))

    def graph_config(self, q):
        w = self.d_weight
        if w is None:
            w = q if q > 0 else DEFAULT_D_WEIGHT
        return GraphConfig(field_q=w)


def run_seed(base_seed, run):
    return np.random.SeedSequence([int(base_seed), int(run)])


def simulate_cell(spec: StudySpec, q, magnitude, run):
    """Truth and measurements shared by all estimators in one study cell."""
    noise = NoiseSpec.zero() if spec.zero_noise else spec.noise
    noise = replace(noise, field_q=q)
    truth_spec = replace(spec.truth, soft_iron_sigma=0.0) if spec.zero_noise else spec.truth
    return simulate(spec.profile, truth_spec, noise, run_seed(spec.base_seed, run), magnitude,
                    weighting=replace(spec.noise, field_q=q))


def _run_cell(args):
    spec, q, magnitude, run = args
    truth, meas = simulate_cell(spec, q, magnitude, run)
    drift = drift_rms(truth.fields)
    rows = []
    for est in spec.estimators:
        row = {
            "field_q": q,
            "magnitude": magnitude,
            "run": run,
            "estimator": est,
            "failed": False,
            "error": "",
            "iterations": 0,
            "converged": True,
            "drift_rms": drift,
        }
        try:
            res = estimate_hard_iron(
                meas, est, e_magnitude=np.linalg.norm(truth.fields, axis=1),
                graph_config=spec.graph_config(q), solver_config=spec.solver,
            )
            if res.state is not None:
                m = compute_metrics(truth, res.state)
            else:
                m = hard_iron_metrics(truth.params.h_hi, res.h_hi)
            row.update(m.as_row())
            row["iterations"] = res.iterations
            row["converged"] = bool(res.converged)
        except (MagfgError, np.linalg.LinAlgError) as exc:
            row.update(hard_iron_metrics(np.zeros(3), np.full(3, np.nan)).as_row())
            row["failed"] = True
            row["converged"] = False
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


ROW_FIELDS = ("field_q", "magnitude", "run", "estimator", "eps_hi", "hi_err_x", "hi_err_y",
              "hi_err_z", "rmse_field", "eps_scale", "eps_ortho", "drift_rms", "iterations",
              "converged", "failed", "error")
STAT_NAMES = ("mean", "median", "q1", "q3", "p90", "min", "max")


def summarize(values):
    """Box-plot statistics of the finite entries of ``values``."""
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    if v.size == 0:
        return {s: None for s in STAT_NAMES}
    q1, med, q3, p90 = np.percentile(v, [25, 50, 75, 90])
    return {
        "mean": float(v.mean()),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "p90": float(p90),
        "min": float(v.min()),
        "max": float(v.max()),
    }


@dataclass
class StudyResult:
    spec: StudySpec
    rows: list

    def cell(self, estimator, magnitude=None, field_q=None, metric="eps_hi", include_failed=False):
        """Metric values of one (estimator, magnitude, q) cell in run order."""
        est = METHOD_ALIASES.get(estimator, estimator)
        out = []
        for r in self.rows:
            if r["estimator"] != est:
                continue
            if magnitude is not None and r["magnitude"] != float(magnitude):
                continue
            if field_q is not None and r["field_q"] != float(field_q):
                continue
            if r["failed"] and not include_failed:
                continue
            out.append(r[metric])
        return np.asarray(out, dtype=float)

    def aggregates(self):
        """Per-cell statistics, sorted by (field q, magnitude, estimator)."""
        cells = {}
        for r in self.rows:
            cells.setdefault((r["field_q"], r["magnitude"], r["estimator"]), []).append(r)
        out = []
        order = {e: i for i, e in enumerate(ESTIMATORS)}
        for key in sorted(cells, key=lambda k: (k[0], k[1], order[k[2]])):
            rows = cells[key]
            ok = [r for r in rows if not r["failed"]]
            entry = {
                "field_q": key[0],
                "magnitude": key[1],
                "estimator": key[2],
                "runs": len(rows),
                "failures": len(rows) - len(ok),
            }
            for metric in METRICS + ("drift_rms",):
                entry[metric] = summarize([r[metric] for r in ok])
            out.append(entry)
        return out


def run_study(spec: StudySpec) -> StudyResult:
    """Simulate every cell, apply each estimator and collect metric rows.

    Estimator failures become rows with ``failed = True`` and the study
    continues. Rows are sorted so the result does not depend on scheduling.
    """
    tasks = [(spec, q, m, r) for q in spec.field_qs for m in spec.magnitudes
             for r in range(spec.runs)]
    if spec.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            chunks = list(pool.map(_run_cell, tasks))
    else:
        chunks = [_run_cell(t) for t in tasks]
    order = {e: i for i, e in enumerate(ESTIMATORS)}
    rows = [r for c in chunks for r in c]
    rows.sort(key=lambda r: (r["field_q"], r["magnitude"], r["run"], order[r["estimator"]]))
    return StudyResult(spec, rows)


@dataclass
class DeltaReport:
    """Hard-iron change between two calibrations and its error, if known."""

    before: np.ndarray
    after: np.ndarray
    delta: np.ndarray
    reference: np.ndarray | None = None
    method: str = "factor-graph"

    @property
    def epsilon(self):
        if self.reference is None:
            return None
        return self.delta - self.reference

    @property
    def epsilon_norm(self):
        e = self.epsilon
        return None if e is None else float(np.linalg.norm(e))

    def to_dict(self):
        d = {
            "method": self.method,
            "before": self.before.tolist(),
            "after": self.after.tolist(),
            "delta": self.delta.tolist(),
        }
        if self.reference is not None:
            d["reference"] = self.reference.tolist()
            d["epsilon"] = self.epsilon.tolist()
            d["epsilon-norm"] = self.epsilon_norm
        return d


def delta_hi_experiment(before: MeasurementSet, after: MeasurementSet, reference=None,
                        method="factor-graph", graph_config: GraphConfig | None = None,
                        solver_config: SolverConfig | None = None,
                        e_magnitude=None) -> DeltaReport:
    """Calibrate both sets and report ``h_hi(after) - h_hi(before)``.

    With a ``reference`` change, ``epsilon = delta - reference``.
    """
    b = estimate_hard_iron(before, method, e_magnitude, graph_config, solver_config)
    a = estimate_hard_iron(after, method, e_magnitude, graph_config, solver_config)
    ref = None if reference is None else np.asarray(reference, dtype=float).reshape(3)
    return DeltaReport(b.h_hi, a.h_hi, a.h_hi - b.h_hi, ref, b.method)


def simulate_delta_pair(delta=DELTA_HI_REFERENCE, seed=None, noise: NoiseSpec | None = None,
                        profile: ProfileSpec | None = None, truth_spec: TruthSpec | None = None,
                        base_magnitude=None):
    """Before/after data sets for one platform whose hard iron changes by ``delta``.

    Both collections share the platform calibration, soft iron and external
    field; each has its own profile jitter and sensor noise.

    Returns
    -------
    (truth_before, meas_before, truth_after, meas_after)
    """
    noise = noise if noise is not None else NoiseSpec()
    profile = profile or ProfileSpec()
    truth_spec = truth_spec or TruthSpec()
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_truth, s_before, s_after, s_jitter = ss.spawn(4)
    weighting = replace(NoiseSpec(), field_q=noise.field_q)

    tb = make_truth(profile, truth_spec, noise.field_q, s_truth, base_magnitude)
    ta_prof = make_truth(profile, truth_spec, noise.field_q, s_jitter, base_magnitude)
    params_after = replace(tb.params, h_hi=tb.params.h_hi + np.asarray(delta, float))
    n = min(tb.n, ta_prof.n)
    ta = TruthRecord(ta_prof.t[:n], ta_prof.rpy[:n], ta_prof.attitudes[:n], tb.fields[:n],
                     params_after, tb.soft_iron)
    mb = synthesize_measurements(tb, noise, s_before, weighting)
    ma = synthesize_measurements(ta, noise, s_after, weighting)
    return tb, mb, ta, ma


def spec_to_dict(spec: StudySpec):
    """Plain-data view of a study spec (for reports and hashing)."""
    d = asdict(spec)
    for k in ("magnitudes", "field_qs", "estimators"):
        d[k] = list(d[k])
    d["profile"]["headings"] = list(d["profile"]["headings"])
    return d
