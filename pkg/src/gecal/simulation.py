"""Monte Carlo study: one fixed population, repeated Poisson samples.

Replication ``r`` draws its sample from stream ``(1, r)`` of the study seed
(see :mod:`gecal.design`), so results do not depend on how replications are
spread across worker processes.  Results are folded in replication order.
"""

from __future__ import annotations

import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .design import Model, Population, draw_poisson_sample, generate_population, stream
from .entropy import make_entropy
from .errors import EmptySample, GecalError, InputError
from .estimators import Controls, estimate

DEFAULT_ENTROPIES = ("el", "et", "ce", "hd", "ph")
DEFAULT_METHODS = ("hajek", "ds", "ds-debias", "gec0", "gec1", "gec2")
STUDY_METHODS = ("hajek", "ht", "greg", "ds", "ds-debias", "gec0", "gec1", "gec2", "gec-kernel")
ENTROPY_FREE = ("hajek", "ht", "greg")
KNOWN_ALPHA = ("ds-debias", "gec0")
MAX_REDRAWS = 100
FAILURE_FLAG = 0.01
CSV_COLUMNS = ("model", "entropy", "method", "sb_pct", "rmse", "r_rmse", "cr_pct", "mean_se", "failures")


@dataclass
class StudyConfig:
    """Settings of one study.

    ``entropies`` holds CLI names, optionally with a parameter as in
    ``"ph:M=30"`` or ``"renyi:r=0.5"``; a bare ``ph`` takes M as the 80%
    quantile of the population design weights.
    """

    model: Model = Model.Model1
    N: int = 10000
    reps: int = 1000
    seed: int = 20240601
    entropies: tuple = DEFAULT_ENTROPIES
    methods: tuple = DEFAULT_METHODS
    alpha_known: bool = True
    level: float = 0.95

    def __post_init__(self):
        self.model = Model.parse(self.model)
        problems = []
        if int(self.reps) < 1:
            problems.append("reps must be at least 1")
        if int(self.N) < 2:
            problems.append("n_pop must be at least 2")
        if not self.methods:
            problems.append("methods must be nonempty")
        bad = [m for m in self.methods if m not in STUDY_METHODS]
        if bad:
            problems.append(f"unknown methods {bad}")
        if not 0 < self.level < 1:
            problems.append("level must lie in (0, 1)")
        if problems:
            raise InputError("; ".join(problems))
        self.entropies = tuple(self.entropies)
        self.methods = tuple(self.methods)

    def roster(self):
        methods = self.methods
        if not self.alpha_known:
            methods = tuple(m for m in methods if m not in KNOWN_ALPHA)
        return methods


@dataclass
class MetricRow:
    model: str
    entropy: str
    method: str
    sb_pct: float
    rmse: float
    r_rmse: float
    cr_pct: float
    mean_se: float
    failures: int


@dataclass
class MetricsTable:
    rows: list
    reps: int
    redraws: int = 0
    truth: float = float("nan")
    flagged: list = field(default_factory=list)

    def get(self, method, entropy="-") -> MetricRow:
        for r in self.rows:
            if r.method == method and r.entropy == entropy:
                return r
        raise KeyError((method, entropy))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.rows:
            buf.write(f"{r.model},{r.entropy},{r.method},{r.sb_pct:.6f},{r.rmse:.10g},{r.r_rmse:.6f},"
                      f"{r.cr_pct:.4f},{r.mean_se:.10g},{r.failures}\n")
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{'method':<11}{'entropy':<12}{'SB%':>8}{'R-RMSE':>9}{'CR%':>8}{'fail':>6}"]
        for r in self.rows:
            lines.append(f"{r.method:<11}{r.entropy:<12}{r.sb_pct:>8.2f}{r.r_rmse:>9.1f}"
                         f"{r.cr_pct:>8.1f}{r.failures:>6d}")
        if self.redraws:
            lines.append(f"empty samples redrawn: {self.redraws}")
        for key in self.flagged:
            lines.append(f"warning: more than 1% failed replications for {key}")
        return "\n".join(lines)


def metrics(estimates, variances, truth: float, baseline_rmse: float, level: float = 0.95):
    """SB (%), RMSE, R-RMSE (baseline = 100), CR (%) and mean SE.

    SB is reported as 0 when the RMSE is 0.
    """
    est = np.asarray(estimates, dtype=float)
    var = np.asarray(variances, dtype=float)
    if est.size == 0:
        nan = float("nan")
        return dict(sb_pct=nan, rmse=nan, r_rmse=nan, cr_pct=nan, mean_se=nan)
    err = est - truth
    # rounding-level errors count as exact
    err[np.abs(err) <= 1e-12 * (1.0 + abs(truth))] = 0.0
    rmse = math.sqrt(float(np.mean(err * err)))
    sb = 100.0 * float(np.mean(err)) / rmse if rmse > 0 else 0.0
    half = norm.ppf(1.0 - (1.0 - level) / 2.0) * np.sqrt(var)
    cover = np.abs(err) <= half
    r_rmse = 100.0 * rmse / baseline_rmse if baseline_rmse > 0 else (100.0 if rmse == 0 else math.inf)
    return dict(sb_pct=sb, rmse=rmse, r_rmse=r_rmse, cr_pct=100.0 * float(np.mean(cover)),
                mean_se=float(np.mean(np.sqrt(var))))


# --------------------------------------------------------------------------
# study setup shared with worker processes
# --------------------------------------------------------------------------

def resolve_entropy(token: str, pop: Population):
    """Entropy from ``name[:key=value]``; PH defaults M to the 80% quantile of d."""
    name, _, rest = token.partition(":")
    params = {}
    for item in filter(None, rest.split(";")):
        k, _, v = item.partition("=")
        params[k.strip()] = float(v)
    if name.strip().lower() == "ph" and "M" not in params:
        params["M"] = float(np.quantile(pop.d, 0.8))
    return make_entropy(name, params)


class _Study:
    def __init__(self, config: StudyConfig, population: Population | None = None):
        self.config = config
        self.pop = population if population is not None else generate_population(
            config.model, config.N, config.seed)
        pop = self.pop
        self.truth = pop.mean_y()
        self.X = np.column_stack([np.ones(pop.N), pop.x])
        self.x_totals = self.X.sum(axis=0)
        self.methods = config.roster()
        # label -> (entropy, controls)
        self.entropies = {}
        for tok in config.entropies:
            ent = resolve_entropy(tok, pop)
            ctrl = Controls(pop.N, self.x_totals, float(np.sum(ent.g(pop.d))), pop.x)
            self.entropies[ent.label()] = (ent, ctrl)
        self.plain = Controls(pop.N, self.x_totals)
        self.keys = []
        for m in self.methods:
            if m in ENTROPY_FREE:
                self.keys.append((m, "-"))
            else:
                self.keys.extend((m, label) for label in self.entropies)
        if "hajek" not in self.methods:
            self.keys.append(("hajek", "-"))

    def draw(self, rep):
        for k in range(MAX_REDRAWS + 1):
            rng = stream(self.config.seed, 1, rep) if k == 0 else stream(self.config.seed, 1, rep, k)
            try:
                return draw_poisson_sample(self.pop, rng=rng), k
            except EmptySample:
                continue
        raise EmptySample(f"replication {rep}: {MAX_REDRAWS} empty redraws")

    def replicate(self, rep):
        """``(redraws, {key: (theta, variance) or None})`` for one replication."""
        sample, redraws = self.draw(rep)
        xs = self.X[sample.indices]
        out = {}
        for method, label in self.keys:
            ent, ctrl = self.entropies[label] if label != "-" else (None, self.plain)
            try:
                r = estimate(method, sample, xs, ctrl, ent, level=self.config.level, as_mean=True)
                ok = math.isfinite(r.theta_hat) and math.isfinite(r.variance)
                out[(method, label)] = (r.theta_hat, r.variance) if ok else None
            except (GecalError, np.linalg.LinAlgError, FloatingPointError):
                out[(method, label)] = None
        return redraws, out


_WORKER = None


def _init_worker(config):
    global _WORKER
    _WORKER = _Study(config)


def _run_chunk(reps):
    return [(_WORKER.replicate(r)) for r in reps]


def thread_cap() -> int:
    """Worker count: ``GECAL_THREADS`` if set, else the CPU count."""
    raw = os.environ.get("GECAL_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise InputError(f"GECAL_THREADS must be an integer, got {raw!r}") from None
    return max(1, os.cpu_count() or 1)


def run_study(config: StudyConfig, workers: int | None = None, population: Population | None = None,
              progress=None) -> MetricsTable:
    """Run the study and aggregate per (method, entropy).

    Failed replications (solver errors) are excluded from that key's metrics
    and counted in ``failures``.  ``population`` overrides the generated one
    (used for degenerate test populations).
    """
    study = _Study(config, population)
    reps = int(config.reps)
    workers = thread_cap() if workers is None else max(1, int(workers))
    workers = min(workers, reps)
    if workers == 1 or population is not None:
        results = []
        for r in range(reps):
            results.append(study.replicate(r))
            if progress:
                progress(r + 1, reps)
    else:
        chunks = [list(range(i, reps, workers)) for i in range(workers)]
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(config,)) as ex:
            parts = list(ex.map(_run_chunk, chunks))
        results = [None] * reps
        for chunk, part in zip(chunks, parts):
            for r, res in zip(chunk, part):
                results[r] = res
    return _aggregate(study, results)


def _aggregate(study: _Study, results) -> MetricsTable:
    cfg = study.config
    redraws = sum(r[0] for r in results)
    series = {}
    for key in study.keys:
        vals = [res[1].get(key) for res in results]
        ok = [v for v in vals if v is not None]
        series[key] = (np.array([v[0] for v in ok]), np.array([v[1] for v in ok]), len(vals) - len(ok))
    hj = series[("hajek", "-")]
    base = math.sqrt(float(np.mean((hj[0] - study.truth) ** 2))) if hj[0].size else float("nan")
    rows, flagged = [], []
    for key in study.keys:
        if key == ("hajek", "-") and "hajek" not in study.methods:
            continue
        est, var, fails = series[key]
        m = metrics(est, var, study.truth, base, cfg.level)
        if key == ("hajek", "-"):
            m["r_rmse"] = 100.0
        rows.append(MetricRow(cfg.model.value, key[1], key[0], failures=fails, **m))
        if fails > FAILURE_FLAG * len(results):
            flagged.append(f"{key[0]}/{key[1]}")
    return MetricsTable(rows, len(results), redraws, study.truth, flagged)
