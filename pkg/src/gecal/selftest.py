"""Quick property checks on the bundled example files (``gecal selftest``)."""

from __future__ import annotations

import os
import tempfile
from importlib import resources

import numpy as np

from . import io
from .calibration import CalibrationProblem, Mode, solve_ds, solve_gec
from .design import DesignInfo
from .entropy import make_entropy
from .estimators import poisson_variance, variance_estimate
from .simulation import StudyConfig, run_study

PARAMS = {"ph": {"M": 20.0}, "renyi": {"r": 0.5}}
KINDS = ("sq", "el", "et", "set", "ce", "ph", "hd", "inv", "renyi")


def data_path(name: str) -> str:
    return str(resources.files("gecal") / "data" / name)


def _entropy(kind):
    return make_entropy(kind, PARAMS.get(kind, {}))


def check_inverse():
    w = np.linspace(1.05, 40.0, 200)
    for k in KINDS:
        e = _entropy(k)
        err = np.max(np.abs(e.f(e.g(w)) - w) / w)
        assert err <= 1e-10, f"{k}: f(g(w)) off by {err:.2e}"


def check_conjugate_slope():
    w = np.linspace(1.2, 30.0, 50)
    for k in KINDS:
        e = _entropy(k)
        u = e.g(w)
        h = 1e-6 * (1.0 + np.abs(u))
        fd = (e.F(u + h) - e.F(u - h)) / (2 * h)
        err = np.max(np.abs(fd - e.f(u)) / np.abs(e.f(u)))
        assert err <= 1e-6, f"{k}: F' differs from f by {err:.2e}"


def check_constraints():
    s = io.read_sample(data_path("sample.csv"))
    t = io.read_totals(data_path("totals.csv"))
    x = np.column_stack([np.ones(s.n), s.x])
    xt = np.append(t.N, t.x_totals(s.x_names))
    for k in ("el", "et", "ce", "hd"):
        e = _entropy(k)
        tg = t.debias("tg", k)
        for res in (solve_gec(CalibrationProblem(x, s.d, xt, e, Mode.GecKnown, debias_total=tg)),
                    solve_ds(CalibrationProblem(x, s.d, xt, e, Mode.DsBenchmarkOnly)),
                    solve_ds(CalibrationProblem(x, s.d, xt, e, Mode.DsWithDebias, debias_total=tg))):
            with tempfile.TemporaryDirectory() as tmp:
                path = os.path.join(tmp, "w.csv")
                io.write_weights(path, s.ids, s.d, res.omega)
                _, _, om = io.read_weights(path)
            z = x if res.mode == Mode.DsBenchmarkOnly.value else np.column_stack([x, e.g(s.d)])
            tot = xt if z is x else np.append(xt, tg)
            err = np.max(np.abs(z.T @ om - tot) / (1.0 + np.abs(tot)))
            assert err <= 1e-8, f"{k}/{res.mode}: constraint residual {err:.2e}"


def check_variance_diagonal():
    s = io.read_sample(data_path("sample.csv"), need_y=True)
    e = s.y - s.y.mean()
    full = variance_estimate(DesignInfo(s.pi), e)
    diag = poisson_variance(s.pi, e)
    assert abs(full - diag) <= 1e-12 * diag, f"double sum {full!r} vs diagonal {diag!r}"


def check_determinism():
    cfg = StudyConfig(model="model1", N=500, reps=3, seed=5, entropies=("el",),
                      methods=("hajek", "ds", "gec0"))
    a = run_study(cfg, workers=1).to_csv()
    b = run_study(cfg, workers=1).to_csv()
    assert a == b, "repeated study output differs"


CHECKS = (
    ("entropy f inverts g", check_inverse),
    ("conjugate slope F' = f", check_conjugate_slope),
    ("calibration constraints after CSV round trip", check_constraints),
    ("Poisson variance equals its diagonal form", check_variance_diagonal),
    ("seeded study is reproducible", check_determinism),
)


def run_selftest(verbose: bool = True) -> bool:
    ok = True
    for name, fn in CHECKS:
        try:
            fn()
            line = f"PASS  {name}"
        except Exception as exc:  # report every failure, keep going
            ok = False
            line = f"FAIL  {name}: {exc}"
        if verbose:
            print(line)
    return ok
