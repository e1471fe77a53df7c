"""CSV and config-file plumbing for the command-line front-end.

All files are UTF-8 CSV with a header row and '.' as the decimal separator.
Parse errors name the file and the 1-based line number (the header is line 1).
Floats are written with 17 significant digits so that a write/read round trip
is exact.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, InputError

FLOAT_FMT = "%.17g"
_XCOL = re.compile(r"^x(\d+)$")


def _fmt(v: float) -> str:
    return FLOAT_FMT % v


def _float(text: str, where: str) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise InputError(f"{where}: {text!r} is not a number") from None
    if not math.isfinite(v):
        raise InputError(f"{where}: value must be finite, got {text!r}")
    return v


def _open_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    except UnicodeDecodeError:
        raise InputError(f"{path}: not valid UTF-8") from None
    # drop blank lines but keep line numbers
    return [(i + 1, [c.strip() for c in r]) for i, r in enumerate(rows) if any(c.strip() for c in r)]


def _sort_key(ids):
    """Numeric order when every id is an integer, else string order."""
    try:
        keys = [int(i) for i in ids]
    except ValueError:
        keys = list(ids)
    return sorted(range(len(ids)), key=lambda k: keys[k])


# --------------------------------------------------------------------------
# sample file
# --------------------------------------------------------------------------

@dataclass
class SampleFile:
    """Rows of a sample CSV, sorted by id.

    Columns ``id`` and ``pi`` are required, ``y`` is required for estimation,
    ``x1..xp`` are the benchmark covariates and ``c`` holds optional unit costs.
    """

    ids: list
    pi: np.ndarray
    x: np.ndarray
    y: Optional[np.ndarray] = None
    costs: Optional[np.ndarray] = None
    x_names: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def d(self) -> np.ndarray:
        return 1.0 / self.pi


def read_sample(path, need_y: bool = False) -> SampleFile:
    rows = _open_rows(path)
    if not rows:
        raise InputError(f"{path}: file is empty")
    line0, header = rows[0]
    cols = {name: k for k, name in enumerate(header)}
    if len(cols) != len(header):
        raise InputError(f"{path}: line {line0}: duplicate column names")
    for req in ("id", "pi") + (("y",) if need_y else ()):
        if req not in cols:
            raise InputError(f"{path}: line {line0}: missing required column {req!r}")
    xcols = sorted((int(m.group(1)), name) for name in header if (m := _XCOL.match(name)))
    nums = [j for j, _ in xcols]
    if nums != list(range(1, len(nums) + 1)):
        raise InputError(f"{path}: line {line0}: covariate columns must be x1..xp without gaps")
    x_names = [name for _, name in xcols]
    unknown = [h for h in header if h not in ("id", "pi", "y", "c") and h not in x_names]
    if unknown:
        raise InputError(f"{path}: line {line0}: unknown columns {unknown}")
    body = rows[1:]
    if not body:
        raise InputError(f"{path}: no data rows")

    ids, pi, y, c, x = [], [], [], [], []
    seen = {}
    for line, r in body:
        where = f"{path}: line {line}"
        if len(r) != len(header):
            raise InputError(f"{where}: expected {len(header)} fields, found {len(r)}")
        uid = r[cols["id"]]
        if not uid:
            raise InputError(f"{where}: empty id")
        if uid in seen:
            raise InputError(f"{where}: duplicate id {uid!r} (first seen on line {seen[uid]})")
        seen[uid] = line
        p = _float(r[cols["pi"]], f"{where}: column pi")
        if not 0.0 < p <= 1.0:
            raise InputError(f"{where}: pi must lie in (0, 1], got {p!r}")
        ids.append(uid)
        pi.append(p)
        x.append([_float(r[cols[nm]], f"{where}: column {nm}") for nm in x_names])
        if "y" in cols:
            y.append(_float(r[cols["y"]], f"{where}: column y"))
        if "c" in cols:
            cv = _float(r[cols["c"]], f"{where}: column c")
            if cv <= 0:
                raise InputError(f"{where}: unit cost c must be positive")
            c.append(cv)

    order = _sort_key(ids)
    xa = np.array(x, dtype=float).reshape(len(ids), len(x_names))[order]
    return SampleFile(
        ids=[ids[k] for k in order],
        pi=np.array(pi)[order],
        x=xa,
        y=np.array(y)[order] if y else None,
        costs=np.array(c)[order] if c else None,
        x_names=x_names,
    )


# --------------------------------------------------------------------------
# totals file
# --------------------------------------------------------------------------

@dataclass
class TotalsFile:
    """Control totals: ``N``, one value per covariate and optional debias totals.

    ``tg`` holds ``sum_U g(d)``; ``tg_<entropy>`` rows give entropy-specific
    values and take precedence.  ``tgc`` is ``sum_U g(d) c`` for the
    model-assisted variant.
    """

    N: float
    x: dict
    extra: dict = field(default_factory=dict)

    def x_totals(self, names) -> np.ndarray:
        missing = [nm for nm in names if nm not in self.x]
        if missing:
            raise InputError(f"totals file has no rows for {missing}")
        return np.array([self.x[nm] for nm in names])

    def debias(self, key: str, entropy_name: str) -> Optional[float]:
        for k in (f"{key}_{entropy_name}", key):
            if k in self.extra:
                return self.extra[k]
        return None


def read_totals(path) -> TotalsFile:
    rows = _open_rows(path)
    if rows and rows[0][1] and rows[0][1][0].lower() in ("control", "control_name", "name"):
        rows = rows[1:]
    if not rows:
        raise InputError(f"{path}: no totals rows")
    vals = {}
    for line, r in rows:
        where = f"{path}: line {line}"
        if len(r) != 2:
            raise InputError(f"{where}: expected 'control_name,value'")
        name = r[0]
        if name in vals:
            raise InputError(f"{where}: duplicate control {name!r}")
        vals[name] = _float(r[1], where)
    if "N" not in vals:
        raise InputError(f"{path}: missing required control 'N'")
    N = vals.pop("N")
    if not N > 0:
        raise InputError(f"{path}: N must be positive")
    xs = {k: v for k, v in vals.items() if _XCOL.match(k)}
    extra = {k: v for k, v in vals.items() if k not in xs}
    bad = [k for k in extra if not re.match(r"^(tg|tgc)(_\w+)?$", k)]
    if bad:
        raise InputError(f"{path}: unknown controls {bad}")
    return TotalsFile(N, xs, extra)


def read_population(path) -> tuple:
    """Population covariates ``x1..xp`` and, if present, the ``pi`` column."""
    rows = _open_rows(path)
    if not rows:
        raise InputError(f"{path}: file is empty")
    line0, header = rows[0]
    xcols = sorted((int(m.group(1)), k) for k, name in enumerate(header) if (m := _XCOL.match(name)))
    pk = header.index("pi") if "pi" in header else None
    x, pi = [], []
    for line, r in rows[1:]:
        where = f"{path}: line {line}"
        if len(r) != len(header):
            raise InputError(f"{where}: expected {len(header)} fields, found {len(r)}")
        x.append([_float(r[k], where) for _, k in xcols])
        if pk is not None:
            p = _float(r[pk], where)
            if not 0.0 < p <= 1.0:
                raise InputError(f"{where}: pi must lie in (0, 1]")
            pi.append(p)
    if not x:
        raise InputError(f"{path}: no data rows")
    return np.array(x, dtype=float).reshape(len(x), len(xcols)), (np.array(pi) if pi else None)


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------

WEIGHT_COLUMNS = ("id", "d", "omega", "omega_over_d")
REPORT_COLUMNS = ("estimator", "entropy", "theta", "se", "ci_lo", "ci_hi", "converged")


def write_weights(path, ids, d, omega) -> None:
    d = np.asarray(d, dtype=float)
    omega = np.asarray(omega, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(WEIGHT_COLUMNS)
        for k in _sort_key(list(ids)):
            w.writerow([ids[k], _fmt(d[k]), _fmt(omega[k]), _fmt(omega[k] / d[k])])


def read_weights(path) -> tuple:
    """``(ids, d, omega)`` from a weights CSV."""
    rows = _open_rows(path)
    if not rows or tuple(rows[0][1]) != WEIGHT_COLUMNS:
        raise InputError(f"{path}: expected header {','.join(WEIGHT_COLUMNS)}")
    ids, d, om = [], [], []
    for line, r in rows[1:]:
        where = f"{path}: line {line}"
        if len(r) != 4:
            raise InputError(f"{where}: expected 4 fields")
        ids.append(r[0])
        d.append(_float(r[1], where))
        om.append(_float(r[2], where))
    return ids, np.array(d), np.array(om)


def write_report(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow([r.estimator, r.entropy or "-", _fmt(r.theta_hat), _fmt(r.se),
                        _fmt(r.ci[0]), _fmt(r.ci[1]), "true" if r.converged else "false"])


# --------------------------------------------------------------------------
# study config
# --------------------------------------------------------------------------

CONFIG_KEYS = ("model", "n_pop", "reps", "seed", "entropies", "methods", "level", "alpha_known")


def _config_value(key, raw, problems):
    def as_int(lo):
        try:
            v = int(raw)
        except ValueError:
            problems.append(f"{key}: expected an integer, got {raw!r}")
            return None
        if v < lo:
            problems.append(f"{key}: must be at least {lo}, got {v}")
            return None
        return v

    def as_list():
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if not items:
            problems.append(f"{key}: list must be nonempty")
            return None
        return tuple(items)

    if key == "model":
        v = raw.lower()
        if v not in ("model1", "model2", "1", "2"):
            problems.append(f"model: expected model1 or model2, got {raw!r}")
            return None
        return v
    if key == "n_pop":
        return as_int(2)
    if key == "reps":
        return as_int(1)
    if key == "seed":
        return as_int(0)
    if key in ("entropies", "methods"):
        return as_list()
    if key == "level":
        try:
            v = float(raw)
        except ValueError:
            problems.append(f"level: expected a number, got {raw!r}")
            return None
        if not 0.0 < v < 1.0:
            problems.append(f"level: must lie in (0, 1), got {v}")
            return None
        return v
    if key == "alpha_known":
        v = raw.lower()
        if v not in ("true", "false", "1", "0", "yes", "no"):
            problems.append(f"alpha_known: expected true or false, got {raw!r}")
            return None
        return v in ("true", "1", "yes")
    problems.append(f"{key}: unknown key")
    return None


def parse_config(text: str, source: str = "<config>"):
    """Parse a flat ``key = value`` study config into a ``StudyConfig``.

    Blank lines and ``#`` comments are ignored; lists are comma-separated.
    Every problem found is collected and raised together as ``ConfigError``.
    """
    from .entropy import parse_entropy
    from .errors import GecalError
    from .simulation import STUDY_METHODS, StudyConfig

    problems, values = [], {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key = value")
            continue
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in values:
            problems.append(f"{key}: given more than once")
            continue
        v = _config_value(key, raw, problems)
        if v is not None:
            values[key] = v
    for name in values.get("methods", ()):
        if name not in STUDY_METHODS:
            problems.append(f"methods: unknown method {name!r}")
    for tok in values.get("entropies", ()):
        name, _, rest = tok.partition(":")
        if name.strip().lower() == "ph" and not rest:
            continue
        try:
            parse_entropy(name, [s for s in rest.split(";") if s])
        except GecalError as exc:
            problems.append(f"entropies: {tok!r}: {exc}")
    if problems:
        raise ConfigError([f"{source}: {p}" for p in problems])
    kw = {}
    for key, attr in (("model", "model"), ("n_pop", "N"), ("reps", "reps"), ("seed", "seed"),
                      ("entropies", "entropies"), ("methods", "methods"), ("level", "level"),
                      ("alpha_known", "alpha_known")):
        if key in values:
            kw[attr] = values[key]
    return StudyConfig(**kw)


def read_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from None
    return parse_config(text, str(path))


def write_metrics(path, table) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(table.to_csv())
