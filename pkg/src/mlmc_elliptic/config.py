"""Experiment configuration files (INI syntax).

Example::

    [mesh]
    m0 = 4
    l_min = 1
    l_max = 4

    [coefficient]
    model = scalar

    [field1]
    kind = gaussian
    sigma2 = 1.0
    lambda = 0.5

    [qoi]
    kind = h1_seminorm

    [mlmc]
    eps = 0.05, 0.02

    [run]
    seed = 1234

Every key has a default; see ``SCHEMA``. 2x2 matrices are written row-major
as four comma-separated numbers, lists as comma-separated values.
"""

import configparser
import hashlib
import re
from dataclasses import dataclass, replace

from .errors import ConfigError, InputError
from .fem import DEFAULT_REL_TOL
from .mesh import DEFAULT_MAX_SIDE
from .mlmc import EPS_LIMIT, MlmcConfig
from .qoi import QoIKind, QoISpec
from .random_field import (
    DEFAULT_MAX_NODES,
    CoefficientKind,
    CoefficientModel,
    CovarianceKind,
    CovarianceSpec,
)

# section -> key -> attribute name on ExperimentConfig
SCHEMA = {
    "mesh": {"m0": "m0", "l_min": "L_min", "l_max": "L_max", "max_side": "max_side", "max_nodes": "max_nodes"},
    "coefficient": {"model": "coefficient", "k1": "K1", "k2": "K2"},
    "field1": {"kind": "field1_kind", "sigma2": "field1_sigma2", "lambda": "field1_lambda", "mean": "field1_mean"},
    "field2": {"kind": "field2_kind", "sigma2": "field2_sigma2", "lambda": "field2_lambda", "mean": "field2_mean"},
    "qoi": {"kind": "qoi_kind", "point": "qoi_point"},
    "mlmc": {
        "eps": "eps",
        "n_initial": "N_initial",
        "alpha_floor": "alpha_floor",
        "variance_fraction": "variance_fraction",
        "smoothing": "smoothing",
    },
    "rates": {"levels": "rate_levels", "n": "rate_N"},
    "solver": {"rel_tol": "rel_tol", "max_iter": "max_iter", "preconditioner": "preconditioner"},
    "run": {"seed": "seed", "source": "source", "threads": "threads", "out": "out"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    m0: int = 4
    L_min: int = 1
    L_max: int = 4
    max_side: int = DEFAULT_MAX_SIDE
    max_nodes: int = DEFAULT_MAX_NODES
    coefficient: str = "scalar"
    K1: tuple = (1.0, 0.0, 0.0, 1.0)
    K2: tuple = (0.0, 0.0, 0.0, 0.0)
    field1_kind: str = "gaussian"
    field1_sigma2: float = 1.0
    field1_lambda: float = 0.5
    field1_mean: float = 0.0
    field2_kind: str = "gaussian"
    field2_sigma2: float = 1.0
    field2_lambda: float = 0.5
    field2_mean: float = 0.0
    qoi_kind: str = "h1_seminorm"
    qoi_point: tuple = None
    eps: tuple = (0.05,)
    N_initial: int = 64
    alpha_floor: float = 0.5
    variance_fraction: float = 0.5
    smoothing: tuple = (0,)
    rate_levels: tuple = None  # None means 1..L_max
    rate_N: int = 2000
    rel_tol: float = DEFAULT_REL_TOL
    max_iter: int = None
    preconditioner: str = "none"
    seed: int = 0
    source: float = 1.0
    threads: int = 1
    out: str = "results"

    @property
    def model(self):
        cov1 = CovarianceSpec(self.field1_kind, self.field1_sigma2, self.field1_lambda, self.field1_mean)
        if self.coefficient == CoefficientKind.SCALAR_LOGNORMAL.value:
            return CoefficientModel(CoefficientKind.SCALAR_LOGNORMAL, cov1)
        cov2 = CovarianceSpec(self.field2_kind, self.field2_sigma2, self.field2_lambda, self.field2_mean)
        K1 = (self.K1[:2], self.K1[2:])
        K2 = (self.K2[:2], self.K2[2:])
        return CoefficientModel(CoefficientKind.TENSOR_TWO_FIELD, cov1, cov2, K1, K2)

    @property
    def qoi(self):
        return QoISpec(self.qoi_kind, self.qoi_point)

    def mlmc_config(self, eps):
        return MlmcConfig(
            eps=eps,
            model=self.model,
            qoi=self.qoi,
            m0=self.m0,
            L_min=self.L_min,
            L_max=self.L_max,
            N_initial=self.N_initial,
            rate_alpha_floor=self.alpha_floor,
            variance_fraction=self.variance_fraction,
            seed=self.seed,
            rel_tol=self.rel_tol,
            max_iter=self.max_iter,
            preconditioner=None if self.preconditioner == "none" else self.preconditioner,
            smoothing=self.smoothing[0] if len(self.smoothing) == 1 else list(self.smoothing),
            source=self.source,
            max_side=self.max_side,
            max_nodes=self.max_nodes,
            threads=self.threads,
        )

    @property
    def study_levels(self):
        return tuple(range(1, self.L_max + 1)) if self.rate_levels is None else self.rate_levels

    def sha256(self):
        return hashlib.sha256(dump_config(self).encode()).hexdigest()


def _floats(n=None):
    def conv(text):
        vals = tuple(float(v) for v in text.split(",") if v.strip())
        if n is not None and len(vals) != n:
            raise ValueError(f"expected {n} numbers, got {len(vals)}")
        return vals

    return conv


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _optional_ints(text):
    return None if text.strip() in ("", "none") else _ints(text)


def _optional_int(text):
    return None if text.strip() in ("", "none") else int(text)


def _optional_point(text):
    return None if text.strip() in ("", "none") else _floats(2)(text)


def _choice(options):
    def conv(text):
        text = text.strip().lower()
        if text not in options:
            raise ValueError(f"expected one of {sorted(options)}, got {text!r}")
        return text

    return conv


_COV_KINDS = {k.value for k in CovarianceKind}
_CONVERTERS = {
    "m0": int,
    "L_min": int,
    "L_max": int,
    "max_side": int,
    "max_nodes": int,
    "coefficient": _choice({k.value for k in CoefficientKind}),
    "K1": _floats(4),
    "K2": _floats(4),
    "field1_kind": _choice(_COV_KINDS),
    "field1_sigma2": float,
    "field1_lambda": float,
    "field1_mean": float,
    "field2_kind": _choice(_COV_KINDS),
    "field2_sigma2": float,
    "field2_lambda": float,
    "field2_mean": float,
    "qoi_kind": _choice({k.value for k in QoIKind}),
    "qoi_point": _optional_point,
    "eps": _floats(),
    "N_initial": int,
    "alpha_floor": float,
    "variance_fraction": float,
    "smoothing": _ints,
    "rate_levels": _optional_ints,
    "rate_N": int,
    "rel_tol": float,
    "max_iter": _optional_int,
    "preconditioner": _choice({"none", "jacobi"}),
    "seed": int,
    "source": float,
    "threads": int,
    "out": str,
}


def _line_index(text):
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    where = {}
    section = None
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            where.setdefault((section, None), no)
            continue
        m = re.match(r"\s*([^#;=:\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            where.setdefault((section, m.group(1).strip().lower()), no)
    return where


def parse_config(text):
    """Parse and validate configuration text; raises ``ConfigError`` with a line number."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        raise ConfigError(str(exc).splitlines()[0], line) from exc
    where = _line_index(text)
    values = {}
    for section in cp.sections():
        sec = section.lower()
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", where.get((sec, None)))
        for key, raw in cp.items(section):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", where.get((sec, key)))
            attr = SCHEMA[sec][key]
            try:
                values[attr] = _CONVERTERS[attr](raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}", where.get((sec, key))) from exc
    cfg = ExperimentConfig(**values)
    _validate(cfg, where)
    return cfg


def _line_of(where, attr):
    for sec, keys in SCHEMA.items():
        for key, a in keys.items():
            if a == attr:
                return where.get((sec, key)) or where.get((sec, None))
    return None


def _validate(cfg, where):
    def fail(attr, msg):
        raise ConfigError(msg, _line_of(where, attr))

    if not cfg.eps:
        fail("eps", "eps list is empty")
    for e in cfg.eps:
        if not 0 < e < EPS_LIMIT:
            fail("eps", f"eps={e} violates the requirement 0 < eps < e^-1 = {EPS_LIMIT:.6f}")
    if cfg.m0 < 2:
        fail("m0", f"m0 must be >= 2, got {cfg.m0}")
    if not 0 <= cfg.L_min <= cfg.L_max:
        fail("L_max", f"need 0 <= l_min <= l_max, got {cfg.L_min}, {cfg.L_max}")
    if cfg.N_initial < 2:
        fail("N_initial", "n_initial must be >= 2")
    if cfg.rate_N < 2:
        fail("rate_N", "rates n must be >= 2")
    if not 0 < cfg.variance_fraction < 1:
        fail("variance_fraction", "variance_fraction must lie in (0, 1)")
    if not cfg.alpha_floor > 0:
        fail("alpha_floor", "alpha_floor must be > 0")
    if any(s < 0 for s in cfg.smoothing) or not cfg.smoothing:
        fail("smoothing", "smoothing passes must be non-negative integers")
    if cfg.rate_levels is not None and any(lev < 0 or lev > cfg.L_max for lev in cfg.rate_levels):
        fail("rate_levels", f"rate levels must lie in 0..l_max={cfg.L_max}")
    if not cfg.rel_tol > 0:
        fail("rel_tol", "rel_tol must be > 0")
    if cfg.threads < 1:
        fail("threads", "threads must be >= 1")
    try:
        cfg.model
    except InputError as exc:
        fail("coefficient", str(exc))
    try:
        cfg.qoi
    except InputError as exc:
        fail("qoi_point", str(exc))


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _fmt(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg):
    """Serialize to text that ``parse_config`` reads back to an equal config."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, attr in keys.items():
            lines.append(f"{key} = {_fmt(getattr(cfg, attr))}")
        lines.append("")
    return "\n".join(lines)


def with_overrides(cfg, **kwargs):
    """Copy of ``cfg`` with the non-``None`` keyword values replaced."""
    return replace(cfg, **{k: v for k, v in kwargs.items() if v is not None})
