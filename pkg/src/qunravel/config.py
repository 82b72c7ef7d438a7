"""Experiment configuration files.

INI syntax (``configparser``)::

    [experiment]
    mode = unravel            ; integrate, unravel, pair, embed, recover-embedding,
                              ; recover-martingale, spa-scan, reproduce-thermal-qubit
    t0 = 0
    t1 = 1
    dt = 1e-3
    n_traj = 10000
    seed = 2024

    [equation]
    dim = 2

    [matrices]                ; optional user matrices, rows separated by ';'
    a = 0, 1+0.5i; 1-0.5i, 0

    [hamiltonian]             ; operator = time profile
    sigma_z = const(0.5)
    sigma_x = sin(3, 15, 0)

    [channels]                ; operator = rate profile, in channel order
    gm1 = 1
    gm3 = tab((0, 0), (1, -0.8))

    [state]
    rho0 = excited

Time profiles are ``const(a)``, ``sin(a, w, phi)`` (``a sin(w t + phi)``),
``tab((t, v), ...)`` (linear interpolation, constant beyond the ends), numbers,
and affine combinations of these.
"""
import ast
import configparser
import hashlib
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import operators as ops
from .equations import CanonicalMasterEquation, gell_mann_basis

MODES = ("integrate", "unravel", "pair", "embed", "recover-embedding",
         "recover-martingale", "spa-scan", "reproduce-thermal-qubit")


class ConfigError(ValueError):
    """Invalid configuration; carries the offending line and field."""

    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field


# -- time profiles ------------------------------------------------------------------

class Profile:
    """Affine combination ``offset + sum_k coef_k f_k(t)`` of basic profiles."""

    def __init__(self, offset=0.0, terms=()):
        self.offset = float(offset)
        self.terms = tuple(terms)

    def __call__(self, t):
        return self.offset + sum(c * f(t) for c, f in self.terms)

    def scaled(self, s):
        return Profile(s * self.offset, [(s * c, f) for c, f in self.terms])

    def __add__(self, other):
        return Profile(self.offset + other.offset, self.terms + other.terms)

    @property
    def is_constant(self):
        return not self.terms


def _sin(a, w, phi=0.0):
    return lambda t: a * math.sin(w * t + phi)


def _tab(points):
    pts = sorted(points)
    ts = np.array([p[0] for p in pts], dtype=float)
    vs = np.array([p[1] for p in pts], dtype=float)
    if len(ts) < 1 or np.any(np.diff(ts) <= 0):
        raise ValueError("tab() needs strictly increasing, distinct times")
    return lambda t: float(np.interp(t, ts, vs))


def _number(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _number(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp) and isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div)):
        a, b = _number(node.left), _number(node.right)
        return {ast.Add: a + b, ast.Sub: a - b, ast.Mult: a * b,
                ast.Div: a / b if b else math.inf}[type(node.op)]
    raise ValueError(f"expected a number, got {ast.unparse(node)!r}")


def _profile(node):
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        name = node.func.id
        if name == "const":
            if len(node.args) != 1:
                raise ValueError("const() takes one argument")
            return Profile(_number(node.args[0]))
        if name == "sin":
            if len(node.args) not in (2, 3):
                raise ValueError("sin() takes (amplitude, frequency[, phase])")
            return Profile(0.0, [(1.0, _sin(*[_number(a) for a in node.args]))])
        if name == "tab":
            pts = []
            for a in node.args:
                if not (isinstance(a, ast.Tuple) and len(a.elts) == 2):
                    raise ValueError("tab() arguments must be (time, value) pairs")
                pts.append((_number(a.elts[0]), _number(a.elts[1])))
            return Profile(0.0, [(1.0, _tab(pts))])
        raise ValueError(f"unknown profile function {name!r}")
    if isinstance(node, ast.BinOp):
        if isinstance(node.op, (ast.Add, ast.Sub)):
            right = _profile(node.right)
            return _profile(node.left) + (right.scaled(-1.0) if isinstance(node.op, ast.Sub) else right)
        if isinstance(node.op, ast.Mult):
            try:
                k = _number(node.left)
            except ValueError:
                return _profile(node.left).scaled(_number(node.right))
            return _profile(node.right).scaled(k)
        if isinstance(node.op, ast.Div):
            return _profile(node.left).scaled(1.0 / _number(node.right))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        p = _profile(node.operand)
        return p.scaled(-1.0) if isinstance(node.op, ast.USub) else p
    return Profile(_number(node))


def parse_profile(text):
    """Parse a time-profile expression into a callable ``f(t) -> float``."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
        prof = _profile(tree.body)
    except SyntaxError as exc:
        raise ValueError(f"cannot parse profile {text!r}: {exc.msg}") from None
    if not math.isfinite(prof.offset) or not all(math.isfinite(c) for c, _ in prof.terms):
        raise ValueError(f"profile {text!r} has non-finite coefficients")
    return prof


# -- matrices --------------------------------------------------------------------------

_ENTRY = re.compile(r"^[0-9eE.+\-ij]+$")


def parse_complex(text):
    s = text.strip().replace(" ", "")
    if not s or not _ENTRY.match(s):
        raise ValueError(f"bad complex literal {text!r}")
    s = s.replace("i", "j")
    try:
        z = complex(s)
    except ValueError:
        raise ValueError(f"bad complex literal {text!r}") from None
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise ValueError(f"non-finite entry {text!r}")
    return z


def parse_matrix(text):
    """``"a, b; c, d"`` -> 2x2 complex array (entries like ``1-0.5i``)."""
    rows = [r for r in text.replace("\n", " ").split(";") if r.strip()]
    mat = [[parse_complex(x) for x in r.split(",")] for r in rows]
    if not mat or any(len(r) != len(mat) for r in mat):
        raise ValueError("matrix must be square with ';'-separated rows")
    return np.array(mat, dtype=complex)


def named_operator(name, d, user=None):
    """Operator presets: Pauli family (d = 2), ``identity``, ``gm<k>``
    (generalized Gell-Mann, 1-based), or a name from ``[matrices]``."""
    user = user or {}
    if name in user:
        return user[name]
    pauli = {"sigma_x": ops.SIGMA_X, "sigma_y": ops.SIGMA_Y, "sigma_z": ops.SIGMA_Z,
             "sigma_plus": ops.SIGMA_PLUS, "sigma_minus": ops.SIGMA_MINUS}
    if name in pauli:
        if d != 2:
            raise ValueError(f"{name} needs dim = 2")
        return pauli[name]
    if name == "identity":
        return np.eye(d, dtype=complex)
    m = re.fullmatch(r"gm(\d+)", name)
    if m:
        k = int(m.group(1))
        if not 1 <= k <= d * d - 1:
            raise ValueError(f"gm index must be in 1..{d * d - 1}")
        return gell_mann_basis(d)[k - 1]
    raise ValueError(f"unknown operator {name!r}")


def named_state(text, d, user=None):
    """``excited`` (first basis vector), ``ground`` (last), ``mixed``, a
    matrix name, or a matrix literal."""
    user = user or {}
    key = text.strip()
    if key in user:
        return user[key]
    if key == "excited":
        rho = np.zeros((d, d), dtype=complex)
        rho[0, 0] = 1.0
        return rho
    if key == "ground":
        rho = np.zeros((d, d), dtype=complex)
        rho[-1, -1] = 1.0
        return rho
    if key == "mixed":
        return np.eye(d, dtype=complex) / d
    return parse_matrix(key)


# -- configuration ---------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    mode: str
    t0: float
    t1: float
    dt: float
    n_traj: int
    seed: int
    equation: CanonicalMasterEquation = None
    rho0: np.ndarray = None
    shift: object = None          # None -> optimal, else callable
    dt_mc: float = None           # step for the Monte Carlo engine
    n_record: int = 20
    every: int = 100
    save_trajectories: int = 5
    threads: int = 1
    pad: str = "auto"
    spa_time: float = None
    spa_dts: tuple = (1e-3, 5e-4, 2.5e-4)
    spa_factors: tuple = (0.0, 0.5, 0.9, 1.0, 1.1)
    thermal: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    digest: str = ""


def _line_of(text, section, key):
    """1-based line of ``key`` inside ``[section]`` (best effort)."""
    current = None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return None


_DEFAULTS = {"t0": "0", "t1": "1", "dt": "1e-4", "n_traj": "10000", "seed": "2024",
             "n_record": "20", "every": "100", "save_trajectories": "5", "threads": "1",
             "pad": "auto", "shift": "optimal"}
_EXPERIMENT_KEYS = set(_DEFAULTS) | {"mode", "dt_mc", "spa_time", "spa_dts", "spa_factors"}
_THERMAL_KEYS = {"g": 0.1, "beta": 1.0, "omega": 1.0, "drive": 3.0, "frequency": 15.0}


def load_config(path=None, text=None, seed=None, threads=None):
    """Parse and validate a configuration file (or string)."""
    if text is None:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else None
        raise ConfigError(f"syntax error: {exc}", line=line) from None
    except configparser.Error as exc:
        raise ConfigError(f"syntax error: {exc.message}", line=getattr(exc, "lineno", None)) from None

    def fail(section, key, msg):
        raise ConfigError(f"[{section}] {key}: {msg}", line=_line_of(text, section, key),
                          field=f"{section}.{key}")

    if not cp.has_section("experiment"):
        raise ConfigError("missing [experiment] section", field="experiment")
    exp = cp["experiment"]
    for key in exp:
        if key not in _EXPERIMENT_KEYS:
            fail("experiment", key, "unknown key")
    mode = exp.get("mode", "").strip()
    if mode not in MODES:
        fail("experiment", "mode", f"must be one of {', '.join(MODES)}")

    def get(key, conv):
        raw = exp.get(key, _DEFAULTS.get(key))
        try:
            val = conv(raw)
        except (TypeError, ValueError) as exc:
            fail("experiment", key, str(exc) or "invalid value")
        if isinstance(val, float) and not math.isfinite(val):
            fail("experiment", key, "must be finite")
        return val

    def as_int(raw):
        v = float(raw)
        if v != int(v):
            raise ValueError(f"{raw!r} is not an integer")
        return int(v)

    cfg = ExperimentConfig(mode=mode, t0=get("t0", float), t1=get("t1", float),
                           dt=get("dt", float), n_traj=get("n_traj", as_int),
                           seed=get("seed", as_int))
    cfg.n_record = get("n_record", as_int)
    cfg.every = get("every", as_int)
    cfg.save_trajectories = get("save_trajectories", as_int)
    cfg.threads = get("threads", as_int)
    cfg.pad = exp.get("pad", "auto").strip()
    if "dt_mc" in exp:
        cfg.dt_mc = get("dt_mc", float)
    if "spa_time" in exp:
        cfg.spa_time = get("spa_time", float)
    for key in ("spa_dts", "spa_factors"):
        if key in exp:
            setattr(cfg, key, get(key, lambda s: tuple(float(x) for x in s.split(","))))

    if seed is not None:
        cfg.seed = int(seed)
    if threads is not None:
        cfg.threads = int(threads)
    if cfg.dt <= 0:
        fail("experiment", "dt", "must be positive")
    if cfg.dt_mc is not None and cfg.dt_mc <= 0:
        fail("experiment", "dt_mc", "must be positive")
    if not cfg.t1 > cfg.t0:
        fail("experiment", "t1", "must exceed t0")
    if cfg.n_traj < 1:
        fail("experiment", "n_traj", "must be at least 1")
    if not 0 <= cfg.seed < 2**64:
        fail("experiment", "seed", "must be an unsigned 64-bit integer")
    if cfg.threads < 1:
        fail("experiment", "threads", "must be at least 1")
    if cfg.every < 1 or cfg.n_record < 1:
        fail("experiment", "every" if cfg.every < 1 else "n_record", "must be at least 1")
    if cfg.pad not in ("auto", "yes", "no"):
        fail("experiment", "pad", "must be auto, yes or no")
    if any(x <= 0 for x in cfg.spa_dts):
        fail("experiment", "spa_dts", "must be positive")
    shift = exp.get("shift", "optimal").strip()
    if shift != "optimal":
        try:
            cfg.shift = parse_profile(shift)
        except ValueError as exc:
            fail("experiment", "shift", str(exc))

    if cp.has_section("tolerances"):
        from .tolerances import Tolerances
        known = set(Tolerances.__dataclass_fields__)
        for key, raw in cp["tolerances"].items():
            if key not in known:
                fail("tolerances", key, "unknown tolerance")
            try:
                v = float(raw)
            except ValueError:
                fail("tolerances", key, "not a number")
            if not (math.isfinite(v) and v > 0):
                fail("tolerances", key, "must be positive and finite")
            cfg.tolerances[key] = v

    if mode == "reproduce-thermal-qubit":
        sec = cp["thermal"] if cp.has_section("thermal") else {}
        for key in sec:
            if key not in _THERMAL_KEYS:
                fail("thermal", key, "unknown key")
        for key, default in _THERMAL_KEYS.items():
            try:
                v = float(sec.get(key, default))
            except ValueError:
                fail("thermal", key, "not a number")
            if not math.isfinite(v):
                fail("thermal", key, "must be finite")
            cfg.thermal[key] = v
    else:
        cfg.equation = _build_equation(cp, text, fail)
        d = cfg.equation.dim
        user = _user_matrices(cp, text, fail)
        raw = cp["state"].get("rho0", "excited") if cp.has_section("state") else "excited"
        try:
            rho0 = named_state(raw, d, user)
            if rho0.shape != (d, d):
                raise ValueError(f"rho0 must be {d}x{d}")
            ops.check_density(rho0)
            if ops.min_eigenvalue(rho0) < -1e-9:
                raise ValueError("rho0 is not positive semidefinite")
        except ValueError as exc:
            fail("state", "rho0", str(exc))
        cfg.rho0 = rho0

    canon = _canonical_dump(cp, cfg)
    cfg.digest = hashlib.sha256(canon.encode()).hexdigest()
    return cfg


def _canonical_dump(cp, cfg):
    """Stable text of the effective configuration (for the output hash)."""
    lines = []
    for sec in sorted(cp.sections()):
        for key, val in sorted(cp[sec].items()):
            if sec == "experiment" and key in ("seed", "threads"):
                continue
            lines.append(f"{sec}.{key}={' '.join(val.split())}")
    lines.append(f"experiment.seed={cfg.seed}")
    return "\n".join(lines)


def _user_matrices(cp, text, fail):
    user = {}
    if cp.has_section("matrices"):
        for key, raw in cp["matrices"].items():
            try:
                user[key] = parse_matrix(raw)
            except ValueError as exc:
                fail("matrices", key, str(exc))
    return user


def _build_equation(cp, text, fail):
    if not cp.has_section("equation"):
        raise ConfigError("missing [equation] section", field="equation")
    eq = cp["equation"]
    for key in eq:
        if key not in ("dim", "povm_constant", "canonical"):
            fail("equation", key, "unknown key")
    try:
        d = int(eq.get("dim", ""))
        if d < 2:
            raise ValueError
    except ValueError:
        fail("equation", "dim", "must be an integer >= 2")
    user = _user_matrices(cp, text, fail)
    for key, m in user.items():
        if m.shape != (d, d):
            fail("matrices", key, f"must be {d}x{d}")

    def terms(section):
        out = []
        if not cp.has_section(section):
            return out
        for key, raw in cp[section].items():
            try:
                op = named_operator(key, d, user)
            except ValueError as exc:
                fail(section, key, str(exc))
            try:
                prof = parse_profile(raw)
            except ValueError as exc:
                fail(section, key, str(exc))
            if section == "hamiltonian" and not ops.is_hermitian(op):
                fail(section, key, "Hamiltonian terms must be Hermitian")
            out.append((op, prof))
        return out

    h_terms = terms("hamiltonian")

    def H(t):
        out = np.zeros((d, d), dtype=complex)
        for op, prof in h_terms:
            out = out + prof(t) * op
        return out

    channels = terms("channels")
    canonical = None
    if "canonical" in eq:
        flag = eq["canonical"].strip().lower()
        if flag not in ("true", "false", "yes", "no"):
            fail("equation", "canonical", "must be true or false")
        canonical = flag in ("true", "yes")
    povm = None
    if "povm_constant" in eq:
        try:
            povm = float(eq["povm_constant"])
        except ValueError:
            fail("equation", "povm_constant", "not a number")
    return CanonicalMasterEquation.build(H, [op for op, _ in channels],
                                         [prof for _, prof in channels],
                                         povm_constant=povm, canonical=canonical)
