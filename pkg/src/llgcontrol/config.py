"""Run configuration: JSON schema, validation, and field presets.

A config is a JSON object with the blocks below; every key is optional
except ``grid`` and ``time``, and unknown keys anywhere are rejected::

    {
      "grid":      {"nx": 17, "ny": 17, "Lx": 1.0, "Ly": 1.0},
      "time":      {"dt": 1e-3, "T": 0.1},
      "scheme":    {"name": "projection", "penalty_k": null, "warn_stability": true},
      "problem":   {"m0": <field>, "u": <field>, "m_d": <field>, "m_omega": <field>,
                    "a": -2.0, "b": 2.0, "R": 1e3},
      "optimizer": {"tol": 1e-3, "max_iters": 200, "direction": "h1", "c1": 1e-4,
                    "max_halvings": 40, "step0": 1.0, "step_rule": "bb"},
      "gradcheck": {"eps": [1e-2, 1e-3, 1e-4], "tol": 0.05, "direction": <field>},
      "audit":     {"user_C": 1.0, "delta": 0.0, "second_order": 3, "s": 1.0},
      "refine":    {"levels": 3, "fd_eps": 1e-3},
      "paths":     {"m": "m.llgf", "u": "u.llgf", "phi": "phi.llgf", "csv": null,
                    "report": "report.json"},
      "seed": 0
    }

Field specs (``<field>``) are either the string ``"file:<path>"`` (an LLGF
trajectory; a single-level file is broadcast in time where a trajectory is
needed) or an object with a ``kind``:

``zero``
    all zeros.
``constant``  ``{"value": [x, y, z]}``
    the same vector at every node and time.
``cosine``  ``{"value": [..], "offset": [..], "kx": 1, "ky": 0, "kt": 0}``
    ``offset + value cos(kx pi x/Lx) cos(ky pi y/Ly) cos(kt pi t/T)``.
``texture``  ``{"theta0": 0.4, "amp": 0.6, "kx": 1, "ky": 1}``
    the unit field ``(sin th, 0, cos th)`` with
    ``th = theta0 + amp cos(kx pi x/Lx) cos(ky pi y/Ly)``.
``sum``  ``{"terms": [<field>, ...]}``
    the nodewise sum of several specs.
``relaxation`` / ``relaxation_final``  ``{"control": <field>}``
    the state trajectory (or its final field) produced from ``m0`` by the
    given control; used to build self-generated tracking targets.

Fields used as magnetisations (``m0``, ``m_omega``) must be unit length after
evaluation; constant and cosine presets are renormalised for those slots.
"""

import copy
import json

import numpy as np

from . import mesh
from .algebra import read_trajectory, renormalize
from .errors import ConfigError

SCHEMA = {
    "grid": {"nx": 17, "ny": 17, "Lx": 1.0, "Ly": 1.0},
    "time": {"dt": 1e-3, "T": 0.1},
    "scheme": {"name": "projection", "penalty_k": None, "warn_stability": True},
    "problem": {"m0": {"kind": "constant", "value": [0.0, 0.0, 1.0]},
                "u": {"kind": "zero"},
                "m_d": None, "m_omega": None,
                "a": -np.inf, "b": np.inf, "R": np.inf},
    "optimizer": {"tol": 1e-3, "max_iters": 200, "direction": "h1", "c1": 1e-4,
                  "max_halvings": 40, "step0": 1.0, "step_rule": "bb"},
    "gradcheck": {"eps": [1e-2, 1e-3, 1e-4], "tol": 0.05, "direction": None},
    "audit": {"user_C": 1.0, "delta": 0.0, "second_order": 3, "s": 1.0},
    "refine": {"levels": 3, "fd_eps": 1e-3},
    "paths": {"m": "m.llgf", "u": "u.llgf", "phi": "phi.llgf", "csv": None,
              "report": "report.json"},
    "seed": 0,
}
REQUIRED = ("grid", "time")

FIELD_KEYS = {
    "zero": set(),
    "constant": {"value"},
    "cosine": {"value", "offset", "kx", "ky", "kt"},
    "texture": {"theta0", "amp", "kx", "ky"},
    "relaxation": {"control"},
    "relaxation_final": {"control"},
    "sum": {"terms"},
}


def _check_field_spec(spec, where):
    if spec is None:
        return
    if isinstance(spec, str):
        if not spec.startswith("file:") or len(spec) <= 5:
            raise ConfigError(f"{where}: field string must look like 'file:<path>', got {spec!r}")
        return
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"{where}: field spec needs a 'kind'")
    kind = spec["kind"]
    if kind not in FIELD_KEYS:
        raise ConfigError(f"{where}: unknown field kind {kind!r}; choose from {sorted(FIELD_KEYS)}")
    extra = set(spec) - FIELD_KEYS[kind] - {"kind"}
    if extra:
        raise ConfigError(f"{where}: unknown key {sorted(extra)[0]!r} for kind {kind!r}")
    for k in ("value", "offset"):
        if k in spec:
            v = spec[k]
            if not (isinstance(v, list) and len(v) == 3
                    and all(isinstance(x, (int, float)) for x in v)):
                raise ConfigError(f"{where}.{k}: expected a list of three numbers")
    if "control" in spec:
        _check_field_spec(spec["control"], where + ".control")
    if kind == "sum":
        if not isinstance(spec.get("terms"), list) or not spec["terms"]:
            raise ConfigError(f"{where}.terms: expected a non-empty list of field specs")
        for i, t in enumerate(spec["terms"]):
            _check_field_spec(t, f"{where}.terms[{i}]")


def _number(x, where, positive=False, integer=False):
    ok = isinstance(x, (int, float)) and not isinstance(x, bool)
    if integer:
        ok = ok and float(x) == int(x)
    if not ok:
        raise ConfigError(f"{where}: expected a {'integer' if integer else 'number'}, got {x!r}")
    if positive and not x > 0:
        raise ConfigError(f"{where}: must be positive, got {x!r}")
    return int(x) if integer else float(x)


def validate(raw):
    """Check a parsed config against the schema and fill in defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in raw:
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r} at top level")
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required block {key!r}")
    cfg = copy.deepcopy(SCHEMA)
    for block, value in raw.items():
        if block == "seed":
            cfg["seed"] = _number(value, "seed", integer=True)
            if cfg["seed"] < 0:
                raise ConfigError("seed must be a non-negative integer")
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"block {block!r} must be an object")
        for k, v in value.items():
            if k not in SCHEMA[block]:
                raise ConfigError(f"unknown key {k!r} in block {block!r}")
            cfg[block][k] = v

    g = cfg["grid"]
    for k in ("nx", "ny"):
        g[k] = _number(g[k], f"grid.{k}", integer=True)
        if g[k] < 3:
            raise ConfigError(f"grid.{k} must be at least 3")
    for k in ("Lx", "Ly"):
        g[k] = _number(g[k], f"grid.{k}", positive=True)
    t = cfg["time"]
    t["dt"] = _number(t["dt"], "time.dt", positive=True)
    t["T"] = _number(t["T"], "time.T", positive=True)
    nt = t["T"] / t["dt"]
    if abs(nt - round(nt)) > 1e-9 * max(1.0, nt) or round(nt) < 1:
        raise ConfigError(f"time.T={t['T']} is not a positive multiple of time.dt={t['dt']}")

    s = cfg["scheme"]
    if s["name"] not in ("projection", "penalized"):
        raise ConfigError(f"scheme.name must be 'projection' or 'penalized', got {s['name']!r}")
    if s["name"] == "penalized":
        s["penalty_k"] = _number(s["penalty_k"], "scheme.penalty_k", positive=True)

    p = cfg["problem"]
    for k in ("m0", "u", "m_d", "m_omega"):
        _check_field_spec(p[k], f"problem.{k}")
    for k in ("a", "b"):
        if isinstance(p[k], (int, float)):
            p[k] = float(p[k])
        elif p[k] is None:
            p[k] = -np.inf if k == "a" else np.inf
        else:
            raise ConfigError(f"problem.{k}: expected a number or null")
    if p["a"] > p["b"]:
        raise ConfigError(f"problem.a={p['a']} exceeds problem.b={p['b']}")
    p["R"] = np.inf if p["R"] is None else _number(p["R"], "problem.R", positive=True)

    o = cfg["optimizer"]
    o["tol"] = _number(o["tol"], "optimizer.tol", positive=True)
    o["max_iters"] = _number(o["max_iters"], "optimizer.max_iters", integer=True)
    o["max_halvings"] = _number(o["max_halvings"], "optimizer.max_halvings", integer=True)
    o["c1"] = _number(o["c1"], "optimizer.c1", positive=True)
    o["step0"] = _number(o["step0"], "optimizer.step0", positive=True)
    if o["direction"] not in ("h1", "l2"):
        raise ConfigError(f"optimizer.direction must be 'h1' or 'l2', got {o['direction']!r}")
    if o["step_rule"] not in ("bb", "double"):
        raise ConfigError(f"optimizer.step_rule must be 'bb' or 'double'")

    gc = cfg["gradcheck"]
    if not isinstance(gc["eps"], list) or not gc["eps"]:
        raise ConfigError("gradcheck.eps must be a non-empty list")
    gc["eps"] = [_number(e, "gradcheck.eps", positive=True) for e in gc["eps"]]
    gc["tol"] = _number(gc["tol"], "gradcheck.tol", positive=True)
    _check_field_spec(gc["direction"], "gradcheck.direction")

    a = cfg["audit"]
    a["user_C"] = _number(a["user_C"], "audit.user_C", positive=True)
    a["delta"] = _number(a["delta"], "audit.delta")
    a["second_order"] = _number(a["second_order"], "audit.second_order", integer=True)
    a["s"] = _number(a["s"], "audit.s", positive=True)

    r = cfg["refine"]
    r["levels"] = _number(r["levels"], "refine.levels", integer=True)
    if r["levels"] < 2:
        raise ConfigError("refine.levels must be at least 2")
    r["fd_eps"] = _number(r["fd_eps"], "refine.fd_eps", positive=True)

    for k, v in cfg["paths"].items():
        if v is not None and not isinstance(v, str):
            raise ConfigError(f"paths.{k}: expected a string or null")
    return cfg


def load(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return validate(raw)


def to_jsonable(cfg):
    """Config with infinities replaced by ``None`` so it survives strict JSON."""
    def conv(x):
        if isinstance(x, dict):
            return {k: conv(v) for k, v in x.items()}
        if isinstance(x, list):
            return [conv(v) for v in x]
        if isinstance(x, float) and not np.isfinite(x):
            return None
        return x
    return conv(cfg)


def make_grid(cfg, refine=0):
    """Grid for the config, optionally refined ``refine`` times (h/2, dt/4 each)."""
    g, t = cfg["grid"], cfg["time"]
    f = 2 ** refine
    dt = t["dt"] / f ** 2
    return mesh.Grid((g["nx"] - 1) * f + 1, (g["ny"] - 1) * f + 1, g["Lx"], g["Ly"],
                     dt=dt, nt=int(round(t["T"] / dt)))


# --- field evaluation --------------------------------------------------------

def _read_file(spec, grid, trajectory):
    path = spec[5:]
    tf = read_trajectory(path)
    if tf.nx != grid.nx or tf.ny != grid.ny:
        raise ConfigError(f"{path}: grid {tf.ny}x{tf.nx} does not match config {grid.shape}")
    data = tf.data
    if trajectory:
        if data.shape[0] == 1:
            return np.broadcast_to(data[0], (grid.nt + 1,) + data.shape[1:]).copy()
        if data.shape[0] != grid.nt + 1:
            raise ConfigError(f"{path}: {data.shape[0]} time levels, config needs {grid.nt + 1}")
        return data
    return data[-1] if data.shape[0] > 1 else data[0]


def field(spec, grid, trajectory, unit=False, m0=None, scheme=None):
    """Evaluate a field spec as a ``(3, ny, nx)`` field or ``(nt+1, 3, ny, nx)`` trajectory."""
    if isinstance(spec, str):
        out = _read_file(spec, grid, trajectory)
        return out
    kind = spec["kind"]
    X, Y = grid.xy
    if kind == "sum":
        out = sum(field(t, grid, trajectory, m0=m0, scheme=scheme) for t in spec["terms"])
        return renormalize(out) if unit else out
    if kind in ("relaxation", "relaxation_final"):
        from .state import StateProblem, solve_state
        if m0 is None:
            raise ConfigError(f"{kind} preset needs problem.m0")
        u = field(spec["control"], grid, True)
        m = solve_state(StateProblem(grid, m0, u, **(scheme or {})))
        if kind == "relaxation_final":
            return m[-1]
        return m if trajectory else m[-1]
    if kind == "texture":
        th = spec.get("theta0", 0.4) + spec.get("amp", 0.6) * (
            np.cos(spec.get("kx", 1) * np.pi * X / grid.Lx)
            * np.cos(spec.get("ky", 1) * np.pi * Y / grid.Ly))
        f = np.stack([np.sin(th), np.zeros_like(th), np.cos(th)])
    elif kind == "zero":
        f = np.zeros((3,) + grid.shape)
    elif kind == "constant":
        f = np.asarray(spec["value"], float).reshape(3, 1, 1) * np.ones(grid.shape)
    elif kind == "cosine":
        mode = (np.cos(spec.get("kx", 1) * np.pi * X / grid.Lx)
                * np.cos(spec.get("ky", 0) * np.pi * Y / grid.Ly))
        val = np.asarray(spec.get("value", [0, 0, 0]), float).reshape(3, 1, 1)
        off = np.asarray(spec.get("offset", [0, 0, 0]), float).reshape(3, 1, 1)
        kt = spec.get("kt", 0)
        if trajectory and kt:
            tt = np.cos(kt * np.pi * grid.t / grid.T)[:, None, None, None]
            out = off + val * mode * tt
            return renormalize(out) if unit else out
        f = off + val * mode
    else:  # pragma: no cover - guarded by validation
        raise ConfigError(f"unknown field kind {kind!r}")
    if unit:
        f = renormalize(f)
    if trajectory:
        return np.broadcast_to(f, (grid.nt + 1,) + f.shape).copy()
    return f


def build(cfg, grid=None):
    """Evaluate all problem fields for ``cfg`` on ``grid`` (default: the config grid)."""
    from .sensitivity import TargetData
    grid = make_grid(cfg) if grid is None else grid
    p = cfg["problem"]
    s = cfg["scheme"]
    m0 = field(p["m0"], grid, False, unit=True)
    u = field(p["u"], grid, True)
    scheme = {"warn_stability": s["warn_stability"]}
    targets = None
    if p["m_d"] is not None or p["m_omega"] is not None:
        m_d = (field(p["m_d"], grid, True, m0=m0, scheme=scheme) if p["m_d"] is not None
               else np.broadcast_to(m0, (grid.nt + 1,) + m0.shape).copy())
        m_om = (field(p["m_omega"], grid, False, unit=True, m0=m0, scheme=scheme)
                if p["m_omega"] is not None else m_d[-1].copy())
        targets = TargetData(m_d, m_om)
    return dict(grid=grid, m0=m0, u=u, targets=targets)
