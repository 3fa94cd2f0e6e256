"""Run configuration: a sectioned ``key = value`` text format.

Grammar::

    file     := (blank | comment | section | entry)*
    comment  := ('#' | ';') text
    section  := '[' name ']'
    entry    := key '=' value        (inside a section)

Values are typed by the schema below; lists are comma separated and
booleans are ``true``/``false``.  Every error carries the offending key and
its line number.  Relative file paths resolve against the config's folder.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import ControlProblem, CostSpec
from .exceptions import ConfigError
from .grid import Grid, build_grid
from .potential import Potential, check_compatibility, from_spec
from .projection import ControlBox
from .state import SolverConfig, as_control, solve_state

_REQUIRED = object()


def _float(text):
    return float(text)


def _int(text):
    return int(text)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _str(text):
    return text


SCHEMA = {
    "grid": {"mode": (_str, "1d"), "n": (_int, 17)},
    "potential": {
        "kind": (_str, "regular"),
        "c": (_float, 1.0),
        "coefficients": (_floats, None),
        "kind_gamma": (_str, None),
        "c_gamma": (_float, None),
        "coefficients_gamma": (_floats, None),
        "check_compatibility": (_bool, False),
        "compatibility_cap": (_float, 10.0),
    },
    "time": {"dt": (_float, _REQUIRED), "T": (_float, _REQUIRED), "tau": (_float, 0.0)},
    "initial": {
        "profile": (_str, "cosine"),
        "amplitude": (_float, 0.2),
        "mean": (_float, 0.0),
        "seed": (_int, 0),
    },
    "cost": {
        "b_q": (_float, 1.0),
        "b_sigma": (_float, 1.0),
        "b_0": (_float, 1e-3),
        "target": (_str, "self"),
        "target_file": (_str, None),
        "control_file": (_str, None),
        "control_amplitude": (_float, 0.5),
    },
    "box": {"u_min": (_float, -1.0), "u_max": (_float, 1.0), "m_0": (_float, 5.0)},
    "optimizer": {"rtol": (_float, 1e-8), "max_iter": (_int, 300), "anchor": (_bool, True)},
    "tau_study": {"tau_list": (_floats, [1e-1, 1e-2, 1e-3, 0.0])},
    "output": {"directory": (_str, "out"), "snapshot_stride": (_int, 0), "seed": (_int, 0)},
}

PROFILES = ("constant", "cosine", "random")


@dataclass
class RunConfig:
    """Parsed and validated configuration.

    ``values[section][key]`` holds typed values with defaults filled in;
    ``lines`` maps ``"section.key"`` to the source line (absent for defaults).
    """

    values: dict
    lines: dict = field(default_factory=dict)
    text: str = ""
    base_dir: Path = field(default_factory=Path)

    def __getitem__(self, section):
        return self.values[section]

    def error(self, key: str, message: str) -> ConfigError:
        return ConfigError(f"{key}: {message}", key=key, line=self.lines.get(key))

    def with_seed(self, seed: int) -> "RunConfig":
        values = {s: dict(v) for s, v in self.values.items()}
        values["output"]["seed"] = int(seed)
        return dataclasses.replace(self, values=values)

    def path(self, key: str) -> Path | None:
        section, name = key.split(".")
        raw = self.values[section][name]
        if raw is None:
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    # -- builders ----------------------------------------------------------
    def grid(self) -> Grid:
        g = self["grid"]
        return build_grid(g["mode"], g["n"])

    def potentials(self) -> tuple[Potential, Potential]:
        p = self["potential"]
        f = from_spec(p["kind"], c=p["c"], coefficients=p["coefficients"])
        kind_g = p["kind_gamma"] or p["kind"]
        c_g = p["c"] if p["c_gamma"] is None else p["c_gamma"]
        coef_g = p["coefficients"] if p["coefficients_gamma"] is None else p["coefficients_gamma"]
        return f, from_spec(kind_g, c=c_g, coefficients=coef_g)

    def solver_config(self) -> SolverConfig:
        t = self["time"]
        return SolverConfig(dt=t["dt"], T=t["T"], tau=t["tau"])

    def box(self) -> ControlBox:
        b = self["box"]
        return ControlBox(b["u_min"], b["u_max"], b["m_0"])

    def initial_state(self, grid: Grid) -> np.ndarray:
        ini = self["initial"]
        x = grid.coords[:, 0]
        if ini["profile"] == "constant":
            y0 = np.full(grid.bulk_count, ini["mean"])
        elif ini["profile"] == "cosine":
            y0 = ini["mean"] + ini["amplitude"] * np.cos(np.pi * x)
        else:
            rng = np.random.default_rng(ini["seed"])
            noise = rng.uniform(-1.0, 1.0, grid.bulk_count)
            noise -= grid.bulk_weights @ noise / grid.volume
            y0 = ini["mean"] + ini["amplitude"] * noise / max(1.0, np.abs(noise).max())
        return y0

    def reference_control(self, grid: Grid) -> np.ndarray:
        """Control that generates self-made targets: from file or a smooth default."""
        cfg = self.solver_config()
        path = self.path("cost.control_file")
        if path is not None:
            u = _load_array(path, "u")
            return as_control(u, cfg.n_steps, grid)
        t = cfg.times[:, None]
        xb = grid.coords[grid.boundary_index, 0][None, :]
        return self["cost"]["control_amplitude"] * np.sin(np.pi * t / cfg.T) * np.cos(np.pi * xb)

    def problem(self) -> ControlProblem:
        grid = self.grid()
        f, fg = self.potentials()
        cfg = self.solver_config()
        y0 = self.initial_state(grid)
        c = self["cost"]
        if c["target"] == "file":
            data = np.load(self.path("cost.target_file"))
            z_q, z_sigma = data["z_q"], data["z_sigma"]
        else:
            traj = solve_state(y0, self.reference_control(grid), cfg, grid, f, fg)
            z_q, z_sigma = traj.y, traj.y_gamma
        spec = CostSpec(c["b_q"], c["b_sigma"], c["b_0"], z_q=z_q, z_sigma=z_sigma)
        return ControlProblem(grid, f, fg, y0, cfg, spec, self.box())


def _load_array(path: Path, key: str) -> np.ndarray:
    if path.suffix == ".npz":
        return np.load(path)[key]
    if path.suffix == ".npy":
        return np.load(path)
    # CSV written by io.write_control: first column is time
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)[:, 1:]


def parse_text(text: str, base_dir=".") -> RunConfig:
    """Parse config text; see the module docstring for the grammar."""
    raw: dict = {}
    lines: dict = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"malformed section header {stripped!r}", line=lineno)
            section = stripped[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", key=section, line=lineno)
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", line=lineno)
        if section is None:
            raise ConfigError("entry before any section header", line=lineno)
        key, value = (part.strip() for part in stripped.split("=", 1))
        full = f"{section}.{key}"
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {full}", key=full, line=lineno)
        if full in lines:
            raise ConfigError(f"duplicate key {full} (first on line {lines[full]})", key=full, line=lineno)
        conv = SCHEMA[section][key][0]
        try:
            raw[full] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{full}: cannot read {value!r} ({exc})", key=full, line=lineno) from exc
        lines[full] = lineno
    values = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (_, default) in keys.items():
            full = f"{sec}.{key}"
            if full in raw:
                values[sec][key] = raw[full]
            elif default is _REQUIRED:
                raise ConfigError(f"missing required key {full}", key=full)
            else:
                values[sec][key] = list(default) if isinstance(default, list) else default
    cfg = RunConfig(values=values, lines=lines, text=text, base_dir=Path(base_dir))
    validate(cfg)
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text, base_dir=path.parent)


def validate(cfg: RunConfig) -> None:
    """Check cross-field invariants; raises :class:`ConfigError` naming the key."""
    g = cfg["grid"]
    if g["mode"] not in ("1d", "2d"):
        raise cfg.error("grid.mode", f"must be 1d or 2d, got {g['mode']!r}")
    if g["n"] < 3:
        raise cfg.error("grid.n", f"needs at least 3 vertices per side, got {g['n']}")
    p = cfg["potential"]
    try:
        f, fg = cfg.potentials()
    except (ValueError, KeyError, TypeError) as exc:
        raise cfg.error("potential.kind", str(exc)) from exc
    if p["check_compatibility"]:
        try:
            rep = check_compatibility(f, fg, cap=p["compatibility_cap"])
        except ValueError as exc:
            raise cfg.error("potential.kind_gamma", str(exc)) from exc
        if not rep.holds:
            raise cfg.error(
                "potential.check_compatibility",
                f"boundary potential does not dominate the bulk one (C = {rep.C:.3g})",
            )
    t = cfg["time"]
    for key in ("dt", "T"):
        if not t[key] > 0:
            raise cfg.error(f"time.{key}", "must be positive")
    if t["tau"] < 0:
        raise cfg.error("time.tau", "must be nonnegative")
    ratio = t["T"] / t["dt"]
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise cfg.error("time.dt", f"T/dt = {ratio} is not an integer")
    ini = cfg["initial"]
    if ini["profile"] not in PROFILES:
        raise cfg.error("initial.profile", f"must be one of {PROFILES}")
    lo, hi = max(f.r_minus, fg.r_minus), min(f.r_plus, fg.r_plus)
    if not lo < ini["mean"] < hi:
        raise cfg.error("initial.mean", f"{ini['mean']} lies outside the potential domain ({lo}, {hi})")
    spread = 0.0 if ini["profile"] == "constant" else abs(ini["amplitude"])
    if not (lo < ini["mean"] - spread and ini["mean"] + spread < hi):
        raise cfg.error("initial.amplitude", f"profile leaves the potential domain ({lo}, {hi})")
    c = cfg["cost"]
    for key in ("b_q", "b_sigma", "b_0"):
        if c[key] < 0:
            raise cfg.error(f"cost.{key}", "must be nonnegative")
    if c["b_q"] + c["b_sigma"] + c["b_0"] <= 0:
        raise cfg.error("cost.b_q", "at least one cost weight must be positive")
    if c["target"] not in ("self", "file"):
        raise cfg.error("cost.target", "must be self or file")
    for key, needed in (("target_file", c["target"] == "file"), ("control_file", False)):
        path = cfg.path(f"cost.{key}")
        if path is None:
            if needed:
                raise cfg.error(f"cost.{key}", "required when cost.target = file")
        elif not path.is_file():
            raise cfg.error(f"cost.{key}", f"file not found: {path}")
    b = cfg["box"]
    if b["u_min"] > b["u_max"]:
        raise cfg.error("box.u_min", f"infeasible box: u_min = {b['u_min']} exceeds u_max = {b['u_max']}")
    if not b["m_0"] > 0:
        raise cfg.error("box.m_0", "must be positive")
    o = cfg["optimizer"]
    if not o["rtol"] > 0:
        raise cfg.error("optimizer.rtol", "must be positive")
    if o["max_iter"] < 0:
        raise cfg.error("optimizer.max_iter", "must be nonnegative")
    taus = cfg["tau_study"]["tau_list"]
    if not taus or taus[-1] != 0.0 or any(b_ >= a for a, b_ in zip(taus, taus[1:])) or min(taus) < 0:
        raise cfg.error("tau_study.tau_list", "must be strictly decreasing, nonnegative and end at 0")
    out = cfg["output"]
    if out["snapshot_stride"] < 0:
        raise cfg.error("output.snapshot_stride", "must be nonnegative")
    if not math.isfinite(t["dt"]):
        raise cfg.error("time.dt", "must be finite")
