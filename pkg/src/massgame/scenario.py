"""TOML scenario files: parsing, validation with line-anchored diagnostics."""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .density import GridDensity, mass
from .fields import (
    ClampRamp,
    ConfigurationError,
    Constant,
    ControlSetA,
    LinearWindow,
    check_admissible,
)
from .flow import IntegratorConfig
from .game import (
    CostSpec,
    PlayerDynamics,
    Scenario,
    SquaredMeanDistance,
    WindowMass,
    WindowOccupancy,
    ZeroRunning,
)

__all__ = ["ScenarioError", "LoadedScenario", "load_scenario", "parse_scenario", "build_field", "reference_scenario"]

REFERENCE_DIR = Path(__file__).parent / "scenarios"


class ScenarioError(ConfigurationError):
    """Invalid scenario file; carries the offending key path and line when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = ""
        if key:
            where += f"{key}: "
        if line:
            where = f"line {line}: " + where
        super().__init__(where + message)
        self.key = key
        self.line = line


@dataclass
class LoadedScenario:
    scenario: Scenario
    digest: str
    path: str
    notes: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    raw: dict = field(default_factory=dict)


def reference_scenario(name: str) -> Path:
    """Path of a shipped reference scenario (``example1`` or ``example2``)."""
    path = REFERENCE_DIR / f"{name}.toml"
    if not path.exists():
        raise FileNotFoundError(f"no reference scenario named {name!r}")
    return path


class _Locator:
    """Maps ``[section].key`` paths back to source lines for diagnostics."""

    def __init__(self, text: str):
        self.lines = text.splitlines()

    def find(self, section: str, key: str | None = None) -> int | None:
        head = re.compile(r"^\s*\[\s*" + re.escape(section) + r"\s*\]")
        start = None
        for i, ln in enumerate(self.lines):
            if head.match(ln):
                start = i
                break
        if start is None:
            return None
        if key is None:
            return start + 1
        pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
        inline = re.compile(r"\b" + re.escape(key) + r"\s*=")
        for i in range(start + 1, len(self.lines)):
            ln = self.lines[i]
            if re.match(r"^\s*\[", ln):
                break
            if pat.match(ln) or inline.search(ln):
                return i + 1
        return start + 1


def _num(value, key, loc, section, positive=False, nonneg=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioError(f"expected a finite number, got {value!r}", f"[{section}].{key}", loc.find(section, key.split(".")[0]))
    if positive and not value > 0:
        raise ScenarioError(f"must be positive, got {value}", f"[{section}].{key}", loc.find(section, key.split(".")[0]))
    if nonneg and value < 0:
        raise ScenarioError(f"must be non-negative, got {value}", f"[{section}].{key}", loc.find(section, key.split(".")[0]))
    return float(value)


def _vec(value, key, loc, section, dim=None, **kw):
    items = value if isinstance(value, list) else [value]
    out = [_num(v, key, loc, section, **kw) for v in items]
    if dim is not None and len(out) != dim:
        raise ScenarioError(f"expected {dim} entries, got {len(out)}", f"[{section}].{key}", loc.find(section, key.split(".")[0]))
    return out


def _require(table, key, section, loc):
    if key not in table:
        raise ScenarioError("missing required key", f"[{section}].{key}", loc.find(section))
    return table[key]


def build_field(spec: dict, where: str = "field"):
    """Field from an inline table such as ``{kind = "constant", v = 0.5, window = [[-3, 3]]}``."""
    kind = spec.get("kind")
    try:
        if kind == "constant":
            return Constant(spec["v"], spec["window"], spec.get("margin", 1.0))
        if kind == "linear_window":
            return LinearWindow(spec["lam"], spec["window"], spec.get("margin", 1.0))
        if kind == "clamp_ramp":
            return ClampRamp(spec["L"], spec["R"], spec["c"], spec.get("smooth", 0.0))
    except KeyError as exc:
        raise ConfigurationError(f"{where}: missing key {exc.args[0]!r}") from None
    raise ConfigurationError(f"{where}: unknown field kind {kind!r}")


def _density_fn(spec: dict, dim: int, key: str, loc):
    kind = spec.get("kind")
    get = lambda k: _require(spec, k, "mass", loc)
    if kind == "uniform":
        lo = np.asarray(_vec(get("lo"), "density.lo", loc, "mass", dim))
        hi = np.asarray(_vec(get("hi"), "density.hi", loc, "mass", dim))
        val = _num(spec.get("value", 1.0), "density.value", loc, "mass", positive=True)
        return lambda p: np.where(np.all((p >= lo) & (p <= hi), axis=1), val, 0.0)
    if kind == "hat":
        ctr = np.asarray(_vec(get("center"), "density.center", loc, "mass", dim))
        hw = np.asarray(_vec(get("half_width"), "density.half_width", loc, "mass", dim, positive=True))
        height = _num(spec.get("height", 1.0), "density.height", loc, "mass", positive=True)
        return lambda p: height * np.prod(np.clip(1.0 - np.abs(p - ctr) / hw, 0.0, None), axis=1)
    if kind == "gaussian-truncated":
        mu = np.asarray(_vec(get("mean"), "density.mean", loc, "mass", dim))
        sig = np.asarray(_vec(get("sigma"), "density.sigma", loc, "mass", dim, positive=True))
        lo = np.asarray(_vec(get("lo"), "density.lo", loc, "mass", dim))
        hi = np.asarray(_vec(get("hi"), "density.hi", loc, "mass", dim))
        inside = lambda p: np.all((p >= lo) & (p <= hi), axis=1)
        return lambda p: np.where(inside(p), np.exp(-0.5 * np.sum(((p - mu) / sig) ** 2, axis=1)), 0.0)
    if kind == "table":
        if dim != 1:
            raise ScenarioError("table densities are one-dimensional", "[mass].density.kind", loc.find("mass", "density"))
        pts = np.asarray(get("points"), dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or np.any(np.diff(pts[:, 0]) <= 0) or np.any(pts[:, 1] < 0):
            raise ScenarioError("points must be [[x, value], ...] with increasing x and values >= 0", "[mass].density.points", loc.find("mass", "density"))
        return lambda p: np.interp(p[:, 0], pts[:, 0], pts[:, 1], left=0.0, right=0.0)
    raise ScenarioError(f"unknown density kind {kind!r}", "[mass].density.kind", loc.find("mass", "density"))


def parse_scenario(text: str, path: str = "<string>", *, steps=None, grid_cells=None, substep=None) -> LoadedScenario:
    """Validate a scenario document; keyword overrides mirror the CLI flags."""
    loc = _Locator(text)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ScenarioError(f"parse error: {exc}", None, int(m.group(1)) if m else None) from None
    for sec in ("horizon", "player", "mass", "controls", "cost"):
        if sec not in doc:
            raise ScenarioError("missing section", f"[{sec}]")
    notes = []

    hz = doc["horizon"]
    T = _num(_require(hz, "T", "horizon", loc), "T", loc, "horizon", nonneg=True)
    N = _require(hz, "steps", "horizon", loc) if steps is None else steps
    if isinstance(N, bool) or not isinstance(N, int) or N < 0:
        raise ScenarioError(f"steps must be a non-negative integer, got {N!r}", "[horizon].steps", loc.find("horizon", "steps"))

    ms = doc["mass"]
    grid = _require(ms, "grid", "mass", loc)
    origin = _vec(_require(grid, "origin", "mass", loc), "grid.origin", loc, "mass")
    dim = len(origin)
    spacing = _vec(_require(grid, "spacing", "mass", loc), "grid.spacing", loc, "mass", dim, positive=True)
    extents = _require(grid, "extents", "mass", loc)
    extents = extents if isinstance(extents, list) else [extents]
    if len(extents) != dim or any(isinstance(n, bool) or not isinstance(n, int) or n < 3 for n in extents):
        raise ScenarioError("extents must list an integer >= 3 per axis", "[mass].grid.extents", loc.find("mass", "grid"))
    if grid_cells is not None:
        if grid_cells < 3:
            raise ScenarioError("grid override needs at least 3 cells", "--grid-cells")
        width = [h * n for h, n in zip(spacing, extents)]
        extents = [int(grid_cells)] * dim
        spacing = [w / grid_cells for w in width]
        notes.append(f"grid overridden to {grid_cells} cells per axis")
    fn = _density_fn(_require(ms, "density", "mass", loc), dim, "density", loc)
    try:
        m0 = GridDensity.from_function(fn, origin, spacing, extents)
    except ValueError as exc:
        raise ScenarioError(str(exc), "[mass].density", loc.find("mass", "density")) from None
    total = mass(m0)
    if not total > 0:
        raise ScenarioError("density has no mass on the grid", "[mass].density", loc.find("mass", "density"))

    cs = doc["cost"]
    terminal_spec = _require(cs, "terminal", "cost", loc)
    running_spec = cs.get("running", {"kind": "zero"})
    tkind = terminal_spec.get("kind")
    if tkind == "window-mass":
        terminal = WindowMass(_num(terminal_spec.get("r"), "terminal.r", loc, "cost", positive=True))
    elif tkind == "squared-mean-distance":
        terminal = SquaredMeanDistance()
    else:
        raise ScenarioError(f"unknown terminal cost {tkind!r}", "[cost].terminal.kind", loc.find("cost", "terminal"))
    rkind = running_spec.get("kind")
    if rkind == "zero":
        running = ZeroRunning()
    elif rkind == "window-occupancy":
        running = WindowOccupancy(_num(running_spec.get("r"), "running.r", loc, "cost", positive=True))
    else:
        raise ScenarioError(f"unknown running cost {rkind!r}", "[cost].running.kind", loc.find("cost", "running"))
    if isinstance(terminal, SquaredMeanDistance) and abs(total - 1.0) > 1e-12:
        m0 = m0.with_values(m0.values / total)
        notes.append(f"density normalized to unit mass (raw mass {total!r})")

    pl = doc["player"]
    c = _num(_require(pl, "c", "player", loc), "c", loc, "player", nonneg=True)
    x0 = _vec(_require(pl, "x0", "player", loc), "x0", loc, "player", dim)
    drift = None
    if "drift" in pl:
        try:
            drift = build_field(pl["drift"], "[player].drift")
        except ConfigurationError as exc:
            raise ScenarioError(str(exc), "[player].drift", loc.find("player", "drift")) from None
    dyn = PlayerDynamics(c, drift, dim)

    ct = doc["controls"]
    M = _num(_require(ct, "M", "controls", loc), "M", loc, "controls", positive=True)
    c1 = ct.get("c1")
    c1 = None if c1 is None else _num(c1, "c1", loc, "controls", positive=True)
    try:
        dictA = ControlSetA(c, _require(ct, "dictA", "controls", loc))
    except ConfigurationError as exc:
        raise ScenarioError(str(exc), "[controls].dictA", loc.find("controls", "dictA")) from None
    raw_b = _require(ct, "dictB", "controls", loc)
    if not isinstance(raw_b, list) or not raw_b:
        raise ScenarioError("dictB must be a non-empty list of fields", "[controls].dictB", loc.find("controls", "dictB"))
    dictB, verdicts = [], []
    for i, spec in enumerate(raw_b):
        try:
            f = build_field(spec, f"dictB[{i}]")
        except (ConfigurationError, ValueError) as exc:
            raise ScenarioError(str(exc), f"[controls].dictB[{i}]", loc.find("controls", "dictB")) from None
        if f.dim != dim:
            raise ScenarioError(f"field has dimension {f.dim}, grid has {dim}", f"[controls].dictB[{i}]", loc.find("controls", "dictB"))
        verdict = check_admissible(f, M, c1)
        verdicts.append({"index": i, "verdict": verdict.verdict, "violations": list(verdict.violations)})
        if verdict.verdict == "violation":
            raise ScenarioError(
                f"dictB[{i}] violates {'; '.join(verdict.violations)}", f"[controls].dictB[{i}]", loc.find("controls", "dictB")
            )
        dictB.append(f)

    integ = doc.get("integrator", {})
    if substep is not None:
        sub = substep
    elif "substep" in integ:
        sub = _num(integ["substep"], "substep", loc, "integrator", positive=True)
    else:
        sub = 1e-3 * T if T > 0 else 1e-3
    if not sub > 0:
        raise ScenarioError("substep must be positive", "[integrator].substep", loc.find("integrator", "substep"))

    try:
        sc = Scenario(
            T=T,
            steps=N,
            x0=x0[0] if dim == 1 else np.asarray(x0),
            m0=m0,
            dynamics=dyn,
            cost=CostSpec(running, terminal),
            dictA=dictA,
            dictB=tuple(dictB),
            integrator=IntegratorConfig(sub),
            M=M,
            c1=c1,
            name=str(doc.get("name", Path(path).stem)),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    digest = hashlib.sha256(text.encode()).hexdigest()
    return LoadedScenario(sc, digest, str(path), notes, verdicts, doc)


def load_scenario(path, **overrides) -> LoadedScenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file {path} not found")
    return parse_scenario(path.read_text(), str(path), **overrides)
