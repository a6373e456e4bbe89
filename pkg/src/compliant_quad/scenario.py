"""Scenario description, presets and the flat key/value config format.

A scenario file is a list of ``key = value`` lines. Keys use dotted section
names (``explorer.d_step = 0.25``); ``#`` starts a comment. Vectors are
whitespace separated, polygons are ``x y; x y; ...`` and may be repeated.
Unknown keys are rejected with their line number.
"""

from __future__ import annotations

import copy
import math
from dataclasses import MISSING, dataclass, field, fields

import numpy as np

from .control import AdmittanceParams, PpidGains
from .estimator import FilterBank
from .explorer import ExplorerParams
from .mapper import MapParams
from .simcore import ArmParams, BodyParams, Environment


class ScenarioError(ValueError):
    pass


MISSIONS = ("EXPLORE_MAP", "STATIC_WRENCH", "COB", "HOVER")
COB_KINDS = ("AUTO", "NO_COLLISION", "COLLIDE_TO_STOP", "COLLIDE_TO_DECELERATE")


def _rect(x0, y0, x1, y1):
    return [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]


def _corridor():
    # one wall traversed from its south end: a shallow concave bend, a shallow
    # convex bend back to vertical and a square concave corner at the top
    dx = 0.6 * math.tan(math.radians(10.0))
    return [[(0.0, -0.5), (0.0, 1.0), (-dx, 1.6), (-dx, 2.4), (-3.5, 2.4), (-3.5, 3.0), (1.2, 3.0),
             (1.2, -0.5)]]


PRESETS = {
    "BOX_1220x1000": {
        "obstacles": [_rect(0.0, 0.0, 1.22, 1.0)],
        "start": (-0.8, 0.5, 0.0),
    },
    "CORRIDOR_CONCAVE_CONVEX": {
        "obstacles": _corridor(),
        "start": (-0.8, 0.0, 0.0),
    },
    "WALL_PUSH": {
        "obstacles": [_rect(1.0, -2.0, 1.3, 2.0)],
        # guards just touching the wall face
        "start": (0.79, 0.0, 0.0),
    },
    "PULLEY_COM": {
        "obstacles": [],
        "start": (0.0, 0.0, 0.0),
        "external_force": (0.0, 0.0, 0.15 * 9.81),
    },
    "COB_WALL": {
        "obstacles": [_rect(3.0, -2.0, 3.3, 2.0)],
        "start": (0.0, 0.0, 0.0),
    },
}


@dataclass
class CobSpec:
    kind: str = "AUTO"
    goal: float = 2.79
    wall: float = 2.79
    a_max: float = 2.0
    v_max: float = 2.0
    e: float = 0.09
    c: float = 0.5
    settle_time: float = 6.0


@dataclass
class Scenario:
    name: str = "unnamed"
    environment: str = "BOX_1220x1000"
    polygons: list = None
    mission: str = "EXPLORE_MAP"
    duration: float = 180.0
    seed: int = 0
    start: tuple = None
    altitude: float = 0.7
    yaw0: float = 0.0
    physics_rate: float = 500.0
    control_rate: float = 100.0
    estimator_rate: float = 50.0
    map_rate: float = 30.0
    force: np.ndarray = field(default_factory=lambda: np.array([-1.0, 0.0, 0.0]))
    target: tuple = None
    external_force: np.ndarray = None
    external_start: float = 0.0
    accel_std: float = 0.05
    theta_std: float = 0.0
    pose_std: float = 0.0
    force_ff_gain: float = 1.0
    stop_on_loop: bool = True
    loop_min_travel: float = 2.0
    body: BodyParams = field(default_factory=BodyParams)
    arm: ArmParams = field(default_factory=ArmParams)
    env: dict = field(default_factory=dict)
    filters: FilterBank = field(default_factory=FilterBank)
    gains: PpidGains = field(default_factory=PpidGains)
    admittance: AdmittanceParams = field(default_factory=AdmittanceParams)
    explorer: ExplorerParams = field(default_factory=ExplorerParams)
    mapping: MapParams = field(default_factory=MapParams)
    cob: CobSpec = field(default_factory=CobSpec)
    source_text: str = ""

    def validate(self) -> "Scenario":
        if not self.physics_rate >= self.control_rate >= self.estimator_rate > 0:
            raise ScenarioError("rates must satisfy physics >= control >= estimator > 0")
        for name, r in (("control", self.control_rate), ("estimator", self.estimator_rate)):
            ratio = self.physics_rate / r
            if abs(ratio - round(ratio)) > 1e-9:
                raise ScenarioError(f"{name} rate must divide the physics rate")
        if self.map_rate <= 0 or self.map_rate > self.control_rate:
            raise ScenarioError("map rate must lie in (0, control rate]")
        if self.duration <= 0:
            raise ScenarioError("duration must be positive")
        if self.mission not in MISSIONS:
            raise ScenarioError(f"unknown mission {self.mission!r}")
        if self.polygons is None and self.environment not in PRESETS:
            raise ScenarioError(f"unknown environment preset {self.environment!r}")
        if self.cob.kind not in COB_KINDS:
            raise ScenarioError(f"unknown cob.kind {self.cob.kind!r}")
        if abs(self.filters.rate - self.estimator_rate) > 1e-12:
            self.filters = FilterBank(**{**_asdict(self.filters), "rate": self.estimator_rate})
        return self

    def make_environment(self) -> Environment:
        obstacles = self.polygons if self.polygons is not None else PRESETS[self.environment]["obstacles"]
        return Environment(obstacles=copy.deepcopy(obstacles), **self.env)

    def start_pose(self) -> tuple:
        if self.start is not None:
            x, y = self.start[0], self.start[1]
        elif self.polygons is None:
            x, y = PRESETS[self.environment]["start"][:2]
        else:
            x, y = 0.0, 0.0
        return np.array([x, y, -self.altitude]), self.yaw0

    def constant_force(self) -> np.ndarray:
        if self.external_force is not None:
            return np.asarray(self.external_force, dtype=float)
        if self.polygons is None and "external_force" in PRESETS.get(self.environment, {}):
            return np.array(PRESETS[self.environment]["external_force"], dtype=float)
        return np.zeros(3)


def _asdict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


# --- config parsing -----------------------------------------------------------


def _float(s):
    return float(s)


def _int(s):
    return int(s)


def _bool(s):
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _vec(n):
    def parse(s):
        v = np.array([float(t) for t in s.replace(",", " ").split()])
        if len(v) != n:
            raise ValueError(f"expected {n} numbers, got {len(v)}")
        return v
    return parse


def _polygon(s):
    pts = []
    for chunk in s.split(";"):
        if chunk.strip():
            xy = [float(t) for t in chunk.replace(",", " ").split()]
            if len(xy) != 2:
                raise ValueError("polygon vertices need two coordinates")
            pts.append(tuple(xy))
    if len(pts) < 3:
        raise ValueError("polygon needs at least three vertices")
    return pts


def _word(s):
    return s.strip()


# key -> (parser, section attribute or None, field name)
_TOP = {
    "name": (_word, None, "name"),
    "environment": (_word, None, "environment"),
    "mission": (lambda s: s.strip().upper(), None, "mission"),
    "duration": (_float, None, "duration"),
    "seed": (_int, None, "seed"),
    "start.x": (_float, None, "start_x"),
    "start.y": (_float, None, "start_y"),
    "start.altitude": (_float, None, "altitude"),
    "start.yaw": (_float, None, "yaw0"),
    "rates.physics": (_float, None, "physics_rate"),
    "rates.control": (_float, None, "control_rate"),
    "rates.estimator": (_float, None, "estimator_rate"),
    "rates.map": (_float, None, "map_rate"),
    "mission.force": (_vec(3), None, "force"),
    "mission.target": (_vec(2), None, "target"),
    "mission.stop_on_loop": (_bool, None, "stop_on_loop"),
    "mission.force_ff_gain": (_float, None, "force_ff_gain"),
    "mission.loop_min_travel": (_float, None, "loop_min_travel"),
    "external.force": (_vec(3), None, "external_force"),
    "external.start": (_float, None, "external_start"),
    "noise.accel_std": (_float, None, "accel_std"),
    "noise.theta_std": (_float, None, "theta_std"),
    "noise.pose_std": (_float, None, "pose_std"),
}

_SECTIONS = {
    "body": ("body", BodyParams),
    "arm": ("arm", ArmParams),
    "filter": ("filters", FilterBank),
    "gains": ("gains", PpidGains),
    "admittance": ("admittance", AdmittanceParams),
    "explorer": ("explorer", ExplorerParams),
    "map": ("mapping", MapParams),
    "cob": ("cob", CobSpec),
}

_ENV_KEYS = {"wall_stiffness", "wall_damping", "mu_c", "e", "mu_t", "v_impulse"}


def schema() -> list:
    """Every accepted key, for documentation and error messages."""
    keys = sorted(_TOP) + ["environment.polygon"] + [f"environment.{k}" for k in sorted(_ENV_KEYS)]
    for sec, (_, cls) in _SECTIONS.items():
        keys += [f"{sec}.{f.name}" for f in fields(cls) if not f.name.startswith("_")]
    return keys


def _section_value(cls, name: str, text: str):
    f = {f.name: f for f in fields(cls)}.get(name)
    if f is None or name.startswith("_"):
        raise KeyError(name)
    if f.default is not MISSING:
        default = f.default
    elif f.default_factory is not MISSING:
        default = f.default_factory()
    else:
        default = None
    if isinstance(default, bool):
        return _bool(text)
    if isinstance(default, int) and not isinstance(default, bool):
        return _int(text)
    if isinstance(default, np.ndarray):
        v = np.array([float(t) for t in text.replace(",", " ").split()])
        if v.size not in (1, default.size) and not (default.size == 4 and v.size == 16):
            raise ValueError(f"expected {default.size} numbers")
        return v if v.size != 1 else np.full(default.shape, v[0])
    if isinstance(default, tuple):
        return tuple(float(t) for t in text.replace(",", " ").split())
    if isinstance(default, str):
        return text.strip().upper()
    return _float(text)


def parse_scenario(text: str, source: str = "<string>", overrides=()) -> Scenario:
    top = {}
    sections = {sec: {} for sec in _SECTIONS}
    env = {}
    polygons = None
    lines = list(enumerate(text.splitlines(), start=1))
    lines += [(f"override {i + 1}", o) for i, o in enumerate(overrides)]
    for lineno, raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}" if isinstance(lineno, int) else f"{source} ({lineno})"
        if "=" not in line:
            raise ScenarioError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in _TOP:
                parser, _, attr = _TOP[key]
                top[attr] = parser(value)
            elif key == "environment.polygon":
                polygons = (polygons or []) + [_polygon(value)]
            elif key.startswith("environment.") and key.split(".", 1)[1] in _ENV_KEYS:
                env[key.split(".", 1)[1]] = _float(value)
            elif "." in key and key.split(".", 1)[0] in _SECTIONS:
                sec, name = key.split(".", 1)
                sections[sec][name] = _section_value(_SECTIONS[sec][1], name, value)
            else:
                raise KeyError(key)
        except KeyError:
            raise ScenarioError(f"{where}: unknown key {key!r}") from None
        except ValueError as exc:
            raise ScenarioError(f"{where}: bad value for {key!r}: {exc}") from None

    sc = Scenario()
    for attr in ("name", "environment", "mission", "duration", "seed", "altitude", "yaw0", "physics_rate",
                 "control_rate", "estimator_rate", "map_rate", "force", "force_ff_gain", "stop_on_loop", "loop_min_travel",
                 "external_force", "external_start", "accel_std", "theta_std", "pose_std"):
        if attr in top:
            setattr(sc, attr, top[attr])
    if "target" in top:
        sc.target = tuple(top["target"])
    if "start_x" in top or "start_y" in top:
        base = sc.start_pose()[0]
        sc.start = (top.get("start_x", base[0]), top.get("start_y", base[1]))
    sc.polygons = polygons
    sc.env = env
    for sec, (attr, cls) in _SECTIONS.items():
        if sections[sec]:
            try:
                setattr(sc, attr, cls(**{**_asdict(getattr(sc, attr)), **sections[sec]}))
            except (ValueError, TypeError) as exc:
                raise ScenarioError(f"{source}: [{sec}] {exc}") from None
    if "rate" not in sections["filter"]:
        sc.filters.rate = sc.estimator_rate
    sc.source_text = text.rstrip("\n") + "\n" + "".join(f"{o}\n" for o in overrides)
    try:
        sc.validate()
        sc.make_environment()
    except ValueError as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    return sc


def load_scenario(path, overrides=()) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_scenario(text, str(path), overrides)
