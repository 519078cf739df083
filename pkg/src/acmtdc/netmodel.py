"""Network data model, JSON case ingestion, per-unit conversion and validation.

Powers are carried in MW/MVAr throughout (field suffixes say so); bus voltages,
branch impedances and DC conductances are carried in per unit once a case has
passed through :func:`to_per_unit`.  Converter loss coefficients stay in the
physical units of the manufacturer data (MW, kV = MW/kA, ohm = MW/kA^2) and
are converted on demand with :meth:`ConverterStation.loss_coefficients_pu`.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Hashable

from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import MissingBase, ParseError, ValidationError

SECTIONS = ("ac_buses", "ac_branches", "generators", "dc_buses", "dc_branches",
            "converters", "wind_farms")

# accepted unit tags per section; the first entry is the normalised one
UNIT_TAGS = {
    "ac_buses": ("pu", "kV"),
    "ac_branches": ("pu", "ohm"),
    "dc_buses": ("pu", "kV"),
    "dc_branches": ("pu", "S"),
}


class ControlMode(str, enum.Enum):
    ACTIVE_POWER = "ActivePower"
    DC_VOLTAGE = "DcVoltage"
    ADAPTIVE_VOLTAGE_DROOP = "AdaptiveVoltageDroop"
    PROPOSED_DROOP = "ProposedDroop"
    VF_ISLAND = "VfIsland"


@dataclass(frozen=True)
class AcBus:
    id: Hashable
    area: str
    voltage_pu: float = 1.0
    angle_rad: float = 0.0
    vmin_pu: float = 0.9
    vmax_pu: float = 1.1
    amin_rad: float = -math.inf
    amax_rad: float = math.inf
    load_p_mw: float = 0.0
    load_q_mvar: float = 0.0
    base_kv: float | None = None


@dataclass(frozen=True)
class AcBranch:
    from_bus: Hashable
    to_bus: Hashable
    resistance_pu: float
    reactance_pu: float
    shunt_susceptance_pu: float = 0.0
    rating_mva: float | None = None
    id: Hashable | None = None


@dataclass(frozen=True)
class Generator:
    id: Hashable
    bus: Hashable
    pmin_mw: float
    pmax_mw: float
    qmin_mvar: float
    qmax_mvar: float
    cost_alpha: float = 0.0
    cost_beta: float = 0.0
    cost_gamma: float = 0.0
    governor_droop_pu: float = 0.05


@dataclass(frozen=True)
class DcBus:
    id: Hashable
    vdc_pu: float = 1.0
    vdc_min_pu: float = 0.9
    vdc_max_pu: float = 1.1


@dataclass(frozen=True)
class DcBranch:
    id: Hashable
    from_bus: Hashable
    to_bus: Hashable
    conductance_pu: float
    in_service: bool = True


@dataclass(frozen=True)
class ConverterStation:
    id: Hashable
    ac_bus: Hashable
    dc_bus: Hashable
    rated_mva: float
    loss_a_mw: float = 0.0
    loss_b_kv: float = 0.0
    loss_c_ohm: float = 0.0
    control_mode: ControlMode = ControlMode.ACTIVE_POWER
    pmin_mw: float = -math.inf
    pmax_mw: float = math.inf

    def loss_coefficients_pu(self, base_mva: float, base_kv: float) -> tuple[float, float, float]:
        """(a, b, c) such that loss_pu = a + b*i_pu + c*i_pu**2 with i_pu = |S_pu| / U_pu.

        The current base is S_base / (sqrt(3) V_base) in kA, so b scales with
        I_base/S_base and c with I_base**2/S_base = 1/(3 Z_base).
        """
        i_base_ka = base_mva / (math.sqrt(3.0) * base_kv)
        return (self.loss_a_mw / base_mva,
                self.loss_b_kv * i_base_ka / base_mva,
                self.loss_c_ohm * i_base_ka ** 2 / base_mva)


@dataclass(frozen=True)
class WindFarm:
    id: Hashable
    converter: Hashable
    rated_mw: float
    cut_in_mps: float = 3.0
    rated_mps: float = 12.0
    cut_out_mps: float = 25.0
    speed_scale: float = 1.0


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    ac_buses: tuple[AcBus, ...]
    ac_branches: tuple[AcBranch, ...]
    generators: tuple[Generator, ...]
    dc_buses: tuple[DcBus, ...]
    dc_branches: tuple[DcBranch, ...]
    converters: tuple[ConverterStation, ...]
    wind_farms: tuple[WindFarm, ...] = ()
    metadata: dict = field(default_factory=dict, compare=True)
    units: dict = field(default_factory=dict)

    # lookups ---------------------------------------------------------------
    def bus(self, bus_id) -> AcBus:
        for b in self.ac_buses:
            if b.id == bus_id:
                return b
        raise KeyError(bus_id)

    def converter(self, conv_id) -> ConverterStation:
        for c in self.converters:
            if c.id == conv_id:
                return c
        raise KeyError(conv_id)

    def dc_branch(self, branch_id) -> DcBranch:
        for br in self.dc_branches:
            if br.id == branch_id:
                return br
        raise KeyError(branch_id)

    def wind_farm(self, farm_id) -> WindFarm:
        for w in self.wind_farms:
            if w.id == farm_id:
                return w
        raise KeyError(farm_id)

    @property
    def areas(self) -> list[str]:
        seen: list[str] = []
        for b in self.ac_buses:
            if b.area not in seen:
                seen.append(b.area)
        return seen

    def area_buses(self, area: str) -> list[AcBus]:
        return [b for b in self.ac_buses if b.area == area]

    def area_info(self, area: str) -> dict:
        return self.metadata.get("areas", {}).get(area, {})

    def f_nom_hz(self, area: str) -> float:
        return float(self.area_info(area).get("f_nom_hz", 50.0))

    def bus_base_kv(self, bus_id) -> float:
        bus = self.bus(bus_id)
        kv = bus.base_kv if bus.base_kv is not None else self.area_info(bus.area).get("base_kv")
        if kv is None:
            raise MissingBase(f"no voltage base for AC bus {bus_id!r}")
        return float(kv)

    def converter_base_kv(self, conv_id) -> float:
        return self.bus_base_kv(self.converter(conv_id).ac_bus)

    # immutable edits --------------------------------------------------------
    def with_dc_branch_status(self, branch_id, in_service: bool) -> "NetworkCase":
        self.dc_branch(branch_id)
        branches = tuple(replace(br, in_service=in_service) if br.id == branch_id else br
                         for br in self.dc_branches)
        return replace(self, dc_branches=branches)

    def with_converter_modes(self, modes: dict) -> "NetworkCase":
        convs = tuple(replace(c, control_mode=ControlMode(modes[c.id])) if c.id in modes else c
                      for c in self.converters)
        return replace(self, converters=convs)


def mw_to_pu(value_mw: float, base_mva: float) -> float:
    return value_mw / base_mva


def kv_to_pu(value_kv: float, base_kv: float) -> float:
    return value_kv / base_kv


# ---------------------------------------------------------------------------
# per-unit conversion
# ---------------------------------------------------------------------------

def to_per_unit(case: NetworkCase) -> NetworkCase:
    """Convert every section flagged in physical units to per unit.

    Sections already flagged ``pu`` are left alone, so the function is idempotent.
    DC quantities use the pole-to-ground voltage base ``metadata["dc_base_kv"]``;
    the bipole is represented as a symmetric monopole equivalent so the DC
    impedance base is ``2 * V_pole**2 / S_base``.
    """
    units = {s: case.units.get(s, "pu") for s in UNIT_TAGS}
    for section, tag in units.items():
        if tag not in UNIT_TAGS[section]:
            raise ValidationError(f"unknown unit tag {tag!r} for section {section}", section)
    out = case

    if units["ac_buses"] == "kV":
        buses = []
        for b in out.ac_buses:
            kv = b.base_kv if b.base_kv is not None else out.area_info(b.area).get("base_kv")
            if kv is None:
                raise MissingBase(f"no voltage base for AC bus {b.id!r}")
            buses.append(replace(b, voltage_pu=b.voltage_pu / kv, vmin_pu=b.vmin_pu / kv,
                                 vmax_pu=b.vmax_pu / kv))
        out = replace(out, ac_buses=tuple(buses))

    if units["ac_branches"] == "ohm":
        branches = []
        for br in out.ac_branches:
            try:
                kv = out.bus_base_kv(br.from_bus)
            except KeyError:
                raise ValidationError(f"branch references unknown bus {br.from_bus!r}",
                                      br.from_bus) from None
            z_base = kv ** 2 / out.base_mva
            branches.append(replace(br, resistance_pu=br.resistance_pu / z_base,
                                    reactance_pu=br.reactance_pu / z_base,
                                    shunt_susceptance_pu=br.shunt_susceptance_pu * z_base))
        out = replace(out, ac_branches=tuple(branches))

    if units["dc_buses"] == "kV" or units["dc_branches"] == "S":
        dc_kv = out.metadata.get("dc_base_kv")
        if dc_kv is None:
            raise MissingBase("metadata.dc_base_kv is required for DC sections in physical units")
        dc_kv = float(dc_kv)
        if units["dc_buses"] == "kV":
            out = replace(out, dc_buses=tuple(
                replace(b, vdc_pu=b.vdc_pu / dc_kv, vdc_min_pu=b.vdc_min_pu / dc_kv,
                        vdc_max_pu=b.vdc_max_pu / dc_kv) for b in out.dc_buses))
        if units["dc_branches"] == "S":
            z_base = 2.0 * dc_kv ** 2 / out.base_mva
            out = replace(out, dc_branches=tuple(
                replace(br, conductance_pu=br.conductance_pu * z_base) for br in out.dc_branches))

    return replace(out, units={s: "pu" for s in UNIT_TAGS})


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _unique(items, what):
    seen = set()
    for it in items:
        if it.id in seen:
            raise ValidationError(f"duplicate {what} id {it.id!r}", it.id)
        seen.add(it.id)
    return seen


def _connected(nodes: list, edges: list[tuple]) -> list[list]:
    index = {n: i for i, n in enumerate(nodes)}
    if not nodes:
        return []
    rows = [index[a] for a, b in edges]
    cols = [index[b] for a, b in edges]
    adj = coo_matrix(([1] * len(edges), (rows, cols)), shape=(len(nodes), len(nodes)))
    n_comp, labels = connected_components(adj, directed=False)
    return [[nodes[i] for i in range(len(nodes)) if labels[i] == k] for k in range(n_comp)]


def dc_components(case: NetworkCase) -> list[list]:
    """Connected components of the DC graph over in-service branches."""
    nodes = [b.id for b in case.dc_buses]
    edges = [(br.from_bus, br.to_bus) for br in case.dc_branches if br.in_service]
    return _connected(nodes, edges)


def validate(case: NetworkCase, check_dc_connectivity: bool = True) -> NetworkCase:
    if not case.base_mva > 0:
        raise ValidationError("base_mva must be positive", "base_mva")

    ac_ids = _unique(case.ac_buses, "AC bus")
    dc_ids = _unique(case.dc_buses, "DC bus")
    _unique(case.generators, "generator")
    _unique(case.dc_branches, "DC branch")
    conv_ids = _unique(case.converters, "converter")
    _unique(case.wind_farms, "wind farm")

    area_of = {}
    for b in case.ac_buses:
        if not (0 < b.vmin_pu <= b.vmax_pu):
            raise ValidationError(f"AC bus {b.id!r}: need 0 < vmin <= vmax", b.id)
        if not b.amin_rad <= b.amax_rad:
            raise ValidationError(f"AC bus {b.id!r}: need amin <= amax", b.id)
        if not b.area:
            raise ValidationError(f"AC bus {b.id!r} has no area", b.id)
        area_of[b.id] = b.area

    for br in case.ac_branches:
        for end in (br.from_bus, br.to_bus):
            if end not in ac_ids:
                raise ValidationError(f"AC branch references unknown bus {end!r}", end)
        if br.from_bus == br.to_bus:
            raise ValidationError(f"AC branch {br.from_bus!r}-{br.to_bus!r} is a self loop", br.id)
        if br.reactance_pu == 0:
            raise ValidationError(f"AC branch {br.from_bus!r}-{br.to_bus!r} has zero reactance",
                                  br.id)
        if area_of[br.from_bus] != area_of[br.to_bus]:
            raise ValidationError(f"AC branch {br.from_bus!r}-{br.to_bus!r} spans two areas", br.id)

    for g in case.generators:
        if g.bus not in ac_ids:
            raise ValidationError(f"generator {g.id!r} references unknown bus {g.bus!r}", g.bus)
        if not g.pmin_mw <= g.pmax_mw:
            raise ValidationError(f"generator {g.id!r}: pmin > pmax", g.id)
        if not g.qmin_mvar <= g.qmax_mvar:
            raise ValidationError(f"generator {g.id!r}: qmin > qmax", g.id)
        if g.cost_alpha < 0:
            raise ValidationError(f"generator {g.id!r}: negative quadratic cost", g.id)

    for b in case.dc_buses:
        if not (0 < b.vdc_min_pu <= b.vdc_max_pu):
            raise ValidationError(f"DC bus {b.id!r}: need 0 < vdc_min <= vdc_max", b.id)

    for br in case.dc_branches:
        for end in (br.from_bus, br.to_bus):
            if end not in dc_ids:
                raise ValidationError(f"DC branch {br.id!r} references unknown DC bus {end!r}", end)
        if br.from_bus == br.to_bus:
            raise ValidationError(f"DC branch {br.id!r} is a self loop", br.id)
        if not br.conductance_pu > 0:
            raise ValidationError(f"DC branch {br.id!r}: conductance must be positive", br.id)

    used_dc = {}
    for c in case.converters:
        if c.ac_bus not in ac_ids:
            raise ValidationError(f"converter {c.id!r} references unknown AC bus {c.ac_bus!r}",
                                  c.ac_bus)
        if c.dc_bus not in dc_ids:
            raise ValidationError(f"converter {c.id!r} references unknown DC bus {c.dc_bus!r}",
                                  c.dc_bus)
        if c.dc_bus in used_dc:
            raise ValidationError(f"converters {used_dc[c.dc_bus]!r} and {c.id!r} share DC bus "
                                  f"{c.dc_bus!r}", c.dc_bus)
        used_dc[c.dc_bus] = c.id
        if not c.rated_mva > 0:
            raise ValidationError(f"converter {c.id!r}: rated_mva must be positive", c.id)
        if c.loss_a_mw < 0 or c.loss_c_ohm < 0:
            raise ValidationError(f"converter {c.id!r}: negative loss coefficient", c.id)
        if not c.pmin_mw <= c.pmax_mw:
            raise ValidationError(f"converter {c.id!r}: pmin > pmax", c.id)

    for w in case.wind_farms:
        if w.converter not in conv_ids:
            raise ValidationError(f"wind farm {w.id!r} references unknown converter "
                                  f"{w.converter!r}", w.converter)
        if not (0 <= w.cut_in_mps < w.rated_mps <= w.cut_out_mps):
            raise ValidationError(f"wind farm {w.id!r}: need cut_in < rated <= cut_out", w.id)

    for area in case.areas:
        nodes = [b.id for b in case.area_buses(area)]
        edges = [(br.from_bus, br.to_bus) for br in case.ac_branches if area_of[br.from_bus] == area]
        comps = _connected(nodes, edges)
        if len(comps) > 1:
            stray = sorted(comps, key=len)[0]
            raise ValidationError(f"AC area {area!r} is not connected (isolated: {stray})", stray[0])

    if check_dc_connectivity and case.dc_buses:
        comps = dc_components(case)
        if len(comps) > 1:
            raise ValidationError(f"DC grid is not connected: components {comps}", comps[1][0])
    return case


# ---------------------------------------------------------------------------
# (de)serialisation
# ---------------------------------------------------------------------------

_TYPES = {
    "ac_buses": AcBus,
    "ac_branches": AcBranch,
    "generators": Generator,
    "dc_buses": DcBus,
    "dc_branches": DcBranch,
    "converters": ConverterStation,
    "wind_farms": WindFarm,
}


def _build(cls, raw: dict, section: str, position: int):
    if not isinstance(raw, dict):
        raise ParseError(f"{section}[{position}] is not an object")
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ParseError(f"{section}[{position}]: unknown field(s) {sorted(unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in raw:
            continue
        v = raw[f.name]
        if v is None and f.name in ("amin_rad", "pmin_mw"):
            v = -math.inf
        elif v is None and f.name in ("amax_rad", "pmax_mw"):
            v = math.inf
        elif f.name == "control_mode":
            try:
                v = ControlMode(v)
            except ValueError:
                raise ParseError(f"{section}[{position}]: unknown control_mode {v!r}") from None
        kwargs[f.name] = v
    try:
        obj = cls(**kwargs)
    except TypeError as exc:
        raise ParseError(f"{section}[{position}]: {exc}") from None
    for f in fields(cls):
        v = getattr(obj, f.name)
        if f.type in ("float", "float | None") and v is not None and not isinstance(v, (int, float)):
            raise ParseError(f"{section}[{position}].{f.name} must be a number")
    return obj


def case_from_dict(data: dict) -> NetworkCase:
    if not isinstance(data, dict):
        raise ParseError("case root must be a JSON object")
    if "base_mva" not in data:
        raise ParseError("missing top-level key 'base_mva'")
    units = {}
    sections = {}
    for s in SECTIONS:
        raw = data.get(s, [])
        if isinstance(raw, dict):
            units[s] = raw.get("units", "pu")
            raw = raw.get("items", [])
        if not isinstance(raw, list):
            raise ParseError(f"section {s!r} must be a list or an object with 'items'")
        sections[s] = tuple(_build(_TYPES[s], r, s, i) for i, r in enumerate(raw))
    units.update(data.get("units", {}) or {})
    metadata = data.get("metadata", {}) or {}
    if not isinstance(metadata, dict):
        raise ParseError("metadata must be an object")
    try:
        base = float(data["base_mva"])
    except (TypeError, ValueError):
        raise ParseError("base_mva must be a number") from None
    return NetworkCase(base_mva=base, metadata=metadata, units=units, **sections)


def load_case(path) -> NetworkCase:
    """Read, convert to per unit and validate a JSON case file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    case = case_from_dict(data)
    return validate(to_per_unit(case))


def _encode(v: Any):
    if isinstance(v, float) and math.isinf(v):
        return None
    if isinstance(v, enum.Enum):
        return v.value
    return v


def case_to_dict(case: NetworkCase) -> dict:
    out: dict[str, Any] = {"base_mva": case.base_mva}
    for s in SECTIONS:
        out[s] = [{k: _encode(v) for k, v in asdict(item).items()} for item in getattr(case, s)]
    out["metadata"] = case.metadata
    out["units"] = dict(case.units)
    return out


def save_case(case: NetworkCase, path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=2), encoding="utf-8")


def bundled_case_path(name: str = "case4t.json") -> Path:
    return Path(__file__).with_name("data") / name


def load_bundled_case(name: str = "case4t.json") -> NetworkCase:
    return load_case(bundled_case_path(name))
