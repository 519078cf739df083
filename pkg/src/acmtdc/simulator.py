"""Quasi-dynamic AC/MTDC simulation with converter droop control.

Each onshore AC area is an aggregate swing mass with a first-order governor:

    2 H S d(df)/dt = P_mech - P_e - D S df          (df in pu of f_nom, powers in MW)
    tau_g dP_mech/dt = P_mech0 - P_mech - (S / R) df

with ``S`` the summed generator rating of the area and ``P_e`` the electrical
generation found by the area power flow.  Converters track their commanded
power through a first-order lag, except for the DC-voltage droop term which
acts within the step: the DC grid is solved with every droop converter
contributing its p(u) characteristic, and a DC-voltage-controlled converter
(if any) holding its bus voltage.  Offshore islands (V-f control) pass the
wind power straight through; their frequency is held at nominal.

Time stepping is explicit Euler at a fixed step.  Per step: area frequencies
and governors advance, converter commands are evaluated and lagged, the DC
grid is solved, each onshore area's power flow is solved with the new PCC
draws, and the state is recorded.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

from . import control
from .acpf import AreaPowerFlow
from .control import DroopSettings
from .converter import ac_to_dc_power, converter_loss, dc_to_ac_power, loss_derivative, reactor_current
from .dcgrid import solve_dc_network, solve_dc_with_characteristics
from .errors import (AcMtdcError, CascadingInfeasibility, DisconnectedGraph, MarginExhausted, NonConvergence,
                     ParseError, SingularJacobian, ValidationError)
from .netmodel import ControlMode, NetworkCase, dc_components, validate
from .opf import OpfProblem, SystemState, solve_opf

log = logging.getLogger(__name__)

STRATEGIES = {
    "ActivePower": (ControlMode.ACTIVE_POWER, ControlMode.DC_VOLTAGE),
    "DcVoltage": (ControlMode.DC_VOLTAGE, ControlMode.ACTIVE_POWER),
    "AdaptiveVoltageDroop": (ControlMode.ADAPTIVE_VOLTAGE_DROOP, ControlMode.ADAPTIVE_VOLTAGE_DROOP),
    "ProposedDroop": (ControlMode.PROPOSED_DROOP, ControlMode.PROPOSED_DROOP),
}
STRATEGY_ALIASES = {"1": "ActivePower", "2": "DcVoltage", "3": "AdaptiveVoltageDroop", "4": "ProposedDroop"}
FIXED_STRATEGIES = ("ActivePower", "DcVoltage")


def strategy_name(name) -> str:
    key = STRATEGY_ALIASES.get(str(name), str(name))
    if key not in STRATEGIES:
        raise ValueError(f"unknown strategy {name!r}; valid: {', '.join(STRATEGIES)}")
    return key


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AcAreaDynamics:
    area: str
    inertia_h_s: float = 4.0
    damping_pu: float = 1.0
    governor_droop_pu: float = 0.05
    governor_tau_s: float = 0.5
    f_nom_hz: float = 60.0

    def __post_init__(self):
        if not self.inertia_h_s > 0:
            raise ValidationError(f"inertia of area {self.area!r} must be positive", self.area)


@dataclass(frozen=True)
class SimConfig:
    dt_s: float = 0.01
    horizon_s: float = 10.0
    converter_tau_s: float = 0.05
    seeds: tuple = (0,)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_s / self.dt_s))


@dataclass(frozen=True)
class DroopDefaults:
    alpha_v: float = control.DEFAULT_ALPHA_V
    alpha_f: float = 0.02  # weak frequency term; see README
    delta_f_max_hz: float = control.DEFAULT_DELTA_F_MAX_HZ
    u_dc_max_pu: float = control.DEFAULT_U_DC_MAX_PU
    k_v: float | None = None
    k_f: float | None = None


@dataclass(frozen=True)
class LoadStep:
    bus: Hashable
    dp_mw: float
    dq_mvar: float = 0.0


@dataclass(frozen=True)
class DcLineOutage:
    branch: Hashable


@dataclass(frozen=True)
class WindActual:
    wind_mw: dict


@dataclass(frozen=True)
class ScenarioEvent:
    time_s: float
    kind: LoadStep | DcLineOutage | WindActual

    def __post_init__(self):
        if self.time_s < 0:
            raise ValidationError("event time must be non-negative", self.kind)


@dataclass
class Scenario:
    name: str = "scenario"
    strategy: str = "all"
    events: list = field(default_factory=list)
    sim: SimConfig = field(default_factory=SimConfig)
    dynamics: dict = field(default_factory=dict)  # area -> AcAreaDynamics
    droop: DroopDefaults = field(default_factory=DroopDefaults)
    wind_mw: dict = field(default_factory=dict)
    framework: dict = field(default_factory=dict)  # settings of the forecast loop, if any

    @property
    def strategies(self) -> list[str]:
        if self.strategy == "all":
            return list(STRATEGIES)
        return [strategy_name(self.strategy)]


def event_from_dict(d: dict) -> ScenarioEvent:
    d = dict(d)
    try:
        t = float(d.pop("time_s"))
        kind = d.pop("kind")
        if kind == "LoadStep":
            ev = LoadStep(d.pop("bus"), float(d.pop("dp_mw")), float(d.pop("dq_mvar", 0.0)))
        elif kind == "DcLineOutage":
            ev = DcLineOutage(d.pop("branch"))
        elif kind == "WindActual":
            ev = WindActual({k: float(v) for k, v in d.pop("wind_mw").items()})
        else:
            raise ParseError(f"unknown event kind {kind!r}")
    except KeyError as exc:
        raise ParseError(f"event is missing field {exc}") from None
    if d:
        raise ParseError(f"unknown event fields {sorted(d)}")
    return ScenarioEvent(t, ev)


def event_to_dict(ev: ScenarioEvent) -> dict:
    out = {"time_s": ev.time_s, "kind": type(ev.kind).__name__}
    out.update(asdict(ev.kind))
    return out


def scenario_from_dict(d: dict, case: NetworkCase | None = None) -> Scenario:
    known = {"name", "strategy", "events", "sim", "dynamics", "droop_defaults", "wind_mw", "description",
             "framework"}
    unknown = set(d) - known
    if unknown:
        raise ParseError(f"unknown scenario fields {sorted(unknown)}")
    sim = d.get("sim", {})
    try:
        sim_cfg = SimConfig(**{k: (tuple(v) if k == "seeds" else v) for k, v in sim.items()})
    except TypeError as exc:
        raise ParseError(f"bad sim settings: {exc}") from None
    dyn = {}
    for area, spec in d.get("dynamics", {}).items():
        spec = dict(spec)
        mapped = {"inertia_h_s": spec.pop("H", spec.pop("inertia_h_s", 4.0)),
                  "damping_pu": spec.pop("D", spec.pop("damping_pu", 1.0)),
                  "governor_droop_pu": spec.pop("droop", spec.pop("governor_droop_pu", 0.05))}
        if "governor_tau_s" in spec:
            mapped["governor_tau_s"] = spec.pop("governor_tau_s")
        if "f_nom_hz" in spec:
            mapped["f_nom_hz"] = spec.pop("f_nom_hz")
        elif case is not None:
            mapped["f_nom_hz"] = case.f_nom_hz(area)
        if spec:
            raise ParseError(f"unknown dynamics fields for area {area!r}: {sorted(spec)}")
        dyn[area] = AcAreaDynamics(area, **mapped)
    try:
        droop = DroopDefaults(**d.get("droop_defaults", {}))
    except TypeError as exc:
        raise ParseError(f"bad droop defaults: {exc}") from None
    strategy = d.get("strategy", "all")
    if strategy != "all":
        strategy = strategy_name(strategy)
    return Scenario(d.get("name", "scenario"), strategy, [event_from_dict(e) for e in d.get("events", [])],
                    sim_cfg, dyn, droop, {k: float(v) for k, v in d.get("wind_mw", {}).items()},
                    dict(d.get("framework", {})))


def load_scenario(path, case: NetworkCase | None = None) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return scenario_from_dict(data, case)


def bundled_scenario_path(name: str) -> Path:
    return Path(__file__).with_name("data") / f"{name}.json"


def default_dynamics(case: NetworkCase) -> dict:
    return {a: AcAreaDynamics(a, f_nom_hz=case.f_nom_hz(a)) for a in onshore_areas(case)}


def onshore_areas(case: NetworkCase) -> list[str]:
    """Areas with synchronous generation; the others are converter-fed islands."""
    gen_buses = {g.bus for g in case.generators}
    return [a for a in case.areas if any(b.id in gen_buses for b in case.area_buses(a))]


def controlled_converters(case: NetworkCase) -> tuple:
    """The two onshore converters whose modes differ between strategies."""
    ids = case.metadata.get("controlled_converters")
    if ids:
        return tuple(ids)
    wind = {w.converter for w in case.wind_farms}
    return tuple(c.id for c in case.converters if c.id not in wind)


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------

CONVERTER_VARS = ("p_ac_mw", "q_ac_mvar", "p_dc_mw", "u_dc_pu", "p_cmd_mw", "k_v", "k_f")


@dataclass
class SimulationTrace:
    label: str
    time: np.ndarray
    converter: dict  # id -> {var: array}
    area_f_hz: dict  # area -> array
    bus_u_pu: dict  # bus -> array
    balance_residual_pu: np.ndarray
    p_reference_mw: dict = field(default_factory=dict)  # OPF converter setpoints
    u_dc_reference_pu: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    truncated: bool = False
    diagnosis: str = ""

    def rows(self):
        """Long-format rows (time, element, variable, value, run-label)."""
        for cid, vars_ in self.converter.items():
            for var, arr in vars_.items():
                for t, v in zip(self.time, arr):
                    yield float(t), cid, var, float(v), self.label
        for area, arr in self.area_f_hz.items():
            for t, v in zip(self.time, arr):
                yield float(t), area, "f_hz", float(v), self.label
        for bus, arr in self.bus_u_pu.items():
            for t, v in zip(self.time, arr):
                yield float(t), bus, "u_pu", float(v), self.label
        for t, v in zip(self.time, self.balance_residual_pu):
            yield float(t), "system", "balance_residual_pu", float(v), self.label

    def at(self, var: str, element) -> np.ndarray:
        if var == "f_hz":
            return self.area_f_hz[element]
        if var == "u_pu":
            return self.bus_u_pu[element]
        return self.converter[element][var]


def write_traces_csv(traces: Sequence[SimulationTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "element", "variable", "value", "run_label"])
        for tr in traces:
            for t, el, var, v, lab in tr.rows():
                w.writerow([repr(t), el, var, repr(v), lab])


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def recovery_time(time, signal, reference: float, band: float, window_s: float = 1.0,
                  start_s: float = 0.0) -> float:
    """Time after ``start_s`` from which ``signal`` stays within ``reference +- band``
    for at least ``window_s``; inf when that never happens inside the record."""
    time = np.asarray(time, dtype=float)
    inside = np.abs(np.asarray(signal, dtype=float) - reference) <= band
    idx = np.flatnonzero(time >= start_s - 1e-12)
    if idx.size == 0:
        return math.inf
    ok = inside[idx]
    # last index of the run of True values starting at each position
    run_end = np.empty(idx.size, dtype=np.int64)
    nxt = idx.size
    for j in range(idx.size - 1, -1, -1):
        if not ok[j]:
            nxt = j
        run_end[j] = nxt  # first False at or after j
    t = time[idx]
    for j in range(idx.size):
        if not ok[j]:
            continue
        last = run_end[j] - 1
        if t[last] - t[j] >= window_s - 1e-9:
            return float(t[j] - start_s)
    return math.inf


@dataclass
class DeviationReport:
    converter: Hashable
    mean_abs_dp_mw: float
    max_abs_dp_mw: float
    final_abs_dp_mw: float
    frequency_nadir_hz: float
    frequency_nadir_dev_hz: float
    voltage_nadir_pu: float
    dc_voltage_final_dev_pu: float
    frequency_recovery_s: float
    voltage_recovery_s: float

    def to_dict(self) -> dict:
        return asdict(self)


def deviation_metrics(trace: SimulationTrace, p_reference_mw: dict | None = None, converter=None,
                      area=None, event_time_s: float | None = None, f_band_hz: float = 0.05,
                      u_band_pu: float = 0.01, window_s: float = 1.0,
                      u_reference_pu: dict | None = None, f_reference_hz: float | None = None
                      ) -> DeviationReport:
    """Deviation of one converter's power, DC voltage and PCC-area frequency.

    Power deviations are taken against ``p_reference_mw`` (default: the OPF
    setpoints stored on the trace), DC voltage against the pre-event value
    unless ``u_reference_pu`` is given.  Windows start at the first event.
    """
    converter = converter if converter is not None else next(iter(trace.converter))
    ref_p = (p_reference_mw or trace.p_reference_mw).get(converter)
    t = trace.time
    if event_time_s is None:
        event_time_s = min((e.time_s for e in trace.events), default=float(t[0]))
    after = t >= event_time_s - 1e-12
    p = trace.converter[converter]["p_ac_mw"]
    dp = np.abs(p - ref_p) if ref_p is not None else np.zeros_like(p)
    if area is None:
        area = next(iter(trace.area_f_hz))
    f = trace.area_f_hz[area]
    f_ref = f_reference_hz if f_reference_hz is not None else float(f[0])
    u = trace.converter[converter]["u_dc_pu"]
    pre = t < event_time_s - 1e-12
    u_ref = (u_reference_pu or {}).get(converter, float(u[pre][-1]) if pre.any() else float(u[0]))
    return DeviationReport(
        converter=converter,
        mean_abs_dp_mw=float(np.mean(dp[after])) if after.any() else 0.0,
        max_abs_dp_mw=float(np.max(dp[after])) if after.any() else 0.0,
        final_abs_dp_mw=float(dp[-1]),
        frequency_nadir_hz=float(np.min(f)),
        frequency_nadir_dev_hz=float(f_ref - np.min(f)),
        voltage_nadir_pu=float(np.min(u)),
        dc_voltage_final_dev_pu=float(abs(u[-1] - u_ref)),
        frequency_recovery_s=recovery_time(t, f, f_ref, f_band_hz, window_s, event_time_s),
        voltage_recovery_s=recovery_time(t, u, u_ref, u_band_pu, window_s, event_time_s),
    )


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------

@dataclass
class _Conv:
    station: object
    mode: ControlMode
    settings: DroopSettings | None
    p_ref: float  # MW, AC -> DC positive
    q_ref: float
    u_ac_kv: float  # PCC voltage used in the loss model
    area: str
    dc_index: int
    x: float = 0.0  # lagged part of the command (MW)
    p_ac: float = 0.0
    k_v: float = math.inf
    k_f: float = math.inf
    dp_v: float = 0.0
    frozen: bool = False  # margin exhausted -> constant at the limit
    target: float = 0.0  # unlagged non-voltage command (MW)


def _loss_mw(c: _Conv, p_ac: float) -> float:
    return converter_loss(c.station, reactor_current(p_ac, c.q_ref, c.u_ac_kv))


class Simulation:
    """One strategy run; ``step()`` advances by dt, ``run()`` to the horizon."""

    def __init__(self, case: NetworkCase, strategy: str, state: SystemState, scenario: Scenario,
                 label: str | None = None):
        self.strategy = strategy_name(strategy)
        self.scenario = scenario
        self.cfg = scenario.sim
        self.label = label or self.strategy
        modes = dict(zip(controlled_converters(case), STRATEGIES[self.strategy]))
        wind_convs = {w.converter for w in case.wind_farms}
        for c in case.converters:
            if c.id in wind_convs:
                modes.setdefault(c.id, ControlMode.VF_ISLAND)
        self.case = case.with_converter_modes(modes)
        validate(self.case)
        self.base = case.base_mva
        self.state = state
        self.areas = onshore_areas(case)
        dyn = default_dynamics(case)
        dyn.update({a: d for a, d in scenario.dynamics.items() if a in dyn})
        self.dyn = dyn
        self.pf = {a: AreaPowerFlow(self.case, a) for a in self.areas}
        self.dc_ids = [b.id for b in self.case.dc_buses]
        self.wind = {w.id: state.wind_mw.get(w.id, 0.0) for w in self.case.wind_farms}
        self.farm_conv = {w.id: w.converter for w in self.case.wind_farms}
        self.extra_loads: dict = {}
        self.gen_v = {g.bus: state.bus_vm_pu[g.bus] for g in self.case.generators}

        self.convs: dict = {}
        d = scenario.droop
        for st in self.case.converters:
            area = self.case.bus(st.ac_bus).area
            mode = ControlMode(st.control_mode)
            f_ref = self.case.f_nom_hz(area)
            settings = None
            if mode in (ControlMode.ADAPTIVE_VOLTAGE_DROOP, ControlMode.PROPOSED_DROOP):
                settings = DroopSettings(
                    mode, state.conv_p_mw[st.id], state.dc_v_pu[st.dc_bus], f_ref, d.k_v, d.k_f,
                    d.alpha_v, d.alpha_f, d.u_dc_max_pu, d.delta_f_max_hz, st.pmax_mw, st.pmin_mw)
            u_kv = state.bus_vm_pu[st.ac_bus] * self.case.converter_base_kv(st.id)
            c = _Conv(st, mode, settings, state.conv_p_mw[st.id], state.conv_q_mvar[st.id], u_kv, area,
                      self.dc_ids.index(st.dc_bus))
            c.x = c.p_ac = c.target = c.p_ref
            self.convs[st.id] = c

        self.t = 0.0
        self.df = {a: 0.0 for a in self.areas}  # pu of f_nom
        self.p_mech = None
        self.ac: dict = {}
        self._initialise()

    # -- helpers ---------------------------------------------------------------
    def _s_area(self, area) -> float:
        return sum(g.pmax_mw for g in self.case.generators if g.bus in self.pf[area].pos)

    def frequency(self, area) -> float:
        if area in self.df:
            return self.dyn[area].f_nom_hz * (1.0 + self.df[area])
        return self.case.f_nom_hz(area)

    def _wind_at(self, conv_id) -> float:
        return sum(p for f, p in self.wind.items() if self.farm_conv[f] == conv_id)

    def _initialise(self):
        # resynchronise the DC voltages to the converter injections actually
        # used here, with the first DC-voltage or droop converter as reference
        for c in self.convs.values():
            if c.mode is ControlMode.VF_ISLAND:
                c.p_ac = c.x = self._wind_at(c.station.id)
        ref = next((c for c in self.convs.values() if c.mode is ControlMode.DC_VOLTAGE), None) \
            or next((c for c in self.convs.values() if c.settings is not None), None)
        inj = {}
        for c in self.convs.values():
            if c is not ref:
                inj[c.station.dc_bus] = inj.get(c.station.dc_bus, 0.0) + \
                    ac_to_dc_power(c.station, c.p_ac, c.q_ref, c.u_ac_kv) / self.base
        u_ref = self.state.dc_v_pu[ref.station.dc_bus]
        sol = solve_dc_network(self.case, inj, ref.station.dc_bus, u_ref)
        self.u_fixed = {c.station.dc_bus: float(sol.voltage(c.station.dc_bus))
                        for c in self.convs.values() if c.mode is ControlMode.DC_VOLTAGE}
        self.u = sol.vdc_pu.copy()
        p_dc_ref = sol.power(ref.station.dc_bus) * self.base
        ref.p_ac = ref.x = dc_to_ac_power(ref.station, p_dc_ref, ref.q_ref, ref.u_ac_kv)
        for c in self.convs.values():
            c.p_ref = c.target = c.p_ac
            if c.settings is not None:
                c.settings = replace(c.settings, p_ref_mw=c.p_ac, u_dc_ref_pu=float(self.u[c.dc_index]))
        self.dc_sol = sol
        self._update_coefficients()
        self.ac = self._solve_ac()
        self.p_mech0 = {a: self._p_elec(a) for a in self.areas}
        self.p_mech = dict(self.p_mech0)
        self.gen_p0 = {}
        for a in self.areas:
            self.gen_p0.update(self.ac[a].gen_p_mw)

    def _p_elec(self, area) -> float:
        return float(sum(self.ac[area].gen_p_mw.values()))

    def _update_coefficients(self):
        for c in self.convs.values():
            if c.settings is None:
                continue
            try:
                c.k_v, c.k_f = control.coefficients(c.settings, c.p_ac)
                c.frozen = False
            except MarginExhausted:
                c.k_v = c.k_f = math.inf
                c.frozen = True

    def _lag_target(self, c: _Conv) -> float:
        if c.mode is ControlMode.PROPOSED_DROOP and not c.frozen and math.isfinite(c.k_f):
            dp_f = control.frequency_adjustment(c.settings, self.frequency(c.area), c.k_f)
            return c.p_ref - dp_f
        if c.frozen:
            return c.settings.p_max_mw if c.p_ac >= 0 else c.settings.lower
        return c.p_ref

    @staticmethod
    def _droop_p_ac(c: _Conv, u_pu: float) -> tuple[float, float]:
        """Commanded AC power and its slope dP/du for a droop converter."""
        s = c.settings
        p, slope = c.x, 0.0
        if math.isfinite(c.k_v) and not c.frozen:
            p = c.x + (s.u_dc_ref_pu - u_pu) / c.k_v
            slope = -1.0 / c.k_v
        if p > s.p_max_mw:
            p, slope = s.p_max_mw, 0.0
        elif p < s.lower:
            p, slope = s.lower, 0.0
        return p, slope

    def _droop_characteristic(self, c: _Conv):
        base = self.base

        def char(u_pu):
            p, slope = self._droop_p_ac(c, u_pu)
            dl = loss_derivative(c.station, p, c.q_ref, c.u_ac_kv)
            return (p - _loss_mw(c, p)) / base, (1.0 - dl) * slope / base

        return char

    def _solve_dc(self):
        chars: dict = {}
        fixed = {}
        for c in self.convs.values():
            bus = c.station.dc_bus
            if c.mode is ControlMode.DC_VOLTAGE:
                fixed[bus] = self.u_fixed[bus]
                continue
            if c.settings is not None:
                f = self._droop_characteristic(c)
            else:
                p_dc = (c.p_ac - _loss_mw(c, c.p_ac)) / self.base
                f = (lambda v, p=p_dc: (p, 0.0))
            if bus in chars:
                g = chars[bus]
                chars[bus] = (lambda u, f=f, g=g: tuple(a + b for a, b in zip(f(u), g(u))))
            else:
                chars[bus] = f
        return solve_dc_with_characteristics(self.case, chars, fixed, initial=self.u)

    def _solve_ac(self) -> dict:
        """Area power flows.  After initialisation each machine's electrical
        output moves from its initial value by its rating share of the area's
        total change, found by fixed-point iteration on the total."""
        out = {}
        for a in self.areas:
            pf = self.pf[a]
            pcc = {c.station.id: (c.p_ac, c.q_ref) for c in self.convs.values() if c.area == a}
            loads = {b: v for b, v in self.extra_loads.items() if b in pf.pos}
            vset = {b: v for b, v in self.gen_v.items() if b in pf.pos}
            prev = self.ac.get(a)
            if self.p_mech is None:
                out[a] = pf.solve(pcc, gen_dispatch=dict(self.state.gen_p_mw), impedance_loads=loads,
                                  v_setpoints=vset, tol=1e-10)
                continue
            S = self._s_area(a)
            p0 = self.p_mech0[a]
            total = self._p_elec(a)
            for _ in range(50):
                dispatch = {g.id: self.gen_p0[g.id] + g.pmax_mw / S * (total - p0) for g in pf.gens}
                sol = pf.solve(pcc, gen_dispatch=dispatch, impedance_loads=loads, v_setpoints=vset,
                               initial=(prev.voltages_pu, prev.angles_rad), tol=1e-10)
                new = float(sum(sol.gen_p_mw.values()))
                prev = sol
                if abs(new - total) <= 1e-7:
                    break
                total = new
            out[a] = sol
        return out

    # -- events -------------------------------------------------------------
    def apply(self, event: ScenarioEvent):
        kind = event.kind
        if isinstance(kind, LoadStep):
            self.case.bus(kind.bus)
            p, q = self.extra_loads.get(kind.bus, (0.0, 0.0))
            self.extra_loads[kind.bus] = (p + kind.dp_mw, q + kind.dq_mvar)
        elif isinstance(kind, DcLineOutage):
            self.case = self.case.with_dc_branch_status(kind.branch, False)
            comps = dc_components(self.case)
            if len(comps) > 1:
                raise DisconnectedGraph(f"outage of {kind.branch!r} splits the DC grid", comps)
        elif isinstance(kind, WindActual):
            for farm, p in kind.wind_mw.items():
                if farm not in self.wind:
                    raise ValidationError(f"unknown wind farm {farm!r}", farm)
                self.wind[farm] = float(p)
            for c in self.convs.values():
                if c.mode is ControlMode.VF_ISLAND:
                    c.x = c.p_ac = self._wind_at(c.station.id)

    # -- stepping -------------------------------------------------------------
    def step(self, dt: float):
        # (1) area frequency and governor
        for a in self.areas:
            d = self.dyn[a]
            S = self._s_area(a)
            p_e = self._p_elec(a)
            ddf = (self.p_mech[a] - p_e - d.damping_pu * S * self.df[a]) / (2.0 * d.inertia_h_s * S)
            dpm = (self.p_mech0[a] - self.p_mech[a] - S / d.governor_droop_pu * self.df[a]) / d.governor_tau_s
            self.df[a] += dt * ddf
            self.p_mech[a] += dt * dpm
        # (2)-(3) converter commands with first-order response
        self._update_coefficients()
        tau = self.cfg.converter_tau_s
        for c in self.convs.values():
            if c.mode is ControlMode.ACTIVE_POWER:
                c.x += dt / tau * (c.p_ref - c.x) if tau > 0 else c.p_ref - c.x
                c.p_ac = c.x
            elif c.settings is not None:
                target = c.target = self._lag_target(c)
                c.x = c.x + dt / tau * (target - c.x) if tau > 0 else target
        # (4) DC grid with droop / slack boundary conditions
        sol = self._solve_dc()
        self.u = sol.vdc_pu.copy()
        for c in self.convs.values():
            if c.mode is ControlMode.DC_VOLTAGE:
                p_dc = sol.power(c.station.dc_bus) * self.base
                c.p_ac = dc_to_ac_power(c.station, p_dc, c.q_ref, c.u_ac_kv)
            elif c.settings is not None:
                c.p_ac, _ = self._droop_p_ac(c, float(self.u[c.dc_index]))
                c.dp_v = c.p_ac - c.x
        self.dc_sol = sol
        # (5) AC areas with updated PCC draws
        self.ac = self._solve_ac()
        self.t += dt

    def balance_residual_pu(self) -> float:
        """Generation + wind - load - AC losses - converter losses - DC losses (pu)."""
        gen = sum(self._p_elec(a) for a in self.areas)
        wind = sum(self.wind.values())
        load = sum(b.load_p_mw for b in self.case.ac_buses if b.area in self.areas) + \
            sum(self.ac[a].impedance_load_p_mw for a in self.areas)
        ac_loss = sum(self.ac[a].losses_mw for a in self.areas)
        conv_loss = 0.0
        for c in self.convs.values():
            conv_loss += c.p_ac - ac_to_dc_power(c.station, c.p_ac, c.q_ref, c.u_ac_kv)
        dc_loss = self.dc_sol.losses_pu * self.base
        return (gen + wind - load - ac_loss - conv_loss - dc_loss) / self.base

    def run(self) -> SimulationTrace:
        cfg = self.cfg
        n = cfg.n_steps
        events = sorted(self.scenario.events, key=lambda e: e.time_s)
        time = np.arange(n + 1) * cfg.dt_s
        conv = {cid: {v: np.full(n + 1, np.nan) for v in CONVERTER_VARS} for cid in self.convs}
        freq = {a: np.full(n + 1, np.nan) for a in self.case.areas}
        buses = {b.id: np.full(n + 1, np.nan) for b in self.case.ac_buses}
        resid = np.full(n + 1, np.nan)
        trace = SimulationTrace(self.label, time, conv, freq, buses, resid,
                                {cid: c.p_ref for cid, c in self.convs.items()},
                                {cid: float(self.u[c.dc_index]) for cid, c in self.convs.items()},
                                list(events))

        def record(i):
            for cid, c in self.convs.items():
                rec = conv[cid]
                rec["p_ac_mw"][i] = c.p_ac
                rec["q_ac_mvar"][i] = c.q_ref
                rec["p_dc_mw"][i] = ac_to_dc_power(c.station, c.p_ac, c.q_ref, c.u_ac_kv)
                rec["u_dc_pu"][i] = self.u[c.dc_index]
                if c.settings is not None:
                    cmd = c.target + c.dp_v
                    rec["p_cmd_mw"][i] = min(max(cmd, c.settings.lower), c.settings.p_max_mw)
                else:
                    rec["p_cmd_mw"][i] = c.p_ac
                rec["k_v"][i] = c.k_v
                rec["k_f"][i] = c.k_f
            for a in self.case.areas:
                freq[a][i] = self.frequency(a)
            for a, sol in self.ac.items():
                for j, b in enumerate(sol.bus_ids):
                    buses[b][i] = sol.voltages_pu[j]
            for b in self.case.ac_buses:
                if b.area not in self.ac:
                    buses[b.id][i] = self.state.bus_vm_pu[b.id]
            resid[i] = self.balance_residual_pu()

        record(0)
        k = 0
        for i in range(1, n + 1):
            t_next = i * cfg.dt_s
            try:
                while k < len(events) and events[k].time_s <= t_next + 1e-9:
                    self.apply(events[k])
                    k += 1
                self.step(cfg.dt_s)
            except (NonConvergence, SingularJacobian) as exc:
                keep = slice(0, i)
                trace.time = time[keep]
                for rec in conv.values():
                    for v in rec:
                        rec[v] = rec[v][keep]
                for dct in (freq, buses):
                    for key in dct:
                        dct[key] = dct[key][keep]
                trace.balance_residual_pu = resid[keep]
                trace.truncated = True
                trace.diagnosis = f"network solve failed at t={t_next:.3f} s: {exc}"
                raise CascadingInfeasibility(trace.diagnosis, trace) from exc
            record(i)
        return trace


def run_scenario(case: NetworkCase, strategy: str, events: Sequence[ScenarioEvent] = (),
                 config: SimConfig | Scenario | None = None, state: SystemState | None = None,
                 label: str | None = None) -> SimulationTrace:
    """Simulate one control strategy from the OPF operating point ``state``.

    Without ``state`` the snapshot OPF is solved with the scenario's wind.
    """
    if isinstance(config, Scenario):
        scenario = replace(config, events=list(events) if events else config.events)
    else:
        scenario = Scenario(events=list(events), sim=config or SimConfig())
    if state is None:
        state = solve_opf(OpfProblem(case, scenario.wind_mw)).steps[0]
    return Simulation(case, strategy, state, scenario, label).run()


def run_all(case: NetworkCase, scenario: Scenario, state: SystemState | None = None,
            jobs: int = 1, strategies: Sequence[str] | None = None) -> dict:
    """Each strategy (default: the scenario's) from the same OPF point; {name: trace}."""
    if state is None:
        state = solve_opf(OpfProblem(case, scenario.wind_mw)).steps[0]
    names = [strategy_name(s) for s in strategies] if strategies else scenario.strategies
    if jobs > 1 and len(names) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            traces = list(ex.map(_run_one, [(case, n, scenario, state) for n in names]))
    else:
        traces = [_run_one((case, n, scenario, state)) for n in names]
    return dict(zip(names, traces))


def _run_one(args):
    case, name, scenario, state = args
    return Simulation(case, name, state, scenario).run()


def conservation_ok(trace: SimulationTrace, tol_pu: float = 1e-5) -> bool:
    return bool(np.all(np.abs(trace.balance_residual_pu) <= tol_pu))


# ---------------------------------------------------------------------------
# forecast -> OPF -> simulation loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameworkConfig:
    intervals: int = 24
    event_time_s: float = 0.5
    sim: SimConfig = SimConfig(horizon_s=5.0)
    ramp_mw_per_step: float | None = None
    converter: str = "VSC1"


@dataclass
class IntervalResult:
    step: int
    forecast_wind_mw: dict
    actual_wind_mw: dict
    setpoint_state: SystemState | None = None  # OPF on the forecast
    reference_state: SystemState | None = None  # OPF on the actual wind
    traces: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)  # strategy -> DeviationReport
    error: str | None = None


@dataclass
class FrameworkResult:
    origin: int
    strategies: list
    intervals: list
    forecast_speed_mps: np.ndarray
    actual_speed_mps: np.ndarray

    def abs_dp(self, strategy: str) -> np.ndarray:
        """Steady |P_sim - P_opf(actual)| at the monitored converter, per usable interval."""
        return np.array([iv.metrics[strategy].final_abs_dp_mw for iv in self.intervals
                         if iv.error is None and strategy in iv.metrics])

    def mean_abs_dp(self, strategy: str) -> float:
        v = self.abs_dp(strategy)
        return float(v.mean()) if v.size else math.nan

    def summary(self) -> dict:
        return {
            "origin": self.origin,
            "intervals": len(self.intervals),
            "failed_intervals": [iv.step for iv in self.intervals if iv.error is not None],
            "mean_abs_dp_mw": {s: self.mean_abs_dp(s) for s in self.strategies},
            "max_abs_dp_mw": {s: float(np.max(self.abs_dp(s))) if self.abs_dp(s).size else math.nan
                              for s in self.strategies},
        }


def _horizon_opf(case, wind_steps, ramp):
    return solve_opf(OpfProblem(case, wind_steps, len(wind_steps), ramp))


def run_framework(case: NetworkCase, series, model, origin: int, config: FrameworkConfig = FrameworkConfig(),
                  scenario: Scenario | None = None, strategies: Sequence[str] | None = None
                  ) -> FrameworkResult:
    """Forecast, plan and simulate ``config.intervals`` dispatch intervals.

    The forest forecasts site wind speed from the history before ``origin``;
    each farm's power follows its power curve.  The horizon OPF on the
    forecast gives the setpoints; each interval is then simulated with the
    actual wind applied at ``config.event_time_s`` and compared against the
    OPF solved with the actual wind.  A failing interval is recorded with its
    error and the loop moves on.
    """
    from .forecast import farm_power, forecast_from

    scenario = scenario or Scenario()
    names = [strategy_name(s) for s in (strategies or STRATEGIES)]
    n = config.intervals
    hour = series.hour_of_day
    speed_fc = forecast_from(model, series.power_mw, series.speed_mps, hour, origin)[:n]
    if speed_fc.size < n or origin + n > len(series):
        raise ValidationError(f"need {n} forecast and actual steps from origin {origin}", origin)
    speed_act = series.speed_mps[origin:origin + n]
    wind_fc = [{f.id: float(farm_power(f, v)) for f in case.wind_farms} for v in speed_fc]
    wind_act = [{f.id: float(farm_power(f, v)) for f in case.wind_farms} for v in speed_act]
    intervals = [IntervalResult(k, wind_fc[k], wind_act[k]) for k in range(n)]

    def plan(wind_steps, attr):
        try:
            sol = _horizon_opf(case, wind_steps, config.ramp_mw_per_step)
            for iv, st in zip(intervals, sol.steps):
                setattr(iv, attr, st)
        except AcMtdcError as exc:
            # horizon failed as a whole; fall back to independent steps
            log.warning("horizon OPF failed (%s); solving intervals separately", exc)
            for iv, w in zip(intervals, wind_steps):
                try:
                    setattr(iv, attr, solve_opf(OpfProblem(case, w)).steps[0])
                except AcMtdcError as exc2:
                    iv.error = f"{attr}: {exc2}"

    plan(wind_fc, "setpoint_state")
    plan(wind_act, "reference_state")
    sc = replace(scenario, sim=config.sim)
    for iv in intervals:
        if iv.error is not None:
            continue
        events = [ScenarioEvent(config.event_time_s, WindActual(iv.actual_wind_mw))]
        ref = {config.converter: iv.reference_state.conv_p_mw[config.converter]}
        area = case.bus(case.converter(config.converter).ac_bus).area
        try:
            for name in names:
                tr = Simulation(case, name, iv.setpoint_state, replace(sc, events=events),
                                f"{name}@{iv.step}").run()
                iv.traces[name] = tr
                iv.metrics[name] = deviation_metrics(tr, ref, config.converter, area)
        except AcMtdcError as exc:
            iv.error = f"simulation: {exc}"
    return FrameworkResult(origin, names, intervals, speed_fc, speed_act)
