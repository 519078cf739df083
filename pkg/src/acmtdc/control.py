"""Converter control laws: fixed power, DC slack, adaptive voltage droop and the
combined voltage/frequency adaptive droop.

Commanded power follows ``p_cmd = p_ref + dp_v - dp_f`` with

    dp_v = (u_dc_ref - u_dc) / k_v
    dp_f = (f_ref - f) / k_f
    k_v  = (headroom - |u_dc_ref - 1|) / (alpha_v * (p_max - |p|))
    k_f  = delta_f_max / (alpha_f * (p_max - |p|))

where ``headroom = u_dc_max - 1`` is the permitted DC-voltage excursion above
nominal.  ``p`` is the AC-side converter power, positive AC -> DC.  A DC
undervoltage raises p (more power into the DC grid); an underfrequency lowers
it (less drawn from / more delivered to the AC area).

k_v is in pu-voltage per MW and k_f in Hz per MW, so both adjustments are MW.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import MarginExhausted, ZeroCoefficient
from .netmodel import ControlMode

DEFAULT_ALPHA_V = 1.0
DEFAULT_ALPHA_F = 1.0
DEFAULT_DELTA_F_MAX_HZ = 0.5
DEFAULT_U_DC_MAX_PU = 1.05
MARGIN_FLOOR = 0.01  # fraction of p_max


@dataclass(frozen=True)
class DroopSettings:
    mode: ControlMode
    p_ref_mw: float
    u_dc_ref_pu: float = 1.0
    f_ref_hz: float = 50.0
    k_v: float | None = None  # None -> adaptive
    k_f: float | None = None  # None -> adaptive
    alpha_v: float = DEFAULT_ALPHA_V
    alpha_f: float = DEFAULT_ALPHA_F
    u_dc_max_pu: float = DEFAULT_U_DC_MAX_PU
    delta_f_max_hz: float = DEFAULT_DELTA_F_MAX_HZ
    p_max_mw: float = 2000.0
    p_min_mw: float | None = None  # defaults to -p_max_mw
    margin_floor: float = MARGIN_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "mode", ControlMode(self.mode))
        if not (self.alpha_v > 0 and self.alpha_f > 0):
            raise ValueError("sensitivity parameters alpha_v and alpha_f must be positive")

    @property
    def lower(self) -> float:
        return -self.p_max_mw if self.p_min_mw is None else self.p_min_mw

    def scaled(self, base_mva: float) -> "DroopSettings":
        """Same law expressed with powers in per unit of ``base_mva``."""
        return replace(
            self, p_ref_mw=self.p_ref_mw / base_mva, p_max_mw=self.p_max_mw / base_mva,
            p_min_mw=None if self.p_min_mw is None else self.p_min_mw / base_mva,
            k_v=None if self.k_v is None else self.k_v * base_mva,
            k_f=None if self.k_f is None else self.k_f * base_mva)


@dataclass(frozen=True)
class ControlOutput:
    p_cmd_mw: float
    dp_v_mw: float = 0.0
    dp_f_mw: float = 0.0
    saturated: bool = False
    k_v: float = math.inf
    k_f: float = math.inf


def voltage_adjustment(settings: DroopSettings, u_dc_pu: float, k_v: float | None = None) -> float:
    k_v = settings.k_v if k_v is None else k_v
    if k_v is None or k_v == 0:
        raise ZeroCoefficient("voltage droop coefficient must be non-zero")
    return (settings.u_dc_ref_pu - u_dc_pu) / k_v


def frequency_adjustment(settings: DroopSettings, f_hz: float, k_f: float | None = None) -> float:
    k_f = settings.k_f if k_f is None else k_f
    if k_f is None or k_f == 0:
        raise ZeroCoefficient("frequency droop coefficient must be non-zero")
    return (settings.f_ref_hz - f_hz) / k_f


def _margin(settings: DroopSettings, p_now: float) -> float:
    margin = settings.p_max_mw - abs(p_now)
    if margin <= settings.margin_floor * settings.p_max_mw:
        raise MarginExhausted(f"power margin {margin:.6g} at |p|={abs(p_now):.6g} "
                              f"is below the floor")
    return margin


def adaptive_kv(settings: DroopSettings, p_now_mw: float) -> float:
    headroom = (settings.u_dc_max_pu - 1.0) - abs(settings.u_dc_ref_pu - 1.0)
    return headroom / (settings.alpha_v * _margin(settings, p_now_mw))


def adaptive_kf(settings: DroopSettings, p_now_mw: float) -> float:
    return settings.delta_f_max_hz / (settings.alpha_f * _margin(settings, p_now_mw))


def coefficients(settings: DroopSettings, p_now_mw: float) -> tuple[float, float]:
    """(k_v, k_f) in force for ``settings`` at loading ``p_now_mw``; inf when the term is off."""
    mode = settings.mode
    k_v = k_f = math.inf
    if mode in (ControlMode.ADAPTIVE_VOLTAGE_DROOP, ControlMode.PROPOSED_DROOP):
        k_v = settings.k_v if settings.k_v is not None else adaptive_kv(settings, p_now_mw)
    if mode is ControlMode.PROPOSED_DROOP:
        k_f = settings.k_f if settings.k_f is not None else adaptive_kf(settings, p_now_mw)
    return k_v, k_f


def _clamp(settings: DroopSettings, p: float) -> tuple[float, bool]:
    if p > settings.p_max_mw:
        return settings.p_max_mw, True
    if p < settings.lower:
        return settings.lower, True
    return p, False


def control_step(settings: DroopSettings, u_dc: float, f: float, p_now: float) -> ControlOutput:
    """One evaluation of the converter's outer power loop.

    In DcVoltage mode the converter is the DC slack and its power comes from
    the network solve; ``p_now`` is passed through unchanged.
    """
    mode = settings.mode
    if mode is ControlMode.DC_VOLTAGE:
        return ControlOutput(p_now)
    if mode in (ControlMode.ACTIVE_POWER, ControlMode.VF_ISLAND):
        p, sat = _clamp(settings, settings.p_ref_mw)
        return ControlOutput(p, saturated=sat)
    try:
        k_v, k_f = coefficients(settings, p_now)
    except MarginExhausted:
        limit = settings.p_max_mw if p_now >= 0 else settings.lower
        return ControlOutput(limit, saturated=True)
    dp_v = voltage_adjustment(settings, u_dc, k_v)
    dp_f = frequency_adjustment(settings, f, k_f) if mode is ControlMode.PROPOSED_DROOP else 0.0
    p, sat = _clamp(settings, settings.p_ref_mw + dp_v - dp_f)
    return ControlOutput(p, dp_v, dp_f, sat, k_v, k_f)
