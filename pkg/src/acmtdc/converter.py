"""VSC station model: reactor current, quadratic loss polynomial, AC <-> DC power mapping.

Units are physical: MW, MVAr, kV (line-to-line), kA.  The loss table gives b in
kV and c in ohm; with the current in kA these read as MW/kA and MW/kA^2, so
``a + b*i + c*i**2`` comes out in MW.

The AC-side power ``p_ac`` is signed with AC -> DC positive (rectifier), so the
DC-side power injected into the DC grid is ``p_ac - p_loss`` in both directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import NegativeCurrent, ZeroVoltage
from .netmodel import ConverterStation

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class ConverterState:
    p_ac_mw: float
    q_ac_mvar: float
    u_ac_kv: float
    i_c_ka: float
    p_loss_mw: float
    p_dc_mw: float

    def current_residual(self) -> float:
        """Relative residual of P^2 + Q^2 = 3 U^2 I^2."""
        lhs = self.p_ac_mw ** 2 + self.q_ac_mvar ** 2
        rhs = 3.0 * self.u_ac_kv ** 2 * self.i_c_ka ** 2
        return abs(lhs - rhs) / max(lhs, rhs, 1e-300)


def reactor_current(p_ac: float, q_ac: float, u_ac: float) -> float:
    if not u_ac > 0:
        raise ZeroVoltage(f"AC-side voltage must be positive, got {u_ac}")
    return math.hypot(p_ac, q_ac) / (SQRT3 * u_ac)


def converter_loss(station: ConverterStation, i_c: float) -> float:
    if i_c < 0:
        raise NegativeCurrent(f"reactor current must be non-negative, got {i_c}")
    return station.loss_a_mw + station.loss_b_kv * i_c + station.loss_c_ohm * i_c * i_c


def converter_state(station: ConverterStation, p_ac: float, q_ac: float, u_ac: float) -> ConverterState:
    i_c = reactor_current(p_ac, q_ac, u_ac)
    loss = converter_loss(station, i_c)
    return ConverterState(p_ac, q_ac, u_ac, i_c, loss, p_ac - loss)


def ac_to_dc_power(station: ConverterStation, p_ac: float, q_ac: float, u_ac: float,
                   direction: str | None = None) -> float:
    """DC-side power injected into the DC grid.

    With ``direction`` given, ``p_ac`` is read as a magnitude: ``"rectifier"``
    draws it from the AC grid, ``"inverter"`` delivers it to the AC grid.
    Without it, the sign of ``p_ac`` decides (AC -> DC positive).
    """
    if direction is not None:
        if direction not in ("rectifier", "inverter"):
            raise ValueError(f"direction must be 'rectifier' or 'inverter', got {direction!r}")
        p_ac = abs(p_ac) if direction == "rectifier" else -abs(p_ac)
    return converter_state(station, p_ac, q_ac, u_ac).p_dc_mw


def loss_derivative(station: ConverterStation, p_ac: float, q_ac: float, u_ac: float) -> float:
    """d p_loss / d p_ac at fixed q_ac and u_ac."""
    i_c = reactor_current(p_ac, q_ac, u_ac)
    if i_c == 0.0:
        return 0.0
    di_dp = p_ac / (3.0 * u_ac * u_ac * i_c)
    return (station.loss_b_kv + 2.0 * station.loss_c_ohm * i_c) * di_dp


def dc_to_ac_power(station: ConverterStation, p_dc: float, q_ac: float, u_ac: float,
                   tol: float = 1e-12, max_iter: int = 50) -> float:
    """Inverse of :func:`ac_to_dc_power`: the signed p_ac that yields ``p_dc``."""
    p = p_dc + converter_loss(station, reactor_current(p_dc, q_ac, u_ac))
    for _ in range(max_iter):
        r = ac_to_dc_power(station, p, q_ac, u_ac) - p_dc
        if abs(r) <= tol * max(1.0, abs(p_dc)):
            return p
        p -= r / (1.0 - loss_derivative(station, p, q_ac, u_ac))
    return p


def q_capability(station: ConverterStation, p_ac: float) -> float:
    """Largest |Q| keeping the apparent power within the MVA rating."""
    return math.sqrt(max(station.rated_mva ** 2 - p_ac ** 2, 0.0))
