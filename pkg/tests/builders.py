"""Small hand-built cases shared by the unit tests."""

import json

from acmtdc.netmodel import (AcBranch, AcBus, DcBranch, DcBus, Generator, NetworkCase,
                             bundled_case_path, validate)


def bundled_dict() -> dict:
    return json.loads(bundled_case_path().read_text())


def two_bus_dc(g: float = 10.0) -> NetworkCase:
    return validate(NetworkCase(
        base_mva=100.0,
        ac_buses=(AcBus(1, "a"),), ac_branches=(), generators=(),
        dc_buses=(DcBus("D1"), DcBus("D2")),
        dc_branches=(DcBranch("L", "D1", "D2", g),),
        converters=()))


def three_bus_toy(beta1=10.0, beta2=20.0, load_mw=150.0, pmax=(200.0, 200.0), r=0.0,
                  alpha=(0.0, 0.0)) -> NetworkCase:
    """Triangle with generators at buses 1 and 2 and the load at bus 3."""
    buses = (AcBus(1, "a", vmin_pu=0.9, vmax_pu=1.1), AcBus(2, "a", vmin_pu=0.9, vmax_pu=1.1),
             AcBus(3, "a", vmin_pu=0.9, vmax_pu=1.1, load_p_mw=load_mw, load_q_mvar=0.0))
    branches = (AcBranch(1, 2, r, 0.1), AcBranch(1, 3, r, 0.1), AcBranch(2, 3, r, 0.1))
    gens = (Generator("G1", 1, 0.0, pmax[0], -300.0, 300.0, alpha[0], beta1, 0.0),
            Generator("G2", 2, 0.0, pmax[1], -300.0, 300.0, alpha[1], beta2, 0.0))
    return validate(NetworkCase(100.0, buses, branches, gens, (), (), (),
                                metadata={"areas": {"a": {"slack_bus": 1, "base_kv": 230.0}}}))


def single_area_case9() -> NetworkCase:
    """Area ac1 of the bundled case on its own: the 9-bus benchmark, no DC side."""
    from acmtdc.netmodel import case_from_dict, to_per_unit
    d = bundled_dict()
    keep = {b["id"] for b in d["ac_buses"] if b["area"] == "ac1"}
    d["ac_buses"] = [b for b in d["ac_buses"] if b["id"] in keep]
    d["ac_branches"] = [b for b in d["ac_branches"] if b["from_bus"] in keep]
    d["generators"] = [g for g in d["generators"] if g["bus"] in keep]
    for s in ("dc_buses", "dc_branches", "converters", "wind_farms"):
        d[s] = []
    d["metadata"]["areas"] = {"ac1": d["metadata"]["areas"]["ac1"]}
    return validate(to_per_unit(case_from_dict(d)))


def symmetric_link(g_dc: float = 1e6) -> NetworkCase:
    """Two single-bus areas joined by one lossless converter pair over a stiff DC link."""
    from acmtdc.netmodel import ConverterStation
    buses = (AcBus(1, "A", load_p_mw=0.0), AcBus(2, "B", load_p_mw=100.0))
    gens = (Generator("GA", 1, 0.0, 300.0, -200.0, 200.0, 0.0, 10.0, 0.0),
            Generator("GB", 2, 0.0, 300.0, -200.0, 200.0, 0.0, 30.0, 0.0))
    convs = (ConverterStation("CA", 1, "D1", 500.0, pmin_mw=-500.0, pmax_mw=500.0),
             ConverterStation("CB", 2, "D2", 500.0, pmin_mw=-500.0, pmax_mw=500.0))
    return validate(NetworkCase(
        100.0, buses, (), gens, (DcBus("D1"), DcBus("D2")), (DcBranch("L", "D1", "D2", g_dc),),
        convs, metadata={"areas": {"A": {"base_kv": 230.0}, "B": {"base_kv": 230.0}}}))
