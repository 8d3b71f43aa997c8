"""Branch-flow network constraints: lossless LinDistFlow and its lossy SOC relaxation.

Each phase is an independent scalar network using the diagonal of the branch
impedance.  A bus's net injection is shared equally by its phases.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic import ConicProgram, SolveReport
from .netmodel import GridCase, downstream_map


@dataclass
class NetworkVars:
    model: str
    W: dict = field(default_factory=dict)      # (bus, phase, k) -> idx
    P: dict = field(default_factory=dict)      # (branch, phase, k) -> idx
    Q: dict = field(default_factory=dict)
    I: dict = field(default_factory=dict)      # socp only
    Pnet: dict = field(default_factory=dict)   # (bus, k) -> idx
    Qnet: dict = field(default_factory=dict)
    kcl_rows: dict = field(default_factory=dict)  # (bus, phase, k, "p"|"q") -> row

    def value(self, table: dict, x: np.ndarray) -> dict:
        return {key: float(x[j]) for key, j in table.items()}


def _build(case: GridCase, prog: ConicProgram, lossy: bool, tag: str,
           line_limits: bool, voltage_limits: bool) -> NetworkVars:
    nv = NetworkVars("socp" if lossy else "linear")
    children = downstream_map(case)
    branches = {br.id: br for br in case.branches}
    root = case.root.id
    for k in range(case.K):
        for bus in case.buses:
            for ph in bus.phases:
                if bus.id == root:
                    lo = hi = 1.0
                elif voltage_limits:
                    lo, hi = bus.vmin_pu ** 2, bus.vmax_pu ** 2
                else:
                    lo, hi = 0.0, np.inf
                nv.W[bus.id, ph, k] = prog.add_var(f"{tag}W[{bus.id},{ph},{k}]", lo, hi)
            nv.Pnet[bus.id, k] = prog.add_var(f"{tag}Pnet[{bus.id},{k}]")
            nv.Qnet[bus.id, k] = prog.add_var(f"{tag}Qnet[{bus.id},{k}]")
        for br in case.branches:
            for ph in br.phases:
                key = (br.id, ph, k)
                nv.P[key] = prog.add_var(f"{tag}P[{br.id},{ph},{k}]")
                nv.Q[key] = prog.add_var(f"{tag}Q[{br.id},{ph},{k}]")
                if lossy:
                    nv.I[key] = prog.add_var(f"{tag}I[{br.id},{ph},{k}]", 0.0)

    for k in range(case.K):
        for br in case.branches:
            r_d, x_d = br.r_diag(), br.x_diag()
            for i, ph in enumerate(br.phases):
                key = (br.id, ph, k)
                r, x = float(r_d[i]), float(x_d[i])
                wn, wm = nv.W[br.from_bus, ph, k], nv.W[br.to_bus, ph, k]
                coeffs = {wm: 1.0, wn: -1.0, nv.P[key]: 2 * r, nv.Q[key]: 2 * x}
                if lossy:
                    coeffs[nv.I[key]] = -(r * r + x * x)
                prog.add_eq(coeffs, 0.0, f"{tag}vdrop[{br.id},{ph},{k}]")
                if line_limits:
                    t = prog.add_var(f"{tag}smax[{br.id},{ph},{k}]", br.smax_pu, br.smax_pu)
                    prog.add_soc([t, nv.P[key], nv.Q[key]])
                if lossy:
                    # ||(P, Q, (W-I)/2)|| <= (W+I)/2  <=>  W*I >= P^2 + Q^2
                    h = prog.add_var(f"{tag}socH[{br.id},{ph},{k}]")
                    d = prog.add_var(f"{tag}socD[{br.id},{ph},{k}]")
                    prog.add_eq({h: 1.0, wn: -0.5, nv.I[key]: -0.5}, 0.0)
                    prog.add_eq({d: 1.0, wn: -0.5, nv.I[key]: 0.5}, 0.0)
                    prog.add_soc([h, nv.P[key], nv.Q[key], d])

        for bus in case.buses:
            nph = len(bus.phases)
            parent = case.parent_branch(bus.id)
            for ph in bus.phases:
                for part, flows, net in (("p", nv.P, nv.Pnet), ("q", nv.Q, nv.Qnet)):
                    coeffs: dict[int, float] = {net[bus.id, k]: 1.0 / nph}
                    if parent is not None:
                        key = (parent.id, ph, k)
                        coeffs[flows[key]] = 1.0
                        if lossy:
                            z = parent.r_diag() if part == "p" else parent.x_diag()
                            coeffs[nv.I[key]] = -float(z[parent.phases.index(ph)])
                    for cid in children[bus.id]:
                        if ph in branches[cid].phases:
                            coeffs[flows[cid, ph, k]] = -1.0
                    nv.kcl_rows[bus.id, ph, k, part] = prog.add_eq(
                        coeffs, 0.0, f"{tag}kcl_{part}[{bus.id},{ph},{k}]"
                    )
    return nv


def build_linear_bfm(case: GridCase, prog: ConicProgram, tag: str = "", *,
                     line_limits: bool = True, voltage_limits: bool = True) -> NetworkVars:
    """Lossless LinDistFlow: ``W_m = W_n - 2(rP + xQ)`` and exact flow conservation."""
    return _build(case, prog, False, tag, line_limits, voltage_limits)


def build_socp_bfm(case: GridCase, prog: ConicProgram, tag: str = "", *,
                   line_limits: bool = True, voltage_limits: bool = True) -> NetworkVars:
    """Lossy branch flow with squared currents ``I`` and the relaxation ``W*I >= P^2 + Q^2``."""
    return _build(case, prog, True, tag, line_limits, voltage_limits)


def cone_slack(W: float, I: float, P: float, Q: float) -> float:
    """``(W + I) - ||(2P, 2Q, W - I)||``; zero when the relaxation is tight."""
    return float(W + I - np.linalg.norm([2 * P, 2 * Q, W - I]))


def rank1_residual(nv: NetworkVars, report: SolveReport, case: GridCase) -> dict:
    """Per (branch, phase, step) residual ``W_from * I - (P^2 + Q^2)``."""
    if nv.model != "socp":
        raise ValueError("rank1_residual needs a network built by build_socp_bfm")
    x = report.x
    by_id = {br.id: br for br in case.branches}
    out = {}
    for key, j in nv.I.items():
        br_id, ph, k = key
        w = x[nv.W[by_id[br_id].from_bus, ph, k]]
        out[key] = float(w * x[j] - x[nv.P[key]] ** 2 - x[nv.Q[key]] ** 2)
    return out
