"""Newton-Raphson AC power flow in polar coordinates.

Serves as the ground-truth physics check for optimization results: fix the
injections of a solved dispatch and confirm the network state reproduces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .network import PQ, PV, SLACK, Network, NetworkError, admittance_matrices


@dataclass
class PfSpec:
    """Per-bus treatment for one power-flow solve.

    kinds[i] in {"slack", "pv", "pq"}; p_inj/q_inj are specified net
    injections (generation minus demand, p.u.) used at pv/pq buses; v_set is
    used at slack/pv buses; theta_set at the slack bus.
    """

    kinds: list[str]
    p_inj: np.ndarray
    q_inj: np.ndarray
    v_set: np.ndarray
    theta_set: float = 0.0


@dataclass
class PfState:
    v: np.ndarray
    theta: np.ndarray
    p_inj: np.ndarray
    q_inj: np.ndarray
    iterations: int
    converged: bool
    mismatch: float = field(default=np.nan)


def spec_from_dispatch(
    network: Network,
    gen_p: np.ndarray | None = None,
    gen_q: np.ndarray | None = None,
    gen_v: np.ndarray | None = None,
    slack_v: float = 1.0,
    slack_theta: float = 0.0,
) -> PfSpec:
    """Build a PfSpec from generator setpoints.

    With gen_q given, generator buses are treated as PQ (except the slack);
    otherwise generator buses become PV at gen_v (default 1.0). gen_p/gen_q/
    gen_v are per unit entries aligned with network.all_units().
    """
    units = network.all_units()
    nb = network.n_bus
    p_d, q_d = network.load_vectors()
    p_inj = -p_d
    q_inj = -q_d
    kinds = [PQ] * nb
    v_set = np.ones(nb)
    slack = network.slack_index()
    kinds[slack] = SLACK
    v_set[slack] = slack_v
    for k, g in enumerate(units):
        i = network.bus_index(g.bus)
        if gen_p is not None:
            p_inj[i] += gen_p[k]
        if gen_q is not None:
            q_inj[i] += gen_q[k]
        if i == slack:
            continue
        if gen_q is None:
            kinds[i] = PV
            v_set[i] = 1.0 if gen_v is None else gen_v[k]
    return PfSpec(
        kinds=kinds,
        p_inj=p_inj,
        q_inj=q_inj,
        v_set=v_set,
        theta_set=slack_theta,
    )


def solve_powerflow(
    network: Network,
    spec: PfSpec | None = None,
    tol: float = 1e-8,
    max_iter: int = 30,
) -> PfState:
    """Full-Jacobian Newton power flow; flat start v=1, theta=0.

    Returns a PfState even on non-convergence, with converged=False.
    """
    if spec is None:
        spec = spec_from_dispatch(network)
    nb = network.n_bus
    ybus, _, _ = admittance_matrices(network)
    kinds = spec.kinds
    slack = [i for i, k in enumerate(kinds) if k == SLACK]
    if len(slack) != 1:
        raise NetworkError(f"power flow needs exactly one slack, got {len(slack)}")
    pv = np.array([i for i, k in enumerate(kinds) if k == PV], dtype=int)
    pq = np.array([i for i, k in enumerate(kinds) if k == PQ], dtype=int)
    pvpq = np.concatenate([pv, pq])

    vm = np.ones(nb)
    va = np.full(nb, spec.theta_set)
    vm[slack[0]] = spec.v_set[slack[0]]
    if len(pv):
        vm[pv] = spec.v_set[pv]
    s_spec = spec.p_inj + 1j * spec.q_inj

    npv, npq = len(pv), len(pq)
    converged = False
    it = 0
    norm = np.inf
    while it <= max_iter:
        v = vm * np.exp(1j * va)
        mis = v * np.conj(ybus @ v) - s_spec
        f = np.concatenate([mis[pvpq].real, mis[pq].imag])
        norm = np.linalg.norm(f, np.inf) if len(f) else 0.0
        if norm <= tol:
            converged = True
            break
        if it == max_iter:
            break
        ds_dva, ds_dvm = dsbus_dv(ybus, v)
        j11 = ds_dva[pvpq, :][:, pvpq].real
        j12 = ds_dvm[pvpq, :][:, pq].real
        j21 = ds_dva[pq, :][:, pvpq].imag
        j22 = ds_dvm[pq, :][:, pq].imag
        jac = sp.bmat([[j11, j12], [j21, j22]], format="csc")
        with np.errstate(all="ignore"):
            dx = spsolve(jac, f)
        if not np.all(np.isfinite(dx)):
            worst = pvpq[int(np.argmax(np.abs(mis[pvpq].real)))]
            raise NetworkError(
                f"singular power-flow Jacobian; worst mismatch at bus "
                f"{network.buses[worst].id}"
            )
        va[pvpq] -= dx[: npv + npq]
        if npq:
            vm[pq] -= dx[npv + npq :]
        it += 1

    v = vm * np.exp(1j * va)
    s = v * np.conj(ybus @ v)
    return PfState(
        v=vm,
        theta=va,
        p_inj=s.real,
        q_inj=s.imag,
        iterations=it,
        converged=converged,
        mismatch=norm,
    )


def dsbus_dv(ybus: sp.spmatrix, v: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Partial derivatives of bus injections S(V) wrt angle and magnitude."""
    ib = ybus @ v
    diag_v = sp.diags(v)
    diag_i = sp.diags(ib)
    diag_e = sp.diags(v / np.abs(v))
    ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
    ds_dvm = diag_v @ np.conj(ybus @ diag_e) + np.conj(diag_i) @ diag_e
    return ds_dva.tocsr(), ds_dvm.tocsr()


@dataclass
class BranchFlows:
    p_from: np.ndarray
    q_from: np.ndarray
    p_to: np.ndarray
    q_to: np.ndarray
    s_from: np.ndarray
    s_to: np.ndarray


def branch_flows(network: Network, state: PfState) -> BranchFlows:
    """Complex power entering each branch end, from the solved state."""
    _, yf, yt = admittance_matrices(network)
    v = state.v * np.exp(1j * state.theta)
    fidx = np.array(
        [network.bus_index(br.from_bus) for br in network.branches], dtype=int
    )
    tidx = np.array(
        [network.bus_index(br.to_bus) for br in network.branches], dtype=int
    )
    sf = v[fidx] * np.conj(yf @ v) if len(network.branches) else np.zeros(0, complex)
    st = v[tidx] * np.conj(yt @ v) if len(network.branches) else np.zeros(0, complex)
    return BranchFlows(
        p_from=sf.real,
        q_from=sf.imag,
        p_to=st.real,
        q_to=st.imag,
        s_from=np.abs(sf),
        s_to=np.abs(st),
    )
