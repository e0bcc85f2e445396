"""Immutable power-network data model in per-unit.

All electrical quantities on Network and its children are per-unit on the
network's own MVA base. Conversion from engineering units (MW, MVAr, ohms)
happens at the file boundary in :mod:`pqvflex.caseio`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

SLACK = "slack"
PV = "pv"
PQ = "pq"
PCC = "pcc"

BUS_KINDS = (SLACK, PV, PQ, PCC)

_INF = 1e20  # bounds at or beyond this magnitude are treated as absent


class NetworkError(ValueError):
    """Structural or semantic defect in network data."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = PQ
    v_min: float = 0.9
    v_max: float = 1.1
    theta_min: float = -math.pi
    theta_max: float = math.pi
    base_kv: float = 1.0

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise NetworkError(f"bus {self.id}: unknown kind {self.kind!r}")
        if self.v_min > self.v_max:
            raise NetworkError(f"bus {self.id}: v_min > v_max")
        if self.theta_min > self.theta_max:
            raise NetworkError(f"bus {self.id}: theta_min > theta_max")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    rating: float = 0.0  # p.u. apparent power; 0 = unlimited
    status: str = "closed"

    def __post_init__(self):
        if self.r == 0.0 and self.x == 0.0:
            raise NetworkError(
                f"branch {self.from_bus}-{self.to_bus}: zero series impedance"
            )
        if self.rating < 0.0:
            raise NetworkError(f"branch {self.from_bus}-{self.to_bus}: rating < 0")
        if self.status not in ("closed", "open"):
            raise NetworkError(
                f"branch {self.from_bus}-{self.to_bus}: bad status {self.status!r}"
            )

    @property
    def closed(self) -> bool:
        return self.status == "closed"


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    cost_a: float = 0.0  # currency/h per (p.u. power)^2
    cost_b: float = 0.0  # currency/h per p.u. power
    cost_c: float = 0.0  # currency/h

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise NetworkError(f"generator at bus {self.bus}: p_min > p_max")
        if self.q_min > self.q_max:
            raise NetworkError(f"generator at bus {self.bus}: q_min > q_max")

    def cost(self, p: float) -> float:
        return self.cost_a * p * p + self.cost_b * p + self.cost_c


@dataclass(frozen=True)
class DgUnit:
    """Dispatchable unit with a convex PQ capability region.

    The capability is the intersection of half-planes alpha*p + beta*q <= delta
    with an optional apparent-power cap p^2 + q^2 <= s_max^2, all per-unit,
    further intersected with the generator box bounds.
    """

    generator: Generator
    capability: tuple[tuple[float, float, float], ...] = ()
    s_max: float | None = None

    def __post_init__(self):
        for alpha, beta, _ in self.capability:
            if alpha == 0.0 and beta == 0.0:
                raise NetworkError(
                    f"dg at bus {self.generator.bus}: degenerate half-plane"
                )
        if self.s_max is not None and self.s_max <= 0.0:
            raise NetworkError(f"dg at bus {self.generator.bus}: s_max <= 0")


@dataclass(frozen=True)
class Load:
    bus: int
    p_d: float
    q_d: float


@dataclass(frozen=True)
class PccLink:
    """Marks the transmission bus where a distribution system couples.

    Sign convention: coupling-point p and q are positive when the distribution
    system exports toward the transmission side.
    """

    ts_bus: int
    ds_name: str


@dataclass(frozen=True)
class Network:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...] = ()
    generators: tuple[Generator, ...] = ()
    dgs: tuple[DgUnit, ...] = ()
    loads: tuple[Load, ...] = ()
    name: str = ""
    _index: dict[int, int] = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        index = {b.id: i for i, b in enumerate(self.buses)}
        if len(index) != len(self.buses):
            raise NetworkError(f"network {self.name!r}: duplicate bus ids")
        object.__setattr__(self, "_index", index)
        self._validate(index)

    def _validate(self, index):
        for br in self.branches:
            if br.from_bus not in index or br.to_bus not in index:
                raise NetworkError(
                    f"branch {br.from_bus}-{br.to_bus}: dangling bus reference"
                )
        for g in self.all_units():
            if g.bus not in index:
                raise NetworkError(f"generator at bus {g.bus}: dangling bus reference")
        for ld in self.loads:
            if ld.bus not in index:
                raise NetworkError(f"load at bus {ld.bus}: dangling bus reference")
        n_slack = sum(1 for b in self.buses if b.kind == SLACK)
        if self.buses and n_slack != 1:
            raise NetworkError(
                f"network {self.name!r}: expected exactly one slack bus, got {n_slack}"
            )
        if self.buses and not self._connected():
            raise NetworkError(f"network {self.name!r}: not connected")

    def _connected(self) -> bool:
        adj: dict[int, list[int]] = {b.id: [] for b in self.buses}
        for br in self.branches:
            if br.closed:
                adj[br.from_bus].append(br.to_bus)
                adj[br.to_bus].append(br.from_bus)
        seen = {self.buses[0].id}
        stack = [self.buses[0].id]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(self.buses)

    # -- lookups -----------------------------------------------------------

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self, bus_id: int) -> int:
        try:
            return self._index[bus_id]
        except KeyError:
            raise NetworkError(f"unknown bus id {bus_id}") from None

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.bus_index(bus_id)]

    def slack_index(self) -> int:
        for i, b in enumerate(self.buses):
            if b.kind == SLACK:
                return i
        raise NetworkError(f"network {self.name!r}: no slack bus")

    def all_units(self) -> tuple[Generator, ...]:
        """Conventional generators followed by DG generator records."""
        return self.generators + tuple(dg.generator for dg in self.dgs)

    def load_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-bus demand (p_d, q_d) in p.u., aggregated over loads."""
        p = np.zeros(self.n_bus)
        q = np.zeros(self.n_bus)
        for ld in self.loads:
            i = self.bus_index(ld.bus)
            p[i] += ld.p_d
            q[i] += ld.q_d
        return p, q


def build_admittance(network: Network) -> sp.csr_matrix:
    """Bus admittance matrix from the standard pi branch model."""
    return admittance_matrices(network)[0]


def admittance_matrices(
    network: Network,
) -> tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]:
    """(Ybus, Yf, Yt) with Yf/Yt mapping bus voltages to branch-end currents."""
    nb = network.n_bus
    nl = len(network.branches)
    stat = np.array([1.0 if br.closed else 0.0 for br in network.branches])
    r = np.array([br.r for br in network.branches], dtype=float)
    x = np.array([br.x for br in network.branches], dtype=float)
    bc = np.array([br.b_charge for br in network.branches], dtype=float)
    tap = np.array([br.tap if br.tap != 0.0 else 1.0 for br in network.branches])
    shift = np.array([br.shift for br in network.branches], dtype=float)
    ys = stat / (r + 1j * x) if nl else np.zeros(0, dtype=complex)
    tap_c = tap * np.exp(1j * shift)

    ytt = ys + 0.5j * stat * bc
    yff = ytt / (tap_c * np.conj(tap_c))
    yft = -ys / np.conj(tap_c)
    ytf = -ys / tap_c

    f = np.array([network.bus_index(br.from_bus) for br in network.branches], dtype=int)
    t = np.array([network.bus_index(br.to_bus) for br in network.branches], dtype=int)
    rows = np.concatenate([np.arange(nl), np.arange(nl)])
    yf = sp.csr_matrix(
        (np.concatenate([yff, yft]), (rows, np.concatenate([f, t]))), shape=(nl, nb)
    )
    yt = sp.csr_matrix(
        (np.concatenate([ytf, ytt]), (rows, np.concatenate([f, t]))), shape=(nl, nb)
    )
    cf = sp.csr_matrix((np.ones(nl), (np.arange(nl), f)), shape=(nl, nb))
    ct = sp.csr_matrix((np.ones(nl), (np.arange(nl), t)), shape=(nl, nb))
    ybus = (cf.T @ yf + ct.T @ yt).tocsr()
    return ybus, yf, yt


def capability_residuals(dg: DgUnit, p: float, q: float) -> np.ndarray:
    """Residuals of the DG capability set; all <= 0 iff (p, q) lies inside.

    Box bounds on p and q are checked separately by callers.
    """
    res = [alpha * p + beta * q - delta for alpha, beta, delta in dg.capability]
    if dg.s_max is not None:
        res.append(p * p + q * q - dg.s_max * dg.s_max)
    return np.array(res, dtype=float)


# -- DG capability presets -------------------------------------------------
#
# The archetype parameters below are stand-ins for heterogeneous converter
# capability curves; each is scaled to the unit's p_max and documented in
# docs/format.md.


def dg_capability_preset(kind: str, p_max: float) -> tuple[tuple, float | None]:
    """(half_planes, s_max) for a named convex capability preset."""
    q0 = 0.6 * p_max
    if kind == "box":
        return (), None
    if kind == "box_circle":
        return (), p_max
    if kind == "triangle":
        # vertices (0, -q0/1.2), (0, q0/1.2), (p_max, 0)
        return ((0.5, 1.0, 0.5 * p_max), (0.5, -1.0, 0.5 * p_max)), None
    if kind == "trapezoid":
        # full q range up to p = 0.5 p_max, tapering to +-0.1 p_max at p_max
        return ((1.0, 1.0, 1.1 * p_max), (1.0, -1.0, 1.1 * p_max)), None
    if kind == "pentagon":
        return (
            (1.0, 1.0, 1.2 * p_max),
            (1.0, -1.0, 1.2 * p_max),
            (0.0, 1.0, q0),
        ), None
    raise NetworkError(f"unknown DG capability preset {kind!r}")


def make_dg(
    kind: str,
    bus: int,
    p_max: float,
    cost_a: float = 0.0,
    cost_b: float = 0.0,
    cost_c: float = 0.0,
) -> DgUnit:
    """DG with a preset capability scaled to p_max (per-unit)."""
    planes, s_max = dg_capability_preset(kind, p_max)
    q0 = 0.6 * p_max if kind != "triangle" else 0.5 * p_max
    gen = Generator(
        bus=bus,
        p_min=0.0,
        p_max=p_max,
        q_min=-q0,
        q_max=q0,
        cost_a=cost_a,
        cost_b=cost_b,
        cost_c=cost_c,
    )
    return DgUnit(generator=gen, capability=planes, s_max=s_max)


# -- TS + DS merging --------------------------------------------------------


@dataclass(frozen=True)
class BusMapping:
    """Result translation table for a merged network.

    ts: ts bus id -> merged bus id; ds: (ds name, ds bus id) -> merged bus id.
    """

    ts: dict[int, int]
    ds: dict[tuple[str, int], int]


def merge_ts_ds(
    ts: Network,
    attachments: list[tuple[PccLink, Network, Branch]],
) -> tuple[Network, BusMapping]:
    """Integrate distribution networks into the transmission network.

    Each attachment wires the DS's slack (interface) bus to the PCC bus in the
    TS through the given interconnect branch (whose from/to refer to TS-side
    and DS-side ids respectively, before re-indexing). DS quantities are
    rebased onto the TS MVA base; the DS slack designation is dropped.
    """
    for link, ds, _ in attachments:
        ts.bus(link.ts_bus)  # raises on dangling reference
        if any(g.bus == link.ts_bus for g in ts.all_units()):
            raise NetworkError(f"PCC bus {link.ts_bus} hosts a generator")
        if any(ld.bus == link.ts_bus for ld in ts.loads):
            raise NetworkError(f"PCC bus {link.ts_bus} hosts a load")

    buses = list(ts.buses)
    branches = list(ts.branches)
    generators = list(ts.generators)
    dgs = list(ts.dgs)
    loads = list(ts.loads)
    ts_map = {b.id: b.id for b in ts.buses}
    ds_map: dict[tuple[str, int], int] = {}
    next_id = max(b.id for b in ts.buses) + 1

    for link, ds, tie in attachments:
        rho = ts.base_mva / ds.base_mva  # multiply p.u. power by 1/rho
        offset = {}
        ds_slack = ds.buses[ds.slack_index()].id
        for b in ds.buses:
            offset[b.id] = next_id
            ds_map[(ds.name, b.id)] = next_id
            kind = PQ if b.kind in (SLACK, PCC) else b.kind
            buses.append(replace(b, id=next_id, kind=kind))
            next_id += 1
        for br in ds.branches:
            branches.append(
                replace(
                    br,
                    from_bus=offset[br.from_bus],
                    to_bus=offset[br.to_bus],
                    r=br.r * rho,
                    x=br.x * rho,
                    b_charge=br.b_charge / rho,
                )
            )
        for g in ds.generators:
            generators.append(_rebase_gen(g, offset[g.bus], rho))
        for dg in ds.dgs:
            generators_bus = offset[dg.generator.bus]
            planes = tuple((a, b, d / rho) for a, b, d in dg.capability)
            dgs.append(
                DgUnit(
                    generator=_rebase_gen(dg.generator, generators_bus, rho),
                    capability=planes,
                    s_max=None if dg.s_max is None else dg.s_max / rho,
                )
            )
        for ld in ds.loads:
            loads.append(Load(bus=offset[ld.bus], p_d=ld.p_d / rho, q_d=ld.q_d / rho))
        branches.append(
            replace(tie, from_bus=link.ts_bus, to_bus=offset[ds_slack])
        )

    merged = Network(
        base_mva=ts.base_mva,
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(generators),
        dgs=tuple(dgs),
        loads=tuple(loads),
        name=f"{ts.name}+{'+'.join(ds.name for _, ds, _ in attachments)}",
    )
    return merged, BusMapping(ts=ts_map, ds=ds_map)


def _rebase_gen(g: Generator, bus: int, rho: float) -> Generator:
    """Rebase a generator onto a base rho times larger, cost value preserved."""

    def clip(v):
        return v if abs(v) >= _INF else v / rho

    return Generator(
        bus=bus,
        p_min=clip(g.p_min),
        p_max=clip(g.p_max),
        q_min=clip(g.q_min),
        q_max=clip(g.q_max),
        cost_a=g.cost_a * rho * rho,
        cost_b=g.cost_b * rho,
        cost_c=g.cost_c,
    )


def close_branches(network: Network, branch_ids: list[int]) -> Network:
    """Copy of the network with the given branch positions closed."""
    branches = list(network.branches)
    for idx in branch_ids:
        if not 0 <= idx < len(branches):
            raise NetworkError(f"unknown branch index {idx}")
        branches[idx] = replace(branches[idx], status="closed")
    return replace(network, branches=tuple(branches))
