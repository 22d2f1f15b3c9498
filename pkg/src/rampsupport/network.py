"""Microgrid data model, case-file ingestion and the transfer direction.

Everything inside a :class:`Network` is per-unit on ``s_base`` (MVA) and
``base_kv``. Case files carry engineering units (MW, MVAr, ohm, A, MWh)
and are converted once, at load time.
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .exceptions import ValidationError

PCC_BUS = 1

BUILTIN_CASES = {
    "ieee33-modified": "ieee33_modified.json",
    "ieee33-base": "ieee33_base.json",
}


class BusKind(str, enum.Enum):
    PCC = "PCC"
    PQ = "PQ"
    PV = "PV"
    SLACK = "SLACK"


class DeviceKind(str, enum.Enum):
    PV = "PV"
    WT = "WT"
    EV = "EV"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    base_load_p: float = 0.0
    base_load_q: float = 0.0
    v_min: float = 0.95
    v_max: float = 1.05


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    i_max: float = math.inf


@dataclass(frozen=True)
class Generator:
    id: str
    bus: int
    p_min: float
    p_max: float
    q_min: float = -math.inf
    q_max: float = math.inf
    power_factor: float = 1.0
    dispatchable: bool = True
    p_set: float = 0.0
    v_set: float = 1.0

    @property
    def q_ratio(self) -> float:
        """Reactive-to-active ratio implied by the power factor."""
        return math.tan(math.acos(self.power_factor))


@dataclass(frozen=True)
class BessUnit:
    id: str
    bus: int
    p_min: float
    p_max: float
    capacity: float
    soc: float


@dataclass(frozen=True)
class RandomDevice:
    """A PV farm, wind turbine or EV charging station driven by one random input.

    The conversion constants default to the values used for the modified
    33-bus microgrid: radiation set-point 150 W/m2, standard radiation
    2000 W/m2, wind cut-in/rated/cut-off speeds of 4/25/40 m/s.
    """

    id: str
    kind: DeviceKind
    bus: int
    rating: float
    power_factor: float = 1.0
    g_set: float = 150.0
    g_std: float = 2000.0
    v_in: float = 4.0
    v_rated: float = 25.0
    v_out: float = 40.0

    def __post_init__(self):
        if not self.rating > 0:
            raise ValidationError(f"device {self.id}: rating must be positive")
        if not 0 < self.power_factor <= 1:
            raise ValidationError(f"device {self.id}: power factor must lie in (0, 1]")
        if self.kind is DeviceKind.PV and not 0 < self.g_set < self.g_std:
            raise ValidationError(f"device {self.id}: need 0 < g_set < g_std")
        if self.kind is DeviceKind.WT and not 0 <= self.v_in < self.v_rated < self.v_out:
            raise ValidationError(f"device {self.id}: need v_in < v_rated < v_out")

    @property
    def q_ratio(self) -> float:
        return math.tan(math.acos(self.power_factor))

    @property
    def unit(self) -> str:
        return {DeviceKind.PV: "W/m2", DeviceKind.WT: "m/s", DeviceKind.EV: "MW"}[self.kind]


@dataclass(frozen=True)
class TransferDirection:
    """Per-bus increments defining the transfer direction ``b``.

    Entries are ordered like ``Network.buses``. Bus ``i`` contributes
    ``(dp_g[i] - dp_l[i], -dq_l[i])`` to ``b``.
    """

    dp_g: tuple[float, ...]
    dp_l: tuple[float, ...]
    dq_l: tuple[float, ...]
    dispatch_buses: tuple[int, ...] = ()

    def vector(self) -> np.ndarray:
        """The stacked 2N vector ``[b_1, ..., b_N]`` with ``b_i = (dP, dQ)``."""
        p = np.asarray(self.dp_g) - np.asarray(self.dp_l)
        q = -np.asarray(self.dq_l)
        return np.column_stack([p, q]).ravel()

    def scaled(self, k: float) -> "TransferDirection":
        return TransferDirection(
            tuple(k * v for v in self.dp_g),
            tuple(k * v for v in self.dp_l),
            tuple(k * v for v in self.dq_l),
            self.dispatch_buses,
        )


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...] = ()
    bess_units: tuple[BessUnit, ...] = ()
    random_devices: tuple[RandomDevice, ...] = ()
    s_base: float = 100.0
    base_kv: float = 12.66
    direction: TransferDirection | None = None
    name: str = ""
    slack_target: float | None = None  # per-unit slack output the base dispatch aims for

    def __post_init__(self):
        _validate(self)

    # Derived lookups are cached on the instance; the network never mutates.
    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @cached_property
    def slack_bus(self) -> int:
        return next(b.id for b in self.buses if b.kind is BusKind.SLACK)

    @cached_property
    def adjacency(self) -> dict[int, list[tuple[int, int]]]:
        """bus id -> list of (neighbour id, branch position)."""
        adj: dict[int, list[tuple[int, int]]] = {b.id: [] for b in self.buses}
        for k, br in enumerate(self.branches):
            adj[br.from_bus].append((br.to_bus, k))
            adj[br.to_bus].append((br.from_bus, k))
        return adj

    @property
    def is_radial(self) -> bool:
        return len(self.branches) == len(self.buses) - 1

    def tree(self, root: int = PCC_BUS) -> tuple[dict[int, int | None], dict[int, int]]:
        """Parent map and depth map of the spanning tree rooted at ``root``."""
        parent: dict[int, int | None] = {root: None}
        depth = {root: 0}
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v, _ in self.adjacency[u]:
                if v not in parent:
                    parent[v] = u
                    depth[v] = depth[u] + 1
                    queue.append(v)
        return parent, depth

    def device(self, device_id: str) -> RandomDevice:
        for d in self.random_devices:
            if d.id == device_id:
                return d
        raise KeyError(device_id)

    def with_direction(self, direction: TransferDirection) -> "Network":
        return replace(self, direction=direction)

    def with_bess(self, units: Iterable[BessUnit]) -> "Network":
        return replace(self, bess_units=tuple(units))


def _validate(net: Network) -> None:
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ValidationError(f"duplicate bus id(s): {dup}")
    if PCC_BUS not in ids:
        raise ValidationError("bus 1 (the PCC) is missing")
    known = set(ids)
    slack = [b.id for b in net.buses if b.kind is BusKind.SLACK]
    if len(slack) != 1:
        raise ValidationError(f"exactly one SLACK bus required, found {len(slack)}")
    pcc_kinds = [b.id for b in net.buses if b.kind is BusKind.PCC]
    if pcc_kinds not in ([], [PCC_BUS]):
        raise ValidationError(f"only bus 1 may be of kind PCC, got {pcc_kinds}")
    for b in net.buses:
        if not 0 < b.v_min < b.v_max:
            raise ValidationError(f"bus {b.id}: voltage limits need 0 < v_min < v_max")
    for k, br in enumerate(net.branches):
        name = f"branch {br.from_bus}-{br.to_bus}"
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise ValidationError(f"{name}: unknown bus {end}")
        if br.from_bus == br.to_bus:
            raise ValidationError(f"{name}: self loop")
        if br.r < 0 or (br.x == 0 and br.r <= 0):
            raise ValidationError(f"{name}: impedance must be nonzero with r >= 0")
        if not br.i_max > 0:
            raise ValidationError(f"{name}: i_max must be positive")
    for g in net.generators:
        if g.bus not in known:
            raise ValidationError(f"generator {g.id}: unknown bus {g.bus}")
        if g.p_min > g.p_max:
            raise ValidationError(f"generator {g.id}: p_min > p_max")
        if g.q_min > g.q_max:
            raise ValidationError(f"generator {g.id}: q_min > q_max")
        if not 0 < g.power_factor <= 1:
            raise ValidationError(f"generator {g.id}: power factor must lie in (0, 1]")
    for u in net.bess_units:
        if u.bus not in known:
            raise ValidationError(f"BESS {u.id}: unknown bus {u.bus}")
        if not u.p_min <= 0 <= u.p_max:
            raise ValidationError(f"BESS {u.id}: need p_min <= 0 <= p_max")
        if not 0 <= u.soc <= u.capacity:
            raise ValidationError(f"BESS {u.id}: need 0 <= soc <= capacity")
    dev_ids = [d.id for d in net.random_devices]
    if len(set(dev_ids)) != len(dev_ids):
        raise ValidationError("duplicate random device ids")
    for d in net.random_devices:
        if d.bus not in known:
            raise ValidationError(f"device {d.id}: unknown bus {d.bus}")
    # connectivity
    if net.buses:
        seen = {PCC_BUS}
        queue = deque([PCC_BUS])
        adj: dict[int, list[int]] = {i: [] for i in ids}
        for br in net.branches:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        if len(seen) != len(ids):
            raise ValidationError(f"network is disconnected; unreachable buses {sorted(known - seen)}")
    if net.direction is not None:
        n = len(ids)
        d = net.direction
        if not len(d.dp_g) == len(d.dp_l) == len(d.dq_l) == n:
            raise ValidationError("transfer direction length does not match bus count")


def build_direction(net: Network, dispatch_buses: Iterable[int]) -> TransferDirection:
    """Direction exporting one per-unit of active power at the PCC.

    The PCC block is ``(-1, 0)``; the export is shared equally by the
    dispatched generator buses.
    """
    buses = sorted(set(dispatch_buses))
    if not buses:
        raise ValidationError("dispatch set is empty")
    dispatchable = {g.bus for g in net.generators if g.dispatchable}
    bad = [b for b in buses if b not in dispatchable]
    if bad:
        raise ValidationError(f"bus(es) {bad} host no dispatchable generator")
    n = net.n_bus
    dp_g = [0.0] * n
    dp_l = [0.0] * n
    dq_l = [0.0] * n
    dp_l[net.bus_index[PCC_BUS]] = 1.0
    share = 1.0 / len(buses)
    for b in buses:
        dp_g[net.bus_index[b]] = share
    return TransferDirection(tuple(dp_g), tuple(dp_l), tuple(dq_l), tuple(buses))


# ---------------------------------------------------------------------------
# case files

def _num(value, default=math.inf):
    return default if value is None else float(value)


def network_from_dict(case: Mapping) -> Network:
    try:
        s_base = float(case.get("s_base_mva", 100.0))
        kv = float(case.get("base_kv", 12.66))
        z_base = kv**2 / s_base
        i_base_a = s_base * 1e3 / (math.sqrt(3) * kv)

        buses = tuple(
            Bus(
                id=int(b["id"]),
                kind=BusKind(b.get("kind", "PQ")),
                base_load_p=float(b.get("base_load_p", 0.0)) / s_base,
                base_load_q=float(b.get("base_load_q", 0.0)) / s_base,
                v_min=float(b.get("v_min", 0.95)),
                v_max=float(b.get("v_max", 1.05)),
            )
            for b in case["buses"]
        )
        branches = tuple(
            Branch(
                from_bus=int(br["from_bus"]),
                to_bus=int(br["to_bus"]),
                r=float(br["r"]) / z_base,
                x=float(br["x"]) / z_base,
                i_max=_num(br.get("i_max")) / i_base_a,
            )
            for br in case["branches"]
        )
        generators = tuple(
            Generator(
                id=str(g.get("id", f"G{k + 1}")),
                bus=int(g["bus"]),
                p_min=_num(g.get("p_min"), -math.inf) / s_base,
                p_max=_num(g.get("p_max")) / s_base,
                q_min=_num(g.get("q_min"), -math.inf) / s_base,
                q_max=_num(g.get("q_max")) / s_base,
                power_factor=float(g.get("power_factor", 1.0)),
                dispatchable=bool(g.get("dispatchable", True)),
                p_set=float(g.get("p_set", 0.0)) / s_base,
                v_set=float(g.get("v_set", 1.0)),
            )
            for k, g in enumerate(case.get("generators", []))
        )
        bess = tuple(
            BessUnit(
                id=str(u.get("id", f"B{k + 1}")),
                bus=int(u["bus"]),
                p_min=float(u["p_min"]) / s_base,
                p_max=float(u["p_max"]) / s_base,
                capacity=float(u["capacity"]) / s_base,
                soc=float(u.get("soc", 0.0)) / s_base,
            )
            for k, u in enumerate(case.get("bess", []))
        )
        devices = []
        for k, d in enumerate(case.get("random_devices", [])):
            extra = {key: float(d[key]) for key in ("g_set", "g_std", "v_in", "v_rated", "v_out") if key in d}
            devices.append(
                RandomDevice(
                    id=str(d.get("id", f"D{k + 1}")),
                    kind=DeviceKind(d["kind"]),
                    bus=int(d["bus"]),
                    rating=float(d["rating"]) / s_base,
                    power_factor=float(d.get("power_factor", 1.0)),
                    **extra,
                )
            )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed case: missing or invalid field {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed case: {exc}") from exc

    net = Network(
        buses=buses,
        branches=branches,
        generators=generators,
        bess_units=bess,
        random_devices=tuple(devices),
        s_base=s_base,
        base_kv=kv,
        name=str(case.get("name", "")),
        slack_target=None if case.get("slack_target") is None else float(case["slack_target"]) / s_base,
    )
    direction = case.get("direction")
    if direction is not None:
        net = net.with_direction(build_direction(net, direction["dispatch_buses"]))
    return net


def _out(value: float, scale: float):
    return None if math.isinf(value) else value * scale


def network_to_dict(net: Network) -> dict:
    """Inverse of :func:`network_from_dict` (engineering units)."""
    s = net.s_base
    z_base = net.base_kv**2 / s
    i_base_a = s * 1e3 / (math.sqrt(3) * net.base_kv)
    case: dict = {
        "name": net.name,
        "s_base_mva": s,
        "base_kv": net.base_kv,
        "buses": [
            {
                "id": b.id,
                "kind": b.kind.value,
                "base_load_p": b.base_load_p * s,
                "base_load_q": b.base_load_q * s,
                "v_min": b.v_min,
                "v_max": b.v_max,
            }
            for b in net.buses
        ],
        "branches": [
            {"from_bus": br.from_bus, "to_bus": br.to_bus, "r": br.r * z_base, "x": br.x * z_base,
             "i_max": _out(br.i_max, i_base_a)}
            for br in net.branches
        ],
        "generators": [
            {
                "id": g.id, "bus": g.bus,
                "p_min": _out(g.p_min, s), "p_max": _out(g.p_max, s),
                "q_min": _out(g.q_min, s), "q_max": _out(g.q_max, s),
                "power_factor": g.power_factor, "dispatchable": g.dispatchable,
                "p_set": g.p_set * s, "v_set": g.v_set,
            }
            for g in net.generators
        ],
        "bess": [
            {"id": u.id, "bus": u.bus, "p_min": u.p_min * s, "p_max": u.p_max * s,
             "capacity": u.capacity * s, "soc": u.soc * s}
            for u in net.bess_units
        ],
        "random_devices": [
            {"id": d.id, "kind": d.kind.value, "bus": d.bus, "rating": d.rating * s,
             "power_factor": d.power_factor, "g_set": d.g_set, "g_std": d.g_std,
             "v_in": d.v_in, "v_rated": d.v_rated, "v_out": d.v_out}
            for d in net.random_devices
        ],
    }
    if net.slack_target is not None:
        case["slack_target"] = net.slack_target * s
    if net.direction is not None and net.direction.dispatch_buses:
        case["direction"] = {"dispatch_buses": list(net.direction.dispatch_buses)}
    return case


def load_case(path_or_id: str | Path) -> Network:
    """Load a case JSON file, or a builtin case by identifier."""
    key = str(path_or_id)
    if key in BUILTIN_CASES:
        text = resources.files("rampsupport.data").joinpath(BUILTIN_CASES[key]).read_text()
        source = key
    else:
        path = Path(path_or_id)
        if not path.exists():
            raise ValidationError(f"case file not found: {path}")
        text = path.read_text()
        source = str(path)
    try:
        case = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{source}: malformed JSON ({exc})") from exc
    return network_from_dict(case)


def save_case(net: Network, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=2) + "\n")
