"""BESS smoothing of dominant random inputs and post-smoothing assessment.

A BESS assigned to a group of devices injects, per realization, the
deviation of the group's net output from its slot mean:

    P_B = sum_G (E[P_G] - P_G) + sum_L (P_L - E[P_L])

clipped to the unit's power limits and to what its state of charge can
deliver over the slot. Positive commands discharge.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .distribution import RscDistribution, confidence_rsc
from .exceptions import ValidationError
from .network import PCC_BUS, BessUnit, DeviceKind, Network
from .pipeline import AssessConfig, SlotAssessment, assess, mcs
from .stochastic import SampleSet, device_outputs

DEFAULT_BESS_MW = 6.0
DEFAULT_BESS_MWH = 12.0


@dataclass(frozen=True)
class BessAssignment:
    unit: BessUnit
    devices: tuple[str, ...]
    new: bool = False


def segments(net: Network) -> dict[int, int]:
    """Bus id -> id of the first bus of its feeder segment.

    A segment is a maximal run of buses without branching: it starts at a
    child of the root or of a bus with several children.
    """
    parent, _ = net.tree(PCC_BUS)
    children: dict[int, list[int]] = {b: [] for b in parent}
    for b, p in parent.items():
        if p is not None:
            children[p].append(b)
    head: dict[int, int] = {PCC_BUS: PCC_BUS}
    stack = [PCC_BUS]
    while stack:
        u = stack.pop()
        fork = len(children[u]) > 1 or u == PCC_BUS
        for v in children[u]:
            head[v] = v if fork else head[u]
            stack.append(v)
    # The root's only child continues the root segment.
    root_kids = children[PCC_BUS]
    if len(root_kids) == 1:
        first = root_kids[0]
        for b, h in list(head.items()):
            if h == first:
                head[b] = PCC_BUS
    return head


def _distance(net: Network, a: int, b: int) -> int:
    parent, depth = net.tree(PCC_BUS)
    d = 0
    while a != b:
        if depth[a] >= depth[b]:
            a = parent[a]
        else:
            b = parent[b]
        d += 1
    return d


def aggregate_by_branch(
    net: Network, dominant: Iterable[str], template: BessUnit | None = None
) -> tuple[BessAssignment, ...]:
    """Group dominant devices by feeder segment and give each group one BESS.

    The existing unit on the segment closest (in branch hops) to the group
    is used; without one, a new unit is placed at the group's shallowest
    bus, rated like ``template`` (default: the first existing unit, else
    6 MW / 12 MWh at half charge).
    """
    if not net.is_radial:
        raise ValidationError("branch aggregation needs a radial network")
    dominant = list(dict.fromkeys(dominant))
    if not dominant:
        return ()
    head = segments(net)
    _, depth = net.tree(PCC_BUS)
    groups: dict[int, list[str]] = {}
    for dev_id in dominant:
        try:
            dev = net.device(dev_id)
        except KeyError:
            raise ValidationError(f"unknown device {dev_id!r}") from None
        groups.setdefault(head[dev.bus], []).append(dev_id)
    if template is None:
        if net.bess_units:
            template = net.bess_units[0]
        else:
            s = net.s_base
            template = BessUnit("template", PCC_BUS, -DEFAULT_BESS_MW / s, DEFAULT_BESS_MW / s,
                                DEFAULT_BESS_MWH / s, DEFAULT_BESS_MWH / (2 * s))
    used: set[str] = set()
    out = []
    n_new = 0
    for seg in sorted(groups, key=lambda h: (depth[h], h)):
        devs = tuple(sorted(groups[seg], key=dominant.index))
        buses = [net.device(d).bus for d in devs]
        candidates = [u for u in net.bess_units if head[u.bus] == seg and u.id not in used]
        if candidates:
            unit = min(candidates, key=lambda u: (sum(_distance(net, u.bus, b) for b in buses), u.id))
            used.add(unit.id)
            out.append(BessAssignment(unit, devs))
        else:
            n_new += 1
            bus = min(buses, key=lambda b: (depth[b], b))
            unit = BessUnit(f"NEW{n_new}", bus, template.p_min, template.p_max, template.capacity, template.soc)
            out.append(BessAssignment(unit, devs, new=True))
    return tuple(out)


def group_target(net: Network, devices: Sequence[str], outputs: np.ndarray, expectations: np.ndarray) -> np.ndarray:
    """Unclipped smoothing target for each row of device ``outputs`` (per-unit)."""
    outputs = np.atleast_2d(outputs)
    pos = {d.id: k for k, d in enumerate(net.random_devices)}
    target = np.zeros(outputs.shape[0])
    for dev_id in devices:
        k = pos[dev_id]
        dev = net.random_devices[k]
        if dev.kind is DeviceKind.EV:
            target += outputs[:, k] - expectations[k]
        else:
            target += expectations[k] - outputs[:, k]
    return target


def command_bounds(bess: BessUnit, soc=None, dt: float = 1.0) -> tuple[float, float]:
    """Feasible command interval given power limits and an SOC interval ``(low, high)``."""
    lo_soc, hi_soc = (bess.soc, bess.soc) if soc is None else soc
    lo = max(bess.p_min, -(bess.capacity - hi_soc) / dt)
    hi = min(bess.p_max, lo_soc / dt)
    return min(lo, 0.0), max(hi, 0.0)


def smooth_command(bess: BessUnit, target, soc=None, dt: float = 1.0):
    """Clip a smoothing target to the unit's power and energy limits."""
    lo, hi = command_bounds(bess, soc, dt)
    out = np.clip(np.asarray(target, dtype=float), lo, hi)
    return out if out.ndim else float(out)


def soc_update(bess: BessUnit, command: float, dt: float = 1.0, soc: float | None = None) -> float:
    """State of charge after holding ``command`` for ``dt`` hours."""
    if not bess.p_min - 1e-12 <= command <= bess.p_max + 1e-12:
        raise ValidationError(f"BESS {bess.id}: command {command} outside [{bess.p_min}, {bess.p_max}]")
    start = bess.soc if soc is None else soc
    new = start - command * dt
    tol = 1e-12 * max(1.0, bess.capacity)
    if not -tol <= new <= bess.capacity + tol:
        raise AssertionError(f"BESS {bess.id}: SOC {new} leaves [0, {bess.capacity}]; command limiter failed")
    return float(min(max(new, 0.0), bess.capacity))


@dataclass(frozen=True)
class SlotCommands:
    slot: str
    commands: np.ndarray  # rows x units, per-unit
    soc_before: np.ndarray  # units x (low, high)
    soc_after: np.ndarray
    binding: np.ndarray  # per unit, True when any row was clipped


@dataclass
class BessSchedule:
    """Commands of each assigned unit across consecutive slots.

    The state of charge is carried as an interval covering every
    realization, so commands in later slots are feasible whatever happened
    earlier.
    """

    assignments: tuple[BessAssignment, ...]
    dt: float = 1.0
    soc0: np.ndarray | None = None  # units x (low, high); defaults to each unit's soc
    slots: list[SlotCommands] = field(default_factory=list)

    @property
    def buses(self) -> tuple[int, ...]:
        return tuple(a.unit.bus for a in self.assignments)

    def soc_interval(self) -> np.ndarray:
        if self.slots:
            return self.slots[-1].soc_after.copy()
        if self.soc0 is not None:
            return np.asarray(self.soc0, dtype=float).reshape(-1, 2).copy()
        return np.array([[a.unit.soc, a.unit.soc] for a in self.assignments], dtype=float).reshape(-1, 2)

    def plan(self, net: Network, slot: str, x: np.ndarray, expectations: np.ndarray | None = None) -> SlotCommands:
        """Commands for every row of ``x`` (physical units, device order), appended to the schedule."""
        outputs = device_outputs(net, np.atleast_2d(x))
        if expectations is None:
            expectations = outputs.mean(axis=0)
        soc = self.soc_interval()
        cmds = np.zeros((outputs.shape[0], len(self.assignments)))
        binding = np.zeros(len(self.assignments), dtype=bool)
        after = soc.copy()
        for j, a in enumerate(self.assignments):
            target = group_target(net, a.devices, outputs, expectations)
            cmds[:, j] = smooth_command(a.unit, target, tuple(soc[j]), self.dt)
            binding[j] = bool(np.any(np.abs(cmds[:, j] - target) > 1e-12))
            if cmds.shape[0]:
                after[j, 0] = soc_update(a.unit, float(cmds[:, j].max()), self.dt, soc[j, 0])
                after[j, 1] = soc_update(a.unit, float(cmds[:, j].min()), self.dt, soc[j, 1])
        rec = SlotCommands(slot, cmds, soc, after, binding)
        self.slots.append(rec)
        return rec

    def rows(self, s_base: float = 1.0) -> list[dict]:
        out = []
        for rec in self.slots:
            for j, a in enumerate(self.assignments):
                c = rec.commands[:, j] if rec.commands.size else np.zeros(1)
                out.append({
                    "slot": rec.slot,
                    "bess_id": a.unit.id,
                    "bus": a.unit.bus,
                    "devices": " ".join(a.devices),
                    "cmd_mean_mw": float(c.mean()) * s_base,
                    "cmd_min_mw": float(c.min()) * s_base,
                    "cmd_max_mw": float(c.max()) * s_base,
                    "soc_after_min_mwh": float(rec.soc_after[j, 0]) * s_base,
                    "soc_after_max_mwh": float(rec.soc_after[j, 1]) * s_base,
                    "limits_binding": bool(rec.binding[j]),
                })
        return out

    def save_csv(self, path, s_base: float = 1.0) -> None:
        rows = self.rows(s_base)
        cols = ["slot", "bess_id", "bus", "devices", "cmd_mean_mw", "cmd_min_mw", "cmd_max_mw",
                "soc_after_min_mwh", "soc_after_max_mwh", "limits_binding"]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in (r[c] for c in cols)])


@dataclass(frozen=True)
class EnhancementResult:
    slot: str
    pre: SlotAssessment
    post: SlotAssessment
    commands: SlotCommands | None
    assignments: tuple[BessAssignment, ...]

    @property
    def increment(self) -> float:
        return self.post.rsc - self.pre.rsc


def assess_post_smoothing(
    net: Network,
    samples: SampleSet,
    cfg: AssessConfig,
    schedule: BessSchedule | None = None,
    pre: SlotAssessment | None = None,
) -> EnhancementResult:
    """Assess a slot, smooth its dominant inputs with BESS, and assess again.

    ``schedule`` carries units and SOC across slots; when omitted, units
    are assigned from this slot's dominant variables. With no dominant
    variables the post assessment is the pre assessment.
    """
    pre = pre or assess(net, samples, cfg)
    if schedule is None:
        dominant = pre.dominant.variables if pre.dominant is not None else ()
        schedule = BessSchedule(aggregate_by_branch(net, dominant))
    if not schedule.assignments:
        return EnhancementResult(samples.time_slot, pre, pre, None, ())
    rec = schedule.plan(net, samples.time_slot, samples.data)
    post = assess(net, samples, cfg, rec.commands, schedule.buses)
    return EnhancementResult(samples.time_slot, pre, post, rec, schedule.assignments)


def mcs_post_smoothing(net: Network, samples: SampleSet, cfg: AssessConfig, result: EnhancementResult):
    """Direct CPF benchmark of the smoothed configuration of ``result``."""
    if result.commands is None:
        return mcs(net, samples, cfg)
    return mcs(net, samples, cfg, result.commands.commands, tuple(a.unit.bus for a in result.assignments))


def rsc_pair(pre: RscDistribution, post: RscDistribution, gamma: float) -> tuple[float, float]:
    return confidence_rsc(pre, gamma), confidence_rsc(post, gamma)
