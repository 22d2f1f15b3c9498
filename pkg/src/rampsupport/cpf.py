"""Deterministic ramping support capability of one realization.

The transfer level ``lam`` is pushed along the direction stored on the
network until a voltage, thermal or generator limit is hit, or the power
flow stops converging (the nose of the PV curve).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InfeasibleBaseError, SolverError, ValidationError
from .network import BusKind, Network
from .powerflow import Injections, PowerFlowState, branch_currents, bus_power, solve


class ConstraintKind(str, enum.Enum):
    VOLTAGE = "VOLTAGE"
    THERMAL = "THERMAL"
    GEN_P = "GEN_P"
    GEN_Q = "GEN_Q"
    NOSE = "NOSE"
    CAP = "CAP"


@dataclass(frozen=True)
class Violation:
    kind: ConstraintKind
    element: str
    value: float
    limit: float
    margin: float  # normalized, negative when violated


@dataclass(frozen=True)
class CpfOptions:
    lambda_tol: float = 1e-4
    max_lambda: float = 10.0
    pf_tol: float = 1e-8
    max_pf_iter: int = 30
    initial_step: float = 0.01
    limit_tol: float = 1e-9


@dataclass(frozen=True)
class RscResult:
    lam: float
    kind: ConstraintKind
    element: str
    state_at_limit: PowerFlowState
    n_solves: int = 0

    @property
    def binding_constraint(self) -> tuple[ConstraintKind, str]:
        return self.kind, self.element

    @property
    def capped(self) -> bool:
        return self.kind is ConstraintKind.CAP


class _Limits:
    """Vectorized constraint bookkeeping for one network."""

    def __init__(self, net: Network):
        idx = net.bus_index
        self.v_min = np.array([b.v_min for b in net.buses])
        self.v_max = np.array([b.v_max for b in net.buses])
        self.i_max = np.array([br.i_max for br in net.branches])
        self.bus_names = [str(b.id) for b in net.buses]
        self.branch_names = [f"{br.from_bus}-{br.to_bus}" for br in net.branches]
        kinds = [b.kind for b in net.buses]
        gens = net.generators
        self.gen_names = [g.id for g in gens]
        self.gen_pos = np.array([idx[g.bus] for g in gens], dtype=int)
        self.gen_free_p = np.array([kinds[idx[g.bus]] is BusKind.SLACK for g in gens], dtype=bool)
        self.gen_free_q = np.array([kinds[idx[g.bus]] in (BusKind.SLACK, BusKind.PV) for g in gens], dtype=bool)
        per_bus = np.bincount(self.gen_pos, minlength=net.n_bus) if gens else np.zeros(net.n_bus)
        dp_g = np.asarray(net.direction.dp_g) if net.direction is not None else np.zeros(net.n_bus)
        self.gen_p_set = np.array([g.p_set for g in gens])
        self.gen_dp = np.array([dp_g[idx[g.bus]] / per_bus[idx[g.bus]] for g in gens]) if gens else np.zeros(0)
        self.gen_q_ratio = np.array([g.q_ratio for g in gens])
        self.p_min = np.array([g.p_min for g in gens])
        self.p_max = np.array([g.p_max for g in gens])
        self.q_min = np.array([g.q_min for g in gens])
        self.q_max = np.array([g.q_max for g in gens])
        # Several free generators on one bus share its residual equally.
        self.free_share = np.array([1.0 / per_bus[idx[g.bus]] for g in gens]) if gens else np.zeros(0)

    def generator_outputs(self, net: Network, state: PowerFlowState) -> tuple[np.ndarray, np.ndarray]:
        p = self.gen_p_set + state.lam * self.gen_dp
        q = p * self.gen_q_ratio
        if np.any(self.gen_free_p | self.gen_free_q):
            s = bus_power(net, state)
            resid = s - (state.p_spec + 1j * state.q_spec)
            pos = self.gen_pos
            p = np.where(self.gen_free_p, resid.real[pos] * self.free_share, p)
            q = np.where(self.gen_free_q, resid.imag[pos] * self.free_share, q)
        return p, q

    def margins(self, net: Network, state: PowerFlowState):
        """Normalized margins (positive = satisfied), grouped by constraint family."""
        v = state.v
        cur = branch_currents(net, state)
        pg, qg = self.generator_outputs(net, state)
        with np.errstate(invalid="ignore", divide="ignore"):
            thermal = np.where(np.isinf(self.i_max), np.inf, (self.i_max - cur) / self.i_max)
        p_scale = np.maximum(np.where(np.isfinite(self.p_max), np.abs(self.p_max), 1.0), 1e-6)
        q_scale = np.maximum(np.where(np.isfinite(self.q_max), np.abs(self.q_max), 1.0), 1e-6)
        return {
            "v_low": (v - self.v_min, v, self.v_min),
            "v_high": (self.v_max - v, v, self.v_max),
            "thermal": (thermal, cur, self.i_max),
            "p_low": ((pg - self.p_min) / p_scale, pg, self.p_min),
            "p_high": ((self.p_max - pg) / p_scale, pg, self.p_max),
            "q_low": ((qg - self.q_min) / q_scale, qg, self.q_min),
            "q_high": ((self.q_max - qg) / q_scale, qg, self.q_max),
        }


_FAMILY = {
    "v_low": (ConstraintKind.VOLTAGE, "bus_names"),
    "v_high": (ConstraintKind.VOLTAGE, "bus_names"),
    "thermal": (ConstraintKind.THERMAL, "branch_names"),
    "p_low": (ConstraintKind.GEN_P, "gen_names"),
    "p_high": (ConstraintKind.GEN_P, "gen_names"),
    "q_low": (ConstraintKind.GEN_Q, "gen_names"),
    "q_high": (ConstraintKind.GEN_Q, "gen_names"),
}


def _limits(net: Network) -> _Limits:
    cache = net.__dict__.get("_cpf_limits")
    if cache is None:
        cache = _Limits(net)
        net.__dict__["_cpf_limits"] = cache
    return cache


def check_limits(net: Network, state: PowerFlowState, lam: float | None = None, tol: float = 1e-9) -> list[Violation]:
    """All voltage, thermal and generator limit violations at ``state``.

    ``lam`` defaults to the transfer level the state was solved at.
    """
    if not state.converged:
        raise SolverError("limit check on an unconverged state")
    if lam is not None and lam != state.lam:
        state = PowerFlowState(state.theta, state.v, state.converged, state.iterations,
                               state.max_mismatch, state.p_spec, state.q_spec, lam)
    lim = _limits(net)
    out = []
    for fam, (margin, value, limit) in lim.margins(net, state).items():
        kind, names = _FAMILY[fam]
        names = getattr(lim, names)
        for k in np.flatnonzero(margin < -tol):
            out.append(Violation(kind, names[k], float(value[k]), float(limit[k]), float(margin[k])))
    return out


def _worst(net: Network, state: PowerFlowState):
    """(family, position, normalized margin) of the tightest constraint."""
    best = (None, -1, math.inf)
    for fam, (margin, _, _) in _limits(net).margins(net, state).items():
        if margin.size:
            k = int(np.argmin(margin))
            if margin[k] < best[2]:
                best = (fam, k, float(margin[k]))
    return best


def _margin_of(net: Network, state: PowerFlowState, fam: str, k: int) -> float:
    return float(_limits(net).margins(net, state)[fam][0][k])


def max_lambda(net: Network, inj: Injections, opts: CpfOptions | None = None) -> RscResult:
    """Largest transfer level satisfying every limit, to ``opts.lambda_tol``.

    The level is stepped up with doubling steps from a converged base case,
    then the bracket between the last feasible and first infeasible level
    is narrowed. Narrowing uses secant steps on the margin of the violated
    constraint, safeguarded by bisection; power-flow failure marks the nose.
    """
    opts = opts or CpfOptions()
    if net.direction is None or inj.dp is None:
        raise ValidationError("no transfer direction set on the network")
    n_solves = 0

    def evaluate(lam, warm):
        nonlocal n_solves
        n_solves += 1
        try:
            st = solve(net, inj, lam, warm=warm, tol=opts.pf_tol, max_iter=opts.max_pf_iter)
        except SolverError:
            return None, None
        if not st.converged:
            return None, None
        fam, k, m = _worst(net, st)
        return st, (fam, k, m)

    base, worst = evaluate(0.0, None)
    if base is None:
        raise InfeasibleBaseError("base case power flow does not converge")
    if worst[2] < -opts.limit_tol:
        raise InfeasibleBaseError("base case violates limits", check_limits(net, base, tol=opts.limit_tol))

    lo, lo_state, lo_m = 0.0, base, worst
    hi = hi_m = None
    step = opts.initial_step
    while hi is None:
        lam = min(lo + step, opts.max_lambda)
        st, w = evaluate(lam, lo_state)
        if st is None:
            hi, hi_m = lam, None
        elif w[2] < -opts.limit_tol:
            hi, hi_m = lam, w
        else:
            lo, lo_state, lo_m = lam, st, w
            if lam >= opts.max_lambda:
                return RscResult(lo, ConstraintKind.CAP, "", lo_state, n_solves)
            step *= 2.0

    tol = opts.lambda_tol
    stalls = 0
    while hi - lo > tol:
        width = hi - lo
        guess = None
        if hi_m is not None and stalls < 3:
            fam, k, m_hi = hi_m
            m_lo = _margin_of(net, lo_state, fam, k)
            if m_lo > m_hi:
                root = lo + width * m_lo / (m_lo - m_hi)
                guess = min(max(root, lo + 0.01 * width), hi - 0.01 * width)
        if guess is None:
            trial = [0.5 * (lo + hi)]
        else:
            # Straddle the secant estimate so a good guess closes the bracket at once.
            trial = sorted({min(max(guess - 0.4 * tol, lo + 1e-3 * tol), hi - 1e-3 * tol),
                            min(max(guess + 0.4 * tol, lo + 1e-3 * tol), hi - 1e-3 * tol)})
        before = width
        for lam in trial:
            if not lo < lam < hi:
                continue
            st, w = evaluate(lam, lo_state)
            if st is None:
                hi, hi_m = lam, None
            elif w[2] < -opts.limit_tol:
                hi, hi_m = lam, w
            else:
                lo, lo_state, lo_m = lam, st, w
        stalls = stalls + 1 if hi - lo > 0.5 * before else 0

    if hi_m is None:
        kind, element = ConstraintKind.NOSE, ""
    else:
        fam, k, _ = hi_m
        kind, names = _FAMILY[fam]
        element = getattr(_limits(net), names)[k]
    return RscResult(lo, kind, element, lo_state, n_solves)
