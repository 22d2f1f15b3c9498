"""Polar Newton-Raphson AC power flow."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import SingularJacobianError, SolverError
from .network import BusKind, Network

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 30


@dataclass(frozen=True)
class Injections:
    """Specified net bus injections ``p + lam * dp`` and ``q + lam * dq``.

    Slack-bus generation is not part of ``p``/``q``: it is whatever the
    solution requires. Arrays are ordered like ``Network.buses``.
    """

    p: np.ndarray
    q: np.ndarray
    dp: np.ndarray | None = None
    dq: np.ndarray | None = None

    def at(self, lam: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        if lam == 0.0 or self.dp is None:
            return self.p, self.q
        return self.p + lam * self.dp, self.q + lam * self.dq

    def scaled_direction(self, k: float) -> "Injections":
        return Injections(self.p, self.q, k * self.dp, k * self.dq)


@dataclass(frozen=True)
class PowerFlowState:
    theta: np.ndarray
    v: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float
    p_spec: np.ndarray
    q_spec: np.ndarray
    lam: float = 0.0

    @property
    def voltage(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)


class _Model:
    """Per-network arrays reused across solves."""

    def __init__(self, net: Network):
        n = net.n_bus
        idx = net.bus_index
        y = np.zeros((n, n), dtype=complex)
        f = np.array([idx[br.from_bus] for br in net.branches], dtype=int)
        t = np.array([idx[br.to_bus] for br in net.branches], dtype=int)
        ys = np.array([1.0 / complex(br.r, br.x) for br in net.branches])
        np.add.at(y, (f, f), ys)
        np.add.at(y, (t, t), ys)
        np.add.at(y, (f, t), -ys)
        np.add.at(y, (t, f), -ys)
        self.ybus = y
        self.f, self.t, self.ys = f, t, ys
        kinds = [b.kind for b in net.buses]
        self.ref = np.array([k for k, kind in enumerate(kinds) if kind is BusKind.SLACK])
        self.pv = np.array([k for k, kind in enumerate(kinds) if kind is BusKind.PV], dtype=int)
        self.pq = np.array(
            [k for k, kind in enumerate(kinds) if kind in (BusKind.PQ, BusKind.PCC)], dtype=int
        )
        self.pvpq = np.r_[self.pv, self.pq]
        vset = np.ones(n)
        for g in net.generators:
            k = idx[g.bus]
            if kinds[k] in (BusKind.SLACK, BusKind.PV):
                vset[k] = g.v_set
        self.vset = vset


def model(net: Network) -> _Model:
    cache = net.__dict__.get("_pf_model")
    if cache is None:
        cache = _Model(net)
        # The network is frozen; stash the derived model alongside cached properties.
        net.__dict__["_pf_model"] = cache
    return cache


def mismatch(m: _Model, vm: np.ndarray, va: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Stacked mismatch ``[dP(pv+pq), dQ(pq)]`` at the given state."""
    v = vm * np.exp(1j * va)
    s = v * np.conj(m.ybus @ v)
    return np.r_[s.real[m.pvpq] - p[m.pvpq], s.imag[m.pq] - q[m.pq]]


def jacobian(m: _Model, vm: np.ndarray, va: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of :func:`mismatch` w.r.t. ``[va(pv+pq), vm(pq)]``."""
    v = vm * np.exp(1j * va)
    ibus = m.ybus @ v
    vnorm = v / vm
    # dS/dVm = diag(V) conj(Y diag(Vnorm)) + conj(diag(I)) diag(Vnorm)
    ds_dvm = v[:, None] * np.conj(m.ybus * vnorm[None, :])
    ds_dvm[np.diag_indices_from(ds_dvm)] += np.conj(ibus) * vnorm
    # dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
    ds_dva = -1j * v[:, None] * np.conj(m.ybus * v[None, :])
    ds_dva[np.diag_indices_from(ds_dva)] += 1j * v * np.conj(ibus)
    pvpq, pq = m.pvpq, m.pq
    j11 = ds_dva.real[np.ix_(pvpq, pvpq)]
    j12 = ds_dvm.real[np.ix_(pvpq, pq)]
    j21 = ds_dva.imag[np.ix_(pq, pvpq)]
    j22 = ds_dvm.imag[np.ix_(pq, pq)]
    return np.block([[j11, j12], [j21, j22]])


def solve(
    net: Network,
    inj: Injections,
    lam: float = 0.0,
    warm: PowerFlowState | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PowerFlowState:
    """Solve the power flow for the injections at transfer level ``lam``.

    Starts flat (V = v_set at regulated buses, 1 elsewhere; angles 0)
    unless a converged ``warm`` state is supplied. A run that does not
    reach ``tol`` within ``max_iter`` iterations comes back with
    ``converged=False``; a singular Jacobian raises.
    """
    m = model(net)
    p, q = inj.at(lam)
    if warm is not None and warm.converged:
        vm = warm.v.copy()
        va = warm.theta.copy()
    else:
        vm = np.ones(net.n_bus)
        va = np.zeros(net.n_bus)
    vm[m.ref] = m.vset[m.ref]
    vm[m.pv] = m.vset[m.pv]
    npvpq = len(m.pvpq)

    f = mismatch(m, vm, va, p, q)
    err = np.max(np.abs(f)) if f.size else 0.0
    it = 0
    while err > tol and it < max_iter:
        it += 1
        jac = jacobian(m, vm, va)
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"singular Jacobian at iteration {it}") from exc
        va[m.pvpq] += dx[:npvpq]
        vm[m.pq] += dx[npvpq:]
        if not np.all(np.isfinite(vm)) or np.any(vm <= 0):
            return PowerFlowState(va, vm, False, it, np.inf, p, q, lam)
        f = mismatch(m, vm, va, p, q)
        err = np.max(np.abs(f))
        if not np.isfinite(err) or err > 1e6:
            return PowerFlowState(va, vm, False, it, float(err), p, q, lam)
    return PowerFlowState(va, vm, bool(err <= tol), it, float(err), p, q, lam)


def bus_power(net: Network, state: PowerFlowState) -> np.ndarray:
    """Complex net injection ``V conj(Y V)`` at every bus."""
    v = state.voltage
    return v * np.conj(model(net).ybus @ v)


def branch_currents(net: Network, state: PowerFlowState) -> np.ndarray:
    """Per-branch current magnitudes in per-unit."""
    if not state.converged:
        raise SolverError("branch currents requested for an unconverged state")
    m = model(net)
    v = state.voltage
    return np.abs((v[m.f] - v[m.t]) * m.ys)


def total_losses(net: Network, state: PowerFlowState) -> complex:
    m = model(net)
    v = state.voltage
    i = (v[m.f] - v[m.t]) * m.ys
    return complex(np.sum(np.abs(i) ** 2 / m.ys))
