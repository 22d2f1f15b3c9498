"""Random inputs: conversion curves, sample sets, moments and injections."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import stats

from .exceptions import ValidationError
from .network import BusKind, DeviceKind, Network, RandomDevice
from .powerflow import Injections, bus_power, solve

__all__ = [
    "RandomDevice",
    "SampleSet",
    "MomentTable",
    "pv_power",
    "wt_power",
    "device_outputs",
    "assemble_injections",
    "raw_moments",
    "synth_samples",
    "load_samples_csv",
    "load_sample_dir",
    "save_samples_csv",
    "rebalance_dispatch",
    "load_synth_spec",
    "standardize",
]


def pv_power(radiation, dev: RandomDevice):
    """PV active power (per-unit) for solar radiation in W/m2.

    Zero below the set-point, linear ``rating * g / g_std`` up to the
    standard radiation, capped at rating beyond it.
    """
    g = np.asarray(radiation, dtype=float)
    if np.any(g < 0):
        raise ValidationError("negative solar radiation")
    out = np.where(g < dev.g_set, 0.0, dev.rating * np.minimum(g, dev.g_std) / dev.g_std)
    return out if out.ndim else float(out)


def wt_power(speed, dev: RandomDevice):
    """Wind turbine active power (per-unit) for wind speed in m/s (cubic ramp)."""
    v = np.asarray(speed, dtype=float)
    if np.any(v < 0):
        raise ValidationError("negative wind speed")
    ramp = dev.rating * (v**3 - dev.v_in**3) / (dev.v_rated**3 - dev.v_in**3)
    out = np.where(
        (v < dev.v_in) | (v > dev.v_out),
        0.0,
        np.where(v >= dev.v_rated, dev.rating, ramp),
    )
    return out if out.ndim else float(out)


def ev_power(mw, dev: RandomDevice, s_base: float):
    p = np.asarray(mw, dtype=float)
    if np.any(p < 0):
        raise ValidationError("negative EV charging power")
    out = p / s_base
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SampleSet:
    """N x D realizations of the random inputs, one column per device."""

    data: np.ndarray
    columns: tuple[str, ...]
    units: tuple[str, ...] = ()
    time_slot: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValidationError("samples must be a non-empty N x D matrix")
        if data.shape[1] != len(self.columns):
            raise ValidationError(f"{data.shape[1]} data columns but {len(self.columns)} column names")
        if len(set(self.columns)) != len(self.columns):
            raise ValidationError("duplicate sample column names")
        if not np.all(np.isfinite(data)):
            raise ValidationError("samples contain NaN or infinite entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "units", tuple(self.units) or ("",) * len(self.columns))

    def __len__(self):
        return self.data.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    @property
    def n_features(self) -> int:
        return self.data.shape[1]

    def rows(self, index) -> "SampleSet":
        return SampleSet(self.data[index], self.columns, self.units, self.time_slot)

    def aligned(self, net: Network) -> np.ndarray:
        """Data with columns reordered to ``net.random_devices``."""
        order = [d.id for d in net.random_devices]
        missing = sorted(set(order) - set(self.columns))
        extra = sorted(set(self.columns) - set(order))
        if missing or extra:
            raise ValidationError(f"sample columns do not match devices (missing {missing}, unknown {extra})")
        pos = [self.columns.index(c) for c in order]
        return self.data[:, pos]


class _DeviceMap:
    """Device-to-bus incidence and base injections of one network."""

    def __init__(self, net: Network):
        n = net.n_bus
        idx = net.bus_index
        devs = net.random_devices
        self.a_p = np.zeros((n, len(devs)))
        self.a_q = np.zeros((n, len(devs)))
        for k, d in enumerate(devs):
            sign = -1.0 if d.kind is DeviceKind.EV else 1.0
            self.a_p[idx[d.bus], k] = sign
            self.a_q[idx[d.bus], k] = sign * d.q_ratio
        p = -np.array([b.base_load_p for b in net.buses])
        q = -np.array([b.base_load_q for b in net.buses])
        dp = np.zeros(n)
        dq = np.zeros(n)
        slack = idx[net.slack_bus]
        kinds = [b.kind for b in net.buses]
        direction = net.direction
        for g in net.generators:
            k = idx[g.bus]
            if kinds[k] is BusKind.SLACK:
                continue
            p[k] += g.p_set
            q[k] += g.p_set * g.q_ratio
            if direction is not None:
                dp[k] += direction.dp_g[k]
                dq[k] += direction.dp_g[k] * g.q_ratio
        if direction is not None:
            dp -= np.asarray(direction.dp_l)
            dq -= np.asarray(direction.dq_l)
            # Generation at the slack bus is free; any generator share assigned there is implicit.
            dp[slack] = -direction.dp_l[slack]
        self.p0, self.q0, self.dp, self.dq = p, q, dp, dq
        self.bess_pos = {u.bus: idx[u.bus] for u in net.bess_units}
        self.idx = idx


def _device_map(net: Network) -> _DeviceMap:
    cache = net.__dict__.get("_device_map")
    if cache is None:
        cache = _DeviceMap(net)
        net.__dict__["_device_map"] = cache
    return cache


def device_outputs(net: Network, x) -> np.ndarray:
    """Active power (per-unit, non-negative) of every random device.

    ``x`` is one row or an N x D matrix in physical units, columns ordered
    like ``net.random_devices``.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != len(net.random_devices):
        raise ValidationError(f"sample row has {x.shape[1]} entries, network declares {len(net.random_devices)} devices")
    out = np.empty_like(x)
    for k, d in enumerate(net.random_devices):
        if d.kind is DeviceKind.PV:
            out[:, k] = pv_power(x[:, k], d)
        elif d.kind is DeviceKind.WT:
            out[:, k] = wt_power(x[:, k], d)
        else:
            out[:, k] = ev_power(x[:, k], d, net.s_base)
    return out[0] if squeeze else out


def assemble_injections(
    net: Network,
    x=None,
    bess: Mapping[int, float] | None = None,
    outputs: np.ndarray | None = None,
) -> Injections:
    """Bus injections for one realization.

    Base loads, device outputs (PV/WT as generation, EV as load, reactive
    power from each device's power factor), non-slack generator set-points
    and BESS commands (bus id -> per-unit, discharge positive) are summed
    per bus. ``outputs`` may carry precomputed :func:`device_outputs`.
    """
    m = _device_map(net)
    if outputs is None:
        outputs = device_outputs(net, np.zeros(len(net.random_devices)) if x is None else x)
    outputs = np.asarray(outputs, dtype=float)
    if outputs.shape != (len(net.random_devices),):
        raise ValidationError("device output vector has the wrong dimension")
    p = m.p0 + m.a_p @ outputs
    q = m.q0 + m.a_q @ outputs
    if bess:
        p = p.copy()
        for bus, cmd in bess.items():
            p[m.idx[bus]] += cmd
    return Injections(p, q, m.dp, m.dq)


def rebalance_dispatch(net: Network, x, target: float | None = None, rounds: int = 3) -> Network:
    """Shift non-slack dispatchable set-points so the slack carries ``target``.

    The slack output is evaluated at the mean device outputs of ``x`` (an
    N x D matrix ordered like ``net.random_devices``); the surplus or
    deficit is spread equally over the other dispatchable generators,
    within their limits. ``target`` defaults to ``net.slack_target``; with
    neither set the network is returned unchanged.
    """
    target = net.slack_target if target is None else target
    others = [k for k, g in enumerate(net.generators) if g.dispatchable and g.bus != net.slack_bus]
    if target is None or not others:
        return net
    mean_out = device_outputs(net, np.atleast_2d(np.asarray(x, dtype=float))).mean(axis=0)
    k_slack = net.bus_index[net.slack_bus]
    for _ in range(rounds):
        inj = assemble_injections(net, outputs=mean_out)
        st = solve(net, inj)
        if not st.converged:
            raise ValidationError("base dispatch power flow does not converge at mean device outputs")
        slack_p = bus_power(net, st)[k_slack].real - inj.p[k_slack]
        delta = (slack_p - target) / len(others)
        gens = list(net.generators)
        for k in others:
            g = gens[k]
            gens[k] = replace(g, p_set=min(max(g.p_set + delta, g.p_min), g.p_max))
        net = replace(net, generators=tuple(gens))
    return net


# ---------------------------------------------------------------------------
# moments

@dataclass(frozen=True)
class MomentTable:
    """Raw moments of standardized columns, ``moments[i, k] = E[z_i^k]``."""

    moments: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    degenerate: np.ndarray
    source: str = "EMPIRICAL"

    @property
    def max_order(self) -> int:
        return self.moments.shape[1] - 1

    def hankel(self, var: int, size: int) -> np.ndarray:
        mu = self.moments[var]
        return np.array([[mu[j + k] for k in range(size)] for j in range(size)])


def standardize(x: np.ndarray, tol: float = 1e-12):
    """Column means, scales and a degenerate-column mask."""
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    degenerate = scale <= tol * np.maximum(1.0, np.abs(mean))
    scale = np.where(degenerate, 1.0, scale)
    return mean, scale, degenerate


def raw_moments(samples, max_order: int, tol: float = 1e-12, standardized: bool = True) -> MomentTable:
    """Empirical raw moments of the standardized columns up to ``max_order``.

    Degenerate (constant) columns are flagged and given the placeholder
    moments ``(1, 0, 0, ...)``. With ``standardized=False`` the moments
    are those of the data as given (mean 0 and scale 1 are recorded).
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 1 or max_order < 0:
        raise ValidationError("moments need at least one sample and a non-negative order")
    mean, scale, degenerate = standardize(x, tol)
    if standardized:
        z = (x - mean) / scale
        z[:, degenerate] = 0.0
    else:
        z = x
        mean, scale = np.zeros_like(mean), np.ones_like(scale)
    powers = z[:, :, None] ** np.arange(max_order + 1)
    mom = powers.mean(axis=0)
    mom[:, 0] = 1.0
    return MomentTable(mom, mean, scale, degenerate)


# ---------------------------------------------------------------------------
# synthetic data and CSV ingestion

def _truncnorm_mixture(rng, n, weights, means, stds, low, high):
    weights = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    stds = np.asarray(stds, dtype=float)
    if np.any(weights < 0) or not math.isclose(weights.sum(), 1.0, rel_tol=1e-9):
        raise ValidationError("mixture weights must be non-negative and sum to 1")
    if np.any(stds <= 0) or not low < high:
        raise ValidationError("mixture needs positive stds and low < high")
    comp = rng.choice(len(weights), size=n, p=weights)
    out = np.empty(n)
    for c in range(len(weights)):
        sel = comp == c
        a = (low - means[c]) / stds[c]
        b = (high - means[c]) / stds[c]
        out[sel] = stats.truncnorm.rvs(a, b, loc=means[c], scale=stds[c], size=int(sel.sum()), random_state=rng)
    return out


def _draw(rng: np.random.Generator, dist: Mapping, n: int) -> np.ndarray:
    kind = dist.get("dist")
    try:
        if kind == "beta":
            a, b = float(dist["a"]), float(dist["b"])
            low, high = float(dist.get("low", 0.0)), float(dist["high"])
            if a <= 0 or b <= 0 or not low < high:
                raise ValidationError("beta needs a, b > 0 and low < high")
            return low + (high - low) * rng.beta(a, b, size=n)
        if kind == "weibull":
            k, lam = float(dist["shape"]), float(dist["scale"])
            if k <= 0 or lam <= 0:
                raise ValidationError("weibull needs shape, scale > 0")
            return lam * rng.weibull(k, size=n)
        if kind == "truncnorm_mixture":
            return _truncnorm_mixture(
                rng, n, dist["weights"], dist["means"], dist["stds"], float(dist["low"]), float(dist["high"])
            )
        if kind == "uniform":
            low, high = float(dist["low"]), float(dist["high"])
            if not low < high:
                raise ValidationError("uniform needs low < high")
            return rng.uniform(low, high, size=n)
        if kind == "constant":
            return np.full(n, float(dist["value"]))
    except KeyError as exc:
        raise ValidationError(f"distribution {kind!r} is missing parameter {exc}") from exc
    raise ValidationError(f"unknown distribution {kind!r}")


def synth_samples(spec: Mapping[str, Mapping], n: int, seed, time_slot: str = "") -> SampleSet:
    """Draw ``n`` reproducible realizations from a per-device distribution spec.

    ``spec`` maps column name to a distribution, e.g.
    ``{"PV1": {"dist": "beta", "a": 2, "b": 5, "high": 2000, "unit": "W/m2"}}``.
    Supported: beta, weibull, truncnorm_mixture, uniform, constant.
    ``seed`` is anything accepted by ``numpy.random.default_rng``.
    """
    if n < 1:
        raise ValidationError("sample count must be at least 1")
    rng = np.random.default_rng(seed)
    cols = list(spec)
    data = np.column_stack([_draw(rng, spec[c], n) for c in cols]) if cols else np.empty((n, 0))
    units = tuple(str(spec[c].get("unit", "")) for c in cols)
    return SampleSet(data, tuple(cols), units, time_slot)


def load_samples_csv(path: str | Path, time_slot: str | None = None) -> SampleSet:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration as exc:
            raise ValidationError(f"{path}: empty sample file") from exc
        try:
            rows = [[float(v) for v in row] for row in reader if row]
        except ValueError as exc:
            raise ValidationError(f"{path}: non-numeric sample value ({exc})") from exc
    if any(len(r) != len(header) for r in rows):
        raise ValidationError(f"{path}: ragged rows")
    if not rows:
        raise ValidationError(f"{path}: no sample rows")
    return SampleSet(np.array(rows), tuple(h.strip() for h in header), (), time_slot or path.stem)


def load_sample_dir(path: str | Path) -> dict[str, SampleSet]:
    """All ``<slot>.csv`` files of a directory, keyed by slot name."""
    files = sorted(Path(path).glob("*.csv"))
    if not files:
        raise ValidationError(f"no <slot>.csv files in {path}")
    return {f.stem: load_samples_csv(f) for f in files}


def save_samples_csv(samples: SampleSet, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(samples.columns)
        for row in samples.data:
            w.writerow([repr(float(v)) for v in row])


def load_synth_spec(path: str | Path) -> dict[str, dict]:
    """Slot name -> per-device distribution spec, from a JSON file."""
    spec = json.loads(Path(path).read_text())
    return spec["slots"] if "slots" in spec else spec
