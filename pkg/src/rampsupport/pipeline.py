"""Per-slot assessment: CPF responses, surrogate fit and evaluation."""

from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cpf import CpfOptions, max_lambda
from .distribution import Provenance, RscDistribution, confidence_rsc
from .exceptions import InfeasibleBaseError, ValidationError, ZeroVarianceError
from .network import Network
from .pce import DataDrivenPCE
from .sensitivity import Dominance, SobolReport, rank_dominant, sobol_report
from .stochastic import SampleSet, assemble_injections, device_outputs, synth_samples

_PURPOSE = {"train": 1, "eval": 2, "order": 3, "resample": 4}


def slot_seed(seed: int, slot: str, purpose: str) -> np.random.SeedSequence:
    """Independent, reproducible stream for one slot and one purpose."""
    return np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(str(slot).encode()), _PURPOSE[purpose]))


def slot_samples(net: Network, source, slot: str, n0: int, ns: int, seed: int) -> SampleSet:
    """The ``ns`` evaluation rows of one slot, in device order.

    ``source`` is a per-device distribution spec or a SampleSet of recorded
    realizations. Synthetic rows come as a training block of ``n0`` rows and
    an evaluation block of ``ns - n0`` rows from separate streams, so the
    first ``n0`` rows do not depend on ``ns``. Recorded rows are taken in a
    seeded random order, topped up by resampling with replacement when the
    file holds fewer than ``ns`` rows.
    """
    names = tuple(d.id for d in net.random_devices)
    if isinstance(source, SampleSet):
        data = source.aligned(net)
        n = data.shape[0]
        perm = np.random.default_rng(slot_seed(seed, slot, "order")).permutation(n)
        if ns > n:
            extra = np.random.default_rng(slot_seed(seed, slot, "resample")).integers(0, n, ns - n)
            perm = np.concatenate([perm, extra])
        return SampleSet(data[perm[:ns]], names, (), slot)
    train = synth_samples(source, n0, slot_seed(seed, slot, "train"), slot)
    blocks = [SampleSet(train.data, train.columns, train.units, slot).aligned(net)]
    if ns > n0:
        rest = synth_samples(source, ns - n0, slot_seed(seed, slot, "eval"), slot)
        blocks.append(rest.aligned(net))
    return SampleSet(np.vstack(blocks), names, (), slot)


@dataclass(frozen=True)
class AssessConfig:
    n0: int = 250
    ns: int = 10_000
    degree: int = 2
    gamma: float = 0.95
    threshold: float = 0.8
    index_kind: str = "first_order"
    sparsity: float = 1e-8
    cpf: CpfOptions = field(default_factory=CpfOptions)
    n_jobs: int = 1

    def __post_init__(self):
        if self.n0 < 1:
            raise ValidationError("n0 must be at least 1")
        if self.ns < self.n0:
            raise ValidationError("ns must be at least n0")
        if not 0 < self.gamma < 1:
            raise ValidationError("gamma must lie in (0, 1)")
        if not 0 < self.threshold <= 1:
            raise ValidationError("threshold must lie in (0, 1]")
        if self.index_kind not in ("first_order", "total_order"):
            raise ValidationError("index_kind must be 'first_order' or 'total_order'")
        if self.n_jobs < 1:
            raise ValidationError("n_jobs must be at least 1")


@dataclass(frozen=True)
class RscBatch:
    """Per-row RSC (per-unit) and the constraint that bound each row."""

    lam: np.ndarray
    kinds: tuple[str, ...]
    elements: tuple[str, ...]
    n_solves: int

    def binding_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for k, e in zip(self.kinds, self.elements):
            key = f"{k}:{e}" if e else k
            out[key] = out.get(key, 0) + 1
        return dict(sorted(out.items()))


def _rows(args):
    net, outputs, commands, buses, opts, offset = args
    lam = np.empty(outputs.shape[0])
    kinds, elems, solves = [], [], 0
    for n in range(outputs.shape[0]):
        bess = None if commands is None else dict(zip(buses, commands[n]))
        inj = assemble_injections(net, outputs=outputs[n], bess=bess)
        try:
            r = max_lambda(net, inj, opts)
        except InfeasibleBaseError as exc:
            detail = "; ".join(f"{v.kind.value} {v.element}: {v.value:.6g} vs {v.limit:.6g}" for v in exc.violations)
            raise InfeasibleBaseError(f"sample row {offset + n}: {exc} {detail}".rstrip(), exc.violations) from None
        lam[n] = r.lam
        kinds.append(r.kind.value)
        elems.append(r.element)
        solves += r.n_solves
    return lam, kinds, elems, solves


def evaluate_rsc(
    net: Network,
    x: np.ndarray,
    commands: np.ndarray | None = None,
    bess_buses: tuple[int, ...] = (),
    opts: CpfOptions | None = None,
    n_jobs: int = 1,
) -> RscBatch:
    """Direct CPF evaluation of every row of ``x`` (physical units, device order).

    ``commands`` holds one BESS command per row and unit (per-unit,
    discharge positive) for the units sitting on ``bess_buses``.
    """
    opts = opts or CpfOptions()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    outputs = device_outputs(net, x)
    if commands is not None:
        commands = np.asarray(commands, dtype=float).reshape(x.shape[0], len(bess_buses))
    n = x.shape[0]
    chunks = max(1, min(int(n_jobs), n))
    bounds = np.linspace(0, n, chunks + 1).astype(int)
    jobs = [
        (net, outputs[a:b], None if commands is None else commands[a:b], tuple(bess_buses), opts, int(a))
        for a, b in zip(bounds[:-1], bounds[1:])
    ]
    if chunks == 1:
        parts = [_rows(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=chunks) as pool:
            parts = list(pool.map(_rows, jobs))
    lam = np.concatenate([p[0] for p in parts])
    kinds = tuple(k for p in parts for k in p[1])
    elems = tuple(e for p in parts for e in p[2])
    return RscBatch(lam, kinds, elems, sum(p[3] for p in parts))


@dataclass(frozen=True)
class SlotAssessment:
    """Surrogate-based RSC assessment of one time slot."""

    slot: str
    train: RscBatch
    model: DataDrivenPCE
    distribution: RscDistribution
    rsc: float
    sobol: SobolReport | None
    dominant: Dominance | None


def fit_surrogate(samples: SampleSet, y: np.ndarray, cfg: AssessConfig, moment_data=None) -> DataDrivenPCE:
    return DataDrivenPCE(degree=cfg.degree, sparsity=cfg.sparsity).fit(samples, y, moment_data=moment_data)


def assess(
    net: Network,
    samples: SampleSet,
    cfg: AssessConfig,
    commands: np.ndarray | None = None,
    bess_buses: tuple[int, ...] = (),
) -> SlotAssessment:
    """Train on the first ``n0`` rows, evaluate the surrogate on all ``ns`` rows.

    ``samples`` must already be in device order with exactly ``ns`` rows.
    Moments for the chaos basis come from all ``ns`` rows.
    """
    if len(samples) != cfg.ns:
        raise ValidationError(f"expected {cfg.ns} evaluation rows, got {len(samples)}")
    x0 = samples.rows(slice(0, cfg.n0))
    c0 = None if commands is None else np.asarray(commands)[: cfg.n0]
    train = evaluate_rsc(net, x0.data, c0, bess_buses, cfg.cpf, cfg.n_jobs)
    model = fit_surrogate(x0, train.lam, cfg, moment_data=samples.data)
    dist = RscDistribution(model.predict(samples), Provenance.PCE_SURROGATE)
    try:
        report = sobol_report(model)
    except ZeroVarianceError:
        report = dominant = None
    else:
        dominant = rank_dominant(report, cfg.threshold, cfg.index_kind)
    return SlotAssessment(samples.time_slot, train, model, dist, confidence_rsc(dist, cfg.gamma), report, dominant)


def mcs(
    net: Network,
    samples: SampleSet,
    cfg: AssessConfig,
    commands: np.ndarray | None = None,
    bess_buses: tuple[int, ...] = (),
) -> tuple[RscDistribution, RscBatch]:
    """Monte Carlo benchmark: direct CPF on every row."""
    batch = evaluate_rsc(net, samples.data, commands, bess_buses, cfg.cpf, cfg.n_jobs)
    return RscDistribution(batch.lam, Provenance.MCS_ORACLE), batch
