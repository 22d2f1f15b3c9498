"""Command-line front end: assess, sobol, enhance, mcs and compare modes.

Every mode processes the time slots in sorted order and writes its files
under ``<out>/<slot>/`` plus a run summary ``<out>/<mode>.json``. Output
files carry no timings, so identical configurations give identical bytes.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .cpf import CpfOptions
from .distribution import confidence_rsc, ks_statistic, save_cdf_csv, save_pdf_csv
from .enhancement import BessSchedule, EnhancementResult, aggregate_by_branch, assess_post_smoothing, mcs_post_smoothing
from .exceptions import SolverError, ValidationError
from .network import Network, load_case
from .pce import save_model
from .pipeline import AssessConfig, SlotAssessment, assess, mcs, slot_samples
from .stochastic import SampleSet, load_sample_dir, load_synth_spec, rebalance_dispatch

log = logging.getLogger("rampsupport")

MODES = ("assess", "sobol", "enhance", "mcs", "compare")
BUILTIN_SPEC = "builtin"


@dataclass(frozen=True)
class RunConfig:
    case: str = "ieee33-modified"
    samples_dir: str | None = None
    synth_spec: str | None = None
    slots: tuple[str, ...] = ()
    n0: int = 250
    ns: int = 10_000
    q: int = 2
    gamma: float = 0.95
    threshold: float = 0.8
    index_kind: str = "first_order"
    sparsity: float = 1e-8
    seed: int = 0
    out: str = "out"
    mode: str = "assess"
    lambda_tol: float = 1e-4
    max_lambda: float = 10.0
    pf_tol: float = 1e-8
    jobs: int = 1
    bins: int = 50

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.samples_dir and self.synth_spec:
            raise ValidationError("give either --samples-dir or --synth-spec, not both")
        if self.lambda_tol <= 0 or self.max_lambda <= 0 or self.pf_tol <= 0:
            raise ValidationError("tolerances and the lambda cap must be positive")
        if self.bins < 1:
            raise ValidationError("bins must be at least 1")
        self.assess_config()

    def assess_config(self) -> AssessConfig:
        cpf = CpfOptions(lambda_tol=self.lambda_tol, max_lambda=self.max_lambda, pf_tol=self.pf_tol)
        return AssessConfig(self.n0, self.ns, self.q, self.gamma, self.threshold, self.index_kind,
                            self.sparsity, cpf, self.jobs)


class SlotError(Exception):
    def __init__(self, slot: str, exc: Exception):
        super().__init__(f"slot {slot}: {exc}")
        self.slot = slot
        self.cause = exc


@contextlib.contextmanager
def _slot(slot: str):
    try:
        yield
    except (ValidationError, SolverError) as exc:
        raise SlotError(slot, exc) from exc


# ---------------------------------------------------------------------------
# inputs

def load_sources(cfg: RunConfig) -> dict[str, object]:
    """Slot name -> distribution spec or recorded SampleSet."""
    if cfg.samples_dir:
        sources: dict[str, object] = dict(load_sample_dir(cfg.samples_dir))
    else:
        if cfg.synth_spec in (None, BUILTIN_SPEC):
            sources = load_synth_spec(resources.files("rampsupport.data").joinpath("synthetic_slots.json"))
        else:
            path = Path(cfg.synth_spec)
            if not path.exists():
                raise ValidationError(f"synthetic spec not found: {path}")
            try:
                sources = load_synth_spec(path)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: malformed JSON ({exc})") from exc
    if cfg.slots:
        missing = [s for s in cfg.slots if s not in sources]
        if missing:
            raise ValidationError(f"unknown slot(s) {missing}; available {sorted(sources)}")
        sources = {s: sources[s] for s in cfg.slots}
    return dict(sorted(sources.items()))


def prepare_slot(net: Network, source, slot: str, cfg: RunConfig) -> tuple[Network, SampleSet]:
    """Evaluation rows of a slot and the network with its base dispatch for that slot."""
    samples = slot_samples(net, source, slot, cfg.n0, cfg.ns, cfg.seed)
    return rebalance_dispatch(net, samples.data), samples


# ---------------------------------------------------------------------------
# output helpers

def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _mw(x: float, net: Network) -> float:
    return float(x) * net.s_base


def _dist_summary(dist, net: Network, gamma: float) -> dict:
    v = dist.values * net.s_base
    return {
        "provenance": dist.provenance.value,
        "n": dist.n,
        "rsc_gamma_mw": _mw(confidence_rsc(dist, gamma), net),
        "mean_mw": float(v.mean()),
        "std_mw": float(v.std()),
        "min_mw": float(v[0]),
        "max_mw": float(v[-1]),
    }


def _assessment_summary(a: SlotAssessment, net: Network, cfg: RunConfig) -> dict:
    m = a.model
    out = {
        "slot": a.slot,
        "distribution": _dist_summary(a.distribution, net, cfg.gamma),
        "surrogate": {
            "degree": cfg.q,
            "n_terms": int(m.coef_.shape[0]),
            "n_terms_full": int(m.n_terms_full_),
            "loo_error": float(m.loo_error_),
            "condition_number": float(m.condition_number_),
            "mean_mw": _mw(m.mean_, net),
            "std_mw": float(np.sqrt(m.variance_)) * net.s_base,
        },
        "training": {"n0": cfg.n0, "binding": a.train.binding_counts()},
        "dispatch_mw": {g.id: _mw(g.p_set, net) for g in net.generators if g.dispatchable},
    }
    if a.dominant is not None:
        out["dominant"] = {"variables": list(a.dominant.variables), "sum": a.dominant.total,
                           "shortfall": a.dominant.shortfall, "index_kind": cfg.index_kind}
    else:
        out["dominant"] = {"variables": [], "sum": 0.0, "shortfall": False, "index_kind": cfg.index_kind}
    return out


def _write_assessment(d: Path, a: SlotAssessment, net: Network, cfg: RunConfig, tag: str = "") -> None:
    d.mkdir(parents=True, exist_ok=True)
    save_model(a.model, d / f"model{tag}.json")
    save_cdf_csv(a.distribution, d / f"cdf_pce{tag}.csv", net.s_base)
    save_pdf_csv(a.distribution, d / f"pdf_pce{tag}.csv", cfg.bins, net.s_base)
    _write_csv(d / f"training{tag}.csv", ["row", "rsc_mw", "binding", "element"],
               ((k, _mw(v, net), kind, el) for k, (v, kind, el)
                in enumerate(zip(a.train.lam, a.train.kinds, a.train.elements))))


def _config_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["slots"] = list(cfg.slots)
    del d["out"]  # where results land does not change them
    return d


# ---------------------------------------------------------------------------
# modes

def run_assess(cfg: RunConfig, with_sobol: bool = False) -> dict[str, SlotAssessment]:
    net0 = load_case(cfg.case)
    out = Path(cfg.out)
    results, summary = {}, {}
    for slot, source in load_sources(cfg).items():
        with _slot(slot):
            t = time.perf_counter()
            net, samples = prepare_slot(net0, source, slot, cfg)
            a = assess(net, samples, cfg.assess_config())
            d = out / slot
            _write_assessment(d, a, net, cfg)
            s = _assessment_summary(a, net, cfg)
            _write_json(d / "assess.json", s)
            if with_sobol:
                if a.sobol is None:
                    raise ValidationError("zero-variance response: Sobol' indices are undefined")
                a.sobol.save_json(d / "sobol.json")
                a.sobol.save_csv(d / "sobol.csv")
            results[slot], summary[slot] = a, s
            log.info("slot %s assessed in %.2f s: RSC_%g = %.4f MW", slot, time.perf_counter() - t,
                     cfg.gamma, s["distribution"]["rsc_gamma_mw"])
    _write_json(out / f"{cfg.mode}.json", {"mode": cfg.mode, "config": _config_dict(cfg), "slots": summary})
    return results


def run_sobol(cfg: RunConfig) -> dict[str, SlotAssessment]:
    return run_assess(cfg, with_sobol=True)


def run_mcs(cfg: RunConfig) -> dict:
    net0 = load_case(cfg.case)
    out = Path(cfg.out)
    results, summary = {}, {}
    acfg = cfg.assess_config()
    for slot, source in load_sources(cfg).items():
        with _slot(slot):
            t = time.perf_counter()
            net, samples = prepare_slot(net0, source, slot, cfg)
            dist, batch = mcs(net, samples, acfg)
            d = out / slot
            d.mkdir(parents=True, exist_ok=True)
            save_cdf_csv(dist, d / "cdf_mcs.csv", net.s_base)
            save_pdf_csv(dist, d / "pdf_mcs.csv", cfg.bins, net.s_base)
            _write_csv(d / "mcs_rows.csv", ["row", "rsc_mw", "binding", "element"],
                       ((k, _mw(v, net), kind, el) for k, (v, kind, el)
                        in enumerate(zip(batch.lam, batch.kinds, batch.elements))))
            s = {"slot": slot, "distribution": _dist_summary(dist, net, cfg.gamma), "binding": batch.binding_counts()}
            _write_json(d / "mcs.json", s)
            results[slot], summary[slot] = dist, s
            log.info("slot %s MCS of %d rows in %.2f s", slot, dist.n, time.perf_counter() - t)
    _write_json(out / "mcs.json", {"mode": "mcs", "config": _config_dict(cfg), "slots": summary})
    return results


def _enhance_all(cfg: RunConfig, verify: bool):
    """Pre/post assessment of every slot with BESS state carried across slots."""
    net0 = load_case(cfg.case)
    acfg = cfg.assess_config()
    soc: dict[str, tuple[float, float]] = {}
    rows = []
    for slot, source in load_sources(cfg).items():
        with _slot(slot):
            t = time.perf_counter()
            net, samples = prepare_slot(net0, source, slot, cfg)
            pre = assess(net, samples, acfg)
            dominant = pre.dominant.variables if pre.dominant is not None else ()
            assignments = aggregate_by_branch(net, dominant)
            soc0 = np.array([soc.get(a.unit.id, (a.unit.soc, a.unit.soc)) for a in assignments]).reshape(-1, 2)
            res = assess_post_smoothing(net, samples, acfg, BessSchedule(assignments, soc0=soc0), pre)
            if res.commands is not None:
                for j, a in enumerate(assignments):
                    soc[a.unit.id] = tuple(float(v) for v in res.commands.soc_after[j])
            checks = None
            if verify:
                mcs_pre, _ = mcs(net, samples, acfg)
                mcs_post, _ = mcs_post_smoothing(net, samples, acfg, res)
                checks = (mcs_pre, mcs_post)
            log.info("slot %s enhanced in %.2f s", slot, time.perf_counter() - t)
            rows.append((slot, net, res, checks))
    return rows


def _enhance_summary(net: Network, res: EnhancementResult, cfg: RunConfig) -> dict:
    return {
        "slot": res.slot,
        "pre": _assessment_summary(res.pre, net, cfg),
        "post": _assessment_summary(res.post, net, cfg),
        "rsc_pre_mw": _mw(res.pre.rsc, net),
        "rsc_post_mw": _mw(res.post.rsc, net),
        "increment_mw": _mw(res.increment, net),
        "bess": [
            {"id": a.unit.id, "bus": a.unit.bus, "devices": list(a.devices), "new": a.new}
            for a in res.assignments
        ],
    }


def _write_enhancement(out: Path, rows, cfg: RunConfig) -> dict:
    summary = {}
    table = []
    schedule_rows = []
    for slot, net, res, _ in rows:
        d = out / slot
        _write_assessment(d, res.pre, net, cfg)
        if res.commands is not None:
            _write_assessment(d, res.post, net, cfg, tag="_post")
            sched = BessSchedule(res.assignments, slots=[res.commands])
            schedule_rows.extend(sched.rows(net.s_base))
        s = _enhance_summary(net, res, cfg)
        _write_json(d / "enhance.json", s)
        summary[slot] = s
        table.append((slot, s["rsc_pre_mw"], s["rsc_post_mw"], s["increment_mw"],
                      " ".join(s["pre"]["dominant"]["variables"]),
                      " ".join(f"{b['id']}@{b['bus']}" for b in s["bess"])))
    _write_csv(out / "table.csv", ["slot", "rsc_base_mw", "rsc_bess_mw", "increment_mw", "dominant", "bess"], table)
    cols = ["slot", "bess_id", "bus", "devices", "cmd_mean_mw", "cmd_min_mw", "cmd_max_mw",
            "soc_after_min_mwh", "soc_after_max_mwh", "limits_binding"]
    _write_csv(out / "schedule.csv", cols, ([r[c] for c in cols] for r in schedule_rows))
    return summary


def run_enhance(cfg: RunConfig):
    rows = _enhance_all(cfg, verify=False)
    out = Path(cfg.out)
    summary = _write_enhancement(out, rows, cfg)
    _write_json(out / "enhance.json", {"mode": "enhance", "config": _config_dict(cfg), "slots": summary})
    return rows


def run_compare(cfg: RunConfig):
    """Surrogate against direct MCS, before and after smoothing."""
    rows = _enhance_all(cfg, verify=True)
    out = Path(cfg.out)
    _write_enhancement(out, rows, cfg)
    summary, table = {}, []
    for slot, net, res, (mcs_pre, mcs_post) in rows:
        d = out / slot
        save_cdf_csv(mcs_pre, d / "cdf_mcs.csv", net.s_base)
        if res.commands is not None:
            save_cdf_csv(mcs_post, d / "cdf_mcs_post.csv", net.s_base)
        entry = {}
        for tag, a, m in (("pre", res.pre, mcs_pre), ("post", res.post, mcs_post)):
            pce_rsc, mcs_rsc = a.rsc, confidence_rsc(m, cfg.gamma)
            entry[tag] = {
                "ks": ks_statistic(a.distribution, m),
                "pce": _dist_summary(a.distribution, net, cfg.gamma),
                "mcs": _dist_summary(m, net, cfg.gamma),
                "rsc_rel_diff": abs(pce_rsc - mcs_rsc) / abs(mcs_rsc) if mcs_rsc else abs(pce_rsc),
            }
        entry["mcs_increment_mw"] = _mw(confidence_rsc(mcs_post, cfg.gamma) - confidence_rsc(mcs_pre, cfg.gamma), net)
        _write_json(d / "compare.json", entry)
        summary[slot] = entry
        table.append((slot, entry["pre"]["ks"], entry["post"]["ks"], entry["pre"]["rsc_rel_diff"],
                      entry["post"]["rsc_rel_diff"], entry["mcs_increment_mw"]))
    _write_csv(out / "compare.csv", ["slot", "ks_pre", "ks_post", "rsc_rel_diff_pre", "rsc_rel_diff_post",
                                     "mcs_increment_mw"], table)
    _write_json(out / "compare.json", {"mode": "compare", "config": _config_dict(cfg), "slots": summary})
    return rows


RUNNERS = {"assess": run_assess, "sobol": run_sobol, "enhance": run_enhance, "mcs": run_mcs, "compare": run_compare}


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rampsupport",
        description="Probabilistic ramping support capability of a microgrid and its BESS enhancement.",
    )
    p.add_argument("--mode", choices=MODES, default="assess")
    p.add_argument("--case", default="ieee33-modified", help="case JSON file or builtin id (ieee33-modified, ieee33-base)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--samples-dir", help="directory of <slot>.csv files in physical units")
    src.add_argument("--synth-spec", help=f"synthetic distribution JSON, or '{BUILTIN_SPEC}' (default)")
    p.add_argument("--slots", default="", help="comma-separated subset of slots")
    p.add_argument("--n0", type=int, default=250, help="training rows per slot")
    p.add_argument("--ns", type=int, default=10_000, help="evaluation rows per slot")
    p.add_argument("--q", type=int, default=2, help="total degree of the expansion")
    p.add_argument("--gamma", type=float, default=0.95, help="confidence level")
    p.add_argument("--threshold", type=float, default=0.8, help="Sobol' dominance fraction")
    p.add_argument("--index-kind", choices=("first_order", "total_order"), default="first_order")
    p.add_argument("--sparsity", type=float, default=1e-8, help="relative pruning level for coefficients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--lambda-tol", type=float, default=1e-4)
    p.add_argument("--max-lambda", type=float, default=10.0)
    p.add_argument("--pf-tol", type=float, default=1e-8)
    p.add_argument("--jobs", type=int, default=1, help="worker processes for direct CPF evaluations")
    p.add_argument("--bins", type=int, default=50, help="histogram bins of the PDF exports")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        case=args.case, samples_dir=args.samples_dir, synth_spec=args.synth_spec,
        slots=tuple(s.strip() for s in args.slots.split(",") if s.strip()),
        n0=args.n0, ns=args.ns, q=args.q, gamma=args.gamma, threshold=args.threshold,
        index_kind=args.index_kind, sparsity=args.sparsity, seed=args.seed, out=args.out, mode=args.mode,
        lambda_tol=args.lambda_tol, max_lambda=args.max_lambda, pf_tol=args.pf_tol, jobs=args.jobs, bins=args.bins,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    try:
        cfg = config_from_args(args)
        RUNNERS[cfg.mode](cfg)
    except SlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3 if isinstance(exc.cause, SolverError) else 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
