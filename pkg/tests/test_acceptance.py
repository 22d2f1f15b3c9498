"""Acceptance suite: the eight release criteria at their stated tolerances.

Each test prints one PASS/FAIL line. Criteria 1, 6 and 7 share one
session fixture that assesses four synthetic 33-bus slots at full size
(N0 = 250 training solves, Ns = 10,000 surrogate evaluations) and runs
10,000 direct CPF solves per slot before and after BESS smoothing; that
fixture takes roughly ten minutes on one core.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or
``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import hashlib
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import qmc

sys.path.insert(0, str(Path(__file__).parent))

from cases import SMALL_CASES  # noqa: E402
from oracles import central_jacobian, grid_max_lambda, ishigami, ishigami_sobol, spec_injections, sweep  # noqa: E402
from rampsupport import (  # noqa: E402
    AssessConfig,
    BessSchedule,
    ChaosBasis,
    CpfOptions,
    DataDrivenPCE,
    Injections,
    aggregate_by_branch,
    assemble_injections,
    assess,
    assess_post_smoothing,
    confidence_rsc,
    ks_statistic,
    max_lambda,
    mcs,
    rebalance_dispatch,
    sobol_index,
    sobol_report,
    solve,
    synth_samples,
    univariate_basis,
)
from rampsupport.cli import main  # noqa: E402
from rampsupport.enhancement import mcs_post_smoothing  # noqa: E402
from rampsupport.pipeline import slot_samples  # noqa: E402
from rampsupport.powerflow import bus_power, jacobian, mismatch, model  # noqa: E402

pytestmark = pytest.mark.slow

SLOTS = ("01", "07", "13", "19")
SEED = 0


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    return ok


# ---------------------------------------------------------------------------
# shared full-size run on the synthetic 33-bus slots

@pytest.fixture(scope="session")
def slot_runs(ieee33, synth_spec):
    cfg = AssessConfig(n0=250, ns=10_000)
    soc = {}
    runs = {}
    for slot in SLOTS:
        samples = slot_samples(ieee33, synth_spec[slot], slot, cfg.n0, cfg.ns, SEED)
        net = rebalance_dispatch(ieee33, samples.data)
        pre = assess(net, samples, cfg)
        dominant = pre.dominant.variables if pre.dominant is not None else ()
        assignments = aggregate_by_branch(net, dominant)
        soc0 = np.array([soc.get(a.unit.id, (a.unit.soc, a.unit.soc)) for a in assignments]).reshape(-1, 2)
        res = assess_post_smoothing(net, samples, cfg, BessSchedule(assignments, soc0=soc0), pre)
        if res.commands is not None:
            for j, a in enumerate(assignments):
                soc[a.unit.id] = tuple(res.commands.soc_after[j])
        t = time.perf_counter()
        mcs_pre, _ = mcs(net, samples, cfg)
        t_mcs = time.perf_counter() - t
        mcs_post, _ = mcs_post_smoothing(net, samples, cfg, res)
        runs[slot] = dict(net=net, samples=samples, res=res, mcs_pre=mcs_pre, mcs_post=mcs_post, t_mcs=t_mcs, cfg=cfg)
    return runs


def test_1_surrogate_fidelity(slot_runs, capsys):
    worst, lines, ok = 0.0, [], True
    for slot, r in slot_runs.items():
        res = r["res"]
        ks_pre = ks_statistic(res.pre.distribution, r["mcs_pre"])
        ks_post = ks_statistic(res.post.distribution, r["mcs_post"])
        rel = abs(res.pre.rsc - confidence_rsc(r["mcs_pre"])) / abs(confidence_rsc(r["mcs_pre"]))
        worst = max(worst, ks_pre, ks_post)
        ok &= ks_pre < 0.05 and ks_post < 0.05 and rel < 0.02
        lines.append(f"{slot}: KS pre {ks_pre:.4f} post {ks_post:.4f}, RSC95 rel diff {rel:.4f}")
    report(capsys, 1, ok, f"max KS {worst:.4f} < 0.05 on {len(slot_runs)} slots ({'; '.join(lines)})")
    assert ok


# ---------------------------------------------------------------------------

def test_2_sobol_correctness(ishigami_fit, slot_runs, capsys):
    model, _ = ishigami_fit
    ref = ishigami_sobol()
    got = (sobol_index(model, [0]), sobol_index(model, [1]), sobol_index(model, [2]), sobol_index(model, [0, 2]))
    err = max(abs(g - r) for g, r in zip(got, ref))
    models = [model] + [a.model for r in slot_runs.values() for a in (r["res"].pre, r["res"].post)]
    sums = [sum(sobol_report(m).group.values()) for m in models if m.variance_ > 0]
    sum_err = max(abs(s - 1.0) for s in sums)
    ok = err <= 0.01 and sum_err <= 1e-10
    report(capsys, 2, ok, f"Ishigami S1,S2,S3,S13 = {', '.join(f'{g:.4f}' for g in got)} "
                          f"(max error {err:.4f}); |sum S_u - 1| <= {sum_err:.1e} over {len(sums)} models")
    assert ok


def test_3_basis_correctness(capsys):
    coef = univariate_basis([1.0, 0.0, 1.0, 0.0, 3.0], 2)
    expected = np.array([-1.0, 0.0, 1.0]) / math.sqrt(2)
    coef_err = float(np.max(np.abs(coef - expected)))
    z = np.random.default_rng(SEED).standard_normal((10**5, 3))
    psi = ChaosBasis(degree=2).fit(z).transform(z)
    gram_err = float(np.max(np.abs(psi.T @ psi / z.shape[0] - np.eye(psi.shape[1]))))
    ok = coef_err <= 1e-6 and gram_err <= 0.02
    report(capsys, 3, ok, f"degree-2 coefficient error {coef_err:.1e}; Gram deviation {gram_err:.4f} at N=1e5")
    assert ok


def test_4_power_flow(ieee33_base, ieee33, capsys):
    net = ieee33_base
    s, slack = spec_injections(net)
    inj = Injections(np.array([s[b.id].real for b in net.buses]), np.array([s[b.id].imag for b in net.buses]))
    st = solve(net, inj)
    v, *_ = sweep(net, s, slack)
    v_err = float(np.max(np.abs(np.abs(st.voltage) - np.abs([v[b.id] for b in net.buses]))))

    inj2 = assemble_injections(ieee33)
    st2 = solve(ieee33, inj2)
    sb = bus_power(ieee33, st2)
    k = ieee33.bus_index[ieee33.slack_bus]
    keep = np.arange(ieee33.n_bus) != k
    balance = float(max(np.max(np.abs(sb.real[keep] - inj2.p[keep])), np.max(np.abs(sb.imag[keep] - inj2.q[keep]))))

    m = model(ieee33)
    n = len(m.pvpq)

    def f(x):
        va, vm = st2.theta.copy(), st2.v.copy()
        va[m.pvpq], vm[m.pq] = x[:n], x[n:]
        return mismatch(m, vm, va, inj2.p, inj2.q)

    an = jacobian(m, st2.v, st2.theta)
    fd = central_jacobian(f, np.r_[st2.theta[m.pvpq], st2.v[m.pq]])
    jac_err = float(np.max(np.abs(an - fd)) / np.max(np.abs(an)))
    ok = v_err < 1e-6 and balance < 1e-8 and jac_err < 1e-6
    report(capsys, 4, ok, f"sweep voltage error {v_err:.1e} pu; balance residual {balance:.1e} pu; "
                          f"Jacobian relative error {jac_err:.1e}")
    assert ok


def test_5_cpf(ieee33, synth_spec, capsys):
    errs = {}
    for name, build in SMALL_CASES.items():
        net = build()
        errs[name] = abs(max_lambda(net, assemble_injections(net)).lam - grid_max_lambda(net)[0])
    worst = max(errs.values())

    x = synth_samples(synth_spec["13"], 1, SEED).data[0]
    net = rebalance_dispatch(ieee33, x[None, :])
    inj = assemble_injections(net, x)
    opts = CpfOptions(lambda_tol=1e-6)
    base = max_lambda(net, inj, opts).lam
    oracle_err = abs(base - grid_max_lambda(net, x=x)[0])
    tighter = [
        replace(net, buses=tuple(replace(b, v_min=b.v_min + 0.005, v_max=b.v_max - 0.005) for b in net.buses)),
        replace(net, generators=tuple(replace(g, p_max=0.9 * g.p_max) if g.dispatchable else g for g in net.generators)),
        replace(net, branches=tuple(replace(br, i_max=min(br.i_max, 2.0)) for br in net.branches)),
    ]
    monotone = all(max_lambda(t, assemble_injections(t, x), opts).lam <= base + 1e-6 for t in tighter)
    scaling = max(abs(max_lambda(net, inj.scaled_direction(k), opts).lam - base / k) for k in (0.5, 2.0, 4.0))
    ok = worst < 2e-4 and oracle_err < 1e-4 and monotone and scaling < 2e-6
    report(capsys, 5, ok, f"{len(errs)} small fixtures within {worst:.1e} of the grid oracle; 33-bus realization "
                          f"within {oracle_err:.1e}; tightening monotone {monotone}; direction scaling error {scaling:.1e}")
    assert ok


def test_6_enhancement(slot_runs, capsys):
    ok, lines, checked = True, [], 0
    for slot, r in slot_runs.items():
        res = r["res"]
        if res.pre.dominant is None or not res.pre.dominant.variables:
            lines.append(f"{slot}: no dominant variable")
            continue
        checked += 1
        pre, post = r["mcs_pre"], r["mcs_post"]
        rsc_pre, rsc_post = confidence_rsc(pre), confidence_rsc(post)
        binding = bool(res.commands.binding.any())
        good = post.variance < pre.variance and res.post.distribution.variance < res.pre.distribution.variance
        good &= rsc_post > rsc_pre if not binding else rsc_post >= rsc_pre
        good &= res.post.rsc >= res.pre.rsc
        ok &= good
        s = r["net"].s_base
        lines.append(f"{slot}: {'/'.join(res.pre.dominant.variables)} var {pre.variance * s * s:.4f}->"
                     f"{post.variance * s * s:.4f} MW2, MCS RSC95 {rsc_pre * s:.3f}->{rsc_post * s:.3f} MW"
                     f"{' (limits binding)' if binding else ''}")
    ok &= checked > 0
    report(capsys, 6, ok, f"{checked} slots checked against MCS ({'; '.join(lines)})")
    assert ok


def test_7_speedup(slot_runs, capsys):
    r = slot_runs["13"]
    model_ = r["res"].pre.model
    x = r["samples"]
    best = math.inf
    for _ in range(5):
        t = time.perf_counter()
        model_.predict(x)
        best = min(best, time.perf_counter() - t)
    ratio = r["t_mcs"] / best
    ok = ratio >= 100
    report(capsys, 7, ok, f"surrogate {best * 1e3:.1f} ms vs direct {r['t_mcs']:.1f} s for 10,000 points "
                          f"(speedup {ratio:.0f}x)")
    assert ok


def _digest(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_8_determinism(tmp_path, capsys):
    modes = ("assess", "sobol", "mcs", "enhance", "compare")
    same, files = True, 0
    for mode in modes:
        digests = []
        for run in ("a", "b"):
            out = tmp_path / mode / run
            code = main(["--mode", mode, "--slots", "07,13", "--q", "1", "--n0", "40", "--ns", "150",
                         "--seed", "7", "--out", str(out)])
            assert code == 0
            digests.append(_digest(out))
        files += len(digests[0])
        same &= digests[0] == digests[1] and len(digests[0]) > 0
    report(capsys, 8, same, f"{len(modes)} CLI modes run twice, {files} files byte-identical: {same}")
    assert same


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
