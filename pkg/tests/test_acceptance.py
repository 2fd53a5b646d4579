"""End-to-end acceptance checks, one test per criterion.

Each test records its verdict in ``conftest.ACCEPTANCE`` and prints a
PASS/FAIL line; the terminal summary repeats them after the run.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, enumerate_paths, random_model
from smarthome_ldp import cli, simgen
from smarthome_ldp.dp_noise import NoiseConfig, privatize_counts, privatize_hmm
from smarthome_ldp.evaluation import likelihood_ratio_attack, risk_by_event_count
from smarthome_ldp.hmm import (
    HmmParams,
    ObservationSequence,
    backward,
    baum_welch_step,
    likelihood,
    posteriors,
    train,
)
from smarthome_ldp.ldp import (
    CategoryDomain,
    PerturbedReport,
    debias_counts,
    estimate_frequencies,
    krr_distribution,
    krr_perturb,
    krr_perturb_indices,
    verify_ldp,
)
from smarthome_ldp.pipeline import (
    PipelineConfig,
    ReportStore,
    build_sequences,
    fit_hmm,
    run_pipeline,
    sensitive_states,
)
from smarthome_ldp.risk import ObfuscationPolicy, apply_plan, sequence_risk


def verdict(name: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE[name] = bool(ok)
    print(f"\n{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def scenario():
    ds = simgen.generate_dataset(simgen.ScenarioConfig())
    return ds, ds.query_domain, ds.query_topics


@pytest.fixture(scope="module")
def default_run(scenario):
    ds, dom, topics = scenario
    cfg = PipelineConfig()
    return cfg, run_pipeline(cfg, dom, topics, dataset=ds)


def _domain(k):
    return CategoryDomain(tuple(f"c{i}" for i in range(k)))


def test_ac1_ldp_guarantee():
    start = time.perf_counter()
    worst = 0.0
    for k in range(2, 17):
        for eps in (0.1, 0.5, 1.0, 2.0, 5.0):
            worst = max(worst, abs(verify_ldp(_domain(k), eps) - math.exp(eps)))
    emp = 0.0
    rng = np.random.default_rng(2024)
    for k in (2, 4, 16):
        for eps in (0.1, 1.0, 5.0):
            out = krr_perturb_indices(np.zeros(100_000, dtype=int), k, eps, rng)
            freq = np.bincount(out, minlength=k) / out.size
            emp = max(emp, np.max(np.abs(freq - krr_distribution("c0", _domain(k), eps))))
    # the scalar per-report path as well
    d4 = _domain(4)
    draws = [krr_perturb("c0", d4, math.log(3), rng) for _ in range(100_000)]
    freq = np.array([draws.count(s) for s in d4.symbols]) / len(draws)
    emp = max(emp, np.max(np.abs(freq - krr_distribution("c0", d4, math.log(3)))))
    elapsed = time.perf_counter() - start
    verdict("AC1 LDP guarantee", worst <= 1e-12 and emp <= 0.01 and elapsed < 5,
            f"max|ratio-e^eps|={worst:.1e} max freq err={emp:.4f} time={elapsed:.2f}s")


def test_ac2_hmm_oracle_equivalence(two_state):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        N, T, M = int(rng.integers(1, 5)), int(rng.integers(1, 9)), int(rng.integers(2, 5))
        p = random_model(rng, N, M)
        obs = rng.integers(0, M, T)
        paths = enumerate_paths(p, obs)
        z = sum(paths.values())
        state = np.zeros((T, N))
        pair = np.zeros((T, N, N))
        for path, w in paths.items():
            state[np.arange(T), path] += w / z
            for t in range(1, T):
                pair[t, path[t - 1], path[t]] += w / z
        tr = backward(p, obs)
        fb = float(np.sum(p.pi * p.emit[:, obs[0]] * tr.unscaled_beta()[0]))
        post = posteriors(p, obs)
        worst = max(worst,
                    abs(likelihood(p, obs) - math.log(z)),
                    abs(math.log(fb) - math.log(z)),
                    abs(math.log(tr.unscaled_alpha()[-1].sum()) - math.log(z)),
                    float(np.max(np.abs(post.state - state))),
                    float(np.max(np.abs(post.pairwise - pair))))
    p_example = math.exp(likelihood(two_state, ObservationSequence("h", [0, 1])))
    elapsed = time.perf_counter() - start
    verdict("AC2 HMM oracle equivalence",
            worst <= 1e-10 and abs(p_example - 0.2090) < 1e-12 and elapsed < 10,
            f"max deviation={worst:.1e} P(example)={p_example:.4f} time={elapsed:.2f}s")


def test_ac3_em_correctness():
    dips = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        gen = random_model(rng, int(rng.integers(2, 5)), 5)
        seqs = [ObservationSequence(str(i), rng.integers(0, 5, int(rng.integers(5, 25))))
                for i in range(15)]
        _, trace = train(random_model(rng, gen.n_states, 5), seqs, tol=1e-10, max_iter=60)
        dips.append(float(np.min(np.diff(trace), initial=0.0)))
    fixed = HmmParams([1.0], [[1.0]], [[2 / 3, 1 / 3, 0.0]])
    stepped = baum_welch_step(fixed, [ObservationSequence("a", [0, 0, 1])])
    exact = all(np.array_equal(a, b) for a, b in ((fixed.pi, stepped.pi), (fixed.trans, stepped.trans),
                                                  (fixed.emit, stepped.emit)))
    verdict("AC3 EM correctness", min(dips) >= -1e-9 and exact,
            f"largest decrease={-min(dips):.1e} fixed point exact={exact}")


def test_ac4_frequency_unbiasedness():
    d = CategoryDomain(("a", "b"))
    eps, n = math.log(3), 100_000
    truth = np.array([0.3, 0.7])
    rng = np.random.default_rng(99)
    errs = []
    for trial in range(50):
        true_idx = np.repeat([0, 1], (truth * n).astype(int))
        out = krr_perturb_indices(true_idx, 2, eps, rng)
        if trial == 0:
            reports = [PerturbedReport(str(i), 1, d.symbols[o], eps) for i, o in enumerate(out)]
            est = estimate_frequencies(reports, d)
        else:
            est = debias_counts(np.bincount(out, minlength=2), n, 2, eps)
        errs.append(np.mean(np.abs(est - truth)))
    mae = float(np.mean(errs))
    verdict("AC4 frequency unbiasedness", mae < 0.01, f"mean abs error={mae:.5f}")


def test_ac5_risk_behaviour(scenario):
    ds, dom, topics = scenario
    cfg = simgen.ScenarioConfig()
    params, sens = simgen.oracle_model(cfg)
    raw = [PerturbedReport(e.pseudonym, e.slot, e.symbol, 1.0)
           for e in sorted(ds.queries, key=lambda e: (e.pseudonym, e.slot))]
    seqs = build_sequences(ReportStore.replay(raw, dom), cfg.horizon)
    sens_syms = {dom.obs_index(s) for s, t in topics.items() if t != simgen.GENERAL}
    saturated, monotone, checked = True, True, 0
    for s in seqs:
        n = sum(int(o) in sens_syms for o in s.obs)
        risk = sequence_risk(params, s, sens, 5, (dom.null_index,)).aggregate_risk
        if n >= 5:
            checked += 1
            saturated &= risk == 1.0
            curve = risk_by_event_count(params, s, sens, sens_syms, 5, (dom.null_index,))[:5]
            monotone &= all(b > a for a, b in zip(curve, curve[1:])) and curve[-1] == 1.0
    verdict("AC5 risk saturation", checked > 0 and saturated and monotone,
            f"homes with >=5 sensitive events={checked} all at 1.0={saturated} "
            f"strictly increasing={monotone}")


def test_ac6_obfuscation_contract(scenario, default_run):
    ds, dom, _ = scenario
    cfg, rep = default_run
    reports = simgen.perturb_events(ds.queries, dom, cfg.epsilon_ldp, cfg.seed)
    originals = build_sequences(ReportStore.replay(reports, dom))
    threshold_ok = all(h.risk_after <= cfg.risk_threshold or h.unmet_threshold for h in rep.homes)
    not_worse = all(h.risk_after <= h.risk_before for h in rep.homes)
    replay = all(np.array_equal(apply_plan(o, p).obs, out.obs)
                 for o, p, out in zip(originals, rep.plans, rep.obfuscated))
    substituted = sum(len(p.substitutions) for p in rep.plans)
    verdict("AC6 obfuscation contract", threshold_ok and not_worse and replay and substituted > 0,
            f"threshold-or-flagged={threshold_ok} never worse={not_worse} replay={replay} "
            f"substitutions={substituted} unmet={rep.metrics['unmet_threshold']}")


def test_ac7_release_validity(scenario):
    ds, dom, _ = scenario
    cfg = PipelineConfig()
    reports = simgen.perturb_events(ds.queries, dom, cfg.epsilon_ldp, cfg.seed)
    trained, _, counts = fit_hmm(cfg, build_sequences(ReportStore.replay(reports, dom)), dom)
    valid = True
    for s in range(1000):
        rel = privatize_hmm(counts, NoiseConfig((0.1, 0.5, 1.0)[s % 3]), np.random.default_rng(s))
        for m in (rel.params.pi[None], rel.params.trans, rel.params.emit):
            valid &= bool(np.all(m >= 0) and np.allclose(m.sum(axis=1), 1, atol=1e-9, rtol=0))
    hi = privatize_hmm(counts, NoiseConfig(1e6), np.random.default_rng(0)).params
    close = max(np.max(np.abs(a - b)) for a, b in ((hi.pi, trained.pi), (hi.trans, trained.trans),
                                                 (hi.emit, trained.emit)))
    noise = NoiseConfig(0.5)
    base = np.full(100_000, 1e6)
    mean_abs = float(np.mean(np.abs(privatize_counts(base, noise, np.random.default_rng(1)) - base)))
    rel_err = abs(mean_abs / noise.scale - 1)
    verdict("AC7 DP release validity", valid and close <= 1e-4 and rel_err <= 0.05,
            f"valid={valid} max|released-trained| at 1e6={close:.1e} "
            f"mean|noise|/scale-1={rel_err:.4f}")


def test_ac8_distinguishability(scenario):
    ds, dom, topics = scenario
    acc = {}
    for eps_cdp in (0.5, 1e6):
        cfg = PipelineConfig(epsilon_cdp=eps_cdp)
        rep = run_pipeline(cfg, dom, topics, dataset=ds)
        reports = simgen.perturb_events(ds.queries, dom, cfg.epsilon_ldp, cfg.seed)
        originals = build_sequences(ReportStore.replay(reports, dom))
        released = rep.released.params
        sens = sensitive_states(released, dom, topics, cfg.sensitive_topics, cfg.state_cutoff)
        policy = ObfuscationPolicy(cfg.saturation, cfg.flag_threshold, cfg.n_candidates,
                                   (dom.null_index,))
        res = likelihood_ratio_attack(released, sens, originals, rep.obfuscated, cfg.risk_threshold,
                                      policy, np.random.default_rng([cfg.seed, 8]))
        acc[eps_cdp] = res
    lo, hi = acc[0.5], acc[1e6]
    ok = abs(lo.accuracy - 0.5) <= 0.05 and hi.accuracy >= 0.65
    verdict("AC8 adversarial distinguishability", ok,
            f"accuracy at eps_cdp=0.5: {lo.accuracy:.3f} ({lo.n_pairs} pairs); "
            f"at eps_cdp=1e6: {hi.accuracy:.3f} ({hi.n_pairs} pairs)")


def test_ac9_determinism_and_budget(tmp_path):
    times = []
    for d in ("a", "b"):
        start = time.perf_counter()
        assert cli.main(["simulate", "--seed", "0", "--out", str(tmp_path / d)]) == 0
        times.append(time.perf_counter() - start)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    same = files == sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*")
                           if p.is_file())
    same &= all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                for f in files if f.name != "timings.csv")
    stages = [l.split(",")[0] for l in (tmp_path / "a" / "timings.csv").read_text().splitlines()[1:]]
    meta = (tmp_path / "a" / "ground_truth" / "scenario.json").read_text()
    verdict("AC9 determinism and budget", same and max(times) < 60 and len(stages) == 8
            and '"entry_count": 2000' in meta and '"user_count": 45' in meta,
            f"identical={same} slowest run={max(times):.1f}s stages timed={len(stages)}")
