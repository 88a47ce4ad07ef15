"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run as `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; the heavyweight preset runs are shared through module-scoped
fixtures.  Every tolerance is pinned here, not computed.
"""

import csv
import json
import os

import numpy as np
import pytest

from restopo.ancre import AncreParams, candidate_pairs
from restopo.experiments import ExperimentConfig, run
from restopo.network import Topology, TrainState
from restopo.oracles import fd_gradient, pack_state
from restopo.tensor import make_rng

SEEDS = (1, 2, 3)


def _report(criterion: str, ok: bool, detail: str):
    line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} -- {detail}"
    print("\n" + line)
    assert ok, line


def _run_preset(tmp, preset, seed, **overrides):
    cfg = ExperimentConfig.for_preset(preset, seed=seed, output_dir=str(tmp),
                                      **overrides)
    return run(cfg)


def _read_csv(record, curve):
    path = os.path.join(record["output_dir"], record["curves"][curve]["trajectory_csv"])
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {key: np.array([float(r[key]) for r in rows]) for key in rows[0]}


def _iters(record, curve, key):
    val = record["curves"][curve]["iterations_to"][key]
    return float("inf") if val == "inf" else float(val)


def _check_value(record, name):
    for c in record["invariant_checks"]:
        if c["name"] == name:
            return c
    raise KeyError(name)


# ---------------------------------------------------------------------------
# shared preset runs


@pytest.fixture(scope="module")
def outroot(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def topo3(outroot):
    return {seed: _run_preset(outroot, "topo-3layer", seed) for seed in SEEDS}


@pytest.fixture(scope="module")
def topo4(outroot):
    return _run_preset(outroot, "topo-4layer", 1)


@pytest.fixture(scope="module")
def depth(outroot):
    return {seed: _run_preset(outroot, "depth-sweep", seed) for seed in SEEDS}


@pytest.fixture(scope="module")
def kdeep(outroot):
    return {seed: _run_preset(outroot, "kdeep-extension", seed) for seed in SEEDS}


@pytest.fixture(scope="module")
def ancre_lnn(outroot):
    return {seed: _run_preset(outroot, "ancre-lnn", seed) for seed in SEEDS}


@pytest.fixture(scope="module")
def lb(outroot):
    return _run_preset(outroot, "lb-witness", 1)


@pytest.fixture(scope="module")
def ub(outroot):
    return _run_preset(outroot, "ub-witness", 1)


# ---------------------------------------------------------------------------
# criteria


def test_criterion_01_rate_separation(topo3):
    details = []
    ok = True
    for seed, rec in topo3.items():
        v01 = rec["curves"]["0:1"]["verdict"]
        v02 = rec["curves"]["0:2"]["verdict"]
        good = (v02["kind"] == "linear" and v02["fit_quality"] >= 0.99
                and v01["kind"] == "sublinear"
                and 1.5 <= v01["rate_or_power"] <= 3.0
                and v01["fit_quality"] >= 0.95
                and rec["wall_clock_s"] < 60.0)
        ok &= good
        details.append(f"seed{seed}: 0:2={v02['kind']}(R2={v02['fit_quality']:.4f}) "
                       f"0:1={v01['kind']}(p={v01['rate_or_power']:.2f},"
                       f"R2={v01['fit_quality']:.4f}) {rec['wall_clock_s']:.1f}s")
    _report("01 rate-separation", ok, "; ".join(details))


def test_criterion_02_lower_bound_envelope(lb):
    assert lb["invariant_checks"], "witness record must carry invariant checks"
    assert lb["wall_clock_s"] < 120.0
    env_check = _check_value(lb, "lower_bound_envelope")
    diag_check = _check_value(lb, "diag_oracle_match")
    # independent re-read through the CSV interface
    data = _read_csv(lb, "gf")
    csv_ok = bool(np.all(data["loss"] >= data["lb_env"] * (1.0 - 1e-2)))
    ok = env_check["passed"] and diag_check["passed"] and csv_ok
    _report("02 lower-bound-envelope", ok,
            f"min L/0.99env={env_check['value']:.3f} (>=1), "
            f"diag max rel err={diag_check['value']:.3e} (<=1e-6), csv_ok={csv_ok}")


def test_criterion_03_upper_bound_envelope(ub):
    assert ub["invariant_checks"], "witness record must carry invariant checks"
    assert ub["wall_clock_s"] < 120.0
    env_check = _check_value(ub, "upper_bound_envelope")
    spec_check = _check_value(ub, "spectral_norm_containment")
    data = _read_csv(ub, "gf")
    csv_ok = bool(np.all(data["loss"] <= data["ub_env"] * 1.05)
                  and np.all(data["spec_w1w2"] < 0.5))
    ok = env_check["passed"] and spec_check["passed"] and csv_ok
    _report("03 upper-bound-envelope", ok,
            f"max L/env={env_check['value']:.4f} (<=1.05), "
            f"max ||W2W1||_2={spec_check['value']:.3e} (<0.5), csv_ok={csv_ok}")


def _well_conditioned_coeffs(rng, K, mode, build_state):
    """Draw raw coefficients until no nonzero coefficient-gradient coordinate
    nearly cancels (analytic check only).  Central differences have no
    relative accuracy at near-cancelled coordinates, so the comparison is
    made at well-scaled test points; the softmax Jacobian itself is verified
    algebraically in the unit tests."""
    for _ in range(50):
        c = {p: float(rng.uniform(-0.5, 0.5)) for p in candidate_pairs(K)}
        params = AncreParams(K=K, c=c, mode=mode, temperature=0.5)
        state = build_state(params)
        vec, _, analytic = pack_state(state)
        cg = np.abs(analytic(vec)[-len(c):])
        nonzero = cg[cg > 0]
        if nonzero.size == 0 or nonzero.min() >= 0.03 * cg.max():
            return state
    raise AssertionError("could not draw a well-conditioned coefficient set")


def _gradient_check_configs():
    """50 deterministic configurations spanning fixed/mixing layouts,
    ingoing/outgoing, tanh on/off, K in 2..5, d in 2/4/8.

    Entries are kept in the positive orthant with a large uniform-sign
    residual so that no gradient coordinate sits near zero, where central
    differences lose all relative accuracy to float64 rounding.
    """
    configs = []
    kinds = ("fixed", "ancre-in", "ancre-out")
    for idx in range(50):
        rng = make_rng(31337 + idx)
        K = (2, 3, 4, 5)[idx % 4]
        d = (2, 4, 8)[(idx // 4) % 3]
        kind = kinds[idx % 3]
        tanh = idx % 2 == 1 and K <= 4
        n = d + 2
        weights = [rng.uniform(0.1, 0.9, (d, d)) * (0.8 / d) for _ in range(K)]
        X = rng.uniform(0.1, 1.0, (d, n))
        Y = -rng.uniform(1.0, 2.0, (d, n))
        nonlinearity = "tanh" if tanh else "none"
        if kind == "fixed":
            pairs = candidate_pairs(K)
            if tanh:
                chosen = {pairs[rng.integers(len(pairs))]}
            else:
                chosen = {p for p in pairs if rng.uniform() < 0.35}
            state = TrainState(weights=weights, X=X, Y=Y,
                               topology=Topology(K=K, shortcuts=frozenset(chosen)),
                               nonlinearity=nonlinearity)
        else:
            mode = "ingoing" if kind == "ancre-in" else "outgoing"
            trunk = idx % 4 < 2

            def build_state(params):
                return TrainState(weights=weights, X=X, Y=Y, ancre=params,
                                  nonlinearity=nonlinearity, trunk=trunk)

            state = _well_conditioned_coeffs(rng, K, mode, build_state)
        configs.append((idx, kind, K, d, nonlinearity, state))
    return configs


def test_criterion_04_gradient_oracle():
    configs = _gradient_check_configs()
    assert {K for _, _, K, _, _, _ in configs} == {2, 3, 4, 5}
    assert {d for _, _, _, d, _, _ in configs} == {2, 4, 8}
    assert {k for _, k, _, _, _, _ in configs} == {"fixed", "ancre-in", "ancre-out"}
    assert {nl for _, _, _, _, nl, _ in configs} == {"none", "tanh"}
    worst = 0.0
    worst_cfg = None
    for idx, kind, K, d, nl, state in configs:
        vec, evaluate, analytic = pack_state(state)
        fd = fd_gradient(evaluate, vec, eps=1e-6)
        an = analytic(vec)
        rel = np.abs(an - fd) / (np.abs(an) + np.abs(fd) + 1e-12)
        m = float(rel.max())
        if m > worst:
            worst, worst_cfg = m, (idx, kind, K, d, nl)
    ok = worst <= 1e-6
    _report("04 gradient-oracle", ok,
            f"50 configs, worst rel err={worst:.3e} (<=1e-6) at {worst_cfg}")


def test_criterion_05_normalization():
    worst_sum = 0.0
    worst_shift = 0.0
    shift = 0.375
    count = 0
    for idx in range(1000):
        rng = make_rng(52000 + idx)
        K = int(rng.integers(1, 6))
        mode = "ingoing" if idx % 2 == 0 else "outgoing"
        base = {p: float(rng.uniform(-1.0, 1.0)) for p in candidate_pairs(K)}
        for tau in (1e-3, 0.1, 10.0):
            params = AncreParams(K=K, c=base, mode=mode, temperature=tau)
            from restopo.ancre import normalization_groups, normalize
            p = normalize(params)
            groups = normalization_groups(params)
            for g in groups:
                worst_sum = max(worst_sum, abs(sum(p[x] for x in g) - 1.0))
            shifted = dict(base)
            for x in groups[0]:
                shifted[x] += shift
            p2 = normalize(params.with_coeffs(shifted))
            for x in groups[0]:
                worst_shift = max(worst_shift, abs(p2[x] - p[x]))
            count += 1
    ok = worst_sum <= 1e-12 and worst_shift <= 1e-12
    _report("05 normalization", ok,
            f"{count} (set,tau) checks: worst |sum-1|={worst_sum:.2e}, "
            f"worst shift deviation={worst_shift:.2e} (both <=1e-12)")


def test_criterion_06_conservation(ub):
    drifts = {float(k): v for k, v in ub["witness"]["balance_drifts"].items()}
    ratios = {dt: drifts[dt] / drifts[dt / 2] for dt in (2e-3, 1e-3, 5e-4)}
    ok = all(1.6 <= r <= 2.4 for r in ratios.values())
    _report("06 conservation", ok,
            "drift halving ratios " +
            ", ".join(f"dt={dt:g}: {r:.3f}" for dt, r in ratios.items()) +
            " (all in [1.6, 2.4])")


def test_criterion_07_ancre_near_optimality(topo3, topo4):
    details = []
    ok = True
    for label, rec in [("3layer-s1", topo3[1]), ("3layer-s2", topo3[2]),
                       ("3layer-s3", topo3[3]), ("4layer-s1", topo4)]:
        best_fixed = min(_iters(rec, curve, "1e-6") for curve in rec["curves"]
                         if curve != "ancre")
        a_iters = _iters(rec, "ancre", "1e-6")
        verdict = rec["curves"]["ancre"]["verdict"]["kind"]
        good = a_iters <= 2.0 * best_fixed and verdict == "linear"
        ok &= good
        details.append(f"{label}: ancre={a_iters:g} vs best={best_fixed:g} ({verdict})")
    _report("07 ancre-near-optimality", ok, "; ".join(details))


def test_criterion_08_depth_slowdown(depth):
    details = []
    ok = True
    for seed, rec in depth.items():
        i4 = [_iters(rec, f"K{K}", "1e-4") for K in (2, 3, 4)]
        good = i4[0] < i4[1] < i4[2]
        ok &= good
        details.append(f"seed{seed}: {i4[0]:g} < {i4[1]:g} < {i4[2]:g}")
    _report("08 depth-slowdown", ok, "; ".join(details))


def test_criterion_09_deeper_extension(kdeep):
    details = []
    ok = True
    for seed, rec in kdeep.items():
        v01 = rec["curves"]["K5_0:1"]["verdict"]
        v04 = rec["curves"]["K5_0:4"]["verdict"]
        good = (v01["kind"] == "sublinear" and 1.5 <= v01["rate_or_power"] <= 3.0
                and v01["fit_quality"] >= 0.95
                and v04["kind"] == "linear" and v04["fit_quality"] >= 0.99)
        ok &= good
        details.append(f"seed{seed}: 0:1={v01['kind']}(p={v01['rate_or_power']:.2f}) "
                       f"0:4={v04['kind']}(R2={v04['fit_quality']:.4f})")
    _report("09 deeper-extension", ok, "; ".join(details))


def test_criterion_10_suppression_pattern(ancre_lnn):
    details = []
    ok = True
    for seed, rec in ancre_lnn.items():
        path = os.path.join(rec["output_dir"], rec["heatmap_csv"])
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        last = [float(x) for x in rows[-1][1:]]  # destination row j=3
        good = last[0] <= -0.3 and last[2] <= -0.3
        ok &= good
        details.append(f"seed{seed}: row3={['%.2f' % v for v in last[:3]]}")
    _report("10 suppression-pattern", ok,
            "; ".join(details) + " (entries (0,3),(2,3) <= -0.3)")


def test_criterion_11_determinism(outroot):
    mismatches = []
    for preset, seed in (("depth-sweep", 11), ("ub-witness", 11)):
        rec_a = _run_preset(outroot / "det_a", preset, seed)
        rec_b = _run_preset(outroot / "det_b", preset, seed)
        for curve, entry in rec_a["curves"].items():
            pa = os.path.join(rec_a["output_dir"], entry["trajectory_csv"])
            pb = os.path.join(rec_b["output_dir"],
                              rec_b["curves"][curve]["trajectory_csv"])
            with open(pa, "rb") as fa, open(pb, "rb") as fb:
                if fa.read() != fb.read():
                    mismatches.append(f"{preset}/{curve}")
    ok = not mismatches
    _report("11 determinism", ok,
            "byte-identical trajectory CSVs across re-runs"
            + ("" if ok else f"; mismatches: {mismatches}"))
