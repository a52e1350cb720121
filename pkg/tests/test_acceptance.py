"""Acceptance checks, one test per criterion, each printing a PASS/FAIL line.

The experiment criteria run the ``repro`` command exactly as a user would and
read back its summary; the determinism criterion reruns every experiment.
"""
import json
import time

import numpy as np
import pytest

from caaf.attribution import IGConfig, integrated_gradients
from caaf.baselines import BayesConfig, bayes_utility, ei_select, pod_qr_select
from caaf.cli import main
from caaf.clustering import AffinityMatrix, APConfig, affinity_propagation
from caaf.datamodel import SensorDataset
from caaf.surrogate import MLPConfig, TrainConfig, fit, init_model
from oracles import central_jacobian, ei_reference, random_model
from test_clustering import block_similarity, brute_force_exemplars, check_self_labeling

RUNTIME_LIMITS = {"table1": 120, "fig2": 600, "beam_fig4": 900, "field": 600}


@pytest.fixture(scope="module")
def repro_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("repro")
    runs = {}
    for name in RUNTIME_LIMITS:
        out = root / f"{name}_a"
        t0 = time.perf_counter()
        code = main(["repro", name, "--out", str(out)])
        runs[name] = {"dir": out, "code": code, "seconds": time.perf_counter() - t0}
    return runs


def _summary(run):
    return {c["name"]: c for c in json.loads((run["dir"] / "summary.json").read_text())["checks"]}


def _experiment_ok(run, name):
    checks = _summary(run)
    in_time = run["seconds"] < RUNTIME_LIMITS[name]
    failed = [k for k, c in checks.items() if not c["pass"]]
    ok = run["code"] == 0 and in_time and not failed
    detail = f"{run['seconds']:.0f}s (limit {RUNTIME_LIMITS[name]}s)"
    if failed:
        detail += f", failed checks {failed}"
    return ok, checks, detail


def test_criterion_1_table1(repro_runs, report):
    ok, checks, detail = _experiment_ok(repro_runs["table1"], "table1")
    frac = np.round(checks["clustered_fractions"]["mean_fractions"], 3).tolist()
    naive = checks["naive_ranking_and_fractions"]
    assert report(1, ok, f"table1 {detail}; naive hits {naive['hits']}/{naive['n_seeds']}, "
                         f"clustered fractions {frac}")


def test_criterion_2_fig2(repro_runs, report):
    ok, checks, detail = _experiment_ok(repro_runs["fig2"], "fig2")
    n = np.round(checks["naive_non_decreasing"]["naive"], 3).tolist()
    c = np.round(checks["clustered_non_decreasing"]["clustered"], 3).tolist()
    assert report(2, ok, f"fig2 {detail}; naive {n}, clustered {c}")


def test_criterion_3_beam(repro_runs, report):
    ok, checks, detail = _experiment_ok(repro_runs["beam_fig4"], "beam_fig4")
    c = checks["caaf_beats_ei_at_k"]
    assert report(3, ok, f"beam {detail}; CAAF beats EI on RMS and CN at k={c['k']} "
                         f"in {c['wins']}/{c['n_seeds']} seeds")


def test_criterion_4_integrated_gradients(report):
    worst, bad_models, bad_points, total = 0.0, 0, 0, 0
    for s in range(50):
        rng = np.random.default_rng(s)
        d = int(rng.integers(2, 6))
        x = rng.normal(size=(300, d))
        y = np.column_stack([np.sin(x @ rng.normal(size=d)), x[:, 0] * x[:, -1]])
        ds = SensorDataset(x, y, [f"x{i}" for i in range(d)], ["a", "b"])
        mlp = MLPConfig(activation=("leaky_relu", "relu")[s % 2], batch_norm=bool(s % 3), seed=s)
        model, _ = fit(ds, mlp, TrainConfig(epochs=10, shuffle_seed=s))
        pts = rng.normal(size=(10, d))
        ig = integrated_gradients(model, pts, IGConfig(steps=512, quadrature="midpoint"))
        gap = model(pts) - model(np.zeros(d))
        err = np.abs(ig.sum(axis=2) - gap)
        tol = 1e-3 * np.abs(gap) + 1e-6
        worst = max(worst, float((err / tol).max()))
        bad_models += bool(np.any(err > tol))
        bad_points += int(np.sum(err > tol))
        total += err.size
    completeness = bad_models == 0

    linear_ok = True
    for s in range(10):
        m = init_model(MLPConfig(4, 2, (), seed=s))
        x = np.random.default_rng(s).normal(size=(5, 4))
        ig = integrated_gradients(m, x, IGConfig(steps=1))
        gap = m(x) - m(np.zeros(4))
        linear_ok &= bool(np.allclose(ig.sum(axis=2), gap, rtol=1e-13, atol=1e-15))

    m = random_model(7)
    m.weights[0][1, :] = 0.0
    dummy_ok = bool(np.all(integrated_gradients(m, np.random.default_rng(0).normal(size=(50, 4)))[:, :, 1] == 0.0))

    ok = completeness and linear_ok and dummy_ok
    assert report(4, ok, f"completeness at 512 midpoint steps holds on {50 - bad_models}/50 models "
                         f"({total - bad_points}/{total} output-points, worst error {worst:.0f}x tolerance); "
                         f"linear exact {linear_ok}; dummy zero {dummy_ok}")


def test_criterion_5_gradients(report):
    worst = 0.0
    rng = np.random.default_rng(5)
    for act in ("leaky_relu", "relu"):
        for bn in (True, False):
            m = random_model(int(rng.integers(1_000)), activation=act, batch_norm=bn)
            for x in rng.normal(size=(100, 4)):
                jac = m.jacobian(x)
                fd = central_jacobian(m.forward, x, h=1e-5)
                denom = np.maximum(np.abs(jac), np.abs(fd))
                rel = np.where(denom > 0, np.abs(jac - fd) / np.where(denom > 0, denom, 1.0), 0.0)
                worst = max(worst, float(rel.max()))
    assert report(5, worst <= 1e-4, f"max elementwise relative error {worst:.2e} over 400 points")


def test_criterion_6_ei(report):
    rng = np.random.default_rng(6)
    matches, trace_err = 0, 0.0
    for _ in range(50):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(n + 1, 13))
        k = int(rng.integers(n, m))
        phi = rng.normal(size=(m, n))
        r = ei_select(phi, k)
        keep, order, _ = ei_reference(phi, k)
        matches += sorted(r.selected) == keep and r.metadata["elimination_order"] == order
        trace_err = max(trace_err, float(np.max(np.abs(np.array(r.metadata["ef_trace"]) - n))))
    ok = matches == 50 and trace_err <= 1e-9
    assert report(6, ok, f"{matches}/50 match the reference loop; max |trace - N| {trace_err:.1e}")


def test_criterion_7_ap(report):
    rng = np.random.default_rng(7)
    hits, invariants = 0, True
    for _ in range(20):
        m = int(rng.integers(3, 9))
        s = block_similarity(rng, m, int(rng.integers(1, m // 3 + 1)))
        ca = affinity_propagation(AffinityMatrix(s, "neg_euclidean", float(s[0, 0])), APConfig())
        try:
            check_self_labeling(ca, m)
        except AssertionError:
            invariants = False
        hits += frozenset(ca.exemplars) in brute_force_exemplars(s)
    assert report(7, hits >= 18 and invariants, f"{hits}/20 exemplar sets attain the exhaustive optimum; "
                                                 f"self-labeling holds: {invariants}")


def test_criterion_8_bayes(report):
    rng = np.random.default_rng(8)
    z = rng.standard_normal((20_000, 3))
    rho = 0.89
    x = np.column_stack([rho * z[:, 0] + np.sqrt(1 - rho**2) * z[:, 1], z[:, 2]])
    ds = SensorDataset(x, z[:, :1], ["corr", "indep"], ["y"])
    u = bayes_utility(ds, BayesConfig(n_bins=15, n_mc=20_000)).utilities
    target = -0.5 * np.log(1 - rho**2)
    ok = abs(u[0] - target) <= 0.15 and abs(u[1]) <= 0.05
    assert report(8, ok, f"correlated {u[0]:.3f} vs {target:.3f}; independent {u[1]:.4f}")


def test_criterion_9_pod(report):
    rng = np.random.default_rng(9)
    x = rng.normal(size=(500, 8))
    x[:, 5] *= 15.0
    ds = SensorDataset(x, np.zeros((500, 1)), [f"c{i}" for i in range(8)], ["y"])
    all_ok = sorted(pod_qr_select(ds, 8).selected) == list(range(8))
    first = pod_qr_select(ds, 1).selected
    assert report(9, all_ok and first == (5,), f"k=M returns all: {all_ok}; k=1 picks {list(first)} (expected [5])")


def test_criterion_10_field(repro_runs, report):
    ok, checks, detail = _experiment_ok(repro_runs["field"], "field")
    c = checks["caaf_beats_uniform"]
    assert report(10, ok, f"field {detail}; peak {checks['crosscorr_peak_at_shift']['peak']}, "
                          f"{checks['caaf_completes']['exemplars']} exemplars of 361, "
                          f"epsilon caaf {c['caaf_epsilon']:.3f} vs uniform {c['uniform_epsilon']:.3f}")


def test_criterion_11_determinism(repro_runs, report, tmp_path):
    differing = []
    for name, run in repro_runs.items():
        out = tmp_path / f"{name}_b"
        assert main(["repro", name, "--out", str(out)]) == 0
        first = sorted(p.name for p in run["dir"].iterdir())
        second = sorted(p.name for p in out.iterdir())
        if first != second:
            differing.append(f"{name}: file sets differ")
            continue
        differing += [f"{name}/{f}" for f in first if (run["dir"] / f).read_bytes() != (out / f).read_bytes()]
    assert report(11, not differing, "all repro payloads byte-identical" if not differing
                  else f"differing files {differing}")
