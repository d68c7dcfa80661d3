"""Tests for the experiment harness at desk scale.

Full-scale versions of the statistical checks live in the acceptance
module; here every scenario runs at reduced horizons to validate wiring,
refusal paths, report structure, reproducibility and the negative control.
"""

import json
import math

import numpy as np
import pytest

from zrplab.disorder import triangular_law, uniform_law
from zrplab.errors import DomainError
from zrplab.experiments import (
    ExperimentRefused,
    ExperimentSpec,
    check_assumption_surrogates,
    compare_distributions,
    flux_table_for,
    run_convergence_experiment,
    run_local_equilibrium_experiment,
    run_slow_site_current_experiment,
    run_source_hydro_experiment,
)
from zrplab.rates import constant_rate, site_law
from zrplab.stats import derive_seed, empirical_pmf, mean_se

G = constant_rate()


def geometric_pmf(lam, n):
    return (1 - lam) * lam ** np.arange(n)


class TestCompareDistributions:
    def test_identical(self):
        p = geometric_pmf(0.5, 60)
        tv, ok = compare_distributions(p / p.sum(), p, 0.01)
        assert tv < 1e-12 and ok

    def test_point_mass_vs_geometric(self):
        delta0 = np.zeros(40)
        delta0[0] = 1.0
        tv, _ = compare_distributions(delta0, geometric_pmf(0.5, 40), 0.1)
        assert tv == pytest.approx(0.5, abs=1e-10)

    def test_two_geometrics_frozen_oracle(self):
        # direct summation: TV(geom 0.5, geom 0.6) = sum over {n: p>q} of
        # (p-q) = (0.5-0.4) + (0.25-0.24) = 0.11
        p = geometric_pmf(0.5, 200)
        q = geometric_pmf(0.6, 200)
        tv, _ = compare_distributions(p / p.sum(), q, 0.2)
        assert tv == pytest.approx(0.11, abs=1e-6)

    def test_unnormalised_rejected(self):
        with pytest.raises(ValueError):
            compare_distributions(np.array([0.5, 0.2]), geometric_pmf(0.5, 10), 0.1)

    def test_tail_folded_into_last_bucket(self):
        # a truncated law (tail ~ 1e-12) compares cleanly with an exactly
        # normalised empirical pmf of the same shape
        law = site_law(G, 0.5)
        emp = law.pmf / law.pmf.sum()
        tv, ok = compare_distributions(emp, law.pmf, 1e-9)
        assert ok

    def test_large_target_deficit_rejected(self):
        target = geometric_pmf(0.5, 8)  # misses ~0.4% of the mass
        emp = target / target.sum()
        with pytest.raises(ValueError):
            compare_distributions(emp, target, 0.1)


class TestSpec:
    def test_replica_floor(self):
        with pytest.raises(ValueError):
            ExperimentSpec(
                scenario="x", c=0.5, p=1.0, horizon=10, replicas=5, seed=0
            )

    def test_json_round_trip(self):
        text = json.dumps(
            {
                "scenario": "source-hydro",
                "c": 0.5,
                "p": 1.0,
                "horizon": 100,
                "replicas": 40,
                "seed": 3,
                "g": {"kind": "constant-rate", "g_values": []},
                "env_kind": "constant",
                "observables": {"fill": 0.5},
            }
        )
        spec = ExperimentSpec.from_json(text)
        assert spec.scenario == "source-hydro"
        assert spec.observables["fill"] == 0.5

    def test_drift_required(self):
        with pytest.raises(DomainError):
            ExperimentSpec(scenario="x", c=0.5, p=0.5, horizon=1, replicas=40, seed=0)


class TestSurrogates:
    def test_uniform_disorder_refused(self):
        # uniform marginal has divergent critical density: refuse
        spec = ExperimentSpec(
            scenario="convergence",
            c=0.5,
            p=0.8,
            horizon=20,
            replicas=40,
            seed=1,
            g=G,
            q_law=uniform_law(0.5, 1.0),
        )
        with pytest.raises(ExperimentRefused, match="critical density"):
            check_assumption_surrogates(spec, check_halfwidth=2000)

    def test_triangular_disorder_accepted(self):
        spec = ExperimentSpec(
            scenario="convergence",
            c=0.5,
            p=0.8,
            horizon=20,
            replicas=40,
            seed=1,
            g=G,
            q_law=triangular_law(0.5, 1.0),
        )
        diag = check_assumption_surrogates(spec, check_halfwidth=4000)
        assert diag["rho_c"] == pytest.approx(2.0, abs=1e-6)
        assert diag["holds_H"]


def small_convergence_spec(**kw):
    base = dict(
        scenario="convergence",
        c=0.5,
        p=1.0,
        horizon=150.0,
        replicas=150,
        seed=11,
        g=G,
        q_law=triangular_law(0.5, 1.0),
        env_kind="sparse-defect",
        observables={"sites": (-1, 0, 1), "tv_tolerance": 0.08, "h_cap": 5},
    )
    base.update(kw)
    return ExperimentSpec(**base)


class TestConvergenceExperiment:
    def test_supercritical_run_reports(self):
        # structure check at a short horizon; the bound itself needs the
        # acceptance-scale horizon since relaxation at the origin is slow
        reports = run_convergence_experiment(small_convergence_spec())
        names = [r.observable for r in reports]
        assert "tv_marginal_site_0" in names
        assert any(n.startswith("upper_bound") for n in names)
        ub = [r for r in reports if r.metric == "one-sided-upper"][0]
        assert ub.provenance == "PAPER"
        assert math.isfinite(ub.se) and ub.replicas == 150
        tv0 = [r for r in reports if r.observable == "tv_marginal_site_0"][0]
        assert tv0.se is None
        for r in reports:
            assert r.provenance in ("PAPER", "TRIVIAL", "DERIVED")

    def test_negative_control_fails_critical_target(self):
        spec = small_convergence_spec(
            observables={
                "sites": (0,),
                "tv_tolerance": 0.08,
                "h_cap": 5,
                "start": {"subcritical": 0.1},
            }
        )
        reports = run_convergence_experiment(spec)
        tv = [r for r in reports if r.observable == "tv_marginal_site_0"][0]
        assert tv.distance > 3 * tv.tolerance  # must NOT match the critical law
        ub = [r for r in reports if r.metric == "one-sided-upper"][0]
        assert ub.empirical < ub.target - 3 * ub.se

    def test_subcritical_control_matches_own_law(self):
        # stationarity: the control marginal agrees with its own product law
        spec = small_convergence_spec(
            horizon=60.0,
            observables={
                "sites": (0,),
                "tv_tolerance": 0.08,
                "start": {"subcritical": 0.2},
            },
        )
        # rebuild empirical pmf from scratch and compare to theta_{0.2/alpha(0)}
        from zrplab.experiments import _environment, _margin_window, _sample_product
        from zrplab.harris import _run_engine, empty_configuration, generate_events

        window = _margin_window(0, 0, spec.horizon, spec.p)
        env = _environment(spec, window)
        vals = []
        for r in range(150):
            rng = np.random.default_rng(derive_seed(spec.seed, 101, r))
            cfg = empty_configuration(window, right="sink")
            cfg.counts[:] = _sample_product(spec.g, env, 0.2, rng)
            ev = generate_events(derive_seed(spec.seed, 202, r), window, spec.horizon, spec.p)
            trajs, _ = _run_engine([cfg], [env.alpha], spec.g, ev, spec.horizon)
            vals.append(trajs[0].final.occupancy(0))
        law = site_law(G, 0.2 / env.a(0))
        tv, ok = compare_distributions(
            empirical_pmf(vals, length=len(law.pmf)), law.pmf, 0.08
        )
        assert ok

    def test_tv_trend_toward_critical(self):
        # the marginal at the origin moves toward the critical law as the
        # horizon grows (limit approached, never asserted)
        tvs = []
        for T in (100.0, 1000.0):
            spec = small_convergence_spec(
                horizon=T,
                replicas=120,
                observables={"sites": (0,), "tv_tolerance": 1.0},
            )
            reports = run_convergence_experiment(spec)
            tvs.append(reports[0].distance)
        assert tvs[1] <= tvs[0] + 0.02

    def test_reproducible_bit_for_bit(self):
        spec = small_convergence_spec(replicas=40, horizon=60.0)
        a = run_convergence_experiment(spec)
        b = run_convergence_experiment(spec)
        assert [r.to_dict() for r in a] == [r.to_dict() for r in b]


class TestSourceHydro:
    def test_small_scale_accuracy(self):
        spec = ExperimentSpec(
            scenario="source-hydro",
            c=0.5,
            p=1.0,
            horizon=250.0,
            replicas=60,
            seed=5,
            g=G,
            env_kind="constant",
            observables={"fill": 0.5, "tolerance": 0.05},
        )
        reports = run_source_hydro_experiment(spec, [0.49, 0.7])
        for r in reports:
            assert r.passed, (r.observable, r.distance)

    def test_beyond_fan_mass_vanishes(self):
        spec = ExperimentSpec(
            scenario="source-hydro",
            c=0.5,
            p=1.0,
            horizon=200.0,
            replicas=40,
            seed=6,
            g=G,
            env_kind="constant",
            observables={"fill": 0.5, "tolerance": 0.02, "beta": -1.3},
        )
        (r,) = run_source_hydro_experiment(spec, [1.25])
        assert r.target == 0.0
        assert r.passed

    def test_pure_source_matches_unrestricted(self):
        spec = ExperimentSpec(
            scenario="source-hydro",
            c=0.5,
            p=1.0,
            horizon=250.0,
            replicas=60,
            seed=7,
            g=G,
            env_kind="constant",
            observables={"tolerance": 0.05},
        )
        (r,) = run_source_hydro_experiment(spec, [0.49])
        assert r.target == pytest.approx(0.09, abs=1e-8)
        assert r.passed


class TestLocalEquilibrium:
    def test_refuses_below_v0(self):
        spec = ExperimentSpec(
            scenario="local-equilibrium",
            c=0.5,
            p=1.0,
            horizon=100.0,
            replicas=40,
            seed=8,
            g=G,
            env_kind="constant",
            observables={"fill": 0.5},
        )
        with pytest.raises(DomainError):
            run_local_equilibrium_experiment(spec, 0.2)  # v0 = 0.25

    def test_refuses_beyond_source_speed(self):
        spec = ExperimentSpec(
            scenario="local-equilibrium",
            c=0.5,
            p=1.0,
            horizon=100.0,
            replicas=40,
            seed=8,
            g=G,
            env_kind="constant",
            observables={"fill": 0.5, "beta": -0.5},
        )
        with pytest.raises(DomainError):
            run_local_equilibrium_experiment(spec, 0.6)

    def test_small_scale_tv(self):
        spec = ExperimentSpec(
            scenario="local-equilibrium",
            c=0.5,
            p=1.0,
            horizon=300.0,
            replicas=100,
            seed=9,
            g=G,
            env_kind="constant",
            observables={"fill": 0.5, "tolerance": 0.06},
        )
        tv_rep, lower_rep = run_local_equilibrium_experiment(spec, 0.49)
        assert tv_rep.passed
        assert lower_rep.passed
        assert "fan intensity" in tv_rep.notes

    def test_near_v0_target_intensity(self):
        # v slightly above v0: fan intensity approaches c
        ft = flux_table_for(G, None, 0.5, 1.0)
        from zrplab.analytic import riemann_fan

        _, lam_26 = riemann_fan(ft, 0.26)
        assert lam_26 == pytest.approx(1 - math.sqrt(0.26), abs=1e-4)
        _, lam_gentle = riemann_fan(ft, 0.2500001)
        assert lam_gentle > 0.499


class TestSlowSiteCurrent:
    def test_small_scale_bounds(self):
        spec = ExperimentSpec(
            scenario="slow-site-current",
            c=0.5,
            p=1.0,
            horizon=150.0,
            replicas=60,
            seed=10,
            g=G,
            q_law=triangular_law(0.5, 1.0),
            env_kind="sparse-defect",
        )
        excess_rep, source_rep = run_slow_site_current_experiment(spec, 0.2)
        assert excess_rep.passed
        assert source_rep.passed
        assert "slow site" in excess_rep.notes


class TestStats:
    def test_mean_se(self):
        m, se = mean_se([1.0, 2.0, 3.0, 4.0])
        assert m == 2.5
        assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)

    def test_derive_seed_distinct_streams(self):
        seeds = {derive_seed(7, tag, r) for tag in (101, 202) for r in range(100)}
        assert len(seeds) == 200

    def test_empirical_pmf(self):
        pmf = empirical_pmf([0, 0, 1, 3], length=3)
        assert pmf.tolist() == [0.5, 0.25, 0.0, 0.25]
