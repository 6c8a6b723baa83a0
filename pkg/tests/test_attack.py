import math

import numpy as np
import pytest

from ldpgraph import generate_featured_sbm
from ldpgraph.attack import (
    AttackConfig,
    AttackPlan,
    PoisonedGraph,
    compute_extreme_bound,
    compute_inner_link_prob,
    craft_fake_features,
    cyclic_match,
    plan_attack,
    poison_graph,
    sample_inner_links,
    select_targets,
)
from ldpgraph.errors import ConstraintError, InvalidArgumentError
from ldpgraph.mechanisms import (
    MechanismConfig,
    PmParams,
    SwParams,
    perturb_features,
    rectify_mb,
)
from ldpgraph.rng import substream


class TestInnerLinkProb:
    def test_hand_fixture(self):
        # q = (a - 2 n_t / n_f) / (n_f - 1) = (4 - 16/5) / 4 = 0.2
        assert compute_inner_link_prob(4.0, 8, 5) == pytest.approx(0.2, rel=1e-12)

    def test_cora_scale_fixture(self):
        # a=3.90, n_t=243, n_f=194: (3.90 - 486/194)/193
        want = (3.90 - 2 * 243 / 194) / 193
        got = compute_inner_link_prob(3.90, 243, 194)
        assert got == pytest.approx(want, rel=1e-12)
        assert got == pytest.approx(0.0072272, abs=1e-7)

    def test_precondition_errors_named_and_ordered(self):
        with pytest.raises(ConstraintError) as ei:
            compute_inner_link_prob(1.5, 100, 10)
        assert "avg_deg >= 2" in str(ei.value)

        with pytest.raises(ConstraintError) as ei:
            compute_inner_link_prob(7.0, 7, 5)  # (a+1)^2/8 = 8 > 7
        assert "n_targets >= (avg_deg+1)^2/8" in str(ei.value)

        with pytest.raises(ConstraintError) as ei:
            compute_inner_link_prob(4.0, 8, 1)
        assert "1 < n_fake <= n_targets" in str(ei.value)

        with pytest.raises(ConstraintError) as ei:
            compute_inner_link_prob(4.0, 8, 9)
        assert "1 < n_fake <= n_targets" in str(ei.value)

        with pytest.raises(ConstraintError) as ei:
            compute_inner_link_prob(4.0, 8, 4)  # needs n_f > 2*8/4 = 4
        assert "n_fake > 2*n_targets/avg_deg" in str(ei.value)

    def test_q_in_unit_interval_whenever_preconditions_hold(self):
        # seeded MC over the feasible region
        rng = substream(0, "q-scan")
        checked = 0
        for _ in range(500):
            a = rng.uniform(2.0, 12.0)
            n_t = int(rng.integers(2, 400))
            n_f = int(rng.integers(2, n_t + 1))
            try:
                q = compute_inner_link_prob(a, n_t, n_f)
            except ConstraintError:
                continue
            checked += 1
            assert 0.0 < q <= 1.0
        assert checked > 50

    def test_degree_preservation_in_expectation(self):
        # E[deg(G')] = deg(G) exactly by construction of q
        a, n_t, n_f = 5.0, 50, 30
        q = compute_inner_link_prob(a, n_t, n_f)
        n = 200
        total = a * n + 2 * n_t + 2 * q * (n_f * (n_f - 1) / 2)
        assert total / (n + n_f) == pytest.approx(a, rel=1e-12)


class TestCyclicMatch:
    def test_fixture_five_targets_two_fakes(self):
        # 1-based target j -> fake (j mod n_fake): 1,0,1,0,1
        got = cyclic_match(np.arange(5), 2)
        assert got.tolist() == [1, 0, 1, 0, 1]

    def test_every_fake_used_when_targets_cover(self):
        got = cyclic_match(np.arange(10), 4)
        assert set(got.tolist()) == {0, 1, 2, 3}

    def test_one_link_per_target(self):
        got = cyclic_match(np.arange(7), 7)
        assert got.shape == (7,)


class TestExtremeBound:
    def test_pm_modes(self):
        cfg = MechanismConfig(kind="pm", epsilon=8.0, d=4, m=2)  # eps_bar=4
        s = PmParams.from_eps_bar(4.0).s
        assert compute_extreme_bound(cfg, "paper") == pytest.approx(4 * s, rel=1e-12)
        assert compute_extreme_bound(cfg, "algorithm1") == pytest.approx(2 * s, rel=1e-12)

    def test_pm_paper_fixture(self):
        cfg = MechanismConfig(kind="pm", epsilon=2.0, d=4, m=1)
        want = 4 * (math.exp(1.0) + 1) / (math.exp(1.0) - 1)
        assert compute_extreme_bound(cfg, "paper") == pytest.approx(want, rel=1e-12)
        assert want == pytest.approx(8.655813654954612, rel=1e-12)

    def test_sw_modes_and_plus_one(self):
        cfg = MechanismConfig(kind="sw", epsilon=1.0, d=6, m=1)
        b = SwParams.from_eps_bar(1.0).b
        assert compute_extreme_bound(cfg, "paper") == pytest.approx(b, rel=1e-12)
        assert compute_extreme_bound(cfg, "paper", sw_plus_one=True) == pytest.approx(
            b + 1, rel=1e-12
        )
        assert compute_extreme_bound(cfg, "algorithm1") == pytest.approx(6 * b, rel=1e-12)

    def test_mb_is_rectified_extreme(self):
        cfg = MechanismConfig(kind="mb", epsilon=1.0, d=4, m=2)
        want = rectify_mb(np.array([1.0]), 4, 2, -1.0, 1.0, 0.5)[0]
        for mode in ("paper", "algorithm1"):
            assert compute_extreme_bound(cfg, mode) == pytest.approx(want, rel=1e-12)

    def test_bad_mode(self):
        cfg = MechanismConfig(kind="pm", epsilon=1.0, d=4)
        with pytest.raises(InvalidArgumentError):
            compute_extreme_bound(cfg, "both")


class TestCraft:
    def test_identical_shares_one_support(self):
        mat, sups = craft_fake_features(5, 8, 2, 3.0, "identical", substream(1))
        assert sups.shape == (5, 2)
        assert np.all(sups == sups[0])
        nz = mat != 0
        assert nz.sum() == 10
        assert np.all(np.abs(mat[nz]) == 3.0)

    def test_diverse_supports_disjoint(self):
        mat, sups = craft_fake_features(3, 9, 3, 2.0, "diverse", substream(2))
        flat = sups.ravel()
        assert len(set(flat.tolist())) == 9

    def test_diverse_infeasible(self):
        with pytest.raises(InvalidArgumentError):
            craft_fake_features(4, 9, 3, 2.0, "diverse", substream(3))

    def test_random_supports_independent(self):
        mat, sups = craft_fake_features(40, 16, 2, 1.0, "random", substream(4))
        assert not np.all(sups == sups[0])  # overwhelmingly unlikely if independent

    def test_sign_balance(self):
        mat, _ = craft_fake_features(400, 4, 2, 1.0, "identical", substream(5))
        vals = mat[mat != 0]
        frac = (vals > 0).mean()
        assert abs(frac - 0.5) < 0.06

    def test_determinism(self):
        a = craft_fake_features(5, 8, 2, 3.0, "identical", substream(6, "x"))
        b = craft_fake_features(5, 8, 2, 3.0, "identical", substream(6, "x"))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestSelectTargets:
    def test_count_rounds(self, sbm_graph):
        t = select_targets(sbm_graph, 0.09, substream(7))
        assert t.size == round(0.09 * sbm_graph.n)
        assert np.unique(t).size == t.size

    def test_candidate_pool_respected(self, sbm_graph):
        pool = np.arange(50)
        t = select_targets(sbm_graph, 0.1, substream(8), candidates=pool)
        assert np.all(np.isin(t, pool))

    def test_eta_bounds(self, sbm_graph):
        with pytest.raises(InvalidArgumentError):
            select_targets(sbm_graph, 0.0, substream(9))
        with pytest.raises(InvalidArgumentError):
            select_targets(sbm_graph, 1.5, substream(9))


@pytest.fixture(scope="module")
def bench():
    g = generate_featured_sbm(400, 4, 16, 0.025, 0.004, 1.0, seed=1)
    mech = MechanismConfig(kind="pm", epsilon=0.01, d=16)
    cfg = AttackConfig(eta1=0.1, eta2=0.8, seed=0)
    plan = plan_attack(g, mech, cfg)
    return g, mech, cfg, plan


class TestPlan:
    def test_shape_invariants(self, bench):
        g, mech, cfg, plan = bench
        n_t = round(0.1 * g.n)
        n_f = round(0.8 * n_t)
        assert plan.targets.size == n_t
        assert plan.n_fake == n_f
        assert plan.matching_edges.shape == (n_t, 2)
        # fake ids are contiguous beyond the genuine range
        assert plan.fakes.min() == g.n and plan.fakes.max() == g.n + n_f - 1
        assert plan.crafted_features.shape == (n_f, g.d)
        assert np.all((0 <= plan.fake_labels) & (plan.fake_labels < g.num_classes))

    def test_matching_follows_cycle(self, bench):
        g, _, _, plan = bench
        fk = cyclic_match(plan.targets, plan.n_fake)
        assert np.array_equal(plan.matching_edges[:, 1], plan.fakes[fk])
        assert np.array_equal(plan.matching_edges[:, 0], plan.targets)

    def test_crafted_at_extreme(self, bench):
        g, mech, cfg, plan = bench
        nz = plan.crafted_features != 0
        assert np.allclose(np.abs(plan.crafted_features[nz]), plan.B)

    def test_inner_links_within_fakes(self, bench):
        _, _, _, plan = bench
        if plan.inner_edges.size:
            assert np.all(np.isin(plan.inner_edges, plan.fakes))

    def test_q_matches_formula(self, bench):
        g, _, _, plan = bench
        want = compute_inner_link_prob(g.avg_degree, plan.targets.size, plan.n_fake)
        assert plan.q == pytest.approx(want, rel=1e-12)

    def test_too_few_fakes_rejected(self, sbm_graph):
        mech = MechanismConfig(kind="pm", epsilon=0.01, d=16)
        cfg = AttackConfig(eta1=0.005, eta2=0.8, seed=0)  # 1-2 targets -> <2 fakes
        with pytest.raises(ConstraintError):
            plan_attack(sbm_graph, mech, cfg)

    def test_save_load_roundtrip(self, bench, tmp_path):
        _, _, _, plan = bench
        path = str(tmp_path / "plan.json")
        plan.save(path)
        back = AttackPlan.load(path)
        assert np.array_equal(back.targets, plan.targets)
        assert np.array_equal(back.crafted_features, plan.crafted_features)
        assert back.q == plan.q and back.B == plan.B
        assert back.strategy == plan.strategy

    def test_empty_plan(self):
        p = AttackPlan.empty()
        assert p.n_fake == 0 and p.targets.size == 0


class TestDegreePreservation:
    def test_mc_within_one_percent(self):
        # 200 attack seeds: mean avg-degree of G' within 1% of G's
        g = generate_featured_sbm(400, 4, 8, 0.025, 0.004, 1.0, seed=2)
        assert g.avg_degree >= 3.0
        mech = MechanismConfig(kind="pm", epsilon=0.01, d=8)
        degs = []
        for s in range(200):
            plan = plan_attack(g, mech, AttackConfig(eta1=0.1, eta2=0.8, seed=s))
            pg = poison_graph(g, np.zeros_like(g.features), plan)
            degs.append(pg.avg_degree)
        assert abs(np.mean(degs) - g.avg_degree) / g.avg_degree < 0.01

    def test_inner_sampling_rate(self):
        q = 0.3
        counts = [
            sample_inner_links(30, q, substream(s, "inner")).shape[0]
            for s in range(300)
        ]
        want = q * 30 * 29 / 2
        assert np.mean(counts) == pytest.approx(want, rel=0.05)


class TestPoison:
    def test_empty_plan_is_identity(self, sbm_graph):
        pf = perturb_features(
            sbm_graph.features,
            MechanismConfig(kind="pm", epsilon=0.5, d=sbm_graph.d),
            seed=0,
        )
        pg = poison_graph(sbm_graph, pf, AttackPlan.empty())
        assert isinstance(pg, PoisonedGraph)
        assert pg.n == sbm_graph.n
        assert np.array_equal(pg.edges, sbm_graph.edges)
        assert np.array_equal(pg.features, pf.matrix)

    def test_poisoned_composition(self, bench):
        g, mech, cfg, plan = bench
        pf = perturb_features(g.features, mech, seed=0)
        pg = poison_graph(g, pf, plan)
        assert pg.n == g.n + plan.n_fake
        assert pg.genuine_n == g.n
        # genuine rows carry the perturbed features, fakes the crafted ones
        assert np.array_equal(pg.features[: g.n], pf.matrix)
        assert np.array_equal(pg.features[g.n:], plan.crafted_features)
        # original edges survive; matching edges present
        a = pg.adjacency()
        for u, v in g.edges[:50]:
            assert a[u, v] == 1
        for t, f in plan.matching_edges[:50]:
            assert a[t, f] == 1
        assert np.array_equal(pg.labels[g.n:], plan.fake_labels)

    def test_extend_masks_fakes_train(self, bench, sbm_graph):
        g, mech, cfg, plan = bench
        from ldpgraph import split_nodes

        pf = perturb_features(g.features, mech, seed=0)
        pg = poison_graph(g, pf, plan)
        masks = split_nodes(g, (0.5, 0.25, 0.25), 0)
        ext = pg.extend_masks(masks)
        assert ext.train.size == pg.n
        assert np.all(ext.train[g.n:])
        assert not np.any(ext.val[g.n:]) and not np.any(ext.test[g.n:])

    def test_matrix_accepted_directly(self, bench):
        g, mech, _, plan = bench
        mat = np.zeros_like(g.features)
        pg = poison_graph(g, mat, plan)
        assert np.array_equal(pg.features[: g.n], mat)
