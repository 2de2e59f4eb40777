# core/tests/test_optimizer.py
import copy
from collections import Counter

import pytest

from core import datasets
from core.deployment import SiteId
from core.optimizer import dominates, enumerate_candidates, feasible_set, pareto
from core.serializers import InterfaceSpecSerializer, load
from core.services import gather_stats
from core.tests.test_data import baseline_plan, client_cube_plan, database_of, server_cube_plan


def family_of(plan):
    step = next((step for step in plan.provenance if step.startswith('R2:')), None)
    return step.split(':')[2].split('(')[0].split('@')[0] if step else 'baseline'


@pytest.fixture
def congress_feasible(congress_candidates, congress_spec, deployment, calibration, congress_stats):
    return feasible_set(congress_candidates, congress_spec, deployment, calibration, congress_stats)


class TestEnumerateCandidates:
    def test_congress_candidates(self, congress_candidates):
        families = Counter(family_of(plan) for plan in congress_candidates)

        assert len(congress_candidates) == 43
        assert not congress_candidates.truncated
        assert families == {'baseline': 1, 'BaseScan': 10, 'HashIndex': 10, 'SortedRangeIndex': 10, 'PrefixSumCube': 12}

    def test_build_site_is_upstream_of_eval_site(self, congress_candidates):
        order = [SiteId.CLOUD, SiteId.SERVER, SiteId.CLIENT]
        for plan in congress_candidates:
            for view_plan in plan.structures():
                assert order.index(view_plan.build_site) <= order.index(view_plan.eval_site)
                assert order.index(view_plan.eval_site) <= order.index(view_plan.residual_site)

    def test_plan_ids_are_stable_and_unique(self, congress_spec, deployment, congress_stats, congress_candidates):
        again = enumerate_candidates(congress_spec, deployment, congress_stats)
        ids = [plan.plan_id for plan in congress_candidates]

        assert ids == [plan.plan_id for plan in again]
        assert len(set(ids)) == len(ids)

    def test_cap_truncates(self, congress_spec, deployment, congress_stats):
        candidates = enumerate_candidates(congress_spec, deployment, congress_stats, cap=5)
        assert len(candidates) == 5
        assert candidates.truncated

    def test_cell_cap_prunes_cubes(self, congress_spec, deployment, congress_stats):
        candidates = enumerate_candidates(congress_spec, deployment, congress_stats, cell_cap=10)
        assert len(candidates) == 31
        assert 'PrefixSumCube' not in {family_of(plan) for plan in candidates}


class TestUnboundedJoins:
    @pytest.fixture
    def tags(self):
        dataset = datasets.tags(seed=3, posts=40, tag_count=4, likes=120)
        spec = load(InterfaceSpecSerializer, dataset.spec)
        return spec, gather_stats(database_of(dataset, spec))

    def test_pruned_by_default(self, tags, deployment):
        spec, stats = tags
        candidates = enumerate_candidates(spec, deployment, stats)
        assert [family_of(plan) for plan in candidates] == ['baseline']

    def test_kept_when_pruning_is_off(self, tags, deployment):
        spec, stats = tags
        candidates = enumerate_candidates(spec, deployment, stats, prune_unbounded_joins=False)
        assert len(candidates) > 1

    def test_declared_fanout_re_enables_structures(self, deployment):
        dataset = datasets.tags(seed=3, posts=40, tag_count=4, likes=120)
        document = copy.deepcopy(dataset.spec)
        document['views'][0]['plan']['input']['input']['max_fanout'] = 1
        spec = load(InterfaceSpecSerializer, document)
        candidates = enumerate_candidates(spec, deployment, gather_stats(database_of(dataset, spec)))

        assert any(step.startswith('R2:') for plan in candidates for step in plan.provenance)


class TestFeasibility:
    def test_cube_plans_are_feasible(self, congress_feasible, congress_candidates):
        feasible_ids = {entry.plan.plan_id for entry in congress_feasible.entries}

        assert server_cube_plan(congress_candidates).plan_id in feasible_ids
        assert client_cube_plan(congress_candidates).plan_id in feasible_ids
        assert congress_feasible.infeasible is None
        assert congress_feasible.assessed == 43

    def test_cloud_evaluation_is_never_feasible(self, congress_feasible):
        for entry in congress_feasible.entries:
            for view_plan in entry.plan.views:
                assert view_plan.match is not None
                assert view_plan.eval_site is not SiteId.CLOUD

    def test_tight_bounds_report_the_closest_miss(self, congress_candidates, congress_spec, deployment, calibration,
                                                  congress_stats):
        tight = congress_spec.with_bounds(0.001)
        result = feasible_set(congress_candidates, tight, deployment, calibration, congress_stats)

        assert result.entries == ()
        assert result.infeasible.plan_id in {plan.plan_id for plan in congress_candidates}
        assert result.infeasible.interaction in {'chamber_dropdown', 'date_slider'}
        assert result.infeasible.estimate_ms > result.infeasible.bound_ms

    def test_zero_budgets_leave_nothing(self, congress_candidates, congress_spec, deployment, calibration,
                                        congress_stats):
        result = feasible_set(congress_candidates, congress_spec, deployment.with_budgets(0), calibration,
                              congress_stats)
        assert result.entries == ()
        assert result.infeasible is not None

    @pytest.mark.parametrize('factor', [0.5, 1e-3, 1e-6])
    def test_smaller_budgets_never_add_plans(self, congress_candidates, congress_spec, deployment, calibration,
                                            congress_stats, congress_feasible, factor):
        smaller = feasible_set(congress_candidates, congress_spec, deployment.with_budgets(factor), calibration,
                               congress_stats)
        full = {entry.plan.plan_id for entry in congress_feasible.entries}
        assert {entry.plan.plan_id for entry in smaller.entries} <= full

    def test_relaxed_bounds_never_drop_plans(self, congress_candidates, congress_spec, deployment, calibration,
                                             congress_stats, congress_feasible):
        relaxed = feasible_set(congress_candidates, congress_spec.with_bounds(10), deployment, calibration,
                               congress_stats)
        full = {entry.plan.plan_id for entry in congress_feasible.entries}
        assert full <= {entry.plan.plan_id for entry in relaxed.entries}
        # ten times the slider bound admits the cloud baseline
        assert baseline_plan(congress_candidates).plan_id in {entry.plan.plan_id for entry in relaxed.entries}

    def test_doubled_budgets_keep_the_frontier_feasible(self, congress_candidates, congress_spec, deployment,
                                                       calibration, congress_stats, congress_feasible):
        doubled = feasible_set(congress_candidates, congress_spec, deployment.with_budgets(2), calibration,
                               congress_stats)
        kept = {entry.plan.plan_id for entry in doubled.entries}
        assert all(point.plan.plan_id in kept for point in pareto(congress_feasible))


class TestPareto:
    def test_frontier_is_exactly_the_non_dominated_set(self, congress_feasible):
        frontier = pareto(congress_feasible)
        points = {(p.client_bytes, p.server_bytes) for p in frontier}
        every = {
            (entry.report.site_bytes[SiteId.CLIENT], entry.report.site_bytes[SiteId.SERVER])
            for entry in congress_feasible.entries
        }
        brute = {
            point for point in every
            if not any(other[0] <= point[0] and other[1] <= point[1] and other != point for other in every)
        }
        assert points == brute
        assert len(frontier) == len(points)

    def test_congress_frontier_uses_cubes(self, congress_feasible):
        frontier = pareto(congress_feasible)

        assert len(frontier) == 2
        assert [p.client_bytes == 0 for p in frontier] == [True, False]
        assert frontier[1].server_bytes == 0
        assert all(any('PrefixSumCube' in step for step in p.plan.provenance) for p in frontier)
        assert not any(dominates(a, b) for a in frontier for b in frontier)

    def test_frontier_is_deterministic(self, congress_feasible):
        assert [p.plan.plan_id for p in pareto(congress_feasible)] == [p.plan.plan_id for p in pareto(congress_feasible)]

    def test_dominates(self, congress_feasible):
        first = pareto(congress_feasible)[0]
        worse = type(first)(first.plan, first.client_bytes + 1, first.server_bytes)
        assert dominates(first, worse)
        assert not dominates(worse, first)
        assert not dominates(first, first)
