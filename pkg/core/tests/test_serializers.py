# core/tests/test_serializers.py
import copy
import json

import pytest

from core.costs import assess
from core.deployment import SiteId
from core.exceptions import PlanFormatError, SpecInvalid
from core.serializers import (
    CostReportSerializer, DeploymentSerializer, InterfaceSpecSerializer, ParetoPointSerializer,
    PhysicalPlanSerializer, dump, load, load_plan, stats_to_json,
)
from core.optimizer import ParetoPoint
from core.services import load_run_config, write_json
from core.tests.test_data import client_cube_plan, find_plan


def codes(exc):
    return {(d.code, d.subject) for d in exc.value.diagnostics}


def through_json(document):
    return json.loads(json.dumps(document))


class TestInterfaceSpec:
    def test_congress_document(self, congress_spec):
        view = congress_spec.view('member_votes')

        assert [source.name for source in congress_spec.sources] == ['votes']
        assert view.plan.root.id == 'counts'
        assert view.plan.choice_decls['end'].default_value == 2020
        assert congress_spec.interaction('date_slider').bound_choices == ('start', 'end')

    def test_unsupported_version(self, congress_data):
        document = dict(congress_data.spec, spec_version=2)
        with pytest.raises(SpecInvalid) as exc:
            load(InterfaceSpecSerializer, document)
        assert ('BadField', 'spec_version') in {(code, subject.split('.')[0]) for code, subject in codes(exc)}

    def test_missing_section(self, congress_data):
        document = {key: value for key, value in congress_data.spec.items() if key != 'views'}
        with pytest.raises(SpecInvalid) as exc:
            load(InterfaceSpecSerializer, document)
        assert ('BadField', 'views') in codes(exc)

    def test_choice_without_domain(self, congress_data):
        document = copy.deepcopy(congress_data.spec)
        del document['views'][0]['choices'][0]['values']
        with pytest.raises(SpecInvalid) as exc:
            load(InterfaceSpecSerializer, document)
        assert any(subject.startswith('views.0.choices.0') for _, subject in codes(exc))

    def test_domain_of_the_wrong_type(self, congress_data):
        document = copy.deepcopy(congress_data.spec)
        document['views'][0]['choices'][1] = {'choice_id': 'start', 'value_type': 'int64', 'values': ['house']}
        with pytest.raises(SpecInvalid) as exc:
            load(InterfaceSpecSerializer, document)
        assert ('DomainTypeMismatch', 'start') in codes(exc)

    def test_unknown_operator(self, congress_data):
        document = copy.deepcopy(congress_data.spec)
        document['views'][0]['plan']['op'] = 'window'
        with pytest.raises(SpecInvalid) as exc:
            load(InterfaceSpecSerializer, document)
        assert any(subject.startswith('views.0.plan') for _, subject in codes(exc))


class TestDeployment:
    def test_default_deployment(self, deployment):
        assert deployment.site('client').memory_budget_bytes == 256 * 1024 * 1024
        assert deployment.site('client').compute_scale == 2.0
        assert deployment.site('cloud').unlimited
        assert deployment.link('client', 'server').latency_ms == 2.0

    def test_missing_link(self, settings):
        document = copy.deepcopy(settings.PVD_DEFAULT_DEPLOYMENT)
        document['links'] = document['links'][:1]
        with pytest.raises(SpecInvalid) as exc:
            load(DeploymentSerializer, document)
        assert ('BadLinks', 'links') in codes(exc)


class TestRunConfig:
    CONSTANTS = {'c_scan': 1e-4, 'c_hash': 2e-4, 'c_probe': 1e-3, 'c_sort': 3e-5, 'c_cell': 5e-6, 'c_op': 0.01}

    def test_documents_and_caps(self, settings, tmp_path):
        deploy = write_json(str(tmp_path / 'run.json'), {'deployment': settings.PVD_DEFAULT_DEPLOYMENT})
        calibration = write_json(str(tmp_path / 'calibration.json'), self.CONSTANTS)
        config = load_run_config('spec.json', deploy_path=deploy, calibration_path=calibration, seed=3,
                                 caps={'candidates': 7, 'bindings': None}, output_dir=tmp_path / 'out')

        assert config.deployment.site('client').memory_budget_bytes == 256 * 1024 * 1024
        assert config.calibration.c_op == 0.01
        assert (config.seed, config.candidate_cap, config.binding_cap) == (3, 7, settings.PVD_BINDING_CAP)
        assert config.out == str(tmp_path / 'out')

    def test_defaults(self, settings):
        config = load_run_config('spec.json')
        assert config.deployment is None and config.calibration is None
        assert config.cube_cell_cap == settings.PVD_CUBE_CELL_CAP

    @pytest.mark.parametrize('caps', [{'candidates': 0}, {'cube_cells': -5}])
    def test_non_positive_caps_are_rejected(self, caps):
        with pytest.raises(SpecInvalid):
            load_run_config('spec.json', caps=caps)

    def test_bad_calibration_is_rejected(self, tmp_path):
        calibration = write_json(str(tmp_path / 'calibration.json'), {'c_scan': 'fast'})
        with pytest.raises(SpecInvalid):
            load_run_config('spec.json', calibration_path=calibration)


class TestPhysicalPlan:
    def test_document_round_trip(self, congress_spec, congress_candidates):
        plan = find_plan(congress_candidates, 'HashIndex', 'build@cloud:eval@server', 'residual@client')
        document = through_json(dump(PhysicalPlanSerializer, plan))
        loaded = load_plan(document, congress_spec)

        assert document['plan_id'] == plan.plan_id
        assert document['views'][0]['structure'] == 'HashIndex(chamber)@by_date'
        assert loaded == plan
        assert loaded.plan_id == plan.plan_id

    def test_operator_listing(self, congress_candidates):
        document = dump(PhysicalPlanSerializer, client_cube_plan(congress_candidates))
        operators = document['views'][0]['operators']

        assert operators[0] == 'Query@cloud'
        assert operators[-1] == 'Render@client'
        assert any(op.startswith('Cache(PrefixSumCube(name,date)@counts)[key=chamber, replicated]') for op in operators)

    def test_unknown_structure(self, congress_spec, congress_candidates):
        document = through_json(dump(PhysicalPlanSerializer, client_cube_plan(congress_candidates)))
        document['views'][0]['structure'] = 'PrefixSumCube(vote)@counts'
        with pytest.raises(PlanFormatError) as exc:
            load_plan(document, congress_spec)
        assert exc.value.location == 'views[member_votes].structure'

    def test_structure_needs_sites(self, congress_spec, congress_candidates):
        document = through_json(dump(PhysicalPlanSerializer, client_cube_plan(congress_candidates)))
        del document['views'][0]['eval_site']
        with pytest.raises(PlanFormatError) as exc:
            load_plan(document, congress_spec)
        assert exc.value.location == 'views.0.eval_site'

    def test_unknown_view(self, congress_spec, congress_candidates):
        document = through_json(dump(PhysicalPlanSerializer, client_cube_plan(congress_candidates)))
        document['views'][0]['view'] = 'senators'
        with pytest.raises(PlanFormatError):
            load_plan(document, congress_spec)

    def test_not_an_object(self, congress_spec):
        with pytest.raises(PlanFormatError):
            load_plan([], congress_spec)


class TestReports:
    def test_stats_document(self, congress_stats):
        document = stats_to_json(congress_stats)
        votes = document['votes']

        assert votes['row_count'] == congress_stats['votes'].row_count
        assert votes['columns']['chamber']['distinct_count'] == 2
        assert votes['columns']['date']['min'] == 1990

    def test_cost_report_document(self, congress_spec, congress_candidates, deployment, calibration, congress_stats):
        plan = client_cube_plan(congress_candidates)
        report = assess(plan, congress_spec, deployment, calibration, congress_stats)
        document = through_json(dump(CostReportSerializer, report))

        assert document['feasible'] is True
        assert document['violated'] == []
        assert set(document['site_bytes']) == {'client', 'server', 'cloud'}
        assert document['breakdown']['date_slider']['total'] == pytest.approx(
            report.per_interaction_latency_ms['date_slider'])

    def test_pareto_point_document(self, congress_spec, congress_candidates, deployment, calibration, congress_stats):
        plan = client_cube_plan(congress_candidates)
        report = assess(plan, congress_spec, deployment, calibration, congress_stats)
        point = ParetoPoint(plan, report.site_bytes[SiteId.CLIENT], 0, report.headroom(congress_spec), report)
        document = dump(ParetoPointSerializer, point)

        assert document['plan_id'] == plan.plan_id
        assert document['provenance'] == list(plan.provenance)
        assert set(document['latency_ms']) == {'chamber_dropdown', 'date_slider'}
