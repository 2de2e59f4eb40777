# core/tests/test_plans.py
from dataclasses import replace

import pytest

from core.exceptions import ConstraintViolation, DomainExplosion, OutOfDomain, UnboundChoice
from core.plans import (
    And, Between, Binding, ChoiceDecl, ChoiceNode, ChoicePlan, ChoiceRef, Compare, Filter, GroupByAgg, Interaction,
    Interval, Literal, Scan, View, bind, choice_dependencies, context_choices, count_bindings, enumerate_bindings,
    is_concrete, node_from_json, node_to_json, sample_bindings, validate_spec,
)
from core.tests.test_data import votes_plan, votes_spec


def single_view_spec(plan, *interactions):
    return replace(votes_spec(), views=(View('v', plan),), interactions=interactions)


class TestBind:
    def test_binding_produces_concrete_plan(self):
        bound = bind(votes_plan(), Binding({'chamber': 'house', 'start': 2001, 'end': 2020}))

        assert is_concrete(bound)
        assert isinstance(bound, GroupByAgg)
        assert bound.child.predicate == Between('date', Literal(2001), Literal(2020))
        assert bound.child.child.predicate == Compare('chamber', '=', Literal('house'))

    def test_equal_bindings_bind_equal_plans(self):
        one = bind(votes_plan(), Binding({'chamber': 'senate', 'start': 2005, 'end': 2006}))
        two = bind(votes_plan(), Binding({'end': 2006, 'chamber': 'senate', 'start': 2005}))
        assert one == two

    def test_missing_choice(self):
        with pytest.raises(UnboundChoice):
            bind(votes_plan(), Binding({'chamber': 'house', 'start': 2001}))

    def test_value_outside_domain(self):
        with pytest.raises(OutOfDomain):
            bind(votes_plan(), Binding({'chamber': 'attic', 'start': 2001, 'end': 2002}))

    def test_value_of_wrong_type_is_outside_domain(self):
        with pytest.raises(OutOfDomain):
            bind(votes_plan(), Binding({'chamber': 'house', 'start': 2001.5, 'end': 2002}))

    def test_range_constraint(self):
        with pytest.raises(ConstraintViolation):
            bind(votes_plan(), Binding({'chamber': 'house', 'start': 2010, 'end': 2002}))

    def test_subplan_choice_picks_alternative(self):
        alternatives = (Scan('a', 'votes'), Filter('f', Scan('b', 'votes'), Compare('vote', '=', Literal('yea'))))
        plan = ChoicePlan(ChoiceNode('pick', 'which', alternatives))

        assert bind(plan, Binding({'which': 1})) == alternatives[1]
        with pytest.raises(OutOfDomain):
            bind(plan, Binding({'which': 2}))


class TestEnumerateBindings:
    def test_interval_domain(self):
        plan = ChoicePlan(
            Filter('f', Scan('votes', 'votes'), Compare('date', '>=', ChoiceRef('year'))),
            choices=(ChoiceDecl('year', value_type='int64', interval=Interval(0, 9)),),
        )
        spec = single_view_spec(plan, Interaction('s', ('year',), 'continuous', 20.0, 'v'))
        assert len(list(enumerate_bindings(spec, spec.interactions[0]))) == 10

    def test_two_choices_cross_product(self):
        plan = ChoicePlan(
            Filter('f', Scan('votes', 'votes'), And((
                Compare('date', '=', ChoiceRef('a')), Compare('vote', '=', ChoiceRef('b')),
            ))),
            choices=(
                ChoiceDecl('a', value_type='int64', values=(1, 2, 3, 4)),
                ChoiceDecl('b', value_type='string', values=('v', 'w', 'x', 'y', 'z')),
            ),
        )
        spec = single_view_spec(plan, Interaction('i', ('a', 'b'), 'discrete', 100.0, 'v'))

        assert count_bindings(spec, spec.interactions[0]) == 20
        assert len(list(enumerate_bindings(spec, spec.interactions[0]))) == 20

    def test_range_constraint_prunes_slider(self):
        spec = votes_spec(1990, 2020)
        bindings = list(enumerate_bindings(spec, spec.interaction('date_slider')))

        assert len(bindings) == 496
        assert all(b['start'] <= b['end'] and b['chamber'] == 'house' for b in bindings)

    def test_varying_the_context_crosses_in_other_dropdowns(self):
        spec = votes_spec(1990, 2020)
        slider = spec.interaction('date_slider')
        bindings = list(enumerate_bindings(spec, slider, vary_context=True))

        assert context_choices(spec, slider) == ('chamber',)
        assert context_choices(spec, spec.interaction('chamber_dropdown')) == ()
        assert count_bindings(spec, slider, vary_context=True) == 2 * 31 * 31
        assert len(bindings) == 2 * 496
        assert [b['chamber'] for b in bindings[495:497]] == ['house', 'senate']

    def test_context_counts_against_the_cap(self):
        spec = votes_spec(1990, 2020)
        slider = spec.interaction('date_slider')
        assert len(list(enumerate_bindings(spec, slider, cap=1000))) == 496
        with pytest.raises(DomainExplosion):
            list(enumerate_bindings(spec, slider, cap=1000, vary_context=True))

    def test_cap_signals_sampling(self):
        spec = votes_spec(1990, 2020)
        with pytest.raises(DomainExplosion):
            list(enumerate_bindings(spec, spec.interaction('date_slider'), cap=100))

    def test_sampling_is_seeded(self):
        spec = votes_spec(1990, 2020)
        slider = spec.interaction('date_slider')
        first = sample_bindings(spec, slider, 100, seed=7)

        assert first == sample_bindings(spec, slider, 100, seed=7)
        assert len(first) == 100
        assert all(b['start'] <= b['end'] for b in first)


class TestChoiceDependencies:
    def test_paths_to_root(self):
        dependencies = choice_dependencies(votes_spec())

        assert dependencies['chamber'] == {'counts', 'by_date', 'by_chamber'}
        assert dependencies['start'] == {'counts', 'by_date'}
        assert dependencies['end'] == {'counts', 'by_date'}

    def test_no_choices(self):
        assert choice_dependencies(single_view_spec(ChoicePlan(Scan('votes', 'votes')))) == {}


class TestValidateSpec:
    def test_valid_spec(self):
        assert validate_spec(votes_spec()) == []

    def test_unbound_and_dangling_choices(self):
        spec = replace(votes_spec(), interactions=(
            Interaction('chamber_dropdown', ('chamber', 'ghost'), 'discrete', 500.0, 'member_votes'),
        ))
        found = {(d.code, d.subject) for d in validate_spec(spec)}

        assert ('DanglingChoice', 'ghost') in found
        assert ('UnboundChoice', 'start') in found
        assert ('UnboundChoice', 'end') in found

    def test_every_violation_is_reported(self):
        spec = votes_spec()
        broken = View('broken', ChoicePlan(Filter('f', Scan('s', 'votes'), Compare('party', '=', Literal('x')))))
        spec = replace(spec, views=spec.views + (broken,), interactions=(
            spec.interaction('chamber_dropdown'),
            Interaction('date_slider', ('start', 'end'), 'continuous', 0.0, 'member_votes'),
        ))
        codes = {d.code for d in validate_spec(spec)}

        assert {'UnknownColumn', 'NonPositiveLatency'} <= codes

    def test_literal_type_mismatch(self):
        plan = ChoicePlan(Filter('f', Scan('s', 'votes'), Compare('date', '=', Literal('2001'))))
        codes = {d.code for d in validate_spec(single_view_spec(plan))}
        assert 'LiteralTypeMismatch' in codes


class TestPlanJson:
    def test_ids_are_derived_from_paths(self):
        node = node_from_json({
            'op': 'filter',
            'predicate': {'column': 'date', 'between': [{'choice': 'start'}, {'literal': 2000}]},
            'input': {'op': 'scan', 'relation': 'votes'},
        })

        assert node.id == 'root'
        assert node.child.id == 'root.0'
        assert node_from_json(node_to_json(node)) == node

    def test_unknown_operator(self):
        with pytest.raises(ValueError):
            node_from_json({'op': 'window'})
