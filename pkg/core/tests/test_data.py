from core.plans import (
    Aggregate, Between, ChoiceDecl, ChoicePlan, ChoiceRef, Compare, Filter, GroupByAgg, Interaction,
    InterfaceSpec, Interval, Literal, RangeConstraint, Scan, Source, View,
)
from core.relations import Relation

VOTES_SCHEMA = (('name', 'string'), ('chamber', 'string'), ('date', 'int64'), ('vote', 'string'))


def database_of(dataset, spec):
    """Relations for a generated dataset without going through CSV."""
    return {
        source.name: Relation.from_frame(source.name, source.schema, dataset.tables[source.name])
        for source in spec.sources
    }


def tiny_votes():
    return Relation.from_rows('votes', VOTES_SCHEMA, [
        ('ann', 'house', 2001, 'yea'),
        ('ann', 'house', 2003, 'nay'),
        ('ann', 'house', 2010, 'yea'),
        ('bob', 'house', 2001, 'yea'),
        ('cat', 'senate', 2002, 'nay'),
        ('cat', 'senate', 2019, 'yea'),
        ('dan', 'senate', None, 'yea'),
    ])


def votes_plan(first=2000, last=2020):
    """Votes per member for one chamber and an inclusive date range."""
    root = GroupByAgg(
        'counts',
        Filter('by_date', Filter('by_chamber', Scan('votes', 'votes'), Compare('chamber', '=', ChoiceRef('chamber'))),
               Between('date', ChoiceRef('start'), ChoiceRef('end'))),
        ('name',),
        (Aggregate('count', alias='vote_count'),),
    )
    return ChoicePlan(
        root,
        choices=(
            ChoiceDecl('chamber', value_type='string', values=('house', 'senate')),
            ChoiceDecl('start', value_type='int64', interval=Interval(first, last)),
            ChoiceDecl('end', value_type='int64', interval=Interval(first, last), default=last),
        ),
        constraints=(RangeConstraint('start', 'end'),),
    )


def votes_spec(first=2000, last=2020):
    return InterfaceSpec(
        sources=(Source('votes', 'votes.csv', tuple(Relation.empty('votes', VOTES_SCHEMA).schema)),),
        views=(View('member_votes', votes_plan(first, last)),),
        interactions=(
            Interaction('chamber_dropdown', ('chamber',), 'discrete', 500.0, 'member_votes'),
            Interaction('date_slider', ('start', 'end'), 'continuous', 20.0, 'member_votes'),
        ),
    )


def literal_filter(column, op, value, child=None):
    return Filter(f"{column}_{op}", child or Scan('votes', 'votes'), Compare(column, op, Literal(value)))


def find_plan(candidates, *fragments, exclude=()):
    """First candidate whose provenance mentions every fragment and none of exclude."""
    for plan in candidates:
        text = ' '.join(plan.provenance)
        if all(fragment in text for fragment in fragments) and not any(word in text for word in exclude):
            return plan
    raise AssertionError(f"No candidate with {fragments} (excluding {exclude})")


def baseline_plan(candidates):
    return find_plan(candidates, 'baseline@cloud')


def server_cube_plan(candidates):
    return find_plan(candidates, 'PrefixSumCube', 'build@server:eval@server', exclude=('replicate',))


def client_cube_plan(candidates):
    return find_plan(candidates, 'PrefixSumCube', 'eval@client', 'replicate[chamber]')
