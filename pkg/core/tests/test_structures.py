# core/tests/test_structures.py
import itertools

import numpy as np
import pandas as pd
import pytest

from core.engine import evaluate
from core.exceptions import CapExceeded, StaleStructure, StructureUnsupported
from core.oracle import oracle_eval
from core.plans import (
    Aggregate, Between, Binding, ChoiceDecl, ChoicePlan, ChoiceRef, Compare, Filter, GroupByAgg, Interval, Scan, bind,
)
from core.relations import Relation, compute_stats, relations_match
from core.structures import (
    HEADER_BYTES, StructureFamily, StructureKind, _prefix, _range_sum, build, corrupt_structure, cube_axis_bytes,
    estimate, eval_structure, load_structure, match, save_structure, structure_size,
)
from core.tests.test_data import VOTES_SCHEMA, tiny_votes

RANGES = [(1990, 2020), (1990, 1990), (1995, 2003), (2008, 2008), (2011, 2019), (2020, 2020)]


def bindings():
    for chamber, (start, end) in itertools.product(('house', 'senate'), RANGES):
        yield Binding({'chamber': chamber, 'start': start, 'end': end})


def structure_answer(result, plan, db, binding):
    """Build over the bound build input, eval, then run the residual on top."""
    source = evaluate(bind(ChoicePlan(result.build_input, plan.choices, plan.constraints), binding), db,
                      canonical=False)
    structure = build(result.kind, source, binding.restrict(result.partition_choices))
    output = eval_structure(structure, binding)
    if result.residual is None:
        return output.canonical()
    residual = bind(ChoicePlan(result.residual, plan.choices, plan.constraints), binding)
    return evaluate(residual, db, inputs={result.placeholder_id: output})


@pytest.fixture
def view_plan(congress_spec):
    return congress_spec.view('member_votes').plan


GRID_SCHEMA = (('x', 'int64'), ('y', 'int64'), ('v', 'float64'))
GRID_MEASURES = (Aggregate('count', alias='n'), Aggregate('sum', 'v'), Aggregate('avg', 'v'))


def grid(seed=11, rows=10_000, width=50, height=20, null_share=0.1):
    """Seeded points on a width x height integer grid with a nullable float measure."""
    rng = np.random.default_rng(seed)
    frame = pd.DataFrame({
        'x': rng.integers(0, width, size=rows).astype(np.int64),
        'y': rng.integers(0, height, size=rows).astype(np.int64),
        'v': pd.array(np.round(rng.normal(5.0, 3.0, size=rows), 2), dtype='Float64'),
    })
    frame.loc[rng.random(rows) < null_share, 'v'] = pd.NA
    return Relation.from_frame('grid', GRID_SCHEMA, frame)


def grid_cube(group, ranged, measures=GRID_MEASURES):
    return StructureKind('PrefixSumCube', columns=(group, ranged), group_keys=(group,),
                         probe=(Between(ranged, ChoiceRef('lo'), ChoiceRef('hi')),), measures=measures)


def grid_plan(group, ranged, high, measures=GRID_MEASURES):
    scan = Scan('grid', 'grid')
    root = GroupByAgg('g', Filter('f', scan, Between(ranged, ChoiceRef('lo'), ChoiceRef('hi'))), (group,), measures)
    choices = tuple(ChoiceDecl(choice_id, value_type='int64', interval=Interval(0, high)) for choice_id in ('lo', 'hi'))
    return ChoicePlan(root, choices)


class TestMatch:
    @pytest.mark.parametrize('family, expected', [
        ('BaseScan', ['BaseScan@votes']),
        ('HashIndex', ['HashIndex(chamber)@by_date']),
        ('SortedRangeIndex', ['SortedRangeIndex(date)@by_date']),
        ('PrefixSumCube', ['PrefixSumCube(name,date)@counts']),
    ])
    def test_congress_matches(self, congress_spec, view_plan, family, expected):
        results = match(family, view_plan, congress_spec.catalog)
        assert [result.structure_id for result in results] == expected

    def test_cube_partitions_on_equality_choice(self, congress_spec, view_plan):
        (cube,) = match('PrefixSumCube', view_plan, congress_spec.catalog)

        assert cube.partition_choices == ('chamber',)
        assert cube.probe_choices == ('end', 'start')
        assert cube.residual is None

    def test_hash_index_leaves_range_in_residual(self, congress_spec, view_plan):
        (hashed,) = match('HashIndex', view_plan, congress_spec.catalog)
        assert hashed.probe_choices == ('chamber',)
        assert hashed.residual is not None

    def test_no_match(self, congress_spec):
        plan = ChoicePlan(Scan('votes', 'votes'))
        assert match('PrefixSumCube', plan, congress_spec.catalog) == []
        assert match('HashIndex', plan, congress_spec.catalog) == []


class TestStructuresMatchOracle:
    @pytest.mark.parametrize('family', [family.value for family in StructureFamily])
    def test_every_binding(self, congress_spec, congress_db, view_plan, family):
        (result,) = match(family, view_plan, congress_spec.catalog)
        for binding in bindings():
            expected = oracle_eval(bind(view_plan, binding), congress_db)
            actual = structure_answer(result, view_plan, congress_db, binding)
            assert relations_match(actual, expected), (family, binding)

    def test_cube_answers_sum_avg_min_max(self):
        db = {'votes': tiny_votes()}
        kind = StructureKind(
            'PrefixSumCube', columns=('chamber', 'date'), group_keys=('chamber',),
            measures=(Aggregate('sum', 'date'), Aggregate('avg', 'date'), Aggregate('min', 'date'),
                      Aggregate('max', 'date'), Aggregate('count', alias='n')),
        )
        structure = build(kind, tiny_votes())
        plan = GroupByAgg('g', Scan('votes', 'votes'), ('chamber',), kind.measures)
        # dan has a null date but still counts toward n
        expected = oracle_eval(plan, db)
        assert relations_match(eval_structure(structure, Binding()), expected)


class TestBuild:
    def test_stale_structure(self, congress_spec, congress_db, view_plan):
        (cube,) = match('PrefixSumCube', view_plan, congress_spec.catalog)
        house = Binding({'chamber': 'house', 'start': 1990, 'end': 2020})
        source = evaluate(bind(ChoicePlan(cube.build_input, view_plan.choices), house), congress_db, canonical=False)
        structure = build(cube.kind, source, house.restrict(cube.partition_choices))

        with pytest.raises(StaleStructure):
            eval_structure(structure, house.updated({'chamber': 'senate'}))

    def test_cell_cap(self):
        kind = StructureKind('PrefixSumCube', columns=('name', 'date'), group_keys=('name',),
                             measures=(Aggregate('count', alias='n'),))
        with pytest.raises(CapExceeded) as exc:
            build(kind, tiny_votes(), cell_cap=3)
        assert exc.value.cap == 3

    def test_null_group_key_is_unsupported(self):
        kind = StructureKind('PrefixSumCube', columns=('date',), group_keys=('date',),
                             measures=(Aggregate('count', alias='n'),))
        with pytest.raises(StructureUnsupported):
            build(kind, tiny_votes())

    def test_hash_probe_of_missing_key_is_empty(self):
        kind = StructureKind('HashIndex', columns=('name',), probe=(Compare('name', '=', ChoiceRef('who')),))
        structure = build(kind, tiny_votes())

        assert eval_structure(structure, Binding({'who': 'ann'})).row_count == 3
        assert eval_structure(structure, Binding({'who': 'zed'})).row_count == 0

    def test_save_and_load(self, tmp_path):
        kind = StructureKind('SortedRangeIndex', columns=('date',))
        structure = build(kind, tiny_votes(), Binding({'chamber': 'house'}))
        loaded = load_structure(save_structure(structure, tmp_path / 'index.pvds'))

        assert loaded.payload == structure.payload
        assert loaded.kind == kind
        assert loaded.baked == structure.baked

    def test_corrupt_structure_changes_answers(self):
        kind = StructureKind('PrefixSumCube', columns=('chamber',), group_keys=('chamber',),
                             measures=(Aggregate('count', alias='n'),))
        structure = build(kind, tiny_votes())
        broken = corrupt_structure(structure)

        assert broken.source_fingerprint == structure.source_fingerprint
        counts = eval_structure(structure, Binding()).values('n')
        assert eval_structure(broken, Binding()).values('n') == [2 * n for n in counts]


class TestEstimate:
    def test_cube_size_follows_distinct_counts(self, calibration):
        relation = Relation.from_rows('votes', VOTES_SCHEMA, [('a', 'house', year, 'yea') for year in range(2000, 2010)])
        stats = compute_stats(relation)
        kind = StructureKind('PrefixSumCube', columns=('name', 'date'), group_keys=('name',),
                             measures=(Aggregate('count', alias='n'),))

        build_ms, eval_ms, size = estimate(kind, stats, relation.row_count, calibration)
        assert size == structure_size(kind, stats, relation.row_count)
        assert build_ms > 0 and eval_ms > 0

    def test_cube_estimate_respects_cap(self):
        stats = compute_stats(tiny_votes())
        kind = StructureKind('PrefixSumCube', columns=('name', 'date'), group_keys=('name',),
                             measures=(Aggregate('count', alias='n'),))
        with pytest.raises(CapExceeded):
            structure_size(kind, stats, 7, cell_cap=10)

    def test_base_scan_costs_nothing_to_build(self, calibration):
        stats = compute_stats(tiny_votes())
        build_ms, eval_ms, _ = estimate(StructureKind('BaseScan'), stats, 7, calibration)
        assert build_ms == 0.0
        assert eval_ms == pytest.approx(7 * calibration.c_scan)

    def test_cube_size_counts_the_padding_slab(self):
        relation = grid(rows=500, width=7, height=4)
        stats = compute_stats(relation)
        for measures in (GRID_MEASURES, GRID_MEASURES + (Aggregate('min', 'v'), Aggregate('max', 'v'))):
            kind = grid_cube('x', 'y', measures)
            structure = build(kind, relation)
            stored = sum(array.nbytes for array in structure.decoded.arrays.values())

            assert structure.decoded.arrays['rows'].shape == (8, 5)
            assert structure_size(kind, stats, relation.row_count) == HEADER_BYTES + cube_axis_bytes(kind, stats) + stored


class TestCubeOverGrid:
    @pytest.mark.parametrize('group, ranged, high', [
        ('x', 'y', 19),
        pytest.param('y', 'x', 49, marks=pytest.mark.slow),
    ])
    def test_every_range_matches_the_oracle(self, group, ranged, high):
        relation = grid()
        db = {'grid': relation}
        plan = grid_plan(group, ranged, high)
        structure = build(grid_cube(group, ranged), relation)

        assert structure.decoded.arrays['rows'].shape == ((51, 21) if group == 'x' else (21, 51))
        checked = 0
        for lo in range(high + 1):
            for hi in range(lo, high + 1):
                binding = Binding({'lo': lo, 'hi': hi})
                expected = oracle_eval(bind(plan, binding), db)
                assert relations_match(eval_structure(structure, binding), expected), binding
                checked += 1
        assert checked == (high + 1) * (high + 2) // 2

    def test_building_twice_gives_identical_bytes(self):
        kind = grid_cube('x', 'y')
        assert build(kind, grid()).payload == build(kind, grid()).payload

    def test_adding_a_dimension_never_shrinks_the_cube(self):
        relation = grid(rows=2000)
        stats = compute_stats(relation)
        flat = StructureKind('PrefixSumCube', columns=('x',), group_keys=('x',), measures=GRID_MEASURES)
        wider = grid_cube('x', 'y')

        assert len(build(flat, relation).payload) < len(build(wider, relation).payload)
        assert structure_size(flat, stats, relation.row_count) < structure_size(wider, stats, relation.row_count)

    @pytest.mark.parametrize('seed', range(5))
    def test_prefix_corners_give_box_sums(self, seed):
        rng = np.random.default_rng(seed)
        cells = rng.integers(0, 9, size=(6, 4, 5)).astype(np.int64)
        prefix = _prefix(cells, cells.shape)
        for _ in range(25):
            bounds = []
            for size in cells.shape:
                lo, hi = sorted(rng.integers(0, size + 1, size=2).tolist())
                bounds.append((lo, hi))
            box = cells[tuple(slice(lo, hi) for lo, hi in bounds)]

            assert _range_sum(prefix, bounds, [False, False, False]).item() == box.sum()
            grouped = _range_sum(prefix, bounds, [True, False, False])
            np.testing.assert_array_equal(grouped.ravel(), box.sum(axis=(1, 2)))
