# core/oracle.py
"""Naive row-at-a-time SPJA evaluation: the ground truth every physical plan must match."""
import logging
import operator

from .exceptions import PVDError, SchemaMismatch, UnboundChoice
from .plans import (
    AggFunc, Between, ChoiceNode, ChoiceRef, CompareOp, Filter, GroupByAgg, Join, Placeholder,
    Project, Scan, conjuncts, output_schema,
)
from .relations import Relation, check_comparable, sort_key

logger = logging.getLogger(__name__)

_OPERATORS = {
    CompareOp.EQ: operator.eq,
    CompareOp.NE: operator.ne,
    CompareOp.LT: operator.lt,
    CompareOp.LE: operator.le,
    CompareOp.GT: operator.gt,
    CompareOp.GE: operator.ge,
}


def oracle_eval(plan, db):
    """Evaluate a choice-free plan over db (name -> Relation); output in canonical order."""
    catalog = {name: relation.schema for name, relation in db.items()}
    _reject_choices(plan)
    output_schema(plan, catalog)
    schema, rows = _evaluate(plan, db)
    return Relation.from_rows('result', schema, rows).canonical()


def _reject_choices(node):
    if isinstance(node, ChoiceNode):
        raise UnboundChoice(node.choice_id)
    if isinstance(node, Filter):
        for term in conjuncts(node.predicate):
            for operand in _operands(term):
                if isinstance(operand, ChoiceRef):
                    raise UnboundChoice(operand.choice_id)
    for child in _children(node):
        _reject_choices(child)


def _children(node):
    if isinstance(node, (Filter, Project, GroupByAgg)):
        return [node.child]
    if isinstance(node, Join):
        return [node.left, node.right]
    return []


def _operands(term):
    return [term.low, term.high] if isinstance(term, Between) else [term.operand]


def _evaluate(node, db):
    """Returns (schema, rows) as a list of tuples."""
    if isinstance(node, Scan):
        if node.relation not in db:
            raise SchemaMismatch(f"Unknown relation '{node.relation}'")
        relation = db[node.relation]
        return relation.schema, relation.rows()

    if isinstance(node, Filter):
        schema, rows = _evaluate(node.child, db)
        tests = _compile_predicate(node.predicate, schema)
        return schema, [row for row in rows if all(test(row) for test in tests)]

    if isinstance(node, Project):
        schema, rows = _evaluate(node.child, db)
        names = [column.name for column in schema]
        indexes = [names.index(name) for name in node.columns]
        return tuple(schema[i] for i in indexes), [tuple(row[i] for i in indexes) for row in rows]

    if isinstance(node, GroupByAgg):
        return _group_by(node, *_evaluate(node.child, db))

    if isinstance(node, Join):
        return _join(node, _evaluate(node.left, db), _evaluate(node.right, db))

    if isinstance(node, Placeholder):
        raise PVDError('The oracle evaluates logical plans only, not residual fragments')

    raise UnboundChoice(getattr(node, 'choice_id', '?'))


def _compile_predicate(predicate, schema):
    names = [column.name for column in schema]
    types = [column.type for column in schema]
    tests = []
    for term in conjuncts(predicate):
        index = names.index(term.column)
        if isinstance(term, Between):
            bounds = [(CompareOp.GE, term.low.value), (CompareOp.LE, term.high.value)]
        else:
            bounds = [(term.op, term.operand.value)]
        for op, value in bounds:
            check_comparable(types[index], value, f"column '{term.column}'")
            tests.append(_comparison(index, _OPERATORS[op], value))
    return tests


def _comparison(index, compare, value):
    def test(row):
        cell = row[index]
        # Nulls never satisfy a predicate, whichever side they are on.
        return cell is not None and value is not None and compare(cell, value)
    return test


def _group_by(node, schema, rows):
    names = [column.name for column in schema]
    key_indexes = [names.index(key) for key in node.keys]
    agg_indexes = [None if agg.column is None else names.index(agg.column) for agg in node.aggregates]

    groups = {}
    for row in rows:
        key = tuple(row[i] for i in key_indexes)
        groups.setdefault(key, []).append(row)

    output = []
    for key in sorted(groups, key=lambda k: tuple(sort_key(v) for v in k)):
        members = groups[key]
        values = [_aggregate(agg, index, members) for agg, index in zip(node.aggregates, agg_indexes)]
        output.append(key + tuple(values))

    output_columns = output_schema(GroupByAgg(node.id, Placeholder('input', schema), node.keys, node.aggregates), {})
    return output_columns, output


def _aggregate(aggregate, index, rows):
    if aggregate.func is AggFunc.COUNT and index is None:
        return len(rows)
    present = [row[index] for row in rows if row[index] is not None]
    if aggregate.func is AggFunc.COUNT:
        return len(present)
    if not present:
        return None
    if aggregate.func is AggFunc.SUM:
        total = present[0]
        for value in present[1:]:
            total += value
        return total
    if aggregate.func is AggFunc.MIN:
        return min(present)
    if aggregate.func is AggFunc.MAX:
        return max(present)
    # avg is carried as (sum, count) and finalized here
    return float(sum(present)) / len(present)


def _join(node, left, right):
    left_schema, left_rows = left
    right_schema, right_rows = right
    left_names = [column.name for column in left_schema]
    right_names = [column.name for column in right_schema]
    left_keys = [left_names.index(l) for l, _ in node.keys]
    right_keys = [right_names.index(r) for _, r in node.keys]
    kept = [i for i, name in enumerate(right_names) if i not in right_keys]

    output = []
    for left_row in left_rows:
        probe = [left_row[i] for i in left_keys]
        if any(value is None for value in probe):
            continue
        for right_row in right_rows:
            if all(right_row[j] == value for j, value in zip(right_keys, probe)):
                output.append(left_row + tuple(right_row[i] for i in kept))
    schema = tuple(left_schema) + tuple(right_schema[i] for i in kept)
    return schema, output
