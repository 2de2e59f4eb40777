# core/engine.py
"""Columnar evaluation of concrete plan fragments with pandas (used by the executor)."""
import logging

import numpy as np
import pandas as pd

from .exceptions import PVDError, SchemaMismatch, UnboundChoice
from .plans import (
    AggFunc, Between, ChoiceNode, CompareOp, Filter, GroupByAgg, Join, Literal, Placeholder,
    Project, Scan, conjuncts, output_schema,
)
from .relations import ColumnType, Relation, check_comparable

logger = logging.getLogger(__name__)


def evaluate(plan, db, inputs=None, canonical=True, name='result'):
    """Evaluate a choice-free fragment; Placeholder leaves read from inputs[id]."""
    inputs = inputs or {}
    catalog = {rel_name: relation.schema for rel_name, relation in db.items()}
    schema = output_schema(plan, catalog)
    frame = _frame(plan, db, inputs, catalog)
    relation = Relation.from_frame(name, schema, frame)
    return relation.canonical() if canonical else relation


def _frame(node, db, inputs, catalog):
    if isinstance(node, Scan):
        if node.relation not in db:
            raise SchemaMismatch(f"Unknown relation '{node.relation}'")
        return db[node.relation].frame

    if isinstance(node, Placeholder):
        if node.id not in inputs:
            raise PVDError(f"No input supplied for placeholder '{node.id}'")
        return inputs[node.id].frame

    if isinstance(node, Filter):
        frame = _frame(node.child, db, inputs, catalog)
        return frame[filter_mask(frame, node.predicate)]

    if isinstance(node, Project):
        return _frame(node.child, db, inputs, catalog)[list(node.columns)]

    if isinstance(node, GroupByAgg):
        return _group_by(node, _frame(node.child, db, inputs, catalog), catalog)

    if isinstance(node, Join):
        return _join(node, _frame(node.left, db, inputs, catalog), _frame(node.right, db, inputs, catalog))

    if isinstance(node, ChoiceNode):
        raise UnboundChoice(node.choice_id)

    raise PVDError(f"Unknown plan node {node!r}")


def filter_mask(frame, predicate):
    """Boolean numpy mask; nulls never satisfy a comparison."""
    mask = np.ones(len(frame), dtype=bool)
    for term in conjuncts(predicate):
        column = frame[term.column]
        if isinstance(term, Between):
            bounds = [(CompareOp.GE, term.low), (CompareOp.LE, term.high)]
        else:
            bounds = [(term.op, term.operand)]
        for op, operand in bounds:
            if not isinstance(operand, Literal):
                raise UnboundChoice(getattr(operand, 'choice_id', '?'))
            mask &= _compare(column, op, operand.value)
    return mask


def _compare(column, op, value):
    if value is None:
        return np.zeros(len(column), dtype=bool)
    check_comparable(_column_type(column), value, f"column '{column.name}'")
    if op is CompareOp.EQ:
        result = column == value
    elif op is CompareOp.NE:
        result = column != value
    elif op is CompareOp.LT:
        result = column < value
    elif op is CompareOp.LE:
        result = column <= value
    elif op is CompareOp.GT:
        result = column > value
    else:
        result = column >= value
    return result.fillna(False).to_numpy(dtype=bool)


def _column_type(series):
    dtype = series.dtype
    if pd.api.types.is_bool_dtype(dtype):
        return ColumnType.BOOL
    if pd.api.types.is_integer_dtype(dtype):
        return ColumnType.INT64
    if pd.api.types.is_float_dtype(dtype):
        return ColumnType.FLOAT64
    return ColumnType.STRING


def _group_by(node, frame, catalog):
    keys = list(node.keys)
    if len(frame) == 0:
        return Relation.empty(node.id, output_schema(node, catalog)).frame

    if not keys:
        row = {agg.alias: [_scalar_aggregate(agg, frame)] for agg in node.aggregates}
        return pd.DataFrame(row)

    grouped = frame.groupby(keys, dropna=False, sort=True)
    result = {}
    for agg in node.aggregates:
        if agg.func is AggFunc.COUNT and agg.column is None:
            result[agg.alias] = grouped.size()
        elif agg.func is AggFunc.COUNT:
            result[agg.alias] = grouped[agg.column].count()
        elif agg.func is AggFunc.SUM:
            result[agg.alias] = grouped[agg.column].sum(min_count=1)
        elif agg.func is AggFunc.MIN:
            result[agg.alias] = grouped[agg.column].min()
        elif agg.func is AggFunc.MAX:
            result[agg.alias] = grouped[agg.column].max()
        else:
            result[agg.alias] = grouped[agg.column].mean()
    return pd.DataFrame(result).reset_index()


def _scalar_aggregate(agg, frame):
    if agg.func is AggFunc.COUNT and agg.column is None:
        return len(frame)
    series = frame[agg.column]
    if agg.func is AggFunc.COUNT:
        return int(series.count())
    if series.count() == 0:
        return None
    if agg.func is AggFunc.SUM:
        return series.sum()
    if agg.func is AggFunc.MIN:
        return series.min()
    if agg.func is AggFunc.MAX:
        return series.max()
    return float(series.mean())


def _join(node, left, right):
    left_keys = [left_key for left_key, _ in node.keys]
    right_keys = [right_key for _, right_key in node.keys]
    left = left[left[left_keys].notna().all(axis=1).to_numpy(dtype=bool)]
    right = right[right[right_keys].notna().all(axis=1).to_numpy(dtype=bool)]

    renamed = right.rename(columns={name: f"__right__{name}" for name in right.columns})
    merged = left.merge(
        renamed,
        left_on=left_keys,
        right_on=[f"__right__{name}" for name in right_keys],
        how='inner',
        sort=False,
    )
    merged = merged.drop(columns=[f"__right__{name}" for name in right_keys])
    return merged.rename(columns={f"__right__{name}": name for name in right.columns})
