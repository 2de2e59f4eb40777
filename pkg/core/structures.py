# core/structures.py
"""
Data structures a physical plan can build, cache and evaluate.

Every structure is a (match, build, eval, estimate) quadruple:
match() finds subplans the structure can replace, build() turns a table
into an immutable payload, eval() answers the matched subplan for one
binding, and estimate() prices build, eval and size from statistics.
"""
import hashlib
import itertools
import json
import logging
import math
import struct
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np

from .exceptions import (
    CapExceeded, MissingStats, PVDError, StaleStructure, StructureUnsupported, UnboundChoice,
)
from .plans import (
    AggFunc, Between, Binding, ChoicePlan, ChoiceRef, Compare, CompareOp, Filter, GroupByAgg, Join, Literal,
    Placeholder, Project, Scan, aggregate_from_json, aggregate_to_json, children, conjoin, conjuncts,
    output_schema, predicate_choices, predicate_from_json, predicate_to_json, replace_node, walk,
)
from .relations import Column, ColumnType, Relation, check_comparable, decode_relation, encode_relation

logger = logging.getLogger(__name__)

MAGIC = b'PVDS'
FORMAT_VERSION = 1
HEADER = struct.Struct('<4sHHII16s')
HEADER_BYTES = HEADER.size  # 32


class StructureFamily(str, Enum):
    BASE_SCAN = 'BaseScan'
    HASH_INDEX = 'HashIndex'
    SORTED_RANGE_INDEX = 'SortedRangeIndex'
    PREFIX_SUM_CUBE = 'PrefixSumCube'

    @property
    def tag(self):
        return list(StructureFamily).index(self)


@dataclass(frozen=True)
class StructureKind:
    """
    family plus parameters: hash key columns, the sort column, or cube
    dimensions (group keys first). probe holds the predicate terms eval()
    answers from the binding.
    """
    family: StructureFamily
    columns: tuple = ()
    probe: tuple = ()
    group_keys: tuple = ()
    measures: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'family', StructureFamily(self.family))
        for name in ('columns', 'probe', 'group_keys', 'measures'):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def label(self):
        if self.family is StructureFamily.BASE_SCAN:
            return self.family.value
        return f"{self.family.value}({','.join(self.columns)})"

    @property
    def probe_choices(self):
        found = []
        for term in self.probe:
            for choice_id in sorted(predicate_choices(term)):
                if choice_id not in found:
                    found.append(choice_id)
        return tuple(found)

    def to_json(self):
        return {
            'family': self.family.value,
            'columns': list(self.columns),
            'probe': [predicate_to_json(term) for term in self.probe],
            'group_keys': list(self.group_keys),
            'measures': [aggregate_to_json(agg) for agg in self.measures],
        }

    @classmethod
    def from_json(cls, data):
        return cls(
            family=StructureFamily(data['family']),
            columns=tuple(data.get('columns', ())),
            probe=tuple(predicate_from_json(term) for term in data.get('probe', ())),
            group_keys=tuple(data.get('group_keys', ())),
            measures=tuple(aggregate_from_json(agg) for agg in data.get('measures', ())),
        )


@dataclass(frozen=True)
class MatchResult:
    matched_subplan: str
    kind: StructureKind
    residual: object
    build_input: object
    partition_choices: tuple = ()
    through_unbounded_join: bool = False

    @property
    def probe_choices(self):
        return self.kind.probe_choices

    @property
    def placeholder_id(self):
        return placeholder_id(self.matched_subplan)

    @property
    def structure_id(self):
        return f"{self.kind.label}@{self.matched_subplan}"


def placeholder_id(node_id):
    return f"{node_id}#eval"


@dataclass(frozen=True, eq=False)
class BuiltStructure:
    kind: StructureKind
    payload: bytes
    source_fingerprint: str
    baked: Binding = Binding()

    @property
    def size_bytes(self):
        return len(self.payload)

    @cached_property
    def decoded(self):
        return _decode(self.payload)

    def __repr__(self):
        return f"BuiltStructure({self.kind.label}, {self.size_bytes} bytes, baked={self.baked.as_dict()})"


# match()

def match(family, plan, catalog):
    """Every subplan of plan the family can replace; [] when nothing matches."""
    family = StructureFamily(family)
    root = plan.root if isinstance(plan, ChoicePlan) else plan
    parents = {child.id: node for node in walk(root) for child in children(node)}
    results = []
    for node in walk(root):
        if family is StructureFamily.BASE_SCAN:
            found = _match_base_scan(node, root, parents, catalog)
        elif family is StructureFamily.PREFIX_SUM_CUBE:
            found = _match_cube(node, root, catalog)
        else:
            found = _match_index(family, node, root, parents, catalog)
        results.extend(found)
    logger.debug(f"{family.value}: {len(results)} matches")
    return results


def is_base(node):
    """Choice-free Scan/Join/Project/literal Filter subtree."""
    if isinstance(node, Scan):
        return True
    if isinstance(node, Join):
        return is_base(node.left) and is_base(node.right)
    if isinstance(node, Filter):
        return not predicate_choices(node.predicate) and is_base(node.child)
    if isinstance(node, Project):
        return is_base(node.child)
    return False


def has_unbounded_join(node):
    return any(isinstance(n, Join) and not n.bounded for n in walk(node))


def _term_is_range(term):
    return isinstance(term, Between) or (isinstance(term, Compare) and term.op.is_range)


def _term_is_choice_equality(term):
    return isinstance(term, Compare) and term.op is CompareOp.EQ and isinstance(term.operand, ChoiceRef)


def _filter_chain(top):
    """Filters from top down to a base, or None when the chain does not end on one."""
    filters, node = [], top
    while isinstance(node, Filter) and not is_base(node):
        filters.append(node)
        node = node.child
    if not filters or not is_base(node):
        return None
    return filters, node


def _residual(root, matched_id, schema, rest_terms):
    placeholder = Placeholder(placeholder_id(matched_id), tuple(schema))
    local = placeholder
    if rest_terms:
        local = Filter(f"{matched_id}#residual", placeholder, conjoin(rest_terms))
    replaced = replace_node(root, matched_id, local)
    return None if isinstance(replaced, Placeholder) else replaced


def _with_terms(node_id, base, terms):
    predicate = conjoin(terms)
    return base if predicate is None else Filter(node_id, base, predicate)


def _match_base_scan(node, root, parents, catalog):
    if not is_base(node):
        return []
    parent = parents.get(node.id)
    if parent is not None and is_base(parent):
        return []
    kind = StructureKind(StructureFamily.BASE_SCAN)
    schema = output_schema(node, catalog)
    return [MatchResult(
        matched_subplan=node.id,
        kind=kind,
        residual=_residual(root, node.id, schema, []),
        build_input=node,
        through_unbounded_join=has_unbounded_join(node),
    )]


def _match_index(family, node, root, parents, catalog):
    if not isinstance(node, Filter):
        return []
    parent = parents.get(node.id)
    if isinstance(parent, Filter) and not is_base(parent):
        return []
    chain = _filter_chain(node)
    if chain is None:
        return []
    filters, base = chain
    terms = [term for f in filters for term in conjuncts(f.predicate)]
    literal = [term for term in terms if not predicate_choices(term)]
    chosen = [term for term in terms if predicate_choices(term)]
    schema = output_schema(base, catalog)
    build_input = _with_terms(f"{node.id}#input", base, literal)
    unbounded = has_unbounded_join(base)

    results = []
    if family is StructureFamily.HASH_INDEX:
        probe, rest, seen = [], [], set()
        for term in chosen:
            if _term_is_choice_equality(term) and term.column not in seen:
                probe.append(term)
                seen.add(term.column)
            else:
                rest.append(term)
        if probe:
            kind = StructureKind(family, columns=tuple(term.column for term in probe), probe=tuple(probe))
            results.append(MatchResult(
                node.id, kind, _residual(root, node.id, schema, rest), build_input,
                through_unbounded_join=unbounded,
            ))
        return results

    range_columns = []
    for term in chosen:
        if _term_is_range(term) and term.column not in range_columns:
            range_columns.append(term.column)
    for column in range_columns:
        probe = [term for term in chosen if _term_is_range(term) and term.column == column]
        rest = [term for term in chosen if term not in probe]
        kind = StructureKind(family, columns=(column,), probe=tuple(probe))
        results.append(MatchResult(
            node.id, kind, _residual(root, node.id, schema, rest), build_input,
            through_unbounded_join=unbounded,
        ))
    return results


def _match_cube(node, root, catalog):
    if not isinstance(node, GroupByAgg):
        return []
    if is_base(node.child):
        filters, base = [], node.child
    else:
        chain = _filter_chain(node.child)
        if chain is None:
            return []
        filters, base = chain

    terms = [term for f in filters for term in conjuncts(f.predicate)]
    baked, probe = [], []
    for term in terms:
        if not predicate_choices(term) or _term_is_choice_equality(term):
            baked.append(term)
        elif _term_is_range(term):
            probe.append(term)
        else:
            return []

    dimensions = list(node.keys)
    for term in probe:
        if term.column not in dimensions:
            dimensions.append(term.column)

    base_schema = output_schema(base, catalog)
    schema = output_schema(GroupByAgg(node.id, Placeholder('cube', base_schema), node.keys, node.aggregates), {})
    kind = StructureKind(
        StructureFamily.PREFIX_SUM_CUBE,
        columns=tuple(dimensions),
        probe=tuple(probe),
        group_keys=tuple(node.keys),
        measures=tuple(node.aggregates),
    )
    partitions = []
    for term in baked:
        for choice_id in sorted(predicate_choices(term)):
            if choice_id not in partitions:
                partitions.append(choice_id)
    return [MatchResult(
        matched_subplan=node.id,
        kind=kind,
        residual=_residual(root, node.id, schema, []),
        build_input=_with_terms(f"{node.id}#input", base, baked),
        partition_choices=tuple(partitions),
        through_unbounded_join=has_unbounded_join(base),
    )]


# build()

def fingerprint(kind, relation, baked=Binding()):
    digest = hashlib.sha256()
    digest.update(json.dumps(kind.to_json(), sort_keys=True).encode('utf-8'))
    digest.update(json.dumps([[k, v] for k, v in baked.items()]).encode('utf-8'))
    digest.update(encode_relation(relation, include_name=False))
    return digest.hexdigest()


def build(kind, relation, baked=Binding(), cell_cap=None):
    """Encode relation as a structure of the given kind; baked records the partition binding."""
    for name in _referenced_columns(kind):
        relation.index_of(name)

    source = fingerprint(kind, relation, baked)
    meta = {
        'kind': kind.to_json(),
        'baked': [[k, v] for k, v in baked.items()],
        'fingerprint': source,
    }
    if kind.family is StructureFamily.PREFIX_SUM_CUBE:
        if cell_cap is None:
            from django.conf import settings
            cell_cap = settings.PVD_CUBE_CELL_CAP
        ndims, arrays, body = _build_cube(kind, relation, cell_cap, meta)
    else:
        ndims, arrays, body = 0, 0, encode_relation(_prepare_table(kind, relation).renamed('structure'))

    payload = _encode(kind, source, ndims, arrays, meta, body)
    structure = BuiltStructure(kind, payload, source, baked)
    logger.debug(f"Built {kind.label} from {relation.row_count} rows: {structure.size_bytes} bytes")
    return structure


def _referenced_columns(kind):
    names = list(kind.columns) + [term.column for term in kind.probe]
    names += [agg.column for agg in kind.measures if agg.column is not None]
    return list(dict.fromkeys(names))


def _encode(kind, source, ndims, arrays, meta, body):
    meta_bytes = json.dumps(meta, sort_keys=True).encode('utf-8')
    header = HEADER.pack(MAGIC, FORMAT_VERSION, kind.family.tag, ndims, arrays, bytes.fromhex(source)[:16])
    return b''.join([header, struct.pack('<I', len(meta_bytes)), meta_bytes, body])


def _read_header(payload):
    if len(payload) < HEADER_BYTES + 4:
        raise PVDError('Structure payload is truncated')
    magic, version, tag, ndims, arrays, short_fp = HEADER.unpack_from(payload, 0)
    if magic != MAGIC or version != FORMAT_VERSION:
        raise PVDError(f"Not a structure payload (magic {magic!r}, version {version})")
    (meta_len,) = struct.unpack_from('<I', payload, HEADER_BYTES)
    start = HEADER_BYTES + 4
    meta = json.loads(payload[start:start + meta_len].decode('utf-8'))
    if bytes.fromhex(meta['fingerprint'])[:16] != short_fp:
        raise PVDError('Structure header and metadata fingerprints disagree')
    return meta, start + meta_len


def _prepare_table(kind, relation):
    """Rows laid out for probing: keyed or sorted, rows that can never match dropped."""
    if kind.family is StructureFamily.BASE_SCAN:
        return relation
    keep = np.ones(relation.row_count, dtype=bool)
    for name in kind.columns:
        keep &= ~relation.nulls[relation.index_of(name)]
    frame = relation.frame[keep]
    ordered = frame.sort_values(by=list(kind.columns), kind='mergesort').reset_index(drop=True)
    return Relation.from_frame(relation.name, relation.schema, ordered)


# Cube layout

def _cube_arrays(kind):
    """(array name, column, role) for every array the cube stores; row counts always first."""
    specs = [('rows', None, 'count')]
    for agg in kind.measures:
        if agg.column is None:
            continue
        wanted = [('nn', 'count')]
        if agg.func in (AggFunc.SUM, AggFunc.AVG):
            wanted.append(('sum', 'sum'))
        elif agg.func in (AggFunc.MIN, AggFunc.MAX):
            wanted.append((agg.func.value, agg.func.value))
        for prefix, role in wanted:
            spec = (f"{prefix}:{agg.column}", agg.column, role)
            if spec not in specs:
                specs.append(spec)
    return specs


def _build_cube(kind, relation, cell_cap, meta):
    types = {column.name: column.type for column in relation.schema}
    for agg in kind.measures:
        if agg.func in (AggFunc.MIN, AggFunc.MAX) and not types[agg.column].is_numeric:
            raise StructureUnsupported(f"Cube {agg.func.value} over {types[agg.column].value} column '{agg.column}'")

    # Rows null in a probed dimension never pass the range filter.
    keep = np.ones(relation.row_count, dtype=bool)
    for term in kind.probe:
        keep &= ~relation.nulls[relation.index_of(term.column)]
    for name in kind.group_keys:
        if (relation.nulls[relation.index_of(name)] & keep).any():
            raise StructureUnsupported(f"Cube dimension '{name}' contains nulls")

    dims = list(kind.columns)
    values = {name: relation.columns[relation.index_of(name)][keep] for name in dims}
    axes = [np.unique(values[name]) for name in dims]
    shape = tuple(len(axis) for axis in axes)
    cells = math.prod(shape)
    if cells > cell_cap:
        raise CapExceeded(cells, cell_cap)

    count = int(keep.sum())
    if count and dims:
        flat = np.ravel_multi_index([np.searchsorted(axis, values[name]) for axis, name in zip(axes, dims)], shape)
    else:
        flat = np.zeros(count, dtype=np.intp)

    stored, array_meta = [], []
    for name, column, role in _cube_arrays(kind):
        if column is None:
            cell_values = np.bincount(flat, minlength=cells).astype(np.int64)
        else:
            index = relation.index_of(column)
            present = ~relation.nulls[index][keep]
            column_values = relation.columns[index][keep][present]
            positions = flat[present]
            cell_values = _accumulate(role, types[column], positions, column_values, cells)
        cell_values = cell_values.reshape(shape)
        array = cell_values if role in ('min', 'max') else _prefix(cell_values, shape)
        stored.append(array)
        array_meta.append({'name': name, 'column': column, 'role': role, 'dtype': array.dtype.str[1:],
                           'shape': list(array.shape)})

    meta['axes'] = [axis.tolist() for axis in axes]
    meta['types'] = {name: types[name].value for name in _referenced_columns(kind)}
    meta['arrays'] = array_meta
    body = b''.join(np.ascontiguousarray(array).astype('<' + array.dtype.str[1:]).tobytes() for array in stored)
    return len(dims), len(stored), body


def _accumulate(role, column_type, positions, values, cells):
    if role == 'count':
        return np.bincount(positions, minlength=cells).astype(np.int64)
    if role == 'sum':
        if column_type is ColumnType.INT64:
            total = np.zeros(cells, dtype=np.int64)
            np.add.at(total, positions, values)
            return total
        return np.bincount(positions, weights=values, minlength=cells).astype(np.float64)
    dtype = column_type.numpy_dtype
    if column_type is ColumnType.INT64:
        sentinel = np.iinfo(np.int64).max if role == 'min' else np.iinfo(np.int64).min
    else:
        sentinel = np.inf if role == 'min' else -np.inf
    plain = np.full(cells, sentinel, dtype=dtype)
    (np.minimum if role == 'min' else np.maximum).at(plain, positions, values)
    return plain


def _prefix(cell_values, shape):
    """Inclusive prefix sums padded with a leading zero slab on every axis."""
    padded = np.zeros(tuple(n + 1 for n in shape), dtype=cell_values.dtype)
    padded[tuple(slice(1, None) for _ in shape)] = cell_values
    for axis in range(len(shape)):
        padded = np.cumsum(padded, axis=axis)
    return padded


# Decoding

@dataclass(frozen=True)
class TableView:
    relation: Relation
    directory: dict


@dataclass(frozen=True)
class CubeView:
    axes: tuple
    types: dict
    arrays: dict


def _decode(payload):
    meta, offset = _read_header(payload)
    kind = StructureKind.from_json(meta['kind'])
    if kind.family is not StructureFamily.PREFIX_SUM_CUBE:
        relation, _ = decode_relation(payload, offset)
        directory = _directory(relation, kind.columns) if kind.family is StructureFamily.HASH_INDEX else {}
        return TableView(relation, directory)

    types = {name: ColumnType(value) for name, value in meta['types'].items()}
    axes = tuple(
        np.array(axis, dtype=types[name].numpy_dtype) for name, axis in zip(kind.columns, meta['axes'])
    )
    arrays = {}
    for spec in meta['arrays']:
        dtype = np.dtype('<' + spec['dtype'])
        size = math.prod(spec['shape'])
        array = np.frombuffer(payload, dtype=dtype, count=size, offset=offset).reshape(spec['shape'])
        offset += size * dtype.itemsize
        arrays[spec['name']] = array
    return CubeView(axes, types, arrays)


def _directory(relation, key_columns):
    """key tuple -> (start, stop) over rows already sorted by key_columns."""
    if relation.row_count == 0:
        return {}
    change = np.zeros(relation.row_count, dtype=bool)
    change[0] = True
    for name in key_columns:
        values = relation.columns[relation.index_of(name)]
        change[1:] |= values[1:] != values[:-1]
    starts = np.flatnonzero(change).tolist()
    stops = starts[1:] + [relation.row_count]
    key_lists = [relation.columns[relation.index_of(name)].tolist() for name in key_columns]
    return {tuple(keys[start] for keys in key_lists): (start, stop) for start, stop in zip(starts, stops)}


# eval()

def eval_structure(structure, binding):
    """Output of the matched subplan under binding, answered from the structure alone."""
    for choice_id, value in structure.baked.items():
        if choice_id not in binding:
            raise UnboundChoice(choice_id)
        if binding[choice_id] != value:
            raise StaleStructure(
                f"{structure.kind.label} was built for {choice_id}={value!r}, binding has {binding[choice_id]!r}"
            )

    kind, view = structure.kind, structure.decoded
    if kind.family is StructureFamily.PREFIX_SUM_CUBE:
        return _eval_cube(kind, view, binding)
    relation = view.relation
    if kind.family is StructureFamily.BASE_SCAN:
        return relation.renamed('eval')
    if kind.family is StructureFamily.HASH_INDEX:
        start, stop = _probe_hash(kind, view, relation, binding)
    else:
        column = kind.columns[0]
        start, stop = _range_bounds(
            kind.probe, relation.columns[relation.index_of(column)], relation.column_type(column), binding,
        )
    return _slice(relation, start, stop)


def _operand_value(operand, binding):
    if isinstance(operand, ChoiceRef):
        if operand.choice_id not in binding:
            raise UnboundChoice(operand.choice_id)
        return binding[operand.choice_id]
    if isinstance(operand, Literal):
        return operand.value
    raise PVDError(f"Bad operand {operand!r}")


def _probe_hash(kind, view, relation, binding):
    key = []
    for term in kind.probe:
        value = _operand_value(term.operand, binding)
        if value is None:
            return 0, 0
        check_comparable(relation.column_type(term.column), value, f"column '{term.column}'")
        key.append(value)
    return view.directory.get(tuple(key), (0, 0))


def _range_bounds(terms, axis, column_type, binding):
    """Index interval [lo, hi) of the sorted axis values the range terms admit."""
    lo, hi = 0, len(axis)
    for term in terms:
        if isinstance(term, Between):
            bounds = [(CompareOp.GE, term.low), (CompareOp.LE, term.high)]
        else:
            bounds = [(term.op, term.operand)]
        for op, operand in bounds:
            value = _operand_value(operand, binding)
            if value is None:
                return 0, 0
            check_comparable(column_type, value, f"column '{term.column}'")
            if op is CompareOp.GE:
                lo = max(lo, int(np.searchsorted(axis, value, 'left')))
            elif op is CompareOp.GT:
                lo = max(lo, int(np.searchsorted(axis, value, 'right')))
            elif op is CompareOp.LE:
                hi = min(hi, int(np.searchsorted(axis, value, 'right')))
            else:
                hi = min(hi, int(np.searchsorted(axis, value, 'left')))
    return lo, max(lo, hi)


def _slice(relation, start, stop):
    return Relation(
        'eval', relation.schema,
        tuple(values[start:stop] for values in relation.columns),
        tuple(mask[start:stop] for mask in relation.nulls),
    )


def _eval_cube(kind, view, binding):
    dims = list(kind.columns)
    input_schema = tuple(Column(name, view.types[name]) for name in view.types)
    schema = output_schema(GroupByAgg('cube', Placeholder('cube', input_schema), kind.group_keys, kind.measures), {})
    grouped = [name in kind.group_keys for name in dims]

    bounds = []
    for name, axis in zip(dims, view.axes):
        terms = [term for term in kind.probe if term.column == name]
        lo, hi = _range_bounds(terms, axis, view.types[name], binding)
        if lo >= hi:
            return Relation.empty('eval', schema)
        bounds.append((lo, hi))

    group_shape = tuple(hi - lo for (lo, hi), g in zip(bounds, grouped) if g)
    rows = _range_sum(view.arrays['rows'], bounds, grouped).reshape(group_shape).ravel()
    present = rows > 0
    if not present.any():
        return Relation.empty('eval', schema)

    columns, nulls = [], []
    cell_index = np.indices(group_shape).reshape(len(group_shape), -1) if group_shape else None
    key_position = 0
    for name, axis, (lo, _), g in zip(dims, view.axes, bounds, grouped):
        if not g:
            continue
        columns.append(axis[lo + cell_index[key_position]][present])
        nulls.append(np.zeros(int(present.sum()), dtype=bool))
        key_position += 1

    for agg, column in zip(kind.measures, schema[len(kind.group_keys):]):
        values, missing = _measure(agg, view, bounds, grouped, group_shape, rows)
        columns.append(np.asarray(values, dtype=column.type.numpy_dtype)[present])
        nulls.append(missing[present])
    return Relation('eval', schema, tuple(columns), tuple(nulls))


def _range_sum(prefix, bounds, grouped):
    """Inclusion-exclusion over the 2^d corners; grouped axes keep one entry per value."""
    upper, lower = [], []
    for (lo, hi), g in zip(bounds, grouped):
        if g:
            upper.append(np.arange(lo + 1, hi + 1))
            lower.append(np.arange(lo, hi))
        else:
            upper.append(np.array([hi]))
            lower.append(np.array([lo]))
    total = None
    for corner in itertools.product((0, 1), repeat=len(bounds)):
        index = [lower[i] if bit else upper[i] for i, bit in enumerate(corner)]
        term = prefix[np.ix_(*index)] if index else prefix[()]
        term = -term if sum(corner) % 2 else term
        total = term if total is None else total + term
    return total


def _measure(agg, view, bounds, grouped, group_shape, rows):
    size = int(np.prod(group_shape)) if group_shape else 1
    if agg.column is None:
        return rows, np.zeros(size, dtype=bool)
    present = _range_sum(view.arrays[f"nn:{agg.column}"], bounds, grouped).reshape(group_shape).ravel()
    if agg.func is AggFunc.COUNT:
        return present, np.zeros(size, dtype=bool)
    missing = present == 0
    if agg.func in (AggFunc.SUM, AggFunc.AVG):
        total = _range_sum(view.arrays[f"sum:{agg.column}"], bounds, grouped).reshape(group_shape).ravel()
        if agg.func is AggFunc.SUM:
            return total, missing
        return total / np.where(missing, 1, present), missing
    plain = view.arrays[f"{agg.func.value}:{agg.column}"]
    block = plain[tuple(slice(lo, hi) for lo, hi in bounds)]
    ranged = tuple(axis for axis, g in enumerate(grouped) if not g)
    if ranged:
        block = (np.min if agg.func is AggFunc.MIN else np.max)(block, axis=ranged)
    return block.reshape(group_shape).ravel(), missing


# estimate()

def _stat(stats, name):
    columns = getattr(stats, 'columns', stats)
    if name not in columns:
        raise MissingStats(f"No statistics for column '{name}'")
    return columns[name]


def _row_width(stats):
    return sum(column.width_bytes for column in getattr(stats, 'columns', stats).values())


def structure_size(kind, stats, row_count, cell_cap=None):
    """Estimated payload bytes; raises when the structure cannot be built over these stats."""
    for name in _referenced_columns(kind):
        _stat(stats, name)
    if kind.family is StructureFamily.PREFIX_SUM_CUBE:
        return _cube_size(kind, stats, cell_cap)
    size = row_count * _row_width(stats)
    if kind.family is StructureFamily.HASH_INDEX:
        key_width = sum(_stat(stats, name).width_bytes for name in kind.columns)
        size += _hash_distinct(kind, stats, row_count) * (key_width + 16)
    return int(math.ceil(size))


def _hash_distinct(kind, stats, row_count):
    return min(row_count, math.prod(_stat(stats, name).distinct_count for name in kind.columns))


def _cube_cells(kind, stats):
    return math.prod(_stat(stats, name).distinct_count for name in kind.columns)


def _cube_size(kind, stats, cell_cap=None):
    if cell_cap is None:
        from django.conf import settings
        cell_cap = settings.PVD_CUBE_CELL_CAP
    for name in kind.group_keys:
        if _stat(stats, name).null_count:
            raise StructureUnsupported(f"Cube dimension '{name}' contains nulls")
    for agg in kind.measures:
        if agg.func in (AggFunc.MIN, AggFunc.MAX):
            column = _stat(stats, agg.column)
            if isinstance(column.min, (str, bool)):
                raise StructureUnsupported(f"Cube {agg.func.value} over non-numeric column '{agg.column}'")
    cells = _cube_cells(kind, stats)
    if cells > cell_cap:
        raise CapExceeded(cells, cell_cap)
    # prefix arrays carry a zero slab per axis, min/max arrays do not
    padded = math.prod(_stat(stats, name).distinct_count + 1 for name in kind.columns)
    stored = sum(cells if role in ('min', 'max') else padded for _, _, role in _cube_arrays(kind))
    size = HEADER_BYTES + cube_axis_bytes(kind, stats) + stored * 8
    return int(math.ceil(size))


def cube_axis_bytes(kind, stats):
    return sum(_stat(stats, name).distinct_count * _stat(stats, name).width_bytes for name in kind.columns)


def estimate(kind, stats, row_count, cal, selectivity=1.0, cell_cap=None):
    """(build_cost_ms, eval_cost_ms, size_bytes) from column statistics."""
    size = structure_size(kind, stats, row_count, cell_cap)

    if kind.family is StructureFamily.BASE_SCAN:
        return 0.0, row_count * cal.c_scan, size

    if kind.family is StructureFamily.HASH_INDEX:
        expected = row_count / max(_hash_distinct(kind, stats, row_count), 1)
        return row_count * cal.c_hash, expected * cal.c_probe, size

    if kind.family is StructureFamily.SORTED_RANGE_INDEX:
        depth = math.log2(row_count) if row_count > 1 else 1.0
        build_ms = row_count * depth * cal.c_sort if row_count else 0.0
        return build_ms, depth * cal.c_probe + selectivity * row_count * cal.c_scan, size

    cells = _cube_cells(kind, stats)
    groups = math.prod(_stat(stats, name).distinct_count for name in kind.group_keys)
    build_ms = (row_count + cells) * cal.c_cell
    eval_ms = groups * (2 ** len(kind.columns)) * cal.c_cell
    return build_ms, eval_ms, size


# Persistence and fault injection

def save_structure(structure, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(structure.payload)
    return path


def load_structure(path):
    payload = Path(path).read_bytes()
    meta, _ = _read_header(payload)
    baked = Binding({key: value for key, value in meta['baked']})
    return BuiltStructure(StructureKind.from_json(meta['kind']), payload, meta['fingerprint'], baked)


def corrupt_structure(structure):
    """Same header and fingerprint, wrong contents: cube arrays doubled or a table row dropped."""
    meta, offset = _read_header(structure.payload)
    kind = structure.kind
    if kind.family is StructureFamily.PREFIX_SUM_CUBE:
        view = structure.decoded
        body = b''.join(
            (view.arrays[spec['name']] * 2).astype('<' + spec['dtype']).tobytes() for spec in meta['arrays']
        )
        ndims, arrays = len(kind.columns), len(meta['arrays'])
    else:
        relation = structure.decoded.relation
        body = encode_relation(_slice(relation, 1, relation.row_count).renamed('structure'))
        ndims, arrays = 0, 0
    payload = _encode(kind, structure.source_fingerprint, ndims, arrays, meta, body)
    logger.warning(f"Corrupted {kind.label} payload for fault injection")
    return BuiltStructure(kind, payload, structure.source_fingerprint, structure.baked)
