# core/relations.py
import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
import pandas as pd

from .exceptions import MissingStats, ParseError, SchemaMismatch, TypeMismatch, UnknownColumn

logger = logging.getLogger(__name__)


class ColumnType(str, Enum):
    INT64 = 'int64'
    FLOAT64 = 'float64'
    STRING = 'string'
    BOOL = 'bool'

    @property
    def numpy_dtype(self):
        return {
            ColumnType.INT64: np.dtype('int64'),
            ColumnType.FLOAT64: np.dtype('float64'),
            ColumnType.STRING: np.dtype(object),
            ColumnType.BOOL: np.dtype('bool'),
        }[self]

    @property
    def fill_value(self):
        return {
            ColumnType.INT64: 0,
            ColumnType.FLOAT64: 0.0,
            ColumnType.STRING: '',
            ColumnType.BOOL: False,
        }[self]

    @property
    def pandas_dtype(self):
        return {
            ColumnType.INT64: 'Int64',
            ColumnType.FLOAT64: 'Float64',
            ColumnType.STRING: 'string',
            ColumnType.BOOL: 'boolean',
        }[self]

    @property
    def is_numeric(self):
        return self in (ColumnType.INT64, ColumnType.FLOAT64)


@dataclass(frozen=True)
class Column:
    name: str
    type: ColumnType

    def __post_init__(self):
        object.__setattr__(self, 'type', ColumnType(self.type))


def parse_schema(pairs):
    """Accept [(name, type), ...] or [Column, ...] and return a schema tuple."""
    schema = []
    for item in pairs:
        if isinstance(item, Column):
            schema.append(item)
        elif isinstance(item, dict):
            schema.append(Column(item['name'], ColumnType(item['type'])))
        else:
            name, col_type = item
            schema.append(Column(name, ColumnType(col_type)))
    return tuple(schema)


def scalar_type(value):
    """Type tag of a Python scalar; None for null."""
    if value is None:
        return None
    if isinstance(value, (bool, np.bool_)):
        return ColumnType.BOOL
    if isinstance(value, (int, np.integer)):
        return ColumnType.INT64
    if isinstance(value, (float, np.floating)):
        return ColumnType.FLOAT64
    if isinstance(value, str):
        return ColumnType.STRING
    raise TypeMismatch(f"Unsupported scalar {value!r}")


def check_comparable(column_type, value, context=''):
    """Comparisons are defined only within one type; nulls compare to nothing."""
    value_type = scalar_type(value)
    if value_type is not None and value_type != column_type:
        raise TypeMismatch(
            f"Cannot compare {column_type.value} column with {value_type.value} value {value!r}"
            + (f" ({context})" if context else '')
        )


def sort_key(value):
    return (0,) if value is None else (1, value)


@dataclass(frozen=True)
class ColumnStats:
    distinct_count: int
    min: object
    max: object
    null_count: int
    width_bytes: float


@dataclass(frozen=True)
class TableStats:
    row_count: int
    columns: dict = field(default_factory=dict)

    def column(self, name):
        if name not in self.columns:
            raise MissingStats(f"No statistics for column '{name}'")
        return self.columns[name]

    @property
    def row_width(self):
        return sum(stats.width_bytes for stats in self.columns.values())


@dataclass(frozen=True, eq=False)
class Relation:
    name: str
    schema: tuple
    columns: tuple
    nulls: tuple

    def __post_init__(self):
        names = [column.name for column in self.schema]
        if len(set(names)) != len(names):
            raise SchemaMismatch(f"Duplicate column names in relation '{self.name}': {names}")
        if len(self.columns) != len(self.schema) or len(self.nulls) != len(self.schema):
            raise SchemaMismatch(f"Relation '{self.name}' has {len(self.columns)} arrays for {len(self.schema)} columns")
        lengths = {len(values) for values in self.columns} | {len(mask) for mask in self.nulls}
        if len(lengths) > 1:
            raise SchemaMismatch(f"Columns of relation '{self.name}' differ in length: {sorted(lengths)}")
        for array in (*self.columns, *self.nulls):
            array.flags.writeable = False

    # Construction

    @classmethod
    def from_rows(cls, name, schema, rows):
        schema = parse_schema(schema)
        rows = list(rows)
        columns, nulls = [], []
        for index, column in enumerate(schema):
            raw = [row[index] for row in rows]
            for value in raw:
                check_comparable(column.type, value, f"column '{column.name}'")
            mask = np.array([value is None for value in raw], dtype=bool)
            filled = [column.type.fill_value if value is None else value for value in raw]
            columns.append(np.array(filled, dtype=column.type.numpy_dtype))
            nulls.append(mask)
        return cls(name, schema, tuple(columns), tuple(nulls))

    @classmethod
    def from_frame(cls, name, schema, frame):
        schema = parse_schema(schema)
        columns, nulls = [], []
        for column in schema:
            series = frame[column.name]
            mask = series.isna().to_numpy(dtype=bool)
            if column.type is ColumnType.STRING:
                values = series.astype(object).where(~mask, '').to_numpy(dtype=object)
            else:
                values = series.to_numpy(dtype=column.type.numpy_dtype, na_value=column.type.fill_value)
            columns.append(np.array(values, dtype=column.type.numpy_dtype))
            nulls.append(np.array(mask, dtype=bool))
        return cls(name, schema, tuple(columns), tuple(nulls))

    @classmethod
    def empty(cls, name, schema):
        return cls.from_rows(name, schema, [])

    # Accessors

    @property
    def row_count(self):
        return len(self.columns[0]) if self.columns else 0

    @property
    def column_names(self):
        return [column.name for column in self.schema]

    def index_of(self, name):
        for index, column in enumerate(self.schema):
            if column.name == name:
                return index
        raise UnknownColumn(name, f"relation '{self.name}'")

    def column_type(self, name):
        return self.schema[self.index_of(name)].type

    def values(self, name):
        """Python values of one column, None for nulls."""
        index = self.index_of(name)
        mask = self.nulls[index]
        return [None if is_null else value for value, is_null in zip(self.columns[index].tolist(), mask.tolist())]

    def rows(self):
        lists = [self.values(column.name) for column in self.schema]
        return list(zip(*lists)) if lists else []

    @cached_property
    def frame(self):
        """pandas view with nullable dtypes; built once per relation."""
        data = {}
        for column, values, mask in zip(self.schema, self.columns, self.nulls):
            if column.type is ColumnType.INT64:
                data[column.name] = pd.arrays.IntegerArray(values.copy(), mask.copy())
            elif column.type is ColumnType.FLOAT64:
                data[column.name] = pd.arrays.FloatingArray(values.copy(), mask.copy())
            elif column.type is ColumnType.BOOL:
                data[column.name] = pd.arrays.BooleanArray(values.copy(), mask.copy())
            else:
                data[column.name] = pd.array(np.where(mask, None, values), dtype='string')
        return pd.DataFrame(data, index=pd.RangeIndex(self.row_count))

    def to_frame(self):
        return self.frame.copy()

    def renamed(self, name):
        return Relation(name, self.schema, self.columns, self.nulls)

    def canonical(self):
        """Rows sorted by the full row tuple, nulls first."""
        if self.row_count < 2 or not self.schema:
            return self
        ordered = self.frame.sort_values(
            by=self.column_names, na_position='first', kind='mergesort'
        ).reset_index(drop=True)
        return Relation.from_frame(self.name, self.schema, ordered)

    def digest(self):
        return hashlib.sha256(encode_relation(self.canonical(), include_name=False)).hexdigest()

    @property
    def size_bytes(self):
        return len(encode_relation(self))

    def __repr__(self):
        return f"Relation({self.name!r}, rows={self.row_count}, columns={self.column_names})"


def load_csv(path, schema, name=None):
    """Read a UTF-8 CSV with a header row, parsing every cell per the declared schema."""
    schema = parse_schema(schema)
    name = name or str(path).rsplit('/', 1)[-1].rsplit('.', 1)[0]
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_filter=False, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise SchemaMismatch(f"{path}: missing header row")

    declared = [column.name for column in schema]
    if list(frame.columns) != declared:
        raise SchemaMismatch(f"{path}: header {list(frame.columns)} does not match declared columns {declared}")

    columns, nulls = [], []
    for column in schema:
        raw = frame[column.name]
        mask = (raw == '').to_numpy(dtype=bool)
        columns.append(_parse_column(raw, mask, column))
        nulls.append(mask)

    relation = Relation(name, schema, tuple(columns), tuple(nulls))
    logger.debug(f"Loaded {relation.row_count} rows from {path}")
    return relation


def _parse_column(raw, mask, column):
    if column.type is ColumnType.INT64:
        stripped = raw.str.strip()
        ok = stripped.str.fullmatch(r'[+-]?\d+') | mask
        _raise_first_bad(raw, ok, column, 'non-numeric value for int64')
        parsed = stripped.where(~mask, '0').map(int)
        bounds = np.iinfo(np.int64)
        in_range = parsed.map(lambda value: bounds.min <= value <= bounds.max).astype(bool)
        _raise_first_bad(raw, in_range | mask, column, 'value overflows int64')
        return parsed.astype('int64').to_numpy()

    if column.type is ColumnType.FLOAT64:
        parsed = pd.to_numeric(raw.where(~mask, '0'), errors='coerce')
        ok = parsed.notna() | mask
        _raise_first_bad(raw, ok, column, 'non-numeric value for float64')
        return parsed.to_numpy(dtype='float64')

    if column.type is ColumnType.BOOL:
        lowered = raw.str.strip().str.lower()
        ok = lowered.isin(['true', 'false', '1', '0']) | mask
        _raise_first_bad(raw, ok, column, 'expected true/false/1/0')
        return lowered.isin(['true', '1']).to_numpy(dtype=bool)

    return raw.to_numpy(dtype=object)


def _raise_first_bad(raw, ok, column, reason):
    bad = ~ok.to_numpy(dtype=bool)
    if bad.any():
        position = int(np.argmax(bad))
        raise ParseError(position + 1, column.name, f"{reason}: {raw.iloc[position]!r}")


def compute_stats(relation):
    """Exact per-column statistics from a full scan."""
    stats = {}
    for column, values, mask in zip(relation.schema, relation.columns, relation.nulls):
        present = values[~mask]
        if len(present) == 0:
            stats[column.name] = ColumnStats(0, None, None, int(mask.sum()), _nominal_width(column.type))
            continue

        if column.type is ColumnType.STRING:
            as_list = present.tolist()
            low, high = min(as_list), max(as_list)
            width = float(np.mean([len(value.encode('utf-8')) for value in as_list])) + 8.0
        else:
            low, high = present.min().item(), present.max().item()
            width = _nominal_width(column.type)

        stats[column.name] = ColumnStats(
            distinct_count=len(pd.unique(present)),
            min=low,
            max=high,
            null_count=int(mask.sum()),
            width_bytes=width,
        )
    return stats


def compute_table_stats(relation):
    return TableStats(relation.row_count, compute_stats(relation))


def _nominal_width(column_type):
    return 1.0 if column_type is ColumnType.BOOL else 8.0


def relations_match(actual, expected, rel_tol=1e-9):
    """Compare two relations as canonical row sets; floats within rel_tol."""
    if [(c.name, c.type) for c in actual.schema] != [(c.name, c.type) for c in expected.schema]:
        return False
    if actual.row_count != expected.row_count:
        return False
    for left, right in zip(actual.canonical().rows(), expected.canonical().rows()):
        for a, b in zip(left, right):
            if isinstance(a, float) and isinstance(b, float):
                if not math.isclose(a, b, rel_tol=rel_tol, abs_tol=rel_tol):
                    return False
            elif a != b:
                return False
    return True


# Flat encoding: u32 header length, JSON header, then per column a u8 null
# mask followed by little-endian values (strings as i64 offsets + utf-8 blob).

def encode_relation(relation, include_name=True):
    header = json.dumps({
        'name': relation.name if include_name else '',
        'schema': [[column.name, column.type.value] for column in relation.schema],
        'row_count': relation.row_count,
    }, sort_keys=True).encode('utf-8')
    parts = [struct.pack('<I', len(header)), header]
    for column, values, mask in zip(relation.schema, relation.columns, relation.nulls):
        parts.append(mask.astype('u1').tobytes())
        if column.type is ColumnType.STRING:
            encoded = [value.encode('utf-8') for value in values.tolist()]
            offsets = np.cumsum([0] + [len(chunk) for chunk in encoded], dtype='<i8')
            parts.append(offsets.tobytes())
            parts.append(b''.join(encoded))
        elif column.type is ColumnType.BOOL:
            parts.append(values.astype('u1').tobytes())
        else:
            parts.append(values.astype('<' + values.dtype.str[1:]).tobytes())
    return b''.join(parts)


def decode_relation(payload, offset=0):
    """Inverse of encode_relation; returns (relation, end offset)."""
    (header_len,) = struct.unpack_from('<I', payload, offset)
    offset += 4
    header = json.loads(payload[offset:offset + header_len].decode('utf-8'))
    offset += header_len
    schema = parse_schema(header['schema'])
    rows = header['row_count']

    columns, nulls = [], []
    for column in schema:
        mask = np.frombuffer(payload, dtype='u1', count=rows, offset=offset).astype(bool)
        offset += rows
        if column.type is ColumnType.STRING:
            offsets = np.frombuffer(payload, dtype='<i8', count=rows + 1, offset=offset)
            offset += 8 * (rows + 1)
            blob = payload[offset:offset + int(offsets[-1])]
            offset += int(offsets[-1])
            values = np.array(
                [blob[offsets[i]:offsets[i + 1]].decode('utf-8') for i in range(rows)], dtype=object
            )
        elif column.type is ColumnType.BOOL:
            values = np.frombuffer(payload, dtype='u1', count=rows, offset=offset).astype(bool)
            offset += rows
        else:
            dtype = '<i8' if column.type is ColumnType.INT64 else '<f8'
            values = np.frombuffer(payload, dtype=dtype, count=rows, offset=offset).astype(column.type.numpy_dtype)
            offset += 8 * rows
        columns.append(values)
        nulls.append(mask)
    return Relation(header['name'], schema, tuple(columns), tuple(nulls)), offset
