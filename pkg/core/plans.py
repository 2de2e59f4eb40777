# core/plans.py
"""Interface model: logical plans whose literals and subplans may be choices."""
import itertools
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .exceptions import (
    ConstraintViolation, DomainExplosion, OutOfDomain, PVDError, SchemaMismatch, UnboundChoice,
)
from .relations import Column, ColumnType, parse_schema, scalar_type

logger = logging.getLogger(__name__)


# Predicates

class CompareOp(str, Enum):
    EQ = '='
    NE = '!='
    LT = '<'
    LE = '<='
    GT = '>'
    GE = '>='

    @property
    def is_range(self):
        return self in (CompareOp.LT, CompareOp.LE, CompareOp.GT, CompareOp.GE)


@dataclass(frozen=True)
class Literal:
    value: object


@dataclass(frozen=True)
class ChoiceRef:
    choice_id: str


@dataclass(frozen=True)
class Compare:
    column: str
    op: CompareOp
    operand: object

    def __post_init__(self):
        object.__setattr__(self, 'op', CompareOp(self.op))


@dataclass(frozen=True)
class Between:
    """Inclusive range low <= column <= high."""
    column: str
    low: object
    high: object


@dataclass(frozen=True)
class And:
    terms: tuple


def conjuncts(predicate):
    if isinstance(predicate, And):
        result = []
        for term in predicate.terms:
            result.extend(conjuncts(term))
        return result
    return [predicate]


def conjoin(terms):
    terms = list(terms)
    if not terms:
        return None
    return terms[0] if len(terms) == 1 else And(tuple(terms))


def operands(term):
    if isinstance(term, Compare):
        return [term.operand]
    if isinstance(term, Between):
        return [term.low, term.high]
    return [operand for inner in conjuncts(term) for operand in operands(inner)]


def predicate_choices(predicate):
    return {
        operand.choice_id
        for term in conjuncts(predicate)
        for operand in operands(term)
        if isinstance(operand, ChoiceRef)
    }


def predicate_columns(predicate):
    return {term.column for term in conjuncts(predicate)}


# Plan nodes

@dataclass(frozen=True)
class Scan:
    id: str
    relation: str


@dataclass(frozen=True)
class Filter:
    id: str
    child: object
    predicate: object


@dataclass(frozen=True)
class Project:
    id: str
    child: object
    columns: tuple


class AggFunc(str, Enum):
    COUNT = 'count'
    SUM = 'sum'
    MIN = 'min'
    MAX = 'max'
    AVG = 'avg'


@dataclass(frozen=True)
class Aggregate:
    func: AggFunc
    column: str = None
    alias: str = None

    def __post_init__(self):
        object.__setattr__(self, 'func', AggFunc(self.func))
        if self.alias is None:
            object.__setattr__(self, 'alias', f"{self.func.value}_{self.column or 'all'}")


@dataclass(frozen=True)
class GroupByAgg:
    id: str
    child: object
    keys: tuple
    aggregates: tuple


@dataclass(frozen=True)
class Join:
    """Inner equi-join; max_fanout None marks the join unbounded."""
    id: str
    left: object
    right: object
    keys: tuple
    max_fanout: int = None

    @property
    def bounded(self):
        return self.max_fanout is not None


@dataclass(frozen=True)
class ChoiceNode:
    id: str
    choice_id: str
    alternatives: tuple


@dataclass(frozen=True)
class Placeholder:
    """Stands for a data structure's eval() output inside a residual fragment."""
    id: str
    schema: tuple


def children(node):
    if isinstance(node, (Filter, Project, GroupByAgg)):
        return (node.child,)
    if isinstance(node, Join):
        return (node.left, node.right)
    if isinstance(node, ChoiceNode):
        return tuple(node.alternatives)
    return ()


def with_children(node, new_children):
    if isinstance(node, (Filter, Project, GroupByAgg)):
        return replace(node, child=new_children[0])
    if isinstance(node, Join):
        return replace(node, left=new_children[0], right=new_children[1])
    if isinstance(node, ChoiceNode):
        return replace(node, alternatives=tuple(new_children))
    return node


def walk(node):
    yield node
    for child in children(node):
        yield from walk(child)


def find_node(root, node_id):
    for node in walk(root):
        if node.id == node_id:
            return node
    return None


def replace_node(root, node_id, replacement):
    if root.id == node_id:
        return replacement
    kids = children(root)
    if not kids:
        return root
    return with_children(root, [replace_node(child, node_id, replacement) for child in kids])


def node_count(root):
    return sum(1 for _ in walk(root))


def is_concrete(root):
    for node in walk(root):
        if isinstance(node, ChoiceNode):
            return False
        if isinstance(node, Filter) and predicate_choices(node.predicate):
            return False
    return True


# Choices

@dataclass(frozen=True)
class Interval:
    low: object
    high: object
    step: object = 1

    def values(self):
        if self.step <= 0 or self.high < self.low:
            return ()
        count = int(math.floor((self.high - self.low) / self.step + 1e-9)) + 1
        if isinstance(self.low, int) and isinstance(self.step, int):
            return tuple(self.low + i * self.step for i in range(count))
        return tuple(float(self.low + i * self.step) for i in range(count))


@dataclass(frozen=True)
class ChoiceDecl:
    choice_id: str
    kind: str = 'literal'
    value_type: ColumnType = None
    values: tuple = None
    interval: Interval = None
    default: object = None

    def __post_init__(self):
        if self.value_type is not None:
            object.__setattr__(self, 'value_type', ColumnType(self.value_type))
        if self.values is not None:
            object.__setattr__(self, 'values', tuple(self.values))

    def domain(self):
        if self.values is not None:
            return self.values
        if self.interval is not None:
            return self.interval.values()
        return ()

    @property
    def is_enumerated(self):
        """Explicit value lists (and subplan alternatives) can be replicated per value."""
        return self.values is not None

    @property
    def default_value(self):
        if self.default is not None:
            return self.default
        domain = self.domain()
        return domain[0] if domain else None

    def contains(self, value):
        if self.kind == 'subplan':
            return isinstance(value, int) and not isinstance(value, bool) and 0 <= value < len(self.values)
        if value is None or scalar_type(value) != self.value_type:
            return False
        if self.values is not None:
            return value in self.values
        interval = self.interval
        if value < interval.low or value > interval.high:
            return False
        offset = (value - interval.low) / interval.step
        return abs(offset - round(offset)) < 1e-9


@dataclass(frozen=True)
class RangeConstraint:
    lower: str
    upper: str


@dataclass(frozen=True)
class ChoicePlan:
    root: object
    choices: tuple = ()
    constraints: tuple = ()

    @property
    def choice_decls(self):
        """Declared literal choices plus the subplan choices found in the tree."""
        decls = {decl.choice_id: decl for decl in self.choices}
        for node in walk(self.root):
            if isinstance(node, ChoiceNode) and node.choice_id not in decls:
                decls[node.choice_id] = ChoiceDecl(
                    node.choice_id, kind='subplan', values=tuple(range(len(node.alternatives)))
                )
        return decls

    def referenced_choices(self):
        found = set()
        for node in walk(self.root):
            if isinstance(node, Filter):
                found |= predicate_choices(node.predicate)
            elif isinstance(node, ChoiceNode):
                found.add(node.choice_id)
        return found


@dataclass(frozen=True)
class View:
    name: str
    plan: ChoicePlan


@dataclass(frozen=True)
class Source:
    name: str
    path: str
    schema: tuple


class InteractionKind(str, Enum):
    CONTINUOUS = 'continuous'
    DISCRETE = 'discrete'


@dataclass(frozen=True)
class Interaction:
    name: str
    bound_choices: tuple
    kind: InteractionKind
    latency_bound_ms: float
    view: str

    def __post_init__(self):
        object.__setattr__(self, 'kind', InteractionKind(self.kind))
        object.__setattr__(self, 'bound_choices', tuple(self.bound_choices))


@dataclass(frozen=True)
class InterfaceSpec:
    sources: tuple = ()
    views: tuple = ()
    interactions: tuple = ()
    spec_version: int = 1

    def view(self, name):
        for view in self.views:
            if view.name == name:
                return view
        raise KeyError(name)

    def interaction(self, name):
        for interaction in self.interactions:
            if interaction.name == name:
                return interaction
        raise KeyError(name)

    def source(self, name):
        for source in self.sources:
            if source.name == name:
                return source
        raise KeyError(name)

    @property
    def catalog(self):
        return {source.name: source.schema for source in self.sources}

    def choice_decls(self):
        decls = {}
        for view in self.views:
            decls.update(view.plan.choice_decls)
        return decls

    def view_of_choice(self, choice_id):
        for view in self.views:
            if choice_id in view.plan.choice_decls:
                return view
        raise KeyError(choice_id)

    def with_bounds(self, factor):
        """Copy with every latency bound multiplied by factor."""
        return replace(self, interactions=tuple(
            replace(interaction, latency_bound_ms=interaction.latency_bound_ms * factor)
            for interaction in self.interactions
        ))


class Binding(Mapping):
    """Immutable, hashable map choice_id -> value (or subplan index)."""

    __slots__ = ('_values', '_items')

    def __init__(self, values=None):
        self._values = dict(values or {})
        self._items = tuple(sorted(self._values.items()))

    def __getitem__(self, key):
        return self._values[key]

    def __iter__(self):
        return iter(key for key, _ in self._items)

    def __len__(self):
        return len(self._items)

    def __hash__(self):
        return hash(self._items)

    def __eq__(self, other):
        if isinstance(other, Binding):
            return self._items == other._items
        return Mapping.__eq__(self, other)

    def __repr__(self):
        return f"Binding({dict(self._items)!r})"

    def restrict(self, choice_ids):
        return Binding({key: value for key, value in self._items if key in choice_ids})

    def updated(self, other):
        merged = dict(self._values)
        merged.update(dict(other))
        return Binding(merged)

    def key(self, choice_ids):
        """Tuple of values for an ordered list of choices (cache keys)."""
        return tuple(self._values[choice_id] for choice_id in choice_ids)

    def as_dict(self):
        return dict(self._items)


# Binding

def _bind_operand(operand, decls, binding):
    if not isinstance(operand, ChoiceRef):
        return operand
    choice_id = operand.choice_id
    if choice_id not in binding:
        raise UnboundChoice(choice_id)
    value = binding[choice_id]
    decl = decls.get(choice_id)
    if decl is None or not decl.contains(value):
        raise OutOfDomain(choice_id, value)
    return Literal(value)


def _bind_predicate(predicate, decls, binding):
    if isinstance(predicate, And):
        return And(tuple(_bind_predicate(term, decls, binding) for term in predicate.terms))
    if isinstance(predicate, Between):
        return Between(
            predicate.column,
            _bind_operand(predicate.low, decls, binding),
            _bind_operand(predicate.high, decls, binding),
        )
    return Compare(predicate.column, predicate.op, _bind_operand(predicate.operand, decls, binding))


def check_constraints(plan, binding):
    for constraint in plan.constraints:
        if constraint.lower in binding and constraint.upper in binding:
            lower, upper = binding[constraint.lower], binding[constraint.upper]
            if lower > upper:
                raise ConstraintViolation(constraint.lower, constraint.upper, lower, upper)


def bind(plan, binding):
    """Substitute every choice reachable under the binding; returns a choice-free plan."""
    decls = plan.choice_decls
    check_constraints(plan, binding)

    def substitute(node):
        if isinstance(node, ChoiceNode):
            if node.choice_id not in binding:
                raise UnboundChoice(node.choice_id)
            index = binding[node.choice_id]
            if not decls[node.choice_id].contains(index):
                raise OutOfDomain(node.choice_id, index)
            return substitute(node.alternatives[index])
        if isinstance(node, Filter):
            return Filter(node.id, substitute(node.child), _bind_predicate(node.predicate, decls, binding))
        kids = children(node)
        if not kids:
            return node
        return with_children(node, [substitute(child) for child in kids])

    return substitute(plan.root)


def default_binding(spec):
    return Binding({choice_id: decl.default_value for choice_id, decl in spec.choice_decls().items()})


def satisfies_constraints(spec, binding):
    for view in spec.views:
        for constraint in view.plan.constraints:
            if constraint.lower in binding and constraint.upper in binding:
                if binding[constraint.lower] > binding[constraint.upper]:
                    return False
    return True


def context_choices(spec, interaction):
    """Enumerated choices of the interaction's view that the interaction itself does not bind."""
    decls = spec.view(interaction.view).plan.choice_decls
    return tuple(
        choice_id for choice_id, decl in decls.items()
        if decl.is_enumerated and choice_id not in interaction.bound_choices
    )


def _varied_choices(spec, interaction, vary_context):
    context = context_choices(spec, interaction) if vary_context else ()
    return context + tuple(interaction.bound_choices)


def count_bindings(spec, interaction, vary_context=False):
    decls = spec.choice_decls()
    return math.prod(len(decls[choice_id].domain()) for choice_id in _varied_choices(spec, interaction, vary_context))


def enumerate_bindings(spec, interaction, cap=None, vary_context=False):
    """Cross product of the interaction's domains, other choices held at their defaults.

    With vary_context the view's other enumerated choices (dropdown values,
    subplan alternatives) are crossed in as well, outermost first.
    """
    if cap is None:
        from django.conf import settings
        cap = settings.PVD_BINDING_CAP
    total = count_bindings(spec, interaction, vary_context)
    if total > cap:
        raise DomainExplosion(total, cap)

    decls = spec.choice_decls()
    base = default_binding(spec)
    varied = _varied_choices(spec, interaction, vary_context)
    domains = [decls[choice_id].domain() for choice_id in varied]
    for values in itertools.product(*domains):
        binding = base.updated(zip(varied, values))
        if satisfies_constraints(spec, binding):
            yield binding


def sample_bindings(spec, interaction, count, seed, vary_context=False):
    """Seeded uniform draws (with replacement) that respect range constraints."""
    decls = spec.choice_decls()
    base = default_binding(spec)
    varied = _varied_choices(spec, interaction, vary_context)
    domains = [decls[choice_id].domain() for choice_id in varied]
    rng = np.random.default_rng(seed)
    drawn, attempts = [], 0
    while len(drawn) < count and attempts < count * 100:
        attempts += 1
        values = [domain[int(rng.integers(len(domain)))] for domain in domains]
        binding = base.updated(zip(varied, values))
        if satisfies_constraints(spec, binding):
            drawn.append(binding)
    return drawn


def choice_dependencies(spec):
    """choice_id -> ids of every node at or above the node that references it."""
    dependencies = {}

    def visit(node, ancestors):
        path = ancestors + [node.id]
        referenced = set()
        if isinstance(node, Filter):
            referenced = predicate_choices(node.predicate)
        elif isinstance(node, ChoiceNode):
            referenced = {node.choice_id}
        for choice_id in referenced:
            dependencies.setdefault(choice_id, set()).update(path)
        for child in children(node):
            visit(child, path)

    for view in spec.views:
        visit(view.plan.root, [])
    return dependencies


# Schema inference and validation

@dataclass(frozen=True)
class Diagnostic:
    code: str
    subject: str
    message: str = ''

    def __str__(self):
        return f"{self.code}({self.subject}): {self.message}" if self.message else f"{self.code}({self.subject})"


def _agg_output_type(aggregate, column_type):
    if aggregate.func is AggFunc.COUNT:
        return ColumnType.INT64
    if aggregate.func is AggFunc.AVG:
        return ColumnType.FLOAT64 if column_type.is_numeric else None
    if aggregate.func is AggFunc.SUM:
        return column_type if column_type.is_numeric else None
    return column_type if column_type is not ColumnType.BOOL else None


def infer_schema(node, catalog, decls=None, diagnostics=None):
    """Output schema of a node; problems are appended to diagnostics (None on failure)."""
    decls = decls or {}
    diagnostics = diagnostics if diagnostics is not None else []

    if isinstance(node, Scan):
        if node.relation not in catalog:
            diagnostics.append(Diagnostic('UnknownRelation', node.relation, f"scanned by node '{node.id}'"))
            return None
        return tuple(catalog[node.relation])

    if isinstance(node, Placeholder):
        return tuple(node.schema)

    if isinstance(node, Filter):
        schema = infer_schema(node.child, catalog, decls, diagnostics)
        if schema is None:
            return None
        types = {column.name: column.type for column in schema}
        for term in conjuncts(node.predicate):
            if term.column not in types:
                diagnostics.append(Diagnostic('UnknownColumn', term.column, f"in filter '{node.id}'"))
                continue
            for operand in operands(term):
                _check_operand(operand, types[term.column], term.column, decls, diagnostics)
        return schema

    if isinstance(node, Project):
        schema = infer_schema(node.child, catalog, decls, diagnostics)
        if schema is None:
            return None
        by_name = {column.name: column for column in schema}
        missing = [name for name in node.columns if name not in by_name]
        for name in missing:
            diagnostics.append(Diagnostic('UnknownColumn', name, f"in projection '{node.id}'"))
        return None if missing else tuple(by_name[name] for name in node.columns)

    if isinstance(node, GroupByAgg):
        schema = infer_schema(node.child, catalog, decls, diagnostics)
        if schema is None:
            return None
        by_name = {column.name: column for column in schema}
        output = []
        for key in node.keys:
            if key not in by_name:
                diagnostics.append(Diagnostic('UnknownColumn', key, f"group key of '{node.id}'"))
                return None
            output.append(by_name[key])
        for aggregate in node.aggregates:
            if aggregate.column is None:
                if aggregate.func is not AggFunc.COUNT:
                    diagnostics.append(Diagnostic('BadAggregate', aggregate.alias, f"{aggregate.func.value} needs a column"))
                    return None
                output.append(Column(aggregate.alias, ColumnType.INT64))
                continue
            if aggregate.column not in by_name:
                diagnostics.append(Diagnostic('UnknownColumn', aggregate.column, f"aggregate of '{node.id}'"))
                return None
            out_type = _agg_output_type(aggregate, by_name[aggregate.column].type)
            if out_type is None:
                diagnostics.append(Diagnostic(
                    'BadAggregate', aggregate.alias,
                    f"{aggregate.func.value} over {by_name[aggregate.column].type.value} column",
                ))
                return None
            output.append(Column(aggregate.alias, out_type))
        names = [column.name for column in output]
        if len(set(names)) != len(names):
            diagnostics.append(Diagnostic('DuplicateColumn', node.id, f"output columns {names}"))
            return None
        return tuple(output)

    if isinstance(node, Join):
        left = infer_schema(node.left, catalog, decls, diagnostics)
        right = infer_schema(node.right, catalog, decls, diagnostics)
        if left is None or right is None:
            return None
        left_types = {column.name: column.type for column in left}
        right_types = {column.name: column.type for column in right}
        for left_key, right_key in node.keys:
            if left_key not in left_types or right_key not in right_types:
                diagnostics.append(Diagnostic('UnknownColumn', f"{left_key}={right_key}", f"join '{node.id}'"))
                return None
            if left_types[left_key] != right_types[right_key]:
                diagnostics.append(Diagnostic('JoinKeyTypeMismatch', node.id, f"{left_key}={right_key}"))
                return None
        if node.max_fanout is not None and node.max_fanout < 1:
            diagnostics.append(Diagnostic('BadFanout', node.id, 'max_fanout must be at least 1'))
        right_keys = {right_key for _, right_key in node.keys}
        output = list(left) + [column for column in right if column.name not in right_keys]
        names = [column.name for column in output]
        if len(set(names)) != len(names):
            diagnostics.append(Diagnostic('DuplicateColumn', node.id, f"join output columns {names}"))
            return None
        return tuple(output)

    if isinstance(node, ChoiceNode):
        schemas = [infer_schema(alt, catalog, decls, diagnostics) for alt in node.alternatives]
        if not schemas or any(schema is None for schema in schemas):
            return None
        if any(schema != schemas[0] for schema in schemas[1:]):
            diagnostics.append(Diagnostic('AlternativeSchemaMismatch', node.choice_id))
            return None
        return schemas[0]

    raise PVDError(f"Unknown plan node {node!r}")


def _check_operand(operand, column_type, column, decls, diagnostics):
    if isinstance(operand, Literal):
        if operand.value is not None and scalar_type(operand.value) != column_type:
            diagnostics.append(Diagnostic(
                'LiteralTypeMismatch', column, f"{operand.value!r} compared with {column_type.value} column"
            ))
    elif isinstance(operand, ChoiceRef):
        decl = decls.get(operand.choice_id)
        if decl is None:
            diagnostics.append(Diagnostic('UndeclaredChoice', operand.choice_id, f"referenced on column '{column}'"))
        elif decl.value_type is not None and decl.value_type != column_type:
            diagnostics.append(Diagnostic(
                'DomainTypeMismatch', operand.choice_id,
                f"{decl.value_type.value} choice compared with {column_type.value} column '{column}'",
            ))


def output_schema(node, catalog, decls=None):
    diagnostics = []
    schema = infer_schema(node, catalog, decls, diagnostics)
    if schema is None or diagnostics:
        raise SchemaMismatch('; '.join(str(d) for d in diagnostics) or f"Cannot infer schema of '{node.id}'")
    return schema


def validate_spec(spec):
    """All type and reference violations of an interface spec; empty when valid."""
    diagnostics = []

    for kind, items in (('source', spec.sources), ('view', spec.views), ('interaction', spec.interactions)):
        names = [item.name for item in items]
        for name in sorted({name for name in names if names.count(name) > 1}):
            diagnostics.append(Diagnostic('DuplicateName', name, f"{kind} declared more than once"))

    catalog = spec.catalog
    seen_choices, seen_nodes = {}, set()
    for view in spec.views:
        decls = view.plan.choice_decls
        for node in walk(view.plan.root):
            if node.id in seen_nodes:
                diagnostics.append(Diagnostic('DuplicateNodeId', node.id))
            seen_nodes.add(node.id)

        for choice_id, decl in decls.items():
            if choice_id in seen_choices:
                diagnostics.append(Diagnostic('DuplicateChoice', choice_id, f"in views {seen_choices[choice_id]} and {view.name}"))
            seen_choices[choice_id] = view.name
            diagnostics.extend(_validate_decl(decl))

        for constraint in view.plan.constraints:
            for choice_id in (constraint.lower, constraint.upper):
                if choice_id not in decls:
                    diagnostics.append(Diagnostic('DanglingChoice', choice_id, f"range constraint in view '{view.name}'"))

        infer_schema(view.plan.root, catalog, decls, diagnostics)

    bound = set()
    view_names = {view.name for view in spec.views}
    for interaction in spec.interactions:
        if interaction.latency_bound_ms is None or interaction.latency_bound_ms <= 0:
            diagnostics.append(Diagnostic('NonPositiveLatency', interaction.name, f"{interaction.latency_bound_ms}"))
        if not interaction.bound_choices:
            diagnostics.append(Diagnostic('EmptyInteraction', interaction.name, 'binds no choices'))
        if interaction.view not in view_names:
            diagnostics.append(Diagnostic('UnknownView', interaction.view, f"refreshed by '{interaction.name}'"))
            continue
        view_choices = spec.view(interaction.view).plan.referenced_choices()
        for choice_id in interaction.bound_choices:
            if choice_id not in view_choices:
                diagnostics.append(Diagnostic('DanglingChoice', choice_id, f"bound by '{interaction.name}'"))
            bound.add(choice_id)

    for view in spec.views:
        for choice_id in sorted(view.plan.referenced_choices() - bound):
            diagnostics.append(Diagnostic('UnboundChoice', choice_id, f"no interaction binds it (view '{view.name}')"))

    return diagnostics


def _validate_decl(decl):
    if decl.kind == 'subplan':
        return [] if decl.values else [Diagnostic('EmptyDomain', decl.choice_id)]
    if decl.value_type is None:
        return [Diagnostic('DomainTypeMismatch', decl.choice_id, 'literal choice without value_type')]
    if decl.values is None and decl.interval is None:
        return [Diagnostic('EmptyDomain', decl.choice_id, 'neither values nor interval given')]
    if decl.interval is not None:
        bounds = (decl.interval.low, decl.interval.high, decl.interval.step)
        if not decl.value_type.is_numeric or any(scalar_type(b) not in (ColumnType.INT64, ColumnType.FLOAT64) for b in bounds):
            return [Diagnostic('DomainTypeMismatch', decl.choice_id, 'interval domains must be numeric')]
        if decl.value_type is ColumnType.INT64 and any(scalar_type(b) != ColumnType.INT64 for b in bounds):
            return [Diagnostic('DomainTypeMismatch', decl.choice_id, 'int64 interval with non-integer bounds')]
        if decl.interval.step <= 0:
            return [Diagnostic('EmptyDomain', decl.choice_id, 'interval step must be positive')]
    bad = [value for value in decl.domain() if scalar_type(value) != decl.value_type]
    if bad:
        return [Diagnostic('DomainTypeMismatch', decl.choice_id, f"values {bad!r} are not {decl.value_type.value}")]
    if not decl.domain():
        return [Diagnostic('EmptyDomain', decl.choice_id)]
    if decl.default is not None and not decl.contains(decl.default):
        return [Diagnostic('OutOfDomain', decl.choice_id, f"default {decl.default!r}")]
    return []


# JSON codec for predicates and plan trees (shared by serializers and payload headers)

def operand_to_json(operand):
    if isinstance(operand, ChoiceRef):
        return {'choice': operand.choice_id}
    return {'literal': operand.value}


def operand_from_json(data):
    if 'choice' in data:
        return ChoiceRef(data['choice'])
    if 'literal' in data:
        return Literal(data['literal'])
    raise ValueError(f"operand needs 'choice' or 'literal': {data!r}")


def predicate_to_json(predicate):
    if isinstance(predicate, And):
        return {'and': [predicate_to_json(term) for term in predicate.terms]}
    if isinstance(predicate, Between):
        return {
            'column': predicate.column,
            'between': [operand_to_json(predicate.low), operand_to_json(predicate.high)],
        }
    return {'column': predicate.column, 'op': predicate.op.value, 'operand': operand_to_json(predicate.operand)}


def predicate_from_json(data):
    if 'and' in data:
        return And(tuple(predicate_from_json(term) for term in data['and']))
    if 'between' in data:
        low, high = data['between']
        return Between(data['column'], operand_from_json(low), operand_from_json(high))
    return Compare(data['column'], CompareOp(data['op']), operand_from_json(data['operand']))


def aggregate_to_json(aggregate):
    return {'func': aggregate.func.value, 'column': aggregate.column, 'alias': aggregate.alias}


def aggregate_from_json(data):
    return Aggregate(AggFunc(data['func']), data.get('column'), data.get('alias'))


def node_to_json(node):
    if isinstance(node, Scan):
        return {'op': 'scan', 'id': node.id, 'relation': node.relation}
    if isinstance(node, Filter):
        return {'op': 'filter', 'id': node.id, 'predicate': predicate_to_json(node.predicate),
                'input': node_to_json(node.child)}
    if isinstance(node, Project):
        return {'op': 'project', 'id': node.id, 'columns': list(node.columns), 'input': node_to_json(node.child)}
    if isinstance(node, GroupByAgg):
        return {'op': 'group_by', 'id': node.id, 'keys': list(node.keys),
                'aggregates': [aggregate_to_json(agg) for agg in node.aggregates],
                'input': node_to_json(node.child)}
    if isinstance(node, Join):
        return {'op': 'join', 'id': node.id, 'keys': [list(pair) for pair in node.keys],
                'max_fanout': node.max_fanout,
                'left': node_to_json(node.left), 'right': node_to_json(node.right)}
    if isinstance(node, ChoiceNode):
        return {'op': 'choice', 'id': node.id, 'choice_id': node.choice_id,
                'alternatives': [node_to_json(alt) for alt in node.alternatives]}
    if isinstance(node, Placeholder):
        return {'op': 'placeholder', 'id': node.id,
                'schema': [[column.name, column.type.value] for column in node.schema]}
    raise PVDError(f"Unknown plan node {node!r}")


def node_from_json(data, path='root'):
    """Inverse of node_to_json; nodes without an id get one derived from their path."""
    op = data.get('op')
    node_id = data.get('id') or path
    if op == 'scan':
        return Scan(node_id, data['relation'])
    if op == 'filter':
        return Filter(node_id, node_from_json(data['input'], f"{path}.0"), predicate_from_json(data['predicate']))
    if op == 'project':
        return Project(node_id, node_from_json(data['input'], f"{path}.0"), tuple(data['columns']))
    if op == 'group_by':
        return GroupByAgg(
            node_id, node_from_json(data['input'], f"{path}.0"), tuple(data.get('keys', ())),
            tuple(aggregate_from_json(agg) for agg in data['aggregates']),
        )
    if op == 'join':
        return Join(
            node_id, node_from_json(data['left'], f"{path}.0"), node_from_json(data['right'], f"{path}.1"),
            tuple(tuple(pair) for pair in data['keys']), data.get('max_fanout'),
        )
    if op == 'choice':
        return ChoiceNode(node_id, data['choice_id'], tuple(
            node_from_json(alt, f"{path}.{i}") for i, alt in enumerate(data['alternatives'])
        ))
    if op == 'placeholder':
        return Placeholder(node_id, parse_schema(data['schema']))
    raise ValueError(f"{path}: unknown plan operator {op!r}")
