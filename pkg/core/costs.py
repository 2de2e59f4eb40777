# core/costs.py
"""
Latency and footprint estimates for physical plans.

Estimates are worst case over an interaction's bindings: a range predicate
bound to a choice keeps every row, equality on a choice keeps
row_count / distinct_count rows, and a subplan choice costs as its most
expensive alternative. None of them depend on the binding, so one pass
per interaction covers all of its bindings.
"""
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import pandas as pd

from .deployment import SiteId, fits, transfer_cost
from .exceptions import MissingStats, SpecInvalid
from .plans import (
    AggFunc, Aggregate, Between, Binding, ChoiceNode, ChoiceRef, Compare, CompareOp, Diagnostic, Filter,
    GroupByAgg, Join, Placeholder, Project, Scan, conjoin, conjuncts,
)
from .relations import Column, ColumnStats, ColumnType, Relation, TableStats
from .structures import (
    StructureFamily, StructureKind, build, estimate, eval_structure, structure_size,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Calibration:
    """ms per unit of work; c_op is the fixed dispatch cost of one operator."""
    c_scan: float
    c_hash: float
    c_probe: float
    c_sort: float
    c_cell: float
    c_op: float

    def __post_init__(self):
        bad = []
        for item in fields(self):
            value = getattr(self, item.name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
                bad.append(Diagnostic('BadCalibration', item.name, f"{value!r} must be positive"))
        if bad:
            raise SpecInvalid(bad)

    @classmethod
    def from_settings(cls):
        from django.conf import settings
        return cls(**settings.PVD_DEFAULT_CALIBRATION)

    def scaled(self, factor):
        return Calibration(**{name: value * factor for name, value in asdict(self).items()})

    def for_site(self, site):
        return self.scaled(site.compute_scale)

    def as_dict(self):
        return asdict(self)


# Microbenchmarks

def _median_ms(work, runs):
    timings = []
    for _ in range(runs):
        start = time.perf_counter()
        work()
        timings.append((time.perf_counter() - start) * 1000.0)
    return float(np.median(timings))


def calibrate(site, rows=None, runs=None, seed=0):
    """Measure the c_* constants on this machine, then apply the site's compute_scale."""
    from django.conf import settings
    rows = rows or settings.PVD_CALIBRATION_ROWS
    runs = runs or settings.PVD_CALIBRATION_RUNS
    floor = 1e-9
    rng = np.random.default_rng(seed)

    values = rng.integers(0, 1000, size=rows)
    frame = pd.DataFrame({'key': rng.integers(0, max(rows // 10, 1), size=rows), 'value': values})
    c_scan = _median_ms(lambda: int(values[values > 500].sum()), runs) / rows
    c_hash = _median_ms(lambda: frame.groupby('key', sort=False)['value'].size(), runs) / rows
    c_sort = _median_ms(lambda: np.sort(values, kind='mergesort'), runs) / (rows * max(math.log2(rows), 1.0))

    probe_rows = min(rows, 100_000)
    distinct = max(probe_rows // 10, 1)
    int_schema = (Column('key', ColumnType.INT64), Column('value', ColumnType.INT64))
    no_nulls = np.zeros(probe_rows, dtype=bool)
    table = Relation(
        'calibration', int_schema, (np.arange(probe_rows, dtype=np.int64) % distinct, values[:probe_rows].copy()),
        (no_nulls, no_nulls.copy()),
    )

    one_row = Relation(
        'calibration', int_schema, tuple(c[:1] for c in table.columns), tuple(m[:1] for m in table.nulls),
    )
    # one eval plus its canonical output: what every structure eval pays regardless of size
    tiny = build(StructureKind(
        StructureFamily.PREFIX_SUM_CUBE, columns=('key',), group_keys=('key',), measures=(Aggregate(AggFunc.COUNT),),
    ), one_row)
    tiny.decoded
    empty = Binding()
    repeats = 200
    c_op = _median_ms(lambda: [eval_structure(tiny, empty).canonical() for _ in range(repeats)], runs) / repeats

    key = ChoiceRef('key')
    index = build(StructureKind(
        StructureFamily.HASH_INDEX, columns=('key',), probe=(Compare('key', CompareOp.EQ, key),),
    ), table)
    probes = [Binding({'key': int(k)}) for k in rng.integers(0, distinct, size=repeats)]
    index.decoded
    per_probe = _median_ms(lambda: [eval_structure(index, b).canonical() for b in probes], runs) / repeats
    c_probe = (per_probe - c_op) / (probe_rows / distinct)

    side = 100
    cube_schema = (Column('a', ColumnType.INT64), Column('b', ColumnType.INT64))
    cube_rows = side * side
    cube_input = Relation(
        'calibration', cube_schema,
        (np.repeat(np.arange(side, dtype=np.int64), side), np.tile(np.arange(side, dtype=np.int64), side)),
        (np.zeros(cube_rows, dtype=bool), np.zeros(cube_rows, dtype=bool)),
    )
    cube = build(StructureKind(
        StructureFamily.PREFIX_SUM_CUBE, columns=('a', 'b'),
        probe=(Between('b', ChoiceRef('lo'), ChoiceRef('hi')),),
        group_keys=('a',), measures=(Aggregate(AggFunc.COUNT),),
    ), cube_input)
    cube.decoded
    window = Binding({'lo': 10, 'hi': 80})
    per_eval = _median_ms(lambda: [eval_structure(cube, window).canonical() for _ in range(20)], runs) / 20
    c_cell = (per_eval - c_op) / (side * 4)

    measured = Calibration(
        c_scan=max(c_scan, floor), c_hash=max(c_hash, floor), c_probe=max(c_probe, floor),
        c_sort=max(c_sort, floor), c_cell=max(c_cell, floor), c_op=max(c_op, floor),
    )
    logger.info(f"Calibrated {site.id.value}: {measured.as_dict()}")
    return measured.for_site(site)


# Cardinality estimation over exact base statistics

def estimate_stats(node, stats, inputs=None):
    """TableStats of a subplan's output; inputs maps placeholder ids to their stats."""
    inputs = inputs or {}

    if isinstance(node, Scan):
        if node.relation not in stats:
            raise MissingStats(f"No statistics for relation '{node.relation}'")
        return stats[node.relation]

    if isinstance(node, Placeholder):
        if node.id not in inputs:
            raise MissingStats(f"No statistics for placeholder '{node.id}'")
        return inputs[node.id]

    if isinstance(node, Filter):
        child = estimate_stats(node.child, stats, inputs)
        rows = float(child.row_count)
        columns = dict(child.columns)
        for term in conjuncts(node.predicate):
            column = child.column(term.column)
            rows *= _selectivity(term, column)
            if isinstance(term, Compare) and term.op is CompareOp.EQ:
                columns[term.column] = _with_distinct(column, min(column.distinct_count, 1))
        return _capped(rows, columns)

    if isinstance(node, Project):
        child = estimate_stats(node.child, stats, inputs)
        return TableStats(child.row_count, {name: child.column(name) for name in node.columns})

    if isinstance(node, GroupByAgg):
        child = estimate_stats(node.child, stats, inputs)
        rows = child.row_count
        if node.keys:
            groups = min(float(rows), math.prod(child.column(key).distinct_count for key in node.keys))
        else:
            groups = 1.0 if rows > 0 else 0.0
        columns = {key: child.column(key) for key in node.keys}
        for aggregate in node.aggregates:
            columns[aggregate.alias] = ColumnStats(math.ceil(groups), None, None, 0, 8.0)
        return _capped(groups, columns)

    if isinstance(node, Join):
        left = estimate_stats(node.left, stats, inputs)
        right = estimate_stats(node.right, stats, inputs)
        if node.bounded:
            rows = float(left.row_count) * node.max_fanout
        else:
            rows = float(left.row_count) * right.row_count
        right_keys = {right_key for _, right_key in node.keys}
        columns = dict(left.columns)
        columns.update({name: column for name, column in right.columns.items() if name not in right_keys})
        return _capped(rows, columns)

    if isinstance(node, ChoiceNode):
        alternatives = [estimate_stats(alt, stats, inputs) for alt in node.alternatives]
        return max(alternatives, key=lambda est: est.row_count * est.row_width)

    raise MissingStats(f"Cannot estimate node {node!r}")


def _with_distinct(column, distinct):
    return ColumnStats(distinct, column.min, column.max, column.null_count, column.width_bytes)


def _capped(rows, columns):
    limit = math.ceil(rows)
    return TableStats(rows, {
        name: column if column.distinct_count <= limit else _with_distinct(column, limit)
        for name, column in columns.items()
    })


def _selectivity(term, column):
    distinct = max(column.distinct_count, 1)
    if isinstance(term, Compare) and term.op is CompareOp.EQ:
        return 1.0 / distinct
    if isinstance(term, Compare) and term.op is CompareOp.NE:
        return 1.0 - 1.0 / distinct if distinct > 1 else 1.0
    bounds = [(CompareOp.GE, term.low), (CompareOp.LE, term.high)] if isinstance(term, Between) \
        else [(term.op, term.operand)]
    return _range_fraction(bounds, column)


def _range_fraction(bounds, column):
    low, high = column.min, column.max
    numeric = isinstance(low, (int, float)) and not isinstance(low, bool)
    if not numeric or high is None or high <= low:
        return 1.0
    lo, hi = low, high
    for op, operand in bounds:
        if isinstance(operand, ChoiceRef):
            return 1.0
        value = operand.value
        if value is None:
            return 0.0
        if op in (CompareOp.GE, CompareOp.GT):
            lo = max(lo, value)
        else:
            hi = min(hi, value)
    return min(max((hi - lo) / (high - low), 0.0), 1.0)


def estimated_bytes(est):
    return int(math.ceil(est.row_count * est.row_width))


def operator_cost(node, stats, cal, inputs=None):
    """Worst-case ms to evaluate a subplan with the engine at one site."""
    inputs = inputs or {}
    if isinstance(node, Placeholder):
        return 0.0
    if isinstance(node, Scan):
        return cal.c_op + estimate_stats(node, stats).row_count * cal.c_scan
    if isinstance(node, (Filter, Project)):
        rows = estimate_stats(node.child, stats, inputs).row_count
        return cal.c_op + rows * cal.c_scan + operator_cost(node.child, stats, cal, inputs)
    if isinstance(node, GroupByAgg):
        rows = estimate_stats(node.child, stats, inputs).row_count
        return cal.c_op + rows * cal.c_hash + operator_cost(node.child, stats, cal, inputs)
    if isinstance(node, Join):
        left = estimate_stats(node.left, stats, inputs).row_count
        right = estimate_stats(node.right, stats, inputs).row_count
        out = estimate_stats(node, stats, inputs).row_count
        return (
            cal.c_op + (left + right) * cal.c_hash + out * cal.c_scan
            + operator_cost(node.left, stats, cal, inputs) + operator_cost(node.right, stats, cal, inputs)
        )
    if isinstance(node, ChoiceNode):
        return max(operator_cost(alt, stats, cal, inputs) for alt in node.alternatives)
    raise MissingStats(f"Cannot cost node {node!r}")


# Plan assessment

@dataclass(frozen=True)
class LatencyBreakdown:
    request: float = 0.0
    rebuild: float = 0.0
    eval: float = 0.0
    ship: float = 0.0
    residual: float = 0.0

    @property
    def total(self):
        return self.request + self.rebuild + self.eval + self.ship + self.residual


@dataclass(frozen=True)
class CostReport:
    per_interaction_latency_ms: dict = field(default_factory=dict)
    breakdown: dict = field(default_factory=dict)
    site_bytes: dict = field(default_factory=dict)
    feasible: bool = True
    violated: tuple = ()
    site_violations: tuple = ()

    def headroom(self, spec):
        """min(bound - estimate) over interactions; None when there are none."""
        gaps = [
            interaction.latency_bound_ms - self.per_interaction_latency_ms[interaction.name]
            for interaction in spec.interactions
        ]
        return min(gaps) if gaps else None


def eval_output(match):
    """Plan equivalent to what eval() returns for a match, for estimation."""
    kind = match.kind
    source = match.build_input
    probe = conjoin(kind.probe)
    if probe is not None:
        source = Filter(f"{match.matched_subplan}#probe", source, probe)
    if kind.family is StructureFamily.PREFIX_SUM_CUBE:
        return GroupByAgg(match.matched_subplan, source, kind.group_keys, kind.measures)
    return source


def view_breakdown(view_plan, interaction, dm, cal, stats):
    """Latency of one interaction against the plan of the view it refreshes."""
    client, cloud = SiteId.CLIENT, SiteId.CLOUD
    cloud_cal = cal.for_site(dm.site(cloud))
    match = view_plan.match

    if match is None:
        root = view_plan.view.plan.root
        result = estimate_stats(root, stats)
        return LatencyBreakdown(
            request=transfer_cost(dm, client, cloud, 0),
            eval=operator_cost(root, stats, cloud_cal),
            ship=transfer_cost(dm, cloud, client, estimated_bytes(result)),
        )

    build_site, eval_site, residual_site = view_plan.build_site, view_plan.eval_site, view_plan.residual_site
    build_scale = dm.site(build_site).compute_scale
    eval_scale = dm.site(eval_site).compute_scale

    source = estimate_stats(match.build_input, stats)
    source_rows = math.ceil(source.row_count)
    build_ms, eval_ms, size = estimate(match.kind, source, source_rows, cal)
    output = estimate_stats(eval_output(match), stats)

    rebuild = not view_plan.replicated and bool(set(interaction.bound_choices) & set(match.partition_choices))
    rebuild_ms = 0.0
    if rebuild:
        rebuild_ms = (
            operator_cost(match.build_input, stats, cloud_cal)
            + transfer_cost(dm, cloud, build_site, estimated_bytes(source))
            + build_ms * build_scale
            + transfer_cost(dm, build_site, eval_site, size)
        )

    residual_ms = 0.0
    if match.residual is None:
        ship_ms = transfer_cost(dm, eval_site, client, estimated_bytes(output))
    else:
        inputs = {match.placeholder_id: output}
        residual_ms = operator_cost(match.residual, stats, cal.for_site(dm.site(residual_site)), inputs)
        result = estimate_stats(match.residual, stats, inputs)
        ship_ms = (
            transfer_cost(dm, eval_site, residual_site, estimated_bytes(output))
            + transfer_cost(dm, residual_site, client, estimated_bytes(result))
        )

    return LatencyBreakdown(
        request=transfer_cost(dm, client, cloud if rebuild else eval_site, 0),
        rebuild=rebuild_ms,
        eval=(cal.c_op + eval_ms) * eval_scale,
        ship=ship_ms,
        residual=residual_ms,
    )


def interaction_latency(plan, interaction, dm, cal, stats):
    return view_breakdown(plan.view_plan(interaction.view), interaction, dm, cal, stats).total


def site_footprint(plan, stats):
    """Bytes resident per site: every cached structure times its replica count."""
    placed = {site: 0 for site in SiteId}
    for view_plan in plan.views:
        match = view_plan.match
        if match is None:
            continue
        source = estimate_stats(match.build_input, stats)
        size = structure_size(match.kind, source, math.ceil(source.row_count))
        placed[view_plan.eval_site] += size * view_plan.replicas
    return placed


def assess(plan, spec, dm, cal, stats, memo=None):
    """CostReport for a physical plan; memo caches per (view plan, interaction) breakdowns."""
    memo = memo if memo is not None else {}
    latencies, breakdowns, violated = {}, {}, []
    for interaction in spec.interactions:
        view_plan = plan.view_plan(interaction.view)
        key = (view_plan, interaction)
        if key not in memo:
            memo[key] = view_breakdown(view_plan, interaction, dm, cal, stats)
        breakdown = memo[key]
        latencies[interaction.name] = breakdown.total
        breakdowns[interaction.name] = breakdown
        if breakdown.total > interaction.latency_bound_ms:
            violated.append((interaction.name, interaction.latency_bound_ms, breakdown.total))

    site_bytes = site_footprint(plan, stats)
    fit = fits(dm, site_bytes)
    site_violations = tuple(
        (site, site_bytes[site], dm.site(site).memory_budget_bytes) for site in SiteId if not fit[site]
    )
    return CostReport(
        per_interaction_latency_ms=latencies,
        breakdown=breakdowns,
        site_bytes=site_bytes,
        feasible=not violated and not site_violations,
        violated=tuple(violated),
        site_violations=site_violations,
    )
