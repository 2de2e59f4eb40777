# core/optimizer.py
"""
Rule-based search over structure choice and placement.

Each view gets a list of options built by the rules in RULESET, applied in
turn; physical plans are the cross product of the per-view options.
"""
import hashlib
import itertools
import logging
import math
from dataclasses import dataclass, field, replace

from .costs import assess, estimate_stats
from .deployment import SITE_ORDER, SiteId, sites_between
from .exceptions import CapExceeded, StructureUnsupported
from .structures import StructureFamily, match, structure_size

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Operator:
    op: str
    site: SiteId
    target: SiteId = None
    structure: str = None
    cache_key: tuple = ()
    replicated: bool = False

    def describe(self):
        if self.op == 'Ship':
            return f"Ship {self.site.value}->{self.target.value}"
        detail = f"({self.structure})" if self.structure else ''
        if self.op == 'Cache':
            keyed = ','.join(self.cache_key) or '-'
            detail += f"[key={keyed}{', replicated' if self.replicated else ''}]"
        return f"{self.op}{detail}@{self.site.value}"


@dataclass(frozen=True)
class ViewPlan:
    """How one view is computed: the baseline (match is None) or a structure rewrite."""
    view: object
    match: object = None
    build_site: SiteId = None
    eval_site: SiteId = None
    residual_site: SiteId = None
    replicated: bool = False
    replicas: int = 1
    provenance: tuple = ()

    @property
    def cache_key(self):
        return self.match.partition_choices if self.match else ()

    @property
    def operators(self):
        client, cloud = SiteId.CLIENT, SiteId.CLOUD
        if self.match is None:
            return (
                Operator('Query', cloud),
                Operator('Ship', cloud, client),
                Operator('Render', client),
            )
        sid = self.match.structure_id
        ops = [Operator('Query', cloud)]
        if self.build_site is not cloud:
            ops.append(Operator('Ship', cloud, self.build_site))
        ops.append(Operator('Build', self.build_site, structure=sid))
        if self.build_site is not self.eval_site:
            ops.append(Operator('Ship', self.build_site, self.eval_site))
        ops.append(Operator('Cache', self.eval_site, structure=sid, cache_key=self.cache_key,
                            replicated=self.replicated))
        ops.append(Operator('Eval', self.eval_site, structure=sid))
        last = self.eval_site
        if self.match.residual is not None:
            if self.residual_site is not last:
                ops.append(Operator('Ship', last, self.residual_site))
            ops.append(Operator('Residual', self.residual_site))
            last = self.residual_site
        if last is not client:
            ops.append(Operator('Ship', last, client))
        ops.append(Operator('Render', client))
        return tuple(ops)


@dataclass(frozen=True)
class PhysicalPlan:
    views: tuple

    def view_plan(self, name):
        for view_plan in self.views:
            if view_plan.view.name == name:
                return view_plan
        raise KeyError(name)

    @property
    def provenance(self):
        return tuple(step for view_plan in self.views for step in view_plan.provenance)

    @property
    def operator_count(self):
        return sum(len(view_plan.operators) for view_plan in self.views)

    @property
    def plan_id(self):
        return hashlib.sha1('|'.join(self.provenance).encode('utf-8')).hexdigest()[:12]

    def structures(self):
        return [view_plan for view_plan in self.views if view_plan.match is not None]


@dataclass(frozen=True)
class CandidateSet:
    plans: tuple
    truncated: bool = False

    def __iter__(self):
        return iter(self.plans)

    def __len__(self):
        return len(self.plans)


@dataclass(frozen=True)
class FeasibleEntry:
    plan: PhysicalPlan
    report: object
    headroom_ms: float = None


@dataclass(frozen=True)
class InfeasibleInterface:
    """Closest miss among the candidates: the plan and the bound it overshoots the least."""
    plan_id: str
    interaction: str = None
    bound_ms: float = None
    estimate_ms: float = None
    site_violations: tuple = ()

    def __str__(self):
        parts = [f"no feasible plan among candidates; closest is {self.plan_id}"]
        if self.interaction:
            parts.append(f"'{self.interaction}' estimated {self.estimate_ms:.2f}ms against a {self.bound_ms:g}ms bound")
        for site, placed, budget in self.site_violations:
            parts.append(f"{site.value} needs {placed} bytes, budget {budget}")
        return '; '.join(parts)


@dataclass(frozen=True)
class FeasibleSet:
    entries: tuple = ()
    infeasible: InfeasibleInterface = None
    assessed: int = 0


@dataclass(frozen=True)
class ParetoPoint:
    plan: PhysicalPlan
    client_bytes: int
    server_bytes: int
    max_latency_headroom_ms: float = None
    report: object = field(default=None, compare=False)


# Rules

def rule_baseline(view, options, context):
    """R1: evaluate the bound view plan in the cloud and ship the result to the client."""
    return [ViewPlan(view, provenance=(f"R1:{view.name}:baseline@cloud",))] + options


def rule_structures(view, options, context):
    """R2: every match, built at b and evaluated at e with b upstream of (or at) e."""
    added = []
    for found in context.matches(view):
        for eval_site in SITE_ORDER:
            for build_site in sites_between(SiteId.CLOUD, eval_site):
                step = f"R2:{view.name}:{found.structure_id}:build@{build_site.value}:eval@{eval_site.value}"
                added.append(ViewPlan(
                    view, found, build_site, eval_site, eval_site, provenance=(step,),
                ))
    return options + added


def rule_replicate(view, options, context):
    """R3: cache one structure per value of its enumerated partition choices."""
    decls = view.plan.choice_decls
    expanded = []
    for option in options:
        expanded.append(option)
        partitions = option.cache_key
        if not partitions or not all(decls[choice_id].is_enumerated for choice_id in partitions):
            continue
        replicas = math.prod(len(decls[choice_id].domain()) for choice_id in partitions)
        step = f"R3:{view.name}:replicate[{','.join(partitions)}]x{replicas}"
        expanded.append(replace(option, replicated=True, replicas=replicas, provenance=option.provenance + (step,)))
    return expanded


def rule_residual_sites(view, options, context):
    """R4: run the residual fragment at the eval site or anywhere downstream of it."""
    expanded = []
    for option in options:
        if option.match is None or option.match.residual is None:
            expanded.append(option)
            continue
        for site in sites_between(option.eval_site, SiteId.CLIENT):
            step = f"R4:{view.name}:residual@{site.value}"
            expanded.append(replace(option, residual_site=site, provenance=option.provenance + (step,)))
    return expanded


RULESET = [
    rule_baseline,
    rule_structures,
    rule_replicate,
    rule_residual_sites,
]


class SearchContext:
    """Memoizes matches per view and buildability per structure."""

    def __init__(self, spec, stats, prune_unbounded_joins=True, cell_cap=None):
        self.spec = spec
        self.stats = stats
        self.prune_unbounded_joins = prune_unbounded_joins
        self.cell_cap = cell_cap
        self._matches = {}
        self.pruned = []

    def matches(self, view):
        if view.name in self._matches:
            return self._matches[view.name]
        found = []
        for family in StructureFamily:
            for result in match(family, view.plan, self.spec.catalog):
                if self.prune_unbounded_joins and result.through_unbounded_join:
                    self.pruned.append((view.name, result.structure_id, 'unbounded join'))
                    logger.debug(f"Pruned {result.structure_id} in view '{view.name}': unbounded join")
                    continue
                reason = self._unbuildable(result)
                if reason:
                    self.pruned.append((view.name, result.structure_id, reason))
                    logger.debug(f"Pruned {result.structure_id} in view '{view.name}': {reason}")
                    continue
                found.append(result)
        self._matches[view.name] = found
        return found

    def _unbuildable(self, result):
        source = estimate_stats(result.build_input, self.stats)
        try:
            structure_size(result.kind, source, math.ceil(source.row_count), self.cell_cap)
        except (CapExceeded, StructureUnsupported) as exc:
            return str(exc)
        return None


def view_options(view, context):
    if not view.plan.referenced_choices():
        return [ViewPlan(view, provenance=(f"R1:{view.name}:baseline@cloud",))]
    options = []
    for rule in RULESET:
        options = rule(view, options, context)
    return options


def enumerate_candidates(spec, dm, stats, cap=None, prune_unbounded_joins=True, cell_cap=None):
    """Cross product of every view's options, in rule order, up to cap plans."""
    if cap is None:
        from django.conf import settings
        cap = settings.PVD_CANDIDATE_CAP
    context = SearchContext(spec, stats, prune_unbounded_joins, cell_cap)
    per_view = [view_options(view, context) for view in spec.views]
    for view, options in zip(spec.views, per_view):
        logger.debug(f"View '{view.name}': {len(options)} options")

    plans, truncated = [], False
    for combination in itertools.product(*per_view):
        if len(plans) >= cap:
            truncated = True
            break
        plans.append(PhysicalPlan(tuple(combination)))

    if truncated:
        logger.warning(f"Candidate search truncated at {cap} plans")
    logger.info(f"Enumerated {len(plans)} candidate plans")
    return CandidateSet(tuple(plans), truncated)


def feasible_set(candidates, spec, dm, cal, stats):
    entries, memo = [], {}
    closest, closest_gap = None, None
    count = 0
    for plan in candidates:
        count += 1
        report = assess(plan, spec, dm, cal, stats, memo)
        if report.feasible:
            entries.append(FeasibleEntry(plan, report, report.headroom(spec)))
            continue
        gap = _infeasibility(report)
        if closest_gap is None or gap < closest_gap:
            closest, closest_gap = (plan, report), gap

    infeasible = None
    if not entries and closest is not None:
        plan, report = closest
        worst = max(report.violated, key=lambda v: v[2] / v[1], default=None)
        infeasible = InfeasibleInterface(
            plan_id=plan.plan_id,
            interaction=worst[0] if worst else None,
            bound_ms=worst[1] if worst else None,
            estimate_ms=worst[2] if worst else None,
            site_violations=report.site_violations,
        )
        logger.warning(str(infeasible))
    logger.info(f"{len(entries)} of {count} candidates are feasible")
    return FeasibleSet(tuple(entries), infeasible, count)


def _infeasibility(report):
    """Largest relative overshoot across latency bounds and site budgets."""
    ratios = [estimate / bound for _, bound, estimate in report.violated]
    ratios += [placed / budget if budget else math.inf for _, placed, budget in report.site_violations]
    return max(ratios, default=0.0)


def _tiebreak(entry):
    headroom = entry.headroom_ms if entry.headroom_ms is not None else math.inf
    return (-headroom, entry.plan.operator_count, entry.plan.provenance)


def pareto(feasible):
    """Non-dominated entries on (client_bytes, server_bytes), client bytes ascending."""
    entries = feasible.entries if isinstance(feasible, FeasibleSet) else feasible

    def axes(entry):
        site_bytes = entry.report.site_bytes
        return site_bytes[SiteId.CLIENT], site_bytes[SiteId.SERVER]

    ordered = sorted(entries, key=lambda entry: (axes(entry), _tiebreak(entry)))
    frontier, best_server = [], math.inf
    for entry in ordered:
        client_bytes, server_bytes = axes(entry)
        if server_bytes < best_server:
            frontier.append(ParetoPoint(entry.plan, client_bytes, server_bytes, entry.headroom_ms, entry.report))
            best_server = server_bytes
    logger.info(f"Pareto frontier has {len(frontier)} points")
    return frontier


def dominates(a, b):
    return (
        a.client_bytes <= b.client_bytes
        and a.server_bytes <= b.server_bytes
        and (a.client_bytes < b.client_bytes or a.server_bytes < b.server_bytes)
    )
