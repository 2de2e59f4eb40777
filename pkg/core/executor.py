# core/executor.py
"""Runs a physical plan over loaded relations and checks it against the oracle."""
import json
import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum

from deepdiff import DeepDiff

from .deployment import SiteId, transfer_cost
from .engine import evaluate
from .exceptions import DomainExplosion, OutOfDomain, PVDError, StaleStructure, UnboundChoice
from .oracle import oracle_eval
from .plans import (
    Binding, ChoicePlan, bind, context_choices, default_binding, enumerate_bindings, sample_bindings,
)
from .relations import relations_match
from .structures import build, corrupt_structure, eval_structure

logger = logging.getLogger(__name__)


class NetMode(str, Enum):
    SIMULATED = 'simulated'
    NONE = 'none'


@dataclass(frozen=True)
class TraceEvent:
    interaction: str
    binding: Binding
    measured_ms: float
    simulated_net_ms: float
    output_digest: str
    matches_oracle: bool = None
    rebuilt: tuple = ()
    cache_hit: bool = False


class Session:
    """
    Interprets one PhysicalPlan. cache_state maps (site, structure id, cache key)
    to the BuiltStructure resident there; binding is the interface's current state.
    """

    def __init__(self, plan, spec, db, dm, net_mode=NetMode.SIMULATED, clock=time.perf_counter):
        self.plan = plan
        self.spec = spec
        self.db = db
        self.dm = dm
        self.net_mode = NetMode(net_mode)
        self.clock = clock
        self.cache_state = {}
        self.binding = default_binding(spec)
        self.faults = set()
        self.events = []
        self._last_render = {}

    # Structures

    def _cache_id(self, view_plan, binding):
        return view_plan.eval_site, view_plan.match.structure_id, binding.key(view_plan.cache_key)

    def _build(self, view_plan, binding):
        """Materialize the build input for binding's partition values and build at the build site."""
        found = view_plan.match
        choices = view_plan.view.plan
        source = bind(ChoicePlan(found.build_input, choices.choices, choices.constraints), binding)
        relation = evaluate(source, self.db, canonical=False, name=found.matched_subplan)
        structure = build(found.kind, relation, baked=binding.restrict(found.partition_choices))
        if found.structure_id in self.faults:
            structure = corrupt_structure(structure)
        return relation, structure

    def _warm_keys(self, view_plan):
        if not view_plan.replicated:
            return [self.binding]
        decls = view_plan.view.plan.choice_decls
        bindings = [self.binding]
        for choice_id in view_plan.cache_key:
            bindings = [b.updated({choice_id: value}) for b in bindings for value in decls[choice_id].domain()]
        return bindings

    def warm(self):
        """Build every structure the plan caches before the first interaction."""
        for view_plan in self.plan.structures():
            for binding in self._warm_keys(view_plan):
                _, structure = self._build(view_plan, binding)
                self.cache_state[self._cache_id(view_plan, binding)] = structure
        logger.info(f"Warmed {len(self.cache_state)} structures for plan {self.plan.plan_id}")
        return self

    def inject_fault(self, structure_id):
        """Corrupt every cached copy of a structure, and every future rebuild of it."""
        self.faults.add(structure_id)
        for key, structure in list(self.cache_state.items()):
            if key[1] == structure_id:
                self.cache_state[key] = corrupt_structure(structure)
        self._last_render.clear()

    # Interactions

    def _merge(self, interaction, binding):
        missing = [choice_id for choice_id in interaction.bound_choices if choice_id not in binding]
        if missing:
            raise UnboundChoice(missing[0])
        decls = self.spec.choice_decls()
        for choice_id, value in binding.items():
            if choice_id not in decls:
                raise UnboundChoice(choice_id)
            if not decls[choice_id].contains(value):
                raise OutOfDomain(choice_id, value)
        return self.binding.updated(binding)

    def interact(self, interaction, binding):
        """Apply one interaction; returns the view's render-ready relation and its TraceEvent."""
        if isinstance(interaction, str):
            interaction = self.spec.interaction(interaction)
        full = self._merge(interaction, Binding(binding))
        view = self.spec.view(interaction.view)
        view_plan = self.plan.view_plan(view.name)
        render_key = full.restrict(view.plan.choice_decls)

        cached = self._last_render.get(view.name)
        if cached is not None and cached[0] == render_key:
            start = self.clock()
            result = cached[1]
            compute_ms = (self.clock() - start) * 1000.0
            self.binding = full
            return result, self._record(interaction, full, compute_ms, 0.0, result, (), cache_hit=True)

        start = self.clock()
        if view_plan.match is None:
            result, shipments, rebuilt = self._run_baseline(view, full)
        else:
            result, shipments, rebuilt = self._run_structure(view_plan, full)
        compute_ms = (self.clock() - start) * 1000.0

        net_ms = 0.0
        if self.net_mode is NetMode.SIMULATED:
            net_ms = sum(transfer_cost(self.dm, a, b, nbytes()) for a, b, nbytes in shipments)
        result = result.renamed(view.name)
        self.binding = full
        self._last_render[view.name] = (render_key, result)
        return result, self._record(interaction, full, compute_ms, net_ms, result, rebuilt)

    def _record(self, interaction, binding, compute_ms, net_ms, result, rebuilt, cache_hit=False):
        event = TraceEvent(
            interaction=interaction.name,
            binding=binding.restrict(interaction.bound_choices),
            measured_ms=compute_ms + net_ms,
            simulated_net_ms=net_ms,
            output_digest=result.digest(),
            rebuilt=tuple(rebuilt),
            cache_hit=cache_hit,
        )
        self.events.append(event)
        logger.debug(f"{interaction.name} {binding.as_dict()}: {event.measured_ms:.3f}ms rebuilt={list(rebuilt)}")
        return event

    def _run_baseline(self, view, binding):
        result = evaluate(bind(view.plan, binding), self.db)
        client, cloud = SiteId.CLIENT, SiteId.CLOUD
        shipments = [(client, cloud, lambda: 0), (cloud, client, lambda: result.size_bytes)]
        return result, shipments, ()

    def _run_structure(self, view_plan, binding):
        found = view_plan.match
        client, cloud = SiteId.CLIENT, SiteId.CLOUD
        cache_id = self._cache_id(view_plan, binding)
        shipments, rebuilt = [], []

        structure = self.cache_state.get(cache_id)
        if structure is None:
            if view_plan.replicated:
                raise PVDError(f"Replicated structure {found.structure_id} missing key {cache_id[2]}; warm() first")
            for key in [key for key in self.cache_state if key[:2] == cache_id[:2]]:
                del self.cache_state[key]
            relation, structure = self._build(view_plan, binding)
            self.cache_state[cache_id] = structure
            rebuilt.append(found.structure_id)
            built = structure
            shipments += [
                (client, cloud, lambda: 0),
                (cloud, view_plan.build_site, lambda: relation.size_bytes),
                (view_plan.build_site, view_plan.eval_site, lambda: built.size_bytes),
            ]
        else:
            shipments.append((client, view_plan.eval_site, lambda: 0))

        try:
            output = eval_structure(structure, binding)
        except StaleStructure as exc:
            raise PVDError(f"Cache invalidation bug: {exc}") from exc

        if found.residual is None:
            result = output.canonical()
            shipments.append((view_plan.eval_site, client, lambda: result.size_bytes))
            return result, shipments, rebuilt

        choices = view_plan.view.plan
        residual = bind(ChoicePlan(found.residual, choices.choices, choices.constraints), binding)
        result = evaluate(residual, self.db, inputs={found.placeholder_id: output})
        shipments += [
            (view_plan.eval_site, view_plan.residual_site, lambda: output.size_bytes),
            (view_plan.residual_site, client, lambda: result.size_bytes),
        ]
        return result, shipments, rebuilt

    def render(self, view_name):
        """Current output of a view without going through an interaction."""
        view = self.spec.view(view_name)
        return evaluate(bind(view.plan, self.binding), self.db, name=view_name)


def expected_output(spec, db, view_name, binding):
    view = spec.view(view_name)
    return oracle_eval(bind(view.plan, binding), db).renamed(view_name)


# Verification

@dataclass(frozen=True)
class Sampling:
    mode: str = 'exhaustive'
    count: int = None
    seed: int = 0

    @classmethod
    def exhaustive(cls):
        return cls('exhaustive')

    @classmethod
    def sample(cls, count, seed):
        return cls('sample', count, seed)


@dataclass
class InteractionReport:
    interaction: str
    mode: str
    checked: int = 0
    passed: int = 0
    failed: int = 0
    max_measured_ms: float = 0.0
    failures: list = field(default_factory=list)


@dataclass
class VerificationReport:
    plan_id: str
    interactions: list = field(default_factory=list)

    @property
    def passed(self):
        return all(report.failed == 0 for report in self.interactions)

    @property
    def checked(self):
        return sum(report.checked for report in self.interactions)


def bindings_for(spec, interaction, sampling, cap=None):
    """(mode, bindings) over the interaction crossed with its view's other enumerated choices.

    Exhaustive while that product fits the cap, a seeded sample otherwise.
    """
    from django.conf import settings
    cap = cap or settings.PVD_BINDING_CAP
    if sampling.mode == 'sample':
        return 'sample', sample_bindings(spec, interaction, sampling.count, sampling.seed, vary_context=True)
    try:
        return 'exhaustive', list(enumerate_bindings(spec, interaction, cap, vary_context=True))
    except DomainExplosion as exc:
        logger.warning(f"{interaction.name}: {exc}")
        return 'sample', sample_bindings(spec, interaction, settings.PVD_SAMPLE_SIZE, sampling.seed,
                                         vary_context=True)


def verify(session, spec, sampling=Sampling(), cap=None, max_failures=10):
    """Replays every binding of every interaction and compares each render with the oracle."""
    from django.conf import settings
    tolerance = settings.PVD_FLOAT_REL_TOL
    report = VerificationReport(session.plan.plan_id)
    oracle_memo = {}

    for interaction in spec.interactions:
        mode, bindings = bindings_for(spec, interaction, sampling, cap)
        section = InteractionReport(interaction.name, mode)
        shown = context_choices(spec, interaction) + tuple(interaction.bound_choices)
        logger.info(f"Verifying {interaction.name}: {len(bindings)} bindings ({mode})")
        for binding in bindings:
            actual, event = session.interact(interaction, binding)
            bound = bind(spec.view(interaction.view).plan, session.binding)
            if bound not in oracle_memo:
                oracle_memo[bound] = oracle_eval(bound, session.db)
            expected = oracle_memo[bound]
            ok = relations_match(actual, expected, tolerance)
            session.events[-1] = replace(event, matches_oracle=ok)

            section.checked += 1
            section.max_measured_ms = max(section.max_measured_ms, event.measured_ms)
            if ok:
                section.passed += 1
                continue
            section.failed += 1
            if len(section.failures) < max_failures:
                section.failures.append({
                    'binding': binding.restrict(shown).as_dict(),
                    'diff': describe_mismatch(actual, expected),
                })
        if section.failed:
            logger.error(f"{interaction.name}: {section.failed} of {section.checked} bindings mismatch the oracle")
        report.interactions.append(section)
    return report


def describe_mismatch(actual, expected):
    diff = DeepDiff(
        {'schema': [(c.name, c.type.value) for c in expected.schema], 'rows': expected.canonical().rows()},
        {'schema': [(c.name, c.type.value) for c in actual.schema], 'rows': actual.canonical().rows()},
        ignore_order=False,
        significant_digits=9,
    )
    return diff.pretty() if diff else 'rows differ only within float tolerance'


# Traces: one JSON object per line, {"interaction": name, "binding": {...}}

def load_trace(path):
    events = []
    with open(path, encoding='utf-8') as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                events.append((record['interaction'], Binding(record['binding'])))
            except (ValueError, KeyError) as exc:
                raise PVDError(f"{path}:{number}: bad trace line ({exc})") from exc
    return events


def replay(session, trace, check=True):
    """Run a trace through the session; events carry matches_oracle when check is set."""
    events = []
    for name, binding in trace:
        interaction = session.spec.interaction(name)
        actual, event = session.interact(interaction, binding)
        if check:
            expected = expected_output(session.spec, session.db, interaction.view, session.binding)
            from django.conf import settings
            event = replace(event, matches_oracle=relations_match(actual, expected, settings.PVD_FLOAT_REL_TOL))
            session.events[-1] = event
        events.append(event)
    return events
