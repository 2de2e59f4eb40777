# core/services.py
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from django.conf import settings

from .costs import Calibration, assess
from .deployment import SiteId
from .exceptions import PVDError
from .executor import NetMode, Sampling, Session, load_trace, replay, verify
from .optimizer import enumerate_candidates, feasible_set, pareto
from .plans import sample_bindings
from .relations import compute_table_stats, load_csv
from .serializers import (
    CostReportSerializer, DeploymentSerializer, InterfaceSpecSerializer, ParetoPointSerializer, PhysicalPlanSerializer,
    RunConfigSerializer, TraceEventSerializer, VerificationReportSerializer, dump, load, load_plan, stats_to_json,
)

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    spec_path: str
    data_dir: str = None
    deployment: object = None
    calibration: object = None
    seed: int = 0
    caps: dict = field(default_factory=dict)
    output_dir: str = None

    @property
    def binding_cap(self):
        return self.caps.get('bindings') or settings.PVD_BINDING_CAP

    @property
    def candidate_cap(self):
        return self.caps.get('candidates') or settings.PVD_CANDIDATE_CAP

    @property
    def cube_cell_cap(self):
        return self.caps.get('cube_cells') or settings.PVD_CUBE_CELL_CAP

    @property
    def out(self):
        return str(self.output_dir or settings.PVD_OUTPUT_DIR)


def read_json(path):
    try:
        with open(path, encoding='utf-8') as handle:
            return json.load(handle)
    except OSError as exc:
        raise PVDError(f"Cannot read {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise PVDError(f"{path} is not valid JSON: {exc}") from exc


def to_json(data):
    return json.dumps(data, sort_keys=True, indent=2) + '\n'


def write_json(path, data):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as handle:
        handle.write(to_json(data))
    logger.debug(f"Wrote {path}")
    return path


def default_deployment():
    return load(DeploymentSerializer, settings.PVD_DEFAULT_DEPLOYMENT)


def deployment_document(path):
    """A deployment document, or the 'deployment' block of a run configuration."""
    data = read_json(path)
    if isinstance(data, dict) and 'deployment' in data:
        data = data['deployment']
    return data


def load_run_config(spec_path, data_dir=None, deploy_path=None, calibration_path=None, seed=0, caps=None,
                    output_dir=None):
    """Command options as a validated RunConfig; unset caps fall back to settings."""
    document = {
        'spec_path': str(spec_path),
        'data_dir': str(data_dir) if data_dir else None,
        'seed': seed,
        'caps': {key: value for key, value in (caps or {}).items() if value is not None},
        'output_dir': str(output_dir) if output_dir else None,
    }
    if deploy_path:
        document['deployment'] = deployment_document(deploy_path)
    if calibration_path:
        document['calibration'] = read_json(calibration_path)
    return load(RunConfigSerializer, document)


def load_spec(path):
    return load(InterfaceSpecSerializer, read_json(path))


def load_database(spec, data_dir):
    """Every source of the spec as a Relation; source paths resolve against data_dir."""
    missing = []
    for source in spec.sources:
        if not os.path.isfile(os.path.join(data_dir, source.path)):
            missing.append(f"{source.name} ({os.path.join(data_dir, source.path)})")
    if missing:
        raise PVDError(f"Missing data for sources: {', '.join(missing)}")

    db = {}
    for source in spec.sources:
        path = os.path.join(data_dir, source.path)
        try:
            db[source.name] = load_csv(path, source.schema, name=source.name)
        except PVDError as exc:
            raise PVDError(f"{path}: {exc}") from exc
    logger.info(f"Loaded {len(db)} relations from {data_dir}")
    return db


def gather_stats(db):
    return {name: compute_table_stats(relation) for name, relation in db.items()}


class DesignRunService:
    """Loads one interface and its data, then runs the pipeline stages the commands ask for."""

    def __init__(self, config):
        self.config = config
        self.spec = None
        self.db = None
        self.stats = None
        self.deployment = config.deployment or default_deployment()
        self.calibration = config.calibration or Calibration.from_settings()

    def prepare(self):
        self.spec = load_spec(self.config.spec_path)
        data_dir = self.config.data_dir or os.path.dirname(os.path.abspath(self.config.spec_path))
        self.db = load_database(self.spec, data_dir)
        self.stats = gather_stats(self.db)
        logger.info(f"Prepared interface with {len(self.spec.views)} views, {len(self.spec.interactions)} interactions")
        return self

    # stats

    def write_stats(self):
        return write_json(os.path.join(self.config.out, 'stats.json'), stats_to_json(self.stats))

    # optimize

    def optimize(self):
        candidates = enumerate_candidates(
            self.spec, self.deployment, self.stats,
            cap=self.config.candidate_cap, cell_cap=self.config.cube_cell_cap,
        )
        feasible = feasible_set(candidates, self.spec, self.deployment, self.calibration, self.stats)
        frontier = pareto(feasible) if feasible.entries else []
        return candidates, feasible, frontier

    def write_frontier(self, candidates, frontier):
        out = self.config.out
        written = []
        for point in frontier:
            path = os.path.join(out, 'plans', f"{point.plan.plan_id}.json")
            written.append(write_json(path, self.plan_document(point.plan)))
        write_json(os.path.join(out, 'pareto.json'), {
            'candidates': len(candidates),
            'truncated': candidates.truncated,
            'points': [dump(ParetoPointSerializer, point) for point in frontier],
        })
        logger.info(f"Wrote {len(frontier)} frontier plans to {out}")
        return written

    def plan_document(self, plan):
        return dump(PhysicalPlanSerializer, plan)

    def load_plan(self, path):
        return load_plan(read_json(path), self.spec)

    # explain

    def explain(self, plan):
        report = assess(plan, self.spec, self.deployment, self.calibration, self.stats)
        return report, self.describe(plan, report)

    def describe(self, plan, report):
        lines = [f"plan {plan.plan_id} ({plan.operator_count} operators)"]
        for view_plan in plan.views:
            lines.append(f"view {view_plan.view.name}: " + ' -> '.join(op.describe() for op in view_plan.operators))
            for step in view_plan.provenance:
                lines.append(f"  {step}")
        for interaction in self.spec.interactions:
            breakdown = report.breakdown[interaction.name]
            status = 'ok' if breakdown.total <= interaction.latency_bound_ms else 'VIOLATED'
            lines.append(
                f"interaction {interaction.name} ({interaction.kind.value}, bound {interaction.latency_bound_ms:g}ms): "
                f"{breakdown.total:.3f}ms {status}"
            )
            lines.append(
                f"  request {breakdown.request:.3f}  rebuild {breakdown.rebuild:.3f}  eval {breakdown.eval:.3f}"
                f"  ship {breakdown.ship:.3f}  residual {breakdown.residual:.3f}"
            )
        for site in (SiteId.CLIENT, SiteId.SERVER, SiteId.CLOUD):
            budget = self.deployment.site(site).memory_budget_bytes
            lines.append(f"site {site.value}: {report.site_bytes[site]} bytes"
                         + (f" of {budget}" if budget is not None else ''))
        return '\n'.join(lines)

    def report_document(self, plan, report):
        return {'plan_id': plan.plan_id, 'report': dump(CostReportSerializer, report)}

    # verify

    def session(self, plan, net_mode=NetMode.SIMULATED):
        return Session(plan, self.spec, self.db, self.deployment, net_mode).warm()

    def verify(self, plan, sampling=Sampling(), net_mode=NetMode.SIMULATED):
        session = self.session(plan, net_mode)
        return verify(session, self.spec, sampling, cap=self.config.binding_cap), session.events

    def replay_trace(self, plan, trace_path, net_mode=NetMode.SIMULATED):
        return replay(self.session(plan, net_mode), load_trace(trace_path))

    def write_trace(self, events, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8') as handle:
            for event in events:
                handle.write(json.dumps(dump(TraceEventSerializer, event), sort_keys=True) + '\n')
        return path

    def write_verification(self, report):
        return write_json(os.path.join(self.config.out, f"verify-{report.plan_id}.json"),
                          dump(VerificationReportSerializer, report))

    # bench

    def bench(self, plans, count, net_mode=NetMode.NONE):
        """Latency table over a seeded binding sweep per interaction, one row per (plan, interaction)."""
        rows = []
        for plan in plans:
            report = assess(plan, self.spec, self.deployment, self.calibration, self.stats)
            session = self.session(plan, net_mode)
            for interaction in self.spec.interactions:
                bindings = sample_bindings(self.spec, interaction, count, self.config.seed)
                measured = np.array([session.interact(interaction, binding)[1].measured_ms for binding in bindings])
                if not len(measured):
                    continue
                rows.append({
                    'plan_id': plan.plan_id,
                    'interaction': interaction.name,
                    'kind': interaction.kind.value,
                    'bound_ms': interaction.latency_bound_ms,
                    'estimate_ms': report.per_interaction_latency_ms[interaction.name],
                    'p50': float(np.percentile(measured, 50)),
                    'p95': float(np.percentile(measured, 95)),
                    'max': float(measured.max()),
                    'violations': int((measured > interaction.latency_bound_ms).sum()),
                })
                logger.info(f"{plan.plan_id} {interaction.name}: p50 {rows[-1]['p50']:.3f}ms over {len(measured)} events")
        return pd.DataFrame(rows, columns=[
            'plan_id', 'interaction', 'kind', 'bound_ms', 'estimate_ms', 'p50', 'p95', 'max', 'violations',
        ])

    def write_bench(self, table):
        path = os.path.join(self.config.out, 'bench.csv')
        os.makedirs(self.config.out, exist_ok=True)
        table.to_csv(path, index=False, float_format='%.6f')
        return path
