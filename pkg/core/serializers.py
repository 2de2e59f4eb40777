from rest_framework import serializers

from .costs import Calibration
from .deployment import DeploymentModel, Link, Site, SiteId
from .exceptions import PlanFormatError, PVDError, SpecInvalid
from .optimizer import PhysicalPlan, ViewPlan
from .plans import (
    Binding, ChoiceDecl, ChoicePlan, Diagnostic, Interaction, InteractionKind, InterfaceSpec, Interval,
    RangeConstraint, Source, View, node_from_json, node_to_json, validate_spec,
)
from .relations import ColumnStats, ColumnType, TableStats, parse_schema
from .structures import StructureFamily, match

SPEC_VERSION = 1


class EnumField(serializers.ChoiceField):
    """ChoiceField over a str Enum: validates to the member, renders the value."""

    def __init__(self, enum, **kwargs):
        self.enum = enum
        super().__init__(choices=[member.value for member in enum], **kwargs)

    def to_internal_value(self, data):
        return self.enum(super().to_internal_value(data))

    def to_representation(self, value):
        return self.enum(value).value


class SchemaField(serializers.Field):
    def to_internal_value(self, data):
        try:
            return parse_schema(data)
        except (KeyError, ValueError, TypeError) as exc:
            raise serializers.ValidationError(f"bad schema entry: {exc}")

    def to_representation(self, schema):
        return [[column.name, column.type.value] for column in schema]


class PlanTreeField(serializers.Field):
    def to_internal_value(self, data):
        if not isinstance(data, dict):
            raise serializers.ValidationError('plan must be an object')
        try:
            return node_from_json(data)
        except (KeyError, ValueError, TypeError, PVDError) as exc:
            raise serializers.ValidationError(str(exc))

    def to_representation(self, node):
        return node_to_json(node)


class BindingField(serializers.Field):
    def to_internal_value(self, data):
        if not isinstance(data, dict):
            raise serializers.ValidationError('binding must be an object')
        return Binding(data)

    def to_representation(self, binding):
        return binding.as_dict()


def _error_paths(errors, prefix=''):
    """Flatten DRF's nested error structure into (field path, message) pairs."""
    if isinstance(errors, dict):
        for key, value in errors.items():
            path = key if not prefix else f"{prefix}.{key}"
            yield from _error_paths(value, path)
    elif isinstance(errors, list):
        for index, value in enumerate(errors):
            if isinstance(value, (dict, list)):
                yield from _error_paths(value, f"{prefix}.{index}" if prefix else str(index))
            else:
                yield prefix or 'document', str(value)
    else:
        yield prefix or 'document', str(errors)


def load(serializer_class, data, plan_document=False, **context):
    """Validate data and return the domain object create() builds from it."""
    serializer = serializer_class(data=data, context=context)
    if not serializer.is_valid():
        paths = list(_error_paths(serializer.errors))
        if plan_document:
            location, detail = paths[0]
            raise PlanFormatError(location, detail)
        raise SpecInvalid([Diagnostic('BadField', location, detail) for location, detail in paths])
    return serializer.save()


def dump(serializer_class, instance, **context):
    return serializer_class(instance, context=context).data


# Interface specs

class SourceSerializer(serializers.Serializer):
    name = serializers.CharField()
    path = serializers.CharField()
    schema = SchemaField()

    def create(self, validated_data):
        return Source(**validated_data)


class IntervalSerializer(serializers.Serializer):
    low = serializers.JSONField()
    high = serializers.JSONField()
    step = serializers.JSONField(default=1)

    def create(self, validated_data):
        return Interval(**validated_data)


class ChoiceDeclSerializer(serializers.Serializer):
    choice_id = serializers.CharField()
    kind = serializers.ChoiceField(choices=['literal'], default='literal')
    value_type = EnumField(ColumnType)
    values = serializers.ListField(child=serializers.JSONField(), required=False, allow_null=True)
    interval = IntervalSerializer(required=False, allow_null=True)
    default = serializers.JSONField(required=False, allow_null=True)

    def validate(self, data):
        if data.get('values') is None and data.get('interval') is None:
            raise serializers.ValidationError({'values': "either 'values' or 'interval' is required"})
        return data

    def create(self, validated_data):
        interval = validated_data.get('interval')
        return ChoiceDecl(
            choice_id=validated_data['choice_id'],
            kind=validated_data['kind'],
            value_type=validated_data['value_type'],
            values=validated_data.get('values'),
            interval=IntervalSerializer().create(interval) if interval else None,
            default=validated_data.get('default'),
        )


class RangeConstraintSerializer(serializers.Serializer):
    lower = serializers.CharField()
    upper = serializers.CharField()

    def create(self, validated_data):
        return RangeConstraint(**validated_data)


class ViewSerializer(serializers.Serializer):
    name = serializers.CharField()
    plan = PlanTreeField(source='plan.root')
    choices = ChoiceDeclSerializer(many=True, required=False, default=list, source='plan.choices')
    constraints = RangeConstraintSerializer(many=True, required=False, default=list, source='plan.constraints')

    def create(self, validated_data):
        plan = validated_data['plan']
        return View(validated_data['name'], ChoicePlan(
            root=plan['root'],
            choices=tuple(ChoiceDeclSerializer().create(decl) for decl in plan.get('choices', ())),
            constraints=tuple(RangeConstraintSerializer().create(c) for c in plan.get('constraints', ())),
        ))


class InteractionSerializer(serializers.Serializer):
    name = serializers.CharField()
    bound_choices = serializers.ListField(child=serializers.CharField())
    kind = EnumField(InteractionKind)
    latency_bound_ms = serializers.FloatField()
    view = serializers.CharField()

    def create(self, validated_data):
        return Interaction(**validated_data)


class InterfaceSpecSerializer(serializers.Serializer):
    spec_version = serializers.IntegerField()
    sources = SourceSerializer(many=True)
    views = ViewSerializer(many=True)
    interactions = InteractionSerializer(many=True)

    def validate_spec_version(self, value):
        if value != SPEC_VERSION:
            raise serializers.ValidationError(f"unsupported spec_version {value}, expected {SPEC_VERSION}")
        return value

    def create(self, validated_data):
        spec = InterfaceSpec(
            sources=tuple(SourceSerializer().create(item) for item in validated_data['sources']),
            views=tuple(ViewSerializer().create(item) for item in validated_data['views']),
            interactions=tuple(InteractionSerializer().create(item) for item in validated_data['interactions']),
            spec_version=validated_data['spec_version'],
        )
        diagnostics = validate_spec(spec)
        if diagnostics:
            raise SpecInvalid(diagnostics)
        return spec


# Deployment and calibration

class SiteSerializer(serializers.Serializer):
    id = EnumField(SiteId)
    memory_budget_bytes = serializers.IntegerField(allow_null=True, required=False, default=None)
    compute_scale = serializers.FloatField(default=1.0)

    def create(self, validated_data):
        return Site(**validated_data)


class LinkSerializer(serializers.Serializer):
    endpoints = serializers.ListField(child=EnumField(SiteId), min_length=2, max_length=2)
    latency_ms = serializers.FloatField()
    bandwidth_bytes_per_ms = serializers.FloatField()

    def create(self, validated_data):
        return Link(tuple(validated_data['endpoints']), validated_data['latency_ms'],
                    validated_data['bandwidth_bytes_per_ms'])


class DeploymentSerializer(serializers.Serializer):
    sites = SiteSerializer(many=True)
    links = LinkSerializer(many=True)

    def create(self, validated_data):
        return DeploymentModel(
            sites=[SiteSerializer().create(site) for site in validated_data['sites']],
            links=[LinkSerializer().create(link) for link in validated_data['links']],
        )


class CalibrationSerializer(serializers.Serializer):
    c_scan = serializers.FloatField()
    c_hash = serializers.FloatField()
    c_probe = serializers.FloatField()
    c_sort = serializers.FloatField()
    c_cell = serializers.FloatField()
    c_op = serializers.FloatField()

    def create(self, validated_data):
        return Calibration(**validated_data)


# Statistics

class ColumnStatsSerializer(serializers.Serializer):
    distinct_count = serializers.IntegerField(min_value=0)
    min = serializers.JSONField(allow_null=True)
    max = serializers.JSONField(allow_null=True)
    null_count = serializers.IntegerField(min_value=0)
    width_bytes = serializers.FloatField()

    def create(self, validated_data):
        return ColumnStats(**validated_data)


class TableStatsSerializer(serializers.Serializer):
    row_count = serializers.IntegerField(min_value=0)
    columns = serializers.DictField(child=ColumnStatsSerializer())

    def create(self, validated_data):
        return TableStats(validated_data['row_count'], {
            name: ColumnStatsSerializer().create(column) for name, column in validated_data['columns'].items()
        })


def stats_to_json(stats):
    return {name: dump(TableStatsSerializer, table) for name, table in sorted(stats.items())}


# Physical plans

class ViewPlanSerializer(serializers.Serializer):
    view = serializers.CharField(source='view.name')
    structure = serializers.CharField(source='match.structure_id', allow_null=True, default=None)
    build_site = EnumField(SiteId, allow_null=True, default=None)
    eval_site = EnumField(SiteId, allow_null=True, default=None)
    residual_site = EnumField(SiteId, allow_null=True, default=None)
    replicated = serializers.BooleanField(default=False)
    replicas = serializers.IntegerField(min_value=1, default=1)
    cache_key = serializers.ListField(child=serializers.CharField(), read_only=True)
    provenance = serializers.ListField(child=serializers.CharField())
    operators = serializers.SerializerMethodField()

    def get_operators(self, obj):
        return [operator.describe() for operator in obj.operators]

    def validate(self, data):
        if data.get('match', {}).get('structure_id'):
            missing = [name for name in ('build_site', 'eval_site', 'residual_site') if data.get(name) is None]
            if missing:
                raise serializers.ValidationError({missing[0]: 'required when a structure is used'})
        return data

    def create(self, validated_data):
        spec = self.context['spec']
        name = validated_data['view']['name']
        try:
            view = spec.view(name)
        except KeyError:
            raise PlanFormatError(f"views[{name}]", 'unknown view')
        structure_id = (validated_data.get('match') or {}).get('structure_id')
        found = None
        if structure_id:
            found = _resolve_structure(view, structure_id, spec.catalog)
        return ViewPlan(
            view=view,
            match=found,
            build_site=validated_data.get('build_site'),
            eval_site=validated_data.get('eval_site'),
            residual_site=validated_data.get('residual_site'),
            replicated=validated_data['replicated'],
            replicas=validated_data['replicas'],
            provenance=tuple(validated_data['provenance']),
        )


def _resolve_structure(view, structure_id, catalog):
    for family in StructureFamily:
        for found in match(family, view.plan, catalog):
            if found.structure_id == structure_id:
                return found
    raise PlanFormatError(f"views[{view.name}].structure", f"'{structure_id}' matches nothing in the view plan")


class PhysicalPlanSerializer(serializers.Serializer):
    plan_id = serializers.CharField(read_only=True)
    operator_count = serializers.IntegerField(read_only=True)
    views = ViewPlanSerializer(many=True)

    def create(self, validated_data):
        spec = self.context['spec']
        child = ViewPlanSerializer(context=self.context)
        views = tuple(child.create(item) for item in validated_data['views'])
        names = [view_plan.view.name for view_plan in views]
        expected = [view.name for view in spec.views]
        if sorted(names) != sorted(expected):
            raise PlanFormatError('views', f"plan covers {names}, interface has {expected}")
        order = {name: index for index, name in enumerate(expected)}
        return PhysicalPlan(tuple(sorted(views, key=lambda view_plan: order[view_plan.view.name])))


def load_plan(data, spec):
    if not isinstance(data, dict):
        raise PlanFormatError('document', 'plan must be an object')
    return load(PhysicalPlanSerializer, data, plan_document=True, spec=spec)


# Reports

class LatencyBreakdownSerializer(serializers.Serializer):
    request = serializers.FloatField()
    rebuild = serializers.FloatField()
    eval = serializers.FloatField()
    ship = serializers.FloatField()
    residual = serializers.FloatField()
    total = serializers.FloatField()


class CostReportSerializer(serializers.Serializer):
    per_interaction_latency_ms = serializers.DictField(child=serializers.FloatField())
    breakdown = serializers.DictField(child=LatencyBreakdownSerializer())
    site_bytes = serializers.SerializerMethodField()
    feasible = serializers.BooleanField()
    violated = serializers.SerializerMethodField()
    site_violations = serializers.SerializerMethodField()

    def get_site_bytes(self, obj):
        return {SiteId(site).value: int(placed) for site, placed in obj.site_bytes.items()}

    def get_violated(self, obj):
        return [
            {'interaction': name, 'bound_ms': bound, 'estimate_ms': estimate}
            for name, bound, estimate in obj.violated
        ]

    def get_site_violations(self, obj):
        return [
            {'site': SiteId(site).value, 'bytes': int(placed), 'budget': budget}
            for site, placed, budget in obj.site_violations
        ]


class ParetoPointSerializer(serializers.Serializer):
    plan_id = serializers.CharField(source='plan.plan_id')
    client_bytes = serializers.IntegerField()
    server_bytes = serializers.IntegerField()
    max_latency_headroom_ms = serializers.FloatField(allow_null=True)
    provenance = serializers.ListField(child=serializers.CharField(), source='plan.provenance')
    latency_ms = serializers.DictField(child=serializers.FloatField(), source='report.per_interaction_latency_ms')


class TraceEventSerializer(serializers.Serializer):
    interaction = serializers.CharField()
    binding = BindingField()
    measured_ms = serializers.FloatField()
    simulated_net_ms = serializers.FloatField()
    output_digest = serializers.CharField()
    matches_oracle = serializers.BooleanField(allow_null=True)
    rebuilt = serializers.ListField(child=serializers.CharField())
    cache_hit = serializers.BooleanField()


class InteractionReportSerializer(serializers.Serializer):
    interaction = serializers.CharField()
    mode = serializers.CharField()
    checked = serializers.IntegerField()
    passed = serializers.IntegerField()
    failed = serializers.IntegerField()
    max_measured_ms = serializers.FloatField()
    failures = serializers.ListField(child=serializers.DictField())


class VerificationReportSerializer(serializers.Serializer):
    plan_id = serializers.CharField()
    passed = serializers.BooleanField()
    checked = serializers.IntegerField()
    interactions = InteractionReportSerializer(many=True)


# Run configuration

class CapsSerializer(serializers.Serializer):
    bindings = serializers.IntegerField(min_value=1, required=False)
    candidates = serializers.IntegerField(min_value=1, required=False)
    cube_cells = serializers.IntegerField(min_value=1, required=False)


class RunConfigSerializer(serializers.Serializer):
    spec_path = serializers.CharField()
    data_dir = serializers.CharField(required=False, allow_null=True, default=None)
    deployment = DeploymentSerializer(required=False, allow_null=True, default=None)
    calibration = CalibrationSerializer(required=False, allow_null=True, default=None)
    seed = serializers.IntegerField(default=0)
    caps = CapsSerializer(required=False, default=dict)
    output_dir = serializers.CharField(required=False, allow_null=True, default=None)

    def create(self, validated_data):
        from .services import RunConfig
        deployment = validated_data['deployment']
        calibration = validated_data['calibration']
        return RunConfig(
            spec_path=validated_data['spec_path'],
            data_dir=validated_data['data_dir'],
            deployment=DeploymentSerializer().create(deployment) if deployment else None,
            calibration=CalibrationSerializer().create(calibration) if calibration else None,
            seed=validated_data['seed'],
            caps=dict(validated_data['caps']),
            output_dir=validated_data['output_dir'],
        )
