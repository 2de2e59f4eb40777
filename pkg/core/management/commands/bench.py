from django.conf import settings

from core.executor import NetMode

from ._pipeline import PipelineCommand


class Command(PipelineCommand):
    help = 'Measures p50/p95/max interaction latency of physical plans over a seeded binding sweep'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--plan', action='append', required=True, help='Physical plan JSON (repeatable)')
        parser.add_argument('--count', type=int, default=settings.PVD_SAMPLE_SIZE, help='Bindings per interaction')
        self.add_net_argument(parser, NetMode.NONE)

    def run(self, service, **options):
        plans = [service.load_plan(path) for path in options['plan']]
        table = service.bench(plans, options['count'], NetMode(options['net']))
        path = service.write_bench(table)
        self.stdout.write(table.to_string(index=False))
        flagged = int(table['violations'].sum()) if len(table) else 0
        style = self.style.WARNING if flagged else self.style.SUCCESS
        self.stdout.write(style(f'{flagged} events over their latency bound; wrote {path}'))
