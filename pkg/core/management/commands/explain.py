import os

from core.services import write_json

from ._pipeline import PipelineCommand


class Command(PipelineCommand):
    help = 'Prints the estimated latency breakdown and per-site bytes of a physical plan'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--plan', required=True, help='Physical plan JSON written by optimize')

    def run(self, service, **options):
        plan = service.load_plan(options['plan'])
        report, text = service.explain(plan)
        self.stdout.write(text)
        write_json(os.path.join(service.config.out, f'explain-{plan.plan_id}.json'),
                   service.report_document(plan, report))
