import os

from django.core.management.base import CommandError

from core.services import write_json

from ._pipeline import INFEASIBLE, PipelineCommand


class Command(PipelineCommand):
    help = 'Searches physical plans and writes the Pareto frontier of client and server bytes'

    def run(self, service, **options):
        candidates, feasible, frontier = service.optimize()
        if candidates.truncated:
            self.stdout.write(self.style.WARNING(f'Search truncated at {len(candidates)} candidates'))

        if not frontier:
            diagnostic = feasible.infeasible
            write_json(os.path.join(service.config.out, 'pareto.json'), {
                'candidates': len(candidates),
                'truncated': candidates.truncated,
                'points': [],
                'infeasible': str(diagnostic) if diagnostic else 'no candidates',
            })
            raise CommandError(f'Infeasible interface: {diagnostic}', returncode=INFEASIBLE)

        service.write_frontier(candidates, frontier)
        self.stdout.write(f'{len(feasible.entries)} of {len(candidates)} candidates feasible')
        for point in frontier:
            self.stdout.write(
                f'{point.plan.plan_id}  client {point.client_bytes:>12}  server {point.server_bytes:>12}'
                f'  headroom {point.max_latency_headroom_ms:.3f}ms'
            )
        self.stdout.write(self.style.SUCCESS(f'Wrote {len(frontier)} plans to {service.config.out}'))
