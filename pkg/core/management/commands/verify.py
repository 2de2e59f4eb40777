import os

from django.core.management.base import CommandError

from core.executor import NetMode, Sampling

from ._pipeline import VERIFICATION_FAILED, PipelineCommand


class Command(PipelineCommand):
    help = 'Executes a physical plan over every (or a sample of) binding and compares it with the oracle'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--plan', required=True, help='Physical plan JSON written by optimize')
        sampling = parser.add_mutually_exclusive_group()
        sampling.add_argument('--sample', type=int, metavar='N', help='Check N seeded bindings per interaction')
        sampling.add_argument('--exhaustive', action='store_true', help='Check every binding (the default)')
        sampling.add_argument('--trace', help='Replay a JSON lines trace instead of enumerating bindings')
        self.add_net_argument(parser, NetMode.SIMULATED)

    def run(self, service, **options):
        plan = service.load_plan(options['plan'])
        net_mode = NetMode(options['net'])
        out = service.config.out

        if options['trace']:
            events = service.replay_trace(plan, options['trace'], net_mode)
            service.write_trace(events, os.path.join(out, f'trace-{plan.plan_id}.jsonl'))
            failed = [event for event in events if not event.matches_oracle]
            if failed:
                raise CommandError(
                    f'{len(failed)} of {len(events)} trace events mismatch the oracle, first: '
                    f'{failed[0].interaction} {failed[0].binding.as_dict()}',
                    returncode=VERIFICATION_FAILED,
                )
            self.stdout.write(self.style.SUCCESS(f'{len(events)} trace events match the oracle'))
            return

        if options['sample']:
            sampling = Sampling.sample(options['sample'], options['seed'])
        else:
            sampling = Sampling.exhaustive()
        report, events = service.verify(plan, sampling, net_mode)
        service.write_verification(report)
        service.write_trace(events, os.path.join(out, f'trace-{plan.plan_id}.jsonl'))

        for section in report.interactions:
            self.stdout.write(
                f'{section.interaction} ({section.mode}): {section.passed}/{section.checked} match, '
                f'max {section.max_measured_ms:.3f}ms'
            )
            for failure in section.failures:
                self.stdout.write(self.style.ERROR(f"  mismatch at {failure['binding']}"))
        if not report.passed:
            raise CommandError(f'Plan {plan.plan_id} disagrees with the oracle', returncode=VERIFICATION_FAILED)
        self.stdout.write(self.style.SUCCESS(f'Plan {plan.plan_id} verified on {report.checked} bindings'))
