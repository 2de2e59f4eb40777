from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.exceptions import PVDError
from core.executor import NetMode
from core.services import DesignRunService, load_run_config
from core.utils.run_logger import log_run, setup_run_logging, teardown_run_logging

USAGE_ERROR = 1
INFEASIBLE = 2
VERIFICATION_FAILED = 3


class PipelineCommand(BaseCommand):
    """Common flags and error handling for commands that run against one interface spec."""

    def add_arguments(self, parser):
        parser.add_argument('--spec', required=True, help='Interface spec JSON')
        parser.add_argument('--data', help='Directory holding the source CSVs (default: next to the spec)')
        parser.add_argument('--deploy', help='Deployment JSON, or a run config with a "deployment" block')
        parser.add_argument('--calibration', help='Calibration JSON written by the calibrate command')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--out', help='Output directory (default: PVD_OUTPUT_DIR)')
        parser.add_argument('--cap-candidates', type=int, help='Physical plans to enumerate before truncating')
        parser.add_argument('--cap-bindings', type=int, help='Bindings per interaction before sampling')
        parser.add_argument('--cap-cube-cells', type=int, help='Cells a single cube may allocate')

    def add_net_argument(self, parser, default):
        parser.add_argument('--net', choices=[mode.value for mode in NetMode], default=default.value,
                            help='Add simulated network time to measured latency, or not')

    def handle(self, *args, **options):
        handler = setup_run_logging(str(options['out'] or settings.PVD_OUTPUT_DIR))
        try:
            config = load_run_config(
                spec_path=options['spec'],
                data_dir=options['data'],
                deploy_path=options['deploy'],
                calibration_path=options['calibration'],
                seed=options['seed'],
                caps={
                    'candidates': options['cap_candidates'],
                    'bindings': options['cap_bindings'],
                    'cube_cells': options['cap_cube_cells'],
                },
                output_dir=options['out'],
            )
            service = DesignRunService(config).prepare()
            self.run(service, **options)
        except CommandError as exc:
            log_run(str(exc), 'error')
            raise
        except (PVDError, KeyError) as exc:
            log_run(str(exc), 'error')
            raise CommandError(str(exc), returncode=USAGE_ERROR)
        finally:
            teardown_run_logging(handler)

    def run(self, service, **options):
        raise NotImplementedError
