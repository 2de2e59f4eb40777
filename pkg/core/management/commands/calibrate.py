import os

from django.conf import settings
from django.core.management.base import BaseCommand

from core.costs import calibrate
from core.deployment import Site, SiteId
from core.serializers import CalibrationSerializer, dump
from core.services import write_json


class Command(BaseCommand):
    help = 'Measures the cost-model constants on this machine and writes calibration.json'

    def add_arguments(self, parser):
        parser.add_argument('--out', help='Output directory (default: PVD_OUTPUT_DIR)')
        parser.add_argument('--rows', type=int, default=settings.PVD_CALIBRATION_ROWS)
        parser.add_argument('--runs', type=int, default=settings.PVD_CALIBRATION_RUNS)
        parser.add_argument('--seed', type=int, default=0)

    def handle(self, *args, **options):
        reference = Site(SiteId.SERVER, compute_scale=1.0)
        measured = calibrate(reference, rows=options['rows'], runs=options['runs'], seed=options['seed'])
        out = str(options['out'] or settings.PVD_OUTPUT_DIR)
        path = write_json(os.path.join(out, 'calibration.json'), dump(CalibrationSerializer, measured))
        for name, value in measured.as_dict().items():
            self.stdout.write(f'{name} = {value:.3e} ms')
        self.stdout.write(self.style.SUCCESS(f'Wrote {path}'))
