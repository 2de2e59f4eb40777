import os

from django.conf import settings
from django.core.management.base import BaseCommand

from core.datasets import GENERATORS, generate, write_dataset


class Command(BaseCommand):
    help = 'Writes a synthetic dataset and its interface spec'

    def add_arguments(self, parser):
        parser.add_argument('name', choices=sorted(GENERATORS))
        parser.add_argument('--out', help='Target directory (default: PVD_OUTPUT_DIR/<name>)')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--rows', type=int, help='Row count for flights and catalog')
        parser.add_argument('--members', type=int, help='Member count for congress')

    def handle(self, *args, **options):
        name = options['name']
        extra = {}
        if options['rows'] and name in ('flights', 'catalog'):
            extra['rows'] = options['rows']
        if options['members'] and name == 'congress':
            extra['members'] = options['members']

        dataset = generate(name, seed=options['seed'], **extra)
        out = options['out'] or os.path.join(str(settings.PVD_OUTPUT_DIR), name)
        spec_path = write_dataset(dataset, out)
        self.stdout.write(self.style.SUCCESS(f'Wrote {spec_path}'))
