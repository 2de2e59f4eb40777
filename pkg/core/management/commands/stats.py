from ._pipeline import PipelineCommand


class Command(PipelineCommand):
    help = 'Computes exact per-column statistics of every source and writes stats.json'

    def run(self, service, **options):
        path = service.write_stats()
        for name, table in sorted(service.stats.items()):
            self.stdout.write(f'{name}: {table.row_count} rows, {len(table.columns)} columns')
        self.stdout.write(self.style.SUCCESS(f'Wrote {path}'))
