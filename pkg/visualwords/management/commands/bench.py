import os

from django.core.exceptions import ImproperlyConfigured

from ...dataset import load_manifest, split_identity_disjoint
from ...pipeline import (benchmark_timing, load_bench_configs,
                         write_timing_table)
from ._base import PipelineCommand


class Command(PipelineCommand):
    help = "Times every training phase for a list of run configs."

    def add_arguments(self, parser):
        parser.add_argument('--configs',
                            help="TOML file with [[config]] entries (default:"
                                 " k-means / k-means++ x RBF / intersection).")
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--repeats', type=int, default=1,
                            help="Runs per config; the median is reported.")
        parser.add_argument('--out', default='.',
                            help="Directory for timings.csv.")
        parser.add_argument('--plot', action='store_true', default=False)

    def run(self, **options):
        configs = load_bench_configs(options['configs'])
        if not configs:
            raise ImproperlyConfigured("No benchmark configs given.")
        manifest = load_manifest(options['manifest'])
        # Every config runs on the split of the first one.
        split = split_identity_disjoint(manifest, configs[0].train_fraction,
                                        configs[0].seed)
        rows = benchmark_timing(configs, split, repeats=options['repeats'])

        out = options['out']
        os.makedirs(out, exist_ok=True)
        path = write_timing_table(rows, os.path.join(out, 'timings.csv'))
        if options['plot']:
            from ...plots import write_accuracy_chart, write_timing_chart
            write_timing_chart(rows, os.path.join(out, 'timings.svg'))
            write_accuracy_chart([(row.name, row.accuracy) for row in rows],
                                 os.path.join(out, 'accuracy.svg'))

        for row in rows:
            self.stdout.write("%-28s total %8.2fs  accuracy %s" % (
                row.name, row.total,
                'n/a' if row.accuracy is None else '%.2f%%' % row.accuracy))
        self.stdout.write("Timing table written to %s" % path)
