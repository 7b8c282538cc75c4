import json

from ...dataset import load_manifest, split_identity_disjoint
from ...pipeline import cross_validate, load_grid
from ._base import PipelineCommand


class Command(PipelineCommand):
    help = ("Leave-one-identity-out cross-validation over a parameter grid "
            "on the training side of the split.")

    def add_arguments(self, parser):
        parser.add_argument('--config-grid', dest='config_grid',
                            help="TOML file: base keys plus a [grid] table "
                                 "of candidate lists (default: VV_CV_GRID).")
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--out', help="Directory for fold scores and "
                                          "the best config.")

    def run(self, **options):
        base, grid = load_grid(options['config_grid'])
        manifest = load_manifest(options['manifest'])
        split = split_identity_disjoint(manifest, base.train_fraction,
                                        base.seed)
        result = cross_validate(base, grid, split.train)
        if options['out']:
            result.write(options['out'])

        for point in result.points:
            self.stdout.write("%s: %s" % (
                json.dumps(point.overrides, sort_keys=True),
                'failed' if point.mean is None else '%.2f%%' % point.mean))
        self.stdout.write("Best: %s" % json.dumps(result.best.overrides,
                                                  sort_keys=True))
