import os

from ...dataset import load_manifest, split_identity_disjoint
from ...pipeline import RunConfig, train_pipeline, write_split_manifests
from ._base import PipelineCommand


class Command(PipelineCommand):
    """
    Trains a bundle on the training side of an identity-disjoint split.

    The split itself is written next to the bundle as train_manifest.csv
    and test_manifest.csv, ready for ``vv eval``.
    """
    help = "Trains codebook, encoding statistics and SVMs on a manifest."

    def add_arguments(self, parser):
        parser.add_argument('--config',
                            help="TOML run config; VV_* settings fill in "
                                 "missing keys.")
        parser.add_argument('--manifest', required=True,
                            help="CSV manifest with path,label,identity.")
        parser.add_argument('--out', required=True,
                            help="Directory for the trained bundle.")

    def run(self, **options):
        config = (RunConfig.from_toml(options['config'])
                  if options['config'] else RunConfig())
        manifest = load_manifest(options['manifest'])
        split = split_identity_disjoint(manifest, config.train_fraction,
                                        config.seed)

        bundle = train_pipeline(config, split)
        out = options['out']
        bundle.save(out)
        write_split_manifests(split, out)
        with open(os.path.join(out, 'timings.csv'), 'w',
                  encoding='utf-8') as handle:
            handle.write('phase,seconds\n')
            for phase, seconds in sorted(bundle.timings.items()):
                handle.write('%s,%.6f\n' % (phase, seconds))

        self.stdout.write("Trained %s on %d images (%d classes); bundle "
                          "written to %s" % (config.label, len(split.train),
                                             len(bundle.classes), out))
