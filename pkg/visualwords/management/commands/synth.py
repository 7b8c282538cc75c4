from django.core.exceptions import ImproperlyConfigured

from ...synthetic import generate_corpus
from ._base import PipelineCommand


class Command(PipelineCommand):
    help = "Writes a synthetic textured-pattern corpus and its manifest."

    def add_arguments(self, parser):
        parser.add_argument('--out', required=True)
        parser.add_argument('--classes', type=int, default=3)
        parser.add_argument('--per-class', dest='per_class', type=int,
                            default=60)
        parser.add_argument('--identities', type=int, default=20)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--size', type=int, default=64,
                            help="Image side length in pixels.")

    def run(self, **options):
        try:
            manifest = generate_corpus(
                options['out'], classes=options['classes'],
                per_class=options['per_class'],
                identities=options['identities'], seed=options['seed'],
                size=options['size'])
        except ValueError as error:
            raise ImproperlyConfigured(str(error))
        self.stdout.write("Manifest written to %s" % manifest)
