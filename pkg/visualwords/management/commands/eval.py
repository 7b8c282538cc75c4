import os

from ...dataset import load_manifest
from ...pipeline import Bundle, evaluate
from ._base import PipelineCommand


class Command(PipelineCommand):
    help = "Classifies the images of a manifest with a trained bundle."

    def add_arguments(self, parser):
        parser.add_argument('--bundle', required=True,
                            help="Directory written by vv train.")
        parser.add_argument('--manifest', required=True,
                            help="Test manifest; its identities must not "
                                 "occur in the training set.")
        parser.add_argument('--out',
                            help="Report directory (default: "
                                 "<bundle>/report).")
        parser.add_argument('--plot', action='store_true', default=False,
                            help="Also write SVG accuracy and confusion "
                                 "charts.")

    def run(self, **options):
        bundle = Bundle.load(options['bundle'])
        entries = load_manifest(options['manifest'])
        report = evaluate(bundle, entries)

        out = options['out'] or os.path.join(options['bundle'], 'report')
        report.write(out)
        if options['plot']:
            from ...plots import write_accuracy_chart, write_confusion_chart
            write_accuracy_chart([(report.name, report.accuracy)],
                                 os.path.join(out, 'accuracy.svg'))
            write_confusion_chart(report, os.path.join(out, 'confusion.svg'))

        self.stdout.write(report.as_text())
