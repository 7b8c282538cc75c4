import logging

from django.core.exceptions import ImproperlyConfigured
from django.core.management.base import BaseCommand, CommandError

from ...dataset import DatasetError
from ...pipeline import PipelineError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

VERBOSITY_LEVELS = {
    0: logging.WARNING,
    1: logging.INFO,
    2: logging.DEBUG,
    3: logging.DEBUG,
}


class PipelineCommand(BaseCommand):
    """
    Base for the pipeline commands. Subclasses implement ``run`` and let
    domain errors propagate; they leave with exit code 2 for configuration
    problems, 3 for bad data and 4 for numerical failures.
    """
    requires_system_checks = []

    def handle(self, *args, **options):
        logging.getLogger('visualwords').setLevel(
            VERBOSITY_LEVELS.get(options.get('verbosity', 1), logging.INFO))
        try:
            return self.run(**options)
        except ImproperlyConfigured as error:
            raise CommandError(str(error), returncode=EXIT_CONFIG)
        except ArithmeticError as error:
            raise CommandError("Numerical failure: %s" % error,
                               returncode=EXIT_NUMERIC)
        except (DatasetError, PipelineError, ValueError) as error:
            raise CommandError(str(error), returncode=EXIT_DATA)

    def run(self, **options):
        raise NotImplementedError
