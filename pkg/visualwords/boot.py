import logging
import os
import sys


def initialized():
    return "VISUALWORDS_INITIALIZED" in os.environ


def mark_initialized():
    os.environ["VISUALWORDS_INITIALIZED"] = "1"


def thread_count():
    """
        Number of workers for data-parallel stages, capped by VV_THREADS.
    """
    value = os.environ.get('VV_THREADS', '1')
    try:
        count = int(value)
    except ValueError:
        logging.getLogger(__name__).warning(
            "Ignoring non-integer VV_THREADS=%r", value)
        return 1
    return max(count, 1)


def setup_env():
    """Configures Django for command-line use of the pipeline."""
    from django.conf import settings

    if initialized() and settings.configured:
        return

    if not settings.configured and not os.environ.get('DJANGO_SETTINGS_MODULE'):
        # No project around us: run on the package defaults.
        from . import settings_base
        defaults = dict((name, getattr(settings_base, name))
                        for name in dir(settings_base) if name.isupper())
        settings.configure(**defaults)

    import django
    django.setup()
    mark_initialized()


def main(argv=None):
    """
        Entry point of the ``vv`` console script.

        ``vv train ...`` is dispatched exactly like ``manage.py train ...``.
    """
    setup_env()

    from django.core.management import execute_from_command_line

    argv = list(sys.argv if argv is None else argv)
    argv[0] = 'vv'
    execute_from_command_line(argv)


if __name__ == '__main__':
    main()
