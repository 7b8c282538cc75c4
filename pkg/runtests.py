#!/usr/bin/env python
import sys

from visualwords.boot import setup_env


def main():
    setup_env()

    from django.test.runner import DiscoverRunner

    labels = sys.argv[1:] or ['visualwords']
    failures = DiscoverRunner(verbosity=2).run_tests(labels)
    sys.exit(bool(failures))


if __name__ == '__main__':
    main()
