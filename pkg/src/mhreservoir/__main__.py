"""Module entry point for python -m mhreservoir."""

import sys

from .cli import main

sys.exit(main())
