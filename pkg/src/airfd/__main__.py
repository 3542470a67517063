"""Allow `python3 -m airfd` as an alias for the `airfd` console script."""

import sys

from .expcli import main

if __name__ == "__main__":
    sys.exit(main())
