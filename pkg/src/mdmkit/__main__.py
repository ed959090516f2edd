"""Allow ``python -m mdmkit`` as an alias for the ``mdm`` script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
