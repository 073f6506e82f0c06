import sys

from phcm.cli import main

sys.exit(main())
