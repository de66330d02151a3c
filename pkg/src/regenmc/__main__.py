import sys

from regenmc.cli import main

sys.exit(main())
