import sys

from arcparse.cli import main

sys.exit(main())
