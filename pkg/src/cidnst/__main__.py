import sys

from cidnst.cli import main

sys.exit(main())
