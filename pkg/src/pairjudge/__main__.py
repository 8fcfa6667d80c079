import sys

from pairjudge.cli import main

sys.exit(main())
