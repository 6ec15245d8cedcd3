import sys

from tailminer.cli import main

sys.exit(main())
