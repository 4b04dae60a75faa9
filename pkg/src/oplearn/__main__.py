import sys

from oplearn.cli import main

sys.exit(main())
