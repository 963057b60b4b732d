import sys

from arcnet.cli import main

sys.exit(main())
