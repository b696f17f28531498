import sys

from evanscope.cli import main

sys.exit(main())
