import sys

from drcrl.cli import main

sys.exit(main())
