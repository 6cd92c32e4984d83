import sys

from perfgame.cli import main

sys.exit(main())
