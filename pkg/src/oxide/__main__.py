import sys

from oxide.cli import main

sys.exit(main())
