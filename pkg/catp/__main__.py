import sys

from catp.cli import main

sys.exit(main())
