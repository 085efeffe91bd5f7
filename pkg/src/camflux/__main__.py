import sys

from camflux.cli import main

sys.exit(main())
