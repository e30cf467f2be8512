import sys

from calibfpa.cli import main

sys.exit(main())
