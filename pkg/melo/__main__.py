import sys

from melo.main import main

sys.exit(main())
