import sys

from .study_harness import main

sys.exit(main())
