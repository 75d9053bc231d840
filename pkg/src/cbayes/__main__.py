import sys

from cbayes.cli import main

sys.exit(main())
