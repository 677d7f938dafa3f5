import sys

from preqdag.main import main

sys.exit(main())
