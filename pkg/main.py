import sys

from tierplan.cli import main

if __name__ == "__main__":
    # Same entry point as the installed `tierplan` script
    sys.exit(main())
