from hardmine.cli import main
import sys

sys.exit(main())
