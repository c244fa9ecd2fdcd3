from geosync.cli import main
import sys

sys.exit(main())
