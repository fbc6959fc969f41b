import sys

from fisheye_bev.index import main

sys.exit(main())
