from meal.cli import main
import sys

sys.exit(main())
