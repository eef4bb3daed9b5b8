import sys
from pathlib import Path

# Test helpers live next to the tests, not in the package.
sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent.parent / "fixtures"
