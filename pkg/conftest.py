import sys
from pathlib import Path

import hypothesis
import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent))

np.seterr(all="warn")

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("default")
