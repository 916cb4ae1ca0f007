__version__ = "0.1.0"

from .engine import report, run_all
from .ensemble import compute_weights, predict, weighted_scores

# Appease pyflakes by "using" these exports
assert run_all
assert report
assert compute_weights
assert weighted_scores
assert predict
