"""Regenerate src/nladc/data/activations.json.

The bundled 5-bit grids for softplus, softsign, elu and selu were fitted
offline against the published step table; this script writes them out in
closed form so the JSON stays reproducible.
"""

import json
import math
from pathlib import Path

import numpy as np

k = np.arange(33)
softplus = (k + 1) * math.log(2) / 10
softsign = np.linspace(-0.8, 0.8, 33)
elu = -0.9375 + 0.1875 * k
selu = np.where(elu < 0, 2 * elu, elu / 2)

inf = math.inf
entries = [
    {"name": "sigmoid", "kind": "monotonic", "range": [0.0, 1.0], "open": [True, True], "eval_range": [-8.0, 8.0]},
    {"name": "tanh", "kind": "monotonic", "range": [-1.0, 1.0], "open": [True, True], "eval_range": [-4.0, 4.0]},
    {"name": "softplus", "kind": "monotonic", "range": [0.0, "inf"], "open": [True, True],
     "eval_range": [-4.0, 4.0], "y_grid": softplus.tolist()},
    {"name": "softsign", "kind": "monotonic", "range": [-1.0, 1.0], "open": [True, True],
     "eval_range": [-8.0, 8.0], "y_grid": softsign.tolist()},
    {"name": "elu", "kind": "monotonic", "range": [-1.0, "inf"], "open": [True, True],
     "eval_range": [-4.0, 6.0], "y_grid": elu.tolist()},
    {"name": "selu", "kind": "monotonic", "range": [-2.0, "inf"], "open": [True, True],
     "eval_range": [-4.0, 6.0], "y_grid": selu.tolist()},
    {"name": "identity", "kind": "monotonic", "range": [0.0, 1.0], "open": [True, True], "eval_range": [0.0, 1.0]},
    {"name": "gelu", "kind": "non-monotonic", "range": [None, "inf"], "eval_range": [-4.0, 4.0]},
    {"name": "swish", "kind": "non-monotonic", "range": [None, "inf"], "eval_range": [-6.0, 6.0]},
]

out = Path(__file__).resolve().parents[1] / "src" / "nladc" / "data" / "activations.json"
out.write_text(json.dumps(entries, indent=1) + "\n")
print("wrote", out)
