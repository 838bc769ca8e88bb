"""Print the exact error trace of the cyclic chain that defeats linear aggregation.

Each agent sees one feature, cycling through k features; after p passes the
final error is still at least 1/(p+1), even though every feature has been seen.
"""

import sys

from dagagg.population import run_cyclic_path

k = int(sys.argv[1]) if len(sys.argv) > 1 else 10
passes = k - 1
trace = run_cyclic_path(k, passes)
ends = trace.end_of_pass_mse()
print(f"k={k}: end-of-pass MSE vs the 1/(p+1) floor")
for p, mse in enumerate(ends, start=1):
    print(f"  pass {p:2d}  mse {mse:.6f}  floor {1 / (p + 1):.6f}")
