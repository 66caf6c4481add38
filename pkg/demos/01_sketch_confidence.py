"""
Counting feature combinations and reading confidences
=====================================================

Stream a skewed set of feature pairs through a small sketch, then compare
what the sketch reports with the exact counts.
"""

from collections import Counter

import numpy as np

from matt import ConfidenceSketch, SketchConfig, canonical_combo, chebyshev_lower_bound

rng = np.random.default_rng(0)

# 5000 events over 300 distinct pairs, Zipf-like
keys = [canonical_combo([(0, i + 1), (1, (7 * i) % 50 + 1)]) for i in range(300)]
weights = 1.0 / np.arange(1, 301) ** 1.1
stream = [keys[i] for i in rng.choice(300, size=5000, p=weights / weights.sum())]
exact = Counter(stream)

# narrow tables so collisions actually happen; a 5-slot heap keeps the head exact
sk = ConfidenceSketch(SketchConfig(widths={1: 256, 2: 256}, capacities={2: 5}))
for c in stream:
    sk.observe(c)

print("heavy hitters held exactly:")
for key, count in sk.order_sketch(2).heap_items():
    print(f"  {key}  heap={count}  exact={exact[key]}")

# tail combos: min-query overestimates, the lower bound backs off
print("\ntail combos:")
for key in sorted(exact, key=exact.get)[:5]:
    print(f"  {key}  exact={exact[key]}  upper={sk.estimate_upper(key)}  confidence={sk.confidence(key):.2f}")

# the lower bound on its own: readings 12 and 8 from two tables
print("\nbound for readings [12, 8]:", float(chebyshev_lower_bound([12, 8], 0.05)[0]))
