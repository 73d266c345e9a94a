"""Base / A / B / C / Full on the table-lamp room over several seeds.

Each run takes minutes on one core; the default three seeds take over an hour.

    python demos/ablation.py [configs/table_lamp_ablation.ini] [n_seeds]
"""

import sys

from fdneus import load_config
from fdneus.study import ablation_study, median_scores, ordering_holds

cfg = load_config(sys.argv[1] if len(sys.argv) > 1 else "configs/table_lamp_ablation.ini")
n_seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 3
scores = ablation_study(cfg, range(n_seeds), log=print)
medians = median_scores(scores)
print("median F:", "  ".join(f"{k}={v:.4f}" for k, v in medians.items()))
print("ordering Base <= A <= B <= C <= Full with gain >= 0.02:", ordering_holds(medians))
