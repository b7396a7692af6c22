"""
A study shaped like a health-insurance lottery
==============================================

Synthetic covariates with the marginals of a large health-insurance
lottery, covariate-dependent compliance near 0.29, and effects that
depend on age, education, language, race and sex.
"""

# %%
import numpy as np

from hcace import analyze, generate_dataset, scenario
from hcace.tree import TreeConfig

sim = generate_dataset(scenario("ohie-large"), rng=7)
pairs = sim.pairs
print(pairs.n, "pairs; overall compliance", round(float(pairs.treatment_diff.mean()), 3))

# %%
# Settings used for simulations of this size: cp 0.001, at least 90 pairs
# to split, 30 per leaf, depth at most 7. Depth 4 keeps the printout short.
cfg = TreeConfig(complexity_parameter=0.001, min_split=90, min_bucket=30, max_depth=4)
result = analyze(pairs, 0.0, 0.05, cfg)
print(result.tree.to_text())

# %%
for node in result.nodes:
    if len(node.leaves) == 1:
        est = node.estimate
        print(f"leaf {node.leaves[0] + 1}: {node.description}\n"
              f"    estimate {est.point:.2f} [{est.ci_low:.2f}, {est.ci_high:.2f}], I_s={node.n_pairs}, "
              f"pi_s={node.compliance:.2f}, {node.decision}")

# %%
truth = np.array([sim.effect[s].mean() for s in result.grouping.leaves])
print("true mean effect per leaf:", np.round(truth, 2))
