"""Discovery and testing of heterogeneous complier average causal effects.

Matched pairs are split by a regression tree grown on absolute adjusted
differences, and the resulting subgroups are tested with a closed
testing procedure that keeps the familywise error rate at ``alpha``.
"""

from .analysis import Analysis, NodeSummary, analyze
from .closed_testing import ClosedTestReport, brute_force_closed_test, run_closed_test
from .core import (
    DataError,
    DegenerateError,
    Grouping,
    MatchedPair,
    PairData,
    PotentialUnit,
    Unit,
    adjusted_difference,
    compliance_rate,
    weighted_decomposition_check,
)
from .inference import IvEstimate, IvTestResult, exact_p_value, hl_estimate, pair_statistics
from .matching import (
    BalanceReport,
    DistanceSpec,
    balance_report,
    match_units,
    optimal_pair_match,
    rank_mahalanobis_distance,
)
from .simulation import (
    MetricsRecord,
    PipelineParams,
    ScenarioConfig,
    builtin_scenarios,
    generate_dataset,
    honesty_diagnostic,
    run_replications,
    scenario,
)
from .tree import FittedTree, TreeConfig, fit_tree, grouping_from_tree

__version__ = "0.1.0"
