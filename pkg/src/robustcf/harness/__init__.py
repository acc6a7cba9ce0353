"""Model-change ensembles, robustness metrics and theory checks."""
from .ensembles import (
    CONSTANT, KINDS, LEAVE_OUT, MARGIN, SYNTHETIC, WEIGHT_INIT, EnsembleError, ModelEnsemble,
    SyntheticMember, SyntheticNaturalChange, member_seeds, retrain_ensemble, synthetic_natural_ensemble,
)
from .evaluation import (
    AblationRow, ReportRow, RobustnessReport, ablation, ablation_csv, cost_summary, evaluate, generate,
    lof_summary, report_from_records, true_negative_queries, validity,
)
from .theory import (
    CoverageRow, TargetedResult, concentration_bound, coverage_csv, offmanifold_target, rashomon_bound_check,
    targeted_invalidation, coverage_check,
)
