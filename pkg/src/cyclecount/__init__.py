"""Cyclic arrival-count modelling and case-complexity statistics."""

__version__ = "0.1.0"

from .config import (  # noqa: F401
    CleanseConfig,
    CohortConfig,
    ComplexityConfig,
    FitControls,
    GpHoursConfig,
    ModelConfig,
    RunConfig,
)
from .errors import (  # noqa: F401
    CycleCountError,
    DegenerateDataError,
    NonNestedError,
    PipelineError,
    RankDeficiencyError,
    RateUndefinedError,
    SchemaError,
    StudyPeriodError,
)
from .ingest import (  # noqa: F401
    CleanseReport,
    ParseResult,
    VisitRecord,
    cleanse,
    parse_visits,
)
from .cohort import (  # noqa: F401
    CohortLabel,
    WeightTable,
    charlson_score,
    classify_frail,
    default_charlson_table,
    default_hfrs_table,
    hfrs_score,
    label_visit,
    label_visits,
    load_weight_table,
)
from .timeseries import (  # noqa: F401
    SlotSeries,
    StudyPeriod,
    WeekSlot,
    bin_hourly,
    gp_hours_flag,
    normalized_rates,
    slot_occurrences,
    week_slot_of,
)
from .harmonic_glm import (  # noqa: F401
    AnovaResult,
    Design,
    FittedModel,
    FourierSpec,
    anova_nested,
    build_design,
    deviance_aic,
    dispersion,
    fit_poisson,
    nested_deviance_test,
    poisson_deviance,
    predict_rate,
    predict_rate_curve,
    select_orders,
)
from .complexity import (  # noqa: F401
    SurvivalCurve,
    TestResult,
    chi_square_2x2,
    kaplan_meier,
    mann_whitney_u,
    rmst_diff,
)
from .synth import (  # noqa: F401
    AttributeModel,
    GeneratorConfig,
    LosModel,
    RecoveryReport,
    paper_like_config,
    recovery_experiment,
    simulate_arrivals,
    table_matched_visits,
)
from .report import RunReport, emit_report, run_pipeline  # noqa: F401
