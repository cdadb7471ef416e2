"""Risk-limiting audits: assorter construction, sequential tests, apportionment
checks and a reproducible Monte Carlo harness."""

from .alpha import (
    AssertionOutcome,
    AssertionState,
    AuditConfig,
    AuditOutcome,
    alpha_audit,
    alpha_batch_audit,
    alpha_init,
    alpha_step,
)
from .apportionment import AllocationTieError, highest_averages
from .batchcomp import (
    BatchAssorter,
    batch_assorter_value,
    batchcomp_audit,
    batchcomp_simplified_step,
    make_batch_assorter,
    pad_missing_ballots,
)
from .census import (
    CensusModel,
    CensusOutcome,
    Household,
    apportion,
    census_assorter_value,
    census_rla,
    comparison_assorter_value,
    generate_census_population,
    sample_household,
)
from .core import (
    Assorter,
    BallotType,
    BatchRecord,
    Contest,
    LinearInequality,
    Tally,
    assorter_mean,
    inequality_to_assorter,
    plurality_assorter,
)
from .knesset import (
    KnessetContest,
    SeatAllocation,
    allocate_seats,
    assertion_margin,
    generate_assertions,
)

__version__ = "0.1.0"
