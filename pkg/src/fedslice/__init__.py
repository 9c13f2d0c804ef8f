"""Joint bandwidth and fog-compute slicing: solvers, ADMM drivers and a federation simulator."""

from .errors import (DomainError, InfeasibleCellError, InfeasibleProblemError,
                     InfeasibleQueueError, NonConvergenceError)
from .model import (AllocationMatrix, CellConfig, ChannelStats, ProblemInstance, ServiceClass,
                    communication_delay, feasibility_check, poisson_quantile, queuing_delay,
                    response_time, total_objective)

__version__ = "0.1.0"
