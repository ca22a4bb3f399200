from .condition_service import ConditionService
from .file_service import FileService
from .solver_service import ContinuationSolver, continuation_solve

__all__ = ["ConditionService", "FileService", "ContinuationSolver", "continuation_solve"]
