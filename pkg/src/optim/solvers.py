from typing import Dict, List, Optional, Tuple, Type

from src.models import OrthonormalLine, RsCamera, SolveReport, SolverMode, SolverOptions
from src.optim.base_solver import BaseSolver
from src.optim.problem import BaProblem


class RsSolver(BaseSolver):
    """Full rolling-shutter adjustment: poses, velocities and lines"""

    method = SolverMode.RS.value

    def _velocity_free(self) -> bool:
        return True


class GsBaselineSolver(BaseSolver):
    """Global-shutter baseline: same pipeline with omega = d = 0 held fixed"""

    method = SolverMode.GS_FROZEN.value

    def _velocity_free(self) -> bool:
        return False

    def _initial_state(self) -> Tuple[List[RsCamera], List[OrthonormalLine]]:
        cameras, lines = super()._initial_state()
        return [cam.frozen_velocity() for cam in cameras], lines


# Map solver modes to their solver classes
SOLVER_MAPPING: Dict[SolverMode, Type[BaseSolver]] = {
    SolverMode.RS: RsSolver,
    SolverMode.GS_FROZEN: GsBaselineSolver,
}


def get_solver_class(mode: SolverMode) -> Type[BaseSolver]:
    return SOLVER_MAPPING.get(mode, RsSolver)


def levenberg_marquardt(problem: BaProblem, options: Optional[SolverOptions] = None) -> SolveReport:
    """Minimise the stacked curve residuals with the solver matching the problem's mode"""
    solver_class = get_solver_class(problem.mode)
    return solver_class(problem, options).solve()


def solve_gs_baseline(problem: BaProblem, options: Optional[SolverOptions] = None) -> SolveReport:
    return GsBaselineSolver(problem, options).solve()
