import logging
import time
from abc import ABC, abstractmethod
from collections import defaultdict
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from src.exceptions import DegenerateLine, NumericalFailure
from src.geometry.lines import nearest_rotation, plucker_to_orthonormal, reorthonormalize
from src.geometry.rs_camera import triangulate_line
from src.models import (InvalidPolicy, OrthonormalLine, RsCamera, SolveReport, SolverOptions,
                        Termination)
from src.optim.degeneracy import FLATNESS_COLLAPSE, structure_flatness
from src.optim.problem import (BaProblem, ParameterLayout, assemble_jacobian, evaluate_residuals,
                               parameter_norm)
from src.optim.residuals import huber_weights, robust_cost

logger = logging.getLogger(__name__)


def solve_damped(H: np.ndarray, g: np.ndarray, mu: float, floor: float,
                 num_camera_params: int, line_block_sizes: Sequence[int],
                 use_schur: bool) -> np.ndarray:
    """Solve (H + mu diag(H)) delta = -g, eliminating line blocks when asked."""
    damping = mu * np.maximum(np.diag(H), floor)
    A = H + np.diag(damping)
    if not use_schur or num_camera_params == 0:
        return _dense_solve(A, -g)

    nc = num_camera_params
    B, E, C = A[:nc, :nc], A[:nc, nc:], A[nc:, nc:]
    gc, gl = g[:nc], g[nc:]
    C_inv = np.zeros_like(C)
    start = 0
    for size in line_block_sizes:
        block = slice(start, start + size)
        C_inv[block, block] = np.linalg.inv(C[block, block])
        start += size
    EC = E @ C_inv
    S = B - EC @ E.T
    delta_c = _dense_solve(S, -gc + EC @ gl)
    delta_l = C_inv @ (-gl - E.T @ delta_c)
    return np.concatenate([delta_c, delta_l])


def _dense_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        return cho_solve(cho_factor(A), b)
    except (LinAlgError, ValueError):
        return np.linalg.lstsq(A, b, rcond=None)[0]


class BaseSolver(ABC):
    """Levenberg-Marquardt over cameras and orthonormal lines.

    Subclasses decide which camera parameters are free and how the initial
    state is prepared; the damping loop itself is shared.
    """

    method = "base"

    def __init__(self, problem: BaProblem, options: Optional[SolverOptions] = None):
        self.problem = problem
        self.options = options or SolverOptions()
        self.delta_huber = problem.cfg.huber_delta
        self.rng = np.random.default_rng(self.options.seed)

    @abstractmethod
    def _velocity_free(self) -> bool:
        """Whether omega and d are optimised"""
        pass

    def _initial_state(self) -> Tuple[List[RsCamera], List[OrthonormalLine]]:
        return list(self.problem.cameras), list(self.problem.lines)

    def solve(self) -> SolveReport:
        """Main solve method - returns SolveReport, raises NumericalFailure"""
        start_time = time.time()
        cameras, lines = self._initial_state()
        report = self._levenberg_marquardt(cameras, lines)
        report.solve_time = time.time() - start_time
        logger.info("%s solve: %s after %d iterations, cost %.6e -> %.6e (%.2fs)",
                    self.method, report.termination.value, report.iterations,
                    report.initial_cost, report.final_cost, report.solve_time)
        return report

    def _evaluate(self, cameras, lines) -> Tuple[np.ndarray, np.ndarray, float]:
        r, valid = evaluate_residuals(self.problem, cameras, lines)
        return r, valid, robust_cost(r, self.delta_huber)

    def _linearize(self, cameras, lines):
        layout = ParameterLayout(self.problem, cameras, self._velocity_free())
        r, valid, J = assemble_jacobian(self.problem, cameras, lines, layout)
        weights = huber_weights(r, self.delta_huber)
        return layout, weights * r, weights[:, None] * J, valid

    def _report(self, cameras, lines, iteration, costs, damping, termination, escapes, valid) -> SolveReport:
        return SolveReport(
            iterations=iteration,
            cost_trace=list(costs),
            damping_trace=list(damping),
            termination=termination,
            cameras=list(cameras),
            lines=list(lines),
            initial_cost=costs[0] if costs else float('nan'),
            final_cost=costs[-1] if costs else float('nan'),
            escapes=escapes,
            num_invalid=int(np.count_nonzero(~valid)),
            method=self.method,
        )

    def _levenberg_marquardt(self, cameras, lines) -> SolveReport:
        opts = self.options
        _, valid, cost = self._evaluate(cameras, lines)
        costs, damping = [cost], []
        if not np.isfinite(cost):
            raise NumericalFailure("initial cost is not finite",
                                   self._report(cameras, lines, 0, costs, damping,
                                                Termination.STALL, 0, valid))

        mu = opts.mu_init
        escapes = 0
        accepted = 0
        termination = Termination.MAX_ITER
        layout, r, J, valid = self._linearize(cameras, lines)
        iteration = 0

        while iteration < opts.max_iter:
            iteration += 1
            g = J.T @ r
            stop = None
            if np.abs(g).max(initial=0.0) < opts.gradient_tol:
                stop = Termination.GRADIENT_TOL
            else:
                H = J.T @ J
                use_schur = self.problem.num_lines > opts.schur_threshold
                delta = solve_damped(H, g, mu, opts.diag_floor, layout.num_camera_params,
                                     layout.line_block_sizes, use_schur)
                if not np.all(np.isfinite(delta)):
                    raise NumericalFailure("non-finite step",
                                           self._report(cameras, lines, iteration, costs, damping,
                                                        Termination.STALL, escapes, valid))
                if np.linalg.norm(delta) < opts.step_tol * (parameter_norm(cameras, lines) + opts.step_tol):
                    stop = Termination.STEP_TOL
                else:
                    trial_cameras, trial_lines = layout.apply(cameras, lines, delta)
                    _, _, trial_cost = self._evaluate(trial_cameras, trial_lines)
                    if np.isfinite(trial_cost) and trial_cost < cost:
                        decrease = cost - trial_cost
                        cameras, lines, cost = trial_cameras, trial_lines, trial_cost
                        accepted += 1
                        mu = max(mu * opts.mu_decrease, 1e-15)
                        if opts.reorthonormalize_every and accepted % opts.reorthonormalize_every == 0:
                            cameras, lines = self._reorthonormalize(cameras, lines)
                        costs.append(cost)
                        damping.append(mu)
                        logger.debug("iter %d: cost %.6e accepted (mu %.2e)", iteration, cost, mu)
                        layout, r, J, valid = self._linearize(cameras, lines)
                        if decrease <= opts.cost_tol * costs[-2]:
                            stop = Termination.STALL
                    else:
                        mu *= opts.mu_increase
                        damping.append(mu)
                        logger.debug("iter %d: step rejected (mu %.2e)", iteration, mu)
                        if mu > opts.mu_max:
                            stop = Termination.STALL

            if stop is None:
                continue
            if self._should_escape(valid, lines, escapes):
                escaped = self._escape(layout, cameras, lines, cost)
                if escaped is not None:
                    cameras, lines, cost = escaped
                    escapes += 1
                    mu = opts.mu_init
                    costs.append(cost)
                    damping.append(mu)
                    layout, r, J, valid = self._linearize(cameras, lines)
                    continue
            termination = stop
            break

        return self._report(cameras, lines, iteration, costs, damping, termination, escapes, valid)

    def _should_escape(self, valid: np.ndarray, lines, escapes: int) -> bool:
        """Stationary point with invalid samples, or with the lines collapsed onto a plane or line"""
        if self.problem.cfg.invalid_policy != InvalidPolicy.PENALTY or escapes >= self.options.max_escapes:
            return False
        if np.any(~valid):
            return True
        return len(lines) > 3 and structure_flatness(lines) < FLATNESS_COLLAPSE

    def _escape(self, layout: ParameterLayout, cameras, lines, cost):
        """Leave a degenerate stationary point.

        A restart from re-seeded parameters comes first. Failing that, a random
        kick grows tenfold per attempt until the cost drops.
        """
        restarted = self._restart(layout, cameras, lines)
        if restarted is not None and restarted[2] < cost:
            logger.info("restarted from re-triangulated lines (cost %.6e -> %.6e)", cost, restarted[2])
            return restarted

        scales = layout.column_scales(cameras)
        magnitude = self.options.escape_scale
        for _ in range(self.options.escape_attempts):
            delta = magnitude * scales * self.rng.standard_normal(layout.num_params)
            trial_cameras, trial_lines = layout.apply(cameras, lines, delta)
            _, _, trial_cost = self._evaluate(trial_cameras, trial_lines)
            if np.isfinite(trial_cost) and trial_cost < cost:
                logger.info("escaped stationary point with invalid samples (kick %.1e, cost %.6e -> %.6e)",
                            magnitude, cost, trial_cost)
                return trial_cameras, trial_lines, trial_cost
            magnitude *= 10.0
        logger.warning("could not escape a degenerate stationary point")
        return None

    def _reseed(self, layout: ParameterLayout, cameras, lines):
        """Free velocities zeroed and every free line triangulated again from its samples"""
        cameras = [cam.replace(omega=np.zeros(3), d=np.zeros(3)) if free else cam
                   for cam, free in zip(cameras, layout.free_velocity)]
        by_line = defaultdict(list)
        for obs in self.problem.observations:
            by_line[obs.line_id].append(obs)
        seeded = list(lines)
        for index, observations in by_line.items():
            if index == layout.fixed_line:
                continue
            try:
                seeded[index] = plucker_to_orthonormal(triangulate_line(cameras, observations))
            except DegenerateLine as e:
                logger.debug("line %d keeps its estimate: %s", index, e)
        return cameras, seeded

    def _restart(self, layout: ParameterLayout, cameras, lines):
        cameras, lines = self._reseed(layout, cameras, lines)
        solver = type(self)(self.problem.with_state(cameras, lines), replace(self.options, max_escapes=0))
        try:
            report = solver._levenberg_marquardt(cameras, lines)
        except NumericalFailure as e:
            logger.debug("restart failed: %s", e)
            return None
        if not np.isfinite(report.final_cost):
            return None
        return report.cameras, report.lines, report.final_cost

    @staticmethod
    def _reorthonormalize(cameras, lines):
        cameras = [cam.replace(R0=nearest_rotation(cam.R0)) for cam in cameras]
        lines = [reorthonormalize(tau) for tau in lines]
        return cameras, lines
