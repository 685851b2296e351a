"""Validated run manifests.

A run is described by one JSON document with the sections of
``config/settings.json``. Values come from the settings file, then the
manifest passed with ``--config``, then command-line flags.
"""

import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.exceptions import ConfigError
from src.models import (GaugeSpec, InvalidPolicy, NoiseMode, ResidualConfig, ResidualVariant,
                        ScaleFix, SolverMode, SolverOptions, TangentMode, TrajectoryKind,
                        TrajectorySpec)

ENV_CONFIG_DIR = 'RSLBA_CONFIG_DIR'
ENV_MAX_WORKERS = 'RSLBA_MAX_WORKERS'


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class SynthConfig(_Section):
    trajectory: TrajectoryKind = TrajectoryKind.RING
    n_cameras: int = Field(8, ge=2)
    radius: float = Field(3.0, gt=0)
    elevation: float = -0.5
    azimuth_offset_deg: float = 22.5
    displacement: float = Field(6.0, gt=0)
    depth: float = Field(7.0, gt=0)
    readout_fraction: float = Field(0.1, gt=0, le=1)
    static: bool = False
    cube_side: float = Field(2.0, gt=0)
    cube_center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    num_lines: Optional[int] = Field(None, ge=1, le=12)
    points_per_line: int = Field(5, ge=2, le=64)
    noise_px: float = Field(0.0, ge=0)
    tangent_noise_rad: float = Field(0.0, ge=0)
    noise_mode: NoiseMode = NoiseMode.SAMPLES
    perturb_rot_deg: float = Field(0.5, ge=0)
    perturb_trans_frac: float = Field(0.01, ge=0)
    perturb_line_deg: float = Field(0.0, ge=0)
    focal: float = Field(3000.0, gt=0)
    width: int = Field(5760, ge=2)
    height: int = Field(4320, ge=2)

    def trajectory_spec(self) -> TrajectorySpec:
        return TrajectorySpec(
            kind=self.trajectory,
            n_cameras=self.n_cameras,
            radius=self.radius,
            elevation=self.elevation,
            azimuth_offset_deg=self.azimuth_offset_deg,
            displacement=self.displacement,
            depth=self.depth,
            readout_fraction=self.readout_fraction,
            static=self.static,
            target=tuple(self.cube_center),
            focal=self.focal,
            width=self.width,
            height=self.height,
        )


class SolverConfig(_Section):
    mode: SolverMode = SolverMode.RS
    max_iter: int = Field(100, ge=1)
    gradient_tol: float = Field(1e-8, gt=0)
    step_tol: float = Field(1e-10, gt=0)
    cost_tol: float = Field(1e-14, ge=0)
    mu_init: float = Field(1e-4, gt=0)
    mu_increase: float = Field(10.0, gt=1)
    mu_decrease: float = Field(0.3, gt=0, lt=1)
    mu_max: float = Field(1e12, gt=0)
    reorthonormalize_every: int = Field(10, ge=0)
    schur_threshold: int = Field(32, ge=0)
    max_escapes: int = Field(10, ge=0)
    fixed_cameras: List[int] = Field(default_factory=lambda: [0])
    scale_fix: ScaleFix = ScaleFix.FIX_SECOND_TRANSLATION_NORM
    scale_camera: int = 1
    scale_line: int = 0
    fix_velocity: bool = True

    def options(self, seed: int = 0) -> SolverOptions:
        return SolverOptions(
            max_iter=self.max_iter,
            gradient_tol=self.gradient_tol,
            step_tol=self.step_tol,
            cost_tol=self.cost_tol,
            mu_init=self.mu_init,
            mu_increase=self.mu_increase,
            mu_decrease=self.mu_decrease,
            mu_max=self.mu_max,
            reorthonormalize_every=self.reorthonormalize_every,
            schur_threshold=self.schur_threshold,
            max_escapes=self.max_escapes,
            seed=seed,
        )

    def gauge(self) -> GaugeSpec:
        return GaugeSpec(
            fixed_camera_ids=tuple(self.fixed_cameras),
            scale_fix=self.scale_fix,
            scale_line_id=self.scale_line,
            scale_camera_id=self.scale_camera,
            fix_velocity=self.fix_velocity,
        )


class ResidualSection(_Section):
    variant: ResidualVariant = ResidualVariant.E1_PERP_TANGENT
    lam: float = Field(1.0, ge=0, alias='lambda')
    huber_delta: Optional[float] = Field(None, gt=0)
    invalid_policy: InvalidPolicy = InvalidPolicy.MASK
    tangent_mode: TangentMode = TangentMode.SINE
    penalty: float = Field(1e3, gt=0)

    model_config = ConfigDict(extra='forbid', populate_by_name=True)

    def residual_config(self) -> ResidualConfig:
        return ResidualConfig(
            variant=self.variant,
            lam=self.lam,
            huber_delta=self.huber_delta,
            invalid_policy=self.invalid_policy,
            tangent_mode=self.tangent_mode,
            penalty=self.penalty,
        )


class OutputConfig(_Section):
    output_directory: str = 'results'
    filename_prefix: str = 'rslba_'


class RuntimeConfig(_Section):
    max_workers: int = Field(4, ge=1)
    trials: int = Field(50, ge=1)
    log_level: str = 'INFO'


class RunConfig(_Section):
    synth: SynthConfig = Field(default_factory=SynthConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    residual: ResidualSection = Field(default_factory=ResidualSection)
    output: OutputConfig = Field(default_factory=OutputConfig)
    runtime: RuntimeConfig = Field(default_factory=RuntimeConfig)
    seed: int = 0


def merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; values in update win"""
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def apply_overrides(data: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Apply dotted-key overrides such as {'synth.noise_px': 1.0}; None means unset"""
    result = dict(data)
    for dotted, value in overrides.items():
        if value is None:
            continue
        *sections, key = dotted.split('.')
        update: Dict[str, Any] = {key: value}
        for section in reversed(sections):
            update = {section: update}
        result = merge(result, update)
    return result


def build_run_config(*layers: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    data: Dict[str, Any] = {}
    for layer in layers:
        data = merge(data, layer or {})
    data = apply_overrides(data, overrides or {})
    max_workers = os.getenv(ENV_MAX_WORKERS)
    if max_workers and not (overrides or {}).get('runtime.max_workers'):
        if not max_workers.isdigit():
            raise ConfigError(f"{ENV_MAX_WORKERS} must be a positive integer, got {max_workers!r}")
        data = merge(data, {'runtime': {'max_workers': int(max_workers)}})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def config_dir(default: str = 'config') -> Path:
    load_dotenv()
    return Path(os.getenv(ENV_CONFIG_DIR, default))
