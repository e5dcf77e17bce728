"""Stochastic Adams solvers for variance-controlled reverse diffusion SDEs."""
from .kernels import BACKEND
from .schedules import GridKind, NoiseSchedule, ScheduleKind, TimeGrid, make_schedule, make_time_grid
from .stochasticity import TauKind, TauSchedule

__version__ = "0.1.0"
