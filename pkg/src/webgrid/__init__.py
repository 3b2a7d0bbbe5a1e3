"""Discrete-event comparison of SSI-style load balancing on a desktop web-grid."""
from .policies import PolicyKind, PolicyParams, PolicyState
from .simcore import Engine, JobKind, Outcome, Request, SimConfig, SimResult, run
from .stats import AnovaTable, f_pvalue, fit_anova3, format_table, recompute_f, reg_inc_beta
from .workload import FlashCrowd, Flat, RateSchedule, TimeOfDay, WorkloadSpec, default_schedule, effective_rate, generate

__version__ = "0.1.0"
