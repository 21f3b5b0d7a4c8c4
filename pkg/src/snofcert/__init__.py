"""Lur'e-Postnikov certification of closed loops with gated recurrent virtual sensors."""

from .snof import (Channel, NonlinearitySpec, Snof, StepResult, WellPosednessReport,
                   check_well_posed, eval_batch, eval_step, loop_transform_sigmoid,
                   rollout, star_compose)

__version__ = "0.1.0"
