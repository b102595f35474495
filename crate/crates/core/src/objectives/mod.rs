//! DPO, shifted DPO and alpha-DPO objectives, and the shift schedules.

mod loss;
mod schedule;

pub use loss::{
    alpha_dpo_loss, dpo_loss, dpo_shift_loss, gradient_coefficients, objective_gradient, ref_logprobs,
    sample_objective, shift_breakdown, LossBreakdown, RefLogprobs, SampleObjective,
};
pub use schedule::{f_value, ScheduleConfig, ScheduleSpec, Strategy};
