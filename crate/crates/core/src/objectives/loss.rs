use crate::config::ObjectiveKind;
use crate::data::PreferenceTriple;
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus_neg};
use crate::policy::{logprob, logprob_and_grad, FrozenPolicy, Policy, SparseGrad};
use crate::scalar::Scalar;

/// Per-sample loss together with the quantities inside the sigmoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub loss: T,
    /// `beta * chosen_logratio - f * beta * rejected_logratio`.
    pub margin_argument: T,
    /// `log pi(y_w|x) - log pi_ref(y_w|x)`.
    pub chosen_logratio: T,
    /// `log pi(y_l|x) - log pi_ref(y_l|x)`.
    pub rejected_logratio: T,
    pub f_value: T,
    /// Set when `f > 1`. Allowed, but it inverts the intended trade-off and
    /// is known to destabilise training when chosen/rejected are similar.
    pub f_above_one: bool,
}

/// Reference-model log-probabilities of one triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefLogprobs<T> {
    pub chosen: T,
    pub rejected: T,
}

pub fn ref_logprobs<T: Scalar, R: Policy<T>>(
    triple: &PreferenceTriple,
    reference: &FrozenPolicy<R>,
) -> Result<RefLogprobs<T>> {
    Ok(RefLogprobs {
        chosen: logprob(reference, &triple.prompt, &triple.chosen)?,
        rejected: logprob(reference, &triple.prompt, &triple.rejected)?,
    })
}

fn check_beta<T: Scalar>(beta: T) -> Result<()> {
    if beta.is_finite() && beta > T::zero() {
        Ok(())
    } else {
        Err(Error::domain(format!("beta must be > 0, got {beta}")))
    }
}

fn check_f<T: Scalar>(f: T) -> Result<()> {
    if f.is_finite() && f > T::zero() {
        Ok(())
    } else {
        Err(Error::domain(format!("shift coefficient f must be > 0, got {f}")))
    }
}

/// Scalar core of the shifted objective, `-log sigmoid(beta r_w - f beta r_l)`.
///
/// `f = 0` is accepted here (the rejected term vanishes); the public loss
/// entry points reject it.
pub fn shift_breakdown<T: Scalar>(chosen_logratio: T, rejected_logratio: T, beta: T, f: T) -> LossBreakdown<T> {
    let margin_argument = beta * chosen_logratio - f * (beta * rejected_logratio);
    LossBreakdown {
        loss: softplus_neg(margin_argument),
        margin_argument,
        chosen_logratio,
        rejected_logratio,
        f_value: f,
        f_above_one: f > T::one(),
    }
}

fn logratios<T: Scalar, P: Policy<T>, R: Policy<T>>(
    triple: &PreferenceTriple,
    policy: &P,
    reference: &FrozenPolicy<R>,
) -> Result<(T, T)> {
    let r = ref_logprobs(triple, reference)?;
    let w = logprob(policy, &triple.prompt, &triple.chosen)?;
    let l = logprob(policy, &triple.prompt, &triple.rejected)?;
    Ok((w - r.chosen, l - r.rejected))
}

pub fn dpo_loss<T: Scalar, P: Policy<T>, R: Policy<T>>(
    triple: &PreferenceTriple,
    policy: &P,
    reference: &FrozenPolicy<R>,
    beta: T,
) -> Result<LossBreakdown<T>> {
    dpo_shift_loss(triple, policy, reference, beta, T::one())
}

pub fn dpo_shift_loss<T: Scalar, P: Policy<T>, R: Policy<T>>(
    triple: &PreferenceTriple,
    policy: &P,
    reference: &FrozenPolicy<R>,
    beta: T,
    f: T,
) -> Result<LossBreakdown<T>> {
    check_beta(beta)?;
    check_f(f)?;
    let (rw, rl) = logratios(triple, policy, reference)?;
    Ok(shift_breakdown(rw, rl, beta, f))
}

/// DPO plus a length-normalised SFT term on the chosen response:
/// `L_dpo - (alpha / |y_w|) log pi(y_w|x)`.
pub fn alpha_dpo_loss<T: Scalar, P: Policy<T>, R: Policy<T>>(
    triple: &PreferenceTriple,
    policy: &P,
    reference: &FrozenPolicy<R>,
    beta: T,
    alpha: T,
) -> Result<LossBreakdown<T>> {
    check_alpha(alpha)?;
    let mut b = dpo_loss(triple, policy, reference, beta)?;
    let lw = logprob(policy, &triple.prompt, &triple.chosen)?;
    b.loss += sft_term(alpha, lw, triple.chosen.len());
    Ok(b)
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if alpha.is_finite() && alpha >= T::zero() {
        Ok(())
    } else {
        Err(Error::domain(format!("alpha must be >= 0, got {alpha}")))
    }
}

fn sft_term<T: Scalar>(alpha: T, chosen_logprob: T, chosen_len: usize) -> T {
    -(alpha / T::of_usize(chosen_len)) * chosen_logprob
}

/// Coefficients of the shifted-DPO gradient:
/// `c1 = beta * sigmoid(f beta r_l - beta r_w)` and `c2 = f c1`.
pub fn gradient_coefficients<T: Scalar>(b: &LossBreakdown<T>, beta: T) -> (T, T) {
    let c1 = beta * sigmoid(-b.margin_argument);
    (c1, b.f_value * c1)
}

/// Everything the training loop needs from one triple.
#[derive(Debug, Clone)]
pub struct SampleObjective<T> {
    pub breakdown: LossBreakdown<T>,
    pub c1: T,
    pub c2: T,
    pub chosen_logprob: T,
    pub rejected_logprob: T,
    /// Gradient of the loss with respect to the policy parameters.
    pub grad: SparseGrad<T>,
}

/// Loss and sparse gradient of one triple under the configured objective,
/// using cached reference log-probabilities. `f` is ignored for the plain
/// DPO and alpha-DPO kinds.
pub fn sample_objective<T: Scalar, P: Policy<T>>(
    kind: ObjectiveKind,
    triple: &PreferenceTriple,
    policy: &P,
    reference: RefLogprobs<T>,
    beta: T,
    f: T,
    alpha: T,
) -> Result<SampleObjective<T>> {
    check_beta(beta)?;
    let f = match kind {
        ObjectiveKind::DpoShift => {
            check_f(f)?;
            f
        }
        ObjectiveKind::Dpo | ObjectiveKind::AlphaDpo => T::one(),
    };
    let (lw, gw) = logprob_and_grad(policy, &triple.prompt, &triple.chosen)?;
    let (ll, gl) = logprob_and_grad(policy, &triple.prompt, &triple.rejected)?;
    let mut breakdown = shift_breakdown(lw - reference.chosen, ll - reference.rejected, beta, f);
    let (c1, c2) = gradient_coefficients(&breakdown, beta);
    // d loss / d theta = -(c1 grad log pi(y_w) - c2 grad log pi(y_l))
    let mut grad = gw.scaled(-c1);
    grad.add_scaled(&gl, c2);
    if kind == ObjectiveKind::AlphaDpo {
        check_alpha(alpha)?;
        breakdown.loss += sft_term(alpha, lw, triple.chosen.len());
        grad.add_scaled(&gw, -(alpha / T::of_usize(triple.chosen.len())));
    }
    Ok(SampleObjective {
        breakdown,
        c1,
        c2,
        chosen_logprob: lw,
        rejected_logprob: ll,
        grad,
    })
}

/// Closed-form dense gradient of [`dpo_shift_loss`] with respect to the
/// policy parameters.
pub fn objective_gradient<T: Scalar, P: Policy<T>, R: Policy<T>>(
    triple: &PreferenceTriple,
    policy: &P,
    reference: &FrozenPolicy<R>,
    beta: T,
    f: T,
) -> Result<Vec<T>> {
    check_f(f)?;
    let r = ref_logprobs(triple, reference)?;
    let s = sample_objective(ObjectiveKind::DpoShift, triple, policy, r, beta, f, T::zero())?;
    Ok(s.grad.to_dense(policy.dim()))
}
