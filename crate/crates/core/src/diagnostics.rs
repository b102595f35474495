//! One-step gap analysis between shifted DPO and plain DPO.
//!
//! Two target functions are tracked: the mean chosen log-likelihood
//! (`omega1`) and the fraction of pairs whose implicit-reward margin is
//! positive (`omega2_hard`), with a sigmoid-smoothed version (`omega2_smooth`)
//! for the differentiable analysis.
//!
//! For one gradient step of size `eta` from the same parameters, the shift
//! changes the update by `eta (1 - f) c1 grad log pi(y_l)` per sample, so to
//! first order
//!
//! ```text
//! g1 = (1 - f) eta mean_i[ c1_i <grad_l_i, grad_w_i> ]
//! g2 = (1 - f) eta mean_i[ kappa_i c1_i (<grad_l_i, grad_w_i> - |grad_l_i|^2) ]
//! ```
//!
//! with `kappa_i = gamma sigmoid(gamma m_i) sigmoid(-gamma m_i)` the slope of
//! the smoothed indicator. The per-sample records also carry the
//! `c_theta`/`eta1`-weighted terms `u1`, `u2` whose signs drive the analysis.

use serde::{Deserialize, Serialize};

use crate::data::PreferenceTriple;
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::objectives::{ref_logprobs, shift_breakdown, gradient_coefficients, RefLogprobs};
use crate::policy::{logprob, logprob_and_grad, FrozenPolicy, Policy, SparseGrad, TrainablePolicy};
use crate::scalar::Scalar;

fn non_empty<T>(dataset: &[T], what: &str) -> Result<()> {
    if dataset.is_empty() {
        Err(Error::domain(format!("{what}: empty dataset")))
    } else {
        Ok(())
    }
}

/// Mean chosen log-likelihood.
pub fn omega1<T: Scalar, P: Policy<T>>(policy: &P, dataset: &[PreferenceTriple]) -> Result<T> {
    non_empty(dataset, "omega1")?;
    let mut total = T::zero();
    for r in dataset {
        total += logprob(policy, &r.prompt, &r.chosen)?;
    }
    Ok(total / T::of_usize(dataset.len()))
}

/// `(log pi(y_w)/pi_ref(y_w)) - (log pi(y_l)/pi_ref(y_l))` for one record.
pub fn logratio_margin<T: Scalar, P: Policy<T>, R: Policy<T>>(
    policy: &P,
    reference: &FrozenPolicy<R>,
    r: &PreferenceTriple,
) -> Result<T> {
    let rl = ref_logprobs(r, reference)?;
    let w = logprob(policy, &r.prompt, &r.chosen)?;
    let l = logprob(policy, &r.prompt, &r.rejected)?;
    Ok((w - rl.chosen) - (l - rl.rejected))
}

/// Fraction of records with strictly positive log-ratio margin.
pub fn omega2_hard<T: Scalar, P: Policy<T>, R: Policy<T>>(
    policy: &P,
    reference: &FrozenPolicy<R>,
    dataset: &[PreferenceTriple],
) -> Result<T> {
    non_empty(dataset, "omega2_hard")?;
    let mut hits = 0usize;
    for r in dataset {
        if logratio_margin(policy, reference, r)? > T::zero() {
            hits += 1;
        }
    }
    Ok(T::of_usize(hits) / T::of_usize(dataset.len()))
}

/// Mean of `sigmoid(gamma * margin)`.
pub fn omega2_smooth<T: Scalar, P: Policy<T>, R: Policy<T>>(
    policy: &P,
    reference: &FrozenPolicy<R>,
    dataset: &[PreferenceTriple],
    gamma: T,
) -> Result<T> {
    non_empty(dataset, "omega2_smooth")?;
    check_positive(gamma, "gamma")?;
    let mut total = T::zero();
    for r in dataset {
        total += sigmoid(gamma * logratio_margin(policy, reference, r)?);
    }
    Ok(total / T::of_usize(dataset.len()))
}

fn check_positive<T: Scalar>(v: T, what: &str) -> Result<()> {
    if v.is_finite() && v > T::zero() {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must be > 0, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord<T> {
    pub id: u64,
    /// `gamma * sigmoid(f gamma r_l - gamma r_w)`.
    pub c_theta: T,
    /// `eta * sigmoid(r_l - r_w)`.
    pub eta1: T,
    /// `<grad log pi(y_l), grad log pi(y_w)>`.
    pub dot_wl: T,
    /// `|grad log pi(y_l)|^2`.
    pub norm_l_sq: T,
    pub norm_w_sq: T,
    pub chosen_logratio: T,
    pub rejected_logratio: T,
    /// `c_theta * dot_wl`.
    pub u1: T,
    /// `eta1 * (dot_wl - norm_l_sq)`.
    pub u2: T,
}

struct Gradients<T> {
    ref_lp: RefLogprobs<T>,
    lw: T,
    ll: T,
    gw: SparseGrad<T>,
    gl: SparseGrad<T>,
}

fn gradients<T: Scalar, P: Policy<T>, R: Policy<T>>(
    triple: &PreferenceTriple,
    policy: &P,
    reference: &FrozenPolicy<R>,
) -> Result<Gradients<T>> {
    let ref_lp = ref_logprobs(triple, reference)?;
    let (lw, gw) = logprob_and_grad(policy, &triple.prompt, &triple.chosen)?;
    let (ll, gl) = logprob_and_grad(policy, &triple.prompt, &triple.rejected)?;
    Ok(Gradients { ref_lp, lw, ll, gw, gl })
}

fn record_from<T: Scalar>(id: u64, g: &Gradients<T>, f: T, gamma: T, eta: T) -> DiagnosticsRecord<T> {
    let rw = g.lw - g.ref_lp.chosen;
    let rl = g.ll - g.ref_lp.rejected;
    let c_theta = gamma * sigmoid(f * gamma * rl - gamma * rw);
    let eta1 = eta * sigmoid(rl - rw);
    let dot_wl = g.gl.dot(&g.gw);
    let norm_l_sq = g.gl.norm_sq();
    DiagnosticsRecord {
        id,
        c_theta,
        eta1,
        dot_wl,
        norm_l_sq,
        norm_w_sq: g.gw.norm_sq(),
        chosen_logratio: rw,
        rejected_logratio: rl,
        u1: c_theta * dot_wl,
        u2: eta1 * (dot_wl - norm_l_sq),
    }
}

pub fn sample_diagnostics<T: Scalar, P: Policy<T>, R: Policy<T>>(
    triple: &PreferenceTriple,
    policy: &P,
    reference: &FrozenPolicy<R>,
    f: T,
    gamma: T,
    eta: T,
) -> Result<DiagnosticsRecord<T>> {
    check_positive(f, "f")?;
    check_positive(gamma, "gamma")?;
    check_positive(eta, "eta")?;
    let g = gradients(triple, policy, reference)?;
    Ok(record_from(triple.id, &g, f, gamma, eta))
}

pub fn dataset_diagnostics<T: Scalar, P: Policy<T>, R: Policy<T>>(
    dataset: &[PreferenceTriple],
    policy: &P,
    reference: &FrozenPolicy<R>,
    f: T,
    gamma: T,
    eta: T,
) -> Result<Vec<DiagnosticsRecord<T>>> {
    dataset
        .iter()
        .map(|r| sample_diagnostics(r, policy, reference, f, gamma, eta))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignStatistics<T> {
    pub frac_u1_positive: T,
    pub frac_u2_negative: T,
    pub mean_u1: T,
    pub mean_u2: T,
}

pub fn sign_statistics<T: Scalar>(records: &[DiagnosticsRecord<T>]) -> Result<SignStatistics<T>> {
    non_empty(records, "sign_statistics")?;
    let n = T::of_usize(records.len());
    let pos = records.iter().filter(|r| r.u1 > T::zero()).count();
    let neg = records.iter().filter(|r| r.u2 < T::zero()).count();
    Ok(SignStatistics {
        frac_u1_positive: T::of_usize(pos) / n,
        frac_u2_negative: T::of_usize(neg) / n,
        mean_u1: records.iter().map(|r| r.u1).sum::<T>() / n,
        mean_u2: records.iter().map(|r| r.u2).sum::<T>() / n,
    })
}

/// Measured and first-order-predicted one-step gaps for one `(f, eta)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport<T> {
    pub f: T,
    pub eta: T,
    pub beta: T,
    pub gamma: T,
    pub g1_measured: T,
    pub g2_measured: T,
    pub g1_predicted: T,
    pub g2_predicted: T,
    pub residual1: T,
    pub residual2: T,
    /// `mean_i c1_i <grad_l_i, grad_w_i>`, so that `g1_predicted = (1 - f) eta u1_bar`.
    pub u1_bar: T,
    /// `mean_i kappa_i c1_i (<grad_l_i, grad_w_i> - |grad_l_i|^2)`.
    pub u2_bar: T,
}

/// Parameters after one ascent step on the shifted objective of one sample.
fn step_params<T: Scalar>(
    g: &Gradients<T>,
    beta: T,
    f: T,
    eta: T,
) -> (SparseGrad<T>, T) {
    let b = shift_breakdown(g.lw - g.ref_lp.chosen, g.ll - g.ref_lp.rejected, beta, f);
    let (c1, c2) = gradient_coefficients(&b, beta);
    let mut dir = g.gw.scaled(c1);
    dir.add_scaled(&g.gl, -c2);
    (dir.scaled(eta), c1)
}

/// Chosen log-prob and smoothed margin indicator of one sample at `policy`.
fn targets<T: Scalar, P: Policy<T>>(policy: &P, r: &PreferenceTriple, ref_lp: &RefLogprobs<T>, gamma: T) -> Result<(T, T)> {
    let w = logprob(policy, &r.prompt, &r.chosen)?;
    let l = logprob(policy, &r.prompt, &r.rejected)?;
    Ok((w, sigmoid(gamma * ((w - ref_lp.chosen) - (l - ref_lp.rejected)))))
}

fn restore_rows<T: Scalar>(scratch: &mut crate::policy::PolicyParams<T>, orig: &crate::policy::PolicyParams<T>, touched: &SparseGrad<T>) {
    let v = orig.vocab();
    for (row, _) in touched.rows() {
        scratch.as_mut_slice()[row * v..(row + 1) * v].copy_from_slice(orig.row(row));
    }
}

/// Take one plain gradient-ascent step of size `eta` under the shifted
/// objective and, separately from the same parameters, under plain DPO, and
/// compare the change in `omega1` and `omega2_smooth` with the first-order
/// prediction.
///
/// The step is taken per sample: each record is stepped with its own
/// gradient and its targets are evaluated at its own updated parameters, and
/// the gaps are averaged over the dataset. This is the granularity at which
/// the first-order law holds exactly; a single full-batch step would add
/// cross-sample gradient interactions that the per-sample terms omit.
///
/// The prediction is exact to first order when the policy and reference
/// agree on every log-ratio (so `c1` is the same for both objectives), e.g.
/// at the start of preference optimization. Elsewhere the residual carries
/// an additional first-order term proportional to the `c1` mismatch.
pub fn measure_gaps<T, P, R>(
    policy: &P,
    reference: &FrozenPolicy<R>,
    dataset: &[PreferenceTriple],
    beta: T,
    f: T,
    gamma: T,
    eta: T,
) -> Result<GapReport<T>>
where
    T: Scalar,
    P: TrainablePolicy<T> + Clone,
    R: Policy<T>,
{
    non_empty(dataset, "measure_gaps")?;
    check_positive(beta, "beta")?;
    check_positive(f, "f")?;
    check_positive(gamma, "gamma")?;
    check_positive(eta, "eta")?;

    let mut scratch = policy.clone();
    let (mut g1, mut g2, mut u1, mut u2) = (T::zero(), T::zero(), T::zero(), T::zero());
    for r in dataset {
        let g = gradients(r, policy, reference)?;
        let mut at = |f: T| -> Result<(T, T, T)> {
            let (delta, c1) = step_params(&g, beta, f, eta);
            scratch.params_mut().add_sparse(&delta, T::one());
            if !scratch.params().all_finite() {
                return Err(Error::numeric(format!("non-finite parameters after a step with eta = {eta}")));
            }
            let (w, s) = targets(&scratch, r, &g.ref_lp, gamma)?;
            restore_rows(scratch.params_mut(), policy.params(), &delta);
            Ok((w, s, c1))
        };
        let (w_shift, s_shift, c1) = at(f)?;
        let (w_dpo, s_dpo, _) = at(T::one())?;
        g1 += w_shift - w_dpo;
        g2 += s_shift - s_dpo;

        let dot = g.gl.dot(&g.gw);
        let m = gamma * ((g.lw - g.ref_lp.chosen) - (g.ll - g.ref_lp.rejected));
        let kappa = gamma * sigmoid(m) * sigmoid(-m);
        u1 += c1 * dot;
        u2 += kappa * c1 * (dot - g.gl.norm_sq());
    }
    let n = T::of_usize(dataset.len());
    let (g1, g2, u1, u2) = (g1 / n, g2 / n, u1 / n, u2 / n);
    let scale = (T::one() - f) * eta;
    let (p1, p2) = (scale * u1, scale * u2);
    Ok(GapReport {
        f,
        eta,
        beta,
        gamma,
        g1_measured: g1,
        g2_measured: g2,
        g1_predicted: p1,
        g2_predicted: p2,
        residual1: (g1 - p1).abs(),
        residual2: (g2 - p2).abs(),
        u1_bar: u1,
        u2_bar: u2,
    })
}

/// Least-squares slope of `log(y)` against `log(x)`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::domain("need at least two paired points"));
    }
    if xs.iter().chain(ys).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::domain("log-log fit needs positive finite values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}
