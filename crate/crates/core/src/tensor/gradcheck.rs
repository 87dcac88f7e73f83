//! Central finite-difference verification of tape gradients.

use super::{OpKind, Tape, Tensor, TensorError, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_error: f64,
    pub checked: usize,
    /// coordinates whose ±eps perturbation crossed a relu kink or a max tie
    pub skipped: usize,
    /// (input, flat coordinate) of the worst error
    pub worst: Option<(usize, usize)>,
}

/// Compares the tape gradient of a scalar-valued `f` at `x` against
/// central differences with step `eps`, returning the max relative error.
pub fn grad_check<T, E, F>(f: F, x: &Tensor<T>, eps: T) -> Result<f64, E>
where
    T: Scalar,
    E: From<TensorError>,
    F: Fn(&mut Tape<T>, Var) -> Result<Var, E>,
{
    let report = grad_check_many(|t, vs| f(t, vs[0]), std::slice::from_ref(x), eps, None)?;
    Ok(report.max_rel_error)
}

/// Multi-input form of [`grad_check`]. With `fault` set, the analytic pass
/// runs on a tape whose backward rule for that op is sign-flipped.
pub fn grad_check_many<T, E, F>(
    f: F,
    inputs: &[Tensor<T>],
    eps: T,
    fault: Option<OpKind>,
) -> Result<GradCheckReport, E>
where
    T: Scalar,
    E: From<TensorError>,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, E>,
{
    let mut tape = fault.map_or_else(Tape::new, Tape::with_fault);
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let base_signature = tape.branch_signature();
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().expect("leaf gradient after backward"))
        .collect();
    drop(tape);

    let eval = |xs: &[Tensor<T>]| -> Result<(T, u64), E> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vs)?;
        Ok((t.value(out).item()?, t.branch_signature()))
    };

    let mut xs = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    for input in 0..xs.len() {
        for coord in 0..xs[input].numel() {
            let orig = xs[input].data()[coord];
            xs[input].data_mut()[coord] = orig + eps;
            let (fp, sp) = eval(&xs)?;
            xs[input].data_mut()[coord] = orig - eps;
            let (fm, sm) = eval(&xs)?;
            xs[input].data_mut()[coord] = orig;
            if sp != base_signature || sm != base_signature {
                report.skipped += 1;
                continue;
            }
            let numeric = ((fp - fm) / (eps + eps)).to_f64_lossless();
            let a = analytic[input].data()[coord].to_f64_lossless();
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((input, coord));
            }
        }
    }
    Ok(report)
}
