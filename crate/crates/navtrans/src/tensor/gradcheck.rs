//! Central finite-difference verification of tape gradients.

use super::{Tape, Tensor, Val};

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub tol: f64,
    pub step: f64,
    /// (input index, element index) pairs where a non-finite value appeared.
    pub non_finite: Vec<(usize, usize)>,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn assert_pass(&self) {
        assert!(
            self.pass,
            "gradient check failed: max relative error {:.3e} > tol {:.1e}, non-finite: {:?}",
            self.max_rel_err, self.tol, self.non_finite
        );
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Compares the tape's analytic gradient of a scalar function against
/// central finite differences, element by element over every input.
///
/// `f` must rebuild the same computation each call from the leafed inputs.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Val]) -> Val,
{
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        tol,
        step,
        non_finite: Vec::new(),
        pass: true,
    };

    let tracked: Vec<Tensor> = inputs.iter().map(|t| t.clone().with_grad()).collect();

    // Analytic pass.
    let mut tape = Tape::new();
    let vals: Vec<Val> = tracked.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vals);
    assert_eq!(tape.data(loss).len(), 1, "grad_check: f must return a scalar");
    tape.backward(loss).expect("grad_check: backward failed");
    let analytic: Vec<Vec<f64>> = vals
        .iter()
        .map(|&v| tape.grad(v).expect("grad populated").to_vec())
        .collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Val> = perturbed.iter().map(|x| t.frozen(x)).collect();
        let out = f(&mut t, &vs);
        t.scalar_value(out)
    };

    let mut work = tracked.clone();
    for (i, input) in tracked.iter().enumerate() {
        for e in 0..input.numel() {
            let orig = input.data()[e];
            work[i].data_mut()[e] = orig + step;
            let up = eval(&work);
            work[i].data_mut()[e] = orig - step;
            let down = eval(&work);
            work[i].data_mut()[e] = orig;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic[i][e];
            if !numeric.is_finite() || !a.is_finite() {
                report.non_finite.push((i, e));
                report.pass = false;
                continue;
            }
            let err = rel_err(a, numeric);
            if err > report.max_rel_err {
                report.max_rel_err = err;
            }
        }
    }
    if report.max_rel_err > tol {
        report.pass = false;
    }
    report
}
