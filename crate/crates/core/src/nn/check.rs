//! Central finite-difference gradient verification.
//!
//! The builder closure must be a deterministic function of the leaf values:
//! any noise (dropout masks, Gumbel noise, sampled indices) has to be fixed
//! outside and passed in as constants.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Default step for central differences.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Compares reverse-mode gradients of a scalar-valued graph against central
/// finite differences, returning the maximum relative error over every
/// element of every leaf.
pub fn max_grad_error<B>(leaves: &[Tensor<f64>], eps: f64, build: B) -> f64
where
    B: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    assert_eq!(tape.numel(loss), 1, "grad check target must be scalar");
    assert!(tape.fault().is_none(), "forward fault: {:?}", tape.fault());
    let grads = tape.backward(loss);
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get(v).to_vec()).collect();

    let eval = |perturbed: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone())).collect();
        let l = build(&mut t, &vs);
        t.scalar_value(l)
    };

    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    for li in 0..leaves.len() {
        for j in 0..leaves[li].numel() {
            let orig = work[li].data()[j];
            work[li].data_mut()[j] = orig + eps;
            let f_plus = eval(&work);
            work[li].data_mut()[j] = orig - eps;
            let f_minus = eval(&work);
            work[li].data_mut()[j] = orig;
            let fd = (f_plus - f_minus) / (2.0 * eps);
            let ad = analytic[li][j];
            let denom = ad.abs().max(fd.abs()).max(1e-4);
            let rel = (ad - fd).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    max_rel
}
