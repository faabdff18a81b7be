use alloc::vec::Vec;

use super::{Result, Tape, Tensor, Var};

/// Largest relative error between reverse-mode gradients and central
/// differences with step `h`, over every entry of every parameter:
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e−5)`.
/// Below the floor the comparison is effectively absolute.
///
/// `f` must rebuild the same scalar function on a fresh tape each call. Kinks
/// such as LeakyReLU at 0 defeat central differences when an input sits
/// within `h` of them; perturb such inputs away first.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for k in 0..params[pi].len() {
            let orig = params[pi].data()[k];
            work[pi].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_is_exact() {
        let w = Tensor::matrix(2, 3, alloc::vec![0.5, -1.0, 2.0, 0.1, 0.2, -0.3]);
        let err = grad_check(
            |t, v| {
                let x = t.constant(Tensor::matrix(3, 1, alloc::vec![1.0, -2.0, 0.5]));
                let y = t.matmul(v[0], x)?;
                let y = t.add_scalar(y, 4.0);
                Ok(t.sum(y))
            },
            &[w],
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }
}
