//! Finite-difference gradient oracle.

use super::{Array, Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Array,
    pub numeric: Array,
    /// `max_k |analytic_k - numeric_k| / (|analytic_k| + 1e-8)`.
    pub max_rel_error: f64,
}

fn eval(f: &dyn Fn(&mut Tape, Var) -> Result<Var>, x: &Array) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Shape(format!("objective returned {:?}", v.shape())));
    }
    let y = v.data()[0];
    if !y.is_finite() {
        return Err(Error::NonFinite("objective value".into()));
    }
    Ok(y)
}

/// Central differences of a scalar objective, one component at a time.
pub fn central_difference(f: &dyn Fn(&mut Tape, Var) -> Result<Var>, x: &Array, eps: f64) -> Result<Array> {
    let mut numeric = Array::zeros(x.shape());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + eps;
        let up = eval(f, &probe)?;
        probe.data_mut()[k] = orig - eps;
        let down = eval(f, &probe)?;
        probe.data_mut()[k] = orig;
        numeric.data_mut()[k] = (up - down) / (2.0 * eps);
    }
    Ok(numeric)
}

/// Compares the tape gradient of `f` at `x` against central differences.
pub fn grad_check(f: impl Fn(&mut Tape, Var) -> Result<Var>, x: &Array, eps: f64) -> Result<GradCheck> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!("step {eps} outside [1e-7, 1e-4]")));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    if !tape.value(out).all_finite() {
        return Err(Error::NonFinite("objective value".into()));
    }
    let analytic = tape.backward(out)?.get(xv);
    let numeric = central_difference(&f, x, eps)?;
    let max_rel_error = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / (a.abs() + 1e-8))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        analytic,
        numeric,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use std::rc::Rc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::Mask;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array {
        Array::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn sum_of_squares() {
        let x = Array::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let check = grad_check(
            |t, x| {
                let xx = t.matmul_t(x, x)?;
                t.sum(xx)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(check.analytic.data(), &[2.0, 4.0, 6.0]);
        assert!(check.max_rel_error < 1e-7, "{}", check.max_rel_error);
    }

    #[test]
    fn masked_softmax_row_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 1, 5);
        let w = random(&mut rng, 1, 5);
        let mask = Rc::new(Mask::from_fn(1, 5, |_, j| j != 2));
        let check = grad_check(
            |t, x| {
                let p = t.masked_softmax(x, mask.clone())?;
                t.dot_const(p, w.clone())
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-4, "{}", check.max_rel_error);
        assert_eq!(check.analytic.data()[2], 0.0);
    }

    #[test]
    fn every_primitive_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random(&mut rng, 4, 3);
        let gamma = random(&mut rng, 1, 4);
        let beta = random(&mut rng, 1, 4);
        let proj = random(&mut rng, 3, 3);
        let x = random(&mut rng, 3, 4);
        let check = grad_check(
            |t, x| {
                let bv = t.leaf(b.clone());
                let (g, be) = (t.leaf(gamma.clone()), t.leaf(beta.clone()));
                let n = t.layer_norm(x, g, be)?;
                let m = t.matmul(n, bv)?;
                let m2 = t.matmul_t(m, m)?;
                let s = t.scale(m2, 0.5)?;
                let row = t_row(t, &proj)?;
                let r = t.add_row(s, row)?;
                let l = t.log_softmax(r)?;
                let h = t.slice_cols(l, 1, 2)?;
                let cat = t.concat_cols(&[h, l])?;
                let e = t.embed(cat, &[2, 0, 2])?;
                let loss = t.smoothed_nll(l, &[0, 2, 1], 0.1)?;
                let z = t.sum(e)?;
                t.add(loss, z)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-4, "{}", check.max_rel_error);
    }

    fn t_row(t: &mut Tape, proj: &Array) -> Result<Var> {
        Ok(t.leaf(Array::matrix(1, 3, proj.row(0).to_vec())?))
    }

    #[test]
    fn rejects_out_of_range_step() {
        let x = Array::scalar(1.0);
        assert!(grad_check(|t, x| t.sum(x), &x, 1e-2).is_err());
    }

    #[test]
    fn nonfinite_objective_is_an_error() {
        let x = Array::scalar(1e300);
        let err = grad_check(|t, x| t.mul_const(x, Array::scalar(1e300)), &x, 1e-5);
        assert!(err.is_err());
    }
}
