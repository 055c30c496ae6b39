use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Adam {
            lr,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Returns the updated parameters.
    pub fn update(&mut self, params: &[Tensor], grads: &[Tensor]) -> Result<Vec<Tensor>> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let mut out = Vec::with_capacity(params.len());
        for ((p, g), (m, v)) in params
            .iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let nm = m.zip_map(g, |m, g| ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g)?;
            let nv = v.zip_map(g, |v, g| ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g)?;
            let data: Vec<f64> = p
                .data()
                .iter()
                .zip(nm.data().iter().zip(nv.data()))
                .map(|(&p, (&m, &v))| p - self.lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS))
                .collect();
            out.push(Tensor::new(p.shape().to_vec(), data)?);
            *m = nm;
            *v = nv;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let p = vec![Tensor::vector(vec![1.0, -2.0])];
        let g = vec![Tensor::vector(vec![3.0, -0.5])];
        let mut adam = Adam::new(0.1, &p);
        let next = adam.update(&p, &g).unwrap();
        assert!((next[0].data()[0] - 0.9).abs() < 1e-7);
        assert!((next[0].data()[1] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = vec![Tensor::vector(vec![5.0])];
        let mut adam = Adam::new(0.1, &p);
        for _ in 0..500 {
            let g = vec![p[0].scale(2.0)];
            p = adam.update(&p, &g).unwrap();
        }
        assert!(p[0].data()[0].abs() < 1e-2);
    }
}
