use ndarray::{Array2, Zip};

use super::param::Parameters;
use super::real::Real;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Array2<T>>,
    second: Vec<Array2<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<P: Parameters<T>>(params: &P, learning_rate: f64) -> Self {
        let zeros = |p: &P| p.tensors().iter().map(|t| Array2::zeros(t.raw_dim())).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) {
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let c1 = T::of(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.epsilon);
        let one = T::one();
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use rand::SeedableRng;

    #[test]
    fn minimizes_a_quadratic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::<f64>::new(2, 1, &mut rng);
        let mut opt = Adam::new(&lin, 0.05);
        for _ in 0..2000 {
            // d/dw (w - 3)^2
            let mut g = lin.zeros_like();
            g.weight = lin.weight.mapv(|w| 2.0 * (w - 3.0));
            g.bias = lin.bias.mapv(|b| 2.0 * (b + 1.0));
            opt.update(&mut lin, &g);
        }
        assert!(lin.weight.iter().all(|w| (w - 3.0).abs() < 1e-3));
        assert!((lin.bias[[0, 0]] + 1.0).abs() < 1e-3);
    }
}
