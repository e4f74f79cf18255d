//! Adaptive moment estimation over the flat parameter slices of a model.

use crate::gcn::Params;
use crate::num::Scalar;

#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    epsilon: T,
    t: i32,
    m: Params<T>,
    v: Params<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(hidden: usize, lr: T, beta1: T, beta2: T, epsilon: T) -> Self {
        Adam { lr, beta1, beta2, epsilon, t: 0, m: Params::zeros(hidden), v: Params::zeros(hidden) }
    }

    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>) {
        self.t += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t);
        let bc2 = one - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
