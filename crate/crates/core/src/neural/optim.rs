use super::{check_shapes, GradientSet, Parameterized};
use crate::{Error, Result};

/// A first-order parameter update rule. Implementations descend: they move
/// parameters against the gradient.
pub trait Optimizer {
    fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P, grads: &GradientSet, lr: f64) -> Result<()>;
}

/// Plain gradient descent, `w <- w - lr * g`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Sgd;

impl Optimizer for Sgd {
    fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P, grads: &GradientSet, lr: f64) -> Result<()> {
        let mut tensors = params.tensors_mut();
        let shapes: Vec<usize> = tensors.iter().map(|t| t.len()).collect();
        check_shapes(&shapes, &grads.tensors.iter().map(|g| g.as_slice()).collect::<Vec<_>>())?;
        for (t, g) in tensors.iter_mut().zip(&grads.tensors) {
            for (w, d) in t.iter_mut().zip(g) {
                *w -= lr * d;
            }
        }
        Ok(())
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

impl Optimizer for Adam {
    fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P, grads: &GradientSet, lr: f64) -> Result<()> {
        let mut tensors = params.tensors_mut();
        let shapes: Vec<usize> = tensors.iter().map(|t| t.len()).collect();
        check_shapes(&shapes, &grads.tensors.iter().map(|g| g.as_slice()).collect::<Vec<_>>())?;
        if self.m.is_empty() {
            self.m = shapes.iter().map(|&n| vec![0.0; n]).collect();
            self.v = self.m.clone();
        } else if self.m.iter().map(Vec::len).ne(shapes.iter().copied()) {
            return Err(Error::Config("Adam state belongs to a different network".into()));
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (((t, g), m), v) in tensors.iter_mut().zip(&grads.tensors).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..t.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                t[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Polyak averaging, `target <- rho * target + (1 - rho) * online`.
pub fn soft_update<P: Parameterized>(target: &mut P, online: &P, rho: f64) -> Result<()> {
    let src = online.tensors();
    let mut dst = target.tensors_mut();
    let shapes: Vec<usize> = dst.iter().map(|t| t.len()).collect();
    check_shapes(&shapes, &src)?;
    for (d, s) in dst.iter_mut().zip(src) {
        for (t, o) in d.iter_mut().zip(s) {
            *t = rho * *t + (1.0 - rho) * o;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, DenseNet};

    fn scalar(w: f64) -> DenseNet {
        let mut n = DenseNet::zeros(&[1, 1], &[Activation::Identity]).unwrap();
        n.layers_mut()[0].weights[0] = w;
        n
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = DenseNet::new(&[3, 4, 2], &[Activation::Tanh, Activation::Identity], 2).unwrap();
        let before = net.clone();
        let g = net.zero_grads();
        Sgd.step(&mut net, &g, 0.5).unwrap();
        assert_eq!(net, before);
        Adam::default().step(&mut net, &g, 0.5).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn scalar_descent_step() {
        let mut net = scalar(1.0);
        let g = GradientSet {
            tensors: vec![vec![0.5], vec![0.0]],
        };
        Sgd.step(&mut net, &g, 0.1).unwrap();
        assert_eq!(net.layers()[0].weights[0], 0.95);
    }

    #[test]
    fn identical_inputs_give_identical_updates() {
        let mut a = DenseNet::new(&[2, 3, 1], &[Activation::Tanh, Activation::Identity], 8).unwrap();
        let mut b = a.clone();
        let (_, cache) = a.forward(&[0.2, 0.9]).unwrap();
        let (g, _) = a.backward(&cache, &[1.0]).unwrap();
        let (mut oa, mut ob) = (Adam::default(), Adam::default());
        for _ in 0..3 {
            oa.step(&mut a, &g, 0.01).unwrap();
            ob.step(&mut b, &g, 0.01).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut net = scalar(1.0);
        let g = GradientSet {
            tensors: vec![vec![0.5, 0.1], vec![0.0]],
        };
        assert!(Sgd.step(&mut net, &g, 0.1).is_err());
    }

    #[test]
    fn soft_update_formula() {
        let mut target = scalar(2.0);
        let online = scalar(1.0);
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target.layers()[0].weights[0], 2.0);
        soft_update(&mut target, &online, 0.5).unwrap();
        assert_eq!(target.layers()[0].weights[0], 1.5);
        soft_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target, online);
    }
}
