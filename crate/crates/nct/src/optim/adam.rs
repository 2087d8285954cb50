//! Parameter update rules: Adam with bias correction, plus a plain-SGD
//! mode used by the gradient-check suite.

use crate::autodiff::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

pub struct Optimizer {
    kind: OptimizerKind,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: usize,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, shapes: &[(usize, usize)]) -> Self {
        let zeros: Vec<Mat> = shapes.iter().map(|&(r, c)| Mat::zeros((r, c))).collect();
        Optimizer {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [Mat], grads: &[Mat], lr: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= &(lr * g);
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let corr1 = 1.0 - self.beta1.powi(t);
                let corr2 = 1.0 - self.beta2.powi(t);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    m.zip_mut_with(g, |mv, gv| *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv);
                    v.zip_mut_with(g, |vv, gv| {
                        *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv
                    });
                    ndarray::Zip::from(p)
                        .and(&*m)
                        .and(&*v)
                        .for_each(|pv, &mv, &vv| {
                            let m_hat = mv / corr1;
                            let v_hat = vv / corr2;
                            *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
                        });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_is_plain_descent() {
        let mut params = vec![Mat::from_elem((2, 2), 1.0)];
        let grads = vec![Mat::from_elem((2, 2), 0.5)];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &[(2, 2)]);
        opt.update(&mut params, &grads, 0.1);
        for v in params[0].iter() {
            assert!((v - 0.95).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // with bias correction the first Adam step is lr * sign(g)
        let mut params = vec![Mat::from_elem((1, 3), 0.0)];
        let grads = vec![Mat::from_shape_fn((1, 3), |(_, c)| [2.0, -0.3, 1e-4][c])];
        let mut opt = Optimizer::new(OptimizerKind::Adam, &[(1, 3)]);
        opt.update(&mut params, &grads, 0.01);
        assert!((params[0][[0, 0]] + 0.01).abs() < 1e-6);
        assert!((params[0][[0, 1]] - 0.01).abs() < 1e-6);
        assert!(params[0][[0, 2]] < 0.0);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut params = vec![Mat::from_elem((1, 1), 3.0)];
        let mut opt = Optimizer::new(OptimizerKind::Adam, &[(1, 1)]);
        for _ in 0..2000 {
            let g = vec![params[0].mapv(|x| 2.0 * x)];
            opt.update(&mut params, &g, 0.01);
        }
        assert!(params[0][[0, 0]].abs() < 1e-2);
    }
}
