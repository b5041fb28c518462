use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Bias-corrected Adam moments for an ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            step_count: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update. Gradients are read, never cleared.
pub fn adam_step(params: &[Tensor], state: &mut AdamState, learning_rate: f64) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::Dimension(format!(
            "optimizer tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    let grads = params
        .iter()
        .enumerate()
        .map(|(i, p)| p.grad().ok_or(Error::UninitializedGradient(i)))
        .collect::<Result<Vec<_>>>()?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let mut data = p.data_mut();
        for k in 0..data.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            data[k] -= learning_rate * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &[Tensor], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(Tensor::grad)
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for p in params {
            if let Some(g) = p.grad() {
                p.set_grad(Some(g.iter().map(|x| x * s).collect()));
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        for g in [3.0, -0.02] {
            let p = Tensor::param(&[1], vec![1.0]).unwrap();
            p.set_grad(Some(vec![g]));
            let mut st = AdamState::new(std::slice::from_ref(&p));
            adam_step(std::slice::from_ref(&p), &mut st, 0.01).unwrap();
            let delta = p.item() - 1.0;
            assert!((delta + 0.01 * f64::signum(g)).abs() < 1e-8, "{delta}");
            assert_eq!(p.grad().unwrap(), vec![g]);
        }
    }

    #[test]
    fn zero_gradient_leaves_param() {
        let p = Tensor::param(&[2], vec![1.0, -2.0]).unwrap();
        p.set_grad(Some(vec![0.0, 0.0]));
        let mut st = AdamState::new(std::slice::from_ref(&p));
        adam_step(std::slice::from_ref(&p), &mut st, 0.1).unwrap();
        assert_eq!(p.to_vec(), vec![1.0, -2.0]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let p = Tensor::param(&[1], vec![1.0]).unwrap();
        let mut st = AdamState::new(std::slice::from_ref(&p));
        assert!(matches!(
            adam_step(&[p], &mut st, 0.1),
            Err(Error::UninitializedGradient(0))
        ));
    }

    #[test]
    fn minimizes_shifted_quadratic() {
        let p = Tensor::param(&[1], vec![0.0]).unwrap();
        let params = [p.clone()];
        let mut st = AdamState::new(&params);
        let mut losses = Vec::new();
        for _ in 0..100 {
            p.zero_grad();
            let d = ops::add_scalar(&p, -3.0);
            let loss = ops::sum(&ops::mul(&d, &d).unwrap());
            losses.push(loss.item());
            loss.backward().unwrap();
            adam_step(&params, &mut st, 0.1).unwrap();
        }
        assert!((p.item() - 3.0).abs() < 0.05, "ended at {}", p.item());
        assert!(losses.last() < losses.first());
    }

    #[test]
    fn clipping_bounds_norm() {
        let p = Tensor::param(&[2], vec![0.0, 0.0]).unwrap();
        p.set_grad(Some(vec![30.0, 40.0]));
        let before = clip_grad_norm(std::slice::from_ref(&p), 10.0);
        assert_eq!(before, 50.0);
        let g = p.grad().unwrap();
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
    }
}
