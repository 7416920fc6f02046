use super::{c, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Elementwise gradient clip interval, applied before the moment updates.
    pub clip: Option<(f64, f64)>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip: Some((-0.25, 0.25)) }
    }
}

/// First and second moments for every parameter tensor, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &[Tensor<F>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![F::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![F::zero(); p.len()]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update over all parameters.
pub fn adam_step<F: Real>(
    params: &mut [Tensor<F>],
    grads: &[Vec<F>],
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != p.len() || state.v[i].len() != p.len() {
            return Err(Error::shape("adam", format!("parameter {i}: {} vs {}", p.len(), g.len())));
        }
    }
    let (lo, hi) = cfg.clip.map(|(l, h)| (c::<F>(l), c::<F>(h))).unwrap_or((F::neg_infinity(), F::infinity()));
    // checked up front so a bad gradient leaves parameters and moments untouched;
    // NaN is tested before clipping, which would otherwise absorb it
    let clipped_ok = |x: F| !x.is_nan() && x.max(lo).min(hi).is_finite();
    if !grads.iter().flatten().all(|&x| clipped_ok(x)) {
        return Err(Error::NonFinite { op: "adam gradient" });
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (c::<F>(cfg.beta1), c::<F>(cfg.beta2));
    let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
    let bc1 = c::<F>(1.0 - cfg.beta1.powf(t));
    let bc2 = c::<F>(1.0 - cfg.beta2.powf(t));
    let lr = c::<F>(cfg.lr);
    let eps = c::<F>(cfg.eps);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j].max(lo).min(hi);
            m[j] = b1 * m[j] + one_b1 * gj;
            v[j] = b2 * v[j] + one_b2 * gj * gj;
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            *w = *w - lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![Tensor::vector(vec![0.5f64, -1.0, 2.0])];
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vec![0.0; 3]], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.m[0], vec![0.0; 3]);
        assert_eq!(st.v[0], vec![0.0; 3]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn large_gradient_saturates_at_clip_bound() {
        let cfg = AdamConfig::default();
        let mut a = vec![Tensor::scalar(1.0f64)];
        let mut b = a.clone();
        let (mut sa, mut sb) = (AdamState::new(&a), AdamState::new(&b));
        adam_step(&mut a, &[vec![5.0]], &mut sa, &cfg).unwrap();
        adam_step(&mut b, &[vec![0.25]], &mut sb, &cfg).unwrap();
        assert_eq!(sa.m[0][0], sb.m[0][0]);
        assert!((sa.m[0][0] - 0.1 * 0.25).abs() < 1e-15);
        assert_eq!(a, b);
    }

    #[test]
    fn matches_scalar_reference() {
        // Textbook Adam written out for one scalar, no clipping.
        fn reference(mut w: f64, grads: &[f64], lr: f64) -> f64 {
            let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
            let (mut m, mut v) = (0.0, 0.0);
            for (k, g) in grads.iter().enumerate() {
                let t = (k + 1) as i32;
                m = b1 * m + (1.0 - b1) * g;
                v = b2 * v + (1.0 - b2) * g * g;
                let mh = m / (1.0 - b1.powi(t));
                let vh = v / (1.0 - b2.powi(t));
                w -= lr * mh / (vh.sqrt() + eps);
            }
            w
        }
        let cfg = AdamConfig { clip: None, ..AdamConfig::default() };
        let mut p = vec![Tensor::scalar(0.3f64)];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vec![1.0]], &mut st, &cfg).unwrap();
        assert!((p[0].data()[0] - reference(0.3, &[1.0], 1e-4)).abs() < 1e-12);
        let gs = [1.0, -0.5, 0.25, 2.0];
        for g in &gs[1..] {
            adam_step(&mut p, &[vec![*g]], &mut st, &cfg).unwrap();
        }
        assert!((p[0].data()[0] - reference(0.3, &gs, 1e-4)).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        for cfg in [AdamConfig { clip: None, ..AdamConfig::default() }, AdamConfig::default()] {
            let mut p = vec![Tensor::scalar(0.0f32)];
            let mut st = AdamState::new(&p);
            assert!(adam_step(&mut p, &[vec![f32::NAN]], &mut st, &cfg).is_err());
        }
    }
}
