use crate::poe::{kl_diag, DiagGaussian};
use crate::tensor::SeededRng;

/// One-step, one-dimensional linear-Gaussian latent model with a Gaussian
/// proposal: `z ~ N(prior_mean, prior_var)`, `x | z ~ N(a z + b, noise_var)`,
/// `q(z) = N(q_mean, q_var)`. Everything about it is available in closed form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearGaussian {
    pub prior_mean: f64,
    pub prior_var: f64,
    pub a: f64,
    pub b: f64,
    pub noise_var: f64,
    pub q_mean: f64,
    pub q_var: f64,
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (x - mean).powi(2) / var
}

impl LinearGaussian {
    pub fn log_marginal(&self, x: f64) -> f64 {
        log_normal(x, self.a * self.prior_mean + self.b, self.a * self.a * self.prior_var + self.noise_var)
    }

    /// Exact posterior `p(z | x)` as `(mean, variance)`.
    pub fn posterior(&self, x: f64) -> (f64, f64) {
        let prec = 1.0 / self.prior_var + self.a * self.a / self.noise_var;
        let mean = (self.prior_mean / self.prior_var + self.a * (x - self.b) / self.noise_var) / prec;
        (mean, 1.0 / prec)
    }

    /// The same model with `q` set to the exact posterior.
    pub fn with_exact_posterior(mut self, x: f64) -> Self {
        (self.q_mean, self.q_var) = self.posterior(x);
        self
    }

    /// Analytic `E_q[log p(x|z)] - KL(q || p)`.
    pub fn elbo(&self, x: f64) -> f64 {
        let r = x - self.a * self.q_mean - self.b;
        let expected_ll =
            -0.5 * (2.0 * std::f64::consts::PI * self.noise_var).ln() - (r * r + self.a * self.a * self.q_var) / (2.0 * self.noise_var);
        let q = DiagGaussian::from_variance(vec![self.q_mean], &[self.q_var]).expect("finite proposal");
        let p = DiagGaussian::from_variance(vec![self.prior_mean], &[self.prior_var]).expect("finite prior");
        expected_ll - kl_diag(&q, &p).expect("equal dimensions")
    }

    /// `log p(x|z) + log p(z) - log q(z)` at `z` drawn from `q`.
    pub fn log_weight(&self, x: f64, rng: &mut SeededRng) -> f64 {
        let z = self.q_mean + self.q_var.sqrt() * rng.normal();
        log_normal(x, self.a * z + self.b, self.noise_var) + log_normal(z, self.prior_mean, self.prior_var)
            - log_normal(z, self.q_mean, self.q_var)
    }

    pub fn log_weights(&self, x: f64, k: usize, rng: &mut SeededRng) -> Vec<f64> {
        (0..k).map(|_| self.log_weight(x, rng)).collect()
    }
}
