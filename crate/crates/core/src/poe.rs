//! Diagonal-Gaussian experts and their products.
//!
//! Precision is carried in log space. A product of Gaussian experts is again
//! Gaussian: precisions add, and the mean is the precision-weighted average of
//! the expert means. Both a plain value API (used by evaluation and oracles)
//! and a tape API (used during training) are provided.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{c, Real, Tape, Tensor, Var};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_precision: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_precision: Vec<f64>) -> Result<Self> {
        if mean.len() != log_precision.len() || mean.is_empty() {
            return Err(Error::shape(
                "gaussian",
                format!("mean {} vs log precision {}", mean.len(), log_precision.len()),
            ));
        }
        if !mean.iter().chain(&log_precision).all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "gaussian" });
        }
        Ok(Self { mean, log_precision })
    }

    /// `N(0, I)`.
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], log_precision: vec![0.0; dim] }
    }

    /// Builds a Gaussian from a mean and per-dimension variance.
    pub fn from_variance(mean: Vec<f64>, variance: &[f64]) -> Result<Self> {
        let lp = variance.iter().map(|v| -v.ln()).collect();
        Self::new(mean, lp)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn precision(&self) -> Vec<f64> {
        self.log_precision.iter().map(|l| l.exp()).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_precision.iter().map(|l| (-l).exp()).collect()
    }

    fn check_dim(&self, n: usize, op: &'static str) -> Result<()> {
        if self.dim() != n {
            return Err(Error::shape(op, format!("dimension {} vs {n}", self.dim())));
        }
        Ok(())
    }

    /// Diagonal-Gaussian log-density at `x`.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len(), "log_prob")?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_precision)
            .zip(x)
            .map(|((m, l), x)| 0.5 * l - 0.5 * LN_2PI - 0.5 * l.exp() * (x - m).powi(2))
            .sum())
    }

    /// `mean + exp(-log_precision / 2) * noise`.
    pub fn sample_reparam(&self, noise: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(noise.len(), "sample_reparam")?;
        Ok(self
            .mean
            .iter()
            .zip(&self.log_precision)
            .zip(noise)
            .map(|((m, l), e)| m + (-0.5 * l).exp() * e)
            .collect())
    }

    /// Density at a single coordinate of a one-dimensional Gaussian.
    pub fn density_1d(&self, x: f64) -> f64 {
        let p = self.log_precision[0].exp();
        (p / (2.0 * PI)).sqrt() * (-0.5 * p * (x - self.mean[0]).powi(2)).exp()
    }
}

/// Product of experts: summed precision, precision-weighted mean.
pub fn poe_fuse(experts: &[DiagGaussian]) -> Result<DiagGaussian> {
    let first = experts.first().ok_or_else(|| Error::Invalid("empty expert list".into()))?;
    let d = first.dim();
    for e in experts {
        e.check_dim(d, "poe_fuse")?;
    }
    let mut mean = vec![0.0; d];
    let mut log_precision = vec![0.0; d];
    for j in 0..d {
        let mx = experts.iter().map(|e| e.log_precision[j]).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = experts.iter().map(|e| (e.log_precision[j] - mx).exp()).sum();
        let lse = mx + s.ln();
        log_precision[j] = lse;
        mean[j] = experts.iter().map(|e| (e.log_precision[j] - lse).exp() * e.mean[j]).sum();
    }
    DiagGaussian::new(mean, log_precision)
}

/// Closed-form `KL(q || p)` for diagonal Gaussians.
pub fn kl_diag(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    q.check_dim(p.dim(), "kl_diag")?;
    Ok(q
        .mean
        .iter()
        .zip(&q.log_precision)
        .zip(p.mean.iter().zip(&p.log_precision))
        .map(|((mq, lq), (mp, lp))| lq - lp + (lp - lq).exp() + lp.exp() * (mq - mp).powi(2) - 1.0)
        .sum::<f64>()
        * 0.5)
}

/// Gaussian whose mean and log precision live on a tape as 1-D tensors.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVar {
    pub mean: Var,
    pub log_precision: Var,
}

impl GaussianVar {
    pub fn constant<F: Real>(tape: &mut Tape<'_, F>, g: &DiagGaussian) -> Self {
        let m = Tensor::vector(g.mean.iter().map(|&v| c::<F>(v)).collect());
        let l = Tensor::vector(g.log_precision.iter().map(|&v| c::<F>(v)).collect());
        Self { mean: tape.constant(m), log_precision: tape.constant(l) }
    }

    pub fn to_value<F: Real>(&self, tape: &Tape<'_, F>) -> DiagGaussian {
        let f = |v: Var| tape.value(v).data().iter().map(|x| x.to_f64().unwrap()).collect();
        DiagGaussian { mean: f(self.mean), log_precision: f(self.log_precision) }
    }

    pub fn dim<F: Real>(&self, tape: &Tape<'_, F>) -> usize {
        tape.value(self.mean).len()
    }
}

/// Fuses experts stacked as rows: `means` and `log_precisions` are `[E, d]`.
pub fn poe_fuse_rows<F: Real>(
    tape: &mut Tape<'_, F>,
    means: Var,
    log_precisions: Var,
) -> Result<GaussianVar> {
    if tape.shape(means) != tape.shape(log_precisions) || tape.shape(means).len() != 2 {
        return Err(Error::shape(
            "poe_fuse",
            format!("{:?} vs {:?}", tape.shape(means), tape.shape(log_precisions)),
        ));
    }
    let rows = tape.shape(means)[0];
    let lse = tape.logsumexp_rows(log_precisions)?;
    let lse_b = tape.broadcast_rows(lse, rows)?;
    let shifted = tape.sub(log_precisions, lse_b)?;
    let w = tape.exp(shifted)?;
    let wm = tape.mul(w, means)?;
    let mean = tape.sum_rows(wm)?;
    Ok(GaussianVar { mean, log_precision: lse })
}

/// Fuses a list of 1-D tape Gaussians.
pub fn poe_fuse_vars<F: Real>(tape: &mut Tape<'_, F>, experts: &[GaussianVar]) -> Result<GaussianVar> {
    if experts.is_empty() {
        return Err(Error::Invalid("empty expert list".into()));
    }
    if experts.len() == 1 {
        return Ok(experts[0]);
    }
    let d = experts[0].dim(tape);
    let mut ms = Vec::with_capacity(experts.len());
    let mut ls = Vec::with_capacity(experts.len());
    for e in experts {
        if e.dim(tape) != d || tape.value(e.log_precision).len() != d {
            return Err(Error::shape("poe_fuse", "expert dimension mismatch"));
        }
        let m = as_row(tape, e.mean)?;
        let l = as_row(tape, e.log_precision)?;
        ms.push(m);
        ls.push(l);
    }
    let m = tape.concat(&ms, 0)?;
    let l = tape.concat(&ls, 0)?;
    poe_fuse_rows(tape, m, l)
}

fn as_row<F: Real>(tape: &mut Tape<'_, F>, v: Var) -> Result<Var> {
    tape.broadcast_rows(v, 1)
}

/// Differentiable `KL(q || p)`.
pub fn kl_diag_var<F: Real>(tape: &mut Tape<'_, F>, q: GaussianVar, p: GaussianVar) -> Result<Var> {
    if tape.shape(q.mean) != tape.shape(p.mean) {
        return Err(Error::shape(
            "kl_diag",
            format!("{:?} vs {:?}", tape.shape(q.mean), tape.shape(p.mean)),
        ));
    }
    let dl = tape.sub(p.log_precision, q.log_precision)?;
    let edl = tape.exp(dl)?;
    let dm = tape.sub(q.mean, p.mean)?;
    let dm2 = tape.square(dm)?;
    let pp = tape.exp(p.log_precision)?;
    let quad = tape.mul(pp, dm2)?;
    let a = tape.sub(edl, dl)?;
    let b = tape.add(a, quad)?;
    let b = tape.add_scalar(b, -F::one())?;
    let s = tape.sum(b)?;
    tape.scale(s, c::<F>(0.5))
}

/// Differentiable log-density of `x` under `g`.
pub fn log_prob_var<F: Real>(tape: &mut Tape<'_, F>, g: GaussianVar, x: Var) -> Result<Var> {
    if tape.shape(g.mean) != tape.shape(x) {
        return Err(Error::shape(
            "log_prob",
            format!("{:?} vs {:?}", tape.shape(g.mean), tape.shape(x)),
        ));
    }
    let d = tape.value(x).len();
    let diff = tape.sub(x, g.mean)?;
    let d2 = tape.square(diff)?;
    let p = tape.exp(g.log_precision)?;
    let q = tape.mul(p, d2)?;
    let t = tape.sub(g.log_precision, q)?;
    let s = tape.sum(t)?;
    let s = tape.scale(s, c::<F>(0.5))?;
    tape.add_scalar(s, c::<F>(-0.5 * LN_2PI * d as f64))
}

/// Differentiable reparameterized sample `mean + exp(-l/2) * noise`.
pub fn sample_reparam_var<F: Real>(tape: &mut Tape<'_, F>, g: GaussianVar, noise: Var) -> Result<Var> {
    if tape.shape(g.mean) != tape.shape(noise) {
        return Err(Error::shape(
            "sample_reparam",
            format!("{:?} vs {:?}", tape.shape(g.mean), tape.shape(noise)),
        ));
    }
    let half = tape.scale(g.log_precision, c::<F>(-0.5))?;
    let sd = tape.exp(half)?;
    let e = tape.mul(sd, noise)?;
    tape.add(g.mean, e)
}
