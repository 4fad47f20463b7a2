use crate::autodiff::{Graph, Real, Var};

use super::GspnError;

/// Diagonal Gaussian over the latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self, GspnError> {
        if mu.len() != sigma.len() {
            return Err(GspnError::Dimension { expected: mu.len(), found: sigma.len() });
        }
        if let Some(&s) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(GspnError::NonPositiveSigma(s));
        }
        Ok(Self { mu, sigma })
    }

    /// Built from a predicted mean and log standard deviation.
    pub fn from_log_sigma(mu: Vec<f64>, log_sigma: &[f64]) -> Result<Self, GspnError> {
        Self::new(mu, log_sigma.iter().map(|l| l.exp()).collect())
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Log density at `z`.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(z)
            .map(|((m, s), x)| {
                let u = (x - m) / s;
                -0.5 * u * u - s.ln() - 0.5 * ln_2pi
            })
            .sum()
    }
}

/// `KL(q ‖ p)` for diagonal Gaussians, summed over dimensions:
/// `Σ log(σp/σq) + (σq² + (μq − μp)²) / (2σp²) − 1/2`.
pub fn kl_diag_gaussians(q: &GaussianParams, p: &GaussianParams) -> Result<f64, GspnError> {
    if q.dim() != p.dim() {
        return Err(GspnError::Dimension { expected: p.dim(), found: q.dim() });
    }
    for &s in q.sigma.iter().chain(&p.sigma) {
        if !(s > 0.0) {
            return Err(GspnError::NonPositiveSigma(s));
        }
    }
    Ok((0..q.dim())
        .map(|i| {
            let (mq, sq, mp, sp) = (q.mu[i], q.sigma[i], p.mu[i], p.sigma[i]);
            (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5
        })
        .sum())
}

/// Reparameterized sample `μ + σ ⊙ noise`.
pub fn sample_latent(g: &GaussianParams, noise: &[f64]) -> Result<Vec<f64>, GspnError> {
    if noise.len() != g.dim() {
        return Err(GspnError::Dimension { expected: g.dim(), found: noise.len() });
    }
    Ok(g.mu.iter().zip(&g.sigma).zip(noise).map(|((m, s), n)| m + s * n).collect())
}

/// Graph form of [`kl_diag_gaussians`] on `(B, d)` means and log-sigmas;
/// returns `(B,)` per-row divergences.
pub fn kl_diag_graph<T: Real>(
    g: &mut Graph<T>,
    mu_q: Var,
    log_sigma_q: Var,
    mu_p: Var,
    log_sigma_p: Var,
) -> Result<Var, GspnError> {
    let log_ratio = g.sub(log_sigma_p, log_sigma_q)?;
    let two_lq = g.scale(log_sigma_q, 2.0);
    let var_q = g.exp(two_lq);
    let diff = g.sub(mu_q, mu_p)?;
    let diff2 = g.square(diff);
    let num = g.add(var_q, diff2)?;
    let neg_two_lp = g.scale(log_sigma_p, -2.0);
    let inv_var_p = g.exp(neg_two_lp);
    let quad = g.mul(num, inv_var_p)?;
    let quad = g.scale(quad, 0.5);
    let per_dim = g.add(log_ratio, quad)?;
    let per_dim = g.add_scalar(per_dim, -0.5);
    let rank = g.shape(per_dim).len();
    Ok(g.sum_reduce(per_dim, rank - 1)?)
}

/// `z = μ + exp(log σ) ⊙ noise` on the graph.
pub fn sample_latent_graph<T: Real>(
    g: &mut Graph<T>,
    mu: Var,
    log_sigma: Var,
    noise: Var,
) -> Result<Var, GspnError> {
    let sigma = g.exp(log_sigma);
    let scaled = g.mul(sigma, noise)?;
    Ok(g.add(mu, scaled)?)
}
