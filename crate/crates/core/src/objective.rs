//! Information objectives and the per-step returns that drive the policy.
//!
//! `L^MI = H(C) + E[log P_ψ(C | X_{0:T})]`
//! `L^DI = Σ_t E[log P_ω(Z_t | ·) − log π_θ(Z_t | ·)]`
//! `Ret_t = α₁ log P_ψ(C|X) + Σ_{i=t}^{T} [α₂ (log P_ω(Z_i|·) − log π_θ(Z_i|·)) + α₃ R_IL^{i−1}]`

use alloc::format;
use alloc::vec::Vec;

use crate::env::ContextKind;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveWeights {
    pub alpha_mi: f64,
    pub alpha_di: f64,
    pub alpha_il: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights { alpha_mi: 1.0, alpha_di: 0.01, alpha_il: 1.0 }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.alpha_mi) && ok(self.alpha_di) && ok(self.alpha_il)) {
            return Err(Error::contract(format!("objective weights must be finite and nonnegative: {self:?}")));
        }
        if self.alpha_il <= 0.0 {
            return Err(Error::contract("alpha_il must be positive"));
        }
        Ok(())
    }
}

/// Per-trajectory signals that make up the return.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReturnInputs {
    /// `R_MI = log P_ψ(C | X_{0:T})`; `None` when there is no task channel.
    pub r_mi: Option<f64>,
    /// `log P_ω(Z_t|·)` for `t = 1..T`.
    pub log_option_post: Vec<f64>,
    /// `log π_θ(Z_t|·)` for `t = 1..T`.
    pub logp_high: Vec<f64>,
    /// `R_IL^i` for `i = 0..T−1`.
    pub r_il: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReturnTable {
    pub r_mi: f64,
    /// `R_DI^t = log P_ω(Z_t|·) − log π_θ(Z_t|·)`, `t = 1..T`.
    pub r_di: Vec<f64>,
    pub r_il: Vec<f64>,
    /// `Ret_t`, `t = 1..T` (index `t − 1`).
    pub ret: Vec<f64>,
}

/// Suffix-sum construction of `Ret_t`.
pub fn assemble_returns(inp: &ReturnInputs, w: &ObjectiveWeights) -> Result<ReturnTable> {
    let t_len = inp.r_il.len();
    if w.alpha_di != 0.0 && (inp.log_option_post.len() != t_len || inp.logp_high.len() != t_len) {
        return Err(Error::contract(format!(
            "return components: {} R_IL, {} log P_ω, {} log π_θ",
            t_len,
            inp.log_option_post.len(),
            inp.logp_high.len()
        )));
    }
    if w.alpha_mi != 0.0 && inp.r_mi.is_none() {
        return Err(Error::contract("alpha_mi > 0 needs log P_ψ(C|X)"));
    }
    let r_di: Vec<f64> = if inp.log_option_post.len() == t_len && inp.logp_high.len() == t_len {
        inp.log_option_post.iter().zip(&inp.logp_high).map(|(a, b)| a - b).collect()
    } else {
        alloc::vec![0.0; t_len]
    };
    let r_mi = inp.r_mi.unwrap_or(0.0);
    let mut ret = alloc::vec![0.0; t_len];
    let mut acc = 0.0;
    for t in (1..=t_len).rev() {
        acc += w.alpha_di * r_di[t - 1] + w.alpha_il * inp.r_il[t - 1];
        ret[t - 1] = w.alpha_mi * r_mi + acc;
    }
    Ok(ReturnTable { r_mi, r_di, r_il: inp.r_il.clone(), ret })
}

/// `L^MI` from per-trajectory `log P_ψ(C|X)` values.
pub fn l_mi(log_task_post: &[f64], prior: ContextKind) -> f64 {
    if log_task_post.is_empty() {
        return 0.0;
    }
    prior.prior_entropy() + log_task_post.iter().sum::<f64>() / log_task_post.len() as f64
}

/// Monte-Carlo `L^DI` from per-trajectory step values.
pub fn l_di(log_option_post: &[Vec<f64>], logp_high: &[Vec<f64>]) -> f64 {
    if log_option_post.is_empty() {
        return 0.0;
    }
    let total: f64 = log_option_post
        .iter()
        .zip(logp_high)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>())
        .sum();
    total / log_option_post.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reductions() {
        let inp = ReturnInputs {
            r_mi: Some(-0.3),
            log_option_post: alloc::vec![-0.1, -0.2, -0.4],
            logp_high: alloc::vec![-0.5, -0.6, -0.7],
            r_il: alloc::vec![1.0, 2.0, 3.0],
        };
        let w = ObjectiveWeights { alpha_mi: 0.0, alpha_di: 0.0, alpha_il: 2.0 };
        assert_eq!(assemble_returns(&inp, &w).unwrap().ret, alloc::vec![12.0, 10.0, 6.0]);
        let w = ObjectiveWeights { alpha_mi: 1.5, alpha_di: 0.0, alpha_il: 1e-300 };
        let r = assemble_returns(&inp, &w).unwrap().ret;
        assert!(r.iter().all(|&v| (v - 1.5 * -0.3).abs() < 1e-12));
    }

    #[test]
    fn missing_components_rejected() {
        let inp = ReturnInputs { r_mi: None, log_option_post: alloc::vec![], logp_high: alloc::vec![], r_il: alloc::vec![1.0] };
        assert!(assemble_returns(&inp, &ObjectiveWeights::default()).is_err());
        let w = ObjectiveWeights { alpha_mi: 0.0, alpha_di: 0.0, alpha_il: 1.0 };
        assert!(assemble_returns(&inp, &w).is_ok());
        assert!(ObjectiveWeights { alpha_mi: 1.0, alpha_di: 0.0, alpha_il: 0.0 }.validate().is_err());
    }

    #[test]
    fn mi_of_uninformative_posterior_is_zero() {
        let v = l_mi(&[0.5f64.ln(); 7], ContextKind::Discrete(2));
        assert!(v.abs() < 1e-15);
        assert!((l_mi(&[0.0; 3], ContextKind::Discrete(2)) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn single_option_di_vanishes() {
        assert_eq!(l_di(&[alloc::vec![0.0; 4]], &[alloc::vec![0.0; 4]]), 0.0);
    }
}
