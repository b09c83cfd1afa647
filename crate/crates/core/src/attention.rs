//! Missing attention values by weighted matrix factorisation, trained with
//! element-wise alternating least squares.
//!
//! Loss, with `w_ui = 1` on observed cells and `0` elsewhere:
//!
//! ```text
//! J = sum_ui w_ui (a_ui - m_u . n_i)^2 + lambda (sum_u |m_u|^2 + sum_i |n_i|^2)
//! ```
//!
//! Each coordinate `m_uf` (or `n_if`) has a closed-form minimiser given the
//! rest. A dense cache of `m_u . n_i` makes one full sweep `O(N_U N_O S)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::substream;
use crate::types::AttentionMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttentionError {
    #[error("the matrix has no observed entries")]
    NothingObserved,
    #[error("factor dimension must be >= 1")]
    ZeroRank,
    #[error("regularisation must be finite and >= 0 (got {0})")]
    BadLambda(f64),
    #[error("zero denominator updating {which} {index}, factor {factor}: no observed weight and lambda = 0")]
    ZeroDenominator { which: &'static str, index: usize, factor: usize },
}

/// User and object factor matrices, row-major `n x s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub n_users: usize,
    pub n_objects: usize,
    pub s: usize,
    pub reg_lambda: f64,
    pub user_factors: Vec<f64>,
    pub object_factors: Vec<f64>,
}

impl FactorModel {
    pub fn zeros(n_users: usize, n_objects: usize, s: usize, reg_lambda: f64) -> Self {
        Self {
            n_users,
            n_objects,
            s,
            reg_lambda,
            user_factors: vec![0.0; n_users * s],
            object_factors: vec![0.0; n_objects * s],
        }
    }

    pub fn user(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.s..(u + 1) * self.s]
    }

    pub fn object(&self, i: usize) -> &[f64] {
        &self.object_factors[i * self.s..(i + 1) * self.s]
    }

    pub fn predict(&self, u: usize, i: usize) -> f64 {
        self.user(u).iter().zip(self.object(i)).map(|(a, b)| a * b).sum()
    }

    /// Dense `M N^T`, row-major.
    pub fn predict_all(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_users * self.n_objects);
        for u in 0..self.n_users {
            for i in 0..self.n_objects {
                out.push(self.predict(u, i));
            }
        }
        out
    }
}

pub fn loss(model: &FactorModel, observed: &AttentionMatrix) -> f64 {
    let fit: f64 = observed
        .observed()
        .map(|(u, i, a)| {
            let r = a - model.predict(u, i);
            r * r
        })
        .sum();
    let reg: f64 = model.user_factors.iter().chain(&model.object_factors).map(|v| v * v).sum();
    fit + model.reg_lambda * reg
}

/// Coordinate-descent state: the model plus the cached predictions.
pub struct Eals<'a> {
    pub model: FactorModel,
    observed: &'a AttentionMatrix,
    cache: Vec<f64>,
    by_object: Vec<Vec<(usize, f64)>>,
    by_user: Vec<Vec<(usize, f64)>>,
}

impl<'a> Eals<'a> {
    pub fn new(model: FactorModel, observed: &'a AttentionMatrix) -> Self {
        let cache = model.predict_all();
        let mut by_user = vec![Vec::new(); observed.n_users()];
        let mut by_object = vec![Vec::new(); observed.n_objects()];
        for (u, i, a) in observed.observed() {
            by_user[u].push((i, a));
            by_object[i].push((u, a));
        }
        Self {
            model,
            observed,
            cache,
            by_object,
            by_user,
        }
    }

    pub fn cache(&self) -> &[f64] {
        &self.cache
    }

    pub fn loss(&self) -> f64 {
        loss(&self.model, self.observed)
    }

    /// Sets `m_uf` to its closed-form minimiser and returns the new value.
    pub fn update_user_element(&mut self, u: usize, f: usize) -> Result<f64, AttentionError> {
        let s = self.model.s;
        let no = self.model.n_objects;
        let old = self.model.user_factors[u * s + f];
        let mut num = 0.0;
        let mut den = self.model.reg_lambda;
        for &(i, a) in &self.by_user[u] {
            let nif = self.model.object_factors[i * s + f];
            // prediction with the f-th term removed
            let without = self.cache[u * no + i] - old * nif;
            num += (a - without) * nif;
            den += nif * nif;
        }
        if den == 0.0 {
            return Err(AttentionError::ZeroDenominator {
                which: "user",
                index: u,
                factor: f,
            });
        }
        let new = num / den;
        let delta = new - old;
        if delta != 0.0 {
            for i in 0..no {
                self.cache[u * no + i] += delta * self.model.object_factors[i * s + f];
            }
        }
        self.model.user_factors[u * s + f] = new;
        Ok(new)
    }

    /// Sets `n_if` to its closed-form minimiser and returns the new value.
    pub fn update_object_element(&mut self, i: usize, f: usize) -> Result<f64, AttentionError> {
        let s = self.model.s;
        let no = self.model.n_objects;
        let old = self.model.object_factors[i * s + f];
        let mut num = 0.0;
        let mut den = self.model.reg_lambda;
        for &(u, a) in &self.by_object[i] {
            let muf = self.model.user_factors[u * s + f];
            let without = self.cache[u * no + i] - old * muf;
            num += (a - without) * muf;
            den += muf * muf;
        }
        if den == 0.0 {
            return Err(AttentionError::ZeroDenominator {
                which: "object",
                index: i,
                factor: f,
            });
        }
        let new = num / den;
        let delta = new - old;
        if delta != 0.0 {
            for u in 0..self.model.n_users {
                self.cache[u * no + i] += delta * self.model.user_factors[u * s + f];
            }
        }
        self.model.object_factors[i * s + f] = new;
        Ok(new)
    }

    /// One pass over every user coordinate, then every object coordinate.
    /// Returns the number of coordinates left unchanged for lack of data.
    pub fn sweep(&mut self) -> usize {
        let mut skipped = 0;
        for u in 0..self.model.n_users {
            for f in 0..self.model.s {
                if self.update_user_element(u, f).is_err() {
                    skipped += 1;
                }
            }
        }
        for i in 0..self.model.n_objects {
            for f in 0..self.model.s {
                if self.update_object_element(i, f).is_err() {
                    skipped += 1;
                }
            }
        }
        skipped
    }

    /// Recomputes the cache from scratch, discarding accumulated rounding.
    pub fn refresh_cache(&mut self) {
        self.cache = self.model.predict_all();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorizeConfig {
    pub s: usize,
    pub lambda: f64,
    pub max_sweeps: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for FactorizeConfig {
    fn default() -> Self {
        Self {
            s: 4,
            lambda: 0.5,
            max_sweeps: 200,
            tol: 1e-4,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factorization {
    pub model: FactorModel,
    /// Loss before the first sweep followed by the loss after each sweep.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
    /// Coordinates skipped because their denominator vanished.
    pub skipped_updates: usize,
}

/// Random factors on `[0, sqrt(mean / s)]` so initial predictions stay in range.
pub fn init_model(observed: &AttentionMatrix, s: usize, lambda: f64, seed: u64) -> FactorModel {
    let n = observed.observed_count().max(1) as f64;
    let mean = observed.observed().map(|(_, _, a)| a).sum::<f64>() / n;
    let hi = (mean.max(0.0) / s as f64).sqrt();
    let mut rng = substream(seed, 0);
    let mut m = FactorModel::zeros(observed.n_users(), observed.n_objects(), s, lambda);
    for v in m.user_factors.iter_mut().chain(m.object_factors.iter_mut()) {
        *v = rng.random::<f64>() * hi;
    }
    m
}

pub fn factorize(observed: &AttentionMatrix, cfg: &FactorizeConfig) -> Result<Factorization, AttentionError> {
    if observed.observed_count() == 0 {
        return Err(AttentionError::NothingObserved);
    }
    if cfg.s == 0 {
        return Err(AttentionError::ZeroRank);
    }
    if !(cfg.lambda.is_finite() && cfg.lambda >= 0.0) {
        return Err(AttentionError::BadLambda(cfg.lambda));
    }
    let model = init_model(observed, cfg.s, cfg.lambda, cfg.seed);
    let mut st = Eals::new(model, observed);
    let mut trace = vec![st.loss()];
    let mut converged = false;
    let mut skipped = 0;
    for _ in 0..cfg.max_sweeps {
        skipped += st.sweep();
        st.refresh_cache();
        let j = st.loss();
        let prev = *trace.last().unwrap();
        trace.push(j);
        if prev <= 0.0 || (prev - j) / prev < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(Factorization {
        model: st.model,
        loss_trace: trace,
        converged,
        skipped_updates: skipped,
    })
}

/// Round half up, then clamp to the level grid.
pub fn quantize_level(x: f64) -> f64 {
    (x + 0.5).floor().clamp(AttentionMatrix::MIN_LEVEL, AttentionMatrix::MAX_LEVEL)
}

/// Dense quantised predictions.
pub fn predict_levels(model: &FactorModel) -> AttentionMatrix {
    let values = model.predict_all().into_iter().map(quantize_level).collect();
    AttentionMatrix::dense(model.n_users, model.n_objects, values)
}

/// Proportions of absolute level errors equal to 0, 1 and at least 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub count: usize,
    pub zero: f64,
    pub one: f64,
    pub two_plus: f64,
}

/// Compares `predicted` with `truth` on cells selected by `include(u, i)`.
pub fn error_histogram<F: Fn(usize, usize) -> bool>(
    predicted: &AttentionMatrix,
    truth: &AttentionMatrix,
    include: F,
) -> ErrorHistogram {
    let mut c = [0usize; 3];
    for u in 0..truth.n_users() {
        for i in 0..truth.n_objects() {
            if !include(u, i) {
                continue;
            }
            if let (Some(p), Some(t)) = (predicted.get(u, i), truth.get(u, i)) {
                let e = (p - t).abs().round() as usize;
                c[e.min(2)] += 1;
            }
        }
    }
    let n = c.iter().sum::<usize>();
    let d = n.max(1) as f64;
    ErrorHistogram {
        count: n,
        zero: c[0] as f64 / d,
        one: c[1] as f64 / d,
        two_plus: c[2] as f64 / d,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantisation() {
        assert_eq!(quantize_level(3.4), 3.0);
        assert_eq!(quantize_level(3.5), 4.0);
        assert_eq!(quantize_level(5.7), 5.0);
        assert_eq!(quantize_level(0.2), 1.0);
    }

    #[test]
    fn zero_factors_loss_is_sum_of_squares() {
        let a = AttentionMatrix::dense(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let m = FactorModel::zeros(2, 2, 3, 0.0);
        assert_eq!(loss(&m, &a), 30.0);
    }

    #[test]
    fn single_entry_one_step() {
        let mut a = AttentionMatrix::empty(1, 1);
        a.set(0, 0, 4.0);
        let mut m = FactorModel::zeros(1, 1, 1, 0.0);
        m.object_factors[0] = 2.0;
        let mut st = Eals::new(m, &a);
        assert_eq!(st.update_user_element(0, 0).unwrap(), 2.0);
        assert_eq!(st.cache()[0], 4.0);
    }

    #[test]
    fn zero_denominator_reported() {
        let mut a = AttentionMatrix::empty(2, 2);
        a.set(0, 0, 3.0);
        let m = FactorModel::zeros(2, 2, 1, 0.0);
        let mut st = Eals::new(m, &a);
        assert!(matches!(
            st.update_user_element(1, 0),
            Err(AttentionError::ZeroDenominator { which: "user", index: 1, .. })
        ));
        assert_eq!(st.model.user_factors[1], 0.0);
    }

    #[test]
    fn histogram_counts() {
        let t = AttentionMatrix::dense(1, 4, vec![1.0, 2.0, 3.0, 5.0]);
        let p = AttentionMatrix::dense(1, 4, vec![1.0, 3.0, 1.0, 5.0]);
        let h = error_histogram(&p, &t, |_, _| true);
        assert_eq!(h.count, 4);
        assert_eq!((h.zero, h.one, h.two_plus), (0.5, 0.25, 0.25));
    }
}
