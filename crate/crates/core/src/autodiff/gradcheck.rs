use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Magnitude below which errors are measured absolutely rather than relatively.
    pub scale_floor: f64,
    /// Entries checked per parameter tensor; `None` checks all of them.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, scale_floor: 1e-6, max_entries_per_param: None, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Central differences of the scalar `f` at the sampled entries of every parameter.
pub fn numeric_gradients<F, E>(
    store: &ParamStore<f64>,
    f: &F,
    opts: &GradCheckOptions,
) -> Result<Vec<Vec<(usize, f64)>>, E>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, E>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = store.clone();
    let eval = |s: &ParamStore<f64>| -> Result<f64, E> {
        let mut g = Graph::inference();
        let out = f(&mut g, s)?;
        Ok(g.value(out).item())
    };
    let mut all = Vec::with_capacity(store.len());
    for id in store.ids() {
        let n = store.value(id).numel();
        let picks: Vec<usize> = match opts.max_entries_per_param {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let mut out = Vec::with_capacity(picks.len());
        for k in picks {
            let orig = store.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = orig + opts.step;
            let plus = eval(&probe)?;
            probe.value_mut(id).data_mut()[k] = orig - opts.step;
            let minus = eval(&probe)?;
            probe.value_mut(id).data_mut()[k] = orig;
            out.push((k, (plus - minus) / (2.0 * opts.step)));
        }
        all.push(out);
    }
    Ok(all)
}

/// Tape gradients of `f` accumulated into a zeroed copy of `store`.
pub fn analytic_gradients<F, E>(store: &ParamStore<f64>, f: &F) -> Result<ParamStore<f64>, E>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    g.backward(loss)?;
    // Reuse `store`'s identity so the graph's parameter nodes match.
    let mut grads = ParamStore::<f64>::new();
    for id in store.ids() {
        let name = store.name(id).to_string();
        let gid = grads.add(name, store.value(id).clone())?;
        debug_assert_eq!(gid, id);
    }
    for (id, gr) in g.param_grads(store.uid()) {
        for (d, s) in grads.grad_mut(id).iter_mut().zip(gr) {
            *d += *s;
        }
    }
    Ok(grads)
}

/// Compares gradients held in `analytic` against `numeric` per parameter.
pub fn compare_gradients(
    analytic: &ParamStore<f64>,
    numeric: &[Vec<(usize, f64)>],
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let params = analytic
        .ids()
        .zip(numeric)
        .map(|(id, entries): (ParamId, _)| {
            let a = analytic.grad(id);
            let mut worst = (0.0f64, 0usize);
            for &(k, n) in entries {
                let denom = a[k].abs().max(n.abs()).max(opts.scale_floor);
                let rel = (a[k] - n).abs() / denom;
                if rel > worst.0 || rel.is_nan() {
                    worst = (if rel.is_nan() { f64::INFINITY } else { rel }, k);
                }
            }
            ParamCheck {
                name: analytic.name(id).to_string(),
                entries_checked: entries.len(),
                max_rel_error: worst.0,
                worst_index: worst.1,
            }
        })
        .collect();
    GradCheckReport { params, tolerance: opts.tolerance }
}

/// Checks every parameter gradient of the scalar network function `f` against
/// central finite differences. Always runs in 64-bit.
pub fn gradient_check<F, E>(
    store: &ParamStore<f64>,
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, E>,
    E: From<AutodiffError>,
{
    let analytic = analytic_gradients(store, &f)?;
    let numeric = numeric_gradients(store, &f, opts)?;
    Ok(compare_gradients(&analytic, &numeric, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn linear_setup() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_f64(vec![3, 2], &[0.1, -0.4, 0.7, 0.2, -0.3, 0.5])).unwrap();
        s.add("b", Tensor::from_f64(vec![2], &[0.05, -0.02])).unwrap();
        s
    }

    fn linear_loss(g: &mut Graph<f64>, s: &ParamStore<f64>) -> Result<Var, AutodiffError> {
        let x = g.constant(Tensor::from_f64(vec![4, 3], &[
            0.3, -1.2, 0.8, 1.1, 0.4, -0.6, -0.9, 0.2, 0.5, 0.0, 0.7, -0.3,
        ]));
        let w = g.param(s, ParamId(0));
        let b = g.param(s, ParamId(1));
        let y = g.matmul(x, w)?;
        let y = g.add(y, b)?;
        let y = g.square(y);
        g.sum_all(y)
    }

    #[test]
    fn linear_layer_passes_tightly() {
        let s = linear_setup();
        let opts = GradCheckOptions { tolerance: 1e-7, ..Default::default() };
        let r = gradient_check(&s, linear_loss, &opts).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let s = linear_setup();
        let opts = GradCheckOptions::default();
        let mut analytic = analytic_gradients(&s, &linear_loss).unwrap();
        analytic.grad_mut(ParamId(1))[0] += 0.5;
        let numeric = numeric_gradients(&s, &linear_loss, &opts).unwrap();
        let r = compare_gradients(&analytic, &numeric, &opts);
        assert!(!r.passed());
        assert_eq!(r.worst().unwrap().name, "b");
    }
}
