//! Central finite-difference verification of analytic gradients.

use super::{GradStore, Graph, NodeId, ParamSet, Tensor, TensorError};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Probe at most this many entries per parameter (evenly strided);
    /// `None` probes every entry.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_entries: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    /// max over probed entries of |analytic − numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub probed: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

fn probe_indices(len: usize, max_entries: Option<usize>) -> Vec<usize> {
    match max_entries {
        Some(m) if m < len => {
            let stride = len as f64 / m as f64;
            (0..m).map(|i| (i as f64 * stride) as usize).collect()
        }
        _ => (0..len).collect(),
    }
}

fn eval_scalar<E, F>(params: &ParamSet, build: &F) -> Result<f64, E>
where
    E: From<TensorError>,
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId, E>,
{
    let mut g = Graph::new();
    let out = build(&mut g, params)?;
    let v = g.value(out);
    v.item()
        .ok_or_else(|| TensorError::NotScalar(v.dims().to_vec()).into())
}

/// Central differences `(f(x+h) − f(x−h)) / 2h` for the probed entries of
/// every parameter. Entries that are not probed are left at zero.
pub fn numeric_gradients<E, F>(
    params: &ParamSet,
    build: F,
    opts: &GradCheckOptions,
) -> Result<GradStore, E>
where
    E: From<TensorError>,
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId, E>,
{
    let mut store = GradStore::new();
    let mut work = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let len = params.get(&name)?.len();
        let mut grad = Tensor::zeros(params.get(&name)?.dims().to_vec());
        for i in probe_indices(len, opts.max_entries) {
            let orig = params.get(&name)?.data()[i];
            work.get_mut(&name).expect("cloned").data_mut()[i] = orig + opts.step;
            let plus = eval_scalar(&work, &build)?;
            work.get_mut(&name).expect("cloned").data_mut()[i] = orig - opts.step;
            let minus = eval_scalar(&work, &build)?;
            work.get_mut(&name).expect("cloned").data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * opts.step);
        }
        store.insert(name, grad);
    }
    Ok(store)
}

/// Compares analytic gradients against numeric ones on the probed entries.
/// A parameter with no analytic gradient is compared as all-zero.
pub fn compare_gradients(
    params: &ParamSet,
    analytic: &GradStore,
    numeric: &GradStore,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let mut checks = Vec::new();
    for (name, p) in params.iter() {
        let zeros = Tensor::zeros(p.dims().to_vec());
        let a = analytic.get(name).unwrap_or(&zeros);
        let n = numeric.get(name).unwrap_or(&zeros);
        let mut worst = (0.0f64, 0usize);
        let probed = probe_indices(p.len(), opts.max_entries);
        for &i in &probed {
            let (av, nv) = (a.data()[i], n.data()[i]);
            let rel = (av - nv).abs() / nv.abs().max(1.0);
            if rel > worst.0 || rel.is_nan() {
                worst = (rel, i);
            }
        }
        checks.push(ParamCheck {
            name: name.to_string(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            probed: probed.len(),
            passed: worst.0 < opts.tolerance,
        });
    }
    GradCheckReport {
        tolerance: opts.tolerance,
        params: checks,
    }
}

/// Builds the graph once for analytic gradients and `2 × entries` more times
/// for central differences, then compares the two.
pub fn gradient_check<E, F>(
    params: &ParamSet,
    build: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, E>
where
    E: From<TensorError>,
    F: Fn(&mut Graph, &ParamSet) -> Result<NodeId, E>,
{
    let mut g = Graph::new();
    let out = build(&mut g, params)?;
    let analytic = g.backward(out)?;
    let numeric = numeric_gradients(params, &build, opts)?;
    Ok(compare_gradients(params, &analytic, &numeric, opts))
}
