use std::collections::BTreeMap;

use super::{GradStore, ParamSet, Tensor, TensorError};

pub const DEFAULT_ADAGRAD_EPS: f64 = 1e-10;

/// Learning rate per parameter group. A group is a name prefix; the longest
/// matching prefix wins, otherwise the default rate applies.
#[derive(Clone, Debug, PartialEq)]
pub struct LearningRates {
    default: f64,
    groups: Vec<(String, f64)>,
}

impl LearningRates {
    pub fn new(default: f64) -> Result<Self, TensorError> {
        check_lr("default", default)?;
        Ok(Self {
            default,
            groups: Vec::new(),
        })
    }

    pub fn with_group(mut self, prefix: &str, lr: f64) -> Result<Self, TensorError> {
        check_lr(prefix, lr)?;
        self.groups.push((prefix.to_string(), lr));
        Ok(self)
    }

    pub fn rate_for(&self, name: &str) -> f64 {
        self.groups
            .iter()
            .filter(|(p, _)| name.starts_with(p.as_str()))
            .max_by_key(|(p, _)| p.len())
            .map_or(self.default, |(_, lr)| *lr)
    }
}

fn check_lr(group: &str, lr: f64) -> Result<(), TensorError> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonPositiveLearningRate {
            group: group.to_string(),
            lr,
        })
    }
}

/// AdaGrad: `acc += g²; p -= lr · g / (√acc + ε)`.
#[derive(Clone, Debug)]
pub struct AdaGrad {
    rates: LearningRates,
    eps: f64,
    accumulators: BTreeMap<String, Tensor>,
}

impl AdaGrad {
    pub fn new(rates: LearningRates) -> Self {
        Self {
            rates,
            eps: DEFAULT_ADAGRAD_EPS,
            accumulators: BTreeMap::new(),
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn accumulator(&self, name: &str) -> Option<&Tensor> {
        self.accumulators.get(name)
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradStore) -> Result<(), TensorError> {
        for (name, g) in grads.iter() {
            let p = params
                .get_mut(name)
                .ok_or_else(|| TensorError::MissingParam(name.to_string()))?;
            if p.dims() != g.dims() {
                return Err(TensorError::InvalidTensor(format!(
                    "gradient for `{name}` has dims {:?}, parameter has {:?}",
                    g.dims(),
                    p.dims()
                )));
            }
            let lr = self.rates.rate_for(name);
            let acc = self
                .accumulators
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(g.dims().to_vec()));
            for ((pv, av), gv) in p.data_mut().iter_mut().zip(acc.data_mut()).zip(g.data()) {
                *av += gv * gv;
                *pv -= lr * gv / (av.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::vector(vec![v]));
        p
    }

    fn grad(name: &str, v: f64) -> GradStore {
        let mut g = GradStore::new();
        g.insert(name.to_string(), Tensor::vector(vec![v]));
        g
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = one("x", 1.0);
        let mut opt = AdaGrad::new(LearningRates::new(0.1).unwrap());
        opt.step(&mut p, &grad("x", 0.5)).unwrap();
        assert!((p.get("x").unwrap().data()[0] - 0.9).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = one("x", 1.0);
        let mut opt = AdaGrad::new(LearningRates::new(0.1).unwrap());
        opt.step(&mut p, &grad("x", 0.0)).unwrap();
        assert_eq!(p.get("x").unwrap().data()[0], 1.0);
        assert_eq!(opt.accumulator("x").unwrap().data()[0], 0.0);
    }

    #[test]
    fn two_unit_steps() {
        let mut p = one("x", 0.0);
        let mut opt = AdaGrad::new(LearningRates::new(0.1).unwrap());
        opt.step(&mut p, &grad("x", 1.0)).unwrap();
        assert!((p.get("x").unwrap().data()[0] + 0.1).abs() < 1e-9);
        opt.step(&mut p, &grad("x", 1.0)).unwrap();
        let expected = -0.1 - 0.1 / 2f64.sqrt();
        assert!((p.get("x").unwrap().data()[0] - expected).abs() < 1e-9);
        assert!((expected + 0.17071).abs() < 1e-5);
    }

    #[test]
    fn nonpositive_rates_are_rejected() {
        assert!(LearningRates::new(0.0).is_err());
        assert!(LearningRates::new(1e-4).unwrap().with_group("regressor.", -1.0).is_err());
    }

    #[test]
    fn longest_prefix_wins() {
        let rates = LearningRates::new(1e-4)
            .unwrap()
            .with_group("regressor.", 1e-2)
            .unwrap()
            .with_group("regressor.fc3", 0.5)
            .unwrap();
        assert_eq!(rates.rate_for("layers.0.ffn.fc1.weight"), 1e-4);
        assert_eq!(rates.rate_for("regressor.fc1.weight"), 1e-2);
        assert_eq!(rates.rate_for("regressor.fc3.bias"), 0.5);
    }
}
