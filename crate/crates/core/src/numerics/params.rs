use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Ordered store of named tensors. Used for model weights, their gradients
/// and optimizer moments; iteration order is insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        if let Some(i) = self.position(&name) {
            self.tensors[i] = tensor;
        } else {
            self.names.push(name);
            self.tensors.push(tensor);
        }
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.position(name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::Data(format!("missing tensor {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.position(name) {
            Some(i) => Ok(&mut self.tensors[i]),
            None => Err(Error::Data(format!("missing tensor {name:?}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::sq_norm).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Flat coordinate accessor across all tensors in order.
    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (ti, t) in self.tensors.iter().enumerate() {
            if flat < t.len() {
                return (ti, flat);
            }
            flat -= t.len();
        }
        panic!("flat index out of range");
    }

    pub fn get_flat(&self, flat: usize) -> f64 {
        let (t, i) = self.locate(flat);
        self.tensors[t].data()[i]
    }

    pub fn set_flat(&mut self, flat: usize, value: f64) {
        let (t, i) = self.locate(flat);
        self.tensors[t].data_mut()[i] = value;
    }

    pub fn flat_name(&self, flat: usize) -> String {
        let (t, i) = self.locate(flat);
        format!("{}[{i}]", self.names[t])
    }
}

/// Result of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate with the largest error, as `name[flat_index]`.
    pub worst_coordinate: String,
    pub coordinates: usize,
}

/// Compares the analytic gradient returned by `value_and_grad` with
/// central differences `(L(θ+h) - L(θ-h)) / 2h` over every coordinate.
///
/// Per-coordinate error is `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)`.
pub fn grad_check<F>(value_and_grad: F, params: &ParamSet, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(f64, ParamSet)>,
{
    if !(1e-6..=1e-4).contains(&step) {
        return Err(Error::Config(format!(
            "finite-difference step {step} outside [1e-6, 1e-4]"
        )));
    }
    let (l0, analytic) = value_and_grad(params)?;
    let (l1, _) = value_and_grad(params)?;
    if l0.to_bits() != l1.to_bits() {
        return Err(Error::Determinism(format!(
            "two evaluations at the same point gave {l0} and {l1}"
        )));
    }
    if !analytic.same_layout(params) {
        return Err(Error::Dimension(
            "gradient layout does not match parameters".into(),
        ));
    }

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let mut worst_at = 0;
    let n = params.num_scalars();
    for flat in 0..n {
        let orig = params.get_flat(flat);
        probe.set_flat(flat, orig + step);
        let (plus, _) = value_and_grad(&probe)?;
        probe.set_flat(flat, orig - step);
        let (minus, _) = value_and_grad(&probe)?;
        probe.set_flat(flat, orig);

        let numeric = (plus - minus) / (2.0 * step);
        let ga = analytic.get_flat(flat);
        let err = (ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1e-8);
        if !err.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient comparison at {}",
                params.flat_name(flat)
            )));
        }
        if err > worst {
            worst = err;
            worst_at = flat;
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        worst_coordinate: if n > 0 {
            params.flat_name(worst_at)
        } else {
            String::new()
        },
        coordinates: n,
    })
}
