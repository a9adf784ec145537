//! Flat parameter storage.
//!
//! A [`ParamSet`] keeps every tensor of a model in one contiguous buffer and
//! describes the named sub-tensors through a shared [`Layout`]. Vector algebra
//! (dot products, axpy, norms) therefore runs over a single slice, while layer
//! code borrows matrix views by name.

use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};

use crate::error::{Error, Result};

/// One named tensor inside a [`Layout`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Entry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered description of the tensors held by a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    entries: Vec<Entry>,
    total: usize,
}

impl Layout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn require(&self, name: &str) -> &Entry {
        self.get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not present in layout"))
    }
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    entries: Vec<Entry>,
    total: usize,
}

impl LayoutBuilder {
    pub fn push(mut self, name: impl Into<String>, shape: &[usize]) -> Self {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name `{name}`"
        );
        let entry = Entry {
            name,
            shape: shape.to_vec(),
            offset: self.total,
        };
        self.total += entry.len();
        self.entries.push(entry);
        self
    }

    pub fn build(self) -> Arc<Layout> {
        Arc::new(Layout {
            entries: self.entries,
            total: self.total,
        })
    }
}

/// Named dense real tensors stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![0.0; layout.total_dim()];
        Self { layout, data }
    }

    pub fn from_vec(layout: Arc<Layout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total_dim() {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} values for layout of {}",
                data.len(),
                layout.total_dim()
            )));
        }
        Ok(Self { layout, data })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn filled_like(&self, value: f64) -> Self {
        Self {
            layout: self.layout.clone(),
            data: vec![value; self.data.len()],
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn total_dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn entry(&self, name: &str) -> &[f64] {
        let e = self.layout.require(name);
        &self.data[e.offset..e.offset + e.len()]
    }

    pub fn entry_mut(&mut self, name: &str) -> &mut [f64] {
        let e = self.layout.require(name).clone();
        &mut self.data[e.offset..e.offset + e.len()]
    }

    /// Row-major matrix view of a two-dimensional entry.
    pub fn matrix(&self, name: &str) -> ArrayView2<'_, f64> {
        let e = self.layout.require(name);
        assert_eq!(e.shape.len(), 2, "`{name}` is not a matrix");
        ArrayView2::from_shape((e.shape[0], e.shape[1]), &self.data[e.offset..e.offset + e.len()])
            .expect("layout shape matches buffer")
    }

    pub fn matrix_mut(&mut self, name: &str) -> ArrayViewMut2<'_, f64> {
        let e = self.layout.require(name).clone();
        assert_eq!(e.shape.len(), 2, "`{name}` is not a matrix");
        ArrayViewMut2::from_shape(
            (e.shape[0], e.shape[1]),
            &mut self.data[e.offset..e.offset + e.len()],
        )
        .expect("layout shape matches buffer")
    }

    pub fn vector(&self, name: &str) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.entry(name))
    }

    pub fn vector_mut(&mut self, name: &str) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(self.entry_mut(name))
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_same_shape(&self, other: &ParamSet) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "parameter sets of {} and {} values with different layouts",
                self.total_dim(),
                other.total_dim()
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Name of the first entry holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.layout
            .entries()
            .iter()
            .find(|e| {
                self.data[e.offset..e.offset + e.len()]
                    .iter()
                    .any(|v| !v.is_finite())
            })
            .map(|e| e.name.as_str())
    }

    pub fn dot(&self, other: &ParamSet) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ParamSet) {
        debug_assert!(self.same_shape(x));
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &ParamSet) -> ParamSet {
        debug_assert!(self.same_shape(other));
        ParamSet {
            layout: self.layout.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        }
    }
}

/// A gradient taken against a [`ParamSet`], with the loss it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub params: ParamSet,
    pub loss: f64,
}

/// Step size for [`axpy_update`]: one scalar, or one rate per parameter.
#[derive(Debug, Clone, Copy)]
pub enum Step<'a> {
    Scalar(f64),
    PerEntry(&'a ParamSet),
}

/// Returns `theta - step * g`.
pub fn axpy_update(theta: &ParamSet, g: &ParamSet, step: Step<'_>) -> Result<ParamSet> {
    theta.check_same_shape(g)?;
    let mut out = theta.clone();
    match step {
        Step::Scalar(s) => {
            if !s.is_finite() {
                return Err(Error::RejectedInput(format!("non-finite step {s}")));
            }
            out.axpy(-s, g);
        }
        Step::PerEntry(rates) => {
            theta.check_same_shape(rates)?;
            if !rates.is_finite() {
                return Err(Error::RejectedInput("non-finite per-entry step".into()));
            }
            for ((o, r), v) in out.data.iter_mut().zip(&rates.data).zip(&g.data) {
                *o -= r * v;
            }
        }
    }
    Ok(out)
}
