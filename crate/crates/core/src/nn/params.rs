//! Flat parameter storage with a named segment layout.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.size()
    }
}

/// Ordered, contiguous, non-overlapping segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    pub fn new<S: Into<String>>(parts: impl IntoIterator<Item = (S, Vec<usize>)>) -> Arc<Self> {
        let mut offset = 0;
        let segments = parts
            .into_iter()
            .map(|(name, shape)| {
                let seg = Segment { name: name.into(), offset, shape };
                offset += seg.size();
                seg
            })
            .collect();
        Arc::new(Layout { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(Segment::size).sum()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    fn is_contiguous(&self) -> bool {
        let mut expected = 0;
        for s in &self.segments {
            if s.offset != expected {
                return false;
            }
            expected += s.size();
        }
        true
    }
}

/// A flat vector of trainable reals together with its layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total_len();
        ParamVector { layout, values: vec![0.0; n] }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if !layout.is_contiguous() {
            return Err(Error::Layout("segments are not contiguous".into()));
        }
        if values.len() != layout.total_len() {
            return Err(Error::Dimension { expected: layout.total_len(), got: values.len() });
        }
        Ok(ParamVector { layout, values })
    }

    /// A single-segment vector, for standalone gradients in tests and examples.
    pub fn flat(values: Vec<f64>) -> Self {
        let layout = Layout::new([("flat", vec![values.len()])]);
        ParamVector { layout, values }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Layout(format!("{} vs {} parameters", self.len(), other.len())))
        }
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.segment(name)?.range();
        Some(&mut self.values[range])
    }

    /// Copy out the named segments as a new vector with its own layout.
    pub fn restrict(&self, names: &[&str]) -> Result<ParamVector> {
        let mut parts = Vec::with_capacity(names.len());
        let mut values = Vec::new();
        for name in names {
            let seg = self.layout.segment(name).ok_or_else(|| Error::Layout(format!("no segment named `{name}`")))?;
            parts.push((seg.name.clone(), seg.shape.clone()));
            values.extend_from_slice(&self.values[seg.range()]);
        }
        ParamVector::from_values(Layout::new(parts), values)
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Element-wise mean of equally laid out vectors, reduced in slice order.
    pub fn mean_of(vectors: &[ParamVector]) -> Result<ParamVector> {
        let first = vectors.first().ok_or_else(|| Error::Config("mean of zero vectors".into()))?;
        let mut acc = ParamVector::zeros(first.layout.clone());
        for v in vectors {
            acc.add_scaled(v, 1.0)?;
        }
        acc.scale(1.0 / vectors.len() as f64);
        Ok(acc)
    }
}
