//! Flat parameter and gradient vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named, contiguous slice of a [`ParameterVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered segments covering `0..P` without gaps or overlaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    /// Builds a layout by packing `(name, shape)` pairs back to back.
    pub fn packed<I, S>(parts: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<usize>)>,
        S: Into<String>,
    {
        let mut offset = 0;
        let segments = parts
            .into_iter()
            .map(|(name, shape)| {
                let seg = Segment {
                    name: name.into(),
                    offset,
                    shape,
                };
                offset += seg.len();
                seg
            })
            .collect();
        Layout { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len())
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Name of the segment that owns flat index `index`.
    pub fn segment_of(&self, index: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.range().contains(&index))
    }
}

/// Model parameters as one flat `f64` array plus its segment layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::shape("parameter vector", layout.total_len(), values.len()));
        }
        Ok(ParameterVector { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        ParameterVector {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    /// Returns the first segment holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.layout
            .segments()
            .iter()
            .find(|s| self.values[s.range()].iter().any(|v| !v.is_finite()))
            .map(|s| s.name.as_str())
    }

    /// Rounds every value to the nearest 32-bit float.
    ///
    /// The trainer keeps parameters 32-bit representable so the checkpoint
    /// files hold exactly the values gradients were computed at.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            *v = f64::from(*v as f32);
        }
    }
}

/// A loss gradient with its Euclidean norm cached.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    values: Vec<f64>,
    norm: f64,
}

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Self {
        let norm = l2_norm(&values);
        GradientVector { values, norm }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dot(&self, other: &GradientVector) -> f64 {
        dot(&self.values, &other.values)
    }

    /// Multiplies every entry by `factor`, keeping the cached norm in sync.
    pub fn scaled(&self, factor: f64) -> GradientVector {
        GradientVector::new(self.values.iter().map(|v| v * factor).collect())
    }

    /// Unit-norm copy, or `None` when the norm is below `floor`.
    pub fn normalized(&self, floor: f64) -> Option<GradientVector> {
        if self.norm < floor {
            return None;
        }
        Some(self.scaled(1.0 / self.norm))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four independent accumulators let the loop vectorize while keeping a
    // fixed summation order.
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Mean of equally sized vectors, reduced pairwise in a fixed order so the
/// result does not depend on how the inputs were produced.
pub fn pairwise_mean(vectors: &[Vec<f64>]) -> Vec<f64> {
    assert!(!vectors.is_empty(), "mean of zero vectors");
    let mut sum = pairwise_sum(vectors);
    let n = vectors.len() as f64;
    for v in &mut sum {
        *v /= n;
    }
    sum
}

fn pairwise_sum(vectors: &[Vec<f64>]) -> Vec<f64> {
    match vectors.len() {
        1 => vectors[0].clone(),
        n => {
            let (left, right) = vectors.split_at(n / 2);
            let mut acc = pairwise_sum(left);
            let rhs = pairwise_sum(right);
            for (a, b) in acc.iter_mut().zip(rhs) {
                *a += b;
            }
            acc
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packed_layout_is_contiguous() {
        let layout = Layout::packed([("w", vec![3, 2]), ("b", vec![3]), ("v", vec![1, 3])]);
        assert_eq!(layout.total_len(), 12);
        let segs = layout.segments();
        for pair in segs.windows(2) {
            assert_eq!(pair[0].offset + pair[0].len(), pair[1].offset);
        }
        assert_eq!(layout.segment_of(7).unwrap().name, "b");
    }

    #[test]
    fn rejects_length_mismatch() {
        let layout = Layout::packed([("w", vec![2, 2])]);
        assert!(matches!(
            ParameterVector::new(vec![0.0; 3], layout),
            Err(Error::Shape { expected: 4, actual: 3, .. })
        ));
    }

    #[test]
    fn cached_norm_matches_values() {
        let g = GradientVector::new(vec![3.0, 4.0, 12.0]);
        assert_eq!(g.norm(), 13.0);
        let unit = g.normalized(1e-12).unwrap();
        assert!((unit.norm() - 1.0).abs() < 1e-12);
        assert!(GradientVector::new(vec![0.0; 3]).normalized(1e-12).is_none());
    }

    #[test]
    fn non_finite_reports_segment() {
        let layout = Layout::packed([("a", vec![2]), ("b", vec![2])]);
        let p = ParameterVector::new(vec![0.0, 1.0, f64::NAN, 0.0], layout).unwrap();
        assert_eq!(p.first_non_finite(), Some("b"));
    }

    #[test]
    fn pairwise_mean_of_constant_vectors() {
        let vs = vec![vec![1.0, 2.0]; 7];
        assert_eq!(pairwise_mean(&vs), vec![1.0, 2.0]);
    }
}
