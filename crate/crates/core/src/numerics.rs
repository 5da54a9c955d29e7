//! Flat, layer-partitioned parameter storage and seeded randomness.
//!
//! Every reduction here sums left to right in index order, so repeating a
//! computation on identical inputs gives bit-identical results.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Shape of one named parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Vector,
    /// Row-major `rows x cols` matrix.
    Matrix {
        rows: usize,
        cols: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpan {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Shape,
}

impl LayerSpan {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Ordered list of contiguous, non-overlapping layer spans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    layers: Vec<LayerSpan>,
    total: usize,
}

impl Layout {
    /// Build a layout by packing the given `(name, shape)` blocks back to back.
    pub fn new<S: Into<String>>(
        blocks: impl IntoIterator<Item = (S, Shape, usize)>,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut offset = 0;
        for (name, shape, len) in blocks {
            let name = name.into();
            if let Shape::Matrix { rows, cols } = shape {
                if rows * cols != len {
                    return Err(Error::Config(format!(
                        "layer {name}: {rows}x{cols} matrix cannot hold {len} values"
                    )));
                }
            }
            if layers.iter().any(|l: &LayerSpan| l.name == name) {
                return Err(Error::Config(format!("duplicate layer name {name}")));
            }
            layers.push(LayerSpan {
                name,
                offset,
                len,
                shape,
            });
            offset += len;
        }
        Ok(Layout {
            layers,
            total: offset,
        })
    }

    /// A single vector layer named `L0`.
    pub fn single(len: usize) -> Self {
        Layout::new([("L0", Shape::Vector, len)]).expect("single layer is always valid")
    }

    pub fn layers(&self) -> &[LayerSpan] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

/// Model parameters (or anything shaped like them: gradients, moments,
/// tangents) stored as one flat vector with a shared layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn zeros(layout: &Arc<Layout>) -> Self {
        ParamVector {
            values: vec![0.0; layout.len()],
            layout: Arc::clone(layout),
        }
    }

    pub fn from_values(layout: &Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(ParamVector {
            values,
            layout: Arc::clone(layout),
        })
    }

    /// Single-layer vector, mostly useful in tests.
    pub fn from_slice(values: &[f64]) -> Self {
        ParamVector {
            values: values.to_vec(),
            layout: Arc::new(Layout::single(values.len())),
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
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

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer(&self, index: usize) -> &[f64] {
        &self.values[self.layout.layers[index].range()]
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut [f64] {
        let range = self.layout.layers[index].range();
        &mut self.values[range]
    }

    /// Same-layout vector with every entry zero.
    pub fn zeros_like(&self) -> Self {
        ParamVector::zeros(&self.layout)
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch(format!(
                "{} layers / {} values vs {} layers / {} values",
                self.layout.layers.len(),
                self.len(),
                other.layout.layers.len(),
                other.len()
            )))
        }
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        Ok(dot_slices(&self.values, &other.values))
    }

    pub fn norm(&self) -> f64 {
        dot_slices(&self.values, &self.values).sqrt()
    }

    /// Euclidean norm of each layer, in layout order.
    pub fn layer_norms(&self) -> Vec<f64> {
        self.layout
            .layers
            .iter()
            .map(|l| {
                let s = &self.values[l.range()];
                dot_slices(s, s).sqrt()
            })
            .collect()
    }

    pub fn layer_norm_map(&self) -> BTreeMap<String, f64> {
        self.layout
            .layers
            .iter()
            .zip(self.layer_norms())
            .map(|(l, n)| (l.name.clone(), n))
            .collect()
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &ParamVector) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scaled(&self, scale: f64) -> Self {
        ParamVector {
            values: self.values.iter().map(|v| v * scale).collect(),
            layout: Arc::clone(&self.layout),
        }
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }
}

/// Left-to-right dot product.
pub fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `dot` as a free function over parameter vectors.
pub fn dot(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    a.dot(b)
}

/// Per-layer Euclidean norms keyed by layer name.
pub fn layer_norms(x: &ParamVector) -> BTreeMap<String, f64> {
    x.layer_norm_map()
}

/// SplitMix64 finaliser used to derive independent seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a base seed with an ordered list of indices. The result is kept
/// below 2^63 so derived seeds can be written back as config integers.
pub fn derive_seed(base: u64, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(mix64(base), |acc, &i| mix64(acc ^ mix64(i.wrapping_add(1))))
        >> 1
}

/// Seeded generator identified by `(seed, stream_id)`.
///
/// Streams with the same seed but different ids are independent, so the
/// data, batch-order and initialisation draws never interfere.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha12Rng,
}

impl Rng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Rng {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh generator on another stream of the same seed.
    pub fn fork(&self, stream_id: u64) -> Rng {
        Rng::new(self.seed, stream_id)
    }

    pub fn gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn draw_gaussian(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.gaussian()).collect()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// `n` standard-normal draws; advances `rng`.
pub fn rng_draw_gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    rng.draw_gaussian(n)
}
