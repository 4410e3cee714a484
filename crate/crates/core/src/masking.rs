//! Gradient-energy scores, row/column/per-neuron mask construction, the
//! selection objective with its brute-force oracle, index-storage
//! accounting and the mask file format.
//!
//! A mask selects which weight entries receive updates. For a gradient `H`
//! and a binary mask `M`, `⟨H, H⊙M⟩ = ‖H⊙M‖²`, so the retained gradient
//! energy of a mask is the squared norm of what it keeps and the objective
//! `‖H − H⊙M‖²` is what it discards. Under a row-cardinality budget the
//! objective is minimized by keeping the `k` rows with the largest squared
//! sums.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GrftError, Result};
use crate::losses::scl_loss;
use crate::model::{backward, forward, GradientSet, ModelParams, Role, Upstream};
use crate::numeric::{Matrix, Scalar};

/// Which structure a freshly built mask takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskVariant {
    Row,
    Col,
    Sparse,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Whole rows (output neurons), sorted ascending.
    Rows(Vec<usize>),
    /// Whole columns (input connections), sorted ascending.
    Cols(Vec<usize>),
    /// Per-row sorted column lists.
    SparsePerNeuron(Vec<Vec<usize>>),
    /// Row-major bit matrix.
    Dense(Vec<bool>),
    /// Every entry.
    Full,
}

/// Binary selection over a `rows × cols` weight matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerMask {
    shape: (usize, usize),
    selection: Selection,
}

fn check_sorted_unique(indices: &[usize], bound: usize, what: &str) -> Result<()> {
    for w in indices.windows(2) {
        if w[0] >= w[1] {
            return Err(GrftError::input(format!("{what} indices must be strictly increasing")));
        }
    }
    if let Some(&last) = indices.last() {
        if last >= bound {
            return Err(GrftError::input(format!("{what} index {last} out of bounds ({bound})")));
        }
    }
    Ok(())
}

/// `⌈log₂ n⌉`, with 0 for `n ≤ 1`.
pub fn index_bits(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

impl LayerMask {
    pub fn new(shape: (usize, usize), selection: Selection) -> Result<Self> {
        let (rows, cols) = shape;
        match &selection {
            Selection::Rows(idx) => check_sorted_unique(idx, rows, "row")?,
            Selection::Cols(idx) => check_sorted_unique(idx, cols, "column")?,
            Selection::SparsePerNeuron(per_row) => {
                if per_row.len() != rows {
                    return Err(GrftError::input(format!(
                        "sparse mask has {} rows, expected {rows}",
                        per_row.len()
                    )));
                }
                for r in per_row {
                    check_sorted_unique(r, cols, "column")?;
                }
            }
            Selection::Dense(bits) => {
                if bits.len() != rows * cols {
                    return Err(GrftError::input("dense mask bit count does not match shape"));
                }
            }
            Selection::Full => {}
        }
        Ok(Self { shape, selection })
    }

    pub fn full(shape: (usize, usize)) -> Self {
        Self { shape, selection: Selection::Full }
    }

    /// Selects nothing.
    pub fn empty(shape: (usize, usize)) -> Self {
        Self { shape, selection: Selection::Rows(Vec::new()) }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn selection(&self) -> &Selection {
        &self.selection
    }

    pub fn variant_name(&self) -> &'static str {
        match self.selection {
            Selection::Rows(_) => "row",
            Selection::Cols(_) => "col",
            Selection::SparsePerNeuron(_) => "sparse",
            Selection::Dense(_) => "dense",
            Selection::Full => "full",
        }
    }

    /// Row-major selection bits for the weight matrix.
    pub fn weight_bits(&self) -> Vec<bool> {
        let (rows, cols) = self.shape;
        let mut bits = vec![false; rows * cols];
        match &self.selection {
            Selection::Rows(idx) => {
                for &i in idx {
                    bits[i * cols..(i + 1) * cols].iter_mut().for_each(|b| *b = true);
                }
            }
            Selection::Cols(idx) => {
                for i in 0..rows {
                    for &j in idx {
                        bits[i * cols + j] = true;
                    }
                }
            }
            Selection::SparsePerNeuron(per_row) => {
                for (i, r) in per_row.iter().enumerate() {
                    for &j in r {
                        bits[i * cols + j] = true;
                    }
                }
            }
            Selection::Dense(d) => bits.copy_from_slice(d),
            Selection::Full => bits.iter_mut().for_each(|b| *b = true),
        }
        bits
    }

    /// Which biases train: those of selected rows for row masks, none for
    /// column masks, rows with any selected connection otherwise.
    pub fn bias_bits(&self) -> Vec<bool> {
        let (rows, cols) = self.shape;
        match &self.selection {
            Selection::Rows(idx) => {
                let mut bits = vec![false; rows];
                idx.iter().for_each(|&i| bits[i] = true);
                bits
            }
            Selection::Cols(_) => vec![false; rows],
            Selection::SparsePerNeuron(per_row) => per_row.iter().map(|r| !r.is_empty()).collect(),
            Selection::Dense(d) => (0..rows).map(|i| d[i * cols..(i + 1) * cols].iter().any(|b| *b)).collect(),
            Selection::Full => vec![true; rows],
        }
    }

    /// 0/1 matrix realization.
    pub fn to_dense<T: Scalar>(&self) -> Matrix<T> {
        let bits = self.weight_bits();
        let (rows, cols) = self.shape;
        Matrix::from_fn(rows, cols, |i, j| if bits[i * cols + j] { T::one() } else { T::zero() })
    }

    pub fn selected_weights(&self) -> usize {
        let (rows, cols) = self.shape;
        match &self.selection {
            Selection::Rows(idx) => idx.len() * cols,
            Selection::Cols(idx) => idx.len() * rows,
            Selection::SparsePerNeuron(per_row) => per_row.iter().map(Vec::len).sum(),
            Selection::Dense(d) => d.iter().filter(|b| **b).count(),
            Selection::Full => rows * cols,
        }
    }

    pub fn selected_biases(&self) -> usize {
        self.bias_bits().iter().filter(|b| **b).count()
    }

    /// Bits needed to store the selection: indices cost `⌈log₂ n⌉` bits each,
    /// a dense mask one bit per entry, a full mask nothing.
    pub fn storage_bits(&self) -> usize {
        let (rows, cols) = self.shape;
        match &self.selection {
            Selection::Rows(idx) => idx.len() * index_bits(rows),
            Selection::Cols(idx) => idx.len() * index_bits(cols),
            Selection::SparsePerNeuron(per_row) => per_row.iter().map(Vec::len).sum::<usize>() * index_bits(cols),
            Selection::Dense(_) => rows * cols,
            Selection::Full => 0,
        }
    }
}

/// Storage cost of each representation for `k` selections on a
/// `rows × cols` matrix: `(row indices, per-neuron sparse, dense)`.
pub fn storage_comparison(rows: usize, cols: usize, k: usize) -> (usize, usize, usize) {
    (k * index_bits(rows), rows * k * index_bits(cols), rows * cols)
}

/// `Sᵢ = Σⱼ hᵢⱼ²`, `j` ascending.
pub fn row_scores<T: Scalar>(h: &Matrix<T>) -> Vec<T> {
    (0..h.rows())
        .map(|i| {
            let mut acc = T::zero();
            for v in h.row(i) {
                acc = acc + *v * *v;
            }
            acc
        })
        .collect()
}

/// `Sⱼ = Σᵢ hᵢⱼ²`, `i` ascending.
pub fn col_scores<T: Scalar>(h: &Matrix<T>) -> Vec<T> {
    let mut scores = vec![T::zero(); h.cols()];
    for i in 0..h.rows() {
        for (s, v) in scores.iter_mut().zip(h.row(i)) {
            *s = *s + *v * *v;
        }
    }
    scores
}

/// Indices of the `k` largest scores, returned sorted ascending. Ties go to
/// the lower index.
pub fn topk_indices<T: Scalar>(scores: &[T], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(GrftError::config(format!("k = {k} outside [1, {}]", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut top = order[..k].to_vec();
    top.sort_unstable();
    Ok(top)
}

pub fn build_mask<T: Scalar>(h: &Matrix<T>, k: usize, variant: MaskVariant) -> Result<LayerMask> {
    let shape = h.shape();
    let selection = match variant {
        MaskVariant::Row => Selection::Rows(topk_indices(&row_scores(h), k)?),
        MaskVariant::Col => Selection::Cols(topk_indices(&col_scores(h), k)?),
        MaskVariant::Sparse => {
            let per_row = (0..h.rows())
                .map(|i| {
                    let mags: Vec<T> = h.row(i).iter().map(|v| v.abs()).collect();
                    topk_indices(&mags, k)
                })
                .collect::<Result<_>>()?;
            Selection::SparsePerNeuron(per_row)
        }
    };
    Ok(LayerMask { shape, selection })
}

fn check_mask_shape<T: Scalar>(h: &Matrix<T>, mask: &LayerMask) -> Result<()> {
    if h.shape() != mask.shape {
        return Err(GrftError::shape(format!(
            "gradient is {}x{} but mask is {}x{}",
            h.rows(),
            h.cols(),
            mask.shape.0,
            mask.shape.1
        )));
    }
    Ok(())
}

/// `‖H − H⊙M‖²`: gradient energy the mask discards.
pub fn mask_objective<T: Scalar>(h: &Matrix<T>, mask: &LayerMask) -> Result<T> {
    check_mask_shape(h, mask)?;
    let kept = h.elementwise_mul(&mask.to_dense())?;
    Ok(h.sub(&kept)?.frobenius_sq())
}

/// `‖H⊙M‖²`: gradient energy the mask keeps.
pub fn retained_energy<T: Scalar>(h: &Matrix<T>, mask: &LayerMask) -> Result<T> {
    check_mask_shape(h, mask)?;
    Ok(h.elementwise_mul(&mask.to_dense())?.frobenius_sq())
}

/// Largest row count `brute_force_best_rows` will enumerate.
pub const BRUTE_FORCE_MAX_ROWS: usize = 20;

/// Exhaustive search over all `k`-row subsets in lexicographic order,
/// keeping the first subset with the smallest objective.
pub fn brute_force_best_rows<T: Scalar>(h: &Matrix<T>, k: usize) -> Result<Vec<usize>> {
    let rows = h.rows();
    if rows > BRUTE_FORCE_MAX_ROWS {
        return Err(GrftError::Guard(format!("{rows} rows exceeds the enumeration limit of {BRUTE_FORCE_MAX_ROWS}")));
    }
    if k == 0 || k > rows {
        return Err(GrftError::config(format!("k = {k} outside [1, {rows}]")));
    }
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best: Option<(T, Vec<usize>)> = None;
    loop {
        let mask = LayerMask::new(h.shape(), Selection::Rows(subset.clone()))?;
        let value = mask_objective(h, &mask)?;
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, subset.clone()));
        }
        // next combination in lexicographic order
        let mut pos = k;
        while pos > 0 && subset[pos - 1] == rows - k + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
        subset[pos - 1] += 1;
        for p in pos..k {
            subset[p] = subset[p - 1] + 1;
        }
    }
    Ok(best.expect("at least one subset").1)
}

/// Column analogue of `brute_force_best_rows`, via the transpose.
pub fn brute_force_best_cols<T: Scalar>(h: &Matrix<T>, k: usize) -> Result<Vec<usize>> {
    brute_force_best_rows(&h.transpose(), k)
}

/// One mask per model layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GradientMaskSet {
    pub layers: Vec<LayerMask>,
}

impl GradientMaskSet {
    pub fn full<T: Scalar>(model: &ModelParams<T>) -> Self {
        Self { layers: model.layers().iter().map(|l| LayerMask::full(l.weight.shape())).collect() }
    }

    /// Only the head trains.
    pub fn head_only<T: Scalar>(model: &ModelParams<T>) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| {
                    if l.role == Role::Head {
                        LayerMask::full(l.weight.shape())
                    } else {
                        LayerMask::empty(l.weight.shape())
                    }
                })
                .collect(),
        }
    }

    pub fn validate<T: Scalar>(&self, model: &ModelParams<T>) -> Result<()> {
        if self.layers.len() != model.num_layers() {
            return Err(GrftError::shape(format!(
                "{} masks for {} layers",
                self.layers.len(),
                model.num_layers()
            )));
        }
        for (i, (mask, layer)) in self.layers.iter().zip(model.layers()).enumerate() {
            if mask.shape != layer.weight.shape() {
                return Err(GrftError::shape(format!("mask {i} shape does not match its layer")));
            }
        }
        Ok(())
    }

    pub fn storage_bits(&self) -> usize {
        self.layers.iter().map(LayerMask::storage_bits).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = MaskFile {
            layers: self
                .layers
                .iter()
                .map(|m| {
                    let (rows, cols) = m.shape;
                    let indices = match &m.selection {
                        Selection::Rows(idx) | Selection::Cols(idx) => Some(IndexList::Flat(idx.clone())),
                        Selection::SparsePerNeuron(per_row) => Some(IndexList::Nested(per_row.clone())),
                        Selection::Dense(bits) => Some(IndexList::Nested(
                            (0..rows).map(|i| (0..cols).filter(|&j| bits[i * cols + j]).collect()).collect(),
                        )),
                        Selection::Full => None,
                    };
                    MaskFileLayer {
                        variant: m.variant_name().to_string(),
                        shape: [rows, cols],
                        indices,
                        storage_bits: Some(m.storage_bits()),
                    }
                })
                .collect(),
            storage_bits: Some(self.storage_bits()),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MaskFile = serde_json::from_str(text)?;
        let layers = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let shape = (l.shape[0], l.shape[1]);
                let flat = |list: Option<IndexList>| -> Result<Vec<usize>> {
                    match list {
                        Some(IndexList::Flat(v)) => Ok(v),
                        _ => Err(GrftError::input(format!("mask layer {i}: expected a flat index list"))),
                    }
                };
                let nested = |list: Option<IndexList>| -> Result<Vec<Vec<usize>>> {
                    match list {
                        Some(IndexList::Nested(v)) => Ok(v),
                        Some(IndexList::Flat(v)) if v.is_empty() => Ok(Vec::new()),
                        Some(IndexList::Flat(v)) if v.len() == 1 && shape.0 == 1 => Ok(vec![v]),
                        _ => Err(GrftError::input(format!("mask layer {i}: expected per-row index lists"))),
                    }
                };
                let selection = match l.variant.as_str() {
                    "row" => Selection::Rows(flat(l.indices)?),
                    "col" => Selection::Cols(flat(l.indices)?),
                    "sparse" => Selection::SparsePerNeuron(nested(l.indices)?),
                    "dense" => {
                        let per_row = nested(l.indices)?;
                        if per_row.len() != shape.0 {
                            return Err(GrftError::input(format!("mask layer {i}: dense row count mismatch")));
                        }
                        let mut bits = vec![false; shape.0 * shape.1];
                        for (r, cols) in per_row.iter().enumerate() {
                            check_sorted_unique(cols, shape.1, "column")?;
                            cols.iter().for_each(|&c| bits[r * shape.1 + c] = true);
                        }
                        Selection::Dense(bits)
                    }
                    "full" => Selection::Full,
                    other => return Err(GrftError::input(format!("mask layer {i}: unknown variant {other:?}"))),
                };
                LayerMask::new(shape, selection)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum IndexList {
    Flat(Vec<usize>),
    Nested(Vec<Vec<usize>>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskFileLayer {
    variant: String,
    shape: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    indices: Option<IndexList>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    storage_bits: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskFile {
    layers: Vec<MaskFileLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    storage_bits: Option<usize>,
}

/// Mean per-sample gradient of the contrastive loss at `pre`, taken over the
/// whole of `(x, labels)` in one pass. The head receives no gradient.
pub fn mask_gradients<T: Scalar>(
    pre: &ModelParams<T>,
    x: &Matrix<T>,
    labels: &[usize],
    tau: T,
) -> Result<GradientSet<T>> {
    if x.rows() == 0 {
        return Err(GrftError::input("mask data is empty"));
    }
    let out = forward(pre, x)?;
    let (_, d_features) = scl_loss(&out.features, labels, tau)?;
    let grads = backward(pre, &out.cache, Upstream::Features(&d_features))?;
    Ok(grads.scale(T::one() / T::of(x.rows() as f64)))
}

/// Builds one mask per non-head layer from `grads`; the head is always full.
pub fn build_mask_set<T: Scalar>(
    model: &ModelParams<T>,
    grads: &GradientSet<T>,
    k: usize,
    variant: MaskVariant,
) -> Result<GradientMaskSet> {
    if !grads.matches(model) {
        return Err(GrftError::shape("gradient set does not match model"));
    }
    let layers = model
        .layers()
        .iter()
        .zip(&grads.layers)
        .enumerate()
        .map(|(i, (layer, g))| {
            if layer.role == Role::Head {
                return Ok(LayerMask::full(layer.weight.shape()));
            }
            let (rows, cols) = layer.weight.shape();
            let limit = match variant {
                MaskVariant::Row => rows,
                MaskVariant::Col | MaskVariant::Sparse => cols,
            };
            let dim = if variant == MaskVariant::Row { "rows" } else { "columns" };
            if k == 0 || k > limit {
                return Err(GrftError::config(format!("k = {k} is invalid for layer {i}, which has {limit} {dim}")));
            }
            build_mask(&g.weight, k, variant)
        })
        .collect::<Result<_>>()?;
    Ok(GradientMaskSet { layers })
}

/// Gradient masks for fine-tuning from `pre`: contrastive gradients over the
/// mask data, then top-`k` selection per maskable layer.
pub fn compute_mask_set<T: Scalar>(
    pre: &ModelParams<T>,
    x: &Matrix<T>,
    labels: &[usize],
    k: usize,
    variant: MaskVariant,
    tau: T,
) -> Result<GradientMaskSet> {
    let grads = mask_gradients(pre, x, labels, tau)?;
    build_mask_set(pre, &grads, k, variant)
}

/// Fraction of model parameters (weights and biases) that train under `masks`.
pub fn trainable_fraction<T: Scalar>(model: &ModelParams<T>, masks: &GradientMaskSet) -> Result<f64> {
    masks.validate(model)?;
    let trainable: usize = masks.layers.iter().map(|m| m.selected_weights() + m.selected_biases()).sum();
    Ok(trainable as f64 / model.param_count() as f64)
}
