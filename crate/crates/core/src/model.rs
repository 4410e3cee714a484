//! Multilayer perceptron with role-tagged layers, a cached forward pass and
//! exact backpropagation.
//!
//! Batches are `samples × features`; a layer computes `Z = X·Wᵀ + b` followed
//! by its activation, with `W` stored `out × in`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GrftError, Result};
use crate::numeric::{Matrix, Rng, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Embedding,
    Hidden,
    Head,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
        }
    }

    /// Derivative at `z`; the ReLU subgradient at 0 is 0.
    fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu if z > T::zero() => T::one(),
            Activation::Relu => T::zero(),
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// `out × in`.
    pub weight: Matrix<T>,
    /// One entry per output neuron.
    pub bias: Vec<T>,
    pub role: Role,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>, role: Role, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(GrftError::shape(format!(
                "bias length {} does not match {} weight rows",
                bias.len(),
                weight.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(GrftError::numeric("non-finite bias entry"));
        }
        Ok(Self { weight, bias, role, activation })
    }

    /// Uniform init on `[−√(1/fan_in), √(1/fan_in)]`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, role: Role, rng: &mut Rng) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        let weight = Matrix::from_fn(fan_out, fan_in, |_, _| T::of(rng.uniform_range(-bound, bound)));
        let activation = if role == Role::Head { Activation::Identity } else { Activation::Relu };
        Self { weight, bias: vec![T::zero(); fan_out], role, activation }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Ordered layer stack. The last layer is the only head; an embedding layer,
/// if present, is the first.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(GrftError::config("model needs at least one layer"));
        }
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            match layer.role {
                Role::Head if i != last => {
                    return Err(GrftError::config(format!("layer {i} is a head but not the last layer")))
                }
                Role::Embedding if i != 0 || last == 0 => {
                    return Err(GrftError::config(format!("layer {i} is an embedding but not the first layer")))
                }
                Role::Hidden if i == last => {
                    return Err(GrftError::config("last layer must have role head"))
                }
                _ => {}
            }
            if layer.bias.len() != layer.weight.rows() {
                return Err(GrftError::shape(format!("layer {i}: bias length mismatch")));
            }
            if i > 0 && layer.fan_in() != layers[i - 1].fan_out() {
                return Err(GrftError::shape(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    layer.fan_in(),
                    i - 1,
                    layers[i - 1].fan_out()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Mutable access to the layers; the layer count cannot change.
    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn num_classes(&self) -> usize {
        self.head().fan_out()
    }

    /// Output width of the penultimate layer (the head's input width).
    pub fn feature_dim(&self) -> usize {
        self.head().fan_in()
    }

    pub fn head(&self) -> &Layer<T> {
        self.layers.last().expect("non-empty")
    }

    pub fn head_index(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(Layer::fan_out));
        dims
    }

    pub fn roles(&self) -> Vec<Role> {
        self.layers.iter().map(|l| l.role).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Replaces the head with a freshly initialized one of `classes` outputs.
    pub fn reinit_head(&mut self, classes: usize, rng: &mut Rng) -> Result<()> {
        if classes == 0 {
            return Err(GrftError::config("head needs at least one class"));
        }
        let fan_in = self.feature_dim();
        *self.layers.last_mut().expect("non-empty") = Layer::init(fan_in, classes, Role::Head, rng);
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for layer in &self.layers {
            layer.weight.shape().hash(&mut h);
            for v in layer.weight.as_slice().iter().chain(&layer.bias) {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.cast(),
                    bias: l.bias.iter().map(|b| U::of(b.as_f64())).collect(),
                    role: l.role,
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

/// Default role assignment: a lone layer is the head; otherwise the first
/// layer is the embedding, the last the head, the rest hidden.
pub fn default_roles(num_layers: usize) -> Vec<Role> {
    (0..num_layers)
        .map(|i| match i {
            _ if i + 1 == num_layers => Role::Head,
            0 => Role::Embedding,
            _ => Role::Hidden,
        })
        .collect()
}

/// Builds an MLP of widths `dims` (input first). Weights are drawn
/// row-major, layer by layer, from one generator seeded with `seed`.
pub fn init_model<T: Scalar>(dims: &[usize], roles: &[Role], seed: u64) -> Result<ModelParams<T>> {
    if dims.len() < 2 {
        return Err(GrftError::config("dims needs at least an input and an output width"));
    }
    if dims.contains(&0) {
        return Err(GrftError::config("layer widths must be positive"));
    }
    if roles.len() != dims.len() - 1 {
        return Err(GrftError::config(format!(
            "{} roles given for {} layers",
            roles.len(),
            dims.len() - 1
        )));
    }
    let mut rng = Rng::new(seed);
    let layers = dims
        .windows(2)
        .zip(roles)
        .map(|(w, &role)| Layer::init(w[0], w[1], role, &mut rng))
        .collect();
    ModelParams::new(layers)
}

/// Activations retained by `forward` for `backward`.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// Input to each layer.
    inputs: Vec<Matrix<T>>,
    /// Pre-activation output of each layer.
    pre_activations: Vec<Matrix<T>>,
    fingerprint: u64,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub logits: Matrix<T>,
    /// Input to the head, i.e. the penultimate activation.
    pub features: Matrix<T>,
    pub cache: ForwardCache<T>,
}

pub fn forward<T: Scalar>(model: &ModelParams<T>, x: &Matrix<T>) -> Result<ForwardOutput<T>> {
    if x.cols() != model.input_dim() {
        return Err(GrftError::shape(format!(
            "batch has {} features, model expects {}",
            x.cols(),
            model.input_dim()
        )));
    }
    let mut inputs = Vec::with_capacity(model.num_layers());
    let mut pre_activations = Vec::with_capacity(model.num_layers());
    let mut current = x.clone();
    for layer in &model.layers {
        let mut z = current.matmul_transpose_rhs(&layer.weight)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                *v = *v + *b;
            }
        }
        z.ensure_finite("forward pass")?;
        let a = z.map(|v| layer.activation.apply(v));
        inputs.push(current);
        pre_activations.push(z);
        current = a;
    }
    let features = inputs.last().expect("non-empty").clone();
    Ok(ForwardOutput {
        logits: current,
        features,
        cache: ForwardCache { inputs, pre_activations, fingerprint: model.fingerprint() },
    })
}

/// Gradient of a scalar loss entering the network from above.
#[derive(Clone, Copy, Debug)]
pub enum Upstream<'a, T> {
    /// `∂L/∂logits`; reaches every layer.
    Logits(&'a Matrix<T>),
    /// `∂L/∂features`; the head receives a zero gradient.
    Features(&'a Matrix<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

/// Per-layer weight and bias gradients, shaped like a `ModelParams`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros_like(model: &ModelParams<T>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn matches(&self, model: &ModelParams<T>) -> bool {
        self.layers.len() == model.layers.len()
            && self
                .layers
                .iter()
                .zip(&model.layers)
                .all(|(g, l)| g.weight.shape() == l.weight.shape() && g.bias.len() == l.bias.len())
    }

    /// Entrywise sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.layers.len() != other.layers.len() {
            return Err(GrftError::shape("gradient sets have different layer counts"));
        }
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                if a.bias.len() != b.bias.len() {
                    return Err(GrftError::shape("bias gradient length mismatch"));
                }
                Ok(LayerGrad {
                    weight: a.weight.add(&b.weight)?,
                    bias: a.bias.iter().zip(&b.bias).map(|(x, y)| *x + *y).collect(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|g| LayerGrad { weight: g.weight.scale(s), bias: g.bias.iter().map(|b| *b * s).collect() })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weight.is_finite() && g.bias.iter().all(|b| b.is_finite()))
    }
}

pub fn backward<T: Scalar>(
    model: &ModelParams<T>,
    cache: &ForwardCache<T>,
    upstream: Upstream<'_, T>,
) -> Result<GradientSet<T>> {
    let n = model.num_layers();
    if cache.inputs.len() != n || cache.fingerprint != model.fingerprint() {
        return Err(GrftError::State("forward cache does not belong to this model".into()));
    }
    let batch = cache.inputs[0].rows();
    let mut grads = GradientSet::zeros_like(model);

    let (mut upper, mut grad_out) = match upstream {
        Upstream::Logits(d) => {
            if d.shape() != (batch, model.num_classes()) {
                return Err(GrftError::shape("upstream logits gradient shape mismatch"));
            }
            (n, d.clone())
        }
        Upstream::Features(d) => {
            if d.shape() != (batch, model.feature_dim()) {
                return Err(GrftError::shape("upstream feature gradient shape mismatch"));
            }
            (n - 1, d.clone())
        }
    };

    while upper > 0 {
        let idx = upper - 1;
        let layer = &model.layers[idx];
        let z = &cache.pre_activations[idx];
        let mut dz = grad_out;
        for (d, zv) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
            *d = *d * layer.activation.derivative(*zv);
        }
        let grad = &mut grads.layers[idx];
        grad.weight = dz.matmul_transpose_lhs(&cache.inputs[idx])?;
        for i in 0..dz.rows() {
            for (b, d) in grad.bias.iter_mut().zip(dz.row(i)) {
                *b = *b + *d;
            }
        }
        grad_out = if idx > 0 { dz.matmul(&layer.weight)? } else { Matrix::zeros(0, 0) };
        upper = idx;
    }
    if !grads.is_finite() {
        return Err(GrftError::numeric("non-finite gradient in backward pass"));
    }
    Ok(grads)
}

/// Index of the largest logit per row; ties resolve to the lowest class.
pub fn argmax_rows<T: Scalar>(logits: &Matrix<T>) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointLayer {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    dims: Vec<usize>,
    roles: Vec<Role>,
    layers: Vec<CheckpointLayer>,
}

/// Serializes to the checkpoint JSON layout
/// `{"dims": [...], "roles": [...], "layers": [{"weight": [[...]], "bias": [...]}]}`.
/// Numbers are written in shortest round-trip decimal form, so `f64` values
/// reload bit-exactly.
pub fn checkpoint_to_json<T: Scalar>(model: &ModelParams<T>) -> Result<String> {
    let ckpt = Checkpoint {
        dims: model.dims(),
        roles: model.roles(),
        layers: model
            .layers
            .iter()
            .map(|l| CheckpointLayer {
                weight: l.weight.to_rows().into_iter().map(|r| r.into_iter().map(Scalar::as_f64).collect()).collect(),
                bias: l.bias.iter().map(|b| b.as_f64()).collect(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&ckpt)?)
}

pub fn checkpoint_from_json<T: Scalar>(text: &str) -> Result<ModelParams<T>> {
    let ckpt: Checkpoint = serde_json::from_str(text)?;
    if ckpt.dims.len() != ckpt.layers.len() + 1 || ckpt.roles.len() != ckpt.layers.len() {
        return Err(GrftError::input("checkpoint dims/roles/layers lengths disagree"));
    }
    let layers = ckpt
        .layers
        .into_iter()
        .zip(&ckpt.roles)
        .enumerate()
        .map(|(i, (cl, &role))| {
            let rows: Vec<Vec<T>> = cl.weight.iter().map(|r| r.iter().map(|v| T::of(*v)).collect()).collect();
            let weight = if rows.is_empty() { Matrix::zeros(0, ckpt.dims[i]) } else { Matrix::from_rows(&rows)? };
            if weight.shape() != (ckpt.dims[i + 1], ckpt.dims[i]) {
                return Err(GrftError::input(format!("checkpoint layer {i} weight shape disagrees with dims")));
            }
            let activation = if role == Role::Head { Activation::Identity } else { Activation::Relu };
            Layer::new(weight, cl.bias.iter().map(|v| T::of(*v)).collect(), role, activation)
        })
        .collect::<Result<_>>()?;
    ModelParams::new(layers)
}

pub fn save_checkpoint<T: Scalar>(model: &ModelParams<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_to_json(model)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelParams<T>> {
    checkpoint_from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::finite_diff_grad;

    fn layer(w: &[&[f64]], b: &[f64], role: Role, act: Activation) -> Layer<f64> {
        Layer::new(Matrix::from_rows(w).unwrap(), b.to_vec(), role, act).unwrap()
    }

    #[test]
    fn init_respects_bounds_and_seed() {
        let m: ModelParams<f64> = init_model(&[4, 3], &[Role::Head], 7).unwrap();
        assert!(m.layers()[0].weight.as_slice().iter().all(|v| v.abs() <= 0.5));
        assert!(m.layers()[0].bias.iter().all(|b| *b == 0.0));
        let again: ModelParams<f64> = init_model(&[4, 3], &[Role::Head], 7).unwrap();
        assert_eq!(m, again);
        let deep: ModelParams<f64> = init_model(&[9, 16, 4], &default_roles(2), 1).unwrap();
        assert!(deep.layers()[0].weight.as_slice().iter().all(|v| v.abs() <= 1.0 / 3.0));
        assert!(deep.layers()[1].weight.as_slice().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(matches!(init_model::<f64>(&[], &[], 0), Err(GrftError::Config(_))));
        assert!(matches!(init_model::<f64>(&[3], &[], 0), Err(GrftError::Config(_))));
        assert!(init_model::<f64>(&[3, 2], &[Role::Hidden], 0).is_err());
        assert!(init_model::<f64>(&[3, 2, 2], &[Role::Head, Role::Head], 0).is_err());
    }

    #[test]
    fn default_role_layout() {
        assert_eq!(default_roles(1), vec![Role::Head]);
        assert_eq!(default_roles(3), vec![Role::Embedding, Role::Hidden, Role::Head]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let m = ModelParams::new(vec![layer(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0], Role::Head, Activation::Identity)])
            .unwrap();
        let x = Matrix::from_rows(&[[0.3, -2.0], [5.0, 1.5]]).unwrap();
        let out = forward(&m, &x).unwrap();
        assert_eq!(out.logits, x);
        assert_eq!(out.features, x);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut m: ModelParams<f64> = init_model(&[3, 4, 2], &default_roles(2), 0).unwrap();
        for l in m.layers_mut() {
            l.weight.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(forward(&m, &x).unwrap().logits, Matrix::zeros(1, 2));
    }

    #[test]
    fn two_layer_hand_trace() {
        // h = relu([[1,-1],[2,0]]·x + [0,-1]), y = [1,2]·h + 0.5
        let m = ModelParams::new(vec![
            layer(&[&[1.0, -1.0], &[2.0, 0.0]], &[0.0, -1.0], Role::Embedding, Activation::Relu),
            layer(&[&[1.0, 2.0]], &[0.5], Role::Head, Activation::Identity),
        ])
        .unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 1.0]]).unwrap();
        let out = forward(&m, &x).unwrap();
        // x0: z = [-1, 1] → h = [0, 1] → y = 2.5 ; x1: z = [2, 5] → h = [2, 5] → y = 12.5
        assert_eq!(out.features, Matrix::from_rows(&[[0.0, 1.0], [2.0, 5.0]]).unwrap());
        assert_eq!(out.logits, Matrix::from_rows(&[[2.5], [12.5]]).unwrap());
    }

    #[test]
    fn forward_shape_error() {
        let m: ModelParams<f64> = init_model(&[3, 2], &[Role::Head], 0).unwrap();
        assert!(matches!(forward(&m, &Matrix::zeros(1, 4)), Err(GrftError::Shape(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m: ModelParams<f64> = init_model(&[3, 5, 2], &default_roles(2), 2).unwrap();
        let x = Matrix::from_rows(&[[1.0, -1.0, 0.5], [0.2, 0.3, -0.7]]).unwrap();
        let out = forward(&m, &x).unwrap();
        let g = backward(&m, &out.cache, Upstream::Logits(&Matrix::zeros(2, 2))).unwrap();
        assert_eq!(g, GradientSet::zeros_like(&m));
    }

    #[test]
    fn linear_squared_loss_matches_closed_form() {
        // L = Σ (Wx − y)², dL/dW = 2(Wx − y)xᵀ
        let w = Matrix::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.25, -0.5]]).unwrap();
        let m = ModelParams::new(vec![Layer::new(w.clone(), vec![0.0, 0.0], Role::Head, Activation::Identity).unwrap()])
            .unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0, -1.0]]).unwrap();
        let y = Matrix::from_rows(&[[0.5, -0.5]]).unwrap();
        let out = forward(&m, &x).unwrap();
        let resid = out.logits.sub(&y).unwrap();
        let g = backward(&m, &out.cache, Upstream::Logits(&resid.scale(2.0))).unwrap();
        let closed = resid.scale(2.0).transpose().matmul(&x).unwrap();
        assert_eq!(g.layers[0].weight, closed);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m: ModelParams<f64> = init_model(&[2, 3, 2], &default_roles(2), 4).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let out = forward(&m, &x).unwrap();
        m.layers_mut()[0].weight.set(0, 0, 9.0);
        let err = backward(&m, &out.cache, Upstream::Logits(&Matrix::ones(1, 2))).unwrap_err();
        assert!(matches!(err, GrftError::State(_)));
    }

    #[test]
    fn backward_matches_finite_differences_on_random_models() {
        let mut rng = Rng::new(21);
        for trial in 0..20 {
            let dims = [1 + rng.below(6), 1 + rng.below(8), 1 + rng.below(8), 2 + rng.below(4)];
            let model: ModelParams<f64> = init_model(&dims, &default_roles(3), trial).unwrap();
            let batch = 1 + rng.below(8);
            let x = Matrix::from_fn(batch, dims[0], |_, _| rng.normal());
            let c = Matrix::from_fn(batch, dims[3], |_, _| rng.normal());
            // L = ⟨C, logits⟩ + ½‖logits‖²
            let loss = |m: &ModelParams<f64>| {
                let l = forward(m, &x).unwrap().logits;
                c.dot(&l).unwrap() + 0.5 * l.frobenius_sq()
            };
            let out = forward(&model, &x).unwrap();
            let up = c.add(&out.logits).unwrap();
            let g = backward(&model, &out.cache, Upstream::Logits(&up)).unwrap();
            for li in 0..model.num_layers() {
                let fd = finite_diff_grad(
                    |w: &Matrix<f64>| {
                        let mut m = model.clone();
                        m.layers_mut()[li].weight = w.clone();
                        loss(&m)
                    },
                    &model.layers()[li].weight,
                    1e-5,
                )
                .unwrap();
                for (a, b) in g.layers[li].weight.as_slice().iter().zip(fd.as_slice()) {
                    assert!((a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1e-2), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let m: ModelParams<f64> = init_model(&[4, 8, 3], &default_roles(2), 5).unwrap();
        let x = Matrix::from_fn(6, 4, |i, j| (i as f64 - j as f64) * 0.37);
        let a = forward(&m, &x).unwrap();
        let b = forward(&m, &x).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m: ModelParams<f64> = init_model(&[5, 7, 3], &default_roles(2), 99).unwrap();
        let text = checkpoint_to_json(&m).unwrap();
        let back: ModelParams<f64> = checkpoint_from_json(&text).unwrap();
        assert_eq!(back, m);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["dims"], serde_json::json!([5, 7, 3]));
        assert_eq!(v["roles"], serde_json::json!(["embedding", "head"]));
    }

    #[test]
    fn checkpoint_rejects_inconsistent_files() {
        let bad = r#"{"dims":[2,1],"roles":["head"],"layers":[{"weight":[[1.0,2.0,3.0]],"bias":[0.0]}]}"#;
        assert!(checkpoint_from_json::<f64>(bad).is_err());
        let extra = r#"{"dims":[2,1],"roles":["head"],"layers":[],"x":1}"#;
        assert!(checkpoint_from_json::<f64>(extra).is_err());
    }
}
