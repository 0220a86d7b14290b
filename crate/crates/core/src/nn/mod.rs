//! Minimal differentiable feed-forward stack.
//!
//! The feature extractor is a chain of dense layers with `tanh` between them
//! and a linear last layer whose output is ℓ2-normalized per row. The
//! classifier head is one dense layer of `2K` neurons on top of the normalized
//! features. Backward passes are written by hand, and the normalization
//! Jacobian is part of the graph.
//!
//! Layout: weights are `(out_dim, in_dim)`, batches are `(rows, dim)`, all
//! row-major `f64`.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::{Error, Result};

/// Pre-normalization rows with a norm at or below this are rejected.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Array2<f64>,
    biases: Array1<f64>,
}

/// Gradients for one dense layer, shaped like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl DenseGrad {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((out_dim, in_dim)),
            biases: Array1::zeros(out_dim),
        }
    }
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, biases: Array1<f64>) -> Result<Self> {
        if weights.nrows() != biases.len() {
            return Err(Error::ShapeMismatch(format!(
                "dense layer has {} weight rows but {} biases",
                weights.nrows(),
                biases.len()
            )));
        }
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::InvalidInput("dense layer dims must be > 0".into()));
        }
        if !weights.iter().chain(biases.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dense layer parameters".into()));
        }
        Ok(Self {
            weights: weights.as_standard_layout().into_owned(),
            biases,
        })
    }

    /// Symmetric uniform init `U(-1/√fan_in, 1/√fan_in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let weights = Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng));
        let biases = Array1::from_shape_simple_fn(out_dim, || dist.sample(rng));
        Self { weights, biases }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &Array1<f64> {
        &self.biases
    }

    /// `input · Wᵀ + b` for a `(rows, in_dim)` batch.
    pub fn forward(&self, input: ArrayView2<f64>) -> Array2<f64> {
        let mut out = input.dot(&self.weights.t());
        out += &self.biases;
        out
    }

    /// Given the layer input and `∂L/∂output`, returns the parameter
    /// gradients and `∂L/∂input`.
    pub fn backward(
        &self,
        input: ArrayView2<f64>,
        grad_output: ArrayView2<f64>,
    ) -> (DenseGrad, Array2<f64>) {
        let weights = grad_output.t().dot(&input);
        let biases = grad_output.sum_axis(Axis(0));
        let grad_input = grad_output.dot(&self.weights);
        (DenseGrad { weights, biases }, grad_input)
    }

    fn slices(&self) -> [&[f64]; 2] {
        [
            self.weights.as_slice().expect("standard layout"),
            self.biases.as_slice().expect("standard layout"),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.weights.as_slice_mut().expect("standard layout"),
            self.biases.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// The feature extractor: dense layers with `tanh` between them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractorParams {
    layers: Vec<DenseLayer>,
}

impl FeatureExtractorParams {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput(
                "extractor needs at least one layer".into(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// `input_dim → hidden[0] → … → feature_dim`.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        feature_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dims: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(feature_dim))
            .collect();
        if dims.contains(&0) {
            return Err(Error::InvalidInput("layer dims must be > 0".into()));
        }
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::init(w[0], w[1], rng))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }
}

/// The composite classifier: `2K` neurons over `d`-dimensional features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHeadParams {
    layer: DenseLayer,
}

impl ClassifierHeadParams {
    pub fn new(weights: Array2<f64>, biases: Array1<f64>) -> Result<Self> {
        let layer = DenseLayer::new(weights, biases)?;
        if layer.out_dim() % 2 != 0 || layer.out_dim() < 4 {
            return Err(Error::ShapeMismatch(format!(
                "classifier head needs 2K rows with K >= 2, got {}",
                layer.out_dim()
            )));
        }
        Ok(Self { layer })
    }

    pub fn init<R: Rng + ?Sized>(
        feature_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 source classes, got {num_classes}"
            )));
        }
        Ok(Self {
            layer: DenseLayer::init(feature_dim, 2 * num_classes, rng),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.layer.out_dim() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.layer.in_dim()
    }

    pub fn layer(&self) -> &DenseLayer {
        &self.layer
    }
}

fn check_finite(batch: ArrayView2<f64>, what: &str) -> Result<()> {
    if batch.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Divide each row by its Euclidean norm; returns the normalized rows and norms.
fn normalize_rows(raw: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut out = raw.clone();
    let mut norms = Array1::zeros(raw.nrows());
    for (row_idx, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm.is_infinite() {
            return Err(Error::NonFinite(format!(
                "feature norm of row {row_idx} overflows"
            )));
        }
        if !(norm > DEGENERATE_NORM) {
            return Err(Error::DegenerateFeature { row: row_idx });
        }
        row /= norm;
        norms[row_idx] = norm;
    }
    Ok((out, norms))
}

/// Runs the extractor and returns ℓ2-normalized features, one row per input.
pub fn extract_features(
    params: &FeatureExtractorParams,
    batch: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    Ok(extractor_forward(params, batch)?.features)
}

struct ExtractorTrace {
    /// Input to each layer; entry 0 is the batch itself.
    layer_inputs: Vec<Array2<f64>>,
    norms: Array1<f64>,
    features: Array2<f64>,
}

fn extractor_forward(
    params: &FeatureExtractorParams,
    batch: ArrayView2<f64>,
) -> Result<ExtractorTrace> {
    if batch.nrows() == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if batch.ncols() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} columns, extractor expects {}",
            batch.ncols(),
            params.input_dim()
        )));
    }
    check_finite(batch, "input batch")?;

    let last = params.layers.len() - 1;
    let mut layer_inputs = Vec::with_capacity(params.layers.len());
    let mut current = batch.to_owned();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut out = layer.forward(current.view());
        if i < last {
            out.mapv_inplace(f64::tanh);
        }
        layer_inputs.push(std::mem::replace(&mut current, out));
    }
    check_finite(current.view(), "extractor output")?;
    let (features, norms) = normalize_rows(&current)?;
    Ok(ExtractorTrace {
        layer_inputs,
        norms,
        features,
    })
}

/// `logits[i] = W · f_i + b`. Columns `0..K` are MC logits; columns `k` and
/// `K + k` are the (positive, negative) logits of OVA predictor `k`.
pub fn classifier_logits(
    head: &ClassifierHeadParams,
    features: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if features.ncols() != head.feature_dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have {} columns, head expects {}",
            features.ncols(),
            head.feature_dim()
        )));
    }
    Ok(head.layer.forward(features))
}

/// Extractor and head together; the unit that gets trained and checkpointed.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub extractor: FeatureExtractorParams,
    pub head: ClassifierHeadParams,
}

/// Everything `Network::backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    layer_inputs: Vec<Array2<f64>>,
    norms: Array1<f64>,
    pub features: Array2<f64>,
    pub logits: Array2<f64>,
    shape: Vec<(usize, usize)>,
}

impl ForwardPass {
    pub fn batch_size(&self) -> usize {
        self.features.nrows()
    }
}

impl Network {
    pub fn new(extractor: FeatureExtractorParams, head: ClassifierHeadParams) -> Result<Self> {
        if extractor.feature_dim() != head.feature_dim() {
            return Err(Error::ShapeMismatch(format!(
                "extractor outputs {} features, head expects {}",
                extractor.feature_dim(),
                head.feature_dim()
            )));
        }
        Ok(Self { extractor, head })
    }

    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        feature_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let extractor = FeatureExtractorParams::init(input_dim, hidden, feature_dim, rng)?;
        let head = ClassifierHeadParams::init(feature_dim, num_classes, rng)?;
        Self::new(extractor, head)
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    fn shape(&self) -> Vec<(usize, usize)> {
        self.extractor
            .layers
            .iter()
            .chain(std::iter::once(&self.head.layer))
            .map(|l| (l.out_dim(), l.in_dim()))
            .collect()
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<ForwardPass> {
        let trace = extractor_forward(&self.extractor, batch)?;
        let logits = classifier_logits(&self.head, trace.features.view())?;
        Ok(ForwardPass {
            layer_inputs: trace.layer_inputs,
            norms: trace.norms,
            features: trace.features,
            logits,
            shape: self.shape(),
        })
    }

    /// Backpropagates `∂L/∂logits` (and optionally an extra `∂L/∂features`
    /// for losses defined directly on the normalized features) to every
    /// parameter.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_logits: ArrayView2<f64>,
        grad_features: Option<ArrayView2<f64>>,
    ) -> Result<GradientBundle> {
        if pass.shape != self.shape() {
            return Err(Error::NoMatchingForward(
                "forward pass was recorded for a differently shaped network".into(),
            ));
        }
        let rows = pass.batch_size();
        if grad_logits.dim() != pass.logits.dim() {
            return Err(Error::NoMatchingForward(format!(
                "logit gradient is {:?}, forward produced {:?}",
                grad_logits.dim(),
                pass.logits.dim()
            )));
        }
        if let Some(g) = grad_features {
            if g.dim() != pass.features.dim() {
                return Err(Error::NoMatchingForward(format!(
                    "feature gradient is {:?}, forward produced {:?}",
                    g.dim(),
                    pass.features.dim()
                )));
            }
        }

        let (head_grad, mut grad_f) = self.head.layer.backward(pass.features.view(), grad_logits);
        if let Some(g) = grad_features {
            grad_f += &g;
        }

        // Through f = h / |h|: ∂L/∂h = (g - f (f·g)) / |h|.
        let mut grad = grad_f;
        for r in 0..rows {
            let f = pass.features.row(r);
            let proj = f.dot(&grad.row(r));
            let norm = pass.norms[r];
            let mut g = grad.row_mut(r);
            g.zip_mut_with(&f, |gi, &fi| *gi = (*gi - fi * proj) / norm);
        }

        let layers = &self.extractor.layers;
        let mut layer_grads = vec![None; layers.len()];
        for i in (0..layers.len()).rev() {
            let input = &pass.layer_inputs[i];
            let (lg, grad_in) = layers[i].backward(input.view(), grad.view());
            layer_grads[i] = Some(lg);
            if i > 0 {
                // input = tanh(pre); d tanh = 1 - tanh².
                grad = grad_in;
                grad.zip_mut_with(input, |g, &a| *g *= 1.0 - a * a);
            }
        }

        Ok(GradientBundle {
            extractor: layer_grads
                .into_iter()
                .map(|g| g.expect("filled"))
                .collect(),
            head: head_grad,
        })
    }

    /// Parameter slices in a fixed order: each extractor layer's weights then
    /// biases, then the head's weights then biases.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.extractor
            .layers
            .iter()
            .chain(std::iter::once(&self.head.layer))
            .flat_map(|l| l.slices())
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.extractor
            .layers
            .iter_mut()
            .chain(std::iter::once(&mut self.head.layer))
            .flat_map(|l| l.slices_mut())
            .collect()
    }

    /// Number of slices in [`Self::param_slices`] that belong to the extractor.
    pub fn extractor_slice_count(&self) -> usize {
        2 * self.extractor.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

/// Gradients mirroring the shapes of [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub extractor: Vec<DenseGrad>,
    pub head: DenseGrad,
}

impl GradientBundle {
    pub fn zeros_like(network: &Network) -> Self {
        Self {
            extractor: network
                .extractor
                .layers
                .iter()
                .map(|l| DenseGrad::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            head: DenseGrad::zeros(network.head.layer.out_dim(), network.head.layer.in_dim()),
        }
    }

    fn grads(&self) -> impl Iterator<Item = &DenseGrad> {
        self.extractor.iter().chain(std::iter::once(&self.head))
    }

    /// Same ordering as [`Network::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.grads()
            .flat_map(|g| {
                [
                    g.weights.as_slice().expect("standard layout"),
                    g.biases.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.extractor
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
            .flat_map(|g| {
                [
                    g.weights.as_slice_mut().expect("standard layout"),
                    g.biases.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn matches(&self, network: &Network) -> bool {
        let ours: Vec<usize> = self.slices().iter().map(|s| s.len()).collect();
        let theirs: Vec<usize> = network.param_slices().iter().map(|s| s.len()).collect();
        ours == theirs
            && self
                .grads()
                .zip(
                    network
                        .extractor
                        .layers
                        .iter()
                        .chain(std::iter::once(&network.head.layer)),
                )
                .all(|(g, l)| g.weights.dim() == l.weights.dim())
    }

    pub fn add_assign(&mut self, other: &GradientBundle) -> Result<()> {
        let mut mine = self.slices_mut();
        let theirs = other.slices();
        if mine.len() != theirs.len() || mine.iter().zip(&theirs).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::ShapeMismatch(
                "gradient bundles differ in shape".into(),
            ));
        }
        for (a, b) in mine.iter_mut().zip(theirs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Flattened copy, in [`Network::param_slices`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_net() -> FeatureExtractorParams {
        let layer = DenseLayer::new(array![[1.0, 0.0], [0.0, 1.0]], array![0.0, 0.0]).unwrap();
        FeatureExtractorParams::new(vec![layer]).unwrap()
    }

    #[test]
    fn identity_extractor_normalizes_3_4() {
        let f = extract_features(&identity_net(), array![[3.0, 4.0]].view()).unwrap();
        assert!((f[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((f[[0, 1]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_activation_is_degenerate() {
        let layer = DenseLayer::new(Array2::zeros((2, 2)), Array1::zeros(2)).unwrap();
        let params = FeatureExtractorParams::new(vec![layer]).unwrap();
        let err = extract_features(&params, array![[0.0, 0.0]].view()).unwrap_err();
        assert!(matches!(err, Error::DegenerateFeature { row: 0 }));
        assert!(err.is_numerical());
    }

    #[test]
    fn random_two_layer_rows_are_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = FeatureExtractorParams::init(5, &[16], 8, &mut rng).unwrap();
        let batch = Array2::from_shape_fn((20, 5), |(i, j)| ((i * 7 + j * 3) as f64).sin() * 2.0);
        let f = extract_features(&params, batch.view()).unwrap();
        for row in f.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_non_finite_and_wrong_width() {
        let params = identity_net();
        assert!(matches!(
            extract_features(&params, array![[f64::NAN, 1.0]].view()),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            extract_features(&params, array![[1.0, 2.0, 3.0]].view()),
            Err(Error::ShapeMismatch(_))
        ));
        // Finite activations whose squared norm overflows.
        let err = extract_features(&params, array![[1e200, 1e200]].view()).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let head = ClassifierHeadParams::new(Array2::zeros((4, 3)), Array1::zeros(4)).unwrap();
        let f = array![[1.0, 0.0, 0.0], [0.0, 0.6, 0.8]];
        let logits = classifier_logits(&head, f.view()).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_rows_select_first_basis_vector() {
        // K = 2, d = 4: W = I4, so logits equal the feature vector.
        let head = ClassifierHeadParams::new(Array2::eye(4), Array1::zeros(4)).unwrap();
        let logits = classifier_logits(&head, array![[1.0, 0.0, 0.0, 0.0]].view()).unwrap();
        assert_eq!(logits.row(0).to_vec(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn head_requires_even_rows_and_matching_width() {
        assert!(ClassifierHeadParams::new(Array2::zeros((5, 2)), Array1::zeros(5)).is_err());
        assert!(ClassifierHeadParams::new(Array2::zeros((2, 2)), Array1::zeros(2)).is_err());
        let head = ClassifierHeadParams::new(Array2::zeros((4, 3)), Array1::zeros(4)).unwrap();
        assert!(classifier_logits(&head, array![[1.0, 0.0]].view()).is_err());
    }

    #[test]
    fn logits_match_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let head = ClassifierHeadParams::init(6, 5, &mut rng).unwrap();
        let raw = Array2::from_shape_fn((7, 6), |(i, j)| ((i + 1) as f64 * 0.37 + j as f64).cos());
        let (features, _) = normalize_rows(&raw).unwrap();
        let logits = classifier_logits(&head, features.view()).unwrap();
        let w = head.layer().weights();
        let b = head.layer().biases();
        for i in 0..7 {
            for o in 0..10 {
                let mut acc = b[o];
                for k in 0..6 {
                    acc += w[[o, k]] * features[[i, k]];
                }
                assert!((logits[[i, o]] - acc).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::init(3, &[4], 3, 2, &mut rng).unwrap();
        let batch = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        let pass = net.forward(batch.view()).unwrap();
        let grads = net
            .backward(&pass, Array2::zeros((2, 4)).view(), None)
            .unwrap();
        assert!(grads.to_flat().iter().all(|&g| g == 0.0));
        assert!(grads.matches(&net));
    }

    #[test]
    fn squared_norm_loss_on_a_linear_layer() {
        // L = |W x|²  ⇒  ∂L/∂W = 2 W x xᵀ.
        let w = array![[1.0, 2.0, -1.0], [0.5, 0.0, 3.0]];
        let layer = DenseLayer::new(w.clone(), Array1::zeros(2)).unwrap();
        let x = array![[0.3, -0.7, 1.1]];
        let y = layer.forward(x.view());
        let upstream = &y * 2.0;
        let (grad, _) = layer.backward(x.view(), upstream.view());
        let xcol = x.t();
        let expected = (w.dot(&xcol) * 2.0).dot(&x);
        for (a, b) in grad.weights.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_mismatched_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Network::init(3, &[4], 3, 2, &mut rng).unwrap();
        let other = Network::init(3, &[5], 3, 2, &mut rng).unwrap();
        let pass = other.forward(array![[0.1, 0.2, 0.3]].view()).unwrap();
        assert!(matches!(
            net.backward(&pass, Array2::zeros((1, 4)).view(), None),
            Err(Error::NoMatchingForward(_))
        ));
        let pass = net.forward(array![[0.1, 0.2, 0.3]].view()).unwrap();
        assert!(matches!(
            net.backward(&pass, Array2::zeros((2, 4)).view(), None),
            Err(Error::NoMatchingForward(_))
        ));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = Network::init(4, &[8], 4, 3, &mut rng).unwrap();
        let batch = Array2::from_shape_fn((6, 4), |(i, j)| (i as f64 - j as f64) * 0.3 + 0.1);
        let a = net.forward(batch.view()).unwrap();
        let b = net.forward(batch.view()).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.features, b.features);
    }
}
