//! Sequential networks built from an [`ArchSpec`].
//!
//! Every conv layer and every hidden FC layer is followed by an implicit
//! ReLU; the final FC produces logits for softmax cross-entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arch::{shape_infer, ArchSpec, LayerDesc};
use crate::error::{Error, Result};
use crate::gnpp::{gnpp_backward, gnpp_forward, GaussianBlur, GnppCache, GnppConfig};
use crate::layers::{relu, relu_backward, softmax_xent, Conv2d, Dropout, Linear, Pool2d, PoolCache};
use crate::optim::SgdState;
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

const INIT_STREAM: u64 = 0;
const DROPOUT_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    /// Phrase pooling must sit directly before a pooling layer.
    #[default]
    Strict,
    /// Anything goes (ablations).
    Relaxed,
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Relu,
    Pool(Pool2d),
    Gnpp(GnppConfig<T>),
    Blur(GaussianBlur<T>),
    Fc(Linear<T>),
    Dropout(Dropout<T>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    name: String,
    arch_index: usize,
    layer: Layer<T>,
    input: Option<Tensor4<T>>,
    pool_cache: PoolCache,
    gnpp_cache: Option<GnppCache>,
    grads: Vec<Tensor4<T>>,
}

impl<T: Scalar> Node<T> {
    fn new(name: String, arch_index: usize, layer: Layer<T>) -> Self {
        let grads = match &layer {
            Layer::Conv(c) => vec![c.kernel.zeros_like(), c.bias.zeros_like()],
            Layer::Fc(f) => vec![f.weight.zeros_like(), f.bias.zeros_like()],
            _ => Vec::new(),
        };
        Node {
            name,
            arch_index,
            layer,
            input: None,
            pool_cache: PoolCache::default(),
            gnpp_cache: None,
            grads,
        }
    }

    fn params(&self) -> Vec<&Tensor4<T>> {
        match &self.layer {
            Layer::Conv(c) => vec![&c.kernel, &c.bias],
            Layer::Fc(f) => vec![&f.weight, &f.bias],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        match &mut self.layer {
            Layer::Conv(c) => vec![&mut c.kernel, &mut c.bias],
            Layer::Fc(f) => vec![&mut f.weight, &mut f.bias],
            _ => Vec::new(),
        }
    }
}

/// A parameter tensor together with the node that owns it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub layer: String,
    pub name: &'static str,
    pub shape: Shape4,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    arch: ArchSpec,
    input_shape: Shape4,
    seed: u64,
    nodes: Vec<Node<T>>,
    dropout_rng: ChaCha8Rng,
}

/// Builds a network with He-normal weights and zero biases, reproducible from `seed`.
pub fn build_network<T: Scalar>(arch: &ArchSpec, input: Shape4, seed: u64, placement: Placement) -> Result<Network<T>> {
    if placement == Placement::Strict {
        arch.check_placement()?;
    }
    let input = input.with_batch(1);
    let shapes = shape_infer(arch, input)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let mut he = |shape: Shape4, fan_in: usize| -> Result<Tensor4<T>> {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).map_err(|e| Error::param(e.to_string()))?;
        Tensor4::from_fn(shape, |_, _, _, _| T::lit(normal.sample(&mut rng)))
    };

    let mut nodes = Vec::new();
    let mut prev = input;
    let (mut n_conv, mut n_pool, mut n_fc, mut n_gnpp, mut n_blur, mut n_drop) = (0, 0, 0, 0, 0, 0);
    let last = arch.layers.len() - 1;
    for (i, (desc, &out)) in arch.layers.iter().zip(&shapes).enumerate() {
        match *desc {
            LayerDesc::Conv {
                k,
                stride,
                pad,
                out_channels,
            } => {
                n_conv += 1;
                let fan_in = prev.c * k * k;
                let kernel = he(Shape4::new(out_channels, prev.c, k, k), fan_in)?;
                let bias = Tensor4::zeros(Shape4::new(out_channels, 1, 1, 1))?;
                let name = format!("conv{n_conv}");
                nodes.push(Node::new(
                    name.clone(),
                    i,
                    Layer::Conv(Conv2d::new(kernel, bias, stride, pad)?),
                ));
                nodes.push(Node::new(format!("{name}.relu"), i, Layer::Relu));
            }
            LayerDesc::MaxPool { .. } | LayerDesc::AvgPool { .. } => {
                n_pool += 1;
                let (k, stride) = match *desc {
                    LayerDesc::MaxPool { k, stride } | LayerDesc::AvgPool { k, stride } => (k, stride),
                    _ => unreachable!(),
                };
                let kind = desc.pool_kind().expect("pool layer");
                nodes.push(Node::new(
                    format!("pool{n_pool}"),
                    i,
                    Layer::Pool(Pool2d::new(kind, k, stride)?),
                ));
            }
            LayerDesc::Fc { out: width } => {
                n_fc += 1;
                let fan_in = prev.sample_len();
                let weight = he(Shape4::new(width, fan_in, 1, 1), fan_in)?;
                let bias = Tensor4::zeros(Shape4::new(width, 1, 1, 1))?;
                let name = format!("fc{n_fc}");
                nodes.push(Node::new(name.clone(), i, Layer::Fc(Linear::new(weight, bias)?)));
                if i != last {
                    nodes.push(Node::new(format!("{name}.relu"), i, Layer::Relu));
                }
            }
            LayerDesc::Dropout { ratio } => {
                n_drop += 1;
                nodes.push(Node::new(
                    format!("dropout{n_drop}"),
                    i,
                    Layer::Dropout(Dropout::new(ratio)?),
                ));
            }
            LayerDesc::Gnpp { nb_type, sigma } => {
                n_gnpp += 1;
                let cfg = GnppConfig::new(nb_type, T::lit(sigma))?;
                nodes.push(Node::new(format!("gnpp{n_gnpp}"), i, Layer::Gnpp(cfg)));
            }
            LayerDesc::GaussBlur { std } => {
                n_blur += 1;
                let blur = GaussianBlur::new(T::lit(std))?;
                nodes.push(Node::new(format!("blur{n_blur}"), i, Layer::Blur(blur)));
            }
        }
        prev = out;
    }

    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(DROPOUT_STREAM);
    Ok(Network {
        arch: arch.clone(),
        input_shape: input,
        seed,
        nodes,
        dropout_rng,
    })
}

impl<T: Scalar> Network<T> {
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    /// Per-sample input shape (batch dimension 1).
    pub fn input_shape(&self) -> Shape4 {
        self.input_shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn classes(&self) -> usize {
        self.arch.classes()
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.name.as_str()).collect()
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Layer<T>)> {
        self.nodes.iter().map(|n| (n.name.as_str(), &n.layer))
    }

    pub fn param_info(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        for n in &self.nodes {
            for (p, name) in n.params().into_iter().zip(["weight", "bias"]) {
                out.push(ParamInfo {
                    layer: n.name.clone(),
                    name,
                    shape: p.shape(),
                });
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor4<T>> {
        self.nodes.iter().flat_map(|n| n.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        self.nodes.iter_mut().flat_map(|n| n.params_mut()).collect()
    }

    /// Gradients from the last `backward`, aligned with `params`.
    pub fn grads(&self) -> Vec<&Tensor4<T>> {
        self.nodes.iter().flat_map(|n| n.grads.iter()).collect()
    }

    pub fn grads_mut(&mut self) -> Vec<&mut Tensor4<T>> {
        self.nodes.iter_mut().flat_map(|n| n.grads.iter_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Replaces all parameters, checking shapes.
    pub fn set_params(&mut self, values: Vec<Tensor4<T>>) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(Error::mismatch(
                format!("{} parameter tensors", slots.len()),
                values.len(),
            ));
        }
        for (slot, v) in slots.iter_mut().zip(&values) {
            v.ensure_shape(slot.shape())?;
        }
        for (slot, v) in slots.into_iter().zip(values) {
            *slot = v;
        }
        Ok(())
    }

    /// Freezes (or releases) dropout masks so repeated forwards compute the same function.
    pub fn freeze_dropout(&mut self, frozen: bool) {
        for n in &mut self.nodes {
            if let Layer::Dropout(d) = &mut n.layer {
                d.set_frozen(frozen);
            }
        }
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = x.shape();
        if s.with_batch(1) != self.input_shape {
            return Err(Error::mismatch(self.input_shape, s));
        }
        Ok(())
    }

    /// Runs the network and returns `(n, classes, 1, 1)` logits. Inputs to
    /// every layer are kept for `backward`.
    pub fn forward(&mut self, x: &Tensor4<T>, training: bool) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for node in &mut self.nodes {
            let out = Self::node_forward(node, &cur, training, &mut self.dropout_rng)?;
            node.input = Some(cur);
            cur = out;
        }
        Ok(cur)
    }

    fn node_forward(node: &mut Node<T>, x: &Tensor4<T>, training: bool, rng: &mut ChaCha8Rng) -> Result<Tensor4<T>> {
        Ok(match &mut node.layer {
            Layer::Conv(c) => c.forward(x)?,
            Layer::Relu => relu(x),
            Layer::Pool(p) => {
                let (y, cache) = p.forward(x)?;
                node.pool_cache = cache;
                y
            }
            Layer::Gnpp(cfg) => {
                let (y, cache) = gnpp_forward(x, cfg);
                node.gnpp_cache = Some(cache);
                y
            }
            Layer::Blur(b) => b.forward(x),
            Layer::Fc(f) => f.forward(x)?,
            Layer::Dropout(d) => d.forward(x, rng, training),
        })
    }

    /// Inference-mode activations right after arch layer `arch_index`
    /// (including its implicit ReLU).
    pub fn features_at(&mut self, x: &Tensor4<T>, arch_index: usize) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        if arch_index >= self.arch.layers.len() {
            return Err(Error::IndexOutOfRange {
                what: "layer",
                index: arch_index,
                limit: self.arch.layers.len(),
            });
        }
        let mut cur = x.clone();
        for node in &mut self.nodes {
            if node.arch_index > arch_index {
                break;
            }
            cur = Self::node_forward(node, &cur, false, &mut self.dropout_rng)?;
        }
        Ok(cur)
    }

    /// Backpropagates `grad_logits` through the cached forward pass,
    /// overwriting parameter gradients. Returns the input gradient when
    /// `need_input` is set.
    pub fn backward(&mut self, grad_logits: &Tensor4<T>, need_input: bool) -> Result<Option<Tensor4<T>>> {
        let mut grad = grad_logits.clone();
        for (pos, node) in self.nodes.iter_mut().enumerate().rev() {
            let first = pos == 0;
            let want_input = need_input || !first;
            let x = node
                .input
                .as_ref()
                .ok_or_else(|| Error::param("backward called before forward"))?;
            let next = match &node.layer {
                Layer::Conv(c) => {
                    let g = c.backward(x, &grad, want_input)?;
                    node.grads = vec![g.kernel, g.bias];
                    g.input
                }
                Layer::Fc(f) => {
                    let g = f.backward(x, &grad, want_input)?;
                    node.grads = vec![g.weight, g.bias];
                    g.input
                }
                Layer::Relu => Some(relu_backward(x, &grad)?),
                Layer::Pool(p) => Some(p.backward(x.shape(), &grad, &node.pool_cache)?),
                Layer::Gnpp(cfg) => {
                    let cache = node
                        .gnpp_cache
                        .as_ref()
                        .ok_or_else(|| Error::param("phrase pooling cache missing"))?;
                    Some(gnpp_backward(&grad, cache, cfg)?)
                }
                Layer::Blur(b) => Some(b.backward(&grad)),
                Layer::Dropout(d) => Some(d.backward(&grad)?),
            };
            match next {
                Some(g) => grad = g,
                None => return Ok(None),
            }
        }
        Ok(if need_input { Some(grad) } else { None })
    }

    /// Forward, loss and backward for one batch. Returns the mean loss.
    pub fn train_batch(&mut self, x: &Tensor4<T>, labels: &[usize]) -> Result<T> {
        let logits = self.forward(x, true)?;
        let (loss, grad) = softmax_xent(&logits, labels)?;
        self.backward(&grad, false)?;
        Ok(loss)
    }

    pub fn sgd_step(&mut self, sgd: &mut SgdState<T>) -> Result<()> {
        let mut params = Vec::new();
        let mut grads = Vec::new();
        for node in &mut self.nodes {
            let Node { layer, grads: g, .. } = node;
            match layer {
                Layer::Conv(c) => params.extend([&mut c.kernel, &mut c.bias]),
                Layer::Fc(f) => params.extend([&mut f.weight, &mut f.bias]),
                _ => {}
            }
            grads.extend(g.iter());
        }
        sgd.step(&mut params, &grads)
    }

    /// Predicted class per sample (first maximum wins).
    pub fn predict(&mut self, x: &Tensor4<T>) -> Result<Vec<usize>> {
        let logits = self.forward(x, false)?;
        let classes = logits.shape().sample_len();
        Ok(logits
            .data()
            .chunks_exact(classes)
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    /// Drops cached activations to release memory.
    pub fn clear_cache(&mut self) {
        for n in &mut self.nodes {
            n.input = None;
            n.gnpp_cache = None;
            n.pool_cache = PoolCache::default();
        }
    }

    /// Same architecture and parameters in another scalar type.
    pub fn cast<U: Scalar>(&self) -> Result<Network<U>> {
        let mut net = build_network::<U>(&self.arch, self.input_shape, self.seed, Placement::Relaxed)?;
        net.set_params(self.params().into_iter().map(|p| p.cast()).collect())?;
        Ok(net)
    }
}
