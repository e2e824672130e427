//! Central-difference gradient checks in 64-bit mode.
//!
//! A [`GradModel`] exposes a scalar objective over a list of named tensors
//! together with its analytic gradient. [`check_model`] perturbs entries one
//! at a time and compares. An entry whose error exceeds the tolerance but
//! whose analytic value matches one of the one-sided differences is counted
//! as a kink (the objective is not differentiable there) rather than a
//! failure.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gnpp::{gnpp_backward, gnpp_forward, GaussianBlur, GnppConfig, NeighborhoodType};
use crate::layers::{relu, relu_backward, softmax_xent, Conv2d, Dropout, Linear, Pool2d, PoolKind};
use crate::network::Network;
use crate::tensor::{Shape4, Tensor4};

pub trait GradModel {
    /// `(layer, tensor)` name of every checked tensor.
    fn names(&self) -> Vec<(String, String)>;
    fn tensor_len(&self, t: usize) -> usize;
    fn value(&mut self, t: usize, i: usize) -> f64;
    fn set_value(&mut self, t: usize, i: usize, v: f64);
    fn loss(&mut self) -> Result<f64>;
    /// Analytic gradients, one tensor per name.
    fn analytic(&mut self) -> Result<Vec<Tensor4<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Entries checked per tensor; `None` checks all of them.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_per_tensor: None,
            seed: 0,
        }
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub layer: String,
    pub tensor: String,
    pub checked: usize,
    pub kinks: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub tolerance: f64,
    pub checks: Vec<TensorCheck>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    /// Worst error per layer, in first-seen order.
    pub fn per_layer(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for c in &self.checks {
            match out.iter_mut().find(|(l, _)| *l == c.layer) {
                Some((_, e)) => *e = e.max(c.max_rel_error),
                None => out.push((c.layer.clone(), c.max_rel_error)),
            }
        }
        out
    }
}

pub fn check_model<M: GradModel + ?Sized>(model: &mut M, opts: &GradCheckOptions) -> Result<GradReport> {
    if !(opts.eps > 0.0) {
        return Err(Error::param(format!("eps must be positive, got {}", opts.eps)));
    }
    let names = model.names();
    let analytic = model.analytic()?;
    if analytic.len() != names.len() {
        return Err(Error::mismatch(format!("{} gradients", names.len()), analytic.len()));
    }
    let base = model.loss()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::with_capacity(names.len());
    for (t, ((layer, tensor), grad)) in names.into_iter().zip(&analytic).enumerate() {
        let len = model.tensor_len(t);
        if grad.len() != len {
            return Err(Error::mismatch(
                format!("{len} gradient entries for {layer}.{tensor}"),
                grad.len(),
            ));
        }
        let indices: Vec<usize> = match opts.max_per_tensor {
            Some(m) if m < len => {
                let mut v = sample(&mut rng, len, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut check = TensorCheck {
            layer,
            tensor,
            checked: indices.len(),
            kinks: 0,
            max_rel_error: 0.0,
            worst_index: 0,
        };
        for i in indices {
            let orig = model.value(t, i);
            model.set_value(t, i, orig + opts.eps);
            let plus = model.loss()?;
            model.set_value(t, i, orig - opts.eps);
            let minus = model.loss()?;
            model.set_value(t, i, orig);
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = grad.data()[i];
            let mut err = relative_error(a, numeric, opts.floor);
            if err >= opts.tolerance {
                let right = (plus - base) / opts.eps;
                let left = (base - minus) / opts.eps;
                let one_sided = relative_error(a, right, opts.floor).min(relative_error(a, left, opts.floor));
                if one_sided < opts.tolerance && relative_error(left, right, opts.floor) >= opts.tolerance {
                    check.kinks += 1;
                    err = one_sided;
                }
            }
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = i;
            }
        }
        checks.push(check);
    }
    Ok(GradReport {
        tolerance: opts.tolerance,
        checks,
    })
}

/// A network, a fixed batch and its labels. Checks every parameter tensor
/// plus the input, with dropout masks frozen.
pub struct NetModel<'a> {
    pub net: &'a mut Network<f64>,
    pub x: Tensor4<f64>,
    pub labels: Vec<usize>,
}

impl<'a> NetModel<'a> {
    pub fn new(net: &'a mut Network<f64>, x: Tensor4<f64>, labels: Vec<usize>) -> Result<Self> {
        net.freeze_dropout(true);
        // draws the masks once
        net.forward(&x, true)?;
        Ok(NetModel { net, x, labels })
    }

    fn param_tensors(&self) -> usize {
        self.net.params().len()
    }
}

impl GradModel for NetModel<'_> {
    fn names(&self) -> Vec<(String, String)> {
        let mut v: Vec<_> = self
            .net
            .param_info()
            .into_iter()
            .map(|p| (p.layer, p.name.to_string()))
            .collect();
        v.push(("input".into(), "data".into()));
        v
    }

    fn tensor_len(&self, t: usize) -> usize {
        if t == self.param_tensors() {
            self.x.len()
        } else {
            self.net.params()[t].len()
        }
    }

    fn value(&mut self, t: usize, i: usize) -> f64 {
        if t == self.param_tensors() {
            self.x.data()[i]
        } else {
            self.net.params()[t].data()[i]
        }
    }

    fn set_value(&mut self, t: usize, i: usize, v: f64) {
        if t == self.param_tensors() {
            self.x.data_mut()[i] = v;
        } else {
            self.net.params_mut()[t].data_mut()[i] = v;
        }
    }

    fn loss(&mut self) -> Result<f64> {
        let logits = self.net.forward(&self.x, true)?;
        Ok(softmax_xent(&logits, &self.labels)?.0)
    }

    fn analytic(&mut self) -> Result<Vec<Tensor4<f64>>> {
        let logits = self.net.forward(&self.x, true)?;
        let (_, g) = softmax_xent(&logits, &self.labels)?;
        let gx = self.net.backward(&g, true)?.expect("input gradient requested");
        let mut out: Vec<_> = self.net.grads().into_iter().cloned().collect();
        out.push(gx);
        Ok(out)
    }
}

/// Standard-normal inputs and uniformly drawn labels for a gradient check.
pub fn random_batch(input: Shape4, batch: usize, classes: usize, seed: u64) -> Result<(Tensor4<f64>, Vec<usize>)> {
    use rand::Rng;
    if batch == 0 || classes == 0 {
        return Err(Error::param("batch and class count must be positive"));
    }
    input.with_batch(batch).validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal(input.with_batch(batch), &mut rng);
    let labels = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
    Ok((x, labels))
}

type LossFn = Box<dyn FnMut(&[Tensor4<f64>]) -> Result<f64>>;
type GradFn = Box<dyn FnMut(&[Tensor4<f64>]) -> Result<Vec<Tensor4<f64>>>>;

/// Objective given by closures over an owned tensor list.
pub struct FnModel {
    layer: String,
    names: Vec<String>,
    tensors: Vec<Tensor4<f64>>,
    loss: LossFn,
    grad: GradFn,
}

impl FnModel {
    pub fn new(
        layer: impl Into<String>,
        named: Vec<(&str, Tensor4<f64>)>,
        loss: impl FnMut(&[Tensor4<f64>]) -> Result<f64> + 'static,
        grad: impl FnMut(&[Tensor4<f64>]) -> Result<Vec<Tensor4<f64>>> + 'static,
    ) -> Self {
        let (names, tensors) = named.into_iter().map(|(n, t)| (n.to_string(), t)).unzip();
        FnModel {
            layer: layer.into(),
            names,
            tensors,
            loss: Box::new(loss),
            grad: Box::new(grad),
        }
    }
}

impl GradModel for FnModel {
    fn names(&self) -> Vec<(String, String)> {
        self.names.iter().map(|n| (self.layer.clone(), n.clone())).collect()
    }

    fn tensor_len(&self, t: usize) -> usize {
        self.tensors[t].len()
    }

    fn value(&mut self, t: usize, i: usize) -> f64 {
        self.tensors[t].data()[i]
    }

    fn set_value(&mut self, t: usize, i: usize, v: f64) {
        self.tensors[t].data_mut()[i] = v;
    }

    fn loss(&mut self) -> Result<f64> {
        (self.loss)(&self.tensors)
    }

    fn analytic(&mut self) -> Result<Vec<Tensor4<f64>>> {
        (self.grad)(&self.tensors)
    }
}

/// Wraps a model and scales the first analytic gradient tensor, simulating
/// a broken backward pass.
pub struct Corrupted<M> {
    pub inner: M,
    pub factor: f64,
}

impl<M: GradModel> GradModel for Corrupted<M> {
    fn names(&self) -> Vec<(String, String)> {
        self.inner.names()
    }
    fn tensor_len(&self, t: usize) -> usize {
        self.inner.tensor_len(t)
    }
    fn value(&mut self, t: usize, i: usize) -> f64 {
        self.inner.value(t, i)
    }
    fn set_value(&mut self, t: usize, i: usize, v: f64) {
        self.inner.set_value(t, i, v)
    }
    fn loss(&mut self) -> Result<f64> {
        self.inner.loss()
    }
    fn analytic(&mut self) -> Result<Vec<Tensor4<f64>>> {
        let mut g = self.inner.analytic()?;
        if let Some(first) = g.first_mut() {
            let f = self.factor;
            *first = first.map(|v| v * f);
        }
        Ok(g)
    }
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn normal(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| StandardNormal.sample(&mut *rng)).expect("non-empty shape")
}

/// Single-input layer probed with the projection loss `sum(r * f(x))`.
fn unary_model(
    name: &str,
    x: Tensor4<f64>,
    r: Tensor4<f64>,
    f: impl Fn(&Tensor4<f64>) -> Result<Tensor4<f64>> + 'static,
    b: impl Fn(&Tensor4<f64>, &Tensor4<f64>) -> Result<Tensor4<f64>> + 'static,
) -> FnModel {
    let r2 = r.clone();
    FnModel::new(
        name,
        vec![("input", x)],
        move |t| Ok(dot(&f(&t[0])?, &r)),
        move |t| Ok(vec![b(&t[0], &r2)?]),
    )
}

fn conv_model(
    name: &str,
    input: Shape4,
    oc: usize,
    k: usize,
    stride: usize,
    pad: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FnModel> {
    let x = normal(input, rng);
    let kernel = normal(Shape4::new(oc, input.c, k, k), rng);
    let bias = normal(Shape4::new(oc, 1, 1, 1), rng);
    let out = Conv2d::new(kernel.clone(), bias.clone(), stride, pad)?.output_shape(input)?;
    let r = normal(out, rng);
    let r2 = r.clone();
    Ok(FnModel::new(
        name,
        vec![("input", x), ("weight", kernel), ("bias", bias)],
        move |t| {
            let c = Conv2d::new(t[1].clone(), t[2].clone(), stride, pad)?;
            Ok(dot(&c.forward(&t[0])?, &r))
        },
        move |t| {
            let c = Conv2d::new(t[1].clone(), t[2].clone(), stride, pad)?;
            let g = c.backward(&t[0], &r2, true)?;
            Ok(vec![g.input.expect("requested"), g.kernel, g.bias])
        },
    ))
}

fn fc_model(rng: &mut ChaCha8Rng) -> Result<FnModel> {
    let x = normal(Shape4::new(3, 4, 2, 2), rng);
    let w = normal(Shape4::new(5, 16, 1, 1), rng);
    let b = normal(Shape4::new(5, 1, 1, 1), rng);
    let r = normal(Shape4::new(3, 5, 1, 1), rng);
    let r2 = r.clone();
    Ok(FnModel::new(
        "fc",
        vec![("input", x), ("weight", w), ("bias", b)],
        move |t| Ok(dot(&Linear::new(t[1].clone(), t[2].clone())?.forward(&t[0])?, &r)),
        move |t| {
            let g = Linear::new(t[1].clone(), t[2].clone())?.backward(&t[0], &r2, true)?;
            Ok(vec![g.input.expect("requested"), g.weight, g.bias])
        },
    ))
}

fn pool_model(
    name: &str,
    kind: PoolKind,
    k: usize,
    stride: usize,
    input: Shape4,
    rng: &mut ChaCha8Rng,
) -> Result<FnModel> {
    let p = Pool2d::new(kind, k, stride)?;
    let out = p.output_shape(input)?;
    Ok(unary_model(
        name,
        normal(input, rng),
        normal(out, rng),
        move |x| Ok(p.forward(x)?.0),
        move |x, r| {
            let (_, cache) = p.forward(x)?;
            p.backward(x.shape(), r, &cache)
        },
    ))
}

fn dropout_model(rng: &mut ChaCha8Rng) -> Result<FnModel> {
    let shape = Shape4::new(2, 3, 4, 4);
    let mut d = Dropout::<f64>::new(0.5)?;
    d.set_frozen(true);
    let x = normal(shape, rng);
    d.forward(&x, rng, true);
    let d2 = d.clone();
    Ok(unary_model(
        "dropout",
        x,
        normal(shape, rng),
        move |x| {
            let mut d = d.clone();
            // frozen: the mask drawn above is reused, the rng is untouched
            Ok(d.forward(x, &mut ChaCha8Rng::seed_from_u64(0), true))
        },
        move |_, r| d2.backward(r),
    ))
}

fn xent_model(rng: &mut ChaCha8Rng) -> FnModel {
    let logits = normal(Shape4::new(4, 6, 1, 1), rng);
    let labels = vec![0usize, 5, 2, 2];
    let l2 = labels.clone();
    FnModel::new(
        "softmax_xent",
        vec![("logits", logits)],
        move |t| Ok(softmax_xent(&t[0], &labels)?.0),
        move |t| Ok(vec![softmax_xent(&t[0], &l2)?.1]),
    )
}

fn gnpp_model(nb: NeighborhoodType, sigma: f64, rng: &mut ChaCha8Rng) -> Result<FnModel> {
    let cfg = GnppConfig::new(nb, sigma)?;
    let cfg2 = cfg.clone();
    let shape = Shape4::new(2, 3, 5, 6);
    Ok(unary_model(
        &format!("gnpp_{nb}_sigma{sigma}"),
        normal(shape, rng),
        normal(shape, rng),
        move |x| Ok(gnpp_forward(x, &cfg).0),
        move |x, r| {
            let (_, cache) = gnpp_forward(x, &cfg2);
            gnpp_backward(r, &cache, &cfg2)
        },
    ))
}

fn blur_model(rng: &mut ChaCha8Rng) -> Result<FnModel> {
    let b = GaussianBlur::new(1.0)?;
    let b2 = b.clone();
    let shape = Shape4::new(1, 2, 9, 9);
    Ok(unary_model(
        "gauss_blur",
        normal(shape, rng),
        normal(shape, rng),
        move |x| Ok(b.forward(x)),
        move |_, r| Ok(b2.backward(r)),
    ))
}

/// Small random instances of every layer type: conv (two geometries),
/// max and average pooling (with overhang), ReLU, FC, dropout with a fixed
/// mask, softmax cross-entropy, phrase pooling (both types, sigma 1.0 and
/// 0.8) and Gaussian blur.
pub fn layer_models(seed: u64) -> Result<Vec<FnModel>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut v = vec![
        conv_model("conv_s1p0", Shape4::new(2, 3, 6, 6), 4, 3, 1, 0, rng)?,
        conv_model("conv_s2p1", Shape4::new(2, 2, 7, 7), 3, 3, 2, 1, rng)?,
        pool_model("maxpool_k3s2", PoolKind::Max, 3, 2, Shape4::new(2, 2, 7, 7), rng)?,
        pool_model(
            "maxpool_k2s2_overhang",
            PoolKind::Max,
            2,
            2,
            Shape4::new(1, 2, 5, 5),
            rng,
        )?,
        pool_model(
            "avgpool_k3s2_overhang",
            PoolKind::Avg,
            3,
            2,
            Shape4::new(2, 2, 6, 6),
            rng,
        )?,
    ];
    let shape = Shape4::new(2, 3, 4, 4);
    v.push(unary_model(
        "relu",
        normal(shape, rng),
        normal(shape, rng),
        |x| Ok(relu(x)),
        relu_backward,
    ));
    v.push(fc_model(rng)?);
    v.push(dropout_model(rng)?);
    v.push(xent_model(rng));
    for nb in [NeighborhoodType::Type1, NeighborhoodType::Type2] {
        for sigma in [1.0, 0.8] {
            v.push(gnpp_model(nb, sigma, rng)?);
        }
    }
    v.push(blur_model(rng)?);
    Ok(v)
}

/// Checks every entry of every tensor of [`layer_models`].
pub fn check_layers(seed: u64, opts: &GradCheckOptions) -> Result<Vec<GradReport>> {
    layer_models(seed)?.iter_mut().map(|m| check_model(m, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::parse_arch;
    use crate::network::{build_network, Placement};

    #[test]
    fn all_layers_pass() {
        for r in check_layers(7, &GradCheckOptions::default()).unwrap() {
            assert!(r.passed(), "{:?}", r.per_layer());
        }
    }

    #[test]
    fn small_net_with_phrase_pooling_passes() {
        let arch = parse_arch("{C3(S1P1)@3-G1(0.8)-MP2(S2)}{C3(S1P1)@4-G2(1)-AP2(S2)}{FC6-D0.5}{FC3}").unwrap();
        let mut net = build_network::<f64>(&arch, Shape4::new(1, 2, 8, 8), 3, Placement::Strict).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = normal(Shape4::new(2, 2, 8, 8), &mut rng);
        let mut m = NetModel::new(&mut net, x, vec![0, 2]).unwrap();
        let r = check_model(&mut m, &GradCheckOptions::default()).unwrap();
        assert!(r.passed(), "{:?}", r.checks);
        assert_eq!(r.per_layer().last().unwrap().0, "input");
    }

    #[test]
    fn corruption_is_detected() {
        let mut m = Corrupted {
            inner: layer_models(1).unwrap().remove(0),
            factor: 1.01,
        };
        let r = check_model(&mut m, &GradCheckOptions::default()).unwrap();
        assert!(!r.passed());
        assert!(r.checks[0].max_rel_error > 1e-3);
        assert!(r.checks[1].max_rel_error < 1e-4);
    }

    #[test]
    fn sampling_limits_entries() {
        let mut m = layer_models(1).unwrap().remove(0);
        let opts = GradCheckOptions {
            max_per_tensor: Some(5),
            ..Default::default()
        };
        let r = check_model(&mut m, &opts).unwrap();
        assert!(r.checks.iter().all(|c| c.checked <= 5));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-6), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-6) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0, 1e-6) - 1e-3).abs() < 1e-15);
    }
}
