//! Instantiated networks: parameters plus a forward/backward interpreter over
//! the layer graph of a [`NetworkSpec`].

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{self, ConvGrads, ConvParams, PoolParams};
use super::{Real, Shape, Tensor};
use crate::ifn::{inception_branches, LayerSpec, NetworkSpec};
use crate::rng::{stream, StreamRng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Conv(usize),
    Relu,
    Pool(PoolParams),
    Dropout(f64),
    Gap,
    Branches(Vec<Vec<Node>>),
}

enum Cache<T> {
    Conv(Tensor<T>),
    Relu(Tensor<T>),
    Pool { input: Shape, argmax: Vec<u32> },
    Dropout(Option<Vec<T>>),
    Gap(Shape),
    Branches { widths: Vec<usize>, caches: Vec<Vec<Cache<T>>> },
}

/// Forward record of one sample, consumed by [`Network::backward`].
pub struct Trace<T> {
    caches: Vec<Cache<T>>,
    pub logits: Vec<T>,
}

/// Parameter gradients, one entry per convolution in network order.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    pub layers: Vec<ConvGrads<T>>,
}

impl<T: Real> Grads<T> {
    pub fn fill_zero(&mut self) {
        self.layers.iter_mut().for_each(ConvGrads::fill_zero);
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, &y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.layers {
            g.weight.iter_mut().for_each(|x| *x *= s);
            g.bias.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Inference returns softmax confidences; training returns raw GAP logits with
/// dropout active, drawing sample `i` from stream `i` under `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Inference,
    Training { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    nodes: Vec<Node>,
    params: Vec<ConvParams<T>>,
    names: Vec<String>,
    classes: usize,
}

struct Builder<T> {
    params: Vec<ConvParams<T>>,
    names: Vec<String>,
}

impl<T: Real> Builder<T> {
    fn lower(&mut self, layers: &[LayerSpec], mut shape: Shape) -> Result<(Vec<Node>, Shape)> {
        let mut nodes = Vec::with_capacity(layers.len());
        for layer in layers {
            let node = match layer {
                LayerSpec::Conv(_) | LayerSpec::Cccp { .. } => {
                    let c = layer.as_conv().expect("conv layer");
                    self.params
                        .push(ConvParams::zeros(shape.c, c.out, c.kernel, c.stride, c.pad));
                    self.names.push(c.name);
                    Node::Conv(self.params.len() - 1)
                }
                LayerSpec::Relu => Node::Relu,
                LayerSpec::Pool(p) => Node::Pool(*p),
                LayerSpec::Dropout { rate } => Node::Dropout(*rate),
                LayerSpec::Gap => Node::Gap,
                LayerSpec::Inception { name, widths } => {
                    let mut branches = Vec::new();
                    for branch in inception_branches(name, widths) {
                        branches.push(self.lower(&branch, shape)?.0);
                    }
                    Node::Branches(branches)
                }
            };
            shape = layer.output_shape(shape)?;
            nodes.push(node);
        }
        Ok((nodes, shape))
    }
}

impl<T: Real> Network<T> {
    /// Network with all parameters zero.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        let classes = spec.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            names: Vec::new(),
        };
        let (nodes, _) = b.lower(&spec.layers, spec.input)?;
        Ok(Self {
            spec: spec.clone(),
            nodes,
            params: b.params,
            names: b.names,
            classes,
        })
    }

    /// Gaussian weights with std `sqrt(2 / fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        for p in &mut net.params {
            let normal = Normal::new(0.0, (2.0 / p.fan_in() as f64).sqrt()).expect("finite std");
            p.weight.iter_mut().for_each(|w| *w = T::from_f64(normal.sample(rng)));
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_shape(&self) -> Shape {
        self.spec.input
    }

    /// Convolution parameters in network order.
    pub fn params(&self) -> &[ConvParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ConvParams<T>] {
        &mut self.params
    }

    /// Layer name of each entry of [`Self::params`].
    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            layers: self.params.iter().map(ConvParams::zero_grads).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let conv = |p: &ConvParams<T>| ConvParams {
            in_channels: p.in_channels,
            out_channels: p.out_channels,
            kernel: p.kernel,
            stride: p.stride,
            pad: p.pad,
            weight: p.weight.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            bias: p.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        };
        Network {
            spec: self.spec.clone(),
            nodes: self.nodes.clone(),
            params: self.params.iter().map(conv).collect(),
            names: self.names.clone(),
            classes: self.classes,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.spec.input {
            return Err(Error::Shape(format!(
                "network expects {}, got {}",
                self.spec.input,
                x.shape()
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        nodes: &[Node],
        mut x: Tensor<T>,
        mut caches: Option<&mut Vec<Cache<T>>>,
        rng: &mut Option<&mut StreamRng>,
        mut taps: Option<&mut Vec<Tensor<T>>>,
    ) -> Result<Tensor<T>> {
        for node in nodes {
            let (y, cache) = match node {
                Node::Conv(i) => {
                    let y = ops::conv2d(&x, &self.params[*i])?;
                    (y, caches.is_some().then(|| Cache::Conv(x)))
                }
                Node::Relu => {
                    let y = ops::relu(&x);
                    let c = caches.is_some().then(|| Cache::Relu(y.clone()));
                    (y, c)
                }
                Node::Pool(p) => {
                    let (y, argmax) = ops::maxpool(&x, *p)?;
                    (y, Some(Cache::Pool { input: x.shape(), argmax }))
                }
                Node::Dropout(rate) => {
                    let (y, mask) = ops::dropout(&x, *rate, rng.as_deref_mut());
                    (y, Some(Cache::Dropout(mask)))
                }
                Node::Gap => {
                    let y = ops::global_avg_pool(&x);
                    (y, Some(Cache::Gap(x.shape())))
                }
                Node::Branches(branches) => {
                    let mut outs = Vec::with_capacity(branches.len());
                    let mut sub = Vec::with_capacity(branches.len());
                    for branch in branches {
                        let mut bc = Vec::new();
                        let out = self.run(branch, x.clone(), caches.is_some().then_some(&mut bc), rng, None)?;
                        outs.push(out);
                        sub.push(bc);
                    }
                    let refs: Vec<&Tensor<T>> = outs.iter().collect();
                    let y = ops::concat_channels(&refs)?;
                    let widths = outs.iter().map(|t| t.shape().c).collect();
                    (y, Some(Cache::Branches { widths, caches: sub }))
                }
            };
            if let Some(caches) = caches.as_deref_mut() {
                caches.push(cache.expect("cache recorded while tracing"));
            }
            if let Some(taps) = taps.as_deref_mut() {
                taps.push(y.clone());
            }
            x = y;
        }
        Ok(x)
    }

    /// Raw GAP outputs, inference mode.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.run(&self.nodes, x.clone(), None, &mut None, None)?.into_data())
    }

    /// Softmax confidences, inference mode.
    pub fn confidences(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        Ok(ops::softmax(&self.logits(x)?))
    }

    /// Output of every top-level layer, inference mode.
    pub fn activations(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_input(x)?;
        let mut taps = Vec::new();
        self.run(&self.nodes, x.clone(), None, &mut None, Some(&mut taps))?;
        Ok(taps)
    }

    /// Forward pass keeping everything needed for [`Self::backward`]. Dropout
    /// is active exactly when `rng` is given.
    pub fn trace(&self, x: &Tensor<T>, rng: Option<&mut StreamRng>) -> Result<Trace<T>> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.nodes.len());
        let mut rng = rng;
        let out = self.run(&self.nodes, x.clone(), Some(&mut caches), &mut rng, None)?;
        Ok(Trace {
            caches,
            logits: out.into_data(),
        })
    }

    fn back(&self, nodes: &[Node], caches: &[Cache<T>], mut g: Tensor<T>, grads: &mut Grads<T>, need_input: bool) -> Option<Tensor<T>> {
        for (idx, (node, cache)) in nodes.iter().zip(caches).enumerate().rev() {
            let need = need_input || idx > 0;
            g = match (node, cache) {
                (Node::Conv(i), Cache::Conv(input)) => {
                    match ops::conv2d_backward(input, &self.params[*i], &g, &mut grads.layers[*i], need) {
                        Some(gin) => gin,
                        None => return None,
                    }
                }
                (Node::Relu, Cache::Relu(out)) => ops::relu_backward(out, &g),
                (Node::Pool(_), Cache::Pool { input, argmax }) => ops::maxpool_backward(*input, argmax, &g),
                (Node::Dropout(_), Cache::Dropout(mask)) => ops::dropout_backward(mask.as_deref(), &g),
                (Node::Gap, Cache::Gap(shape)) => ops::global_avg_pool_backward(*shape, &g),
                (Node::Branches(branches), Cache::Branches { widths, caches }) => {
                    let parts = ops::split_channels(&g, widths);
                    let mut total: Option<Tensor<T>> = None;
                    for ((branch, bc), part) in branches.iter().zip(caches).zip(parts) {
                        let gin = self.back(branch, bc, part, grads, true).expect("branch input gradient");
                        match total.as_mut() {
                            Some(t) => t.add_assign(&gin),
                            None => total = Some(gin),
                        }
                    }
                    total.expect("at least one branch")
                }
                _ => unreachable!("trace does not match network"),
            };
            g.debug_check_finite();
        }
        need_input.then_some(g)
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d logits`.
    pub fn backward(&self, trace: &Trace<T>, dlogits: &[T], grads: &mut Grads<T>) {
        let g = Tensor::new(Shape::new(1, 1, self.classes), dlogits.to_vec()).expect("logit gradient shape");
        self.back(&self.nodes, &trace.caches, g, grads, false);
    }

    /// Input gradient as well as parameter gradients.
    pub fn backward_with_input(&self, trace: &Trace<T>, dlogits: &[T], grads: &mut Grads<T>) -> Tensor<T> {
        let g = Tensor::new(Shape::new(1, 1, self.classes), dlogits.to_vec()).expect("logit gradient shape");
        self.back(&self.nodes, &trace.caches, g, grads, true).expect("input gradient")
    }

    /// Per-sample outputs for a batch; see [`Mode`].
    pub fn forward(&self, batch: &[Tensor<T>], mode: Mode) -> Result<Vec<Vec<T>>> {
        batch
            .iter()
            .enumerate()
            .map(|(i, x)| match mode {
                Mode::Inference => self.confidences(x),
                Mode::Training { seed } => {
                    let mut rng = stream(seed, i as u64);
                    Ok(self.trace(x, Some(&mut rng))?.logits)
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifn::{build_micro_ifn, MicroConfig};

    fn small() -> NetworkSpec {
        build_micro_ifn(&MicroConfig {
            input: 12,
            first_kernel: 3,
            stages: 1,
            channel_scale: 0.25,
            classes: 3,
            ..MicroConfig::default()
        })
        .unwrap()
    }

    fn random_input(seed: u64, s: Shape) -> Tensor<f64> {
        let mut rng = stream(seed, 0);
        Tensor::new(s, (0..s.len()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_image_gives_uniform_confidences() {
        let spec = small();
        let net = Network::<f64>::init(&spec, &mut stream(1, 0)).unwrap();
        let c = net.confidences(&Tensor::zeros(spec.input)).unwrap();
        for v in c {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn confidences_are_probabilities() {
        let spec = small();
        let mut net = Network::<f64>::init(&spec, &mut stream(2, 0)).unwrap();
        let mut rng = stream(3, 0);
        for p in net.params_mut() {
            p.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
        }
        for s in 0..5 {
            let c = net.confidences(&random_input(s, spec.input)).unwrap();
            assert!(c.iter().all(|&v| v >= 0.0));
            assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_of_one_matches_single_call() {
        let spec = small();
        let net = Network::<f32>::init(&spec, &mut stream(4, 0)).unwrap();
        let x = random_input(5, spec.input).cast::<f32>();
        let single = net.confidences(&x).unwrap();
        let batch = net.forward(std::slice::from_ref(&x), Mode::Inference).unwrap();
        assert_eq!(batch, vec![single]);
        let logits = net.forward(std::slice::from_ref(&x), Mode::Training { seed: 9 }).unwrap();
        let mut rng = stream(9, 0);
        assert_eq!(logits[0], net.trace(&x, Some(&mut rng)).unwrap().logits);
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let spec = small();
        let net = Network::<f64>::zeros(&spec).unwrap();
        assert!(net.logits(&Tensor::zeros(Shape::new(11, 12, 1))).is_err());
    }

    #[test]
    fn activations_follow_spec_shapes() {
        let spec = small();
        let net = Network::<f64>::init(&spec, &mut stream(6, 0)).unwrap();
        let acts = net.activations(&random_input(1, spec.input)).unwrap();
        let shapes: Vec<Shape> = acts.iter().map(|t| t.shape()).collect();
        assert_eq!(shapes, spec.shapes().unwrap());
        assert_eq!(net.param_count(), spec.param_count().unwrap());
    }
}
