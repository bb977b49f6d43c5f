//! Per-view encoders: graph convolution over the abstract callgraph,
//! multi-height sequence convolution over the opcode-gram matrix, and a
//! small stage-wise convolutional network over the byte image. Each maps
//! its view to a shared embedding dimension.

use rand::Rng;

use crate::callgraph::{AbstractCallgraph, SENSITIVITY_DIM};
use crate::gram::{OpcodeGramMatrix, CATEGORY_COUNT};
use crate::image::ViewImage;
use crate::nn::{glorot_uniform, Linear};
use crate::tensor::{concat_vecs, Parameter, Tensor};
use crate::Scalar;

pub const EMBED_DIM: usize = 256;
pub const GCN_HIDDEN: usize = 64;
pub const GCN_LAYERS: usize = 2;
pub const SEQ_KERNEL_HEIGHTS: [usize; 3] = [3, 4, 5];
pub const SEQ_FILTERS_PER_HEIGHT: usize = 64;
pub const IMG_STAGE_CHANNELS: [usize; 4] = [8, 16, 32, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    /// API sensitivity (abstract callgraph).
    Sensitivity,
    /// Opcode context (gram matrix).
    Context,
    /// Byte-image environment.
    Environment,
}

/// An embedding in the autodiff graph; `degenerate` marks an empty input
/// that produced an exact-zero vector.
#[derive(Debug, Clone)]
pub struct ViewEmbedding<T: Scalar> {
    pub view: View,
    pub vector: Tensor<T>,
    pub degenerate: bool,
}

/// Symmetrically normalized adjacency with self-loops over the undirected
/// closure of the graph's edges, dense row-major.
fn normalized_adjacency<T: Scalar>(g: &AbstractCallgraph) -> Vec<T> {
    let n = g.nodes.len();
    let mut adj = vec![false; n * n];
    for i in 0..n {
        adj[i * n + i] = true;
    }
    for &(a, b) in &g.edges {
        adj[a * n + b] = true;
        adj[b * n + a] = true;
    }
    let deg: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| adj[i * n + j]).count() as f64)
        .collect();
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            if adj[i * n + j] {
                out[i * n + j] = T::from_f64(1.0 / (deg[i] * deg[j]).sqrt());
            }
        }
    }
    out
}

/// Graph convolutional encoder: propagation rounds of
/// `H <- relu(A_hat H W)` followed by mean readout and a linear map.
pub struct GcnEncoder<T: Scalar> {
    convs: Vec<Linear<T>>,
    readout: Linear<T>,
}

impl<T: Scalar> GcnEncoder<T> {
    pub fn new(name: &str, hidden: usize, layers: usize, out_dim: usize, rng: &mut dyn Rng) -> Self {
        assert!(layers >= 1);
        let mut convs = Vec::with_capacity(layers);
        let mut in_dim = SENSITIVITY_DIM;
        for l in 0..layers {
            convs.push(Linear::new(
                &format!("{name}.conv{l}"),
                in_dim,
                hidden,
                false,
                rng,
            ));
            in_dim = hidden;
        }
        let readout = Linear::new(&format!("{name}.readout"), hidden, out_dim, true, rng);
        GcnEncoder { convs, readout }
    }

    pub fn out_dim(&self) -> usize {
        self.readout.out_dim
    }

    pub fn encode(&self, g: &AbstractCallgraph) -> ViewEmbedding<T> {
        if g.nodes.is_empty() {
            return ViewEmbedding {
                view: View::Sensitivity,
                vector: Tensor::zeros(vec![self.out_dim()]),
                degenerate: true,
            };
        }
        let n = g.nodes.len();
        let a_hat = Tensor::constant(vec![n, n], normalized_adjacency(g));
        let features: Vec<T> = g
            .nodes
            .iter()
            .flat_map(|node| node.sensitivity.iter().map(|&b| T::from_usize(b as usize)))
            .collect();
        let mut h = Tensor::constant(vec![n, SENSITIVITY_DIM], features);
        for conv in &self.convs {
            h = conv
                .forward_rows(&a_hat.matmul(&h).expect("adjacency is n x n"))
                .expect("propagation shapes agree")
                .relu();
        }
        let pooled = h.mean_axis0().expect("h is a matrix");
        let vector = self.readout.forward(&pooled).expect("readout shape agrees");
        ViewEmbedding {
            view: View::Sensitivity,
            vector,
            degenerate: false,
        }
    }

    pub fn params(&self) -> Vec<Parameter<T>> {
        let mut out: Vec<Parameter<T>> = self.convs.iter().flat_map(Linear::params).collect();
        out.extend(self.readout.params());
        out
    }
}

/// Sequence-convolution encoder: per kernel height, a full-row-width
/// convolution over gram rows, relu, max-over-time pooling; pooled filters
/// concatenated and projected.
pub struct SeqConvEncoder<T: Scalar> {
    window_length: usize,
    filters: usize,
    convs: Vec<(usize, Linear<T>)>,
    proj: Linear<T>,
}

impl<T: Scalar> SeqConvEncoder<T> {
    pub fn new(
        name: &str,
        window_length: usize,
        kernel_heights: &[usize],
        filters: usize,
        out_dim: usize,
        rng: &mut dyn Rng,
    ) -> Self {
        let cols = CATEGORY_COUNT * window_length;
        let convs = kernel_heights
            .iter()
            .map(|&kh| {
                (
                    kh,
                    Linear::new(&format!("{name}.conv{kh}"), kh * cols, filters, true, rng),
                )
            })
            .collect();
        let proj = Linear::new(
            &format!("{name}.proj"),
            kernel_heights.len() * filters,
            out_dim,
            true,
            rng,
        );
        SeqConvEncoder {
            window_length,
            filters,
            convs,
            proj,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.proj.out_dim
    }

    pub fn encode(&self, m: &OpcodeGramMatrix) -> ViewEmbedding<T> {
        assert_eq!(
            m.window_length, self.window_length,
            "matrix window does not match the encoder"
        );
        if m.rows == 0 {
            return ViewEmbedding {
                view: View::Context,
                vector: Tensor::zeros(vec![self.out_dim()]),
                degenerate: true,
            };
        }
        let cols = m.cols();
        let dense: Vec<T> = m.dense();
        let mut pooled = Vec::with_capacity(self.convs.len());
        for (kh, conv) in &self.convs {
            let windows = m.rows.saturating_sub(kh - 1);
            if windows == 0 {
                pooled.push(Tensor::zeros(vec![self.filters]));
                continue;
            }
            let mut stacked = Vec::with_capacity(windows * kh * cols);
            for r in 0..windows {
                stacked.extend_from_slice(&dense[r * cols..(r + kh) * cols]);
            }
            let input = Tensor::constant(vec![windows, kh * cols], stacked);
            let responses = conv
                .forward_rows(&input)
                .expect("window width matches the filter")
                .relu();
            pooled.push(responses.max_axis0().expect("responses form a matrix"));
        }
        let features = concat_vecs(&pooled).expect("pooled branches are vectors");
        let vector = self.proj.forward(&features).expect("projection shape agrees");
        ViewEmbedding {
            view: View::Context,
            vector,
            degenerate: false,
        }
    }

    pub fn params(&self) -> Vec<Parameter<T>> {
        let mut out: Vec<Parameter<T>> = self
            .convs
            .iter()
            .flat_map(|(_, l)| l.params())
            .collect();
        out.extend(self.proj.params());
        out
    }
}

/// 3x3 convolution layer with zero-initialized biases.
pub struct Conv2d<T: Scalar> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, k: usize, rng: &mut dyn Rng) -> Self {
        let weight = Parameter {
            name: format!("{name}.weight"),
            tensor: Tensor::parameter(
                vec![out_ch, in_ch, k, k],
                glorot_uniform(rng, in_ch * k * k, out_ch * k * k, out_ch * in_ch * k * k),
            ),
        };
        let bias = Parameter {
            name: format!("{name}.bias"),
            tensor: Tensor::parameter(vec![out_ch], vec![T::zero(); out_ch]),
        };
        Conv2d { weight, bias }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let k = self.weight.tensor.shape()[2];
        x.conv2d(&self.weight.tensor, &self.bias.tensor, k / 2)
            .expect("stage shapes agree")
    }
}

/// Anything that maps a byte image to an embedding; lets the backbone be
/// swapped without touching fusion.
pub trait ImageEncoder<T: Scalar> {
    fn encode(&self, img: &ViewImage) -> ViewEmbedding<T>;
    fn params(&self) -> Vec<Parameter<T>>;
    fn out_dim(&self) -> usize;
}

/// Four stages of 3x3 conv + relu + 2x2 mean pooling, spatial mean,
/// then a linear map. Input height and width must be divisible by 16.
pub struct SmallConvNet<T: Scalar> {
    stages: Vec<Conv2d<T>>,
    proj: Linear<T>,
    out_dim: usize,
}

impl<T: Scalar> SmallConvNet<T> {
    pub fn new(name: &str, stage_channels: &[usize], out_dim: usize, rng: &mut dyn Rng) -> Self {
        let mut stages = Vec::with_capacity(stage_channels.len());
        let mut in_ch = 3;
        for (i, &out_ch) in stage_channels.iter().enumerate() {
            stages.push(Conv2d::new(&format!("{name}.stage{i}"), in_ch, out_ch, 3, rng));
            in_ch = out_ch;
        }
        let proj = Linear::new(&format!("{name}.proj"), in_ch, out_dim, true, rng);
        SmallConvNet {
            stages,
            proj,
            out_dim,
        }
    }
}

impl<T: Scalar> ImageEncoder<T> for SmallConvNet<T> {
    fn encode(&self, img: &ViewImage) -> ViewEmbedding<T> {
        let divisor = 1usize << self.stages.len();
        assert!(
            img.height % divisor == 0 && img.width % divisor == 0,
            "image {}x{} not divisible by {divisor}",
            img.height,
            img.width
        );
        let mut x = Tensor::constant(vec![3, img.height, img.width], img.to_input());
        for stage in &self.stages {
            x = stage
                .forward(&x)
                .relu()
                .mean_pool2()
                .expect("even spatial dims");
        }
        let pooled = x.mean_spatial().expect("x has channels");
        let vector = self.proj.forward(&pooled).expect("projection shape agrees");
        ViewEmbedding {
            view: View::Environment,
            vector,
            degenerate: false,
        }
    }

    fn params(&self) -> Vec<Parameter<T>> {
        let mut out = Vec::new();
        for stage in &self.stages {
            out.push(stage.weight.clone());
            out.push(stage.bias.clone());
        }
        out.extend(self.proj.params());
        out
    }

    fn out_dim(&self) -> usize {
        self.out_dim
    }
}
