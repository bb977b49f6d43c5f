//! End-to-end model: three view encoders, pairwise bilinear fusion,
//! attention pooling, and the classification head, with any subset of the
//! views active for ablation runs.

use rand::Rng;
use thiserror::Error;

use crate::callgraph::AbstractCallgraph;
use crate::classifier::{argmax, ClassifierConfig, DnnClassifier};
use crate::encoders::{
    GcnEncoder, ImageEncoder, SeqConvEncoder, SmallConvNet, View, ViewEmbedding,
};
use crate::fusion::{AttentionConfig, FusionError, GlobalFusion, LocalFusion, MfbConfig};
use crate::gram::OpcodeGramMatrix;
use crate::image::ViewImage;
use crate::manifest::Label;
use crate::tensor::{Parameter, Tensor, TensorError};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub gcn_hidden: usize,
    pub gcn_layers: usize,
    pub window_length: usize,
    pub seq_kernel_heights: Vec<usize>,
    pub seq_filters: usize,
    pub img_stage_channels: Vec<usize>,
    pub mfb: MfbConfig,
    pub attention: AttentionConfig,
    pub classifier_hidden: Vec<usize>,
    pub classifier_dropout: f64,
    /// Active views in (sensitivity, context, environment) order.
    pub active_views: [bool; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: crate::encoders::EMBED_DIM,
            gcn_hidden: crate::encoders::GCN_HIDDEN,
            gcn_layers: crate::encoders::GCN_LAYERS,
            window_length: crate::gram::DEFAULT_WINDOW_LENGTH,
            seq_kernel_heights: crate::encoders::SEQ_KERNEL_HEIGHTS.to_vec(),
            seq_filters: crate::encoders::SEQ_FILTERS_PER_HEIGHT,
            img_stage_channels: crate::encoders::IMG_STAGE_CHANNELS.to_vec(),
            mfb: MfbConfig::default(),
            attention: AttentionConfig::default(),
            classifier_hidden: vec![512, 256, 128, 64],
            classifier_dropout: 0.2,
            active_views: [true; 3],
        }
    }
}

impl ModelConfig {
    pub fn active_indices(&self) -> Vec<usize> {
        (0..3).filter(|&i| self.active_views[i]).collect()
    }

    /// Spatial downscaling factor of the image encoder; image height and
    /// width must be divisible by it.
    pub fn image_divisor(&self) -> usize {
        1 << self.img_stage_channels.len()
    }
}

/// Everything the model needs about one sample.
#[derive(Debug, Clone)]
pub struct SampleFeatures {
    pub sample_id: String,
    pub label: Label,
    pub year: u16,
    pub graph: AbstractCallgraph,
    pub gram: OpcodeGramMatrix,
    pub image: ViewImage,
}

pub struct ModelOutput<T: Scalar> {
    /// Two class probabilities, malicious first.
    pub probs: Tensor<T>,
    /// Views whose input was empty and encoded to the zero vector.
    pub degenerate_views: Vec<View>,
}

impl<T: Scalar> ModelOutput<T> {
    pub fn predicted_label(&self) -> Label {
        if argmax(&self.probs.to_vec()) == 0 {
            Label::Malicious
        } else {
            Label::Benign
        }
    }
}

pub struct FullModel<T: Scalar> {
    pub gcn: GcnEncoder<T>,
    pub seq: SeqConvEncoder<T>,
    pub img: Box<dyn ImageEncoder<T>>,
    pub local: LocalFusion<T>,
    pub global: GlobalFusion<T>,
    pub head: DnnClassifier<T>,
    pub cfg: ModelConfig,
}

impl<T: Scalar> FullModel<T> {
    pub fn new(cfg: ModelConfig, rng: &mut dyn Rng) -> Self {
        assert!(cfg.active_views.iter().any(|&a| a), "at least one view must be active");
        let gcn = GcnEncoder::new("gcn", cfg.gcn_hidden, cfg.gcn_layers, cfg.embed_dim, rng);
        let seq = SeqConvEncoder::new(
            "seq",
            cfg.window_length,
            &cfg.seq_kernel_heights,
            cfg.seq_filters,
            cfg.embed_dim,
            rng,
        );
        let img: Box<dyn ImageEncoder<T>> = Box::new(SmallConvNet::new(
            "img",
            &cfg.img_stage_channels,
            cfg.embed_dim,
            rng,
        ));
        let local = LocalFusion::new(
            [cfg.embed_dim; 3],
            &cfg.active_indices(),
            cfg.mfb,
            rng,
        );
        let global = GlobalFusion::new(cfg.mfb.o, cfg.attention, rng);
        let mut layer_dims = Vec::with_capacity(cfg.classifier_hidden.len() + 2);
        layer_dims.push(cfg.attention.p_o);
        layer_dims.extend_from_slice(&cfg.classifier_hidden);
        layer_dims.push(2);
        let head = DnnClassifier::new(
            "head",
            &ClassifierConfig {
                layer_dims,
                dropout_p: cfg.classifier_dropout,
            },
            rng,
        );
        FullModel {
            gcn,
            seq,
            img,
            local,
            global,
            head,
            cfg,
        }
    }

    pub fn forward(
        &self,
        sample: &SampleFeatures,
        training: bool,
        rng: &mut dyn Rng,
    ) -> Result<ModelOutput<T>, ModelError> {
        let mut degenerate_views = Vec::new();
        let mut record = |e: &ViewEmbedding<T>| {
            if e.degenerate {
                degenerate_views.push(e.view);
            }
        };
        let v1 = self.cfg.active_views[0].then(|| self.gcn.encode(&sample.graph));
        let v2 = self.cfg.active_views[1].then(|| self.seq.encode(&sample.gram));
        let v3 = self.cfg.active_views[2].then(|| self.img.encode(&sample.image));
        for e in [&v1, &v2, &v3].into_iter().flatten() {
            record(e);
        }
        let views = [
            v1.as_ref().map(|e| &e.vector),
            v2.as_ref().map(|e| &e.vector),
            v3.as_ref().map(|e| &e.vector),
        ];
        let m = self.local.fuse(views, training, rng)?;
        let fused = self.global.fuse(&m)?;
        let probs = self.head.forward(&fused, training, rng)?;
        Ok(ModelOutput {
            probs,
            degenerate_views,
        })
    }

    /// Cross-entropy against the one-hot class target.
    pub fn loss(&self, output: &ModelOutput<T>, label: Label) -> Result<Tensor<T>, ModelError> {
        Ok(output.probs.cross_entropy(&one_hot_target::<T>(label))?)
    }

    /// All trainable parameters, or only fusion and head parameters when
    /// the encoders are frozen.
    pub fn params(&self, freeze_encoders: bool) -> Vec<Parameter<T>> {
        let mut out = Vec::new();
        if !freeze_encoders {
            if self.cfg.active_views[0] {
                out.extend(self.gcn.params());
            }
            if self.cfg.active_views[1] {
                out.extend(self.seq.params());
            }
            if self.cfg.active_views[2] {
                out.extend(self.img.params());
            }
        }
        out.extend(self.local.params());
        out.extend(self.global.params());
        out.extend(self.head.params());
        out
    }
}

pub fn one_hot_target<T: Scalar>(label: Label) -> [T; 2] {
    let mut t = [T::zero(), T::zero()];
    t[label.class_index()] = T::one();
    t
}
