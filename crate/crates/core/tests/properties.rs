//! Randomized invariants over the feature extractors, metrics, config codec
//! and model head.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use triview_core::apk::{ArtifactKind, FileSpan, Stream};
use triview_core::callgraph::{abstract_callgraph_with_table, GraphNode, SENSITIVITY_DIM};
use triview_core::config::RunConfig;
use triview_core::dex::MethodRef;
use triview_core::eval::{aut, evaluate};
use triview_core::fusion::{AttentionConfig, MfbConfig};
use triview_core::gram::{build_gram_matrix, OpcodeCategory, CATEGORY_COUNT};
use triview_core::image::{bilinear_resize, bytes_to_plane, denoise, ViewImage};
use triview_core::manifest::Label;
use triview_core::model::{FullModel, ModelConfig, SampleFeatures};
use triview_core::train::{train, TrainConfig};

const CATEGORIES: [OpcodeCategory; CATEGORY_COUNT] = [
    OpcodeCategory::Move,
    OpcodeCategory::Get,
    OpcodeCategory::Put,
    OpcodeCategory::If,
    OpcodeCategory::Goto,
    OpcodeCategory::Invoke,
    OpcodeCategory::Return,
    OpcodeCategory::Separator,
];

fn tiny_model_config(active: [bool; 3]) -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        gcn_hidden: 3,
        gcn_layers: 2,
        window_length: 2,
        seq_kernel_heights: vec![1, 2],
        seq_filters: 2,
        img_stage_channels: vec![2, 3],
        mfb: MfbConfig {
            k: 2,
            o: 3,
            dropout_p: 0.0,
        },
        attention: AttentionConfig {
            heads: 2,
            u: 3,
            p: 2,
            p_o: 6,
        },
        classifier_hidden: vec![5],
        classifier_dropout: 0.0,
        active_views: active,
    }
}

fn method(i: usize) -> MethodRef {
    MethodRef {
        class_descriptor: format!("Lprop/pkg/C{i};"),
        name: format!("m{i}"),
        proto: "()V".into(),
        is_local: i == 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn confusion_counts_partition_the_outcomes(raw in prop::collection::vec((any::<bool>(), any::<bool>()), 0..120)) {
        let as_label = |b: bool| if b { Label::Malicious } else { Label::Benign };
        let pairs: Vec<(Label, Label)> = raw.iter().map(|&(t, p)| (as_label(t), as_label(p))).collect();
        let report = evaluate(&pairs);
        prop_assert_eq!(report.tp + report.fp + report.tn + report.fn_, pairs.len());
        prop_assert_eq!(report.precision.is_none(), report.tp + report.fp == 0);
        prop_assert_eq!(report.recall.is_none(), report.tp + report.fn_ == 0);
        prop_assert_eq!(report.accuracy.is_none(), pairs.is_empty());
        if let Some(acc) = report.accuracy {
            let want = (report.tp + report.tn) as f64 / pairs.len() as f64;
            prop_assert!((acc - want).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&acc));
        }
    }

    #[test]
    fn aut_of_a_constant_series_is_that_constant(value in 0.0f64..=1.0, n in 2usize..12) {
        let series = vec![value; n];
        prop_assert!((aut(&series).unwrap() - value).abs() < 1e-12);
    }

    #[test]
    fn gram_windows_are_one_hot_and_overlap(raw in prop::collection::vec(0usize..CATEGORY_COUNT, 0..40), w in 1usize..=6) {
        let seq: Vec<OpcodeCategory> = raw.iter().map(|&c| CATEGORIES[c]).collect();
        let m = build_gram_matrix(&seq, w, 1, 100_000);
        let want_rows = if seq.len() >= w { seq.len() - w + 1 } else { 0 };
        prop_assert_eq!(m.rows, want_rows);
        prop_assert_eq!(m.cols(), w * CATEGORY_COUNT);
        prop_assert_eq!(m.data.len(), m.rows * m.cols());
        for row in 0..m.rows {
            let base = row * m.cols();
            for slot in 0..w {
                let block = &m.data[base + slot * CATEGORY_COUNT..base + (slot + 1) * CATEGORY_COUNT];
                prop_assert_eq!(block.iter().filter(|&&b| b == 1).count(), 1);
                prop_assert!(block.iter().all(|&b| b <= 1));
            }
            if row + 1 < m.rows {
                let next = (row + 1) * m.cols();
                prop_assert_eq!(
                    &m.data[base + CATEGORY_COUNT..base + m.cols()],
                    &m.data[next..next + (w - 1) * CATEGORY_COUNT]
                );
            }
        }
    }

    #[test]
    fn callgraph_ignores_edge_order_and_duplicates(raw in prop::collection::vec((0usize..6, 0usize..6), 1..20)) {
        let table = BTreeMap::new();
        let edges: Vec<(MethodRef, MethodRef)> = raw.iter().map(|&(a, b)| (method(a), method(b))).collect();
        let base = abstract_callgraph_with_table(&edges, &table);

        let mut shuffled = edges.clone();
        shuffled.reverse();
        shuffled.extend(edges.iter().cloned());
        let again = abstract_callgraph_with_table(&shuffled, &table);
        prop_assert_eq!(&base, &again);

        // Node identities are exactly the endpoint set, each listed once.
        let mut want: Vec<MethodRef> = edges
            .iter()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect();
        want.sort();
        want.dedup();
        let got: Vec<MethodRef> = base.nodes.iter().map(|n| n.method.clone()).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn plane_assembly_pads_the_tail_with_zeros(bytes in prop::collection::vec(any::<u8>(), 0..300), width in 1usize..40) {
        let plane = bytes_to_plane(&bytes, width);
        prop_assert_eq!(plane.width, width);
        prop_assert_eq!(plane.height, bytes.len().div_ceil(width).max(1));
        prop_assert_eq!(plane.data.len(), plane.width * plane.height);
        prop_assert_eq!(&plane.data[..bytes.len()], &bytes[..]);
        prop_assert!(plane.data[bytes.len()..].iter().all(|&b| b == 0));
    }

    #[test]
    fn resampling_stays_within_source_bounds(
        src_dims in (1usize..16, 1usize..16),
        dst_dims in (1usize..20, 1usize..20),
        seed in any::<u64>(),
    ) {
        let (sh, sw) = src_dims;
        let (dh, dw) = dst_dims;
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f32) / (1u64 << 31) as f32
        };
        let src: Vec<f32> = (0..sh * sw).map(|_| next()).collect();
        let out = bilinear_resize(&src, sh, sw, dh, dw);
        prop_assert_eq!(out.len(), dh * dw);
        let lo = src.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = src.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        for v in out {
            prop_assert!(v >= lo - 1e-5 && v <= hi + 1e-5);
        }
    }

    #[test]
    fn denoising_never_grows_a_stream(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
        for kind in [ArtifactKind::Dex, ArtifactKind::Xml, ArtifactKind::So] {
            let stream = Stream {
                bytes: bytes.clone(),
                index: vec![FileSpan {
                    path: "payload".into(),
                    offset: 0,
                    length: bytes.len(),
                }],
            };
            let out = denoise(&stream, kind, &[".text"]);
            prop_assert!(out.bytes.len() <= bytes.len());
        }
    }

    #[test]
    fn run_config_text_round_trips(
        seed in any::<u64>(),
        window_length in 1usize..8,
        dims in (1usize..32, 1usize..6, 1usize..6),
        lr in 1e-5f64..1.0,
        vf in 0.0f64..0.9,
        mask in 1u8..8,
        target in prop::option::of(0.0f64..=1.0),
    ) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.window_length = window_length;
        cfg.embed_dim = dims.0;
        cfg.mfb_k = dims.1;
        cfg.gcn_layers = dims.2;
        cfg.learning_rate = lr;
        cfg.validation_fraction = vf;
        cfg.active_views = [mask & 1 != 0, mask & 2 != 0, mask & 4 != 0];
        cfg.target_val_accuracy = target;
        let parsed = RunConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(parsed, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn class_probabilities_form_a_distribution(
        node_bits in prop::collection::vec(any::<u8>(), 0..5),
        edge_raw in prop::collection::vec((0usize..5, 0usize..5), 0..8),
        seq_raw in prop::collection::vec(0usize..CATEGORY_COUNT, 0..12),
        img_raw in prop::collection::vec(any::<u8>(), 192),
        mask in 1u8..8,
    ) {
        let n = node_bits.len();
        let nodes: Vec<GraphNode> = node_bits
            .iter()
            .enumerate()
            .map(|(i, &byte)| GraphNode {
                method: method(i),
                sensitivity: (0..SENSITIVITY_DIM).map(|j| (byte >> (j % 8)) & 1).collect(),
            })
            .collect();
        let edges: Vec<(usize, usize)> = edge_raw
            .iter()
            .filter(|&&(a, b)| a < n && b < n)
            .cloned()
            .collect();
        let seq: Vec<OpcodeCategory> = seq_raw.iter().map(|&c| CATEGORIES[c]).collect();
        let mut channels: [Vec<u8>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (i, &b) in img_raw.iter().enumerate() {
            channels[i % 3].push(b);
        }
        let sample = SampleFeatures {
            sample_id: "prop".into(),
            label: Label::Benign,
            year: 2020,
            graph: triview_core::callgraph::AbstractCallgraph { nodes, edges },
            gram: build_gram_matrix(&seq, 2, 1, 50),
            image: ViewImage {
                width: 8,
                height: 8,
                channels,
            },
        };

        let active = [mask & 1 != 0, mask & 2 != 0, mask & 4 != 0];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let model: FullModel<f64> = FullModel::new(tiny_model_config(active), &mut rng);
        let out = model.forward(&sample, false, &mut rng).unwrap();
        let probs = out.probs.to_vec();
        prop_assert_eq!(probs.len(), 2);
        for &p in &probs {
            prop_assert!((0.0..=1.0).contains(&p), "probability {p} out of range");
        }
        prop_assert!((probs[0] + probs[1] - 1.0).abs() < 1e-6);
    }
}

/// Windowed training-loss decrease on a small separable fixture: the mean
/// loss over each successive ten-epoch window must not increase.
#[test]
fn windowed_training_loss_never_increases() {
    let mut dataset = Vec::new();
    for i in 0..4usize {
        for (label, hot, cats, base) in [
            (
                Label::Malicious,
                1usize,
                [OpcodeCategory::Goto, OpcodeCategory::Invoke, OpcodeCategory::Goto, OpcodeCategory::Invoke],
                200u8,
            ),
            (
                Label::Benign,
                0usize,
                [OpcodeCategory::Move, OpcodeCategory::Invoke, OpcodeCategory::Move, OpcodeCategory::Invoke],
                40u8,
            ),
        ] {
            let mut sensitivity = vec![0u8; SENSITIVITY_DIM];
            sensitivity[hot] = 1;
            sensitivity[(hot + i) % SENSITIVITY_DIM] = 1;
            let graph = triview_core::callgraph::AbstractCallgraph {
                nodes: vec![
                    GraphNode {
                        method: method(0),
                        sensitivity: vec![0; SENSITIVITY_DIM],
                    },
                    GraphNode {
                        method: method(1),
                        sensitivity,
                    },
                ],
                edges: vec![(0, 1)],
            };
            let shade = base + 3 * i as u8;
            dataset.push(SampleFeatures {
                sample_id: format!("{}{i}", label.as_str()),
                label,
                year: 2020,
                graph,
                gram: build_gram_matrix(&cats, 2, 1, 50),
                image: ViewImage {
                    width: 8,
                    height: 8,
                    channels: [vec![shade; 64], vec![shade / 2; 64], vec![shade / 3; 64]],
                },
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model: FullModel<f64> = FullModel::new(tiny_model_config([true, true, true]), &mut rng);
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        batch_size: dataset.len(),
        max_epochs: 40,
        patience: 40,
        validation_fraction: 0.0,
        freeze_encoders: false,
        target_val_accuracy: None,
    };
    let outcome = train(&model, &dataset, &cfg, &mut rng).unwrap();
    assert_eq!(outcome.history.len(), 40);
    let means: Vec<f64> = outcome
        .history
        .chunks(10)
        .map(|w| w.iter().map(|e| e.train_loss).sum::<f64>() / w.len() as f64)
        .collect();
    for pair in means.windows(2) {
        assert!(
            pair[1] <= pair[0] + 1e-6,
            "windowed loss rose: {:?}",
            means
        );
    }
}
