//! End-to-end acceptance checks, one test per release criterion.
//!
//! Every numeric claim is checked against an oracle implemented inside this
//! file (nested-loop math, dictionary lookups, hand-assembled binaries) so a
//! regression in the library cannot hide behind a regression in the test.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use triview_core::apk::{extract_artifacts_from_bytes, ArtifactKind, FileSpan, Stream};
use triview_core::axml::collect_payload_ranges;
use triview_core::callgraph::{
    abstract_callgraph, build_subsignature_table, PermissionMap, SENSITIVITY_DIM,
};
use triview_core::checkpoint::file_digest;
use triview_core::config::RunConfig;
use triview_core::dex::builder::{build_dex, BodyOp, ClassSpec, MethodSpec};
use triview_core::dex::{invoke_edges, DexFile, MethodRef};
use triview_core::elf::{build_elf, sections};
use triview_core::encoders::{GcnEncoder, ImageEncoder, SeqConvEncoder, SmallConvNet};
use triview_core::eval::aut;
use triview_core::fusion::{AttentionConfig, GlobalFusion, LocalFusion, MfbConfig, MfbPair};
use triview_core::gram::{build_gram_matrix, OpcodeCategory, CATEGORY_COUNT};
use triview_core::image::{bilinear_resize, denoise, Plane, ViewImage};
use triview_core::manifest::{load_manifest, Label};
use triview_core::model::{FullModel, ModelConfig, SampleFeatures};
use triview_core::pipeline::{
    features_from_artifacts, load_features, run_eval, run_extract, run_train, PipelineConfig,
};
use triview_core::synth::{ablation_corpus, overfit_corpus, write_corpus};
use triview_core::tensor::grad_check;
use triview_core::train::{train, TrainConfig};
use triview_core::Tensor;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in [0, 1) from the raw generator, independent of tensor helpers.
fn unit(r: &mut ChaCha8Rng) -> f64 {
    (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Uniform in [-1, 1).
fn sym(r: &mut ChaCha8Rng) -> f64 {
    2.0 * unit(r) - 1.0
}

fn repo_map() -> PermissionMap {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/permission_map.tsv");
    PermissionMap::load(&path).unwrap()
}

// ---------------------------------------------------------------------------
// Criterion 1: the factorized bilinear pooling (matrix form) must agree with
// the explicit low-rank bilinear tensor, evaluated by nested loops.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_mfb_pooling_matches_the_bilinear_tensor_oracle() {
    let started = Instant::now();
    let mut r = rng(0xC101);
    let mut worst = 0.0f64;
    for case in 0..100usize {
        let k = 1 + case % 4;
        let o = 1 + (case / 4) % 4;
        let in_x = 2 + case % 5;
        let in_y = 2 + (case / 3) % 4;
        let cfg = MfbConfig {
            k,
            o,
            dropout_p: 0.0,
        };
        let pair: MfbPair<f64> = MfbPair::new("mfb.acc", in_x, in_y, cfg, &mut r);
        let mut x = vec![0.0f64; in_x];
        let mut y = vec![0.0f64; in_y];
        for v in x.iter_mut() {
            *v = sym(&mut r);
        }
        for v in y.iter_mut() {
            *v = sym(&mut r);
        }
        let tx = Tensor::constant(vec![in_x], x.clone());
        let ty = Tensor::constant(vec![in_y], y.clone());
        let out = pair.forward(&tx, &ty, false, &mut r).unwrap();
        let pooled = out.pooled.to_vec();
        assert_eq!(pooled.len(), o);

        // Low-rank bilinear tensor: each pooled entry sums k rank-1 factors.
        let w = pair.w.weight.tensor.to_vec();
        let q = pair.q.weight.tensor.to_vec();
        for l in 0..o {
            let mut want = 0.0f64;
            for c in 0..k {
                let f = l * k + c;
                for i in 0..in_x {
                    for j in 0..in_y {
                        want += x[i] * w[f * in_x + i] * y[j] * q[f * in_y + j];
                    }
                }
            }
            worst = worst.max((pooled[l] - want).abs());
        }

        // The public vector is the normalized pooled vector; recompute it.
        let powered: Vec<f64> = pooled.iter().map(|v| v.signum() * v.abs().sqrt()).collect();
        let norm = powered.iter().map(|v| v * v).sum::<f64>().sqrt();
        let got = out.vector.to_vec();
        for (g, p) in got.iter().zip(&powered) {
            let want = if norm > 0.0 { p / norm } else { 0.0 };
            worst = worst.max((g - want).abs());
        }
    }
    let elapsed = started.elapsed();
    assert!(worst < 1e-5, "max deviation {worst:e}");
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("criterion 01: PASS (100 cases, max deviation {worst:.2e}, {elapsed:.2?})");
}

// ---------------------------------------------------------------------------
// Criterion 2: analytic gradients of every trainable block agree with central
// finite differences.
// ---------------------------------------------------------------------------

fn three_node_path() -> triview_core::callgraph::AbstractCallgraph {
    let method = |name: &str| MethodRef {
        class_descriptor: "Lfx/graph/Node;".into(),
        name: name.into(),
        proto: "()V".into(),
        is_local: true,
    };
    let node = |name: &str, hot: &[usize]| {
        let mut s = vec![0u8; SENSITIVITY_DIM];
        for &i in hot {
            s[i] = 1;
        }
        triview_core::callgraph::GraphNode {
            method: method(name),
            sensitivity: s,
        }
    };
    triview_core::callgraph::AbstractCallgraph {
        nodes: vec![node("a", &[0, 3]), node("b", &[1]), node("c", &[7, 14])],
        edges: vec![(0, 1), (1, 2)],
    }
}

fn checkerboard_image(width: usize, height: usize) -> ViewImage {
    let mut channels: [Vec<u8>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (c, ch) in channels.iter_mut().enumerate() {
        for i in 0..height {
            for j in 0..width {
                ch.push((40 * (c + 1) + 90 * ((i + j) % 2) + 7 * i + 3 * j) as u8);
            }
        }
    }
    ViewImage {
        width,
        height,
        channels,
    }
}

fn grad_check_model_config() -> ModelConfig {
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
        active_views: [true, true, true],
    }
}

fn grad_check_sample() -> SampleFeatures {
    use OpcodeCategory::*;
    let seq = [Move, Invoke, Get, Return, If, Goto];
    SampleFeatures {
        sample_id: "grad".into(),
        label: Label::Malicious,
        year: 2020,
        graph: three_node_path(),
        gram: build_gram_matrix(&seq, 2, 1, 100),
        image: checkerboard_image(8, 8),
    }
}

#[test]
fn criterion_02_analytic_gradients_match_numeric_differences() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut check = |label: &str, err: f64| {
        assert!(err < 1e-3, "{label} gradient error {err:e}");
        worst = worst.max(err);
    };

    // Fusion block on random inputs.
    {
        let mut r = rng(0xC201);
        let cfg = MfbConfig {
            k: 2,
            o: 4,
            dropout_p: 0.0,
        };
        let local: LocalFusion<f64> = LocalFusion::new([16, 16, 16], &[0, 1, 2], cfg, &mut r);
        let attn = AttentionConfig {
            heads: 2,
            u: 4,
            p: 2,
            p_o: 5,
        };
        let global: GlobalFusion<f64> = GlobalFusion::new(4, attn, &mut r);
        let mut params = local.params();
        params.extend(global.params());
        let mut vecs = Vec::new();
        for _ in 0..3 {
            let mut v = vec![0.0f64; 16];
            for x in v.iter_mut() {
                *x = sym(&mut r);
            }
            vecs.push(Tensor::constant(vec![16], v));
        }
        let mut loss_rng = rng(0xC202);
        let err = grad_check(
            &params,
            || {
                let m = local
                    .fuse(
                        [Some(&vecs[0]), Some(&vecs[1]), Some(&vecs[2])],
                        false,
                        &mut loss_rng,
                    )
                    .unwrap();
                global.fuse(&m).unwrap().sum_all()
            },
            1e-5,
        )
        .unwrap();
        check("fusion block", err);
    }

    // Graph encoder on a three-node path.
    {
        let mut r = rng(0xC203);
        let enc: GcnEncoder<f64> = GcnEncoder::new("gcn.acc", 4, 2, 5, &mut r);
        let g = three_node_path();
        let err = grad_check(&enc.params(), || enc.encode(&g).vector.sum_all(), 1e-5).unwrap();
        check("graph encoder", err);
    }

    // Sequence encoder on a five-row gram fixture.
    {
        use OpcodeCategory::*;
        let mut r = rng(0xC204);
        let enc: SeqConvEncoder<f64> = SeqConvEncoder::new("seq.acc", 2, &[1, 2, 3], 2, 5, &mut r);
        let gram = build_gram_matrix(&[Invoke, Move, Goto, Put, Separator, Get], 2, 1, 100);
        assert_eq!(gram.rows, 5);
        let err = grad_check(&enc.params(), || enc.encode(&gram).vector.sum_all(), 1e-5).unwrap();
        check("sequence encoder", err);
    }

    // Image encoder on an 8x8 image.
    {
        let mut r = rng(0xC205);
        let enc: SmallConvNet<f64> = SmallConvNet::new("img.acc", &[2, 3], 5, &mut r);
        let img = checkerboard_image(8, 8);
        let err = grad_check(&enc.params(), || enc.encode(&img).vector.sum_all(), 1e-5).unwrap();
        check("image encoder", err);
    }

    // Full model: encoders, fusion and classifier end to end through the loss.
    {
        let mut r = rng(0xC206);
        let model: FullModel<f64> = FullModel::new(grad_check_model_config(), &mut r);
        let sample = grad_check_sample();
        let params = model.params(false);
        let mut fwd_rng = rng(0xC207);
        let err = grad_check(
            &params,
            || {
                let out = model.forward(&sample, false, &mut fwd_rng).unwrap();
                model.loss(&out, sample.label).unwrap()
            },
            // Wider stencil: parameters behind inactive relu paths have a
            // zero analytic gradient, so the probe must lift one-ulp loss
            // noise above the relative-error floor.
            1e-4,
        )
        .unwrap();
        check("full model", err);
    }

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    println!("criterion 02: PASS (5 blocks, max rel error {worst:.2e}, {elapsed:.2?})");
}

// ---------------------------------------------------------------------------
// Criterion 3: golden binaries. A hand-laid-out DEX, AXML and ELF must parse
// to exact tables, and the noise filter must reproduce precomputed slices.
// ---------------------------------------------------------------------------

fn one_file_stream(name: &str, bytes: Vec<u8>) -> Stream {
    let length = bytes.len();
    Stream {
        bytes,
        index: vec![FileSpan {
            path: name.into(),
            offset: 0,
            length,
        }],
    }
}

#[test]
fn criterion_03_golden_binaries_parse_and_denoise_exactly() {
    // DEX: one local class La/b/C; with one method calling Lx/y/Z;.run().
    let fixture = build_dex(&[ClassSpec {
        descriptor: "La/b/C;".into(),
        methods: vec![MethodSpec {
            name: "go".into(),
            body: vec![
                BodyOp::Plain(0x01),
                BodyOp::Invoke {
                    opcode: 0x6e,
                    class: "Lx/y/Z;".into(),
                    name: "run".into(),
                },
                BodyOp::Plain(0x0e),
            ],
        }],
    }]);

    let dex = DexFile::parse(&fixture).unwrap();
    assert_eq!(dex.strings, ["La/b/C;", "Lx/y/Z;", "V", "go", "run"]);
    assert_eq!(dex.types, ["La/b/C;", "Lx/y/Z;", "V"]);

    let local = MethodRef {
        class_descriptor: "La/b/C;".into(),
        name: "go".into(),
        proto: "()V".into(),
        is_local: true,
    };
    let external = MethodRef {
        class_descriptor: "Lx/y/Z;".into(),
        name: "run".into(),
        proto: "()V".into(),
        is_local: false,
    };
    assert_eq!(dex.methods, [local.clone(), external.clone()]);

    // Header offsets follow from the fixed section sizes: 0x70 header, five
    // string ids, three type ids, one proto, two method ids, one class def.
    let h = &dex.header;
    assert_eq!(h.string_ids_off, 112);
    assert_eq!(h.type_ids_off, 132);
    assert_eq!(h.proto_ids_off, 144);
    assert_eq!(h.method_ids_off, 156);
    assert_eq!(h.class_defs_off, 172);
    assert_eq!(h.data_off, 204);
    assert_eq!(h.map_off, 272);
    assert_eq!(h.file_size, 396);
    assert_eq!(h.data_size, 192);
    assert_eq!(fixture.len(), 396);

    let code = &dex.code_items[&local];
    assert_eq!(code.registers, 1);
    let ops: Vec<u8> = code.instructions.iter().map(|i| i.opcode).collect();
    assert_eq!(ops, [0x01, 0x6e, 0x0e]);
    let names: Vec<&str> = code.instructions.iter().map(|i| i.mnemonic()).collect();
    assert_eq!(names, ["move", "invoke-virtual", "return-void"]);
    assert_eq!(code.instructions[1].invoke_target(), Some(1));
    assert_eq!(invoke_edges(&dex), [(local.clone(), external.clone())]);

    // Denoising a DEX keeps exactly the data section.
    let out = denoise(&one_file_stream("classes.dex", fixture.clone()), ArtifactKind::Dex, &[]);
    assert_eq!(out.bytes, fixture[204..396]);
    assert_eq!(out.passthrough_files, 0);

    // AXML: document holding a string pool, a skipped chunk, a start and an
    // end element, all assembled byte by byte.
    let le16 = |v: u16| v.to_le_bytes();
    let le32 = |v: u32| v.to_le_bytes();
    let mut doc: Vec<u8> = Vec::new();
    doc.extend(le16(0x0003));
    doc.extend(le16(8));
    doc.extend(le32(90));
    // string pool: 28-byte header, 6-byte payload
    doc.extend(le16(0x0001));
    doc.extend(le16(28));
    doc.extend(le32(34));
    doc.extend([0u8; 20]);
    doc.extend([0xAA; 6]);
    // resource map: not a kept kind
    doc.extend(le16(0x0180));
    doc.extend(le16(8));
    doc.extend(le32(12));
    doc.extend([0xEE; 4]);
    // start element: 16-byte header, 4-byte payload
    doc.extend(le16(0x0102));
    doc.extend(le16(16));
    doc.extend(le32(20));
    doc.extend([0u8; 8]);
    doc.extend([0xBB; 4]);
    // end element: header only
    doc.extend(le16(0x0103));
    doc.extend(le16(16));
    doc.extend(le32(16));
    doc.extend([0u8; 8]);
    assert_eq!(doc.len(), 90);

    let ranges = collect_payload_ranges(&doc).unwrap();
    let want: Vec<(u16, Range<usize>)> =
        vec![(0x0001, 36..42), (0x0102, 70..74), (0x0103, 90..90)];
    assert_eq!(ranges, want);

    let out = denoise(&one_file_stream("AndroidManifest.xml", doc.clone()), ArtifactKind::Xml, &[]);
    let mut kept = vec![0xAA; 6];
    kept.extend([0xBB; 4]);
    assert_eq!(out.bytes, kept);
    assert_eq!(out.passthrough_files, 0);

    // An unparseable second file passes through whole and is counted.
    let mut bytes = doc.clone();
    bytes.extend(b"not axml");
    let stream = Stream {
        bytes,
        index: vec![
            FileSpan {
                path: "a.xml".into(),
                offset: 0,
                length: doc.len(),
            },
            FileSpan {
                path: "b.xml".into(),
                offset: doc.len(),
                length: 8,
            },
        ],
    };
    let out = denoise(&stream, ArtifactKind::Xml, &[]);
    let mut want_bytes = kept.clone();
    want_bytes.extend(b"not axml");
    assert_eq!(out.bytes, want_bytes);
    assert_eq!(out.passthrough_files, 1);

    // ELF: three sections plus the generated name table; only whitelisted
    // section contents survive denoising.
    let so = build_elf(&[
        (".text", &[0xAA; 4]),
        (".junk", &[0xBB; 3]),
        (".data", &[0xCC; 2]),
    ]);
    assert_eq!(&so[0..4], b"\x7fELF");
    assert_eq!(so.len(), 424);
    let secs = sections(&so).unwrap();
    let listed: Vec<(&str, Range<usize>)> = secs
        .iter()
        .map(|s| (s.name.as_str(), s.range.clone()))
        .collect();
    assert_eq!(
        listed,
        [
            (".text", 64..68),
            (".junk", 68..71),
            (".data", 71..73),
            (".shstrtab", 73..102),
        ]
    );

    let out = denoise(
        &one_file_stream("lib.so", so),
        ArtifactKind::So,
        &[".text", ".data"],
    );
    assert_eq!(out.bytes, [0xAA, 0xAA, 0xAA, 0xAA, 0xCC, 0xCC]);
    assert_eq!(out.passthrough_files, 0);

    println!("criterion 03: PASS (dex, axml and elf goldens, denoised slices byte-equal)");
}

// ---------------------------------------------------------------------------
// Criterion 4: n-gram matrix laws on random sequences plus the worked
// seven-element example.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_gram_matrix_shape_one_hot_and_overlap_laws() {
    use OpcodeCategory::*;
    let all = [Move, Get, Put, If, Goto, Invoke, Return, Separator];

    // Discover each category's one-hot slot from singleton sequences.
    let mut hot = BTreeMap::new();
    for (ci, cat) in all.iter().enumerate() {
        let m = build_gram_matrix(&[*cat], 1, 1, 10);
        assert_eq!((m.rows, m.cols()), (1, CATEGORY_COUNT));
        let ones: Vec<usize> = (0..CATEGORY_COUNT).filter(|&j| m.data[j] == 1).collect();
        assert_eq!(ones.len(), 1);
        hot.insert(ci, ones[0]);
    }
    let distinct: std::collections::BTreeSet<usize> = hot.values().copied().collect();
    assert_eq!(distinct.len(), CATEGORY_COUNT);

    let mut r = rng(0xC401);
    for _ in 0..1000 {
        let len = (r.next_u64() % 40) as usize;
        let w = 1 + (r.next_u64() % 6) as usize;
        let mut seq = Vec::with_capacity(len);
        let mut idx = Vec::with_capacity(len);
        for _ in 0..len {
            let c = (r.next_u64() % CATEGORY_COUNT as u64) as usize;
            seq.push(all[c]);
            idx.push(c);
        }
        let m = build_gram_matrix(&seq, w, 1, 100_000);
        let want_rows = if len >= w { len - w + 1 } else { 0 };
        assert_eq!(m.rows, want_rows);
        assert_eq!(m.cols(), w * CATEGORY_COUNT);
        assert_eq!(m.data.len(), m.rows * m.cols());
        assert!(!m.truncated);

        for row in 0..m.rows {
            let base = row * m.cols();
            for slot in 0..w {
                let block = &m.data[base + slot * CATEGORY_COUNT..base + (slot + 1) * CATEGORY_COUNT];
                assert_eq!(block.iter().map(|&b| b as usize).sum::<usize>(), 1);
                assert_eq!(block[hot[&idx[row + slot]]], 1);
            }
            // Stride-one windows: this row shifted left matches the next row.
            if row + 1 < m.rows {
                let next = (row + 1) * m.cols();
                assert_eq!(
                    m.data[base + CATEGORY_COUNT..base + m.cols()],
                    m.data[next..next + (w - 1) * CATEGORY_COUNT]
                );
            }
        }
    }

    // Row cap truncates and says so.
    let long: Vec<OpcodeCategory> = (0..10).map(|i| all[i % CATEGORY_COUNT]).collect();
    let capped = build_gram_matrix(&long, 2, 1, 3);
    assert_eq!(capped.rows, 3);
    assert!(capped.truncated);

    // Seven elements with a window of two give a six-by-sixteen matrix.
    let seven = [Move, Invoke, Get, Goto, Return, If, Separator];
    let m = build_gram_matrix(&seven, 2, 1, 100_000);
    assert_eq!((m.rows, m.cols()), (6, 16));

    println!("criterion 04: PASS (1000 random sequences, windows 1..=6, worked example 6x16)");
}

// ---------------------------------------------------------------------------
// Criterion 5: sensitivity vectors from the permission map must match an
// independent dictionary-lookup oracle, node for node, on a 50-API fixture.
// ---------------------------------------------------------------------------

const FIXTURE_VOCAB: [&str; 15] = [
    "normal",
    "dangerous",
    "signature",
    "signatureOrSystem",
    "privileged",
    "development",
    "appop",
    "pre23",
    "installer",
    "verifier",
    "preinstalled",
    "setup",
    "instant",
    "runtime",
    "oem",
];

const FIXTURE_PERMS: [(&str, &str); 12] = [
    ("perm.READ_CONTACTS", "dangerous"),
    ("perm.WRITE_CONTACTS", "dangerous"),
    ("perm.READ_CALENDAR", "dangerous"),
    ("perm.WRITE_CALENDAR", "dangerous"),
    ("perm.WRITE_SETTINGS", "signature|appop|pre23"),
    ("perm.CAMERA", "dangerous|runtime"),
    ("perm.NET", "normal"),
    ("perm.BOOT", "normal|pre23"),
    ("perm.SIGN", "signature|signatureOrSystem"),
    ("perm.DEV", "development|privileged"),
    ("perm.INST", "installer|verifier|preinstalled"),
    ("perm.MISC", "setup|instant|oem"),
];

/// The 50 distinct fixture APIs and their permission rows.
fn fixture_api_rows() -> Vec<(String, String)> {
    let mut rows = vec![
        (
            "com.android.providers.contacts.ContactsProvider2.applyBatch".to_string(),
            "perm.READ_CONTACTS".to_string(),
        ),
        (
            "com.android.providers.contacts.ContactsProvider2.applyBatch".to_string(),
            "perm.WRITE_CONTACTS".to_string(),
        ),
        (
            "com.android.providers.calendar.CalendarProvider2.applyBatch".to_string(),
            "perm.READ_CALENDAR".to_string(),
        ),
        (
            "com.android.providers.calendar.CalendarProvider2.applyBatch".to_string(),
            "perm.WRITE_CALENDAR".to_string(),
        ),
        (
            "com.android.providers.settings.SettingsProvider.applyBatch".to_string(),
            "perm.WRITE_SETTINGS".to_string(),
        ),
    ];
    for i in 0..47 {
        let api = format!("com.g{}.pkg.Cls{}.act{}", i % 5, i, i % 4);
        rows.push((api, FIXTURE_PERMS[i % 12].0.to_string()));
    }
    rows
}

fn fixture_map_text(rows: &[(String, String)]) -> String {
    let mut text = String::from("#LEVEL_VOCAB\n");
    for level in FIXTURE_VOCAB {
        text.push_str(level);
        text.push('\n');
    }
    text.push_str("\n#PERMISSION_LEVELS\n");
    for (perm, levels) in FIXTURE_PERMS {
        text.push_str(&format!("{perm}\t{levels}\n"));
    }
    text.push_str("\n#API_PERMISSION\n");
    for (api, perm) in rows {
        text.push_str(&format!("{api}\t{perm}\n"));
    }
    text
}

/// (class, method) of a dotted API signature.
fn split_api(api: &str) -> (&str, &str) {
    api.rsplit_once('.').unwrap()
}

/// First two dot-separated fields, the whole name if shorter.
fn two_fields(class: &str) -> &str {
    match class.match_indices('.').nth(1) {
        Some((pos, _)) => &class[..pos],
        None => class,
    }
}

fn api_method_ref(api: &str) -> MethodRef {
    let (class, method) = split_api(api);
    MethodRef {
        class_descriptor: format!("L{};", class.replace('.', "/")),
        name: method.to_string(),
        proto: "()V".into(),
        is_local: false,
    }
}

/// Dictionary oracle: look the node up among the raw API rows by shared
/// prefix and method name, then union the permission level bits.
fn oracle_vector(rows: &[(String, String)], method: &MethodRef) -> Vec<u8> {
    let dotted = method
        .class_descriptor
        .trim_start_matches('L')
        .trim_end_matches(';')
        .replace('/', ".");
    let key = (two_fields(&dotted).to_string(), method.name.clone());
    let mut bits = vec![0u8; SENSITIVITY_DIM];
    for (api, perm) in rows {
        let (class, name) = split_api(api);
        if (two_fields(class).to_string(), name.to_string()) == key {
            let levels = FIXTURE_PERMS.iter().find(|(p, _)| p == perm).unwrap().1;
            for level in levels.split('|') {
                let slot = FIXTURE_VOCAB.iter().position(|v| *v == level).unwrap();
                bits[slot] = 1;
            }
        }
    }
    bits
}

#[test]
fn criterion_05_sensitivity_vectors_match_a_dictionary_oracle() {
    let rows = fixture_api_rows();
    let distinct: std::collections::BTreeSet<&String> = rows.iter().map(|(a, _)| a).collect();
    assert_eq!(distinct.len(), 50);

    let map = PermissionMap::parse(&fixture_map_text(&rows)).unwrap();

    let root = MethodRef {
        class_descriptor: "Lapp/root/Main;".into(),
        name: "main".into(),
        proto: "()V".into(),
        is_local: true,
    };
    let unmapped = [
        api_method_ref("com.plain.Util.go"),
        api_method_ref("org.zero.Thing.noop"),
        api_method_ref("aB.x"),
    ];
    let mut edges: Vec<(MethodRef, MethodRef)> = Vec::new();
    for api in &distinct {
        edges.push((root.clone(), api_method_ref(api)));
    }
    for m in &unmapped {
        edges.push((root.clone(), m.clone()));
    }
    edges.push((
        api_method_ref("com.android.providers.contacts.ContactsProvider2.applyBatch"),
        api_method_ref("com.android.providers.settings.SettingsProvider.applyBatch"),
    ));

    let graph = abstract_callgraph(&edges, &map).unwrap();
    assert_eq!(graph.nodes.len(), 54);
    assert_eq!(graph.edges.len(), 54);

    // Node for node against the dictionary oracle.
    for node in &graph.nodes {
        let want = oracle_vector(&rows, &node.method);
        assert_eq!(
            node.sensitivity, want,
            "sensitivity mismatch for {:?}",
            node.method
        );
    }

    // The three batch-apply providers share one subsignature, so all three
    // nodes carry the merged union of their permissions.
    let batch: Vec<&Vec<u8>> = graph
        .nodes
        .iter()
        .filter(|n| n.method.name == "applyBatch")
        .map(|n| &n.sensitivity)
        .collect();
    assert_eq!(batch.len(), 3);
    let mut union = vec![0u8; SENSITIVITY_DIM];
    for slot in [1, 2, 6, 7] {
        union[slot] = 1;
    }
    for v in &batch {
        assert_eq!(**v, union);
    }

    // Methods with no mapped permission stay all zero.
    for m in std::iter::once(&root).chain(&unmapped) {
        let node = graph.nodes.iter().find(|n| n.method == *m).unwrap();
        assert!(node.sensitivity.iter().all(|&b| b == 0));
    }

    println!("criterion 05: PASS (54 nodes vs dictionary oracle, merged union, zero rows)");
}

// ---------------------------------------------------------------------------
// Criterion 6: bilinear resampling against a naive per-pixel oracle, plus
// constant preservation and output bounds.
// ---------------------------------------------------------------------------

fn oracle_pixel(src: &[f32], sh: usize, sw: usize, dh: usize, dw: usize, i: usize, j: usize) -> f32 {
    let scale_y = sh as f32 / dh as f32;
    let scale_x = sw as f32 / dw as f32;
    let sy = ((i as f32 + 0.5) * scale_y - 0.5).clamp(0.0, (sh - 1) as f32);
    let sx = ((j as f32 + 0.5) * scale_x - 0.5).clamp(0.0, (sw - 1) as f32);
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(sh - 1);
    let x1 = (x0 + 1).min(sw - 1);
    let fy = sy - y0 as f32;
    let fx = sx - x0 as f32;
    let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
    let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

#[test]
fn criterion_06_bilinear_resize_matches_a_per_pixel_oracle() {
    let mut r = rng(0xC601);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let sh = 1 + (r.next_u64() % 24) as usize;
        let sw = 1 + (r.next_u64() % 24) as usize;
        let dh = 1 + (r.next_u64() % 28) as usize;
        let dw = 1 + (r.next_u64() % 28) as usize;
        let src: Vec<f32> = (0..sh * sw).map(|_| unit(&mut r) as f32).collect();
        let got = bilinear_resize(&src, sh, sw, dh, dw);
        assert_eq!(got.len(), dh * dw);

        let lo = src.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = src.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        for i in 0..dh {
            for j in 0..dw {
                let want = oracle_pixel(&src, sh, sw, dh, dw, i, j);
                worst = worst.max((got[i * dw + j] as f64 - want as f64).abs());
                assert!(got[i * dw + j] >= lo - 1e-5 && got[i * dw + j] <= hi + 1e-5);
            }
        }
    }
    assert!(worst < 1e-5, "max deviation {worst:e}");

    // A constant plane stays constant through the byte-rounding path.
    let planes = [
        Plane {
            width: 7,
            height: 5,
            data: vec![137; 35],
        },
        Plane {
            width: 3,
            height: 9,
            data: vec![9; 27],
        },
        Plane {
            width: 11,
            height: 2,
            data: vec![250; 22],
        },
    ];
    let img = triview_core::image::assemble_and_resize(&planes, (4, 6));
    for (c, want) in [(0usize, 137u8), (1, 9), (2, 250)] {
        assert_eq!(img.channels[c], vec![want; 24]);
    }

    println!("criterion 06: PASS (20 random planes, max deviation {worst:.2e}, constants exact)");
}

// ---------------------------------------------------------------------------
// Criterion 7: the sixteen-app corpus must be overfit to 100% training
// accuracy within 200 epochs, deterministically per seed.
// ---------------------------------------------------------------------------

fn small_run_config(seed: u64) -> RunConfig {
    let mut run = RunConfig::default();
    run.seed = seed;
    run.window_length = 2;
    run.image_width = 16;
    run.image_height = 16;
    run.embed_dim = 8;
    run.gcn_hidden = 4;
    run.gcn_layers = 2;
    run.seq_kernel_heights = vec![1, 2];
    run.seq_filters = 2;
    run.img_stage_channels = vec![2, 3];
    run.mfb_k = 2;
    run.mfb_o = 6;
    run.attention_heads = 2;
    run.attention_u = 4;
    run.attention_p = 2;
    run.attention_out = 10;
    run.classifier_hidden = vec![6, 4];
    run.learning_rate = 3e-3;
    run.batch_size = 4;
    run.max_epochs = 200;
    run.patience = 200;
    run.validation_fraction = 0.0;
    run.target_val_accuracy = Some(1.0);
    run
}

#[test]
fn criterion_07_sixteen_app_corpus_overfits_deterministically() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let apps = overfit_corpus();
    assert_eq!(apps.len(), 16);
    let manifest = write_corpus(&dir.path().join("apks"), &apps).unwrap();
    let entries = load_manifest(&manifest).unwrap();
    let map = repo_map();
    let run = small_run_config(7);

    let cache = dir.path().join("cache");
    let report = run_extract(&entries, &map, &run.pipeline_config(), &cache, false).unwrap();
    assert_eq!((report.extracted.len(), report.failures.len()), (16, 0));
    let features = load_features(&entries, &cache).unwrap();

    let first = run_train::<f32>(&features, &run, &dir.path().join("a")).unwrap();
    let history = &first.outcome.history;
    assert!(history.len() <= 200, "needed {} epochs", history.len());
    assert_eq!(history.last().unwrap().val_acc, 1.0);

    let second = run_train::<f32>(&features, &run, &dir.path().join("b")).unwrap();
    assert_eq!(
        file_digest(&first.checkpoint_path).unwrap(),
        file_digest(&second.checkpoint_path).unwrap()
    );
    assert_eq!(
        std::fs::read(&first.history_path).unwrap(),
        std::fs::read(&second.history_path).unwrap()
    );

    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}");
    println!(
        "criterion 07: PASS (100% at epoch {}, reruns byte-identical, {elapsed:.2?})",
        history.len()
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: on the 200-sample ablation corpus, training accuracy with all
// three views is at least every two-view accuracy, and every two-view
// accuracy is at least every one-view accuracy, for each of three seeds.
// ---------------------------------------------------------------------------

fn ablation_model_config(active: [bool; 3]) -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        gcn_hidden: 4,
        gcn_layers: 2,
        window_length: 2,
        seq_kernel_heights: vec![1, 2],
        seq_filters: 2,
        img_stage_channels: vec![2, 3],
        mfb: MfbConfig {
            k: 2,
            o: 6,
            dropout_p: 0.1,
        },
        attention: AttentionConfig {
            heads: 2,
            u: 4,
            p: 2,
            p_o: 10,
        },
        classifier_hidden: vec![6, 4],
        classifier_dropout: 0.2,
        active_views: active,
    }
}

#[test]
fn criterion_08_view_ablation_never_beats_the_full_model() {
    let started = Instant::now();
    let apps = ablation_corpus();
    assert_eq!(apps.len(), 200);
    let map = repo_map();
    let table = build_subsignature_table(&map).unwrap();
    let pcfg = PipelineConfig {
        window_length: 2,
        image_target: (16, 16),
        ..PipelineConfig::default()
    };
    let features: Vec<SampleFeatures> = apps
        .iter()
        .map(|app| {
            let artifacts = extract_artifacts_from_bytes(&app.bytes).unwrap();
            features_from_artifacts(&app.sample_id, app.label, app.year, &artifacts, &table, &pcfg)
                .unwrap()
        })
        .collect();

    // Per-class pattern blinding makes some samples indistinguishable from
    // the other class once a view is dropped, capping training accuracy at
    // 1.0, 0.97 and 0.87 for three, two and one active view.
    let subsets: [([bool; 3], f64); 7] = [
        ([true, true, true], 1.0),
        ([true, true, false], 0.97),
        ([true, false, true], 0.97),
        ([false, true, true], 0.97),
        ([true, false, false], 0.87),
        ([false, true, false], 0.87),
        ([false, false, true], 0.87),
    ];
    let seeds = [1u64, 2, 3];

    let mut acc = vec![[0.0f64; 3]; subsets.len()];
    for (si, (active, ceiling)) in subsets.iter().enumerate() {
        for (ki, &seed) in seeds.iter().enumerate() {
            let mut r = rng(seed);
            let model: FullModel<f32> = FullModel::new(ablation_model_config(*active), &mut r);
            let tc = TrainConfig {
                learning_rate: 3e-3,
                batch_size: 16,
                max_epochs: 80,
                patience: 80,
                validation_fraction: 0.0,
                freeze_encoders: false,
                target_val_accuracy: Some(*ceiling),
            };
            let outcome = train(&model, &features, &tc, &mut r).unwrap();
            let best = outcome
                .history
                .iter()
                .map(|e| e.val_acc)
                .fold(0.0f64, f64::max);
            assert!(
                best <= ceiling + 1e-9,
                "views {active:?} exceeded its ceiling: {best} > {ceiling}"
            );
            acc[si][ki] = best;
        }
    }

    for (ki, &seed) in seeds.iter().enumerate() {
        let three = acc[0][ki];
        let twos = [acc[1][ki], acc[2][ki], acc[3][ki]];
        let ones = [acc[4][ki], acc[5][ki], acc[6][ki]];
        for &two in &twos {
            assert!(three + 1e-9 >= two, "seed {seed}: 3-view {three} < 2-view {two}");
        }
        let min_two = twos.iter().cloned().fold(f64::INFINITY, f64::min);
        for &one in &ones {
            assert!(min_two + 1e-9 >= one, "seed {seed}: 2-view {min_two} < 1-view {one}");
        }
    }

    let elapsed = started.elapsed();
    println!(
        "criterion 08: PASS (3 seeds, accuracies {:?}, {elapsed:.2?})",
        acc.iter().map(|a| a[0]).collect::<Vec<_>>()
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: area-under-time hand checks and the constant identity.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_aut_hand_checks_and_constant_identity() {
    assert!((aut(&[1.0, 0.5]).unwrap() - 0.75).abs() < 1e-12);
    assert!((aut(&[0.9, 0.8, 1.0]).unwrap() - 0.875).abs() < 1e-12);
    for n in 2..=12 {
        let v = vec![0.37; n];
        assert!((aut(&v).unwrap() - 0.37).abs() < 1e-12, "length {n}");
    }
    assert!(aut(&[0.5]).is_err());
    println!("criterion 09: PASS (two hand checks at 1e-12, constant identity for 2..=12 slots)");
}

// ---------------------------------------------------------------------------
// Criterion 10: two complete pipeline runs with the same seed produce
// byte-identical caches, checkpoints, histories and evaluation reports.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_same_seed_runs_are_byte_identical() {
    let apps = overfit_corpus();
    let map = repo_map();
    let run = small_run_config(3);

    let complete_run = || {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(&dir.path().join("apks"), &apps).unwrap();
        let entries = load_manifest(&manifest).unwrap();
        let cache = dir.path().join("cache");
        run_extract(&entries, &map, &run.pipeline_config(), &cache, false).unwrap();
        let features = load_features(&entries, &cache).unwrap();
        let art = run_train::<f32>(&features, &run, &dir.path().join("out")).unwrap();
        let report = run_eval::<f32>(&art.checkpoint_path, &features).unwrap();

        let mut names: Vec<PathBuf> = std::fs::read_dir(&cache)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        let cache_digests: Vec<[u8; 32]> =
            names.iter().map(|p| file_digest(p).unwrap()).collect();
        (
            file_digest(&art.checkpoint_path).unwrap(),
            file_digest(&art.history_path).unwrap(),
            cache_digests,
            report,
        )
    };

    let a = complete_run();
    let b = complete_run();
    assert_eq!(a.0, b.0, "checkpoint digests differ");
    assert_eq!(a.1, b.1, "history digests differ");
    assert_eq!(a.2, b.2, "feature cache digests differ");
    assert_eq!(a.3, b.3, "evaluation reports differ");

    println!("criterion 10: PASS (checkpoint, history, cache and report all identical)");
}
