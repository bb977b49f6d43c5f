//! Synthetic APK corpora: small, fully valid archives whose three artifact
//! streams carry independently controllable class signal, used by the
//! end-to-end tests.
//!
//! One app is three fixed methods in one class. The callgraph signal is the
//! set of invoke targets, the opcode signal is the filler instructions
//! between invokes, and the image signal is the byte level of a large
//! fill-array payload plus the XML and native-library contents. The three
//! knobs are independent: changing one leaves the other two views' feature
//! inputs bit-identical.

use std::path::{Path, PathBuf};

use crate::apk::build_zip;
use crate::axml::{self, CHUNK_END_ELEMENT, CHUNK_START_ELEMENT, CHUNK_STRING_POOL};
use crate::dex::builder::{build_dex, BodyOp, ClassSpec, MethodSpec};
use crate::elf::build_elf;
use crate::manifest::Label;

/// Per-view content style. `Neutral` renders a fixed label-free pattern
/// used to blind one view of a sample; it ignores jitter so every neutral
/// rendering is identical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Mal,
    Ben,
    Neutral,
}

impl Pattern {
    pub fn of(label: Label) -> Pattern {
        match label {
            Label::Malicious => Pattern::Mal,
            Label::Benign => Pattern::Ben,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    /// Invoke targets (callgraph view).
    pub graph: Pattern,
    /// Filler opcodes between invokes (opcode-gram view).
    pub gram: Pattern,
    /// Byte fill of payload, XML and native library (image view).
    pub image: Pattern,
    /// Per-sample variation of non-neutral patterns; 0 keeps the base form.
    pub jitter: u64,
}

const APP_CLASS: &str = "Lcom/app/Main;";

/// Big enough that a downscaled byte image samples only payload rows, never
/// the strings or code that carry the other views' content.
const PAYLOAD_LEN: usize = 65536;

const MAL_TARGETS: [(&str, &str); 8] = [
    ("Landroid/telephony/TelephonyManager;", "getDeviceId"),
    ("Landroid/telephony/SmsManager;", "sendTextMessage"),
    ("Landroid/location/LocationManager;", "getLastKnownLocation"),
    ("Landroid/content/pm/PackageManager;", "installPackage"),
    ("Lcom/android/providers/contacts/ContactsProvider2;", "applyBatch"),
    ("Landroid/os/PowerManager;", "reboot"),
    ("Landroid/media/AudioRecord;", "startRecording"),
    ("Landroid/accounts/AccountManager;", "getAccounts"),
];

const BEN_TARGETS: [(&str, &str); 8] = [
    ("Ljava/net/URL;", "openConnection"),
    ("Landroid/net/ConnectivityManager;", "getActiveNetworkInfo"),
    ("Landroid/os/PowerManager;", "newWakeLock"),
    ("Landroid/os/Vibrator;", "vibrate"),
    ("Ljava/net/Socket;", "connect"),
    ("Landroid/bluetooth/BluetoothAdapter;", "getAddress"),
    ("Landroid/net/wifi/WifiManager;", "getConnectionInfo"),
    ("Landroid/nfc/NfcAdapter;", "enableForegroundDispatch"),
];

const NEUTRAL_TARGETS: [(&str, &str); 6] = [
    ("Lorg/simple/lib/Util;", "step0"),
    ("Lorg/simple/lib/Util;", "step1"),
    ("Lorg/simple/lib/Util;", "step2"),
    ("Lorg/simple/lib/Util;", "step3"),
    ("Lorg/simple/lib/Util;", "step4"),
    ("Lorg/simple/lib/Util;", "step5"),
];

fn targets(pattern: Pattern, jitter: u64) -> Vec<(String, String)> {
    let rotate = |pool: &[(&str, &str); 8]| -> Vec<(String, String)> {
        (0..6)
            .map(|k| {
                let (class, name) = pool[(jitter as usize + k) % 8];
                (class.to_string(), name.to_string())
            })
            .collect()
    };
    match pattern {
        Pattern::Mal => rotate(&MAL_TARGETS),
        Pattern::Ben => rotate(&BEN_TARGETS),
        Pattern::Neutral => NEUTRAL_TARGETS
            .iter()
            .map(|&(class, name)| (class.to_string(), name.to_string()))
            .collect(),
    }
}

fn filler(pattern: Pattern, count: usize) -> Vec<BodyOp> {
    let opcode = match pattern {
        Pattern::Mal => 0x28,     // goto
        Pattern::Ben => 0x01,     // move
        Pattern::Neutral => 0x32, // if-eq
    };
    vec![BodyOp::Plain(opcode); count]
}

fn filler_counts(pattern: Pattern, jitter: u64) -> (usize, usize) {
    match pattern {
        Pattern::Neutral => (5, 3),
        _ => (5 + (jitter % 3) as usize, 3 + (jitter % 2) as usize),
    }
}

struct Fills {
    payload: u8,
    xml: u8,
    so: u8,
}

fn fills(pattern: Pattern, jitter: u64) -> Fills {
    let j = (jitter % 8) as u8;
    match pattern {
        Pattern::Mal => Fills {
            payload: 0xe0 + j,
            xml: 0xc8 + j,
            so: 0xd0 + j,
        },
        Pattern::Ben => Fills {
            payload: 0x28 + j,
            xml: 0x38 + j,
            so: 0x20 + j,
        },
        Pattern::Neutral => Fills {
            payload: 0x88,
            xml: 0x80,
            so: 0x80,
        },
    }
}

/// One APK whose dex, XML and native-library contents follow the given
/// per-view patterns.
pub fn build_app(spec: &SynthSpec) -> Vec<u8> {
    let t = targets(spec.graph, spec.jitter);
    let (n1, n2) = filler_counts(spec.gram, spec.jitter);
    let f = fills(spec.image, spec.jitter);

    let body = |t1: &(String, String), t2: &(String, String), payload: Option<Vec<u8>>| {
        let mut ops = filler(spec.gram, n1);
        ops.push(BodyOp::Invoke {
            opcode: 0x6e,
            class: t1.0.clone(),
            name: t1.1.clone(),
        });
        ops.extend(filler(spec.gram, n2));
        ops.push(BodyOp::Invoke {
            opcode: 0x6e,
            class: t2.0.clone(),
            name: t2.1.clone(),
        });
        if let Some(data) = payload {
            ops.push(BodyOp::FillArrayPayload {
                element_width: 1,
                data,
            });
        }
        ops.push(BodyOp::Plain(0x0e));
        ops
    };

    let dex = build_dex(&[ClassSpec {
        descriptor: APP_CLASS.into(),
        methods: vec![
            MethodSpec {
                name: "a".into(),
                body: body(&t[0], &t[1], None),
            },
            MethodSpec {
                name: "b".into(),
                body: body(&t[2], &t[3], None),
            },
            MethodSpec {
                name: "c".into(),
                body: body(&t[4], &t[5], Some(vec![f.payload; PAYLOAD_LEN])),
            },
        ],
    }]);
    let xml = axml::document(&[
        axml::chunk(CHUNK_STRING_POOL, 28, &vec![f.xml; 600]),
        axml::chunk(CHUNK_START_ELEMENT, 16, &vec![f.xml; 120]),
        axml::chunk(CHUNK_END_ELEMENT, 16, &vec![f.xml; 120]),
    ]);
    let so = build_elf(&[
        (".text", &vec![f.so; 800][..]),
        (".data", &vec![f.so; 400][..]),
        (".rodata", &vec![f.so; 256][..]),
    ]);
    build_zip(&[
        ("AndroidManifest.xml", &xml),
        ("classes.dex", &dex),
        ("lib/armeabi-v7a/libapp.so", &so),
    ])
}

#[derive(Debug, Clone)]
pub struct SynthApp {
    pub sample_id: String,
    pub label: Label,
    pub year: u16,
    pub bytes: Vec<u8>,
}

/// 16 apps, 8 per class, label-consistent in all three views, with
/// per-sample jitter and years spread over 2019-2022.
pub fn overfit_corpus() -> Vec<SynthApp> {
    let mut out = Vec::new();
    for i in 0..8u64 {
        for (label, tag) in [(Label::Malicious, "mal"), (Label::Benign, "ben")] {
            let pattern = Pattern::of(label);
            out.push(SynthApp {
                sample_id: format!("{tag}{i:02}"),
                label,
                year: 2019 + (i % 4) as u16,
                bytes: build_app(&SynthSpec {
                    graph: pattern,
                    gram: pattern,
                    image: pattern,
                    jitter: i,
                }),
            });
        }
    }
    out
}

/// Per-class counts of which views carry the label pattern, in
/// (callgraph, opcode-gram, image) order. Every sample keeps at least one
/// informative view; blinded views render the shared neutral pattern, so a
/// model restricted to an all-blinded subset of views sees inputs that are
/// identical across the two classes.
pub const ABLATION_MASKS: [([bool; 3], usize); 7] = [
    ([true, true, true], 40),
    ([true, true, false], 14),
    ([true, false, true], 14),
    ([false, true, true], 14),
    ([true, false, false], 6),
    ([false, true, false], 6),
    ([false, false, true], 6),
];

/// 200 apps, 100 per class, with the mask plan above and no jitter.
pub fn ablation_corpus() -> Vec<SynthApp> {
    let mut out = Vec::new();
    let mut idx = 0usize;
    for (mask, count) in ABLATION_MASKS {
        for _ in 0..count {
            for label in [Label::Malicious, Label::Benign] {
                let pattern = Pattern::of(label);
                let pick = |on: bool| if on { pattern } else { Pattern::Neutral };
                out.push(SynthApp {
                    sample_id: format!("ab{idx:03}{}", &label.as_str()[..3]),
                    label,
                    year: 2021,
                    bytes: build_app(&SynthSpec {
                        graph: pick(mask[0]),
                        gram: pick(mask[1]),
                        image: pick(mask[2]),
                        jitter: 0,
                    }),
                });
            }
            idx += 1;
        }
    }
    out
}

/// Write `<id>.apk` files plus a `manifest.csv`; returns the manifest path.
pub fn write_corpus(dir: &Path, apps: &[SynthApp]) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::from("sample_id,apk_path,label,year\n");
    for app in apps {
        let path = dir.join(format!("{}.apk", app.sample_id));
        std::fs::write(&path, &app.bytes)?;
        manifest.push_str(&format!(
            "{},{},{},{}\n",
            app.sample_id,
            path.display(),
            app.label.as_str(),
            app.year
        ));
    }
    let manifest_path = dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apk::extract_artifacts_from_bytes;
    use crate::dex::DexFile;
    use crate::manifest::load_manifest;

    fn spec(graph: Pattern, gram: Pattern, image: Pattern, jitter: u64) -> SynthSpec {
        SynthSpec {
            graph,
            gram,
            image,
            jitter,
        }
    }

    #[test]
    fn built_app_is_a_valid_apk_with_all_three_artifacts() {
        let bytes = build_app(&spec(Pattern::Mal, Pattern::Mal, Pattern::Mal, 0));
        let artifacts = extract_artifacts_from_bytes(&bytes).unwrap();
        assert_eq!(artifacts.dex.index.len(), 1);
        assert_eq!(artifacts.xml.index.len(), 1);
        assert_eq!(artifacts.so.index.len(), 1);
        let dex = DexFile::parse(&artifacts.dex.bytes).unwrap();
        let locals: Vec<_> = dex.methods.iter().filter(|m| m.is_local).collect();
        assert_eq!(locals.len(), 3);
        assert!(locals.iter().all(|m| m.class_descriptor == APP_CLASS));
    }

    #[test]
    fn identical_specs_build_identical_bytes() {
        let a = build_app(&spec(Pattern::Ben, Pattern::Mal, Pattern::Neutral, 3));
        let b = build_app(&spec(Pattern::Ben, Pattern::Mal, Pattern::Neutral, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn jitter_varies_clean_patterns_but_not_neutral_ones() {
        let clean0 = build_app(&spec(Pattern::Mal, Pattern::Mal, Pattern::Mal, 0));
        let clean1 = build_app(&spec(Pattern::Mal, Pattern::Mal, Pattern::Mal, 1));
        assert_ne!(clean0, clean1);
        let neutral0 = build_app(&spec(Pattern::Neutral, Pattern::Neutral, Pattern::Neutral, 0));
        let neutral5 = build_app(&spec(Pattern::Neutral, Pattern::Neutral, Pattern::Neutral, 5));
        assert_eq!(neutral0, neutral5);
    }

    #[test]
    fn overfit_corpus_is_balanced_and_multi_year() {
        let apps = overfit_corpus();
        assert_eq!(apps.len(), 16);
        let mal = apps.iter().filter(|a| a.label == Label::Malicious).count();
        assert_eq!(mal, 8);
        let years: std::collections::BTreeSet<u16> = apps.iter().map(|a| a.year).collect();
        assert_eq!(years.into_iter().collect::<Vec<_>>(), vec![2019, 2020, 2021, 2022]);
        let ids: std::collections::BTreeSet<&str> =
            apps.iter().map(|a| a.sample_id.as_str()).collect();
        assert_eq!(ids.len(), 16);
    }

    #[test]
    fn ablation_corpus_is_balanced_with_unique_ids() {
        let apps = ablation_corpus();
        assert_eq!(apps.len(), 200);
        let mal = apps.iter().filter(|a| a.label == Label::Malicious).count();
        assert_eq!(mal, 100);
        let ids: std::collections::BTreeSet<&str> =
            apps.iter().map(|a| a.sample_id.as_str()).collect();
        assert_eq!(ids.len(), 200);
        let per_mask: usize = ABLATION_MASKS.iter().map(|&(_, n)| n).sum();
        assert_eq!(per_mask, 100);
    }

    #[test]
    fn written_corpus_loads_back_through_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let apps = overfit_corpus();
        let manifest_path = write_corpus(dir.path(), &apps).unwrap();
        let entries = load_manifest(&manifest_path).unwrap();
        assert_eq!(entries.len(), 16);
        for (entry, app) in entries.iter().zip(&apps) {
            assert_eq!(entry.sample_id, app.sample_id);
            assert_eq!(entry.label, app.label);
            assert_eq!(std::fs::read(&entry.apk_path).unwrap(), app.bytes);
        }
    }
}
