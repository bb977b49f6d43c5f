//! Assembles small, well-formed DEX files for fixtures and synthetic apps.
//!
//! Every method uses the `()V` prototype; instruction operands other than
//! invoke method indices are zeroed. Output passes [`super::DexFile::parse`]
//! and carries a correct adler32 checksum and map list.

use std::collections::BTreeMap;

use super::{is_method_invoke, OPCODES};

#[derive(Debug, Clone)]
pub enum BodyOp {
    /// Any non-invoke opcode with zeroed operands.
    Plain(u8),
    /// An `invoke-*` (0x6e-0x72, 0x74-0x78) targeting `class.name()V`.
    Invoke {
        opcode: u8,
        class: String,
        name: String,
    },
    /// A fill-array-data payload pseudo-instruction.
    FillArrayPayload { element_width: u16, data: Vec<u8> },
    /// A packed-switch payload pseudo-instruction.
    PackedSwitchPayload { first_key: i32, targets: Vec<i32> },
}

impl BodyOp {
    pub fn invoke(class: &str, name: &str) -> BodyOp {
        BodyOp::Invoke {
            opcode: 0x6e,
            class: class.into(),
            name: name.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MethodSpec {
    pub name: String,
    pub body: Vec<BodyOp>,
}

#[derive(Debug, Clone)]
pub struct ClassSpec {
    /// Type descriptor, e.g. `Lcom/example/Main;`.
    pub descriptor: String,
    pub methods: Vec<MethodSpec>,
}

pub fn adler32(bytes: &[u8]) -> u32 {
    const MOD: u32 = 65521;
    let mut a: u32 = 1;
    let mut b: u32 = 0;
    for chunk in bytes.chunks(5552) {
        for &byte in chunk {
            a += byte as u32;
            b += a;
        }
        a %= MOD;
        b %= MOD;
    }
    (b << 16) | a
}

fn uleb128(mut v: u32) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            break;
        }
        out.push(byte | 0x80);
    }
    out
}

fn align4(buf: &mut Vec<u8>) {
    while buf.len() % 4 != 0 {
        buf.push(0);
    }
}

fn push_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Build a complete DEX (version 035) containing the given classes. Invoke
/// targets that are not defined in any class become external method-table
/// entries without code.
pub fn build_dex(classes: &[ClassSpec]) -> Vec<u8> {
    // Gather string, type and method tables.
    let mut descriptors: Vec<String> = vec!["V".into()];
    let mut method_pairs: Vec<(String, String)> = Vec::new();
    for class in classes {
        descriptors.push(class.descriptor.clone());
        for m in &class.methods {
            method_pairs.push((class.descriptor.clone(), m.name.clone()));
            for op in &m.body {
                if let BodyOp::Invoke { class, name, .. } = op {
                    descriptors.push(class.clone());
                    method_pairs.push((class.clone(), name.clone()));
                }
            }
        }
    }
    descriptors.sort();
    descriptors.dedup();
    method_pairs.sort();
    method_pairs.dedup();

    let mut strings: Vec<String> = descriptors.clone();
    strings.extend(method_pairs.iter().map(|(_, name)| name.clone()));
    strings.sort();
    strings.dedup();
    let string_idx: BTreeMap<&str, u32> = strings
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();

    // type_ids sorted by descriptor string index; sorted strings make the
    // sorted descriptor list already index-ordered.
    let type_idx: BTreeMap<&str, u16> = descriptors
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u16))
        .collect();

    // method_ids sorted by (class type index, name string index); the single
    // proto never ties break.
    let mut method_rows: Vec<(u16, u32)> = method_pairs
        .iter()
        .map(|(class, name)| (type_idx[class.as_str()], string_idx[name.as_str()]))
        .collect();
    method_rows.sort();
    let method_idx_of = |class: &str, name: &str| -> u16 {
        let key = (type_idx[class], string_idx[name]);
        method_rows.binary_search(&key).unwrap() as u16
    };

    // Section sizes are fixed once tables are known; compute all offsets.
    let s = strings.len();
    let t = descriptors.len();
    let m = method_rows.len();
    let c = classes.len();
    let header_end = 0x70usize;
    let string_ids_off = header_end;
    let type_ids_off = string_ids_off + 4 * s;
    let proto_ids_off = type_ids_off + 4 * t;
    let method_ids_off = proto_ids_off + 12;
    let class_defs_off = method_ids_off + 8 * m;
    let data_off = class_defs_off + 32 * c;

    // Data area: code items, class data, string data, map list.
    let mut data: Vec<u8> = Vec::new();
    let mut code_offs: BTreeMap<(String, String), u32> = BTreeMap::new();
    let mut code_count = 0u32;
    let first_code_off = data_off;
    for class in classes {
        for method in &class.methods {
            align4(&mut data);
            let off = (data_off + data.len()) as u32;
            code_offs.insert((class.descriptor.clone(), method.name.clone()), off);
            code_count += 1;

            let mut insns: Vec<u16> = Vec::new();
            for op in &method.body {
                match op {
                    BodyOp::Plain(opcode) => {
                        assert!(
                            !is_method_invoke(*opcode),
                            "use BodyOp::Invoke for invoke opcodes"
                        );
                        insns.push(*opcode as u16);
                        for _ in 1..OPCODES[*opcode as usize].units {
                            insns.push(0);
                        }
                    }
                    BodyOp::Invoke {
                        opcode,
                        class,
                        name,
                    } => {
                        assert!(
                            matches!(opcode, 0x6e..=0x72 | 0x74..=0x78),
                            "unsupported invoke opcode {opcode:#04x}"
                        );
                        insns.push(*opcode as u16);
                        insns.push(method_idx_of(class, name));
                        insns.push(0);
                    }
                    BodyOp::FillArrayPayload {
                        element_width,
                        data: payload,
                    } => {
                        insns.push(0x0300);
                        insns.push(*element_width);
                        let size = (payload.len() / *element_width as usize) as u32;
                        insns.push((size & 0xffff) as u16);
                        insns.push((size >> 16) as u16);
                        let mut bytes = payload.clone();
                        if bytes.len() % 2 != 0 {
                            bytes.push(0);
                        }
                        for pair in bytes.chunks(2) {
                            insns.push(u16::from_le_bytes([pair[0], pair[1]]));
                        }
                    }
                    BodyOp::PackedSwitchPayload { first_key, targets } => {
                        insns.push(0x0100);
                        insns.push(targets.len() as u16);
                        let fk = *first_key as u32;
                        insns.push((fk & 0xffff) as u16);
                        insns.push((fk >> 16) as u16);
                        for t in targets {
                            let tv = *t as u32;
                            insns.push((tv & 0xffff) as u16);
                            insns.push((tv >> 16) as u16);
                        }
                    }
                }
            }

            push_u16(&mut data, 1); // registers_size
            push_u16(&mut data, 0); // ins_size
            push_u16(&mut data, 1); // outs_size
            push_u16(&mut data, 0); // tries_size
            push_u32(&mut data, 0); // debug_info_off
            push_u32(&mut data, insns.len() as u32);
            for unit in insns {
                push_u16(&mut data, unit);
            }
        }
    }

    let first_class_data_off = {
        align4(&mut data);
        data_off + data.len()
    };
    let mut class_data_offs: Vec<u32> = Vec::new();
    for class in classes {
        class_data_offs.push((data_off + data.len()) as u32);
        data.extend(uleb128(0)); // static fields
        data.extend(uleb128(0)); // instance fields
        data.extend(uleb128(class.methods.len() as u32)); // direct methods
        data.extend(uleb128(0)); // virtual methods
        let mut rows: Vec<(u16, u32)> = class
            .methods
            .iter()
            .map(|m| {
                (
                    method_idx_of(&class.descriptor, &m.name),
                    code_offs[&(class.descriptor.clone(), m.name.clone())],
                )
            })
            .collect();
        rows.sort();
        let mut prev = 0u32;
        for (i, (idx, code_off)) in rows.iter().enumerate() {
            let diff = if i == 0 { *idx as u32 } else { *idx as u32 - prev };
            prev = *idx as u32;
            data.extend(uleb128(diff));
            data.extend(uleb128(0x1)); // ACC_PUBLIC
            data.extend(uleb128(*code_off));
        }
    }

    let first_string_data_off = data_off + data.len();
    let mut string_data_offs: Vec<u32> = Vec::new();
    for s in &strings {
        string_data_offs.push((data_off + data.len()) as u32);
        data.extend(uleb128(s.chars().count() as u32));
        data.extend_from_slice(s.as_bytes());
        data.push(0);
    }

    align4(&mut data);
    let map_off = data_off + data.len();
    let mut map_entries: Vec<(u16, u32, u32)> = vec![
        (0x0000, 1, 0),
        (0x0001, s as u32, string_ids_off as u32),
        (0x0002, t as u32, type_ids_off as u32),
        (0x0003, 1, proto_ids_off as u32),
        (0x0005, m as u32, method_ids_off as u32),
        (0x0006, c as u32, class_defs_off as u32),
    ];
    if code_count > 0 {
        map_entries.push((0x2001, code_count, first_code_off as u32));
        map_entries.push((0x2000, c as u32, first_class_data_off as u32));
    }
    map_entries.push((0x2002, s as u32, first_string_data_off as u32));
    map_entries.push((0x1000, 1, map_off as u32));
    push_u32(&mut data, map_entries.len() as u32);
    for (kind, size, off) in map_entries {
        push_u16(&mut data, kind);
        push_u16(&mut data, 0);
        push_u32(&mut data, size);
        push_u32(&mut data, off);
    }

    // Emit the whole file.
    let file_size = data_off + data.len();
    let mut out = Vec::with_capacity(file_size);
    out.extend_from_slice(b"dex\n035\0");
    push_u32(&mut out, 0); // checksum, patched below
    out.extend_from_slice(&[0u8; 20]); // signature, unused
    push_u32(&mut out, file_size as u32);
    push_u32(&mut out, 0x70);
    push_u32(&mut out, 0x1234_5678);
    push_u32(&mut out, 0); // link_size
    push_u32(&mut out, 0); // link_off
    push_u32(&mut out, map_off as u32);
    push_u32(&mut out, s as u32);
    push_u32(&mut out, string_ids_off as u32);
    push_u32(&mut out, t as u32);
    push_u32(&mut out, type_ids_off as u32);
    push_u32(&mut out, 1);
    push_u32(&mut out, proto_ids_off as u32);
    push_u32(&mut out, 0); // field_ids_size
    push_u32(&mut out, 0); // field_ids_off
    push_u32(&mut out, m as u32);
    push_u32(&mut out, method_ids_off as u32);
    push_u32(&mut out, c as u32);
    push_u32(&mut out, class_defs_off as u32);
    push_u32(&mut out, (file_size - data_off) as u32);
    push_u32(&mut out, data_off as u32);

    for off in string_data_offs {
        push_u32(&mut out, off);
    }
    for d in &descriptors {
        push_u32(&mut out, string_idx[d.as_str()]);
    }
    // The single ()V proto: shorty "V", return type V, no parameters.
    push_u32(&mut out, string_idx["V"]);
    push_u32(&mut out, type_idx["V"] as u32);
    push_u32(&mut out, 0);
    for (class, name) in &method_rows {
        push_u16(&mut out, *class);
        push_u16(&mut out, 0); // proto_idx
        push_u32(&mut out, *name);
    }
    // class_defs sorted by class type index to keep output canonical.
    let mut def_order: Vec<usize> = (0..classes.len()).collect();
    def_order.sort_by_key(|&i| type_idx[classes[i].descriptor.as_str()]);
    for &i in &def_order {
        push_u32(&mut out, type_idx[classes[i].descriptor.as_str()] as u32);
        push_u32(&mut out, 0x1); // ACC_PUBLIC
        push_u32(&mut out, super::NO_INDEX); // superclass
        push_u32(&mut out, 0); // interfaces_off
        push_u32(&mut out, super::NO_INDEX); // source_file_idx
        push_u32(&mut out, 0); // annotations_off
        push_u32(&mut out, class_data_offs[i]);
        push_u32(&mut out, 0); // static_values_off
    }
    out.extend_from_slice(&data);
    debug_assert_eq!(out.len(), file_size);

    let sum = adler32(&out[12..]);
    out[8..12].copy_from_slice(&sum.to_le_bytes());
    out
}

/// One public class with one method per body, named `m0`, `m1`, ...
pub fn single_class(descriptor: &str, bodies: &[Vec<BodyOp>]) -> Vec<u8> {
    build_dex(&[ClassSpec {
        descriptor: descriptor.into(),
        methods: bodies
            .iter()
            .enumerate()
            .map(|(i, body)| MethodSpec {
                name: format!("m{i}"),
                body: body.clone(),
            })
            .collect(),
    }])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dex::{invoke_edges, DexError, DexFile};

    #[test]
    fn adler32_known_value() {
        assert_eq!(adler32(b"Wikipedia"), 0x11e6_0398);
    }

    #[test]
    fn minimal_dex_round_trips() {
        let bytes = single_class(
            "Lcom/example/Main;",
            &[vec![BodyOp::Plain(0x12), BodyOp::Plain(0x0e)]],
        );
        let dex = DexFile::parse(&bytes).unwrap();
        let locals: Vec<_> = dex.methods.iter().filter(|m| m.is_local).collect();
        assert_eq!(locals.len(), 1);
        assert_eq!(locals[0].class_descriptor, "Lcom/example/Main;");
        assert_eq!(locals[0].name, "m0");
        assert_eq!(locals[0].proto, "()V");
        let code = dex.code_items.values().next().unwrap();
        assert_eq!(code.instructions.len(), 2);
        assert_eq!(code.instructions[0].mnemonic(), "const/4");
        assert_eq!(code.instructions[1].mnemonic(), "return-void");
    }

    #[test]
    fn checksum_matches_header_field() {
        let bytes = single_class("La/b/C;", &[vec![BodyOp::Plain(0x0e)]]);
        let dex = DexFile::parse(&bytes).unwrap();
        assert_eq!(dex.header.checksum, adler32(&bytes[12..]));
    }

    #[test]
    fn truncated_header_with_good_magic() {
        let bytes = single_class("La/b/C;", &[vec![BodyOp::Plain(0x0e)]]);
        let err = DexFile::parse(&bytes[..0x40]).unwrap_err();
        assert!(matches!(err, DexError::TruncatedFile { .. }), "{err:?}");
    }

    #[test]
    fn zip_magic_is_rejected() {
        let err = DexFile::parse(b"PK\x03\x04 not a dex").unwrap_err();
        assert!(matches!(err, DexError::BadMagic { .. }), "{err:?}");
    }

    #[test]
    fn invoke_edges_deduplicate() {
        let bytes = build_dex(&[ClassSpec {
            descriptor: "La/a/A;".into(),
            methods: vec![MethodSpec {
                name: "caller".into(),
                body: vec![
                    BodyOp::invoke("Lb/b/B;", "callee"),
                    BodyOp::invoke("Lb/b/B;", "callee"),
                    BodyOp::Plain(0x0e),
                ],
            }],
        }]);
        let dex = DexFile::parse(&bytes).unwrap();
        let edges = invoke_edges(&dex);
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].0.name, "caller");
        assert_eq!(edges[0].1.class_descriptor, "Lb/b/B;");
        assert!(!edges[0].1.is_local);
    }

    #[test]
    fn chain_fixture_edges() {
        let bytes = build_dex(&[
            ClassSpec {
                descriptor: "La/a/A;".into(),
                methods: vec![MethodSpec {
                    name: "fa".into(),
                    body: vec![BodyOp::invoke("Lb/b/B;", "fb"), BodyOp::Plain(0x0e)],
                }],
            },
            ClassSpec {
                descriptor: "Lb/b/B;".into(),
                methods: vec![MethodSpec {
                    name: "fb".into(),
                    body: vec![BodyOp::invoke("Lc/c/C;", "fc"), BodyOp::Plain(0x0e)],
                }],
            },
        ]);
        let dex = DexFile::parse(&bytes).unwrap();
        let edges = invoke_edges(&dex);
        let pairs: Vec<(String, String)> = edges
            .iter()
            .map(|(a, b)| (a.name.clone(), b.name.clone()))
            .collect();
        assert_eq!(pairs, vec![("fa".into(), "fb".into()), ("fb".into(), "fc".into())]);
    }

    #[test]
    fn method_without_invokes_has_no_edges() {
        let bytes = single_class("La/b/C;", &[vec![BodyOp::Plain(0x01), BodyOp::Plain(0x0e)]]);
        let dex = DexFile::parse(&bytes).unwrap();
        assert!(invoke_edges(&dex).is_empty());
    }

    #[test]
    fn payload_pseudo_instructions_decode_with_correct_width() {
        let bytes = single_class(
            "La/b/C;",
            &[vec![
                BodyOp::Plain(0x26), // fill-array-data (branch target unused)
                BodyOp::FillArrayPayload {
                    element_width: 1,
                    data: vec![9, 8, 7],
                },
                BodyOp::PackedSwitchPayload {
                    first_key: -1,
                    targets: vec![4, 5],
                },
                BodyOp::Plain(0x0e),
            ]],
        );
        let dex = DexFile::parse(&bytes).unwrap();
        let code = dex.code_items.values().next().unwrap();
        let ops: Vec<u8> = code.instructions.iter().map(|i| i.opcode).collect();
        assert_eq!(ops, vec![0x26, 0x00, 0x00, 0x0e]);
        // fill-array payload: (3*1+1)/2 + 4 = 6 units, 11 operand bytes.
        assert_eq!(code.instructions[1].operands.len(), 11);
        // packed-switch payload: 2*2+4 = 8 units, 15 operand bytes.
        assert_eq!(code.instructions[2].operands.len(), 15);
    }

    #[test]
    fn index_sections_reserialize_byte_identical() {
        let bytes = build_dex(&[
            ClassSpec {
                descriptor: "Lcom/example/One;".into(),
                methods: vec![
                    MethodSpec {
                        name: "alpha".into(),
                        body: vec![BodyOp::invoke("Landroid/telephony/Tm;", "getDeviceId")],
                    },
                    MethodSpec {
                        name: "beta".into(),
                        body: vec![BodyOp::Plain(0x0e)],
                    },
                ],
            },
            ClassSpec {
                descriptor: "Lcom/example/Two;".into(),
                methods: vec![MethodSpec {
                    name: "gamma".into(),
                    body: vec![BodyOp::invoke("Lcom/example/One;", "alpha")],
                }],
            },
        ]);
        let dex = DexFile::parse(&bytes).unwrap();
        for (name, off, section) in dex.index_sections() {
            assert_eq!(
                section.as_slice(),
                &bytes[off..off + section.len()],
                "section {name} differs"
            );
        }
    }

    #[test]
    fn every_edge_endpoint_is_in_method_table() {
        let bytes = build_dex(&[ClassSpec {
            descriptor: "La/a/A;".into(),
            methods: vec![MethodSpec {
                name: "f".into(),
                body: vec![
                    BodyOp::invoke("Lx/y/Z;", "ext"),
                    BodyOp::invoke("La/a/A;", "f"),
                ],
            }],
        }]);
        let dex = DexFile::parse(&bytes).unwrap();
        for (a, b) in invoke_edges(&dex) {
            assert!(dex.methods.contains(&a));
            assert!(dex.methods.contains(&b));
        }
    }
}
