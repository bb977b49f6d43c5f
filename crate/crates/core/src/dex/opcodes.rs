//! Dalvik opcode table: mnemonic and instruction width for all 256 values.
//!
//! Widths are in 16-bit code units, following the published instruction
//! formats (10x, 12x, 22x, ...). `nop` additionally fronts the variable
//! length switch/array payloads, which the decoder handles separately.

#[derive(Debug, Clone, Copy)]
pub struct OpcodeInfo {
    pub mnemonic: &'static str,
    pub units: u8,
}

const fn op(mnemonic: &'static str, units: u8) -> OpcodeInfo {
    OpcodeInfo { mnemonic, units }
}

pub const OPCODES: [OpcodeInfo; 256] = [
    op("nop", 1),                        // 0x00
    op("move", 1),                       // 0x01
    op("move/from16", 2),                // 0x02
    op("move/16", 3),                    // 0x03
    op("move-wide", 1),                  // 0x04
    op("move-wide/from16", 2),           // 0x05
    op("move-wide/16", 3),               // 0x06
    op("move-object", 1),                // 0x07
    op("move-object/from16", 2),         // 0x08
    op("move-object/16", 3),             // 0x09
    op("move-result", 1),                // 0x0a
    op("move-result-wide", 1),           // 0x0b
    op("move-result-object", 1),         // 0x0c
    op("move-exception", 1),             // 0x0d
    op("return-void", 1),                // 0x0e
    op("return", 1),                     // 0x0f
    op("return-wide", 1),                // 0x10
    op("return-object", 1),              // 0x11
    op("const/4", 1),                    // 0x12
    op("const/16", 2),                   // 0x13
    op("const", 3),                      // 0x14
    op("const/high16", 2),               // 0x15
    op("const-wide/16", 2),              // 0x16
    op("const-wide/32", 3),              // 0x17
    op("const-wide", 5),                 // 0x18
    op("const-wide/high16", 2),          // 0x19
    op("const-string", 2),               // 0x1a
    op("const-string/jumbo", 3),         // 0x1b
    op("const-class", 2),                // 0x1c
    op("monitor-enter", 1),              // 0x1d
    op("monitor-exit", 1),               // 0x1e
    op("check-cast", 2),                 // 0x1f
    op("instance-of", 2),                // 0x20
    op("array-length", 1),               // 0x21
    op("new-instance", 2),               // 0x22
    op("new-array", 2),                  // 0x23
    op("filled-new-array", 3),           // 0x24
    op("filled-new-array/range", 3),     // 0x25
    op("fill-array-data", 3),            // 0x26
    op("throw", 1),                      // 0x27
    op("goto", 1),                       // 0x28
    op("goto/16", 2),                    // 0x29
    op("goto/32", 3),                    // 0x2a
    op("packed-switch", 3),              // 0x2b
    op("sparse-switch", 3),              // 0x2c
    op("cmpl-float", 2),                 // 0x2d
    op("cmpg-float", 2),                 // 0x2e
    op("cmpl-double", 2),                // 0x2f
    op("cmpg-double", 2),                // 0x30
    op("cmp-long", 2),                   // 0x31
    op("if-eq", 2),                      // 0x32
    op("if-ne", 2),                      // 0x33
    op("if-lt", 2),                      // 0x34
    op("if-ge", 2),                      // 0x35
    op("if-gt", 2),                      // 0x36
    op("if-le", 2),                      // 0x37
    op("if-eqz", 2),                     // 0x38
    op("if-nez", 2),                     // 0x39
    op("if-ltz", 2),                     // 0x3a
    op("if-gez", 2),                     // 0x3b
    op("if-gtz", 2),                     // 0x3c
    op("if-lez", 2),                     // 0x3d
    op("unused-3e", 1),                  // 0x3e
    op("unused-3f", 1),                  // 0x3f
    op("unused-40", 1),                  // 0x40
    op("unused-41", 1),                  // 0x41
    op("unused-42", 1),                  // 0x42
    op("unused-43", 1),                  // 0x43
    op("aget", 2),                       // 0x44
    op("aget-wide", 2),                  // 0x45
    op("aget-object", 2),                // 0x46
    op("aget-boolean", 2),               // 0x47
    op("aget-byte", 2),                  // 0x48
    op("aget-char", 2),                  // 0x49
    op("aget-short", 2),                 // 0x4a
    op("aput", 2),                       // 0x4b
    op("aput-wide", 2),                  // 0x4c
    op("aput-object", 2),                // 0x4d
    op("aput-boolean", 2),               // 0x4e
    op("aput-byte", 2),                  // 0x4f
    op("aput-char", 2),                  // 0x50
    op("aput-short", 2),                 // 0x51
    op("iget", 2),                       // 0x52
    op("iget-wide", 2),                  // 0x53
    op("iget-object", 2),                // 0x54
    op("iget-boolean", 2),               // 0x55
    op("iget-byte", 2),                  // 0x56
    op("iget-char", 2),                  // 0x57
    op("iget-short", 2),                 // 0x58
    op("iput", 2),                       // 0x59
    op("iput-wide", 2),                  // 0x5a
    op("iput-object", 2),                // 0x5b
    op("iput-boolean", 2),               // 0x5c
    op("iput-byte", 2),                  // 0x5d
    op("iput-char", 2),                  // 0x5e
    op("iput-short", 2),                 // 0x5f
    op("sget", 2),                       // 0x60
    op("sget-wide", 2),                  // 0x61
    op("sget-object", 2),                // 0x62
    op("sget-boolean", 2),               // 0x63
    op("sget-byte", 2),                  // 0x64
    op("sget-char", 2),                  // 0x65
    op("sget-short", 2),                 // 0x66
    op("sput", 2),                       // 0x67
    op("sput-wide", 2),                  // 0x68
    op("sput-object", 2),                // 0x69
    op("sput-boolean", 2),               // 0x6a
    op("sput-byte", 2),                  // 0x6b
    op("sput-char", 2),                  // 0x6c
    op("sput-short", 2),                 // 0x6d
    op("invoke-virtual", 3),             // 0x6e
    op("invoke-super", 3),               // 0x6f
    op("invoke-direct", 3),              // 0x70
    op("invoke-static", 3),              // 0x71
    op("invoke-interface", 3),           // 0x72
    op("unused-73", 1),                  // 0x73
    op("invoke-virtual/range", 3),       // 0x74
    op("invoke-super/range", 3),         // 0x75
    op("invoke-direct/range", 3),        // 0x76
    op("invoke-static/range", 3),        // 0x77
    op("invoke-interface/range", 3),     // 0x78
    op("unused-79", 1),                  // 0x79
    op("unused-7a", 1),                  // 0x7a
    op("neg-int", 1),                    // 0x7b
    op("not-int", 1),                    // 0x7c
    op("neg-long", 1),                   // 0x7d
    op("not-long", 1),                   // 0x7e
    op("neg-float", 1),                  // 0x7f
    op("neg-double", 1),                 // 0x80
    op("int-to-long", 1),                // 0x81
    op("int-to-float", 1),               // 0x82
    op("int-to-double", 1),              // 0x83
    op("long-to-int", 1),                // 0x84
    op("long-to-float", 1),              // 0x85
    op("long-to-double", 1),             // 0x86
    op("float-to-int", 1),               // 0x87
    op("float-to-long", 1),              // 0x88
    op("float-to-double", 1),            // 0x89
    op("double-to-int", 1),              // 0x8a
    op("double-to-long", 1),             // 0x8b
    op("double-to-float", 1),            // 0x8c
    op("int-to-byte", 1),                // 0x8d
    op("int-to-char", 1),                // 0x8e
    op("int-to-short", 1),               // 0x8f
    op("add-int", 2),                    // 0x90
    op("sub-int", 2),                    // 0x91
    op("mul-int", 2),                    // 0x92
    op("div-int", 2),                    // 0x93
    op("rem-int", 2),                    // 0x94
    op("and-int", 2),                    // 0x95
    op("or-int", 2),                     // 0x96
    op("xor-int", 2),                    // 0x97
    op("shl-int", 2),                    // 0x98
    op("shr-int", 2),                    // 0x99
    op("ushr-int", 2),                   // 0x9a
    op("add-long", 2),                   // 0x9b
    op("sub-long", 2),                   // 0x9c
    op("mul-long", 2),                   // 0x9d
    op("div-long", 2),                   // 0x9e
    op("rem-long", 2),                   // 0x9f
    op("and-long", 2),                   // 0xa0
    op("or-long", 2),                    // 0xa1
    op("xor-long", 2),                   // 0xa2
    op("shl-long", 2),                   // 0xa3
    op("shr-long", 2),                   // 0xa4
    op("ushr-long", 2),                  // 0xa5
    op("add-float", 2),                  // 0xa6
    op("sub-float", 2),                  // 0xa7
    op("mul-float", 2),                  // 0xa8
    op("div-float", 2),                  // 0xa9
    op("rem-float", 2),                  // 0xaa
    op("add-double", 2),                 // 0xab
    op("sub-double", 2),                 // 0xac
    op("mul-double", 2),                 // 0xad
    op("div-double", 2),                 // 0xae
    op("rem-double", 2),                 // 0xaf
    op("add-int/2addr", 1),              // 0xb0
    op("sub-int/2addr", 1),              // 0xb1
    op("mul-int/2addr", 1),              // 0xb2
    op("div-int/2addr", 1),              // 0xb3
    op("rem-int/2addr", 1),              // 0xb4
    op("and-int/2addr", 1),              // 0xb5
    op("or-int/2addr", 1),               // 0xb6
    op("xor-int/2addr", 1),              // 0xb7
    op("shl-int/2addr", 1),              // 0xb8
    op("shr-int/2addr", 1),              // 0xb9
    op("ushr-int/2addr", 1),             // 0xba
    op("add-long/2addr", 1),             // 0xbb
    op("sub-long/2addr", 1),             // 0xbc
    op("mul-long/2addr", 1),             // 0xbd
    op("div-long/2addr", 1),             // 0xbe
    op("rem-long/2addr", 1),             // 0xbf
    op("and-long/2addr", 1),             // 0xc0
    op("or-long/2addr", 1),              // 0xc1
    op("xor-long/2addr", 1),             // 0xc2
    op("shl-long/2addr", 1),             // 0xc3
    op("shr-long/2addr", 1),             // 0xc4
    op("ushr-long/2addr", 1),            // 0xc5
    op("add-float/2addr", 1),            // 0xc6
    op("sub-float/2addr", 1),            // 0xc7
    op("mul-float/2addr", 1),            // 0xc8
    op("div-float/2addr", 1),            // 0xc9
    op("rem-float/2addr", 1),            // 0xca
    op("add-double/2addr", 1),           // 0xcb
    op("sub-double/2addr", 1),           // 0xcc
    op("mul-double/2addr", 1),           // 0xcd
    op("div-double/2addr", 1),           // 0xce
    op("rem-double/2addr", 1),           // 0xcf
    op("add-int/lit16", 2),              // 0xd0
    op("rsub-int", 2),                   // 0xd1
    op("mul-int/lit16", 2),              // 0xd2
    op("div-int/lit16", 2),              // 0xd3
    op("rem-int/lit16", 2),              // 0xd4
    op("and-int/lit16", 2),              // 0xd5
    op("or-int/lit16", 2),               // 0xd6
    op("xor-int/lit16", 2),              // 0xd7
    op("add-int/lit8", 2),               // 0xd8
    op("rsub-int/lit8", 2),              // 0xd9
    op("mul-int/lit8", 2),               // 0xda
    op("div-int/lit8", 2),               // 0xdb
    op("rem-int/lit8", 2),               // 0xdc
    op("and-int/lit8", 2),               // 0xdd
    op("or-int/lit8", 2),                // 0xde
    op("xor-int/lit8", 2),               // 0xdf
    op("shl-int/lit8", 2),               // 0xe0
    op("shr-int/lit8", 2),               // 0xe1
    op("ushr-int/lit8", 2),              // 0xe2
    op("unused-e3", 1),                  // 0xe3
    op("unused-e4", 1),                  // 0xe4
    op("unused-e5", 1),                  // 0xe5
    op("unused-e6", 1),                  // 0xe6
    op("unused-e7", 1),                  // 0xe7
    op("unused-e8", 1),                  // 0xe8
    op("unused-e9", 1),                  // 0xe9
    op("unused-ea", 1),                  // 0xea
    op("unused-eb", 1),                  // 0xeb
    op("unused-ec", 1),                  // 0xec
    op("unused-ed", 1),                  // 0xed
    op("unused-ee", 1),                  // 0xee
    op("unused-ef", 1),                  // 0xef
    op("unused-f0", 1),                  // 0xf0
    op("unused-f1", 1),                  // 0xf1
    op("unused-f2", 1),                  // 0xf2
    op("unused-f3", 1),                  // 0xf3
    op("unused-f4", 1),                  // 0xf4
    op("unused-f5", 1),                  // 0xf5
    op("unused-f6", 1),                  // 0xf6
    op("unused-f7", 1),                  // 0xf7
    op("unused-f8", 1),                  // 0xf8
    op("unused-f9", 1),                  // 0xf9
    op("invoke-polymorphic", 4),         // 0xfa
    op("invoke-polymorphic/range", 4),   // 0xfb
    op("invoke-custom", 3),              // 0xfc
    op("invoke-custom/range", 3),        // 0xfd
    op("const-method-handle", 2),        // 0xfe
    op("const-method-type", 2),          // 0xff
];

/// Opcodes whose second code unit is a method index (the `invoke-*` family
/// that targets the method table).
pub fn is_method_invoke(opcode: u8) -> bool {
    matches!(opcode, 0x6e..=0x72 | 0x74..=0x78 | 0xfa | 0xfb)
}
