//! Abstract API callgraph: merges method-call edges and attaches 15-dim
//! permission-sensitivity vectors by API subsignature.
//!
//! An API's subsignature is the first two dot-separated fields of its class
//! name plus the bare method name; all APIs sharing a subsignature pool
//! their permissions' protection-level attributes into one 0/1 vector over
//! a fixed 15-entry attribute vocabulary. Methods with no mapping get the
//! all-zero vector.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

use crate::dex::MethodRef;

pub const SENSITIVITY_DIM: usize = 15;

#[derive(Debug, Error)]
pub enum PermissionMapError {
    #[error("level vocabulary must have exactly {SENSITIVITY_DIM} distinct entries, got {0}")]
    BadVocabulary(usize),
    #[error("line {line}: expected `{expected}`")]
    BadLine { line: usize, expected: &'static str },
    #[error("permission `{0}` maps to level `{1}` absent from the vocabulary")]
    UnknownLevel(String, String),
    #[error("API `{0}` references permission `{1}` absent from the level mapping")]
    UnknownPermission(String, String),
    #[error("cannot read permission map: {0}")]
    UnreadableFile(#[from] std::io::Error),
}

/// The two mappings of the abstraction algorithm plus the attribute
/// vocabulary that fixes one-hot positions.
#[derive(Debug, Clone, Default)]
pub struct PermissionMap {
    pub api_to_permissions: BTreeMap<String, BTreeSet<String>>,
    pub permission_to_levels: BTreeMap<String, BTreeSet<String>>,
    pub level_vocabulary: Vec<String>,
}

impl PermissionMap {
    /// Parse the TSV form: a `#LEVEL_VOCAB` section of one attribute per
    /// line (order significant), `#PERMISSION_LEVELS` rows of
    /// `permission<TAB>level1|level2`, and `#API_PERMISSION` rows of
    /// `full_signature<TAB>permission`. Blank lines are ignored.
    pub fn parse(text: &str) -> Result<PermissionMap, PermissionMapError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Vocab,
            Levels,
            Apis,
        }
        let mut map = PermissionMap::default();
        let mut section = Section::None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.is_empty() {
                continue;
            }
            match line {
                "#LEVEL_VOCAB" => section = Section::Vocab,
                "#PERMISSION_LEVELS" => section = Section::Levels,
                "#API_PERMISSION" => section = Section::Apis,
                _ => match section {
                    Section::None => {
                        return Err(PermissionMapError::BadLine {
                            line: i + 1,
                            expected: "a section marker before data rows",
                        })
                    }
                    Section::Vocab => map.level_vocabulary.push(line.to_string()),
                    Section::Levels => {
                        let (perm, levels) =
                            line.split_once('\t')
                                .ok_or(PermissionMapError::BadLine {
                                    line: i + 1,
                                    expected: "permission<TAB>level1|level2",
                                })?;
                        map.permission_to_levels
                            .entry(perm.to_string())
                            .or_default()
                            .extend(levels.split('|').map(str::to_string));
                    }
                    Section::Apis => {
                        let (api, perm) =
                            line.split_once('\t')
                                .ok_or(PermissionMapError::BadLine {
                                    line: i + 1,
                                    expected: "full_signature<TAB>permission",
                                })?;
                        map.api_to_permissions
                            .entry(api.to_string())
                            .or_default()
                            .insert(perm.to_string());
                    }
                },
            }
        }
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<PermissionMap, PermissionMapError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), PermissionMapError> {
        let distinct: BTreeSet<&String> = self.level_vocabulary.iter().collect();
        if self.level_vocabulary.len() != SENSITIVITY_DIM || distinct.len() != SENSITIVITY_DIM {
            return Err(PermissionMapError::BadVocabulary(self.level_vocabulary.len()));
        }
        for (perm, levels) in &self.permission_to_levels {
            for level in levels {
                if !self.level_vocabulary.contains(level) {
                    return Err(PermissionMapError::UnknownLevel(
                        perm.clone(),
                        level.clone(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn level_index(&self, level: &str) -> usize {
        self.level_vocabulary
            .iter()
            .position(|l| l == level)
            .expect("validated against vocabulary")
    }
}

/// First two dot-separated fields of the class name plus the method name.
/// Class names with fewer than two fields keep the whole name as prefix.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Subsignature {
    pub package_prefix: String,
    pub method_name: String,
}

impl Subsignature {
    /// From a full dotted API signature `pkg.Class.method`.
    pub fn of_api(full_signature: &str) -> Subsignature {
        let (class, method) = match full_signature.rsplit_once('.') {
            Some((c, m)) => (c, m),
            None => ("", full_signature),
        };
        Subsignature {
            package_prefix: prefix_two_fields(class),
            method_name: method.to_string(),
        }
    }

    /// From a method-table entry; the `Lpkg/Class;` descriptor is converted
    /// to dotted form first.
    pub fn of_method(method: &MethodRef) -> Subsignature {
        Subsignature {
            package_prefix: prefix_two_fields(&dotted_class(&method.class_descriptor)),
            method_name: method.name.clone(),
        }
    }
}

/// `Lcom/foo/Bar;` -> `com.foo.Bar`; non-reference descriptors pass through.
pub fn dotted_class(descriptor: &str) -> String {
    match descriptor.strip_prefix('L').and_then(|s| s.strip_suffix(';')) {
        Some(inner) => inner.replace('/', "."),
        None => descriptor.to_string(),
    }
}

fn prefix_two_fields(class: &str) -> String {
    let mut dots = class.match_indices('.');
    match (dots.next(), dots.next()) {
        (Some(_), Some((second, _))) => class[..second].to_string(),
        _ => class.to_string(),
    }
}

/// Union of protection-level attributes per subsignature, one-hot encoded.
pub fn build_subsignature_table(
    map: &PermissionMap,
) -> Result<BTreeMap<Subsignature, Vec<u8>>, PermissionMapError> {
    let mut table: BTreeMap<Subsignature, Vec<u8>> = BTreeMap::new();
    for (api, perms) in &map.api_to_permissions {
        let sub = Subsignature::of_api(api);
        let vec = table
            .entry(sub)
            .or_insert_with(|| vec![0u8; SENSITIVITY_DIM]);
        for perm in perms {
            let levels = map.permission_to_levels.get(perm).ok_or_else(|| {
                PermissionMapError::UnknownPermission(api.clone(), perm.clone())
            })?;
            for level in levels {
                vec[map.level_index(level)] = 1;
            }
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub method: MethodRef,
    pub sensitivity: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AbstractCallgraph {
    /// Sorted by method; node ids are positions in this list.
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<(usize, usize)>,
}

/// Merge call edges (order and duplicates irrelevant) into a graph whose
/// nodes carry sensitivity vectors looked up by subsignature.
pub fn abstract_callgraph(
    edges: &[(MethodRef, MethodRef)],
    map: &PermissionMap,
) -> Result<AbstractCallgraph, PermissionMapError> {
    let table = build_subsignature_table(map)?;
    Ok(abstract_callgraph_with_table(edges, &table))
}

/// Same as [`abstract_callgraph`] but reusing a prebuilt table; the table is
/// read-only and safely shared across apps.
pub fn abstract_callgraph_with_table(
    edges: &[(MethodRef, MethodRef)],
    table: &BTreeMap<Subsignature, Vec<u8>>,
) -> AbstractCallgraph {
    let mut methods: BTreeSet<&MethodRef> = BTreeSet::new();
    let mut edge_set: BTreeSet<(&MethodRef, &MethodRef)> = BTreeSet::new();
    for (a, b) in edges {
        methods.insert(a);
        methods.insert(b);
        edge_set.insert((a, b));
    }
    let nodes: Vec<GraphNode> = methods
        .iter()
        .map(|&m| GraphNode {
            method: m.clone(),
            sensitivity: table
                .get(&Subsignature::of_method(m))
                .cloned()
                .unwrap_or_else(|| vec![0u8; SENSITIVITY_DIM]),
        })
        .collect();
    let id_of: BTreeMap<&MethodRef, usize> = methods
        .iter()
        .enumerate()
        .map(|(i, &m)| (m, i))
        .collect();
    let edges = edge_set
        .into_iter()
        .map(|(a, b)| (id_of[a], id_of[b]))
        .collect();
    AbstractCallgraph { nodes, edges }
}

const CACHE_MAGIC: &[u8; 4] = b"ACG1";

#[derive(Debug, Error)]
pub enum CallgraphCacheError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated cache at byte {0}")]
    Truncated(usize),
    #[error("edge ({0}, {1}) references a node past the node count")]
    BadEdge(usize, usize),
}

impl AbstractCallgraph {
    /// Length-prefixed binary form: magic, u32 node count, per node the
    /// three length-prefixed strings of its method, a locality byte, and
    /// the sensitivity bytes; then u32 edge count and u32 index pairs.
    pub fn to_cache_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&(self.nodes.len() as u32).to_le_bytes());
        for node in &self.nodes {
            for field in [
                &node.method.class_descriptor,
                &node.method.name,
                &node.method.proto,
            ] {
                out.extend_from_slice(&(field.len() as u16).to_le_bytes());
                out.extend_from_slice(field.as_bytes());
            }
            out.push(node.method.is_local as u8);
            assert_eq!(node.sensitivity.len(), SENSITIVITY_DIM);
            out.extend_from_slice(&node.sensitivity);
        }
        out.extend_from_slice(&(self.edges.len() as u32).to_le_bytes());
        for &(a, b) in &self.edges {
            out.extend_from_slice(&(a as u32).to_le_bytes());
            out.extend_from_slice(&(b as u32).to_le_bytes());
        }
        out
    }

    pub fn from_cache_bytes(bytes: &[u8]) -> Result<AbstractCallgraph, CallgraphCacheError> {
        if bytes.len() < 4 || &bytes[..4] != CACHE_MAGIC {
            return Err(CallgraphCacheError::BadMagic);
        }
        let mut pos = 4usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], CallgraphCacheError> {
            let end = *pos + n;
            if end > bytes.len() {
                return Err(CallgraphCacheError::Truncated(*pos));
            }
            let slice = &bytes[*pos..end];
            *pos = end;
            Ok(slice)
        };
        let read_u32 = |pos: &mut usize| -> Result<u32, CallgraphCacheError> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };
        let read_string = |pos: &mut usize| -> Result<String, CallgraphCacheError> {
            let len = u16::from_le_bytes(take(pos, 2)?.try_into().unwrap()) as usize;
            let start = *pos;
            Ok(String::from_utf8(take(pos, len)?.to_vec())
                .map_err(|_| CallgraphCacheError::Truncated(start))?)
        };
        let n_nodes = read_u32(&mut pos)? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let class_descriptor = read_string(&mut pos)?;
            let name = read_string(&mut pos)?;
            let proto = read_string(&mut pos)?;
            let is_local = take(&mut pos, 1)?[0] != 0;
            let sensitivity = take(&mut pos, SENSITIVITY_DIM)?.to_vec();
            nodes.push(GraphNode {
                method: MethodRef {
                    class_descriptor,
                    name,
                    proto,
                    is_local,
                },
                sensitivity,
            });
        }
        let n_edges = read_u32(&mut pos)? as usize;
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let a = read_u32(&mut pos)? as usize;
            let b = read_u32(&mut pos)? as usize;
            if a >= n_nodes || b >= n_nodes {
                return Err(CallgraphCacheError::BadEdge(a, b));
            }
            edges.push((a, b));
        }
        Ok(AbstractCallgraph { nodes, edges })
    }
}
