//! Discrete architecture descriptions and their derivation from converged
//! architecture parameters.
//!
//! Genotypes serialize to JSON with a fixed field order and sorted modality
//! keys, so identical architectures always produce byte-identical files.

use crate::error::{Error, Result};
use crate::search::lateral::{BranchKey, LateralEdge};
use crate::search::registry::{OperationRegistry, OpKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const GENOTYPE_SCHEMA_VERSION: u32 = 1;

/// One chosen incoming edge of a cell node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeGene {
    pub from: usize,
    pub op: String,
}

/// One intermediate node: exactly two incoming edges after derivation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeGene {
    pub node: usize,
    pub edges: Vec<EdgeGene>,
}

/// The searched cell of one branch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCellGene {
    pub rate: usize,
    pub nodes: Vec<NodeGene>,
}

/// One derived lateral connection (absent edges are simply not listed).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LateralEdgeGene {
    pub level: usize,
    pub src: String,
    pub dst: String,
    pub op: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genotype {
    pub schema_version: u32,
    /// Per-modality, per-branch searched cells (stage 1).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stage1: BTreeMap<String, Vec<BranchCellGene>>,
    /// Derived lateral connections (stage 2).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage2: Vec<LateralEdgeGene>,
}

impl Genotype {
    pub fn empty() -> Self {
        Genotype {
            schema_version: GENOTYPE_SCHEMA_VERSION,
            stage1: BTreeMap::new(),
            stage2: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("genotype serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: Genotype = serde_json::from_str(s)
            .map_err(|e| Error::Corrupt(format!("genotype parse error: {e}")))?;
        if g.schema_version != GENOTYPE_SCHEMA_VERSION {
            return Err(Error::Corrupt(format!(
                "unsupported genotype schema version {}",
                g.schema_version
            )));
        }
        Ok(g)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(format!(
                "genotype file {} not found",
                path.display()
            )));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Merge the stage-1 sections of per-modality genotypes with derived
    /// lateral edges into one complete architecture description.
    pub fn combine(stage1_parts: &[&Genotype], stage2: Vec<LateralEdgeGene>) -> Result<Self> {
        let mut out = Genotype::empty();
        for part in stage1_parts {
            for (m, cells) in &part.stage1 {
                if out.stage1.insert(m.clone(), cells.clone()).is_some() {
                    return Err(Error::config(format!(
                        "duplicate modality '{m}' while combining genotypes"
                    )));
                }
            }
        }
        out.stage2 = stage2;
        Ok(out)
    }

    /// Structural invariants: two incoming edges per node, sources precede
    /// targets, no Zero in stage-1 cells, known op names, legal lateral
    /// edges only.
    pub fn validate(
        &self,
        cell_registry: &OperationRegistry,
        lateral_ops_legal: impl Fn(&str, &str, &str) -> bool,
    ) -> Result<()> {
        for (m, branches) in &self.stage1 {
            for branch in branches {
                if branch.nodes.len() != 4 {
                    return Err(Error::config(format!(
                        "genotype {m}/rate{}: expected 4 intermediate nodes, got {}",
                        branch.rate,
                        branch.nodes.len()
                    )));
                }
                for (i, node) in branch.nodes.iter().enumerate() {
                    if node.node != i + 2 {
                        return Err(Error::config(format!(
                            "genotype {m}/rate{}: node ids must run 2..=5 in order",
                            branch.rate
                        )));
                    }
                    if node.edges.len() != 2 {
                        return Err(Error::config(format!(
                            "genotype {m}/rate{} node {}: expected 2 incoming edges, got {}",
                            branch.rate,
                            node.node,
                            node.edges.len()
                        )));
                    }
                    for e in &node.edges {
                        if e.from >= node.node {
                            return Err(Error::config(format!(
                                "genotype {m}/rate{} node {}: edge from {} is not a predecessor",
                                branch.rate, node.node, e.from
                            )));
                        }
                        let idx = cell_registry.index_of(&e.op).ok_or_else(|| {
                            Error::config(format!("genotype references unknown op name '{}'", e.op))
                        })?;
                        if cell_registry.entries[idx].kind == OpKind::Zero {
                            return Err(Error::config(format!(
                                "genotype {m}/rate{} node {}: Zero op not allowed in derived cells",
                                branch.rate, node.node
                            )));
                        }
                    }
                }
            }
        }
        for e in &self.stage2 {
            if e.level >= 3 {
                return Err(Error::config(format!(
                    "lateral edge level {} out of range",
                    e.level
                )));
            }
            if !lateral_ops_legal(&e.src, &e.dst, &e.op) {
                return Err(Error::config(format!(
                    "illegal lateral edge {} -> {} ({})",
                    e.src, e.dst, e.op
                )));
            }
        }
        Ok(())
    }
}

fn softmax64(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

/// Canonical (source, target) list of the 14 mixed edges in a cell: two input
/// nodes, four intermediates, target-major ordering.
pub fn cell_edge_list() -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(14);
    for target in 2..6 {
        for source in 0..target {
            edges.push((source, target));
        }
    }
    edges
}

/// Derive one cell: per edge the strongest non-Zero op by softmax weight,
/// then per node the two incoming edges with the largest such weight.
/// Ties break to the lower edge index and lower registry index.
pub fn derive_cell(alpha_rows: &[Vec<f64>], registry: &OperationRegistry) -> Result<Vec<NodeGene>> {
    let edges = cell_edge_list();
    if alpha_rows.len() != edges.len() {
        return Err(Error::config(format!(
            "expected {} alpha rows for a cell, got {}",
            edges.len(),
            alpha_rows.len()
        )));
    }
    // Best non-Zero candidate per edge.
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(edges.len());
    for row in alpha_rows {
        if row.len() != registry.len() {
            return Err(Error::config(format!(
                "alpha row length {} does not match registry size {}",
                row.len(),
                registry.len()
            )));
        }
        let eta = softmax64(row);
        let mut best_op = None;
        let mut best_w = f64::NEG_INFINITY;
        for (oi, spec) in registry.entries.iter().enumerate() {
            if spec.kind == OpKind::Zero {
                continue;
            }
            if eta[oi] > best_w {
                best_w = eta[oi];
                best_op = Some(oi);
            }
        }
        let op = best_op.ok_or_else(|| Error::config("registry has no non-Zero op"))?;
        best.push((op, best_w));
    }
    // Per node, keep the two strongest incoming edges.
    let mut nodes = Vec::with_capacity(4);
    for target in 2..6 {
        let mut incoming: Vec<(usize, usize, f64)> = edges
            .iter()
            .enumerate()
            .filter(|(_, (_, t))| *t == target)
            .map(|(ei, (s, _))| (ei, *s, best[ei].1))
            .collect();
        // Stable sort by descending weight keeps lower edge indices first on ties.
        incoming.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal));
        let mut chosen: Vec<EdgeGene> = incoming
            .iter()
            .take(2)
            .map(|&(ei, s, _)| EdgeGene {
                from: s,
                op: registry.entries[best[ei].0].name.clone(),
            })
            .collect();
        chosen.sort_by_key(|e| e.from);
        nodes.push(NodeGene {
            node: target,
            edges: chosen,
        });
    }
    Ok(nodes)
}

/// Derive lateral connections: per edge the argmax op, Zero included; a Zero
/// winner removes the edge. Ties break to the lower registry index.
pub fn derive_lateral(
    alpha_rows: &[Vec<f64>],
    edges: &[(usize, LateralEdge)],
    branches: &[BranchKey],
    registries: &[OperationRegistry],
) -> Result<Vec<LateralEdgeGene>> {
    if alpha_rows.len() != edges.len() || registries.len() != edges.len() {
        return Err(Error::config(
            "lateral alpha rows / edges / registries length mismatch",
        ));
    }
    let mut out = Vec::new();
    for ((row, (level, edge)), registry) in alpha_rows.iter().zip(edges).zip(registries) {
        if row.len() != registry.len() {
            return Err(Error::config("lateral alpha row length mismatch"));
        }
        let eta = softmax64(row);
        let mut best = 0usize;
        for (oi, &w) in eta.iter().enumerate() {
            if w > eta[best] {
                best = oi;
            }
        }
        if registry.entries[best].kind == OpKind::Zero {
            continue;
        }
        out.push(LateralEdgeGene {
            level: *level,
            src: branches[edge.src].name(),
            dst: branches[edge.dst].name(),
            op: registry.entries[best].name.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::lateral::cross_modal_edges;
    use crate::search::registry::{Modality, RegistryFlavor};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn registry() -> OperationRegistry {
        OperationRegistry::stage1(RegistryFlavor::Cdc, 0.6, 0.3).unwrap()
    }

    #[test]
    fn favored_identity_edges_win() {
        let reg = registry();
        let id = reg.index_of("Identity").unwrap();
        let edges = cell_edge_list();
        let mut rows = vec![vec![0.0; reg.len()]; edges.len()];
        // Push Identity hard on (0,2) and (1,2).
        for (ei, (s, t)) in edges.iter().enumerate() {
            if *t == 2 {
                rows[ei][id] = 5.0 + *s as f64; // (1,2) strongest
            }
        }
        let nodes = derive_cell(&rows, &reg).unwrap();
        assert_eq!(nodes[0].node, 2);
        assert_eq!(nodes[0].edges.len(), 2);
        for e in &nodes[0].edges {
            assert_eq!(e.op, "Identity");
            assert!(e.from == 0 || e.from == 1);
        }
    }

    #[test]
    fn all_equal_alpha_is_deterministic() {
        let reg = registry();
        let rows = vec![vec![0.25; reg.len()]; 14];
        let a = derive_cell(&rows, &reg).unwrap();
        let b = derive_cell(&rows, &reg).unwrap();
        assert_eq!(a, b);
        // Ties resolve to the first non-Zero registry entry and lowest edges.
        for node in &a {
            for e in &node.edges {
                assert_eq!(e.op, "Identity");
            }
            assert_eq!(
                node.edges.iter().map(|e| e.from).collect::<Vec<_>>(),
                vec![0, 1]
            );
        }
    }

    #[test]
    fn random_alpha_always_satisfies_invariants() {
        let reg = registry();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let rows: Vec<Vec<f64>> = (0..14)
                .map(|_| (0..reg.len()).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect();
            let nodes = derive_cell(&rows, &reg).unwrap();
            assert_eq!(nodes.len(), 4);
            for (i, node) in nodes.iter().enumerate() {
                assert_eq!(node.node, i + 2);
                assert_eq!(node.edges.len(), 2);
                for e in &node.edges {
                    assert!(e.from < node.node);
                    assert_ne!(e.op, "Zero");
                }
            }
        }
    }

    #[test]
    fn lateral_zero_means_absent() {
        let branches: Vec<BranchKey> = [Modality::Rgb, Modality::Depth]
            .iter()
            .flat_map(|&m| {
                [8usize, 16, 32].iter().map(move |&r| BranchKey {
                    modality: m,
                    rate: r,
                })
            })
            .collect();
        let edges = cross_modal_edges(&branches).unwrap();
        let leveled: Vec<(usize, LateralEdge)> = edges.iter().map(|&e| (0usize, e)).collect();
        let regs: Vec<OperationRegistry> = edges
            .iter()
            .map(|e| {
                OperationRegistry::stage2(e.class.kernel_t(), RegistryFlavor::Cdc, 0.6, 0.3)
                    .unwrap()
            })
            .collect();
        // All mass on Zero -> no lateral edges at all (late fusion).
        let rows: Vec<Vec<f64>> = regs
            .iter()
            .map(|r| {
                let mut row = vec![0.0; r.len()];
                row[r.zero_index().unwrap()] = 10.0;
                row
            })
            .collect();
        let out = derive_lateral(&rows, &leveled, &branches, &regs).unwrap();
        assert!(out.is_empty());
        // One-hot on a real op reproduces the pattern.
        let rows: Vec<Vec<f64>> = regs
            .iter()
            .map(|r| {
                let mut row = vec![0.0; r.len()];
                row[1] = 10.0;
                row
            })
            .collect();
        let out = derive_lateral(&rows, &leveled, &branches, &regs).unwrap();
        assert_eq!(out.len(), 18);
        for (gene, e) in out.iter().zip(&edges) {
            assert_eq!(gene.src, branches[e.src].name());
            assert!(gene.op.starts_with("Conv_"));
        }
    }

    #[test]
    fn genotype_json_roundtrip_and_stable_bytes() {
        let reg = registry();
        let rows = vec![vec![0.3; reg.len()]; 14];
        let nodes = derive_cell(&rows, &reg).unwrap();
        let mut g = Genotype::empty();
        g.stage1.insert(
            "rgb".into(),
            vec![BranchCellGene {
                rate: 8,
                nodes: nodes.clone(),
            }],
        );
        g.stage2.push(LateralEdgeGene {
            level: 1,
            src: "rgb32".into(),
            dst: "depth8".into(),
            op: "CDC-T-06_5x1x1".into(),
        });
        let j1 = g.to_json();
        let g2 = Genotype::from_json(&j1).unwrap();
        assert_eq!(g, g2);
        assert_eq!(j1, g2.to_json());
    }

    #[test]
    fn bad_schema_version_rejected() {
        let g = Genotype::empty();
        let mut j = g.to_json();
        j = j.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(Genotype::from_json(&j).is_err());
    }
}
