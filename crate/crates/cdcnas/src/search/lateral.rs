//! Lateral-connection graph over rate/modality branches.
//!
//! Edges run only from equal-or-higher frame-rate branches to lower ones,
//! and each edge's temporal kernel extent and stride follow its rate ratio:
//! ratio 4 -> 5x1x1 stride (4,1,1); ratio 2 -> 3x1x1 stride (2,1,1);
//! same rate (necessarily cross-modal) -> 3x1x1 stride (1,1,1).

use crate::error::{Error, Result};
use crate::search::registry::Modality;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct BranchKey {
    pub modality: Modality,
    pub rate: usize,
}

impl BranchKey {
    pub fn name(&self) -> String {
        format!("{}{}", self.modality.name(), self.rate)
    }

    pub fn parse(s: &str) -> Result<Self> {
        let split = s
            .find(|c: char| c.is_ascii_digit())
            .ok_or_else(|| Error::config(format!("bad branch name '{s}'")))?;
        let modality = Modality::parse(&s[..split])?;
        let rate: usize = s[split..]
            .parse()
            .map_err(|_| Error::config(format!("bad branch rate in '{s}'")))?;
        Ok(BranchKey { modality, rate })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EdgeClass {
    Ratio4,
    Ratio2,
    SameRate,
}

impl EdgeClass {
    pub fn of(src_rate: usize, dst_rate: usize) -> Result<Self> {
        if src_rate == dst_rate {
            Ok(EdgeClass::SameRate)
        } else if src_rate == 2 * dst_rate {
            Ok(EdgeClass::Ratio2)
        } else if src_rate == 4 * dst_rate {
            Ok(EdgeClass::Ratio4)
        } else {
            Err(Error::config(format!(
                "unsupported rate ratio {src_rate}:{dst_rate} for a lateral edge"
            )))
        }
    }

    pub fn kernel_t(&self) -> usize {
        match self {
            EdgeClass::Ratio4 => 5,
            EdgeClass::Ratio2 | EdgeClass::SameRate => 3,
        }
    }

    pub fn stride(&self) -> (usize, usize, usize) {
        match self {
            EdgeClass::Ratio4 => (4, 1, 1),
            EdgeClass::Ratio2 => (2, 1, 1),
            EdgeClass::SameRate => (1, 1, 1),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LateralEdge {
    /// Index of the source branch in the network's branch list.
    pub src: usize,
    /// Index of the target branch.
    pub dst: usize,
    pub class: EdgeClass,
}

/// All legal cross-branch edges: (u, v) with u != v and rate(u) >= rate(v),
/// enumerated target-major then source for a stable ordering. For the full
/// 2-modality x 3-rate graph this yields exactly 18 edges.
pub fn cross_modal_edges(branches: &[BranchKey]) -> Result<Vec<LateralEdge>> {
    let mut edges = Vec::new();
    for (dst, dkey) in branches.iter().enumerate() {
        for (src, skey) in branches.iter().enumerate() {
            if src == dst || skey.rate < dkey.rate {
                continue;
            }
            edges.push(LateralEdge {
                src,
                dst,
                class: EdgeClass::of(skey.rate, dkey.rate)?,
            });
        }
    }
    Ok(edges)
}

/// Within one modality, edges from strictly higher-rate branches down; the
/// fixed lateral pattern of the first search stage.
pub fn intra_modal_edges(branches: &[BranchKey]) -> Result<Vec<LateralEdge>> {
    let mut edges = Vec::new();
    for (dst, dkey) in branches.iter().enumerate() {
        for (src, skey) in branches.iter().enumerate() {
            if skey.modality != dkey.modality || skey.rate <= dkey.rate {
                continue;
            }
            edges.push(LateralEdge {
                src,
                dst,
                class: EdgeClass::of(skey.rate, dkey.rate)?,
            });
        }
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn six_branches() -> Vec<BranchKey> {
        let mut v = Vec::new();
        for m in [Modality::Rgb, Modality::Depth] {
            for r in [8usize, 16, 32] {
                v.push(BranchKey {
                    modality: m,
                    rate: r,
                });
            }
        }
        v
    }

    #[test]
    fn full_graph_has_18_edges() {
        let b = six_branches();
        let edges = cross_modal_edges(&b).unwrap();
        assert_eq!(edges.len(), 18);
        for e in &edges {
            assert!(b[e.src].rate >= b[e.dst].rate);
            assert_ne!(e.src, e.dst);
        }
    }

    #[test]
    fn edge_classes_follow_rate_ratios() {
        let b = six_branches();
        for e in cross_modal_edges(&b).unwrap() {
            let ratio = b[e.src].rate / b[e.dst].rate;
            match ratio {
                1 => {
                    assert_eq!(e.class, EdgeClass::SameRate);
                    assert_ne!(b[e.src].modality, b[e.dst].modality);
                }
                2 => assert_eq!(e.class, EdgeClass::Ratio2),
                4 => assert_eq!(e.class, EdgeClass::Ratio4),
                _ => panic!("unexpected ratio {ratio}"),
            }
        }
    }

    #[test]
    fn intra_modal_edges_are_three_per_modality() {
        let b = six_branches();
        let rgb: Vec<BranchKey> = b[0..3].to_vec();
        let edges = intra_modal_edges(&rgb).unwrap();
        assert_eq!(edges.len(), 3);
        for e in &edges {
            assert!(rgb[e.src].rate > rgb[e.dst].rate);
        }
    }

    #[test]
    fn branch_key_name_roundtrip() {
        let k = BranchKey {
            modality: Modality::Depth,
            rate: 32,
        };
        assert_eq!(k.name(), "depth32");
        assert_eq!(BranchKey::parse("depth32").unwrap(), k);
    }
}
