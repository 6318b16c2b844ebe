//! Candidate-operation registries for the two search stages.

use crate::cdc::CdcVariant;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Depth,
}

impl Modality {
    pub fn name(&self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Depth => "depth",
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Modality::Rgb => 3,
            Modality::Depth => 1,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "depth" => Ok(Modality::Depth),
            other => Err(Error::config(format!("unknown modality '{other}'"))),
        }
    }
}

/// Which operation family a registry draws its convolutions from.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RegistryFlavor {
    /// Central-difference convolutions (the full search space).
    Cdc,
    /// Ablation space with every CDC op replaced by a vanilla convolution.
    Vanilla,
}

impl RegistryFlavor {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cdc" => Ok(RegistryFlavor::Cdc),
            "vanilla" => Ok(RegistryFlavor::Vanilla),
            other => Err(Error::config(format!(
                "registry must be 'cdc' or 'vanilla', got '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Zero,
    Identity,
    Conv {
        variant: CdcVariant,
        theta: f64,
        kernel: (usize, usize, usize),
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpSpec {
    pub name: String,
    pub kind: OpKind,
}

fn conv_op(variant: CdcVariant, theta: f64, kernel: (usize, usize, usize)) -> OpSpec {
    let geom = format!("{}x{}x{}", kernel.0, kernel.1, kernel.2);
    let name = match variant {
        CdcVariant::Vanilla => format!("Conv_{geom}"),
        CdcVariant::T => format!("CDC-T-{:02}_{geom}", (theta * 10.0).round() as u32),
        CdcVariant::Tr => format!("CDC-TR-{:02}_{geom}", (theta * 10.0).round() as u32),
        CdcVariant::St => format!("CDC-ST-{:02}_{geom}", (theta * 10.0).round() as u32),
    };
    OpSpec {
        name,
        kind: OpKind::Conv {
            variant,
            theta,
            kernel,
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperationRegistry {
    pub stage: u8,
    pub entries: Vec<OpSpec>,
}

impl OperationRegistry {
    /// Backbone-cell space: seven candidates mixing spatial convolutions with
    /// temporal and robust-temporal CDC ops. The vanilla flavor replaces the
    /// CDC entries with plain convolutions, which deduplicates the two kernel
    /// geometries down to five candidates.
    pub fn stage1(flavor: RegistryFlavor, theta_t: f64, theta_tr: f64) -> Result<Self> {
        let entries = match flavor {
            RegistryFlavor::Cdc => vec![
                OpSpec {
                    name: "Zero".into(),
                    kind: OpKind::Zero,
                },
                OpSpec {
                    name: "Identity".into(),
                    kind: OpKind::Identity,
                },
                conv_op(CdcVariant::Vanilla, 0.0, (1, 3, 3)),
                conv_op(CdcVariant::T, theta_t, (3, 1, 1)),
                conv_op(CdcVariant::T, theta_t, (3, 3, 3)),
                conv_op(CdcVariant::Tr, theta_tr, (3, 1, 1)),
                conv_op(CdcVariant::Tr, theta_tr, (3, 3, 3)),
            ],
            RegistryFlavor::Vanilla => vec![
                OpSpec {
                    name: "Zero".into(),
                    kind: OpKind::Zero,
                },
                OpSpec {
                    name: "Identity".into(),
                    kind: OpKind::Identity,
                },
                conv_op(CdcVariant::Vanilla, 0.0, (1, 3, 3)),
                conv_op(CdcVariant::Vanilla, 0.0, (3, 1, 1)),
                conv_op(CdcVariant::Vanilla, 0.0, (3, 3, 3)),
            ],
        };
        Ok(OperationRegistry { stage: 1, entries })
    }

    /// Lateral-connection space for one edge class: temporal convolutions of
    /// extent `kernel_t`, with `Zero` meaning the connection is absent.
    pub fn stage2(
        kernel_t: usize,
        flavor: RegistryFlavor,
        theta_t: f64,
        theta_tr: f64,
    ) -> Result<Self> {
        let k = (kernel_t, 1, 1);
        let entries = match flavor {
            RegistryFlavor::Cdc => vec![
                OpSpec {
                    name: "Zero".into(),
                    kind: OpKind::Zero,
                },
                conv_op(CdcVariant::Vanilla, 0.0, k),
                conv_op(CdcVariant::T, theta_t, k),
                conv_op(CdcVariant::Tr, theta_tr, k),
            ],
            RegistryFlavor::Vanilla => vec![
                OpSpec {
                    name: "Zero".into(),
                    kind: OpKind::Zero,
                },
                conv_op(CdcVariant::Vanilla, 0.0, k),
            ],
        };
        Ok(OperationRegistry { stage: 2, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn zero_index(&self) -> Option<usize> {
        self.entries.iter().position(|e| e.kind == OpKind::Zero)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage1_cdc_registry_has_seven_named_ops() {
        let r = OperationRegistry::stage1(RegistryFlavor::Cdc, 0.6, 0.3).unwrap();
        assert_eq!(r.len(), 7);
        assert_eq!(
            r.names(),
            vec![
                "Zero",
                "Identity",
                "Conv_1x3x3",
                "CDC-T-06_3x1x1",
                "CDC-T-06_3x3x3",
                "CDC-TR-03_3x1x1",
                "CDC-TR-03_3x3x3",
            ]
        );
    }

    #[test]
    fn stage1_cdc_thetas() {
        let r = OperationRegistry::stage1(RegistryFlavor::Cdc, 0.6, 0.3).unwrap();
        for e in &r.entries {
            if let OpKind::Conv { variant, theta, .. } = &e.kind {
                match variant {
                    CdcVariant::T => assert_eq!(*theta, 0.6),
                    CdcVariant::Tr => assert_eq!(*theta, 0.3),
                    CdcVariant::Vanilla => assert_eq!(*theta, 0.0),
                    CdcVariant::St => panic!("no ST op in the stage-1 space"),
                }
            }
        }
    }

    #[test]
    fn stage2_registry_ops() {
        let r = OperationRegistry::stage2(5, RegistryFlavor::Cdc, 0.6, 0.3).unwrap();
        assert_eq!(
            r.names(),
            vec!["Zero", "Conv_5x1x1", "CDC-T-06_5x1x1", "CDC-TR-03_5x1x1"]
        );
        assert_eq!(r.zero_index(), Some(0));
    }

    #[test]
    fn vanilla_registry_has_unique_names() {
        let r = OperationRegistry::stage1(RegistryFlavor::Vanilla, 0.6, 0.3).unwrap();
        let mut names = r.names();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), r.len());
    }
}
