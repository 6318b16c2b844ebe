//! Multi-rate, multi-modal networks: search supernets and derived discrete
//! networks share one macro-architecture.
//!
//! Each branch runs a stem and a chain of cells, spatially pooled twice so
//! the chain splits into three segments (low/mid/high level); node channels
//! double after each pool. At the end of every segment, lateral connections
//! carry features from equal-or-higher-rate branches into lower-rate ones
//! and are concatenated onto the target branch state. The classifier pools
//! each branch globally, concatenates, and applies one linear layer.
//!
//! The four network kinds differ only in their cells and laterals:
//!
//! | kind             | cells    | laterals                      |
//! |------------------|----------|-------------------------------|
//! | stage-1 supernet | mixed    | fixed intra-modal temporal convs |
//! | derived stage-1  | discrete | fixed intra-modal temporal convs |
//! | stage-2 supernet | discrete | mixed cross-modal (searched)  |
//! | derived stage-2  | discrete | discrete cross-modal          |
//!
//! A fifth variant with no laterals at all realizes plain late fusion.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::nn::{ConvBnRelu, LinearLayer};
use crate::cdc::CdcConfig;
use crate::params::{ParamId, ParamStore};
use crate::search::cell::{CellOp, DiscreteCell, MixedCell, MixedOp};
use crate::search::genotype::{cell_edge_list, derive_cell, derive_lateral, Genotype};
use crate::search::lateral::{cross_modal_edges, intra_modal_edges, BranchKey, LateralEdge};
use crate::search::registry::{Modality, OperationRegistry, RegistryFlavor};
use crate::tape::{Session, Val};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One multi-rate branch description.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchSpec {
    pub modality: Modality,
    pub rate: usize,
    pub channels: usize,
}

/// Which operation family and thetas the registries use.
#[derive(Clone, Copy, Debug)]
pub struct RegistrySpec {
    pub flavor: RegistryFlavor,
    pub theta_t: f64,
    pub theta_tr: f64,
}

impl RegistrySpec {
    pub fn stage1(&self) -> Result<OperationRegistry> {
        OperationRegistry::stage1(self.flavor, self.theta_t, self.theta_tr)
    }

    pub fn stage2(&self, kernel_t: usize) -> Result<OperationRegistry> {
        OperationRegistry::stage2(kernel_t, self.flavor, self.theta_t, self.theta_tr)
    }
}

#[derive(Clone, Debug)]
pub struct NetConfig {
    /// Branches ordered modality-major, rate ascending.
    pub branches: Vec<BranchSpec>,
    pub cells: usize,
    pub num_classes: usize,
    pub k_partial: usize,
    /// Spatial stride of the stem convolution.
    pub stem_stride: usize,
    pub registry: RegistrySpec,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::config("network needs at least one branch"));
        }
        if self.cells < 3 {
            return Err(Error::config(
                "need at least 3 cells to place the three lateral levels",
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::config("need at least 2 classes"));
        }
        if self.k_partial == 0 {
            return Err(Error::config("partial-channel divisor must be >= 1"));
        }
        // Within each modality: strictly higher rate -> strictly fewer channels.
        for a in &self.branches {
            for b in &self.branches {
                if a.modality == b.modality && a.rate > b.rate && a.channels >= b.channels {
                    return Err(Error::config(format!(
                        "branch {}{} must be narrower than {}{} (higher rate, fewer channels)",
                        a.modality.name(),
                        a.rate,
                        b.modality.name(),
                        b.rate
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn branch_keys(&self) -> Vec<BranchKey> {
        self.branches
            .iter()
            .map(|b| BranchKey {
                modality: b.modality,
                rate: b.rate,
            })
            .collect()
    }

    pub fn modalities(&self) -> Vec<Modality> {
        let mut out = Vec::new();
        for b in &self.branches {
            if !out.contains(&b.modality) {
                out.push(b.modality);
            }
        }
        out
    }

    /// Pool after cells ceil(n/3)-1 and ceil(2n/3)-1, splitting the chain
    /// into the three lateral levels. For 8 cells this is {2, 5}; for 12,
    /// {3, 7}.
    pub fn pool_after(&self) -> [usize; 2] {
        let n = self.cells;
        [n.div_ceil(3) - 1, (2 * n).div_ceil(3) - 1]
    }

    /// The three cell-index ranges between pools.
    pub fn segments(&self) -> [std::ops::Range<usize>; 2 + 1] {
        let [p0, p1] = self.pool_after();
        [0..p0 + 1, p0 + 1..p1 + 1, p1 + 1..self.cells]
    }

    /// Scale for a derived network: more cells, wider channels.
    pub fn derived(&self, cells: usize, channel_multiplier: usize) -> NetConfig {
        let mut cfg = self.clone();
        cfg.cells = cells;
        cfg.k_partial = 1;
        for b in &mut cfg.branches {
            b.channels *= channel_multiplier;
        }
        cfg
    }

    /// Restrict to one modality's branches.
    pub fn single_modality(&self, modality: Modality) -> NetConfig {
        let mut cfg = self.clone();
        cfg.branches.retain(|b| b.modality == modality);
        cfg
    }
}

#[derive(Clone, Debug)]
pub enum CellNet {
    Mixed(MixedCell),
    Discrete(DiscreteCell),
}

impl CellNet {
    fn forward<E: Elem>(&self, s: &mut Session<E>, s0: Val, s1: Val) -> Result<Val> {
        match self {
            CellNet::Mixed(c) => c.forward(s, s0, s1),
            CellNet::Discrete(c) => c.forward(s, s0, s1),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BranchNet {
    pub key: BranchKey,
    pub stem: ConvBnRelu,
    pub cells: Vec<CellNet>,
}

/// One lateral connection instance at one level.
#[derive(Clone, Debug)]
pub enum LateralOp {
    Fixed(ConvBnRelu),
    Mixed(MixedOp),
    Discrete(CellOp),
}

impl LateralOp {
    fn forward<E: Elem>(&self, s: &mut Session<E>, x: Val) -> Result<Option<Val>> {
        match self {
            LateralOp::Fixed(b) => Ok(Some(b.forward(s, x)?)),
            LateralOp::Mixed(m) => Ok(Some(m.forward(s, x)?)),
            LateralOp::Discrete(op) => op.forward(s, x),
        }
    }
}

/// All lateral connections of the network: `levels[level]` lists
/// (edge, op) pairs in a fixed enumeration order.
#[derive(Clone, Debug, Default)]
pub struct LateralSet {
    pub levels: Vec<Vec<(LateralEdge, LateralOp)>>,
}

/// Architecture-parameter layout for derivation, tracing and sharing tests.
#[derive(Clone, Debug, Default)]
pub struct AlphaInfo {
    pub shared_cells: bool,
    pub shared_levels: bool,
    /// Stage-1: [branch][edge] alpha handles (duplicated handles = sharing).
    pub cell_alphas: Vec<Vec<ParamId>>,
    pub cell_coefs: Vec<Vec<ParamId>>,
    /// Stage-2: [level][edge] alpha handles.
    pub lateral_alphas: Vec<Vec<ParamId>>,
    pub lateral_coefs: Vec<Vec<ParamId>>,
    /// Cross-modal edge list the lateral alphas refer to.
    pub lateral_edges: Vec<LateralEdge>,
}

impl AlphaInfo {
    /// Count of distinct alpha scalars (softmax logits only, coefficients
    /// excluded).
    pub fn alpha_scalar_count<E: Elem>(&self, store: &ParamStore<E>) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        for ids in self.cell_alphas.iter().chain(self.lateral_alphas.iter()) {
            for id in ids {
                seen.insert(*id);
            }
        }
        seen.iter().map(|id| store.get(*id).numel()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct NetArch {
    pub cfg: NetConfig,
    pub branches: Vec<BranchNet>,
    pub laterals: LateralSet,
    pub head: LinearLayer,
    pub alpha: AlphaInfo,
    /// Per cross-modal edge, the registry its mixed op draws from (stage-2
    /// supernets only).
    pub lateral_registries: Vec<OperationRegistry>,
}

pub struct MultiRateNet<E: Elem> {
    pub arch: NetArch,
    pub store: ParamStore<E>,
}

/// How to populate cells when building a network.
enum CellsPlan<'a> {
    Mixed { shared_cells: bool },
    FromGenotype(&'a Genotype),
}

/// How to populate laterals.
enum LateralsPlan<'a> {
    None,
    FixedIntraModal,
    MixedCross { shared_levels: bool },
    DiscreteCross(&'a Genotype),
}

/// Stage-1 supernet over one modality: mixed cells, fixed intra-modal
/// lateral temporal convolutions.
pub fn build_stage1_supernet<E: Elem>(
    cfg: &NetConfig,
    shared_cells: bool,
    seed: u64,
) -> Result<MultiRateNet<E>> {
    if cfg.modalities().len() != 1 {
        return Err(Error::config(
            "stage-1 supernet expects branches of a single modality",
        ));
    }
    build_net(
        cfg,
        CellsPlan::Mixed { shared_cells },
        LateralsPlan::FixedIntraModal,
        seed,
    )
}

/// Derived single-modality network: discrete cells from the genotype, fixed
/// intra-modal laterals.
pub fn build_discrete_stage1<E: Elem>(
    cfg: &NetConfig,
    genotype: &Genotype,
    seed: u64,
) -> Result<MultiRateNet<E>> {
    if cfg.modalities().len() != 1 {
        return Err(Error::config(
            "derived stage-1 network expects a single modality",
        ));
    }
    build_net(
        cfg,
        CellsPlan::FromGenotype(genotype),
        LateralsPlan::FixedIntraModal,
        seed,
    )
}

/// Stage-2 supernet: cells frozen to the stage-1 genotypes (weights fresh),
/// mixed lateral connections across all six branches.
pub fn build_stage2_supernet<E: Elem>(
    cfg: &NetConfig,
    genotypes: &Genotype,
    shared_levels: bool,
    seed: u64,
) -> Result<MultiRateNet<E>> {
    build_net(
        cfg,
        CellsPlan::FromGenotype(genotypes),
        LateralsPlan::MixedCross { shared_levels },
        seed,
    )
}

/// Fully derived multi-modal network.
pub fn build_discrete_stage2<E: Elem>(
    cfg: &NetConfig,
    genotype: &Genotype,
    seed: u64,
) -> Result<MultiRateNet<E>> {
    build_net(
        cfg,
        CellsPlan::FromGenotype(genotype),
        LateralsPlan::DiscreteCross(genotype),
        seed,
    )
}

/// Multi-modal network with no lateral connections at all: the branches only
/// meet at the classifier (late fusion).
pub fn build_late_fusion<E: Elem>(
    cfg: &NetConfig,
    genotype: &Genotype,
    seed: u64,
) -> Result<MultiRateNet<E>> {
    build_net(
        cfg,
        CellsPlan::FromGenotype(genotype),
        LateralsPlan::None,
        seed,
    )
}

fn build_net<E: Elem>(
    cfg: &NetConfig,
    cells_plan: CellsPlan<'_>,
    laterals_plan: LateralsPlan<'_>,
    seed: u64,
) -> Result<MultiRateNet<E>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<E>::new();
    let keys = cfg.branch_keys();
    let registry = cfg.registry.stage1()?;
    let n_edges = cell_edge_list().len();

    // Architecture parameters for mixed cells.
    let mut alpha = AlphaInfo::default();
    if let CellsPlan::Mixed { shared_cells } = cells_plan {
        alpha.shared_cells = shared_cells;
        let groups: Vec<String> = if shared_cells {
            vec!["shared".to_string()]
        } else {
            keys.iter().map(|k| k.name()).collect()
        };
        let mut group_alphas: Vec<(Vec<ParamId>, Vec<ParamId>)> = Vec::new();
        for g in &groups {
            let mut a_ids = Vec::with_capacity(n_edges);
            let mut c_ids = Vec::with_capacity(n_edges);
            for e in 0..n_edges {
                let base = format!("alpha/cell/{g}/e{e}");
                a_ids.push(MixedOp::alpha_param(
                    &mut store,
                    &base,
                    registry.len(),
                    &mut rng,
                )?);
                c_ids.push(MixedOp::coef_param(&mut store, &base)?);
            }
            group_alphas.push((a_ids, c_ids));
        }
        for bi in 0..keys.len() {
            let gi = if shared_cells { 0 } else { bi };
            alpha.cell_alphas.push(group_alphas[gi].0.clone());
            alpha.cell_coefs.push(group_alphas[gi].1.clone());
        }
    }

    // Cross-modal lateral structure (stage 2 only).
    let cross_edges = cross_modal_edges(&keys)?;
    let mut lateral_registries: Vec<OperationRegistry> = Vec::new();
    if matches!(
        laterals_plan,
        LateralsPlan::MixedCross { .. } | LateralsPlan::DiscreteCross(_)
    ) {
        for e in &cross_edges {
            lateral_registries.push(cfg.registry.stage2(e.class.kernel_t())?);
        }
    }
    if let LateralsPlan::MixedCross { shared_levels } = laterals_plan {
        alpha.shared_levels = shared_levels;
        alpha.lateral_edges = cross_edges.clone();
        let level_groups: Vec<String> = if shared_levels {
            vec!["shared".to_string()]
        } else {
            (0..3).map(|l| format!("L{l}")).collect()
        };
        let mut per_group: Vec<(Vec<ParamId>, Vec<ParamId>)> = Vec::new();
        for g in &level_groups {
            let mut a_ids = Vec::with_capacity(cross_edges.len());
            let mut c_ids = Vec::with_capacity(cross_edges.len());
            for (ei, _) in cross_edges.iter().enumerate() {
                let base = format!("alpha/lat/{g}/e{ei}");
                a_ids.push(MixedOp::alpha_param(
                    &mut store,
                    &base,
                    lateral_registries[ei].len(),
                    &mut rng,
                )?);
                c_ids.push(MixedOp::coef_param(&mut store, &base)?);
            }
            per_group.push((a_ids, c_ids));
        }
        for level in 0..3 {
            let gi = if shared_levels { 0 } else { level };
            alpha.lateral_alphas.push(per_group[gi].0.clone());
            alpha.lateral_coefs.push(per_group[gi].1.clone());
        }
    }

    // Stems.
    let mut branches: Vec<BranchNet> = Vec::with_capacity(keys.len());
    // Channel state per branch: (prev_prev, prev) feature channels.
    let mut chan: Vec<(usize, usize)> = Vec::with_capacity(keys.len());
    for (bi, spec) in cfg.branches.iter().enumerate() {
        let stem_cfg = CdcConfig::vanilla((3, 3, 3), (1, cfg.stem_stride, cfg.stem_stride))?;
        let stem = ConvBnRelu::new(
            &mut store,
            &format!("{}/stem", keys[bi].name()),
            spec.modality.channels(),
            spec.channels,
            stem_cfg,
            &mut rng,
        )?;
        branches.push(BranchNet {
            key: keys[bi],
            stem,
            cells: Vec::with_capacity(cfg.cells),
        });
        chan.push((spec.channels, spec.channels));
    }

    // Cells and laterals, level by level, mirroring the forward pass.
    let mut laterals = LateralSet::default();
    let segments = cfg.segments();
    for (level, seg) in segments.iter().enumerate() {
        for (bi, spec) in cfg.branches.iter().enumerate() {
            let cell_ch = spec.channels << level;
            for ci in seg.clone() {
                let (c0, c1) = chan[bi];
                let name = format!("{}/cell{}", keys[bi].name(), ci);
                let cell = match &cells_plan {
                    CellsPlan::Mixed { .. } => CellNet::Mixed(MixedCell::build(
                        &mut store,
                        &name,
                        &registry,
                        c0,
                        c1,
                        cell_ch,
                        cfg.k_partial,
                        &alpha.cell_alphas[bi],
                        &alpha.cell_coefs[bi],
                        &mut rng,
                    )?),
                    CellsPlan::FromGenotype(g) => {
                        let genes = genotype_cell(g, keys[bi])?;
                        CellNet::Discrete(DiscreteCell::build(
                            &mut store,
                            &name,
                            &registry,
                            genes,
                            c0,
                            c1,
                            cell_ch,
                            &mut rng,
                        )?)
                    }
                };
                branches[bi].cells.push(cell);
                chan[bi] = (c1, 4 * cell_ch);
            }
        }

        // Lateral connections at the end of this segment, all reading the
        // pre-fusion source states.
        let snapshot: Vec<usize> = chan.iter().map(|&(_, c1)| c1).collect();
        let mut level_ops: Vec<(LateralEdge, LateralOp)> = Vec::new();
        match &laterals_plan {
            LateralsPlan::None => {}
            LateralsPlan::FixedIntraModal => {
                for (ei, e) in intra_modal_edges(&keys)?.iter().enumerate() {
                    let out_ch = cfg.branches[e.dst].channels << level;
                    let conv_cfg = CdcConfig::vanilla(
                        (e.class.kernel_t(), 1, 1),
                        e.class.stride(),
                    )?;
                    let block = ConvBnRelu::new(
                        &mut store,
                        &format!("lat/L{level}/e{ei}"),
                        snapshot[e.src],
                        out_ch,
                        conv_cfg,
                        &mut rng,
                    )?;
                    level_ops.push((*e, LateralOp::Fixed(block)));
                }
            }
            LateralsPlan::MixedCross { .. } => {
                for (ei, e) in cross_edges.iter().enumerate() {
                    let out_ch = cfg.branches[e.dst].channels << level;
                    let op = MixedOp::build(
                        &mut store,
                        &format!("lat/L{level}/e{ei}"),
                        &lateral_registries[ei],
                        snapshot[e.src],
                        out_ch,
                        e.class.stride(),
                        1,
                        alpha.lateral_alphas[level][ei],
                        alpha.lateral_coefs[level][ei],
                        &mut rng,
                    )?;
                    level_ops.push((*e, LateralOp::Mixed(op)));
                }
            }
            LateralsPlan::DiscreteCross(g) => {
                for (ei, e) in cross_edges.iter().enumerate() {
                    let src_name = keys[e.src].name();
                    let dst_name = keys[e.dst].name();
                    let Some(gene) = g.stage2.iter().find(|ge| {
                        ge.level == level && ge.src == src_name && ge.dst == dst_name
                    }) else {
                        continue;
                    };
                    let reg = &lateral_registries[ei];
                    let oi = reg.index_of(&gene.op).ok_or_else(|| {
                        Error::config(format!(
                            "genotype references unknown op name '{}'",
                            gene.op
                        ))
                    })?;
                    let out_ch = cfg.branches[e.dst].channels << level;
                    let op = CellOp::build(
                        &mut store,
                        &format!("lat/L{level}/e{ei}_{}", gene.op),
                        &reg.entries[oi].kind,
                        snapshot[e.src],
                        out_ch,
                        e.class.stride(),
                        &mut rng,
                    )?;
                    level_ops.push((*e, LateralOp::Discrete(op)));
                }
            }
        }
        // Fused channels: each incoming edge appends its output channels.
        for (e, op) in &level_ops {
            let out_ch = match op {
                LateralOp::Discrete(CellOp::Zero) => 0,
                _ => cfg.branches[e.dst].channels << level,
            };
            chan[e.dst].1 += out_ch;
        }
        laterals.levels.push(level_ops);
    }

    let head_in: usize = chan.iter().map(|&(_, c1)| c1).sum();
    let head = LinearLayer::new(&mut store, "head", head_in, cfg.num_classes, &mut rng)?;

    Ok(MultiRateNet {
        arch: NetArch {
            cfg: cfg.clone(),
            branches,
            laterals,
            head,
            alpha,
            lateral_registries,
        },
        store,
    })
}

/// Locate the cell genes for one branch in a genotype.
fn genotype_cell<'g>(
    g: &'g Genotype,
    key: BranchKey,
) -> Result<&'g [crate::search::genotype::NodeGene]> {
    let cells = g.stage1.get(key.modality.name()).ok_or_else(|| {
        Error::config(format!(
            "genotype has no stage-1 section for modality '{}'",
            key.modality.name()
        ))
    })?;
    let branch = cells
        .iter()
        .find(|b| b.rate == key.rate)
        .ok_or_else(|| Error::config(format!("genotype has no cell for branch {}", key.name())))?;
    Ok(&branch.nodes)
}

impl NetArch {
    /// Forward over per-branch inputs (same order as `cfg.branches`).
    pub fn forward<E: Elem>(&self, s: &mut Session<E>, inputs: &[Tensor<E>]) -> Result<Val> {
        if inputs.len() != self.branches.len() {
            return Err(Error::shape(format!(
                "expected {} branch inputs, got {}",
                self.branches.len(),
                inputs.len()
            )));
        }
        let mut states: Vec<(Val, Val)> = Vec::with_capacity(self.branches.len());
        for (branch, x) in self.branches.iter().zip(inputs) {
            let xs = x.shape();
            if xs.t != branch.key.rate {
                return Err(Error::shape(format!(
                    "branch {} expects {} frames, input has {}",
                    branch.key.name(),
                    branch.key.rate,
                    xs.t
                )));
            }
            if xs.c != branch.key.modality.channels() {
                return Err(Error::shape(format!(
                    "branch {} expects {} channels, input has {}",
                    branch.key.name(),
                    branch.key.modality.channels(),
                    xs.c
                )));
            }
            let xv = s.input(x.clone());
            let stem = branch.stem.forward(s, xv)?;
            states.push((stem, stem));
        }

        let segments = self.cfg.segments();
        for (level, seg) in segments.iter().enumerate() {
            for (bi, branch) in self.branches.iter().enumerate() {
                for ci in seg.clone() {
                    let (s0, s1) = states[bi];
                    let out = branch.cells[ci].forward(s, s0, s1)?;
                    states[bi] = (s1, out);
                }
            }
            // Laterals read pre-fusion states, then concat onto the targets.
            let level_ops = &self.laterals.levels[level];
            let mut incoming: Vec<Vec<Val>> = vec![Vec::new(); self.branches.len()];
            for (e, op) in level_ops {
                if let Some(y) = op.forward(s, states[e.src].1)? {
                    incoming[e.dst].push(y);
                }
            }
            for (bi, ins) in incoming.into_iter().enumerate() {
                if !ins.is_empty() {
                    let mut parts = vec![states[bi].1];
                    parts.extend(ins);
                    states[bi].1 = s.tape.concat_channels(&parts)?;
                }
            }
            if level + 1 < segments.len() {
                for st in states.iter_mut() {
                    st.0 = s.tape.maxpool(st.0, (1, 2, 2), (1, 2, 2))?;
                    st.1 = s.tape.maxpool(st.1, (1, 2, 2), (1, 2, 2))?;
                }
            }
        }

        let mut feats = Vec::with_capacity(states.len());
        for &(_, s1) in &states {
            feats.push(s.tape.global_avg_pool(s1));
        }
        let cat = s.tape.concat_channels(&feats)?;
        self.head.forward(s, cat)
    }

    /// Derive the discrete stage-1 genotype from the current alpha values.
    pub fn derive_stage1<E: Elem>(&self, store: &ParamStore<E>) -> Result<Genotype> {
        if self.alpha.cell_alphas.is_empty() {
            return Err(Error::config(
                "network has no searchable cells to derive from",
            ));
        }
        let registry = self.cfg.registry.stage1()?;
        let mut genotype = Genotype::empty();
        for (bi, branch) in self.branches.iter().enumerate() {
            let rows: Vec<Vec<f64>> = self.alpha.cell_alphas[bi]
                .iter()
                .map(|&id| store.get(id).data().iter().map(|v| v.to_f64()).collect())
                .collect();
            let nodes = derive_cell(&rows, &registry)?;
            genotype
                .stage1
                .entry(branch.key.modality.name().to_string())
                .or_default()
                .push(crate::search::genotype::BranchCellGene {
                    rate: branch.key.rate,
                    nodes,
                });
        }
        for cells in genotype.stage1.values_mut() {
            cells.sort_by_key(|c| c.rate);
        }
        Ok(genotype)
    }

    /// Derive the lateral-connection genotype from the current alpha values.
    pub fn derive_stage2<E: Elem>(&self, store: &ParamStore<E>) -> Result<Vec<crate::search::genotype::LateralEdgeGene>> {
        if self.alpha.lateral_alphas.is_empty() {
            return Err(Error::config(
                "network has no searchable laterals to derive from",
            ));
        }
        let keys = self.cfg.branch_keys();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut leveled: Vec<(usize, LateralEdge)> = Vec::new();
        let mut regs: Vec<OperationRegistry> = Vec::new();
        for level in 0..3 {
            for (ei, e) in self.alpha.lateral_edges.iter().enumerate() {
                let id = self.alpha.lateral_alphas[level][ei];
                rows.push(store.get(id).data().iter().map(|v| v.to_f64()).collect());
                leveled.push((level, *e));
                regs.push(self.lateral_registries[ei].clone());
            }
        }
        derive_lateral(&rows, &leveled, &keys, &regs)
    }
}

impl<E: Elem> MultiRateNet<E> {
    /// Forward returning the finished session and the logits handle.
    pub fn forward_pass(&mut self, inputs: &[Tensor<E>], train: bool) -> Result<(Session<'_, E>, Val)> {
        let mut sess = Session::new(&mut self.store, train);
        let logits = self.arch.forward(&mut sess, inputs)?;
        Ok((sess, logits))
    }

    pub fn derive_stage1(&self) -> Result<Genotype> {
        self.arch.derive_stage1(&self.store)
    }

    pub fn derive_stage2(&self) -> Result<Vec<crate::search::genotype::LateralEdgeGene>> {
        self.arch.derive_stage2(&self.store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Partition;
    use crate::tensor::Shape5;

    fn small_cfg(modalities: &[Modality]) -> NetConfig {
        let mut branches = Vec::new();
        for &m in modalities {
            for (rate, ch) in [(8usize, 8usize), (16, 6), (32, 4)] {
                branches.push(BranchSpec {
                    modality: m,
                    rate,
                    channels: ch,
                });
            }
        }
        NetConfig {
            branches,
            cells: 3,
            num_classes: 4,
            k_partial: 2,
            stem_stride: 2,
            registry: RegistrySpec {
                flavor: RegistryFlavor::Cdc,
                theta_t: 0.6,
                theta_tr: 0.3,
            },
        }
    }

    fn inputs<E: Elem>(cfg: &NetConfig, n: usize, hw: usize) -> Vec<Tensor<E>> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        cfg.branches
            .iter()
            .map(|b| {
                Tensor::uniform(
                    Shape5::new(n, b.modality.channels(), b.rate, hw, hw),
                    0.0,
                    1.0,
                    &mut rng,
                )
            })
            .collect()
    }

    #[test]
    fn pool_placement_matches_cell_counts() {
        let mut cfg = small_cfg(&[Modality::Rgb]);
        cfg.cells = 8;
        assert_eq!(cfg.pool_after(), [2, 5]);
        cfg.cells = 12;
        assert_eq!(cfg.pool_after(), [3, 7]);
        cfg.cells = 3;
        assert_eq!(cfg.pool_after(), [0, 1]);
    }

    #[test]
    fn unshared_alpha_count_is_branches_times_edges_times_ops() {
        let cfg = small_cfg(&[Modality::Rgb]);
        let net = build_stage1_supernet::<f32>(&cfg, false, 0).unwrap();
        // 3 branches x 14 edges x 7 ops.
        assert_eq!(net.arch.alpha.alpha_scalar_count(&net.store), 294);
        assert_ne!(
            net.arch.alpha.cell_alphas[0][0],
            net.arch.alpha.cell_alphas[1][0]
        );
    }

    #[test]
    fn shared_cells_collapse_alpha_handles() {
        let cfg = small_cfg(&[Modality::Rgb]);
        let net = build_stage1_supernet::<f32>(&cfg, true, 0).unwrap();
        // One cell's edge count x |O_b|.
        assert_eq!(net.arch.alpha.alpha_scalar_count(&net.store), 14 * 7);
        assert_eq!(net.arch.alpha.cell_alphas[0], net.arch.alpha.cell_alphas[1]);
        assert_eq!(net.arch.alpha.cell_alphas[1], net.arch.alpha.cell_alphas[2]);
    }

    #[test]
    fn stage1_forward_produces_finite_logits() {
        let cfg = small_cfg(&[Modality::Rgb]);
        let mut net = build_stage1_supernet::<f32>(&cfg, false, 0).unwrap();
        let xs = inputs(&cfg, 2, 32);
        let (sess, logits) = net.forward_pass(&xs, true).unwrap();
        assert_eq!(sess.tape.shape(logits), Shape5::new(2, 4, 1, 1, 1));
        assert!(sess.tape.value(logits).is_all_finite());
    }

    #[test]
    fn stage1_rejects_wrong_frame_count() {
        let cfg = small_cfg(&[Modality::Rgb]);
        let mut net = build_stage1_supernet::<f32>(&cfg, false, 0).unwrap();
        let mut xs = inputs(&cfg, 1, 32);
        xs.swap(0, 2);
        assert!(net.forward_pass(&xs, true).is_err());
    }

    #[test]
    fn stage2_supernet_structure_and_forward() {
        let cfg1 = small_cfg(&[Modality::Rgb]);
        let rgb = build_stage1_supernet::<f32>(&cfg1, false, 0)
            .unwrap()
            .derive_stage1()
            .unwrap();
        let cfg1d = small_cfg(&[Modality::Depth]);
        let depth = build_stage1_supernet::<f32>(&cfg1d, false, 1)
            .unwrap()
            .derive_stage1()
            .unwrap();
        let genotype = Genotype::combine(&[&rgb, &depth], Vec::new()).unwrap();

        let cfg2 = small_cfg(&[Modality::Rgb, Modality::Depth]);
        let mut net = build_stage2_supernet::<f32>(&cfg2, &genotype, false, 7).unwrap();
        for level in &net.arch.laterals.levels {
            assert_eq!(level.len(), 18);
        }
        // Unshared levels: 3 x 18 distinct alpha vectors of 4 entries.
        assert_eq!(net.arch.alpha.alpha_scalar_count(&net.store), 3 * 18 * 4);
        // Cells are frozen: no cell alphas registered.
        assert!(net.arch.alpha.cell_alphas.is_empty());

        let xs = inputs(&cfg2, 2, 32);
        let (sess, logits) = net.forward_pass(&xs, true).unwrap();
        assert_eq!(sess.tape.shape(logits), Shape5::new(2, 4, 1, 1, 1));
        assert!(sess.tape.value(logits).is_all_finite());

        let edges = net.derive_stage2().unwrap();
        let keys = cfg2.branch_keys();
        for e in &edges {
            let src = BranchKey::parse(&e.src).unwrap();
            let dst = BranchKey::parse(&e.dst).unwrap();
            assert!(src.rate >= dst.rate);
            assert!(keys.contains(&src) && keys.contains(&dst));
        }
    }

    #[test]
    fn shared_levels_collapse_lateral_alphas() {
        let cfg1 = small_cfg(&[Modality::Rgb]);
        let rgb = build_stage1_supernet::<f32>(&cfg1, true, 0)
            .unwrap()
            .derive_stage1()
            .unwrap();
        let cfg1d = small_cfg(&[Modality::Depth]);
        let depth = build_stage1_supernet::<f32>(&cfg1d, true, 1)
            .unwrap()
            .derive_stage1()
            .unwrap();
        let genotype = Genotype::combine(&[&rgb, &depth], Vec::new()).unwrap();
        let cfg2 = small_cfg(&[Modality::Rgb, Modality::Depth]);
        let net = build_stage2_supernet::<f32>(&cfg2, &genotype, true, 7).unwrap();
        assert_eq!(net.arch.alpha.alpha_scalar_count(&net.store), 18 * 4);
        assert_eq!(
            net.arch.alpha.lateral_alphas[0],
            net.arch.alpha.lateral_alphas[2]
        );
    }

    #[test]
    fn derived_network_roundtrips_through_serialization() {
        let cfg = small_cfg(&[Modality::Rgb]);
        let s1 = build_stage1_supernet::<f32>(&cfg, false, 3)
            .unwrap()
            .derive_stage1()
            .unwrap();
        let dcfg = cfg.derived(4, 2);
        let a = build_discrete_stage1::<f32>(&dcfg, &s1, 11).unwrap();
        let parsed = Genotype::from_json(&s1.to_json()).unwrap();
        let b = build_discrete_stage1::<f32>(&dcfg, &parsed, 11).unwrap();
        // No architecture parameters remain in a derived network.
        assert_eq!(a.store.ids_in(Partition::Arch).len(), 0);
        // Identical parameter names and shapes.
        let shapes_a: Vec<(String, Shape5)> = a
            .store
            .iter()
            .map(|(_, e)| (e.name.clone(), e.value.shape()))
            .collect();
        let shapes_b: Vec<(String, Shape5)> = b
            .store
            .iter()
            .map(|(_, e)| (e.name.clone(), e.value.shape()))
            .collect();
        assert_eq!(shapes_a, shapes_b);

        let mut net = build_discrete_stage1::<f32>(&dcfg, &s1, 11).unwrap();
        let xs = inputs(&dcfg, 1, 32);
        let (sess, logits) = net.forward_pass(&xs, false).unwrap();
        assert_eq!(sess.tape.shape(logits), Shape5::new(1, 4, 1, 1, 1));
    }

    #[test]
    fn late_fusion_network_has_no_laterals() {
        let cfg1 = small_cfg(&[Modality::Rgb]);
        let rgb = build_stage1_supernet::<f32>(&cfg1, true, 0)
            .unwrap()
            .derive_stage1()
            .unwrap();
        let cfg1d = small_cfg(&[Modality::Depth]);
        let depth = build_stage1_supernet::<f32>(&cfg1d, true, 1)
            .unwrap()
            .derive_stage1()
            .unwrap();
        let genotype = Genotype::combine(&[&rgb, &depth], Vec::new()).unwrap();
        let cfg2 = small_cfg(&[Modality::Rgb, Modality::Depth]);
        let mut net = build_late_fusion::<f32>(&cfg2, &genotype, 5).unwrap();
        assert!(net.arch.laterals.levels.iter().all(|l| l.is_empty()));
        let xs = inputs(&cfg2, 1, 32);
        let (sess, logits) = net.forward_pass(&xs, false).unwrap();
        assert!(sess.tape.value(logits).is_all_finite());
    }
}
