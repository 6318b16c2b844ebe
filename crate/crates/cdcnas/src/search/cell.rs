//! Searchable cells: mixed candidate operations on edges during search, and
//! the discrete cells instantiated from a derived genotype.

use crate::cdc::CdcConfig;
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::nn::ConvBnRelu;
use crate::params::{ParamId, ParamStore, Partition};
use crate::search::genotype::{cell_edge_list, NodeGene};
use crate::search::registry::{OperationRegistry, OpKind};
use crate::tape::{Session, Val};
use crate::tensor::{Shape5, Tensor};
use rand::Rng;

/// One instantiated candidate operation.
#[derive(Clone, Debug)]
pub enum CellOp {
    Zero,
    Identity,
    Conv(ConvBnRelu),
}

impl CellOp {
    /// Instantiate `kind` at the given channel width. Cell candidates keep
    /// stride 1; lateral ops pass their class stride.
    pub fn build<E: Elem>(
        store: &mut ParamStore<E>,
        name: &str,
        kind: &OpKind,
        in_channels: usize,
        out_channels: usize,
        stride: (usize, usize, usize),
        rng: &mut impl Rng,
    ) -> Result<CellOp> {
        match kind {
            OpKind::Zero => Ok(CellOp::Zero),
            OpKind::Identity => {
                if in_channels != out_channels || stride != (1, 1, 1) {
                    return Err(Error::config(
                        "Identity op needs matching channels and unit stride",
                    ));
                }
                Ok(CellOp::Identity)
            }
            OpKind::Conv {
                variant,
                theta,
                kernel,
            } => {
                let cfg = CdcConfig::new(*variant, *theta, *kernel, stride)?;
                Ok(CellOp::Conv(ConvBnRelu::new(
                    store,
                    name,
                    in_channels,
                    out_channels,
                    cfg,
                    rng,
                )?))
            }
        }
    }

    /// Forward; `None` marks the exact-zero output of the Zero op, which
    /// contributes neither value nor gradient anywhere.
    pub fn forward<E: Elem>(&self, s: &mut Session<E>, x: Val) -> Result<Option<Val>> {
        match self {
            CellOp::Zero => Ok(None),
            CellOp::Identity => Ok(Some(x)),
            CellOp::Conv(block) => Ok(Some(block.forward(s, x)?)),
        }
    }

    pub fn param_count<E: Elem>(&self, store: &ParamStore<E>) -> usize {
        match self {
            CellOp::Zero | CellOp::Identity => 0,
            CellOp::Conv(b) => b.param_count(store),
        }
    }
}

/// Softmax-relaxed mixture of candidate operations on one edge.
///
/// With partial-channel sampling (k_partial > 1) only the first
/// channels/k_partial channels pass through the candidates; the rest bypass
/// untouched and are re-concatenated. The softmax weights are scaled by a
/// learnable positive edge-normalization coefficient exp(coef).
#[derive(Clone, Debug)]
pub struct MixedOp {
    pub candidates: Vec<CellOp>,
    pub alpha: ParamId,
    pub coef: ParamId,
    pub k_partial: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl MixedOp {
    /// Register fresh candidate weights for this edge. `alpha`/`coef` may be
    /// shared across edges of other cells or branches. Partial-channel
    /// sampling needs matching in/out widths so the bypass slice lines up.
    #[allow(clippy::too_many_arguments)]
    pub fn build<E: Elem>(
        store: &mut ParamStore<E>,
        name: &str,
        registry: &OperationRegistry,
        in_channels: usize,
        out_channels: usize,
        stride: (usize, usize, usize),
        k_partial: usize,
        alpha: ParamId,
        coef: ParamId,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if k_partial == 0 || in_channels % k_partial != 0 {
            return Err(Error::config(format!(
                "partial-channel divisor {k_partial} does not divide {in_channels} channels"
            )));
        }
        if k_partial > 1 && in_channels != out_channels {
            return Err(Error::config(
                "partial-channel sampling requires matching in/out channels",
            ));
        }
        let op_in = in_channels / k_partial;
        let op_out = if k_partial > 1 {
            op_in
        } else {
            out_channels
        };
        let mut candidates = Vec::with_capacity(registry.len());
        for (oi, spec) in registry.entries.iter().enumerate() {
            candidates.push(CellOp::build(
                store,
                &format!("{name}/op{oi}_{}", spec.name),
                &spec.kind,
                op_in,
                op_out,
                stride,
                rng,
            )?);
        }
        Ok(MixedOp {
            candidates,
            alpha,
            coef,
            k_partial,
            in_channels,
            out_channels,
        })
    }

    /// Register the alpha vector for one edge (shared or per-instance).
    pub fn alpha_param<E: Elem>(
        store: &mut ParamStore<E>,
        name: &str,
        n_ops: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        store.add_param(
            format!("{name}/alpha"),
            Tensor::randn(Shape5::vector(n_ops), 1e-3, rng),
            Partition::Arch,
        )
    }

    /// Register the raw edge-normalization coefficient (exp(0) = 1 at init).
    pub fn coef_param<E: Elem>(store: &mut ParamStore<E>, name: &str) -> Result<ParamId> {
        store.add_param(
            format!("{name}/coef"),
            Tensor::zeros(Shape5::scalar()),
            Partition::Arch,
        )
    }

    pub fn forward<E: Elem>(&self, s: &mut Session<E>, x: Val) -> Result<Val> {
        let xs = s.tape.shape(x);
        if xs.c != self.in_channels {
            return Err(Error::shape(format!(
                "mixed op built for {} channels, input has {}",
                self.in_channels, xs.c
            )));
        }
        let slice_c = self.in_channels / self.k_partial;
        let (active, bypass) = if self.k_partial > 1 {
            let a = s.tape.slice_channels(x, 0, slice_c)?;
            let b = s
                .tape
                .slice_channels(x, slice_c, self.in_channels - slice_c)?;
            (a, Some(b))
        } else {
            (x, None)
        };
        let alpha = s.param(self.alpha);
        let eta = s.tape.softmax(alpha);
        let coef_raw = s.param(self.coef);
        let coef = s.tape.exp(coef_raw);

        let mut terms: Vec<Val> = Vec::new();
        let mut out_shape: Option<Shape5> = None;
        for (oi, cand) in self.candidates.iter().enumerate() {
            if let Some(y) = cand.forward(s, active)? {
                let ys = s.tape.shape(y);
                match out_shape {
                    None => out_shape = Some(ys),
                    Some(prev) if prev != ys => {
                        return Err(Error::shape(format!(
                            "mixed-op candidates disagree on output shape: {prev} vs {ys}"
                        )));
                    }
                    _ => {}
                }
                let weighted = s.tape.scale_by_entry(y, eta, oi)?;
                terms.push(weighted);
            }
        }
        if terms.is_empty() {
            return Err(Error::config("mixed op with only Zero candidates"));
        }
        let mixed = s.tape.add_n(&terms)?;
        let mixed = s.tape.scale_by_entry(mixed, coef, 0)?;
        match bypass {
            Some(b) => s.tape.concat_channels(&[mixed, b]),
            None => Ok(mixed),
        }
    }
}

/// Supernet cell: 2 preprocessed inputs, 4 intermediate nodes, 14 mixed
/// edges, output = channel concat of the intermediates.
#[derive(Clone, Debug)]
pub struct MixedCell {
    pub pre0: ConvBnRelu,
    pub pre1: ConvBnRelu,
    pub edges: Vec<MixedOp>,
    pub channels: usize,
}

impl MixedCell {
    #[allow(clippy::too_many_arguments)]
    pub fn build<E: Elem>(
        store: &mut ParamStore<E>,
        name: &str,
        registry: &OperationRegistry,
        in0: usize,
        in1: usize,
        channels: usize,
        k_partial: usize,
        alphas: &[ParamId],
        coefs: &[ParamId],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let point = CdcConfig::vanilla((1, 1, 1), (1, 1, 1))?;
        let pre0 = ConvBnRelu::new(store, &format!("{name}/pre0"), in0, channels, point.clone(), rng)?;
        let pre1 = ConvBnRelu::new(store, &format!("{name}/pre1"), in1, channels, point, rng)?;
        let edge_list = cell_edge_list();
        if alphas.len() != edge_list.len() || coefs.len() != edge_list.len() {
            return Err(Error::config("cell alpha/coef handle count mismatch"));
        }
        let mut edges = Vec::with_capacity(edge_list.len());
        for (ei, (src, dst)) in edge_list.iter().enumerate() {
            edges.push(MixedOp::build(
                store,
                &format!("{name}/e{ei}_{src}to{dst}"),
                registry,
                channels,
                channels,
                (1, 1, 1),
                k_partial,
                alphas[ei],
                coefs[ei],
                rng,
            )?);
        }
        Ok(MixedCell {
            pre0,
            pre1,
            edges,
            channels,
        })
    }

    pub fn forward<E: Elem>(&self, s: &mut Session<E>, s0: Val, s1: Val) -> Result<Val> {
        let mut nodes = vec![self.pre0.forward(s, s0)?, self.pre1.forward(s, s1)?];
        let mut ei = 0usize;
        for target in 2..6 {
            let mut terms = Vec::with_capacity(target);
            for source in 0..target {
                terms.push(self.edges[ei].forward(s, nodes[source])?);
                ei += 1;
            }
            nodes.push(s.tape.add_n(&terms)?);
        }
        s.tape.concat_channels(&nodes[2..6])
    }

    /// Output channels: concat of 4 intermediate nodes.
    pub fn out_channels(&self) -> usize {
        4 * self.channels
    }
}

/// Discrete cell from a derived genotype: each intermediate node sums its two
/// chosen incoming operations at full channel width.
#[derive(Clone, Debug)]
pub struct DiscreteCell {
    pub pre0: ConvBnRelu,
    pub pre1: ConvBnRelu,
    /// Per intermediate node: (source node, op).
    pub nodes: Vec<Vec<(usize, CellOp)>>,
    pub channels: usize,
}

impl DiscreteCell {
    #[allow(clippy::too_many_arguments)]
    pub fn build<E: Elem>(
        store: &mut ParamStore<E>,
        name: &str,
        registry: &OperationRegistry,
        genes: &[NodeGene],
        in0: usize,
        in1: usize,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let point = CdcConfig::vanilla((1, 1, 1), (1, 1, 1))?;
        let pre0 = ConvBnRelu::new(store, &format!("{name}/pre0"), in0, channels, point.clone(), rng)?;
        let pre1 = ConvBnRelu::new(store, &format!("{name}/pre1"), in1, channels, point, rng)?;
        if genes.len() != 4 {
            return Err(Error::config("discrete cell needs exactly 4 node genes"));
        }
        let mut nodes = Vec::with_capacity(4);
        for gene in genes {
            let mut ops = Vec::with_capacity(gene.edges.len());
            for (k, e) in gene.edges.iter().enumerate() {
                let oi = registry.index_of(&e.op).ok_or_else(|| {
                    Error::config(format!("genotype references unknown op name '{}'", e.op))
                })?;
                let kind = &registry.entries[oi].kind;
                if *kind == OpKind::Zero {
                    return Err(Error::config("Zero op in a derived cell"));
                }
                ops.push((
                    e.from,
                    CellOp::build(
                        store,
                        &format!("{name}/n{}_in{}_{}", gene.node, k, e.op),
                        kind,
                        channels,
                        channels,
                        (1, 1, 1),
                        rng,
                    )?,
                ));
            }
            nodes.push(ops);
        }
        Ok(DiscreteCell {
            pre0,
            pre1,
            nodes,
            channels,
        })
    }

    pub fn forward<E: Elem>(&self, s: &mut Session<E>, s0: Val, s1: Val) -> Result<Val> {
        let mut nodes = vec![self.pre0.forward(s, s0)?, self.pre1.forward(s, s1)?];
        for ops in &self.nodes {
            let mut terms = Vec::with_capacity(ops.len());
            for (src, op) in ops {
                if let Some(y) = op.forward(s, nodes[*src])? {
                    terms.push(y);
                }
            }
            if terms.is_empty() {
                return Err(Error::config("discrete cell node with no live op"));
            }
            nodes.push(s.tape.add_n(&terms)?);
        }
        s.tape.concat_channels(&nodes[2..6])
    }

    pub fn out_channels(&self) -> usize {
        4 * self.channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::registry::RegistryFlavor;
    use crate::tensor::max_abs_diff;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_registry() -> OperationRegistry {
        use crate::search::registry::OpSpec;
        OperationRegistry {
            stage: 1,
            entries: vec![
                OpSpec {
                    name: "Zero".into(),
                    kind: OpKind::Zero,
                },
                OpSpec {
                    name: "Identity".into(),
                    kind: OpKind::Identity,
                },
            ],
        }
    }

    fn mixed_with_alpha(alpha_vals: Vec<f32>, registry: &OperationRegistry) -> (ParamStore<f32>, MixedOp) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f32>::new();
        let alpha = store
            .add_param("alpha", Tensor::from_vec(alpha_vals), Partition::Arch)
            .unwrap();
        let coef = MixedOp::coef_param(&mut store, "edge").unwrap();
        let op = MixedOp::build(
            &mut store,
            "edge",
            registry,
            4,
            4,
            (1, 1, 1),
            1,
            alpha,
            coef,
            &mut rng,
        )
        .unwrap();
        (store, op)
    }

    #[test]
    fn one_hot_identity_passes_input_through() {
        let reg = tiny_registry();
        let (mut store, op) = mixed_with_alpha(vec![-40.0, 40.0], &reg);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::<f32>::randn(Shape5::new(1, 4, 2, 3, 3), 1.0, &mut rng);
        let mut s = Session::new(&mut store, true);
        let xv = s.input(x.clone());
        let y = op.forward(&mut s, xv).unwrap();
        let d = max_abs_diff(s.tape.value(y), &x);
        assert!(d <= 1e-4, "one-hot identity distance {d}");
    }

    #[test]
    fn uniform_zero_identity_halves_input() {
        let reg = tiny_registry();
        let (mut store, op) = mixed_with_alpha(vec![0.0, 0.0], &reg);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f32>::randn(Shape5::new(1, 4, 2, 3, 3), 1.0, &mut rng);
        let mut s = Session::new(&mut store, true);
        let xv = s.input(x.clone());
        let y = op.forward(&mut s, xv).unwrap();
        let half = x.map(|v| v * 0.5);
        let d = max_abs_diff(s.tape.value(y), &half);
        assert!(d <= 1e-6, "uniform mix distance {d}");
    }

    #[test]
    fn mixed_output_matches_unrolled_sum() {
        let reg = OperationRegistry::stage1(RegistryFlavor::Cdc, 0.6, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::<f32>::new();
        let alpha = store
            .add_param(
                "alpha",
                Tensor::uniform(Shape5::vector(reg.len()), -1.0, 1.0, &mut rng),
                Partition::Arch,
            )
            .unwrap();
        let coef = MixedOp::coef_param(&mut store, "edge").unwrap();
        let op = MixedOp::build(
            &mut store,
            "edge",
            &reg,
            4,
            4,
            (1, 1, 1),
            1,
            alpha,
            coef,
            &mut rng,
        )
        .unwrap();
        let x = Tensor::<f32>::randn(Shape5::new(2, 4, 4, 5, 5), 0.5, &mut rng);

        // Mixed forward (train = false so BN uses fixed running stats and the
        // candidate-by-candidate replay sees identical statistics).
        let mixed_out = {
            let mut s = Session::new(&mut store, false);
            let xv = s.input(x.clone());
            let y = op.forward(&mut s, xv).unwrap();
            s.tape.value(y).clone()
        };

        // Unrolled oracle: run candidates one by one and sum eta_o * o(x).
        let alpha_vals: Vec<f64> = store.get(alpha).data().iter().map(|&v| v as f64).collect();
        let maxv = alpha_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = alpha_vals.iter().map(|&v| (v - maxv).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut expect = Tensor::<f32>::zeros(mixed_out.shape());
        for (oi, cand) in op.candidates.iter().enumerate() {
            let mut s = Session::new(&mut store, false);
            let xv = s.input(x.clone());
            if let Some(y) = cand.forward(&mut s, xv).unwrap() {
                let w = (exps[oi] / z) as f32;
                let scaled = s.tape.value(y).map(|v| v * w);
                expect.add_assign(&scaled).unwrap();
            }
        }
        let d = max_abs_diff(&mixed_out, &expect);
        assert!(d <= 1e-6, "unrolled-sum mismatch {d}");
    }

    #[test]
    fn partial_channels_bypass_the_rest() {
        let reg = tiny_registry();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::<f32>::new();
        let alpha = store
            .add_param("alpha", Tensor::from_vec(vec![40.0f32, -40.0]), Partition::Arch)
            .unwrap(); // all mass on Zero
        let coef = MixedOp::coef_param(&mut store, "edge").unwrap();
        let op = MixedOp::build(
            &mut store,
            "edge",
            &reg,
            4,
            4,
            (1, 1, 1),
            2,
            alpha,
            coef,
            &mut rng,
        )
        .unwrap();
        let x = Tensor::<f32>::randn(Shape5::new(1, 4, 2, 3, 3), 1.0, &mut rng);
        let mut s = Session::new(&mut store, true);
        let xv = s.input(x.clone());
        let y = op.forward(&mut s, xv).unwrap();
        let out = s.tape.value(y);
        // Active half is (nearly) zeroed, bypass half is bit-identical.
        let vol = x.shape().volume();
        for c in 0..2 {
            for i in 0..vol {
                let idx = c * vol + i;
                assert!(out.data()[idx].abs() < 1e-4);
            }
        }
        for c in 2..4 {
            for i in 0..vol {
                let idx = c * vol + i;
                assert_eq!(out.data()[idx], x.data()[idx]);
            }
        }
    }
}
