//! Fusion stage and action prediction heads.
//!
//! Every head is a two-layer perceptron (affine, rectifier, affine) on top of
//! a shared affine fusion of the input feature. Five architectures are
//! supported:
//!
//! * `Baseline`: sigmoid of the fusion output itself (fusion width = N).
//! * `Modified`: sigmoid of a flat head on the fused feature.
//! * `MultiTask`: `Modified` plus an auxiliary softmax anchor head that is
//!   trained but not used for the action probabilities.
//! * `TwoStream`: anchors from a softmax head, regular actions from an
//!   independent sigmoid head.
//! * `Hierarchical`: anchors from a softmax head; regular actions as the
//!   anchor-weighted mixture of per-group sigmoid conditionals.
//!
//! Gradients are derived by hand; see [`backward`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::anchors::ActionGroups;
use crate::error::{AcpError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Baseline,
    Modified,
    MultiTask,
    TwoStream,
    Hierarchical,
}

impl ArchKind {
    pub const ALL: [ArchKind; 5] = [
        ArchKind::Baseline,
        ArchKind::Modified,
        ArchKind::MultiTask,
        ArchKind::TwoStream,
        ArchKind::Hierarchical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::Baseline => "baseline",
            ArchKind::Modified => "modified",
            ArchKind::MultiTask => "multitask",
            ArchKind::TwoStream => "twostream",
            ArchKind::Hierarchical => "hierarchical",
        }
    }

    /// Whether the architecture needs anchor groups.
    pub fn uses_groups(self) -> bool {
        matches!(self, ArchKind::MultiTask | ArchKind::TwoStream | ArchKind::Hierarchical)
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchKind {
    type Err = AcpError;

    fn from_str(s: &str) -> Result<Self> {
        ArchKind::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| AcpError::parse("arch", format!("unknown architecture `{s}`")))
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Affine map `y = W x + b`, `W` stored row-major as `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim.max(1))
            .take(self.out_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and, when given, the
    /// input gradient into `d_x`.
    pub fn backward(&self, x: &[f64], d_out: &[f64], grad: &mut Dense, d_x: Option<&mut [f64]>) {
        let n_in = self.in_dim;
        for (o, &d) in d_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.bias[o] += d;
            let g_row = &mut grad.weight[o * n_in..(o + 1) * n_in];
            for (g, &v) in g_row.iter_mut().zip(x) {
                *g += d * v;
            }
        }
        if let Some(d_x) = d_x {
            for (o, &d) in d_out.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &self.weight[o * n_in..(o + 1) * n_in];
                for (dx, &w) in d_x.iter_mut().zip(row) {
                    *dx += d * w;
                }
            }
        }
    }
}

/// Two-layer perceptron with a rectifier hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub hidden: Dense,
    pub output: Dense,
}

#[derive(Clone, Debug)]
pub struct MlpTrace {
    pre: Vec<f64>,
    act: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Mlp {
    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Mlp {
            hidden: Dense::zeros(in_dim, hidden),
            output: Dense::zeros(hidden, out_dim),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim
    }

    pub fn forward(&self, x: &[f64]) -> MlpTrace {
        let pre = self.hidden.forward(x);
        let act: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let logits = self.output.forward(&act);
        MlpTrace { pre, act, logits }
    }

    fn backward(&self, x: &[f64], trace: &MlpTrace, d_logits: &[f64], grad: &mut Mlp, d_x: &mut [f64]) {
        let mut d_act = vec![0.0; self.hidden.out_dim];
        self.output
            .backward(&trace.act, d_logits, &mut grad.output, Some(&mut d_act));
        for (d, &z) in d_act.iter_mut().zip(&trace.pre) {
            if z <= 0.0 {
                *d = 0.0;
            }
        }
        self.hidden.backward(x, &d_act, &mut grad.hidden, Some(d_x));
    }
}

/// Layer sizes shared by every architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    /// Fusion output width (ignored by `Baseline`, whose fusion emits N).
    pub fused: usize,
    /// Hidden width of every head.
    pub hidden: usize,
    pub n_actions: usize,
}

/// All trainable parameters. The same type doubles as a gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: ArchKind,
    pub dims: ModelDims,
    pub fusion: Dense,
    pub flat_head: Option<Mlp>,
    pub anchor_head: Option<Mlp>,
    /// One conditional head per anchor slot, `other` last (hierarchical).
    pub group_heads: Vec<Mlp>,
    /// Independent regular-action head (two-stream).
    pub regular_head: Option<Mlp>,
}

impl ModelParams {
    /// Zero-initialized parameters for `arch`. `groups` is required for
    /// architectures with an anchor head.
    pub fn zeros(dims: ModelDims, arch: ArchKind, groups: Option<&ActionGroups>) -> Result<Self> {
        let groups = match (arch.uses_groups(), groups) {
            (true, None) => {
                return Err(AcpError::contract(format!("{arch} needs action groups")))
            }
            (_, Some(g)) if g.n_actions() != dims.n_actions => {
                return Err(AcpError::contract(format!(
                    "groups cover {} actions, model predicts {}",
                    g.n_actions(),
                    dims.n_actions
                )))
            }
            (_, g) => g,
        };
        let h = dims.fused;
        let mlp = |out| Mlp::zeros(h, dims.hidden, out);
        let fusion = if arch == ArchKind::Baseline {
            Dense::zeros(dims.input, dims.n_actions)
        } else {
            Dense::zeros(dims.input, h)
        };
        let mut params = ModelParams {
            arch,
            dims,
            fusion,
            flat_head: None,
            anchor_head: None,
            group_heads: Vec::new(),
            regular_head: None,
        };
        match arch {
            ArchKind::Baseline => {}
            ArchKind::Modified => params.flat_head = Some(mlp(dims.n_actions)),
            ArchKind::MultiTask => {
                params.flat_head = Some(mlp(dims.n_actions));
                params.anchor_head = Some(mlp(groups.unwrap().n_slots()));
            }
            ArchKind::TwoStream => {
                let g = groups.unwrap();
                params.anchor_head = Some(mlp(g.n_slots()));
                params.regular_head = Some(mlp(g.regular().len()));
            }
            ArchKind::Hierarchical => {
                let g = groups.unwrap();
                params.anchor_head = Some(mlp(g.n_slots()));
                params.group_heads = (0..g.n_slots()).map(|_| mlp(g.regular().len())).collect();
            }
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Every affine layer with a stable dotted name, in serialization order.
    pub fn layers(&self) -> Vec<(String, &Dense)> {
        let mut heads: Vec<(String, &Mlp)> = Vec::new();
        if let Some(m) = &self.flat_head {
            heads.push(("flat_head".into(), m));
        }
        if let Some(m) = &self.anchor_head {
            heads.push(("anchor_head".into(), m));
        }
        for (s, m) in self.group_heads.iter().enumerate() {
            heads.push((format!("group_heads.{s}"), m));
        }
        if let Some(m) = &self.regular_head {
            heads.push(("regular_head".into(), m));
        }
        let mut out = vec![("fusion".to_string(), &self.fusion)];
        for (name, m) in heads {
            out.push((format!("{name}.hidden"), &m.hidden));
            out.push((format!("{name}.output"), &m.output));
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut out = vec![&mut self.fusion];
        let heads = self
            .flat_head
            .iter_mut()
            .chain(self.anchor_head.iter_mut())
            .chain(self.group_heads.iter_mut())
            .chain(self.regular_head.iter_mut());
        for m in heads {
            out.push(&mut m.hidden);
            out.push(&mut m.output);
        }
        out
    }

    /// Weight then bias of every layer, in [`Self::layers`] order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        self.layers()
            .into_iter()
            .flat_map(|(name, d)| {
                [
                    (format!("{name}.weight"), vec![d.out_dim, d.in_dim], d.weight.as_slice()),
                    (format!("{name}.bias"), vec![d.out_dim], d.bias.as_slice()),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers_mut()
            .into_iter()
            .flat_map(|d| [&mut d.weight, &mut d.bias])
            .collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Adds `scale * other` element-wise.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src: Vec<Vec<f64>> = other.tensors().into_iter().map(|(_, _, t)| t.to_vec()).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn check_groups(&self, groups: Option<&ActionGroups>) -> Result<()> {
        if !self.arch.uses_groups() {
            return Ok(());
        }
        let g = groups.ok_or_else(|| AcpError::contract(format!("{} needs action groups", self.arch)))?;
        let anchor_out = self.anchor_head.as_ref().map_or(0, Mlp::out_dim);
        if anchor_out != g.n_slots() {
            return Err(AcpError::contract(format!(
                "anchor head has {anchor_out} outputs, groups have {} slots",
                g.n_slots()
            )));
        }
        if self.arch == ArchKind::Hierarchical {
            if self.group_heads.len() != g.n_slots() {
                return Err(AcpError::contract(format!(
                    "missing group head: {} heads for {} slots",
                    self.group_heads.len(),
                    g.n_slots()
                )));
            }
            if self.group_heads.iter().any(|m| m.out_dim() != g.regular().len()) {
                return Err(AcpError::contract("group head width differs from |R|"));
            }
        }
        if self.arch == ArchKind::TwoStream
            && self.regular_head.as_ref().map(Mlp::out_dim) != Some(g.regular().len())
        {
            return Err(AcpError::contract("regular head width differs from |R|"));
        }
        Ok(())
    }
}

/// Action probabilities with the optional auxiliaries.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionProbs {
    /// Â, length N.
    pub actions: Vec<f64>,
    /// Softmax over anchor slots, `other` last.
    pub anchor: Option<Vec<f64>>,
    /// Per-slot conditionals over regular positions, non-members zeroed.
    pub group_cond: Option<Vec<Vec<f64>>>,
}

/// Intermediate values needed by [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    fused: Vec<f64>,
    flat: Option<MlpTrace>,
    anchor: Option<MlpTrace>,
    groups: Vec<MlpTrace>,
    regular: Option<MlpTrace>,
    regular_probs: Vec<f64>,
    pub probs: ActionProbs,
}

impl ForwardTrace {
    /// Raw anchor-head logits, when the architecture has an anchor head.
    pub fn anchor_logits(&self) -> Option<&[f64]> {
        self.anchor.as_ref().map(|t| t.logits.as_slice())
    }
}

/// Â(a) = anchor(a) for anchors; for regular `j` the anchor-weighted sum of
/// group conditionals. `group_cond[s]` is indexed by regular position;
/// entries outside a group's membership are ignored.
pub fn compose_action_probs(anchor: &[f64], group_cond: &[Vec<f64>], groups: &ActionGroups) -> Vec<f64> {
    let mut out = vec![0.0; groups.n_actions()];
    for (s, &a) in groups.anchors().iter().enumerate() {
        out[a] = anchor[s];
    }
    for (p, &j) in groups.regular().iter().enumerate() {
        out[j] = (0..groups.n_slots())
            .filter(|&s| groups.member_mask(s)[p])
            .map(|s| anchor[s] * group_cond[s][p])
            .sum();
    }
    out
}

fn check_input(params: &ModelParams, x: &[f64]) -> Result<()> {
    if x.len() != params.dims.input {
        return Err(AcpError::contract(format!(
            "feature has dimension {}, model expects {}",
            x.len(),
            params.dims.input
        )));
    }
    Ok(())
}

/// Runs the active architecture on one feature vector.
pub fn forward(params: &ModelParams, x: &[f64], groups: Option<&ActionGroups>) -> Result<ForwardTrace> {
    check_input(params, x)?;
    params.check_groups(groups)?;
    let fused = params.fusion.forward(x);
    let mut trace = ForwardTrace {
        fused,
        flat: None,
        anchor: None,
        groups: Vec::new(),
        regular: None,
        regular_probs: Vec::new(),
        probs: ActionProbs {
            actions: Vec::new(),
            anchor: None,
            group_cond: None,
        },
    };
    match params.arch {
        ArchKind::Baseline => {
            trace.probs.actions = trace.fused.iter().map(|&z| sigmoid(z)).collect();
        }
        ArchKind::Modified | ArchKind::MultiTask => {
            let flat = params.flat_head.as_ref().expect("flat head").forward(&trace.fused);
            trace.probs.actions = flat.logits.iter().map(|&z| sigmoid(z)).collect();
            trace.flat = Some(flat);
            if let Some(head) = &params.anchor_head {
                let t = head.forward(&trace.fused);
                trace.probs.anchor = Some(softmax(&t.logits));
                trace.anchor = Some(t);
            }
        }
        ArchKind::TwoStream => {
            let g = groups.expect("checked");
            let at = params.anchor_head.as_ref().expect("anchor head").forward(&trace.fused);
            let rt = params.regular_head.as_ref().expect("regular head").forward(&trace.fused);
            let anchor = softmax(&at.logits);
            let reg: Vec<f64> = rt.logits.iter().map(|&z| sigmoid(z)).collect();
            let mut actions = vec![0.0; g.n_actions()];
            for (s, &a) in g.anchors().iter().enumerate() {
                actions[a] = anchor[s];
            }
            for (p, &j) in g.regular().iter().enumerate() {
                actions[j] = reg[p];
            }
            trace.probs.actions = actions;
            trace.probs.anchor = Some(anchor);
            trace.regular_probs = reg;
            trace.anchor = Some(at);
            trace.regular = Some(rt);
        }
        ArchKind::Hierarchical => {
            let g = groups.expect("checked");
            let at = params.anchor_head.as_ref().expect("anchor head").forward(&trace.fused);
            let anchor = softmax(&at.logits);
            let mut conds = Vec::with_capacity(g.n_slots());
            for (s, head) in params.group_heads.iter().enumerate() {
                let t = head.forward(&trace.fused);
                let mask = g.member_mask(s);
                conds.push(
                    t.logits
                        .iter()
                        .zip(mask)
                        .map(|(&z, &m)| if m { sigmoid(z) } else { 0.0 })
                        .collect::<Vec<f64>>(),
                );
                trace.groups.push(t);
            }
            trace.probs.actions = compose_action_probs(&anchor, &conds, g);
            trace.probs.anchor = Some(anchor);
            trace.probs.group_cond = Some(conds);
            trace.anchor = Some(at);
        }
    }
    Ok(trace)
}

/// Flat architectures only (`Baseline`, `Modified`).
pub fn forward_flat(params: &ModelParams, x: &[f64]) -> Result<ActionProbs> {
    match params.arch {
        ArchKind::Baseline | ArchKind::Modified => Ok(forward(params, x, None)?.probs),
        other => Err(AcpError::contract(format!("forward_flat called on {other} model"))),
    }
}

pub fn forward_hierarchical(params: &ModelParams, x: &[f64], groups: &ActionGroups) -> Result<ActionProbs> {
    if params.arch != ArchKind::Hierarchical {
        return Err(AcpError::contract(format!(
            "forward_hierarchical called on {} model",
            params.arch
        )));
    }
    Ok(forward(params, x, Some(groups))?.probs)
}

pub fn multitask_twostream_forward(
    params: &ModelParams,
    x: &[f64],
    groups: &ActionGroups,
) -> Result<ActionProbs> {
    match params.arch {
        ArchKind::MultiTask | ArchKind::TwoStream => Ok(forward(params, x, Some(groups))?.probs),
        other => Err(AcpError::contract(format!(
            "multitask_twostream_forward called on {other} model"
        ))),
    }
}

/// Loss gradient arriving at the model outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Upstream {
    /// dL/dÂ, length N.
    pub actions: Vec<f64>,
    /// dL/d(anchor logits) for an auxiliary anchor loss (multi-task).
    pub anchor_logits: Option<Vec<f64>>,
}

fn softmax_backward(p: &[f64], d_p: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(d_p).map(|(a, b)| a * b).sum();
    p.iter().zip(d_p).map(|(a, d)| a * (d - dot)).collect()
}

fn sigmoid_backward(s: &[f64], d_s: &[f64]) -> Vec<f64> {
    s.iter().zip(d_s).map(|(s, d)| d * s * (1.0 - s)).collect()
}

/// Accumulates dL/dθ into `grad` for one sample.
pub fn backward_into(
    params: &ModelParams,
    x: &[f64],
    groups: Option<&ActionGroups>,
    trace: &ForwardTrace,
    upstream: &Upstream,
    grad: &mut ModelParams,
) {
    let d_a = &upstream.actions;
    let probs = &trace.probs;
    let mut d_fused = vec![0.0; trace.fused.len()];
    match params.arch {
        ArchKind::Baseline => {
            d_fused = sigmoid_backward(&probs.actions, d_a);
        }
        ArchKind::Modified | ArchKind::MultiTask => {
            let d_logits = sigmoid_backward(&probs.actions, d_a);
            let head = params.flat_head.as_ref().expect("flat head");
            head.backward(
                &trace.fused,
                trace.flat.as_ref().expect("flat trace"),
                &d_logits,
                grad.flat_head.as_mut().expect("flat grad"),
                &mut d_fused,
            );
            if let (Some(head), Some(d), Some(t)) =
                (&params.anchor_head, &upstream.anchor_logits, &trace.anchor)
            {
                head.backward(&trace.fused, t, d, grad.anchor_head.as_mut().expect("anchor grad"), &mut d_fused);
            }
        }
        ArchKind::TwoStream => {
            let g = groups.expect("two-stream needs groups");
            let anchor = probs.anchor.as_ref().expect("anchor probs");
            let mut d_anchor = vec![0.0; g.n_slots()];
            for (s, &a) in g.anchors().iter().enumerate() {
                d_anchor[s] = d_a[a];
            }
            let mut d_anchor_logits = softmax_backward(anchor, &d_anchor);
            if let Some(extra) = &upstream.anchor_logits {
                d_anchor_logits.iter_mut().zip(extra).for_each(|(d, e)| *d += e);
            }
            params.anchor_head.as_ref().expect("anchor head").backward(
                &trace.fused,
                trace.anchor.as_ref().expect("anchor trace"),
                &d_anchor_logits,
                grad.anchor_head.as_mut().expect("anchor grad"),
                &mut d_fused,
            );
            let d_reg: Vec<f64> = g.regular().iter().map(|&j| d_a[j]).collect();
            let d_reg_logits = sigmoid_backward(&trace.regular_probs, &d_reg);
            params.regular_head.as_ref().expect("regular head").backward(
                &trace.fused,
                trace.regular.as_ref().expect("regular trace"),
                &d_reg_logits,
                grad.regular_head.as_mut().expect("regular grad"),
                &mut d_fused,
            );
        }
        ArchKind::Hierarchical => {
            let g = groups.expect("hierarchical needs groups");
            let anchor = probs.anchor.as_ref().expect("anchor probs");
            let conds = probs.group_cond.as_ref().expect("group conditionals");
            let mut d_anchor = vec![0.0; g.n_slots()];
            for (s, &a) in g.anchors().iter().enumerate() {
                d_anchor[s] = d_a[a];
            }
            for s in 0..g.n_slots() {
                let mask = g.member_mask(s);
                let mut d_cond = vec![0.0; g.regular().len()];
                for (p, &j) in g.regular().iter().enumerate() {
                    if mask[p] {
                        d_anchor[s] += d_a[j] * conds[s][p];
                        d_cond[p] = d_a[j] * anchor[s];
                    }
                }
                let d_logits = sigmoid_backward(&conds[s], &d_cond);
                params.group_heads[s].backward(
                    &trace.fused,
                    &trace.groups[s],
                    &d_logits,
                    &mut grad.group_heads[s],
                    &mut d_fused,
                );
            }
            let mut d_anchor_logits = softmax_backward(anchor, &d_anchor);
            if let Some(extra) = &upstream.anchor_logits {
                d_anchor_logits.iter_mut().zip(extra).for_each(|(d, e)| *d += e);
            }
            params.anchor_head.as_ref().expect("anchor head").backward(
                &trace.fused,
                trace.anchor.as_ref().expect("anchor trace"),
                &d_anchor_logits,
                grad.anchor_head.as_mut().expect("anchor grad"),
                &mut d_fused,
            );
        }
    }
    params.fusion.backward(x, &d_fused, &mut grad.fusion, None);
}

/// Exact parameter gradient of the composed mapping for one sample.
pub fn backward(
    params: &ModelParams,
    x: &[f64],
    groups: Option<&ActionGroups>,
    trace: &ForwardTrace,
    upstream: &Upstream,
) -> ModelParams {
    let mut grad = params.zeros_like();
    backward_into(params, x, groups, trace, upstream, &mut grad);
    grad
}

#[cfg(test)]
pub(crate) mod testing {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::cooc::build_cooc;
    use crate::corpus::ActionSet;

    /// Groups over 6 actions: anchors 0 and 1, regulars 2..6 with 2 shared by
    /// both anchors, 3 only with anchor 0, 4 only with anchor 1 and 5 only in
    /// anchor-free images.
    pub fn small_groups() -> ActionGroups {
        let sets: Vec<ActionSet> = vec![
            [0, 2, 3].into(),
            [0, 2].into(),
            [1, 2, 4].into(),
            [1].into(),
            [5].into(),
        ];
        let pair = build_cooc(&sets, 6).unwrap();
        crate::anchors::build_groups_from_sets(&pair, &[0, 1], &sets, 0.0).unwrap()
    }

    pub fn random_params(arch: ArchKind, dims: ModelDims, groups: &ActionGroups, seed: u64) -> ModelParams {
        let mut p = ModelParams::zeros(dims, arch, Some(groups)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        p
    }

    pub fn random_vec(rng: &mut impl Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }
}
