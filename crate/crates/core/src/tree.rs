//! Marked Ulam-Harris trees.
//!
//! Node `u` carries a size `ξ_u`, a birth time `a_u` and a lifetime
//! `ζ_u = ξ_u^{-α} e_u` with `e_u` a unit exponential. When `u` dies its
//! daughters are born at `a_u + ζ_u` with sizes `ξ_u` times an independent
//! draw of the reproduction law. Zero-size daughters are never stored.
//!
//! Trees grow lazily. All randomness attached to a node comes from a stream
//! keyed by `(seed, label)`, so a tree is the same whatever order (or how far)
//! it is grown in.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::FinitePointMeasure;
use crate::replaw::ReproductionLaw;
use crate::streams;

pub const DEFAULT_NODE_CAP: usize = 10_000_000;

const LIFETIME_TAG: u64 = 0x6c69_6665;
const REPRODUCTION_TAG: u64 = 0x7265_7072;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error(
        "node cap {cap} exceeded with {nodes} nodes realized \
         (complete through time {complete_time}, generation {complete_generation})"
    )]
    CapExceeded {
        cap: usize,
        nodes: usize,
        complete_time: f64,
        complete_generation: usize,
    },
    #[error("tree not grown far enough: {0}")]
    NotGrown(String),
    #[error("invalid line: {0}")]
    InvalidLine(String),
    #[error("invalid tree parameter: {0}")]
    InvalidParameter(String),
}

/// Ulam-Harris label: the path of 1-based daughter indices from the root.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeLabel(Vec<u32>);

impl NodeLabel {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn child(&self, i: u32) -> Self {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.extend_from_slice(&self.0);
        v.push(i);
        Self(v)
    }

    /// The mother's label; `None` for the root.
    pub fn parent(&self) -> Option<Self> {
        (!self.0.is_empty()).then(|| Self(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn generation(&self) -> usize {
        self.0.len()
    }

    /// `self ⪯ other`.
    pub fn is_prefix_of(&self, other: &Self) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn path(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for NodeLabel {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

impl fmt::Debug for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// An antichain of labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Line {
    labels: BTreeSet<NodeLabel>,
}

impl Line {
    pub fn new<I: IntoIterator<Item = NodeLabel>>(labels: I) -> Result<Self, TreeError> {
        let labels: BTreeSet<NodeLabel> = labels.into_iter().collect();
        // in lexicographic order a prefix is immediately followed by one of
        // its extensions, so adjacent pairs suffice
        let v: Vec<&NodeLabel> = labels.iter().collect();
        for w in v.windows(2) {
            if w[0].is_prefix_of(w[1]) {
                return Err(TreeError::InvalidLine(format!(
                    "{:?} is an ancestor of {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> impl Iterator<Item = &NodeLabel> {
        self.labels.iter()
    }

    pub fn contains(&self, label: &NodeLabel) -> bool {
        self.labels.contains(label)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn max_generation(&self) -> Option<usize> {
        self.labels.iter().map(NodeLabel::generation).max()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MarkedNode {
    pub label: NodeLabel,
    pub size: f64,
    pub birth: f64,
    pub lifetime: f64,
    #[serde(skip)]
    children: Option<(usize, usize)>,
}

impl MarkedNode {
    pub fn death(&self) -> f64 {
        self.birth + self.lifetime
    }

    pub fn is_alive_at(&self, t: f64) -> bool {
        self.birth <= t && t < self.death()
    }

    /// Whether the daughters of this node have been realized.
    pub fn is_expanded(&self) -> bool {
        self.children.is_some()
    }

    pub fn child_count(&self) -> Option<usize> {
        self.children.map(|(a, b)| b - a)
    }
}

/// Growth parameters shared by every node of a tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub alpha: f64,
    pub root_size: f64,
    pub seed: u64,
    pub cap: usize,
}

impl TreeParams {
    pub fn new(alpha: f64, root_size: f64, seed: u64) -> Self {
        Self {
            alpha,
            root_size,
            seed,
            cap: DEFAULT_NODE_CAP,
        }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }
}

#[derive(Debug, Clone)]
pub struct MarkedTree {
    params: TreeParams,
    law: Arc<ReproductionLaw>,
    nodes: Vec<MarkedNode>,
    scratch: Vec<f64>,
}

#[derive(PartialEq)]
struct ByDeath(f64, usize);

impl Eq for ByDeath {}

impl PartialOrd for ByDeath {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ByDeath {
    // reversed: BinaryHeap pops the earliest death first
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl MarkedTree {
    /// A tree holding only its root.
    pub fn new(law: Arc<ReproductionLaw>, params: TreeParams) -> Result<Self, TreeError> {
        if !(params.root_size > 0.0) || !params.root_size.is_finite() {
            return Err(TreeError::InvalidParameter(format!(
                "root size {} must be > 0",
                params.root_size
            )));
        }
        if !(params.alpha >= 0.0) || !params.alpha.is_finite() {
            return Err(TreeError::InvalidParameter(format!(
                "alpha {} must be >= 0",
                params.alpha
            )));
        }
        if params.cap == 0 {
            return Err(TreeError::InvalidParameter("node cap must be > 0".into()));
        }
        let mut rng = streams::stream(streams::derive(params.seed, LIFETIME_TAG, &[]));
        let e: f64 = Exp1.sample(&mut rng);
        let root = MarkedNode {
            label: NodeLabel::root(),
            size: params.root_size,
            birth: 0.0,
            lifetime: params.root_size.powf(-params.alpha) * e,
            children: None,
        };
        Ok(Self {
            params,
            law,
            nodes: vec![root],
            scratch: Vec::new(),
        })
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha
    }

    pub fn law(&self) -> &ReproductionLaw {
        &self.law
    }

    pub fn nodes(&self) -> &[MarkedNode] {
        &self.nodes
    }

    pub fn root(&self) -> &MarkedNode {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Daughters of node `idx`, if realized.
    pub fn children(&self, idx: usize) -> Option<&[MarkedNode]> {
        self.nodes[idx].children.map(|(a, b)| &self.nodes[a..b])
    }

    fn expand(&mut self, idx: usize) -> Result<(), TreeError> {
        if self.nodes[idx].children.is_some() {
            return Ok(());
        }
        let (size, death) = (self.nodes[idx].size, self.nodes[idx].death());
        let label = self.nodes[idx].label.clone();
        let mut rng = streams::stream(streams::derive(
            self.params.seed,
            REPRODUCTION_TAG,
            label.path(),
        ));
        let mut rel = std::mem::take(&mut self.scratch);
        self.law.sample_into(&mut rng, &mut rel);
        if self.nodes.len() + rel.len() > self.params.cap {
            self.scratch = rel;
            return Err(TreeError::CapExceeded {
                cap: self.params.cap,
                nodes: self.nodes.len(),
                complete_time: self.time_horizon(),
                complete_generation: self.complete_generation(),
            });
        }
        let start = self.nodes.len();
        let mut k = 0u32;
        for &r in &rel {
            let child_size = r * size;
            // a daughter of zero size (after underflow) is dead
            if !(child_size > 0.0) {
                continue;
            }
            k += 1;
            let e: f64 = Exp1.sample(&mut rng);
            self.nodes.push(MarkedNode {
                label: label.child(k),
                size: child_size,
                birth: death,
                lifetime: child_size.powf(-self.params.alpha) * e,
                children: None,
            });
        }
        self.scratch = rel;
        self.nodes[idx].children = Some((start, self.nodes.len()));
        Ok(())
    }

    /// Realizes every node of generation `<= n`.
    pub fn extend_to_generation(&mut self, n: usize) -> Result<(), TreeError> {
        let mut i = 0;
        while i < self.nodes.len() {
            if self.nodes[i].label.generation() < n && !self.nodes[i].is_expanded() {
                self.expand(i)?;
            }
            i += 1;
        }
        Ok(())
    }

    /// Realizes every node born at or before `horizon`, in order of birth.
    pub fn extend_to_time(&mut self, horizon: f64) -> Result<(), TreeError> {
        if !(horizon >= 0.0) {
            return Err(TreeError::InvalidParameter(format!("horizon {horizon} < 0")));
        }
        let mut heap: BinaryHeap<ByDeath> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.is_expanded() && n.death() <= horizon)
            .map(|(i, n)| ByDeath(n.death(), i))
            .collect();
        while let Some(ByDeath(_, idx)) = heap.pop() {
            self.expand(idx)?;
            let (a, b) = self.nodes[idx].children.expect("just expanded");
            for j in a..b {
                if self.nodes[j].death() <= horizon {
                    heap.push(ByDeath(self.nodes[j].death(), j));
                }
            }
        }
        Ok(())
    }

    /// Supremum of the times at which the population is fully realized:
    /// `X(t)` can be read for every `t` strictly below this value.
    pub fn time_horizon(&self) -> f64 {
        self.nodes
            .iter()
            .filter(|n| !n.is_expanded())
            .map(MarkedNode::death)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `n` such that generation `n` is fully realized
    /// (`usize::MAX` once every lineage has died out).
    pub fn complete_generation(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !n.is_expanded())
            .map(|n| n.label.generation())
            .min()
            .unwrap_or(usize::MAX)
    }

    fn require_time(&self, t: f64) -> Result<(), TreeError> {
        let h = self.time_horizon();
        if !(t >= 0.0) || t >= h {
            return Err(TreeError::NotGrown(format!(
                "time {t} is outside the realized window [0, {h})"
            )));
        }
        Ok(())
    }

    fn require_generation(&self, n: usize) -> Result<(), TreeError> {
        let g = self.complete_generation();
        if n > g {
            return Err(TreeError::NotGrown(format!(
                "generation {n} requested, complete through {g}"
            )));
        }
        Ok(())
    }

    /// Nodes alive at time `t`, i.e. the optional line `τ_t`.
    pub fn alive_at(&self, t: f64) -> Result<impl Iterator<Item = &MarkedNode>, TreeError> {
        self.require_time(t)?;
        Ok(self.nodes.iter().filter(move |n| n.is_alive_at(t)))
    }

    /// `X(t)`: the sizes of the individuals alive at `t`.
    pub fn snapshot(&self, t: f64) -> Result<FinitePointMeasure, TreeError> {
        Ok(self.alive_at(t)?.map(|n| n.size).collect())
    }

    /// The line of individuals alive at `t`.
    pub fn alive_line(&self, t: f64) -> Result<Line, TreeError> {
        Line::new(self.alive_at(t)?.map(|n| n.label.clone()))
    }

    pub fn generation(&self, n: usize) -> Result<impl Iterator<Item = &MarkedNode>, TreeError> {
        self.require_generation(n)?;
        Ok(self.nodes.iter().filter(move |x| x.label.generation() == n))
    }

    /// Number of individuals in generation `n` (the Galton-Watson process).
    pub fn generation_size(&self, n: usize) -> Result<usize, TreeError> {
        Ok(self.generation(n)?.count())
    }

    /// `Σ_{|u|=n} ξ_u^p`.
    pub fn power_sum_generation(&self, p: f64, n: usize) -> Result<f64, TreeError> {
        Ok(self.generation(n)?.map(|x| x.size.powf(p)).sum())
    }

    /// The intrinsic martingale `M_n` (pass the Malthusian exponent as `p0`).
    pub fn intrinsic_martingale_gen(&self, p0: f64, n: usize) -> Result<f64, TreeError> {
        self.power_sum_generation(p0, n)
    }

    /// `M(t) = <x^p0, X(t)>`.
    pub fn intrinsic_martingale_time(&self, p0: f64, t: f64) -> Result<f64, TreeError> {
        Ok(self.snapshot(t)?.power_mass(p0))
    }

    /// Whether generation `n` is empty.
    pub fn is_extinct_by(&self, n: usize) -> Result<bool, TreeError> {
        Ok(self.generation(n)?.next().is_none())
    }

    /// Resolves a label. `Ok(None)` means the label is a dead position (beyond
    /// its mother's daughter count); an unexpanded ancestor is an error.
    pub fn find(&self, label: &NodeLabel) -> Result<Option<&MarkedNode>, TreeError> {
        let mut idx = 0;
        for &i in label.path() {
            let Some((a, b)) = self.nodes[idx].children else {
                return Err(TreeError::NotGrown(format!(
                    "ancestor {:?} of {:?} has unrealized daughters",
                    self.nodes[idx].label, label
                )));
            };
            let i = i as usize;
            if i == 0 || a + i > b {
                return Ok(None);
            }
            idx = a + i - 1;
        }
        Ok(Some(&self.nodes[idx]))
    }

    /// `M_Q = Σ_{u∈Q} ξ_u^p`; dead positions contribute zero.
    pub fn line_mass(&self, line: &Line, p: f64) -> Result<f64, TreeError> {
        let mut total = 0.0;
        for label in line.labels() {
            if let Some(n) = self.find(label)? {
                total += n.size.powf(p);
            }
        }
        Ok(total)
    }

    /// Whether every lineage of the realized tree that has not died out meets
    /// `line` no later than the line's deepest generation.
    pub fn is_covering(&self, line: &Line) -> Result<bool, TreeError> {
        let Some(depth) = line.max_generation() else {
            return Ok(false);
        };
        let mut stack = vec![0usize];
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx];
            if line.contains(&node.label) {
                continue;
            }
            if node.label.generation() >= depth {
                return Ok(false);
            }
            match node.children {
                None => {
                    return Err(TreeError::NotGrown(format!(
                        "lineage through {:?} not realized",
                        node.label
                    )))
                }
                Some((a, b)) => stack.extend(a..b),
            }
        }
        Ok(true)
    }

    /// Writes one JSON object per node.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for n in &self.nodes {
            serde_json::to_writer(&mut out, n)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Grows a tree from a root of size `params.root_size` until every node of
/// generation `<= n` is realized.
pub fn grow_to_generation(
    law: Arc<ReproductionLaw>,
    params: TreeParams,
    n: usize,
) -> Result<MarkedTree, TreeError> {
    let mut tree = MarkedTree::new(law, params)?;
    tree.extend_to_generation(n)?;
    Ok(tree)
}

/// Grows a tree until every node born at or before `horizon` is realized.
pub fn grow_to_time(
    law: Arc<ReproductionLaw>,
    params: TreeParams,
    horizon: f64,
) -> Result<MarkedTree, TreeError> {
    let mut tree = MarkedTree::new(law, params)?;
    tree.extend_to_time(horizon)?;
    Ok(tree)
}

/// `X(t)` for a population started from the atoms of `start` (each atom
/// founding an independent tree), read at time `t`.
pub fn snapshot_from(
    start: &FinitePointMeasure,
    law: &Arc<ReproductionLaw>,
    alpha: f64,
    t: f64,
    seed: u64,
    cap: usize,
) -> Result<FinitePointMeasure, TreeError> {
    let mut out = FinitePointMeasure::empty();
    for (i, &y) in start.atoms().iter().enumerate() {
        let params = TreeParams {
            alpha,
            root_size: y,
            seed: streams::replica_seed(seed, 0x666f_7265, i),
            cap,
        };
        let tree = grow_to_time(law.clone(), params, t)?;
        out = out.union(&tree.snapshot(t)?);
    }
    Ok(out)
}

/// Writes `t,atom` rows for each time in `times`.
pub fn write_snapshot_csv<W: Write>(tree: &MarkedTree, times: &[f64], mut out: W) -> io::Result<()> {
    writeln!(out, "t,atom")?;
    for &t in times {
        let snap = tree
            .snapshot(t)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        for a in snap.atoms() {
            writeln!(out, "{t},{a}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replaw::SolverConfig;

    fn law(l: ReproductionLaw) -> Arc<ReproductionLaw> {
        Arc::new(l)
    }

    fn extinction() -> ReproductionLaw {
        ReproductionLaw::discrete(vec![(0.75, vec![0.6, 0.6]), (0.25, vec![])]).unwrap()
    }

    fn mixed() -> ReproductionLaw {
        ReproductionLaw::discrete(vec![(0.2, vec![1.3, 0.5]), (0.8, vec![0.4])]).unwrap()
    }

    fn label(v: &[u32]) -> NodeLabel {
        NodeLabel::from(v.to_vec())
    }

    #[test]
    fn labels() {
        let u = label(&[1, 2]);
        assert_eq!(u.generation(), 2);
        assert_eq!(u.parent(), Some(label(&[1])));
        assert!(label(&[1]).is_prefix_of(&u));
        assert!(NodeLabel::root().is_prefix_of(&u));
        assert!(!label(&[2]).is_prefix_of(&u));
        assert_eq!(NodeLabel::root().parent(), None);
    }

    #[test]
    fn deterministic_cascade() {
        let t = grow_to_generation(
            law(ReproductionLaw::DeterministicBinary),
            TreeParams::new(1.0, 1.0, 3),
            2,
        )
        .unwrap();
        let gen2: Vec<f64> = t.generation(2).unwrap().map(|n| n.size).collect();
        assert_eq!(gen2, vec![0.25; 4]);
        assert_eq!(t.intrinsic_martingale_gen(1.0, 2).unwrap(), 1.0);
        assert_eq!(t.len(), 7);
    }

    #[test]
    fn structural_invariants() {
        let t = grow_to_generation(law(mixed()), TreeParams::new(1.0, 2.0, 9), 6).unwrap();
        for (i, n) in t.nodes().iter().enumerate() {
            if let Some(kids) = t.children(i) {
                for (j, c) in kids.iter().enumerate() {
                    assert_eq!(c.birth, n.death());
                    assert_eq!(c.label, n.label.child(j as u32 + 1));
                    assert_eq!(t.find(&c.label).unwrap().unwrap().size, c.size);
                }
            }
            assert!(n.lifetime > 0.0);
        }
        assert_eq!(t.root().birth, 0.0);
    }

    #[test]
    fn root_only_cases() {
        let p0 = 0.7;
        for l in [ReproductionLaw::UniformBinary, mixed()] {
            let t = grow_to_generation(law(l), TreeParams::new(1.0, 3.0, 1), 0).unwrap();
            assert_eq!(t.len(), 1);
            assert_eq!(t.intrinsic_martingale_gen(p0, 0).unwrap(), 3.0f64.powf(p0));
            assert_eq!(t.snapshot(0.0).unwrap().atoms(), &[3.0]);
            assert_eq!(t.intrinsic_martingale_time(p0, 0.0).unwrap(), 3.0f64.powf(p0));
        }
        let dead = ReproductionLaw::discrete(vec![(1.0, vec![])]).unwrap();
        let t = grow_to_time(law(dead), TreeParams::new(1.0, 1.0, 2), 100.0).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.snapshot(50.0).unwrap().is_empty());
    }

    #[test]
    fn growth_order_does_not_matter() {
        let l = law(mixed());
        let p = TreeParams::new(1.0, 1.0, 77);
        let a = grow_to_time(l.clone(), p, 8.0).unwrap();
        let mut b = grow_to_generation(l.clone(), p, 3).unwrap();
        b.extend_to_time(8.0).unwrap();
        for t in [0.5, 2.0, 7.9] {
            assert_eq!(a.snapshot(t).unwrap(), b.snapshot(t).unwrap());
        }
    }

    #[test]
    fn snapshot_horizon_is_enforced() {
        let t = grow_to_time(law(ReproductionLaw::UniformBinary), TreeParams::new(1.0, 1.0, 5), 2.0)
            .unwrap();
        assert!(t.snapshot(2.0).is_ok());
        assert!(t.time_horizon() > 2.0);
        assert!(matches!(t.snapshot(t.time_horizon()), Err(TreeError::NotGrown(_))));
        let g = grow_to_generation(law(ReproductionLaw::UniformBinary), TreeParams::new(1.0, 1.0, 5), 3)
            .unwrap();
        assert!(g.intrinsic_martingale_gen(1.0, 4).is_err());
    }

    #[test]
    fn conservative_split_keeps_unit_mass() {
        let l = law(ReproductionLaw::DeterministicBinary);
        for seed in 0..20 {
            let t = grow_to_time(l.clone(), TreeParams::new(1.0, 1.0, seed), 6.0).unwrap();
            for k in 0..=60 {
                let m = t.intrinsic_martingale_time(1.0, 0.1 * k as f64).unwrap();
                assert_eq!(m, 1.0);
            }
        }
    }

    #[test]
    fn alive_line_is_an_optional_covering_line() {
        let t = grow_to_time(law(mixed()), TreeParams::new(1.0, 1.0, 4), 3.0).unwrap();
        let tau = t.alive_line(2.5).unwrap();
        let snap = t.snapshot(2.5).unwrap();
        assert_eq!(tau.len(), snap.count());
        assert!(t.is_covering(&tau).unwrap());
        let m = t.line_mass(&tau, 0.3).unwrap();
        assert!((m - snap.power_mass(0.3)).abs() < 1e-12);
    }

    #[test]
    fn lines_and_covering() {
        let t = grow_to_generation(law(ReproductionLaw::UniformBinary), TreeParams::new(1.0, 1.0, 8), 3)
            .unwrap();
        assert!(Line::new([label(&[1]), label(&[1, 2])]).is_err());
        let gen2 = Line::new(t.generation(2).unwrap().map(|n| n.label.clone())).unwrap();
        assert!(t.is_covering(&gen2).unwrap());
        assert_eq!(
            t.line_mass(&gen2, 1.0).unwrap(),
            t.intrinsic_martingale_gen(1.0, 2).unwrap()
        );
        let partial = Line::new([label(&[1, 1]), label(&[1, 2]), label(&[2, 1])]).unwrap();
        assert!(!t.is_covering(&partial).unwrap());
        let mixed_gen = Line::new([label(&[1, 1]), label(&[1, 2]), label(&[2])]).unwrap();
        assert!(t.is_covering(&mixed_gen).unwrap());
        assert!((t.line_mass(&mixed_gen, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let root = Line::new([NodeLabel::root()]).unwrap();
        assert_eq!(t.line_mass(&root, 0.5).unwrap(), 1.0);
        let deep = Line::new([label(&[1, 1, 1, 1, 1])]).unwrap();
        assert!(t.line_mass(&deep, 1.0).is_err());
    }

    #[test]
    fn dead_positions_contribute_zero() {
        // mixed law: single-daughter draws leave position 2 dead
        let t = grow_to_generation(law(mixed()), TreeParams::new(1.0, 1.0, 1), 1).unwrap();
        let q = Line::new([label(&[1]), label(&[2]), label(&[3])]).unwrap();
        let m = t.line_mass(&q, 0.5).unwrap();
        assert!((m - t.intrinsic_martingale_gen(0.5, 1).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn extinct_lineages_are_ignored_by_covering() {
        let l = law(extinction());
        let mut checked = 0;
        for seed in 0..200 {
            let t = grow_to_generation(l.clone(), TreeParams::new(1.0, 1.0, seed), 4).unwrap();
            if t.generation_size(4).unwrap() == 0 {
                continue;
            }
            let gen4 = Line::new(t.generation(4).unwrap().map(|n| n.label.clone())).unwrap();
            assert!(t.is_covering(&gen4).unwrap());
            // dropping one surviving node breaks it
            let mut labels: Vec<NodeLabel> = gen4.labels().cloned().collect();
            labels.pop();
            assert!(!t.is_covering(&Line::new(labels).unwrap()).unwrap());
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn cap_exceeded_is_an_error() {
        let err = grow_to_generation(
            law(ReproductionLaw::DeterministicBinary),
            TreeParams::new(0.0, 1.0, 1).with_cap(100),
            10,
        )
        .unwrap_err();
        assert!(matches!(err, TreeError::CapExceeded { cap: 100, .. }));
    }

    #[test]
    fn zero_horizon_and_extinction_snapshot() {
        let t = grow_to_time(law(mixed()), TreeParams::new(1.0, 1.5, 3), 0.0).unwrap();
        assert_eq!(t.snapshot(0.0).unwrap().atoms(), &[1.5]);
        let l = law(extinction());
        let dead = (0..100)
            .map(|s| grow_to_generation(l.clone(), TreeParams::new(1.0, 1.0, s), 30).unwrap())
            .find(|t| t.complete_generation() == usize::MAX)
            .expect("some tree dies out");
        assert!(dead.snapshot(1e6).unwrap().is_empty());
    }

    #[test]
    fn martingale_mean_is_one_for_small_sample() {
        let l = law(mixed());
        let p0 = mixed().malthusian_exponent(&SolverConfig::default()).unwrap();
        let xs: Vec<f64> = (0..2000)
            .map(|s| {
                grow_to_generation(l.clone(), TreeParams::new(1.0, 1.0, s), 4)
                    .unwrap()
                    .intrinsic_martingale_gen(p0, 4)
                    .unwrap()
            })
            .collect();
        let est = crate::replaw::Estimate::from_samples(&xs);
        assert!((est.mean - 1.0).abs() < 4.0 * est.std_err);
    }

    #[test]
    fn jsonl_export() {
        let t = grow_to_generation(law(ReproductionLaw::DeterministicBinary), TreeParams::new(1.0, 1.0, 1), 1)
            .unwrap();
        let mut buf = Vec::new();
        t.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(v["label"], serde_json::json!([1]));
        assert_eq!(v["size"], serde_json::json!(0.5));
        assert!(v["birth"].as_f64().unwrap() > 0.0);
        assert!(v["lifetime"].as_f64().unwrap() > 0.0);
        let mut csv = Vec::new();
        write_snapshot_csv(&t, &[0.0], &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "t,atom\n0,1\n");
    }
}
