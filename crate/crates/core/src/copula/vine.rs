//! Regular vines: sequential maximum-spanning-tree selection on |tau|, and
//! (inverse) Rosenblatt transforms.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bicop::{fit_bicop_with, BicopFamily, BicopModel};
use super::kendall::kendall_tau;
use crate::error::{Error, Result};
use crate::rng;

pub const MIN_VINE_OBS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VineEdge {
    /// The pair coupled by this edge; the copula is of `(first, second)`.
    pub conditioned: [usize; 2],
    /// Sorted conditioning variables.
    pub conditioning: Vec<usize>,
    pub copula: BicopModel,
    /// Empirical tau of the (pseudo-)data the edge was fitted on.
    #[serde(with = "crate::serde_util::nullable_f64")]
    pub tau: f64,
}

impl VineEdge {
    fn mask(&self) -> u64 {
        let mut m = (1u64 << self.conditioned[0]) | (1u64 << self.conditioned[1]);
        for v in &self.conditioning {
            m |= 1u64 << v;
        }
        m
    }

    /// Copula with `x` as its first argument.
    fn copula_for(&self, x: usize) -> BicopModel {
        if self.conditioned[0] == x {
            self.copula.clone()
        } else {
            self.copula.transposed()
        }
    }

    fn partner(&self, x: usize) -> usize {
        if self.conditioned[0] == x {
            self.conditioned[1]
        } else {
            self.conditioned[0]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvineModel {
    pub dim: usize,
    /// `trees[k]` holds the `dim - 1 - k` edges of tree `k + 1`.
    pub trees: Vec<Vec<VineEdge>>,
    /// Peeling order used by the Rosenblatt transforms: `order[0]` is
    /// conditioned on all other variables, the last entry on none.
    pub order: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct VineOptions {
    pub families: Vec<BicopFamily>,
    /// Level of the tau independence pre-test applied on every edge.
    pub indep_test_level: Option<f64>,
    /// Smallest accepted sample size.
    pub min_obs: usize,
}

impl VineOptions {
    pub fn new(families: Vec<BicopFamily>) -> Self {
        VineOptions { families, indep_test_level: Some(0.05), min_obs: MIN_VINE_OBS }
    }
}

/// Node of the tree under construction: an edge of the previous tree (or a
/// variable for the first tree) with its exposed conditional pseudo-data.
struct Node {
    mask: u64,
    /// `(var, F(var | rest of mask))`
    exposed: Vec<(usize, Vec<f64>)>,
    /// Indices of the nodes it joined in the previous tree.
    children: [usize; 2],
}

fn data_of(node: &Node, var: usize) -> &[f64] {
    &node.exposed.iter().find(|(v, _)| *v == var).expect("exposed variable").1
}

fn union_find_root(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

pub fn fit_rvine(u: &DMatrix<f64>, families: &[BicopFamily]) -> Result<RvineModel> {
    fit_rvine_with(u, &VineOptions::new(families.to_vec()))
}

pub fn fit_rvine_with(u: &DMatrix<f64>, opts: &VineOptions) -> Result<RvineModel> {
    let (n, d) = u.shape();
    if d < 2 || d > 63 {
        return Err(Error::invalid("R-vine needs between 2 and 63 variables"));
    }
    if n < opts.min_obs.max(30) {
        return Err(Error::invalid(format!("R-vine fit needs at least {} rows, got {n}", opts.min_obs.max(30))));
    }
    if u.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
        return Err(Error::invalid("copula data must lie in (0, 1)"));
    }
    let mut nodes: Vec<Node> = (0..d)
        .map(|j| Node { mask: 1 << j, exposed: vec![(j, u.column(j).iter().copied().collect())], children: [j, j] })
        .collect();
    let mut trees = Vec::with_capacity(d - 1);
    for level in 0..d - 1 {
        // Candidate pairs: any pair in the first tree, otherwise pairs of
        // edges sharing a node (proximity condition).
        let mut cands = Vec::new();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                let ok = level == 0 || nodes[i].children.iter().any(|c| nodes[j].children.contains(c));
                if ok {
                    cands.push((i, j));
                }
            }
        }
        let exposed_var = |node: &Node, other: &Node| -> usize {
            let only = node.mask & !other.mask;
            debug_assert_eq!(only.count_ones(), 1);
            only.trailing_zeros() as usize
        };
        let weighted: Vec<(f64, usize, usize)> = cands
            .par_iter()
            .map(|&(i, j)| {
                let a = exposed_var(&nodes[i], &nodes[j]);
                let b = exposed_var(&nodes[j], &nodes[i]);
                let tau = kendall_tau(data_of(&nodes[i], a), data_of(&nodes[j], b)).unwrap_or(0.0);
                (tau, i, j)
            })
            .collect();
        let mut order: Vec<usize> = (0..weighted.len()).collect();
        order.sort_by(|&x, &y| {
            let (tx, ix, jx) = weighted[x];
            let (ty, iy, jy) = weighted[y];
            ty.abs().total_cmp(&tx.abs()).then((ix, jx).cmp(&(iy, jy)))
        });
        let mut parent: Vec<usize> = (0..nodes.len()).collect();
        let mut chosen = Vec::new();
        for k in order {
            let (tau, i, j) = weighted[k];
            let (ri, rj) = (union_find_root(&mut parent, i), union_find_root(&mut parent, j));
            if ri != rj {
                parent[ri] = rj;
                chosen.push((tau, i, j));
            }
        }
        if chosen.len() != nodes.len() - 1 {
            return Err(Error::Degenerate(format!("tree {} is not spanning", level + 1)));
        }
        chosen.sort_by_key(|&(_, i, j)| (i, j));
        let fitted: Vec<Result<(VineEdge, Node)>> = chosen
            .par_iter()
            .map(|&(tau, i, j)| {
                let a = exposed_var(&nodes[i], &nodes[j]);
                let b = exposed_var(&nodes[j], &nodes[i]);
                let (ua, ub) = (data_of(&nodes[i], a), data_of(&nodes[j], b));
                let cop = fit_bicop_with(ua, ub, &opts.families, opts.indep_test_level)?;
                let mask = nodes[i].mask | nodes[j].mask;
                let conditioning: Vec<usize> = (0..d).filter(|v| mask & (1 << v) != 0 && *v != a && *v != b).collect();
                let fa: Vec<f64> = ua.iter().zip(ub).map(|(x, y)| cop.hfunc1(*x, *y)).collect();
                let fb: Vec<f64> = ua.iter().zip(ub).map(|(x, y)| cop.hfunc2(*x, *y)).collect();
                let edge = VineEdge { conditioned: [a, b], conditioning, copula: cop, tau };
                Ok((edge, Node { mask, exposed: vec![(a, fa), (b, fb)], children: [i, j] }))
            })
            .collect();
        let mut edges = Vec::with_capacity(fitted.len());
        let mut next = Vec::with_capacity(fitted.len());
        for f in fitted {
            let (e, node) = f.map_err(|e| e.at_stage(format!("vine tree {}", level + 1)))?;
            edges.push(e);
            next.push(node);
        }
        trees.push(edges);
        nodes = next;
    }
    let mut model = RvineModel { dim: d, trees, order: Vec::new() };
    model.order = model.peel_order()?;
    Ok(model)
}

impl RvineModel {
    /// Build a model from explicit trees, checking the vine conditions and
    /// deriving the peeling order.
    pub fn from_trees(dim: usize, trees: Vec<Vec<VineEdge>>) -> Result<Self> {
        if !(2..=63).contains(&dim) {
            return Err(Error::invalid("vine dimension must be in 2..=63"));
        }
        let mut m = RvineModel { dim, trees, order: vec![] };
        m.validate()?;
        m.order = m.peel_order()?;
        Ok(m)
    }

    fn edge_index(&self) -> HashMap<u64, (usize, usize)> {
        let mut m = HashMap::new();
        for (k, tree) in self.trees.iter().enumerate() {
            for (i, e) in tree.iter().enumerate() {
                m.insert(e.mask(), (k, i));
            }
        }
        m
    }

    fn peel_order(&self) -> Result<Vec<usize>> {
        let index = self.edge_index();
        let mut remaining: u64 = if self.dim == 64 { u64::MAX } else { (1u64 << self.dim) - 1 };
        let mut order = Vec::with_capacity(self.dim);
        while remaining.count_ones() > 1 {
            let &(k, i) = index
                .get(&remaining)
                .ok_or_else(|| Error::Degenerate("vine has no edge for a peeling set".into()))?;
            let x = self.trees[k][i].conditioned[0];
            order.push(x);
            remaining &= !(1u64 << x);
        }
        order.push(remaining.trailing_zeros() as usize);
        Ok(order)
    }

    /// Edge counts, conditioning-set sizes and the proximity condition.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if self.trees.len() != d - 1 {
            return Err(Error::invalid("vine must have D - 1 trees"));
        }
        for (k, tree) in self.trees.iter().enumerate() {
            if tree.len() != d - 1 - k {
                return Err(Error::invalid(format!("tree {} has {} edges", k + 1, tree.len())));
            }
            for e in tree {
                if e.conditioning.len() != k {
                    return Err(Error::invalid("conditioning set size does not match tree level"));
                }
                if k > 0 {
                    // Both children (masks without one conditioned variable)
                    // must be edges of the previous tree.
                    let prev: Vec<u64> = self.trees[k - 1].iter().map(|p| p.mask()).collect();
                    for c in e.conditioned {
                        if !prev.contains(&(e.mask() & !(1u64 << c))) {
                            return Err(Error::invalid("proximity condition violated"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Evaluates `F(x | S)` column-wise with memoization.
struct CondEval<'a> {
    model: &'a RvineModel,
    index: HashMap<u64, (usize, usize)>,
    columns: Vec<Option<Vec<f64>>>,
    memo: HashMap<(usize, u64), Vec<f64>>,
}

impl<'a> CondEval<'a> {
    fn new(model: &'a RvineModel, columns: Vec<Option<Vec<f64>>>) -> Self {
        CondEval { model, index: model.edge_index(), columns, memo: HashMap::new() }
    }

    fn edge(&self, mask: u64) -> &'a VineEdge {
        let &(k, i) = self.index.get(&mask).expect("edge for conditioning set");
        &self.model.trees[k][i]
    }

    fn cond(&mut self, x: usize, set: u64) -> Vec<f64> {
        if set == 0 {
            return self.columns[x].clone().expect("column available");
        }
        if let Some(v) = self.memo.get(&(x, set)) {
            return v.clone();
        }
        let e = self.edge(set | (1u64 << x));
        let y = e.partner(x);
        let cop = e.copula_for(x);
        let rest = set & !(1u64 << y);
        let a = self.cond(x, rest);
        let b = self.cond(y, rest);
        let out: Vec<f64> = a.iter().zip(&b).map(|(p, q)| cop.hfunc1(*p, *q)).collect();
        self.memo.insert((x, set), out.clone());
        out
    }

    /// Solve `F(x | set) = target` for the unconditional column of `x`.
    fn invert(&mut self, x: usize, set: u64, target: Vec<f64>) -> Vec<f64> {
        if set == 0 {
            return target;
        }
        let e = self.edge(set | (1u64 << x));
        let y = e.partner(x);
        let cop = e.copula_for(x);
        let rest = set & !(1u64 << y);
        let b = self.cond(y, rest);
        let a: Vec<f64> = target.iter().zip(&b).map(|(w, q)| cop.hinv1(*w, *q)).collect();
        self.invert(x, rest, a)
    }
}

fn full_mask(d: usize) -> u64 {
    (1u64 << d) - 1
}

/// Map dependent uniforms to independent ones, column `x` holding
/// `F(x | variables peeled after x)`.
pub fn rosenblatt(model: &RvineModel, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = u.shape();
    if d != model.dim {
        return Err(Error::invalid("dimension mismatch"));
    }
    let cols = (0..d).map(|j| Some(u.column(j).iter().copied().collect())).collect();
    let mut ev = CondEval::new(model, cols);
    let mut out = DMatrix::zeros(n, d);
    let mut remaining = full_mask(d);
    for &x in &model.order {
        remaining &= !(1u64 << x);
        let w = ev.cond(x, remaining);
        out.column_mut(x).copy_from_slice(&w);
    }
    Ok(out)
}

/// Inverse of [`rosenblatt`].
pub fn inverse_rosenblatt(model: &RvineModel, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = w.shape();
    if d != model.dim {
        return Err(Error::invalid("dimension mismatch"));
    }
    let mut ev = CondEval::new(model, vec![None; d]);
    let mut sets = Vec::with_capacity(d);
    let mut remaining = full_mask(d);
    for &x in &model.order {
        remaining &= !(1u64 << x);
        sets.push((x, remaining));
    }
    let mut out = DMatrix::zeros(n, d);
    for &(x, set) in sets.iter().rev() {
        let target: Vec<f64> = w.column(x).iter().copied().collect();
        let col = ev.invert(x, set, target);
        out.column_mut(x).copy_from_slice(&col);
        ev.columns[x] = Some(col);
    }
    Ok(out)
}

/// The independent uniforms that [`sample_rvine`] maps through the vine.
pub fn driving_uniforms(n: usize, dim: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::from_seed(seed);
    DMatrix::from_fn(n, dim, |_, _| r.random::<f64>().clamp(1e-12, 1.0 - 1e-12))
}

pub fn sample_rvine(model: &RvineModel, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    inverse_rosenblatt(model, &driving_uniforms(n, model.dim, seed))
}

#[cfg(test)]
mod tests {
    use super::super::bicop::{fit_bicop_with, Rotation};
    use super::*;
    use crate::copula::FamilyPreset;

    fn col(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
        m.column(j).iter().copied().collect()
    }

    /// A D-vine 0-1-2-3 with mixed families, built by hand.
    fn hand_vine() -> RvineModel {
        let e = |a, b, cond: Vec<usize>, fam, rot, p: Vec<f64>| VineEdge {
            conditioned: [a, b],
            conditioning: cond,
            copula: BicopModel::new(fam, rot, p).unwrap(),
            tau: f64::NAN,
        };
        let trees = vec![
            vec![
                e(0, 1, vec![], BicopFamily::Gaussian, Rotation::R0, vec![0.6]),
                e(1, 2, vec![], BicopFamily::Clayton, Rotation::R0, vec![2.0]),
                e(2, 3, vec![], BicopFamily::Gumbel, Rotation::R90, vec![1.8]),
            ],
            vec![
                e(0, 2, vec![1], BicopFamily::Frank, Rotation::R0, vec![3.0]),
                e(1, 3, vec![2], BicopFamily::Joe, Rotation::R180, vec![1.6]),
            ],
            vec![e(0, 3, vec![1, 2], BicopFamily::StudentT, Rotation::R0, vec![0.3, 6.0])],
        ];
        RvineModel::from_trees(4, trees).unwrap()
    }

    #[test]
    fn hand_vine_is_valid() {
        let m = hand_vine();
        m.validate().unwrap();
        assert_eq!(m.order.len(), 4);
    }

    #[test]
    fn rosenblatt_inverts_sampling() {
        let m = hand_vine();
        let mut r = rng::from_seed(5);
        let w = DMatrix::from_fn(2000, 4, |_, _| r.random::<f64>().clamp(1e-6, 1.0 - 1e-6));
        let u = inverse_rosenblatt(&m, &w).unwrap();
        let back = rosenblatt(&m, &u).unwrap();
        let err = (&back - &w).abs().max();
        assert!(err < 1e-9, "max error {err}");
    }

    #[test]
    fn two_dimensional_vine_equals_pair_fit() {
        let m = hand_vine();
        let u = sample_rvine(&m, 2000, 1).unwrap();
        let sub = DMatrix::from_fn(2000, 2, |i, j| u[(i, j)]);
        let fams = FamilyPreset::AllFam.families(true);
        let v = fit_rvine(&sub, &fams).unwrap();
        assert_eq!(v.trees.len(), 1);
        let direct = fit_bicop_with(&col(&sub, 0), &col(&sub, 1), &fams, Some(0.05)).unwrap();
        assert_eq!(v.trees[0][0].copula, direct);
    }

    #[test]
    fn refit_is_valid_and_tracks_tau() {
        let m = hand_vine();
        let u = sample_rvine(&m, 5000, 2).unwrap();
        let fit = fit_rvine(&u, &FamilyPreset::AllFam.families(true)).unwrap();
        fit.validate().unwrap();
        let s = sample_rvine(&fit, 5000, 3).unwrap();
        for i in 0..4 {
            for j in 0..i {
                let t0 = kendall_tau(&col(&u, i), &col(&u, j)).unwrap();
                let t1 = kendall_tau(&col(&s, i), &col(&s, j)).unwrap();
                assert!((t0 - t1).abs() < 0.05, "({i},{j}) {t0} vs {t1}");
            }
        }
    }

    #[test]
    fn first_tree_is_maximum_spanning() {
        let m = hand_vine();
        let u = sample_rvine(&m, 3000, 4).unwrap();
        let fit = fit_rvine(&u, &[BicopFamily::Gaussian]).unwrap();
        let sum: f64 = fit.trees[0].iter().map(|e| e.tau.abs()).sum();
        // brute force over all 16 labelled spanning trees on 4 nodes
        let tau = |i: usize, j: usize| kendall_tau(&col(&u, i), &col(&u, j)).unwrap().abs();
        let pairs: Vec<(usize, usize)> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).collect();
        let mut best: f64 = 0.0;
        for a in 0..pairs.len() {
            for b in a + 1..pairs.len() {
                for c in b + 1..pairs.len() {
                    let es = [pairs[a], pairs[b], pairs[c]];
                    let mut parent = vec![0, 1, 2, 3];
                    let mut ok = true;
                    for (x, y) in es {
                        let (rx, ry) = (union_find_root(&mut parent, x), union_find_root(&mut parent, y));
                        if rx == ry {
                            ok = false;
                        }
                        parent[rx] = ry;
                    }
                    if ok {
                        best = best.max(es.iter().map(|(x, y)| tau(*x, *y)).sum());
                    }
                }
            }
        }
        assert!((sum - best).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let m = hand_vine();
        let s = serde_json::to_string(&m).unwrap();
        let back: RvineModel = serde_json::from_str(&s).unwrap();
        assert_eq!(sample_rvine(&m, 50, 1).unwrap(), sample_rvine(&back, 50, 1).unwrap());
    }
}
