//! Tree-structured selection of residual indicators and the meshes resolving
//! the selected frame elements.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::frame::{Frame, FrameIndex};
use crate::mesh::{Mesh, MeshBuilder};
use crate::residual::Indicators;
use crate::stochastic::MultiIndex;

/// Per ν a set of frame indices closed under the parent map.
pub type TreeIndexSet = BTreeMap<MultiIndex, BTreeSet<FrameIndex>>;

/// Adds all ancestors of every member.
pub fn close_under_parent(frame: &Frame, set: &mut TreeIndexSet) {
    for theta in set.values_mut() {
        let mut stack: Vec<FrameIndex> = theta.iter().copied().collect();
        while let Some(l) = stack.pop() {
            if let Some(p) = frame.parent(l) {
                if theta.insert(p) {
                    stack.push(p);
                }
            }
        }
    }
}

pub fn union(a: &TreeIndexSet, b: &TreeIndexSet) -> TreeIndexSet {
    let mut out = a.clone();
    for (nu, t) in b {
        out.entry(nu.clone()).or_default().extend(t.iter().copied());
    }
    out
}

pub fn is_tree(frame: &Frame, set: &TreeIndexSet) -> bool {
    set.values().all(|t| t.iter().all(|l| frame.parent(*l).map_or(true, |p| t.contains(&p))))
}

/// ‖r̂|_Λ‖².
pub fn restricted_norm_sq(r: &BTreeMap<MultiIndex, Indicators>, set: &TreeIndexSet) -> f64 {
    let mut s = 0.0;
    for (nu, ind) in r {
        let Some(t) = set.get(nu) else { continue };
        for (l, c) in &ind.entries {
            if t.contains(l) {
                s += c * c;
            }
        }
    }
    s
}

#[derive(PartialEq)]
struct Leaf {
    w: f64,
    /// Position of ν in the sorted key list, so ids order like the ν.
    nu: usize,
    lam: FrameIndex,
}

impl Eq for Leaf {}

impl Ord for Leaf {
    // Reversed so the heap pops the lightest leaf; ties go to the finest index.
    fn cmp(&self, o: &Self) -> Ordering {
        o.w.total_cmp(&self.w)
            .then_with(|| self.lam.level.cmp(&o.lam.level))
            .then_with(|| o.nu.cmp(&self.nu))
            .then_with(|| o.lam.cmp(&self.lam))
    }
}

impl PartialOrd for Leaf {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Coarsens Λ⁺ towards Λ⁰ by repeatedly dropping the lightest leaf outside Λ⁰
/// while the dropped squared indicator mass stays within `budget`. The result
/// is a tree with Λ⁰ ⊆ Λ ⊆ Λ⁺ and ‖r̂|_Λ‖² ≥ ‖r̂‖² − budget. A ν entering anew
/// keeps all its level-0 indices.
pub fn tree_approx(
    frame: &Frame,
    lambda0: &TreeIndexSet,
    lambda_plus: &TreeIndexSet,
    r: &BTreeMap<MultiIndex, Indicators>,
    budget: f64,
) -> Result<TreeIndexSet> {
    if !(budget >= 0.0) {
        return Err(Error::Structure(format!("coarsening budget must be nonnegative, got {budget}")));
    }
    let mut full = union(lambda0, lambda_plus);
    close_under_parent(frame, &mut full);
    let keys: Vec<MultiIndex> = full.keys().cloned().collect();
    let mut sets: Vec<BTreeSet<FrameIndex>> = full.into_values().collect();
    let ind: Vec<Option<&Indicators>> = keys.iter().map(|nu| r.get(nu)).collect();
    let base: Vec<Option<&BTreeSet<FrameIndex>>> = keys.iter().map(|nu| lambda0.get(nu)).collect();
    let weight = |i: usize, l: FrameIndex| ind[i].and_then(|x| x.get(l)).map_or(0.0, |c| c * c);
    let in0 = |i: usize, l: &FrameIndex| base[i].is_some_and(|t| t.contains(l));

    // Child counts inside the current set.
    let mut kids: FxHashMap<(usize, FrameIndex), usize> = FxHashMap::default();
    for (i, t) in sets.iter().enumerate() {
        for l in t {
            if let Some(p) = frame.parent(*l) {
                *kids.entry((i, p)).or_default() += 1;
            }
        }
    }
    let mut heap = BinaryHeap::new();
    for (i, t) in sets.iter().enumerate() {
        for &l in t {
            if !in0(i, &l) && !kids.contains_key(&(i, l)) {
                heap.push(Leaf { w: weight(i, l), nu: i, lam: l });
            }
        }
    }
    let mut dropped = 0.0;
    while let Some(leaf) = heap.pop() {
        if dropped + leaf.w > budget {
            break;
        }
        dropped += leaf.w;
        sets[leaf.nu].remove(&leaf.lam);
        if let Some(p) = frame.parent(leaf.lam) {
            let key = (leaf.nu, p);
            let n = kids.get_mut(&key).unwrap();
            *n -= 1;
            if *n == 0 {
                kids.remove(&key);
                if !in0(leaf.nu, &p) {
                    heap.push(Leaf { w: weight(leaf.nu, p), nu: leaf.nu, lam: p });
                }
            }
        }
    }
    let roots = frame.roots();
    let mut out = TreeIndexSet::new();
    for (nu, mut t) in keys.into_iter().zip(sets) {
        if t.is_empty() {
            continue;
        }
        if !lambda0.contains_key(&nu) {
            t.extend(roots.iter().copied());
        }
        out.insert(nu, t);
    }
    Ok(out)
}

/// Smallest conforming refinements of the given meshes (T̂_0 for new ν) on which
/// every ψ_λ, λ ∈ Θ_ν, is piecewise linear.
pub fn refine_meshes(
    frame: &Frame,
    current: &BTreeMap<MultiIndex, Arc<Mesh>>,
    set: &TreeIndexSet,
) -> BTreeMap<MultiIndex, Arc<Mesh>> {
    let dom = frame.domain().clone();
    let initial = Arc::new(Mesh::initial(dom));
    let mut keys: BTreeSet<&MultiIndex> = set.keys().collect();
    keys.extend(current.keys());
    keys.into_par_iter()
        .map(|nu| {
            let base = current.get(nu).unwrap_or(&initial);
            let Some(theta) = set.get(nu) else { return (nu.clone(), base.clone()) };
            let mut b = MeshBuilder::from_mesh(base);
            for &l in theta {
                for (e, _) in frame.patch(l) {
                    b.ensure(e);
                }
            }
            (nu.clone(), Arc::new(b.finish()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Domain, FeFunction, FeSpace, Pt};

    fn chain(frame: &Frame) -> Vec<FrameIndex> {
        // A root and two successive descendants through the parent map.
        let r = frame.roots()[0];
        let c1 = frame.children(r).into_iter().map(|x| x.0).find(|c| frame.parent(*c) == Some(r)).unwrap();
        let c2 = frame.children(c1).into_iter().map(|x| x.0).find(|c| frame.parent(*c) == Some(c1)).unwrap();
        vec![r, c1, c2]
    }

    fn ind(pairs: &[(FrameIndex, f64)]) -> Indicators {
        let mut e = pairs.to_vec();
        e.sort_by(|a, b| a.0.cmp(&b.0));
        Indicators { entries: e }
    }

    /// Smallest subtree Λ ⊇ Λ⁰ with dropped mass ≤ budget, by enumeration.
    fn exhaustive(frame: &Frame, all: &[FrameIndex], keep: &[FrameIndex], w: &[f64], budget: f64) -> usize {
        let n = all.len();
        let mut best = usize::MAX;
        for mask in 0u32..(1 << n) {
            let has = |l: FrameIndex| all.iter().position(|x| *x == l).is_some_and(|i| mask >> i & 1 == 1);
            if keep.iter().any(|k| !has(*k)) {
                continue;
            }
            if all.iter().enumerate().any(|(i, l)| mask >> i & 1 == 1 && frame.parent(*l).is_some_and(|p| all.contains(&p) && !has(p))) {
                continue;
            }
            let dropped: f64 = (0..n).filter(|i| mask >> i & 1 == 0).map(|i| w[i]).sum();
            if dropped <= budget {
                best = best.min(mask.count_ones() as usize);
            }
        }
        best
    }

    #[test]
    fn chain_drops_only_the_light_leaf() {
        let frame = Frame::new(Arc::new(Domain::interval()));
        let c = chain(&frame);
        let nu = MultiIndex::zero();
        let w = [9.0f64, 4.0, 1.0];
        let r: BTreeMap<_, _> = [(nu.clone(), ind(&[(c[0], 3.0), (c[1], 2.0), (c[2], 1.0)]))].into();
        let l0: TreeIndexSet = [(nu.clone(), [c[0]].into())].into();
        let lp: TreeIndexSet = [(nu.clone(), c.iter().copied().collect())].into();
        let got = tree_approx(&frame, &l0, &lp, &r, 1.5).unwrap();
        assert_eq!(got[&nu], [c[0], c[1]].into());
        assert_eq!(got[&nu].len(), exhaustive(&frame, &c, &[c[0]], &w, 1.5));
    }

    #[test]
    fn budget_extremes() {
        let frame = Frame::new(Arc::new(Domain::interval()));
        let c = chain(&frame);
        let nu = MultiIndex::zero();
        let r: BTreeMap<_, _> = [(nu.clone(), ind(&[(c[0], 3.0), (c[1], 2.0), (c[2], 1.0)]))].into();
        let l0: TreeIndexSet = [(nu.clone(), [c[0]].into())].into();
        let lp: TreeIndexSet = [(nu.clone(), c.iter().copied().collect())].into();
        assert_eq!(tree_approx(&frame, &l0, &lp, &r, 5.0).unwrap(), l0);
        assert_eq!(tree_approx(&frame, &l0, &lp, &r, 0.0).unwrap(), lp);
        assert!(tree_approx(&frame, &l0, &lp, &r, -1.0).is_err());
    }

    #[test]
    fn greedy_stays_near_optimum_on_small_trees() {
        let frame = Frame::new(Arc::new(Domain::interval()));
        let nu = MultiIndex::zero();
        let mut all: Vec<FrameIndex> = (0..3).flat_map(|l| frame.level_indices(l)).collect();
        all.truncate(12);
        let mut set: BTreeSet<FrameIndex> = all.iter().copied().collect();
        let mut tree: TreeIndexSet = [(nu.clone(), set.clone())].into();
        close_under_parent(&frame, &mut tree);
        set = tree[&nu].clone();
        let all: Vec<FrameIndex> = set.iter().copied().collect();
        assert!(all.len() <= 16);
        let mut x = 7u64;
        for _ in 0..30 {
            let w: Vec<f64> = all
                .iter()
                .map(|_| {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((x >> 40) % 50) as f64 / 10.0
                })
                .collect();
            let r: BTreeMap<_, _> =
                [(nu.clone(), ind(&all.iter().zip(&w).map(|(l, w)| (*l, w.sqrt())).collect::<Vec<_>>()))].into();
            let roots: BTreeSet<FrameIndex> = frame.roots().into_iter().filter(|r| set.contains(r)).collect();
            let l0: TreeIndexSet = [(nu.clone(), roots.clone())].into();
            let budget = w.iter().sum::<f64>() * 0.3;
            let got = tree_approx(&frame, &l0, &tree, &r, budget).unwrap();
            assert!(is_tree(&frame, &got));
            let kept = restricted_norm_sq(&r, &got);
            assert!(kept >= w.iter().sum::<f64>() - budget - 1e-12);
            let opt = exhaustive(&frame, &all, &roots.iter().copied().collect::<Vec<_>>(), &w, budget);
            // Greedy leaf removal may keep more than the optimum; record the gap.
            assert!(got[&nu].len() <= 2 * opt, "{} vs optimum {opt}", got[&nu].len());
        }
    }

    #[test]
    fn new_index_brings_roots() {
        let frame = Frame::new(Arc::new(Domain::l_shape()));
        let roots = frame.roots();
        let nu = MultiIndex::unit(crate::coeff_field::LevelIndex::new2(1, 2, 2));
        let c = frame.children(roots[0]).into_iter().map(|x| x.0).find(|c| frame.parent(*c) == Some(roots[0])).unwrap();
        let r: BTreeMap<_, _> = [(nu.clone(), ind(&[(c, 1.0)]))].into();
        let lp: TreeIndexSet = [(nu.clone(), [roots[0], c].into())].into();
        let got = tree_approx(&frame, &TreeIndexSet::new(), &lp, &r, 0.0).unwrap();
        assert_eq!(got[&nu].len(), roots.len() + 1);
    }

    fn interpolates_exactly(frame: &Frame, m: &Arc<Mesh>, l: FrameIndex) -> bool {
        let s = Arc::new(FeSpace::new(m.clone()));
        let vals = s.nodes().iter().map(|p| frame.eval(l, *p)).collect();
        let f = FeFunction::new(s.clone(), vals);
        // Compare at the centroid and edge midpoints of every element.
        for (i, (_, v)) in m.iter().enumerate() {
            let nv = m.dim() + 1;
            let mut probes: Vec<Pt> = (0..nv).flat_map(|a| (0..nv).map(move |b| (a, b))).map(|(a, b)| Pt::mid(v[a], v[b])).collect();
            if nv == 3 {
                probes.push(Pt::mid(Pt::mid(v[0], v[1]), v[2]));
            }
            for p in probes {
                if (f.eval_in(i, p) - frame.eval(l, p)).abs() > 1e-12 {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn refined_meshes_resolve_selected_hats() {
        for dom in [Domain::interval(), Domain::l_shape()] {
            let frame = Frame::new(Arc::new(dom));
            let nu = MultiIndex::zero();
            let roots: BTreeSet<FrameIndex> = frame.roots().into_iter().collect();
            let only_roots: TreeIndexSet = [(nu.clone(), roots.clone())].into();
            let m = refine_meshes(&frame, &BTreeMap::new(), &only_roots);
            assert_eq!(m[&nu].leaves(), Mesh::uniform_gen(frame.domain().clone(), frame.gen(0)).leaves());

            let l1 = frame.level_indices(1)[1];
            let mut one: TreeIndexSet = [(nu.clone(), roots.clone())].into();
            one.get_mut(&nu).unwrap().insert(l1);
            close_under_parent(&frame, &mut one);
            let m = refine_meshes(&frame, &BTreeMap::new(), &one);
            assert!(m[&nu].is_conforming());
            assert!(interpolates_exactly(&frame, &m[&nu], l1));

            let j = 2;
            let full: TreeIndexSet = [(nu.clone(), (0..=j).flat_map(|l| frame.level_indices(l)).collect())].into();
            let m = refine_meshes(&frame, &BTreeMap::new(), &full);
            let u = Mesh::uniform_gen(frame.domain().clone(), frame.gen(j));
            assert_eq!(m[&nu].leaves(), u.leaves());
        }
    }
}
