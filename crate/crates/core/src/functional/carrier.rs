use std::sync::Arc;

use rustc_hash::FxHashMap;

use super::{seg_moments, sum, vol_moments, ElemTerms, PwFunctional};
use crate::mesh::{barycentric, bisect_verts, on_segment, Domain, Elem, Pt};

#[derive(Clone, Debug)]
pub struct CarrierNode {
    pub verts: [Pt; 3],
    pub leaf: bool,
    /// Some leaf at or below carries nonzero data.
    pub active: bool,
    /// Largest leaf generation at or below.
    pub max_gen: u32,
    pub terms: ElemTerms,
}

/// A canonical functional together with the complete bisection forest it lives
/// on: every internal node has both children, untouched regions are zero leaves.
#[derive(Clone, Debug)]
pub struct Carrier {
    dom: Arc<Domain>,
    nodes: FxHashMap<Elem, CarrierNode>,
}

/// Position of an element relative to the carrier forest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CStatus {
    /// Contained in this carrier leaf.
    Leaf(Elem),
    Internal,
}

impl Carrier {
    pub fn new(f: &PwFunctional) -> Carrier {
        let canon;
        let f = if f.is_canonical() {
            f
        } else {
            canon = sum(&[f]);
            &canon
        };
        let dom = f.domain().clone();
        let dim = dom.dim();
        let mut nodes: FxHashMap<Elem, CarrierNode> = FxHashMap::with_capacity_and_hasher(3 * f.len(), Default::default());
        for (e, v, t) in f.iter() {
            nodes.insert(e, CarrierNode { verts: *v, leaf: true, active: !t.is_zero(), max_gen: e.gen(), terms: *t });
        }
        let keys: Vec<Elem> = nodes.keys().copied().collect();
        for e in keys {
            let mut p = e.parent();
            while let Some(q) = p {
                if nodes.contains_key(&q) {
                    break;
                }
                nodes.insert(q, CarrierNode { verts: dom.verts(q), leaf: false, active: false, max_gen: 0, terms: ElemTerms::default() });
                p = q.parent();
            }
        }
        for r in dom.root_elems() {
            nodes.entry(r).or_insert_with(|| CarrierNode {
                verts: dom.verts(r),
                leaf: true,
                active: false,
                max_gen: 0,
                terms: ElemTerms::default(),
            });
        }
        let mut internal: Vec<(Elem, [Pt; 3])> = nodes.iter().filter(|(_, n)| !n.leaf).map(|(e, n)| (*e, n.verts)).collect();
        for (e, v) in &internal {
            let cv = bisect_verts(v, dim);
            for c in 0..2 {
                nodes.entry(e.child(c)).or_insert_with(|| CarrierNode {
                    verts: cv[c as usize],
                    leaf: true,
                    active: false,
                    max_gen: e.gen() + 1,
                    terms: ElemTerms::default(),
                });
            }
        }
        internal.sort_unstable_by_key(|x| std::cmp::Reverse(x.0.gen()));
        for (e, _) in internal {
            let [a, b] = e.children().map(|c| {
                let n = &nodes[&c];
                (n.active, n.max_gen)
            });
            let n = nodes.get_mut(&e).unwrap();
            n.active = a.0 || b.0;
            n.max_gen = a.1.max(b.1);
        }
        Carrier { dom, nodes }
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.dom
    }

    pub fn node(&self, e: Elem) -> Option<&CarrierNode> {
        self.nodes.get(&e)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = (Elem, &CarrierNode)> + '_ {
        self.nodes.iter().filter(|(_, n)| n.leaf).map(|(e, n)| (*e, n))
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.values().filter(|n| n.leaf).count()
    }

    pub fn status(&self, e: Elem) -> CStatus {
        let mut cur = Some(e);
        while let Some(c) = cur {
            if let Some(n) = self.nodes.get(&c) {
                return if n.leaf {
                    CStatus::Leaf(c)
                } else {
                    assert!(c == e, "carrier forest is incomplete");
                    CStatus::Internal
                };
            }
            cur = c.parent();
        }
        unreachable!("element outside the carrier forest")
    }

    /// Status of a descendant of an element whose status is already known.
    pub fn status_below(&self, known: CStatus, e: Elem) -> CStatus {
        match known {
            CStatus::Leaf(l) => CStatus::Leaf(l),
            CStatus::Internal => self.status(e),
        }
    }

    /// Some nonzero data touches the element.
    pub fn is_active(&self, st: CStatus, e: Elem) -> bool {
        match st {
            CStatus::Leaf(l) => self.nodes[&l].active,
            CStatus::Internal => self.nodes[&e].active,
        }
    }

    /// Largest carrier generation meeting the element.
    pub fn max_gen(&self, st: CStatus, e: Elem) -> u32 {
        match st {
            CStatus::Leaf(l) => l.gen(),
            CStatus::Internal => self.nodes[&e].max_gen,
        }
    }

    /// ∫ ξ φ for the continuous function φ that is linear on each element of
    /// `patch`, equals 1 at `node`, vanishes at the other patch vertices and
    /// vanishes outside the patch.
    pub fn integrate_hat(&self, node: Pt, patch: &[(Elem, [Pt; 3], CStatus)]) -> f64 {
        let dim = self.dom.dim();
        let nv = dim + 1;
        let mut s = 0.0;
        for (g, gv, st) in patch {
            let w: [f64; 3] = std::array::from_fn(|i| if i < nv && gv[i] == node { 1.0 } else { 0.0 });
            let phi = |p: Pt| {
                let b = barycentric(gv, dim, p);
                b[0] * w[0] + b[1] * w[1] + b[2] * w[2]
            };
            match *st {
                CStatus::Leaf(l) => {
                    let n = &self.nodes[&l];
                    if !n.active {
                        continue;
                    }
                    let t = &n.terms;
                    if !t.vol.is_zero() {
                        let m = vol_moments(dim, gv, &t.vol, n.verts[0]);
                        s += m[0] * w[0] + m[1] * w[1] + m[2] * w[2];
                    }
                    if dim == 1 {
                        for k in 0..2 {
                            let p = n.verts[k];
                            if t.edge[k].0[0] != 0.0 && p.x >= gv[0].x && p.x <= gv[1].x {
                                s += t.edge[k].0[0] * phi(p);
                            }
                        }
                        continue;
                    }
                    for k in 0..3 {
                        if t.edge[k].is_zero() {
                            continue;
                        }
                        let (la, lb) = (n.verts[k], n.verts[(k + 1) % 3]);
                        for ge in 0..3 {
                            let (a, b) = (gv[ge], gv[(ge + 1) % 3]);
                            if a != node && b != node {
                                continue;
                            }
                            if on_segment(la, lb, a) && on_segment(la, lb, b) {
                                let m = seg_moments(a, b, &t.edge[k], n.verts[0]);
                                s += m[0] * phi(a) + m[1] * phi(b);
                            }
                        }
                    }
                }
                CStatus::Internal => {
                    let mut stack = vec![*g];
                    while let Some(e) = stack.pop() {
                        let n = &self.nodes[&e];
                        if !n.active {
                            continue;
                        }
                        if !n.leaf {
                            stack.extend(e.children());
                            continue;
                        }
                        let t = &n.terms;
                        let v = &n.verts;
                        if !t.vol.is_zero() {
                            let m = vol_moments(dim, v, &t.vol, v[0]);
                            for i in 0..nv {
                                s += m[i] * phi(v[i]);
                            }
                        }
                        if dim == 1 {
                            s += t.edge[0].0[0] * phi(v[0]) + t.edge[1].0[0] * phi(v[1]);
                            continue;
                        }
                        for k in 0..3 {
                            if t.edge[k].is_zero() {
                                continue;
                            }
                            let (a, b) = (v[k], v[(k + 1) % 3]);
                            let m = seg_moments(a, b, &t.edge[k], v[0]);
                            s += m[0] * phi(a) + m[1] * phi(b);
                        }
                    }
                }
            }
        }
        s
    }

    /// Mean of a leaf's volume polynomial, used by diagnostics.
    pub fn leaf_mean(&self, e: Elem) -> Option<f64> {
        let n = self.nodes.get(&e)?;
        let dim = self.dom.dim();
        let m = vol_moments(dim, &n.verts, &n.terms.vol, n.verts[0]);
        let area = self.dom.measure(&n.verts);
        Some((m[0] + m[1] + m[2]) / area)
    }
}
