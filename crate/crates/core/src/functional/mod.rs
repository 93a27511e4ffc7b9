//! Dual functionals ⟨ξ, v⟩ = Σ_K ∫_K ξ_K v + Σ_E ∫_E ξ_E v with polynomial pieces
//! on bisection elements and their edges.

mod apply;
mod carrier;
mod poly;
pub mod quad;

use std::sync::Arc;

use rustc_hash::{FxHashMap, FxHashSet};

pub use apply::{apply_a, ThetaSource};
pub use carrier::{CStatus, Carrier, CarrierNode};
pub use poly::Poly;

use crate::mesh::{barycentric, bisect_verts, edge_children, Domain, Elem, FeFunction, FeSpace, Pt, Status, NO_NODE, ONE};

/// Polynomial data owned by one element, all about the element's vertex v0.
/// `edge[k]` lives on local edge k (d=1: the point value at endpoint k, in c0).
#[derive(Clone, Copy, Default, Debug, PartialEq)]
pub struct ElemTerms {
    pub vol: Poly,
    pub edge: [Poly; 3],
}

impl ElemTerms {
    pub fn is_zero(&self) -> bool {
        self.vol.is_zero() && self.edge.iter().all(|p| p.is_zero())
    }

    pub fn has_edges(&self) -> bool {
        self.edge.iter().any(|p| !p.is_zero())
    }

    pub fn add_scaled(&mut self, o: &ElemTerms, s: f64) {
        self.vol.add_assign_scaled(&o.vol, s);
        for k in 0..3 {
            self.edge[k].add_assign_scaled(&o.edge[k], s);
        }
    }

    pub fn magnitude(&self, h: f64) -> f64 {
        self.edge.iter().fold(self.vol.magnitude(h), |m, p| m.max(p.magnitude(h)))
    }
}

/// Offset b − a in world coordinates, computed exactly before rounding.
#[inline]
pub fn rel(a: Pt, b: Pt) -> [f64; 2] {
    [(b.x - a.x) as f64 / ONE as f64, (b.y - a.y) as f64 / ONE as f64]
}

fn diameter(v: &[Pt; 3]) -> f64 {
    let d = |a: Pt, b: Pt| {
        let r = rel(a, b);
        (r[0] * r[0] + r[1] * r[1]).sqrt()
    };
    d(v[0], v[1]).max(d(v[1], v[2])).max(d(v[2], v[0]))
}

/// ∫_K p λ_i over a simplex for the vertex barycentrics, p anchored at `anchor`.
pub fn vol_moments(dim: usize, v: &[Pt; 3], p: &Poly, anchor: Pt) -> [f64; 3] {
    if dim == 1 {
        let a = rel(anchor, v[0]);
        let b = rel(anchor, v[1]);
        let m = quad::seg_moments(p, a, b, b[0] - a[0]);
        return [m[0], m[1], 0.0];
    }
    let r = [rel(anchor, v[0]), rel(anchor, v[1]), rel(anchor, v[2])];
    let area = ((r[1][0] - r[0][0]) * (r[2][1] - r[0][1]) - (r[2][0] - r[0][0]) * (r[1][1] - r[0][1])).abs() / 2.0;
    quad::tri_moments(p, &r, area)
}

/// ∫_[a,b] p λ_a, ∫_[a,b] p λ_b with p anchored at `anchor` (d=2 only).
pub fn seg_moments(a: Pt, b: Pt, p: &Poly, anchor: Pt) -> [f64; 2] {
    let ra = rel(anchor, a);
    let rb = rel(anchor, b);
    let len = ((rb[0] - ra[0]).powi(2) + (rb[1] - ra[1]).powi(2)).sqrt();
    quad::seg_moments(p, ra, rb, len)
}

/// Moments ∫ ξ λ_i of all terms owned by an element against its own barycentrics.
pub fn elem_moments(dim: usize, v: &[Pt; 3], t: &ElemTerms) -> [f64; 3] {
    let mut m = if t.vol.is_zero() { [0.0; 3] } else { vol_moments(dim, v, &t.vol, v[0]) };
    if dim == 1 {
        m[0] += t.edge[0].0[0];
        m[1] += t.edge[1].0[0];
        return m;
    }
    for k in 0..3 {
        if t.edge[k].is_zero() {
            continue;
        }
        let (i, j) = (k, (k + 1) % 3);
        let s = seg_moments(v[i], v[j], &t.edge[k], v[0]);
        m[i] += s[0];
        m[j] += s[1];
    }
    m
}

/// Terms of a parent restated on its two children.
pub fn push_down(dim: usize, v: &[Pt; 3], t: &ElemTerms) -> [([Pt; 3], ElemTerms); 2] {
    let cv = bisect_verts(v, dim);
    let mut out = [(cv[0], ElemTerms::default()), (cv[1], ElemTerms::default())];
    for c in 0..2 {
        let d = rel(v[0], cv[c][0]);
        out[c].1.vol = t.vol.shifted(d[0], d[1]);
    }
    let nk = if dim == 1 { 2 } else { 3 };
    for k in 0..nk {
        if t.edge[k].is_zero() {
            continue;
        }
        for &(c, ck) in edge_children(k, dim) {
            let d = rel(v[0], cv[c as usize][0]);
            out[c as usize].1.edge[ck] = t.edge[k].shifted(d[0], d[1]);
        }
    }
    out
}

/// A functional as polynomial pieces on bisection elements. Keys may be nested
/// unless the functional is canonical (the output of [`sum`]), in which case the
/// keys are disjoint leaves of one bisection forest and zero pieces are omitted.
#[derive(Clone, Debug)]
pub struct PwFunctional {
    dom: Arc<Domain>,
    terms: FxHashMap<Elem, ([Pt; 3], ElemTerms)>,
    canonical: bool,
}

impl PwFunctional {
    pub fn zero(dom: Arc<Domain>) -> Self {
        PwFunctional { dom, terms: FxHashMap::default(), canonical: true }
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.dom
    }

    pub fn dim(&self) -> usize {
        self.dom.dim()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical
    }

    pub fn iter(&self) -> impl Iterator<Item = (Elem, &[Pt; 3], &ElemTerms)> + '_ {
        self.terms.iter().map(|(e, (v, t))| (*e, v, t))
    }

    pub fn get(&self, e: Elem) -> Option<&ElemTerms> {
        self.terms.get(&e).map(|x| &x.1)
    }

    /// Accumulate `s · t` on element `e`.
    pub fn add(&mut self, e: Elem, v: &[Pt; 3], t: &ElemTerms, s: f64) {
        self.canonical = false;
        self.terms.entry(e).or_insert_with(|| (*v, ElemTerms::default())).1.add_scaled(t, s);
    }

    pub fn add_scaled(&mut self, o: &PwFunctional, s: f64) {
        for (e, v, t) in o.iter() {
            self.add(e, v, t, s);
        }
    }

    /// Right-hand side given as a constant per root element.
    pub fn source(dom: Arc<Domain>, per_root: &[f64]) -> Self {
        assert_eq!(per_root.len(), dom.num_roots());
        let mut f = PwFunctional::zero(dom.clone());
        for (r, &c) in per_root.iter().enumerate() {
            if c != 0.0 {
                let e = Elem::root(r);
                f.terms.insert(e, (dom.verts(e), ElemTerms { vol: Poly::constant(c), ..Default::default() }));
            }
        }
        f
    }

    /// f ≡ 1.
    pub fn unit_source(dom: Arc<Domain>) -> Self {
        let n = dom.num_roots();
        PwFunctional::source(dom, &vec![1.0; n])
    }

    /// ⟨ξ, v⟩ for a finite element function, exact.
    pub fn action(&self, v: &FeFunction) -> f64 {
        let dim = self.dim();
        let mut s = 0.0;
        let mut stack = Vec::new();
        for (e, (verts, t)) in &self.terms {
            stack.push((*e, *verts, *t));
            while let Some((e, verts, t)) = stack.pop() {
                match v.mesh().status(e) {
                    Status::Within(l) => {
                        let m = elem_moments(dim, &verts, &t);
                        for i in 0..dim + 1 {
                            s += m[i] * v.eval_in(l as usize, verts[i]);
                        }
                    }
                    Status::Internal => {
                        let ch = push_down(dim, &verts, &t);
                        for c in 0..2 {
                            stack.push((e.child(c as u32), ch[c].0, ch[c].1));
                        }
                    }
                }
            }
        }
        s
    }
}

impl PwFunctional {
    /// Load vector ⟨ξ, φ_i⟩ for the nodal basis of a space, exact.
    pub fn load(&self, space: &FeSpace) -> Vec<f64> {
        let dim = self.dim();
        let nv = dim + 1;
        let mesh = space.mesh();
        let mut out = vec![0.0; space.dim()];
        let mut stack = Vec::new();
        for (e, (verts, t)) in &self.terms {
            stack.push((*e, *verts, *t));
            while let Some((e, verts, t)) = stack.pop() {
                match mesh.status(e) {
                    Status::Within(l) => {
                        let m = elem_moments(dim, &verts, &t);
                        let lv = mesh.leaf_verts(l as usize);
                        let en = space.elem_nodes(l as usize);
                        for i in 0..nv {
                            let b = barycentric(lv, dim, verts[i]);
                            for k in 0..nv {
                                if en[k] != NO_NODE {
                                    out[en[k] as usize] += m[i] * b[k];
                                }
                            }
                        }
                    }
                    Status::Internal => {
                        let ch = push_down(dim, &verts, &t);
                        for c in 0..2 {
                            stack.push((e.child(c as u32), ch[c].0, ch[c].1));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Pieces with magnitude below this fraction of the largest input are dropped.
const PRUNE_REL: f64 = 1e-14;

/// Sum of functionals on arbitrary bisection meshes, restated on the union of
/// their element trees. Coarse pieces are pushed down to the children of every
/// element that is refined somewhere, so the result has disjoint keys.
pub fn sum(parts: &[&PwFunctional]) -> PwFunctional {
    let dom = parts.first().map(|p| p.dom.clone()).expect("sum of no functionals");
    let dim = dom.dim();
    let mut acc: FxHashMap<Elem, ([Pt; 3], ElemTerms)> = FxHashMap::default();
    let mut scale = 0.0f64;
    for p in parts {
        for (e, v, t) in p.iter() {
            scale = scale.max(t.magnitude(diameter(v)));
            acc.entry(e).or_insert_with(|| (*v, ElemTerms::default())).1.add_scaled(t, 1.0);
        }
    }
    let mut internal: FxHashSet<Elem> = FxHashSet::default();
    for e in acc.keys() {
        let mut p = e.parent();
        while let Some(q) = p {
            if !internal.insert(q) {
                break;
            }
            p = q.parent();
        }
    }
    // Push down in generation order so each parent is emptied before its children.
    let mut by_gen: Vec<Vec<Elem>> = Vec::new();
    for e in acc.keys() {
        if internal.contains(e) {
            let g = e.gen() as usize;
            if by_gen.len() <= g {
                by_gen.resize(g + 1, Vec::new());
            }
            by_gen[g].push(*e);
        }
    }
    let mut g = 0;
    while g < by_gen.len() {
        let mut level = std::mem::take(&mut by_gen[g]);
        level.sort_unstable();
        for e in level {
            let Some((v, t)) = acc.remove(&e) else { continue };
            let ch = push_down(dim, &v, &t);
            for c in 0..2 {
                let ce = e.child(c as u32);
                let slot = acc.entry(ce).or_insert_with(|| (ch[c].0, ElemTerms::default()));
                let fresh = slot.1.is_zero();
                slot.1.add_scaled(&ch[c].1, 1.0);
                if internal.contains(&ce) && fresh {
                    if by_gen.len() <= g + 1 {
                        by_gen.resize(g + 2, Vec::new());
                    }
                    by_gen[g + 1].push(ce);
                }
            }
        }
        g += 1;
    }
    let tol = PRUNE_REL * scale;
    acc.retain(|_, (v, t)| t.magnitude(diameter(v)) > tol);
    PwFunctional { dom, terms: acc, canonical: true }
}
