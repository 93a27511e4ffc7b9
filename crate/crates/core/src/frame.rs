//! The multilevel hat-function frame: energy-normalized nodal hats on every
//! level of the uniform hierarchy, their two-scale relations and parent tree.

use std::sync::{Arc, RwLock};

use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::functional::{CStatus, Carrier};
use crate::mesh::{basis_grads, on_segment, orient, Domain, Elem, Mesh, Pt};

/// λ = (level, interior vertex of the uniform mesh on that level).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize)]
pub struct FrameIndex {
    pub level: u32,
    pub node: Pt,
}

impl FrameIndex {
    pub fn new(level: u32, node: Pt) -> Self {
        FrameIndex { level, node }
    }
}

impl std::fmt::Display for FrameIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}; {:.6}, {:.6})", self.level, self.node.xf(), self.node.yf())
    }
}

pub type Patch = Vec<(Elem, [Pt; 3])>;

/// Geometry of one frame function, independent of any functional.
#[derive(Debug)]
pub struct Geo {
    pub patch: Patch,
    /// ‖φ‖_V of the unnormalized hat.
    pub norm: f64,
    /// Output of [`Frame::child_nodes`].
    pub kids: Vec<(Pt, f64)>,
    /// Elements of the patch generation touching the closed support, sorted.
    pub ring: Vec<Elem>,
    pub parent: Option<FrameIndex>,
}

/// Cleared wholesale once it holds this many entries.
const GEO_CACHE_CAP: usize = 1_000_000;

#[derive(Clone, Debug)]
pub struct Frame {
    dom: Arc<Domain>,
    geo: Arc<RwLock<FxHashMap<FrameIndex, Arc<Geo>>>>,
}

impl Frame {
    pub fn new(dom: Arc<Domain>) -> Frame {
        Frame { dom, geo: Arc::default() }
    }

    /// Cached patch, norm, two-scale nodes and ring of ψ_λ.
    pub fn geo(&self, lam: FrameIndex) -> Arc<Geo> {
        if let Some(g) = self.geo.read().unwrap().get(&lam) {
            return g.clone();
        }
        let patch = self.patch(lam);
        let norm = self.hat_norm(lam.node, &patch);
        let kids = self.child_nodes(lam, &patch);
        let nv = self.dom.dim() + 1;
        let gen = self.gen(lam.level);
        let mut pts: Vec<Pt> = patch.iter().flat_map(|(_, v)| v[..nv].iter().copied()).collect();
        pts.sort_unstable();
        pts.dedup();
        let mut ring: Vec<Elem> = pts.into_iter().flat_map(|q| self.dom.locate(q, gen).into_iter().map(|x| x.0)).collect();
        ring.sort_unstable();
        ring.dedup();
        let parent = self.find_parent(lam);
        let g = Arc::new(Geo { patch, norm, kids, ring, parent });
        let mut map = self.geo.write().unwrap();
        if map.len() >= GEO_CACHE_CAP {
            map.clear();
        }
        map.insert(lam, g.clone());
        g
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.dom
    }

    pub fn gen(&self, level: u32) -> u32 {
        self.dom.frame_gen(level)
    }

    /// All indices on one level, sorted.
    pub fn level_indices(&self, level: u32) -> Vec<FrameIndex> {
        let m = Mesh::uniform_gen(self.dom.clone(), self.gen(level));
        let mut v: Vec<FrameIndex> =
            m.vertices().into_iter().filter(|p| !self.dom.on_boundary(*p)).map(|p| FrameIndex::new(level, p)).collect();
        v.sort_unstable();
        v
    }

    pub fn roots(&self) -> Vec<FrameIndex> {
        self.level_indices(0)
    }

    /// Elements of the level's uniform mesh carrying ψ_λ (those having the node
    /// as a vertex).
    pub fn patch(&self, lam: FrameIndex) -> Patch {
        let p = self.dom.locate(lam.node, self.gen(lam.level));
        debug_assert!(p.iter().all(|(_, v)| v[..self.dom.dim() + 1].contains(&lam.node)), "{lam} is not a vertex");
        p
    }

    /// ‖φ‖_V for the unnormalized hat on a patch.
    pub fn hat_norm(&self, node: Pt, patch: &[(Elem, [Pt; 3])]) -> f64 {
        let dim = self.dom.dim();
        let mut s = 0.0;
        for (_, v) in patch {
            let i = v.iter().position(|q| *q == node).expect("node not in patch element");
            let g = basis_grads(v, dim)[i];
            s += self.dom.measure(v) * (g[0] * g[0] + g[1] * g[1]);
        }
        s.sqrt()
    }

    pub fn norm(&self, lam: FrameIndex) -> f64 {
        self.hat_norm(lam.node, &self.patch(lam))
    }

    /// Nodes of the next level at which the coarse hat is nonzero: the node itself
    /// and the midpoints of its incident edges.
    pub fn child_nodes(&self, lam: FrameIndex, patch: &[(Elem, [Pt; 3])]) -> Vec<(Pt, f64)> {
        let nv = self.dom.dim() + 1;
        let mut out = vec![(lam.node, 1.0)];
        for (_, v) in patch {
            for q in &v[..nv] {
                if *q != lam.node {
                    out.push((Pt::mid(lam.node, *q), 0.5));
                }
            }
        }
        out.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        out.dedup_by(|a, b| a.0 == b.0);
        out
    }

    /// R(λ) with the two-scale weights h so that ψ_λ = Σ h ψ_μ.
    pub fn children(&self, lam: FrameIndex) -> Vec<(FrameIndex, f64)> {
        let patch = self.patch(lam);
        let n = self.hat_norm(lam.node, &patch);
        self.child_nodes(lam, &patch)
            .into_iter()
            .map(|(p, val)| {
                let mu = FrameIndex::new(lam.level + 1, p);
                (mu, val * self.norm(mu) / n)
            })
            .collect()
    }

    /// The designated coarser index: the same node one level up if it exists
    /// there, otherwise the nearer interior endpoint of the edge it bisects.
    /// Both endpoints are equally near, so the smaller point wins.
    pub fn parent(&self, lam: FrameIndex) -> Option<FrameIndex> {
        self.geo(lam).parent
    }

    fn find_parent(&self, lam: FrameIndex) -> Option<FrameIndex> {
        if lam.level == 0 {
            return None;
        }
        let j = lam.level - 1;
        let nv = self.dom.dim() + 1;
        let coarse = self.dom.locate(lam.node, self.gen(j));
        if coarse.iter().any(|(_, v)| v[..nv].contains(&lam.node)) {
            return Some(FrameIndex::new(j, lam.node));
        }
        let mut best: Option<Pt> = None;
        for (_, v) in &coarse {
            for k in 0..nv {
                let (a, b) = if nv == 2 { (v[0], v[1]) } else { (v[k], v[(k + 1) % 3]) };
                if Pt::mid(a, b) != lam.node {
                    continue;
                }
                for q in [a, b] {
                    if !self.dom.on_boundary(q) && best.map_or(true, |c| q < c) {
                        best = Some(q);
                    }
                }
            }
        }
        Some(FrameIndex::new(j, best.expect("bisected edge has no interior endpoint")))
    }

    /// ψ_λ(p).
    pub fn eval(&self, lam: FrameIndex, p: Pt) -> f64 {
        let patch = self.patch(lam);
        let n = self.hat_norm(lam.node, &patch);
        let dim = self.dom.dim();
        for (_, v) in &patch {
            if self.dom.closed_contains(v, p) {
                let i = v.iter().position(|q| *q == lam.node).unwrap();
                return crate::mesh::barycentric(v, dim, p)[i] / n;
            }
        }
        0.0
    }

    /// ⟨ξ, ψ_λ⟩ by exact integration over the patch against the carrier.
    pub fn coefficient(&self, xi: &Carrier, lam: FrameIndex) -> f64 {
        let g = self.geo(lam);
        let with_status: Vec<(Elem, [Pt; 3], CStatus)> = g.patch.iter().map(|(e, v)| (*e, *v, xi.status(*e))).collect();
        xi.integrate_hat(lam.node, &with_status) / g.norm
    }

    /// Membership in Θ_J(T): every leaf of T meeting supp ψ_λ in positive
    /// measure satisfies |λ| > level(K) + J, and every interior edge of T meeting
    /// it in positive length satisfies |λ| > level(E) + 2J.
    pub fn in_theta_j(&self, mesh: &Mesh, j: u32, lam: FrameIndex) -> bool {
        let dim = self.dom.dim();
        let patch = self.patch(lam);
        for (k, kv) in mesh.iter() {
            let inside = patch.iter().any(|(p, _)| p.covers(k));
            let covering = patch.iter().any(|(p, _)| k.covers(*p));
            if (inside || covering) && lam.level <= self.dom.level(k) + j {
                return false;
            }
            let ne = if dim == 1 { 2 } else { 3 };
            for e in 0..ne {
                let (a, b) = if dim == 1 { (kv[e], kv[e]) } else { (kv[e], kv[(e + 1) % 3]) };
                if self.edge_on_boundary(a, b) {
                    continue;
                }
                if lam.level > edge_level(dim, k, e) + 2 * j {
                    continue;
                }
                let hit = if dim == 1 {
                    patch.iter().any(|(_, pv)| a.x >= pv[0].x && a.x <= pv[1].x)
                } else {
                    inside || patch.iter().any(|(_, pv)| (0..3).any(|f| collinear_overlap(a, b, pv[f], pv[(f + 1) % 3])))
                };
                if hit {
                    return false;
                }
            }
        }
        true
    }

    fn edge_on_boundary(&self, a: Pt, b: Pt) -> bool {
        if self.dom.dim() == 1 {
            return self.dom.on_boundary(a);
        }
        self.dom.on_boundary(a) && self.dom.on_boundary(b) && self.dom.on_boundary(Pt::mid(a, b))
    }
}

/// Level of the uniform mesh containing local edge `e` of an element (d=1: the
/// endpoint's creation level, bounded by the element's generation).
pub fn edge_level(dim: usize, k: Elem, e: usize) -> u32 {
    let g = k.gen();
    if dim == 1 {
        return g;
    }
    if g % 2 == 0 {
        g / 2
    } else if e == 0 {
        g / 2
    } else {
        g.div_ceil(2)
    }
}

/// Segments [a,b] and [c,d] share a piece of positive length.
fn collinear_overlap(a: Pt, b: Pt, c: Pt, d: Pt) -> bool {
    if orient(a, b, c) != 0 || orient(a, b, d) != 0 {
        return false;
    }
    let key = |p: Pt| if a.x != b.x { p.x } else { p.y };
    let (lo1, hi1) = (key(a).min(key(b)), key(a).max(key(b)));
    let (lo2, hi2) = (key(c).min(key(d)), key(c).max(key(d)));
    lo1.max(lo2) < hi1.min(hi2) && (on_segment(a, b, c) || on_segment(a, b, d) || on_segment(c, d, a))
}
