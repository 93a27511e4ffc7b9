//! Bisection meshes: dyadic intervals in d=1, newest vertex bisection in d=2.

mod fe;
mod geometry;
mod refine;

use std::sync::Arc;

use rustc_hash::FxHashMap;
use serde::Serialize;

pub use fe::{barycentric, basis_grads, h1_inner, FeFunction, FeSpace, NO_NODE};
pub use geometry::{
    bisect_verts, edge_children, edge_pts, on_segment, orient, tri_contains, Domain, DomainKind, Elem, Pt, MAX_GEN, ONE,
    SCALE_BITS,
};
pub use refine::MeshBuilder;

use crate::error::{Error, Result};

/// Where an element sits relative to a mesh's bisection tree.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Status {
    /// Contained in (or equal to) the given leaf.
    Within(u32),
    /// Strictly refined in the mesh: leaves lie below it.
    Internal,
}

/// Leaves of a bisection forest over the roots of a domain. Leaves are sorted by
/// handle; `tree` maps every leaf and every ancestor of a leaf.
#[derive(Clone, Debug)]
pub struct Mesh {
    dom: Arc<Domain>,
    leaves: Vec<Elem>,
    verts: Vec<[Pt; 3]>,
    tree: FxHashMap<Elem, u32>,
}

const INTERNAL: u32 = u32::MAX;

impl Mesh {
    pub fn from_leaves(dom: Arc<Domain>, mut leaves: Vec<(Elem, [Pt; 3])>) -> Mesh {
        leaves.sort_unstable_by_key(|l| l.0);
        leaves.dedup_by_key(|l| l.0);
        let mut tree = FxHashMap::with_capacity_and_hasher(2 * leaves.len(), Default::default());
        for (i, (e, _)) in leaves.iter().enumerate() {
            tree.insert(*e, i as u32);
            let mut p = e.parent();
            while let Some(q) = p {
                if tree.insert(q, INTERNAL).is_some() {
                    break;
                }
                p = q.parent();
            }
        }
        let (leaves, verts) = leaves.into_iter().unzip();
        Mesh { dom, leaves, verts, tree }
    }

    /// The root triangulation itself.
    pub fn initial(dom: Arc<Domain>) -> Mesh {
        let leaves = dom.root_elems().map(|e| (e, dom.verts(e))).collect();
        Mesh::from_leaves(dom, leaves)
    }

    /// Uniform mesh whose elements all have level `j`.
    pub fn uniform_level(dom: Arc<Domain>, j: u32) -> Mesh {
        let g = if dom.dim() == 1 { j } else { 2 * j };
        Mesh::uniform_gen(dom, g)
    }

    /// All elements of one generation.
    pub fn uniform_gen(dom: Arc<Domain>, g: u32) -> Mesh {
        let dim = dom.dim();
        let mut cur: Vec<(Elem, [Pt; 3])> = dom.root_elems().map(|e| (e, dom.verts(e))).collect();
        for _ in 0..g {
            let mut next = Vec::with_capacity(cur.len() * 2);
            for (e, v) in &cur {
                let cv = bisect_verts(v, dim);
                next.push((e.child(0), cv[0]));
                next.push((e.child(1), cv[1]));
            }
            cur = next;
        }
        Mesh::from_leaves(dom, cur)
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.dom
    }

    pub fn dim(&self) -> usize {
        self.dom.dim()
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn leaves(&self) -> &[Elem] {
        &self.leaves
    }

    pub fn leaf(&self, i: usize) -> Elem {
        self.leaves[i]
    }

    pub fn leaf_verts(&self, i: usize) -> &[Pt; 3] {
        &self.verts[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Elem, &[Pt; 3])> + '_ {
        self.leaves.iter().copied().zip(self.verts.iter())
    }

    pub fn leaf_index(&self, e: Elem) -> Option<u32> {
        self.tree.get(&e).copied().filter(|&i| i != INTERNAL)
    }

    /// Element is a node (leaf or ancestor of a leaf) of this mesh's tree.
    pub fn in_tree(&self, e: Elem) -> bool {
        self.tree.contains_key(&e)
    }

    /// Position of an arbitrary element of the forest relative to this mesh.
    pub fn status(&self, e: Elem) -> Status {
        if let Some(&i) = self.tree.get(&e) {
            return if i == INTERNAL { Status::Internal } else { Status::Within(i) };
        }
        let mut p = e.parent();
        while let Some(q) = p {
            if let Some(&i) = self.tree.get(&q) {
                assert!(i != INTERNAL, "mesh tree is not a complete forest");
                return Status::Within(i);
            }
            p = q.parent();
        }
        panic!("element {e:?} is not below any root of the mesh");
    }

    /// Leaves contained in `e` (or the single leaf containing it).
    pub fn leaves_in(&self, e: Elem, v: &[Pt; 3], out: &mut Vec<u32>) {
        match self.status(e) {
            Status::Within(i) => out.push(i),
            Status::Internal => {
                let cv = bisect_verts(v, self.dim());
                for c in 0..2 {
                    self.leaves_in(e.child(c), &cv[c as usize], out);
                }
            }
        }
    }

    pub fn max_gen(&self) -> u32 {
        self.leaves.iter().map(|e| e.gen()).max().unwrap_or(0)
    }

    /// Every leaf vertex.
    pub fn vertices(&self) -> Vec<Pt> {
        let n = if self.dim() == 1 { 2 } else { 3 };
        let mut v: Vec<Pt> = self.verts.iter().flat_map(|t| t[..n].iter().copied()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// No hanging nodes: every leaf edge is a full edge of the neighbouring leaf.
    pub fn is_conforming(&self) -> bool {
        if self.dim() == 1 {
            return true;
        }
        let mut count: FxHashMap<(Pt, Pt), u32> = FxHashMap::default();
        for v in &self.verts {
            for k in 0..3 {
                let (a, b) = edge_pts(v, k);
                *count.entry(if a < b { (a, b) } else { (b, a) }).or_default() += 1;
            }
        }
        count.iter().all(|(&(a, b), &c)| match c {
            2 => true,
            1 => self.dom.on_boundary(a) && self.dom.on_boundary(b) && self.dom.on_boundary(Pt::mid(a, b)),
            _ => false,
        })
    }

    /// Smallest common refinement. Both meshes must share the same roots.
    pub fn overlay(&self, other: &Mesh) -> Result<Mesh> {
        if !Arc::ptr_eq(&self.dom, &other.dom) && self.dom.roots != other.dom.roots {
            return Err(Error::Structure("overlay of meshes with different root triangulations".into()));
        }
        let mut leaves = Vec::with_capacity(self.len().max(other.len()));
        for (a, b) in [(self, other), (other, self)] {
            for (e, v) in a.iter() {
                if b.tree.get(&e) != Some(&INTERNAL) {
                    leaves.push((e, *v));
                }
            }
        }
        Ok(Mesh::from_leaves(self.dom.clone(), leaves))
    }

    /// Smallest conforming refinement in which every marked leaf is bisected.
    pub fn refine_conforming(&self, marked: &[Elem]) -> Mesh {
        if marked.is_empty() {
            return self.clone();
        }
        let mut b = MeshBuilder::from_mesh(self);
        for &e in marked {
            if b.is_leaf(e) {
                b.bisect(e);
            }
        }
        b.finish()
    }

    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct JsonElem {
            id: u64,
            root: usize,
            generation: u32,
            path: String,
            vertices: Vec<[(i64, u32); 2]>,
            /// Labels of the local edges (v0v1, v1v2, v2v0); the minimal one is bisected next.
            labels: Vec<u32>,
        }
        let n = if self.dim() == 1 { 2 } else { 3 };
        let elems: Vec<JsonElem> = self
            .iter()
            .map(|(e, v)| JsonElem {
                id: e.0,
                root: e.root_index(),
                generation: e.gen(),
                path: (0..e.gen()).rev().map(|s| if (e.path() >> s) & 1 == 1 { '1' } else { '0' }).collect(),
                vertices: v[..n].iter().map(|p| [Pt::reduce(p.x), Pt::reduce(p.y)]).collect(),
                labels: if n == 3 { vec![e.gen(), e.gen() + 1, e.gen() + 1] } else { vec![] },
            })
            .collect();
        serde_json::json!({
            "dim": self.dim(),
            "domain": self.dom.kind,
            "roots": self.dom.num_roots(),
            "conforming": self.is_conforming(),
            "elements": elems,
        })
    }
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.leaves == other.leaves
    }
}
