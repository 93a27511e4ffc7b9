use std::sync::Arc;

use rustc_hash::FxHashMap;

use super::geometry::{bisect_verts, edge_pts, Domain, Elem, Pt};
use super::Mesh;

type EdgeKey = (Pt, Pt);

fn key(a: Pt, b: Pt) -> EdgeKey {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Mutable conforming mesh used while refining. Keeps an edge table so the
/// neighbour across a refinement edge is found in O(1).
pub struct MeshBuilder {
    dom: Arc<Domain>,
    leaves: FxHashMap<Elem, [Pt; 3]>,
    edges: FxHashMap<EdgeKey, [Elem; 2]>,
    bisections: usize,
}

impl MeshBuilder {
    pub fn from_mesh(m: &Mesh) -> MeshBuilder {
        let mut b = MeshBuilder {
            dom: m.domain().clone(),
            leaves: FxHashMap::with_capacity_and_hasher(m.len() * 2, Default::default()),
            edges: FxHashMap::default(),
            bisections: 0,
        };
        for (e, v) in m.iter() {
            b.insert(e, *v);
        }
        b
    }

    pub fn is_leaf(&self, e: Elem) -> bool {
        self.leaves.contains_key(&e)
    }

    /// Number of single bisections performed so far (marked plus closure).
    pub fn bisections(&self) -> usize {
        self.bisections
    }

    fn insert(&mut self, e: Elem, v: [Pt; 3]) {
        self.leaves.insert(e, v);
        if self.dom.dim() == 2 {
            for k in 0..3 {
                let (a, b) = edge_pts(&v, k);
                let slot = self.edges.entry(key(a, b)).or_insert([Elem::NONE; 2]);
                if slot[0] == Elem::NONE {
                    slot[0] = e;
                } else {
                    debug_assert!(slot[1] == Elem::NONE, "edge shared by three elements");
                    slot[1] = e;
                }
            }
        }
    }

    fn remove(&mut self, e: Elem) -> [Pt; 3] {
        let v = self.leaves.remove(&e).expect("not a leaf");
        if self.dom.dim() == 2 {
            for k in 0..3 {
                let (a, b) = edge_pts(&v, k);
                let kk = key(a, b);
                let slot = self.edges.get_mut(&kk).unwrap();
                if slot[0] == e {
                    slot[0] = slot[1];
                }
                slot[1] = Elem::NONE;
                if slot[0] == Elem::NONE {
                    self.edges.remove(&kk);
                }
            }
        }
        v
    }

    fn split(&mut self, e: Elem) {
        let v = self.remove(e);
        let cv = bisect_verts(&v, self.dom.dim());
        self.insert(e.child(0), cv[0]);
        self.insert(e.child(1), cv[1]);
        self.bisections += 1;
    }

    /// Bisect a leaf and close the mesh again. The neighbour across the refinement
    /// edge is refined first until it shares that edge as its own refinement edge.
    pub fn bisect(&mut self, e: Elem) {
        if self.dom.dim() == 1 {
            self.split(e);
            return;
        }
        loop {
            let v = self.leaves[&e];
            let slot = self.edges[&key(v[0], v[1])];
            let nb = if slot[0] == e { slot[1] } else { slot[0] };
            if nb == Elem::NONE {
                self.split(e);
                return;
            }
            let nv = self.leaves[&nb];
            if key(nv[0], nv[1]) == key(v[0], v[1]) {
                self.split(e);
                self.split(nb);
                return;
            }
            self.bisect(nb);
        }
    }

    /// Leaf whose closure holds `target` as a descendant, if any.
    pub fn leaf_above(&self, target: Elem) -> Option<Elem> {
        let mut cur = Some(target);
        while let Some(c) = cur {
            if self.leaves.contains_key(&c) {
                return Some(c);
            }
            cur = c.parent();
        }
        None
    }

    /// Refine until `target` is an element of the tree.
    pub fn ensure(&mut self, target: Elem) {
        while let Some(l) = self.leaf_above(target) {
            if l == target {
                return;
            }
            self.bisect(l);
        }
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn finish(self) -> Mesh {
        Mesh::from_leaves(self.dom, self.leaves.into_iter().collect())
    }
}
