use std::sync::Arc;

use rustc_hash::FxHashMap;

use super::geometry::{edge_pts, Elem, Pt, ONE};
use super::{Mesh, Status};

pub const NO_NODE: u32 = u32::MAX;

/// Continuous piecewise linears on a conforming mesh vanishing on the boundary.
/// Interior vertices are numbered in sorted point order.
#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    nodes: Vec<Pt>,
    node_of: FxHashMap<Pt, u32>,
    elem_nodes: Vec<[u32; 3]>,
    /// Leaf across each local edge, or NO_NODE on the boundary.
    neighbours: Vec<[u32; 3]>,
}

impl FeSpace {
    pub fn new(mesh: Arc<Mesh>) -> FeSpace {
        let dom = mesh.domain().clone();
        let nv = mesh.dim() + 1;
        let mut nodes: Vec<Pt> = mesh.vertices().into_iter().filter(|p| !dom.on_boundary(*p)).collect();
        nodes.sort_unstable();
        let node_of: FxHashMap<Pt, u32> = nodes.iter().enumerate().map(|(i, p)| (*p, i as u32)).collect();
        let elem_nodes = (0..mesh.len())
            .map(|i| {
                let v = mesh.leaf_verts(i);
                let mut out = [NO_NODE; 3];
                for k in 0..nv {
                    out[k] = node_of.get(&v[k]).copied().unwrap_or(NO_NODE);
                }
                out
            })
            .collect();
        let mut neighbours = vec![[NO_NODE; 3]; mesh.len()];
        if mesh.dim() == 1 {
            // Handles sort by generation first, so order the intervals by position.
            let mut order: Vec<usize> = (0..mesh.len()).collect();
            order.sort_unstable_by_key(|&i| mesh.leaf_verts(i)[0].x);
            for w in order.windows(2) {
                neighbours[w[0]][1] = w[1] as u32;
                neighbours[w[1]][0] = w[0] as u32;
            }
        } else {
            let mut edges: FxHashMap<(Pt, Pt), (u32, usize)> = FxHashMap::default();
            for i in 0..mesh.len() {
                let v = mesh.leaf_verts(i);
                for k in 0..3 {
                    let (a, b) = edge_pts(v, k);
                    let key = if a < b { (a, b) } else { (b, a) };
                    if let Some((j, kj)) = edges.remove(&key) {
                        neighbours[i][k] = j;
                        neighbours[j as usize][kj] = i as u32;
                    } else {
                        edges.insert(key, (i as u32, k));
                    }
                }
            }
        }
        FeSpace { mesh, nodes, node_of, elem_nodes, neighbours }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Pt] {
        &self.nodes
    }

    pub fn node_index(&self, p: Pt) -> Option<u32> {
        self.node_of.get(&p).copied()
    }

    pub fn elem_nodes(&self, i: usize) -> &[u32; 3] {
        &self.elem_nodes[i]
    }

    pub fn neighbour(&self, i: usize, k: usize) -> Option<usize> {
        let n = self.neighbours[i][k];
        (n != NO_NODE).then_some(n as usize)
    }

    /// Gradients of the vertex basis functions on leaf `i` (d=1 uses the x slot).
    pub fn basis_grads(&self, i: usize) -> [[f64; 2]; 3] {
        basis_grads(self.mesh.leaf_verts(i), self.mesh.dim())
    }

    /// Stiffness matrix as sorted (row, col, value) triplets, duplicates summed.
    pub fn stiffness_triplets(&self) -> Vec<(u32, u32, f64)> {
        let dom = self.mesh.domain();
        let nv = self.mesh.dim() + 1;
        let mut acc: FxHashMap<(u32, u32), f64> = FxHashMap::default();
        for i in 0..self.mesh.len() {
            let g = self.basis_grads(i);
            let area = dom.measure(self.mesh.leaf_verts(i));
            let en = self.elem_nodes[i];
            for a in 0..nv {
                if en[a] == NO_NODE {
                    continue;
                }
                for b in 0..nv {
                    if en[b] == NO_NODE {
                        continue;
                    }
                    *acc.entry((en[a], en[b])).or_default() += area * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
        }
        let mut t: Vec<_> = acc.into_iter().map(|((r, c), v)| (r, c, v)).collect();
        t.sort_unstable_by_key(|x| (x.0, x.1));
        t
    }
}

/// Gradients of barycentric coordinates on a simplex.
pub fn basis_grads(v: &[Pt; 3], dim: usize) -> [[f64; 2]; 3] {
    if dim == 1 {
        let h = (v[1].x - v[0].x) as f64 / ONE as f64;
        return [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0, 0.0]];
    }
    let p = v.map(|q| q.to_f64());
    let (x1, y1) = (p[1][0] - p[0][0], p[1][1] - p[0][1]);
    let (x2, y2) = (p[2][0] - p[0][0], p[2][1] - p[0][1]);
    let det = x1 * y2 - x2 * y1;
    let g1 = [y2 / det, -x2 / det];
    let g2 = [-y1 / det, x1 / det];
    [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2]
}

/// Barycentric coordinates of `p` in a simplex.
pub fn barycentric(v: &[Pt; 3], dim: usize, p: Pt) -> [f64; 3] {
    if dim == 1 {
        let t = (p.x - v[0].x) as f64 / (v[1].x - v[0].x) as f64;
        return [1.0 - t, t, 0.0];
    }
    let det = super::orient(v[0], v[1], v[2]) as f64;
    let l1 = super::orient(v[0], p, v[2]) as f64 / det;
    let l2 = super::orient(v[0], v[1], p) as f64 / det;
    [1.0 - l1 - l2, l1, l2]
}

/// A member of V(T), stored by interior nodal values.
#[derive(Clone, Debug)]
pub struct FeFunction {
    pub space: Arc<FeSpace>,
    pub values: Vec<f64>,
}

impl FeFunction {
    pub fn zero(space: Arc<FeSpace>) -> FeFunction {
        let n = space.dim();
        FeFunction { space, values: vec![0.0; n] }
    }

    pub fn new(space: Arc<FeSpace>, values: Vec<f64>) -> FeFunction {
        assert_eq!(values.len(), space.dim());
        FeFunction { space, values }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.space.mesh()
    }

    /// Vertex values on leaf `i` (zero at boundary vertices).
    pub fn local_values(&self, i: usize) -> [f64; 3] {
        let en = self.space.elem_nodes(i);
        en.map(|n| if n == NO_NODE { 0.0 } else { self.values[n as usize] })
    }

    pub fn grad(&self, i: usize) -> [f64; 2] {
        let g = self.space.basis_grads(i);
        let u = self.local_values(i);
        let nv = self.mesh().dim() + 1;
        let mut out = [0.0; 2];
        for k in 0..nv {
            out[0] += u[k] * g[k][0];
            out[1] += u[k] * g[k][1];
        }
        out
    }

    /// Value at a point of the closure of leaf `i`.
    pub fn eval_in(&self, i: usize, p: Pt) -> f64 {
        let m = self.mesh();
        let b = barycentric(m.leaf_verts(i), m.dim(), p);
        let u = self.local_values(i);
        b[0] * u[0] + b[1] * u[1] + b[2] * u[2]
    }

    /// Value at a vertex of an element of the forest that lies inside some leaf.
    pub fn eval_at_elem_vertex(&self, e: Elem, p: Pt) -> f64 {
        match self.mesh().status(e) {
            Status::Within(i) => self.eval_in(i as usize, p),
            Status::Internal => {
                if let Some(n) = self.space.node_index(p) {
                    self.values[n as usize]
                } else {
                    0.0
                }
            }
        }
    }

    /// Squared H^1 seminorm.
    pub fn energy(&self) -> f64 {
        let m = self.mesh();
        let dom = m.domain();
        (0..m.len())
            .map(|i| {
                let g = self.grad(i);
                dom.measure(m.leaf_verts(i)) * (g[0] * g[0] + g[1] * g[1])
            })
            .sum()
    }

    /// Interpolate onto a refinement of this function's mesh; exact since V(T) ⊂ V(T').
    pub fn prolong(&self, fine: Arc<FeSpace>) -> FeFunction {
        let fm = fine.mesh().clone();
        let mut values = vec![0.0; fine.dim()];
        let mut done = vec![false; fine.dim()];
        for i in 0..fm.len() {
            let e = fm.leaf(i);
            let en = fine.elem_nodes(i);
            let v = fm.leaf_verts(i);
            let coarse = match self.mesh().status(e) {
                Status::Within(c) => c as usize,
                Status::Internal => panic!("prolongation target does not refine the source mesh"),
            };
            for k in 0..fm.dim() + 1 {
                let n = en[k];
                if n != NO_NODE && !done[n as usize] {
                    values[n as usize] = self.eval_in(coarse, v[k]);
                    done[n as usize] = true;
                }
            }
        }
        FeFunction::new(fine, values)
    }
}

/// ∫ ∇u·∇v over the domain, exact on the common refinement.
pub fn h1_inner(u: &FeFunction, v: &FeFunction) -> f64 {
    let (mu, mv) = (u.mesh(), v.mesh());
    let dom = mu.domain();
    if Arc::ptr_eq(mu, mv) {
        return (0..mu.len())
            .map(|i| {
                let (a, b) = (u.grad(i), v.grad(i));
                dom.measure(mu.leaf_verts(i)) * (a[0] * b[0] + a[1] * b[1])
            })
            .sum();
    }
    let o = mu.overlay(mv).expect("h1_inner on meshes with different roots");
    let mut s = 0.0;
    for (e, verts) in o.iter() {
        let Status::Within(iu) = mu.status(e) else { unreachable!() };
        let Status::Within(iv) = mv.status(e) else { unreachable!() };
        let (a, b) = (u.grad(iu as usize), v.grad(iv as usize));
        s += dom.measure(verts) * (a[0] * b[0] + a[1] * b[1]);
    }
    s
}
