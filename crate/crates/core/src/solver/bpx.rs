use rustc_hash::FxHashMap;

use crate::mesh::{basis_grads, bisect_verts, Elem, FeSpace, Pt, Status};

/// Local multilevel diagonal preconditioner on one adaptive mesh.
///
/// Level j of the hierarchy keeps every element of generation at most s·j that
/// is a leaf or has generation exactly s·j, with s the generations per uniform
/// level. A vertex enters at the level of the element bisection creating it and
/// its two parents are the endpoints of the bisected edge. Level j only scales
/// the vertices of elements new at j (all vertices on level 0), each by the
/// level-j stiffness diagonal, so the whole thing costs O(#elements).
#[derive(Clone, Debug)]
pub struct Bpx {
    n_verts: usize,
    /// FE node -> vertex.
    node_vertex: Vec<u32>,
    interior: Vec<bool>,
    /// Vertices created at each level in creation order, with their parents.
    new_nodes: Vec<Vec<(u32, u32, u32)>>,
    /// Vertices scaled at each level with their inverse diagonal.
    scaled: Vec<Vec<(u32, f64)>>,
}

impl Bpx {
    pub fn new(space: &FeSpace) -> Bpx {
        let mesh = space.mesh();
        let dom = mesh.domain().clone();
        let dim = mesh.dim();
        let nv = dim + 1;
        let s = dom.frame_step();

        let mut elems: Vec<(Elem, [Pt; 3], bool)> = Vec::new();
        let mut stack: Vec<(Elem, [Pt; 3])> = dom.root_elems().map(|e| (e, dom.verts(e))).collect();
        while let Some((e, v)) = stack.pop() {
            match mesh.status(e) {
                Status::Within(_) => elems.push((e, v, true)),
                Status::Internal => {
                    elems.push((e, v, false));
                    let ch = bisect_verts(&v, dim);
                    stack.push((e.child(0), ch[0]));
                    stack.push((e.child(1), ch[1]));
                }
            }
        }

        // Vertices with creation generation and parents; roots' vertices at 0.
        let mut vid: FxHashMap<Pt, u32> = FxHashMap::default();
        let mut created: Vec<(u32, u32, u32)> = Vec::new();
        let mut pts: Vec<Pt> = Vec::new();
        elems.sort_unstable_by_key(|x| x.0);
        for (e, v, leaf) in &elems {
            if e.gen() == 0 {
                for p in &v[..nv] {
                    vid.entry(*p).or_insert_with(|| {
                        pts.push(*p);
                        created.push((0, u32::MAX, u32::MAX));
                        (pts.len() - 1) as u32
                    });
                }
            }
            if !leaf {
                let m = Pt::mid(v[0], v[1]);
                let (a, b) = (vid[&v[0]], vid[&v[1]]);
                let g = e.gen() + 1;
                match vid.get(&m) {
                    Some(&i) => {
                        let c = &mut created[i as usize];
                        if g < c.0 {
                            *c = (g, a, b);
                        }
                    }
                    None => {
                        pts.push(m);
                        created.push((g, a, b));
                        vid.insert(m, (pts.len() - 1) as u32);
                    }
                }
            }
        }
        let n_verts = pts.len();
        let interior: Vec<bool> = pts.iter().map(|p| !dom.on_boundary(*p)).collect();
        let top = elems.iter().map(|x| x.0.gen().div_ceil(s)).max().unwrap_or(0) as usize;

        let mut new_nodes = vec![Vec::new(); top + 1];
        let mut order: Vec<u32> = (0..n_verts as u32).filter(|&i| created[i as usize].0 > 0).collect();
        order.sort_unstable_by_key(|&i| (created[i as usize].0, i));
        for i in order {
            let (g, a, b) = created[i as usize];
            new_nodes[g.div_ceil(s) as usize].push((i, a, b));
        }

        // Element membership intervals [lo, hi] in levels.
        let mut added: Vec<Vec<usize>> = vec![Vec::new(); top + 2];
        let mut removed: Vec<Vec<usize>> = vec![Vec::new(); top + 2];
        for (k, (e, _, leaf)) in elems.iter().enumerate() {
            let g = e.gen();
            if *leaf {
                added[g.div_ceil(s) as usize].push(k);
            } else if g % s == 0 {
                added[(g / s) as usize].push(k);
                removed[(g / s) as usize + 1].push(k);
            }
        }
        let local = |k: usize| -> ([u32; 3], [f64; 3]) {
            let (_, v, _) = &elems[k];
            let gr = basis_grads(v, dim);
            let vol = dom.measure(v);
            let mut ids = [u32::MAX; 3];
            let mut d = [0.0; 3];
            for i in 0..nv {
                ids[i] = vid[&v[i]];
                d[i] = vol * (gr[i][0] * gr[i][0] + gr[i][1] * gr[i][1]);
            }
            (ids, d)
        };
        let mut diag = vec![0.0; n_verts];
        let mut scaled = Vec::with_capacity(top + 1);
        let mut mark = vec![false; n_verts];
        for j in 0..=top {
            for &k in &removed[j] {
                let (ids, d) = local(k);
                for i in 0..nv {
                    diag[ids[i] as usize] -= d[i];
                }
            }
            let mut touched = Vec::new();
            for &k in &added[j] {
                let (ids, d) = local(k);
                for i in 0..nv {
                    let n = ids[i] as usize;
                    diag[n] += d[i];
                    if interior[n] && !mark[n] {
                        mark[n] = true;
                        touched.push(n as u32);
                    }
                }
            }
            touched.sort_unstable();
            for &n in &touched {
                mark[n as usize] = false;
            }
            scaled.push(touched.into_iter().map(|n| (n, 1.0 / diag[n as usize])).collect());
        }

        let node_vertex = space.nodes().iter().map(|p| vid[p]).collect();
        Bpx { n_verts, node_vertex, interior, new_nodes, scaled }
    }

    pub fn levels(&self) -> usize {
        self.scaled.len()
    }

    /// x = P g on the FE node coefficients.
    pub fn apply(&self, g: &[f64], x: &mut [f64]) {
        let mut r = vec![0.0; self.n_verts];
        for (i, &v) in self.node_vertex.iter().enumerate() {
            r[v as usize] = g[i];
        }
        let top = self.levels() - 1;
        let mut y: Vec<Vec<f64>> = vec![Vec::new(); top + 1];
        for j in (0..=top).rev() {
            y[j] = self.scaled[j].iter().map(|&(n, w)| w * r[n as usize]).collect();
            for &(m, a, b) in self.new_nodes[j].iter().rev() {
                let h = 0.5 * r[m as usize];
                r[a as usize] += h;
                r[b as usize] += h;
            }
        }
        let mut u = vec![0.0; self.n_verts];
        for j in 0..=top {
            for &(m, a, b) in &self.new_nodes[j] {
                if self.interior[m as usize] {
                    u[m as usize] = 0.5 * (u[a as usize] + u[b as usize]);
                }
            }
            for (k, &(n, _)) in self.scaled[j].iter().enumerate() {
                u[n as usize] += y[j][k];
            }
        }
        for (i, &v) in self.node_vertex.iter().enumerate() {
            debug_assert!(self.interior[v as usize]);
            x[i] = u[v as usize];
        }
    }
}
