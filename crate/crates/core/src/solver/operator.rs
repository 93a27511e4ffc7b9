use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::csr::Csr;
use crate::apply_compress::ThetaCache;
use crate::coeff_field::{CoeffField, LevelIndex, ThetaPiece};
use crate::functional::vol_moments;
use crate::mesh::{bisect_verts, Elem, FeFunction, FeSpace, Pt, Status, NO_NODE};
use crate::stochastic::{beta, MultiIndex, SgFunction};

/// Concatenated nodal coordinates of one finite element space per active ν.
#[derive(Clone, Debug)]
pub struct Layout {
    pub keys: Vec<MultiIndex>,
    pub spaces: Vec<Arc<FeSpace>>,
    pub offsets: Vec<usize>,
}

impl Layout {
    pub fn new(spaces: &BTreeMap<MultiIndex, Arc<FeSpace>>) -> Layout {
        let keys: Vec<MultiIndex> = spaces.keys().cloned().collect();
        let spaces: Vec<Arc<FeSpace>> = spaces.values().cloned().collect();
        let mut offsets = vec![0];
        for s in &spaces {
            offsets.push(offsets.last().unwrap() + s.dim());
        }
        Layout { keys, spaces, offsets }
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn position(&self, nu: &MultiIndex) -> Option<usize> {
        self.keys.binary_search(nu).ok()
    }

    pub fn range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    /// Coefficients of `v`, prolonged onto this layout's spaces; blocks absent
    /// from `v` are zero.
    pub fn flatten(&self, v: &SgFunction) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for (b, nu) in self.keys.iter().enumerate() {
            if let Some(f) = v.blocks.get(nu) {
                let s = &self.spaces[b];
                let vals = if Arc::ptr_eq(&f.space, s) { f.values.clone() } else { f.prolong(s.clone()).values };
                x[self.range(b)].copy_from_slice(&vals);
            }
        }
        x
    }

    pub fn unflatten(&self, x: &[f64]) -> SgFunction {
        let mut v = SgFunction::new();
        for (b, nu) in self.keys.iter().enumerate() {
            v.blocks.insert(nu.clone(), FeFunction::new(self.spaces[b].clone(), x[self.range(b)].to_vec()));
        }
        v
    }
}

/// ∫ θ ∇φ_i·∇φ'_j between the nodal bases of two spaces, θ given by pieces.
/// The integrand is θ times a constant on every element of the overlay of both
/// meshes with the pieces, so a moment rule for θ is exact.
pub fn coupling_triplets(pieces: &[ThetaPiece], a: &FeSpace, b: &FeSpace, out: &mut Vec<(u32, u32, f64)>) {
    let (ma, mb) = (a.mesh(), b.mesh());
    let dim = ma.dim();
    let nv = dim + 1;
    let mut stack: Vec<(Elem, [Pt; 3])> = Vec::new();
    let mut local: Vec<(u32, u32, f64)> = Vec::new();
    for (c, cv, th) in pieces {
        stack.push((*c, *cv));
        while let Some((e, v)) = stack.pop() {
            match (ma.status(e), mb.status(e)) {
                (Status::Within(la), Status::Within(lb)) => {
                    let m = vol_moments(dim, &v, th, cv[0]);
                    let w: f64 = m[..nv].iter().sum();
                    if w == 0.0 {
                        continue;
                    }
                    let (ga, gb) = (a.basis_grads(la as usize), b.basis_grads(lb as usize));
                    let (na, nb) = (a.elem_nodes(la as usize), b.elem_nodes(lb as usize));
                    for i in 0..nv {
                        if na[i] == NO_NODE {
                            continue;
                        }
                        for j in 0..nv {
                            if nb[j] == NO_NODE {
                                continue;
                            }
                            local.push((na[i], nb[j], w * (ga[i][0] * gb[j][0] + ga[i][1] * gb[j][1])));
                        }
                    }
                }
                _ => {
                    let ch = bisect_verts(&v, dim);
                    stack.push((e.child(0), ch[0]));
                    stack.push((e.child(1), ch[1]));
                }
            }
        }
    }
    out.append(&mut local);
}

/// Nonzero pairs (ν, ν + e_μ) of the active set with |μ| < ℓ, and the weight
/// √β_{ν_μ+1} of M_μ between them.
pub fn coupled_pairs(layout: &Layout, ell: u32) -> Vec<(usize, usize, LevelIndex, f64)> {
    let mut out = Vec::new();
    for (bp, nup) in layout.keys.iter().enumerate() {
        for &(mu, k) in nup.entries() {
            if (mu.level as u32) >= ell {
                continue;
            }
            let nu = nup.shifted(mu, false).unwrap();
            if let Some(b) = layout.position(&nu) {
                out.push((b, bp, mu, beta(k).sqrt()));
            }
        }
    }
    out
}

/// B_ℓ = M_0 ⊗ A_0 + Σ_{|μ|<ℓ} M_μ ⊗ A_μ on a layout, assembled.
#[derive(Clone, Debug)]
pub struct BlockOperator {
    pub layout: Layout,
    pub ell: u32,
    pub matrix: Csr,
}

impl BlockOperator {
    pub fn assemble(cf: &CoeffField, layout: Layout, ell: u32, cache: &mut ThetaCache) -> BlockOperator {
        cache.ensure(cf, ell);
        let cache = &*cache;
        let pairs = coupled_pairs(&layout, ell);
        let diag: Vec<Vec<(u32, u32, f64)>> = (0..layout.keys.len())
            .into_par_iter()
            .map(|b| {
                let o = layout.offsets[b] as u32;
                layout.spaces[b].stiffness_triplets().into_iter().map(|(r, c, v)| (r + o, c + o, v)).collect()
            })
            .collect();
        let off: Vec<Vec<(u32, u32, f64)>> = pairs
            .par_iter()
            .map(|&(b, bp, mu, w)| {
                let pieces = cache.get(mu).expect("theta cache too shallow");
                let mut t = Vec::new();
                coupling_triplets(pieces, &layout.spaces[b], &layout.spaces[bp], &mut t);
                let (o, op) = (layout.offsets[b] as u32, layout.offsets[bp] as u32);
                let mut out = Vec::with_capacity(2 * t.len());
                for (r, c, v) in t {
                    out.push((r + o, c + op, w * v));
                    out.push((c + op, r + o, w * v));
                }
                out
            })
            .collect();
        let mut all: Vec<(u32, u32, f64)> = Vec::with_capacity(diag.iter().chain(&off).map(|x| x.len()).sum());
        for t in diag.into_iter().chain(off) {
            all.extend(t);
        }
        let matrix = Csr::from_triplets(layout.dim(), all);
        BlockOperator { layout, ell, matrix }
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.mul(x, y);
    }

    /// ⟨B_ℓ x, x⟩.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        super::csr::dot(x, &y)
    }
}
