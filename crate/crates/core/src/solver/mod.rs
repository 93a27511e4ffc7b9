//! Galerkin solve on a fixed mesh family: assembled truncated operator B_ℓ,
//! block-diagonal multilevel preconditioner and PCG.

mod bpx;
mod csr;
mod operator;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

pub use bpx::Bpx;
pub use csr::{dot, Csr};
pub use operator::{coupled_pairs, coupling_triplets, BlockOperator, Layout};

use crate::apply_compress::ThetaCache;
use crate::coeff_field::CoeffField;
use crate::error::{Error, Result};
use crate::functional::PwFunctional;
use crate::mesh::{FeSpace, Mesh};
use crate::stochastic::{MultiIndex, SgFunction};

/// One Bpx per block of a layout.
#[derive(Clone, Debug)]
pub struct Preconditioner {
    pub blocks: Vec<Bpx>,
    offsets: Vec<usize>,
}

impl Preconditioner {
    pub fn new(layout: &Layout) -> Preconditioner {
        let blocks = layout.spaces.par_iter().map(|s| Bpx::new(s)).collect();
        Preconditioner { blocks, offsets: layout.offsets.clone() }
    }

    pub fn apply(&self, g: &[f64], x: &mut [f64]) {
        let mut parts: Vec<&mut [f64]> = Vec::with_capacity(self.blocks.len());
        let mut rest = x;
        for b in 0..self.blocks.len() {
            let (h, t) = rest.split_at_mut(self.offsets[b + 1] - self.offsets[b]);
            parts.push(h);
            rest = t;
        }
        parts.into_par_iter().enumerate().for_each(|(b, xb)| {
            self.blocks[b].apply(&g[self.offsets[b]..self.offsets[b + 1]], xb);
        });
    }
}

#[derive(Clone, Debug, Default)]
pub struct PcgStats {
    pub iterations: usize,
    /// ⟨P res, res⟩ at exit.
    pub final_pres: f64,
    /// ⟨P res, res⟩ per iterate, starting with the initial guess.
    pub history: Vec<f64>,
}

/// Solves B x = rhs from x = 0 until ⟨P(Bx − rhs), Bx − rhs⟩ ≤ eps0².
pub fn pcg(
    op: impl Fn(&[f64], &mut [f64]),
    prec: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    eps0: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, PcgStats)> {
    pcg_monitored(op, prec, rhs, eps0, max_iter, |_| {})
}

/// `pcg` calling `on_iter` with every iterate after the initial zero.
pub fn pcg_monitored(
    op: impl Fn(&[f64], &mut [f64]),
    prec: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    eps0: f64,
    max_iter: usize,
    mut on_iter: impl FnMut(&[f64]),
) -> Result<(Vec<f64>, PcgStats)> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = vec![0.0; n];
    prec(&r, &mut z);
    let mut rz = dot(&r, &z);
    let mut st = PcgStats { history: vec![rz], ..Default::default() };
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let tol = eps0 * eps0;
    while rz > tol {
        if st.iterations == max_iter {
            st.final_pres = rz;
            return Err(Error::NotConverged(format!(
                "PCG hit {max_iter} iterations with ⟨Pr,r⟩ = {rz:.3e} > {tol:.3e}"
            )));
        }
        op(&p, &mut q);
        let pq = dot(&p, &q);
        if pq <= 0.0 {
            return Err(Error::NotConverged(format!("operator not positive definite: ⟨Bp,p⟩ = {pq:.3e}")));
        }
        let a = rz / pq;
        x.par_iter_mut().zip(&p).for_each(|(xi, pi)| *xi += a * pi);
        r.par_iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= a * qi);
        prec(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        p.par_iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        rz = rz_new;
        st.iterations += 1;
        on_iter(&x);
        st.history.push(rz);
    }
    st.final_pres = rz;
    Ok((x, st))
}

#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub w: SgFunction,
    pub stats: PcgStats,
    pub dofs: usize,
    pub nnz: usize,
}

/// Galerkin correction on the mesh family `meshes`: solves B_ℓ q = r on V(𝕋)
/// and returns w = v + q. `r` holds the residual blocks; `v` may live on
/// coarser meshes or lack some ν (taken as zero).
pub fn galerkin_solve(
    cf: &CoeffField,
    meshes: &BTreeMap<MultiIndex, Arc<Mesh>>,
    v: &SgFunction,
    r: &BTreeMap<MultiIndex, PwFunctional>,
    ell: u32,
    eps0: f64,
    max_iter: usize,
    cache: &mut ThetaCache,
) -> Result<SolveOutput> {
    let spaces: BTreeMap<MultiIndex, Arc<FeSpace>> = meshes
        .par_iter()
        .map(|(nu, m)| {
            let reuse = v.blocks.get(nu).filter(|f| Arc::ptr_eq(f.mesh(), m)).map(|f| f.space.clone());
            (nu.clone(), reuse.unwrap_or_else(|| Arc::new(FeSpace::new(m.clone()))))
        })
        .collect();
    let layout = Layout::new(&spaces);
    let mut rhs = vec![0.0; layout.dim()];
    let loads: Vec<(usize, Vec<f64>)> = (0..layout.keys.len())
        .into_par_iter()
        .filter_map(|b| r.get(&layout.keys[b]).map(|f| (b, f.load(&layout.spaces[b]))))
        .collect();
    for (b, l) in loads {
        rhs[layout.range(b)].copy_from_slice(&l);
    }
    let base = layout.flatten(v);
    let op = BlockOperator::assemble(cf, layout, ell, cache);
    let pc = Preconditioner::new(&op.layout);
    let (q, stats) = pcg(|x, y| op.apply(x, y), |g, x| pc.apply(g, x), &rhs, eps0, max_iter)?;
    let w: Vec<f64> = base.iter().zip(&q).map(|(a, b)| a + b).collect();
    Ok(SolveOutput { w: op.layout.unflatten(&w), stats, dofs: op.dim(), nnz: op.matrix.nnz() })
}

#[cfg(test)]
mod tests;
