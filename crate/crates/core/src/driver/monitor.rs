use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::apply_compress::ThetaCache;
use crate::coeff_field::CoeffField;
use crate::error::Result;
use crate::functional::PwFunctional;
use crate::mesh::{FeSpace, Mesh};
use crate::solver::{galerkin_solve, BlockOperator, Layout};
use crate::stochastic::{MultiIndex, SgFunction};

/// Energy-norm distances of the iterates to a reference solution.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ContractionReport {
    pub errors: Vec<f64>,
    /// errors[k+1] / errors[k].
    pub ratios: Vec<f64>,
    /// Largest observed ratio, NaN with fewer than two iterates.
    pub empirical_delta: f64,
}

/// ‖reference − u‖_{B_ℓ} on the reference's mesh family, which must refine
/// every mesh of `u`; blocks of `u` outside the reference's index set are not
/// allowed.
pub fn energy_error(cf: &CoeffField, ell: u32, reference: &SgFunction, u: &SgFunction, cache: &mut ThetaCache) -> f64 {
    let layout = Layout::new(&reference.spaces());
    energy_error_on(&BlockOperator::assemble(cf, layout, ell, cache), reference, u)
}

fn energy_error_on(op: &BlockOperator, reference: &SgFunction, u: &SgFunction) -> f64 {
    assert!(u.blocks.keys().all(|nu| op.layout.position(nu).is_some()), "iterate has ν outside the reference");
    let (r, x) = (op.layout.flatten(reference), op.layout.flatten(u));
    let e: Vec<f64> = r.iter().zip(&x).map(|(a, b)| a - b).collect();
    op.energy(&e).max(0.0).sqrt()
}

pub fn contraction_report(
    cf: &CoeffField,
    ell: u32,
    reference: &SgFunction,
    iterates: &[SgFunction],
    cache: &mut ThetaCache,
) -> ContractionReport {
    if iterates.is_empty() {
        return ContractionReport { empirical_delta: f64::NAN, ..Default::default() };
    }
    let op = BlockOperator::assemble(cf, Layout::new(&reference.spaces()), ell, cache);
    let errors: Vec<f64> = iterates.iter().map(|u| energy_error_on(&op, reference, u)).collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[1] / w[0]).collect();
    let empirical_delta = ratios.iter().copied().fold(f64::NAN, f64::max);
    ContractionReport { errors, ratios, empirical_delta }
}

/// Galerkin solution for B_ℓ u = f on `meshes` refined `extra` more times
/// uniformly, solved to a tight tolerance.
pub fn overkill_reference(
    cf: &CoeffField,
    meshes: &BTreeMap<MultiIndex, Arc<Mesh>>,
    extra: u32,
    ell: u32,
    cache: &mut ThetaCache,
) -> Result<SgFunction> {
    let fine: BTreeMap<MultiIndex, Arc<Mesh>> = meshes
        .iter()
        .map(|(nu, m)| {
            let mut m = (**m).clone();
            for _ in 0..extra {
                m = m.refine_conforming(m.leaves());
            }
            (nu.clone(), Arc::new(m))
        })
        .collect();
    let f = PwFunctional::unit_source(cf.domain().clone());
    let r = BTreeMap::from([(MultiIndex::zero(), f.clone())]);
    let space0 = FeSpace::new(fine[&MultiIndex::zero()].clone());
    let scale = f.load(&space0).iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    galerkin_solve(cf, &fine, &SgFunction::new(), &r, ell, 1e-13 * scale, 20_000, cache).map(|o| o.w)
}
