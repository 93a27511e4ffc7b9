//! The adaptive loop: estimate, stop or mark, refine, solve; plus run
//! configuration, convergence output, contraction monitoring and the
//! experiment suites.

mod config;
mod monitor;
mod output;
mod suite;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

pub use config::{ConditionReport, RunConfig};
pub use monitor::{contraction_report, energy_error, overkill_reference, ContractionReport};
pub use output::{build_id, write_csv, write_json, CSV_HEADER};
pub use suite::{fit_slope, last_decade_slope, run_suite, SuiteEntry, SuiteName};

use crate::apply_compress::ThetaCache;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::functional::PwFunctional;
use crate::marking::{refine_meshes, restricted_norm_sq, tree_approx, TreeIndexSet};
use crate::mesh::{FeFunction, FeSpace, Mesh};
use crate::residual::{dual_norm_indicators, res_estimate};
use crate::solver::galerkin_solve;
use crate::stochastic::{MultiIndex, SgFunction};

/// One pass of the loop: the estimate of u^k and the solve producing u^{k+1}.
#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    /// N(𝕋^k): total number of elements over all meshes.
    pub n: usize,
    pub dofs: usize,
    /// #F: number of active ν.
    pub f: usize,
    pub b: f64,
    pub eta: f64,
    pub rhat: f64,
    /// ‖r̂|_Λ‖/‖r̂‖ of the marked set; absent on the final pass.
    pub bulk_ratio: Option<f64>,
    pub estimate_rounds: u32,
    /// Largest compression level used by Apply in the estimate.
    pub apply_ell: u32,
    pub pcg_iters: usize,
    /// Elapsed since the start of the run, 0 with timing disabled.
    pub wall_ms: u64,
    pub mesh_sizes: Vec<(String, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    MaxElements,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub u: SgFunction,
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    pub ell: u32,
    pub conditions: ConditionReport,
}

impl RunOutput {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }
}

fn zero_family(meshes: &BTreeMap<MultiIndex, Arc<Mesh>>) -> SgFunction {
    let mut u = SgFunction::new();
    for (nu, m) in meshes {
        u.blocks.insert(nu.clone(), FeFunction::zero(Arc::new(FeSpace::new(m.clone()))));
    }
    u
}

pub fn adaptive_solve(cfg: &RunConfig) -> Result<RunOutput> {
    adaptive_solve_with(cfg, |_, _| {})
}

/// Runs the loop, handing every iterate u^k (including u^0) to `on_iterate`.
pub fn adaptive_solve_with(cfg: &RunConfig, mut on_iterate: impl FnMut(usize, &SgFunction)) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let cf = cfg.coeff_field()?;
    let dom = cf.domain().clone();
    let frame = Frame::new(dom.clone());
    let f = PwFunctional::unit_source(dom.clone());
    let ell = cfg.ell(&cf);
    let conditions = cfg.conditions(&cf);
    if !(conditions.zeta_ok && conditions.omega_ok && conditions.gamma_ok) {
        log::warn!(
            "parameters outside the contraction conditions (zeta: {}, omega0: {}, gamma: {}); no error reduction is certified",
            conditions.zeta_ok,
            conditions.omega_ok,
            conditions.gamma_ok
        );
    }
    log::info!("solve compression level {ell}, zeta {}, zeta_J {}", cfg.zeta(), cfg.zeta_j());
    let params = cfg.estimate_params(&cf);
    let mut cache = ThetaCache::new(&cf, ell);

    let mut lambda: TreeIndexSet = BTreeMap::from([(MultiIndex::zero(), frame.roots().into_iter().collect())]);
    let mut meshes = refine_meshes(&frame, &BTreeMap::new(), &lambda);
    let mut u = zero_family(&meshes);
    // With u = 0 the residual is f itself.
    let mut rhat_prev = dual_norm_indicators(&frame, &f, params.j_hat).norm();
    let mut records = Vec::new();
    let ms = |t: &Instant| if cfg.timing { t.elapsed().as_millis() as u64 } else { 0 };

    for k in 0.. {
        on_iterate(k, &u);
        let eta0 = cfg.zeta() / (1.0 + cfg.zeta()) * rhat_prev;
        let t0 = Instant::now();
        let est = res_estimate(&u, &f, &cf, &frame, &mut cache, &params, eta0, cfg.eps)?;
        let mut rec = IterationRecord {
            k,
            n: u.num_elements(),
            dofs: u.num_dofs(),
            f: u.len(),
            b: est.b,
            eta: est.eta,
            rhat: est.rhat,
            bulk_ratio: None,
            estimate_rounds: est.rounds,
            apply_ell: est.max_ell,
            pcg_iters: 0,
            wall_ms: 0,
            mesh_sizes: u.blocks.iter().map(|(nu, v)| (nu.to_string(), v.mesh().len())).collect(),
        };
        assert!(rec.b.is_finite(), "residual bound is not finite");
        let stop = if est.b <= cfg.eps {
            Some(StopReason::Converged)
        } else if k == cfg.max_iterations {
            Some(StopReason::MaxIterations)
        } else {
            None
        };
        if let Some(stop) = stop {
            rec.wall_ms = ms(&start);
            log::info!("k={k} N={} #F={} b={:.4e}: {stop:?}", rec.n, rec.f, rec.b);
            records.push(rec);
            return Ok(RunOutput { u, records, stop, ell, conditions });
        }

        let plus: TreeIndexSet =
            est.indicators.iter().map(|(nu, ind)| (nu.clone(), ind.entries.iter().map(|e| e.0).collect())).collect();
        let budget = (1.0 - cfg.omega0 * cfg.omega0) * est.rhat * est.rhat;
        let marked = tree_approx(&frame, &lambda, &plus, &est.indicators, budget)?;
        let bulk = restricted_norm_sq(&est.indicators, &marked).sqrt();
        assert!(
            bulk >= cfg.omega0 * est.rhat * (1.0 - 1e-12),
            "bulk chasing violated at k={k}: {bulk:.6e} < {} * {:.6e}",
            cfg.omega0,
            est.rhat
        );
        rec.bulk_ratio = Some(if est.rhat > 0.0 { bulk / est.rhat } else { 1.0 });

        let t1 = Instant::now();
        let next = refine_meshes(&frame, &meshes, &marked);
        let t2 = Instant::now();
        let n_next: usize = next.values().map(|m| m.len()).sum();
        if n_next > cfg.max_elements {
            rec.wall_ms = ms(&start);
            log::info!("k={k}: next family has {n_next} elements, above the limit {}", cfg.max_elements);
            records.push(rec);
            return Ok(RunOutput { u, records, stop: StopReason::MaxElements, ell, conditions });
        }
        let eps0 = (1.0 / cfg.c_p.sqrt()) * (cfg.rho / cfg.c_psi) * est.rhat;
        let out = galerkin_solve(&cf, &next, &u, &est.blocks, ell, eps0, cfg.max_pcg_iterations, &mut cache)
            .map_err(|e| match e {
                Error::NotConverged(m) => Error::NotConverged(format!("Galerkin solve at k={k}: {m}")),
                e => e,
            })?;
        rec.pcg_iters = out.stats.iterations;
        log::debug!(
            "k={k} timings: estimate+mark {:?}, refine {:?}, solve {:?} ({} dofs, {} nnz)",
            t1 - t0,
            t2 - t1,
            t2.elapsed(),
            out.dofs,
            out.nnz
        );
        rec.wall_ms = ms(&start);
        log::info!(
            "k={k} N={} #F={} b={:.4e} rhat={:.4e} bulk={:.3} pcg={} -> N={n_next} #F={}",
            rec.n,
            rec.f,
            rec.b,
            rec.rhat,
            rec.bulk_ratio.unwrap(),
            rec.pcg_iters,
            next.len()
        );
        records.push(rec);
        u = out.w;
        meshes = next;
        lambda = marked;
        rhat_prev = est.rhat;
    }
    unreachable!()
}
