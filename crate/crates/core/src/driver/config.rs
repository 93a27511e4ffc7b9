use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::apply_compress::{level_for_tail, tail_bound, ApplyParams};
use crate::coeff_field::CoeffField;
use crate::error::{Error, Result};
use crate::mesh::Domain;
use crate::residual::EstimateParams;

/// Run parameters. Every field has a default, so a config file only lists what
/// it changes; unknown keys are rejected.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Spatial dimension: 1 is the unit interval, 2 the L-shape.
    pub dim: usize,
    /// Decay of the coefficient levels, amplitude c 2^{-αℓ}.
    pub alpha: f64,
    pub c: f64,
    /// Bulk chasing fraction.
    pub omega0: f64,
    /// Relative accuracy of the residual estimate; default depends on `dim`.
    pub zeta: Option<f64>,
    /// Levels of frame refinement beyond the mesh; default depends on `dim`.
    pub j_hat: Option<u32>,
    /// ζ_Ĵ = kappa 2^{-Ĵ}. Default 0.8 for d=1, where the measured frame
    /// tail constant of residuals is about 0.75, and 0.5 for d=2.
    pub kappa: Option<f64>,
    /// Relative accuracy of the Galerkin solve.
    pub rho: f64,
    /// Compression level of the solve; default is the smallest level whose
    /// tail bound is at most ρ c_B.
    pub ell: Option<u32>,
    /// Target for the residual bound.
    pub eps: f64,
    pub max_iterations: usize,
    /// Stop before solving on a mesh family with more elements than this.
    pub max_elements: usize,
    pub c_psi: f64,
    pub big_c_psi: f64,
    pub c_p: f64,
    pub big_c_p: f64,
    /// Constant used wherever the compression and Apply steps call for C_B.
    pub cb_param: f64,
    /// Upper limit for compression levels chosen inside Apply.
    pub ell_cap: u32,
    pub max_pcg_iterations: usize,
    pub max_estimate_rounds: u32,
    /// Record wall time; disable for byte-identical output across runs.
    pub timing: bool,
    /// Echoed to the output; the method itself draws no random numbers.
    pub seed: u64,
    /// Output directory for `sgafem run` when `--out` is not given.
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: 1,
            alpha: 1.0,
            c: 0.1,
            omega0: 0.1,
            zeta: None,
            j_hat: None,
            kappa: None,
            rho: 0.02,
            ell: None,
            eps: 1e-3,
            max_iterations: 60,
            max_elements: 100_000,
            c_psi: 1.0,
            big_c_psi: 1.0,
            c_p: 1.0,
            big_c_p: 1.0,
            cb_param: 0.02,
            ell_cap: 20,
            max_pcg_iterations: 2000,
            max_estimate_rounds: 40,
            timing: true,
            seed: 0,
            out_dir: None,
        }
    }
}

/// Outcome of the startup checks of the contraction conditions. These are
/// warnings: practical parameter choices are usually far outside them.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub c_b: f64,
    pub big_c_b: f64,
    pub c_b_psi: f64,
    pub big_c: f64,
    pub gamma: f64,
    pub zeta_ok: bool,
    pub omega_ok: bool,
    pub gamma_ok: bool,
    /// Contraction factor predicted from the configured constants; ≥ 1 or NaN
    /// when the conditions fail.
    pub delta: f64,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let s = std::fs::read_to_string(path)?;
        RunConfig::from_toml_str(&s)
    }

    pub fn zeta(&self) -> f64 {
        self.zeta.unwrap_or(if self.dim == 1 { 0.3 } else { 0.4 })
    }

    pub fn j_hat(&self) -> u32 {
        self.j_hat.unwrap_or(if self.dim == 1 { 2 } else { 1 })
    }

    pub fn zeta_j(&self) -> f64 {
        self.kappa() * (-(self.j_hat() as f64)).exp2()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa.unwrap_or(if self.dim == 1 { 0.8 } else { 0.5 })
    }

    pub fn domain(&self) -> Arc<Domain> {
        Arc::new(if self.dim == 1 { Domain::interval() } else { Domain::l_shape() })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim != 1 && self.dim != 2 {
            return bad(format!("dim must be 1 or 2, got {}", self.dim));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.c >= 0.0) {
            return bad(format!("c must be nonnegative, got {}", self.c));
        }
        if !(self.omega0 > 0.0 && self.omega0 <= 1.0) {
            return bad(format!("omega0 must lie in (0, 1], got {}", self.omega0));
        }
        let (z, zj) = (self.zeta(), self.zeta_j());
        if !(0.0 < zj && zj < z && z < 1.0) {
            return bad(format!("need 0 < zeta_J < zeta < 1, got zeta_J = {zj}, zeta = {z}"));
        }
        if !(self.rho > 0.0) || !(self.eps >= 0.0) || !(self.cb_param > 0.0) {
            return bad("rho and cb_param must be positive and eps nonnegative".into());
        }
        for (name, v) in [("c_psi", self.c_psi), ("big_c_psi", self.big_c_psi), ("c_p", self.c_p), ("big_c_p", self.big_c_p)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.c_psi > self.big_c_psi || self.c_p > self.big_c_p {
            return bad("lower frame and preconditioner constants exceed the upper ones".into());
        }
        if self.max_pcg_iterations == 0 || self.max_estimate_rounds == 0 {
            return bad("iteration caps must be positive".into());
        }
        self.coeff_field().map(|_| ())
    }

    pub fn coeff_field(&self) -> Result<CoeffField> {
        CoeffField::new(self.domain(), self.c, self.alpha)
    }

    pub fn ell(&self, cf: &CoeffField) -> u32 {
        self.ell.unwrap_or_else(|| level_for_tail(cf, self.rho * cf.ellipticity().c_b))
    }

    pub fn estimate_params(&self, cf: &CoeffField) -> EstimateParams {
        EstimateParams {
            zeta: self.zeta(),
            j_hat: self.j_hat(),
            zeta_j: self.zeta_j(),
            c_psi: self.c_psi,
            apply: ApplyParams {
                norm_b: cf.ellipticity().big_c_b,
                cb_param: self.cb_param,
                alpha: self.alpha,
                dim: self.dim,
                ell_cap: self.ell_cap,
            },
            max_rounds: self.max_estimate_rounds,
        }
    }

    /// Conditions for guaranteed contraction, with C_B the true upper bound of
    /// the operator (not `cb_param`).
    pub fn conditions(&self, cf: &CoeffField) -> ConditionReport {
        let el = cf.ellipticity();
        let (c_b, big_c_b) = (el.c_b, el.big_c_b);
        let (z, zj, rho, w) = (self.zeta(), self.zeta_j(), self.rho, self.omega0);
        let (cp, bcp) = (self.c_psi, self.big_c_psi);
        let c_b_psi = bcp * bcp * big_c_b / (cp * cp * c_b);
        let big_c = (bcp * bcp * big_c_b * c_b_psi / (cp * cp * c_b)).sqrt();
        let tail = tail_bound(cf, self.ell(cf));
        let gamma = 1.0 / cp / c_b.sqrt()
            * ((z - zj) / (1.0 + z) + zj / (1.0 - zj * zj).sqrt() + rho + tail / c_b * (1.0 / (1.0 - zj) + rho));
        let gap = w - (1.0 + w) * z;
        let zeta_ok = (big_c + 2.0) * z < 1.0;
        let omega_ok = w > (big_c + 1.0) * z / (1.0 - z);
        let gamma_ok = gap > 0.0 && gamma < gap / ((1.0 + z) * (c_b_psi * big_c_b).sqrt() * bcp);
        let d2 = 1.0 - gap * gap / c_b_psi + gamma * gamma * (1.0 + z).powi(2) * bcp * bcp * big_c_b;
        let delta = if gap > 0.0 { d2.sqrt() } else { f64::NAN };
        ConditionReport { c_b, big_c_b, c_b_psi, big_c, gamma, zeta_ok, omega_ok, gamma_ok, delta }
    }
}
