//! Turns a configuration into matrices, problems and starting points.

use std::sync::Arc;

use anyhow::{bail, Context, Result};
use nepv_core::alignment::align;
use nepv_core::linalg::{symmetrize, Mat};
use nepv_core::presets;
use nepv_core::problem::{
    make_alpha_problem, make_quadratic_problem, make_theta_problem, CoefficientFunctions,
    NepvProblem,
};
use nepv_core::scf::initial_guess_linear;
use nepv_core::StiefelPoint;

use crate::config::{ExperimentConfig, Family, Fault, Grid, MatrixSource, Preset};
use crate::mmio::read_matrix_market;

/// Per-example defaults.
#[derive(Debug, Clone, Copy)]
pub struct PresetDefaults {
    pub family: Family,
    /// Parameter of the rate-reproduction point.
    pub param: f64,
    pub grid: Grid,
    /// Parameter of the level-shift study.
    pub shift_param: f64,
    pub shift_grid: Grid,
    pub fallback_sigma: f64,
    pub n: usize,
    pub k: usize,
    pub r: Option<usize>,
}

pub fn preset_defaults(p: Preset) -> PresetDefaults {
    let g = |start, stop, count| Grid { start, stop, count };
    match p {
        Preset::Ex1 => PresetDefaults {
            family: Family::Alpha,
            param: 0.46,
            grid: g(0.0, 1.0, 200),
            shift_param: 0.6,
            shift_grid: g(0.0, 150.0, 151),
            fallback_sigma: 100.0,
            n: 3,
            k: 1,
            r: None,
        },
        Preset::Ex2 => PresetDefaults {
            family: Family::Alpha,
            param: 0.305,
            grid: g(0.0, 1.0, 200),
            shift_param: 0.5,
            shift_grid: g(0.0, 15.0, 151),
            fallback_sigma: 50.0,
            n: 3,
            k: 2,
            r: None,
        },
        Preset::Ex3 => PresetDefaults {
            family: Family::Alpha,
            param: 0.5,
            grid: g(0.05, 0.95, 5),
            shift_param: 0.5,
            shift_grid: g(0.0, 10.0, 11),
            fallback_sigma: 50.0,
            n: 200,
            k: 10,
            r: None,
        },
        Preset::Ex4 => PresetDefaults {
            family: Family::Theta,
            param: 0.1,
            grid: g(-0.5, 1.5, 200),
            shift_param: 0.0,
            shift_grid: g(-15.0, 15.0, 151),
            fallback_sigma: 100.0,
            n: 3,
            k: 1,
            r: None,
        },
        Preset::Ex5 => PresetDefaults {
            family: Family::Theta,
            param: 4.75,
            grid: g(0.0, 6.0, 200),
            shift_param: 3.0,
            shift_grid: g(0.0, 40.0, 161),
            fallback_sigma: 40.0,
            n: 3,
            k: 2,
            r: None,
        },
        Preset::Ex6 => PresetDefaults {
            family: Family::Theta,
            param: 0.5,
            grid: g(-0.25, 1.25, 5),
            shift_param: 0.5,
            shift_grid: g(0.0, 10.0, 11),
            fallback_sigma: 50.0,
            n: 200,
            k: 50,
            r: Some(20),
        },
    }
}

/// Configuration with the preset defaults filled in.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub family: Family,
    pub a: Mat,
    /// Identity for the custom family.
    pub b: Mat,
    pub d: Mat,
    pub defaults: Option<PresetDefaults>,
}

fn generate(src: &MatrixSource, role: char, n: usize, k: usize) -> Result<Mat> {
    let m = match (src, role) {
        (MatrixSource::File(p), _) => return read_matrix_market(p),
        (MatrixSource::Tridiag, 'A' | 'B') => presets::tridiag(n),
        (MatrixSource::DiagIota, 'A' | 'B') => presets::diag_iota(n),
        (MatrixSource::RandomGaussian { seed }, 'A') => {
            symmetrize(&presets::random_gaussian(n, n, *seed))
        }
        (MatrixSource::RandomGaussian { seed }, 'B') => {
            let g = presets::random_gaussian(n, n, *seed);
            g.transpose() * &g / n as f64 + Mat::identity(n, n)
        }
        (MatrixSource::RandomGaussian { seed }, _) => presets::random_gaussian(n, k, *seed),
        (MatrixSource::RandomRankR { r, seed }, 'D') => {
            if *r > k {
                bail!("random-rank-r: rank {r} exceeds k = {k}");
            }
            presets::random_rank_r(n, k, *r, *seed)
        }
        (src, role) => bail!("generator {src} cannot produce matrix {role}"),
    };
    Ok(m)
}

impl Experiment {
    pub fn resolve(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let mut cfg = cfg.clone();
        let defaults = cfg.preset.map(preset_defaults);
        if let Some(d) = defaults {
            cfg.family.get_or_insert(d.family);
            cfg.n.get_or_insert(d.n);
            cfg.k.get_or_insert(d.k);
            if let Some(r) = d.r {
                cfg.r.get_or_insert(r);
            }
        }
        let (a, b, d) = match cfg.preset {
            Some(Preset::Ex1) | Some(Preset::Ex4) => presets::example1(),
            Some(Preset::Ex2) => presets::example2(),
            Some(Preset::Ex5) => presets::example5(),
            Some(p @ (Preset::Ex3 | Preset::Ex6)) => {
                let (n, k) = (cfg.n.unwrap_or(200), cfg.k.unwrap_or(10));
                let d = match (p, cfg.r) {
                    (Preset::Ex6, Some(r)) if r < k => presets::random_rank_r(n, k, r, cfg.seed),
                    _ => presets::random_gaussian(n, k, cfg.seed),
                };
                (presets::tridiag(n), presets::diag_iota(n), d)
            }
            None => {
                let a_src = cfg
                    .matrix_a
                    .as_ref()
                    .context("matrix_a is required without a preset")?;
                let d_src = cfg
                    .matrix_d
                    .as_ref()
                    .context("matrix_d is required without a preset")?;
                // Generated matrices take their size from n, k or the files.
                let d_file = match d_src {
                    MatrixSource::File(p) => Some(read_matrix_market(p)?),
                    _ => None,
                };
                let n = cfg.n.or(d_file.as_ref().map(|d| d.nrows()));
                let k = cfg.k.or(d_file.as_ref().map(|d| d.ncols()));
                let a = match (a_src, n) {
                    (MatrixSource::File(p), _) => read_matrix_market(p)?,
                    (src, Some(n)) => generate(src, 'A', n, k.unwrap_or(0))?,
                    (_, None) => bail!("n is required when A and D are both generated"),
                };
                let n = a.nrows();
                let d = match d_file {
                    Some(d) => d,
                    None => generate(
                        d_src,
                        'D',
                        n,
                        k.context("k is required when D is generated")?,
                    )?,
                };
                let b = match (&cfg.matrix_b, cfg.family) {
                    (Some(src), _) => generate(src, 'B', n, d.ncols())?,
                    (None, Some(Family::Custom)) => Mat::identity(n, n),
                    (None, _) => bail!("matrix_b is required for the alpha and theta families"),
                };
                (a, b, d)
            }
        };
        // Explicit matrix settings override the preset's.
        let (a, b, d) = if cfg.preset.is_some() {
            let (n, k) = (a.nrows(), d.ncols());
            (
                cfg.matrix_a
                    .as_ref()
                    .map(|s| generate(s, 'A', n, k))
                    .transpose()?
                    .unwrap_or(a),
                cfg.matrix_b
                    .as_ref()
                    .map(|s| generate(s, 'B', n, k))
                    .transpose()?
                    .unwrap_or(b),
                cfg.matrix_d
                    .as_ref()
                    .map(|s| generate(s, 'D', n, k))
                    .transpose()?
                    .unwrap_or(d),
            )
        } else {
            (a, b, d)
        };
        let family = cfg.family.context("family is required without a preset")?;
        if a.nrows() != a.ncols() || b.shape() != a.shape() || d.nrows() != a.nrows() {
            bail!(
                "inconsistent shapes: A {:?}, B {:?}, D {:?}",
                a.shape(),
                b.shape(),
                d.shape()
            );
        }
        if d.ncols() == 0 || d.ncols() >= a.nrows() {
            bail!(
                "need 0 < k < n, got k = {} and n = {}",
                d.ncols(),
                a.nrows()
            );
        }
        Ok(Self {
            cfg,
            family,
            a,
            b,
            d,
            defaults,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn k(&self) -> usize {
        self.d.ncols()
    }

    /// The problem at parameter `t`, with the configured fault injected.
    pub fn problem(&self, t: f64) -> Result<NepvProblem> {
        let p = match self.family {
            Family::Alpha => make_alpha_problem(&self.a, &self.b, &self.d, t)?,
            Family::Theta => make_theta_problem(&self.a, &self.b, &self.d, t)?,
            Family::Custom => make_quadratic_problem(&self.a, &self.d, t)?,
        };
        Ok(match self.cfg.inject_fault {
            Some(Fault::DhPhiSign) => {
                let funcs = FlippedDhPhi(p.shared_funcs());
                p.with_functions(Arc::new(funcs))
            }
            None => p,
        })
    }

    /// Parameter of single solves: configured, else the preset's.
    pub fn param(&self) -> Result<f64> {
        self.cfg
            .param
            .or(self.defaults.map(|d| d.param))
            .context("no parameter given (--alpha/--theta or param)")
    }

    pub fn shift_param(&self) -> Result<f64> {
        self.cfg
            .param
            .or(self.defaults.map(|d| d.shift_param))
            .context("no parameter given (--alpha/--theta or param)")
    }

    pub fn grid(&self) -> Result<Grid> {
        self.cfg
            .grid
            .or(self.defaults.map(|d| d.grid))
            .context("no parameter grid given (--grid a:b:n)")
    }

    pub fn shift_grid(&self) -> Result<Grid> {
        self.cfg
            .shift_grid
            .or(self.defaults.map(|d| d.shift_grid))
            .context("no shift grid given (shift_grid a:b:n)")
    }

    /// Shift for the level-shifted retry of continuation steps.
    pub fn fallback_sigma(&self) -> Option<f64> {
        self.cfg
            .fallback_sigma
            .or(self.defaults.map(|d| d.fallback_sigma))
    }

    /// Linear start: top-`k` eigenbasis of `(A, B)`, or of `A` for the
    /// custom family, aligned against `D`.
    pub fn initial_guess(&self) -> Result<StiefelPoint> {
        let x = initial_guess_linear(&self.a, &self.b, self.k(), None)?;
        Ok(align(&x, &self.d)?.aligned_x)
    }
}

/// Coefficient functions with `DH_φ` negated; everything else unchanged.
#[derive(Debug)]
struct FlippedDhPhi(Arc<dyn CoefficientFunctions>);

impl CoefficientFunctions for FlippedDhPhi {
    fn phi(&self, x: &Mat) -> f64 {
        self.0.phi(x)
    }
    fn psi(&self, x: &Mat) -> f64 {
        self.0.psi(x)
    }
    fn h_phi(&self, x: &Mat) -> Mat {
        self.0.h_phi(x)
    }
    fn h_psi(&self, x: &Mat) -> Mat {
        self.0.h_psi(x)
    }
    fn dh_phi(&self, x: &Mat, e: &Mat) -> Option<Mat> {
        self.0.dh_phi(x, e).map(|m| -m)
    }
    fn dh_psi(&self, x: &Mat, e: &Mat) -> Option<Mat> {
        self.0.dh_psi(x, e)
    }
    fn dpsi(&self, x: &Mat, e: &Mat) -> f64 {
        self.0.dpsi(x, e)
    }
}
