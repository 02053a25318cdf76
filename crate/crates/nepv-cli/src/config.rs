//! Experiment configuration: a flat `key = value` file merged with
//! command-line overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Alpha,
    Theta,
    /// `f = tr(XᵀAX) + c·tr(XᵀD)` with the parameter as `c`.
    Custom,
}

impl FromStr for Family {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Self::Alpha),
            "theta" => Ok(Self::Theta),
            "custom" => Ok(Self::Custom),
            _ => bail!("unknown family {s:?} (alpha | theta | custom)"),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Alpha => "alpha",
            Self::Theta => "theta",
            Self::Custom => "custom",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Ex1,
    Ex2,
    Ex3,
    Ex4,
    Ex5,
    Ex6,
}

impl FromStr for Preset {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ex1" => Self::Ex1,
            "ex2" => Self::Ex2,
            "ex3" => Self::Ex3,
            "ex4" => Self::Ex4,
            "ex5" => Self::Ex5,
            "ex6" => Self::Ex6,
            _ => bail!("unknown example {s:?} (ex1 … ex6)"),
        })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ex{}", *self as u8 + 1)
    }
}

/// `start:stop:count`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        nepv_core::sweep::linspace(self.start, self.stop, self.count)
    }
}

impl FromStr for Grid {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, n] = parts[..] else {
            bail!("grid {s:?} is not start:stop:count")
        };
        let grid = Grid {
            start: a
                .trim()
                .parse()
                .with_context(|| format!("bad grid start {a:?}"))?,
            stop: b
                .trim()
                .parse()
                .with_context(|| format!("bad grid stop {b:?}"))?,
            count: n
                .trim()
                .parse()
                .with_context(|| format!("bad grid count {n:?}"))?,
        };
        if grid.count == 0 {
            bail!("grid {s:?} is empty");
        }
        if !grid.start.is_finite() || !grid.stop.is_finite() {
            bail!("grid {s:?} has non-finite endpoints");
        }
        Ok(grid)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}:{:?}:{}", self.start, self.stop, self.count)
    }
}

/// Where a matrix comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSource {
    File(PathBuf),
    /// `tridiag(−1, 2, −1)`.
    Tridiag,
    /// `diag(1, …, n)`.
    DiagIota,
    RandomGaussian {
        seed: u64,
    },
    RandomRankR {
        r: usize,
        seed: u64,
    },
}

impl FromStr for MatrixSource {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| -> Result<u64> {
            t.parse()
                .with_context(|| format!("bad number {t:?} in {s:?}"))
        };
        Ok(match parts[..] {
            ["tridiag"] => Self::Tridiag,
            ["diag-iota"] => Self::DiagIota,
            ["random-gaussian", seed] => Self::RandomGaussian { seed: num(seed)? },
            ["random-rank-r", r, seed] => Self::RandomRankR {
                r: num(r)? as usize,
                seed: num(seed)?,
            },
            _ if parts[0].starts_with("random-")
                || parts[0] == "tridiag"
                || parts[0] == "diag-iota" =>
            {
                bail!("bad generator spec {s:?}")
            }
            _ => Self::File(PathBuf::from(s)),
        })
    }
}

impl fmt::Display for MatrixSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::File(p) => write!(f, "{}", p.display()),
            Self::Tridiag => f.write_str("tridiag"),
            Self::DiagIota => f.write_str("diag-iota"),
            Self::RandomGaussian { seed } => write!(f, "random-gaussian:{seed}"),
            Self::RandomRankR { r, seed } => write!(f, "random-rank-r:{r}:{seed}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flip the sign of `DH_φ`.
    DhPhiSign,
}

impl FromStr for Fault {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dh-phi-sign" => Ok(Self::DhPhiSign),
            _ => bail!("unknown fault {s:?} (dh-phi-sign)"),
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("dh-phi-sign")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    pub family: Option<Family>,
    /// α, θ or the custom weight.
    pub param: Option<f64>,
    /// Level shift for `solve`, fallback shift for the sweeps.
    pub sigma: Option<f64>,
    /// Shift for the level-shifted retry during warm-start continuation.
    pub fallback_sigma: Option<f64>,
    pub grid: Option<Grid>,
    pub shift_grid: Option<Grid>,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub matrix_a: Option<MatrixSource>,
    pub matrix_b: Option<MatrixSource>,
    pub matrix_d: Option<MatrixSource>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub r: Option<usize>,
    /// Operator dimension above which ρ is computed matrix-free.
    pub dense_cap: usize,
    /// Relative error threshold of `check`.
    pub fd_tol: f64,
    pub inject_fault: Option<Fault>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: None,
            family: None,
            param: None,
            sigma: None,
            fallback_sigma: None,
            grid: None,
            shift_grid: None,
            tol: 1e-13,
            max_iters: 3000,
            seed: 0,
            out: PathBuf::from("out"),
            matrix_a: None,
            matrix_b: None,
            matrix_d: None,
            n: None,
            k: None,
            r: None,
            dense_cap: 1000,
            fd_tol: 1e-6,
            inject_fault: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| anyhow!("{key} = {value:?}: {e}"))
}

impl ExperimentConfig {
    /// Applies one `key = value` setting. Keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "preset" | "example" => self.preset = Some(parse(&key, value)?),
            "family" => self.family = Some(parse(&key, value)?),
            "param" | "alpha" | "theta" | "weight" => {
                self.param = Some(parse(&key, value)?);
                match key.as_str() {
                    "alpha" => self.family = Some(Family::Alpha),
                    "theta" => self.family = Some(Family::Theta),
                    "weight" => self.family = Some(Family::Custom),
                    _ => {}
                }
            }
            "sigma" => self.sigma = Some(parse(&key, value)?),
            "fallback_sigma" => self.fallback_sigma = Some(parse(&key, value)?),
            "grid" => self.grid = Some(parse(&key, value)?),
            "shift_grid" => self.shift_grid = Some(parse(&key, value)?),
            "tol" => self.tol = parse(&key, value)?,
            "max_iters" => self.max_iters = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "out" => self.out = PathBuf::from(value),
            "matrix_a" => self.matrix_a = Some(parse(&key, value)?),
            "matrix_b" => self.matrix_b = Some(parse(&key, value)?),
            "matrix_d" => self.matrix_d = Some(parse(&key, value)?),
            "n" => self.n = Some(parse(&key, value)?),
            "k" => self.k = Some(parse(&key, value)?),
            "r" => self.r = Some(parse(&key, value)?),
            "dense_cap" => self.dense_cap = parse(&key, value)?,
            "fd_tol" => self.fd_tol = parse(&key, value)?,
            "inject_fault" => self.inject_fault = Some(parse(&key, value)?),
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Parses the `key = value` format; `#` starts a comment.
    pub fn parse_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key = value", i + 1))?;
            self.set(k, v).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::default();
        cfg.parse_text(&text)
            .with_context(|| format!("in config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            bail!("tol must be positive");
        }
        if self.max_iters == 0 {
            bail!("max_iters must be at least 1");
        }
        if let Some(p) = self.param {
            if !p.is_finite() {
                bail!("parameter must be finite");
            }
        }
        for s in [self.sigma, self.fallback_sigma].into_iter().flatten() {
            if !s.is_finite() {
                bail!("shifts must be finite");
            }
        }
        Ok(())
    }

    /// Every setting as `key = value`, in a fixed order. Output files hash
    /// this text.
    pub fn canonical(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        m.insert("preset", opt(self.preset.map(|p| p.to_string())));
        m.insert("family", opt(self.family.map(|f| f.to_string())));
        m.insert("param", opt(self.param.map(|v| format!("{v:?}"))));
        m.insert("sigma", opt(self.sigma.map(|v| format!("{v:?}"))));
        m.insert(
            "fallback_sigma",
            opt(self.fallback_sigma.map(|v| format!("{v:?}"))),
        );
        m.insert("grid", opt(self.grid.map(|g| g.to_string())));
        m.insert("shift_grid", opt(self.shift_grid.map(|g| g.to_string())));
        m.insert("tol", format!("{:?}", self.tol));
        m.insert("max_iters", self.max_iters.to_string());
        m.insert("seed", self.seed.to_string());
        m.insert(
            "matrix_a",
            opt(self.matrix_a.as_ref().map(|s| s.to_string())),
        );
        m.insert(
            "matrix_b",
            opt(self.matrix_b.as_ref().map(|s| s.to_string())),
        );
        m.insert(
            "matrix_d",
            opt(self.matrix_d.as_ref().map(|s| s.to_string())),
        );
        m.insert("n", opt(self.n.map(|v| v.to_string())));
        m.insert("k", opt(self.k.map(|v| v.to_string())));
        m.insert("r", opt(self.r.map(|v| v.to_string())));
        m.insert("dense_cap", self.dense_cap.to_string());
        m.insert("fd_tol", format!("{:?}", self.fd_tol));
        m.insert(
            "inject_fault",
            opt(self.inject_fault.map(|f| f.to_string())),
        );
        m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded. The output
    /// directory is not part of the hash.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_format() {
        let mut c = ExperimentConfig::default();
        c.parse_text("# comment\nfamily = theta\ntheta=0.1 # inline\ngrid = -0.5:1.5:200\nmatrix-d = random-rank-r:20:7\nmatrix_a = a.mtx\n")
            .unwrap();
        assert_eq!(c.family, Some(Family::Theta));
        assert_eq!(c.param, Some(0.1));
        assert_eq!(
            c.grid,
            Some(Grid {
                start: -0.5,
                stop: 1.5,
                count: 200
            })
        );
        assert_eq!(
            c.matrix_d,
            Some(MatrixSource::RandomRankR { r: 20, seed: 7 })
        );
        assert_eq!(c.matrix_a, Some(MatrixSource::File("a.mtx".into())));
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ExperimentConfig::default();
        assert!(c.set("grid", "0:1:0").is_err());
        assert!(c.set("grid", "0:1").is_err());
        assert!(c.set("nonsense", "1").is_err());
        assert!(c.set("matrix_d", "random-rank-r:2").is_err());
        assert!(c.parse_text("family theta").is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let mut a = ExperimentConfig::default();
        let mut b = ExperimentConfig {
            out: "elsewhere".into(),
            ..Default::default()
        };
        assert_eq!(a.hash(), b.hash());
        a.seed = 1;
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
