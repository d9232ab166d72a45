//! Run configuration for the command-line driver.
//!
//! Configuration files are flat `key = value` lines; `#` starts a comment.
//! Keys are the long flag names with either dashes or underscores.
//! Command-line flags override file values, which override the defaults.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::active_set::{PassConfig, SelectionMode};
use crate::data::{DataFormat, Directions, LoadOptions};
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};

/// Which binary task(s) to train on multiclass data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetClass {
    One(i64),
    /// One model per class.
    All,
}

impl FromStr for TargetClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(TargetClass::All);
        }
        s.parse().map(TargetClass::One).map_err(|_| {
            Error::Config(format!(
                "target class must be an integer or `all`, got `{s}`"
            ))
        })
    }
}

impl fmt::Display for TargetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetClass::One(c) => write!(f, "{c}"),
            TargetClass::All => f.write_str("all"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub format: DataFormat,
    pub labels: Option<PathBuf>,
    pub dim: Option<usize>,
    pub label_first: bool,
    pub kernel: KernelFamily,
    /// Initial hyperparameters on the natural scale; a family default when unset.
    pub theta: Option<Vec<f64>>,
    pub pass: PassConfig,
    pub reps: usize,
    pub out: PathBuf,
    pub target_class: Option<TargetClass>,
    pub augment: Option<Directions>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    /// Scale features to `[lo, hi]` using the training data's range.
    pub scale: Option<(f64, f64)>,
    /// Inclusion thresholds swept by `ml-compare`; 1 means the full GPC.
    pub p_inc_list: Vec<f64>,
    /// Deletion threshold used by `ml-compare`; must exceed every swept `p_inc` below 1.
    pub ml_p_del: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            format: DataFormat::Csv,
            labels: None,
            dim: None,
            label_first: false,
            kernel: KernelFamily::SeJitter,
            theta: None,
            pass: PassConfig::default(),
            reps: 1,
            out: PathBuf::from("passgp-out"),
            target_class: None,
            augment: None,
            height: None,
            width: None,
            scale: None,
            p_inc_list: vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.99, 1.0],
            ml_p_del: 0.999,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{v}` for `{key}`"))),
    }
}

pub fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|t| parse(key, t.trim())).collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: ln + 1,
                message: format!("expected key = value, got `{line}`"),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: ln + 1,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    /// Sets one option by name.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let p = &mut self.pass;
        match key.as_str() {
            "data" => self.data = Some(PathBuf::from(v)),
            "format" => self.format = v.parse()?,
            "labels" => self.labels = Some(PathBuf::from(v)),
            "dim" => self.dim = Some(parse(&key, v)?),
            "label_first" => self.label_first = parse_bool(&key, v)?,
            "kernel" => self.kernel = v.parse()?,
            "theta" => self.theta = Some(parse_list(&key, v)?),
            "mode" => p.mode = v.parse::<SelectionMode>()?,
            "p_inc" => p.p_inc = parse(&key, v)?,
            "p_del" => p.p_del = parse(&key, v)?,
            "p_exc" => p.p_exc = parse(&key, v)?,
            "m_budget" => p.m_budget = parse(&key, v)?,
            "n_init" => p.n_init = parse(&key, v)?,
            "n_sub" => p.n_sub = parse(&key, v)?,
            "n_pass" => p.n_pass = parse(&key, v)?,
            "hyperopt_every" => p.hyperopt_every = parse(&key, v)?,
            "fixed_theta" => p.fixed_theta = parse_bool(&key, v)?,
            "max_evals" => p.optimizer.max_evals = parse(&key, v)?,
            "grad_tol" => p.optimizer.grad_tol = parse(&key, v)?,
            "ep_tol" => p.ep.tol = parse(&key, v)?,
            "ep_max_sweeps" => p.ep.max_sweeps = parse(&key, v)?,
            "ep_damping" => p.ep.damping = parse(&key, v)?,
            "seed" => p.seed = parse(&key, v)?,
            "reps" => self.reps = parse(&key, v)?,
            "out" => self.out = PathBuf::from(v),
            "target_class" => self.target_class = Some(v.parse()?),
            "augment" => {
                self.augment = match v {
                    "none" => None,
                    other => Some(other.parse()?),
                }
            }
            "height" => self.height = Some(parse(&key, v)?),
            "width" => self.width = Some(parse(&key, v)?),
            "scale" => {
                let r = parse_list(&key, v)?;
                if r.len() != 2 {
                    return Err(Error::Config("scale needs `lo,hi`".into()));
                }
                self.scale = Some((r[0], r[1]));
            }
            "p_inc_list" => self.p_inc_list = parse_list(&key, v)?,
            "ml_p_del" => self.ml_p_del = parse(&key, v)?,
            other => return Err(Error::Config(format!("unknown option `{other}`"))),
        }
        Ok(())
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            labels: self.labels.clone(),
            dim: self.dim,
            label_first: self.label_first,
        }
    }

    /// Initial kernel for data with `d` features.
    pub fn initial_kernel(&self, d: usize) -> Result<KernelSpec> {
        let theta = match &self.theta {
            Some(t) => t.clone(),
            None => default_theta(self.kernel, d),
        };
        KernelSpec::from_theta(self.kernel, &theta)
    }

    /// Cross-field checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.augment.is_some() && (self.height.is_none() || self.width.is_none()) {
            return Err(Error::Config("augment needs --height and --width".into()));
        }
        if self.format == DataFormat::Idx && self.labels.is_none() {
            return Err(Error::Config("idx data needs --labels".into()));
        }
        if let Some((lo, hi)) = self.scale {
            if !(lo < hi) {
                return Err(Error::Config(format!("empty scale range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Unit signal variance, squared length-scale equal to the input dimension,
/// jitter 0.01.
pub fn default_theta(family: KernelFamily, d: usize) -> Vec<f64> {
    let d = d.max(1) as f64;
    match family {
        KernelFamily::SeJitter => vec![1.0, d, 0.01],
        KernelFamily::SeJitterLinear => vec![1.0, d, 0.01, 1.0 / d],
        KernelFamily::Poly9 => vec![1.0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn file_values_and_comments() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("run.conf");
        fs::write(
            &p,
            "# digits\nmode = fpass\nm-budget = 120\np_exc=0.05\ntheta = 1, 50, 0.1\ntarget_class = all\naugment = none\n",
        )
        .unwrap();
        let c = RunConfig::from_file(&p).unwrap();
        assert_eq!(c.pass.mode, SelectionMode::Fpass);
        assert_eq!(c.pass.m_budget, 120);
        assert_eq!(c.pass.p_exc, 0.05);
        assert_eq!(c.theta, Some(vec![1.0, 50.0, 0.1]));
        assert_eq!(c.target_class, Some(TargetClass::All));
        assert_eq!(c.augment, None);
    }

    #[test]
    fn bad_lines_name_the_line() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("run.conf");
        fs::write(&p, "seed = 3\nbogus = 1\n").unwrap();
        match RunConfig::from_file(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cross_field_checks() {
        let mut c = RunConfig::default();
        assert!(c.validate().is_ok());
        c.set("augment", "four").unwrap();
        assert!(c.validate().is_err());
        c.set("height", "16").unwrap();
        c.set("width", "16").unwrap();
        assert!(c.validate().is_ok());
        c.set("format", "idx").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_kernel_uses_dimension() {
        let c = RunConfig::default();
        let k = c.initial_kernel(256).unwrap();
        assert!((k.theta(1) - 256.0).abs() < 1e-9);
    }
}
