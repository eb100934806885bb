//! Run configuration in a plain `key = value` format.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. Every
//! key is optional and falls back to [`RunConfig::default`]. [`RunConfig::to_text`]
//! writes all keys in a fixed order with the shortest round-trip float
//! representation, so parsing and re-serialising canonical text reproduces it
//! byte for byte.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evolution::{first_eigenmode, SolverConfig};
use crate::functionals::bubble;
use crate::grid::{BoxDomain, Field};
use crate::io::read_checkpoint;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    /// Sine mode `(k1, k2, k3)` scaled to unit maximum on the grid.
    Eigenmode([usize; 3]),
    Bubble { center: [f64; 3], width: f64 },
    Checkpoint(PathBuf),
    /// `λ` times the inner initial field.
    Scaled(f64, Box<InitialSpec>),
}

impl InitialSpec {
    pub fn build(&self, domain: BoxDomain) -> Result<Field> {
        match self {
            InitialSpec::Eigenmode(k) => {
                if *k == [1, 1, 1] {
                    return Ok(first_eigenmode(domain));
                }
                let u = Field::sine_mode(domain, *k);
                let peak = u.max_abs();
                if peak < 1e-12 {
                    return Err(Error::Config(format!(
                        "eigenmode {k:?} vanishes on a grid with M = {}",
                        domain.nodes()
                    )));
                }
                Ok(u.scaled(1.0 / peak))
            }
            InitialSpec::Bubble { center, width } => bubble(domain, *center, *width),
            InitialSpec::Checkpoint(path) => {
                let ck = read_checkpoint(path)?;
                if !ck.field.domain().same_grid(&domain) {
                    return Err(Error::DomainMismatch);
                }
                Ok(ck.field)
            }
            InitialSpec::Scaled(lambda, inner) => Ok(inner.build(domain)?.scaled(*lambda)),
        }
    }

    fn parse(text: &str) -> Result<Self> {
        let words: Vec<&str> = text.split_whitespace().collect();
        Self::parse_words(&words)
    }

    fn parse_words(words: &[&str]) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse initial = {:?}", words.join(" ")));
        let (head, rest) = words.split_first().ok_or_else(bad)?;
        match *head {
            "eigenmode" => {
                let k: Vec<usize> = rest
                    .iter()
                    .map(|w| w.parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                if k.len() != 3 || k.contains(&0) {
                    return Err(bad());
                }
                Ok(InitialSpec::Eigenmode([k[0], k[1], k[2]]))
            }
            "bubble" => {
                let v: Vec<f64> = rest
                    .iter()
                    .map(|w| parse_f64(w).map_err(|_| bad()))
                    .collect::<Result<_>>()?;
                if v.len() != 4 {
                    return Err(bad());
                }
                Ok(InitialSpec::Bubble {
                    center: [v[0], v[1], v[2]],
                    width: v[3],
                })
            }
            "checkpoint" => match rest {
                [p] => Ok(InitialSpec::Checkpoint(PathBuf::from(p))),
                _ => Err(bad()),
            },
            "scaled" => {
                let (l, inner) = rest.split_first().ok_or_else(bad)?;
                let lambda = parse_f64(l).map_err(|_| bad())?;
                Ok(InitialSpec::Scaled(lambda, Box::new(Self::parse_words(inner)?)))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for InitialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialSpec::Eigenmode(k) => write!(f, "eigenmode {} {} {}", k[0], k[1], k[2]),
            InitialSpec::Bubble { center, width } => write!(
                f,
                "bubble {} {} {} {}",
                fmt_f64(center[0]),
                fmt_f64(center[1]),
                fmt_f64(center[2]),
                fmt_f64(*width)
            ),
            InitialSpec::Checkpoint(p) => write!(f, "checkpoint {}", p.display()),
            InitialSpec::Scaled(l, inner) => write!(f, "scaled {} {inner}", fmt_f64(*l)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub side: f64,
    pub nodes: usize,
    pub mu: f64,
    pub initial: InitialSpec,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            side: 1.0,
            nodes: 32,
            mu: 2.0,
            initial: InitialSpec::Eigenmode([1, 1, 1]),
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Shortest text that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Config(format!("not a number: {s:?}")))
}

fn parse_int<T: std::str::FromStr>(key: &str, s: &str) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| Error::Config(format!("{key}: not a nonnegative integer: {s:?}")))
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {s:?}"))),
    }
}

pub const KEYS: [&str; 16] = [
    "L",
    "M",
    "mu",
    "initial",
    "seed",
    "output_dir",
    "dt_init",
    "dt_min",
    "dt_max",
    "safety",
    "t_end",
    "blowup_factor",
    "record_every",
    "nonlinearity_on",
    "tol_step",
    "max_steps",
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies one `key = value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.solver;
        match key {
            "L" => self.side = parse_f64(value)?,
            "M" => self.nodes = parse_int(key, value)?,
            "mu" => self.mu = parse_f64(value)?,
            "initial" => self.initial = InitialSpec::parse(value)?,
            "seed" => self.seed = parse_int(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "dt_init" => s.dt_init = parse_f64(value)?,
            "dt_min" => s.dt_min = parse_f64(value)?,
            "dt_max" => s.dt_max = parse_f64(value)?,
            "safety" => s.safety = parse_f64(value)?,
            "t_end" => s.t_end = parse_f64(value)?,
            "blowup_factor" => s.blowup_factor = parse_f64(value)?,
            "record_every" => s.record_every = parse_int(key, value)?,
            "nonlinearity_on" => s.nonlinearity_on = parse_bool(key, value)?,
            "tol_step" => s.tol_step = parse_f64(value)?,
            "max_steps" => s.max_steps = parse_int(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {pair:?} is not key=value")))?;
        self.set(k.trim(), v.trim())?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.solver
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.domain().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.mu > 0.0 && self.mu < 3.0) {
            return Err(Error::Config(format!("mu must lie in (0, 3), got {}", self.mu)));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<BoxDomain> {
        BoxDomain::new(self.side, self.nodes)
    }

    pub fn initial_field(&self) -> Result<Field> {
        self.initial.build(self.domain()?)
    }

    pub fn to_text(&self) -> String {
        let s = &self.solver;
        let values = [
            fmt_f64(self.side),
            self.nodes.to_string(),
            fmt_f64(self.mu),
            self.initial.to_string(),
            self.seed.to_string(),
            self.output_dir.display().to_string(),
            fmt_f64(s.dt_init),
            fmt_f64(s.dt_min),
            fmt_f64(s.dt_max),
            fmt_f64(s.safety),
            fmt_f64(s.t_end),
            fmt_f64(s.blowup_factor),
            s.record_every.to_string(),
            s.nonlinearity_on.to_string(),
            fmt_f64(s.tol_step),
            s.max_steps.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
