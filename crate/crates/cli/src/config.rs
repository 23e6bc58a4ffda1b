//! Line-based sectioned configuration files.
//!
//! The format is `[section]` headers over `key = value` lines; `#` starts a
//! comment. Unknown sections or keys are errors so configs cannot silently
//! drift. Every key has a default; a config file only overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`, got {1:?}")]
    Malformed(usize, String),
    #[error("line {0}: unknown section {1:?}")]
    UnknownSection(usize, String),
    #[error("line {0}: unknown key {1:?} in section {2:?}")]
    UnknownKey(usize, String, String),
    #[error("line {0}: bad value {1:?} for key {2:?}: {3}")]
    BadValue(usize, String, String, String),
    #[error("unknown mode {0:?} (expected brt, bestbrt, nearbrt or vert)")]
    BadMode(String),
    #[error("unknown phantom {0:?} (expected smiley80 or bone200)")]
    BadPhantom(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Imaging configuration selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Brt,
    BestBrt,
    NearBrt,
    Vert,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Brt => "brt",
            Mode::BestBrt => "bestbrt",
            Mode::NearBrt => "nearbrt",
            Mode::Vert => "vert",
        }
    }
}

impl FromStr for Mode {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "brt" => Ok(Mode::Brt),
            "bestbrt" => Ok(Mode::BestBrt),
            "nearbrt" => Ok(Mode::NearBrt),
            "vert" => Ok(Mode::Vert),
            other => Err(ConfigError::BadMode(other.to_string())),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhantomKind {
    Smiley80,
    Bone200,
}

impl FromStr for PhantomKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "smiley80" => Ok(PhantomKind::Smiley80),
            "bone200" => Ok(PhantomKind::Bone200),
            other => Err(ConfigError::BadPhantom(other.to_string())),
        }
    }
}

/// Full pipeline configuration (defaults = paper-scale smiley acquisition).
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    // [pipeline]
    pub mode: Mode,
    pub phantom: PhantomKind,
    pub scale: f64,
    pub synthetic_arrivals: bool,
    pub c_er: f64,

    // [acquisition]
    pub frequency: f64,
    pub cycles: u32,
    pub n_physical: usize,
    pub sim_spacing: f64,
    pub courant: f64,
    pub sponge_wavelengths: f64,
    pub array_gap: f64,
    /// Recorded window; 0 selects automatically from the geometry.
    pub record_window: f64,
    pub record_every: usize,

    // [virtualise]
    pub n_virtual: usize,
    pub directivity_exponent: u32,
    pub taper_fraction: f64,
    pub low_freq_fraction: f64,
    pub window_speed_max: f64,

    // [picking]
    pub pick_method: String,
    pub pick_threshold: f64,
    pub rolling_mean_window: f64,
    pub bias_correction: f64,

    // [init]
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub init_tolerance: f64,
    pub min_chord_wavelengths: f64,
    pub init_grid_spacing: f64,

    // [inversion]
    pub grid_spacing: f64,
    pub max_outer: usize,
    pub inner_cg: usize,
    pub lambda_tv: f64,
    pub lambda_d1: f64,
    pub speed_lo: f64,
    pub speed_hi: f64,
    pub damping: f64,
    pub convergence: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Vert,
            phantom: PhantomKind::Smiley80,
            scale: 1.0,
            synthetic_arrivals: false,
            c_er: 1588.4,
            frequency: 1.0e6,
            cycles: 5,
            n_physical: 317,
            sim_spacing: 5.0e-5,
            courant: 0.4,
            sponge_wavelengths: 9.0,
            array_gap: 10.0e-3,
            record_window: 0.0,
            record_every: 0,
            n_virtual: 300,
            directivity_exponent: 1,
            taper_fraction: 0.1,
            low_freq_fraction: 0.01,
            window_speed_max: 4000.0,
            pick_method: "threshold".to_string(),
            pick_threshold: 0.2,
            rolling_mean_window: 0.0,
            bias_correction: 0.0,
            bracket_lo: 1500.0,
            bracket_hi: 4000.0,
            init_tolerance: 1.0,
            min_chord_wavelengths: 2.0,
            init_grid_spacing: 1.0e-4,
            grid_spacing: 1.0e-4,
            max_outer: 12,
            inner_cg: 30,
            lambda_tv: 0.1,
            lambda_d1: 0.0,
            speed_lo: 1300.0,
            speed_hi: 4200.0,
            damping: 0.7,
            convergence: 1.0e-3,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_strict(&text)
    }

    pub fn from_str_strict(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                const SECTIONS: [&str; 6] = [
                    "pipeline",
                    "acquisition",
                    "virtualise",
                    "picking",
                    "init",
                    "inversion",
                ];
                if !SECTIONS.contains(&section.as_str()) {
                    return Err(ConfigError::UnknownSection(lineno, section));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Malformed(lineno, line.to_string()))?;
            let key = key.trim();
            let value = value.trim();
            config.apply(lineno, &section, key, value)?;
        }
        Ok(config)
    }

    fn apply(
        &mut self,
        lineno: usize,
        section: &str,
        key: &str,
        value: &str,
    ) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(
            lineno: usize,
            key: &str,
            value: &str,
        ) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e: T::Err| {
                ConfigError::BadValue(lineno, value.to_string(), key.to_string(), e.to_string())
            })
        }
        match (section, key) {
            ("pipeline", "mode") => self.mode = value.parse()?,
            ("pipeline", "phantom") => self.phantom = value.parse()?,
            ("pipeline", "scale") => self.scale = parse(lineno, key, value)?,
            ("pipeline", "synthetic_arrivals") => {
                self.synthetic_arrivals = parse(lineno, key, value)?
            }
            ("pipeline", "c_er") => self.c_er = parse(lineno, key, value)?,
            ("acquisition", "frequency") => self.frequency = parse(lineno, key, value)?,
            ("acquisition", "cycles") => self.cycles = parse(lineno, key, value)?,
            ("acquisition", "n_physical") => self.n_physical = parse(lineno, key, value)?,
            ("acquisition", "sim_spacing") => self.sim_spacing = parse(lineno, key, value)?,
            ("acquisition", "courant") => self.courant = parse(lineno, key, value)?,
            ("acquisition", "sponge_wavelengths") => {
                self.sponge_wavelengths = parse(lineno, key, value)?
            }
            ("acquisition", "array_gap") => self.array_gap = parse(lineno, key, value)?,
            ("acquisition", "record_window") => self.record_window = parse(lineno, key, value)?,
            ("acquisition", "record_every") => self.record_every = parse(lineno, key, value)?,
            ("virtualise", "n_virtual") => self.n_virtual = parse(lineno, key, value)?,
            ("virtualise", "directivity_exponent") => {
                self.directivity_exponent = parse(lineno, key, value)?
            }
            ("virtualise", "taper_fraction") => self.taper_fraction = parse(lineno, key, value)?,
            ("virtualise", "low_freq_fraction") => {
                self.low_freq_fraction = parse(lineno, key, value)?
            }
            ("virtualise", "window_speed_max") => {
                self.window_speed_max = parse(lineno, key, value)?
            }
            ("picking", "method") => self.pick_method = value.to_string(),
            ("picking", "threshold") => self.pick_threshold = parse(lineno, key, value)?,
            ("picking", "rolling_mean_window") => {
                self.rolling_mean_window = parse(lineno, key, value)?
            }
            ("picking", "bias_correction") => self.bias_correction = parse(lineno, key, value)?,
            ("init", "bracket_lo") => self.bracket_lo = parse(lineno, key, value)?,
            ("init", "bracket_hi") => self.bracket_hi = parse(lineno, key, value)?,
            ("init", "tolerance") => self.init_tolerance = parse(lineno, key, value)?,
            ("init", "min_chord_wavelengths") => {
                self.min_chord_wavelengths = parse(lineno, key, value)?
            }
            ("init", "init_grid_spacing") => self.init_grid_spacing = parse(lineno, key, value)?,
            ("inversion", "grid_spacing") => self.grid_spacing = parse(lineno, key, value)?,
            ("inversion", "max_outer") => self.max_outer = parse(lineno, key, value)?,
            ("inversion", "inner_cg") => self.inner_cg = parse(lineno, key, value)?,
            ("inversion", "lambda_tv") => self.lambda_tv = parse(lineno, key, value)?,
            ("inversion", "lambda_d1") => self.lambda_d1 = parse(lineno, key, value)?,
            ("inversion", "speed_lo") => self.speed_lo = parse(lineno, key, value)?,
            ("inversion", "speed_hi") => self.speed_hi = parse(lineno, key, value)?,
            ("inversion", "damping") => self.damping = parse(lineno, key, value)?,
            ("inversion", "convergence") => self.convergence = parse(lineno, key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey(
                    lineno,
                    key.to_string(),
                    section.to_string(),
                ))
            }
        }
        Ok(())
    }

    /// External-region wavelength at the acquisition frequency.
    pub fn wavelength_er(&self) -> f64 {
        self.c_er / self.frequency
    }

    /// Canonical key = value dump; the artifact cache hashes subsets of it.
    pub fn canonical(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("pipeline.mode", self.mode.to_string());
        put(
            "pipeline.phantom",
            match self.phantom {
                PhantomKind::Smiley80 => "smiley80".into(),
                PhantomKind::Bone200 => "bone200".into(),
            },
        );
        put("pipeline.scale", format!("{:e}", self.scale));
        put(
            "pipeline.synthetic_arrivals",
            self.synthetic_arrivals.to_string(),
        );
        put("pipeline.c_er", format!("{:e}", self.c_er));
        put("acquisition.frequency", format!("{:e}", self.frequency));
        put("acquisition.cycles", self.cycles.to_string());
        put("acquisition.n_physical", self.n_physical.to_string());
        put("acquisition.sim_spacing", format!("{:e}", self.sim_spacing));
        put("acquisition.courant", format!("{:e}", self.courant));
        put(
            "acquisition.sponge_wavelengths",
            format!("{:e}", self.sponge_wavelengths),
        );
        put("acquisition.array_gap", format!("{:e}", self.array_gap));
        put(
            "acquisition.record_window",
            format!("{:e}", self.record_window),
        );
        put("acquisition.record_every", self.record_every.to_string());
        put("virtualise.n_virtual", self.n_virtual.to_string());
        put(
            "virtualise.directivity_exponent",
            self.directivity_exponent.to_string(),
        );
        put(
            "virtualise.taper_fraction",
            format!("{:e}", self.taper_fraction),
        );
        put(
            "virtualise.low_freq_fraction",
            format!("{:e}", self.low_freq_fraction),
        );
        put(
            "virtualise.window_speed_max",
            format!("{:e}", self.window_speed_max),
        );
        put("picking.method", self.pick_method.clone());
        put("picking.threshold", format!("{:e}", self.pick_threshold));
        put(
            "picking.rolling_mean_window",
            format!("{:e}", self.rolling_mean_window),
        );
        put(
            "picking.bias_correction",
            format!("{:e}", self.bias_correction),
        );
        m
    }
}
