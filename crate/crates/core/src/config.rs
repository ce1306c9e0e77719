//! Experiment configuration: flat `key = value` text with `#` comments and
//! dotted keys.
//!
//! ```text
//! scene.z_o = 92
//! scene.point.0 = 0, 0, 0, 1.0      # x, y, plane, intensity
//! series.m = 6
//! retrieval.intensity_max = auto
//! seeds = 1, 2, 3
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::grid::Interpolation;
use crate::retrieval::{IntensityMax, RetrievalConfig};
use crate::sim::{ScatteringScene, ScenePoint};

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocess {
    /// Moving-average window for background compensation, odd pixels.
    pub background_window: usize,
    /// Side of the centred correlation crop, pixels. `None` keeps the full sensor.
    pub crop: Option<usize>,
    pub downsample: usize,
    /// Side of the window excluded from bias estimation, voxels. `None`
    /// picks the odd width nearest half the slice side.
    pub bias_central: Option<usize>,
    pub interpolation: Interpolation,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            background_window: crate::correlation::DEFAULT_BACKGROUND_WINDOW,
            crop: None,
            downsample: 4,
            bias_central: None,
            interpolation: Interpolation::Bilinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: ScatteringScene,
    /// Standard deviation of additive read noise, in units of the mean speckle intensity.
    pub noise_sigma: f64,
    /// Number of scaled images `M`.
    pub m: usize,
    pub preprocess: Preprocess,
    pub retrieval: RetrievalConfig,
    /// Object size `d` for the memory-effect check, pixels. `None` uses the
    /// scene's lateral extent.
    pub object_size_px: Option<f64>,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: ScatteringScene {
                points: Vec::new(),
                z_o: 92.0,
                z_i: 25.0,
                delta_z: 0.5,
                sensor_n: 256,
                grain_px: 8.0,
                seed: 0,
            },
            noise_sigma: 0.0,
            m: 6,
            preprocess: Preprocess::default(),
            retrieval: RetrievalConfig::default(),
            object_size_px: None,
            output_dir: PathBuf::from("out"),
            seeds: vec![0],
        }
    }
}

impl ExperimentConfig {
    pub fn crop(&self) -> usize {
        self.preprocess.crop.unwrap_or(self.scene.sensor_n)
    }

    /// Lateral side of the reconstruction grid, voxels.
    pub fn grid_side(&self) -> usize {
        self.crop() / self.preprocess.downsample.max(1)
    }

    pub fn grid_dims(&self) -> (usize, usize, usize) {
        (self.grid_side(), self.grid_side(), 2 * self.m - 1)
    }

    pub fn bias_central(&self) -> usize {
        self.preprocess.bias_central.unwrap_or((self.grid_side() / 2) | 1)
    }

    pub fn object_size(&self) -> f64 {
        self.object_size_px.unwrap_or_else(|| self.scene.lateral_extent())
    }

    /// The same experiment with every random stream keyed to `seed`.
    pub fn for_seed(&self, seed: u64) -> ExperimentConfig {
        let mut c = self.clone();
        c.scene.seed = seed;
        c.retrieval.seed = derive_seed(seed, 1);
        c.seeds = vec![seed];
        c
    }

    pub fn noise_seed(&self) -> u64 {
        derive_seed(self.scene.seed, 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scene.sensor_n == 0 {
            return invalid("scene.sensor_n must be positive");
        }
        self.scene.validate()?;
        if self.m < 2 {
            return invalid(format!("series.m must be at least 2, got {}", self.m));
        }
        if self.scene.plane_count() > self.m {
            return invalid(format!(
                "scene uses {} planes but series.m is {}",
                self.scene.plane_count(),
                self.m
            ));
        }
        crate::correlation::comp_scale_series(self.scene.z_o, self.scene.z_i, self.scene.delta_z, self.m)?;
        let p = &self.preprocess;
        if p.background_window < 3 || p.background_window.is_multiple_of(2) {
            return invalid(format!("preprocess.background_window must be odd and >= 3, got {}", p.background_window));
        }
        let crop = self.crop();
        if crop == 0 || crop > self.scene.sensor_n {
            return invalid(format!("preprocess.crop {crop} must be in 1..={}", self.scene.sensor_n));
        }
        if p.downsample == 0 || !crop.is_multiple_of(p.downsample) {
            return invalid(format!("preprocess.downsample {} must divide the crop {crop}", p.downsample));
        }
        if self.bias_central().is_multiple_of(2) {
            return invalid(format!(
                "preprocess.bias_central {} must be odd so the window stays centred on zero lag",
                self.bias_central()
            ));
        }
        if self.bias_central() >= self.grid_side() {
            return invalid(format!(
                "preprocess.bias_central {} must be smaller than the slice side {}",
                self.bias_central(),
                self.grid_side()
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return invalid(format!("scene.noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if let Some(d) = self.object_size_px {
            if !(d > 0.0) {
                return invalid(format!("memory.object_size_px must be positive, got {d}"));
            }
        }
        if self.seeds.is_empty() {
            return invalid("seeds must list at least one seed");
        }
        self.retrieval.validate()
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }
}

/// SplitMix64 finaliser over `seed ⊕ tag`, giving independent streams per purpose.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn cfg_err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Config { line, message: message.into() })
}

fn num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .or_else(|_| cfg_err(line, format!("{key}: cannot parse {v:?}")))
}

fn flag(line: usize, key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => cfg_err(line, format!("{key}: expected true or false, found {v:?}")),
    }
}

fn optional(v: &str) -> Option<&str> {
    match v.to_ascii_lowercase().as_str() {
        "auto" | "none" => None,
        _ => Some(v),
    }
}

fn parse_seeds(line: usize, v: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = part.split_once("..=") {
            let (a, b): (u64, u64) = (num(line, "seeds", a.trim())?, num(line, "seeds", b.trim())?);
            if a > b {
                return cfg_err(line, format!("seeds: empty range {part}"));
            }
            out.extend(a..=b);
        } else {
            out.push(num(line, "seeds", part)?);
        }
    }
    if out.is_empty() {
        return cfg_err(line, "seeds: no seeds listed");
    }
    Ok(out)
}

fn parse_point(line: usize, key: &str, v: &str) -> Result<ScenePoint> {
    let f: Vec<&str> = v.split(',').map(str::trim).collect();
    let [x, y, plane, intensity] = f[..] else {
        return cfg_err(line, format!("{key}: expected \"x, y, plane, intensity\", found {v:?}"));
    };
    Ok(ScenePoint {
        x: num(line, key, x)?,
        y: num(line, key, y)?,
        plane: num(line, key, plane)?,
        intensity: num(line, key, intensity)?,
    })
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        let mut points: BTreeMap<usize, ScenePoint> = BTreeMap::new();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return cfg_err(line, format!("expected `key = value`, found {body:?}"));
            };
            let (key, v) = (key.trim(), value.trim());
            if let Some(first) = seen.insert(key.to_string(), line) {
                return cfg_err(line, format!("{key} already set on line {first}"));
            }
            let r = &mut c.retrieval;
            match key {
                "scene.z_o" => c.scene.z_o = num(line, key, v)?,
                "scene.z_i" => c.scene.z_i = num(line, key, v)?,
                "scene.delta_z" => c.scene.delta_z = num(line, key, v)?,
                "scene.sensor_n" => c.scene.sensor_n = num(line, key, v)?,
                "scene.grain_px" => c.scene.grain_px = num(line, key, v)?,
                "scene.seed" => c.scene.seed = num(line, key, v)?,
                "scene.noise_sigma" => c.noise_sigma = num(line, key, v)?,
                "series.m" => c.m = num(line, key, v)?,
                "preprocess.background_window" => c.preprocess.background_window = num(line, key, v)?,
                "preprocess.crop" => {
                    c.preprocess.crop = optional(v).map(|s| num(line, key, s)).transpose()?;
                }
                "preprocess.downsample" => c.preprocess.downsample = num(line, key, v)?,
                "preprocess.bias_central" => {
                    c.preprocess.bias_central = optional(v).map(|s| num(line, key, s)).transpose()?;
                }
                "preprocess.interpolation" | "interpolation" => {
                    c.preprocess.interpolation = v.parse().or_else(|e: String| cfg_err(line, e))?;
                }
                "retrieval.beta_start" => r.beta_start = num(line, key, v)?,
                "retrieval.beta_end" => r.beta_end = num(line, key, v)?,
                "retrieval.beta_step" => r.beta_step = num(line, key, v)?,
                "retrieval.iters_per_beta" => r.iters_per_beta = num(line, key, v)?,
                "retrieval.er_iters" => r.er_iters = num(line, key, v)?,
                "retrieval.seed" => r.seed = num(line, key, v)?,
                "retrieval.hio" => r.hio = flag(line, key, v)?,
                "retrieval.realness" => r.constraints.realness = flag(line, key, v)?,
                "retrieval.non_negativity" => r.constraints.non_negativity = flag(line, key, v)?,
                "retrieval.intensity_max" => {
                    r.constraints.intensity_max = match v.to_ascii_lowercase().as_str() {
                        "auto" => Some(IntensityMax::Auto),
                        "none" | "off" => None,
                        _ => Some(IntensityMax::Fixed(num(line, key, v)?)),
                    };
                }
                "memory.object_size_px" => {
                    c.object_size_px = optional(v).map(|s| num(line, key, s)).transpose()?;
                }
                "output.dir" => c.output_dir = PathBuf::from(v),
                "seeds" => c.seeds = parse_seeds(line, v)?,
                _ => {
                    if let Some(idx) = key.strip_prefix("scene.point.") {
                        let idx: usize = num(line, key, idx)?;
                        points.insert(idx, parse_point(line, key, v)?);
                    } else {
                        return cfg_err(line, format!("unknown key {key:?}"));
                    }
                }
            }
        }
        c.scene.points = points.into_values().collect();
        Ok(c)
    }
}

impl ExperimentConfig {
    /// Renders the configuration back to the text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        let sc = &self.scene;
        kv("scene.z_o", format!("{:?}", sc.z_o));
        kv("scene.z_i", format!("{:?}", sc.z_i));
        kv("scene.delta_z", format!("{:?}", sc.delta_z));
        kv("scene.sensor_n", sc.sensor_n.to_string());
        kv("scene.grain_px", format!("{:?}", sc.grain_px));
        kv("scene.seed", sc.seed.to_string());
        kv("scene.noise_sigma", format!("{:?}", self.noise_sigma));
        for (i, p) in sc.points.iter().enumerate() {
            kv(&format!("scene.point.{i}"), format!("{}, {}, {}, {:?}", p.x, p.y, p.plane, p.intensity));
        }
        kv("series.m", self.m.to_string());
        let p = &self.preprocess;
        kv("preprocess.background_window", p.background_window.to_string());
        kv("preprocess.crop", p.crop.map_or("auto".into(), |v| v.to_string()));
        kv("preprocess.downsample", p.downsample.to_string());
        kv("preprocess.bias_central", p.bias_central.map_or("auto".into(), |v| v.to_string()));
        kv("preprocess.interpolation", p.interpolation.to_string());
        let r = &self.retrieval;
        kv("retrieval.beta_start", format!("{:?}", r.beta_start));
        kv("retrieval.beta_end", format!("{:?}", r.beta_end));
        kv("retrieval.beta_step", format!("{:?}", r.beta_step));
        kv("retrieval.iters_per_beta", r.iters_per_beta.to_string());
        kv("retrieval.er_iters", r.er_iters.to_string());
        kv("retrieval.seed", r.seed.to_string());
        kv("retrieval.hio", r.hio.to_string());
        kv("retrieval.realness", r.constraints.realness.to_string());
        kv("retrieval.non_negativity", r.constraints.non_negativity.to_string());
        kv(
            "retrieval.intensity_max",
            match r.constraints.intensity_max {
                Some(IntensityMax::Auto) => "auto".into(),
                Some(IntensityMax::Fixed(m)) => format!("{m:?}"),
                None => "none".into(),
            },
        );
        kv("memory.object_size_px", self.object_size_px.map_or("auto".into(), |d| format!("{d:?}")));
        kv("output.dir", self.output_dir.display().to_string());
        kv("seeds", self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", "));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DESK: &str = "
        # five points on three planes
        scene.z_o = 92
        scene.z_i = 25
        scene.delta_z = 0.5
        scene.sensor_n = 256
        scene.grain_px = 8
        scene.point.0 = 0, 0, 0, 1.0
        scene.point.1 = -12, -12, 1, 1.0   # middle
        scene.point.2 = 12, 12, 1, 1.0
        scene.point.3 = 20, -16, 2, 1.0
        scene.point.4 = 20, 16, 2, 1.0
        series.m = 6
        preprocess.downsample = 4
        retrieval.intensity_max = auto
        seeds = 1..=3, 9
        output.dir = out/desk
    ";

    #[test]
    fn parses_desk_example() {
        let c: ExperimentConfig = DESK.parse().unwrap();
        assert_eq!(c.scene.points.len(), 5);
        assert_eq!(c.scene.points[1], ScenePoint { x: -12, y: -12, plane: 1, intensity: 1.0 });
        assert_eq!(c.seeds, vec![1, 2, 3, 9]);
        assert_eq!(c.grid_dims(), (64, 64, 11));
        assert_eq!(c.bias_central(), 33);
        assert_eq!(c.output_dir, PathBuf::from("out/desk"));
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let c: ExperimentConfig = DESK.parse().unwrap();
        let again: ExperimentConfig = c.to_text().parse().unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = "scene.z_o = 3\nbogus = 1\n".parse::<ExperimentConfig>().unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }));
        let e = "\n\nscene.z_o = abc".parse::<ExperimentConfig>().unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }));
        let e = "series.m = 3\nseries.m = 4".parse::<ExperimentConfig>().unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }));
        let e = "scene.point.0 = 1, 2, 3".parse::<ExperimentConfig>().unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
        let e = "no equals sign".parse::<ExperimentConfig>().unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
    }

    #[test]
    fn semantic_validation() {
        let mut c: ExperimentConfig = DESK.parse().unwrap();
        c.m = 1;
        assert!(c.validate().is_err());
        let mut c: ExperimentConfig = DESK.parse().unwrap();
        c.preprocess.downsample = 3;
        assert!(c.validate().is_err());
        let mut c: ExperimentConfig = DESK.parse().unwrap();
        c.scene.points[0].plane = 7;
        assert!(c.validate().is_err());
        let mut c: ExperimentConfig = DESK.parse().unwrap();
        c.preprocess.background_window = 8;
        assert!(c.validate().is_err());
        let mut c: ExperimentConfig = DESK.parse().unwrap();
        c.preprocess.bias_central = Some(16);
        assert!(c.validate().is_err());
        c.preprocess.bias_central = Some(17);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn seeds_derive_distinct_streams() {
        let c: ExperimentConfig = DESK.parse().unwrap();
        let a = c.for_seed(1);
        let b = c.for_seed(2);
        assert_eq!(a.scene.seed, 1);
        assert_ne!(a.retrieval.seed, b.retrieval.seed);
        assert_ne!(a.noise_seed(), a.retrieval.seed);
    }
}
