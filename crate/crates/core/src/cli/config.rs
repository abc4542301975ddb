//! Experiment configuration, read from the same `key = value` format as
//! scene files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::ald::{make_schedule, NoiseSchedule};
use crate::baselines::SimulatorOptions;
use crate::channel::{build_environment, desk_preset, paper_scale_preset, Environment};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::scorenet::{OptimizerKind, DEFAULT_HIDDEN};
use crate::training::{ResetRule, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Ald,
    Zogd,
    Random,
    SimPerfect,
    SimImperfect,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ald,
        Method::Zogd,
        Method::Random,
        Method::SimPerfect,
        Method::SimImperfect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ald => "ald",
            Method::Zogd => "zogd",
            Method::Random => "random",
            Method::SimPerfect => "sim_perfect",
            Method::SimImperfect => "sim_imperfect",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the scene comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum SceneSource {
    Desk,
    PaperScale(usize),
    File(PathBuf),
}

impl SceneSource {
    fn parse(value: &str, base: &Path) -> Self {
        match value.trim() {
            "desk" => Self::Desk,
            "paper_scale" => Self::PaperScale(3),
            v => match v.strip_prefix("paper_scale:").and_then(|n| n.parse().ok()) {
                Some(n) => Self::PaperScale(n),
                None => Self::File(base.join(v)),
            },
        }
    }

    pub fn load(&self) -> Result<Environment> {
        match self {
            Self::Desk => build_environment(&desk_preset()),
            Self::PaperScale(n) => build_environment(&paper_scale_preset(*n)),
            Self::File(p) => Environment::from_file(p),
        }
    }

    fn describe(&self) -> String {
        match self {
            Self::Desk => "desk".into(),
            Self::PaperScale(n) => format!("paper_scale:{n}"),
            Self::File(p) => p.display().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapConfig {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    /// Cells within this distance of a real receiver form the receiver region.
    pub rx_radius: f64,
    pub method: Method,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub snrs: Vec<f64>,
    /// Iteration budget of the iterative baselines.
    pub iterations: usize,
    pub random_samples: usize,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    pub train_seed: u64,
    pub hidden: Vec<usize>,
    /// Number of environment settings used for training and evaluation.
    pub settings: usize,
    pub settings_seed: u64,
    pub heldout_per_setting: usize,
    pub schedule: NoiseSchedule,
    pub zogd_lr: f64,
    pub zogd_m: usize,
    pub zogd_radius: f64,
    pub sim_lr: f64,
    pub sim: SimulatorOptions,
    /// Relative mismatch of the measured world against the simulator;
    /// `None` takes the scene's value.
    pub overlay: Option<f64>,
    pub overlay_seed: u64,
    pub heatmap: HeatmapConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneSource::Desk,
            methods: Method::ALL.to_vec(),
            seeds: (0..20).collect(),
            snrs: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            iterations: 50,
            random_samples: 50,
            out_dir: PathBuf::from("out"),
            train: TrainConfig {
                iterations: 200,
                ..TrainConfig::default()
            },
            train_seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            settings: 8,
            settings_seed: 1000,
            heldout_per_setting: 4,
            schedule: NoiseSchedule::default(),
            zogd_lr: 0.05,
            zogd_m: 4,
            zogd_radius: 1e-2,
            sim_lr: 0.05,
            sim: SimulatorOptions::default(),
            overlay: None,
            overlay_seed: 7,
            heatmap: HeatmapConfig {
                x_range: (1.3, 2.5),
                y_range: (0.3, 1.7),
                nx: 40,
                ny: 40,
                rx_radius: 0.15,
                method: Method::Ald,
            },
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "scene",
    "methods",
    "seeds",
    "snr",
    "iterations",
    "random_samples",
    "out",
    "train_iterations",
    "lambda",
    "lr",
    "beta",
    "gamma",
    "m",
    "probe_radius",
    "batch_size",
    "sigma_init",
    "reset_rule",
    "optimizer",
    "train_snr",
    "train_seed",
    "hidden",
    "settings",
    "settings_seed",
    "heldout_per_setting",
    "ald_sigma1",
    "ald_beta",
    "ald_steps",
    "ald_inner",
    "ald_eps",
    "ald_scaled_step",
    "zogd_lr",
    "zogd_m",
    "zogd_radius",
    "sim_lr",
    "sim_fd_step",
    "sim_backtracks",
    "overlay",
    "overlay_seed",
    "heatmap_x",
    "heatmap_y",
    "heatmap_nx",
    "heatmap_ny",
    "heatmap_rx_radius",
    "heatmap_method",
];

fn pair(kv: &KvFile, key: &str, default: (f64, f64)) -> Result<(f64, f64)> {
    match kv.get_list::<f64>(key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 && v[0] < v[1] => Ok((v[0], v[1])),
        Some(_) => {
            let line = kv.entry(key)?.map_or(0, |e| e.line);
            Err(kv.error(line, format!("`{key}` needs two increasing values")))
        }
    }
}

/// Parse `seeds = 0,1,2` or `seeds = 0..20`.
fn parse_seeds(kv: &KvFile) -> Result<Option<Vec<u64>>> {
    let Some(e) = kv.entry("seeds")? else {
        return Ok(None);
    };
    if let Some((a, b)) = e.value.split_once("..") {
        let (a, b) = (a.trim().parse::<u64>(), b.trim().parse::<u64>());
        return match (a, b) {
            (Ok(a), Ok(b)) if a < b => Ok(Some((a..b).collect())),
            _ => Err(kv.error(e.line, format!("bad seed range `{}`", e.value))),
        };
    }
    kv.get_list("seeds")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_kv(&KvFile::read(path)?)
    }

    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        kv.check_known(KNOWN_KEYS, &[])?;
        let d = Self::default();
        let base = kv.path().parent().unwrap_or(Path::new("")).to_path_buf();
        let line_of = |key: &str| kv.entry(key).ok().flatten().map_or(0, |e| e.line);

        let scene = match kv.get::<String>("scene")? {
            Some(v) => SceneSource::parse(&v, &base),
            None => d.scene.clone(),
        };
        let methods = kv.get_list::<Method>("methods")?.unwrap_or(d.methods.clone());
        let seeds = parse_seeds(kv)?.unwrap_or(d.seeds.clone());
        let snrs = kv.get_list::<f64>("snr")?.unwrap_or(d.snrs.clone());
        let train_snr: f64 = kv.get_or("train_snr", 1.0 / d.train.noise_var)?;
        if !(train_snr > 0.0) {
            return Err(kv.error(line_of("train_snr"), "train_snr must be positive"));
        }
        let train = TrainConfig {
            lambda: kv.get_or("lambda", d.train.lambda)?,
            lr: kv.get_or("lr", d.train.lr)?,
            iterations: kv.get_or("train_iterations", d.train.iterations)?,
            beta: kv.get_or("beta", d.train.beta)?,
            gamma: kv.get_or("gamma", d.train.gamma)?,
            m: kv.get_or("m", d.train.m)?,
            probe_radius: kv.get_or("probe_radius", d.train.probe_radius)?,
            batch_size: kv.get_or("batch_size", d.train.batch_size)?,
            sigma_init: kv.get_or("sigma_init", d.train.sigma_init)?,
            reset_rule: kv.get_or::<ResetRule>("reset_rule", d.train.reset_rule)?,
            optimizer: kv.get_or::<OptimizerKind>("optimizer", d.train.optimizer)?,
            noise_var: 1.0 / train_snr,
        };
        let schedule = make_schedule(
            kv.get_or("ald_sigma1", d.schedule.sigma1)?,
            kv.get_or("ald_beta", d.schedule.beta)?,
            kv.get_or("ald_steps", d.schedule.steps)?,
            kv.get_or("ald_inner", d.schedule.inner)?,
            kv.get_or("ald_eps", d.schedule.eps)?,
        )?
        .with_scaled_step(kv.get_or("ald_scaled_step", false)?);
        let heatmap = HeatmapConfig {
            x_range: pair(kv, "heatmap_x", d.heatmap.x_range)?,
            y_range: pair(kv, "heatmap_y", d.heatmap.y_range)?,
            nx: kv.get_or("heatmap_nx", d.heatmap.nx)?,
            ny: kv.get_or("heatmap_ny", d.heatmap.ny)?,
            rx_radius: kv.get_or("heatmap_rx_radius", d.heatmap.rx_radius)?,
            method: kv.get_or::<Method>("heatmap_method", d.heatmap.method)?,
        };
        let cfg = Self {
            scene,
            methods,
            seeds,
            snrs,
            iterations: kv.get_or("iterations", d.iterations)?,
            random_samples: kv.get_or("random_samples", d.random_samples)?,
            out_dir: kv.get::<String>("out")?.map_or(base.join(&d.out_dir), |p| base.join(p)),
            train,
            train_seed: kv.get_or("train_seed", d.train_seed)?,
            hidden: kv.get_list::<usize>("hidden")?.unwrap_or(d.hidden.clone()),
            settings: kv.get_or("settings", d.settings)?,
            settings_seed: kv.get_or("settings_seed", d.settings_seed)?,
            heldout_per_setting: kv.get_or("heldout_per_setting", d.heldout_per_setting)?,
            schedule,
            zogd_lr: kv.get_or("zogd_lr", d.zogd_lr)?,
            zogd_m: kv.get_or("zogd_m", d.zogd_m)?,
            zogd_radius: kv.get_or("zogd_radius", d.zogd_radius)?,
            sim_lr: kv.get_or("sim_lr", d.sim_lr)?,
            sim: SimulatorOptions {
                fd_step: kv.get_or("sim_fd_step", d.sim.fd_step)?,
                max_backtracks: kv.get_or("sim_backtracks", d.sim.max_backtracks)?,
            },
            overlay: kv.get("overlay")?,
            overlay_seed: kv.get_or("overlay_seed", d.overlay_seed)?,
            heatmap,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.methods.is_empty() {
            return bad("method set must be nonempty");
        }
        if self.seeds.is_empty() {
            return bad("seed list must be nonempty");
        }
        if self.snrs.is_empty() || self.snrs.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("SNR values must be positive");
        }
        if self.iterations == 0 || self.random_samples == 0 {
            return bad("iteration budgets must be positive");
        }
        if self.settings == 0 || self.heldout_per_setting == 0 {
            return bad("settings and heldout_per_setting must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if self.zogd_m == 0 || !(self.zogd_radius > 0.0) {
            return bad("zogd needs m >= 1 and a positive probe radius");
        }
        if !(self.sim.fd_step > 0.0) {
            return bad("sim_fd_step must be positive");
        }
        if self.overlay.is_some_and(|o| !(o >= 0.0)) {
            return bad("overlay must be non-negative");
        }
        if self.heatmap.nx < 2 || self.heatmap.ny < 2 {
            return bad("heatmap resolution must be at least 2 per axis");
        }
        self.train.validate()
    }

    /// Stable text form of every resolved setting; its hash identifies runs.
    pub fn canonical_text(&self) -> String {
        let list = |v: &[String]| v.join(",");
        let f = |x: f64| format!("{x:e}");
        let mut s = String::new();
        let t = &self.train;
        let sc = &self.schedule;
        let h = &self.heatmap;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("scene", self.scene.describe());
        kv("methods", list(&self.methods.iter().map(|m| m.to_string()).collect::<Vec<_>>()));
        kv("seeds", list(&self.seeds.iter().map(|x| x.to_string()).collect::<Vec<_>>()));
        kv("snr", list(&self.snrs.iter().map(|x| f(*x)).collect::<Vec<_>>()));
        kv("iterations", self.iterations.to_string());
        kv("random_samples", self.random_samples.to_string());
        kv("train_iterations", t.iterations.to_string());
        kv("lambda", f(t.lambda));
        kv("lr", f(t.lr));
        kv("beta", f(t.beta));
        kv("gamma", f(t.gamma));
        kv("m", t.m.to_string());
        kv("probe_radius", f(t.probe_radius));
        kv("batch_size", t.batch_size.to_string());
        kv("sigma_init", f(t.sigma_init));
        kv("reset_rule", t.reset_rule.to_string());
        kv("optimizer", t.optimizer.to_string());
        kv("train_snr", f(1.0 / t.noise_var));
        kv("train_seed", self.train_seed.to_string());
        kv("hidden", list(&self.hidden.iter().map(|x| x.to_string()).collect::<Vec<_>>()));
        kv("settings", self.settings.to_string());
        kv("settings_seed", self.settings_seed.to_string());
        kv("heldout_per_setting", self.heldout_per_setting.to_string());
        kv("ald_sigma1", f(sc.sigma1));
        kv("ald_beta", f(sc.beta));
        kv("ald_steps", sc.steps.to_string());
        kv("ald_inner", sc.inner.to_string());
        kv("ald_eps", f(sc.eps));
        kv("ald_scaled_step", sc.scaled_step.to_string());
        kv("zogd_lr", f(self.zogd_lr));
        kv("zogd_m", self.zogd_m.to_string());
        kv("zogd_radius", f(self.zogd_radius));
        kv("sim_lr", f(self.sim_lr));
        kv("sim_fd_step", f(self.sim.fd_step));
        kv("sim_backtracks", self.sim.max_backtracks.to_string());
        kv("overlay", self.overlay.map_or("scene".into(), f));
        kv("overlay_seed", self.overlay_seed.to_string());
        kv("heatmap_x", format!("{},{}", f(h.x_range.0), f(h.x_range.1)));
        kv("heatmap_y", format!("{},{}", f(h.y_range.0), f(h.y_range.1)));
        kv("heatmap_nx", h.nx.to_string());
        kv("heatmap_ny", h.ny.to_string());
        kv("heatmap_rx_radius", f(h.rx_radius));
        kv("heatmap_method", h.method.to_string());
        s
    }

    pub fn sha256(&self) -> String {
        Sha256::digest(self.canonical_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// `# config_sha256=... seeds=...` line written at the top of outputs.
    pub fn header_comment(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|s| s.to_string()).collect();
        format!(
            "# config_sha256={} seeds={} train_seed={}",
            self.sha256(),
            seeds.join(","),
            self.train_seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let kv = KvFile::parse("", "/tmp/x.cfg").unwrap();
        let cfg = ExperimentConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.methods.len(), 5);
        assert_eq!(cfg.seeds.len(), 20);
        assert_eq!(cfg.train.iterations, 200);
        assert_eq!(cfg.schedule.total_iterations(), 50);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/out"));
    }

    #[test]
    fn parses_overrides_and_ranges() {
        let text = "methods = ald, zogd\nseeds = 3..6\nsnr = 1, 2\nlambda = 0.1\noptimizer = adam\n\
                    reset_rule = text_semantics\nscene = paper_scale:1\nald_scaled_step = true\n";
        let cfg = ExperimentConfig::from_kv(&KvFile::parse(text, "e.cfg").unwrap()).unwrap();
        assert_eq!(cfg.methods, vec![Method::Ald, Method::Zogd]);
        assert_eq!(cfg.seeds, vec![3, 4, 5]);
        assert_eq!(cfg.snrs, vec![1.0, 2.0]);
        assert_eq!(cfg.train.lambda, 0.1);
        assert_eq!(cfg.train.optimizer, OptimizerKind::Adam);
        assert_eq!(cfg.train.reset_rule, ResetRule::TextSemantics);
        assert_eq!(cfg.scene, SceneSource::PaperScale(1));
        assert!(cfg.schedule.scaled_step);
    }

    #[test]
    fn errors_carry_line_numbers() {
        for (text, line) in [
            ("seeds = 1\nbogus = 2\n", 2),
            ("\nmethods = ald, magic\n", 2),
            ("lambda = x\n", 1),
            ("seeds = 5..2\n", 1),
        ] {
            match ExperimentConfig::from_kv(&KvFile::parse(text, "e.cfg").unwrap()) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(
            ExperimentConfig::from_kv(&KvFile::parse("snr = -1\n", "e.cfg").unwrap()),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_kv(&KvFile::parse("ald_beta = 1\n", "e.cfg").unwrap()),
            Err(Error::InvalidSchedule(_))
        ));
    }

    #[test]
    fn hash_tracks_settings() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.sha256(), b.sha256());
        b.train.lambda = 0.5;
        assert_ne!(a.sha256(), b.sha256());
        assert!(a.header_comment().starts_with("# config_sha256="));
    }
}
