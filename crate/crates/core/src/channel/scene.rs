//! Scene description: dipole layout, per-kind Lorentzian constants, band plan.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::{parse_list, KvFile};

/// Minimum distance between any two dipoles, in meters.
pub const MIN_SEPARATION_M: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DipoleKind {
    Tx,
    Rx,
    Ris,
    Scatterer,
}

impl DipoleKind {
    pub const ALL: [DipoleKind; 4] = [
        DipoleKind::Tx,
        DipoleKind::Rx,
        DipoleKind::Ris,
        DipoleKind::Scatterer,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DipoleKind::Tx => "TX",
            DipoleKind::Rx => "RX",
            DipoleKind::Ris => "RIS",
            DipoleKind::Scatterer => "SCATTERER",
        }
    }

    fn key_suffix(self) -> &'static str {
        match self {
            DipoleKind::Tx => "tx",
            DipoleKind::Rx => "rx",
            DipoleKind::Ris => "ris",
            DipoleKind::Scatterer => "scatterer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TX" => Some(DipoleKind::Tx),
            "RX" => Some(DipoleKind::Rx),
            "RIS" => Some(DipoleKind::Ris),
            "SCATTERER" | "SCAT" => Some(DipoleKind::Scatterer),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dipole {
    pub kind: DipoleKind,
    /// Position in meters.
    pub pos: [f64; 2],
    /// Resonance in GHz. Ignored for RIS dipoles, whose resonance follows the
    /// configuration.
    pub f_res_ghz: f64,
    pub gamma_ghz: f64,
    pub coupling: f64,
}

/// Axis-aligned rectangle in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    /// Map normalized `(u, v) ∈ [0,1]²` into the rectangle.
    pub fn at(&self, u: f64, v: f64) -> [f64; 2] {
        [self.x0 + u * (self.x1 - self.x0), self.y0 + v * (self.y1 - self.y0)]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

/// Per-kind loss rate and coupling strength.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KindConstants {
    pub gamma_ghz: f64,
    pub coupling: f64,
}

/// Human-facing scene description, before validation.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_p: usize,
    pub bands: usize,
    pub f_lo_ghz: f64,
    pub f_hi_ghz: f64,
    pub ris_f_min_ghz: f64,
    pub ris_f_max_ghz: f64,
    pub tx_box: Rect,
    pub noise_overlay: f64,
    /// Indexed like [`DipoleKind::ALL`].
    pub constants: [KindConstants; 4],
    pub dipoles: Vec<(DipoleKind, [f64; 2], Option<f64>)>,
}

/// Validated, immutable scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_p: usize,
    pub bands: usize,
    pub f_lo_ghz: f64,
    pub f_hi_ghz: f64,
    pub ris_f_min_ghz: f64,
    pub ris_f_max_ghz: f64,
    pub tx_box: Rect,
    pub noise_overlay: f64,
    pub dipoles: Vec<Dipole>,
    tx_idx: Vec<usize>,
    rx_idx: Vec<usize>,
    ris_idx: Vec<usize>,
}

fn kind_index(kind: DipoleKind) -> usize {
    DipoleKind::ALL.iter().position(|k| *k == kind).unwrap()
}

/// Validate a scene description and build the environment.
pub fn build_environment(config: &SceneConfig) -> Result<Environment> {
    let bad = |msg: String| Err(Error::InvalidScene(msg));
    if config.bands == 0 {
        return bad("at least one subband is required".into());
    }
    if !(config.f_lo_ghz < config.f_hi_ghz) || config.f_lo_ghz <= 0.0 {
        return bad(format!(
            "band edges must satisfy 0 < f_lo < f_hi, got [{}, {}]",
            config.f_lo_ghz, config.f_hi_ghz
        ));
    }
    if !(config.ris_f_min_ghz < config.ris_f_max_ghz) || config.ris_f_min_ghz <= 0.0 {
        return bad("RIS tuning range must satisfy 0 < f_min < f_max".into());
    }
    if !(config.noise_overlay >= 0.0) {
        return bad("noise_overlay must be non-negative".into());
    }
    let b = config.tx_box;
    if !(b.x0 < b.x1 && b.y0 < b.y1) {
        return bad("transmitter box must have positive extent".into());
    }
    for (kind, c) in DipoleKind::ALL.iter().zip(&config.constants) {
        if !(c.gamma_ghz > 0.0) || !(c.coupling > 0.0) {
            return bad(format!("{} loss rate and coupling must be positive", kind.label()));
        }
    }

    let center = 0.5 * (config.f_lo_ghz + config.f_hi_ghz);
    let mut dipoles = Vec::with_capacity(config.dipoles.len());
    for (kind, pos, f_res) in &config.dipoles {
        if !pos.iter().all(|x| x.is_finite()) {
            return bad("dipole positions must be finite".into());
        }
        let f_res_ghz = match (kind, f_res) {
            (DipoleKind::Ris, _) => config.ris_f_min_ghz,
            (_, Some(f)) if *f > 0.0 => *f,
            (_, Some(f)) => return bad(format!("resonance must be positive, got {f}")),
            (_, None) => center,
        };
        let c = config.constants[kind_index(*kind)];
        dipoles.push(Dipole {
            kind: *kind,
            pos: *pos,
            f_res_ghz,
            gamma_ghz: c.gamma_ghz,
            coupling: c.coupling,
        });
    }

    let idx = |k: DipoleKind| -> Vec<usize> {
        dipoles
            .iter()
            .enumerate()
            .filter(|(_, d)| d.kind == k)
            .map(|(i, _)| i)
            .collect()
    };
    let (tx_idx, rx_idx, ris_idx) = (idx(DipoleKind::Tx), idx(DipoleKind::Rx), idx(DipoleKind::Ris));
    if ris_idx.is_empty() || config.n_p == 0 {
        return bad("scene has no RIS elements".into());
    }
    if ris_idx.len() != config.n_p {
        return bad(format!("np = {} but {} RIS dipoles listed", config.n_p, ris_idx.len()));
    }
    if tx_idx.len() != config.n_tx || config.n_tx == 0 {
        return bad(format!("ntx = {} but {} TX dipoles listed", config.n_tx, tx_idx.len()));
    }
    if rx_idx.len() != config.n_rx || config.n_rx == 0 {
        return bad(format!("nrx = {} but {} RX dipoles listed", config.n_rx, rx_idx.len()));
    }
    check_separation(&dipoles).map_err(Error::InvalidScene)?;

    Ok(Environment {
        n_tx: config.n_tx,
        n_rx: config.n_rx,
        n_p: config.n_p,
        bands: config.bands,
        f_lo_ghz: config.f_lo_ghz,
        f_hi_ghz: config.f_hi_ghz,
        ris_f_min_ghz: config.ris_f_min_ghz,
        ris_f_max_ghz: config.ris_f_max_ghz,
        tx_box: config.tx_box,
        noise_overlay: config.noise_overlay,
        dipoles,
        tx_idx,
        rx_idx,
        ris_idx,
    })
}

pub(crate) fn check_separation(dipoles: &[Dipole]) -> std::result::Result<(), String> {
    for i in 0..dipoles.len() {
        for k in i + 1..dipoles.len() {
            let d = distance(dipoles[i].pos, dipoles[k].pos);
            if d < MIN_SEPARATION_M {
                return Err(format!(
                    "dipoles {i} ({}) and {k} ({}) are {d:.2e} m apart",
                    dipoles[i].kind.label(),
                    dipoles[k].kind.label()
                ));
            }
        }
    }
    Ok(())
}

pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Environment {
    pub fn n_dipoles(&self) -> usize {
        self.dipoles.len()
    }

    /// Length of the environment-setting vector (normalized TX coordinates).
    pub fn setting_dim(&self) -> usize {
        2 * self.n_tx
    }

    pub fn tx_indices(&self) -> &[usize] {
        &self.tx_idx
    }

    pub fn rx_indices(&self) -> &[usize] {
        &self.rx_idx
    }

    pub fn ris_indices(&self) -> &[usize] {
        &self.ris_idx
    }

    /// Subband center frequencies in GHz.
    pub fn subband_freqs(&self) -> Vec<f64> {
        let width = (self.f_hi_ghz - self.f_lo_ghz) / self.bands as f64;
        (0..self.bands)
            .map(|b| self.f_lo_ghz + (b as f64 + 0.5) * width)
            .collect()
    }

    /// RIS resonance for a tuning value in `[0, 1]`.
    pub fn ris_resonance(&self, value: f64) -> f64 {
        self.ris_f_min_ghz + value * (self.ris_f_max_ghz - self.ris_f_min_ghz)
    }

    /// Same scene with every scatterer removed.
    pub fn without_scatterers(&self) -> Environment {
        self.rebuild(|d| (d.kind != DipoleKind::Scatterer).then(|| d.clone()), None)
    }

    /// Same scene with the receivers replaced by one probe receiver at `pos`.
    /// The probe reuses the first receiver's resonance and constants.
    pub fn with_probe_receiver(&self, pos: [f64; 2]) -> Result<Environment> {
        let template = self.dipoles[self.rx_idx[0]].clone();
        let env = self.rebuild(
            |d| (d.kind != DipoleKind::Rx).then(|| d.clone()),
            Some(Dipole { pos, ..template }),
        );
        check_separation(&env.dipoles).map_err(Error::DegenerateScene)?;
        Ok(env)
    }

    fn rebuild(&self, keep: impl Fn(&Dipole) -> Option<Dipole>, extra: Option<Dipole>) -> Environment {
        let mut dipoles: Vec<Dipole> = self.dipoles.iter().filter_map(keep).collect();
        dipoles.extend(extra);
        let idx = |k: DipoleKind| -> Vec<usize> {
            dipoles
                .iter()
                .enumerate()
                .filter(|(_, d)| d.kind == k)
                .map(|(i, _)| i)
                .collect()
        };
        let (tx_idx, rx_idx, ris_idx) = (idx(DipoleKind::Tx), idx(DipoleKind::Rx), idx(DipoleKind::Ris));
        Environment {
            n_rx: rx_idx.len(),
            tx_idx,
            rx_idx,
            ris_idx,
            dipoles,
            ..self.clone()
        }
    }

    /// Read a scene file.
    pub fn from_file(path: &Path) -> Result<Environment> {
        let kv = KvFile::read(path)?;
        build_environment(&SceneConfig::from_kv(&kv)?)
    }

    /// Serialize back to the scene file format.
    pub fn to_scene_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ntx = {}", self.n_tx);
        let _ = writeln!(s, "nrx = {}", self.n_rx);
        let _ = writeln!(s, "np = {}", self.n_p);
        let _ = writeln!(s, "bands = {}", self.bands);
        let _ = writeln!(s, "f_lo_ghz = {}", self.f_lo_ghz);
        let _ = writeln!(s, "f_hi_ghz = {}", self.f_hi_ghz);
        let _ = writeln!(s, "ris_f_min_ghz = {}", self.ris_f_min_ghz);
        let _ = writeln!(s, "ris_f_max_ghz = {}", self.ris_f_max_ghz);
        let b = self.tx_box;
        let _ = writeln!(s, "tx_box = {},{},{},{}", b.x0, b.y0, b.x1, b.y1);
        let _ = writeln!(s, "noise_overlay = {}", self.noise_overlay);
        for kind in DipoleKind::ALL {
            if let Some(d) = self.dipoles.iter().find(|d| d.kind == kind) {
                let _ = writeln!(s, "gamma_{} = {}", kind.key_suffix(), d.gamma_ghz);
                let _ = writeln!(s, "coupling_{} = {}", kind.key_suffix(), d.coupling);
            }
        }
        for d in &self.dipoles {
            if d.kind == DipoleKind::Ris {
                let _ = writeln!(s, "dipole = {},{},{}", d.kind.label(), d.pos[0], d.pos[1]);
            } else {
                let _ = writeln!(
                    s,
                    "dipole = {},{},{},{}",
                    d.kind.label(),
                    d.pos[0],
                    d.pos[1],
                    d.f_res_ghz
                );
            }
        }
        s
    }
}

const SCENE_KEYS: &[&str] = &[
    "ntx",
    "nrx",
    "np",
    "bands",
    "f_lo_ghz",
    "f_hi_ghz",
    "ris_f_min_ghz",
    "ris_f_max_ghz",
    "tx_box",
    "noise_overlay",
    "dipole",
];

impl SceneConfig {
    pub fn from_kv(kv: &KvFile) -> Result<SceneConfig> {
        kv.check_known(SCENE_KEYS, &["gamma_", "coupling_"])?;
        let mut constants = [KindConstants {
            gamma_ghz: 0.0,
            coupling: 0.0,
        }; 4];
        for (i, kind) in DipoleKind::ALL.iter().enumerate() {
            constants[i] = KindConstants {
                gamma_ghz: kv.require(&format!("gamma_{}", kind.key_suffix()))?,
                coupling: kv.require(&format!("coupling_{}", kind.key_suffix()))?,
            };
        }
        let tx_box = match kv.get_list::<f64>("tx_box")? {
            Some(v) if v.len() == 4 => Rect {
                x0: v[0],
                y0: v[1],
                x1: v[2],
                y1: v[3],
            },
            Some(_) => {
                let line = kv.entry("tx_box")?.map_or(0, |e| e.line);
                return Err(kv.error(line, "tx_box needs four numbers: x0,y0,x1,y1"));
            }
            None => return Err(kv.error(0, "missing required key `tx_box`")),
        };
        let mut dipoles = Vec::new();
        for e in kv.all("dipole") {
            let parts: Vec<&str> = e.value.split(',').map(str::trim).collect();
            if parts.len() != 3 && parts.len() != 4 {
                return Err(kv.error(e.line, "dipole needs `kind,x,y[,f_res]`"));
            }
            let kind = DipoleKind::parse(parts[0])
                .ok_or_else(|| kv.error(e.line, format!("unknown dipole kind `{}`", parts[0])))?;
            let nums = parse_list::<f64>(&parts[1..].join(",")).map_err(|m| kv.error(e.line, m))?;
            dipoles.push((kind, [nums[0], nums[1]], nums.get(2).copied()));
        }
        Ok(SceneConfig {
            n_tx: kv.require("ntx")?,
            n_rx: kv.require("nrx")?,
            n_p: kv.require("np")?,
            bands: kv.require("bands")?,
            f_lo_ghz: kv.require("f_lo_ghz")?,
            f_hi_ghz: kv.require("f_hi_ghz")?,
            ris_f_min_ghz: kv.require("ris_f_min_ghz")?,
            ris_f_max_ghz: kv.require("ris_f_max_ghz")?,
            tx_box,
            noise_overlay: kv.get_or("noise_overlay", 0.0)?,
            constants,
            dipoles,
        })
    }
}

/// Desk-scale scene: 2 TX, 2 RX, 16 RIS elements along the top of a
/// 20-dipole partition that blocks the direct path, four subbands over
/// 0.9–1.1 GHz.
///
/// Wall dipoles resonate well below the band, so they respond out of phase
/// with the incident field and shadow the receivers. RIS elements are high-Q
/// (Γ = 0.05 GHz) and only scatter strongly when tuned near a subband.
///
/// ```text
///   y
///  1.76 |    R R R R R R R S R R R R R R R R      (RIS at y = 1.7)
///       |  +------+        S
///       |  |  TX  |        S         RX
///       |  |  box |        S         RX
///       |  +------+        S
///  0.24 |                  S
///       +------------------------------------ x
///          0.2   0.8      1.2        1.9
/// ```
pub fn desk_preset() -> SceneConfig {
    let mut dipoles = Vec::new();
    dipoles.push((DipoleKind::Tx, [0.5, 0.9], Some(1.0)));
    dipoles.push((DipoleKind::Tx, [0.5, 1.1], Some(1.0)));
    dipoles.push((DipoleKind::Rx, [1.9, 0.85], Some(1.0)));
    dipoles.push((DipoleKind::Rx, [1.9, 1.15], Some(1.0)));
    for i in 0..16 {
        dipoles.push((DipoleKind::Ris, [0.45 + 0.1 * i as f64, 1.7], None));
    }
    for i in 0..20 {
        let f = 0.45 + 0.025 * (i % 5) as f64;
        dipoles.push((DipoleKind::Scatterer, [1.2, 0.24 + 0.08 * i as f64], Some(f)));
    }
    SceneConfig {
        n_tx: 2,
        n_rx: 2,
        n_p: 16,
        bands: 4,
        f_lo_ghz: 0.9,
        f_hi_ghz: 1.1,
        ris_f_min_ghz: 0.8,
        ris_f_max_ghz: 1.2,
        tx_box: Rect {
            x0: 0.2,
            y0: 0.5,
            x1: 0.8,
            y1: 1.5,
        },
        noise_overlay: 1e-2,
        constants: [
            KindConstants { gamma_ghz: 0.5, coupling: 1.0 },
            KindConstants { gamma_ghz: 0.5, coupling: 1.0 },
            KindConstants { gamma_ghz: 0.05, coupling: 0.3 },
            KindConstants { gamma_ghz: 0.05, coupling: 1.0 },
        ],
        dipoles,
    }
}

/// Larger scene shaped like the published setup: 3 TX, 4 RX, two RIS groups.
/// Each of the 45 RIS elements exposes `params_per_element` tunable
/// sub-dipoles, so the default of 3 gives 135 parameters.
pub fn paper_scale_preset(params_per_element: usize) -> SceneConfig {
    let elements = 45;
    let mut dipoles = Vec::new();
    for i in 0..3 {
        dipoles.push((DipoleKind::Tx, [0.8, 1.5 + 0.3 * i as f64], Some(1.0)));
    }
    for i in 0..4 {
        dipoles.push((DipoleKind::Rx, [5.2, 1.4 + 0.25 * i as f64], Some(1.0)));
    }
    // Group A along the top wall, group B along the right wall.
    for e in 0..elements {
        let base = if e < 23 {
            [1.5 + 0.15 * e as f64, 4.6]
        } else {
            [5.8, 2.6 + 0.15 * (e - 23) as f64]
        };
        for p in 0..params_per_element {
            let offset = 0.02 * p as f64;
            let pos = if e < 23 {
                [base[0] + offset, base[1]]
            } else {
                [base[0], base[1] + offset]
            };
            dipoles.push((DipoleKind::Ris, pos, None));
        }
    }
    for i in 0..40 {
        let f = 0.95 + 0.1 * (i % 7) as f64 / 6.0;
        dipoles.push((DipoleKind::Scatterer, [3.0, 0.1 + 0.1 * i as f64], Some(f)));
    }
    SceneConfig {
        n_tx: 3,
        n_rx: 4,
        n_p: elements * params_per_element,
        bands: 4,
        f_lo_ghz: 0.9,
        f_hi_ghz: 1.1,
        ris_f_min_ghz: 0.8,
        ris_f_max_ghz: 1.2,
        tx_box: Rect {
            x0: 0.3,
            y0: 0.5,
            x1: 2.0,
            y1: 3.5,
        },
        noise_overlay: 1e-2,
        constants: desk_preset().constants,
        dipoles,
    }
}
