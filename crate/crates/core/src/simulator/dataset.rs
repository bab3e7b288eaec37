//! Region shards (`<region>.jsonl`, one epoch per line) and `manifest.json`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{generate_epoch, sample_sky_mask, SceneConfig, SkyMask, SkyStyle};
use crate::error::{Error, Result};
use crate::geodesy::surface_point;
use crate::types::{
    Band, Constellation, EcefPosition, Epoch, Observation, SatelliteState, SolutionState,
};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Generator for epoch `epoch_id` of `region_id`.
pub fn epoch_rng(global_seed: u64, region_id: &str, epoch_id: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update((region_id.len() as u64).to_le_bytes());
    h.update(region_id.as_bytes());
    h.update(epoch_id.to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn mask_rng(global_seed: u64, region_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"sky-mask");
    h.update(global_seed.to_le_bytes());
    h.update(region_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// One region of a dataset description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub region_id: String,
    pub style: SkyStyle,
    pub lat_deg: f64,
    pub lon_deg: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: u64,
    #[serde(default = "defaults::n_sats_range")]
    pub n_sats_range: [usize; 2],
    #[serde(default = "defaults::los_sigma_base")]
    pub los_sigma_base: f64,
    #[serde(default = "defaults::nlos_mean_extra")]
    pub nlos_mean_extra: f64,
    #[serde(default = "defaults::nlos_sigma")]
    pub nlos_sigma: f64,
    #[serde(default = "defaults::cn0_los")]
    pub cn0_los: [f64; 2],
    #[serde(default = "defaults::cn0_nlos")]
    pub cn0_nlos: [f64; 2],
    #[serde(default = "defaults::guess_offset_sigma")]
    pub guess_offset_sigma: f64,
    /// Explicit mask in degrees; sampled from `style` when absent.
    #[serde(default)]
    pub sky_mask_deg: Option<Vec<f64>>,
}

mod defaults {
    pub fn epochs() -> u64 {
        2000
    }
    pub fn n_sats_range() -> [usize; 2] {
        [8, 20]
    }
    pub fn los_sigma_base() -> f64 {
        1.5
    }
    pub fn nlos_mean_extra() -> f64 {
        40.0
    }
    pub fn nlos_sigma() -> f64 {
        3.0
    }
    pub fn cn0_los() -> [f64; 2] {
        [44.0, 3.0]
    }
    pub fn cn0_nlos() -> [f64; 2] {
        [30.0, 5.0]
    }
    pub fn guess_offset_sigma() -> f64 {
        15.0
    }
}

impl SceneSpec {
    pub fn new(region_id: &str, style: SkyStyle, lat_deg: f64, lon_deg: f64) -> Self {
        Self {
            region_id: region_id.into(),
            style,
            lat_deg,
            lon_deg,
            epochs: defaults::epochs(),
            n_sats_range: defaults::n_sats_range(),
            los_sigma_base: defaults::los_sigma_base(),
            nlos_mean_extra: defaults::nlos_mean_extra(),
            nlos_sigma: defaults::nlos_sigma(),
            cn0_los: defaults::cn0_los(),
            cn0_nlos: defaults::cn0_nlos(),
            guess_offset_sigma: defaults::guess_offset_sigma(),
            sky_mask_deg: None,
        }
    }

    /// Resolves the spec into a scene, drawing the sky mask from `rng` if needed.
    pub fn to_scene(&self, rng: &mut ChaCha8Rng, seed: u64) -> SceneConfig {
        let sky_mask = match &self.sky_mask_deg {
            Some(deg) => SkyMask {
                bins: deg.iter().map(|d| d.to_radians()).collect(),
            },
            None => sample_sky_mask(self.style, rng),
        };
        SceneConfig {
            region_id: self.region_id.clone(),
            style: self.style,
            receiver_origin: surface_point(self.lat_deg, self.lon_deg),
            sky_mask,
            n_sats_range: self.n_sats_range,
            los_sigma_base: self.los_sigma_base,
            nlos_mean_extra: self.nlos_mean_extra,
            nlos_sigma: self.nlos_sigma,
            cn0_los_mean: self.cn0_los[0],
            cn0_los_std: self.cn0_los[1],
            cn0_nlos_mean: self.cn0_nlos[0],
            cn0_nlos_std: self.cn0_nlos[1],
            guess_offset_sigma: self.guess_offset_sigma,
            seed,
        }
    }
}

/// A whole dataset description: regions plus the global seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default)]
    pub seed: u64,
    pub regions: Vec<SceneSpec>,
}

impl DatasetSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("dataset spec: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Five regions at one city: one open-sky, two urban, two dense-urban.
    pub fn default_city(seed: u64, epochs_per_region: u64) -> Self {
        let region = |id: &str, style, lat, lon| SceneSpec {
            epochs: epochs_per_region,
            ..SceneSpec::new(id, style, lat, lon)
        };
        Self {
            seed,
            regions: vec![
                region("park", SkyStyle::OpenSky, 37.770, -122.480),
                region("mission", SkyStyle::Urban, 37.760, -122.420),
                region("soma", SkyStyle::Urban, 37.780, -122.400),
                region("downtown", SkyStyle::DenseUrban, 37.790, -122.400),
                region("embarcadero", SkyStyle::DenseUrban, 37.795, -122.395),
            ],
        }
    }

    pub fn scenes(&self) -> Result<Vec<SceneConfig>> {
        let mut seen = std::collections::HashSet::new();
        self.regions
            .iter()
            .map(|spec| {
                if spec.region_id.is_empty()
                    || !spec
                        .region_id
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
                {
                    return Err(Error::Config(format!(
                        "region id {:?} must be non-empty [A-Za-z0-9_-]",
                        spec.region_id
                    )));
                }
                if !seen.insert(spec.region_id.clone()) {
                    return Err(Error::Config(format!("duplicate region {}", spec.region_id)));
                }
                let scene = spec.to_scene(&mut mask_rng(self.seed, &spec.region_id), self.seed);
                scene.validate()?;
                Ok(scene)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub region_id: String,
    pub style: SkyStyle,
    pub file: String,
    pub epochs: u64,
    pub scene: SceneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub regions: Vec<RegionEntry>,
}

// wire schema

#[derive(Serialize, Deserialize)]
struct TruthRecord {
    x: f64,
    y: f64,
    z: f64,
    clk: f64,
}

#[derive(Serialize, Deserialize)]
struct GuessRecord {
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Serialize, Deserialize)]
struct ObsRecord {
    sat_id: u32,
    #[serde(rename = "const")]
    constellation: Constellation,
    band: Band,
    sat_pos: [f64; 3],
    pr: f64,
    cn0: f64,
    avg_pow: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth_err: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct EpochRecord {
    epoch_id: u64,
    region: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth: Option<TruthRecord>,
    guess: GuessRecord,
    obs: Vec<ObsRecord>,
}

fn to_record(epoch: &Epoch, include_truth: bool) -> EpochRecord {
    let g = epoch.initial_guess;
    EpochRecord {
        epoch_id: epoch.epoch_id,
        region: epoch.region_id.clone(),
        truth: epoch.truth.filter(|_| include_truth).map(|t| TruthRecord {
            x: t.pos.x,
            y: t.pos.y,
            z: t.pos.z,
            clk: t.clock_bias,
        }),
        guess: GuessRecord { x: g.x, y: g.y, z: g.z },
        obs: epoch
            .observations
            .iter()
            .map(|o| ObsRecord {
                sat_id: o.sat.sat_id,
                constellation: o.sat.constellation,
                band: o.sat.band,
                sat_pos: [o.sat.pos.x, o.sat.pos.y, o.sat.pos.z],
                pr: o.pseudorange,
                cn0: o.cn0,
                avg_pow: o.avg_power,
                truth_err: o.truth_error.filter(|_| include_truth),
            })
            .collect(),
    }
}

fn from_record(r: EpochRecord) -> Epoch {
    Epoch {
        epoch_id: r.epoch_id,
        region_id: r.region,
        initial_guess: EcefPosition::new(r.guess.x, r.guess.y, r.guess.z),
        truth: r
            .truth
            .map(|t| SolutionState::new(EcefPosition::new(t.x, t.y, t.z), t.clk)),
        observations: r
            .obs
            .into_iter()
            .map(|o| Observation {
                sat: SatelliteState {
                    sat_id: o.sat_id,
                    constellation: o.constellation,
                    band: o.band,
                    pos: EcefPosition::new(o.sat_pos[0], o.sat_pos[1], o.sat_pos[2]),
                },
                pseudorange: o.pr,
                cn0: o.cn0,
                avg_power: o.avg_pow,
                truth_error: o.truth_err,
            })
            .collect(),
    }
}

pub fn epoch_to_json_line(epoch: &Epoch, include_truth: bool) -> Result<String> {
    serde_json::to_string(&to_record(epoch, include_truth))
        .map_err(|e| Error::json("serializing epoch", e))
}

/// Parses and validates one JSONL line.
pub fn parse_epoch_line(line: &str) -> Result<Epoch> {
    let record: EpochRecord =
        serde_json::from_str(line).map_err(|e| Error::Data(format!("bad epoch record: {e}")))?;
    let epoch = from_record(record);
    epoch.validate()?;
    Ok(epoch)
}

pub fn write_epochs(path: &Path, epochs: &[Epoch], include_truth: bool) -> Result<()> {
    let mut out = String::new();
    for epoch in epochs {
        out.push_str(&epoch_to_json_line(epoch, include_truth)?);
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_epochs(path: &Path) -> Result<Vec<Epoch>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut epochs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let epoch = parse_epoch_line(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        epochs.push(epoch);
    }
    Ok(epochs)
}

/// Generates every region of `spec` into `out_dir`. Output bytes depend only
/// on the spec.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetManifest> {
    let scenes = spec.scenes()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut regions = Vec::with_capacity(scenes.len());
    for (scene, region) in scenes.into_iter().zip(&spec.regions) {
        let epochs: Vec<Epoch> = (0..region.epochs)
            .into_par_iter()
            .map(|id| generate_epoch(&scene, id, &mut epoch_rng(spec.seed, &scene.region_id, id)))
            .collect();
        let file = format!("{}.jsonl", scene.region_id);
        write_epochs(&out_dir.join(&file), &epochs, true)?;
        log::info!("wrote {} epochs to {file}", epochs.len());
        regions.push(RegionEntry {
            region_id: scene.region_id.clone(),
            style: scene.style,
            file,
            epochs: region.epochs,
            scene,
        });
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        seed: spec.seed,
        regions,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A loaded dataset, regions in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub regions: Vec<(String, Vec<Epoch>)>,
}

impl Dataset {
    pub fn region(&self, id: &str) -> Option<&[Epoch]> {
        self.regions
            .iter()
            .find(|(r, _)| r == id)
            .map(|(_, e)| e.as_slice())
    }

    pub fn region_ids(&self) -> Vec<String> {
        self.regions.iter().map(|(r, _)| r.clone()).collect()
    }

    /// `(train, held_out)`: every region except `holdout`, then `holdout`.
    pub fn split(&self, holdout: &str) -> Result<(Vec<Epoch>, Vec<Epoch>)> {
        let test = self
            .region(holdout)
            .ok_or_else(|| Error::Config(format!("unknown holdout region {holdout}")))?
            .to_vec();
        let train = self
            .regions
            .iter()
            .filter(|(r, _)| r != holdout)
            .flat_map(|(_, e)| e.iter().cloned())
            .collect();
        Ok((train, test))
    }

    pub fn all_epochs(&self) -> Vec<Epoch> {
        self.regions.iter().flat_map(|(_, e)| e.iter().cloned()).collect()
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::json("parsing manifest", e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset format {}",
            manifest.format_version
        )));
    }
    let mut regions = Vec::with_capacity(manifest.regions.len());
    for entry in &manifest.regions {
        let epochs = read_epochs(&dir.join(&entry.file))?;
        if epochs.iter().any(|e| e.region_id != entry.region_id) {
            return Err(Error::Data(format!("{} contains foreign epochs", entry.file)));
        }
        regions.push((entry.region_id.clone(), epochs));
    }
    Ok(Dataset {
        root: dir.to_path_buf(),
        manifest,
        regions,
    })
}
