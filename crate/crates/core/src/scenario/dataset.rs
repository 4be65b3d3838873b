use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::case_io::{reduce_case, RawCase};
use crate::grid::{mismatch_inf_norm, Branch, Bus, BusType, Complex, Grid, NodeState};
use crate::pf::{solve_ac, PfOptions};
use crate::rng::SplitMix64;

use super::perturb::{candidates, perturb_load, perturb_topology, Topology};
use super::{ElementRef, PerturbConfig, ScenarioError, TopologyDrop, STREAM_TOPOLOGY};

pub const SCHEMA_VERSION: u32 = 1;

/// One solved snapshot together with the topology it was solved on.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub case_id: String,
    pub topology_hash: u64,
    pub dropped_elements: Vec<ElementRef>,
    pub bus_types: Vec<BusType>,
    pub state: Vec<NodeState>,
    pub edges: Vec<(usize, usize)>,
    pub r: Vec<f64>,
    pub x_react: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl Sample {
    pub fn from_solution(
        case_id: &str,
        grid: &Grid,
        dropped: Vec<ElementRef>,
        state: Vec<NodeState>,
        converged: bool,
        iterations: usize,
    ) -> Self {
        Self {
            case_id: case_id.to_string(),
            topology_hash: topology_hash(grid),
            dropped_elements: dropped,
            bus_types: grid.bus_types(),
            state,
            edges: grid.branches.iter().map(|b| (b.from, b.to)).collect(),
            r: grid.branches.iter().map(|b| b.z.re).collect(),
            x_react: grid.branches.iter().map(|b| b.z.im).collect(),
            converged,
            iterations,
        }
    }

    pub fn n_buses(&self) -> usize {
        self.state.len()
    }

    /// Grid whose setpoints are taken from this sample's state, so that the
    /// sample's known quantities are the grid's specified quantities.
    pub fn grid(&self) -> Grid {
        Grid {
            name: self.case_id.clone(),
            base_mva: 1.0,
            bus_ids: (1..=self.n_buses() as i64).collect(),
            buses: self
                .bus_types
                .iter()
                .zip(&self.state)
                .map(|(&kind, s)| Bus {
                    kind,
                    p_gen: s.p,
                    q_gen: s.q,
                    p_load: 0.0,
                    q_load: 0.0,
                    v_set: s.v,
                    angle_set: s.delta,
                })
                .collect(),
            branches: self
                .edges
                .iter()
                .zip(self.r.iter().zip(&self.x_react))
                .map(|(&(from, to), (&r, &x))| Branch {
                    from,
                    to,
                    z: Complex::new(r, x),
                })
                .collect(),
        }
    }

    pub fn residual_inf_norm(&self) -> f64 {
        mismatch_inf_norm(&self.grid(), &self.state).unwrap_or(f64::INFINITY)
    }

    fn validate(&self) -> Result<(), String> {
        let n = self.n_buses();
        if self.bus_types.len() != n {
            return Err(format!("{} bus types for {} buses", self.bus_types.len(), n));
        }
        let e = self.edges.len();
        if self.r.len() != e || self.x_react.len() != e {
            return Err("edge, r and x_react lengths differ".into());
        }
        if let Some(&(a, b)) = self.edges.iter().find(|&&(a, b)| a >= n || b >= n || a == b) {
            return Err(format!("invalid edge ({a}, {b})"));
        }
        Ok(())
    }
}

/// On-disk row; field names are the shard format.
#[derive(Serialize, Deserialize)]
struct SampleRecord {
    case_id: String,
    topology_hash: u64,
    dropped_elements: Vec<ElementRef>,
    bus_type: Vec<u8>,
    x: Vec<[f64; 4]>,
    edges: Vec<[usize; 2]>,
    r: Vec<f64>,
    x_react: Vec<f64>,
    converged: bool,
    iterations: usize,
}

impl From<&Sample> for SampleRecord {
    fn from(s: &Sample) -> Self {
        Self {
            case_id: s.case_id.clone(),
            topology_hash: s.topology_hash,
            dropped_elements: s.dropped_elements.clone(),
            bus_type: s.bus_types.iter().map(|t| t.code()).collect(),
            x: s.state.iter().map(|n| n.to_array()).collect(),
            edges: s.edges.iter().map(|&(a, b)| [a, b]).collect(),
            r: s.r.clone(),
            x_react: s.x_react.clone(),
            converged: s.converged,
            iterations: s.iterations,
        }
    }
}

impl TryFrom<SampleRecord> for Sample {
    type Error = String;

    fn try_from(r: SampleRecord) -> Result<Self, String> {
        let bus_types = r
            .bus_type
            .iter()
            .map(|&c| BusType::from_code(c).ok_or_else(|| format!("bad bus type {c}")))
            .collect::<Result<Vec<_>, _>>()?;
        let s = Sample {
            case_id: r.case_id,
            topology_hash: r.topology_hash,
            dropped_elements: r.dropped_elements,
            bus_types,
            state: r.x.into_iter().map(NodeState::from_array).collect(),
            edges: r.edges.into_iter().map(|[a, b]| (a, b)).collect(),
            r: r.r,
            x_react: r.x_react,
            converged: r.converged,
            iterations: r.iterations,
        };
        s.validate()?;
        Ok(s)
    }
}

/// FNV-1a over bus types and branch endpoints/impedances.
pub fn topology_hash(grid: &Grid) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(&(grid.n_buses() as u64).to_le_bytes());
    for b in &grid.buses {
        eat(&[b.kind.code()]);
    }
    for br in &grid.branches {
        eat(&(br.from as u64).to_le_bytes());
        eat(&(br.to as u64).to_le_bytes());
        eat(&br.z.re.to_bits().to_le_bytes());
        eat(&br.z.im.to_bits().to_le_bytes());
    }
    h
}

fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    50
}
fn default_shard_size() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub perturb: PerturbConfig,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_shard_size")]
    pub shard_size: usize,
}

impl GenerateConfig {
    pub fn new(perturb: PerturbConfig) -> Self {
        Self {
            perturb,
            tol: default_tol(),
            max_iter: default_max_iter(),
            shard_size: default_shard_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardHeader {
    pub schema: u32,
    pub tol: f64,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub attempted: usize,
    pub produced: usize,
    pub skipped_nonconverged: usize,
    pub skipped_rejected: usize,
    /// Scenarios that needed the damped Newton retry (converged or not).
    pub damped_retries: usize,
}

impl CaseReport {
    pub fn skipped(&self) -> usize {
        self.skipped_nonconverged + self.skipped_rejected
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerationReport {
    pub cases: Vec<CaseReport>,
    pub produced: usize,
    pub skipped: usize,
    pub shards: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: ShardHeader,
    pub samples: Vec<Sample>,
}

fn pick_contingency(cand: &[ElementRef], k: usize, seed: u64, draw: u64) -> Vec<ElementRef> {
    let mut rng = SplitMix64::from_stream(seed, &[STREAM_TOPOLOGY, draw]);
    let mut pool = cand.to_vec();
    let k = k.min(pool.len());
    for i in 0..k {
        let j = i + rng.below((pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut out = pool[..k].to_vec();
    out.sort();
    out
}

/// Generate `n_samples` scenarios per case, solve them and write the
/// converged ones as JSONL shards under `out`. Rejected topologies and
/// non-convergent solves are counted, not written.
pub fn generate_dataset(
    cases: &[RawCase],
    cfg: &GenerateConfig,
    n_samples: usize,
    out: &Path,
) -> Result<GenerationReport, ScenarioError> {
    if n_samples == 0 {
        return Err(ScenarioError::InvalidConfig("n_samples must be >= 1".into()));
    }
    if cfg.shard_size == 0 {
        return Err(ScenarioError::InvalidConfig("shard_size must be >= 1".into()));
    }
    cfg.perturb.validate()?;
    let opts = PfOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        ..Default::default()
    };

    let mut samples = Vec::new();
    let mut report = GenerationReport::default();
    for (ci, raw) in cases.iter().enumerate() {
        let base = reduce_case(raw)?;
        let mut cr = CaseReport {
            case_id: raw.name.clone(),
            ..Default::default()
        };
        for j in 0..n_samples {
            let draw = (ci * n_samples + j) as u64;
            cr.attempted += 1;
            let loaded = perturb_load(&base, &cfg.perturb, draw);
            let (grid, dropped) = match &cfg.perturb.topology_drop {
                TopologyDrop::None => (loaded, Vec::new()),
                TopologyDrop::NMinusK { k, element_kinds } => {
                    let cand = candidates(&loaded, element_kinds);
                    let drop = pick_contingency(&cand, *k, cfg.perturb.seed, draw);
                    match perturb_topology(&loaded, &drop)? {
                        Topology::Valid(g) => (g, drop),
                        Topology::Rejected(_) => {
                            cr.skipped_rejected += 1;
                            continue;
                        }
                    }
                }
            };
            let sol = match solve_ac(&grid, &opts) {
                Ok(s) => s,
                Err(_) => {
                    cr.skipped_nonconverged += 1;
                    continue;
                }
            };
            if sol.damped {
                cr.damped_retries += 1;
            }
            if !sol.converged {
                cr.skipped_nonconverged += 1;
                continue;
            }
            let sample = Sample::from_solution(&raw.name, &grid, dropped, sol.state, true, sol.iterations);
            // Re-check from the self-contained record before persisting.
            if !(sample.residual_inf_norm() < cfg.tol) {
                cr.skipped_nonconverged += 1;
                continue;
            }
            cr.produced += 1;
            samples.push(sample);
        }
        report.produced += cr.produced;
        report.skipped += cr.skipped();
        report.cases.push(cr);
    }
    if samples.is_empty() {
        return Err(ScenarioError::EmptyOutput);
    }
    let header = ShardHeader {
        schema: SCHEMA_VERSION,
        tol: cfg.tol,
        config: serde_json::to_value(cfg)?,
    };
    report.shards = write_dataset(out, &header, &samples, cfg.shard_size)?;
    Ok(report)
}

/// Write samples into `shard-NNNNN.jsonl` files; the header precedes the first
/// row of shard 0. Returns the file names.
pub fn write_dataset(
    dir: &Path,
    header: &ShardHeader,
    samples: &[Sample],
    shard_size: usize,
) -> Result<Vec<String>, ScenarioError> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    let chunks: Vec<&[Sample]> = if samples.is_empty() {
        vec![&[]]
    } else {
        samples.chunks(shard_size.max(1)).collect()
    };
    for (k, chunk) in chunks.into_iter().enumerate() {
        let name = format!("shard-{k:05}.jsonl");
        let mut w = BufWriter::new(fs::File::create(dir.join(&name))?);
        if k == 0 {
            serde_json::to_writer(&mut w, header)?;
            w.write_all(b"\n")?;
        }
        for s in chunk {
            serde_json::to_writer(&mut w, &SampleRecord::from(s))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        names.push(name);
    }
    Ok(names)
}

/// Read every `shard-*.jsonl` in `dir`, in name order.
pub fn read_dataset(dir: &Path) -> Result<Dataset, ScenarioError> {
    let mut files: Vec<_> = fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("shard-") && n.ends_with(".jsonl"))
        })
        .collect();
    files.sort();
    let mut header = None;
    let mut samples = Vec::new();
    for (k, path) in files.iter().enumerate() {
        let file = path.display().to_string();
        let reader = std::io::BufReader::new(fs::File::open(path)?);
        for (ln, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| ScenarioError::MalformedShard {
                file: file.clone(),
                line: ln + 1,
                reason,
            };
            if k == 0 && ln == 0 {
                let h: ShardHeader = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
                if h.schema != SCHEMA_VERSION {
                    return Err(bad(format!("unsupported schema {}", h.schema)));
                }
                header = Some(h);
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            samples.push(Sample::try_from(rec).map_err(bad)?);
        }
    }
    let header = header.ok_or_else(|| ScenarioError::MalformedShard {
        file: dir.display().to_string(),
        line: 0,
        reason: "no shard-00000.jsonl header".into(),
    })?;
    Ok(Dataset { header, samples })
}
