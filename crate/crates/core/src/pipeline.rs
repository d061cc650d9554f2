//! End-to-end orchestration.
//!
//! For each band the cohort is band-pass filtered, the FAST filter and mask are
//! built, each participant's windowed flows are decomposed and summarised, and
//! the summaries of every band go through one group comparison. Work fans out
//! over participants inside a band; every collection keeps input order, so the
//! output does not depend on the thread count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fast::{
    fast_filter, masked_flow_series, participant_correlation, participant_flow, percentile_mask, window_average,
    EdgeSet, EpochAverageOrder, FilterMatrix, NodeFunction,
};
use crate::hodge::{component_summary, ComponentKind, HodgeComponents, HodgeSolver, SolverOptions, SummaryMode};
use crate::io;
use crate::signal::{
    apply_kernel, bandpass_kernel, partition_windows, validate_cohort, BandSpec, Cohort, Group, ParticipantRecording,
    WindowSpec,
};
use crate::simplicial::{boundary_b1, boundary_b2, build_clique_complex, CliqueComplex};
use crate::stats::{group_compare, FdrFamily, FeatureTable, StatResult, StatsOptions, WilcoxonMethod};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Which participants contribute to the FAST filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPopulation {
    #[default]
    All,
    ControlsOnly,
}

/// Overlapping windows of `width` samples every `stride` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlidingWindows {
    pub width: usize,
    pub stride: usize,
}

fn default_top_percent() -> f64 {
    5.0
}

fn default_n_windows() -> usize {
    10
}

fn default_n_taps() -> usize {
    101
}

fn default_output() -> PathBuf {
    PathBuf::from("hodgefast-out")
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Cohort manifest.
    pub input: PathBuf,
    #[serde(default = "BandSpec::standard_bands")]
    pub bands: Vec<BandSpec>,
    #[serde(default)]
    pub node_function: NodeFunction,
    /// Percentage of channel pairs kept in the mask.
    #[serde(default = "default_top_percent")]
    pub top_percent: f64,
    /// Number of equal windows; ignored when `sliding` is set.
    #[serde(default = "default_n_windows")]
    pub n_windows: usize,
    #[serde(default)]
    pub sliding: Option<SlidingWindows>,
    /// Length of the band-pass kernel (odd).
    #[serde(default = "default_n_taps")]
    pub n_taps: usize,
    #[serde(default)]
    pub epoch_average_order: EpochAverageOrder,
    #[serde(default)]
    pub filter_population: FilterPopulation,
    #[serde(default)]
    pub summary_mode: SummaryMode,
    #[serde(default)]
    pub fdr_family: FdrFamily,
    #[serde(default)]
    pub wilcoxon_method: WilcoxonMethod,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
    /// Reuse FAST filters from `<output>/cache` when inputs and settings match.
    #[serde(default = "default_true")]
    pub cache: bool,
}

impl PipelineConfig {
    /// A config with every analysis setting at its default.
    pub fn new(input: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            input: input.into(),
            bands: BandSpec::standard_bands(),
            node_function: NodeFunction::default(),
            top_percent: default_top_percent(),
            n_windows: default_n_windows(),
            sliding: None,
            n_taps: default_n_taps(),
            epoch_average_order: EpochAverageOrder::default(),
            filter_population: FilterPopulation::default(),
            summary_mode: SummaryMode::default(),
            fdr_family: FdrFamily::default(),
            wilcoxon_method: WilcoxonMethod::default(),
            solver: SolverOptions::default(),
            output: output.into(),
            threads: None,
            cache: true,
        }
    }

    /// Parses a config file; relative paths inside it are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_text(path)?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.input.is_relative() {
            cfg.input = base.join(&cfg.input);
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without reading the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.bands.is_empty() {
            return bad("at least one band is required".into());
        }
        for (k, b) in self.bands.iter().enumerate() {
            let ok_name = !b.name.is_empty()
                && b.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok_name {
                return bad(format!("band name {:?} must be non-empty ASCII letters, digits, '_' or '-'", b.name));
            }
            if self.bands[..k].iter().any(|o| o.name == b.name) {
                return bad(format!("band name {} appears twice", b.name));
            }
        }
        if !(self.top_percent > 0.0 && self.top_percent <= 100.0) {
            return bad(format!("top_percent must be in (0, 100], got {}", self.top_percent));
        }
        if self.sliding.is_none() && self.n_windows == 0 {
            return bad("n_windows must be positive".into());
        }
        if let Some(s) = self.sliding {
            if s.width == 0 || s.stride == 0 {
                return bad("sliding width and stride must be positive".into());
            }
        }
        if self.n_taps < 3 || self.n_taps.is_multiple_of(2) {
            return bad(format!("n_taps must be odd and at least 3, got {}", self.n_taps));
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        self.solver.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn stats_options(&self) -> StatsOptions {
        StatsOptions {
            method: self.wilcoxon_method,
            fdr_family: self.fdr_family,
        }
    }

    /// SHA-256 of the analysis settings, ignoring paths, thread count and caching.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.input = PathBuf::new();
        c.output = PathBuf::new();
        c.threads = None;
        c.cache = true;
        hex_digest(serde_json::to_vec(&c).expect("config serialises").as_slice())
    }

    pub fn window_spec(&self, n_samples: usize) -> Result<WindowSpec> {
        match self.sliding {
            Some(s) => WindowSpec::sliding(n_samples, s.width, s.stride),
            None => partition_windows(n_samples, self.n_windows),
        }
    }

    pub fn band_dir(&self, band: &str) -> PathBuf {
        self.output.join("bands").join(band)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over ids, groups, sample rates and the bits of every sample.
pub fn cohort_hash(cohort: &Cohort) -> String {
    let mut h = Sha256::new();
    for p in cohort.participants() {
        h.update((p.participant_id.len() as u64).to_le_bytes());
        h.update(p.participant_id.as_bytes());
        h.update(p.group.as_str().as_bytes());
        h.update(p.sample_rate_hz().to_le_bytes());
        h.update((p.epochs.len() as u64).to_le_bytes());
        for e in &p.epochs {
            h.update((e.n_channels() as u64).to_le_bytes());
            for v in e.data().iter() {
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Start and end of each window in seconds.
pub fn window_times(windows: &WindowSpec, sample_rate_hz: f64) -> Vec<(f64, f64)> {
    windows
        .bounds()
        .iter()
        .map(|b| (b.start as f64 / sample_rate_hz, b.end as f64 / sample_rate_hz))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHashes {
    pub manifest_sha256: String,
    pub cohort_sha256: String,
}

/// Reads and validates the cohort named in the config.
pub fn load_cohort(cfg: &PipelineConfig) -> Result<(Cohort, InputHashes)> {
    let inner = || -> Result<_> {
        let manifest = std::fs::read(&cfg.input).map_err(|e| Error::io(&cfg.input, e))?;
        let cohort = validate_cohort(io::read_cohort(&cfg.input)?)?;
        let hashes = InputHashes {
            manifest_sha256: hex_digest(&manifest),
            cohort_sha256: cohort_hash(&cohort),
        };
        Ok((cohort, hashes))
    };
    inner().map_err(|e| e.in_stage("ingest"))
}

/// Band-passes every epoch of every participant.
pub fn filter_cohort(cohort: &Cohort, band: &BandSpec, n_taps: usize) -> Result<Vec<ParticipantRecording>> {
    if n_taps >= cohort.n_samples() {
        return Err(Error::InvalidParameter(format!(
            "n_taps ({n_taps}) must be smaller than the epoch length ({})",
            cohort.n_samples()
        )));
    }
    let kernel = bandpass_kernel(band, cohort.sample_rate_hz(), n_taps)?;
    cohort
        .participants()
        .par_iter()
        .map(|p| ParticipantRecording {
            participant_id: p.participant_id.clone(),
            group: p.group,
            epochs: p.epochs.iter().map(|e| apply_kernel(e, &kernel)).collect(),
        })
        .map(Ok)
        .collect()
}

/// FAST filter of band-filtered recordings over the chosen population.
pub fn fast_filter_for(filtered: &[ParticipantRecording], population: FilterPopulation) -> Result<FilterMatrix> {
    let chosen: Vec<&ParticipantRecording> = filtered
        .iter()
        .filter(|p| population == FilterPopulation::All || p.group == Group::Control)
        .collect();
    let correlations = chosen
        .par_iter()
        .map(|p| participant_correlation(p).map_err(|e| e.context(format!("participant {}", p.participant_id))))
        .collect::<Result<Vec<_>>>()?;
    fast_filter(&correlations)
}

/// The filter, mask and complex of one band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandConnectivity {
    pub band: BandSpec,
    pub filter: FilterMatrix,
    pub mask: EdgeSet,
    pub complex: CliqueComplex,
}

impl BandConnectivity {
    pub fn from_filter(band: BandSpec, filter: FilterMatrix, top_percent: f64) -> Result<Self> {
        let mask = percentile_mask(&filter, top_percent)?;
        Ok(Self::from_mask(band, filter, mask))
    }

    pub fn from_mask(band: BandSpec, filter: FilterMatrix, mask: EdgeSet) -> Self {
        let complex = build_clique_complex(&mask);
        BandConnectivity {
            band,
            filter,
            mask,
            complex,
        }
    }

    /// Writes `filter.csv`, `mask.json`, `complex.json`, `b1.csv` and `b2.csv`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let paths: Vec<PathBuf> = ["filter.csv", "mask.json", "complex.json", "b1.csv", "b2.csv"]
            .iter()
            .map(|f| dir.join(f))
            .collect();
        io::write_filter_csv(&paths[0], &self.filter)?;
        io::write_mask_json(&paths[1], &self.mask)?;
        io::write_complex_json(&paths[2], &self.complex)?;
        io::write_boundary_csv(&paths[3], &boundary_b1(&self.complex))?;
        io::write_boundary_csv(&paths[4], &boundary_b2(&self.complex))?;
        Ok(paths)
    }

    /// Reads the filter and mask written by [`BandConnectivity::write`].
    pub fn read(band: BandSpec, dir: &Path) -> Result<Self> {
        let filter = io::read_filter_csv(&dir.join("filter.csv"))?;
        let mask = io::read_mask_json(&dir.join("mask.json"))?;
        mask.check_against(&filter)
            .map_err(|e| e.context(dir.join("mask.json").display().to_string()))?;
        Ok(Self::from_mask(band, filter, mask))
    }

    pub fn summary(&self) -> BandSummary {
        BandSummary {
            band: self.band.name.clone(),
            n_nodes: self.complex.n_nodes(),
            n_edges: self.complex.n_edges(),
            n_triangles: self.complex.n_triangles(),
            betti_1: self.complex.betti_1(),
            threshold_value: self.mask.threshold_value(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub band: String,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_triangles: usize,
    pub betti_1: usize,
    pub threshold_value: f64,
}

/// Summaries and edge components of one band.
#[derive(Debug, Clone)]
pub struct BandFeatures {
    /// `summaries[p][w][c]`, participant in cohort order, `c` in [`ComponentKind::ALL`] order.
    pub summaries: Vec<Vec<[f64; 3]>>,
    /// Group-mean components per window, controls first.
    pub group_means: Vec<(Group, Vec<HodgeComponents>)>,
}

struct ParticipantFeatures {
    summaries: Vec<[f64; 3]>,
    components: Vec<HodgeComponents>,
}

fn summarise(c: &HodgeComponents, mode: SummaryMode) -> [f64; 3] {
    ComponentKind::ALL.map(|k| component_summary(c, k, mode))
}

fn zero_components(n_nodes: usize, n_edges: usize, n_triangles: usize) -> HodgeComponents {
    HodgeComponents {
        gradient: vec![0.0; n_edges],
        curl: vec![0.0; n_edges],
        harmonic: vec![0.0; n_edges],
        node_potential: vec![0.0; n_nodes],
        triangle_potential: vec![0.0; n_triangles],
    }
}

fn add_scaled(acc: &mut HodgeComponents, x: &HodgeComponents, scale: f64) {
    let pairs = [
        (&mut acc.gradient, &x.gradient),
        (&mut acc.curl, &x.curl),
        (&mut acc.harmonic, &x.harmonic),
        (&mut acc.node_potential, &x.node_potential),
        (&mut acc.triangle_potential, &x.triangle_potential),
    ];
    for (a, b) in pairs {
        for (u, v) in a.iter_mut().zip(b) {
            *u += scale * v;
        }
    }
}

fn participant_features(
    cfg: &PipelineConfig,
    rec: &ParticipantRecording,
    conn: &BandConnectivity,
    solver: &HodgeSolver,
    windows: &WindowSpec,
) -> Result<ParticipantFeatures> {
    let decompose_rows = |flows: &crate::fast::EdgeFlowSeries| -> Result<Vec<HodgeComponents>> {
        (0..flows.n_steps())
            .map(|w| {
                solver.decompose(&flows.row(w).to_vec()).map_err(|e| Error::Window {
                    window: w,
                    source: Box::new(e),
                })
            })
            .collect()
    };
    match cfg.epoch_average_order {
        EpochAverageOrder::AfterSummary => {
            let c = &conn.complex;
            let n_epochs = rec.epochs.len() as f64;
            let mut summaries = vec![[0.0; 3]; windows.n_windows()];
            let mut components =
                vec![zero_components(c.n_nodes(), c.n_edges(), c.n_triangles()); windows.n_windows()];
            for (k, epoch) in rec.epochs.iter().enumerate() {
                let flows = masked_flow_series(epoch, &conn.filter, &conn.mask, cfg.node_function)
                    .and_then(|f| window_average(&f, windows))
                    .map_err(|e| e.context(format!("epoch {k}")))?;
                for (w, comp) in decompose_rows(&flows)
                    .map_err(|e| e.context(format!("epoch {k}")))?
                    .iter()
                    .enumerate()
                {
                    let s = summarise(comp, cfg.summary_mode);
                    for (a, v) in summaries[w].iter_mut().zip(s) {
                        *a += v / n_epochs;
                    }
                    add_scaled(&mut components[w], comp, 1.0 / n_epochs);
                }
            }
            Ok(ParticipantFeatures { summaries, components })
        }
        order => {
            let flows = participant_flow(rec, &conn.filter, &conn.mask, cfg.node_function, windows, order)?;
            let components = decompose_rows(&flows)?;
            let summaries = components.iter().map(|c| summarise(c, cfg.summary_mode)).collect();
            Ok(ParticipantFeatures { summaries, components })
        }
    }
}

/// Decomposes and summarises every participant's windowed flows for one band.
pub fn band_features(
    cfg: &PipelineConfig,
    filtered: &[ParticipantRecording],
    conn: &BandConnectivity,
    windows: &WindowSpec,
) -> Result<BandFeatures> {
    let solver = HodgeSolver::new(&conn.complex, cfg.solver)?;
    let per: Vec<ParticipantFeatures> = filtered
        .par_iter()
        .map(|p| {
            participant_features(cfg, p, conn, &solver, windows)
                .map_err(|e| e.context(format!("participant {}", p.participant_id)))
        })
        .collect::<Result<_>>()?;
    let c = &conn.complex;
    let mut group_means = Vec::new();
    for g in [Group::Control, Group::Patient] {
        let members: Vec<&ParticipantFeatures> =
            per.iter().zip(filtered).filter(|(_, r)| r.group == g).map(|(f, _)| f).collect();
        if members.is_empty() {
            continue;
        }
        let scale = 1.0 / members.len() as f64;
        let mut means = vec![zero_components(c.n_nodes(), c.n_edges(), c.n_triangles()); windows.n_windows()];
        for m in &members {
            for (acc, comp) in means.iter_mut().zip(&m.components) {
                add_scaled(acc, comp, scale);
            }
        }
        group_means.push((g, means));
    }
    Ok(BandFeatures {
        summaries: per.into_iter().map(|p| p.summaries).collect(),
        group_means,
    })
}

/// Collects per-band summaries into one table, bands in config order.
pub fn assemble_features(
    cohort: &Cohort,
    bands: &[BandSpec],
    windows: &[(f64, f64)],
    per_band: &[BandFeatures],
) -> FeatureTable {
    let participants = cohort
        .participants()
        .iter()
        .map(|p| (p.participant_id.clone(), p.group))
        .collect();
    let mut table = FeatureTable::new(bands.iter().map(|b| b.name.clone()).collect(), windows.to_vec(), participants);
    for (b, bf) in per_band.iter().enumerate() {
        for (p, rows) in bf.summaries.iter().enumerate() {
            for (w, cells) in rows.iter().enumerate() {
                for c in ComponentKind::ALL {
                    table.set(b, w, c, p, cells[c as usize]);
                }
            }
        }
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEvent {
    pub band: String,
    pub key: String,
    pub hit: bool,
}

/// Everything needed to reproduce and audit one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub config_hash: String,
    pub input_hashes: InputHashes,
    pub bands: Vec<BandSummary>,
    pub timings: Vec<StageTiming>,
    pub cache: Vec<CacheEvent>,
    pub artifacts: Vec<PathBuf>,
    pub results: Vec<StatResult>,
}

struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn run<T>(&mut self, stage: &'static str, label: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(stage));
        self.timings.push(StageTiming {
            stage: if label.is_empty() { stage.to_string() } else { format!("{stage}:{label}") },
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

fn cache_key(cfg: &PipelineConfig, band: &BandSpec, hashes: &InputHashes) -> String {
    let key = serde_json::json!({
        "artifact": "fast_filter",
        "tool_version": TOOL_VERSION,
        "band": band,
        "n_taps": cfg.n_taps,
        "filter_population": cfg.filter_population,
        "cohort_sha256": hashes.cohort_sha256,
    });
    hex_digest(key.to_string().as_bytes())
}

#[derive(Debug, Serialize)]
struct RunStatus<'a> {
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn write_status(dir: &Path, status: &str, error: Option<String>) -> Result<()> {
    io::write_json(&dir.join("run_status.json"), &RunStatus { status, error })
}

/// Runs every stage and writes all artifacts under `cfg.output`.
///
/// `run_status.json` reads `running` while artifacts are being written and
/// `failed` if a stage aborts, so partial output is never mistaken for a result.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build thread pool: {e}")))?;
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    write_status(&cfg.output, "running", None)?;
    let out = pool.install(|| run_inner(cfg));
    match &out {
        Ok(_) => write_status(&cfg.output, "complete", None)?,
        Err(e) => write_status(&cfg.output, "failed", Some(e.to_string()))?,
    }
    out
}

fn run_inner(cfg: &PipelineConfig) -> Result<RunReport> {
    let mut timer = Timer { timings: Vec::new() };
    let mut artifacts = Vec::new();
    let mut cache = Vec::new();
    let (cohort, hashes) = timer.run("ingest", "", || load_cohort(cfg))?;
    let windows = timer.run("windows", "", || cfg.window_spec(cohort.n_samples()))?;
    let times = window_times(&windows, cohort.sample_rate_hz());

    let mut per_band = Vec::new();
    let mut summaries = Vec::new();
    let mut traces = Vec::new();
    for band in &cfg.bands {
        let name = band.name.as_str();
        let in_band = |e: Error| e.context(format!("band {name}"));
        let filtered = timer.run("bandpass", name, || {
            band.validate(cohort.sample_rate_hz())?;
            filter_cohort(&cohort, band, cfg.n_taps).map_err(in_band)
        })?;
        let filter = timer.run("fast_filter", name, || {
            let key = cache_key(cfg, band, &hashes);
            let path = cfg.output.join("cache").join(format!("fast-{key}.csv"));
            let hit = cfg.cache && path.is_file();
            cache.push(CacheEvent {
                band: band.name.clone(),
                key,
                hit,
            });
            if hit {
                return io::read_filter_csv(&path);
            }
            let f = fast_filter_for(&filtered, cfg.filter_population).map_err(in_band)?;
            if cfg.cache {
                io::write_filter_csv(&path, &f)?;
            }
            Ok(f)
        })?;
        let conn = timer.run("mask", name, || {
            BandConnectivity::from_filter(band.clone(), filter, cfg.top_percent).map_err(in_band)
        })?;
        artifacts.extend(timer.run("artifacts", name, || conn.write(&cfg.band_dir(name)))?);
        let features = timer.run("decomposition", name, || {
            band_features(cfg, &filtered, &conn, &windows).map_err(in_band)
        })?;
        summaries.push(conn.summary());
        traces.push((conn.complex.edges().to_vec(), features.group_means.clone()));
        per_band.push(features);
    }

    let table = assemble_features(&cohort, &cfg.bands, &times, &per_band);
    let results = timer.run("statistics", "", || group_compare(&table, cfg.stats_options()))?;

    timer.run("report", "", || {
        let features = cfg.output.join("features.csv");
        io::write_features_csv(&features, &table)?;
        let csv = cfg.output.join("results.csv");
        io::write_results_csv(&csv, &results)?;
        let json = cfg.output.join("results.json");
        io::write_results_json(&json, &results)?;
        let trace_path = cfg.output.join("component_traces.csv");
        let rows: Vec<io::BandTrace<'_>> = cfg
            .bands
            .iter()
            .zip(&traces)
            .map(|(b, (edges, groups))| io::BandTrace {
                band: &b.name,
                edges,
                groups,
            })
            .collect();
        io::write_component_traces(&trace_path, &rows)?;
        artifacts.extend([features, csv, json, trace_path, cfg.output.join("report.json")]);
        Ok(())
    })?;

    let report = RunReport {
        tool_version: TOOL_VERSION.to_string(),
        config: cfg.clone(),
        config_hash: cfg.config_hash(),
        input_hashes: hashes,
        bands: summaries,
        timings: timer.timings,
        cache,
        artifacts,
        results,
    };
    io::write_json(&cfg.output.join("report.json"), &report).map_err(|e| e.in_stage("report"))?;
    Ok(report)
}

/// In-memory output of [`analyze`].
#[derive(Debug, Clone)]
pub struct Analysis {
    pub connectivity: Vec<BandConnectivity>,
    pub features: FeatureTable,
    pub results: Vec<StatResult>,
}

/// Every analysis stage on an already loaded cohort, without touching the disk.
///
/// Produces the same numbers as [`run_pipeline`] on the same data.
pub fn analyze(cfg: &PipelineConfig, cohort: &Cohort) -> Result<Analysis> {
    cfg.validate()?;
    let windows = cfg.window_spec(cohort.n_samples()).map_err(|e| e.in_stage("windows"))?;
    let mut connectivity = Vec::new();
    let mut per_band = Vec::new();
    for band in &cfg.bands {
        let in_band = |e: Error| e.context(format!("band {}", band.name));
        band.validate(cohort.sample_rate_hz()).map_err(|e| in_band(e).in_stage("bandpass"))?;
        let filtered = filter_cohort(cohort, band, cfg.n_taps).map_err(|e| in_band(e).in_stage("bandpass"))?;
        let filter = fast_filter_for(&filtered, cfg.filter_population).map_err(|e| in_band(e).in_stage("fast_filter"))?;
        let conn = BandConnectivity::from_filter(band.clone(), filter, cfg.top_percent)
            .map_err(|e| in_band(e).in_stage("mask"))?;
        per_band.push(band_features(cfg, &filtered, &conn, &windows).map_err(|e| in_band(e).in_stage("decomposition"))?);
        connectivity.push(conn);
    }
    let features = assemble_features(cohort, &cfg.bands, &window_times(&windows, cohort.sample_rate_hz()), &per_band);
    let results = group_compare(&features, cfg.stats_options()).map_err(|e| e.in_stage("statistics"))?;
    Ok(Analysis {
        connectivity,
        features,
        results,
    })
}

/// Standalone connectivity stage: filters, masks and complexes for every band.
pub fn connectivity_stage(cfg: &PipelineConfig, cohort: &Cohort) -> Result<Vec<BandConnectivity>> {
    cfg.bands
        .iter()
        .map(|band| {
            let run = || -> Result<BandConnectivity> {
                band.validate(cohort.sample_rate_hz())?;
                let filtered = filter_cohort(cohort, band, cfg.n_taps)?;
                let filter = fast_filter_for(&filtered, cfg.filter_population)?;
                BandConnectivity::from_filter(band.clone(), filter, cfg.top_percent)
            };
            run().map_err(|e| e.context(format!("band {}", band.name)).in_stage("fast_filter"))
        })
        .collect()
}

/// Standalone decomposition stage from previously computed connectivity.
pub fn decomposition_stage(
    cfg: &PipelineConfig,
    cohort: &Cohort,
    connectivity: &[BandConnectivity],
) -> Result<FeatureTable> {
    let windows = cfg.window_spec(cohort.n_samples()).map_err(|e| e.in_stage("windows"))?;
    let per_band = connectivity
        .iter()
        .map(|conn| {
            let run = || -> Result<BandFeatures> {
                if conn.filter.n_nodes() != cohort.n_channels() {
                    return Err(Error::Shape(format!(
                        "filter has {} nodes but the cohort has {} channels",
                        conn.filter.n_nodes(),
                        cohort.n_channels()
                    )));
                }
                let filtered = filter_cohort(cohort, &conn.band, cfg.n_taps)?;
                band_features(cfg, &filtered, conn, &windows)
            };
            run().map_err(|e| e.context(format!("band {}", conn.band.name)).in_stage("decomposition"))
        })
        .collect::<Result<Vec<_>>>()?;
    let bands: Vec<BandSpec> = connectivity.iter().map(|c| c.band.clone()).collect();
    Ok(assemble_features(
        cohort,
        &bands,
        &window_times(&windows, cohort.sample_rate_hz()),
        &per_band,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_cohort, Coupling, SynthConfig};

    fn cohort_dir() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let synth = SynthConfig {
            n_channels: 6,
            n_samples: 128,
            sample_rate_hz: 128.0,
            n_participants_per_group: 3,
            n_epochs_per_participant: 2,
            base_coupling: vec![
                Coupling { i: 0, j: 1, strength: 0.9 },
                Coupling { i: 1, j: 2, strength: 0.9 },
                Coupling { i: 0, j: 2, strength: 0.9 },
            ],
            planted_effects: vec![],
            noise_sd: 0.5,
            seed: 3,
            background_amplitude: 1.0,
            participant_gain_sd: 0.0,
            latent_band_hz: (1.0, 20.0),
        };
        let manifest = io::write_cohort(&dir.path().join("cohort"), &generate_cohort(&synth).unwrap()).unwrap();
        (dir, manifest)
    }

    fn config(dir: &Path, manifest: &Path) -> PipelineConfig {
        let mut cfg = PipelineConfig::new(manifest, dir.join("out"));
        cfg.top_percent = 20.0;
        cfg.n_windows = 4;
        cfg.n_taps = 31;
        cfg
    }

    #[test]
    fn full_run_writes_everything() {
        let (dir, manifest) = cohort_dir();
        let cfg = config(dir.path(), &manifest);
        let report = run_pipeline(&cfg).unwrap();
        assert_eq!(report.results.len(), 4 * 4 * 3);
        assert!(report.artifacts.iter().all(|p| p.is_file()), "{:?}", report.artifacts);
        assert_eq!(report.bands[0].n_edges, 3);
        let status = io::read_text(&cfg.output.join("run_status.json")).unwrap();
        assert!(status.contains("complete"));
    }

    #[test]
    fn in_memory_analysis_matches_run() {
        let (dir, manifest) = cohort_dir();
        let cfg = config(dir.path(), &manifest);
        let report = run_pipeline(&cfg).unwrap();
        let (cohort, _) = load_cohort(&cfg).unwrap();
        let a = analyze(&cfg, &cohort).unwrap();
        assert_eq!(a.results, report.results);
        assert_eq!(a.features, io::read_features_csv(&cfg.output.join("features.csv")).unwrap());
    }

    #[test]
    fn cache_hit_gives_identical_results() {
        let (dir, manifest) = cohort_dir();
        let cfg = config(dir.path(), &manifest);
        let first = run_pipeline(&cfg).unwrap();
        let second = run_pipeline(&cfg).unwrap();
        assert!(first.cache.iter().all(|c| !c.hit));
        assert!(second.cache.iter().all(|c| c.hit));
        assert_eq!(first.results, second.results);
    }

    #[test]
    fn separate_stages_match_monolithic_run() {
        let (dir, manifest) = cohort_dir();
        let cfg = config(dir.path(), &manifest);
        let report = run_pipeline(&cfg).unwrap();
        let (cohort, _) = load_cohort(&cfg).unwrap();
        let conns: Vec<BandConnectivity> = cfg
            .bands
            .iter()
            .map(|b| BandConnectivity::read(b.clone(), &cfg.band_dir(&b.name)).unwrap())
            .collect();
        assert_eq!(conns, connectivity_stage(&cfg, &cohort).unwrap());
        let table = decomposition_stage(&cfg, &cohort, &conns).unwrap();
        assert_eq!(table, io::read_features_csv(&cfg.output.join("features.csv")).unwrap());
        assert_eq!(group_compare(&table, cfg.stats_options()).unwrap(), report.results);
    }

    #[test]
    fn stage_errors_name_stage_and_band() {
        let (dir, manifest) = cohort_dir();
        let mut cfg = config(dir.path(), &manifest);
        cfg.bands = vec![BandSpec::new("Gamma", 30.0, 80.0)];
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.stage(), Some("bandpass"));
        assert_eq!(err.kind(), "invalid_band");
        let status = io::read_text(&cfg.output.join("run_status.json")).unwrap();
        assert!(status.contains("failed"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = PipelineConfig::new("m.json", "out");
        assert!(cfg.validate().is_ok());
        cfg.n_taps = 100;
        assert_eq!(cfg.validate().unwrap_err().kind(), "config");
        let mut cfg = PipelineConfig::new("m.json", "out");
        cfg.bands.push(BandSpec::new("Theta", 4.0, 8.0));
        assert!(cfg.validate().is_err());
        let unknown = r#"{"schema_version": 1, "input": "m.json", "colour": 3}"#;
        assert!(serde_json::from_str::<PipelineConfig>(unknown).is_err());
    }

    #[test]
    fn config_hash_ignores_threads_and_paths() {
        let a = PipelineConfig::new("a.json", "x");
        let mut b = PipelineConfig::new("b.json", "y");
        b.threads = Some(3);
        assert_eq!(a.config_hash(), b.config_hash());
        b.top_percent = 1.0;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
