use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use velostat::cluster::{self, ClusterError, ClusterModel, KmeansConfig, MissingSlotMode};
use velostat::config::{AnalysisConfig, ConfigError};
use velostat::flows::{self, FlowError};
use velostat::grid::{self, DayProfile, GridError};
use velostat::ingest::{
    self, CsvArchiveSink, HttpFeed, IngestError, PollConfig, PollError, Poller, SnapshotArchive, API_KEY_ENV,
};
use velostat::map::{self, MapError};
use velostat::patterns::{self, DayTypeScheme, PatternError};
use velostat::synth::{self, SynthError, SyntheticScenario};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

/// A missing input is a usage problem (exit 1); any other I/O failure exits 2.
fn io_error(message: String, kind: std::io::ErrorKind) -> CliError {
    if kind == std::io::ErrorKind::NotFound {
        CliError::Validation(message)
    } else {
        CliError::Io(message)
    }
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| io_error(format!("{}: {e}", path.display()), e.kind())
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Parse { .. } => CliError::Validation(e.to_string()),
            IngestError::Io { ref source, .. } => io_error(e.to_string(), source.kind()),
            IngestError::Csv { .. } => CliError::Io(e.to_string()),
        }
    }
}

macro_rules! validation_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                invalid(e)
            }
        }
    )*};
}

validation_errors!(GridError, FlowError, ClusterError, PatternError, MapError, SynthError);

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => CliError::Io(e.to_string()),
            _ => invalid(e),
        }
    }
}

/// Bike-share station availability analytics.
#[derive(Debug, Parser)]
#[command(name = "velostat", version)]
pub struct Cli {
    /// Analysis settings (TOML): zone, step_minutes, max_gap, min_completeness, holidays.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Poll the station feed and append snapshots to an archive (key from VELOSTAT_API_KEY).
    Fetch(FetchArgs),
    /// Merge feed documents (JSON) and archives (CSV) into one validated archive.
    Import(ImportArgs),
    /// Resample archive snapshots into daily slot profiles.
    Resample(ResampleArgs),
    /// Infer daily check-ins/check-outs and traffic from profiles.
    Flows(FlowsArgs),
    /// Cluster one station's day profiles with K-means.
    Cluster(ClusterArgs),
    /// Best inertia for a range of k.
    Sweep(SweepArgs),
    /// Cluster × day-of-week membership table of a model.
    Crosstab(CrosstabArgs),
    /// Check new days against a model's day-type clusters.
    Check(CheckArgs),
    /// Write per-date GeoJSON traffic maps.
    ExportMap(ExportMapArgs),
    /// Generate a synthetic archive from a scenario file.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct FetchArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    contract: Option<String>,
    #[arg(long, default_value_t = 10)]
    interval_minutes: u64,
    #[arg(long, default_value_t = 10)]
    max_failures: u32,
    /// Poll a single time and exit.
    #[arg(long)]
    once: bool,
}

#[derive(Debug, Args)]
struct ImportArgs {
    #[arg(long)]
    out: PathBuf,
    /// Merge into the existing output archive instead of replacing it.
    #[arg(long)]
    append: bool,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct DateFilter {
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
}

impl DateFilter {
    fn keep(&self, date: NaiveDate) -> bool {
        self.from.is_none_or(|f| date >= f) && self.to.is_none_or(|t| date <= t)
    }
}

#[derive(Debug, Args)]
struct ResampleArgs {
    #[arg(long)]
    archive: PathBuf,
    /// Stations to resample (default: all).
    #[arg(long)]
    station: Vec<u32>,
    #[command(flatten)]
    dates: DateFilter,
    #[arg(long)]
    min_completeness: Option<f64>,
    #[arg(long)]
    max_gap: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FlowsArgs {
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the station ranking for this date to standard error.
    #[arg(long)]
    rank: Option<NaiveDate>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// k = 4, as used for a busy station.
    Busy,
    /// k = 2, as used for a quiet station.
    Quiet,
}

#[derive(Debug, Args)]
struct ProfileSelection {
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long)]
    station: Option<u32>,
    #[command(flatten)]
    dates: DateFilter,
}

#[derive(Debug, Args)]
struct KmeansArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 300)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long, default_value = "profile-mean")]
    missing: MissingSlotMode,
    /// Divide values by this station capacity before clustering.
    #[arg(long)]
    normalize_stands: Option<f64>,
}

impl KmeansArgs {
    fn config(&self, k: usize) -> KmeansConfig {
        KmeansConfig {
            k,
            seed: self.seed,
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            missing: self.missing,
            normalize_by: self.normalize_stands,
        }
    }
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[command(flatten)]
    select: ProfileSelection,
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    k: Option<usize>,
    #[arg(long)]
    preset: Option<Preset>,
    #[command(flatten)]
    kmeans: KmeansArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write centroid curves (slot, time, one column per cluster) as CSV.
    #[arg(long)]
    centroids_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    select: ProfileSelection,
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 8)]
    k_max: usize,
    #[command(flatten)]
    kmeans: KmeansArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scheme {
    /// Weekday, Saturday and Sunday-like are separate day types.
    Split,
    /// Saturday and Sunday-like merge into weekend.
    Weekend,
}

impl From<Scheme> for DayTypeScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Split => DayTypeScheme::SplitWeekend,
            Scheme::Weekend => DayTypeScheme::WeekdayWeekend,
        }
    }
}

#[derive(Debug, Args)]
struct CrosstabArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    select: ProfileSelection,
    #[arg(long, value_enum, default_value_t = Scheme::Split)]
    scheme: Scheme,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportMapArgs {
    #[arg(long)]
    traffic: PathBuf,
    /// Archive supplying station names and coordinates.
    #[arg(long)]
    archive: PathBuf,
    /// Only this date (default: every date in the traffic table).
    #[arg(long)]
    date: Option<NaiveDate>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write a static HTML page per date.
    #[arg(long)]
    html: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) if !path.exists() => return Err(invalid(format!("{}: no such configuration file", path.display()))),
        Some(path) => AnalysisConfig::from_path(path)?,
        None => AnalysisConfig::default(),
    };
    match cli.command {
        Command::Fetch(a) => fetch(a, &config),
        Command::Import(a) => import(a),
        Command::Resample(a) => resample(a, &config),
        Command::Flows(a) => flows_cmd(a),
        Command::Cluster(a) => cluster_cmd(a, &config),
        Command::Sweep(a) => sweep(a),
        Command::Crosstab(a) => crosstab(a, &config),
        Command::Check(a) => check(a, &config),
        Command::ExportMap(a) => export_map(a),
        Command::Synth(a) => synth_cmd(a, &config),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_at(p))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_with(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = output(path)?;
    let label = path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf);
    f(&mut w).and_then(|_| w.flush()).map_err(io_at(&label))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_at(path))
}

fn fetch(a: FetchArgs, config: &AnalysisConfig) -> Result<(), CliError> {
    let key = std::env::var(API_KEY_ENV).map_err(|_| invalid(format!("{API_KEY_ENV} is not set")))?;
    let feed = HttpFeed::new(
        a.endpoint.unwrap_or_else(|| config.endpoint.clone()),
        a.contract.unwrap_or_else(|| config.contract.clone()),
        key,
    );
    let seen = if a.out.exists() { ingest::read_archive(&a.out)?.archive.keys() } else { Default::default() };
    let poll = PollConfig {
        interval: Duration::from_secs(a.interval_minutes * 60),
        max_consecutive_failures: a.max_failures,
        ..PollConfig::default()
    };
    let sink = CsvArchiveSink::open(&a.out)?;
    let mut poller = Poller::new(feed, sink, poll).map_err(invalid)?.with_seen(seen);
    let err = if a.once {
        match poller.poll_once() {
            Ok(ingest::CycleOutcome::Completed(stats)) => {
                eprintln!("accepted {} duplicate {} rejected {}", stats.accepted, stats.duplicates, stats.rejected);
                return Ok(());
            }
            Ok(ingest::CycleOutcome::Failed { reason, .. }) => return Err(CliError::Io(reason)),
            Err(e) => e,
        }
    } else {
        match poller.run(std::thread::sleep) {
            Ok(never) => match never {},
            Err(e) => e,
        }
    };
    Err(match err {
        PollError::TooManyFailures { .. } | PollError::Sink(_) => CliError::Io(err.to_string()),
        _ => invalid(err),
    })
}

fn looks_like_json(path: &Path, text: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) || text.trim_start().starts_with('[')
}

fn import(a: ImportArgs) -> Result<(), CliError> {
    let mut archive =
        if a.append && a.out.exists() { ingest::read_archive(&a.out)?.archive } else { SnapshotArchive::new("import") };
    for input in &a.inputs {
        let text = read_text(input)?;
        let (rows, rejections) = if looks_like_json(input, &text) {
            let batch = ingest::parse_feed_document(&text)
                .map_err(|e| invalid(format!("{}: {e}", input.display())))?;
            (batch.snapshots, batch.rejections)
        } else {
            let read = ingest::read_archive_from(text.as_bytes(), &input.display().to_string())?;
            (read.archive.into_rows(), read.rejections)
        };
        for r in &rejections {
            eprintln!("{}: {r}", input.display());
        }
        let added = archive.extend(rows);
        eprintln!("{}: {added} rows added, {} rejected", input.display(), rejections.len());
    }
    ingest::write_archive(&archive, &a.out)?;
    Ok(())
}

fn resample(a: ResampleArgs, config: &AnalysisConfig) -> Result<(), CliError> {
    let grid = config.grid()?;
    let mut policy = config.policy();
    if let Some(g) = a.max_gap {
        policy.max_gap = g;
    }
    let min_completeness = a.min_completeness.unwrap_or(config.min_completeness);
    if !(0.0..=1.0).contains(&min_completeness) {
        return Err(invalid("min-completeness must be within [0, 1]"));
    }
    let read = ingest::read_archive(&a.archive)?;
    for r in &read.rejections {
        eprintln!("{}: {r}", a.archive.display());
    }
    let archive = read.archive;
    let stations = if a.station.is_empty() { archive.station_ids() } else { a.station.clone() };
    let mut profiles = Vec::new();
    for station in stations {
        let Some((first, last)) = grid::station_date_span(&archive, station, &grid) else {
            return Err(GridError::UnknownStation(station).into());
        };
        let first = a.dates.from.map_or(first, |f| f.max(first));
        let last = a.dates.to.map_or(last, |t| t.min(last));
        let range = grid::profiles_for_range(&archive, station, first, last, &grid, policy, min_completeness)?;
        for (date, completeness) in &range.excluded {
            eprintln!("station {station} {date}: excluded, completeness {completeness:.3}");
        }
        profiles.extend(range.profiles);
    }
    write_with(a.out.as_deref(), |w| grid::write_profiles_csv(&profiles, w))
}

fn load_profiles(path: &Path) -> Result<Vec<DayProfile>, CliError> {
    let file = File::open(path).map_err(io_at(path))?;
    Ok(grid::read_profiles_csv(file)?)
}

fn flows_cmd(a: FlowsArgs) -> Result<(), CliError> {
    let profiles = load_profiles(&a.profiles)?;
    let table = flows::daily_traffic_table(&profiles);
    for (station, date) in &table.skipped {
        eprintln!("station {station} {date}: skipped, fewer than 2 usable slots");
    }
    if let Some(date) = a.rank {
        let ranking = flows::rank_stations(&table.rows, date)?;
        for (pos, (station, traffic)) in ranking.entries.iter().enumerate() {
            eprintln!("{:>4} station {station:>5} traffic {traffic}", pos + 1);
        }
    }
    write_with(a.out.as_deref(), |w| flows::write_traffic_csv(&table.rows, w))
}

/// Profiles of exactly one station within the date filter.
fn select_profiles(sel: &ProfileSelection) -> Result<Vec<DayProfile>, CliError> {
    let mut profiles = load_profiles(&sel.profiles)?;
    profiles.retain(|p| sel.station.is_none_or(|s| p.station_id == s) && sel.dates.keep(p.date));
    let stations: BTreeSet<u32> = profiles.iter().map(|p| p.station_id).collect();
    match (stations.len(), sel.station) {
        (0, Some(s)) => Err(GridError::UnknownStation(s).into()),
        (0, None) => Err(invalid("no profiles selected")),
        (1, _) => Ok(profiles),
        _ => Err(invalid(format!("profiles cover stations {stations:?}; choose one with --station"))),
    }
}

fn cluster_cmd(a: ClusterArgs, config: &AnalysisConfig) -> Result<(), CliError> {
    let k = match (a.k, a.preset) {
        (Some(k), _) => k,
        (None, Some(Preset::Busy)) => 4,
        (None, Some(Preset::Quiet)) => 2,
        (None, None) => return Err(invalid("either --k or --preset is required")),
    };
    let profiles = select_profiles(&a.select)?;
    let model = cluster::fit(&profiles, &a.kmeans.config(k))?;
    if model.degenerate {
        eprintln!("warning: coincident centroids; the profiles do not support k = {k}");
    }
    eprintln!("k {k} inertia {} iterations {}", model.inertia, model.iterations);
    if let Some(path) = &a.centroids_out {
        write_with(Some(path), |w| cluster::write_centroids_csv(&model, config.step_minutes, w))?;
    }
    write_with(a.out.as_deref(), |w| w.write_all(model.to_text().as_bytes()))
}

fn sweep(a: SweepArgs) -> Result<(), CliError> {
    if a.k_min == 0 || a.k_min > a.k_max {
        return Err(invalid("need 1 <= k-min <= k-max"));
    }
    let profiles = select_profiles(&a.select)?;
    let results = cluster::inertia_sweep(&profiles, a.k_min..=a.k_max, &a.kmeans.config(a.k_min))?;
    write_with(a.out.as_deref(), |w| {
        writeln!(w, "k,inertia")?;
        for (k, inertia) in results {
            writeln!(w, "{k},{inertia}")?;
        }
        Ok(())
    })
}

fn load_model(path: &Path) -> Result<ClusterModel, CliError> {
    read_text(path)?.parse::<ClusterModel>().map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn model_crosstab(model: &ClusterModel, holidays: &BTreeSet<NaiveDate>) -> Result<patterns::WeekdayCrossTab, CliError> {
    if model.members.len() != model.assignments.len() {
        return Err(invalid("model has no member dates; fit it from profiles"));
    }
    let dates: Vec<NaiveDate> = model.members.iter().map(|m| m.date).collect();
    Ok(patterns::crosstab(model, &dates, holidays)?)
}

fn crosstab(a: CrosstabArgs, config: &AnalysisConfig) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let tab = model_crosstab(&model, &config.holiday_set())?;
    write_with(a.out.as_deref(), |w| match a.format {
        Format::Table => w.write_all(tab.to_table().as_bytes()),
        Format::Csv => tab.write_csv(w),
    })
}

fn check(a: CheckArgs, config: &AnalysisConfig) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let holidays = config.holiday_set();
    let tab = model_crosstab(&model, &holidays)?;
    let map = patterns::derive_day_type_map(&tab, &holidays, a.scheme.into())?;
    let profiles = select_profiles(&a.select)?;
    let report = patterns::consistency_check(&profiles, &model, &map, &holidays)?;
    write_with(a.out.as_deref(), |w| match a.format {
        Format::Table => w.write_all(report.to_table().as_bytes()),
        Format::Csv => report.write_csv(w),
    })
}

fn export_map(a: ExportMapArgs) -> Result<(), CliError> {
    let table = flows::read_traffic_csv(File::open(&a.traffic).map_err(io_at(&a.traffic))?)?;
    let coords = map::station_coords(&ingest::read_archive(&a.archive)?.archive);
    let dates: BTreeSet<NaiveDate> = match a.date {
        Some(d) => BTreeSet::from([d]),
        None => table.iter().map(|r| r.date).collect(),
    };
    std::fs::create_dir_all(&a.out_dir).map_err(io_at(&a.out_dir))?;
    for date in dates {
        let features = map::map_features(&table, date, &coords)?;
        let geojson = map::export_map(&table, date, &coords)?;
        let path = a.out_dir.join(format!("traffic-{date}.geojson"));
        std::fs::write(&path, geojson).map_err(io_at(&path))?;
        if a.html {
            let path = a.out_dir.join(format!("traffic-{date}.html"));
            std::fs::write(&path, map::render_html(&features, date)).map_err(io_at(&path))?;
        }
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs, config: &AnalysisConfig) -> Result<(), CliError> {
    let text = read_text(&a.scenario)?;
    let scenario = SyntheticScenario::from_toml(&text)?;
    let archive = synth::generate_archive(&scenario, &config.grid()?)?;
    let n = ingest::write_archive(&archive, &a.out)?;
    eprintln!("{n} snapshots written");
    Ok(())
}
