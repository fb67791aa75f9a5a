//! Command implementations behind the `ivbb` binary.
//!
//! Every command writes its report to the supplied sink and its files to the
//! paths given on the command line. Errors carry the process exit code: 1 when
//! the data cannot support the request, 2 for I/O and format failures.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ivbb_core::{
    aggregate, build_validation_partition, compare_evaluators, export_grid, filter_fair_contact, generate,
    league_workload, leaderboard_report, parse_dataset, select_bandwidth, split_by_handedness, team_defense,
    value_all, value_leave_group_out, write_dataset, AxisRange, BandwidthVector, BattedBallRecord, BundleModel, Error, FixedAxis,
    GroupKey, Hand, ModelBundle, ModelPair, OutcomeClass, OutcomeWeights, SearchConfig, SearchResult, SortKey,
    SynthConfig, ValuationModel, DEFAULT_TRUNCATION_RADIUS,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Insufficient(String),
    #[error("{0}")]
    Format(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Insufficient(_) => 1,
            CliError::Format(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::EmptySamples
            | Error::EmptyValidationSet(_)
            | Error::ValidationTooSmall { .. }
            | Error::NoRecordsForHand(_)
            | Error::MissingModel(_) => CliError::Insufficient(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Format(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ivbb", version, about = "Intrinsic batted-ball valuation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an input file and print row counts.
    Validate {
        input: PathBuf,
        /// Rejected rows to list before the summary.
        #[arg(long, default_value_t = 20)]
        show: usize,
    },
    /// Select bandwidths by cross-validation and write a model bundle.
    Fit(FitArgs),
    /// Write ball_id,I,O for every fair ball.
    Score {
        bundle: PathBuf,
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export woba over a 2-D slice of launch space.
    Grid(GridArgs),
    /// Batter or pitcher means of I and O.
    Leaderboard(LeaderboardArgs),
    /// Contact-adjusted team defense; needs a bundle fitted without HR.
    Defense {
        bundle: PathBuf,
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        out: PathBuf,
        /// Scenario file; the shipped defender league when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Time the naive and accelerated density evaluators.
    Bench {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 10_000)]
        queries: usize,
        #[arg(long, default_value = "2,1.5,2.2", value_parser = parse_bandwidth)]
        bandwidth: BandwidthVector,
        #[arg(long, default_value_t = 2014)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TRUNCATION_RADIUS)]
        radius: f64,
    },
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub input: PathBuf,
    /// Bundle path.
    #[arg(long)]
    pub out: PathBuf,
    /// Bandwidth report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Fit one hand only.
    #[arg(long, value_parser = parse_hand)]
    pub hand: Option<Hand>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, value_parser = parse_bandwidth)]
    pub lo: Option<BandwidthVector>,
    #[arg(long, value_parser = parse_bandwidth)]
    pub hi: Option<BandwidthVector>,
    /// Smallest validation densities left out of each score.
    #[arg(long)]
    pub drop: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub coarse_to_fine: bool,
    /// Skip the search and use this bandwidth for every hand.
    #[arg(long, value_parser = parse_bandwidth)]
    pub bandwidth: Option<BandwidthVector>,
    /// Outcome class left out of the model (repeatable), e.g. HR.
    #[arg(long, value_parser = parse_outcome)]
    pub exclude: Vec<OutcomeClass>,
    /// Six weights in OUT,1B,2B,3B,HR,ROE order.
    #[arg(long, value_parser = parse_weights)]
    pub weights: Option<OutcomeWeights>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    pub bundle: PathBuf,
    #[arg(long, value_parser = parse_hand)]
    pub hand: Hand,
    /// speed=<mph> or vertical=<deg>.
    #[arg(long, default_value = "speed=93", value_parser = parse_fix)]
    pub fix: (FixedAxis, f64),
    /// Row axis start:end:step (v for a fixed speed, s for a fixed angle).
    #[arg(long, default_value = "-10:45:1")]
    pub rows: String,
    /// Column axis start:end:step over h.
    #[arg(long, default_value = "45:135:1")]
    pub cols: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub pgm: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ByArg {
    Batter,
    Pitcher,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SortArg {
    I,
    Diff,
}

#[derive(Debug, Args)]
pub struct LeaderboardArgs {
    pub bundle: PathBuf,
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = ByArg::Batter)]
    pub by: ByArg,
    #[arg(long, default_value_t = 300)]
    pub min: usize,
    #[arg(long, value_enum, default_value_t = SortArg::I)]
    pub sort: SortArg,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long, default_value_t = 10)]
    pub bottom: usize,
    /// Also write every qualifying row as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Value each group's balls with models refitted on the input minus that
    /// group, at the bundle's bandwidths.
    #[arg(long)]
    pub leave_group_out: bool,
}

fn parse_hand(s: &str) -> Result<Hand, String> {
    Hand::from_code(s).ok_or_else(|| format!("hand must be L or R, got '{s}'"))
}

fn parse_outcome(s: &str) -> Result<OutcomeClass, String> {
    OutcomeClass::from_code(s).ok_or_else(|| format!("unknown outcome '{s}'"))
}

fn parse_list(s: &str, len: usize) -> Result<Vec<f64>, String> {
    let values = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad number '{x}'")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != len {
        return Err(format!("expected {len} comma-separated numbers, got {}", values.len()));
    }
    Ok(values)
}

fn parse_bandwidth(s: &str) -> Result<BandwidthVector, String> {
    let v = parse_list(s, 3)?;
    BandwidthVector::new(v[0], v[1], v[2]).map_err(|e| e.to_string())
}

fn parse_weights(s: &str) -> Result<OutcomeWeights, String> {
    let v = parse_list(s, 6)?;
    OutcomeWeights::new([v[0], v[1], v[2], v[3], v[4], v[5]]).map_err(|e| e.to_string())
}

fn parse_fix(s: &str) -> Result<(FixedAxis, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected axis=value, got '{s}'"))?;
    let axis = match name.trim() {
        "speed" | "s" => FixedAxis::Speed,
        "vertical" | "v" => FixedAxis::Vertical,
        other => return Err(format!("unknown axis '{other}'")),
    };
    let value = value.trim().parse::<f64>().map_err(|_| format!("bad number '{value}'"))?;
    Ok((axis, value))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

/// Output file, or the report sink when no path is given.
fn sink<'a>(path: &Option<PathBuf>, out: &'a mut dyn Write) -> CliResult<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(out),
    })
}

/// Fair-contact records of an input file. Rejected rows are counted on stderr.
pub fn read_fair(path: &Path) -> CliResult<Vec<BattedBallRecord>> {
    let parsed = parse_dataset(BufReader::new(open(path)?))?;
    if !parsed.diagnostics.is_empty() {
        eprintln!("{}: skipped {} malformed rows", path.display(), parsed.diagnostics.len());
    }
    Ok(filter_fair_contact(parsed.records))
}

pub fn read_bundle(path: &Path) -> CliResult<ModelBundle> {
    Ok(ModelBundle::read(BufReader::new(open(path)?))?)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::Validate { input, show } => cmd_validate(&input, show, out),
        Command::Fit(args) => cmd_fit(&args, out),
        Command::Score { bundle, input, out: path } => cmd_score(&bundle, &input, &mut *sink(&path, out)?),
        Command::Grid(args) => cmd_grid(&args, out),
        Command::Leaderboard(args) => cmd_leaderboard(&args, out),
        Command::Defense { bundle, input, out: path } => cmd_defense(&bundle, &input, &mut *sink(&path, out)?),
        Command::Synth { out: path, config, seed, n } => cmd_synth(config.as_deref(), seed, n, &path, out),
        Command::Bench { samples, queries, bandwidth, seed, radius } => {
            let (s, q) = league_workload(samples, queries, seed)?;
            let report = compare_evaluators(&s, &q, bandwidth, radius)?;
            write!(out, "{report}")?;
            Ok(())
        }
    }
}

/// Category of a rejection reason: the text before any quoted value.
fn reason_kind(reason: &str) -> &str {
    reason.split(" '").next().unwrap_or(reason)
}

pub fn cmd_validate(input: &Path, show: usize, out: &mut dyn Write) -> CliResult {
    let parsed = parse_dataset(BufReader::new(open(input)?))?;
    for d in parsed.diagnostics.iter().take(show) {
        writeln!(out, "{d}")?;
    }
    if parsed.diagnostics.len() > show {
        writeln!(out, "... {} more rejected rows", parsed.diagnostics.len() - show)?;
    }
    let accepted = parsed.records.len();
    writeln!(out, "rows {}", parsed.rows_read())?;
    writeln!(out, "accepted {accepted}, rejected {}", parsed.diagnostics.len())?;
    let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &parsed.diagnostics {
        *reasons.entry(reason_kind(&d.reason)).or_default() += 1;
    }
    for (reason, n) in reasons {
        writeln!(out, "  rejected {reason}: {n}")?;
    }
    let fair = parsed.records.iter().filter(|r| ivbb_core::ingest::is_fair_contact(r)).count();
    writeln!(out, "fair contact {fair}")?;
    for hand in Hand::BOTH {
        let n = parsed.records.iter().filter(|r| r.batter_hand == hand).count();
        writeln!(out, "  hand {hand}: {n}")?;
    }
    for class in OutcomeClass::ALL {
        let n = parsed.records.iter().filter(|r| r.outcome == class).count();
        writeln!(out, "  outcome {class}: {n}")?;
    }
    if accepted == 0 {
        return Err(CliError::Insufficient(format!("{}: no rows accepted", input.display())));
    }
    Ok(())
}

impl FitArgs {
    fn search_config(&self) -> CliResult<SearchConfig> {
        let mut cfg = SearchConfig::default();
        if let Some(step) = self.step {
            cfg.step = step;
        }
        if let Some(lo) = self.lo {
            cfg.lo = lo;
        }
        if let Some(hi) = self.hi {
            cfg.hi = hi;
        }
        if let Some(drop) = self.drop {
            cfg.outlier_drop = drop;
        }
        if let Some(radius) = self.radius {
            cfg.truncation_radius = radius;
        }
        cfg.coarse_to_fine = self.coarse_to_fine;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn lattice_line(cfg: &SearchConfig) -> String {
    format!(
        "lattice lo={} hi={} step={} drop={} radius={} coarse_to_fine={}",
        cfg.lo, cfg.hi, cfg.step, cfg.outlier_drop, cfg.truncation_radius, cfg.coarse_to_fine
    )
}

/// Per-set optima side by side, one column group per hand.
fn optima_table(results: &[(Hand, SearchResult)]) -> String {
    let mut s = String::from("set ");
    for (hand, _) in results {
        s += &format!("  {:>6} {:>6} {:>6}", format!("{hand}:s"), "v", "h");
    }
    s.push('\n');
    let sets = results.iter().map(|(_, r)| r.per_set_optima.len()).max().unwrap_or(0);
    let cells = |b: BandwidthVector| {
        let [x, y, z] = b.to_array();
        format!("  {x:>6.2} {y:>6.2} {z:>6.2}")
    };
    for j in 0..sets {
        s += &format!("S{:<3}", j + 1);
        for (_, r) in results {
            s += &r.per_set_optima.get(j).map_or_else(|| " ".repeat(23), |o| cells(o.bandwidth));
        }
        s.push('\n');
    }
    s += "avg ";
    for (_, r) in results {
        s += &cells(r.averaged);
    }
    s.push('\n');
    s
}

pub fn cmd_fit(args: &FitArgs, out: &mut dyn Write) -> CliResult {
    let cfg = args.search_config()?;
    let records = read_fair(&args.input)?;
    let (left, right) = split_by_handedness(records);
    let hands: Vec<(Hand, Vec<BattedBallRecord>)> = match args.hand {
        Some(Hand::L) => vec![(Hand::L, left)],
        Some(Hand::R) => vec![(Hand::R, right)],
        None => [(Hand::L, left), (Hand::R, right)].into_iter().filter(|(_, r)| !r.is_empty()).collect(),
    };
    if hands.is_empty() {
        return Err(CliError::Insufficient(format!("{}: no fair-contact records", args.input.display())));
    }
    let excluded: BTreeSet<OutcomeClass> = args.exclude.iter().copied().collect();
    let weights = args.weights.unwrap_or_default();

    let mut report = lattice_line(&cfg) + "\n";
    let mut searches = Vec::new();
    let mut bundle = ModelBundle::default();
    for (hand, records) in &hands {
        if records.is_empty() {
            return Err(Error::NoRecordsForHand(*hand).into());
        }
        let (bandwidth, hand_report) = match args.bandwidth {
            Some(bw) => (bw, None),
            None => {
                let partition = build_validation_partition(records, 5)
                    .map_err(|e| with_hand(e, *hand))?;
                let result = select_bandwidth(records, &partition, &cfg).map_err(|e| with_hand(e, *hand))?;
                let text = result.to_string();
                searches.push((*hand, result.clone()));
                (result.averaged, Some(text))
            }
        };
        report += &format!("hand {hand}\n");
        report += hand_report.as_deref().unwrap_or(&format!("fixed: {bandwidth}\n"));
        let model = ValuationModel::from_labeled(
            *hand,
            &records.iter().map(|r| (r.params(), r.outcome)).collect::<Vec<_>>(),
            bandwidth,
            weights,
            &excluded,
            cfg.truncation_radius,
        )?;
        bundle.models.push(BundleModel::from_model(&model, hand_report));
    }

    let mut file = create(&args.out)?;
    bundle.write(&mut file)?;
    file.flush()?;
    if let Some(path) = &args.report {
        let mut file = create(path)?;
        file.write_all(report.as_bytes())?;
        file.flush()?;
    }
    if !searches.is_empty() {
        write!(out, "{}", optima_table(&searches))?;
    }
    for m in &bundle.models {
        writeln!(out, "hand {} sigma={} samples={}", m.hand, m.bandwidth, m.samples.len())?;
    }
    writeln!(out, "wrote {}", args.out.display())?;
    Ok(())
}

fn with_hand(e: Error, hand: Hand) -> CliError {
    match CliError::from(e) {
        CliError::Insufficient(m) => CliError::Insufficient(format!("hand {hand}: {m}")),
        other => other,
    }
}

fn load_models(bundle: &Path) -> CliResult<ModelPair> {
    Ok(read_bundle(bundle)?.to_models()?)
}

pub fn cmd_score(bundle: &Path, input: &Path, out: &mut dyn Write) -> CliResult {
    let models = load_models(bundle)?;
    let records = read_fair(input)?;
    let valuations = value_all(&models, &records)?;
    writeln!(out, "ball_id,I,O")?;
    for v in &valuations {
        writeln!(out, "{},{:.4},{:.4}", v.ball_id, v.intrinsic, v.observed)?;
    }
    out.flush()?;
    Ok(())
}

pub fn cmd_grid(args: &GridArgs, out: &mut dyn Write) -> CliResult {
    let rows: AxisRange = args.rows.parse()?;
    let cols: AxisRange = args.cols.parse()?;
    let models = load_models(&args.bundle)?;
    let (axis, value) = args.fix;
    let grid = export_grid(models.get(args.hand)?, axis, value, rows, cols)?;
    let mut file = create(&args.out)?;
    grid.write_csv(&mut file)?;
    file.flush()?;
    if let Some(path) = &args.pgm {
        let mut file = create(path)?;
        grid.write_pgm(&mut file)?;
        file.flush()?;
    }
    writeln!(
        out,
        "{}x{} grid at {axis}={value}, far-field cells {}",
        grid.axis1_values.len(),
        grid.axis2_values.len(),
        grid.far_field_cells
    )?;
    Ok(())
}

pub fn cmd_leaderboard(args: &LeaderboardArgs, out: &mut dyn Write) -> CliResult {
    let models = load_models(&args.bundle)?;
    let records = read_fair(&args.input)?;
    let key = match args.by {
        ByArg::Batter => GroupKey::Batter,
        ByArg::Pitcher => GroupKey::Pitcher,
    };
    let valuations = if args.leave_group_out {
        value_leave_group_out(&models, &records, &records, key)?
    } else {
        value_all(&models, &records)?
    };
    let sort = match args.sort {
        SortArg::I => SortKey::IBar,
        SortArg::Diff => SortKey::Diff,
    };
    let rows = aggregate(&valuations, key, args.min, sort);
    writeln!(out, "{} groups with at least {} balls", rows.len(), args.min)?;
    write!(out, "{}", leaderboard_report(&rows, sort, args.top, args.bottom))?;
    if let Some(path) = &args.csv {
        let mut file = create(path)?;
        ivbb_core::stats::write_aggregate_csv(&rows, &mut file)?;
        file.flush()?;
    }
    Ok(())
}

pub fn cmd_defense(bundle: &Path, input: &Path, out: &mut dyn Write) -> CliResult {
    let models = load_models(bundle)?;
    let records = read_fair(input)?;
    let rows = team_defense(&models, &records)?;
    ivbb_core::stats::write_defense_csv(&rows, &mut *out)?;
    out.flush()?;
    Ok(())
}

pub fn cmd_synth(
    config: Option<&Path>,
    seed: Option<u64>,
    n: Option<usize>,
    path: &Path,
    out: &mut dyn Write,
) -> CliResult {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Format(format!("{}: {e}", p.display())))?;
            SynthConfig::from_json(&text)?
        }
        None => SynthConfig::defender_league(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(n) = n {
        cfg.n = n;
    }
    let records = generate(&cfg)?;
    let mut file = create(path)?;
    write_dataset(&records, &mut file)?;
    file.flush()?;
    writeln!(out, "wrote {} records to {}", records.len(), path.display())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(CliError::from(Error::EmptyValidationSet(3)).exit_code(), 1);
        assert_eq!(CliError::from(Error::NoRecordsForHand(Hand::L)).exit_code(), 1);
        assert_eq!(CliError::from(Error::DefenseRequiresNonHr).exit_code(), 2);
        assert_eq!(CliError::from(Error::BundleVersion { found: 2, expected: 1 }).exit_code(), 2);
        assert_eq!(CliError::from(Error::InvalidRange("x".into())).exit_code(), 2);
    }

    #[test]
    fn flag_parsers() {
        assert_eq!(parse_bandwidth("2,1.5,2.2").unwrap().to_array(), [2.0, 1.5, 2.2]);
        assert!(parse_bandwidth("2,1.5").is_err());
        assert!(parse_bandwidth("2,0,1").is_err());
        assert_eq!(parse_fix("speed=93").unwrap(), (FixedAxis::Speed, 93.0));
        assert_eq!(parse_fix("vertical=-5").unwrap(), (FixedAxis::Vertical, -5.0));
        assert!(parse_fix("93").is_err());
        assert!(parse_weights("0,1,1,1,1").is_err());
        assert_eq!(parse_outcome("HR").unwrap(), OutcomeClass::HomeRun);
        assert_eq!(reason_kind("invalid game_date '2014-13-01'"), "invalid game_date");
        assert_eq!(reason_kind("speed out of range"), "speed out of range");
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
