//! Command-line front end: ingest → quantize → compile → verify → report.
//!
//! Every command is a plain function over library types so it can be driven from tests;
//! [`run`] wires them to files, standard output (TSV reports with a one-line header) and
//! standard error (human summaries). Exit codes: 0 pass, 1 verification failure,
//! 2 usage or input error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use spacefill::histogram::{HistogramD, QuantizedHistogramD};
use spacefill::pwl::TransportSpec;
use spacefill::quantizer::{
    assemble_histogram, compute_masses, default_delta, quantization_bound, quantize_masses, CellMassGrid,
    InputDistribution,
};
use spacefill::relunet::{audit_quantization, build_transport_net, encoded_bit_length, rescale_output, ReluNetwork};
use spacefill::wasserstein::{subcube_deviation, subcube_exactness, w_bound_report};

/// Errors reported with exit code 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Library(#[from] spacefill::Error),
    #[error("{0}")]
    Usage(String),
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    /// Process exit code.
    pub fn code(self) -> u8 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 1,
        }
    }
}

/// Quantization step: an explicit denominator `A` (δ = 1/A) or the default for `(d, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeltaArg {
    Auto,
    Denominator(u64),
}

impl FromStr for DeltaArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(DeltaArg::Auto);
        }
        let digits = s.strip_prefix("1/").unwrap_or(s);
        match digits.parse::<u64>() {
            Ok(a) if a >= 1 => Ok(DeltaArg::Denominator(a)),
            _ => Err(format!("expected \"auto\", a positive integer A or \"1/A\", got {s:?}")),
        }
    }
}

impl DeltaArg {
    /// Resolves to the denominator `A`.
    pub fn resolve(self, d: usize, n: usize) -> Result<u64, CliError> {
        match self {
            DeltaArg::Auto => Ok(default_delta(d, n)?),
            DeltaArg::Denominator(a) => Ok(a),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "spacefill",
    version,
    about = "Compile histogram distributions into quantized ReLU transport networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Quantize samples (CSV) or tile masses (JSON) into a δ-quantized histogram.
    Quantize(QuantizeArgs),
    /// Compile a histogram into a transport network.
    Compile(CompileArgs),
    /// Verify a network against its target histogram.
    Verify(VerifyArgs),
    /// Sweep the sawtooth order and report bound, measured distance and network size.
    Decay(DecayArgs),
    /// Draw samples from the pushforward of the uniform distribution by a network.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Samples CSV (one point per row) or, with --grid, tile-mass JSON `{"d","n","masses"}`.
    #[arg(long)]
    pub input: PathBuf,
    /// Treat the input as tile-mass JSON.
    #[arg(long)]
    pub grid: bool,
    /// Resolution n (tiles per axis); defaults to the grid's own resolution.
    #[arg(short = 'n')]
    pub n: Option<usize>,
    /// Denominator A of δ = 1/A, "1/A", or "auto".
    #[arg(long, default_value = "auto")]
    pub delta: DeltaArg,
    /// Destination of the quantized-histogram JSON (standard output when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct BoxArgs {
    /// Output scale α of the bounded box `α[0,1]^d + β`.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output offset β (comma-separated, one entry per coordinate).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    /// Histogram JSON (δ-quantized unless --allow-unquantized).
    #[arg(long)]
    pub input: PathBuf,
    /// Sawtooth order s.
    #[arg(short = 's')]
    pub s: u32,
    #[command(flatten)]
    pub bounds: BoxArgs,
    /// Accept a plain histogram without a conditional table.
    #[arg(long)]
    pub allow_unquantized: bool,
    /// Destination of the network JSON.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Network JSON.
    #[arg(long)]
    pub network: PathBuf,
    /// Histogram JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Sawtooth order s.
    #[arg(short = 's')]
    pub s: u32,
    #[command(flatten)]
    pub bounds: BoxArgs,
    /// Grid mesh exponent: the map is sampled at the midpoints of 2^mesh equal intervals.
    #[arg(long, default_value_t = 20)]
    pub mesh: u32,
    /// Largest accepted subcube mass deviation.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Seed for the random equivalence points.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub allow_unquantized: bool,
}

#[derive(Debug, Args)]
pub struct DecayArgs {
    /// Histogram JSON.
    #[arg(long)]
    pub input: PathBuf,
    /// Smallest sawtooth order.
    #[arg(long, default_value_t = 1)]
    pub s_min: u32,
    /// Largest sawtooth order.
    #[arg(long, default_value_t = 5)]
    pub s_max: u32,
    #[arg(long)]
    pub allow_unquantized: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Network JSON.
    #[arg(long)]
    pub network: PathBuf,
    /// Number of samples.
    #[arg(long)]
    pub count: i64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Destination CSV (standard output when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// A compilation target, quantized or (when explicitly allowed) plain.
#[derive(Debug, Clone)]
pub enum Target {
    Quantized(QuantizedHistogramD),
    Plain(HistogramD),
}

impl Target {
    /// Parses histogram JSON; a plain histogram is rejected unless `allow_unquantized`.
    pub fn from_json(text: &str, allow_unquantized: bool) -> Result<Self, CliError> {
        match QuantizedHistogramD::from_json(text) {
            Ok(q) => Ok(Target::Quantized(q)),
            Err(spacefill::Error::NotQuantized) if allow_unquantized => Ok(Target::Plain(HistogramD::from_json(text)?)),
            Err(e) => Err(e.into()),
        }
    }

    /// The histogram.
    pub fn histogram(&self) -> &HistogramD {
        match self {
            Target::Quantized(q) => q.base(),
            Target::Plain(h) => h,
        }
    }

    /// Network weight-grid denominator `nA` (Δ = δ/n) for quantized targets.
    pub fn weight_denominator(&self) -> Option<u64> {
        match self {
            Target::Quantized(q) => Some(q.base().resolution() as u64 * q.table().denominator()),
            Target::Plain(_) => None,
        }
    }

    /// Transport map at order `s`.
    pub fn spec(&self, s: u32) -> Result<TransportSpec, CliError> {
        Ok(match self {
            Target::Quantized(q) => TransportSpec::from_quantized(q, s)?,
            Target::Plain(h) => TransportSpec::new(h, s)?,
        })
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Parses a samples CSV: no header, one point per row, equal column counts.
pub fn parse_samples(text: &str) -> Result<InputDistribution, CliError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut points: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let point = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| CliError::Usage(format!("not a number in samples: {field:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if point.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(CliError::Usage(format!("sample outside [0,1]^d: {point:?}")));
        }
        points.push(point);
    }
    let dim = points.first().map(Vec::len).ok_or_else(|| CliError::Usage("no samples".into()))?;
    if dim == 0 {
        return Err(CliError::Usage("samples have no columns".into()));
    }
    Ok(InputDistribution::Samples { dim, points })
}

/// Result of [`quantize`].
#[derive(Debug, Clone)]
pub struct QuantizeReport {
    pub histogram: QuantizedHistogramD,
    pub denominator: u64,
    /// `2√d/n + d(d+1)/2 · (n−1)δ`.
    pub bound: f64,
    pub positivity_guaranteed: bool,
}

/// compute_masses → quantize_masses → assemble_histogram.
pub fn quantize(input: &InputDistribution, n: usize, delta: DeltaArg) -> Result<QuantizeReport, CliError> {
    let d = input.dim();
    let denominator = delta.resolve(d, n)?;
    let ledger = quantize_masses(&compute_masses(input, n)?, denominator)?;
    let histogram = assemble_histogram(&ledger)?;
    Ok(QuantizeReport {
        histogram,
        denominator,
        bound: quantization_bound(d, n, 1.0 / denominator as f64),
        positivity_guaranteed: ledger.positivity_guaranteed()?,
    })
}

/// Result of [`compile`].
#[derive(Debug, Clone)]
pub struct CompileReport {
    pub network: ReluNetwork,
    pub connectivity: usize,
    pub depth: usize,
    pub width: usize,
    /// Audit of the unscaled network on the grid `Δ = δ/n` (quantized targets only).
    pub audit_pass: Option<bool>,
    /// Encoded bit length of the unscaled network (quantized targets only).
    pub bits: Option<u64>,
    /// `√d/(n 2^s)`.
    pub bound: f64,
    /// `α(√d/(n 2^s) + 5√d/(2n))` when a box was requested.
    pub box_bound: Option<f64>,
}

fn box_params(bounds: &BoxArgs, d: usize) -> Result<Option<(f64, Vec<f64>)>, CliError> {
    if bounds.alpha.is_none() && bounds.beta.is_none() {
        return Ok(None);
    }
    let alpha = bounds.alpha.unwrap_or(1.0);
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(CliError::Usage(format!("--alpha must be positive, got {alpha}")));
    }
    let beta = bounds.beta.clone().unwrap_or_else(|| vec![0.0; d]);
    if beta.len() != d {
        return Err(CliError::Usage(format!("--beta needs {d} entries, got {}", beta.len())));
    }
    Ok(Some((alpha, beta)))
}

/// Builds the transport network of `target` at order `s`, optionally mapped onto `α[0,1]^d + β`.
pub fn compile(target: &Target, s: u32, bounds: &BoxArgs) -> Result<CompileReport, CliError> {
    let spec = target.spec(s)?;
    let d = spec.dim();
    let net = build_transport_net(&spec)?;
    let stats = net.stats();
    let (audit_pass, bits) = match target.weight_denominator() {
        Some(dd) => (Some(audit_quantization(&net, dd).pass()), Some(encoded_bit_length(&net, dd)?)),
        None => (None, None),
    };
    let bound = (d as f64).sqrt() / (spec.resolution() as f64 * (s as f64).exp2());
    let scaled = box_params(bounds, d)?;
    let box_bound =
        scaled.as_ref().map(|(alpha, _)| alpha * (bound + 5.0 * (d as f64).sqrt() / (2.0 * spec.resolution() as f64)));
    let network = match &scaled {
        Some((alpha, beta)) => rescale_output(&net, *alpha, beta)?,
        None => net,
    };
    Ok(CompileReport {
        network,
        connectivity: stats.connectivity,
        depth: stats.depth,
        width: stats.width,
        audit_pass,
        bits,
        bound,
        box_bound,
    })
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Result of [`verify`].
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    /// All checks passed.
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Number of random points of the network/oracle equivalence check.
pub const EQUIVALENCE_POINTS: usize = 10_000;
/// Tolerance of the network/oracle equivalence check.
pub const EQUIVALENCE_TOL: f64 = 1e-9;

/// Checks a network against its target: equivalence with the exact map, subcube mass
/// exactness of the network's own image, T-interval sums, the Wasserstein bound and the
/// weight audit.
pub fn verify(
    network: &ReluNetwork,
    target: &Target,
    s: u32,
    bounds: &BoxArgs,
    mesh: u32,
    tolerance: f64,
    seed: u64,
) -> Result<VerifyReport, CliError> {
    let spec = target.spec(s)?;
    let d = spec.dim();
    if network.input_dim() != 1 || network.output_dim() != d {
        return Err(CliError::Usage(format!(
            "network maps R^{} → R^{}, target needs R^1 → R^{d}",
            network.input_dim(),
            network.output_dim()
        )));
    }
    let (alpha, beta) = box_params(bounds, d)?.unwrap_or((1.0, vec![0.0; d]));
    let mut checks = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut exact = vec![0.0; d];
    for _ in 0..EQUIVALENCE_POINTS {
        let x: f64 = rng.gen();
        let y = network.forward(&[x])?;
        spec.eval_into(x, &mut exact);
        for c in 0..d {
            worst = worst.max((y[c] - (alpha * exact[c] + beta[c])).abs());
        }
    }
    let tol = EQUIVALENCE_TOL * alpha.max(1.0);
    checks.push(Check { name: "network_vs_map", value: worst, threshold: tol, pass: worst < tol });

    let inverse_beta: Vec<f64> = beta.iter().map(|b| -b / alpha).collect();
    let unit = rescale_output(network, 1.0 / alpha, &inverse_beta)?;
    let (deviation, grid_bound) = subcube_deviation(&unit, &spec, mesh)?;
    checks.push(Check {
        name: "network_subcube_deviation",
        value: deviation,
        threshold: tolerance,
        pass: deviation < tolerance,
    });
    checks.push(Check {
        name: "grid_error_bound",
        value: grid_bound,
        threshold: tolerance,
        pass: grid_bound < tolerance,
    });

    let exactness = subcube_exactness(&spec, mesh)?;
    checks.push(Check {
        name: "t_interval_sums",
        value: exactness.t_sum_deviation,
        threshold: 1e-10,
        pass: exactness.t_sum_deviation < 1e-10,
    });

    let report = w_bound_report(&spec)?;
    checks.push(Check {
        name: "wasserstein_estimate",
        value: report.measured,
        threshold: report.bound + report.slack,
        pass: report.within(),
    });

    let depth = network.stats().depth;
    let expected_depth = if d == 1 { 2 } else { (s as usize + 3) * d - s as usize - 1 };
    checks.push(Check {
        name: "depth",
        value: depth as f64,
        threshold: expected_depth as f64,
        pass: depth == expected_depth,
    });

    if let Some(dd) = target.weight_denominator() {
        // The audit applies to the network on the unit cube.
        let audit = audit_quantization(&unit, dd);
        checks.push(Check {
            name: "quantization_audit",
            value: audit.neither.len() as f64,
            threshold: 0.0,
            pass: audit.pass(),
        });
    }
    Ok(VerifyReport { checks })
}

/// One row of [`decay`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub s: u32,
    pub bound: f64,
    pub measured: f64,
    pub connectivity: usize,
    pub depth: usize,
    pub bits: Option<u64>,
}

/// Sweeps `s` over `range`: bound `√d/(n 2^s)`, measured distance estimate, `M`, `L` and bits.
pub fn decay(target: &Target, range: std::ops::RangeInclusive<u32>) -> Result<Vec<DecayRow>, CliError> {
    if range.is_empty() {
        return Err(CliError::Usage(format!("empty s range {}..={}", range.start(), range.end())));
    }
    range
        .map(|s| {
            let spec = target.spec(s)?;
            let report = w_bound_report(&spec)?;
            let net = build_transport_net(&spec)?;
            let stats = net.stats();
            let bits = target.weight_denominator().map(|dd| encoded_bit_length(&net, dd)).transpose()?;
            Ok(DecayRow {
                s,
                bound: report.bound,
                measured: report.measured,
                connectivity: stats.connectivity,
                depth: stats.depth,
                bits,
            })
        })
        .collect()
}

/// `count` images `forward(u)` of `u ~ U[0,1)` drawn from a ChaCha8 stream seeded with `seed`.
pub fn sample(network: &ReluNetwork, count: i64, seed: u64) -> Result<Vec<Vec<f64>>, CliError> {
    if count <= 0 {
        return Err(CliError::Usage(format!("--count must be positive, got {count}")));
    }
    if network.input_dim() != 1 {
        return Err(CliError::Usage(format!("network input dimension is {}, expected 1", network.input_dim())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| Ok(network.forward(&[rng.gen::<f64>()])?)).collect()
}

fn optional(x: Option<impl ToString>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Runs a parsed command line, writing reports to `stdout` and summaries to `stderr`.
pub fn run(cli: &Cli, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> Result<Outcome, CliError> {
    let mut out = String::new();
    let mut note = String::new();
    let outcome = match &cli.command {
        Command::Quantize(args) => {
            let text = read(&args.input)?;
            let (input, n) = if args.grid {
                let grid = CellMassGrid::from_json(&text)?;
                let n = args.n.unwrap_or(grid.resolution());
                if n != grid.resolution() {
                    return Err(CliError::Usage(format!(
                        "-n {n} differs from the grid resolution {}",
                        grid.resolution()
                    )));
                }
                (InputDistribution::Grid(grid), n)
            } else {
                let n = args.n.ok_or_else(|| CliError::Usage("-n is required for sample input".into()))?;
                (parse_samples(&text)?, n)
            };
            let report = quantize(&input, n, args.delta)?;
            let json = report.histogram.to_json()?;
            match &args.output {
                Some(path) => write(path, &json)?,
                None => out.push_str(&format!("{json}\n")),
            }
            let d = input.dim();
            if args.output.is_some() {
                writeln!(out, "d\tn\tdelta_denominator\tquantization_bound\tpositivity_guaranteed").unwrap();
                writeln!(out, "{d}\t{n}\t{}\t{}\t{}", report.denominator, report.bound, report.positivity_guaranteed)
                    .unwrap();
            }
            writeln!(
                note,
                "quantized d={d} n={n} with δ=1/{}; W(ν, histogram) ≤ {:.6}{}",
                report.denominator,
                report.bound,
                if report.positivity_guaranteed {
                    ""
                } else {
                    " (warning: δ ≥ 1/(n(n−1)), positivity not guaranteed)"
                }
            )
            .unwrap();
            Outcome::Pass
        }
        Command::Compile(args) => {
            let target = Target::from_json(&read(&args.input)?, args.allow_unquantized)?;
            let report = compile(&target, args.s, &args.bounds)?;
            write(&args.output, &report.network.to_json()?)?;
            writeln!(out, "connectivity\tdepth\twidth\taudit\tbits\tbound\tbox_bound").unwrap();
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                report.connectivity,
                report.depth,
                report.width,
                optional(report.audit_pass.map(|p| if p { "pass" } else { "fail" })),
                optional(report.bits),
                report.bound,
                optional(report.box_bound)
            )
            .unwrap();
            writeln!(
                note,
                "compiled network: M={} L={} W={}; W(M#U, p) ≤ {:.6}",
                report.connectivity, report.depth, report.width, report.bound
            )
            .unwrap();
            match report.audit_pass {
                Some(false) => Outcome::Fail,
                _ => Outcome::Pass,
            }
        }
        Command::Verify(args) => {
            let target = Target::from_json(&read(&args.input)?, args.allow_unquantized)?;
            let network = ReluNetwork::from_json(&read(&args.network)?)?;
            let report = verify(&network, &target, args.s, &args.bounds, args.mesh, args.tolerance, args.seed)?;
            writeln!(out, "check\tvalue\tthreshold\tpass").unwrap();
            for c in &report.checks {
                writeln!(out, "{}\t{}\t{}\t{}", c.name, c.value, c.threshold, c.pass).unwrap();
            }
            let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
            if failed.is_empty() {
                writeln!(note, "verification passed ({} checks)", report.checks.len()).unwrap();
                Outcome::Pass
            } else {
                writeln!(note, "verification FAILED: {}", failed.join(", ")).unwrap();
                Outcome::Fail
            }
        }
        Command::Decay(args) => {
            let target = Target::from_json(&read(&args.input)?, args.allow_unquantized)?;
            let rows = decay(&target, args.s_min..=args.s_max)?;
            writeln!(out, "s\tbound\tmeasured\tconnectivity\tdepth\tbits").unwrap();
            for r in &rows {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    r.s,
                    r.bound,
                    r.measured,
                    r.connectivity,
                    r.depth,
                    optional(r.bits)
                )
                .unwrap();
            }
            writeln!(note, "swept s = {}..={}", args.s_min, args.s_max).unwrap();
            Outcome::Pass
        }
        Command::Sample(args) => {
            let network = ReluNetwork::from_json(&read(&args.network)?)?;
            let rows = sample(&network, args.count, args.seed)?;
            let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            for row in &rows {
                writer.write_record(row.iter().map(|v| v.to_string()))?;
            }
            let bytes = writer.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
            let text = String::from_utf8(bytes).expect("CSV of numbers is UTF-8");
            match &args.output {
                Some(path) => write(path, &text)?,
                None => out.push_str(&text),
            }
            writeln!(note, "drew {} samples with seed {}", rows.len(), args.seed).unwrap();
            Outcome::Pass
        }
    };
    let io = |source| CliError::Io { path: PathBuf::from("<stdio>"), source };
    stdout.write_all(out.as_bytes()).map_err(io)?;
    stderr.write_all(note.as_bytes()).map_err(io)?;
    Ok(outcome)
}
