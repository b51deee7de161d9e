//! Experiment orchestration: flat key-value config files, sweep execution,
//! deterministic seeding and CSV emission.

use cavteleport::error::{Error, Result};
use cavteleport::sme::SmeParams;
use cavteleport::teleport::{
    self, derive_rng, haar_input_state, ProtocolConfig, SweepPoint,
};
use cavteleport::transmon::{self, CalibrationReport};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    None,
    Eta,
    Time,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::Eta => "eta",
            SweepAxis::Time => "time",
        }
    }
}

/// Everything a run needs: protocol parameters plus artifact plumbing.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub protocol: ProtocolConfig,
    pub out_dir: PathBuf,
    pub sweep: SweepAxis,
    pub grid: Vec<f64>,
    pub workers: usize,
    pub debug_records: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            protocol: ProtocolConfig::default(),
            out_dir: PathBuf::from("."),
            sweep: SweepAxis::None,
            grid: Vec::new(),
            workers: 1,
            debug_records: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.protocol.validate()?;
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        if self.sweep != SweepAxis::None && self.grid.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "sweep = {} needs a nonempty grid",
                self.sweep.label()
            )));
        }
        Ok(())
    }
}

fn cfg_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| {
        cfg_err(
            line,
            format!(
                "value `{raw}` for key `{key}` is not a valid {}",
                std::any::type_name::<T>()
            ),
        )
    })
}

/// Parse a flat `key = value` config (# comments, blank lines allowed).
/// Omitted keys keep the documented defaults; unknown keys, type mismatches
/// and range violations are reported with their line number.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| cfg_err(line_no, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        let p = &mut cfg.protocol;
        match key {
            "beta" => p.beta = parse_num(line_no, key, value)?,
            "chi_over_kappa" => p.chi_over_kappa = parse_num(line_no, key, value)?,
            "drive_over_chi" => p.drive_over_chi = parse_num(line_no, key, value)?,
            "t_beta" => p.t_beta = parse_num(line_no, key, value)?,
            "t_m" => p.t_m = parse_num(line_no, key, value)?,
            "t_w" => p.t_w = parse_num(line_no, key, value)?,
            "eta" => {
                let eta: f64 = parse_num(line_no, key, value)?;
                if !(0.0..=1.0).contains(&eta) {
                    return Err(cfg_err(line_no, format!("eta = {eta} outside [0, 1]")));
                }
                p.eta = eta;
            }
            "n_fock" => p.n_fock = parse_num(line_no, key, value)?,
            "dt" => {
                let dt: f64 = parse_num(line_no, key, value)?;
                if dt <= 0.0 {
                    return Err(cfg_err(line_no, format!("dt = {dt} must be positive")));
                }
                p.dt = dt;
            }
            "seed" => p.seed = parse_num(line_no, key, value)?,
            "n_states" => p.n_states = parse_num(line_no, key, value)?,
            "n_traj_per_state" => p.n_traj_per_state = parse_num(line_no, key, value)?,
            "sweep" => {
                cfg.sweep = match value {
                    "none" => SweepAxis::None,
                    "eta" => SweepAxis::Eta,
                    "time" => SweepAxis::Time,
                    other => {
                        return Err(cfg_err(
                            line_no,
                            format!("sweep axis `{other}` is not one of none/eta/time"),
                        ))
                    }
                }
            }
            "grid" => {
                cfg.grid = value
                    .split(',')
                    .map(|s| parse_num(line_no, key, s.trim()))
                    .collect::<Result<Vec<f64>>>()?;
                if cfg.grid.is_empty() {
                    return Err(cfg_err(line_no, "grid must not be empty"));
                }
            }
            "workers" => {
                cfg.workers = parse_num(line_no, key, value)?;
                if cfg.workers == 0 {
                    return Err(cfg_err(line_no, "workers must be at least 1"));
                }
            }
            "debug_records" => {
                cfg.debug_records = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    other => {
                        return Err(cfg_err(line_no, format!("`{other}` is not a boolean")))
                    }
                }
            }
            "out" => cfg.out_dir = PathBuf::from(value),
            unknown => return Err(cfg_err(line_no, format!("unknown key `{unknown}`"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_config(&text)
}

/// One emitted row of results.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub axis: String,
    pub axis_value: f64,
    pub strategy: String,
    pub mean_fidelity: f64,
    pub stderr: f64,
    pub n: usize,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    fn push_point(&mut self, axis: SweepAxis, point: &SweepPoint) {
        let s = &point.stats;
        for (strategy, mean, err) in [
            ("direct", s.mean_direct, s.stderr_direct),
            ("pqs", s.mean_pqs, s.stderr_pqs),
        ] {
            self.rows.push(ResultRow {
                axis: axis.label().to_string(),
                axis_value: point.axis_value,
                strategy: strategy.to_string(),
                mean_fidelity: mean,
                stderr: err,
                n: s.n,
                fallbacks: s.fallbacks,
            });
        }
    }

    /// Serialize with full-precision floats (Rust's shortest round-trip
    /// representation), LF endings.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = String::from("axis,axis_value,strategy,mean_fidelity,stderr,n,fallbacks\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.axis, r.axis_value, r.strategy, r.mean_fidelity, r.stderr, r.n, r.fallbacks
            )
            .expect("write to String");
        }
        w.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty results csv".into()))??;
        if header.trim() != "axis,axis_value,strategy,mean_fidelity,stderr,n,fallbacks" {
            return Err(Error::InvalidArgument(format!("bad header `{header}`")));
        }
        let mut rows = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(cfg_err(idx + 2, format!("expected 7 fields, got {}", f.len())));
            }
            rows.push(ResultRow {
                axis: f[0].to_string(),
                axis_value: parse_num(idx + 2, "axis_value", f[1])?,
                strategy: f[2].to_string(),
                mean_fidelity: parse_num(idx + 2, "mean_fidelity", f[3])?,
                stderr: parse_num(idx + 2, "stderr", f[4])?,
                n: parse_num(idx + 2, "n", f[5])?,
                fallbacks: parse_num(idx + 2, "fallbacks", f[6])?,
            });
        }
        Ok(ResultTable { rows })
    }

    pub fn summary(&self) -> String {
        let mut s = String::from(
            "axis       value    strategy  mean_fidelity  stderr      n     fallbacks\n",
        );
        for r in &self.rows {
            writeln!(
                s,
                "{:<10} {:<8.4} {:<9} {:<14.6} {:<11.3e} {:<5} {}",
                r.axis, r.axis_value, r.strategy, r.mean_fidelity, r.stderr, r.n, r.fallbacks
            )
            .expect("write to String");
        }
        s
    }
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(f)
}

/// Execute the configured experiment (single point or sweep) and write
/// results.csv plus optional debug records into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let points = in_pool(cfg.workers, || match cfg.sweep {
        SweepAxis::None => Ok(vec![SweepPoint {
            axis_value: 0.0,
            stats: teleport::run_ensemble(&cfg.protocol)?,
        }]),
        SweepAxis::Eta => teleport::sweep_efficiency(&cfg.protocol, &cfg.grid),
        SweepAxis::Time => teleport::sweep_time(&cfg.protocol, &cfg.grid),
    })?;
    let mut table = ResultTable::default();
    for p in &points {
        table.push_point(cfg.sweep, p);
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("results.csv");
    table.write_csv(std::fs::File::create(path)?)?;
    if cfg.debug_records {
        for (idx, p) in points.iter().enumerate() {
            let proto = match cfg.sweep {
                SweepAxis::None => cfg.protocol.clone(),
                SweepAxis::Eta => ProtocolConfig {
                    eta: p.axis_value,
                    ..cfg.protocol.clone()
                },
                SweepAxis::Time => cfg.protocol.with_total_time(p.axis_value),
            };
            write_debug_record(&proto, &cfg.out_dir, idx as u64)?;
        }
    }
    Ok(table)
}

fn write_debug_record(proto: &ProtocolConfig, out_dir: &Path, id: u64) -> Result<()> {
    let psi = haar_input_state(proto.seed, 0);
    let mut rng = derive_rng(proto.seed, 0, 0);
    let run = teleport::run_trajectory(proto, &psi, &mut rng)?;
    write_record_files(&run.record, out_dir, id)
}

pub fn write_record_files(
    record: &cavteleport::HomodyneRecord,
    out_dir: &Path,
    id: u64,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let csv = out_dir.join(format!("record_{id}.csv"));
    let meta = out_dir.join(format!("record_{id}.meta"));
    record.write_csv(std::fs::File::create(csv)?)?;
    record.write_meta(std::fs::File::create(meta)?)?;
    Ok(())
}

/// Simulate one trajectory, write its record, and report both decisions
/// together with the retrodicted probabilities.
pub fn dump_trajectory(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    let proto = &cfg.protocol;
    let psi = haar_input_state(proto.seed, 0);
    let mut rng = derive_rng(proto.seed, 0, 0);
    let run = teleport::run_trajectory(proto, &psi, &mut rng)?;
    write_record_files(&run.record, &cfg.out_dir, proto.seed)?;

    // recompute the retrodiction from the record alone for the report
    let (direct, pqs, fallback) = teleport::decisions_from_record(proto, &run.record)?;
    let mut s = String::new();
    writeln!(s, "record_{0}.csv / record_{0}.meta written to {1}", proto.seed,
        cfg.out_dir.display())
        .expect("write to String");
    writeln!(s, "direct decision: {}", direct.label()).expect("write to String");
    writeln!(
        s,
        "pqs decision:    {}{}",
        pqs.label(),
        if fallback { " (degenerate, fell back to direct)" } else { "" }
    )
    .expect("write to String");
    writeln!(s, "pqs margin:      {:.6}", run.pqs_margin).expect("write to String");
    writeln!(s, "fidelity direct: {:.6}", run.fidelity_direct).expect("write to String");
    writeln!(s, "fidelity pqs:    {:.6}", run.fidelity_pqs).expect("write to String");
    Ok(s)
}

/// Reproduce both strategy decisions offline from a record CSV + meta pair.
pub fn replay_record(cfg: &ExperimentConfig, id: u64) -> Result<String> {
    let csv = BufReader::new(std::fs::File::open(cfg.out_dir.join(format!("record_{id}.csv")))?);
    let meta =
        BufReader::new(std::fs::File::open(cfg.out_dir.join(format!("record_{id}.meta")))?);
    let record = cavteleport::HomodyneRecord::read_csv_meta(csv, meta)?;
    let (direct, pqs, fallback) = teleport::decisions_from_record(&cfg.protocol, &record)?;
    Ok(format!(
        "direct decision: {}\npqs decision:    {}{}\n",
        direct.label(),
        pqs.label(),
        if fallback { " (degenerate, fell back to direct)" } else { "" }
    ))
}

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn mhz(angular_per_ns: f64) -> f64 {
    angular_per_ns / TWO_PI * 1000.0
}

/// Transmon calibration report at the reference device parameters,
/// formatted in the 2pi x MHz convention.
pub fn gate_calc_report() -> Result<(CalibrationReport, String)> {
    let (params, pulse) = transmon::reference_calibration();
    let report = transmon::solve_gate_time(&params, &pulse, -std::f64::consts::PI)?;
    let mut s = String::new();
    writeln!(s, "qubit frequency (parked): 2pi x {:.4} GHz",
        report.qubit_freq_parked / TWO_PI)
        .expect("write to String");
    writeln!(s, "anharmonicity:            2pi x {:.1} MHz", mhz(report.anharmonicity))
        .expect("write to String");
    writeln!(s, "chi (parked):             2pi x {:.4} MHz", mhz(report.chi_parked))
        .expect("write to String");
    writeln!(s, "chi (plateau):            2pi x {:.4} MHz", mhz(report.chi_plateau))
        .expect("write to String");
    writeln!(s, "solved t_pi:              {:.3} ns (phase {:.9} rad)", report.t_pi,
        report.accumulated_phase)
        .expect("write to String");
    writeln!(s, "reference pi/(2 chi):     {:.3} ns", report.reference_half)
        .expect("write to String");
    writeln!(s, "reference pi/chi:         {:.3} ns", report.reference_full)
        .expect("write to String");
    for w in &report.warnings {
        writeln!(s, "warning: {w}").expect("write to String");
    }
    Ok((report, s))
}

/// Reduced-space SME parameters for quick sanity runs (exposed for tests).
pub fn sme_params_of(cfg: &ExperimentConfig) -> SmeParams {
    cfg.protocol.sme_params()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let cfg = parse_config("").unwrap();
        let d = ProtocolConfig::default();
        assert_eq!(cfg.protocol.beta, d.beta);
        assert_eq!(cfg.protocol.chi_over_kappa, 13.5);
        assert_eq!(cfg.protocol.drive_over_chi, 2.0);
        assert_eq!(cfg.protocol.t_beta / cfg.protocol.total_time(), 0.4);
        assert_eq!(cfg.sweep, SweepAxis::None);
        assert_eq!(cfg.workers, 1);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = parse_config("beta = 2\nbogus = 1\n").unwrap_err();
        match err {
            Error::Config { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("bogus"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn type_mismatch_reports_line() {
        let err = parse_config("n_fock = many\n").unwrap_err();
        match err {
            Error::Config { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn range_violations_rejected() {
        assert!(parse_config("eta = 1.5\n").is_err());
        assert!(parse_config("dt = -0.1\n").is_err());
        assert!(parse_config("workers = 0\n").is_err());
        assert!(parse_config("sweep = eta\n").is_err()); // no grid
    }

    #[test]
    fn sweep_grid_parses() {
        let cfg = parse_config("sweep = eta\ngrid = 0.1, 0.3, 0.5, 0.7, 0.9, 1.0\n").unwrap();
        assert_eq!(cfg.sweep, SweepAxis::Eta);
        assert_eq!(cfg.grid.len(), 6);
        assert_eq!(cfg.grid[1], 0.3);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let cfg = parse_config("# a comment\n\nbeta = 1.5 # trailing\n").unwrap();
        assert_eq!(cfg.protocol.beta, 1.5);
    }

    #[test]
    fn result_table_roundtrip_exact() {
        let table = ResultTable {
            rows: vec![
                ResultRow {
                    axis: "eta".into(),
                    axis_value: 0.30000000000000004,
                    strategy: "pqs".into(),
                    mean_fidelity: 0.7312345678912345,
                    stderr: 0.012345e-3,
                    n: 500,
                    fallbacks: 2,
                },
                ResultRow {
                    axis: "none".into(),
                    axis_value: 0.0,
                    strategy: "direct".into(),
                    mean_fidelity: 1.0 / 3.0,
                    stderr: 0.0,
                    n: 1,
                    fallbacks: 0,
                },
            ],
        };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let back = ResultTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(table, back);
        // LF endings only
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains('\r'));
    }

    #[test]
    fn gate_calc_reference_chi() {
        let (report, text) = gate_calc_report().unwrap();
        assert!((mhz(report.chi_plateau).abs() - 2.1).abs() < 0.05);
        assert!(text.contains("t_pi"));
    }
}
