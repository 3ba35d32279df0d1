//! Experiment runners behind the command-line tool: BER/BMI sweeps, training
//! runs and the self-test.
//!
//! Settings come from a flat `key = value` file (`#` starts a comment) and are
//! overridden by command-line flags. Recognized keys:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `channel` | `proakis-a`, `proakis-b`, `identity` or comma-separated taps | `proakis-b` |
//! | `modulation` | `bpsk` or `16qam` | `bpsk` |
//! | `detectors` | comma list of `kind`, `kind@params-file` or `label=kind@params-file` | `bcjr,mmse,ffg,ufg` |
//! | `ebn0_min`, `ebn0_max`, `ebn0_step` | Eb/N0 grid in dB | `0`, `12`, `2` |
//! | `frames` | frame cap per grid point | `10000` |
//! | `min_errors` | stop a grid point after this many bit errors | `200` |
//! | `seed` | master seed | `1` |
//! | `iterations` | message-passing iterations N | `10` |
//! | `block_len` | symbols per frame K | `500` |
//! | `mmse_order` | MMSE filter length | `30` |
//! | `params` | parameter file for weighted detectors without their own `@file` | none |
//! | `out` | output CSV path (sweep) or parameter path (train) | stdout / required |
//! | `kind` | detector to train | `ufg` |
//! | `train_ebn0` | training Eb/N0 in dB | `10` |
//! | `preproc_len`, `preproc_advance` | GFG preprocessor length and alignment | `7`, centred |
//! | `batch_size`, `steps`, `learning_rate` | optimizer settings | `32`, `2000`, `0.001` |
//! | `validation_frames`, `validation_every` | fixed validation set for best-parameter selection | `0`, `50` |
//! | `log` | training-log CSV path | none |
//!
//! Sweep CSV columns: `ebn0_db`, then for each detector label
//! `<label>_ber,<label>_bmi,<label>_frames`. The BMI cell is empty for
//! hard-decision detectors (MMSE).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::channel::{random_symbols, transmit, ChannelModel, TransmissionFrame};
use crate::constellation::{ebn0_to_sigma2, Constellation};
use crate::detectors::{detect, DetectorKind, DetectorParams, DEFAULT_ITERATIONS};
use crate::error::{Error, Result};
use crate::metrics::{bmd_llrs, MetricAccumulator};
use crate::params::{load_params_for, save_params};
use crate::reference::{bcjr_map, mmse_equalize};
use crate::training::{frame_rng, log_to_csv, train, StepRecord, TrainingConfig};

/// Flat key-value settings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

const KNOWN_KEYS: &[&str] = &[
    "channel",
    "modulation",
    "detectors",
    "ebn0_min",
    "ebn0_max",
    "ebn0_step",
    "frames",
    "min_errors",
    "seed",
    "iterations",
    "block_len",
    "mmse_order",
    "params",
    "out",
    "kind",
    "train_ebn0",
    "preproc_len",
    "preproc_advance",
    "batch_size",
    "steps",
    "learning_rate",
    "validation_frames",
    "validation_every",
    "log",
];

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses a configuration file.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            s.set(k.trim(), v.trim())?;
        }
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let key = key.replace('-', "_");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown setting `{key}`")));
        }
        self.0.insert(key, value.into());
        Ok(())
    }

    /// Later settings win.
    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`"))),
        }
    }
}

/// A detector column of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepDetector {
    Bcjr,
    Mmse,
    Graph {
        kind: DetectorKind,
        params: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorSpec {
    pub label: String,
    pub detector: SweepDetector,
}

/// Parses `kind`, `kind@file` or `label=kind@file`.
pub fn parse_detector(token: &str) -> Result<DetectorSpec> {
    let token = token.trim();
    let (label, rest) = match token.split_once('=') {
        Some((l, r)) => (Some(l.trim().to_string()), r.trim()),
        None => (None, token),
    };
    let (kind, file) = match rest.split_once('@') {
        Some((k, f)) => (k.trim().to_ascii_lowercase(), Some(PathBuf::from(f.trim()))),
        None => (rest.to_ascii_lowercase(), None),
    };
    let detector = match kind.as_str() {
        "bcjr" | "mmse" if file.is_some() => {
            return Err(Error::Config(format!("`{kind}` takes no parameter file")))
        }
        "bcjr" => SweepDetector::Bcjr,
        "mmse" => SweepDetector::Mmse,
        other => SweepDetector::Graph {
            kind: other.parse()?,
            params: file,
        },
    };
    let label = label.unwrap_or(kind);
    if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(Error::Config(format!("invalid detector label `{label}`")));
    }
    Ok(DetectorSpec { label, detector })
}

/// Sweep settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub channel: ChannelModel,
    pub constellation: Constellation,
    pub detectors: Vec<DetectorSpec>,
    pub ebn0_db: Vec<f64>,
    pub max_frames: usize,
    pub min_errors: usize,
    pub seed: u64,
    pub iterations: usize,
    pub block_len: usize,
    pub mmse_order: usize,
    pub default_params: Option<PathBuf>,
}

/// Inclusive grid `min, min+step, …, max`.
pub fn ebn0_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || max < min || !min.is_finite() || !max.is_finite() {
        return Err(Error::Config(format!("invalid Eb/N0 grid {min}..{max} step {step}")));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| min + i as f64 * step).collect())
}

impl SweepConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let channel = ChannelModel::by_name(s.get("channel").unwrap_or("proakis-b"))?;
        let constellation = Constellation::new(s.get("modulation").unwrap_or("bpsk").parse()?);
        let detectors = s
            .get("detectors")
            .unwrap_or("bcjr,mmse,ffg,ufg")
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(parse_detector)
            .collect::<Result<Vec<_>>>()?;
        if detectors.is_empty() {
            return Err(Error::Config("no detectors given".into()));
        }
        for (i, d) in detectors.iter().enumerate() {
            if detectors[..i].iter().any(|e| e.label == d.label) {
                return Err(Error::Config(format!(
                    "duplicate detector label `{}`; use label=kind@file",
                    d.label
                )));
            }
        }
        let ebn0_db = ebn0_grid(
            s.parsed("ebn0_min", 0.0)?,
            s.parsed("ebn0_max", 12.0)?,
            s.parsed("ebn0_step", 2.0)?,
        )?;
        let cfg = SweepConfig {
            channel,
            constellation,
            detectors,
            ebn0_db,
            max_frames: s.parsed("frames", 10_000)?,
            min_errors: s.parsed("min_errors", 200)?,
            seed: s.parsed("seed", 1)?,
            iterations: s.parsed("iterations", DEFAULT_ITERATIONS)?,
            block_len: s.parsed("block_len", 500)?,
            mmse_order: s.parsed("mmse_order", 30)?,
            default_params: s.get("params").map(PathBuf::from),
        };
        if cfg.max_frames == 0 || cfg.block_len == 0 || cfg.iterations == 0 || cfg.mmse_order == 0 {
            return Err(Error::Config(
                "frames, block_len, iterations and mmse_order must be positive".into(),
            ));
        }
        Ok(cfg)
    }
}

/// One detector's result at one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub ber: f64,
    pub bmi: Option<f64>,
    pub frames: usize,
    pub errors: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub ebn0_db: f64,
    pub cells: Vec<CellResult>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub labels: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ebn0_db");
        for l in &self.labels {
            let _ = write!(s, ",{l}_ber,{l}_bmi,{l}_frames");
        }
        s.push('\n');
        for row in &self.rows {
            let _ = write!(s, "{}", row.ebn0_db);
            for c in &row.cells {
                let bmi = c.bmi.map(|b| b.to_string()).unwrap_or_default();
                let _ = write!(s, ",{},{},{}", c.ber, bmi, c.frames);
            }
            s.push('\n');
        }
        s
    }

    /// Column of one detector.
    pub fn series(&self, label: &str) -> Option<Vec<&CellResult>> {
        let i = self.labels.iter().position(|l| l == label)?;
        Some(self.rows.iter().map(|r| &r.cells[i]).collect())
    }
}

enum Prepared {
    Bcjr,
    Mmse(usize),
    Graph(Box<DetectorParams>),
}

fn prepare(spec: &DetectorSpec, cfg: &SweepConfig) -> Result<Prepared> {
    Ok(match &spec.detector {
        SweepDetector::Bcjr => Prepared::Bcjr,
        SweepDetector::Mmse => Prepared::Mmse(cfg.mmse_order),
        SweepDetector::Graph { kind, params } => {
            let path = params.as_ref().or(cfg.default_params.as_ref());
            let p = match path {
                Some(path) => {
                    let p = load_params_for(path, &cfg.channel, &cfg.constellation)?;
                    if p.kind != *kind {
                        return Err(Error::Config(format!(
                            "{} holds {} parameters, not {kind}",
                            path.display(),
                            p.kind
                        )));
                    }
                    if p.block_len != cfg.block_len {
                        return Err(Error::Config(format!(
                            "{} was trained for block length {}, sweep uses {}",
                            path.display(),
                            p.block_len,
                            cfg.block_len
                        )));
                    }
                    p
                }
                None if *kind == DetectorKind::Gfg => {
                    return Err(Error::Config(format!(
                        "detector `{}` needs a parameter file (gfg@file or --params)",
                        spec.label
                    )))
                }
                None => DetectorParams::unit(*kind, cfg.iterations, cfg.block_len, &cfg.channel, &cfg.constellation)?,
            };
            Prepared::Graph(Box::new(p))
        }
    })
}

/// Frames simulated per parallel chunk; the stopping rule is checked between chunks.
pub const SWEEP_CHUNK: usize = 8;

enum FrameOutcome {
    Soft(crate::metrics::LlrFrame, Vec<u8>),
    Hard(Vec<usize>, Vec<usize>),
}

fn run_frame(det: &Prepared, frame: &TransmissionFrame, cfg: &SweepConfig) -> Result<FrameOutcome> {
    let cons = &cfg.constellation;
    Ok(match det {
        Prepared::Bcjr => FrameOutcome::Soft(
            bmd_llrs(&bcjr_map(frame, &cfg.channel, cons)?, cons),
            frame.bits(cons),
        ),
        Prepared::Mmse(order) => {
            let out = mmse_equalize(frame, &cfg.channel, cons, *order)?;
            FrameOutcome::Hard(out.decisions, frame.symbols.clone())
        }
        Prepared::Graph(p) => FrameOutcome::Soft(
            bmd_llrs(&detect(frame, &cfg.channel, cons, p)?, cons),
            frame.bits(cons),
        ),
    })
}

fn sweep_frame(cfg: &SweepConfig, point: usize, index: usize) -> Result<TransmissionFrame> {
    let sigma2 = ebn0_to_sigma2(cfg.ebn0_db[point], &cfg.constellation);
    let seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(point as u64);
    let mut rng = frame_rng(seed, index as u64);
    let syms = random_symbols(&mut rng, &cfg.constellation, cfg.block_len);
    transmit(&syms, &cfg.channel, &cfg.constellation, sigma2, &mut rng)
}

/// Simulates one (detector, Eb/N0) cell.
fn run_cell(det: &Prepared, cfg: &SweepConfig, point: usize) -> Result<CellResult> {
    let mut acc = MetricAccumulator::new();
    let mut next = 0;
    while next < cfg.max_frames && acc.errors < cfg.min_errors {
        let end = (next + SWEEP_CHUNK).min(cfg.max_frames);
        let outcomes: Vec<Result<FrameOutcome>> = (next..end)
            .into_par_iter()
            .map(|i| run_frame(det, &sweep_frame(cfg, point, i)?, cfg))
            .collect();
        for o in outcomes {
            match o? {
                FrameOutcome::Soft(llrs, bits) => acc.add_soft(&llrs, &bits)?,
                FrameOutcome::Hard(dec, sent) => acc.add_hard(&dec, &sent, &cfg.constellation),
            }
        }
        next = end;
    }
    Ok(CellResult {
        ber: acc.ber(),
        bmi: acc.bmi(),
        frames: acc.frames,
        errors: acc.errors,
    })
}

/// Runs a full sweep. Identical configurations give identical results.
pub fn run_sweep(cfg: &SweepConfig, mut progress: impl FnMut(f64, &str, &CellResult)) -> Result<SweepResult> {
    let prepared = cfg
        .detectors
        .iter()
        .map(|d| prepare(d, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(cfg.ebn0_db.len());
    for (point, &db) in cfg.ebn0_db.iter().enumerate() {
        let mut cells = Vec::with_capacity(prepared.len());
        for (spec, det) in cfg.detectors.iter().zip(&prepared) {
            let cell = run_cell(det, cfg, point)?;
            progress(db, &spec.label, &cell);
            cells.push(cell);
        }
        rows.push(SweepRow { ebn0_db: db, cells });
    }
    Ok(SweepResult {
        labels: cfg.detectors.iter().map(|d| d.label.clone()).collect(),
        rows,
    })
}

/// Training-run settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRunConfig {
    pub kind: DetectorKind,
    pub channel: ChannelModel,
    pub constellation: Constellation,
    pub training: TrainingConfig,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
}

impl TrainRunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self> {
        let d = TrainingConfig::default();
        let training = TrainingConfig {
            iterations: s.parsed("iterations", d.iterations)?,
            block_len: s.parsed("block_len", d.block_len)?,
            ebn0_db: s.parsed("train_ebn0", d.ebn0_db)?,
            preprocessor_len: s.parsed("preproc_len", d.preprocessor_len)?,
            preprocessor_advance: match s.get("preproc_advance") {
                None | Some("centre") | Some("center") => None,
                Some(_) => Some(s.parsed("preproc_advance", 0usize)?),
            },
            batch_size: s.parsed("batch_size", d.batch_size)?,
            steps: s.parsed("steps", d.steps)?,
            learning_rate: s.parsed("learning_rate", d.learning_rate)?,
            seed: s.parsed("seed", d.seed)?,
            validation_frames: s.parsed("validation_frames", d.validation_frames)?,
            validation_every: s.parsed("validation_every", d.validation_every)?,
        };
        if training.iterations == 0 || training.block_len == 0 || training.batch_size == 0 {
            return Err(Error::Config("iterations, block_len and batch_size must be positive".into()));
        }
        Ok(TrainRunConfig {
            kind: s.get("kind").unwrap_or("ufg").parse()?,
            channel: ChannelModel::by_name(s.get("channel").unwrap_or("proakis-b"))?,
            constellation: Constellation::new(s.get("modulation").unwrap_or("bpsk").parse()?),
            training,
            out: s
                .get("out")
                .map(PathBuf::from)
                .ok_or_else(|| Error::Config("training needs an output parameter file (--out)".into()))?,
            log: s.get("log").map(PathBuf::from),
        })
    }
}

/// Trains, then writes the parameter file and optional log CSV.
pub fn run_train(cfg: &TrainRunConfig, progress: impl FnMut(&StepRecord)) -> Result<crate::training::TrainingOutcome> {
    let outcome = train(cfg.kind, &cfg.channel, &cfg.constellation, &cfg.training, progress)?;
    save_params(&outcome.params, &cfg.out)?;
    if let Some(log) = &cfg.log {
        std::fs::write(log, log_to_csv(&outcome.log))?;
    }
    Ok(outcome)
}

/// Result of one self-test check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:width$}  result  detail", "check");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:width$}  {}    {}",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.detail
            );
        }
        s
    }
}

/// Runs the oracle-equivalence and gradient checks. With `inject_fault` the
/// sign of the interaction factors is flipped, which must make the
/// trellis-consistency checks fail.
pub fn run_selftest(inject_fault: bool) -> SelftestReport {
    let _guard = crate::detectors::FaultGuard::set(inject_fault);
    let checks = crate::selftest::all_checks()
        .into_iter()
        .map(|(name, f)| match f() {
            Ok(detail) => CheckResult {
                name,
                passed: true,
                detail,
            },
            Err(detail) => CheckResult {
                name,
                passed: false,
                detail,
            },
        })
        .collect();
    SelftestReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_tokens() {
        assert_eq!(
            parse_detector("bcjr").unwrap(),
            DetectorSpec {
                label: "bcjr".into(),
                detector: SweepDetector::Bcjr
            }
        );
        let d = parse_detector("nbp=ufg@/tmp/x.params").unwrap();
        assert_eq!(d.label, "nbp");
        assert_eq!(
            d.detector,
            SweepDetector::Graph {
                kind: DetectorKind::Ufg,
                params: Some(PathBuf::from("/tmp/x.params"))
            }
        );
        assert!(matches!(parse_detector("viterbi"), Err(Error::Config(_))));
        assert!(matches!(parse_detector("mmse@f"), Err(Error::Config(_))));
    }

    #[test]
    fn grid_is_inclusive() {
        assert_eq!(ebn0_grid(0.0, 12.0, 2.0).unwrap(), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
        assert_eq!(ebn0_grid(5.0, 5.0, 1.0).unwrap(), vec![5.0]);
        assert!(ebn0_grid(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn settings_parse_and_reject_unknown_keys() {
        let s = Settings::parse("# comment\nchannel = proakis-a\nebn0-min = 3 # trailing\n").unwrap();
        assert_eq!(s.get("channel"), Some("proakis-a"));
        assert_eq!(s.get("ebn0_min"), Some("3"));
        assert!(matches!(Settings::parse("colour = red"), Err(Error::Config(_))));
        assert!(matches!(Settings::parse("just words"), Err(Error::Config(_))));
    }

    #[test]
    fn gfg_without_params_is_config_error() {
        let mut s = Settings::new();
        s.set("detectors", "gfg").unwrap();
        s.set("block_len", "10").unwrap();
        s.set("frames", "1").unwrap();
        let cfg = SweepConfig::from_settings(&s).unwrap();
        assert!(matches!(run_sweep(&cfg, |_, _, _| {}), Err(Error::Config(_))));
    }

    #[test]
    fn csv_layout() {
        let mut s = Settings::new();
        for (k, v) in [
            ("detectors", "bcjr,mmse,ffg,ufg"),
            ("block_len", "20"),
            ("frames", "8"),
            ("ebn0_min", "0"),
            ("ebn0_max", "12"),
            ("ebn0_step", "2"),
            ("iterations", "3"),
        ] {
            s.set(k, v).unwrap();
        }
        let cfg = SweepConfig::from_settings(&s).unwrap();
        let res = run_sweep(&cfg, |_, _, _| {}).unwrap();
        let csv = res.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 8);
        assert!(lines[0].starts_with("ebn0_db,bcjr_ber,bcjr_bmi,bcjr_frames,mmse_ber,mmse_bmi,"));
        for row in &lines[1..] {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols.len(), 13);
            assert_eq!(cols[5], "", "mmse has no BMI");
        }
        for row in &res.rows {
            for c in &row.cells {
                assert!((0.0..=0.6).contains(&c.ber));
                assert!(c.bmi.map_or(true, |b| b <= 1.0));
            }
        }
    }
}
