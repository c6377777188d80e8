//! Scenario configs, named presets, and deterministic CSV output backing
//! the `ms-gpa` command-line tool.
//!
//! Configs are flat `key = value` text: one pair per line, lines starting
//! with `#` are comments, `channel.N.*` groups describe noise channels.
//! Angular frequencies are rad/s; the `omega_hz`, `nu_hz`, `delta_hz`, and
//! `channel.N.gamma_hz` spellings multiply by 2π on load and alias their
//! rad/s counterpart. A scenario is assembled by merging preset defaults,
//! then an optional config file, then command-line overrides; later
//! sources win key by key.
//!
//! CSV output is deterministic: floats carry 17 significant digits
//! (round-trip exact), rows end in `\n`, and files appear atomically via a
//! temp file and rename, so identical configs yield identical bytes.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::analysis;
use crate::dynamics::{self, NoiseChannel, NoiseKind, PropagationDiagnostics, TimeGrid, Trajectory};
use crate::gp::{self, GPTrace, MixedGpAccumulator};
use crate::model::MSParams;
use crate::ops::{self, StateVector};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Flat key = value parsing.

/// Rewrites `*_hz` convenience keys to their canonical rad/s form, scaling
/// the value by 2π. All other pairs pass through unchanged.
fn canonical_pair(key: &str, value: &str) -> Result<(String, String)> {
    let canon = match key {
        "omega_hz" => Some("omega_rad_s".to_string()),
        "nu_hz" => Some("nu_rad_s".to_string()),
        "delta_hz" => Some("delta_rad_s".to_string()),
        k if k.starts_with("channel.") && k.ends_with(".gamma_hz") => {
            Some(k.strip_suffix("_hz").expect("suffix checked").to_string())
        }
        _ => None,
    };
    match canon {
        None => Ok((key.to_string(), value.to_string())),
        Some(canon) => {
            let hz: f64 = value.trim().parse().map_err(|_| {
                Error::Config(format!("key `{key}`: expected a number, got `{value}`"))
            })?;
            // Display of f64 is shortest round-trip, so the conversion
            // stays deterministic.
            Ok((canon, format!("{}", hz * TAU)))
        }
    }
}

/// Parses one source of configuration. Duplicate keys within a single
/// source are rejected (after `*_hz` aliasing, so `omega_hz` duplicates
/// `omega_rad_s`); across sources later ones win.
fn parse_source(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{origin} line {}: expected `key = value`, got `{line}`",
                idx + 1
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::Config(format!("{origin} line {}: empty key", idx + 1)));
        }
        let (key, value) = canonical_pair(key, value)?;
        if let Some(first) = seen.insert(key.clone(), idx + 1) {
            return Err(Error::Config(format!(
                "{origin}: duplicate key `{key}` (lines {first} and {}; `*_hz` keys alias `*_rad_s`)",
                idx + 1
            )));
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

/// Parses a single `key=value` command-line override.
fn parse_override(arg: &str) -> Result<(String, String)> {
    let Some((key, value)) = arg.split_once('=') else {
        return Err(Error::Config(format!(
            "override `{arg}` is not of the form key=value"
        )));
    };
    let (key, value) = (key.trim(), value.trim());
    if key.is_empty() {
        return Err(Error::Config(format!("override `{arg}` has an empty key")));
    }
    canonical_pair(key, value)
}

/// Merges sources in order; later sources win key by key.
fn merge_sources(sources: &[Vec<(String, String)>]) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for source in sources {
        for (k, v) in source {
            map.insert(k.clone(), v.clone());
        }
    }
    map
}

// ---------------------------------------------------------------------------
// Scenario configuration.

/// Which state the geometric phase is computed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpTarget {
    /// Full qubits ⊗ mode state.
    Full,
    /// Two-qubit reduced state.
    Qubits,
    /// Single-qubit reduced state of the given factor (0 or 1).
    Subsystem(usize),
}

/// Noise strength given either directly or by its entanglement cost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChannelStrength {
    /// Rate γ in rad/s.
    Gamma(f64),
    /// Entanglement loss ΔE at the gate time; the rate is calibrated.
    TargetDeltaE(f64),
}

/// One configured noise channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelSpec {
    pub kind: NoiseKind,
    pub strength: ChannelStrength,
    /// Restricts a qubit channel to one qubit; `None` acts on both.
    pub target: Option<usize>,
}

/// Integration horizon, resolved against the parameter set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    /// Multiples of the gate time `T = 2π/|ε|`.
    GateTimes(f64),
    /// Multiples of the weak-field Rabi period `2π/|Ω̃|`.
    RabiPeriods(f64),
    Seconds(f64),
}

/// A channel with its rate fixed, remembering the ΔE target when one was
/// calibrated.
#[derive(Clone, Copy, Debug)]
pub struct ResolvedChannel {
    pub channel: NoiseChannel,
    pub delta_e: Option<f64>,
}

/// A fully validated scenario: physics, grid, channels, GP target, output.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub params: MSParams,
    pub initial_fock: usize,
    pub horizon: Horizon,
    pub steps: usize,
    /// Grid size of the `[0, T]` probe runs inside γ calibration.
    pub calibration_steps: usize,
    pub channels: Vec<ChannelSpec>,
    pub gp_target: GpTarget,
    pub out: PathBuf,
}

fn get_f64(map: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v.trim().parse::<f64>().map(Some).map_err(|_| {
            let hint = if v.contains(',') {
                " (lists are only accepted by sweep presets)"
            } else {
                ""
            };
            Error::Config(format!("key `{key}`: expected a number, got `{v}`{hint}"))
        }),
    }
}

fn get_usize(map: &BTreeMap<String, String>, key: &str) -> Result<Option<usize>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v.trim().parse::<usize>().map(Some).map_err(|_| {
            Error::Config(format!(
                "key `{key}`: expected a non-negative integer, got `{v}`"
            ))
        }),
    }
}

/// Channel kind from its config spelling.
pub fn kind_from_name(name: &str) -> Result<NoiseKind> {
    match name {
        "qubit_decay" => Ok(NoiseKind::QubitDecay),
        "qubit_dephasing" => Ok(NoiseKind::QubitDephasing),
        "motional_heating" => Ok(NoiseKind::MotionalHeating),
        "motional_dephasing" => Ok(NoiseKind::MotionalDephasing),
        "non_local" => Ok(NoiseKind::NonLocal),
        other => Err(Error::Config(format!(
            "unknown channel kind `{other}` (expected qubit_decay, qubit_dephasing, \
             motional_heating, motional_dephasing, or non_local)"
        ))),
    }
}

/// Config spelling of a channel kind.
pub fn kind_name(kind: NoiseKind) -> &'static str {
    match kind {
        NoiseKind::QubitDecay => "qubit_decay",
        NoiseKind::QubitDephasing => "qubit_dephasing",
        NoiseKind::MotionalHeating => "motional_heating",
        NoiseKind::MotionalDephasing => "motional_dephasing",
        NoiseKind::NonLocal => "non_local",
    }
}

fn parse_channels(map: &BTreeMap<String, String>) -> Result<Vec<ChannelSpec>> {
    let mut groups: BTreeMap<usize, BTreeMap<&str, &str>> = BTreeMap::new();
    for (key, value) in map {
        let Some(rest) = key.strip_prefix("channel.") else {
            continue;
        };
        let Some((idx, field)) = rest.split_once('.') else {
            return Err(Error::Config(format!(
                "key `{key}`: expected channel.N.field with N an integer"
            )));
        };
        let idx: usize = idx.parse().map_err(|_| {
            Error::Config(format!("key `{key}`: channel index must be an integer"))
        })?;
        if !["kind", "gamma", "delta_e", "target"].contains(&field) {
            return Err(Error::Config(format!(
                "key `{key}`: unknown channel field `{field}` (kind, gamma, delta_e, target)"
            )));
        }
        groups.entry(idx).or_default().insert(field, value);
    }

    let mut channels = Vec::new();
    for (slot, (idx, fields)) in groups.iter().enumerate() {
        if *idx != slot {
            return Err(Error::Config(format!(
                "channel indices must be contiguous from 0; missing channel.{slot}"
            )));
        }
        let kind = kind_from_name(fields.get("kind").copied().ok_or_else(|| {
            Error::Config(format!("channel.{idx} is missing channel.{idx}.kind"))
        })?)?;
        let number = |field: &str, v: &str| -> Result<f64> {
            v.trim().parse().map_err(|_| {
                Error::Config(format!(
                    "key `channel.{idx}.{field}`: expected a number, got `{v}`"
                ))
            })
        };
        let strength = match (fields.get("gamma"), fields.get("delta_e")) {
            (Some(g), None) => ChannelStrength::Gamma(number("gamma", g)?),
            (None, Some(d)) => {
                let de = number("delta_e", d)?;
                if !(0.0..0.9).contains(&de) {
                    return Err(Error::Config(format!(
                        "channel.{idx}.delta_e must lie in [0, 0.9), got {de}"
                    )));
                }
                ChannelStrength::TargetDeltaE(de)
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(format!(
                    "channel.{idx}: gamma and delta_e are mutually exclusive"
                )))
            }
            (None, None) => {
                return Err(Error::Config(format!(
                    "channel.{idx}: set exactly one of gamma or delta_e"
                )))
            }
        };
        let target = match fields.get("target") {
            None => None,
            Some(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                Error::Config(format!(
                    "key `channel.{idx}.target`: expected 0 or 1, got `{v}`"
                ))
            })?),
        };
        if target.is_some() && matches!(strength, ChannelStrength::TargetDeltaE(_)) {
            return Err(Error::Config(format!(
                "channel.{idx}: calibration by delta_e assumes the symmetric channel; \
                 give gamma explicitly for targeted channels"
            )));
        }
        // Rate and target compatibility checked now so errors carry the
        // channel index, not a mid-run context.
        let mut probe = NoiseChannel::new(kind, 0.0);
        probe.target = target;
        probe.validate()?;
        if let ChannelStrength::Gamma(g) = strength {
            let mut ch = NoiseChannel::new(kind, g);
            ch.target = target;
            ch.validate()?;
        }
        channels.push(ChannelSpec { kind, strength, target });
    }
    Ok(channels)
}

impl ScenarioConfig {
    /// Builds and validates a scenario from a merged key map. Unknown keys
    /// are rejected so typos fail loudly.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        const SCALARS: [&str; 16] = [
            "regime",
            "eta",
            "omega_rad_s",
            "nu_rad_s",
            "delta_rad_s",
            "phi_s",
            "phi_m",
            "n_fock",
            "initial_fock",
            "t_end_t",
            "t_end_rabi",
            "t_end_s",
            "steps",
            "calibration_steps",
            "gp_target",
            "out",
        ];
        for key in map.keys() {
            if SCALARS.contains(&key.as_str()) || key.starts_with("channel.") {
                continue;
            }
            let hint = match key.as_str() {
                "channel" | "delta_e" => {
                    " (the channel=/delta_e= shorthand belongs to the gp-noise and \
                     gp-subsystem presets; use channel.0.kind etc. here)"
                }
                _ => "",
            };
            return Err(Error::Config(format!("unknown key `{key}`{hint}")));
        }

        let regime = map
            .get("regime")
            .ok_or_else(|| Error::Config("missing key `regime` (wf, sf, or custom)".into()))?;
        let mut params = match regime.as_str() {
            "sf" => MSParams::sf_reference(),
            "wf" => MSParams::wf_reference(),
            "custom" => {
                for key in ["eta", "omega_rad_s", "nu_rad_s", "delta_rad_s"] {
                    if !map.contains_key(key) {
                        return Err(Error::Config(format!("regime custom requires key `{key}`")));
                    }
                }
                MSParams::sf_reference()
            }
            other => {
                return Err(Error::Config(format!(
                    "key `regime`: expected wf, sf, or custom, got `{other}`"
                )))
            }
        };
        if let Some(v) = get_f64(map, "eta")? {
            params.eta = v;
        }
        if let Some(v) = get_f64(map, "omega_rad_s")? {
            params.omega = v;
        }
        if let Some(v) = get_f64(map, "nu_rad_s")? {
            params.nu = v;
        }
        if let Some(v) = get_f64(map, "delta_rad_s")? {
            params.delta = v;
        }
        if let Some(v) = get_f64(map, "phi_s")? {
            params.phi_s = v;
        }
        if let Some(v) = get_f64(map, "phi_m")? {
            params.phi_m = v;
        }
        if let Some(v) = get_usize(map, "n_fock")? {
            params.n_fock = v;
        }
        params.validate()?;

        let initial_fock = get_usize(map, "initial_fock")?.unwrap_or(0);
        if initial_fock > params.n_fock / 2 {
            return Err(Error::Config(format!(
                "initial_fock = {initial_fock} exceeds n_fock/2 = {} (truncation headroom)",
                params.n_fock / 2
            )));
        }

        let horizon = match (
            get_f64(map, "t_end_t")?,
            get_f64(map, "t_end_rabi")?,
            get_f64(map, "t_end_s")?,
        ) {
            (Some(k), None, None) => Horizon::GateTimes(k),
            (None, Some(k), None) => Horizon::RabiPeriods(k),
            (None, None, Some(s)) => Horizon::Seconds(s),
            (None, None, None) => {
                return Err(Error::Config(
                    "set exactly one of t_end_t, t_end_rabi, t_end_s".into(),
                ))
            }
            _ => {
                return Err(Error::Config(
                    "t_end_t, t_end_rabi, t_end_s are mutually exclusive".into(),
                ))
            }
        };
        let (Horizon::GateTimes(span) | Horizon::RabiPeriods(span) | Horizon::Seconds(span)) =
            horizon;
        if !(span.is_finite() && span > 0.0) {
            return Err(Error::Config(format!(
                "the horizon length must be positive and finite, got {span}"
            )));
        }

        let steps = get_usize(map, "steps")?.unwrap_or(4096);
        if steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        let calibration_steps = get_usize(map, "calibration_steps")?.unwrap_or(512);
        if calibration_steps == 0 {
            return Err(Error::Config("calibration_steps must be at least 1".into()));
        }

        let gp_target = match map.get("gp_target").map(String::as_str) {
            None | Some("full") => GpTarget::Full,
            Some("qubits") => GpTarget::Qubits,
            Some(s) if s.starts_with("subsystem:") => {
                let idx: usize = s["subsystem:".len()..].trim().parse().map_err(|_| {
                    Error::Config(format!("key `gp_target`: bad subsystem index in `{s}`"))
                })?;
                if idx > 1 {
                    return Err(Error::Config(format!(
                        "key `gp_target`: subsystem index must be 0 or 1, got {idx}"
                    )));
                }
                GpTarget::Subsystem(idx)
            }
            Some(other) => {
                return Err(Error::Config(format!(
                    "key `gp_target`: expected full, qubits, or subsystem:N, got `{other}`"
                )))
            }
        };

        let out = PathBuf::from(
            map.get("out")
                .ok_or_else(|| Error::Config("missing key `out` (output CSV path)".into()))?,
        );

        let channels = parse_channels(map)?;

        Ok(Self {
            params,
            initial_fock,
            horizon,
            steps,
            calibration_steps,
            channels,
            gp_target,
            out,
        })
    }

    /// Time grid on `[0, t_end]` with the horizon resolved against the
    /// parameters.
    pub fn resolve_grid(&self) -> Result<TimeGrid> {
        let t1 = match self.horizon {
            Horizon::Seconds(s) => s,
            Horizon::GateTimes(k) => k * self.params.gate_time()?,
            Horizon::RabiPeriods(k) => {
                let rabi = self.params.effective_rabi()?;
                if rabi == 0.0 {
                    return Err(Error::Parameter(
                        "effective Rabi frequency is zero, t_end_rabi is undefined".into(),
                    ));
                }
                k * TAU / rabi.abs()
            }
        };
        TimeGrid::new(0.0, t1, self.steps)
    }

    /// Initial product state `|0,0⟩ ⊗ |initial_fock⟩`.
    pub fn initial_state(&self) -> StateVector {
        StateVector::basis(self.params.space(), &[0, 0, self.initial_fock])
    }

    /// Concrete Lindblad channels; ΔE-specified strengths run a γ
    /// calibration over `[0, T]` at `calibration_steps`.
    pub fn resolve_channels(&self) -> Result<Vec<ResolvedChannel>> {
        let mut out = Vec::with_capacity(self.channels.len());
        for spec in &self.channels {
            let (gamma, delta_e) = match spec.strength {
                ChannelStrength::Gamma(g) => (g, None),
                ChannelStrength::TargetDeltaE(de) => {
                    let g = if de == 0.0 {
                        0.0
                    } else {
                        analysis::calibrate_gamma(
                            &self.params,
                            spec.kind,
                            de,
                            analysis::CALIBRATION_TOL,
                            self.calibration_steps,
                        )?
                    };
                    (g, Some(de))
                }
            };
            let mut channel = NoiseChannel::new(spec.kind, gamma);
            channel.target = spec.target;
            channel.validate()?;
            out.push(ResolvedChannel { channel, delta_e });
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Deterministic CSV output.

/// 17 significant digits: round-trip exact for f64.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Flags print as bare 0/1.
pub fn fmt_flag(b: bool) -> String {
    String::from(if b { "1" } else { "0" })
}

/// CSV writer with a header row, `\n` endings, and atomic publication:
/// rows accumulate in `<path>.tmp`, which renames onto `path` only in
/// [`CsvWriter::finish`]. An abandoned writer leaves the target untouched.
pub struct CsvWriter {
    path: PathBuf,
    tmp: PathBuf,
    w: std::io::BufWriter<std::fs::File>,
    cols: usize,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let name = path.file_name().and_then(|s| s.to_str()).ok_or_else(|| {
            Error::Config(format!("output path `{}` has no file name", path.display()))
        })?;
        let tmp = path.with_file_name(format!("{name}.tmp"));
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        writeln!(w, "{}", header.join(","))?;
        Ok(Self {
            path: path.to_path_buf(),
            tmp,
            w,
            cols: header.len(),
        })
    }

    pub fn row(&mut self, cells: &[String]) -> Result<()> {
        if cells.len() != self.cols {
            return Err(Error::Shape(format!(
                "csv row has {} cells, header has {}",
                cells.len(),
                self.cols
            )));
        }
        writeln!(self.w, "{}", cells.join(","))?;
        Ok(())
    }

    /// Flushes and renames the temp file onto the target path.
    pub fn finish(self) -> Result<PathBuf> {
        let Self { path, tmp, w, .. } = self;
        let file = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        file.sync_all()?;
        drop(file);
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }
}

/// `base.csv` + `_tag` -> `base_tag.csv`, for per-scenario sweep outputs.
fn suffixed(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}{tag}.{ext}"),
        None => format!("{stem}{tag}"),
    };
    path.with_file_name(name)
}

// ---------------------------------------------------------------------------
// Presets.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    WfPopulations,
    SfPopulations,
    Negativity,
    GpSfUnitary,
    Slope,
    WfGpSweep,
    GpNoise,
    GpSubsystem,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::WfPopulations,
        Preset::SfPopulations,
        Preset::Negativity,
        Preset::GpSfUnitary,
        Preset::Slope,
        Preset::WfGpSweep,
        Preset::GpNoise,
        Preset::GpSubsystem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::WfPopulations => "wf-populations",
            Preset::SfPopulations => "sf-populations",
            Preset::Negativity => "negativity",
            Preset::GpSfUnitary => "gp-sf-unitary",
            Preset::Slope => "slope",
            Preset::WfGpSweep => "wf-gp-sweep",
            Preset::GpNoise => "gp-noise",
            Preset::GpSubsystem => "gp-subsystem",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn describe(self) -> &'static str {
        match self {
            Preset::WfPopulations => {
                "qubit populations over one Rabi period at the weak-field point"
            }
            Preset::SfPopulations => {
                "qubit populations over three gate times at the strong-field point"
            }
            Preset::Negativity => "two-qubit negativity oscillation over three gate times",
            Preset::GpSfUnitary => "geometric-phase trace of the unitary strong-field gate",
            Preset::Slope => "slope d/dt Im⟨00,0|Ψ⟩ and its running integral",
            Preset::WfGpSweep => "weak-field GP traces for a list of eta values, one file each",
            Preset::GpNoise => "GP deviation under a calibrated noise channel at several delta_e",
            Preset::GpSubsystem => {
                "qubit-2 subsystem GP and x-state check under local and non-local noise"
            }
        }
    }

    fn defaults(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Preset::WfPopulations => &[
                ("regime", "wf"),
                ("t_end_rabi", "1"),
                ("steps", "16384"),
                ("out", "wf_populations.csv"),
            ],
            Preset::SfPopulations => &[
                ("regime", "sf"),
                ("t_end_t", "3"),
                ("steps", "4096"),
                ("out", "sf_populations.csv"),
            ],
            Preset::Negativity => &[
                ("regime", "sf"),
                ("t_end_t", "3"),
                ("steps", "4096"),
                ("out", "negativity.csv"),
            ],
            Preset::GpSfUnitary => &[
                ("regime", "sf"),
                ("t_end_t", "3"),
                ("steps", "4096"),
                ("gp_target", "full"),
                ("out", "gp_sf_unitary.csv"),
            ],
            Preset::Slope => &[
                ("regime", "sf"),
                ("t_end_t", "3"),
                ("steps", "4096"),
                ("out", "slope.csv"),
            ],
            Preset::WfGpSweep => &[
                ("regime", "wf"),
                ("eta", "0.05,0.1,0.15,0.2"),
                ("t_end_rabi", "1"),
                ("steps", "32768"),
                ("gp_target", "full"),
                ("out", "wf_gp_sweep.csv"),
            ],
            Preset::GpNoise => &[
                ("regime", "sf"),
                ("channel", "qubit_dephasing"),
                ("delta_e", "0.05,0.1,0.2"),
                ("t_end_t", "3"),
                ("steps", "4096"),
                ("gp_target", "full"),
                ("out", "gp_noise.csv"),
            ],
            Preset::GpSubsystem => &[
                ("regime", "sf"),
                (
                    "channel",
                    "qubit_decay,qubit_dephasing,motional_heating,motional_dephasing,non_local",
                ),
                ("delta_e", "0.1"),
                ("t_end_t", "3"),
                ("steps", "4096"),
                ("gp_target", "subsystem:1"),
                ("out", "gp_subsystem.csv"),
            ],
        }
    }
}

/// Defaults of the generic `run` command.
const RUN_DEFAULTS: &[(&str, &str)] = &[
    ("regime", "sf"),
    ("t_end_t", "3"),
    ("steps", "4096"),
    ("gp_target", "full"),
    ("out", "run.csv"),
];

/// Preset names with one-line descriptions.
pub fn list_presets() -> Vec<String> {
    Preset::ALL
        .into_iter()
        .map(|p| format!("{:<16} {}", p.name(), p.describe()))
        .collect()
}

// ---------------------------------------------------------------------------
// Command-line front end.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Help,
    List,
    Run,
    Preset(Preset),
}

#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
}

pub fn usage() -> Vec<String> {
    [
        "ms-gpa: Molmer-Sorensen gate simulation and geometric-phase analysis",
        "",
        "usage:",
        "  ms-gpa list                                 available presets",
        "  ms-gpa <preset> [options] [key=value ...]   run a preset",
        "  ms-gpa run [options] [key=value ...]        run a custom scenario",
        "",
        "options:",
        "  --config FILE   key = value lines, # comments; applied over preset defaults",
        "  --out FILE      output CSV path (same as out=FILE)",
        "",
        "precedence: preset defaults, then --config, then command-line overrides",
        "",
        "scenario keys: regime eta omega_rad_s nu_rad_s delta_rad_s phi_s phi_m",
        "  n_fock initial_fock t_end_t t_end_rabi t_end_s steps calibration_steps",
        "  gp_target out channel.N.kind channel.N.gamma channel.N.delta_e",
        "  channel.N.target",
        "frequencies are rad/s; omega_hz nu_hz delta_hz channel.N.gamma_hz scale by 2pi",
        "",
        "env:  MS_GPA_THREADS caps sweep concurrency",
        "exit: 0 success, 2 config error, 3 numerical failure",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

/// Parses CLI arguments (without the program name).
pub fn parse_args(args: &[String]) -> Result<Invocation> {
    let Some(first) = args.first() else {
        return Ok(Invocation {
            command: Command::Help,
            config_path: None,
            overrides: vec![],
        });
    };
    let command = match first.as_str() {
        "help" | "--help" | "-h" => Command::Help,
        "list" => Command::List,
        "run" => Command::Run,
        name => Command::Preset(Preset::from_name(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown preset `{name}`; run `ms-gpa list` for available presets"
            ))
        })?),
    };
    let mut config_path = None;
    let mut overrides = Vec::new();
    let mut rest = args[1..].iter();
    while let Some(arg) = rest.next() {
        match arg.as_str() {
            "--config" => {
                let v = rest
                    .next()
                    .ok_or_else(|| Error::Config("--config needs a file path".into()))?;
                config_path = Some(PathBuf::from(v));
            }
            "--out" => {
                let v = rest
                    .next()
                    .ok_or_else(|| Error::Config("--out needs a file path".into()))?;
                overrides.push(("out".to_string(), v.clone()));
            }
            flag if flag.starts_with("--") => {
                return Err(Error::Config(format!("unknown flag `{flag}`")));
            }
            pair => overrides.push(parse_override(pair)?),
        }
    }
    Ok(Invocation {
        command,
        config_path,
        overrides,
    })
}

/// A one-line hint for non-config failures; the binary prints it under the
/// error message.
pub fn remediation(e: &Error) -> Option<&'static str> {
    match e {
        Error::Numerical(_) | Error::Resolution(_) => {
            Some("try more steps (steps=...) or a shorter horizon (t_end_t=...)")
        }
        Error::StateIntegrity(_) => {
            Some("the integrator aborted on a conservation drift; try more steps (steps=...)")
        }
        Error::Calibration(_) => Some("try a smaller delta_e or more calibration_steps"),
        _ => None,
    }
}

/// Everything a scenario run produced: human-readable summary lines and
/// the files written.
#[derive(Clone, Debug, Default)]
pub struct ScenarioOutcome {
    pub summary: Vec<String>,
    pub files: Vec<PathBuf>,
}

/// Runs a parsed invocation to completion.
pub fn execute(inv: &Invocation) -> Result<ScenarioOutcome> {
    match inv.command {
        Command::Help => Ok(ScenarioOutcome {
            summary: usage(),
            files: vec![],
        }),
        Command::List => Ok(ScenarioOutcome {
            summary: list_presets(),
            files: vec![],
        }),
        Command::Run => {
            let map = assemble_map(RUN_DEFAULTS, inv)?;
            run_simple(&map, Columns::KitchenSink)
        }
        Command::Preset(preset) => {
            let map = assemble_map(preset.defaults(), inv)?;
            match preset {
                Preset::WfPopulations | Preset::SfPopulations => {
                    run_simple(&map, Columns::Populations)
                }
                Preset::Negativity => run_simple(&map, Columns::Negativity),
                Preset::GpSfUnitary => run_simple(&map, Columns::Gp),
                Preset::Slope => run_simple(&map, Columns::Slope),
                Preset::WfGpSweep => run_wf_gp_sweep(&map),
                Preset::GpNoise => run_gp_noise(&map),
                Preset::GpSubsystem => run_gp_subsystem(&map),
            }
        }
    }
}

fn assemble_map(
    defaults: &[(&str, &str)],
    inv: &Invocation,
) -> Result<BTreeMap<String, String>> {
    let mut sources = Vec::new();
    let base: Result<Vec<(String, String)>> = defaults
        .iter()
        .map(|(k, v)| canonical_pair(k, v))
        .collect();
    sources.push(base?);
    if let Some(path) = &inv.config_path {
        let text = std::fs::read_to_string(path)?;
        sources.push(parse_source(&text, &path.display().to_string())?);
    }
    sources.push(inv.overrides.clone());
    Ok(merge_sources(&sources))
}

// ---------------------------------------------------------------------------
// Scenario drivers.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Columns {
    Populations,
    Negativity,
    Gp,
    Slope,
    KitchenSink,
}

fn gp_of_pure_trajectory(traj: &Trajectory, target: GpTarget) -> Result<GPTrace> {
    match target {
        GpTarget::Full => gp::gp_pure(traj),
        GpTarget::Qubits => gp::gp_mixed(&traj.reduced(&[0, 1])?),
        GpTarget::Subsystem(i) => gp::gp_subsystem(traj, i),
    }
}

/// Factors kept when streaming the GP of a Lindblad run.
fn keep_of(target: GpTarget) -> Option<Vec<usize>> {
    match target {
        GpTarget::Full => None,
        GpTarget::Qubits => Some(vec![0, 1]),
        GpTarget::Subsystem(i) => Some(vec![i]),
    }
}

fn describe_channel(r: &ResolvedChannel) -> String {
    let mut line = format!(
        "channel {}: gamma={:.6e}",
        kind_name(r.channel.kind),
        r.channel.gamma
    );
    if let Some(de) = r.delta_e {
        line.push_str(&format!(" delta_e={de}"));
    }
    if let Some(q) = r.channel.target {
        line.push_str(&format!(" target={q}"));
    }
    line
}

fn diag_line(d: &PropagationDiagnostics, pure: bool) -> String {
    if pure {
        format!("diagnostics: max_norm_err={:.3e}", d.max_trace_error)
    } else {
        format!(
            "diagnostics: max_trace_err={:.3e} max_herm_err={:.3e} min_eig={:.3e}",
            d.max_trace_error, d.max_hermiticity_error, d.min_eigenvalue
        )
    }
}

/// Single-scenario presets: one propagation, one CSV whose columns depend
/// on the preset. Unitary scenarios store the trajectory; scenarios with
/// channels stream it.
fn run_simple(map: &BTreeMap<String, String>, cols: Columns) -> Result<ScenarioOutcome> {
    let cfg = ScenarioConfig::from_map(map)?;
    let grid = cfg.resolve_grid()?;
    let psi0 = cfg.initial_state();
    let resolved = cfg.resolve_channels()?;

    let want_pops = matches!(cols, Columns::Populations | Columns::KitchenSink);
    let want_neg = matches!(cols, Columns::Negativity | Columns::KitchenSink);
    let want_gp = matches!(cols, Columns::Gp | Columns::KitchenSink);
    let want_slope = matches!(cols, Columns::Slope);

    let mut summary: Vec<String> = resolved.iter().map(describe_channel).collect();

    let times = grid.times();
    let mut pops: Vec<[f64; 4]> = Vec::new();
    let mut neg: Vec<analysis::NegativityReading> = Vec::new();
    let mut gp_trace: Option<GPTrace> = None;
    let mut slope: Vec<f64> = Vec::new();
    let mut integral: Vec<f64> = Vec::new();
    let diagnostics;

    if resolved.is_empty() {
        let traj = dynamics::propagate_schrodinger(&cfg.params, &psi0, &grid)?;
        if want_pops {
            let table = dynamics::qubit_populations(&traj)?;
            pops = (0..traj.len())
                .map(|i| [table[[i, 0]], table[[i, 1]], table[[i, 2]], table[[i, 3]]])
                .collect();
        }
        if want_neg {
            neg = analysis::negativity_series(&traj)?;
        }
        if want_gp {
            gp_trace = Some(gp_of_pure_trajectory(&traj, cfg.gp_target)?);
        }
        if want_slope {
            slope = analysis::slope_series(&traj)?;
            integral = analysis::trapezoid_cumulative(&slope, grid.dt());
        }
        diagnostics = traj.diagnostics;
    } else {
        if want_slope {
            return Err(Error::Config(
                "the slope preset needs a unitary scenario; remove the channels".into(),
            ));
        }
        let channels: Vec<NoiseChannel> = resolved.iter().map(|r| r.channel).collect();
        let rho0 = psi0.to_density();
        let spec = cfg.params.space();
        let keep = keep_of(cfg.gp_target);
        let mut acc: Option<MixedGpAccumulator> = None;
        diagnostics = dynamics::propagate_lindblad_observed(
            &cfg.params,
            &rho0,
            &channels,
            &grid,
            |_, t, rho| {
                if want_pops || want_neg {
                    let (rq, _) = ops::partial_trace(rho, &[0, 1], &spec)?;
                    if want_pops {
                        pops.push([rq[[0, 0]].re, rq[[1, 1]].re, rq[[2, 2]].re, rq[[3, 3]].re]);
                    }
                    if want_neg {
                        neg.push(analysis::negativity(&rq)?);
                    }
                }
                if want_gp {
                    let target = match &keep {
                        None => rho.clone(),
                        Some(k) => ops::partial_trace(rho, k, &spec)?.0,
                    };
                    match acc.as_mut() {
                        None => acc = Some(MixedGpAccumulator::new(t, &target)?),
                        Some(a) => a.push(t, &target)?,
                    }
                }
                Ok(())
            },
        )?;
        if let Some(a) = acc {
            gp_trace = Some(a.finish());
        }
    }

    let header: Vec<&str> = match cols {
        Columns::Populations => vec!["t_s", "p00", "p01", "p10", "p11"],
        Columns::Negativity => vec!["t_s", "e", "raw"],
        Columns::Gp => vec!["t_s", "phi_g", "phi_global", "phi_dyn", "flagged"],
        Columns::Slope => vec!["t_s", "slope", "integral"],
        Columns::KitchenSink => vec![
            "t_s", "p00", "p01", "p10", "p11", "e", "phi_g", "phi_global", "phi_dyn", "flagged",
        ],
    };
    let mut w = CsvWriter::create(&cfg.out, &header)?;
    for i in 0..times.len() {
        let mut cells = vec![fmt_float(times[i])];
        if want_pops {
            cells.extend(pops[i].iter().map(|&x| fmt_float(x)));
        }
        if want_neg {
            cells.push(fmt_float(neg[i].e));
            if cols == Columns::Negativity {
                cells.push(fmt_float(neg[i].raw_sum));
            }
        }
        if let Some(trace) = &gp_trace {
            cells.push(fmt_float(trace.phi_g[i]));
            cells.push(fmt_float(trace.phi_global[i]));
            cells.push(fmt_float(trace.phi_dyn[i]));
            cells.push(fmt_flag(trace.flagged[i]));
        }
        if want_slope {
            cells.push(fmt_float(slope[i]));
            cells.push(fmt_float(integral[i]));
        }
        w.row(&cells)?;
    }
    let path = w.finish()?;

    summary.push(format!(
        "wrote {} ({} samples, {} columns)",
        path.display(),
        times.len(),
        header.len()
    ));
    summary.push(diag_line(&diagnostics, resolved.is_empty()));
    Ok(ScenarioOutcome {
        summary,
        files: vec![path],
    })
}

fn split_list(raw: &str, key: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = raw
        .split(',')
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        return Err(Error::Config(format!("key `{key}`: empty list")));
    }
    Ok(tokens)
}

/// Weak-field GP sweep: one unitary scenario and one output file per eta,
/// fanned out over [`sweep_threads`] workers.
fn run_wf_gp_sweep(map: &BTreeMap<String, String>) -> Result<ScenarioOutcome> {
    let mut base = map.clone();
    let eta_list = base
        .remove("eta")
        .ok_or_else(|| Error::Config("wf-gp-sweep needs an eta list (eta=0.05,0.1,...)".into()))?;
    let tokens = split_list(&eta_list, "eta")?;
    let out_base = PathBuf::from(
        base.get("out")
            .ok_or_else(|| Error::Config("missing key `out` (output CSV path)".into()))?,
    );

    // Per-eta scenario maps; file names carry the eta token.
    let jobs: Vec<(String, BTreeMap<String, String>)> = tokens
        .iter()
        .map(|tok| {
            let mut m = base.clone();
            m.insert("eta".to_string(), tok.clone());
            m.insert(
                "out".to_string(),
                suffixed(&out_base, &format!("_eta{tok}")).display().to_string(),
            );
            (tok.clone(), m)
        })
        .collect();

    let threads = sweep_threads()?;
    let results = parallel_map(&jobs, threads, |_, (tok, m)| {
        let cfg = ScenarioConfig::from_map(m)?;
        if !cfg.channels.is_empty() {
            return Err(Error::Config(
                "wf-gp-sweep is a unitary sweep; remove the channels".into(),
            ));
        }
        let grid = cfg.resolve_grid()?;
        let traj = dynamics::propagate_schrodinger(&cfg.params, &cfg.initial_state(), &grid)?;
        let trace = gp_of_pure_trajectory(&traj, cfg.gp_target)?;
        let mut w = CsvWriter::create(
            &cfg.out,
            &["t_s", "phi_g", "phi_global", "phi_dyn", "flagged"],
        )?;
        for i in 0..trace.len() {
            w.row(&[
                fmt_float(trace.times[i]),
                fmt_float(trace.phi_g[i]),
                fmt_float(trace.phi_global[i]),
                fmt_float(trace.phi_dyn[i]),
                fmt_flag(trace.flagged[i]),
            ])?;
        }
        let path = w.finish()?;
        let max_phi = trace.phi_g.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        Ok((tok.clone(), path, max_phi))
    })?;

    let mut summary = Vec::new();
    let mut files = Vec::new();
    for (tok, path, max_phi) in results {
        summary.push(format!(
            "eta={tok} max|phi_g|={max_phi:.6e} file={}",
            path.display()
        ));
        files.push(path);
    }
    Ok(ScenarioOutcome { summary, files })
}

/// GP deviation under calibrated noise: for every (channel kind, delta_e)
/// pair, calibrate γ, stream the noisy GP, and subtract the unitary
/// baseline. All pairs share one grid and one CSV.
fn run_gp_noise(map: &BTreeMap<String, String>) -> Result<ScenarioOutcome> {
    let mut base = map.clone();
    let kinds_raw = base
        .remove("channel")
        .ok_or_else(|| Error::Config("gp-noise needs channel=<kind>[,<kind>...]".into()))?;
    let delta_raw = base
        .remove("delta_e")
        .ok_or_else(|| Error::Config("gp-noise needs delta_e=<list>".into()))?;
    let kinds: Vec<NoiseKind> = split_list(&kinds_raw, "channel")?
        .iter()
        .map(|t| kind_from_name(t))
        .collect::<Result<_>>()?;
    let delta_tokens = split_list(&delta_raw, "delta_e")?;
    let mut delta_es = Vec::new();
    for t in &delta_tokens {
        let de: f64 = t
            .parse()
            .map_err(|_| Error::Config(format!("key `delta_e`: expected a number, got `{t}`")))?;
        if !(0.0..0.9).contains(&de) {
            return Err(Error::Config(format!(
                "delta_e must lie in [0, 0.9), got {de}"
            )));
        }
        delta_es.push(de);
    }

    let cfg = ScenarioConfig::from_map(&base)?;
    if !cfg.channels.is_empty() {
        return Err(Error::Config(
            "gp-noise builds its channels from channel=/delta_e=; remove the channel.N.* keys"
                .into(),
        ));
    }
    let grid = cfg.resolve_grid()?;
    let psi0 = cfg.initial_state();
    let t_gate = cfg.params.gate_time()?;

    // Unitary baseline on the same grid; the dphi columns subtract it.
    let baseline_traj = dynamics::propagate_schrodinger(&cfg.params, &psi0, &grid)?;
    let baseline = gp_of_pure_trajectory(&baseline_traj, cfg.gp_target)?;
    drop(baseline_traj);

    let combos: Vec<(NoiseKind, usize)> = kinds
        .iter()
        .flat_map(|&k| (0..delta_es.len()).map(move |i| (k, i)))
        .collect();

    let rho0 = psi0.to_density();
    let keep = keep_of(cfg.gp_target);
    let threads = sweep_threads()?;
    let results = parallel_map(&combos, threads, |_, &(kind, di)| {
        let de = delta_es[di];
        let gamma = if de == 0.0 {
            0.0
        } else {
            analysis::calibrate_gamma(
                &cfg.params,
                kind,
                de,
                analysis::CALIBRATION_TOL,
                cfg.calibration_steps,
            )?
        };
        let channel = NoiseChannel::new(kind, gamma);
        let (trace, diag) = gp::gp_lindblad_streaming(
            &cfg.params,
            &rho0,
            std::slice::from_ref(&channel),
            &grid,
            keep.as_deref(),
        )?;
        let dphi = analysis::delta_gp(&baseline, &trace)?;
        Ok((gamma, dphi, diag))
    })?;

    let mut header = vec!["t_s".to_string()];
    for &(kind, di) in &combos {
        header.push(format!("dphi_{}_de{}", kind_name(kind), delta_tokens[di]));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = CsvWriter::create(&cfg.out, &header_refs)?;
    let times = grid.times();
    for i in 0..times.len() {
        let mut cells = vec![fmt_float(times[i])];
        for (_, dphi, _) in &results {
            cells.push(fmt_float(dphi[i]));
        }
        w.row(&cells)?;
    }
    let path = w.finish()?;

    let mut summary = Vec::new();
    for (ci, &(kind, di)) in combos.iter().enumerate() {
        let (gamma, dphi, diag) = &results[ci];
        let idx = analysis::argmax_abs(dphi)?;
        let t_at = times[idx];
        summary.push(format!(
            "channel={} delta_e={} gamma={:.6e} max|dphi_g|={:.6e} argmax_t={:.6e} ({:.3}T) \
             trace_err={:.1e} min_eig={:.1e}",
            kind_name(kind),
            delta_tokens[di],
            gamma,
            dphi[idx].abs(),
            t_at,
            t_at / t_gate,
            diag.max_trace_error,
            diag.min_eigenvalue,
        ));
    }
    summary.push(format!("wrote {} ({} samples)", path.display(), times.len()));
    Ok(ScenarioOutcome {
        summary,
        files: vec![path],
    })
}

/// Subsystem GP under local vs non-local noise at one common delta_e: per
/// channel kind, one streaming pass accumulates the single-qubit GP and
/// the x-structure violation of the two-qubit reduction.
fn run_gp_subsystem(map: &BTreeMap<String, String>) -> Result<ScenarioOutcome> {
    let mut base = map.clone();
    let kinds_raw = base
        .remove("channel")
        .ok_or_else(|| Error::Config("gp-subsystem needs channel=<kind>[,<kind>...]".into()))?;
    let delta_raw = base
        .remove("delta_e")
        .ok_or_else(|| Error::Config("gp-subsystem needs delta_e=<value>".into()))?;
    let kinds: Vec<NoiseKind> = split_list(&kinds_raw, "channel")?
        .iter()
        .map(|t| kind_from_name(t))
        .collect::<Result<_>>()?;
    let de: f64 = delta_raw.trim().parse().map_err(|_| {
        Error::Config(format!(
            "key `delta_e`: expected a single number, got `{delta_raw}`"
        ))
    })?;
    if !(0.0..0.9).contains(&de) {
        return Err(Error::Config(format!(
            "delta_e must lie in [0, 0.9), got {de}"
        )));
    }

    let cfg = ScenarioConfig::from_map(&base)?;
    if !cfg.channels.is_empty() {
        return Err(Error::Config(
            "gp-subsystem builds its channels from channel=/delta_e=; remove the channel.N.* keys"
                .into(),
        ));
    }
    let GpTarget::Subsystem(sub) = cfg.gp_target else {
        return Err(Error::Config(
            "gp-subsystem needs gp_target=subsystem:0 or subsystem:1".into(),
        ));
    };
    let grid = cfg.resolve_grid()?;
    let rho0 = cfg.initial_state().to_density();
    let spec = cfg.params.space();

    let threads = sweep_threads()?;
    let results = parallel_map(&kinds, threads, |_, &kind| {
        let gamma = if de == 0.0 {
            0.0
        } else {
            analysis::calibrate_gamma(
                &cfg.params,
                kind,
                de,
                analysis::CALIBRATION_TOL,
                cfg.calibration_steps,
            )?
        };
        let channel = NoiseChannel::new(kind, gamma);
        let mut acc: Option<MixedGpAccumulator> = None;
        let mut max_x_violation = 0.0f64;
        dynamics::propagate_lindblad_observed(
            &cfg.params,
            &rho0,
            std::slice::from_ref(&channel),
            &grid,
            |_, t, rho| {
                let (rq, _) = ops::partial_trace(rho, &[0, 1], &spec)?;
                let report = analysis::is_x_state(&rq, analysis::X_STATE_TOL)?;
                max_x_violation = max_x_violation.max(report.max_violation);
                let (rs, _) = ops::partial_trace(rho, &[sub], &spec)?;
                match acc.as_mut() {
                    None => acc = Some(MixedGpAccumulator::new(t, &rs)?),
                    Some(a) => a.push(t, &rs)?,
                }
                Ok(())
            },
        )?;
        let trace = acc.expect("grid has at least one sample").finish();
        Ok((gamma, trace, max_x_violation))
    })?;

    let mut header = vec!["t_s".to_string()];
    for &kind in &kinds {
        header.push(format!("phi_{}", kind_name(kind)));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = CsvWriter::create(&cfg.out, &header_refs)?;
    let times = grid.times();
    for i in 0..times.len() {
        let mut cells = vec![fmt_float(times[i])];
        for (_, trace, _) in &results {
            cells.push(fmt_float(trace.phi_g[i]));
        }
        w.row(&cells)?;
    }
    let path = w.finish()?;

    let mut summary = Vec::new();
    for (ki, &kind) in kinds.iter().enumerate() {
        let (gamma, trace, max_x) = &results[ki];
        let max_phi = trace.phi_g.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        summary.push(format!(
            "channel={} delta_e={} gamma={:.6e} max|phi_g|={:.6e} max_x_violation={:.3e}",
            kind_name(kind),
            delta_raw.trim(),
            gamma,
            max_phi,
            max_x
        ));
    }
    summary.push(format!("wrote {} ({} samples)", path.display(), times.len()));
    Ok(ScenarioOutcome {
        summary,
        files: vec![path],
    })
}

// ---------------------------------------------------------------------------
// Sweep fan-out.

/// Caps sweep concurrency; the `MS_GPA_THREADS` environment variable
/// overrides the detected parallelism.
pub fn sweep_threads() -> Result<usize> {
    sweep_threads_from(std::env::var("MS_GPA_THREADS").ok().as_deref())
}

fn sweep_threads_from(raw: Option<&str>) -> Result<usize> {
    match raw {
        None => Ok(default_threads()),
        Some(s) if s.trim().is_empty() => Ok(default_threads()),
        Some(s) => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                Error::Config(format!(
                    "MS_GPA_THREADS must be a positive integer, got `{s}`"
                ))
            }),
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Applies `f` to every item on up to `threads` workers, returning results
/// in input order. When several jobs fail, the error of the smallest index
/// wins, so the outcome does not depend on scheduling.
fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync,
{
    let n = items.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let threads = threads.clamp(1, n);
    if threads == 1 {
        return items.iter().enumerate().map(|(i, it)| f(i, it)).collect();
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<R>)>();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            let tx = tx.clone();
            let next = &next;
            let f = &f;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                if tx.send((i, f(i, &items[i]))).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut slots: Vec<Option<Result<R>>> = (0..n).map(|_| None).collect();
    while let Ok((i, r)) = rx.recv() {
        slots[i] = Some(r);
    }
    let mut out = Vec::with_capacity(n);
    for (i, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(Ok(r)) => out.push(r),
            Some(Err(e)) => return Err(e),
            None => {
                return Err(Error::Numerical(format!(
                    "sweep worker for job {i} produced no result"
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> String {
        x.to_string()
    }

    fn temp_path(tag: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("ms_gpa_cli_{}_{tag}.csv", std::process::id()));
        p
    }

    #[test]
    fn config_text_parses_comments_blanks_and_pairs() {
        let text = "# header\n\n  steps = 128 \nregime=sf\n  # another\nphi_s = 0.25\n";
        let pairs = parse_source(text, "test").unwrap();
        assert_eq!(
            pairs,
            vec![
                (s("steps"), s("128")),
                (s("regime"), s("sf")),
                (s("phi_s"), s("0.25")),
            ]
        );
    }

    #[test]
    fn config_text_rejects_garbage_and_duplicates() {
        let err = parse_source("steps 128\n", "test").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("line 1"));

        let err = parse_source("steps=1\nsteps=2\n", "test").unwrap_err();
        assert!(err.to_string().contains("duplicate key `steps`"));
        assert!(err.to_string().contains("lines 1 and 2"));

        // hz and rad_s spellings collide after aliasing
        let err = parse_source("omega_rad_s=1.0\nomega_hz=2.0\n", "test").unwrap_err();
        assert!(err.to_string().contains("omega_rad_s"));
    }

    #[test]
    fn hz_keys_scale_by_two_pi() {
        let pairs = parse_source("omega_hz = 270e3\nchannel.0.gamma_hz = 1.5\n", "test").unwrap();
        assert_eq!(pairs[0].0, "omega_rad_s");
        assert_eq!(pairs[0].1.parse::<f64>().unwrap(), 270e3 * TAU);
        assert_eq!(pairs[1].0, "channel.0.gamma");
        assert_eq!(pairs[1].1.parse::<f64>().unwrap(), 1.5 * TAU);
    }

    #[test]
    fn merge_precedence_is_later_wins() {
        let a = parse_source("steps=1\nphi_s=0\n", "a").unwrap();
        let b = parse_source("steps=2\n", "b").unwrap();
        let m = merge_sources(&[a, b]);
        assert_eq!(m["steps"], "2");
        assert_eq!(m["phi_s"], "0");
    }

    #[test]
    fn scenario_from_map_round_trip() {
        let text = "regime = sf\nsteps = 256\nt_end_t = 1.5\ninitial_fock = 2\n\
                    gp_target = subsystem:1\nout = x.csv\n\
                    channel.0.kind = qubit_dephasing\nchannel.0.delta_e = 0.1\n\
                    channel.1.kind = motional_heating\nchannel.1.gamma = 12.5\n";
        let map = merge_sources(&[parse_source(text, "t").unwrap()]);
        let cfg = ScenarioConfig::from_map(&map).unwrap();
        assert_eq!(cfg.steps, 256);
        assert_eq!(cfg.initial_fock, 2);
        assert_eq!(cfg.horizon, Horizon::GateTimes(1.5));
        assert_eq!(cfg.gp_target, GpTarget::Subsystem(1));
        assert_eq!(cfg.channels.len(), 2);
        assert_eq!(cfg.channels[0].kind, NoiseKind::QubitDephasing);
        assert_eq!(cfg.channels[0].strength, ChannelStrength::TargetDeltaE(0.1));
        assert_eq!(cfg.channels[1].strength, ChannelStrength::Gamma(12.5));
        // reference numbers survive the merge untouched
        assert_eq!(cfg.params.eta, 0.028);
    }

    #[test]
    fn scenario_from_map_rejections() {
        let base = "regime=sf\nt_end_t=1\nout=x.csv\n";
        let cases: [(&str, &str); 10] = [
            ("typo_key=1\n", "unknown key"),
            ("t_end_s=1\n", "mutually exclusive"),
            ("channel.0.kind=qubit_decay\n", "exactly one of gamma"),
            ("channel.0.kind=bogus\nchannel.0.gamma=1\n", "unknown channel kind"),
            ("channel.1.kind=qubit_decay\nchannel.1.gamma=1\n", "contiguous"),
            (
                "channel.0.kind=qubit_decay\nchannel.0.gamma=1\nchannel.0.delta_e=0.1\n",
                "mutually exclusive",
            ),
            (
                "channel.0.kind=non_local\nchannel.0.gamma=1\nchannel.0.target=0\n",
                "does not take",
            ),
            ("channel.0.kind=qubit_decay\nchannel.0.delta_e=0.95\n", "0.9"),
            ("gp_target=subsystem:7\n", "0 or 1"),
            ("initial_fock=99\n", "n_fock/2"),
        ];
        for (extra, needle) in cases {
            let text = format!("{base}{extra}");
            let map = merge_sources(&[parse_source(&text, "t").unwrap()]);
            let err = ScenarioConfig::from_map(&map).unwrap_err();
            assert!(err.to_string().contains(needle), "case `{extra}`: {err}");
        }

        let map = merge_sources(&[parse_source("regime=sf\nout=x.csv\n", "t").unwrap()]);
        let err = ScenarioConfig::from_map(&map).unwrap_err();
        assert!(err.to_string().contains("exactly one of t_end"), "{err}");

        let map = merge_sources(&[parse_source("regime=custom\nt_end_s=1\nout=x.csv\n", "t").unwrap()]);
        let err = ScenarioConfig::from_map(&map).unwrap_err();
        assert!(err.to_string().contains("requires key"), "{err}");
    }

    #[test]
    fn grid_resolution_follows_horizon() {
        let map =
            merge_sources(&[parse_source("regime=sf\nt_end_t=3\nsteps=64\nout=x.csv\n", "t").unwrap()]);
        let cfg = ScenarioConfig::from_map(&map).unwrap();
        let grid = cfg.resolve_grid().unwrap();
        assert_eq!(grid.t1(), 3.0 * cfg.params.gate_time().unwrap());
        assert_eq!(grid.steps(), 64);

        let map = merge_sources(&[
            parse_source("regime=wf\nt_end_rabi=1\nsteps=64\nout=x.csv\n", "t").unwrap()
        ]);
        let cfg = ScenarioConfig::from_map(&map).unwrap();
        let grid = cfg.resolve_grid().unwrap();
        let rabi = cfg.params.effective_rabi().unwrap().abs();
        assert!((grid.t1() - TAU / rabi).abs() < 1e-12 * grid.t1());
    }

    #[test]
    fn float_format_round_trips() {
        for x in [
            0.0,
            -0.0,
            1.0,
            -1.0 / 3.0,
            6.625e-34,
            2.0_f64.powi(-1074),
            f64::MAX,
            -1.2345678901234567e-5,
        ] {
            let t = fmt_float(x);
            let back: f64 = t.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} -> {t} -> {back}");
        }
    }

    #[test]
    fn csv_writer_is_atomic_and_exact() {
        let path = temp_path("writer");
        let mut w = CsvWriter::create(&path, &["t_s", "v"]).unwrap();
        w.row(&[fmt_float(0.0), fmt_float(0.5)]).unwrap();
        assert!(!path.exists(), "target must not appear before finish");
        assert!(w.row(&[fmt_float(0.0)]).is_err(), "cell count is checked");
        let written = w.finish().unwrap();
        assert_eq!(written, path);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "t_s,v\n0.0000000000000000e0,5.0000000000000000e-1\n");
        let tmp = path.with_file_name(format!(
            "{}.tmp",
            path.file_name().unwrap().to_str().unwrap()
        ));
        assert!(!tmp.exists());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn preset_lookup_and_listing() {
        assert_eq!(Preset::ALL.len(), 8);
        for p in Preset::ALL {
            assert_eq!(Preset::from_name(p.name()), Some(p));
        }
        assert_eq!(Preset::from_name("bogus"), None);
        let listing = list_presets();
        assert_eq!(listing.len(), 8);
        for (line, p) in listing.iter().zip(Preset::ALL) {
            assert!(line.starts_with(p.name()));
        }
    }

    #[test]
    fn arg_parsing_and_thread_cap() {
        let inv = parse_args(&[
            s("sf-populations"),
            s("--out"),
            s("a.csv"),
            s("steps=64"),
            s("omega_hz=1"),
        ])
        .unwrap();
        assert_eq!(inv.command, Command::Preset(Preset::SfPopulations));
        assert_eq!(inv.overrides[0], (s("out"), s("a.csv")));
        assert_eq!(inv.overrides[1], (s("steps"), s("64")));
        assert_eq!(inv.overrides[2].0, "omega_rad_s");

        let err = parse_args(&[s("bogus")]).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("unknown preset"));
        assert!(parse_args(&[s("run"), s("--what")])
            .unwrap_err()
            .to_string()
            .contains("unknown flag"));
        assert!(parse_args(&[s("run"), s("notapair")])
            .unwrap_err()
            .to_string()
            .contains("key=value"));
        assert_eq!(parse_args(&[]).unwrap().command, Command::Help);
        assert_eq!(parse_args(&[s("list")]).unwrap().command, Command::List);

        assert_eq!(sweep_threads_from(Some("3")).unwrap(), 3);
        assert!(sweep_threads_from(Some("0")).is_err());
        assert!(sweep_threads_from(Some("abc")).is_err());
        assert!(sweep_threads_from(None).unwrap() >= 1);
    }

    #[test]
    fn sf_populations_preset_end_to_end_and_deterministic() {
        let out1 = temp_path("sfpop1");
        let out2 = temp_path("sfpop2");
        let overrides = vec![(s("t_end_t"), s("0.05")), (s("steps"), s("64"))];
        for out in [&out1, &out2] {
            let mut ov = overrides.clone();
            ov.push((s("out"), out.display().to_string()));
            let outcome = execute(&Invocation {
                command: Command::Preset(Preset::SfPopulations),
                config_path: None,
                overrides: ov,
            })
            .unwrap();
            assert_eq!(outcome.files, vec![out.clone()]);
        }
        let a = std::fs::read(&out1).unwrap();
        let b = std::fs::read(&out2).unwrap();
        assert_eq!(a, b, "identical configs must give identical bytes");

        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t_s,p00,p01,p10,p11");
        let first: Vec<f64> = lines
            .next()
            .unwrap()
            .split(',')
            .map(|c| c.parse().unwrap())
            .collect();
        assert_eq!(first[0], 0.0);
        assert_eq!(first[1], 1.0);
        assert_eq!(text.lines().count(), 66);
        std::fs::remove_file(&out1).unwrap();
        std::fs::remove_file(&out2).unwrap();
    }

    #[test]
    fn generic_run_kitchen_sink_columns() {
        let out = temp_path("generic");
        let ov = vec![
            (s("t_end_t"), s("0.05")),
            (s("steps"), s("64")),
            (s("out"), out.display().to_string()),
        ];
        let outcome = execute(&Invocation {
            command: Command::Run,
            config_path: None,
            overrides: ov,
        })
        .unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "t_s,p00,p01,p10,p11,e,phi_g,phi_global,phi_dyn,flagged"
        );
        assert_eq!(text.lines().count(), 66);
        assert!(outcome.summary.iter().any(|l| l.starts_with("diagnostics:")));
        std::fs::remove_file(&out).unwrap();
    }

    #[test]
    fn gp_noise_preset_cheap_run() {
        let out = temp_path("gpnoise");
        let ov = vec![
            (s("delta_e"), s("0")),
            (s("t_end_t"), s("0.2")),
            (s("steps"), s("128")),
            (s("out"), out.display().to_string()),
        ];
        let outcome = execute(&Invocation {
            command: Command::Preset(Preset::GpNoise),
            config_path: None,
            overrides: ov,
        })
        .unwrap();
        let combo = outcome
            .summary
            .iter()
            .find(|l| l.starts_with("channel=qubit_dephasing"))
            .unwrap();
        assert!(combo.contains("delta_e=0 "), "{combo}");
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t_s,dphi_qubit_dephasing_de0");
        assert_eq!(text.lines().count(), 130);
        // gamma = 0 keeps the Lindblad run unitary, so the deviation is
        // integrator noise only
        let max_dphi: f64 = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap().abs())
            .fold(0.0, f64::max);
        assert!(max_dphi < 1e-6, "max dphi {max_dphi}");
        std::fs::remove_file(&out).unwrap();
    }

    #[test]
    fn wf_sweep_writes_one_file_per_eta() {
        let out = temp_path("wfsweep");
        let ov = vec![
            (s("eta"), s("0.1,0.15")),
            (s("t_end_rabi"), s("0.05")),
            (s("steps"), s("512")),
            (s("out"), out.display().to_string()),
        ];
        let outcome = execute(&Invocation {
            command: Command::Preset(Preset::WfGpSweep),
            config_path: None,
            overrides: ov,
        })
        .unwrap();
        assert_eq!(outcome.files.len(), 2);
        assert!(outcome.files[0].display().to_string().contains("_eta0.1"));
        assert!(outcome.files[1].display().to_string().contains("_eta0.15"));
        assert!(outcome.summary[0].starts_with("eta=0.1 "), "{}", outcome.summary[0]);
        assert!(outcome.summary[1].starts_with("eta=0.15 "), "{}", outcome.summary[1]);
        for f in &outcome.files {
            let text = std::fs::read_to_string(f).unwrap();
            assert_eq!(
                text.lines().next().unwrap(),
                "t_s,phi_g,phi_global,phi_dyn,flagged"
            );
            assert_eq!(text.lines().count(), 514);
            std::fs::remove_file(f).unwrap();
        }
    }

    #[test]
    fn config_file_layers_between_defaults_and_overrides() {
        let cfg_path = std::env::temp_dir().join(format!(
            "ms_gpa_cli_{}_layers.cfg",
            std::process::id()
        ));
        std::fs::write(&cfg_path, "steps = 32\nt_end_t = 0.05\n# comment\n").unwrap();
        let out = temp_path("layers");
        let inv = Invocation {
            command: Command::Preset(Preset::SfPopulations),
            config_path: Some(cfg_path.clone()),
            overrides: vec![(s("steps"), s("64")), (s("out"), out.display().to_string())],
        };
        execute(&inv).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        // the file overrode the 4096 default, the CLI overrode the file
        assert_eq!(text.lines().count(), 66);
        std::fs::remove_file(&out).unwrap();
        std::fs::remove_file(&cfg_path).unwrap();
    }
}
