//! Measurement kit shared by the spatial chain and its companions.
//!
//! Everything here is a pure function of a [`Configuration`] or of a
//! recorded wealth series; nothing draws randomness or mutates state.
//! The central objects:
//!
//! * [`photograph`]: the multiset of live particles bucketed by site and
//!   strategy. Two configurations that differ only by slot relabeling or by
//!   wealth details of the living produce equal photographs, which is what a
//!   phase-diagram snapshot should see.
//! * [`total_cooperator_wealth`]: the signed sum over every cooperator
//!   slot, dead ones included. Its event-indexed series drives the
//!   first-drop stopping time: under ordinary dynamics the only event that
//!   strictly decreases it is a cooperator losing to a defector.
//! * [`survival_counts`] / [`min_wealth`]: the end-of-run summaries used by
//!   sweeps and acceptance checks.
//! * [`TrajectoryLog`]: a strided columnar recorder producing a stable CSV
//!   (`event,clock,kind,<columns...>`) from an engine run.

use crate::engine::EventKind;
use crate::model::{Configuration, Strategy, Wealth};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use thiserror::Error;

/// Errors from summary statistics.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ObservablesError {
    /// A minimum was requested over a group with no members.
    #[error("group has no members")]
    EmptyGroup,
}

/// Count of live (strictly positive wealth) particles per site and
/// strategy. Ordered map so equality and iteration order are canonical.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Photograph {
    counts: BTreeMap<((u32, u32), Strategy), u64>,
}

impl Photograph {
    pub fn counts(&self) -> &BTreeMap<((u32, u32), Strategy), u64> {
        &self.counts
    }

    /// Live particles of one strategy summed over all sites.
    pub fn total(&self, strategy: Strategy) -> u64 {
        self.counts
            .iter()
            .filter(|((_, s), _)| *s == strategy)
            .map(|(_, n)| n)
            .sum()
    }
}

/// Buckets the live particles by site and strategy. Dead and Unborn slots
/// are invisible; slot order is irrelevant.
pub fn photograph(config: &Configuration) -> Photograph {
    let mut counts = BTreeMap::new();
    for p in config.materialized() {
        if p.is_alive() {
            *counts.entry((p.position, p.strategy)).or_insert(0) += 1;
        }
    }
    Photograph { counts }
}

/// Signed total wealth over all cooperator slots, dead cooperators
/// included. Unborn slots and defectors contribute nothing.
pub fn total_cooperator_wealth(config: &Configuration) -> Wealth {
    config
        .materialized()
        .iter()
        .filter(|p| p.strategy == Strategy::Cooperator)
        .map(|p| p.wealth)
        .sum()
}

/// Live-particle counts per strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurvivalCounts {
    pub cooperators: u64,
    pub defectors: u64,
}

/// Counts particles with strictly positive wealth per strategy.
pub fn survival_counts(config: &Configuration) -> SurvivalCounts {
    let mut counts = SurvivalCounts { cooperators: 0, defectors: 0 };
    for p in config.materialized() {
        if p.is_alive() {
            match p.strategy {
                Strategy::Cooperator => counts.cooperators += 1,
                Strategy::Defector => counts.defectors += 1,
                Strategy::Unborn => unreachable!("alive implies born"),
            }
        }
    }
    counts
}

/// Group selector for [`min_wealth`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Cooperators,
    Defectors,
    /// Every born particle, dead ones included.
    AllBorn,
}

/// Minimum wealth over the born members of a group (dead members count;
/// Unborn slots never do). Errors when the group is empty.
pub fn min_wealth(config: &Configuration, group: Group) -> Result<Wealth, ObservablesError> {
    config
        .materialized()
        .iter()
        .filter(|p| match group {
            Group::Cooperators => p.strategy == Strategy::Cooperator,
            Group::Defectors => p.strategy == Strategy::Defector,
            Group::AllBorn => p.strategy.is_born(),
        })
        .map(|p| p.wealth)
        .min()
        .ok_or(ObservablesError::EmptyGroup)
}

/// A stopping time measured in event ordinals. `Infinite` is an explicit
/// marker for "never happened on this path", not a sentinel number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoppingTime {
    Finite(u64),
    Infinite,
}

impl StoppingTime {
    pub fn is_finite(self) -> bool {
        matches!(self, StoppingTime::Finite(_))
    }

    /// The ordinal if finite.
    pub fn finite(self) -> Option<u64> {
        match self {
            StoppingTime::Finite(n) => Some(n),
            StoppingTime::Infinite => None,
        }
    }
}

/// What a recorded stopping time tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoppingKind {
    /// First event at which total cooperator wealth strictly decreases;
    /// under ordinary dynamics, the first cooperator-versus-defector game
    /// that fires.
    FirstCooperatorWealthDrop,
    /// First event at which the cooperator in this slot plays a fired
    /// cooperator/cooperator game.
    CooperatorFirstMutualGame(u64),
    /// First event at which the defector in this slot exploits a
    /// cooperator.
    DefectorFirstExploitGame(u64),
}

/// A stopping time together with what it tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoppingTimeRecord {
    pub tau: StoppingTime,
    pub kind: StoppingKind,
}

/// Event ordinals `n >= 1` at which `series[n] < series[n - 1]`, for a
/// series indexed by event ordinal with `series[0]` the initial value.
pub fn decrease_ordinals(series: &[Wealth]) -> Vec<u64> {
    series
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] < w[0])
        .map(|(idx, _)| idx as u64 + 1)
        .collect()
}

/// First strict decrease of a total-cooperator-wealth series indexed by
/// event ordinal (`series[0]` is the pre-run value). Returns `Infinite` when
/// the series never strictly decreases, including for empty and length-one
/// series.
pub fn first_cooperator_wealth_drop(series: &[Wealth]) -> StoppingTimeRecord {
    let tau = series
        .windows(2)
        .position(|w| w[1] < w[0])
        .map(|idx| StoppingTime::Finite(idx as u64 + 1))
        .unwrap_or(StoppingTime::Infinite);
    StoppingTimeRecord { tau, kind: StoppingKind::FirstCooperatorWealthDrop }
}

/// Columns a [`TrajectoryLog`] can record. All values are integers, so CSV
/// output is exact and byte-stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservableKey {
    CoopSurvivors,
    DefSurvivors,
    CoopTotalWealth,
    DefTotalWealth,
    TotalWealth,
    /// Materialized born slots, dead ones included.
    BornCount,
}

impl ObservableKey {
    pub const ALL: [ObservableKey; 6] = [
        ObservableKey::CoopSurvivors,
        ObservableKey::DefSurvivors,
        ObservableKey::CoopTotalWealth,
        ObservableKey::DefTotalWealth,
        ObservableKey::TotalWealth,
        ObservableKey::BornCount,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObservableKey::CoopSurvivors => "coop_survivors",
            ObservableKey::DefSurvivors => "def_survivors",
            ObservableKey::CoopTotalWealth => "coop_total_wealth",
            ObservableKey::DefTotalWealth => "def_total_wealth",
            ObservableKey::TotalWealth => "total_wealth",
            ObservableKey::BornCount => "born",
        }
    }

    pub fn evaluate(self, config: &Configuration) -> i64 {
        match self {
            ObservableKey::CoopSurvivors => survival_counts(config).cooperators as i64,
            ObservableKey::DefSurvivors => survival_counts(config).defectors as i64,
            ObservableKey::CoopTotalWealth => total_cooperator_wealth(config),
            ObservableKey::DefTotalWealth => config
                .materialized()
                .iter()
                .filter(|p| p.strategy == Strategy::Defector)
                .map(|p| p.wealth)
                .sum(),
            ObservableKey::TotalWealth => config.total_wealth(),
            ObservableKey::BornCount => config
                .materialized()
                .iter()
                .filter(|p| p.strategy.is_born())
                .count() as i64,
        }
    }
}

impl fmt::Display for ObservableKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObservableKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObservableKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown observable key: {s}"))
    }
}

/// Human label for an event category, used in trajectory CSVs.
pub fn event_label(kind: &EventKind) -> &'static str {
    match kind {
        EventKind::Move { .. } => "move",
        EventKind::Game { .. } => "game",
        EventKind::Birth { .. } => "birth",
    }
}

/// One recorded row of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub seq: u64,
    pub clock: f64,
    pub kind: &'static str,
    pub values: Vec<i64>,
}

/// Strided columnar recorder for engine runs.
///
/// Record the initial state with [`TrajectoryLog::record_initial`], then
/// feed every event through [`TrajectoryLog::observe`]; rows are kept for
/// event ordinals divisible by `stride` (and always for ordinal 0).
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    columns: Vec<ObservableKey>,
    stride: u64,
    rows: Vec<LogRow>,
}

impl TrajectoryLog {
    /// `stride` 0 is treated as 1 (record everything).
    pub fn new(columns: Vec<ObservableKey>, stride: u64) -> Self {
        TrajectoryLog { columns, stride: stride.max(1), rows: Vec::new() }
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    pub fn columns(&self) -> &[ObservableKey] {
        &self.columns
    }

    fn snapshot(&self, config: &Configuration) -> Vec<i64> {
        self.columns.iter().map(|k| k.evaluate(config)).collect()
    }

    /// Records the pre-run state as event ordinal 0.
    pub fn record_initial(&mut self, config: &Configuration) {
        let values = self.snapshot(config);
        self.rows.push(LogRow { seq: 0, clock: 0.0, kind: "init", values });
    }

    /// Offers one post-event state; kept iff `seq` is on the stride.
    pub fn observe(&mut self, seq: u64, clock: f64, kind: &EventKind, config: &Configuration) {
        if seq % self.stride != 0 {
            return;
        }
        let values = self.snapshot(config);
        self.rows.push(LogRow { seq, clock, kind: event_label(kind), values });
    }

    /// Writes the log as CSV: comma separator, `.` decimal point, LF line
    /// endings, one header row. Clocks use shortest-roundtrip formatting,
    /// so output is byte-stable for a given trajectory.
    pub fn write_csv(&self, out: &mut impl Write) -> io::Result<()> {
        write!(out, "event,clock,kind")?;
        for c in &self.columns {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
        for row in &self.rows {
            write!(out, "{},{},{}", row.seq, row.clock, row.kind)?;
            for v in &row.values {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
