//! Agent-based synthetic mobility with known regime labels.
//!
//! Every agent owns a home, a work and a leisure cell and follows the
//! schedule of the current day type slot by slot. Commutes walk a straight
//! grid line between the anchors of the surrounding regimes. Each agent draws
//! from its own ChaCha stream, so results do not depend on thread count.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{DayType, DayTypeCalendar};
use crate::error::{Error, Result};
use crate::ingest::{CityImageSeries, GridSpec, MobilityEvent, ARRIVING, CHANNELS, LEAVING};

pub const SLOT_SECONDS: i64 = 1800;
pub const SLOTS_PER_DAY: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Sleep,
    Commute,
    Work,
    Relax,
    Home,
}

impl Regime {
    pub const ALL: [Regime; 5] = [Regime::Sleep, Regime::Commute, Regime::Work, Regime::Relax, Regime::Home];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Sleep => "sleep",
            Regime::Commute => "commute",
            Regime::Work => "work",
            Regime::Relax => "relax",
            Regime::Home => "home",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Malformed {
                what: "regime".into(),
                detail: s.to_string(),
            })
    }
}

/// Half-open slot range `[start, end)` of a day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub start: usize,
    pub end: usize,
    pub regime: Regime,
}

/// Rectangle of grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Zone {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Zone {
    fn pick(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        (self.row + rng.gen_range(0..self.rows), self.col + rng.gen_range(0..self.cols))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryWeight {
    pub category: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub agents: usize,
    pub days: usize,
    pub start_date: NaiveDate,
    pub utc_offset_s: i64,
    pub holidays: Vec<NaiveDate>,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_size_m: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub schedules: BTreeMap<DayType, Vec<ScheduleEntry>>,
    pub home_zone: Zone,
    pub work_zone: Zone,
    pub leisure_zone: Zone,
    pub observation_rate: f64,
    /// Chance that an agent in the home regime is out on an errand in a
    /// neighbouring cell during a slot.
    pub errand_rate: f64,
    /// Chance of one app-usage event per agent and slot.
    pub usage_rate: f64,
    pub usage: BTreeMap<Regime, Vec<CategoryWeight>>,
}

fn entries(spec: &[(usize, usize, Regime)]) -> Vec<ScheduleEntry> {
    spec.iter()
        .map(|&(start, end, regime)| ScheduleEntry { start, end, regime })
        .collect()
}

fn weights(spec: &[(&str, f64)]) -> Vec<CategoryWeight> {
    spec.iter()
        .map(|&(c, w)| CategoryWeight {
            category: c.to_string(),
            weight: w,
        })
        .collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        use Regime::*;
        let start_date = NaiveDate::from_ymd_opt(2024, 4, 1).expect("valid date");
        let schedules = BTreeMap::from([
            (
                DayType::Weekday,
                entries(&[(0, 14, Sleep), (14, 18, Commute), (18, 34, Work), (34, 38, Commute), (38, 44, Relax), (44, 48, Home)]),
            ),
            (DayType::Weekend, entries(&[(0, 14, Sleep), (14, 24, Home), (24, 40, Relax), (40, 48, Home)])),
            (DayType::Holiday, entries(&[(0, 14, Sleep), (14, 38, Relax), (38, 48, Home)])),
        ]);
        let usage = BTreeMap::from([
            (Sleep, weights(&[("reading", 1.0), ("music", 1.0), ("social", 0.5)])),
            (Commute, weights(&[("map", 4.0), ("news", 3.0), ("music", 2.0), ("social", 1.0)])),
            (Work, weights(&[("office", 5.0), ("stock", 3.0), ("news", 1.0), ("social", 1.0)])),
            (Relax, weights(&[("shopping", 4.0), ("game", 2.0), ("social", 2.0), ("map", 1.0)])),
            (Home, weights(&[("video", 4.0), ("game", 2.0), ("social", 2.0), ("reading", 1.0)])),
        ]);
        SynthConfig {
            seed: 7,
            agents: 200,
            days: 28,
            start_date,
            utc_offset_s: 8 * 3600,
            holidays: (10..=12)
                .map(|d| NaiveDate::from_ymd_opt(2024, 4, d).expect("valid date"))
                .collect(),
            origin_lat: 39.80,
            origin_lon: 116.20,
            cell_size_m: 1000.0,
            grid_rows: 16,
            grid_cols: 16,
            schedules,
            home_zone: Zone { row: 0, col: 0, rows: 6, cols: 6 },
            work_zone: Zone { row: 10, col: 9, rows: 5, cols: 5 },
            leisure_zone: Zone { row: 1, col: 11, rows: 4, cols: 4 },
            observation_rate: 0.8,
            errand_rate: 0.4,
            usage_rate: 0.3,
            usage,
        }
    }
}

impl SynthConfig {
    pub fn calendar(&self) -> DayTypeCalendar {
        DayTypeCalendar::new(self.utc_offset_s, self.holidays.iter().copied())
    }

    pub fn start_time(&self) -> i64 {
        self.start_date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp() - self.utc_offset_s
    }

    pub fn grid(&self) -> GridSpec {
        let start = self.start_time();
        GridSpec {
            origin_lat: self.origin_lat,
            origin_lon: self.origin_lon,
            cell_size_m: self.cell_size_m,
            rows: self.grid_rows,
            cols: self.grid_cols,
            slot_duration_s: SLOT_SECONDS,
            start_time: start,
            end_time: start + self.days as i64 * 86_400,
        }
    }

    pub fn slots(&self) -> usize {
        self.days * SLOTS_PER_DAY
    }

    pub fn date_of_day(&self, day: usize) -> NaiveDate {
        self.start_date + chrono::Days::new(day as u64)
    }

    pub fn day_types(&self) -> Vec<DayType> {
        let cal = self.calendar();
        (0..self.days).map(|d| cal.day_type(self.date_of_day(d))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.agents == 0 || self.days == 0 {
            return bad("agents and days must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.observation_rate)
            || !(0.0..=1.0).contains(&self.errand_rate)
            || !(0.0..=1.0).contains(&self.usage_rate)
        {
            return bad("rates must lie in [0, 1]".into());
        }
        self.grid().validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for dt in DayType::ALL {
            let Some(s) = self.schedules.get(&dt) else {
                return bad(format!("no schedule for {dt}"));
            };
            let mut at = 0;
            for e in s {
                if e.start != at || e.end <= e.start {
                    return bad(format!("{dt} schedule does not partition the day at slot {at}"));
                }
                at = e.end;
            }
            if at != SLOTS_PER_DAY {
                return bad(format!("{dt} schedule ends at slot {at}, expected {SLOTS_PER_DAY}"));
            }
        }
        for (name, z) in [("home", self.home_zone), ("work", self.work_zone), ("leisure", self.leisure_zone)] {
            if z.rows == 0 || z.cols == 0 || z.row + z.rows > self.grid_rows || z.col + z.cols > self.grid_cols {
                return bad(format!("{name} zone outside the grid"));
            }
        }
        for (r, ws) in &self.usage {
            if ws.iter().any(|w| w.weight.is_nan() || w.weight < 0.0) || ws.iter().map(|w| w.weight).sum::<f64>() <= 0.0 {
                return bad(format!("usage weights for {r} must be non-negative with positive sum"));
            }
        }
        Ok(())
    }
}

/// Per-slot regime labels and true agent cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub regimes: Vec<Regime>,
    pub day_types: Vec<DayType>,
    /// `regions[agent][slot]`, region index `i·cols + j`.
    pub regions: Vec<Vec<u32>>,
}

impl GroundTruth {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["slot", "regime"])?;
        for (n, r) in self.regimes.iter().enumerate() {
            w.write_record([n.to_string(), r.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Regime labels from a `slot,regime` file.
    pub fn read_regimes<R: Read>(reader: R) -> Result<Vec<Regime>> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            out.push(rec[1].parse()?);
        }
        Ok(out)
    }
}

pub struct SynthOutput {
    pub events: Vec<MobilityEvent>,
    pub usage: Vec<MobilityEvent>,
    pub truth: GroundTruth,
}

/// Cells on the line from `a` to `b`, both ends included.
pub fn bresenham(a: (usize, usize), b: (usize, usize)) -> Vec<(usize, usize)> {
    let (mut x, mut y) = (a.0 as i64, a.1 as i64);
    let (x1, y1) = (b.0 as i64, b.1 as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = vec![(x as usize, y as usize)];
    while (x, y) != (x1, y1) {
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
        out.push((x as usize, y as usize));
    }
    out
}

struct Agent {
    home: (usize, usize),
    work: (usize, usize),
    leisure: (usize, usize),
}

impl Agent {
    fn anchor(&self, r: Regime) -> (usize, usize) {
        match r {
            Regime::Work => self.work,
            Regime::Relax => self.leisure,
            _ => self.home,
        }
    }
}

/// Regime of each slot of a day type's schedule.
fn day_plan(schedule: &[ScheduleEntry]) -> Vec<Regime> {
    let mut plan = vec![Regime::Sleep; SLOTS_PER_DAY];
    for e in schedule {
        plan[e.start..e.end].iter_mut().for_each(|p| *p = e.regime);
    }
    plan
}

fn neighbour(cell: (usize, usize), rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> (usize, usize) {
    const STEPS: [(i64, i64); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
    let (di, dj) = STEPS[rng.gen_range(0..STEPS.len())];
    let i = (cell.0 as i64 + di).clamp(0, rows as i64 - 1) as usize;
    let j = (cell.1 as i64 + dj).clamp(0, cols as i64 - 1) as usize;
    (i, j)
}

fn sample_category<'a>(ws: &'a [CategoryWeight], rng: &mut ChaCha8Rng) -> &'a str {
    let total: f64 = ws.iter().map(|w| w.weight).sum();
    let mut x = rng.gen::<f64>() * total;
    for w in ws {
        if x < w.weight {
            return &w.category;
        }
        x -= w.weight;
    }
    &ws.last().expect("validated non-empty").category
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let grid = cfg.grid();
    let day_types = cfg.day_types();
    let plans: BTreeMap<DayType, Vec<Regime>> = cfg.schedules.iter().map(|(k, v)| (*k, day_plan(v))).collect();
    let regimes: Vec<Regime> = day_types.iter().flat_map(|dt| plans[dt].iter().copied()).collect();
    let slots = regimes.len();

    // Commute slots sit between the regimes before and after them; record
    // each commute run's (from, to, position, length).
    let mut commute: Vec<Option<(Regime, Regime, usize, usize)>> = vec![None; slots];
    let mut n = 0;
    while n < slots {
        if regimes[n] != Regime::Commute {
            n += 1;
            continue;
        }
        let start = n;
        while n < slots && regimes[n] == Regime::Commute {
            n += 1;
        }
        let from = if start > 0 { regimes[start - 1] } else { Regime::Home };
        let to = if n < slots { regimes[n] } else { Regime::Home };
        for (k, c) in commute[start..n].iter_mut().enumerate() {
            *c = Some((from, to, k, n - start));
        }
    }

    let per_agent: Vec<(Vec<MobilityEvent>, Vec<MobilityEvent>, Vec<u32>)> = (0..cfg.agents)
        .into_par_iter()
        .map(|a| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(a as u64 + 1);
            let agent = Agent {
                home: cfg.home_zone.pick(&mut rng),
                work: cfg.work_zone.pick(&mut rng),
                leisure: cfg.leisure_zone.pick(&mut rng),
            };
            let user = format!("u{a:04}");
            let mut events = Vec::new();
            let mut usage = Vec::new();
            let mut cells = Vec::with_capacity(slots);
            for (n, &regime) in regimes.iter().enumerate() {
                let cell = match (regime, commute[n]) {
                    (Regime::Commute, Some((from, to, k, len))) => {
                        let path = bresenham(agent.anchor(from), agent.anchor(to));
                        path[((k + 1) * (path.len() - 1)).div_ceil(len)]
                    }
                    (Regime::Home, _) if rng.gen_bool(cfg.errand_rate) => {
                        neighbour(agent.home, cfg.grid_rows, cfg.grid_cols, &mut rng)
                    }
                    (r, _) => agent.anchor(r),
                };
                cells.push((cell.0 * cfg.grid_cols + cell.1) as u32);
                let emit = |rng: &mut ChaCha8Rng, category: Option<String>| {
                    let ts = grid.slot_start(n) + rng.gen_range(0..SLOT_SECONDS);
                    let north = (cell.0 as f64 + rng.gen_range(0.05..0.95)) * cfg.cell_size_m;
                    let east = (cell.1 as f64 + rng.gen_range(0.05..0.95)) * cfg.cell_size_m;
                    let (lat, lon) = grid.to_latlon(north, east);
                    MobilityEvent {
                        user_id: user.clone(),
                        timestamp: ts,
                        lat,
                        lon,
                        app_category: category,
                    }
                };
                if rng.gen_bool(cfg.observation_rate) {
                    events.push(emit(&mut rng, None));
                }
                if rng.gen_bool(cfg.usage_rate) {
                    if let Some(ws) = cfg.usage.get(&regime).filter(|w| !w.is_empty()) {
                        let c = sample_category(ws, &mut rng).to_string();
                        usage.push(emit(&mut rng, Some(c)));
                    }
                }
            }
            (events, usage, cells)
        })
        .collect();

    let mut events = Vec::new();
    let mut usage = Vec::new();
    let mut regions = Vec::with_capacity(cfg.agents);
    for (e, u, c) in per_agent {
        events.extend(e);
        usage.extend(u);
        regions.push(c);
    }
    let key = |e: &MobilityEvent| (e.timestamp, e.user_id.clone());
    events.sort_by_key(key);
    usage.sort_by_key(key);
    Ok(SynthOutput {
        events,
        usage,
        truth: GroundTruth {
            regimes,
            day_types,
            regions,
        },
    })
}

/// Ratio of mean movement (leaving + arriving) over commute slots to that
/// over sleep slots; `None` when either regime is absent. Infinite when
/// sleep slots carry no movement at all.
pub fn regime_separability(images: &CityImageSeries, regimes: &[Regime]) -> Option<f64> {
    let movement = |n: usize| -> f64 {
        images.images[n]
            .chunks(CHANNELS)
            .map(|c| (c[LEAVING] + c[ARRIVING]) as f64)
            .sum()
    };
    let mean = |r: Regime| {
        let v: Vec<f64> = (0..regimes.len()).filter(|&n| regimes[n] == r).map(movement).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let (c, s) = (mean(Regime::Commute)?, mean(Regime::Sleep)?);
    Some(if s == 0.0 { f64::INFINITY } else { c / s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_presence, images_from_events, write_events};

    fn small() -> SynthConfig {
        SynthConfig {
            agents: 20,
            days: 7,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = SynthConfig::default();
        cfg.validate().unwrap();
        let types = cfg.day_types();
        let count = |t| types.iter().filter(|&&x| x == t).count();
        assert_eq!((count(DayType::Weekday), count(DayType::Weekend), count(DayType::Holiday)), (17, 8, 3));
    }

    #[test]
    fn bresenham_lines() {
        assert_eq!(bresenham((0, 0), (0, 3)), vec![(0, 0), (0, 1), (0, 2), (0, 3)]);
        assert_eq!(bresenham((2, 2), (0, 0)), vec![(2, 2), (1, 1), (0, 0)]);
        assert_eq!(bresenham((1, 1), (1, 1)), vec![(1, 1)]);
        let p = bresenham((0, 0), (5, 2));
        assert_eq!(p.len(), 6);
        assert!(p.windows(2).all(|w| w[0].0.abs_diff(w[1].0) <= 1 && w[0].1.abs_diff(w[1].1) <= 1));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = small();
        c.schedules.get_mut(&DayType::Weekend).unwrap().pop();
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        let mut c = small();
        c.work_zone.row = 15;
        assert!(c.validate().is_err());
        let c = SynthConfig { observation_rate: 1.5, ..small() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn stationary_agent_fully_observed() {
        let mut cfg = SynthConfig {
            agents: 1,
            days: 1,
            observation_rate: 1.0,
            ..SynthConfig::default()
        };
        for s in cfg.schedules.values_mut() {
            *s = vec![ScheduleEntry { start: 0, end: 48, regime: Regime::Sleep }];
        }
        let out = generate(&cfg).unwrap();
        assert_eq!(out.events.len(), 48);
        let spec = cfg.grid();
        let cells: Vec<_> = out.events.iter().map(|e| e.region(&spec).unwrap()).collect();
        assert!(cells.iter().all(|c| *c == cells[0]));
        let slots: Vec<_> = out.events.iter().map(|e| spec.slot_of(e.timestamp).unwrap()).collect();
        assert_eq!(slots, (0..48).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_bytes() {
        let dump = || {
            let out = generate(&small()).unwrap();
            let mut buf = Vec::new();
            write_events(&mut buf, &out.events).unwrap();
            write_events(&mut buf, &out.usage).unwrap();
            out.truth.write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(dump(), dump());
    }

    #[test]
    fn full_observation_reproduces_truth() {
        let cfg = SynthConfig { observation_rate: 1.0, ..small() };
        let out = generate(&cfg).unwrap();
        let p = build_presence(&out.events, &cfg.grid());
        for (a, row) in out.truth.regions.iter().enumerate() {
            assert_eq!(p.user_row(a).iter().map(|c| c.unwrap()).collect::<Vec<_>>(), *row);
        }
    }

    #[test]
    fn movement_peaks_on_commutes() {
        let cfg = SynthConfig { days: 14, ..SynthConfig::default() };
        let out = generate(&cfg).unwrap();
        let images = images_from_events(&out.events, &cfg.grid()).unwrap();
        let regimes = &out.truth.regimes;
        assert!(regime_separability(&images, regimes).unwrap() >= 5.0);
        let leaving = |n: usize| -> u32 { images.images[n].chunks(CHANNELS).map(|c| c[LEAVING]).sum() };
        let quiet_max = (0..regimes.len())
            .filter(|&n| matches!(regimes[n], Regime::Sleep | Regime::Work))
            .map(leaving)
            .max()
            .unwrap();
        for n in (0..regimes.len()).filter(|&n| regimes[n] == Regime::Commute) {
            assert!(leaving(n) > quiet_max, "slot {n}");
        }
    }

    #[test]
    fn usage_follows_regimes() {
        let out = generate(&small()).unwrap();
        let spec = small().grid();
        assert!(!out.usage.is_empty());
        for e in &out.usage {
            let r = out.truth.regimes[spec.slot_of(e.timestamp).unwrap()];
            let c = e.app_category.as_deref().unwrap();
            assert!(small().usage[&r].iter().any(|w| w.category == c));
        }
    }

    #[test]
    fn truth_csv_round_trip() {
        let out = generate(&small()).unwrap();
        let mut buf = Vec::new();
        out.truth.write_csv(&mut buf).unwrap();
        assert_eq!(GroundTruth::read_regimes(buf.as_slice()).unwrap(), out.truth.regimes);
    }
}
