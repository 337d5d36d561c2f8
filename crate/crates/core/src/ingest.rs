//! Event logs to city images.
//!
//! Events are placed on an `X × Y` grid by a local equirectangular
//! projection, reduced to one region per user per time slot (the last
//! observation in the slot wins), and rasterised into three channels:
//! how many users stayed in, left, or arrived in each region.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

pub const STAYING: usize = 0;
pub const LEAVING: usize = 1;
pub const ARRIVING: usize = 2;
pub const CHANNELS: usize = 3;

/// Grid geometry and time slotting. Row `i` grows northwards and column `j`
/// eastwards from the south-west corner at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_size_m: f64,
    pub rows: usize,
    pub cols: usize,
    pub slot_duration_s: i64,
    pub start_time: i64,
    pub end_time: i64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::InvalidGrid(format!(
                "grid must be at least 2x2, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.cell_size_m > 0.0 && self.cell_size_m.is_finite()) {
            return Err(Error::InvalidGrid("cell_size_m must be positive".into()));
        }
        if self.slot_duration_s <= 0 {
            return Err(Error::InvalidGrid("slot_duration_s must be positive".into()));
        }
        if self.end_time <= self.start_time {
            return Err(Error::InvalidGrid("end_time must be after start_time".into()));
        }
        if !self.origin_lat.is_finite() || self.origin_lat.abs() >= 90.0 || !self.origin_lon.is_finite() {
            return Err(Error::InvalidGrid("origin out of range".into()));
        }
        Ok(())
    }

    /// `⌈(end − start) / slot⌉`.
    pub fn slot_count(&self) -> usize {
        let span = self.end_time - self.start_time;
        ((span + self.slot_duration_s - 1) / self.slot_duration_s).max(0) as usize
    }

    pub fn region_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn slot_of(&self, timestamp: i64) -> Option<usize> {
        if timestamp < self.start_time || timestamp >= self.end_time {
            return None;
        }
        Some(((timestamp - self.start_time) / self.slot_duration_s) as usize)
    }

    pub fn slot_start(&self, slot: usize) -> i64 {
        self.start_time + slot as i64 * self.slot_duration_s
    }

    fn meters_per_degree(&self) -> (f64, f64) {
        let north = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        (north, north * self.origin_lat.to_radians().cos())
    }

    /// (north, east) offset from the origin in meters.
    pub fn to_local(&self, lat: f64, lon: f64) -> (f64, f64) {
        let (mn, me) = self.meters_per_degree();
        ((lat - self.origin_lat) * mn, (lon - self.origin_lon) * me)
    }

    pub fn to_latlon(&self, north_m: f64, east_m: f64) -> (f64, f64) {
        let (mn, me) = self.meters_per_degree();
        (self.origin_lat + north_m / mn, self.origin_lon + east_m / me)
    }

    pub fn region_index(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }
}

/// Grid cell of a point, or `None` when outside the grid.
pub fn assign_region(lat: f64, lon: f64, spec: &GridSpec) -> Option<(usize, usize)> {
    let (north, east) = spec.to_local(lat, lon);
    let i = (north / spec.cell_size_m).floor();
    let j = (east / spec.cell_size_m).floor();
    if i < 0.0 || j < 0.0 || i >= spec.rows as f64 || j >= spec.cols as f64 || !i.is_finite() || !j.is_finite() {
        return None;
    }
    Some((i as usize, j as usize))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityEvent {
    pub user_id: String,
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_category: Option<String>,
}

impl MobilityEvent {
    pub fn region(&self, spec: &GridSpec) -> Option<(usize, usize)> {
        assign_region(self.lat, self.lon, spec)
    }
}

#[derive(Debug, Clone)]
pub struct ParsedEvents {
    pub events: Vec<MobilityEvent>,
    pub skipped: usize,
    /// Line numbers (1-based, header is line 1) of the first malformed rows.
    pub malformed_lines: Vec<usize>,
}

const MALFORMED_REPORT_LIMIT: usize = 10;

/// Parse the `user_id,timestamp,lat,lon[,app_category]` CSV format.
pub fn parse_events<R: Read>(reader: R) -> Result<ParsedEvents> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_category = match names.as_slice() {
        ["user_id", "timestamp", "lat", "lon"] => false,
        ["user_id", "timestamp", "lat", "lon", "app_category"] => true,
        _ => {
            return Err(Error::Malformed {
                what: "event header".into(),
                detail: format!("expected user_id,timestamp,lat,lon[,app_category], got {names:?}"),
            })
        }
    };
    let mut events = Vec::new();
    let mut skipped = 0;
    let mut malformed_lines = Vec::new();
    for rec in rdr.records() {
        let parsed = rec.ok().map(|r| {
            let line = r.position().map_or(0, |p| p.line() as usize);
            (line, parse_record(&r, has_category))
        });
        match parsed {
            Some((_, Some(ev))) => events.push(ev),
            Some((line, None)) => {
                skipped += 1;
                if malformed_lines.len() < MALFORMED_REPORT_LIMIT {
                    malformed_lines.push(line);
                }
            }
            None => skipped += 1,
        }
    }
    if events.is_empty() {
        return Err(Error::EmptyInput {
            skipped,
            first_lines: malformed_lines,
        });
    }
    Ok(ParsedEvents {
        events,
        skipped,
        malformed_lines,
    })
}

fn parse_record(r: &csv::StringRecord, has_category: bool) -> Option<MobilityEvent> {
    let expected = if has_category { 5 } else { 4 };
    if r.len() != expected {
        return None;
    }
    let user_id = r.get(0)?.to_string();
    if user_id.is_empty() {
        return None;
    }
    let timestamp: i64 = r.get(1)?.parse().ok()?;
    let lat: f64 = r.get(2)?.parse().ok()?;
    let lon: f64 = r.get(3)?.parse().ok()?;
    if !lat.is_finite() || !lon.is_finite() {
        return None;
    }
    let app_category = if has_category {
        Some(r.get(4)?.to_string()).filter(|s| !s.is_empty())
    } else {
        None
    };
    Some(MobilityEvent {
        user_id,
        timestamp,
        lat,
        lon,
        app_category,
    })
}

/// Write events in the ingest CSV format. The category column is emitted
/// when any event carries one.
pub fn write_events<W: Write>(writer: W, events: &[MobilityEvent]) -> Result<()> {
    let with_category = events.iter().any(|e| e.app_category.is_some());
    let mut w = csv::Writer::from_writer(writer);
    if with_category {
        w.write_record(["user_id", "timestamp", "lat", "lon", "app_category"])?;
    } else {
        w.write_record(["user_id", "timestamp", "lat", "lon"])?;
    }
    for e in events {
        let ts = e.timestamp.to_string();
        let lat = e.lat.to_string();
        let lon = e.lon.to_string();
        if with_category {
            let cat = e.app_category.as_deref().unwrap_or("");
            w.write_record([e.user_id.as_str(), &ts, &lat, &lon, cat])?;
        } else {
            w.write_record([e.user_id.as_str(), &ts, &lat, &lon])?;
        }
    }
    w.flush().map_err(|e| Error::io("<events>", e))?;
    Ok(())
}

/// One region (flat index) or absence per user per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PresenceTable {
    pub users: Vec<String>,
    pub slots: usize,
    cells: Vec<Option<u32>>,
}

impl PresenceTable {
    pub fn new(users: Vec<String>, slots: usize) -> Self {
        let cells = vec![None; users.len() * slots];
        PresenceTable { users, slots, cells }
    }

    pub fn get(&self, user: usize, slot: usize) -> Option<u32> {
        self.cells[user * self.slots + slot]
    }

    pub fn set(&mut self, user: usize, slot: usize, region: Option<u32>) {
        self.cells[user * self.slots + slot] = region;
    }

    pub fn user_row(&self, user: usize) -> &[Option<u32>] {
        &self.cells[user * self.slots..(user + 1) * self.slots]
    }
}

/// Resolve events to at most one region per user per slot: the in-bounds
/// event with the latest timestamp wins, later input rows win ties. Users
/// are ordered by id.
pub fn build_presence(events: &[MobilityEvent], spec: &GridSpec) -> PresenceTable {
    let slots = spec.slot_count();
    // user -> slot -> (timestamp, region)
    let mut latest: BTreeMap<&str, BTreeMap<usize, (i64, u32)>> = BTreeMap::new();
    for e in events {
        let Some(slot) = spec.slot_of(e.timestamp) else { continue };
        let Some((i, j)) = e.region(spec) else { continue };
        let region = spec.region_index(i, j) as u32;
        let entry = latest.entry(e.user_id.as_str()).or_default();
        match entry.get(&slot) {
            Some(&(ts, _)) if ts > e.timestamp => {}
            _ => {
                entry.insert(slot, (e.timestamp, region));
            }
        }
    }
    let users: Vec<String> = latest.keys().map(|u| u.to_string()).collect();
    let mut table = PresenceTable::new(users, slots);
    for (u, per_slot) in latest.values().enumerate() {
        for (&slot, &(_, region)) in per_slot {
            table.set(u, slot, Some(region));
        }
    }
    table
}

/// `X × Y × 3` count images, one per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CityImageSeries {
    pub spec: GridSpec,
    /// Per slot, counts laid out `[i][j][channel]`.
    pub images: Vec<Vec<u32>>,
}

impl CityImageSeries {
    pub fn zeros(spec: GridSpec, slots: usize) -> Self {
        let len = spec.region_count() * CHANNELS;
        CityImageSeries {
            spec,
            images: vec![vec![0; len]; slots],
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn count(&self, slot: usize, region: usize, channel: usize) -> u32 {
        self.images[slot][region * CHANNELS + channel]
    }

    /// Sum of one channel over all regions of a slot.
    pub fn channel_total(&self, slot: usize, channel: usize) -> u64 {
        self.images[slot]
            .iter()
            .skip(channel)
            .step_by(CHANNELS)
            .map(|&c| c as u64)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["slot", "i", "j", "staying", "leaving", "arriving"])?;
        for (slot, img) in self.images.iter().enumerate() {
            for (r, px) in img.chunks(CHANNELS).enumerate() {
                if px.iter().all(|&c| c == 0) {
                    continue;
                }
                let (i, j) = (r / self.spec.cols, r % self.spec.cols);
                w.serialize((slot, i, j, px[0], px[1], px[2]))?;
            }
        }
        w.flush().map_err(|e| Error::io("<images>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let mut series = CityImageSeries::zeros(spec.clone(), spec.slot_count());
        let mut rdr = csv::Reader::from_reader(reader);
        for rec in rdr.deserialize::<(usize, usize, usize, u32, u32, u32)>() {
            let (slot, i, j, s, l, a) = rec?;
            if slot >= series.len() || i >= spec.rows || j >= spec.cols {
                return Err(Error::Malformed {
                    what: "images.csv".into(),
                    detail: format!("cell ({slot}, {i}, {j}) outside grid"),
                });
            }
            let base = spec.region_index(i, j) * CHANNELS;
            series.images[slot][base..base + CHANNELS].copy_from_slice(&[s, l, a]);
        }
        Ok(series)
    }

    /// `images.csv` plus the `grid.json` sidecar.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let img = dir.join("images.csv");
        let f = fs::File::create(&img).map_err(|e| Error::io(&img, e))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let grid = dir.join("grid.json");
        let json = serde_json::to_string_pretty(&self.spec)?;
        fs::write(&grid, json + "\n").map_err(|e| Error::io(&grid, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let grid = dir.join("grid.json");
        let text = fs::read_to_string(&grid).map_err(|_| Error::MissingInput(grid.clone()))?;
        let spec: GridSpec = serde_json::from_str(&text)?;
        let img = dir.join("images.csv");
        let f = fs::File::open(&img).map_err(|_| Error::MissingInput(img.clone()))?;
        CityImageSeries::read_csv(std::io::BufReader::new(f), spec)
    }
}

/// Turn per-slot presence into staying/leaving/arriving counts.
///
/// A user present in both `n − 1` and `n` either stays (same region) or
/// leaves the old region and arrives in the new one. A user present in `n`
/// but absent in `n − 1` (including every user at slot 0) counts as staying.
pub fn rasterize(presence: &PresenceTable, spec: &GridSpec) -> CityImageSeries {
    let mut series = CityImageSeries::zeros(spec.clone(), presence.slots);
    for u in 0..presence.users.len() {
        let row = presence.user_row(u);
        let mut prev: Option<u32> = None;
        for (n, &cur) in row.iter().enumerate() {
            if let Some(r) = cur {
                let img = &mut series.images[n];
                match prev {
                    Some(p) if p != r => {
                        img[p as usize * CHANNELS + LEAVING] += 1;
                        img[r as usize * CHANNELS + ARRIVING] += 1;
                    }
                    _ => img[r as usize * CHANNELS + STAYING] += 1,
                }
            }
            prev = cur;
        }
    }
    series
}

/// Parse, assign, resolve and rasterise in one go.
pub fn images_from_events(events: &[MobilityEvent], spec: &GridSpec) -> Result<CityImageSeries> {
    spec.validate()?;
    let presence = build_presence(events, spec);
    Ok(rasterize(&presence, spec))
}
