//! Static SVG views of a state series and of the 2D feature projection.
//! Output depends only on the inputs.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::calendar::{DayType, DayTypeCalendar};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::states::StateSeries;

const BASE: [&str; 16] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#e7ba52", "#ad494a", "#637939", "#a55194", "#6baed6",
];

/// State id → colour. The first sixteen ids get fixed, distinct colours, so a
/// state keeps its colour across K; later ids walk the hue circle.
#[derive(Debug, Clone, Copy, Default)]
pub struct Palette;

impl Palette {
    pub fn color(&self, state: usize) -> String {
        if let Some(c) = BASE.get(state) {
            return (*c).to_string();
        }
        let hue = (state as f64 * 137.507_764) % 360.0;
        let (r, g, b) = hsl_to_rgb(hue, 0.55, 0.5);
        format!("#{r:02x}{g:02x}{b:02x}")
    }
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> (u8, u8, u8) {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let m = l - c / 2.0;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let to = |v: f64| ((v + m) * 255.0).round() as u8;
    (to(r), to(g), to(b))
}

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn slots_per_day(slot_duration_s: i64) -> Result<usize> {
    if slot_duration_s <= 0 || 86_400 % slot_duration_s != 0 {
        return Err(Error::InvalidParams(format!(
            "slot duration {slot_duration_s} s does not divide a day"
        )));
    }
    Ok((86_400 / slot_duration_s) as usize)
}

fn non_empty(series: &StateSeries) -> Result<()> {
    if series.is_empty() {
        return Err(Error::DegenerateInput("empty state series".into()));
    }
    Ok(())
}

/// Local day number and slot-of-day of every slot.
fn day_slots(series: &StateSeries, calendar: &DayTypeCalendar, slot_duration_s: i64) -> Vec<(i64, usize)> {
    series
        .slot_times
        .iter()
        .map(|&t| {
            let sod = (calendar.seconds_of_day(t) / slot_duration_s) as usize;
            (calendar.day_number(t), sod)
        })
        .collect()
}

const CELL: f64 = 12.0;
const GUTTER: f64 = 150.0;

/// One row per local day, one cell per slot, with date and day type in the
/// left gutter.
pub fn render_strip(series: &StateSeries, calendar: &DayTypeCalendar, slot_duration_s: i64) -> Result<String> {
    non_empty(series)?;
    let per_day = slots_per_day(slot_duration_s)?;
    let placed = day_slots(series, calendar, slot_duration_s);
    let mut rows: BTreeMap<i64, i64> = BTreeMap::new();
    for (&(day, _), &t) in placed.iter().zip(&series.slot_times) {
        rows.entry(day).or_insert(t);
    }
    let row_of: BTreeMap<i64, usize> = rows.keys().enumerate().map(|(r, &d)| (d, r)).collect();
    let palette = Palette;
    let mut s = svg_open(GUTTER + per_day as f64 * CELL, rows.len() as f64 * CELL);
    s.push_str("<g class=\"labels\" font-family=\"monospace\" font-size=\"10\">\n");
    for (r, &t) in rows.values().enumerate() {
        let date = calendar.local_date(t);
        let _ = writeln!(
            s,
            "<text x=\"2\" y=\"{:.1}\">{} {}</text>",
            r as f64 * CELL + CELL - 2.0,
            date,
            calendar.day_type(date)
        );
    }
    s.push_str("</g>\n<g class=\"cells\">\n");
    for (&(day, sod), &state) in placed.iter().zip(&series.labels) {
        let _ = writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\"/>",
            GUTTER + sod as f64 * CELL,
            row_of[&day] as f64 * CELL,
            palette.color(state)
        );
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

/// Most frequent state per slot-of-day over the days in `group`; ties go
/// to the smaller state id. `None` where the group has no data.
pub fn modal_states(
    series: &StateSeries,
    calendar: &DayTypeCalendar,
    slot_duration_s: i64,
    group: DayType,
) -> Result<Vec<Option<usize>>> {
    let per_day = slots_per_day(slot_duration_s)?;
    let mut counts: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); per_day];
    for (&(_, sod), (&t, &state)) in day_slots(series, calendar, slot_duration_s)
        .iter()
        .zip(series.slot_times.iter().zip(&series.labels))
    {
        if calendar.day_type_at(t) == group {
            *counts[sod].entry(state).or_default() += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| c.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(s, _)| s))
        .collect())
}

const RING: f64 = 40.0;
const HOLE: f64 = 30.0;

/// Concentric 24-hour rings, first group innermost. Sector `k` spans
/// `[k, k+1)·360°/slots` clockwise from 12 o'clock.
pub fn render_rings(
    series: &StateSeries,
    calendar: &DayTypeCalendar,
    slot_duration_s: i64,
    groups: &[DayType],
) -> Result<String> {
    non_empty(series)?;
    let per_day = slots_per_day(slot_duration_s)?;
    let outer = HOLE + RING * groups.len() as f64;
    let size = 2.0 * outer + 20.0;
    let c = size / 2.0;
    let palette = Palette;
    let mut s = svg_open(size, size);
    let point = |r: f64, a: f64| (c + r * a.sin(), c - r * a.cos());
    for (g, &group) in groups.iter().enumerate() {
        let modal = modal_states(series, calendar, slot_duration_s, group)?;
        let (r0, r1) = (HOLE + RING * g as f64, HOLE + RING * (g + 1) as f64);
        let _ = writeln!(s, "<g class=\"ring\" data-group=\"{group}\">");
        for (k, state) in modal.iter().enumerate() {
            let a0 = 2.0 * PI * k as f64 / per_day as f64;
            let a1 = 2.0 * PI * (k + 1) as f64 / per_day as f64;
            let (p0, p1, p2, p3) = (point(r1, a0), point(r1, a1), point(r0, a1), point(r0, a0));
            let fill = state.map_or_else(|| "#dddddd".to_string(), |st| palette.color(st));
            let _ = writeln!(
                s,
                "<path d=\"M{:.3},{:.3} A{r1},{r1} 0 0,1 {:.3},{:.3} L{:.3},{:.3} A{r0},{r0} 0 0,0 {:.3},{:.3} Z\" fill=\"{fill}\" stroke=\"white\" stroke-width=\"0.5\"/>",
                p0.0, p0.1, p1.0, p1.1, p2.0, p2.1, p3.0, p3.1
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{c:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n</g>",
            c - (r0 + r1) / 2.0,
            escape(group.as_str())
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// One circle per row of `points` (first two columns), coloured by label.
pub fn render_scatter(points: &DenseMatrix, labels: &[usize]) -> Result<String> {
    if points.rows() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} points, {} labels",
            points.rows(),
            labels.len()
        )));
    }
    if points.cols() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            actual: points.cols(),
        });
    }
    const SIZE: f64 = 500.0;
    const PAD: f64 = 20.0;
    let xs: Vec<f64> = points.row_iter().map(|r| r[0]).collect();
    let ys: Vec<f64> = points.row_iter().map(|r| r[1]).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi - lo } else { 1.0 })
    };
    let ((x0, xw), (y0, yw)) = (range(&xs), range(&ys));
    let palette = Palette;
    let mut s = svg_open(SIZE + 2.0 * PAD, SIZE + 2.0 * PAD);
    for ((x, y), &l) in xs.iter().zip(&ys).zip(labels) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.7\"/>",
            PAD + (x - x0) / xw * SIZE,
            PAD + SIZE - (y - y0) / yw * SIZE,
            palette.color(l)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    const START: i64 = 1_711_900_800; // 2024-04-01 00:00 at UTC+8

    fn cal() -> DayTypeCalendar {
        DayTypeCalendar::new(8 * 3600, [])
    }

    fn series(labels: Vec<usize>) -> StateSeries {
        let slot_times = (0..labels.len() as i64).map(|n| START + n * 1800).collect();
        StateSeries {
            k: labels.iter().max().map_or(0, |m| m + 1),
            labels,
            slot_times,
        }
    }

    fn parse(svg: &str) -> roxmltree::Document<'_> {
        roxmltree::Document::parse(svg).expect("well-formed SVG")
    }

    fn count(doc: &roxmltree::Document, tag: &str) -> usize {
        doc.descendants().filter(|n| n.has_tag_name(tag)).count()
    }

    #[test]
    fn palette_distinct_up_to_sixteen() {
        let colors: BTreeSet<String> = (0..16).map(|s| Palette.color(s)).collect();
        assert_eq!(colors.len(), 16);
        assert_eq!(Palette.color(3), Palette.color(3));
        assert!(Palette.color(40).starts_with('#') && Palette.color(40).len() == 7);
    }

    #[test]
    fn strip_uniform_day() {
        let svg = render_strip(&series(vec![2; 48]), &cal(), 1800).unwrap();
        let doc = parse(&svg);
        let fills: BTreeSet<&str> = doc
            .descendants()
            .filter(|n| n.has_tag_name("rect"))
            .map(|n| n.attribute("fill").unwrap())
            .collect();
        assert_eq!(count(&doc, "rect"), 48);
        assert_eq!(fills.len(), 1);
        assert!(svg.contains("2024-04-01 weekday"));
    }

    #[test]
    fn strip_thirty_days() {
        let labels: Vec<usize> = (0..30 * 48).map(|n| (n / 7) % 5).collect();
        let svg = render_strip(&series(labels), &cal(), 1800).unwrap();
        let doc = parse(&svg);
        assert_eq!(count(&doc, "rect"), 30 * 48);
        assert_eq!(count(&doc, "text"), 30);
        assert!(render_strip(&series(vec![]), &cal(), 1800).is_err());
    }

    #[test]
    fn single_day_ring_equals_labels() {
        let labels: Vec<usize> = (0..48).map(|n| n % 3).collect();
        let s = series(labels.clone());
        let modal = modal_states(&s, &cal(), 1800, DayType::Weekday).unwrap();
        assert_eq!(modal, labels.into_iter().map(Some).collect::<Vec<_>>());
    }

    #[test]
    fn rings_per_group() {
        let labels: Vec<usize> = (0..7 * 48).map(|n| (n / 48 >= 5) as usize).collect();
        let s = series(labels);
        let svg = render_rings(&s, &cal(), 1800, &[DayType::Weekday, DayType::Weekend]).unwrap();
        let doc = parse(&svg);
        assert_eq!(count(&doc, "g"), 2);
        assert_eq!(count(&doc, "path"), 96);
        let ring_fills = |g: usize| -> BTreeSet<String> {
            doc.descendants()
                .filter(|n| n.has_tag_name("g"))
                .nth(g)
                .unwrap()
                .children()
                .filter(|n| n.has_tag_name("path"))
                .map(|n| n.attribute("fill").unwrap().to_string())
                .collect()
        };
        assert_eq!(ring_fills(0), BTreeSet::from([Palette.color(0)]));
        assert_eq!(ring_fills(1), BTreeSet::from([Palette.color(1)]));
    }

    #[test]
    fn sector_angles_cover_the_circle() {
        let svg = render_rings(&series(vec![0; 48]), &cal(), 1800, &[DayType::Weekday]).unwrap();
        let doc = parse(&svg);
        let size: f64 = doc.root_element().attribute("width").unwrap().parse().unwrap();
        let c = size / 2.0;
        let mut total = 0.0;
        for path in doc.descendants().filter(|n| n.has_tag_name("path")) {
            let d = path.attribute("d").unwrap();
            let nums: Vec<f64> = d
                .split(|ch: char| !(ch.is_ascii_digit() || ch == '.' || ch == '-'))
                .filter(|t| !t.is_empty())
                .map(|t| t.parse().unwrap())
                .collect();
            // M x0,y0 A r,r 0 0,1 x1,y1 ...
            let angle = |x: f64, y: f64| (x - c).atan2(c - y).to_degrees().rem_euclid(360.0);
            let sweep = (angle(nums[7], nums[8]) - angle(nums[0], nums[1])).rem_euclid(360.0);
            assert!((sweep - 7.5).abs() < 1e-3, "{sweep}");
            total += sweep;
        }
        assert!((total - 360.0).abs() < 1e-2);
    }

    #[test]
    fn scatter_points() {
        let pts = DenseMatrix::new(4, 2, vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0, -1.0]).unwrap();
        let svg = render_scatter(&pts, &[0, 1, 1, 2]).unwrap();
        let doc = parse(&svg);
        let circles: Vec<(String, String)> = doc
            .descendants()
            .filter(|n| n.has_tag_name("circle"))
            .map(|n| (n.attribute("cx").unwrap().into(), n.attribute("cy").unwrap().into()))
            .collect();
        assert_eq!(circles.len(), 4);
        assert_eq!(circles[1], circles[2]);
        assert!(render_scatter(&pts, &[0, 1]).is_err());
    }

    #[test]
    fn rendering_is_pure() {
        let s = series((0..96).map(|n| n % 4).collect());
        assert_eq!(render_strip(&s, &cal(), 1800).unwrap(), render_strip(&s, &cal(), 1800).unwrap());
        assert_eq!(
            render_rings(&s, &cal(), 1800, &DayType::ALL).unwrap(),
            render_rings(&s, &cal(), 1800, &DayType::ALL).unwrap()
        );
    }
}
