//! City states: Ward agglomerative clustering of per-slot feature vectors,
//! dendrogram cuts, nested hierarchy export and per-state profiles.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{DayType, DayTypeCalendar};
use crate::error::{Error, Result};
use crate::ingest::{CityImageSeries, ARRIVING, LEAVING, STAYING};
use crate::linalg::DenseMatrix;

/// One agglomeration step. Node ids below `leaves` are input rows; merge `t`
/// creates node `leaves + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    /// Ward cost `|A||B| / (|A|+|B|) · ‖c_A − c_B‖²`.
    pub cost: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
}

/// Exact Ward clustering via the Lance–Williams recurrence.
///
/// Ties on cost go to the pair with the smallest `(left, right)` node ids.
pub fn ward_cluster(features: &DenseMatrix) -> Result<Dendrogram> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 slots, got {n}")));
    }
    // Full symmetric cost matrix indexed by slot; slot s holds node ids[s].
    let mut cost: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = features.row(i);
            (0..n).map(move |j| {
                let xj = features.row(j);
                0.5 * xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
        })
        .collect();
    let mut ids: Vec<usize> = (0..n).collect();
    let mut sizes: Vec<usize> = vec![1; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for (ai, &s) in active.iter().enumerate() {
            let row = &cost[s * n..(s + 1) * n];
            for &t in &active[ai + 1..] {
                let c = row[t];
                let (lo, hi) = if ids[s] < ids[t] { (ids[s], ids[t]) } else { (ids[t], ids[s]) };
                let better = match best {
                    None => true,
                    Some((bc, blo, bhi, _, _)) => {
                        c < bc || (c == bc && (lo, hi) < (blo, bhi))
                    }
                };
                if better {
                    best = Some((c, lo, hi, s, t));
                }
            }
        }
        let (c, lo, hi, s, t) = best.expect("at least two active clusters");
        let (ns, nt) = (sizes[s] as f64, sizes[t] as f64);
        for &k in &active {
            if k == s || k == t {
                continue;
            }
            let nk = sizes[k] as f64;
            let updated = ((ns + nk) * cost[k * n + s] + (nt + nk) * cost[k * n + t] - nk * c)
                / (ns + nt + nk);
            cost[k * n + s] = updated;
            cost[s * n + k] = updated;
        }
        sizes[s] += sizes[t];
        ids[s] = n + step;
        active.retain(|&k| k != t);
        merges.push(Merge {
            left: lo,
            right: hi,
            cost: c,
            size: sizes[s],
        });
    }
    Ok(Dendrogram { leaves: n, merges })
}

/// Cluster labels after undoing the last `k − 1` merges, numbered by first
/// occurrence.
pub fn cut(dendrogram: &Dendrogram, k: usize) -> Result<Vec<usize>> {
    let n = dendrogram.leaves;
    if k == 0 || k > n {
        return Err(Error::BadK { k, n });
    }
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (t, m) in dendrogram.merges.iter().take(n - k).enumerate() {
        let node = n + t;
        let (a, b) = (find(&mut parent, m.left), find(&mut parent, m.right));
        parent[a] = node;
        parent[b] = node;
    }
    let mut canonical: BTreeMap<usize, usize> = BTreeMap::new();
    let mut labels = Vec::with_capacity(n);
    for leaf in 0..n {
        let root = find(&mut parent, leaf);
        let next = canonical.len();
        labels.push(*canonical.entry(root).or_insert(next));
    }
    Ok(labels)
}

/// Per-slot state labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSeries {
    pub k: usize,
    pub labels: Vec<usize>,
    pub slot_times: Vec<i64>,
}

impl StateSeries {
    pub fn from_dendrogram(dendrogram: &Dendrogram, k: usize, slot_times: Vec<i64>) -> Result<Self> {
        if slot_times.len() != dendrogram.leaves {
            return Err(Error::LengthMismatch(format!(
                "{} slot times for {} leaves",
                slot_times.len(),
                dendrogram.leaves
            )));
        }
        Ok(StateSeries {
            k,
            labels: cut(dendrogram, k)?,
            slot_times,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["slot", "timestamp", "state"])?;
        for (slot, (&t, &s)) in self.slot_times.iter().zip(&self.labels).enumerate() {
            w.serialize((slot, t, s))?;
        }
        w.flush().map_err(|e| Error::io("<states>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut labels = Vec::new();
        let mut slot_times = Vec::new();
        for (i, rec) in rdr.deserialize::<(usize, i64, usize)>().enumerate() {
            let (slot, t, s) = rec?;
            if slot != i {
                return Err(Error::Malformed {
                    what: "states.csv".into(),
                    detail: format!("expected slot {i}, found {slot}"),
                });
            }
            labels.push(s);
            slot_times.push(t);
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        Ok(StateSeries { k, labels, slot_times })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyCluster {
    pub id: usize,
    pub size: usize,
    /// Cluster id at the previous (coarser) level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyLevel {
    pub k: usize,
    pub clusters: Vec<HierarchyCluster>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub slots: usize,
    pub levels: Vec<HierarchyLevel>,
}

/// Nested clusterings at strictly increasing `levels`.
pub fn hierarchy_export(dendrogram: &Dendrogram, levels: &[usize]) -> Result<Hierarchy> {
    if levels.is_empty() || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParams(format!(
            "hierarchy levels must be non-empty and strictly increasing, got {levels:?}"
        )));
    }
    let mut out = Vec::with_capacity(levels.len());
    let mut prev: Option<Vec<usize>> = None;
    for &k in levels {
        let labels = cut(dendrogram, k)?;
        let mut clusters: Vec<HierarchyCluster> = (0..k)
            .map(|id| HierarchyCluster {
                id,
                size: 0,
                parent: None,
            })
            .collect();
        for (leaf, &l) in labels.iter().enumerate() {
            clusters[l].size += 1;
            if let Some(p) = &prev {
                clusters[l].parent = Some(p[leaf]);
            }
        }
        out.push(HierarchyLevel { k, clusters });
        prev = Some(labels);
    }
    Ok(Hierarchy {
        slots: dendrogram.leaves,
        levels: out,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DayTypeCounts {
    pub weekday: usize,
    pub weekend: usize,
    pub holiday: usize,
}

impl DayTypeCounts {
    fn bump(&mut self, t: DayType) {
        match t {
            DayType::Weekday => self.weekday += 1,
            DayType::Weekend => self.weekend += 1,
            DayType::Holiday => self.holiday += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.weekday + self.weekend + self.holiday
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateProfile {
    pub state: usize,
    pub slots: usize,
    pub mean_staying: f64,
    pub mean_leaving: f64,
    pub mean_arriving: f64,
    /// Occupancy per slot of the local day.
    pub slot_of_day: Vec<usize>,
    pub day_types: DayTypeCounts,
}

/// Channel means and temporal occupancy per state.
pub fn profile_states(
    series: &StateSeries,
    images: &CityImageSeries,
    calendar: &DayTypeCalendar,
) -> Result<Vec<StateProfile>> {
    if series.len() != images.len() {
        return Err(Error::LengthMismatch(format!(
            "{} state labels for {} images",
            series.len(),
            images.len()
        )));
    }
    let slot_s = images.spec.slot_duration_s;
    let per_day = ((86_400 + slot_s - 1) / slot_s) as usize;
    let k = series.labels.iter().max().map_or(0, |m| m + 1).max(series.k);
    let mut profiles: Vec<StateProfile> = (0..k)
        .map(|state| StateProfile {
            state,
            slots: 0,
            mean_staying: 0.0,
            mean_leaving: 0.0,
            mean_arriving: 0.0,
            slot_of_day: vec![0; per_day],
            day_types: DayTypeCounts::default(),
        })
        .collect();
    for (n, (&label, &t)) in series.labels.iter().zip(&series.slot_times).enumerate() {
        let p = &mut profiles[label];
        p.slots += 1;
        p.mean_staying += images.channel_total(n, STAYING) as f64;
        p.mean_leaving += images.channel_total(n, LEAVING) as f64;
        p.mean_arriving += images.channel_total(n, ARRIVING) as f64;
        let sod = (calendar.seconds_of_day(t) / slot_s) as usize;
        p.slot_of_day[sod.min(per_day - 1)] += 1;
        p.day_types.bump(calendar.day_type_at(t));
    }
    for p in &mut profiles {
        if p.slots > 0 {
            let c = p.slots as f64;
            p.mean_staying /= c;
            p.mean_leaving /= c;
            p.mean_arriving /= c;
        }
    }
    Ok(profiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::GridSpec;

    fn points(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn two_points() {
        let d = ward_cluster(&points(&[&[0.0, 0.0], &[3.0, 4.0]])).unwrap();
        assert_eq!(d.merges, vec![Merge { left: 0, right: 1, cost: 12.5, size: 2 }]);
    }

    #[test]
    fn two_tight_pairs() {
        let x = points(&[&[0.0, 0.0], &[10.0, 10.0], &[0.0, 1.0], &[10.0, 11.0]]);
        let d = ward_cluster(&x).unwrap();
        assert_eq!((d.merges[0].left, d.merges[0].right), (0, 2));
        assert_eq!((d.merges[1].left, d.merges[1].right), (1, 3));
        assert_eq!((d.merges[2].left, d.merges[2].right), (4, 5));
        assert_eq!(d.merges[0].cost, 0.5);
        assert_eq!(d.merges[1].cost, 0.5);
        // Centroids (0, .5) and (10, 10.5): 2·2/4 · 200 = 200.
        assert!((d.merges[2].cost - 200.0).abs() < 1e-9);
        assert_eq!(cut(&d, 2).unwrap(), vec![0, 1, 0, 1]);
    }

    #[test]
    fn identical_points_merge_in_index_order() {
        let x = points(&[&[1.0], &[1.0], &[1.0], &[1.0]]);
        let d = ward_cluster(&x).unwrap();
        let pairs: Vec<_> = d.merges.iter().map(|m| (m.left, m.right)).collect();
        assert_eq!(pairs, vec![(0, 1), (2, 3), (4, 5)]);
        assert!(d.merges.iter().all(|m| m.cost == 0.0));
    }

    #[test]
    fn cut_extremes() {
        let x = points(&[&[0.0], &[5.0], &[1.0], &[9.0], &[4.0]]);
        let d = ward_cluster(&x).unwrap();
        assert_eq!(cut(&d, 1).unwrap(), vec![0; 5]);
        assert_eq!(cut(&d, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(matches!(cut(&d, 0), Err(Error::BadK { .. })));
        assert!(matches!(cut(&d, 6), Err(Error::BadK { .. })));
    }

    #[test]
    fn single_point_is_degenerate() {
        assert!(matches!(
            ward_cluster(&points(&[&[1.0]])),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn hierarchy_nests() {
        let x = points(&[&[0.0], &[0.2], &[5.0], &[5.3], &[20.0], &[21.0], &[40.0]]);
        let d = ward_cluster(&x).unwrap();
        let h = hierarchy_export(&d, &[1, 3, 5]).unwrap();
        assert_eq!(h.levels[0].clusters, vec![HierarchyCluster { id: 0, size: 7, parent: None }]);
        for level in &h.levels {
            assert_eq!(level.clusters.iter().map(|c| c.size).sum::<usize>(), 7);
        }
        let l3 = cut(&d, 3).unwrap();
        let l5 = cut(&d, 5).unwrap();
        for c in &h.levels[2].clusters {
            let parent = c.parent.unwrap();
            for leaf in 0..7 {
                if l5[leaf] == c.id {
                    assert_eq!(l3[leaf], parent);
                }
            }
        }
        assert!(hierarchy_export(&d, &[3, 3]).is_err());
        assert!(matches!(hierarchy_export(&d, &[3, 9]), Err(Error::BadK { .. })));
    }

    #[test]
    fn states_csv_round_trip() {
        let s = StateSeries { k: 2, labels: vec![0, 1, 1, 0], slot_times: vec![0, 1800, 3600, 5400] };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "slot,timestamp,state\n0,0,0\n1,1800,1\n2,3600,1\n3,5400,0\n"
        );
        assert_eq!(StateSeries::read_csv(buf.as_slice()).unwrap(), s);
    }

    fn grid(n: usize) -> GridSpec {
        GridSpec {
            origin_lat: 0.0,
            origin_lon: 0.0,
            cell_size_m: 100.0,
            rows: 2,
            cols: 2,
            slot_duration_s: 1800,
            // 2026-06-01 is a Monday.
            start_time: 1_780_272_000,
            end_time: 1_780_272_000 + n as i64 * 1800,
        }
    }

    #[test]
    fn single_state_profile_is_global_mean() {
        let spec = grid(4);
        let mut img = CityImageSeries::zeros(spec.clone(), 4);
        for (n, im) in img.images.iter_mut().enumerate() {
            im[0] = n as u32;
            im[4] = 2;
            im[5] = 1;
        }
        let times = (0..4).map(|n| spec.slot_start(n)).collect();
        let s = StateSeries { k: 1, labels: vec![0; 4], slot_times: times };
        let p = profile_states(&s, &img, &DayTypeCalendar::default()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].slots, 4);
        assert_eq!(p[0].mean_staying, 1.5);
        assert_eq!(p[0].mean_leaving, 2.0);
        assert_eq!(p[0].mean_arriving, 1.0);
        assert_eq!(p[0].slot_of_day[..4], [1, 1, 1, 1]);
        assert_eq!(p[0].day_types.weekday, 4);
        assert_eq!(p[0].slot_of_day.iter().sum::<usize>(), p[0].slots);
    }

    #[test]
    fn profile_length_mismatch() {
        let spec = grid(3);
        let img = CityImageSeries::zeros(spec, 3);
        let s = StateSeries { k: 1, labels: vec![0; 2], slot_times: vec![0, 1] };
        assert!(matches!(
            profile_states(&s, &img, &DayTypeCalendar::default()),
            Err(Error::LengthMismatch(_))
        ));
    }
}
