//! Motif discovery over a state series.
//!
//! The series is cut into overlapping windows, every window pair is
//! compared by Hamming distance into a collision matrix, and maximal
//! diagonal runs of collisions ("traces") are converted back into pairs of
//! similar subsequences. Equal-length motifs are grouped into classes with
//! DBSCAN, and classes are linked father → son by containment.
//!
//! A trace of `L` windows certifies that each aligned window pair differs in
//! at most `σ_w` positions; the whole subsequences may differ in up to
//! `L · σ_w` positions.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotifParams {
    /// Window length `l_w` in slots.
    pub window_len: usize,
    /// Window stride `s_w` in slots.
    pub stride: usize,
    /// Per-window Hamming threshold `σ_w`.
    pub window_threshold: usize,
    /// Minimum occurrences for a motif length or class to be kept.
    pub f_threshold: usize,
    /// Minimum occurrences for day-length motifs.
    pub f_threshold_day: usize,
    /// Keep every motif inside one calendar day.
    pub within_day: bool,
    pub eps_factor: f64,
    pub eps_max: f64,
    pub min_samples: usize,
    /// Drop traces whose two windows overlap (offset below `⌈l_w / s_w⌉`).
    pub exclude_trivial: bool,
}

impl Default for MotifParams {
    fn default() -> Self {
        MotifParams {
            window_len: 6,
            stride: 2,
            window_threshold: 1,
            f_threshold: 3,
            f_threshold_day: 1,
            within_day: true,
            eps_factor: 0.25,
            eps_max: 8.0,
            min_samples: 2,
            exclude_trivial: true,
        }
    }
}

impl MotifParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 {
            return Err(Error::InvalidParams("window_len must be at least 1".into()));
        }
        if self.stride == 0 || self.stride > self.window_len {
            return Err(Error::InvalidParams(format!(
                "stride {} outside [1, {}]",
                self.stride, self.window_len
            )));
        }
        if self.window_threshold > self.window_len {
            return Err(Error::InvalidParams(format!(
                "window threshold {} exceeds window length {}",
                self.window_threshold, self.window_len
            )));
        }
        if !(self.eps_factor >= 0.0 && self.eps_max >= 0.0) {
            return Err(Error::InvalidParams("eps parameters must be non-negative".into()));
        }
        if self.min_samples == 0 {
            return Err(Error::InvalidParams("min_samples must be at least 1".into()));
        }
        Ok(())
    }

    /// Smallest window offset that counts as a non-trivial match.
    pub fn min_offset(&self) -> usize {
        if self.exclude_trivial {
            self.window_len.div_ceil(self.stride)
        } else {
            1
        }
    }

    pub fn motif_len(&self, trace_len: usize) -> usize {
        self.window_len + (trace_len - 1) * self.stride
    }

    pub fn eps_for(&self, len: usize) -> f64 {
        (self.eps_factor * len as f64).min(self.eps_max)
    }

    fn frequency_floor(&self, len: usize, slots_per_day: usize) -> usize {
        if len == slots_per_day {
            self.f_threshold_day
        } else {
            self.f_threshold
        }
    }
}

/// A state series with its day segmentation.
#[derive(Debug, Clone, Copy)]
pub struct SeriesView<'a> {
    pub symbols: &'a [usize],
    /// Local day number of every slot.
    pub day_of_slot: &'a [i64],
    pub slots_per_day: usize,
}

impl<'a> SeriesView<'a> {
    pub fn new(symbols: &'a [usize], day_of_slot: &'a [i64], slots_per_day: usize) -> Result<Self> {
        if symbols.len() != day_of_slot.len() {
            return Err(Error::LengthMismatch(format!(
                "{} symbols, {} day ids",
                symbols.len(),
                day_of_slot.len()
            )));
        }
        Ok(SeriesView {
            symbols,
            day_of_slot,
            slots_per_day,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Day number of each slot for a series whose slot `n` starts at
/// `start + n·slot_duration` and where days begin every `slots_per_day`.
pub fn day_numbers(len: usize, slots_per_day: usize) -> Vec<i64> {
    (0..len).map(|n| (n / slots_per_day.max(1)) as i64).collect()
}

pub fn hamming(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Start offsets of windows `S[i·s_w .. i·s_w + l_w)`; trailing partial
/// windows are dropped.
pub fn cut_windows(len: usize, window_len: usize, stride: usize) -> Result<Vec<usize>> {
    if len < window_len {
        return Err(Error::SeriesTooShort {
            len,
            window: window_len,
        });
    }
    Ok((0..=(len - window_len) / stride).map(|i| i * stride).collect())
}

/// Symmetric boolean matrix of window pairs within the Hamming threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionMatrix {
    pub size: usize,
    cells: Vec<bool>,
}

impl CollisionMatrix {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.size + j]
    }
}

pub fn collision_matrix(symbols: &[usize], starts: &[usize], window_len: usize, threshold: usize) -> CollisionMatrix {
    let w = starts.len();
    let cells = (0..w)
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = &symbols[starts[i]..starts[i] + window_len];
            starts.iter().map(move |&sj| hamming(a, &symbols[sj..sj + window_len]) <= threshold)
        })
        .collect();
    CollisionMatrix { size: w, cells }
}

/// Maximal diagonal run of collisions starting at windows `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Trace {
    pub i: usize,
    pub j: usize,
    pub len: usize,
}

/// Window-level constraints applied while walking diagonals.
#[derive(Debug, Clone, Default)]
pub struct TraceMask {
    /// Windows allowed to take part in traces; empty means all.
    pub valid: Vec<bool>,
    /// Traces only extend between windows with equal segment ids; empty
    /// means no segmentation.
    pub segment: Vec<i64>,
}

impl TraceMask {
    fn valid(&self, i: usize) -> bool {
        self.valid.get(i).copied().unwrap_or(true)
    }

    fn same_segment(&self, a: usize, b: usize) -> bool {
        self.segment.is_empty() || self.segment[a] == self.segment[b]
    }
}

/// Walk every diagonal strictly above the main one with offset at least
/// `min_offset` and emit its maximal runs.
pub fn extract_traces(mat: &CollisionMatrix, min_offset: usize, mask: &TraceMask) -> Vec<Trace> {
    let w = mat.size;
    let on = |i: usize, j: usize| mat.get(i, j) && mask.valid(i) && mask.valid(j);
    let link = |i: usize, j: usize| mask.same_segment(i, i + 1) && mask.same_segment(j, j + 1);
    let mut traces = Vec::new();
    for offset in min_offset.max(1)..w {
        let mut i = 0;
        while i + offset < w {
            if !on(i, i + offset) {
                i += 1;
                continue;
            }
            let start = i;
            let mut len = 1;
            while i + offset + 1 < w && link(i, i + offset) && on(i + 1, i + offset + 1) {
                i += 1;
                len += 1;
            }
            traces.push(Trace {
                i: start,
                j: start + offset,
                len,
            });
            i += 1;
        }
    }
    traces.sort();
    traces
}

/// Two similar subsequences `[a, a+len)` and `[b, b+len)`, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MotifPair {
    pub a: usize,
    pub b: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Motif {
    pub start: usize,
    pub len: usize,
    pub symbols: Vec<usize>,
}

/// Output of motif discovery.
#[derive(Debug, Clone, PartialEq)]
pub struct MotifSet {
    /// Every similar pair read off a trace, before deduplication and
    /// frequency filtering.
    pub pairs: Vec<MotifPair>,
    /// Deduplicated motifs per length after frequency filtering, by start.
    pub by_length: BTreeMap<usize, Vec<Motif>>,
}

fn window_mask(view: &SeriesView, starts: &[usize], params: &MotifParams) -> TraceMask {
    if !params.within_day {
        return TraceMask::default();
    }
    let l = params.window_len;
    TraceMask {
        valid: starts
            .iter()
            .map(|&s| view.day_of_slot[s] == view.day_of_slot[s + l - 1])
            .collect(),
        segment: starts.iter().map(|&s| view.day_of_slot[s]).collect(),
    }
}

/// Similar aligned subsequence pairs found through the collision matrix.
pub fn discover_pairs(view: &SeriesView, params: &MotifParams) -> Result<Vec<MotifPair>> {
    params.validate()?;
    let starts = cut_windows(view.len(), params.window_len, params.stride)?;
    let mat = collision_matrix(view.symbols, &starts, params.window_len, params.window_threshold);
    let mask = window_mask(view, &starts, params);
    let mut pairs: Vec<MotifPair> = extract_traces(&mat, params.min_offset(), &mask)
        .into_iter()
        .map(|t| MotifPair {
            a: starts[t.i],
            b: starts[t.j],
            len: params.motif_len(t.len),
        })
        .collect();
    pairs.sort();
    Ok(pairs)
}

/// Discover motifs, deduplicated by `(start, len)` and filtered by the
/// per-length frequency floors.
pub fn discover_motifs(view: &SeriesView, params: &MotifParams) -> Result<MotifSet> {
    let pairs = discover_pairs(view, params)?;
    let mut starts: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for p in &pairs {
        let e = starts.entry(p.len).or_default();
        e.insert(p.a);
        e.insert(p.b);
    }
    let by_length = starts
        .into_iter()
        .filter(|(len, s)| s.len() >= params.frequency_floor(*len, view.slots_per_day))
        .map(|(len, s)| {
            let motifs = s
                .into_iter()
                .map(|start| Motif {
                    start,
                    len,
                    symbols: view.symbols[start..start + len].to_vec(),
                })
                .collect();
            (len, motifs)
        })
        .collect();
    Ok(MotifSet { pairs, by_length })
}

const ORACLE_LIMIT: usize = 500;

/// Exhaustive check of every aligned pair at one length under the
/// per-window semantics: each of the constituent window pairs is within
/// `σ_w`, the offset is non-trivial, and (with `within_day`) every window of
/// each side lies in the day of its first window.
pub fn brute_force_motifs(view: &SeriesView, len: usize, params: &MotifParams) -> Result<Vec<MotifPair>> {
    params.validate()?;
    let n = view.len();
    if n > ORACLE_LIMIT {
        return Err(Error::TooLargeForOracle {
            len: n,
            limit: ORACLE_LIMIT,
        });
    }
    let (lw, sw) = (params.window_len, params.stride);
    if len < lw || len > n || !(len - lw).is_multiple_of(sw) {
        return Ok(Vec::new());
    }
    let windows = (len - lw) / sw + 1;
    let in_day = |s: usize| -> bool {
        !params.within_day
            || (0..windows).all(|k| {
                let ws = s + k * sw;
                view.day_of_slot[ws] == view.day_of_slot[s] && view.day_of_slot[ws + lw - 1] == view.day_of_slot[s]
            })
    };
    let min_gap = params.min_offset() * sw;
    let mut out = Vec::new();
    for a in (0..=n - len).step_by(sw) {
        if !in_day(a) {
            continue;
        }
        for b in (a + min_gap..=n - len).step_by(sw) {
            if !in_day(b) {
                continue;
            }
            let similar = (0..windows).all(|k| {
                let (wa, wb) = (a + k * sw, b + k * sw);
                hamming(&view.symbols[wa..wa + lw], &view.symbols[wb..wb + lw]) <= params.window_threshold
            });
            if similar {
                out.push(MotifPair { a, b, len });
            }
        }
    }
    Ok(out)
}

/// A density cluster of equal-length motifs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifClass {
    pub id: usize,
    pub len: usize,
    /// Member start slots, ascending.
    pub members: Vec<usize>,
    pub exemplar_start: usize,
    pub exemplar: Vec<usize>,
    /// Distinct slots covered by the union of members.
    pub covered_slots: usize,
}

/// DBSCAN over `points` with a caller-supplied distance. Points are
/// visited in index order; a border point joins the first cluster that
/// reaches it. Returns a cluster id or `None` (noise) per point.
pub fn dbscan<T>(points: &[T], eps: f64, min_samples: usize, dist: impl Fn(&T, &T) -> f64) -> Vec<Option<usize>> {
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist(&points[i], &points[j]) <= eps).collect())
        .collect();
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    for p in 0..n {
        if visited[p] {
            continue;
        }
        visited[p] = true;
        if neighbors[p].len() < min_samples {
            continue;
        }
        let cluster = next;
        next += 1;
        label[p] = Some(cluster);
        let mut queue: VecDeque<usize> = neighbors[p].iter().copied().collect();
        while let Some(q) = queue.pop_front() {
            if label[q].is_none() {
                label[q] = Some(cluster);
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            if neighbors[q].len() >= min_samples {
                queue.extend(neighbors[q].iter().copied());
            }
        }
    }
    label
}

/// Group each length's motifs into classes and drop noise and rare classes.
/// Class ids follow (length descending, first member ascending).
pub fn cluster_classes(motifs: &MotifSet, params: &MotifParams, slots_per_day: usize) -> Vec<MotifClass> {
    let mut classes = Vec::new();
    for (&len, ms) in motifs.by_length.iter().rev() {
        let eps = params.eps_for(len);
        let labels = dbscan(ms, eps, params.min_samples, |a, b| hamming(&a.symbols, &b.symbols) as f64);
        let mut groups: BTreeMap<usize, Vec<&Motif>> = BTreeMap::new();
        for (m, l) in ms.iter().zip(&labels) {
            if let Some(c) = l {
                groups.entry(*c).or_default().push(m);
            }
        }
        let floor = params.frequency_floor(len, slots_per_day).max(1);
        let mut found: Vec<MotifClass> = groups
            .into_values()
            .filter(|g| g.len() >= floor)
            .map(|g| make_class(len, &g))
            .collect();
        found.sort_by_key(|c| c.members[0]);
        classes.extend(found);
    }
    for (id, c) in classes.iter_mut().enumerate() {
        c.id = id;
    }
    classes
}

fn make_class(len: usize, members: &[&Motif]) -> MotifClass {
    let mut sorted: Vec<&Motif> = members.to_vec();
    sorted.sort_by_key(|m| m.start);
    let exemplar = sorted
        .iter()
        .map(|m| {
            let total: usize = sorted.iter().map(|o| hamming(&m.symbols, &o.symbols)).sum();
            (total, m.start, *m)
        })
        .min_by_key(|&(total, start, _)| (total, start))
        .map(|(_, _, m)| m)
        .expect("class has members");
    let mut covered = 0;
    let mut reach = 0;
    for m in &sorted {
        let end = m.start + len;
        if end > reach {
            covered += end - m.start.max(reach);
            reach = end;
        }
    }
    MotifClass {
        id: 0,
        len,
        members: sorted.iter().map(|m| m.start).collect(),
        exemplar_start: exemplar.start,
        exemplar: exemplar.symbols.clone(),
        covered_slots: covered,
    }
}

/// Father → son relation between classes, after transitive reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifGraph {
    pub nodes: Vec<MotifClass>,
    /// Edges as `(father id, son id)`, sorted.
    pub edges: Vec<(usize, usize)>,
}

/// Whether some member of `father` contains some member of `son`.
pub fn contains(father: &MotifClass, son: &MotifClass) -> bool {
    if father.len <= son.len {
        return false;
    }
    son.members.iter().any(|&b| {
        // Need a ≤ b and b + l_son ≤ a + l_father, i.e. a ∈ [b + l_son − l_father, b].
        let lo = (b + son.len).saturating_sub(father.len);
        let idx = father.members.partition_point(|&a| a < lo);
        father.members.get(idx).is_some_and(|&a| a <= b)
    })
}

/// Remove every edge `x → z` for which another path `x → … → z` exists.
/// On a DAG this is the transitive reduction, which in particular deletes
/// every grandson edge; applying it twice changes nothing.
pub fn prune_grandsons(nodes: usize, edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nodes];
    for &(a, b) in edges {
        succ[a].insert(b);
    }
    let mut kept = Vec::new();
    for x in 0..nodes {
        // Nodes reachable from x through at least two edges.
        let mut far = BTreeSet::new();
        let mut stack: Vec<usize> = succ[x].iter().flat_map(|&y| succ[y].iter().copied()).collect();
        while let Some(v) = stack.pop() {
            if far.insert(v) {
                stack.extend(succ[v].iter().copied());
            }
        }
        kept.extend(succ[x].iter().filter(|z| !far.contains(z)).map(|&z| (x, z)));
    }
    kept.sort();
    kept
}

pub fn build_graph(classes: &[MotifClass]) -> MotifGraph {
    let edges: Vec<(usize, usize)> = classes
        .par_iter()
        .flat_map_iter(|f| {
            classes
                .iter()
                .filter(move |s| contains(f, s))
                .map(move |s| (f.id, s.id))
        })
        .collect();
    MotifGraph {
        nodes: classes.to_vec(),
        edges: prune_grandsons(classes.len(), &edges),
    }
}

impl MotifGraph {
    pub fn in_degree(&self, id: usize) -> usize {
        self.edges.iter().filter(|e| e.1 == id).count()
    }

    pub fn out_degree(&self, id: usize) -> usize {
        self.edges.iter().filter(|e| e.0 == id).count()
    }

    /// Nodes left out of the drawing: exactly one father and one son.
    pub fn hidden_in_view(&self) -> BTreeSet<usize> {
        self.nodes
            .iter()
            .map(|c| c.id)
            .filter(|&id| self.in_degree(id) == 1 && self.out_degree(id) == 1)
            .collect()
    }

    /// Edges of the drawing, with hidden chains spliced into single edges.
    pub fn view_edges(&self) -> Vec<(usize, usize)> {
        let hidden = self.hidden_in_view();
        let son_of: BTreeMap<usize, usize> = self
            .edges
            .iter()
            .filter(|e| hidden.contains(&e.0))
            .map(|&(a, b)| (a, b))
            .collect();
        let mut out = BTreeSet::new();
        for &(a, b) in &self.edges {
            if hidden.contains(&a) {
                continue;
            }
            let mut z = b;
            let mut steps = 0;
            while hidden.contains(&z) && steps <= self.nodes.len() {
                z = son_of[&z];
                steps += 1;
            }
            out.insert((a, z));
        }
        out.into_iter().collect()
    }

    /// Graphviz rendering: one rank per motif length (longest on top) and
    /// fill colour bucketed by covered slots.
    pub fn to_dot(&self, slot_hours: f64) -> String {
        const PALETTE: [&str; 6] = ["#fff5eb", "#fdd0a2", "#fdae6b", "#fd8d3c", "#e6550d", "#a63603"];
        let hidden = self.hidden_in_view();
        let max_cover = self.nodes.iter().map(|c| c.covered_slots).max().unwrap_or(1).max(1);
        let mut s = String::from("digraph motif_family {\n  rankdir=TB;\n  node [shape=box, style=filled, fontname=\"Helvetica\"];\n");
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for c in &self.nodes {
            if hidden.contains(&c.id) {
                continue;
            }
            let bucket = ((c.covered_slots as f64 / max_cover as f64) * (PALETTE.len() - 1) as f64).round() as usize;
            let _ = writeln!(
                s,
                "  C{} [label=\"C{}\\n{:.1} h x{}\", fillcolor=\"{}\"];",
                c.id,
                c.id,
                c.len as f64 * slot_hours,
                c.members.len(),
                PALETTE[bucket.min(PALETTE.len() - 1)]
            );
            by_len.entry(c.len).or_default().push(c.id);
        }
        for ids in by_len.values().rev() {
            let names: Vec<String> = ids.iter().map(|i| format!("C{i}")).collect();
            let _ = writeln!(s, "  {{ rank=same; {}; }}", names.join("; "));
        }
        for (a, b) in self.view_edges() {
            let _ = writeln!(s, "  C{a} -> C{b};");
        }
        s.push_str("}\n");
        s
    }
}
