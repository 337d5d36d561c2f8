//! Multi-channel Saak transform.
//!
//! The three mobility channels are first decorrelated by a pooled
//! per-pixel KLT. The rotated images are zero-padded to a power-of-two
//! square and then halved stage by stage: every 2×2 block of `D`-vectors is
//! concatenated into a `4D` grid vector, projected on a PCA basis fitted over
//! all grid vectors of all images, and passed through the sign-to-position
//! rectifier, which doubles the depth. Stages run until the side reaches 1,
//! and the outputs of every stage are concatenated into one feature row per
//! image.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CityImageSeries, CHANNELS};
use crate::linalg::{self, DenseMatrix, PcaBasis, RetentionRule};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.03;
pub const DEFAULT_REDUCE_DIM: usize = 128;

/// Positive and negative parts, interleaved: `[v0⁺, v0⁻, v1⁺, v1⁻, …]`.
pub fn sp_transform(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * v.len()];
    sp_into(v, &mut out);
    out
}

fn sp_into(v: &[f64], out: &mut [f64]) {
    for (pair, &x) in out.chunks_exact_mut(2).zip(v) {
        pair[0] = if x > 0.0 { x } else { 0.0 };
        pair[1] = if x < 0.0 { -x } else { 0.0 };
    }
}

/// Inverse of [`sp_transform`]: `w[2k] − w[2k+1]`.
pub fn sp_inverse(w: &[f64]) -> Vec<f64> {
    w.chunks_exact(2).map(|p| p[0] - p[1]).collect()
}

/// A stack of equally sized real images, each laid out `[row][col][depth]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    pub rows: usize,
    pub cols: usize,
    pub depth: usize,
    pub images: Vec<Vec<f64>>,
}

impl ImageStack {
    pub fn new(rows: usize, cols: usize, depth: usize, images: Vec<Vec<f64>>) -> Result<Self> {
        let len = rows * cols * depth;
        if let Some(bad) = images.iter().find(|im| im.len() != len) {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: bad.len(),
            });
        }
        Ok(ImageStack {
            rows,
            cols,
            depth,
            images,
        })
    }

    pub fn from_series(series: &CityImageSeries) -> Self {
        ImageStack {
            rows: series.spec.rows,
            cols: series.spec.cols,
            depth: CHANNELS,
            images: series
                .images
                .iter()
                .map(|im| im.iter().map(|&c| c as f64).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn pixel(&self, image: usize, i: usize, j: usize) -> &[f64] {
        let base = (i * self.cols + j) * self.depth;
        &self.images[image][base..base + self.depth]
    }
}

/// Smallest power of two `≥ max(rows, cols)`.
pub fn padded_side(rows: usize, cols: usize) -> usize {
    rows.max(cols).max(1).next_power_of_two()
}

/// Top-left offset of the original image inside the padded square; any odd
/// remainder goes to the high side.
fn pad_offset(rows: usize, cols: usize, side: usize) -> (usize, usize) {
    ((side - rows) / 2, (side - cols) / 2)
}

fn pad_stack(stack: &ImageStack, side: usize) -> ImageStack {
    let (r0, c0) = pad_offset(stack.rows, stack.cols, side);
    let d = stack.depth;
    let images = stack
        .images
        .par_iter()
        .map(|im| {
            let mut out = vec![0.0; side * side * d];
            for i in 0..stack.rows {
                let src = &im[i * stack.cols * d..(i + 1) * stack.cols * d];
                let dst = ((i + r0) * side + c0) * d;
                out[dst..dst + src.len()].copy_from_slice(src);
            }
            out
        })
        .collect();
    ImageStack {
        rows: side,
        cols: side,
        depth: d,
        images,
    }
}

/// Zero-pad count images to the next power-of-two square.
pub fn pad_series(series: &CityImageSeries) -> ImageStack {
    let stack = ImageStack::from_series(series);
    pad_stack(&stack, padded_side(stack.rows, stack.cols))
}

/// One fitted halving stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageModel {
    /// 1-based; stage `k` summarises `2^k × 2^k` blocks of the padded image.
    pub index: usize,
    pub input_side: usize,
    pub input_depth: usize,
    pub basis: PcaBasis,
}

impl StageModel {
    pub fn output_side(&self) -> usize {
        self.input_side / 2
    }

    pub fn output_depth(&self) -> usize {
        2 * self.basis.k()
    }
}

/// Fill `out` with the 4D grid vector of block `(i, j)`: the four pixels
/// (2i, 2j), (2i, 2j+1), (2i+1, 2j), (2i+1, 2j+1) concatenated.
fn grid_vector(stack: &ImageStack, image: usize, i: usize, j: usize, out: &mut [f64]) {
    let d = stack.depth;
    out[..d].copy_from_slice(stack.pixel(image, 2 * i, 2 * j));
    out[d..2 * d].copy_from_slice(stack.pixel(image, 2 * i, 2 * j + 1));
    out[2 * d..3 * d].copy_from_slice(stack.pixel(image, 2 * i + 1, 2 * j));
    out[3 * d..].copy_from_slice(stack.pixel(image, 2 * i + 1, 2 * j + 1));
}

/// Fit one stage on a square stack of even side and return the halved,
/// rectified output stack.
pub fn fit_stage(stack: &ImageStack, index: usize, variance_threshold: f64) -> Result<(StageModel, ImageStack)> {
    let side = stack.rows;
    if stack.cols != side || side < 2 || !side.is_multiple_of(2) {
        return Err(Error::InvalidParams(format!(
            "stage input must be an even square, got {}x{}",
            stack.rows, stack.cols
        )));
    }
    let out_side = side / 2;
    let per_image = out_side * out_side;
    let n = stack.len() * per_image;
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "stage {index} has {n} grid vectors, need at least 2"
        )));
    }
    let basis = linalg::fit_pca_with(
        n,
        4 * stack.depth,
        |idx, out| {
            let (image, rem) = (idx / per_image, idx % per_image);
            grid_vector(stack, image, rem / out_side, rem % out_side, out);
        },
        RetentionRule::MinRatio(variance_threshold),
    )?;
    let stage = StageModel {
        index,
        input_side: side,
        input_depth: stack.depth,
        basis,
    };
    let out = apply_stage(&stage, stack);
    Ok((stage, out))
}

fn apply_stage(stage: &StageModel, stack: &ImageStack) -> ImageStack {
    let out_side = stage.output_side();
    let k = stage.basis.k();
    let out_depth = 2 * k;
    let images = (0..stack.len())
        .into_par_iter()
        .map(|image| {
            let mut g = vec![0.0; 4 * stack.depth];
            let mut coords = vec![0.0; k];
            let mut out = vec![0.0; out_side * out_side * out_depth];
            for i in 0..out_side {
                for j in 0..out_side {
                    grid_vector(stack, image, i, j, &mut g);
                    stage.basis.project_row(&g, &mut coords);
                    let base = (i * out_side + j) * out_depth;
                    sp_into(&coords, &mut out[base..base + out_depth]);
                }
            }
            out
        })
        .collect();
    ImageStack {
        rows: out_side,
        cols: out_side,
        depth: out_depth,
        images,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaakConfig {
    pub variance_threshold: f64,
    /// Apply `ln(1 + count)` before the channel KLT.
    pub log_scale: bool,
}

impl Default for SaakConfig {
    fn default() -> Self {
        SaakConfig {
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            log_scale: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaakModel {
    pub format_version: u32,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub config: SaakConfig,
    pub channel_klt: PcaBasis,
    pub padded_side: usize,
    pub pad_offset: (usize, usize),
    pub stages: Vec<StageModel>,
    pub feature_dim: usize,
}

impl SaakModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: SaakModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Malformed {
                what: "saak model".into(),
                detail: format!("unsupported format version {}", model.format_version),
            });
        }
        Ok(model)
    }
}

fn preprocess(stack: &ImageStack, log_scale: bool) -> ImageStack {
    if !log_scale {
        return stack.clone();
    }
    ImageStack {
        images: stack
            .images
            .iter()
            .map(|im| im.iter().map(|v| v.ln_1p()).collect())
            .collect(),
        ..stack.clone()
    }
}

fn apply_klt(basis: &PcaBasis, stack: &ImageStack) -> ImageStack {
    let d = stack.depth;
    let k = basis.k();
    let images = stack
        .images
        .par_iter()
        .map(|im| {
            let mut out = vec![0.0; im.len() / d * k];
            for (px, o) in im.chunks_exact(d).zip(out.chunks_exact_mut(k)) {
                basis.project_row(px, o);
            }
            out
        })
        .collect();
    ImageStack {
        depth: k,
        images,
        ..stack.clone()
    }
}

fn concat_features(stage_outputs: &[ImageStack], n: usize) -> DenseMatrix {
    let dim: usize = stage_outputs.iter().map(|s| s.images[0].len()).sum();
    let mut values = Vec::with_capacity(n * dim);
    for image in 0..n {
        for s in stage_outputs {
            values.extend_from_slice(&s.images[image]);
        }
    }
    DenseMatrix::new(n, dim, values).expect("stage outputs are finite")
}

/// Fit the full transform on an arbitrary-depth stack and return the raw
/// feature matrix of the training images.
pub fn fit_saak_stack(stack: &ImageStack, config: SaakConfig) -> Result<(SaakModel, DenseMatrix)> {
    let n = stack.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 images, got {n}")));
    }
    if stack.rows == 0 || stack.cols == 0 || stack.depth == 0 {
        return Err(Error::DegenerateInput("empty images".into()));
    }
    let pre = preprocess(stack, config.log_scale);
    let pixels_per_image = pre.rows * pre.cols;
    let d = pre.depth;
    let channel_klt = linalg::fit_pca_with(
        n * pixels_per_image,
        d,
        |idx, out| {
            let (image, px) = (idx / pixels_per_image, idx % pixels_per_image);
            out.copy_from_slice(&pre.images[image][px * d..(px + 1) * d]);
        },
        RetentionRule::All,
    )?;
    let rotated = apply_klt(&channel_klt, &pre);
    let side = padded_side(pre.rows, pre.cols);
    let mut current = pad_stack(&rotated, side);

    let mut stages = Vec::new();
    let mut outputs = Vec::new();
    let mut index = 1;
    while current.rows > 1 {
        let (stage, out) = fit_stage(&current, index, config.variance_threshold)?;
        stages.push(stage);
        outputs.push(out.clone());
        current = out;
        index += 1;
    }
    let features = concat_features(&outputs, n);
    let model = SaakModel {
        format_version: MODEL_FORMAT_VERSION,
        rows: stack.rows,
        cols: stack.cols,
        channels: stack.depth,
        config,
        channel_klt,
        padded_side: side,
        pad_offset: pad_offset(stack.rows, stack.cols, side),
        feature_dim: features.cols(),
        stages,
    };
    Ok((model, features))
}

/// Fit the multi-channel transform on a city image series.
pub fn fit_saak(series: &CityImageSeries, config: SaakConfig) -> Result<(SaakModel, DenseMatrix)> {
    fit_saak_stack(&ImageStack::from_series(series), config)
}

/// Apply a fitted model to new images.
pub fn transform_stack(model: &SaakModel, stack: &ImageStack) -> Result<DenseMatrix> {
    if stack.rows != model.rows || stack.cols != model.cols {
        return Err(Error::DimensionMismatch {
            expected: model.rows * model.cols,
            actual: stack.rows * stack.cols,
        });
    }
    if stack.depth != model.channels {
        return Err(Error::DimensionMismatch {
            expected: model.channels,
            actual: stack.depth,
        });
    }
    if stack.is_empty() {
        return DenseMatrix::new(0, model.feature_dim, Vec::new());
    }
    let pre = preprocess(stack, model.config.log_scale);
    let mut current = pad_stack(&apply_klt(&model.channel_klt, &pre), model.padded_side);
    let mut outputs = Vec::with_capacity(model.stages.len());
    for stage in &model.stages {
        let out = apply_stage(stage, &current);
        outputs.push(out.clone());
        current = out;
    }
    Ok(concat_features(&outputs, stack.len()))
}

pub fn transform(model: &SaakModel, series: &CityImageSeries) -> Result<DenseMatrix> {
    transform_stack(model, &ImageStack::from_series(series))
}

/// PCA reduction of raw features for clustering, plus a 2-D view.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    pub basis: PcaBasis,
    pub reduced: DenseMatrix,
    /// First two reduced coordinates (zero-filled when fewer exist).
    pub projection_2d: DenseMatrix,
}

pub fn reduce(features: &DenseMatrix, target_dim: usize) -> Result<Reduction> {
    let basis = linalg::fit_pca(features, RetentionRule::FixedK(target_dim))?;
    let reduced = linalg::project(&basis, features)?;
    let mut flat = Vec::with_capacity(reduced.rows() * 2);
    for row in reduced.row_iter() {
        flat.push(row.first().copied().unwrap_or(0.0));
        flat.push(row.get(1).copied().unwrap_or(0.0));
    }
    let projection_2d = DenseMatrix::new(reduced.rows(), 2, flat)?;
    Ok(Reduction {
        basis,
        reduced,
        projection_2d,
    })
}

/// `slot,f0,f1,…` with shortest round-trip float formatting.
pub fn write_features<W: Write>(writer: W, features: &DenseMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["slot".to_string()];
    header.extend((0..features.cols()).map(|c| format!("f{c}")));
    w.write_record(&header)?;
    for (slot, row) in features.row_iter().enumerate() {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(slot.to_string());
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<features>", e))?;
    Ok(())
}

pub fn read_features<R: Read>(reader: R) -> Result<DenseMatrix> {
    let mut rdr = csv::Reader::from_reader(reader);
    let cols = rdr.headers()?.len().saturating_sub(1);
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let slot: usize = rec[0].parse().map_err(|_| malformed_features(rows, "slot"))?;
        if slot != rows {
            return Err(malformed_features(rows, "slots out of order"));
        }
        for field in rec.iter().skip(1) {
            values.push(field.parse::<f64>().map_err(|_| malformed_features(rows, field))?);
        }
        rows += 1;
    }
    DenseMatrix::new(rows, cols, values)
}

fn malformed_features(row: usize, detail: &str) -> Error {
    Error::Malformed {
        what: "features.csv".into(),
        detail: format!("row {row}: {detail}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(rng: &mut ChaCha8Rng, n: usize, rows: usize, cols: usize, depth: usize) -> ImageStack {
        let images = (0..n)
            .map(|_| (0..rows * cols * depth).map(|_| rng.gen_range(0..6) as f64).collect())
            .collect();
        ImageStack::new(rows, cols, depth, images).unwrap()
    }

    fn series(rows: usize, cols: usize, n: usize) -> CityImageSeries {
        let spec = GridSpec {
            origin_lat: 30.0,
            origin_lon: 120.0,
            cell_size_m: 500.0,
            rows,
            cols,
            slot_duration_s: 1800,
            start_time: 0,
            end_time: n as i64 * 1800,
        };
        CityImageSeries::zeros(spec, n)
    }

    #[test]
    fn sp_examples() {
        assert_eq!(sp_transform(&[0.0, 0.0]), vec![0.0; 4]);
        assert_eq!(sp_transform(&[3.0, -2.0]), vec![3.0, 0.0, 0.0, 2.0]);
        assert_eq!(sp_inverse(&[3.0, 0.0, 0.0, 2.0]), vec![3.0, -2.0]);
    }

    #[test]
    fn padding_geometry() {
        assert_eq!(padded_side(61, 65), 128);
        assert_eq!(padded_side(256, 256), 256);
        assert_eq!(pad_offset(61, 65, 128), (33, 31));

        let mut s = series(3, 5, 2);
        s.images[0][0] = 4; // (0,0) staying
        s.images[1][(2 * 5 + 4) * 3 + 2] = 7; // (2,4) arriving
        let p = pad_series(&s);
        assert_eq!((p.rows, p.cols, p.depth), (8, 8, 3));
        assert_eq!(p.images[0].iter().sum::<f64>(), 4.0);
        // (0,0) lands at (2,1); odd remainder goes to the high side.
        assert_eq!(p.pixel(0, 2, 1)[0], 4.0);
        assert_eq!(p.pixel(1, 4, 5)[2], 7.0);
    }

    #[test]
    fn padding_keeps_power_of_two_grids() {
        let s = series(4, 4, 2);
        let p = pad_series(&s);
        assert_eq!((p.rows, p.cols), (4, 4));
    }

    #[test]
    fn two_image_stage_by_hand() {
        let stack = ImageStack::new(
            2,
            2,
            1,
            vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]],
        )
        .unwrap();
        let (stage, out) = fit_stage(&stack, 1, 0.03).unwrap();
        assert_eq!(stage.basis.k(), 1);
        assert!((stage.basis.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = &stage.basis.components[0];
        for (a, b) in c.iter().zip([h, 0.0, 0.0, -h]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!((out.rows, out.depth), (1, 2));
        assert!((out.images[0][0] - h).abs() < 1e-12 && out.images[0][1] == 0.0);
        assert!(out.images[1][0] == 0.0 && (out.images[1][1] - h).abs() < 1e-12);
    }

    #[test]
    fn identical_images_give_identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = random_stack(&mut rng, 1, 4, 4, 3).images.remove(0);
        let stack = ImageStack::new(4, 4, 3, vec![one.clone(), one.clone(), one]).unwrap();
        let (model, feats) = fit_saak_stack(&stack, SaakConfig::default()).unwrap();
        assert_eq!(feats.row(0), feats.row(1));
        assert_eq!(feats.row(0), feats.row(2));
        assert_eq!(model.stages.len(), 2);
    }

    #[test]
    fn constant_images_collapse_to_zero() {
        // Every grid vector is identical, so each stage takes the
        // zero-variance branch and projects to the origin.
        let stack = ImageStack::new(4, 4, 3, vec![vec![2.0; 48]; 3]).unwrap();
        let (model, feats) = fit_saak_stack(&stack, SaakConfig::default()).unwrap();
        assert!(feats.values().iter().all(|&v| v == 0.0));
        assert!(model.stages.iter().all(|s| s.basis.k() == 1));
    }

    #[test]
    fn stage_geometry_and_feature_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stack = random_stack(&mut rng, 6, 7, 5, 3);
        let (model, feats) = fit_saak_stack(&stack, SaakConfig::default()).unwrap();
        assert_eq!(model.padded_side, 8);
        assert_eq!(model.stages.len(), 3);
        let mut dim = 0;
        for (k, st) in model.stages.iter().enumerate() {
            assert_eq!(st.input_side, 8 >> k);
            assert_eq!(st.output_side(), 8 >> (k + 1));
            assert_eq!(st.output_depth() % 2, 0);
            if k > 0 {
                assert_eq!(st.input_depth, model.stages[k - 1].output_depth());
            }
            dim += st.output_side().pow(2) * st.output_depth();
        }
        assert_eq!(model.feature_dim, dim);
        assert_eq!(feats.cols(), dim);
        assert!(feats.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn transform_reproduces_training_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stack = random_stack(&mut rng, 8, 6, 6, 3);
        for log_scale in [false, true] {
            let cfg = SaakConfig {
                log_scale,
                ..SaakConfig::default()
            };
            let (model, feats) = fit_saak_stack(&stack, cfg).unwrap();
            let again = transform_stack(&model, &stack).unwrap();
            assert_eq!(again, feats);
            let json = model.to_json().unwrap();
            let back = SaakModel::from_json(&json).unwrap();
            assert_eq!(transform_stack(&back, &stack).unwrap(), feats);
        }
    }

    #[test]
    fn zero_images_share_a_feature_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stack = random_stack(&mut rng, 5, 4, 4, 3);
        let (model, _) = fit_saak_stack(&stack, SaakConfig::default()).unwrap();
        let zeros = ImageStack::new(4, 4, 3, vec![vec![0.0; 48]; 2]).unwrap();
        let f = transform_stack(&model, &zeros).unwrap();
        assert_eq!(f.row(0), f.row(1));
    }

    #[test]
    fn permuting_images_permutes_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stack = random_stack(&mut rng, 5, 4, 4, 2);
        let (_, feats) = fit_saak_stack(&stack, SaakConfig::default()).unwrap();
        let mut rev = stack.clone();
        rev.images.reverse();
        let (_, feats_rev) = fit_saak_stack(&rev, SaakConfig::default()).unwrap();
        for i in 0..5 {
            for (a, b) in feats.row(i).iter().zip(feats_rev.row(4 - i)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn transform_rejects_wrong_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stack = random_stack(&mut rng, 3, 4, 4, 3);
        let (model, _) = fit_saak_stack(&stack, SaakConfig::default()).unwrap();
        let other = random_stack(&mut rng, 3, 4, 5, 3);
        assert!(matches!(
            transform_stack(&model, &other),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fit_requires_two_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let stack = random_stack(&mut rng, 1, 4, 4, 3);
        assert!(matches!(
            fit_saak_stack(&stack, SaakConfig::default()),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn reduce_caps_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let raw = DenseMatrix::new(10, 6, (0..60).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let r = reduce(&raw, 128).unwrap();
        assert_eq!(r.reduced.cols(), 6);
        assert_eq!(r.projection_2d.cols(), 2);
        let raw = DenseMatrix::new(5, 40, (0..200).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let r = reduce(&raw, 128).unwrap();
        assert_eq!(r.reduced.cols(), 4);
        for i in 0..5 {
            for j in 0..5 {
                let d_raw: f64 = raw.row(i).iter().zip(raw.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                let d_red: f64 = r.reduced.row(i).iter().zip(r.reduced.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d_red <= d_raw + 1e-9);
            }
        }
    }

    #[test]
    fn features_csv_round_trip() {
        let m = DenseMatrix::new(2, 3, vec![0.1, 1.0 / 3.0, 0.0, 2.5e-17, 7.0, 1e300]).unwrap();
        let mut buf = Vec::new();
        write_features(&mut buf, &m).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("slot,f0,f1,f2\n0,"));
        assert_eq!(read_features(buf.as_slice()).unwrap(), m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sp_round_trip(v in prop::collection::vec(-1e6f64..1e6, 0..64)) {
                let w = sp_transform(&v);
                prop_assert!(w.iter().all(|&x| x >= 0.0));
                prop_assert!(w.chunks(2).all(|p| p[0] == 0.0 || p[1] == 0.0));
                prop_assert_eq!(sp_inverse(&w), v);
            }
        }
    }
}
