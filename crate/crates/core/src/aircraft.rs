//! Dim-target emergence in image sequences.
//!
//! The hidden chain has one state per pixel plus a final "not visually
//! apparent" (NVA) state. In-image motion follows a small transition patch;
//! motion that would leave the frame lands in NVA, and NVA re-enters the
//! image uniformly. Pixel likelihoods use the unnormalised ratio `y + 1`,
//! NVA uses 1. The detector thresholds `ζ = 1 − P(NVA)`, which is the
//! two-state rule applied to the (NVA, any pixel) aggregate.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::HmmFilter;
use crate::signal::{rng_from_seed, Belief, ObservationModel, Transition};
use crate::stopping::{Statistic, StoppingRule};

/// One patch entry: move by `(dx, dy)` with probability `prob`. Rows grow
/// downward, so `dy = -1` is one pixel up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchEntry {
    pub dx: i32,
    pub dy: i32,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridModel {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_patch")]
    pub patch: Vec<PatchEntry>,
    #[serde(default = "default_nva_to_image")]
    pub nva_to_image_total: f64,
}

/// Stay or move one pixel up, equally likely.
pub fn default_patch() -> Vec<PatchEntry> {
    vec![
        PatchEntry {
            dx: 0,
            dy: 0,
            prob: 0.5,
        },
        PatchEntry {
            dx: 0,
            dy: -1,
            prob: 0.5,
        },
    ]
}

fn default_nva_to_image() -> f64 {
    0.1
}

impl Default for GridModel {
    fn default() -> Self {
        Self {
            width: 16,
            height: 16,
            patch: default_patch(),
            nva_to_image_total: default_nva_to_image(),
        }
    }
}

impl GridModel {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Index of the NVA state.
    pub fn nva(&self) -> usize {
        self.pixels()
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.width, i / self.width)
    }

    /// Pixel reached from `from` by `(dx, dy)`, or `None` if it leaves the frame.
    pub fn shift(&self, from: usize, dx: i32, dy: i32) -> Option<usize> {
        let (x, y) = self.coords(from);
        let nx = x as i64 + dx as i64;
        let ny = y as i64 + dy as i64;
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            None
        } else {
            Some(self.index(nx as usize, ny as usize))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("width", "grid must be at least 1x1"));
        }
        if !(0.0..=1.0).contains(&self.nva_to_image_total) {
            return Err(Error::invalid(
                "nva_to_image_total",
                format!("must be in [0, 1], got {}", self.nva_to_image_total),
            ));
        }
        let mut mass = 0.0;
        for e in &self.patch {
            if !(e.prob >= 0.0 && e.prob.is_finite()) {
                return Err(Error::InvalidPatch { mass: e.prob });
            }
            mass += e.prob;
        }
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPatch { mass });
        }
        Ok(())
    }
}

/// Sparse column-stochastic transition over pixels plus NVA.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTransition {
    /// `columns[j]`: (destination, probability) pairs out of pixel `j`.
    columns: Vec<Vec<(usize, f64)>>,
    nva_to_pixel: f64,
    nva_stay: f64,
}

pub fn build_grid_transition(gm: &GridModel) -> Result<GridTransition> {
    gm.validate()?;
    let n = gm.pixels();
    let columns = (0..n)
        .map(|j| {
            let mut col: Vec<(usize, f64)> = Vec::with_capacity(gm.patch.len());
            for e in gm.patch.iter().filter(|e| e.prob > 0.0) {
                let to = gm.shift(j, e.dx, e.dy).unwrap_or(n);
                match col.iter_mut().find(|(t, _)| *t == to) {
                    Some(slot) => slot.1 += e.prob,
                    None => col.push((to, e.prob)),
                }
            }
            col
        })
        .collect();
    Ok(GridTransition {
        columns,
        nva_to_pixel: gm.nva_to_image_total / n as f64,
        nva_stay: 1.0 - gm.nva_to_image_total,
    })
}

impl GridTransition {
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.num_states();
        (0..n)
            .map(|i| (0..n).map(|j| self.prob(i, j)).collect())
            .collect()
    }

    fn pixels(&self) -> usize {
        self.columns.len()
    }
}

impl Transition for GridTransition {
    fn num_states(&self) -> usize {
        self.pixels() + 1
    }

    fn prob(&self, to: usize, from: usize) -> f64 {
        let n = self.pixels();
        if from == n {
            if to == n {
                self.nva_stay
            } else {
                self.nva_to_pixel
            }
        } else {
            self.columns[from]
                .iter()
                .filter(|(t, _)| *t == to)
                .map(|(_, p)| p)
                .sum()
        }
    }

    fn predict(&self, belief: &[f64], out: &mut [f64]) {
        let n = self.pixels();
        let from_nva = self.nva_to_pixel * belief[n];
        out[..n].fill(from_nva);
        out[n] = self.nva_stay * belief[n];
        for (col, b) in self.columns.iter().zip(belief) {
            for &(to, p) in col {
                out[to] += p * b;
            }
        }
    }
}

/// `b̄ = y + 1` per pixel, 1 for NVA.
pub fn unnormalized_output(image: &[f64]) -> Vec<f64> {
    image
        .iter()
        .map(|y| y + 1.0)
        .chain(std::iter::once(1.0))
        .collect()
}

/// Observation model over whole frames with the `y + 1` approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelLikelihood {
    pixels: usize,
}

impl PixelLikelihood {
    pub fn new(gm: &GridModel) -> Self {
        Self {
            pixels: gm.pixels(),
        }
    }
}

impl ObservationModel for PixelLikelihood {
    type Obs = [f64];

    fn num_states(&self) -> usize {
        self.pixels + 1
    }

    fn log_likelihoods(&self, y: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(y) {
            *o = v.ln_1p();
        }
        out[self.pixels] = 0.0;
    }
}

/// A stack of equally sized greyscale frames, `frames[k - 1]` being `y_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Vec<f64>>,
}

impl ImageSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        for (k, f) in self.frames.iter().enumerate() {
            if f.len() != n {
                return Err(Error::invalid(
                    format!("images[{}]", k + 1),
                    format!("expected {n} pixels, got {}", f.len()),
                ));
            }
            if let Some(v) = f.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
                return Err(Error::invalid(
                    format!("images[{}]", k + 1),
                    format!("intensities must be finite and nonnegative, got {v}"),
                ));
            }
        }
        Ok(())
    }

    /// Header of three little-endian u32 (width, height, frames), then
    /// little-endian f32 pixels frame by frame in row-major order.
    pub fn write_raster<W: Write>(&self, mut writer: W) -> Result<()> {
        for v in [self.width, self.height, self.frames.len()] {
            let v =
                u32::try_from(v).map_err(|_| Error::Raster(format!("dimension {v} too large")))?;
            writer.write_all(&v.to_le_bytes())?;
        }
        for f in &self.frames {
            for p in f {
                writer.write_all(&(*p as f32).to_le_bytes())?;
            }
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_raster<R: Read>(mut reader: R) -> Result<Self> {
        let mut header = [0u8; 12];
        reader
            .read_exact(&mut header)
            .map_err(|_| Error::Raster("truncated header".into()))?;
        let dim =
            |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (width, height, count) = (dim(0), dim(1), dim(2));
        if width == 0 || height == 0 {
            return Err(Error::Raster(format!("empty frame size {width}x{height}")));
        }
        let mut body = Vec::new();
        reader.read_to_end(&mut body)?;
        let n = width * height;
        if body.len() != 4 * n * count {
            return Err(Error::Raster(format!(
                "expected {} pixel bytes for {count} frames of {width}x{height}, got {}",
                4 * n * count,
                body.len()
            )));
        }
        let pixels: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let seq = Self {
            width,
            height,
            frames: pixels.chunks(n).map(<[f64]>::to_vec).collect(),
        };
        seq.validate()?;
        Ok(seq)
    }
}

/// Result of scanning a sequence for emergence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmergenceResult {
    /// `ζ_k` for `k = 0..=K`.
    pub zeta: Vec<f64>,
    /// First `k` with `ζ_k ≥ h_c`.
    pub alarm: Option<usize>,
    pub final_belief: Vec<f64>,
    pub log_likelihood: f64,
}

/// NVA point mass: the target starts out of sight.
pub fn nva_prior(gm: &GridModel) -> Belief {
    Belief::point_mass(gm.pixels() + 1, gm.nva())
}

/// Collapses the image posterior to the two-state (NVA, any pixel) belief.
pub fn aggregate(belief: &[f64]) -> [f64; 2] {
    let nva = belief[belief.len() - 1];
    let pixels: f64 = belief[..belief.len() - 1].iter().sum();
    [nva, pixels]
}

/// Filters the whole sequence, recording `ζ` at every step and the first
/// crossing of `h_c`. `initial` defaults to [`nva_prior`].
pub fn detect_emergence(
    images: &ImageSequence,
    gm: &GridModel,
    initial: Option<&Belief>,
    h_c: f64,
) -> Result<EmergenceResult> {
    if images.width != gm.width || images.height != gm.height {
        return Err(Error::invalid(
            "images",
            format!(
                "frame size {}x{} does not match grid {}x{}",
                images.width, images.height, gm.width, gm.height
            ),
        ));
    }
    images.validate()?;
    let trans = build_grid_transition(gm)?;
    let obs = PixelLikelihood::new(gm);
    let prior = match initial {
        Some(b) => b.clone(),
        None => nva_prior(gm),
    };
    let rule = StoppingRule::with_statistic(h_c, Statistic::ComplementOf(gm.nva()))?;
    let mut filter = HmmFilter::new(&trans, &obs, &prior)?;
    let mut zeta = Vec::with_capacity(images.len() + 1);
    let mut alarm = None;
    let mut record = |k: usize, belief: &[f64]| {
        zeta.push(Statistic::ComplementOf(gm.nva()).evaluate(belief));
        if alarm.is_none() && rule.stops(belief) {
            alarm = Some(k);
        }
    };
    record(0, filter.belief());
    for (i, frame) in images.frames.iter().enumerate() {
        filter.step(frame)?;
        record(i + 1, filter.belief());
    }
    Ok(EmergenceResult {
        zeta,
        alarm,
        final_belief: filter.belief().to_vec(),
        log_likelihood: filter.log_likelihood(),
    })
}

pub fn write_zeta_csv<W: Write>(result: &EmergenceResult, h_c: f64, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "zeta", "above_threshold", "alarm"])?;
    for (k, z) in result.zeta.iter().enumerate() {
        w.write_record([
            k.to_string(),
            z.to_string(),
            u8::from(*z >= h_c).to_string(),
            u8::from(result.alarm == Some(k)).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pixel intensity law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Intensity {
    Constant {
        value: f64,
    },
    Exponential {
        mean: f64,
    },
    /// `offset + Exp(mean)`: a fixed-brightness target on top of background.
    ShiftedExponential {
        offset: f64,
        mean: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
}

impl Intensity {
    pub fn validate(&self, field: &str) -> Result<()> {
        let ok = match *self {
            Intensity::Constant { value } => value >= 0.0 && value.is_finite(),
            Intensity::Exponential { mean } => mean > 0.0 && mean.is_finite(),
            Intensity::ShiftedExponential { offset, mean } => {
                offset >= 0.0 && offset.is_finite() && mean > 0.0 && mean.is_finite()
            }
            Intensity::Uniform { low, high } => low >= 0.0 && high > low && high.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                field,
                format!("invalid intensity law {self:?}"),
            ))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v = match *self {
            Intensity::Constant { value } => value,
            Intensity::Exponential { mean } => mean * Exp::new(1.0).unwrap().sample(rng),
            Intensity::ShiftedExponential { offset, mean } => {
                offset + mean * Exp::new(1.0).unwrap().sample(rng)
            }
            Intensity::Uniform { low, high } => rng.random_range(low..high),
        };
        // Stored at raster precision so files round-trip exactly.
        v as f32 as f64
    }

    /// Cumulative distribution function (used by goodness-of-fit checks).
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Intensity::Constant { value } => f64::from(u8::from(x >= value)),
            Intensity::Exponential { mean } => {
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 - (-x / mean).exp()
                }
            }
            Intensity::ShiftedExponential { offset, mean } => {
                if x <= offset {
                    0.0
                } else {
                    1.0 - (-(x - offset) / mean).exp()
                }
            }
            Intensity::Uniform { low, high } => ((x - low) / (high - low)).clamp(0.0, 1.0),
        }
    }
}

/// How the target moves through the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// Never visible.
    Absent,
    /// NVA until `frame`, where it appears at `(x, y)`; afterwards it moves
    /// by the patch and stays out of sight once it leaves the frame.
    Emergence { frame: usize, x: usize, y: usize },
    /// Full grid chain started from NVA.
    Chain,
    /// Explicit position per frame `1..=K`; `None` is NVA.
    Scripted {
        positions: Vec<Option<(usize, usize)>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub frames: usize,
    #[serde(default = "default_target")]
    pub target: Intensity,
    #[serde(default = "default_background")]
    pub background: Intensity,
    pub schedule: Schedule,
}

fn default_target() -> Intensity {
    Intensity::ShiftedExponential {
        offset: 8.0,
        mean: 1.0,
    }
}

fn default_background() -> Intensity {
    Intensity::Exponential { mean: 1.0 }
}

/// Ground-truth location per step `k = 0..=K`; `None` is NVA.
#[derive(Debug, Clone, PartialEq)]
pub struct Track(pub Vec<Option<usize>>);

impl Track {
    /// First step at which the target is visible.
    pub fn first_visible(&self) -> Option<usize> {
        self.0.iter().position(Option::is_some)
    }

    pub fn write_csv<W: Write>(&self, gm: &GridModel, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "state", "x", "y"])?;
        for (k, s) in self.0.iter().enumerate() {
            match s {
                Some(i) => {
                    let (x, y) = gm.coords(*i);
                    w.write_record([k.to_string(), "pixel".into(), x.to_string(), y.to_string()])?
                }
                None => {
                    w.write_record([k.to_string(), "nva".into(), String::new(), String::new()])?
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn patch_move<R: Rng + ?Sized>(gm: &GridModel, from: usize, rng: &mut R) -> Option<usize> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = gm.patch.last().copied();
    for e in &gm.patch {
        acc += e.prob;
        if u < acc {
            chosen = Some(*e);
            break;
        }
    }
    chosen.and_then(|e| gm.shift(from, e.dx, e.dy))
}

fn chain_move<R: Rng + ?Sized>(gm: &GridModel, from: Option<usize>, rng: &mut R) -> Option<usize> {
    match from {
        Some(j) => patch_move(gm, j, rng),
        None => {
            if rng.random::<f64>() < gm.nva_to_image_total {
                Some(rng.random_range(0..gm.pixels()))
            } else {
                None
            }
        }
    }
}

/// Draws a frame sequence and its ground-truth track, deterministically in
/// `seed`.
pub fn generate_synthetic_sequence(
    gm: &GridModel,
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<(ImageSequence, Track)> {
    gm.validate()?;
    spec.target.validate("target")?;
    spec.background.validate("background")?;
    let k_max = spec.frames;
    let mut rng = rng_from_seed(seed);
    let check_xy = |x: usize, y: usize| {
        if x >= gm.width || y >= gm.height {
            Err(Error::ScheduleOutOfBounds(format!(
                "position ({x}, {y}) outside {}x{} grid",
                gm.width, gm.height
            )))
        } else {
            Ok(gm.index(x, y))
        }
    };
    let mut track = vec![None; k_max + 1];
    match &spec.schedule {
        Schedule::Absent => {}
        Schedule::Emergence { frame, x, y } => {
            if *frame == 0 || *frame > k_max {
                return Err(Error::ScheduleOutOfBounds(format!(
                    "emergence frame {frame} outside 1..={k_max}"
                )));
            }
            let mut pos = Some(check_xy(*x, *y)?);
            track[*frame] = pos;
            for slot in track.iter_mut().skip(frame + 1) {
                pos = pos.and_then(|j| patch_move(gm, j, &mut rng));
                *slot = pos;
            }
        }
        Schedule::Chain => {
            for k in 1..=k_max {
                track[k] = chain_move(gm, track[k - 1], &mut rng);
            }
        }
        Schedule::Scripted { positions } => {
            if positions.len() != k_max {
                return Err(Error::ScheduleOutOfBounds(format!(
                    "scripted track has {} positions for {k_max} frames",
                    positions.len()
                )));
            }
            for (k, p) in positions.iter().enumerate() {
                track[k + 1] = p.map(|(x, y)| check_xy(x, y)).transpose()?;
            }
        }
    }
    let frames = track[1..]
        .iter()
        .map(|occupied| {
            (0..gm.pixels())
                .map(|i| {
                    if *occupied == Some(i) {
                        spec.target.sample(&mut rng)
                    } else {
                        spec.background.sample(&mut rng)
                    }
                })
                .collect()
        })
        .collect();
    Ok((
        ImageSequence {
            width: gm.width,
            height: gm.height,
            frames,
        },
        Track(track),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize, patch: Vec<PatchEntry>) -> GridModel {
        GridModel {
            width: w,
            height: h,
            patch,
            nva_to_image_total: 0.1,
        }
    }

    fn stay() -> Vec<PatchEntry> {
        vec![PatchEntry {
            dx: 0,
            dy: 0,
            prob: 1.0,
        }]
    }

    #[test]
    fn one_pixel_matrix() {
        let t = build_grid_transition(&grid(1, 1, stay())).unwrap();
        let a = t.to_dense();
        assert_eq!(a[0][0], 1.0);
        assert_eq!(a[1][0], 0.0);
        assert!((a[0][1] - 0.1).abs() < 1e-15);
        assert!((a[1][1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn up_patch_top_row_exits() {
        let gm = grid(
            3,
            3,
            vec![PatchEntry {
                dx: 0,
                dy: -1,
                prob: 1.0,
            }],
        );
        let t = build_grid_transition(&gm).unwrap();
        for x in 0..3 {
            assert_eq!(t.prob(gm.nva(), gm.index(x, 0)), 1.0);
            assert_eq!(t.prob(gm.index(x, 0), gm.index(x, 1)), 1.0);
        }
    }

    #[test]
    fn bad_patch_rejected() {
        let gm = grid(
            3,
            3,
            vec![PatchEntry {
                dx: 0,
                dy: 0,
                prob: 0.7,
            }],
        );
        assert!(matches!(
            build_grid_transition(&gm),
            Err(Error::InvalidPatch { .. })
        ));
        let gm = grid(
            3,
            3,
            vec![
                PatchEntry {
                    dx: 0,
                    dy: 0,
                    prob: -0.1,
                },
                PatchEntry {
                    dx: 1,
                    dy: 0,
                    prob: 1.1,
                },
            ],
        );
        assert!(matches!(
            build_grid_transition(&gm),
            Err(Error::InvalidPatch { .. })
        ));
    }

    #[test]
    fn sparse_predict_matches_dense() {
        let gm = GridModel {
            width: 4,
            height: 3,
            ..GridModel::default()
        };
        let t = build_grid_transition(&gm).unwrap();
        let dense = t.to_dense();
        let n = t.num_states();
        let b: Vec<f64> = (0..n)
            .map(|i| (i + 1) as f64 / (n * (n + 1) / 2) as f64)
            .collect();
        let mut out = vec![0.0; n];
        t.predict(&b, &mut out);
        for i in 0..n {
            let expect: f64 = (0..n).map(|j| dense[i][j] * b[j]).sum();
            assert!((out[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn output_formula() {
        assert_eq!(unnormalized_output(&[0.0, 0.0]), vec![1.0, 1.0, 1.0]);
        assert_eq!(
            unnormalized_output(&[9.0, 0.0, 0.0]),
            vec![10.0, 1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn first_step_mass_flow() {
        let gm = grid(4, 4, stay());
        let seq = ImageSequence {
            width: 4,
            height: 4,
            frames: vec![vec![0.0; 16]; 3],
        };
        let r = detect_emergence(&seq, &gm, None, 0.99).unwrap();
        assert_eq!(r.zeta[0], 0.0);
        assert!((r.zeta[1] - 0.1).abs() < 1e-15);
        assert!((r.zeta[2] - 0.19).abs() < 1e-15);
        assert_eq!(r.alarm, None);
        assert!((r.zeta[3] + r.final_belief[16] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let gm = grid(4, 4, stay());
        let seq = ImageSequence {
            width: 3,
            height: 4,
            frames: vec![vec![0.0; 12]],
        };
        assert!(detect_emergence(&seq, &gm, None, 0.9).is_err());
        let seq = ImageSequence {
            width: 4,
            height: 4,
            frames: vec![vec![-1.0; 16]],
        };
        assert!(detect_emergence(&seq, &gm, None, 0.9).is_err());
    }

    #[test]
    fn absent_schedule_is_background() {
        let gm = grid(3, 2, stay());
        let spec = SyntheticSpec {
            frames: 5,
            target: Intensity::Constant { value: 100.0 },
            background: Intensity::Constant { value: 0.0 },
            schedule: Schedule::Absent,
        };
        let (seq, track) = generate_synthetic_sequence(&gm, &spec, 1).unwrap();
        assert!(track.0.iter().all(Option::is_none));
        assert!(seq.frames.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn schedule_bounds() {
        let gm = grid(3, 3, stay());
        let mut spec = SyntheticSpec {
            frames: 5,
            target: default_target(),
            background: default_background(),
            schedule: Schedule::Emergence {
                frame: 6,
                x: 0,
                y: 0,
            },
        };
        assert!(matches!(
            generate_synthetic_sequence(&gm, &spec, 0),
            Err(Error::ScheduleOutOfBounds(_))
        ));
        spec.schedule = Schedule::Emergence {
            frame: 2,
            x: 3,
            y: 0,
        };
        assert!(matches!(
            generate_synthetic_sequence(&gm, &spec, 0),
            Err(Error::ScheduleOutOfBounds(_))
        ));
        spec.schedule = Schedule::Scripted {
            positions: vec![None; 4],
        };
        assert!(matches!(
            generate_synthetic_sequence(&gm, &spec, 0),
            Err(Error::ScheduleOutOfBounds(_))
        ));
    }

    #[test]
    fn emergence_track_follows_patch() {
        let gm = GridModel::default();
        let spec = SyntheticSpec {
            frames: 80,
            target: default_target(),
            background: default_background(),
            schedule: Schedule::Emergence {
                frame: 50,
                x: 8,
                y: 14,
            },
        };
        let (_, track) = generate_synthetic_sequence(&gm, &spec, 3).unwrap();
        assert_eq!(track.first_visible(), Some(50));
        assert_eq!(track.0[50], Some(gm.index(8, 14)));
        for k in 51..=80 {
            if let (Some(a), Some(b)) = (track.0[k - 1], track.0[k]) {
                let (ax, ay) = gm.coords(a);
                let (bx, by) = gm.coords(b);
                assert_eq!(ax, bx);
                assert!(by == ay || by + 1 == ay);
            } else {
                assert!(track.0[k].is_none());
            }
        }
    }

    #[test]
    fn raster_round_trip() {
        let gm = grid(5, 3, stay());
        let spec = SyntheticSpec {
            frames: 4,
            target: default_target(),
            background: default_background(),
            schedule: Schedule::Chain,
        };
        let (seq, _) = generate_synthetic_sequence(&gm, &spec, 9).unwrap();
        let mut buf = Vec::new();
        seq.write_raster(&mut buf).unwrap();
        assert_eq!(buf.len(), 12 + 4 * 15 * 4);
        assert_eq!(ImageSequence::read_raster(&buf[..]).unwrap(), seq);
        assert!(matches!(
            ImageSequence::read_raster(&buf[..buf.len() - 1]),
            Err(Error::Raster(_))
        ));
        assert!(matches!(
            ImageSequence::read_raster(&buf[..5]),
            Err(Error::Raster(_))
        ));
    }

    #[test]
    fn track_csv_header() {
        let gm = grid(2, 2, stay());
        let track = Track(vec![None, Some(3)]);
        let mut out = Vec::new();
        track.write_csv(&gm, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "k,state,x,y\n0,nva,,\n1,pixel,1,1\n"
        );
    }
}
