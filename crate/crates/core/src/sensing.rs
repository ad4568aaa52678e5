//! Synthetic thermal-camera frames and the two work-zone extractors:
//! mean of the hottest pixels and a fixed circular ROI (pyrometer emulation).
//!
//! Pixel `(col, row)` has its centre at `((col + 0.5) p, (row + 0.5) p)` mm
//! in frame coordinates, `p` being the pixel pitch.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{domain, Error, Result};

pub const FRAME_WIDTH: usize = 640;
pub const FRAME_HEIGHT: usize = 480;
pub const PIXEL_PITCH_MM: f64 = 0.148;
pub const HOTTEST_N: usize = 200;
pub const ROI_DIAMETER_MM: f64 = 0.9;
pub const NUC_DWELL_S: f64 = 0.128;
pub const NUC_PERIOD_S: f64 = 30.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ThermalFrame {
    pub width: usize,
    pub height: usize,
    pub pitch_mm: f64,
    /// Row-major, degrees C.
    pub values: Vec<f64>,
    pub timestamp: f64,
}

impl ThermalFrame {
    pub fn uniform(value: f64, timestamp: f64) -> Self {
        Self {
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
            pitch_mm: PIXEL_PITCH_MM,
            values: vec![value; FRAME_WIDTH * FRAME_HEIGHT],
            timestamp,
        }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    pub fn field_of_view_mm(&self) -> (f64, f64) {
        (
            self.width as f64 * self.pitch_mm,
            self.height as f64 * self.pitch_mm,
        )
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Header line `# width=.. height=.. pitch_mm=.. timestamp_s=..` then one
    /// comma-separated row per line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# width={} height={} pitch_mm={} timestamp_s={}",
            self.width, self.height, self.pitch_mm, self.timestamp
        )?;
        for row in self.values.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Background temperature field: `base + gx x + gy y` (x, y in mm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Background {
    pub base: f64,
    pub gradient_x: f64,
    pub gradient_y: f64,
}

impl Background {
    pub fn uniform(base: f64) -> Self {
        Self {
            base,
            gradient_x: 0.0,
            gradient_y: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HotSpot {
    /// Frame coordinates in mm.
    pub x_mm: f64,
    pub y_mm: f64,
    pub peak: f64,
    /// 1/e radius.
    pub radius_mm: f64,
}

fn frame_seed(seed: u64, t: f64) -> u64 {
    seed ^ t.to_bits().rotate_left(17) ^ 0x9e37_79b9_7f4a_7c15
}

/// Gaussian hot spot over a linear background plus seeded pixel noise.
pub fn render_frame(
    spot: &HotSpot,
    background: &Background,
    noise_sigma: f64,
    seed: u64,
    t: f64,
) -> Result<ThermalFrame> {
    let p = PIXEL_PITCH_MM;
    let (fw, fh) = (FRAME_WIDTH as f64 * p, FRAME_HEIGHT as f64 * p);
    if !(spot.x_mm >= 0.0 && spot.x_mm <= fw && spot.y_mm >= 0.0 && spot.y_mm <= fh) {
        return Err(Error::OutOfView {
            x: spot.x_mm,
            y: spot.y_mm,
        });
    }
    if !(spot.radius_mm > 0.0) || !spot.peak.is_finite() || !(noise_sigma >= 0.0) {
        return Err(domain(
            "hot spot needs finite peak, positive radius, nonnegative noise",
        ));
    }
    let inv_r2 = 1.0 / (spot.radius_mm * spot.radius_mm);
    let centre = |i: usize| (i as f64 + 0.5) * p;
    let ex: Vec<f64> = (0..FRAME_WIDTH)
        .map(|c| (-(centre(c) - spot.x_mm).powi(2) * inv_r2).exp())
        .collect();
    let ey: Vec<f64> = (0..FRAME_HEIGHT)
        .map(|r| (-(centre(r) - spot.y_mm).powi(2) * inv_r2).exp())
        .collect();
    let bg_at_spot =
        background.base + background.gradient_x * spot.x_mm + background.gradient_y * spot.y_mm;
    let amp = spot.peak - bg_at_spot;

    let bx: Vec<f64> = (0..FRAME_WIDTH)
        .map(|c| background.gradient_x * centre(c))
        .collect();
    let mut values = Vec::with_capacity(FRAME_WIDTH * FRAME_HEIGHT);
    for (r, wy) in ey.iter().enumerate() {
        let row_bg = background.base + background.gradient_y * centre(r);
        let a = amp * wy;
        values.extend(bx.iter().zip(&ex).map(|(b, wx)| row_bg + b + a * wx));
    }
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(seed, t));
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| domain(e.to_string()))?;
        for v in &mut values {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(ThermalFrame {
        width: FRAME_WIDTH,
        height: FRAME_HEIGHT,
        pitch_mm: p,
        values,
        timestamp: t,
    })
}

#[derive(Clone, Copy, PartialEq)]
struct Ranked {
    value: f64,
    index: usize,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    // higher value ranks first; among equals the lower index ranks first
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Row-major indices of the `n` hottest pixels, hottest first.
pub fn hottest_n(frame: &ThermalFrame, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > frame.values.len() {
        return Err(domain(format!(
            "hottest-n count {n} outside 1..={}",
            frame.values.len()
        )));
    }
    let values = &frame.values;
    let w = frame.width;
    // seed with a window around the brightest pixel so the skip floor starts high
    let peak = (0..values.len()).fold(0, |m, i| if values[i] > values[m] { i } else { m });
    let half = ((n as f64).sqrt() / 2.0).ceil() as usize;
    let (pc, pr) = (peak % w, peak / w);
    let cols = pc.saturating_sub(half)..(pc + half + 1).min(w);
    let rows = pr.saturating_sub(half)..(pr + half + 1).min(frame.height);

    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(n + 1);
    let mut floor = f64::NEG_INFINITY;
    let mut offer = |heap: &mut BinaryHeap<Reverse<Ranked>>, index: usize| {
        let value = values[index];
        // equal values arriving later rank lower unless they come from the seed
        if value < floor {
            return;
        }
        let item = Ranked { value, index };
        if heap.len() < n {
            heap.push(Reverse(item));
        } else if heap.peek().is_some_and(|Reverse(min)| item > *min) {
            heap.pop();
            heap.push(Reverse(item));
        }
        if heap.len() == n {
            floor = heap.peek().map_or(floor, |Reverse(min)| min.value);
        }
    };
    for r in rows.clone() {
        for c in cols.clone() {
            offer(&mut heap, r * w + c);
        }
    }
    for r in 0..frame.height {
        let row = r * w;
        if rows.contains(&r) {
            (0..cols.start)
                .chain(cols.end..w)
                .for_each(|c| offer(&mut heap, row + c));
        } else {
            (0..w).for_each(|c| offer(&mut heap, row + c));
        }
    }
    let mut picked: Vec<Ranked> = heap.into_iter().map(|Reverse(r)| r).collect();
    picked.sort_by(|a, b| b.cmp(a));
    Ok(picked.into_iter().map(|r| r.index).collect())
}

pub fn hottest_n_mean(frame: &ThermalFrame, n: usize) -> Result<f64> {
    let idx = hottest_n(frame, n)?;
    Ok(idx.iter().map(|&i| frame.values[i]).sum::<f64>() / n as f64)
}

/// Area covered by `n` pixels.
pub fn pixel_area_mm2(n: usize, pitch_mm: f64) -> f64 {
    n as f64 * pitch_mm * pitch_mm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiSpec {
    /// Pixel coordinates; pixel `(c, r)` has its centre at `(c, r)`.
    pub center_px: (f64, f64),
    pub diameter_mm: f64,
}

impl RoiSpec {
    pub fn new(center_px: (f64, f64), diameter_mm: f64) -> Self {
        Self {
            center_px,
            diameter_mm,
        }
    }

    /// ROI centred on the pixel containing frame point `(x, y)` mm.
    pub fn at_pixel_of(x_mm: f64, y_mm: f64, diameter_mm: f64) -> Self {
        let c = (x_mm / PIXEL_PITCH_MM).floor();
        let r = (y_mm / PIXEL_PITCH_MM).floor();
        Self {
            center_px: (c, r),
            diameter_mm,
        }
    }

    pub fn pixels(&self, frame: &ThermalFrame) -> Result<Vec<usize>> {
        if !(self.diameter_mm > 0.0) {
            return Err(domain("ROI diameter must be positive"));
        }
        let rad = self.diameter_mm / 2.0 / frame.pitch_mm;
        let (cx, cy) = self.center_px;
        if cx - rad < -0.5
            || cy - rad < -0.5
            || cx + rad > frame.width as f64 - 0.5
            || cy + rad > frame.height as f64 - 0.5
        {
            return Err(domain("ROI circle extends outside the frame"));
        }
        let mut out = Vec::new();
        let r0 = (cy - rad).ceil().max(0.0) as usize;
        let r1 = (cy + rad).floor() as usize;
        let c0 = (cx - rad).ceil().max(0.0) as usize;
        let c1 = (cx + rad).floor() as usize;
        for r in r0..=r1 {
            for c in c0..=c1 {
                let (dx, dy) = (c as f64 - cx, r as f64 - cy);
                if dx * dx + dy * dy <= rad * rad {
                    out.push(r * frame.width + c);
                }
            }
        }
        if out.is_empty() {
            return Err(Error::EmptyRoi {
                diameter_mm: self.diameter_mm,
            });
        }
        Ok(out)
    }
}

pub fn roi_mean(frame: &ThermalFrame, roi: &RoiSpec) -> Result<f64> {
    let px = roi.pixels(frame)?;
    Ok(px.iter().map(|&i| frame.values[i]).sum::<f64>() / px.len() as f64)
}

/// False during `[k period, k period + dwell)`.
pub fn nuc_gate(t: f64, period: f64, dwell: f64) -> bool {
    if !period.is_finite() {
        return true;
    }
    let phase = t - (t / period).floor() * period;
    phase >= dwell
}

/// Substitutes the last available value while the sensor is unavailable.
#[derive(Clone, Copy, Debug, Default)]
pub struct SampleHold {
    last: Option<f64>,
}

impl SampleHold {
    pub fn sample(&mut self, available: bool, value: f64) -> Option<f64> {
        if available {
            self.last = Some(value);
        }
        self.last
    }
}

/// Single-slot "latest wins" channel between a frame producer and the
/// controller tick.
pub struct LatestValue<T> {
    slot: Arc<Mutex<Option<(f64, Arc<T>)>>>,
}

impl<T> Clone for LatestValue<T> {
    fn clone(&self) -> Self {
        Self {
            slot: Arc::clone(&self.slot),
        }
    }
}

impl<T> Default for LatestValue<T> {
    fn default() -> Self {
        Self {
            slot: Arc::new(Mutex::new(None)),
        }
    }
}

impl<T> LatestValue<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, timestamp: f64, value: T) {
        let mut slot = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        *slot = Some((timestamp, Arc::new(value)));
    }

    pub fn latest(&self) -> Option<(f64, Arc<T>)> {
        self.slot.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}
