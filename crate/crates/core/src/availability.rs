//! Use-availability augmentation: one observed position plus `J - 1`
//! Gaussian availability draws per step.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::raster::CovariateStack;
use crate::telemetry::{MotilitySeries, Track};

pub type Position = (f64, f64);

/// Proposals allowed per required availability draw before giving up.
pub const MAX_PROPOSALS_PER_DRAW: u64 = 1000;

/// Generator for the availability draws of one step. Each step gets its own
/// ChaCha8 stream keyed by the step index, so frames can be built in any
/// order with identical results.
pub fn step_rng(seed: u64, step_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step_index as u64);
    rng
}

/// Per-axis standard deviation of the availability distribution,
/// `sqrt(2 delta_bar dt)`.
pub fn availability_sd(delta_bar: f64, dt: f64) -> f64 {
    (2.0 * delta_bar * dt).sqrt()
}

/// One isotropic Gaussian proposal around `center`.
pub fn gaussian_proposal<R: Rng + ?Sized>(rng: &mut R, center: Position, sd: f64) -> Position {
    let zx: f64 = rng.sample(StandardNormal);
    let zy: f64 = rng.sample(StandardNormal);
    (center.0 + sd * zx, center.1 + sd * zy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvailabilitySample {
    pub positions: Vec<Position>,
    pub proposals: u64,
    pub rejections: u64,
}

/// Draws `count` positions from `N(s_prev, 2 delta_bar dt I)` restricted to
/// valid cells of `stack`. Invalid proposals are redrawn, not clamped.
pub fn sample_availability<R: Rng + ?Sized>(
    s_prev: Position,
    delta_bar: f64,
    dt: f64,
    count: usize,
    stack: &CovariateStack,
    rng: &mut R,
) -> Result<AvailabilitySample> {
    if !(delta_bar > 0.0 && dt > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "availability needs positive delta_bar and dt, got {delta_bar} and {dt}"
        )));
    }
    let sd = availability_sd(delta_bar, dt);
    let budget = MAX_PROPOSALS_PER_DRAW * count as u64;
    let mut positions = Vec::with_capacity(count);
    let mut proposals = 0;
    while positions.len() < count {
        if proposals >= budget {
            return Err(Error::RejectionExhausted { proposals });
        }
        proposals += 1;
        let p = gaussian_proposal(rng, s_prev, sd);
        if stack.is_valid(p.0, p.1) {
            positions.push(p);
        }
    }
    Ok(AvailabilitySample {
        positions,
        proposals,
        rejections: proposals - count as u64,
    })
}

/// One step's used position (slot 0) and its availability positions.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFrame {
    pub step_index: usize,
    /// `J x p` covariates, row-major; row 0 is the observed position.
    pub w: Vec<f64>,
    pub positions: Vec<Position>,
    pub delta_bar: f64,
    pub dt: f64,
    pub p: usize,
}

impl StepFrame {
    /// Frame from explicit covariate rows, row 0 being the used position.
    pub fn from_covariates(step_index: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.len() < 2 {
            return Err(Error::Dimension("a step needs at least two slots".into()));
        }
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("covariate rows differ in length".into()));
        }
        Ok(StepFrame {
            step_index,
            w: rows.concat(),
            positions: vec![(f64::NAN, f64::NAN); rows.len()],
            delta_bar: f64::NAN,
            dt: f64::NAN,
            p,
        })
    }

    pub fn j(&self) -> usize {
        self.w.len() / self.p
    }

    /// Covariate vector of slot `j` (0 = used).
    pub fn w(&self, j: usize) -> &[f64] {
        &self.w[j * self.p..(j + 1) * self.p]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.w.chunks_exact(self.p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub frames: Vec<StepFrame>,
    pub j: usize,
    pub p: usize,
    pub seed: u64,
    pub proposals: u64,
    pub rejections: u64,
}

impl AugmentedDataset {
    /// Dataset from prebuilt frames, all with the same `J` and `p`.
    pub fn from_frames(frames: Vec<StepFrame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Dimension("dataset has no frames".into()))?;
        let (j, p) = (first.j(), first.p);
        if frames.iter().any(|f| f.j() != j || f.p != p) {
            return Err(Error::Dimension("frames differ in J or p".into()));
        }
        Ok(AugmentedDataset {
            frames,
            j,
            p,
            seed: 0,
            proposals: 0,
            rejections: 0,
        })
    }
}

/// Builds the augmented dataset: for each step, slot 0 holds the covariates
/// at the observed end position and slots `1..J` hold covariates at
/// availability draws centred on the previous fix.
pub fn build_augmented(
    track: &Track,
    motility: &MotilitySeries,
    stack: &CovariateStack,
    j: usize,
    seed: u64,
) -> Result<AugmentedDataset> {
    if j < 2 {
        return Err(Error::InvalidConfig(format!("J must be at least 2, got {j}")));
    }
    let steps = track.steps();
    if motility.delta_bar.len() != steps.len() {
        return Err(Error::Dimension(format!(
            "motility series has {} entries for {} steps",
            motility.delta_bar.len(),
            steps.len()
        )));
    }
    let bad: Vec<usize> = track
        .fixes()
        .iter()
        .enumerate()
        .filter(|(_, f)| !stack.is_valid(f.x, f.y))
        .map(|(k, _)| k)
        .collect();
    if !bad.is_empty() {
        return Err(Error::ObservedOutOfDomain(bad));
    }

    let p = stack.p();
    let mut frames = Vec::with_capacity(steps.len());
    let (mut proposals, mut rejections) = (0, 0);
    let mut buf = Vec::with_capacity(p);
    for (step, &delta_bar) in steps.iter().zip(&motility.delta_bar) {
        let mut rng = step_rng(seed, step.index);
        let draws = sample_availability(step.prev, delta_bar, step.dt, j - 1, stack, &mut rng)?;
        proposals += draws.proposals;
        rejections += draws.rejections;

        let mut positions = Vec::with_capacity(j);
        positions.push(step.curr);
        positions.extend(draws.positions);
        let mut w = Vec::with_capacity(j * p);
        for &(x, y) in &positions {
            stack.extract_into(x, y, &mut buf)?;
            w.extend_from_slice(&buf);
        }
        frames.push(StepFrame {
            step_index: step.index,
            w,
            positions,
            delta_bar,
            dt: step.dt,
            p,
        });
    }
    Ok(AugmentedDataset {
        frames,
        j,
        p,
        seed,
        proposals,
        rejections,
    })
}

/// Audit dump with columns `step,slot,x,y,used,w_1..w_p`; slots are 1-based.
pub fn augmented_csv_string(data: &AugmentedDataset) -> String {
    let mut out = String::from("step,slot,x,y,used");
    for k in 1..=data.p {
        write!(out, ",w_{k}").unwrap();
    }
    out.push('\n');
    for frame in &data.frames {
        for (slot, (pos, w)) in frame.positions.iter().zip(frame.rows()).enumerate() {
            write!(out, "{},{},{},{},{}", frame.step_index, slot + 1, pos.0, pos.1, u8::from(slot == 0)).unwrap();
            for v in w {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_augmented_csv(data: &AugmentedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, augmented_csv_string(data)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{Raster, RasterHeader};
    use crate::telemetry::{estimate_delta_bar, Fix};

    fn ramp_stack(n: usize) -> CovariateStack {
        let h = RasterHeader::new(n, n, 0.0, 0.0, 10.0, -9999.0).unwrap();
        let r = Raster::from_fn(h, |x, y| (x - y) / 100.0).unwrap();
        CovariateStack::new(vec![("ramp".into(), r)], true).unwrap()
    }

    fn small_track() -> Track {
        let fixes = (0..6)
            .map(|k| Fix {
                t: 3.0 * k as f64,
                x: 200.0 + 7.0 * k as f64,
                y: 250.0 - 5.0 * k as f64,
            })
            .collect();
        Track::new(fixes, "t").unwrap()
    }

    #[test]
    fn sd_from_motility() {
        assert!((availability_sd(625.0, 1.0) - 35.355_339_059_327_38).abs() < 1e-12);
    }

    #[test]
    fn frames_have_expected_shape_and_are_deterministic() {
        let stack = ramp_stack(50);
        let track = small_track();
        let m = estimate_delta_bar(&track, 70.0).unwrap();
        let a = build_augmented(&track, &m, &stack, 11, 42).unwrap();
        let b = build_augmented(&track, &m, &stack, 11, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frames.len(), 5);
        for (frame, step) in a.frames.iter().zip(track.steps()) {
            assert_eq!(frame.j(), 11);
            assert_eq!(frame.positions[0], step.curr);
            assert_eq!(frame.w(0), stack.extract(step.curr.0, step.curr.1).unwrap().as_slice());
        }
        let c = build_augmented(&track, &m, &stack, 11, 43).unwrap();
        assert_ne!(a.frames[0].positions[1], c.frames[0].positions[1]);
    }

    #[test]
    fn draws_are_centred_on_previous_fix() {
        let stack = ramp_stack(100);
        let fixes = vec![
            Fix { t: 0.0, x: 200.0, y: 200.0 },
            Fix { t: 1.0, x: 800.0, y: 800.0 },
            Fix { t: 2.0, x: 810.0, y: 800.0 },
        ];
        let track = Track::new(fixes, "jump").unwrap();
        let m = MotilitySeries {
            delta_bar: vec![1.0, 1.0],
            window_hours: 1.0,
            n_i: vec![1, 1],
        };
        let data = build_augmented(&track, &m, &stack, 20, 1).unwrap();
        // sd is sqrt(2) m, so every draw of step 1 sits near (200, 200)
        for pos in &data.frames[0].positions[1..] {
            assert!((pos.0 - 200.0).abs() < 20.0 && (pos.1 - 200.0).abs() < 20.0);
        }
    }

    #[test]
    fn observed_fix_outside_is_reported() {
        let stack = ramp_stack(10);
        let fixes = vec![
            Fix { t: 0.0, x: 50.0, y: 50.0 },
            Fix { t: 1.0, x: 150.0, y: 50.0 },
            Fix { t: 2.0, x: 60.0, y: 50.0 },
            Fix { t: 3.0, x: 60.0, y: -1.0 },
        ];
        let track = Track::new(fixes, "out").unwrap();
        let m = estimate_delta_bar(&track, 70.0).unwrap();
        match build_augmented(&track, &m, &stack, 5, 0) {
            Err(Error::ObservedOutOfDomain(idx)) => assert_eq!(idx, vec![1, 3]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_j_is_rejected() {
        let stack = ramp_stack(50);
        let track = small_track();
        let m = estimate_delta_bar(&track, 70.0).unwrap();
        assert!(build_augmented(&track, &m, &stack, 1, 0).is_err());
    }

    #[test]
    fn rejection_budget_is_enforced() {
        // one valid cell of 10 m inside a huge nodata field, sd ~ 1 km
        let h = RasterHeader::new(200, 200, 0.0, 0.0, 10.0, -9999.0).unwrap();
        let mut vals = vec![-9999.0; 200 * 200];
        vals[100 * 200 + 100] = 1.0;
        let stack = CovariateStack::new(vec![("a".into(), Raster::new(h, vals).unwrap())], true).unwrap();
        let mut rng = step_rng(0, 0);
        let res = sample_availability((1005.0, 995.0), 1e5, 3.0, 5, &stack, &mut rng);
        assert!(matches!(res, Err(Error::RejectionExhausted { proposals: 5000 })));
    }

    #[test]
    fn dump_has_one_row_per_slot() {
        let stack = ramp_stack(50);
        let track = small_track();
        let m = estimate_delta_bar(&track, 70.0).unwrap();
        let data = build_augmented(&track, &m, &stack, 3, 9).unwrap();
        let csv = augmented_csv_string(&data);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,slot,x,y,used,w_1,w_2");
        assert_eq!(lines.len(), 1 + 5 * 3);
        assert!(lines[1].starts_with("1,1,") && lines[1].split(',').nth(4) == Some("1"));
        assert_eq!(lines[2].split(',').nth(4), Some("0"));
    }
}
