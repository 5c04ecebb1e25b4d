//! Linear pressure field of ultrasonic phased arrays.
//!
//! Each transducer is a monopole: its phasor contribution at distance `r` is
//! `A / r * exp(j(phi - k r))`. The time-domain field is the real part of
//! `P(x) * exp(j w t)`.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = Vector3<f64>;

/// Distance below which a probe counts as sitting on a source.
pub const EPSILON: f64 = 1e-6;
pub const DEFAULT_FREQUENCY: f64 = 40_000.0;
pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_PITCH: f64 = 0.01;
pub const GRID_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AcousticsError {
    #[error("probe point lies {distance:e} m from a transducer")]
    DegeneratePoint { distance: f64 },
    #[error("arrays are not facing each other (off by {0:.4} rad)")]
    Alignment(f64),
    #[error("standing-wave search needs uniform phases on both arrays")]
    NonUniformPhases,
    #[error("invalid array: {0}")]
    InvalidArray(String),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transducer {
    /// Position in the array frame, metres.
    pub position: Point3,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasedArray {
    pub transducers: Vec<Transducer>,
    pub pitch: f64,
    pub origin: Point3,
    /// Unit facing direction in the arena frame.
    pub normal: Point3,
    pub frequency: f64,
    pub speed_of_sound: f64,
    world: Vec<Point3>,
}

/// Orthonormal in-plane axes for a plane with the given unit normal.
fn plane_basis(normal: &Point3) -> (Point3, Point3) {
    let helper = if normal.z.abs() < 0.9 { Point3::z() } else { Point3::x() };
    let u = helper.cross(normal).normalize();
    let v = normal.cross(&u);
    (u, v)
}

impl PhasedArray {
    /// A square `side`×`side` grid centred on `origin`, all amplitudes 1 and
    /// phases 0.
    pub fn grid(side: usize, pitch: f64, origin: Point3, normal: Point3, frequency: f64) -> Result<Self, AcousticsError> {
        if side == 0 || pitch <= 0.0 || frequency <= 0.0 {
            return Err(AcousticsError::InvalidArray(format!(
                "side {side}, pitch {pitch}, frequency {frequency}"
            )));
        }
        let n = normal.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(AcousticsError::InvalidArray("normal has zero length".into()));
        }
        let half = (side as f64 - 1.0) / 2.0;
        let transducers = (0..side)
            .flat_map(|i| (0..side).map(move |j| (i, j)))
            .map(|(i, j)| Transducer {
                position: Point3::new((i as f64 - half) * pitch, (j as f64 - half) * pitch, 0.0),
                amplitude: 1.0,
                phase: 0.0,
            })
            .collect();
        let mut a = Self {
            transducers,
            pitch,
            origin,
            normal: normal / n,
            frequency,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            world: Vec::new(),
        };
        a.refresh();
        Ok(a)
    }

    /// The default 8×8, 10 mm pitch, 40 kHz array.
    pub fn standard(origin: Point3, normal: Point3) -> Self {
        Self::grid(GRID_SIDE, DEFAULT_PITCH, origin, normal, DEFAULT_FREQUENCY).expect("defaults are valid")
    }

    fn refresh(&mut self) {
        let (u, v) = plane_basis(&self.normal);
        self.world = self
            .transducers
            .iter()
            .map(|t| self.origin + u * t.position.x + v * t.position.y + self.normal * t.position.z)
            .collect();
    }

    pub fn with_speed_of_sound(mut self, c: f64) -> Self {
        self.speed_of_sound = c;
        self
    }

    pub fn len(&self) -> usize {
        self.transducers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transducers.is_empty()
    }

    pub fn omega(&self) -> f64 {
        TAU * self.frequency
    }

    pub fn wavenumber(&self) -> f64 {
        self.omega() / self.speed_of_sound
    }

    pub fn wavelength(&self) -> f64 {
        self.speed_of_sound / self.frequency
    }

    /// Transducer positions in the arena frame.
    pub fn world_positions(&self) -> &[Point3] {
        &self.world
    }

    pub fn phases(&self) -> Vec<f64> {
        self.transducers.iter().map(|t| t.phase).collect()
    }

    /// Sets phases, wrapped into [0, 2π).
    pub fn set_phases(&mut self, phases: &[f64]) {
        for (t, p) in self.transducers.iter_mut().zip(phases) {
            t.phase = p.rem_euclid(TAU);
        }
    }

    pub fn set_amplitudes(&mut self, amplitude: f64) {
        for t in &mut self.transducers {
            t.amplitude = amplitude;
        }
    }

    fn contribution(&self, point: &Point3) -> Result<Complex64, AcousticsError> {
        let k = self.wavenumber();
        let mut sum = Complex64::new(0.0, 0.0);
        for (t, pos) in self.transducers.iter().zip(&self.world) {
            let r = (point - pos).norm();
            if r < EPSILON {
                return Err(AcousticsError::DegeneratePoint { distance: r });
            }
            sum += Complex64::from_polar(t.amplitude / r, t.phase - k * r);
        }
        Ok(sum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub point: Point3,
    pub pressure: Complex64,
    pub magnitude: f64,
}

pub fn pressure_at(arrays: &[PhasedArray], point: Point3) -> Result<FieldSample, AcousticsError> {
    let mut pressure = Complex64::new(0.0, 0.0);
    for a in arrays {
        pressure += a.contribution(&point)?;
    }
    Ok(FieldSample {
        point,
        pressure,
        magnitude: pressure.norm(),
    })
}

/// Phases that bring every transducer's wave into phase at `focal`.
pub fn focus_phases(array: &PhasedArray, focal: Point3) -> Vec<f64> {
    let k = array.wavenumber();
    array
        .world_positions()
        .iter()
        .map(|p| (k * (focal - p).norm()).rem_euclid(TAU))
        .collect()
}

/// Upper bound on |P| at `point`, reached when all contributions align.
pub fn coherent_sum(array: &PhasedArray, point: Point3) -> f64 {
    array
        .transducers
        .iter()
        .zip(array.world_positions())
        .map(|(t, p)| t.amplitude / (point - p).norm())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRow {
    pub s_meters: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub magnitude_pa: f64,
    pub phase_rad: f64,
}

impl From<(f64, &FieldSample)> for ScanRow {
    fn from((s, f): (f64, &FieldSample)) -> Self {
        ScanRow {
            s_meters: s,
            x: f.point.x,
            y: f.point.y,
            z: f.point.z,
            magnitude_pa: f.magnitude,
            phase_rad: f.pressure.arg(),
        }
    }
}

/// `n` equally spaced samples from `start` to `end`, both included.
pub fn line_scan(arrays: &[PhasedArray], start: Point3, end: Point3, n: usize) -> Result<Vec<FieldSample>, AcousticsError> {
    if n < 2 {
        return Err(AcousticsError::TooFewSamples(n));
    }
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            pressure_at(arrays, start + (end - start) * t)
        })
        .collect()
}

pub fn scan_rows(samples: &[FieldSample], start: Point3) -> Vec<ScanRow> {
    samples.iter().map(|s| ScanRow::from(((s.point - start).norm(), s))).collect()
}

/// Arrays may deviate this far from exact opposition.
pub const ALIGNMENT_TOL: f64 = 0.01;

pub fn check_facing(a: &PhasedArray, b: &PhasedArray) -> Result<(), AcousticsError> {
    let cos = (-a.normal.dot(&b.normal)).clamp(-1.0, 1.0);
    let off = cos.acos();
    if off > ALIGNMENT_TOL {
        return Err(AcousticsError::Alignment(off));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSearch {
    /// Coarse samples per wavelength before refinement.
    pub samples_per_wavelength: usize,
    /// Bracket width at which golden-section refinement stops, metres.
    pub tolerance: f64,
}

impl Default for NodeSearch {
    fn default() -> Self {
        Self {
            samples_per_wavelength: 64,
            tolerance: 1e-11,
        }
    }
}

/// Pressure minima along the segment `from`→`to`, as arc-length positions
/// from `from` in increasing order.
pub fn standing_wave_nodes(
    a: &PhasedArray,
    b: &PhasedArray,
    from: Point3,
    to: Point3,
    search: NodeSearch,
) -> Result<Vec<f64>, AcousticsError> {
    check_facing(a, b)?;
    let uniform = |arr: &PhasedArray| arr.transducers.windows(2).all(|w| w[0].phase == w[1].phase);
    if !uniform(a) || !uniform(b) {
        return Err(AcousticsError::NonUniformPhases);
    }
    let arrays = [a.clone(), b.clone()];
    let len = (to - from).norm();
    let dir = (to - from) / len;
    let mag = |s: f64| pressure_at(&arrays, from + dir * s).map(|f| f.magnitude);

    let n = ((len / a.wavelength()) * search.samples_per_wavelength as f64).ceil() as usize + 1;
    let step = len / (n - 1) as f64;
    let coarse = (0..n).map(|i| mag(i as f64 * step)).collect::<Result<Vec<_>, _>>()?;
    let mut nodes = Vec::new();
    for i in 1..n - 1 {
        if coarse[i] < coarse[i - 1] && coarse[i] <= coarse[i + 1] {
            nodes.push(golden_min(&mag, (i - 1) as f64 * step, (i + 1) as f64 * step, search.tolerance)?);
        }
    }
    Ok(nodes)
}

fn golden_min<F>(f: &F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64, AcousticsError>
where
    F: Fn(f64) -> Result<f64, AcousticsError>,
{
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2)?;
        }
        if x1 >= x2 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// Restoring ratio along arena x, y and z.
    pub ratios: [f64; 3],
    pub center_magnitude: f64,
    pub threshold: f64,
    pub stable: bool,
}

pub const DEFAULT_STABILITY_THRESHOLD: f64 = 2.0;

/// Compares |P| a small distance away from `trap` with |P| at `trap`.
/// A pressure node surrounded by stronger field gives ratios well above 1.
pub fn trap_stability(
    arrays: &[PhasedArray],
    trap: Point3,
    probe_radius: f64,
    threshold: f64,
) -> Result<StabilityReport, AcousticsError> {
    let center = pressure_at(arrays, trap)?.magnitude;
    let mut ratios = [0.0; 3];
    for (axis, ratio) in ratios.iter_mut().enumerate() {
        let mut d = Point3::zeros();
        d[axis] = probe_radius;
        let plus = pressure_at(arrays, trap + d)?.magnitude;
        let minus = pressure_at(arrays, trap - d)?.magnitude;
        let mean = 0.5 * (plus + minus);
        *ratio = if center > 0.0 { mean / center } else { f64::INFINITY };
    }
    Ok(StabilityReport {
        stable: ratios.iter().all(|r| *r >= threshold),
        ratios,
        center_magnitude: center,
        threshold,
    })
}

/// Geometry file for one array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArraySpec {
    pub side: usize,
    pub pitch: f64,
    pub position: [f64; 3],
    pub normal: [f64; 3],
    pub frequency: f64,
    pub speed_of_sound: f64,
    pub amplitude: f64,
    /// Focus the array here instead of driving it with uniform phase.
    pub focus: Option<[f64; 3]>,
    /// Explicit phase per transducer, row-major; overrides `focus`.
    pub phases: Option<Vec<f64>>,
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self {
            side: GRID_SIDE,
            pitch: DEFAULT_PITCH,
            position: [0.0; 3],
            normal: [0.0, 0.0, 1.0],
            frequency: DEFAULT_FREQUENCY,
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            amplitude: 1.0,
            focus: None,
            phases: None,
        }
    }
}

impl ArraySpec {
    pub fn build(&self) -> Result<PhasedArray, AcousticsError> {
        if self.speed_of_sound <= 0.0 || self.amplitude < 0.0 {
            return Err(AcousticsError::InvalidArray("speed_of_sound and amplitude must be positive".into()));
        }
        let mut a = PhasedArray::grid(
            self.side,
            self.pitch,
            Point3::from(self.position),
            Point3::from(self.normal),
            self.frequency,
        )?
        .with_speed_of_sound(self.speed_of_sound);
        a.set_amplitudes(self.amplitude);
        if let Some(phases) = &self.phases {
            if phases.len() != a.len() {
                return Err(AcousticsError::InvalidArray(format!(
                    "{} phases for {} transducers",
                    phases.len(),
                    a.len()
                )));
            }
            a.set_phases(phases);
        } else if let Some(f) = self.focus {
            let phases = focus_phases(&a, Point3::from(f));
            a.set_phases(&phases);
        }
        Ok(a)
    }
}

/// One or more arrays sharing a field, as read from an array file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayFile {
    pub arrays: Vec<ArraySpec>,
}

impl ArrayFile {
    pub fn build(&self) -> Result<Vec<PhasedArray>, AcousticsError> {
        self.arrays.iter().map(ArraySpec::build).collect()
    }
}

/// Two arrays facing each other along +x, `separation` apart, centred on
/// `center`.
pub fn facing_pair(center: Point3, separation: f64) -> (PhasedArray, PhasedArray) {
    let half = Point3::new(separation / 2.0, 0.0, 0.0);
    (
        PhasedArray::standard(center - half, Point3::x()),
        PhasedArray::standard(center + half, -Point3::x()),
    )
}

pub fn half_wavelength(frequency: f64, speed_of_sound: f64) -> f64 {
    speed_of_sound / (2.0 * frequency)
}

/// Phase of a wave that has travelled `r` metres, wrapped into [0, 2π).
pub fn propagation_phase(k: f64, r: f64) -> f64 {
    (k * r).rem_euclid(2.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(position: Point3, phase: f64) -> PhasedArray {
        let mut a = PhasedArray::grid(1, 0.01, position, Point3::z(), DEFAULT_FREQUENCY).unwrap();
        a.set_phases(&[phase]);
        a
    }

    #[test]
    fn single_source_normalization() {
        let a = single(Point3::zeros(), 0.0);
        let f = pressure_at(&[a], Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((f.magnitude - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constructive_and_destructive() {
        let p = Point3::new(0.0, 0.0, 1.0);
        let a = single(Point3::zeros(), 0.3);
        let b = single(Point3::new(0.0, 0.0, 2.0), 0.3);
        assert!((pressure_at(&[a.clone(), b], p).unwrap().magnitude - 2.0).abs() < 1e-12);
        let c = single(Point3::new(0.0, 0.0, 2.0), 0.3 + PI);
        assert!(pressure_at(&[a, c], p).unwrap().magnitude <= 1e-12);
    }

    #[test]
    fn degenerate_point() {
        let a = PhasedArray::standard(Point3::zeros(), Point3::z());
        let on_source = a.world_positions()[5];
        assert!(matches!(
            pressure_at(&[a], on_source),
            Err(AcousticsError::DegeneratePoint { .. })
        ));
    }

    #[test]
    fn grid_layout() {
        let a = PhasedArray::standard(Point3::new(1.0, 2.0, 3.0), Point3::new(0.0, 0.0, 2.0));
        assert_eq!(a.len(), 64);
        let centroid = a.world_positions().iter().sum::<Point3>() / 64.0;
        assert!((centroid - Point3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        for p in a.world_positions() {
            assert!((p.z - 3.0).abs() < 1e-15);
        }
        assert!((a.wavelength() - 343.0 / 40_000.0).abs() < 1e-15);
    }

    #[test]
    fn focusing_reaches_coherent_sum() {
        let mut a = PhasedArray::standard(Point3::zeros(), Point3::z());
        let focal = Point3::new(0.01, -0.02, 0.08);
        let phases = focus_phases(&a, focal);
        a.set_phases(&phases);
        let got = pressure_at(&[a.clone()], focal).unwrap().magnitude;
        let want = coherent_sum(&a, focal);
        assert!(((got - want) / want).abs() < 1e-9);
    }

    #[test]
    fn on_axis_focus_has_grid_symmetry() {
        let a = PhasedArray::standard(Point3::zeros(), Point3::z());
        let phases = focus_phases(&a, Point3::new(0.0, 0.0, 0.1));
        let at = |i: usize, j: usize| phases[i * 8 + j];
        for i in 0..8 {
            for j in 0..8 {
                // rotation by 90 degrees and both mirrors
                assert!((at(i, j) - at(j, 7 - i)).abs() < 1e-9);
                assert!((at(i, j) - at(7 - i, j)).abs() < 1e-9);
                assert!((at(i, j) - at(i, 7 - j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn focus_beats_distant_lattice_points() {
        let mut a = PhasedArray::standard(Point3::zeros(), Point3::z());
        let focal = Point3::new(0.0, 0.0, 0.06);
        let phases = focus_phases(&a, focal);
        a.set_phases(&phases);
        let arrays = [a.clone()];
        let peak = pressure_at(&arrays, focal).unwrap().magnitude;
        let lambda = a.wavelength();
        let mut checked = 0;
        for i in 0..21 {
            for j in 0..21 {
                for l in 0..21 {
                    let p = Point3::new(
                        -0.05 + 0.005 * i as f64,
                        -0.05 + 0.005 * j as f64,
                        0.01 + 0.005 * l as f64,
                    );
                    if (p - focal).norm() < 2.0 * lambda {
                        continue;
                    }
                    checked += 1;
                    assert!(pressure_at(&arrays, p).unwrap().magnitude <= peak);
                }
            }
        }
        assert!(checked > 9000);
    }

    #[test]
    fn random_phases_never_beat_focus() {
        let mut a = PhasedArray::standard(Point3::zeros(), Point3::z());
        let focal = Point3::new(0.0, 0.01, 0.05);
        let focused = focus_phases(&a, focal);
        a.set_phases(&focused);
        let peak = pressure_at(&[a.clone()], focal).unwrap().magnitude;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let perturbed: Vec<f64> = focused.iter().map(|p| p + rng.random_range(-0.5..0.5)).collect();
            a.set_phases(&perturbed);
            assert!(pressure_at(&[a.clone()], focal).unwrap().magnitude <= peak + 1e-12);
        }
    }

    #[test]
    fn line_scan_peaks_at_focus_and_includes_endpoints() {
        let mut a = PhasedArray::standard(Point3::zeros(), Point3::z());
        let focal = Point3::new(0.0, 0.0, 0.08);
        let phases = focus_phases(&a, focal);
        a.set_phases(&phases);
        let start = Point3::new(-0.04, 0.0, 0.08);
        let end = Point3::new(0.04, 0.0, 0.08);
        let scan = line_scan(&[a.clone()], start, end, 81).unwrap();
        let best = scan
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.magnitude.total_cmp(&y.1.magnitude))
            .unwrap()
            .0;
        assert_eq!(best, 40);
        let two = line_scan(&[a.clone()], start, end, 2).unwrap();
        assert_eq!(two[0].point, start);
        assert_eq!(two[1].point, end);
        assert!(matches!(line_scan(&[a], start, end, 1), Err(AcousticsError::TooFewSamples(1))));
    }

    #[test]
    fn symmetric_scan_is_palindromic() {
        let a = PhasedArray::standard(Point3::zeros(), Point3::z());
        let scan = line_scan(&[a], Point3::new(-0.05, 0.0, 0.05), Point3::new(0.05, 0.0, 0.05), 101).unwrap();
        for i in 0..scan.len() {
            let j = scan.len() - 1 - i;
            assert!((scan[i].magnitude - scan[j].magnitude).abs() <= 1e-9 * scan[i].magnitude.max(1.0));
        }
    }

    #[test]
    fn misaligned_pair_is_rejected() {
        let a = PhasedArray::standard(Point3::zeros(), Point3::x());
        let b = PhasedArray::standard(Point3::new(0.1, 0.0, 0.0), Point3::new(-(0.1f64.cos()), 0.1f64.sin(), 0.0));
        let err = standing_wave_nodes(&a, &b, Point3::new(0.02, 0.0, 0.0), Point3::new(0.08, 0.0, 0.0), NodeSearch::default())
            .unwrap_err();
        assert!(matches!(err, AcousticsError::Alignment(_)));
    }

    #[test]
    fn node_spacing_converges_to_half_wavelength_with_separation() {
        let half = half_wavelength(DEFAULT_FREQUENCY, DEFAULT_SPEED_OF_SOUND);
        let mut prev = f64::INFINITY;
        for sep in [0.1, 0.4, 1.0, 4.0] {
            let (a, b) = facing_pair(Point3::zeros(), sep);
            let span = Point3::new(4.0 * half, 0.0, 0.0);
            let nodes = standing_wave_nodes(&a, &b, -span, span, NodeSearch::default()).unwrap();
            assert!(nodes.len() >= 5, "separation {sep}: {} nodes", nodes.len());
            let worst = nodes
                .windows(2)
                .map(|w| (w[1] - w[0] - half).abs())
                .fold(0.0, f64::max);
            assert!(worst < prev, "separation {sep}: error {worst} not below {prev}");
            prev = worst;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn node_is_confining_and_uniform_field_is_not() {
        let (a, b) = facing_pair(Point3::zeros(), 0.1);
        let half = half_wavelength(DEFAULT_FREQUENCY, DEFAULT_SPEED_OF_SOUND);
        let nodes = standing_wave_nodes(
            &a,
            &b,
            Point3::new(-half, 0.0, 0.0),
            Point3::new(half, 0.0, 0.0),
            NodeSearch::default(),
        )
        .unwrap();
        let node = Point3::new(-half + nodes[0], 0.0, 0.0);
        let report = trap_stability(&[a, b], node, half / 4.0, DEFAULT_STABILITY_THRESHOLD).unwrap();
        assert!(report.ratios[0] > DEFAULT_STABILITY_THRESHOLD, "{report:?}");

        let far = single(Point3::new(0.0, 0.0, -5.0), 0.0);
        let report = trap_stability(&[far.clone()], Point3::zeros(), 0.001, DEFAULT_STABILITY_THRESHOLD).unwrap();
        assert!(!report.stable);
        for r in report.ratios {
            assert!((r - 1.0).abs() < 1e-3);
        }
        let tiny = trap_stability(&[far], Point3::zeros(), 1e-7, DEFAULT_STABILITY_THRESHOLD).unwrap();
        for r in tiny.ratios {
            assert!((r - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn array_file_round_trip() {
        let file: ArrayFile = serde_json::from_str(
            r#"{"arrays":[{"position":[0,0,0],"normal":[0,0,1],"focus":[0,0,0.05]},{"side":2,"phases":[0,1,2,7]}]}"#,
        )
        .unwrap();
        let arrays = file.build().unwrap();
        assert_eq!(arrays[0].len(), 64);
        assert_eq!(arrays[1].len(), 4);
        assert!((arrays[1].phases()[3] - (7.0 - TAU)).abs() < 1e-12);
        let bad: ArrayFile = serde_json::from_str(r#"{"arrays":[{"side":2,"phases":[0]}]}"#).unwrap();
        assert!(bad.build().is_err());
    }

    fn probe() -> impl Strategy<Value = Point3> {
        (-0.05f64..0.05, -0.05f64..0.05, 0.01f64..0.1).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn field_is_linear(p in probe(), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut a = PhasedArray::standard(Point3::zeros(), Point3::z());
            let mut b = PhasedArray::standard(Point3::new(0.0, 0.0, 0.12), -Point3::z());
            a.set_phases(&(0..64).map(|_| rng.random_range(0.0..TAU)).collect::<Vec<_>>());
            b.set_phases(&(0..64).map(|_| rng.random_range(0.0..TAU)).collect::<Vec<_>>());
            let both = pressure_at(&[a.clone(), b.clone()], p).unwrap().pressure;
            let sum = pressure_at(&[a], p).unwrap().pressure + pressure_at(&[b], p).unwrap().pressure;
            prop_assert!((both - sum).norm() <= 1e-12);
        }

        #[test]
        fn global_phase_and_amplitude_scaling(p in probe(), shift in 0.0f64..TAU, s in 0.1f64..10.0) {
            let mut a = PhasedArray::standard(Point3::zeros(), Point3::z());
            let phases = focus_phases(&a, Point3::new(0.0, 0.0, 0.05));
            a.set_phases(&phases);
            let base = pressure_at(&[a.clone()], p).unwrap().magnitude;
            let mut shifted = a.clone();
            shifted.set_phases(&phases.iter().map(|x| x + shift).collect::<Vec<_>>());
            let m = pressure_at(&[shifted], p).unwrap().magnitude;
            prop_assert!((m - base).abs() <= 1e-12 * base.max(1.0));
            let mut scaled = a;
            scaled.set_amplitudes(s);
            let m = pressure_at(&[scaled], p).unwrap().magnitude;
            prop_assert!((m - s * base).abs() <= 1e-12 * (s * base).max(1.0));
        }
    }
}
