//! Synthetic roadside scenarios: a slow receiver vehicle on a far lane, blocker vehicles
//! crossing between it and the RSU, rendered into camera/GPS/LiDAR/radar payloads and
//! labelled by a 2.5D line-of-sight test.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex32;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::ImageFrame;
use crate::data::{seeded_rng, FrameRecord};
use crate::error::{Error, Result};
use crate::gps;
use crate::lidar::PointCloud;
use crate::radar::{RadarCube, CHANNELS, DOPPLER_BINS, DOPPLER_CENTER, RANGE_BINS};

/// Reference origin of the emitted GPS coordinates.
pub const GPS_ORIGIN: (f64, f64) = (42.0347, -93.6199);
/// Carrier wavelength used for the radar range phase.
const RADAR_WAVELENGTH_M: f64 = 0.0039;

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub rng_seed: u64,
    pub duration_steps: usize,
    pub step_ms: i64,
    /// Lateral offset of the receiver lane from the RSU.
    pub receiver_lane_y: f64,
    pub receiver_x_range: [f64; 2],
    pub receiver_speed_range: [f64; 2],
    /// Receiver vehicle length, width, height.
    pub receiver_size: [f64; 3],
    pub blocker_lane_y: f64,
    /// Blockers are placed uniformly within this distance of the blocker lane center.
    pub blocker_lane_jitter: f64,
    pub blocker_count: usize,
    pub blocker_length_range: [f64; 2],
    pub blocker_width_range: [f64; 2],
    pub blocker_height_range: [f64; 2],
    pub blocker_speed_range: [f64; 2],
    /// Blockers spawn in and wrap around this x interval.
    pub blocker_x_range: [f64; 2],
    pub rsu_antenna_height: f64,
    pub receiver_antenna_height: f64,
    pub lidar_sigma: f64,
    pub lidar_ground_points: usize,
    /// Points per square meter of box surface.
    pub lidar_face_density: f64,
    pub gps_sigma: f64,
    /// Per-sample SNR of a unit return; `inf` disables noise.
    pub radar_snr_db: f64,
    pub radar_range_resolution: f64,
    pub radar_velocity_resolution: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub camera_hfov_deg: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            duration_steps: 110,
            step_ms: 300,
            receiver_lane_y: 20.0,
            receiver_x_range: [-10.0, 10.0],
            receiver_speed_range: [0.0, 1.5],
            receiver_size: [4.5, 1.8, 1.5],
            blocker_lane_y: 10.0,
            blocker_lane_jitter: 1.0,
            blocker_count: 3,
            blocker_length_range: [4.0, 12.0],
            blocker_width_range: [1.8, 2.6],
            blocker_height_range: [1.5, 4.0],
            blocker_speed_range: [4.0, 12.0],
            blocker_x_range: [-40.0, 40.0],
            rsu_antenna_height: 3.0,
            receiver_antenna_height: 1.5,
            lidar_sigma: 0.02,
            lidar_ground_points: 1500,
            lidar_face_density: 3.0,
            gps_sigma: 0.1,
            radar_snr_db: 20.0,
            radar_range_resolution: 0.5,
            radar_velocity_resolution: 0.4,
            image_width: 64,
            image_height: 64,
            camera_hfov_deg: 120.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.step_ms <= 0 {
            return bad(format!("step_ms must be positive, got {}", self.step_ms));
        }
        let ranges = [
            ("receiver_x_range", self.receiver_x_range),
            ("receiver_speed_range", self.receiver_speed_range),
            ("blocker_length_range", self.blocker_length_range),
            ("blocker_width_range", self.blocker_width_range),
            ("blocker_height_range", self.blocker_height_range),
            ("blocker_speed_range", self.blocker_speed_range),
            ("blocker_x_range", self.blocker_x_range),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} [{lo}, {hi}] is not an ordered finite interval"));
            }
        }
        for (name, [lo, _]) in &ranges[1..6] {
            if *lo < 0.0 {
                return bad(format!("{name} must be non-negative"));
            }
        }
        for (name, [lo, _]) in &ranges[2..5] {
            if *lo <= 0.0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let positive = [
            ("radar_range_resolution", self.radar_range_resolution),
            ("radar_velocity_resolution", self.radar_velocity_resolution),
            ("camera_hfov_deg", self.camera_hfov_deg),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.camera_hfov_deg >= 170.0 {
            return bad("camera_hfov_deg must be below 170".into());
        }
        if self.receiver_size.iter().any(|v| !(*v > 0.0)) {
            return bad("receiver_size entries must be positive".into());
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image dimensions must be positive".into());
        }
        for (name, v) in [
            ("lidar_sigma", self.lidar_sigma),
            ("gps_sigma", self.gps_sigma),
            ("lidar_face_density", self.lidar_face_density),
            ("blocker_lane_jitter", self.blocker_lane_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if self.radar_snr_db.is_nan() {
            return bad("radar_snr_db is NaN".into());
        }
        Ok(())
    }

    pub fn step_seconds(&self) -> f64 {
        self.step_ms as f64 / 1000.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReceiverPose {
    pub x: f64,
    pub y: f64,
    /// Radians from +x.
    pub heading: f64,
    pub speed: f64,
}

/// Axis-aligned box standing on the ground.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blocker {
    pub center: [f64; 2],
    /// Extent along x (length) and y (width).
    pub extent: [f64; 2],
    pub height: f64,
    pub velocity: [f64; 2],
}

impl Blocker {
    fn footprint(&self) -> [f64; 4] {
        [
            self.center[0] - self.extent[0] / 2.0,
            self.center[0] + self.extent[0] / 2.0,
            self.center[1] - self.extent[1] / 2.0,
            self.center[1] + self.extent[1] / 2.0,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub step: usize,
    pub receiver: ReceiverPose,
    pub blockers: Vec<Blocker>,
    pub rsu_antenna_height: f64,
    pub receiver_antenna_height: f64,
}

/// Parameter interval `[t0, t1]` over which the segment `a -> b` lies inside the
/// closed rectangle `[xmin, xmax, ymin, ymax]`, if any.
pub fn segment_rect_overlap(a: [f64; 2], b: [f64; 2], rect: [f64; 4]) -> Option<(f64, f64)> {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [
        (-dx, a[0] - rect[0]),
        (dx, rect[1] - a[0]),
        (-dy, a[1] - rect[2]),
        (dy, rect[3] - a[1]),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else if p < 0.0 {
            t0 = t0.max(q / p);
        } else {
            t1 = t1.min(q / p);
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// 1 when some blocker footprint crosses the RSU-receiver segment and rises above the
/// straight antenna-to-antenna line somewhere over the crossing.
pub fn occlusion_label(state: &WorldState) -> u8 {
    let rx = [state.receiver.x, state.receiver.y];
    let (h0, h1) = (state.rsu_antenna_height, state.receiver_antenna_height);
    let blocked = state.blockers.iter().any(|b| {
        segment_rect_overlap([0.0, 0.0], rx, b.footprint()).is_some_and(|(t0, t1)| {
            let los = |t: f64| h0 + t * (h1 - h0);
            b.height > los(t0).min(los(t1))
        })
    });
    blocked as u8
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// A simulated sequence of world states with their labels.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub states: Vec<WorldState>,
    pub labels: Vec<u8>,
}

/// Evolves the world for `duration_steps` steps. States and labels depend only on the
/// configuration, including its seed.
pub fn simulate(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    if config.duration_steps == 0 {
        return Err(Error::EmptyScenario);
    }
    let mut rng = seeded_rng(config.rng_seed, 1);
    let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut receiver = ReceiverPose {
        x: uniform(&mut rng, config.receiver_x_range),
        y: config.receiver_lane_y,
        heading: if dir > 0.0 { 0.0 } else { PI },
        speed: uniform(&mut rng, config.receiver_speed_range),
    };
    let mut blockers: Vec<Blocker> = (0..config.blocker_count)
        .map(|_| {
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let jitter = config.blocker_lane_jitter;
            Blocker {
                center: [
                    uniform(&mut rng, config.blocker_x_range),
                    config.blocker_lane_y + uniform(&mut rng, [-jitter, jitter]),
                ],
                extent: [
                    uniform(&mut rng, config.blocker_length_range),
                    uniform(&mut rng, config.blocker_width_range),
                ],
                height: uniform(&mut rng, config.blocker_height_range),
                velocity: [dir * uniform(&mut rng, config.blocker_speed_range), 0.0],
            }
        })
        .collect();

    let dt = config.step_seconds();
    let [rx_lo, rx_hi] = config.receiver_x_range;
    let [bx_lo, bx_hi] = config.blocker_x_range;
    let mut states = Vec::with_capacity(config.duration_steps);
    for step in 0..config.duration_steps {
        states.push(WorldState {
            step,
            receiver,
            blockers: blockers.clone(),
            rsu_antenna_height: config.rsu_antenna_height,
            receiver_antenna_height: config.receiver_antenna_height,
        });
        let mut x = receiver.x + receiver.heading.cos() * receiver.speed * dt;
        if x > rx_hi || x < rx_lo {
            receiver.heading = PI - receiver.heading;
            x = x.clamp(rx_lo, rx_hi);
        }
        receiver.heading = gps::wrap_angle(receiver.heading);
        receiver.x = x;
        for b in &mut blockers {
            b.center[0] += b.velocity[0] * dt;
            b.center[1] += b.velocity[1] * dt;
            let width = bx_hi - bx_lo;
            if width > 0.0 {
                b.center[0] = bx_lo + (b.center[0] - bx_lo).rem_euclid(width);
            }
        }
    }
    let labels = states.iter().map(occlusion_label).collect();
    Ok(Scenario {
        config: config.clone(),
        states,
        labels,
    })
}

/// Boxes visible to the sensors: the receiver vehicle first, then the blockers.
fn scene_boxes(state: &WorldState, config: &ScenarioConfig) -> Vec<Blocker> {
    let [l, w, h] = config.receiver_size;
    let r = state.receiver;
    let mut boxes = vec![Blocker {
        center: [r.x, r.y],
        extent: [l, w],
        height: h,
        velocity: [r.heading.cos() * r.speed, r.heading.sin() * r.speed],
    }];
    boxes.extend_from_slice(&state.blockers);
    boxes
}

/// Sensor payloads of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePayloads {
    pub camera: ImageFrame,
    pub gps: (f64, f64),
    pub lidar: PointCloud,
    pub radar: RadarCube,
}

fn frame_rng(config: &ScenarioConfig, step: usize, sensor: u64) -> ChaCha8Rng {
    seeded_rng(config.rng_seed, 16 + step as u64 * 4 + sensor)
}

pub fn render_gps(state: &WorldState, config: &ScenarioConfig) -> (f64, f64) {
    let mut rng = frame_rng(config, state.step, 0);
    let mut xy = [state.receiver.x, state.receiver.y];
    if config.gps_sigma > 0.0 {
        let n = Normal::new(0.0, config.gps_sigma).expect("sigma validated");
        xy[0] += n.sample(&mut rng);
        xy[1] += n.sample(&mut rng);
    }
    gps::from_local_xy(xy, GPS_ORIGIN.0, GPS_ORIGIN.1)
}

/// Ground samples plus points on the top and side faces of every box, with Gaussian
/// noise, rounded to `f32` precision.
pub fn render_lidar(state: &WorldState, config: &ScenarioConfig) -> PointCloud {
    let mut rng = frame_rng(config, state.step, 1);
    let noise = (config.lidar_sigma > 0.0).then(|| Normal::new(0.0, config.lidar_sigma).expect("sigma validated"));
    let mut points = Vec::new();
    let mut push = |p: [f64; 3], rng: &mut ChaCha8Rng| {
        let p = match &noise {
            Some(n) => p.map(|v| v + n.sample(rng)),
            None => p,
        };
        points.push(p.map(|v| v as f32 as f64));
    };
    for _ in 0..config.lidar_ground_points {
        let p = [rng.random_range(-40.0..40.0), rng.random_range(-5.0..45.0), 0.0];
        push(p, &mut rng);
    }
    for b in scene_boxes(state, config) {
        let [x0, x1, y0, y1] = b.footprint();
        let faces: [(f64, [f64; 2], [f64; 2], [f64; 2]); 5] = [
            ((x1 - x0) * (y1 - y0), [x0, x1], [y0, y1], [b.height, b.height]),
            ((x1 - x0) * b.height, [x0, x1], [y0, y0], [0.0, b.height]),
            ((x1 - x0) * b.height, [x0, x1], [y1, y1], [0.0, b.height]),
            ((y1 - y0) * b.height, [x0, x0], [y0, y1], [0.0, b.height]),
            ((y1 - y0) * b.height, [x1, x1], [y0, y1], [0.0, b.height]),
        ];
        for (area, xs, ys, zs) in faces {
            let n = (area * config.lidar_face_density).round() as usize;
            for _ in 0..n {
                let p = [uniform(&mut rng, xs), uniform(&mut rng, ys), uniform(&mut rng, zs)];
                push(p, &mut rng);
            }
        }
    }
    PointCloud::new(points)
}

/// One slow-time tone per object at its range bin and radial-velocity Doppler bin with a
/// per-channel phase step from its azimuth, plus complex Gaussian noise.
pub fn render_radar(state: &WorldState, config: &ScenarioConfig) -> RadarCube {
    let mut rng = frame_rng(config, state.step, 2);
    let mut cube = RadarCube::zeros();
    let mut acc = vec![num_complex::Complex64::new(0.0, 0.0); RadarCube::LEN];
    for b in scene_boxes(state, config) {
        let [x, y] = b.center;
        let r = x.hypot(y);
        let bin = (r / config.radar_range_resolution).round() as usize;
        if bin >= RANGE_BINS {
            log::debug!("radar: object at {r:.1} m beyond max range, omitted");
            continue;
        }
        let v_radial = if r > 0.0 { (x * b.velocity[0] + y * b.velocity[1]) / r } else { 0.0 };
        let shift = (v_radial / config.radar_velocity_resolution).round() as i64;
        if shift.unsigned_abs() as usize >= DOPPLER_CENTER {
            log::debug!("radar: radial velocity {v_radial:.1} m/s outside Doppler span, omitted");
            continue;
        }
        let azimuth = x.atan2(y);
        let base = 4.0 * PI * r / RADAR_WAVELENGTH_M;
        for c in 0..CHANNELS {
            let phase0 = base + PI * c as f64 * azimuth.sin();
            for n in 0..DOPPLER_BINS {
                let phase = phase0 + 2.0 * PI * shift as f64 * n as f64 / DOPPLER_BINS as f64;
                acc[RadarCube::index(c, bin, n)] += num_complex::Complex64::from_polar(1.0, phase);
            }
        }
    }
    let sigma = 10f64.powf(-config.radar_snr_db / 20.0);
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma finite"));
    for (out, v) in cube.data_mut().iter_mut().zip(acc) {
        let (mut re, mut im) = (v.re, v.im);
        if let Some(n) = &noise {
            re += n.sample(&mut rng);
            im += n.sample(&mut rng);
        }
        *out = Complex32::new(re as f32, im as f32);
    }
    cube
}

/// Pinhole view from the RSU looking along +y: boxes drawn far to near as filled
/// bounding rectangles over a sky/road gradient.
pub fn render_camera(state: &WorldState, config: &ScenarioConfig) -> ImageFrame {
    let (w, h) = (config.image_width, config.image_height);
    let mut img = ImageFrame::filled(w, h, [0, 0, 0]).expect("dimensions validated");
    let cx = w as f64 / 2.0;
    let cy = h as f64 / 2.0;
    let focal = cx / (config.camera_hfov_deg.to_radians() / 2.0).tan();
    let cam_z = config.rsu_antenna_height;
    for y in 0..h {
        let t = y as f64 / h as f64;
        let rgb = if (y as f64) < cy {
            [(150.0 + 80.0 * t) as u8, (190.0 + 50.0 * t) as u8, 235]
        } else {
            let g = (70.0 + 60.0 * t) as u8;
            [g, g, g]
        };
        for x in 0..w {
            img.set_pixel(x, y, rgb);
        }
    }
    let mut boxes: Vec<(usize, Blocker)> = scene_boxes(state, config).into_iter().enumerate().collect();
    boxes.sort_by(|a, b| {
        let d = |b: &Blocker| b.center[0].hypot(b.center[1]);
        d(&b.1).total_cmp(&d(&a.1)).then(a.0.cmp(&b.0))
    });
    for (i, b) in boxes {
        let [x0, x1, y0, y1] = b.footprint();
        if y0 < 0.5 {
            continue;
        }
        let mut u = [f64::INFINITY, f64::NEG_INFINITY];
        let mut v = [f64::INFINITY, f64::NEG_INFINITY];
        for (px, py, pz) in [x0, x1]
            .into_iter()
            .flat_map(|px| [y0, y1].into_iter().flat_map(move |py| [(px, py, 0.0), (px, py, b.height)]))
        {
            let pu = cx + focal * px / py;
            let pv = cy - focal * (pz - cam_z) / py;
            u = [u[0].min(pu), u[1].max(pu)];
            v = [v[0].min(pv), v[1].max(pv)];
        }
        let clip = |lo: f64, hi: f64, n: usize| -> Option<(usize, usize)> {
            let a = lo.round().max(0.0);
            let b = hi.round().min(n as f64);
            (b > a).then(|| (a as usize, b as usize))
        };
        let (Some((ua, ub)), Some((va, vb))) = (clip(u[0], u[1], w), clip(v[0], v[1], h)) else {
            continue;
        };
        let color = if i == 0 {
            [30, 60, 220]
        } else {
            let shade = 150 + ((i * 37) % 100) as u8;
            [shade, 25, 20]
        };
        for py in va..vb {
            for px in ua..ub {
                img.set_pixel(px, py, color);
            }
        }
    }
    img
}

impl Scenario {
    pub fn render(&self, step: usize) -> FramePayloads {
        let state = &self.states[step];
        FramePayloads {
            camera: render_camera(state, &self.config),
            gps: render_gps(state, &self.config),
            lidar: render_lidar(state, &self.config),
            radar: render_radar(state, &self.config),
        }
    }

    /// Renders every frame under `root/frames/<seq_id>/` and returns index rows with
    /// paths relative to `root`.
    pub fn write(&self, root: &Path, seq_id: &str) -> Result<Vec<FrameRecord>> {
        let mut rows = Vec::with_capacity(self.states.len());
        for (step, label) in self.labels.iter().enumerate() {
            let p = self.render(step);
            let rel = |sensor: &str, ext: &str| -> PathBuf {
                PathBuf::from("frames").join(seq_id).join(sensor).join(format!("{step:06}.{ext}"))
            };
            let (cam, gps_path, lidar, radar) =
                (rel("camera", "ppm"), rel("gps", "csv"), rel("lidar", "lpc"), rel("radar", "rdc"));
            p.camera.save(&root.join(&cam))?;
            crate::binfmt::save(&root.join(&gps_path), |w| gps::write_fix(p.gps.0, p.gps.1, w))?;
            p.lidar.save(&root.join(&lidar))?;
            p.radar.save(&root.join(&radar))?;
            rows.push(FrameRecord {
                seq_id: seq_id.to_string(),
                frame_idx: step as u32,
                timestamp_ms: step as i64 * self.config.step_ms,
                camera: Some(cam),
                gps: Some(gps_path),
                lidar: Some(lidar),
                radar: Some(radar),
                label: *label,
            });
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::doppler_fft;

    fn state_with(blockers: Vec<Blocker>, rx: [f64; 2], h: [f64; 2]) -> WorldState {
        WorldState {
            step: 0,
            receiver: ReceiverPose {
                x: rx[0],
                y: rx[1],
                heading: 0.0,
                speed: 0.0,
            },
            blockers,
            rsu_antenna_height: h[0],
            receiver_antenna_height: h[1],
        }
    }

    fn blocker(center: [f64; 2], height: f64) -> Blocker {
        Blocker {
            center,
            extent: [4.0, 2.0],
            height,
            velocity: [0.0, 0.0],
        }
    }

    #[test]
    fn occlusion_examples() {
        let on_mid = state_with(vec![blocker([0.0, 10.0], 3.0)], [0.0, 20.0], [2.0, 2.0]);
        assert_eq!(occlusion_label(&on_mid), 1);
        let low = state_with(vec![blocker([0.0, 10.0], 1.9)], [0.0, 20.0], [2.0, 2.0]);
        assert_eq!(occlusion_label(&low), 0);
        let lateral = state_with(vec![blocker([50.0, 10.0], 3.0)], [0.0, 20.0], [2.0, 2.0]);
        assert_eq!(occlusion_label(&lateral), 0);
    }

    #[test]
    fn crossing_at_a_single_step() {
        // 2 m long blocker moving at 1 step-length per step crosses x=0 only at step 7.
        let labels: Vec<u8> = (0..20)
            .map(|s| {
                let x = -14.0 + 2.0 * s as f64;
                let b = Blocker {
                    extent: [1.0, 2.0],
                    ..blocker([x, 10.0], 4.0)
                };
                occlusion_label(&state_with(vec![b], [0.0, 20.0], [3.0, 1.5]))
            })
            .collect();
        let expected: Vec<u8> = (0..20).map(|s| (s == 7) as u8).collect();
        assert_eq!(labels, expected);
    }

    #[test]
    fn liang_barsky_cases() {
        assert_eq!(segment_rect_overlap([0.0, 0.0], [0.0, 10.0], [-1.0, 1.0, 4.0, 6.0]), Some((0.4, 0.6)));
        assert_eq!(segment_rect_overlap([0.0, 0.0], [0.0, 10.0], [1.0, 2.0, 4.0, 6.0]), None);
        assert_eq!(segment_rect_overlap([0.0, 0.0], [0.0, 10.0], [0.0, 2.0, 4.0, 6.0]), Some((0.4, 0.6)));
        assert_eq!(segment_rect_overlap([0.0, 0.0], [10.0, 10.0], [4.0, 6.0, 4.0, 6.0]), Some((0.4, 0.6)));
    }

    #[test]
    fn no_blockers_means_no_blockage() {
        let cfg = ScenarioConfig {
            blocker_count: 0,
            duration_steps: 30,
            ..Default::default()
        };
        assert!(simulate(&cfg).unwrap().labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn parked_blocker_blocks_everything() {
        let cfg = ScenarioConfig {
            blocker_count: 1,
            duration_steps: 30,
            receiver_x_range: [0.0, 0.0],
            receiver_speed_range: [0.0, 0.0],
            blocker_x_range: [0.0, 0.0],
            blocker_speed_range: [0.0, 0.0],
            blocker_height_range: [4.0, 4.0],
            blocker_lane_jitter: 0.0,
            ..Default::default()
        };
        assert!(simulate(&cfg).unwrap().labels.iter().all(|&l| l == 1));
    }

    #[test]
    fn zero_duration_is_an_error() {
        let cfg = ScenarioConfig {
            duration_steps: 0,
            ..Default::default()
        };
        assert!(matches!(simulate(&cfg), Err(Error::EmptyScenario)));
        let bad = ScenarioConfig {
            blocker_height_range: [3.0, 1.0],
            ..Default::default()
        };
        assert!(matches!(simulate(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = ScenarioConfig {
            rng_seed: 42,
            duration_steps: 12,
            ..Default::default()
        };
        let (a, b) = (simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
        assert_eq!(a.states, b.states);
        assert_eq!(a.render(5), b.render(5));
        let labels: Vec<u8> = a.states.iter().map(occlusion_label).collect();
        assert_eq!(labels, a.labels);
    }

    #[test]
    fn radar_range_bin_and_static_doppler() {
        let cfg = ScenarioConfig {
            radar_snr_db: f64::INFINITY,
            ..Default::default()
        };
        let state = state_with(vec![], [0.0, 30.0], [3.0, 1.5]);
        let cube = render_radar(&state, &cfg);
        let p = doppler_fft(&cube);
        let total: f64 = p.iter().sum();
        let in_bin: f64 = (0..CHANNELS)
            .map(|c| p[RadarCube::index(c, 60, DOPPLER_CENTER)])
            .sum();
        assert!(in_bin > total * (1.0 - 1e-9), "{in_bin} of {total}");
    }

    #[test]
    fn static_world_energy_is_zero_doppler() {
        let cfg = ScenarioConfig {
            radar_snr_db: f64::INFINITY,
            ..Default::default()
        };
        let state = state_with(vec![blocker([3.0, 10.0], 2.0), blocker([-8.0, 11.0], 3.0)], [2.0, 20.0], [3.0, 1.5]);
        let p = doppler_fft(&render_radar(&state, &cfg));
        let total: f64 = p.iter().sum();
        let center: f64 = p.chunks_exact(DOPPLER_BINS).map(|row| row[DOPPLER_CENTER]).sum();
        assert!(center > total * (1.0 - 1e-9));
    }

    #[test]
    fn empty_world_lidar_is_ground_only() {
        let cfg = ScenarioConfig {
            receiver_size: [1e-9, 1e-9, 1e-9],
            ..Default::default()
        };
        let cloud = render_lidar(&state_with(vec![], [0.0, 20.0], [3.0, 1.5]), &cfg);
        assert_eq!(cloud.len(), cfg.lidar_ground_points);
        assert!(cloud.points().iter().all(|p| p[2].abs() < 0.2));
    }

    #[test]
    fn camera_draws_receiver_and_blockers() {
        let cfg = ScenarioConfig::default();
        let img = render_camera(&state_with(vec![blocker([0.0, 10.0], 3.5)], [0.0, 20.0], [3.0, 1.5]), &cfg);
        let center = img.pixel(32, 33);
        assert!(center[0] > 100 && center[1] < 50, "{center:?}");
        let empty = render_camera(&state_with(vec![], [0.0, 20.0], [3.0, 1.5]), &cfg);
        assert_eq!(empty.pixel(32, 34), [30, 60, 220]);
    }
}
