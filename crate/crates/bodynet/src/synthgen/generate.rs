//! Kinematic core. All motion lives on a 100 Hz master grid: the true
//! velocity is piecewise linear between grid nodes, so the kinematic
//! acceleration is constant inside each cell. Emitting that cell constant as
//! the accelerometer sample at the cell's left node makes naive
//! double integration (p += v h + a h²/2; v += a h) reproduce the truth
//! trajectory exactly, which is what pins the pipeline's conservation and
//! label invariants to 1e-6 instead of to integration error.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataio::{
    save_manifest, write_stream, write_truth, DeviceEntry, ImuSample, PoseSample,
    SequenceManifest,
};

use super::script::{MotionScript, OscillationSpec, JUMP_BUMP_HEIGHT, JUMP_BUMP_WIDTH, JUMP_OFFSETS};
use super::{Result, SynthError};

/// Master sample rate for every synthetic stream and the truth track. Truth
/// shares the grid so that 25 Hz window boundaries land on truth nodes and
/// labels stay exact.
pub const GRID_HZ: f64 = 100.0;

/// Posture-transient bump width at stop boundaries, seconds.
const POSTURE_WIDTH: f64 = 0.4;

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    /// One stream per device, in script order.
    pub streams: Vec<Vec<ImuSample>>,
    pub truth: Vec<PoseSample>,
    pub manifest: SequenceManifest,
}

impl SyntheticSequence {
    /// Writes `<device>.csv` per device, `truth.csv`, and `manifest.toml`
    /// into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| SynthError::Io {
            context: format!("create {}", dir.display()),
            source: e,
        })?;
        for (entry, stream) in self.manifest.devices.iter().zip(&self.streams) {
            write_stream(&dir.join(&entry.path), stream)?;
        }
        write_truth(&dir.join(&self.manifest.truth_path), &self.truth)?;
        save_manifest(&dir.join("manifest.toml"), &self.manifest)?;
        Ok(())
    }
}

/// Vertical velocity of one raised-cosine jump bump, zero outside its span.
/// The bump starts at `start` and returns to the ground `JUMP_BUMP_WIDTH`
/// later, so its velocity integrates to exactly zero.
fn jump_bump_velocity(t: f64, start: f64) -> f64 {
    let x = t - start;
    if x <= 0.0 || x >= JUMP_BUMP_WIDTH {
        return 0.0;
    }
    let w = 2.0 * std::f64::consts::PI / JUMP_BUMP_WIDTH;
    0.5 * JUMP_BUMP_HEIGHT * w * (w * x).sin()
}

fn jump_starts(duration: f64) -> Vec<f64> {
    let mut starts = Vec::with_capacity(6);
    for off in JUMP_OFFSETS {
        starts.push(off);
        starts.push(duration - off - JUMP_BUMP_WIDTH);
    }
    starts
}

/// Vertical velocity of the posture dip centered on a stop boundary: the
/// derivative of a compact raised-cosine dip of depth `amp`. It starts and
/// ends at zero and integrates to zero, so the crouch leaves no residue.
fn posture_velocity(t: f64, boundary: f64, amp: f64) -> f64 {
    let x = t - (boundary - 0.5 * POSTURE_WIDTH);
    if x <= 0.0 || x >= POSTURE_WIDTH {
        return 0.0;
    }
    let w = 2.0 * std::f64::consts::PI / POSTURE_WIDTH;
    -0.5 * amp * w * (w * x).sin()
}

/// Regime switches crossfade over this many seconds. A hard amplitude jump
/// would strand the oscillation's accumulated velocity as a drift; a smooth
/// handover keeps the wiggle zero-mean through the transition.
const REGIME_BLEND: f64 = 2.0;

fn raised_cosine_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * x).cos())
    }
}

/// Effective (gain, freq_base, freq_slope) at time `t`, blending each switch
/// in sequence. The `phase` of switched-in regimes is ignored; phase is
/// accumulated continuously from the base spec.
fn effective_regime(base: &OscillationSpec, switches: &[(f64, OscillationSpec)], t: f64) -> (f64, f64, f64) {
    let (mut g, mut fb, mut fs) = (base.gain, base.freq_base, base.freq_slope);
    for (ts, spec) in switches {
        let s = raised_cosine_step((t - ts) / REGIME_BLEND);
        g += (spec.gain - g) * s;
        fb += (spec.freq_base - fb) * s;
        fs += (spec.freq_slope - fs) * s;
    }
    (g, fb, fs)
}

/// Renders a motion script into per-device IMU streams plus a truth track.
/// Deterministic: the same script and seed give bit-identical output. Random
/// draws happen in a fixed order (per device: six bias draws, then six noise
/// draws per sample in time order), so editing one device's sigma never
/// shifts another device's stream.
pub fn generate(script: &MotionScript, seed: u64) -> Result<SyntheticSequence> {
    script.validate()?;
    let n = (script.duration * GRID_HZ).round() as usize;
    if n < 2 {
        return Err(SynthError::BadScript {
            detail: format!("duration {} too short for the {GRID_HZ} Hz grid", script.duration),
        });
    }
    let h = 1.0 / GRID_HZ;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 / GRID_HZ).collect();

    let jump_t = if script.jump_markers { jump_starts(script.duration) } else { Vec::new() };

    // Node velocities: horizontal from the speed/heading profiles, vertical
    // from the jump markers. Everything downstream derives from these.
    let mut vel = vec![[0.0f64; 3]; n + 1];
    let mut theta = vec![0.0f64; n + 1];
    for k in 0..=n {
        let t = times[k];
        let v = script.speed.eval(t).max(0.0);
        let th = script.heading.eval(t);
        theta[k] = th;
        let vz: f64 = jump_t.iter().map(|&s| jump_bump_velocity(t, s)).sum();
        vel[k] = [v * th.cos(), v * th.sin(), vz];
    }

    // Trapezoid positions are exact for piecewise-linear velocity.
    let mut pos = vec![[0.0f64; 3]; n + 1];
    for k in 0..n {
        for a in 0..3 {
            pos[k + 1][a] = pos[k][a] + 0.5 * (vel[k][a] + vel[k + 1][a]) * h;
        }
    }

    // Cell-constant kinematic acceleration and heading rate, sampled at the
    // cell's left node; the final sample closes with zero.
    let mut acc = vec![[0.0f64; 3]; n + 1];
    let mut dtheta = vec![0.0f64; n + 1];
    for k in 0..n {
        for a in 0..3 {
            acc[k][a] = (vel[k + 1][a] - vel[k][a]) / h;
        }
        dtheta[k] = (theta[k + 1] - theta[k]) / h;
    }

    let truth: Vec<PoseSample> = (0..=n)
        .map(|k| PoseSample { t: times[k], position: pos[k], orientation: [1.0, 0.0, 0.0, 0.0] })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut streams = Vec::with_capacity(script.devices.len());
    let mut boundaries: Vec<f64> = Vec::new();
    for &(a, b) in &script.stops {
        boundaries.push(a);
        boundaries.push(b);
    }

    for (j, dev) in script.devices.iter().enumerate() {
        let mut switches = dev.regime_switches.clone();
        switches.sort_by(|a, b| a.0.total_cmp(&b.0));
        let uniform = |rng: &mut ChaCha8Rng, r: f64| (2.0 * rng.random::<f64>() - 1.0) * r;
        let bias_a = [
            uniform(&mut rng, dev.bias_range_a),
            uniform(&mut rng, dev.bias_range_a),
            uniform(&mut rng, dev.bias_range_a),
        ];
        let bias_g = [
            uniform(&mut rng, dev.bias_range_g),
            uniform(&mut rng, dev.bias_range_g),
            uniform(&mut rng, dev.bias_range_g),
        ];
        let removed_at = match script.removal {
            Some((idx, t)) if idx == j => Some(t),
            _ => None,
        };

        // The gait wiggle lives in velocity space: u_k is the device's
        // oscillatory velocity relative to the body at node k, and the
        // emitted acceleration is its node difference. Whenever the walking
        // speed is zero the wiggle velocity is exactly zero too, so no
        // residual drift survives a stop, a ramp, or a regime change.
        let mut osc_vel = vec![[0.0f64; 3]; n + 1];
        let mut osc_amp = vec![0.0f64; n + 1];
        let mut osc_psi = vec![0.0f64; n + 1];
        let mut psi = dev.osc.phase;
        for k in 0..=n {
            let t = times[k];
            let v = script.speed.eval(t).max(0.0);
            let (gain, freq_base, freq_slope) = effective_regime(&dev.osc, &switches, t);
            let b = gain * v;
            let freq = freq_base + freq_slope * v;
            let th = theta[k];
            let sway = b * (psi.sin() + 0.4 * (2.0 * psi).sin());
            osc_vel[k] = [sway * th.cos(), sway * th.sin(), 0.6 * b * (2.0 * psi + 0.7).sin()];
            if dev.posture_amp_m > 0.0 {
                for &bd in &boundaries {
                    osc_vel[k][2] += posture_velocity(t, bd, dev.posture_amp_m);
                }
            }
            osc_amp[k] = b;
            osc_psi[k] = psi;
            psi += 2.0 * std::f64::consts::PI * freq * h;
        }

        let mut stream = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let t = times[k];
            let mut accel = [0.0f64; 3];
            let mut gyro = [0.0f64; 3];
            let worn = removed_at.map_or(true, |tr| t < tr);
            if worn {
                for a in 0..3 {
                    let osc = if k < n { (osc_vel[k + 1][a] - osc_vel[k][a]) / h } else { 0.0 };
                    accel[a] = acc[k][a] + osc;
                }
                let (swing, ps) = (osc_amp[k], osc_psi[k]);
                gyro[0] = 2.0 * swing * (ps + 0.3).cos();
                gyro[1] = 2.0 * swing * (ps + 1.1).sin();
                gyro[2] = dtheta[k] + 3.0 * swing * ps.cos();
            }
            for a in 0..3 {
                let za: f64 = rng.sample(StandardNormal);
                accel[a] += bias_a[a] + dev.noise_sigma_a * za;
            }
            for a in 0..3 {
                let zg: f64 = rng.sample(StandardNormal);
                gyro[a] += bias_g[a] + dev.noise_sigma_g * zg;
            }
            stream.push(ImuSample { t, accel, gyro });
        }
        streams.push(stream);
    }

    let manifest = SequenceManifest {
        sequence_id: format!("syn-{}-{seed:08x}", script.mode),
        subject_id: "synthetic".to_string(),
        mode: script.mode,
        truth_path: "truth.csv".to_string(),
        truth_rate_hz: GRID_HZ,
        devices: script
            .devices
            .iter()
            .map(|d| DeviceEntry { name: d.name.clone(), path: format!("{}.csv", d.name), rate_hz: GRID_HZ })
            .collect(),
    };

    Ok(SyntheticSequence { streams, truth, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{make_windows, resample, WalkingMode};
    use crate::synthgen::script::{preset, PiecewiseLinear};

    /// Strips every non-kinematic term so a stream carries pure body motion.
    fn kinematic_only(script: &mut MotionScript) {
        for d in &mut script.devices {
            d.noise_sigma_a = 0.0;
            d.noise_sigma_g = 0.0;
            d.bias_range_a = 0.0;
            d.bias_range_g = 0.0;
            d.osc.gain = 0.0;
            for s in &mut d.regime_switches {
                s.1.gain = 0.0;
            }
            d.posture_amp_m = 0.0;
        }
    }

    fn double_integrate(start: [f64; 3], accel: impl Iterator<Item = [f64; 3]>, h: f64) -> Vec<[f64; 3]> {
        let mut p = start;
        let mut v = [0.0f64; 3];
        let mut out = vec![p];
        for a in accel {
            for i in 0..3 {
                p[i] += v[i] * h + 0.5 * a[i] * h * h;
                v[i] += a[i] * h;
            }
            out.push(p);
        }
        out
    }

    #[test]
    fn double_integration_reproduces_truth_over_60s() {
        let mut script = preset(WalkingMode::STW).unwrap();
        kinematic_only(&mut script);
        let seq = generate(&script, 7).unwrap();
        let s = &seq.streams[0];
        let path = double_integrate(
            seq.truth[0].position,
            s[..s.len() - 1].iter().map(|x| x.accel),
            1.0 / GRID_HZ,
        );
        let mut worst = 0.0f64;
        for (p, tr) in path.iter().zip(&seq.truth) {
            for i in 0..3 {
                worst = worst.max((p[i] - tr.position[i]).abs());
            }
        }
        assert!(worst < 1e-6, "double integration drifted {worst} m");
    }

    #[test]
    fn constant_leg_labels_match_closed_form() {
        let script = MotionScript {
            duration: 20.0,
            speed: PiecewiseLinear::constant(1.4),
            heading: PiecewiseLinear::constant(0.3),
            mode: WalkingMode::SYN,
            devices: preset(WalkingMode::STW).unwrap().devices,
            removal: None,
            stops: Vec::new(),
            jump_markers: false,
        };
        let mut script = script;
        kinematic_only(&mut script);
        let seq = generate(&script, 9).unwrap();
        let low: Vec<_> = seq.streams.iter().map(|s| resample(s, 25.0).unwrap()).collect();
        let windows = make_windows(&low, &seq.truth, 100, 25).unwrap();
        assert!(!windows.is_empty());
        let want = [1.4 * 0.3f64.cos(), 1.4 * 0.3f64.sin()];
        for w in &windows {
            for i in 0..2 {
                assert!(
                    (w.v_label[i] - want[i]).abs() < 1e-6,
                    "label {:?} vs {:?}",
                    w.v_label,
                    want
                );
            }
        }
    }

    #[test]
    fn varying_profile_labels_match_independent_trapezoid() {
        let mut script = preset(WalkingMode::MVW).unwrap();
        kinematic_only(&mut script);
        script.jump_markers = false;
        let seq = generate(&script, 11).unwrap();
        // Independent reconstruction of the horizontal trajectory straight
        // from the script profiles.
        let n = (script.duration * GRID_HZ).round() as usize;
        let h = 1.0 / GRID_HZ;
        let mut p = vec![[0.0f64; 2]; n + 1];
        let node = |k: usize| {
            let t = k as f64 / GRID_HZ;
            let v = script.speed.eval(t).max(0.0);
            let th = script.heading.eval(t);
            [v * th.cos(), v * th.sin()]
        };
        for k in 0..n {
            let (a, b) = (node(k), node(k + 1));
            for i in 0..2 {
                p[k + 1][i] = p[k][i] + 0.5 * (a[i] + b[i]) * h;
            }
        }
        let low: Vec<_> = seq.streams.iter().map(|s| resample(s, 25.0).unwrap()).collect();
        let windows = make_windows(&low, &seq.truth, 100, 25).unwrap();
        for w in &windows {
            let a = (w.t_start * GRID_HZ).round() as usize;
            let b = ((w.t_start + w.duration) * GRID_HZ).round() as usize;
            let dt = w.duration;
            for i in 0..2 {
                let want = (p[b][i] - p[a][i]) / dt;
                assert!(
                    (w.v_label[i] - want).abs() < 1e-6,
                    "window at {}: label {:?} vs analytic {}",
                    w.t_start,
                    w.v_label,
                    want
                );
            }
        }
    }

    #[test]
    fn local_terms_displace_less_than_one_centimeter_per_window() {
        for mode in [
            WalkingMode::STW,
            WalkingMode::PVW,
            WalkingMode::MVW,
            WalkingMode::DRW,
            WalkingMode::DLW,
        ] {
            let mut full = preset(mode).unwrap();
            // Removal cuts the oscillation mid-stride, which is a modeled
            // discontinuity rather than part of the gait wiggle; the rest
            // behavior has its own test.
            full.removal = None;
            for d in &mut full.devices {
                d.noise_sigma_a = 0.0;
                d.noise_sigma_g = 0.0;
                d.bias_range_a = 0.0;
                d.bias_range_g = 0.0;
            }
            let mut kin = full.clone();
            kinematic_only(&mut kin);
            let a = generate(&full, 3).unwrap();
            let b = generate(&kin, 3).unwrap();
            let h = 1.0 / GRID_HZ;
            let window_cells = 400; // 4 s of 100 Hz cells
            for (sa, sb) in a.streams.iter().zip(&b.streams) {
                let local = sa.iter().zip(sb).map(|(x, y)| {
                    [
                        x.accel[0] - y.accel[0],
                        x.accel[1] - y.accel[1],
                        x.accel[2] - y.accel[2],
                    ]
                });
                // Integrate once from true rest (the speed ramp starts at 0,
                // so the oscillation's own velocity really is zero there),
                // then measure what each window adds.
                let path = double_integrate([0.0; 3], local, h);
                let mut start = 0;
                while start + window_cells < path.len() {
                    let (p0, p1) = (path[start], path[start + window_cells]);
                    let net = ((p1[0] - p0[0]).powi(2)
                        + (p1[1] - p0[1]).powi(2)
                        + (p1[2] - p0[2]).powi(2))
                    .sqrt();
                    assert!(
                        net < 0.01,
                        "{mode}: local terms displaced {net} m in the window at cell {start}"
                    );
                    start += 100;
                }
            }
        }
    }

    #[test]
    fn same_seed_is_bit_identical_different_seed_is_not() {
        let script = preset(WalkingMode::PVW).unwrap();
        let a = generate(&script, 42).unwrap();
        let b = generate(&script, 42).unwrap();
        assert_eq!(a.streams, b.streams);
        assert_eq!(a.truth, b.truth);
        let c = generate(&script, 43).unwrap();
        assert_ne!(a.streams, c.streams);
    }

    #[test]
    fn removed_device_rests_after_the_event() {
        let mut script = preset(WalkingMode::DRW).unwrap();
        for d in &mut script.devices {
            d.noise_sigma_a = 0.0;
            d.noise_sigma_g = 0.0;
        }
        let seq = generate(&script, 5).unwrap();
        let (idx, t_r) = script.removal.unwrap();
        let rest: Vec<_> = seq.streams[idx].iter().filter(|s| s.t >= t_r).collect();
        assert!(rest.len() > 100);
        for s in &rest {
            assert_eq!(s.accel, rest[0].accel, "resting accel must be the constant bias");
            assert_eq!(s.gyro, rest[0].gyro);
            for a in 0..3 {
                assert!(s.accel[a].abs() <= 0.02 + 1e-12);
            }
        }
        // The other devices keep moving.
        let other = &seq.streams[(idx + 1) % seq.streams.len()];
        let moving: Vec<_> = other.iter().filter(|s| s.t >= t_r && s.t < t_r + 5.0).collect();
        let spread = moving
            .iter()
            .map(|s| s.accel[0])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        assert!(spread.1 - spread.0 > 0.1);
    }

    #[test]
    fn stop_intervals_hold_the_truth_still() {
        let script = preset(WalkingMode::DLW).unwrap();
        let seq = generate(&script, 6).unwrap();
        let (a, b) = script.stops[0];
        let held: Vec<_> = seq.truth.iter().filter(|p| p.t >= a + 0.05 && p.t <= b - 0.05).collect();
        assert!(held.len() > 100);
        for p in &held {
            for i in 0..3 {
                assert!(
                    (p.position[i] - held[0].position[i]).abs() < 1e-12,
                    "truth moved during a stop"
                );
            }
        }
    }

    #[test]
    fn jump_markers_spike_and_return_to_ground() {
        let mut script = preset(WalkingMode::STW).unwrap();
        kinematic_only(&mut script);
        let seq = generate(&script, 8).unwrap();
        let spike = seq.streams[0]
            .iter()
            .filter(|s| s.t < 3.0)
            .map(|s| s.accel[2].abs())
            .fold(0.0f64, f64::max);
        assert!(spike > 8.0, "jump markers too weak to detect: {spike}");
        // After the opening markers the vertical truth settles back to zero.
        for p in seq.truth.iter().filter(|p| p.t > 3.0 && p.t < 55.0) {
            assert!(p.position[2].abs() < 1e-9, "pz {} at t={}", p.position[2], p.t);
        }
    }

    #[test]
    fn save_writes_loadable_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let script = preset(WalkingMode::STW).unwrap().with_duration(8.0).unwrap();
        let seq = generate(&script, 12).unwrap();
        seq.save(dir.path()).unwrap();
        let m = crate::dataio::load_manifest(&dir.path().join("manifest.toml")).unwrap();
        m.verify_files(dir.path()).unwrap();
        assert_eq!(m.devices.len(), 3);
        let back = crate::dataio::load_stream(&dir.path().join(&m.devices[0].path)).unwrap();
        assert_eq!(back.len(), seq.streams[0].len());
        assert_eq!(back[5], seq.streams[0][5]);
    }
}
