//! Motion scripts: piecewise speed/heading profiles, per-device perturbation
//! specs, events, and the five documented walking-mode presets.

use crate::dataio::WalkingMode;

use super::{Result, SynthError};

/// Piecewise-linear scalar profile; constant extrapolation outside the points.
#[derive(Debug, Clone)]
pub struct PiecewiseLinear {
    pub points: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(SynthError::BadScript { detail: "profile needs at least one point".into() });
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(SynthError::BadScript {
                    detail: format!("profile times must increase: {} then {}", w[0].0, w[1].0),
                });
            }
        }
        Ok(PiecewiseLinear { points })
    }

    pub fn constant(v: f64) -> Self {
        PiecewiseLinear { points: vec![(0.0, v)] }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let p = &self.points;
        if t <= p[0].0 {
            return p[0].1;
        }
        if t >= p[p.len() - 1].0 {
            return p[p.len() - 1].1;
        }
        let i = p.partition_point(|&(pt, _)| pt <= t);
        let (t0, v0) = p[i - 1];
        let (t1, v1) = p[i];
        let w = (t - t0) / (t1 - t0);
        v0 * (1.0 - w) + v1 * w
    }

    fn scale_times(&self, factor: f64) -> Self {
        PiecewiseLinear { points: self.points.iter().map(|&(t, v)| (t * factor, v)).collect() }
    }
}

/// Gait-driven local oscillation: amplitude grows with walking speed so the
/// zero-mean wiggle carries speed information, and the frequency rises with
/// amplitude so double-integrated displacement stays under 1 cm per window.
#[derive(Debug, Clone, Copy)]
pub struct OscillationSpec {
    /// Oscillatory velocity amplitude per unit walking speed, dimensionless.
    /// The emitted acceleration amplitude is roughly gain · speed · 2πf.
    pub gain: f64,
    /// Stride frequency at standstill, Hz.
    pub freq_base: f64,
    /// Frequency increase per unit speed, Hz/(m/s).
    pub freq_slope: f64,
    /// Initial phase, radians; distinct per device.
    pub phase: f64,
}

#[derive(Debug, Clone)]
pub struct DeviceSpec {
    pub name: String,
    pub osc: OscillationSpec,
    /// (time, new oscillation regime), applied in order.
    pub regime_switches: Vec<(f64, OscillationSpec)>,
    pub noise_sigma_a: f64,
    pub noise_sigma_g: f64,
    /// Constant accel bias drawn uniformly from ±this, per axis per sequence.
    pub bias_range_a: f64,
    pub bias_range_g: f64,
    /// Height of the posture-change dip emitted (as vertical acceleration of a
    /// compact bump) at each stop boundary, meters. Zero disables.
    pub posture_amp_m: f64,
}

#[derive(Debug, Clone)]
pub struct MotionScript {
    pub duration: f64,
    /// Walking speed, m/s; clamped at 0 from below.
    pub speed: PiecewiseLinear,
    /// Heading angle, radians.
    pub heading: PiecewiseLinear,
    pub mode: WalkingMode,
    pub devices: Vec<DeviceSpec>,
    /// DRW: (device index, removal time); the removed device keeps logging
    /// bias + noise at rest.
    pub removal: Option<(usize, f64)>,
    /// DLW: zero-speed intervals (start, end) with posture transients at the
    /// boundaries.
    pub stops: Vec<(f64, f64)>,
    /// Emit triple-jump synchronization markers near both ends.
    pub jump_markers: bool,
}

/// Jump-marker geometry shared by the generator and its tests.
pub const JUMP_BUMP_HEIGHT: f64 = 0.15;
pub const JUMP_BUMP_WIDTH: f64 = 0.5;
pub const JUMP_OFFSETS: [f64; 3] = [1.0, 1.6, 2.2];

impl MotionScript {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(SynthError::BadScript { detail });
        if !(self.duration > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if self.devices.is_empty() {
            return bad("at least one device required".into());
        }
        for d in &self.devices {
            if d.noise_sigma_a < 0.0 || d.noise_sigma_g < 0.0 {
                return bad(format!("{}: noise sigma must be >= 0", d.name));
            }
            if d.bias_range_a < 0.0 || d.bias_range_g < 0.0 {
                return bad(format!("{}: bias range must be >= 0", d.name));
            }
            for (t, _) in &d.regime_switches {
                if *t < 0.0 || *t > self.duration {
                    return bad(format!("{}: regime switch at {t} outside [0, duration]", d.name));
                }
            }
        }
        if let Some((idx, t)) = self.removal {
            if idx >= self.devices.len() {
                return bad(format!("removal device index {idx} out of range"));
            }
            if t < 0.0 || t > self.duration {
                return bad(format!("removal time {t} outside [0, duration]"));
            }
        }
        for &(a, b) in &self.stops {
            if a < 0.0 || b > self.duration || b <= a {
                return bad(format!("stop interval ({a}, {b}) invalid"));
            }
        }
        if self.jump_markers && self.duration < 6.0 {
            return bad("jump markers need at least 6 s of recording".into());
        }
        Ok(())
    }

    /// Rescales all times proportionally to a new duration.
    pub fn with_duration(mut self, duration: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(SynthError::BadScript {
                detail: format!("duration must be positive, got {duration}"),
            });
        }
        let f = duration / self.duration;
        self.speed = self.speed.scale_times(f);
        self.heading = self.heading.scale_times(f);
        for d in &mut self.devices {
            for s in &mut d.regime_switches {
                s.0 *= f;
            }
        }
        if let Some((_, t)) = &mut self.removal {
            *t *= f;
        }
        for s in &mut self.stops {
            s.0 *= f;
            s.1 *= f;
        }
        self.duration = duration;
        self.validate()?;
        Ok(self)
    }
}

const SIGMA_A: f64 = 0.05;
const SIGMA_G: f64 = 0.005;
const BIAS_A: f64 = 0.02;
const BIAS_G: f64 = 0.002;

fn device(name: &str, gain: f64, freq: f64, phase: f64) -> DeviceSpec {
    DeviceSpec {
        name: name.to_string(),
        osc: OscillationSpec { gain, freq_base: freq, freq_slope: 0.3, phase },
        regime_switches: Vec::new(),
        noise_sigma_a: SIGMA_A,
        noise_sigma_g: SIGMA_G,
        bias_range_a: BIAS_A,
        bias_range_g: BIAS_G,
        posture_amp_m: 0.0,
    }
}

/// Default wearable set: phone in pocket, watch on the wrist, earbuds on the
/// head. Phases offset so the devices never move in lockstep.
fn default_devices() -> Vec<DeviceSpec> {
    vec![
        device("phone", 0.020, 1.9, 0.0),
        device("watch", 0.028, 1.9, std::f64::consts::FRAC_PI_2),
        device("earbuds", 0.012, 2.0, std::f64::consts::PI),
    ]
}

/// Documented 60-second parameterizations of the five walking modes.
///
/// STW: steady speed, gentle heading drift, low oscillation everywhere.
/// PVW: phone oscillation regime switches at 30% and 65% of the recording.
/// MVW: elevated oscillation on all devices, speed and heading vary strongly.
/// DRW: the watch is removed at half time and rests (bias + noise only).
/// DLW: two zero-speed intervals with posture transients at the boundaries.
pub fn preset(mode: WalkingMode) -> Result<MotionScript> {
    let d = 60.0;
    let steady_speed =
        PiecewiseLinear::new(vec![(0.0, 0.0), (3.0, 1.4), (57.0, 1.4), (60.0, 0.0)])?;
    let drift_heading =
        PiecewiseLinear::new(vec![(0.0, 0.0), (20.0, 0.5), (40.0, 0.2), (60.0, 0.8)])?;
    let script = match mode {
        WalkingMode::STW => MotionScript {
            duration: d,
            speed: steady_speed,
            heading: drift_heading,
            mode,
            devices: default_devices(),
            removal: None,
            stops: Vec::new(),
            jump_markers: true,
        },
        WalkingMode::PVW => {
            let mut devices = default_devices();
            devices[0].regime_switches = vec![
                (0.30 * d, OscillationSpec { gain: 0.040, freq_base: 3.4, freq_slope: 0.3, phase: 0.0 }),
                (0.65 * d, OscillationSpec { gain: 0.022, freq_base: 2.4, freq_slope: 0.3, phase: 0.0 }),
            ];
            MotionScript {
                duration: d,
                speed: steady_speed,
                heading: drift_heading,
                mode,
                devices,
                removal: None,
                stops: Vec::new(),
                jump_markers: true,
            }
        }
        WalkingMode::MVW => MotionScript {
            duration: d,
            speed: PiecewiseLinear::new(vec![
                (0.0, 0.0),
                (2.0, 1.1),
                (12.0, 1.8),
                (25.0, 0.9),
                (40.0, 1.7),
                (58.0, 1.2),
                (60.0, 0.0),
            ])?,
            heading: PiecewiseLinear::new(vec![
                (0.0, 0.0),
                (8.0, 1.2),
                (16.0, 0.4),
                (24.0, 2.0),
                (32.0, 1.1),
                (40.0, 2.6),
                (48.0, 1.9),
                (60.0, 3.0),
            ])?,
            mode,
            devices: vec![
                device("phone", 0.033, 3.4, 0.0),
                device("watch", 0.040, 3.6, std::f64::consts::FRAC_PI_2),
                device("earbuds", 0.020, 2.8, std::f64::consts::PI),
            ],
            removal: None,
            stops: Vec::new(),
            jump_markers: true,
        },
        WalkingMode::DRW => {
            let mut s = preset(WalkingMode::STW)?;
            s.mode = mode;
            s.removal = Some((1, 30.0));
            s
        }
        WalkingMode::DLW => {
            let stops = vec![(19.0, 26.0), (41.0, 46.0)];
            let mut devices = default_devices();
            for dev in &mut devices {
                dev.posture_amp_m = 0.008;
            }
            MotionScript {
                duration: d,
                speed: PiecewiseLinear::new(vec![
                    (0.0, 0.0),
                    (3.0, 1.4),
                    (17.0, 1.4),
                    (19.0, 0.0),
                    (26.0, 0.0),
                    (28.0, 1.4),
                    (39.0, 1.4),
                    (41.0, 0.0),
                    (46.0, 0.0),
                    (48.0, 1.3),
                    (57.0, 1.3),
                    (60.0, 0.0),
                ])?,
                heading: drift_heading,
                mode,
                devices,
                removal: None,
                stops,
                jump_markers: true,
            }
        }
        other => return Err(SynthError::UnknownPreset { mode: other.to_string() }),
    };
    script.validate()?;
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_eval_interpolates_and_clamps() {
        let p = PiecewiseLinear::new(vec![(1.0, 2.0), (3.0, 6.0)]).unwrap();
        assert_eq!(p.eval(0.0), 2.0);
        assert_eq!(p.eval(1.0), 2.0);
        assert_eq!(p.eval(2.0), 4.0);
        assert_eq!(p.eval(3.0), 6.0);
        assert_eq!(p.eval(9.0), 6.0);
    }

    #[test]
    fn stw_has_no_events() {
        let s = preset(WalkingMode::STW).unwrap();
        assert!(s.removal.is_none());
        assert!(s.stops.is_empty());
    }

    #[test]
    fn drw_has_exactly_one_removal() {
        let s = preset(WalkingMode::DRW).unwrap();
        assert!(s.removal.is_some());
    }

    #[test]
    fn dlw_has_zero_speed_intervals() {
        let s = preset(WalkingMode::DLW).unwrap();
        assert!(!s.stops.is_empty());
        for &(a, b) in &s.stops {
            // Speed is exactly zero throughout each stop.
            let mut t = a;
            while t <= b {
                assert_eq!(s.speed.eval(t), 0.0, "speed at {t}");
                t += 0.25;
            }
        }
    }

    #[test]
    fn non_preset_modes_are_refused() {
        assert!(matches!(
            preset(WalkingMode::HD),
            Err(SynthError::UnknownPreset { .. })
        ));
    }

    #[test]
    fn duration_rescaling_moves_events() {
        let s = preset(WalkingMode::DRW).unwrap().with_duration(30.0).unwrap();
        assert_eq!(s.duration, 30.0);
        assert_eq!(s.removal.unwrap().1, 15.0);
        let s2 = preset(WalkingMode::DLW).unwrap().with_duration(120.0).unwrap();
        assert_eq!(s2.stops[0], (38.0, 52.0));
    }

    #[test]
    fn invalid_scripts_are_rejected() {
        let mut s = preset(WalkingMode::STW).unwrap();
        s.removal = Some((9, 10.0));
        assert!(s.validate().is_err());
        let mut s = preset(WalkingMode::STW).unwrap();
        s.devices[0].noise_sigma_a = -0.1;
        assert!(s.validate().is_err());
        let mut s = preset(WalkingMode::STW).unwrap();
        s.duration = 4.0;
        assert!(s.validate().is_err());
    }
}
