//! Sample and window types shared across the pipeline.

/// One inertial sample: user (gravity-compensated) acceleration and angular
/// velocity, both 3-vectors in whatever frame the stream currently carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
}

/// One ground-truth pose: position plus unit quaternion (w, x, y, z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub t: f64,
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

/// One training window: J device blocks of L samples with 6 channels each
/// (accel xyz then gyro xyz, global frame), labeled with the mean horizontal
/// velocity over the window.
#[derive(Debug, Clone)]
pub struct DeviceWindow {
    /// `[J][L]` rows of `[ax, ay, az, gx, gy, gz]`.
    pub device_data: Vec<Vec<[f64; 6]>>,
    pub t_start: f64,
    pub duration: f64,
    pub v_label: [f64; 2],
}

impl DeviceWindow {
    pub fn t_end(&self) -> f64 {
        self.t_start + self.duration
    }
}
