//! Decibel helpers.

/// Power ratio in dB to linear.
pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Linear power ratio to dB.
pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * db_to_lin(dbm)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    lin_to_db(watts / 1e-3)
}

/// Amplitude (field/voltage) ratio in dB to linear.
pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn amplitude_to_db(amplitude: f64) -> f64 {
    20.0 * amplitude.log10()
}

/// Wraps an angle in degrees to (-180, 180].
pub fn wrap_deg_180(deg: f64) -> f64 {
    let mut w = deg.rem_euclid(360.0);
    if w > 180.0 {
        w -= 360.0;
    }
    w
}

/// Wraps an angle in degrees to [0, 360).
pub fn wrap_deg_360(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}
