//! Receiver sensitivity and free-space reach.

use serde::{Deserialize, Serialize};

use crate::constants::{BOLTZMANN, SPEED_OF_LIGHT};
use crate::units::lin_to_db;

/// Distance quoted alongside the Friis result for cross-reference, m.
pub const QUOTED_DISTANCE_M: f64 = 9.0;

/// Minimum input signal for a receiver,
/// `10·log₁₀(kT/1 mW) + NF + 10·log₁₀(BW) + SNR − G_ant`, dBm.
pub fn min_required_power(bw_hz: f64, nf_db: f64, required_snr_db: f64, antenna_gain_db: f64, temperature_k: f64) -> f64 {
    lin_to_db(BOLTZMANN * temperature_k / 1e-3) + nf_db + lin_to_db(bw_hz) + required_snr_db - antenna_gain_db
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub tolerable_path_loss_db: f64,
    pub distance_m: f64,
    pub quoted_distance_m: f64,
    pub warning: Option<String>,
}

/// Path loss the link can absorb and the free-space distance it buys.
pub fn max_wireless_distance(eirp_dbm: f64, min_required_dbm: f64, frequency_hz: f64) -> DistanceReport {
    let loss = eirp_dbm - min_required_dbm;
    let (distance, warning) = if loss < 0.0 {
        (0.0, Some(format!("EIRP is {:.1} dB short of the receiver minimum", -loss)))
    } else {
        let d = 10f64.powf(loss / 20.0) * SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * frequency_hz);
        (d, None)
    };
    DistanceReport {
        tolerable_path_loss_db: loss,
        distance_m: distance,
        quoted_distance_m: QUOTED_DISTANCE_M,
        warning,
    }
}
