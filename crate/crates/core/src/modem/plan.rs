//! Up/down-conversion frequency plan.

use serde::{Deserialize, Serialize};

use super::ModemError;

/// Mixer output taken as the wanted RF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sideband {
    /// `|LO1 − IF1|`
    #[default]
    Difference,
    /// `LO1 + IF1`
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPlan {
    pub if1_hz: f64,
    pub lo1_hz: f64,
    pub lo2_hz: f64,
    pub sideband: Sideband,
    /// Center of the antenna band-pass filter.
    pub target_rf_hz: f64,
}

impl Default for FrequencyPlan {
    fn default() -> Self {
        Self {
            if1_hz: 7e9,
            lo1_hz: 35e9,
            lo2_hz: 26.5e9,
            sideband: Sideband::Difference,
            target_rf_hz: 28e9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedPlan {
    pub rf_hz: f64,
    pub image_hz: f64,
    pub if2_hz: f64,
}

impl FrequencyPlan {
    /// RF, image and second IF without any checks.
    pub fn derive(&self) -> DerivedPlan {
        let diff = (self.lo1_hz - self.if1_hz).abs();
        let sum = self.lo1_hz + self.if1_hz;
        let (rf, image) = match self.sideband {
            Sideband::Difference => (diff, sum),
            Sideband::Sum => (sum, diff),
        };
        DerivedPlan {
            rf_hz: rf,
            image_hz: image,
            if2_hz: rf - self.lo2_hz,
        }
    }
}

/// Derives the plan and checks it against an occupied bandwidth.
pub fn validate_plan(plan: &FrequencyPlan, occupied_bw_hz: f64) -> Result<DerivedPlan, ModemError> {
    let finite = [plan.if1_hz, plan.lo1_hz, plan.lo2_hz, plan.target_rf_hz, occupied_bw_hz]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
    if !finite {
        return Err(ModemError::InvalidParameter {
            field: "frequency_plan",
            reason: "frequencies and bandwidth must be finite and > 0".into(),
        });
    }
    if plan.lo1_hz == plan.if1_hz {
        return Err(ModemError::DegeneratePlan);
    }
    let d = plan.derive();
    if (d.image_hz - plan.target_rf_hz).abs() < occupied_bw_hz {
        return Err(ModemError::ImageInBand {
            image_hz: d.image_hz,
            rf_hz: plan.target_rf_hz,
        });
    }
    if (d.rf_hz - plan.target_rf_hz).abs() > occupied_bw_hz / 2.0 {
        return Err(ModemError::RfOffTarget {
            rf_hz: d.rf_hz,
            target_hz: plan.target_rf_hz,
        });
    }
    if d.if2_hz.abs() <= occupied_bw_hz / 2.0 {
        return Err(ModemError::If2TooLow { if2_hz: d.if2_hz });
    }
    Ok(d)
}
