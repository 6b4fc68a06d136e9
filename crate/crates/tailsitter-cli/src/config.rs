//! JSON run configuration. Angles are given in degrees and converted here.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tailsitter_codesign::aero::EmulatorConfig;
use tailsitter_codesign::codesign::{Budget, CodesignConfig};
use tailsitter_codesign::control::Gains;
use tailsitter_codesign::geometry::{is_angle, DesignVector, DESIGN_NAMES};
use tailsitter_codesign::trajopt::MissionKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Desk,
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsInput {
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub delta_max_deg: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetInput {
    pub n_doe: Option<usize>,
    pub max_iter: Option<usize>,
    pub k_ei: Option<f64>,
}

impl BudgetInput {
    fn apply(&self, b: &mut Budget) {
        if let Some(v) = self.n_doe {
            b.n_doe = v;
        }
        if let Some(v) = self.max_iter {
            b.max_iter = v;
        }
        if let Some(v) = self.k_ei {
            b.k_ei = v;
        }
    }
}

/// Gains as `[integral, proportional, derivative]` per loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsInput {
    pub position: [f64; 3],
    pub attitude: [f64; 3],
}

/// Everything a run can be configured with. Unset fields take the defaults
/// of the chosen scale.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub scale: Scale,
    /// Design values overriding the baseline; twists in degrees.
    #[serde(default)]
    pub design: BTreeMap<String, f64>,
    pub free: Option<Vec<String>>,
    /// Search box per free variable; twists in degrees.
    pub bounds: Option<BTreeMap<String, [f64; 2]>>,
    pub missions: Option<Vec<String>>,
    pub emulator: Option<EmulatorConfig>,
    pub episodes: Option<usize>,
    pub fcp_episodes: Option<usize>,
    #[serde(default)]
    pub cdp: BudgetInput,
    #[serde(default)]
    pub fcp: BudgetInput,
    pub include_baseline: Option<bool>,
    pub use_surrogate: Option<bool>,
    pub ocp_max_iter: Option<usize>,
    #[serde(default)]
    pub limits: LimitsInput,
    /// Gains flown by `simulate`; hand-tuned gains when absent.
    pub gains: Option<GainsInput>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn to_internal(name: &str, v: f64) -> f64 {
    if is_angle(name) {
        v.to_radians()
    } else {
        v
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn design(&self) -> Result<DesignVector, ConfigError> {
        let mut d = DesignVector::baseline();
        for (name, v) in &self.design {
            d.set(name, to_internal(name, *v)).map_err(|e| ConfigError(e.to_string()))?;
        }
        d.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(d)
    }

    pub fn gains(&self) -> Gains {
        self.gains.map_or_else(Gains::hand, |g| Gains { kp: g.position, kq: g.attitude })
    }

    /// The library configuration with `seed` as master seed.
    pub fn codesign(&self, seed: u64) -> Result<CodesignConfig, ConfigError> {
        let mut c = match self.scale {
            Scale::Desk => CodesignConfig::desk(),
            Scale::Full => CodesignConfig::full(),
        };
        c.seed = seed;
        c.baseline = self.design()?;
        if let Some(f) = &self.free {
            c.free = f.clone();
        }
        if let Some(b) = &self.bounds {
            let mut v = Vec::with_capacity(c.free.len());
            for name in &c.free {
                let [lo, hi] = b.get(name).copied().unwrap_or_else(|| {
                    let i = DESIGN_NAMES.iter().position(|n| n == name).unwrap_or(0);
                    let (lo, hi) = DesignVector::bounds()[i];
                    if is_angle(name) {
                        [lo.to_degrees(), hi.to_degrees()]
                    } else {
                        [lo, hi]
                    }
                });
                v.push((to_internal(name, lo), to_internal(name, hi)));
            }
            if let Some(extra) = b.keys().find(|k| !c.free.contains(k)) {
                return Err(ConfigError(format!("bounds given for `{extra}`, which is not free")));
            }
            c.bounds = Some(v);
        }
        if let Some(m) = &self.missions {
            c.missions = m.iter().map(|s| s.parse::<MissionKind>().map_err(|e| ConfigError(e.to_string()))).collect::<Result<_, _>>()?;
        }
        if let Some(e) = self.emulator {
            c.emulator = e;
        }
        if let Some(n) = self.episodes {
            c.episodes = n;
        }
        if let Some(n) = self.fcp_episodes {
            c.fcp_episodes = n;
        }
        self.cdp.apply(&mut c.cdp);
        self.fcp.apply(&mut c.fcp);
        if let Some(b) = self.include_baseline {
            c.include_baseline = b;
        }
        if let Some(b) = self.use_surrogate {
            c.use_surrogate = b;
        }
        if let Some(n) = self.ocp_max_iter {
            c.ocp.max_iter = n;
        }
        if let Some(v) = self.limits.t_min {
            c.limits.t_min = v;
        }
        if let Some(v) = self.limits.t_max {
            c.limits.t_max = v;
        }
        if let Some(v) = self.limits.delta_max_deg {
            c.limits.delta_max = v.to_radians();
        }
        if !(c.limits.t_min >= 0.0 && c.limits.t_max > c.limits.t_min && c.limits.delta_max > 0.0) {
            return Err(ConfigError("actuator limits must satisfy 0 <= t_min < t_max and delta_max > 0".into()));
        }
        c.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twists_arrive_in_degrees() {
        let c: RunConfig = serde_json::from_str(r#"{"design": {"gamma_tip": -5.0, "c_sym": 0.5}}"#).unwrap();
        let d = c.design().unwrap();
        assert!((d.gamma_tip - (-5f64).to_radians()).abs() < 1e-15);
        assert_eq!(d.c_sym, 0.5);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 3}"#).is_err());
    }

    #[test]
    fn bounds_follow_free_order() {
        let c: RunConfig = serde_json::from_str(r#"{"free": ["f_con", "gamma_fus"], "bounds": {"gamma_fus": [-2.0, 2.0]}}"#).unwrap();
        let cd = c.codesign(1).unwrap();
        let b = cd.bounds.unwrap();
        assert_eq!(b[0], (0.5, 0.75));
        assert!((b[1].1 - 2f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn out_of_bounds_design_names_the_field() {
        let c: RunConfig = serde_json::from_str(r#"{"design": {"c_sym": 1.5}}"#).unwrap();
        assert!(c.design().unwrap_err().0.contains("c_sym"));
    }
}
