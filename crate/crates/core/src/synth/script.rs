use super::lidar::LidarConfig;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Declarative description of a family of scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneScript {
    pub name: String,
    /// Frames simulated per scene; consecutive frames form pairs.
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default)]
    pub sensor: SensorScript,
    #[serde(default)]
    pub lidar: LidarConfig,
    #[serde(default)]
    pub ground: GroundScript,
    #[serde(default)]
    pub vehicles: VehicleScript,
    #[serde(default)]
    pub props: PropScript,
}

fn default_frames() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorScript {
    pub mount_height: f64,
    /// Ego speed range, m/s.
    pub speed: [f64; 2],
    /// Ego yaw-rate range, rad/s.
    pub yaw_rate: [f64; 2],
    /// Capture interval, seconds.
    pub dt: f64,
}

impl Default for SensorScript {
    fn default() -> Self {
        Self {
            mount_height: 1.8,
            speed: [0.0, 0.0],
            yaw_rate: [0.0, 0.0],
            dt: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundScript {
    /// Rise per meter of the embankments beside the road (0 = flat world).
    pub side_grade: f64,
    /// Lateral distance from the road axis at which the embankments start.
    pub side_offset: f64,
}

impl Default for GroundScript {
    fn default() -> Self {
        Self {
            side_grade: 0.0,
            side_offset: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleScript {
    pub count: usize,
    /// Speed range, m/s.
    pub speed: [f64; 2],
    /// Symmetric yaw-rate bound, rad/s.
    pub yaw_rate: f64,
    pub length: [f64; 2],
    pub width: [f64; 2],
    pub height: [f64; 2],
    /// Longitudinal placement range relative to the ego start, meters.
    pub x_range: [f64; 2],
    /// Lateral lane centers; each vehicle picks one.
    pub lanes: Vec<f64>,
    /// Probability that a vehicle leaves the scene before the last frame.
    pub despawn_probability: f64,
}

impl Default for VehicleScript {
    fn default() -> Self {
        Self {
            count: 0,
            speed: [2.0, 8.0],
            yaw_rate: 0.1,
            length: [3.8, 4.8],
            width: [1.7, 2.0],
            height: [1.4, 1.8],
            x_range: [5.0, 40.0],
            lanes: vec![-5.25, -1.75, 1.75, 5.25],
            despawn_probability: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropScript {
    pub count: usize,
    /// Fraction of props that are spheres; the rest are boxes.
    pub sphere_fraction: f64,
    /// Box edge-length range, meters.
    pub size: [f64; 2],
    pub sphere_radius: [f64; 2],
    pub x_range: [f64; 2],
    /// Range of |y| for placement.
    pub lateral: [f64; 2],
}

impl Default for PropScript {
    fn default() -> Self {
        Self {
            count: 0,
            sphere_fraction: 0.3,
            size: [0.5, 3.0],
            sphere_radius: [0.4, 1.2],
            x_range: [2.0, 45.0],
            lateral: [7.5, 14.0],
        }
    }
}

impl SceneScript {
    pub fn from_toml(text: &str) -> Result<Self> {
        let script: SceneScript = toml::from_str(text).map_err(|e| Error::InvalidScript(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene scripts serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScript(m.to_string()));
        if self.frames < 2 {
            return bad("frames must be >= 2");
        }
        if !(self.sensor.dt > 0.0) {
            return bad("sensor.dt must be > 0");
        }
        if !(self.sensor.mount_height > 0.0) {
            return bad("sensor.mount_height must be > 0");
        }
        for (name, r) in [
            ("sensor.speed", self.sensor.speed),
            ("sensor.yaw_rate", self.sensor.yaw_rate),
            ("vehicles.speed", self.vehicles.speed),
            ("vehicles.length", self.vehicles.length),
            ("vehicles.width", self.vehicles.width),
            ("vehicles.height", self.vehicles.height),
            ("vehicles.x_range", self.vehicles.x_range),
            ("props.size", self.props.size),
            ("props.sphere_radius", self.props.sphere_radius),
            ("props.x_range", self.props.x_range),
            ("props.lateral", self.props.lateral),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::InvalidScript(format!("{name} must be an ordered finite range")));
            }
        }
        if self.vehicles.count > 0 && self.vehicles.lanes.is_empty() {
            return bad("vehicles.lanes must not be empty");
        }
        if !(0.0..=1.0).contains(&self.vehicles.despawn_probability) || !(0.0..=1.0).contains(&self.props.sphere_fraction) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.vehicles.length[0] <= 0.0 || self.vehicles.width[0] <= 0.0 || self.vehicles.height[0] <= 0.0 {
            return bad("vehicle dimensions must be positive");
        }
        if self.props.size[0] <= 0.0 || self.props.sphere_radius[0] <= 0.0 {
            return bad("prop dimensions must be positive");
        }
        if self.ground.side_grade < 0.0 || !self.ground.side_grade.is_finite() {
            return bad("ground.side_grade must be >= 0");
        }
        self.lidar.validate()
    }

    /// Built-in scripts: `source`, `target`, `slope`.
    pub fn preset(name: &str) -> Result<Self> {
        let text = match name {
            "source" => include_str!("../../presets/source.toml"),
            "target" => include_str!("../../presets/target.toml"),
            "slope" => include_str!("../../presets/slope.toml"),
            other => return Err(Error::InvalidScript(format!("unknown preset {other:?}"))),
        };
        Self::from_toml(text)
    }
}
