use crate::error::Result;
use crate::geom::PointCloud;
use std::fmt::Write as _;
use std::path::Path;

/// ASCII PLY with float coordinates and, for labeled clouds, an int label
/// (-1 for unlabeled points).
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut s = String::new();
    let labels = cloud.labels();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if labels.is_some() {
        s.push_str("property int label\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x as f32, p.y as f32, p.z as f32);
        if let Some(l) = labels {
            let _ = write!(s, " {}", l[i].map_or(-1, i64::from));
        }
        s.push('\n');
    }
    Ok(std::fs::write(path, s)?)
}
