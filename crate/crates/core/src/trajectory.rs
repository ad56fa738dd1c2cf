//! Time-indexed body poses and the trajectory text format.
//!
//! ```text
//! body <id> mesh=<path> mass=<kg> static=<0|1>
//! dt=<s>
//! t <step> <id> x y z qw qx qy qz
//! ```
//! Mesh paths are resolved relative to the trajectory file's directory.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::geom::{rotmat, BodySpec, Mat3, Quat, TriMesh, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub x: Vec3,
    pub q: Quat,
}

impl Pose {
    pub fn rotation(&self) -> Mat3 {
        rotmat(&self.q)
    }
}

#[derive(Clone, Debug)]
pub struct TrajBody {
    pub spec: BodySpec,
    /// Mesh file reference as written in the trajectory header.
    pub mesh_ref: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub bodies: Vec<TrajBody>,
    pub dt: f64,
    /// `frames[t][body]`.
    pub frames: Vec<Vec<Pose>>,
}

impl Trajectory {
    pub fn num_bodies(&self) -> usize {
        self.bodies.len()
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn specs(&self) -> Vec<BodySpec> {
        self.bodies.iter().map(|b| b.spec.clone()).collect()
    }

    pub fn to_text(&self) -> Result<String> {
        let mut s = String::new();
        for (i, b) in self.bodies.iter().enumerate() {
            let Some(mesh) = &b.mesh_ref else {
                return invalid(format!("body {i} has no mesh file reference"));
            };
            if mesh.contains(char::is_whitespace) {
                return invalid(format!("mesh path {mesh:?} contains whitespace"));
            }
            let _ = writeln!(s, "body {i} mesh={mesh} mass={} static={}", b.spec.mass, u8::from(b.spec.is_static));
        }
        let _ = writeln!(s, "dt={}", self.dt);
        for (t, frame) in self.frames.iter().enumerate() {
            for (i, p) in frame.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "t {t} {i} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
                    p.x.x, p.x.y, p.x.z, p.q.w, p.q.i, p.q.j, p.q.k
                );
            }
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Trajectory> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cache: HashMap<PathBuf, Arc<TriMesh>> = HashMap::new();
        Trajectory::parse(&text, path, &mut |mesh_ref| {
            let full = base.join(mesh_ref);
            if let Some(m) = cache.get(&full) {
                return Ok(m.clone());
            }
            let m = Arc::new(TriMesh::load(&full)?);
            cache.insert(full, m.clone());
            Ok(m)
        })
    }

    /// Parse trajectory text; `load_mesh` resolves each header mesh reference.
    pub fn parse(text: &str, path: &Path, load_mesh: &mut dyn FnMut(&str) -> Result<Arc<TriMesh>>) -> Result<Trajectory> {
        let err = |line: usize, msg: String| Error::Format { path: path.to_path_buf(), line, msg };
        let mut bodies: Vec<TrajBody> = Vec::new();
        let mut dt = None;
        let mut frames: Vec<Vec<Option<Pose>>> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let ln = ln + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(v) = line.strip_prefix("dt=") {
                dt = Some(v.parse::<f64>().map_err(|_| err(ln, format!("bad dt {v:?}")))?);
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            match tok[0] {
                "body" => {
                    if tok.len() != 5 {
                        return Err(err(ln, "body line needs id, mesh, mass, static".into()));
                    }
                    let id: usize = tok[1].parse().map_err(|_| err(ln, "bad body id".into()))?;
                    if id != bodies.len() {
                        return Err(err(ln, format!("body ids must be consecutive from 0, got {id}")));
                    }
                    let field = |t: &str, key: &str| t.strip_prefix(key).map(str::to_string).ok_or_else(|| err(ln, format!("expected {key}")));
                    let mesh_ref = field(tok[2], "mesh=")?;
                    let mass: f64 = field(tok[3], "mass=")?.parse().map_err(|_| err(ln, "bad mass".into()))?;
                    let is_static = match field(tok[4], "static=")?.as_str() {
                        "0" => false,
                        "1" => true,
                        other => return Err(err(ln, format!("bad static flag {other:?}"))),
                    };
                    let mesh = load_mesh(&mesh_ref)?;
                    let spec = BodySpec::from_mesh((*mesh).clone(), mass, is_static)?;
                    bodies.push(TrajBody { spec, mesh_ref: Some(mesh_ref) });
                }
                "t" => {
                    if tok.len() != 10 {
                        return Err(err(ln, "pose line needs step, id and 7 numbers".into()));
                    }
                    let step: usize = tok[1].parse().map_err(|_| err(ln, "bad step".into()))?;
                    let id: usize = tok[2].parse().map_err(|_| err(ln, "bad body id".into()))?;
                    if id >= bodies.len() {
                        return Err(err(ln, format!("pose for undeclared body {id}")));
                    }
                    let mut c = [0.0; 7];
                    for (k, t) in tok[3..].iter().enumerate() {
                        c[k] = t.parse().map_err(|_| err(ln, format!("bad number {t:?}")))?;
                    }
                    if step >= frames.len() {
                        frames.resize(step + 1, vec![None; bodies.len()]);
                    }
                    frames[step][id] = Some(Pose { x: Vec3::new(c[0], c[1], c[2]), q: Quat::new(c[3], c[4], c[5], c[6]) });
                }
                other => return Err(err(ln, format!("unknown line tag {other:?}"))),
            }
        }
        let dt = dt.ok_or_else(|| err(0, "missing dt".into()))?;
        if !(dt > 0.0) {
            return Err(err(0, format!("dt must be positive, got {dt}")));
        }
        if bodies.is_empty() {
            return Err(err(0, "no bodies".into()));
        }
        let frames = frames
            .into_iter()
            .enumerate()
            .map(|(t, f)| {
                f.into_iter()
                    .enumerate()
                    .map(|(i, p)| p.ok_or_else(|| err(0, format!("missing pose for body {i} at step {t}"))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if frames.is_empty() {
            return Err(err(0, "no poses".into()));
        }
        Ok(Trajectory { bodies, dt, frames })
    }
}
