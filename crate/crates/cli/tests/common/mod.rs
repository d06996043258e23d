#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vvtrace::geometry::Vec3;
use vvtrace::ply::write_ascii_ply;
use vvtrace::synthetic;
use vvtrace::trace::serialize_trace;
use vvtrace::Session;

pub fn vvtrace(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vvtrace"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("VVTRACE_OUT")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str], out: &Path) -> Output {
    let o = vvtrace(args, out);
    assert!(
        o.status.success(),
        "vvtrace {args:?} failed with {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

pub fn write_trace(dir: &Path, video: &str, user: &str, s: &Session) -> PathBuf {
    let d = dir.join(video);
    std::fs::create_dir_all(&d).unwrap();
    let p = d.join(format!("{user}.csv"));
    std::fs::write(&p, serialize_trace(s)).unwrap();
    p
}

pub fn write_scene(path: &Path, points: &[Vec3]) -> PathBuf {
    let f = std::fs::File::create(path).unwrap();
    write_ascii_ply(std::io::BufWriter::new(f), points).unwrap();
    path.to_path_buf()
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub cube_trace: PathBuf,
    pub cube_scene: PathBuf,
    pub cube_session: Session,
    pub cube_points: Vec<Vec3>,
    pub stationary_trace: PathBuf,
    pub orbit_traces: Vec<PathBuf>,
    pub random_scene: PathBuf,
}

pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let (points, session, _) = synthetic::three_cube_sweep();
    let cube_trace = write_trace(dir.path(), "three_cube", "u1", &session);
    let cube_scene = write_scene(&dir.path().join("three_cube.ply"), &points);
    let stationary_trace = write_trace(dir.path(), "still", "u1", &synthetic::stationary(30.0, 2.0));
    let orbit_traces = (0..3)
        .map(|u| {
            let s = synthetic::orbit(30.0, 3.0, 1.0 + 0.2 * u as f64, 6.0);
            write_trace(dir.path(), "orbit", &format!("u{u}"), &s)
        })
        .collect();
    let (random, _, _) = synthetic::random_viewing(3, 1);
    let random_scene = write_scene(&dir.path().join("random.ply"), &random);
    Fixture {
        cube_trace,
        cube_scene,
        cube_session: session,
        cube_points: points,
        stationary_trace,
        orbit_traces,
        random_scene,
        dir,
    }
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file under `dir`, relative path to bytes.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_file() {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
        }
    }
    out
}
