use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ctrecon_core::phantom::{Ellipse, Phantom};

use super::{write_bytes, FormatError, Result};

const HEADER: &str = "ctrecon-phantom 1";

/// Text form: a version line, `fov_radius R`, then one
/// `ellipse cx cy a b angle intensity` line per ellipse. Floats use the
/// shortest representation that round-trips exactly; `#` starts a comment.
pub fn render_phantom(p: &Phantom) -> String {
    let mut s = format!("{HEADER}\nfov_radius {:?}\n", p.fov_radius());
    for e in p.ellipses() {
        let _ = writeln!(s, "ellipse {:?} {:?} {:?} {:?} {:?} {:?}", e.cx, e.cy, e.a, e.b, e.angle, e.intensity);
    }
    s
}

pub fn parse_phantom(text: &str) -> Result<Phantom> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap().trim()))
        .filter(|(_, l)| !l.is_empty());
    let bad = |line: usize, msg: &str| FormatError::Invalid(format!("phantom line {line}: {msg}"));
    match lines.next() {
        Some((_, l)) if l == HEADER => {}
        Some((n, l)) if l.starts_with("ctrecon-phantom") => return Err(bad(n, "unsupported version")),
        Some((n, _)) => return Err(bad(n, "missing `ctrecon-phantom 1` header")),
        None => return Err(FormatError::Invalid("empty phantom file".into())),
    }
    let mut fov = None;
    let mut ellipses = Vec::new();
    for (n, line) in lines {
        let mut words = line.split_whitespace();
        let key = words.next().unwrap();
        let nums = words
            .map(|w| w.parse::<f64>().map_err(|_| bad(n, &format!("`{w}` is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        match (key, nums.as_slice()) {
            ("fov_radius", &[r]) => fov = Some(r),
            ("ellipse", &[cx, cy, a, b, angle, intensity]) => {
                ellipses.push(Ellipse::new(cx, cy, a, b, angle, intensity).map_err(|e| bad(n, &e.to_string()))?)
            }
            _ => return Err(bad(n, &format!("unexpected `{line}`"))),
        }
    }
    let fov = fov.ok_or_else(|| FormatError::Invalid("phantom without fov_radius".into()))?;
    Ok(Phantom::new(ellipses, fov)?)
}

pub fn write_phantom(path: &Path, p: &Phantom) -> Result<()> {
    write_bytes(path, render_phantom(p).as_bytes())
}

pub fn read_phantom(path: &Path) -> Result<Phantom> {
    parse_phantom(&fs::read_to_string(path)?)
}
