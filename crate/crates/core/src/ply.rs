//! Binary little-endian PLY for labeled point clouds.
//!
//! Vertex properties: `x y z` (double), `segment` (int), `success` (uchar),
//! `grasp_index` (int).

use std::io::{BufRead, Write};

use crate::geometry::Vec3;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlyCloud {
    pub points: Vec<Vec3>,
    pub segments: Vec<i32>,
    pub success: Vec<u8>,
    pub grasp_index: Vec<i32>,
}

const PROPERTIES: [(&str, &str); 6] = [
    ("double", "x"),
    ("double", "y"),
    ("double", "z"),
    ("int", "segment"),
    ("uchar", "success"),
    ("int", "grasp_index"),
];

pub fn write_ply<W: Write>(cloud: &PlyCloud, mut out: W) -> Result<()> {
    let n = cloud.points.len();
    if cloud.segments.len() != n || cloud.success.len() != n || cloud.grasp_index.len() != n {
        return Err(Error::format("ply", "property columns differ in length"));
    }
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {n}\n");
    for (ty, name) in PROPERTIES {
        header.push_str(&format!("property {ty} {name}\n"));
    }
    header.push_str("end_header\n");
    let mut buf = Vec::with_capacity(header.len() + n * 33);
    buf.extend_from_slice(header.as_bytes());
    for i in 0..n {
        for c in cloud.points[i].iter() {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        buf.extend_from_slice(&cloud.segments[i].to_le_bytes());
        buf.push(cloud.success[i]);
        buf.extend_from_slice(&cloud.grasp_index[i].to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_ply<R: BufRead>(mut input: R) -> Result<PlyCloud> {
    let mut line = String::new();
    let mut next_line = |input: &mut R| -> Result<String> {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(Error::format("ply", "unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut input)? != "ply" {
        return Err(Error::format("ply", "missing magic"));
    }
    if next_line(&mut input)? != "format binary_little_endian 1.0" {
        return Err(Error::format("ply", "only binary_little_endian 1.0 is supported"));
    }
    let mut count: Option<usize> = None;
    let mut props = Vec::new();
    loop {
        let l = next_line(&mut input)?;
        let words: Vec<&str> = l.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| Error::format("ply", format!("bad count {n:?}")))?);
            }
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            _ => return Err(Error::format("ply", format!("unsupported header line {l:?}"))),
        }
    }
    let expected: Vec<(String, String)> = PROPERTIES.iter().map(|(t, n)| (t.to_string(), n.to_string())).collect();
    if props != expected {
        return Err(Error::format("ply", format!("unexpected properties {props:?}")));
    }
    let n = count.ok_or_else(|| Error::format("ply", "missing vertex element"))?;
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    const STRIDE: usize = 8 * 3 + 4 + 1 + 4;
    if data.len() != n * STRIDE {
        return Err(Error::format(
            "ply",
            format!("expected {} data bytes, found {}", n * STRIDE, data.len()),
        ));
    }
    let mut cloud = PlyCloud::default();
    for rec in data.chunks_exact(STRIDE) {
        let f = |o: usize| f64::from_le_bytes(rec[o..o + 8].try_into().expect("8 bytes"));
        let i = |o: usize| i32::from_le_bytes(rec[o..o + 4].try_into().expect("4 bytes"));
        cloud.points.push(Vec3::new(f(0), f(8), f(16)));
        cloud.segments.push(i(24));
        cloud.success.push(rec[28]);
        cloud.grasp_index.push(i(29));
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let cloud = PlyCloud {
            points: vec![Vec3::new(0.1, -2.0, 3.5), Vec3::new(f64::MIN_POSITIVE, 0.0, -0.0)],
            segments: vec![0, 7],
            success: vec![1, 0],
            grasp_index: vec![12, -1],
        };
        let mut bytes = Vec::new();
        write_ply(&cloud, &mut bytes).unwrap();
        assert_eq!(read_ply(bytes.as_slice()).unwrap(), cloud);
    }

    #[test]
    fn truncated_data_is_rejected() {
        let cloud = PlyCloud {
            points: vec![Vec3::zeros()],
            segments: vec![0],
            success: vec![0],
            grasp_index: vec![-1],
        };
        let mut bytes = Vec::new();
        write_ply(&cloud, &mut bytes).unwrap();
        bytes.pop();
        assert!(read_ply(bytes.as_slice()).is_err());
        assert!(read_ply(&b"ply\nformat ascii 1.0\n"[..]).is_err());
    }
}
