//! Wavefront OBJ loading (`v`, `vt`, `vn`, `f`; other records are ignored).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use glam::{DVec2, DVec3};

use super::mesh::{area_weighted_normals, TriangleMesh};
use super::MeshError;

/// Serializes with full precision, writing `vt`/`vn` for every vertex.
pub fn to_obj(mesh: &TriangleMesh) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for p in &mesh.positions {
        let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
    }
    if let Some(uvs) = &mesh.uvs {
        for t in uvs {
            let _ = writeln!(out, "vt {} {}", t.x, t.y);
        }
    }
    for n in &mesh.normals {
        let _ = writeln!(out, "vn {} {} {}", n.x, n.y, n.z);
    }
    for tri in &mesh.triangles {
        let c: Vec<String> = tri
            .iter()
            .map(|&i| match mesh.uvs {
                Some(_) => format!("{0}/{0}/{0}", i + 1),
                None => format!("{0}//{0}", i + 1),
            })
            .collect();
        let _ = writeln!(out, "f {}", c.join(" "));
    }
    out
}

pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<(), MeshError> {
    fs::write(path, to_obj(mesh)).map_err(|source| MeshError::Io { path: path.to_path_buf(), source })
}

pub fn load_obj(path: &Path) -> Result<TriangleMesh, MeshError> {
    let text = fs::read_to_string(path).map_err(|source| MeshError::Io { path: path.to_path_buf(), source })?;
    parse_obj(&text)
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Corner {
    position: usize,
    uv: Option<usize>,
    normal: Option<usize>,
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut positions = Vec::new();
    let mut texcoords = Vec::new();
    let mut normals = Vec::new();
    let mut faces: Vec<[Corner; 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let Some(keyword) = tokens.next() else { continue };
        let rest: Vec<&str> = tokens.collect();
        match keyword {
            "v" => positions.push(parse_vec3(&rest, line_no)?),
            "vn" => normals.push(parse_vec3(&rest, line_no)?),
            "vt" => {
                let f = parse_floats(&rest, 2, line_no)?;
                texcoords.push(DVec2::new(f[0], f[1]));
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(MeshError::Parse {
                        line: line_no,
                        message: format!("face needs at least 3 vertices, found {}", rest.len()),
                    });
                }
                let corners = rest
                    .iter()
                    .map(|tok| parse_corner(tok, line_no, positions.len(), texcoords.len(), normals.len()))
                    .collect::<Result<Vec<_>, _>>()?;
                for i in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[i], corners[i + 1]]);
                }
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(MeshError::Empty);
    }

    let all_uv = faces.iter().flatten().all(|c| c.uv.is_some());
    let all_normal = faces.iter().flatten().all(|c| c.normal.is_some());
    let computed = if all_normal { Vec::new() } else { area_weighted_normals(&positions, &position_triangles(&faces)) };

    let mut remap: HashMap<Corner, u32> = HashMap::new();
    let mut out_positions = Vec::new();
    let mut out_normals = Vec::new();
    let mut out_uvs = Vec::new();
    let mut triangles = Vec::with_capacity(faces.len());
    for face in &faces {
        let mut tri = [0u32; 3];
        for (slot, corner) in tri.iter_mut().zip(face) {
            // drop attributes that are not used uniformly so vertices are keyed consistently
            let key = Corner {
                position: corner.position,
                uv: if all_uv { corner.uv } else { None },
                normal: if all_normal { corner.normal } else { None },
            };
            *slot = *remap.entry(key).or_insert_with(|| {
                out_positions.push(positions[key.position]);
                out_normals.push(match key.normal {
                    Some(n) => normals[n],
                    None => computed[key.position],
                });
                if let Some(t) = key.uv {
                    out_uvs.push(texcoords[t]);
                }
                (out_positions.len() - 1) as u32
            });
        }
        triangles.push(tri);
    }
    TriangleMesh::new(out_positions, Some(out_normals), all_uv.then_some(out_uvs), triangles)
}

fn position_triangles(faces: &[[Corner; 3]]) -> Vec<[u32; 3]> {
    faces.iter().map(|f| f.map(|c| c.position as u32)).collect()
}

fn parse_floats(tokens: &[&str], min: usize, line: usize) -> Result<Vec<f64>, MeshError> {
    if tokens.len() < min {
        return Err(MeshError::Parse { line, message: format!("expected {min} numbers, found {}", tokens.len()) });
    }
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| MeshError::Parse { line, message: format!("invalid number {t:?}") })
        })
        .collect()
}

fn parse_vec3(tokens: &[&str], line: usize) -> Result<DVec3, MeshError> {
    let f = parse_floats(tokens, 3, line)?;
    Ok(DVec3::new(f[0], f[1], f[2]))
}

fn resolve(token: &str, count: usize, line: usize, kind: &'static str) -> Result<usize, MeshError> {
    let raw: i64 = token
        .parse()
        .map_err(|_| MeshError::Parse { line, message: format!("invalid {kind} index {token:?}") })?;
    let resolved = if raw < 0 { count as i64 + raw } else { raw - 1 };
    if raw == 0 || resolved < 0 || resolved >= count as i64 {
        return Err(MeshError::IndexOutOfRange { line, index: raw, count, kind });
    }
    Ok(resolved as usize)
}

fn parse_corner(token: &str, line: usize, nv: usize, nt: usize, nn: usize) -> Result<Corner, MeshError> {
    let mut parts = token.split('/');
    let position = resolve(parts.next().unwrap_or(""), nv, line, "vertex")?;
    let uv = match parts.next() {
        Some("") | None => None,
        Some(t) => Some(resolve(t, nt, line, "texcoord")?),
    };
    let normal = match parts.next() {
        Some("") | None => None,
        Some(n) => Some(resolve(n, nn, line, "normal")?),
    };
    Ok(Corner { position, uv, normal })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn obj_round_trip_is_exact() {
        let sphere = TriangleMesh::uv_sphere(DVec3::new(0.1, -0.2, 0.3), 0.7, 12, 6);
        let plain = TriangleMesh::new(sphere.positions.clone(), None, None, sphere.triangles.clone()).unwrap();
        for mesh in [sphere, plain] {
            let back = parse_obj(&to_obj(&mesh)).unwrap();
            assert_eq!(back.triangle_count(), mesh.triangle_count());
            assert_eq!(back.bbox, mesh.bbox);
            for t in 0..mesh.triangle_count() {
                assert_eq!(back.corners(t), mesh.corners(t));
                assert_eq!(back.uv_corners(t), mesh.uv_corners(t));
                for (u, v) in [(0.2, 0.3), (0.0, 1.0)] {
                    let (a, b) = (back.interpolate(t, u, v), mesh.interpolate(t, u, v));
                    assert_eq!((a.0, a.2), (b.0, b.2));
                    assert!((a.1 - b.1).abs().max_element() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_triangle_gets_plane_normal() {
        let mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(mesh.triangle_count(), 1);
        for n in &mesh.normals {
            assert!((*n - DVec3::Z).length() < 1e-12);
        }
        assert!(!mesh.has_uvs());
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert_eq!(mesh.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn out_of_range_index_is_reported_with_line() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n").unwrap_err();
        match err {
            MeshError::IndexOutOfRange { line, index, .. } => {
                assert_eq!(line, 4);
                assert_eq!(index, 9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_number_reports_line() {
        let err = parse_obj("v 0 0 0\nv 1 zero 0\n").unwrap_err();
        assert!(matches!(err, MeshError::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn no_faces_is_empty_error() {
        assert!(matches!(parse_obj("v 0 0 0\n# nothing\n"), Err(MeshError::Empty)));
    }

    #[test]
    fn full_corners_and_negative_indices() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nvn 0 0 2\nf -3/1/1 -2/2/1 -1/3/1\n";
        let mesh = parse_obj(src).unwrap();
        assert!(mesh.has_uvs());
        assert_eq!(mesh.uvs.as_ref().unwrap()[1], DVec2::new(1.0, 0.0));
        // file normals are normalized
        assert!((mesh.normals[0] - DVec3::Z).length() < 1e-12);
    }

    #[test]
    fn seams_split_vertices_but_share_computed_normals() {
        // two triangles sharing an edge whose uvs differ on each side
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0.5\nvt 0 0\nvt 1 0\nvt 0 1\nvt 0.5 0.5\n\
                   f 1/1 2/2 3/3\nf 2/4 4/2 3/4\n";
        let mesh = parse_obj(src).unwrap();
        assert_eq!(mesh.positions.len(), 6);
        assert_eq!(mesh.normals[1], mesh.normals[3]);
    }
}
