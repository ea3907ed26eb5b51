//! Mesh file IO: OBJ, OFF, and ASCII PLY.
//!
//! Loaders fan-triangulate polygons and convert everything to 0-based
//! indices. Writers print floats with shortest round-trip formatting, so
//! save/load reproduces vertex coordinates exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::mesh::{TriMesh, Vec3};
use crate::{Error, Result};

/// Supported on-disk formats. PLY is ASCII-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Off,
    PlyAscii,
}

impl MeshFormat {
    /// Picks the format from the file extension (obj / off / ply).
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("off") => Ok(MeshFormat::Off),
            Some("ply") => Ok(MeshFormat::PlyAscii),
            _ => Err(Error::Parse {
                path: path.to_path_buf(),
                msg: "cannot infer mesh format; expected .obj, .off, or .ply".into(),
            }),
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        msg: format!("line {line}: {}", msg.into()),
    }
}

fn parse_coord(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("expected a number, got {tok:?}")))
}

/// Appends a polygon as a triangle fan rooted at its first vertex.
fn push_fan(faces: &mut Vec<[usize; 3]>, poly: &[usize]) {
    for i in 1..poly.len() - 1 {
        faces.push([poly[0], poly[i], poly[i + 1]]);
    }
}

/// Loads a triangle mesh, fan-triangulating any polygonal faces.
pub fn load_mesh(path: impl AsRef<Path>, format: MeshFormat) -> Result<TriMesh> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    match format {
        MeshFormat::Obj => load_obj(path, reader),
        MeshFormat::Off => load_off(path, reader),
        MeshFormat::PlyAscii => load_ply(path, reader),
    }
}

/// Loads a mesh, inferring the format from the extension.
pub fn load_mesh_auto(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    load_mesh(path, MeshFormat::from_path(path)?)
}

fn load_obj(path: &Path, reader: impl BufRead) -> Result<TriMesh> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let ln = ln + 1;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for coord in c.iter_mut() {
                    let tok = toks
                        .next()
                        .ok_or_else(|| parse_err(path, ln, "vertex needs 3 coordinates"))?;
                    *coord = parse_coord(path, ln, tok)?;
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for tok in toks {
                    // "i", "i/t", "i/t/n", "i//n" all start with the vertex index
                    let idx_tok = tok.split('/').next().unwrap_or(tok);
                    let raw: i64 = idx_tok.parse().map_err(|_| {
                        parse_err(path, ln, format!("bad face index {tok:?}"))
                    })?;
                    let idx = if raw > 0 {
                        raw as usize - 1
                    } else if raw < 0 {
                        // negative indices count back from the current vertex list
                        let n = vertices.len() as i64;
                        usize::try_from(n + raw).map_err(|_| {
                            parse_err(path, ln, format!("relative index {raw} out of range"))
                        })?
                    } else {
                        return Err(parse_err(path, ln, "OBJ face indices are 1-based"));
                    };
                    poly.push(idx);
                }
                if poly.len() < 3 {
                    return Err(parse_err(path, ln, "face needs at least 3 vertices"));
                }
                push_fan(&mut faces, &poly);
            }
            _ => {} // comments, normals, groups, materials
        }
    }
    TriMesh::new(vertices, faces)
}

fn load_off(path: &Path, reader: impl BufRead) -> Result<TriMesh> {
    let mut lines = reader.lines().enumerate().filter_map(|(ln, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(Error::Io(e))),
        };
        let content = line.split('#').next().unwrap_or("").trim().to_string();
        if content.is_empty() {
            None
        } else {
            Some(Ok((ln + 1, content)))
        }
    });
    let mut next_line = || -> Result<(usize, String)> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| parse_err(path, 0, "unexpected end of OFF file"))
    };

    let (ln, header) = next_line()?;
    // counts may share the header line ("OFF 8 12 0") or follow it
    let mut counts_line = header
        .strip_prefix("OFF")
        .map(|rest| (ln, rest.trim().to_string()))
        .ok_or_else(|| parse_err(path, ln, "missing OFF header"))?;
    if counts_line.1.is_empty() {
        counts_line = next_line()?;
    }
    let (ln, counts) = counts_line;
    let nums: Vec<&str> = counts.split_whitespace().collect();
    if nums.len() < 2 {
        return Err(parse_err(path, ln, "expected vertex and face counts"));
    }
    let nv: usize = nums[0]
        .parse()
        .map_err(|_| parse_err(path, ln, "bad vertex count"))?;
    let nf: usize = nums[1]
        .parse()
        .map_err(|_| parse_err(path, ln, "bad face count"))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, line) = next_line()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(path, ln, "vertex needs 3 coordinates"));
        }
        vertices.push(Vec3::new(
            parse_coord(path, ln, toks[0])?,
            parse_coord(path, ln, toks[1])?,
            parse_coord(path, ln, toks[2])?,
        ));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, line) = next_line()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let k: usize = toks
            .first()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(path, ln, "bad face vertex count"))?;
        if k < 3 || toks.len() < 1 + k {
            return Err(parse_err(path, ln, "face needs at least 3 indices"));
        }
        let mut poly = Vec::with_capacity(k);
        for tok in &toks[1..=k] {
            poly.push(
                tok.parse::<usize>()
                    .map_err(|_| parse_err(path, ln, format!("bad face index {tok:?}")))?,
            );
        }
        push_fan(&mut faces, &poly);
    }
    TriMesh::new(vertices, faces)
}

fn load_ply(path: &Path, reader: impl BufRead) -> Result<TriMesh> {
    let mut lines = reader.lines().enumerate();
    let mut next_line = || -> Result<(usize, String)> {
        for (ln, line) in lines.by_ref() {
            let line = line?;
            let trimmed = line.trim().to_string();
            if !trimmed.is_empty() {
                return Ok((ln + 1, trimmed));
            }
        }
        Err(parse_err(path, 0, "unexpected end of PLY file"))
    };

    let (ln, magic) = next_line()?;
    if magic != "ply" {
        return Err(parse_err(path, ln, "missing 'ply' magic"));
    }

    // header: only ascii 1.0 with vertex and face elements is supported
    let mut nv = None;
    let mut nf = None;
    let mut current: Option<&'static str> = None;
    // column indices of x, y, z among the vertex properties
    let mut coord_cols = [usize::MAX; 3];
    let mut vertex_prop_count = 0usize;
    loop {
        let (ln, line) = next_line()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(parse_err(path, ln, format!("unsupported PLY format {other:?}")));
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                nv = Some(n.parse::<usize>().map_err(|_| {
                    parse_err(path, ln, "bad vertex count")
                })?);
                current = Some("vertex");
            }
            ["element", "face", n] => {
                nf = Some(n.parse::<usize>().map_err(|_| {
                    parse_err(path, ln, "bad face count")
                })?);
                current = Some("face");
            }
            ["element", other, ..] => {
                return Err(parse_err(path, ln, format!("unsupported PLY element {other:?}")));
            }
            ["property", "list", ..] => {}
            ["property", _ty, name] => {
                if current == Some("vertex") {
                    match *name {
                        "x" => coord_cols[0] = vertex_prop_count,
                        "y" => coord_cols[1] = vertex_prop_count,
                        "z" => coord_cols[2] = vertex_prop_count,
                        _ => {}
                    }
                    vertex_prop_count += 1;
                }
            }
            ["end_header"] => break,
            _ => return Err(parse_err(path, ln, format!("unexpected header line {line:?}"))),
        }
    }
    let nv = nv.ok_or_else(|| parse_err(path, 0, "missing vertex element"))?;
    let nf = nf.ok_or_else(|| parse_err(path, 0, "missing face element"))?;
    if coord_cols.contains(&usize::MAX) {
        return Err(parse_err(path, 0, "vertex element lacks x/y/z properties"));
    }

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, line) = next_line()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < vertex_prop_count {
            return Err(parse_err(path, ln, "short vertex record"));
        }
        vertices.push(Vec3::new(
            parse_coord(path, ln, toks[coord_cols[0]])?,
            parse_coord(path, ln, toks[coord_cols[1]])?,
            parse_coord(path, ln, toks[coord_cols[2]])?,
        ));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, line) = next_line()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let k: usize = toks
            .first()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(path, ln, "bad face vertex count"))?;
        if k < 3 || toks.len() < 1 + k {
            return Err(parse_err(path, ln, "face needs at least 3 indices"));
        }
        let mut poly = Vec::with_capacity(k);
        for tok in &toks[1..=k] {
            poly.push(
                tok.parse::<usize>()
                    .map_err(|_| parse_err(path, ln, format!("bad face index {tok:?}")))?,
            );
        }
        push_fan(&mut faces, &poly);
    }
    TriMesh::new(vertices, faces)
}

/// Saves a mesh in the requested format. Coordinates round-trip exactly.
pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>, format: MeshFormat) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        MeshFormat::Obj => {
            for v in mesh.vertices() {
                writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
            }
            for f in mesh.faces() {
                writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
            }
        }
        MeshFormat::Off => {
            writeln!(w, "OFF")?;
            writeln!(w, "{} {} 0", mesh.vertex_count(), mesh.face_count())?;
            for v in mesh.vertices() {
                writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
            }
            for f in mesh.faces() {
                writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
            }
        }
        MeshFormat::PlyAscii => write_ply(mesh, None, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

/// Saves a mesh, inferring the format from the extension.
pub fn save_mesh_auto(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    save_mesh(mesh, path, MeshFormat::from_path(path)?)
}

/// Saves an ASCII PLY with one RGB color per face (error-map export).
pub fn save_ply_with_face_colors(
    mesh: &TriMesh,
    colors: &[[u8; 3]],
    path: impl AsRef<Path>,
) -> Result<()> {
    if colors.len() != mesh.face_count() {
        return Err(Error::Mismatch(format!(
            "{} face colors for {} faces",
            colors.len(),
            mesh.face_count()
        )));
    }
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_ply(mesh, Some(colors), &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_ply(
    mesh: &TriMesh,
    colors: Option<&[[u8; 3]]>,
    w: &mut impl Write,
) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertex_count())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    writeln!(w, "element face {}", mesh.face_count())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    if colors.is_some() {
        writeln!(w, "property uchar red")?;
        writeln!(w, "property uchar green")?;
        writeln!(w, "property uchar blue")?;
    }
    writeln!(w, "end_header")?;
    for v in mesh.vertices() {
        writeln!(w, "{} {} {}", v.x, v.y, v.z)?;
    }
    for (fid, f) in mesh.faces().iter().enumerate() {
        match colors {
            Some(c) => writeln!(
                w,
                "3 {} {} {} {} {} {}",
                f[0], f[1], f[2], c[fid][0], c[fid][1], c[fid][2]
            )?,
            None => writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::{icosphere, unit_cube};
    use std::io::Cursor;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("mesh-denoise-io-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn obj_cube_loads() {
        let text = "\
# cube
v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1
f 1 4 3\nf 1 3 2\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5
f 3 4 8\nf 3 8 7\nf 1 5 8\nf 1 8 4\nf 2 3 7\nf 2 7 6\n";
        let mesh = load_obj(Path::new("cube.obj"), Cursor::new(text)).unwrap();
        assert_eq!(mesh.vertex_count(), 8);
        assert_eq!(mesh.face_count(), 12);
    }

    #[test]
    fn obj_quad_fan_triangulates() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let mesh = load_obj(Path::new("quad.obj"), Cursor::new(text)).unwrap();
        assert_eq!(mesh.face_count(), 2);
        assert_eq!(mesh.faces()[0], [0, 1, 2]);
        assert_eq!(mesh.faces()[1], [0, 2, 3]);
    }

    #[test]
    fn obj_slash_and_negative_indices() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2//2 -1\n";
        let mesh = load_obj(Path::new("m.obj"), Cursor::new(text)).unwrap();
        assert_eq!(mesh.faces()[0], [0, 1, 2]);
    }

    #[test]
    fn obj_out_of_range_index_is_topology_error() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 99\n";
        let err = load_obj(Path::new("m.obj"), Cursor::new(text)).unwrap_err();
        assert!(matches!(err, Error::Topology(_)), "got {err:?}");
    }

    #[test]
    fn off_header_variants() {
        let split = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let joined = "OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        for text in [split, joined] {
            let mesh = load_off(Path::new("t.off"), Cursor::new(text)).unwrap();
            assert_eq!(mesh.vertex_count(), 3);
            assert_eq!(mesh.face_count(), 1);
        }
    }

    #[test]
    fn ply_reorders_vertex_properties() {
        let text = "\
ply\nformat ascii 1.0
element vertex 3
property double z\nproperty double x\nproperty double y
element face 1
property list uchar int vertex_indices
end_header
9 1 2\n9 3 4\n9 5 6
3 0 1 2\n";
        let mesh = load_ply(Path::new("t.ply"), Cursor::new(text)).unwrap();
        assert_eq!(mesh.vertices()[0], Vec3::new(1.0, 2.0, 9.0));
        assert_eq!(mesh.vertices()[2], Vec3::new(5.0, 6.0, 9.0));
    }

    #[test]
    fn round_trip_all_formats() {
        let mesh = icosphere(0.7, 2);
        for (name, fmt) in [
            ("rt.obj", MeshFormat::Obj),
            ("rt.off", MeshFormat::Off),
            ("rt.ply", MeshFormat::PlyAscii),
        ] {
            let path = tmp(name);
            save_mesh(&mesh, &path, fmt).unwrap();
            let back = load_mesh(&path, fmt).unwrap();
            assert_eq!(back.faces(), mesh.faces());
            assert_eq!(back.vertices(), mesh.vertices(), "{name} not exact");
        }
    }

    #[test]
    fn round_trip_auto_detection() {
        let mesh = unit_cube();
        let path = tmp("auto.off");
        save_mesh_auto(&mesh, &path).unwrap();
        let back = load_mesh_auto(&path).unwrap();
        assert_eq!(back.faces(), mesh.faces());
    }

    #[test]
    fn empty_mesh_round_trips() {
        let mesh = TriMesh::new(vec![], vec![]).unwrap();
        let path = tmp("empty.obj");
        save_mesh(&mesh, &path, MeshFormat::Obj).unwrap();
        let back = load_mesh(&path, MeshFormat::Obj).unwrap();
        assert_eq!(back.face_count(), 0);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let mesh = unit_cube();
        let err = save_mesh(&mesh, "/nonexistent-dir/x.obj", MeshFormat::Obj).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn ply_face_colors_rejects_wrong_length() {
        let mesh = unit_cube();
        let err =
            save_ply_with_face_colors(&mesh, &[[0, 0, 0]; 3], tmp("c.ply")).unwrap_err();
        assert!(matches!(err, Error::Mismatch(_)));
    }

    #[test]
    fn ply_face_colors_round_trip_geometry() {
        let mesh = unit_cube();
        let colors = vec![[10u8, 20, 30]; mesh.face_count()];
        let path = tmp("colored.ply");
        save_ply_with_face_colors(&mesh, &colors, &path).unwrap();
        let back = load_mesh(&path, MeshFormat::PlyAscii).unwrap();
        assert_eq!(back.faces(), mesh.faces());
        assert_eq!(back.vertices(), mesh.vertices());
    }
}
