//! Mesh text formats.
//!
//! Native format (`mesh-v1`):
//!
//! ```text
//! mesh-v1 <V> <T> <M>
//! v x y z          # V lines
//! t i j k s        # T lines: 0-based vertex indices, scatterer id
//! ```
//!
//! Tokens are whitespace separated and `#` starts a comment. Coordinates are
//! written with the shortest representation that round-trips exactly.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::{Point3, SurfaceMesh};
use crate::error::{BemError, Result};

/// Reads a mesh file, dispatching on content: Gmsh v2 files start with
/// `$MeshFormat`, everything else is parsed as the native format.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<SurfaceMesh> {
    let text = std::fs::read_to_string(path)?;
    if text.trim_start().starts_with("$MeshFormat") {
        parse_gmsh_v2(&text)
    } else {
        parse_mesh(&text)
    }
}

pub fn save_mesh(mesh: &SurfaceMesh, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_mesh(mesh))?;
    Ok(())
}

pub fn write_mesh(mesh: &SurfaceMesh) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "mesh-v1 {} {} {}",
        mesh.num_vertices(),
        mesh.num_triangles(),
        mesh.num_scatterers()
    );
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z);
    }
    for (tri, s) in mesh.triangles().iter().zip(mesh.scatterer_ids()) {
        let _ = writeln!(out, "t {} {} {} {}", tri[0], tri[1], tri[2], s);
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> BemError {
    BemError::Parse { line, message: message.into() }
}

/// Non-empty, comment-stripped lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let body = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = body.split_whitespace().collect();
        (!tokens.is_empty()).then_some((i + 1, tokens))
    })
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))
}

pub fn parse_mesh(text: &str) -> Result<SurfaceMesh> {
    let mut lines = content_lines(text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty mesh file"))?;
    if header.len() != 4 || header[0] != "mesh-v1" {
        return Err(parse_err(hline, "expected header `mesh-v1 <V> <T> <M>`"));
    }
    let nv: usize = parse_num(header[1], hline, "vertex count")?;
    let nt: usize = parse_num(header[2], hline, "triangle count")?;
    let nm: usize = parse_num(header[3], hline, "scatterer count")?;

    let mut vertices = Vec::with_capacity(nv);
    let mut triangles = Vec::with_capacity(nt);
    let mut ids = Vec::with_capacity(nt);
    let mut last_line = hline;
    for (line, tokens) in lines {
        last_line = line;
        match tokens[0] {
            "v" => {
                if tokens.len() != 4 {
                    return Err(parse_err(line, "vertex line needs `v x y z`"));
                }
                if !triangles.is_empty() {
                    return Err(parse_err(line, "vertex line after triangle lines"));
                }
                let mut p = [0.0f64; 3];
                for (d, tok) in tokens[1..].iter().enumerate() {
                    p[d] = parse_num(tok, line, "coordinate")?;
                    if !p[d].is_finite() {
                        return Err(parse_err(line, "non-finite coordinate"));
                    }
                }
                vertices.push(Point3::new(p[0], p[1], p[2]));
            }
            "t" => {
                if tokens.len() != 5 {
                    return Err(parse_err(line, "triangle line needs `t i j k s`"));
                }
                let mut tri = [0usize; 3];
                for (d, tok) in tokens[1..4].iter().enumerate() {
                    tri[d] = parse_num(tok, line, "vertex index")?;
                    if tri[d] >= nv {
                        return Err(parse_err(
                            line,
                            format!("vertex index {} out of range (V = {nv})", tri[d]),
                        ));
                    }
                }
                let s: usize = parse_num(tokens[4], line, "scatterer id")?;
                if s >= nm {
                    return Err(parse_err(line, format!("scatterer id {s} out of range (M = {nm})")));
                }
                triangles.push(tri);
                ids.push(s);
            }
            other => return Err(parse_err(line, format!("unknown record `{other}`"))),
        }
    }
    if vertices.len() != nv {
        return Err(parse_err(last_line, format!("header declares {nv} vertices, found {}", vertices.len())));
    }
    if triangles.len() != nt {
        return Err(parse_err(last_line, format!("header declares {nt} triangles, found {}", triangles.len())));
    }
    let mesh = SurfaceMesh::new(vertices, triangles, ids)?;
    if mesh.num_scatterers() != nm {
        return Err(BemError::Validation(format!(
            "header declares {nm} scatterers, triangles use {}",
            mesh.num_scatterers()
        )));
    }
    Ok(mesh)
}

/// Reads a Gmsh 2.x ASCII file. Only 3-node triangles (element type 2) are
/// kept; other elements are skipped. The first tag (physical group) of each
/// triangle selects its scatterer; distinct tags are numbered in increasing
/// order. Unused nodes are dropped.
pub fn parse_gmsh_v2(text: &str) -> Result<SurfaceMesh> {
    let lines: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect()))
        .filter(|(_, t): &(usize, Vec<&str>)| !t.is_empty())
        .collect();
    let mut nodes: HashMap<usize, Point3> = HashMap::new();
    let mut raw_tris: Vec<([usize; 3], i64, usize)> = Vec::new();
    let mut i = 0;
    let mut saw_format = false;
    while i < lines.len() {
        let (line, ref tokens) = lines[i];
        match tokens[0] {
            "$MeshFormat" => {
                let (fline, fmt) = lines.get(i + 1).ok_or_else(|| parse_err(line, "truncated $MeshFormat"))?;
                let version: f64 = parse_num(fmt[0], *fline, "format version")?;
                if !(2.0..3.0).contains(&version) {
                    return Err(parse_err(*fline, format!("unsupported Gmsh version {version}; expected 2.x")));
                }
                if fmt.get(1) != Some(&"0") {
                    return Err(parse_err(*fline, "binary Gmsh files are not supported"));
                }
                saw_format = true;
                i = skip_to(&lines, i, "$EndMeshFormat")?;
            }
            "$Nodes" => {
                let (cline, count) = section_count(&lines, i)?;
                for k in 0..count {
                    let (nline, ref t) = *lines
                        .get(i + 2 + k)
                        .ok_or_else(|| parse_err(cline, "truncated $Nodes section"))?;
                    if t.len() < 4 {
                        return Err(parse_err(nline, "node line needs `id x y z`"));
                    }
                    let id: usize = parse_num(t[0], nline, "node id")?;
                    let x: f64 = parse_num(t[1], nline, "coordinate")?;
                    let y: f64 = parse_num(t[2], nline, "coordinate")?;
                    let z: f64 = parse_num(t[3], nline, "coordinate")?;
                    nodes.insert(id, Point3::new(x, y, z));
                }
                i = skip_to(&lines, i + 1 + count, "$EndNodes")?;
            }
            "$Elements" => {
                let (cline, count) = section_count(&lines, i)?;
                for k in 0..count {
                    let (eline, ref t) = *lines
                        .get(i + 2 + k)
                        .ok_or_else(|| parse_err(cline, "truncated $Elements section"))?;
                    if t.len() < 3 {
                        return Err(parse_err(eline, "element line too short"));
                    }
                    let etype: usize = parse_num(t[1], eline, "element type")?;
                    let ntags: usize = parse_num(t[2], eline, "tag count")?;
                    if etype != 2 {
                        continue;
                    }
                    if t.len() != 3 + ntags + 3 {
                        return Err(parse_err(eline, "triangle element needs 3 node ids after its tags"));
                    }
                    let tag: i64 = if ntags > 0 { parse_num(t[3], eline, "tag")? } else { 0 };
                    let mut tri = [0usize; 3];
                    for d in 0..3 {
                        tri[d] = parse_num(t[3 + ntags + d], eline, "node id")?;
                    }
                    raw_tris.push((tri, tag, eline));
                }
                i = skip_to(&lines, i + 1 + count, "$EndElements")?;
            }
            _ => {
                // Unknown sections ($PhysicalNames, ...) are skipped wholesale.
                if let Some(name) = tokens[0].strip_prefix('$') {
                    let end = format!("$End{name}");
                    i = skip_to(&lines, i, &end)?;
                } else {
                    return Err(parse_err(line, format!("unexpected content `{}`", tokens[0])));
                }
            }
        }
        i += 1;
    }
    if !saw_format {
        return Err(parse_err(1, "missing $MeshFormat section"));
    }
    if raw_tris.is_empty() {
        return Err(parse_err(lines.last().map_or(1, |l| l.0), "no triangle elements"));
    }
    let tags: BTreeMap<i64, usize> = raw_tris
        .iter()
        .map(|r| r.1)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(k, tag)| (tag, k))
        .collect();
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(raw_tris.len());
    let mut ids = Vec::with_capacity(raw_tris.len());
    for (tri, tag, eline) in raw_tris {
        let mut mapped = [0; 3];
        for d in 0..3 {
            let id = tri[d];
            let p = *nodes
                .get(&id)
                .ok_or_else(|| parse_err(eline, format!("unknown node id {id}")))?;
            mapped[d] = *remap.entry(id).or_insert_with(|| {
                vertices.push(p);
                vertices.len() - 1
            });
        }
        triangles.push(mapped);
        ids.push(tags[&tag]);
    }
    SurfaceMesh::new(vertices, triangles, ids)
}

fn section_count(lines: &[(usize, Vec<&str>)], start: usize) -> Result<(usize, usize)> {
    let (line, tokens) = lines
        .get(start + 1)
        .ok_or_else(|| parse_err(lines[start].0, "missing section count"))?;
    Ok((*line, parse_num(tokens[0], *line, "section count")?))
}

fn skip_to(lines: &[(usize, Vec<&str>)], from: usize, marker: &str) -> Result<usize> {
    lines[from..]
        .iter()
        .position(|(_, t)| t[0] == marker)
        .map(|k| from + k)
        .ok_or_else(|| parse_err(lines[from].0, format!("missing {marker}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_cube, generate_sphere};

    #[test]
    fn native_round_trip_is_exact() {
        let a = generate_cube(0.4, Point3::new(-1.0, 0.0, 0.0), 0.15).unwrap();
        let b = generate_sphere(0.3, 1).unwrap().translated(Point3::new(1.0, 0.1, 0.7));
        let mesh = SurfaceMesh::merge(&[a, b]).unwrap();
        let back = parse_mesh(&write_mesh(&mesh)).unwrap();
        assert_eq!(back.vertices(), mesh.vertices());
        assert_eq!(back.triangles(), mesh.triangles());
        assert_eq!(back.scatterer_ids(), mesh.scatterer_ids());
    }

    #[test]
    fn file_round_trip() {
        let mesh = generate_cube(1.0, Point3::zeros(), 0.5).unwrap();
        let dir = std::env::temp_dir().join(format!("bem-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cube.mesh");
        save_mesh(&mesh, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back.num_triangles(), 48);
        assert_eq!(back.scatterer_ids(), mesh.scatterer_ids());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        assert!(matches!(parse_mesh(""), Err(BemError::Parse { line: 1, .. })));
        assert!(matches!(parse_mesh("# only a comment\n"), Err(BemError::Parse { .. })));
        let bad = "mesh-v1 3 1 1\nv 0 0 0\nv 1 0 0\nv 0 x 0\nt 0 1 2 0\n";
        match parse_mesh(bad) {
            Err(BemError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let oob = "mesh-v1 3 1 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\nt 0 1 7 0\n";
        assert!(matches!(parse_mesh(oob), Err(BemError::Parse { line: 5, .. })));
    }

    #[test]
    fn open_surface_is_a_validation_error() {
        let open = "mesh-v1 3 1 1\nv 0 0 0\nv 1 0 0 # comment\nv 0 1 0\nt 0 1 2 0\n";
        assert!(matches!(parse_mesh(open), Err(BemError::Validation(_))));
    }

    #[test]
    fn gmsh_tetrahedron() {
        let text = "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n\
$PhysicalNames\n1\n2 7 \"ice\"\n$EndPhysicalNames\n\
$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n$EndNodes\n\
$Elements\n6\n1 15 2 0 1 1\n2 1 2 0 1 1 2\n\
3 2 2 7 1 1 3 2\n4 2 2 7 1 1 2 4\n5 2 2 7 1 1 4 3\n6 2 2 7 1 2 3 4\n$EndElements\n";
        let mesh = parse_gmsh_v2(text).unwrap();
        assert_eq!(mesh.num_triangles(), 4);
        assert_eq!(mesh.num_vertices(), 4);
        assert_eq!(mesh.num_scatterers(), 1);
    }
}
