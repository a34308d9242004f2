use std::path::Path;

use bem_core::geometry::{barycentric_refine, generate_cube, generate_sphere, load_mesh, save_mesh, Point3, SurfaceMesh};

use crate::error::{HarnessError, Result};

pub fn cube(side: f64, origin: [f64; 3], h: f64) -> Result<SurfaceMesh> {
    Ok(generate_cube(side, Point3::from(origin), h)?)
}

pub fn sphere(radius: f64, subdivisions: usize, center: [f64; 3]) -> Result<SurfaceMesh> {
    Ok(generate_sphere(radius, subdivisions)?.translated(Point3::from(center)))
}

pub fn refine(mesh: &SurfaceMesh) -> SurfaceMesh {
    barycentric_refine(mesh).refined
}

pub fn load(path: &Path) -> Result<SurfaceMesh> {
    load_mesh(path).map_err(|e| HarnessError::config(format!("{}: {e}", path.display())))
}

pub fn save(mesh: &SurfaceMesh, path: &Path) -> Result<()> {
    save_mesh(mesh, path).map_err(|e| match e {
        bem_core::BemError::Io(source) => HarnessError::io(path, source),
        e => e.into(),
    })
}

pub fn info(mesh: &SurfaceMesh) -> String {
    let b = mesh.bounding_box();
    let mut s = format!(
        "vertices {}\nedges {}\ntriangles {}\nscatterers {}\ntotal area {:.6}\nmax element diameter {:.6}\nbounding box [{:.4}, {:.4}, {:.4}] .. [{:.4}, {:.4}, {:.4}]\n",
        mesh.num_vertices(),
        mesh.num_edges(),
        mesh.num_triangles(),
        mesh.num_scatterers(),
        mesh.total_area(),
        mesh.max_diameter(),
        b.min.x,
        b.min.y,
        b.min.z,
        b.max.x,
        b.max.y,
        b.max.z,
    );
    for m in 0..mesh.num_scatterers() {
        s += &format!("scatterer {m}: {} triangles\n", mesh.scatterer_triangles(m).count());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refine_and_info() {
        let c = cube(1.0, [0.0; 3], 1.0).unwrap();
        let r = refine(&c);
        assert_eq!(r.num_triangles(), 6 * c.num_triangles());
        let text = info(&c);
        assert!(text.contains("triangles 12"));
        assert!(text.contains("scatterers 1"));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.mesh");
        let s = sphere(0.5, 1, [1.0, 2.0, 3.0]).unwrap();
        save(&s, &path).unwrap();
        assert_eq!(load(&path).unwrap().vertices(), s.vertices());
        assert!(load(&dir.path().join("missing.mesh")).is_err());
    }
}
