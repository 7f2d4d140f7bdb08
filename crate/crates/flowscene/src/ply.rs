//! ASCII PLY meshes and voxel-cube export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use flowscene_core::SemanticVoxelGrid;

use crate::error::{FormatError, Result};

/// Vertex positions with RGB colours and polygon faces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlyMesh {
    pub comments: Vec<String>,
    pub vertices: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 3]>,
    pub faces: Vec<Vec<u32>>,
}

const VOXEL_COUNT: &str = "voxel_count ";

impl PlyMesh {
    /// Value of the `voxel_count` header comment, if present.
    pub fn voxel_count(&self) -> Option<usize> {
        self.comments
            .iter()
            .find_map(|c| c.strip_prefix(VOXEL_COUNT))
            .and_then(|n| n.trim().parse().ok())
    }
}

pub fn encode(mesh: &PlyMesh) -> Result<String> {
    if mesh.colors.len() != mesh.vertices.len() {
        return Err(FormatError::invalid("one colour per vertex required"));
    }
    if let Some(c) = mesh.comments.iter().find(|c| c.contains('\n')) {
        return Err(FormatError::invalid(format!("comment {c:?} spans lines")));
    }
    let mut s = String::from("ply\nformat ascii 1.0\n");
    for c in &mesh.comments {
        writeln!(s, "comment {c}").unwrap();
    }
    writeln!(s, "element vertex {}", mesh.vertices.len()).unwrap();
    for p in ["x", "y", "z"] {
        writeln!(s, "property float {p}").unwrap();
    }
    for p in ["red", "green", "blue"] {
        writeln!(s, "property uchar {p}").unwrap();
    }
    writeln!(s, "element face {}", mesh.faces.len()).unwrap();
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
        // `{}` prints the shortest string that parses back to the same f32.
        writeln!(s, "{} {} {} {} {} {}", v[0], v[1], v[2], c[0], c[1], c[2]).unwrap();
    }
    for f in &mesh.faces {
        if f.len() > u8::MAX as usize {
            return Err(FormatError::invalid("face with more than 255 vertices"));
        }
        write!(s, "{}", f.len()).unwrap();
        for i in f {
            if *i as usize >= mesh.vertices.len() || *i > i32::MAX as u32 {
                return Err(FormatError::invalid(format!("face index {i} out of range")));
            }
            write!(s, " {i}").unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| FormatError::invalid(format!("PLY: bad {what}")))
}

/// Reads the layout written by [`encode`].
pub fn decode(text: &str) -> Result<PlyMesh> {
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(FormatError::BadMagic {
            expected: "ply".into(),
            found: text.lines().next().unwrap_or("").into(),
        });
    }
    if lines.next() != Some("format ascii 1.0") {
        return Err(FormatError::invalid("PLY: only ascii 1.0 is supported"));
    }
    let mut mesh = PlyMesh::default();
    let mut header = Vec::new();
    for line in lines.by_ref() {
        if line == "end_header" {
            break;
        }
        match line.strip_prefix("comment ") {
            Some(c) => mesh.comments.push(c.to_string()),
            None if line == "comment" => mesh.comments.push(String::new()),
            None => header.push(line),
        }
    }
    let mut it = header.iter();
    let count = |line: Option<&&str>, name: &str| -> Result<usize> {
        let line = line.ok_or_else(|| FormatError::invalid("PLY: header ends early"))?;
        parse(line.strip_prefix(&format!("element {name} ")), &format!("{name} count"))
    };
    let nv = count(it.next(), "vertex")?;
    let expected = [
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
    ];
    for want in expected {
        if it.next() != Some(&want) {
            return Err(FormatError::invalid(format!("PLY: expected `{want}`")));
        }
    }
    let nf = count(it.next(), "face")?;
    if it.next() != Some(&"property list uchar int vertex_indices") || it.next().is_some() {
        return Err(FormatError::invalid("PLY: unsupported face layout"));
    }

    for _ in 0..nv {
        let mut t = lines
            .next()
            .ok_or_else(|| FormatError::invalid("PLY: missing vertex"))?
            .split_ascii_whitespace();
        mesh.vertices
            .push([parse(t.next(), "x")?, parse(t.next(), "y")?, parse(t.next(), "z")?]);
        mesh.colors
            .push([parse(t.next(), "red")?, parse(t.next(), "green")?, parse(t.next(), "blue")?]);
        if t.next().is_some() {
            return Err(FormatError::invalid("PLY: extra vertex fields"));
        }
    }
    for _ in 0..nf {
        let mut t = lines
            .next()
            .ok_or_else(|| FormatError::invalid("PLY: missing face"))?
            .split_ascii_whitespace();
        let n: u8 = parse(t.next(), "face size")?;
        let f = (0..n)
            .map(|_| {
                let i: i32 = parse(t.next(), "face index")?;
                if i < 0 || i as usize >= nv {
                    return Err(FormatError::invalid(format!("PLY: face index {i} out of range")));
                }
                Ok(i as u32)
            })
            .collect::<Result<Vec<_>>>()?;
        if t.next().is_some() {
            return Err(FormatError::invalid("PLY: extra face fields"));
        }
        mesh.faces.push(f);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(FormatError::invalid("PLY: trailing data"));
    }
    Ok(mesh)
}

pub fn read_ply(path: &Path) -> Result<PlyMesh> {
    decode(&fs::read_to_string(path)?)
}

pub fn write_ply(mesh: &PlyMesh, path: &Path) -> Result<()> {
    fs::write(path, encode(mesh)?)?;
    Ok(())
}

/// Corner offsets in units of voxel size, and quads wound outward.
const CORNERS: [[f32; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [0.0, 1.0, 1.0],
];
const QUADS: [[u32; 4]; 6] = [
    [0, 3, 2, 1],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [2, 3, 7, 6],
    [1, 2, 6, 5],
    [0, 4, 7, 3],
];

/// One coloured cube per voxel with a non-zero label.
pub fn voxel_mesh(grid: &SemanticVoxelGrid, palette: &[[u8; 3]]) -> Result<PlyMesh> {
    let spec = grid.spec();
    let vs = spec.voxel_size;
    let mut mesh = PlyMesh::default();
    for (i, &l) in grid.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let color = *palette
            .get(l as usize)
            .ok_or_else(|| FormatError::invalid(format!("no palette colour for class {l}")))?;
        let v = spec.unravel(i);
        let base = mesh.vertices.len() as u32;
        for c in CORNERS {
            mesh.vertices.push([
                spec.origin[0] + (v[0] as f32 + c[0]) * vs,
                spec.origin[1] + (v[1] as f32 + c[1]) * vs,
                spec.origin[2] + (v[2] as f32 + c[2]) * vs,
            ]);
            mesh.colors.push(color);
        }
        mesh.faces.extend(QUADS.iter().map(|q| q.iter().map(|k| base + k).collect()));
    }
    let n = mesh.vertices.len() / 8;
    mesh.comments.push(format!("{VOXEL_COUNT}{n}"));
    Ok(mesh)
}

/// RGB colours for the 20 SemanticKITTI completion classes.
pub const SEMANTIC_KITTI_PALETTE: [[u8; 3]; 20] = [
    [100, 100, 100],
    [100, 150, 245],
    [100, 230, 245],
    [30, 60, 150],
    [80, 30, 180],
    [100, 80, 250],
    [255, 30, 30],
    [255, 40, 200],
    [150, 30, 90],
    [255, 0, 255],
    [255, 150, 255],
    [75, 0, 75],
    [175, 0, 75],
    [255, 200, 0],
    [255, 120, 50],
    [0, 175, 0],
    [135, 60, 0],
    [150, 240, 80],
    [255, 240, 150],
    [255, 0, 0],
];

/// The SemanticKITTI colours, extended with deterministic colours for
/// classes beyond 19.
pub fn default_palette(classes: usize) -> Vec<[u8; 3]> {
    (0..classes)
        .map(|c| {
            SEMANTIC_KITTI_PALETTE.get(c).copied().unwrap_or_else(|| {
                let h = (c as u32).wrapping_mul(2_654_435_761);
                [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use flowscene_core::GridSpec;

    #[test]
    fn empty_grid_valid_header() {
        let spec = GridSpec::new([2, 2, 2], 1.0, [0.0; 3]).unwrap();
        let mesh = voxel_mesh(&SemanticVoxelGrid::empty(spec, 3), &default_palette(3)).unwrap();
        let text = encode(&mesh).unwrap();
        assert!(text.starts_with("ply\nformat ascii 1.0\ncomment voxel_count 0\nelement vertex 0\n"));
        assert!(text.ends_with("end_header\n"));
        assert_eq!(decode(&text).unwrap(), mesh);
    }

    #[test]
    fn one_voxel_one_cube() {
        let spec = GridSpec::new([2, 1, 1], 0.5, [1.0, 2.0, 3.0]).unwrap();
        let g = SemanticVoxelGrid::fully_valid(spec, 3, vec![0, 2]).unwrap();
        let mesh = voxel_mesh(&g, &default_palette(3)).unwrap();
        assert_eq!(mesh.vertices.len(), 8);
        assert_eq!(mesh.faces.len(), 6);
        assert_eq!(mesh.voxel_count(), Some(1));
        assert_eq!(mesh.vertices[0], [1.5, 2.0, 3.0]);
        assert_eq!(mesh.vertices[6], [2.0, 2.5, 3.5]);
        assert!(mesh.colors.iter().all(|&c| c == SEMANTIC_KITTI_PALETTE[2]));
        // Every cube corner is used by exactly three faces.
        let mut uses = [0; 8];
        mesh.faces.iter().flatten().for_each(|&i| uses[i as usize] += 1);
        assert_eq!(uses, [3; 8]);
    }

    #[test]
    fn malformed() {
        assert!(decode("plx\n").is_err());
        assert!(decode("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
        let spec = GridSpec::new([1, 1, 1], 1.0, [0.0; 3]).unwrap();
        let g = SemanticVoxelGrid::fully_valid(spec, 2, vec![1]).unwrap();
        let text = encode(&voxel_mesh(&g, &default_palette(2)).unwrap()).unwrap();
        let cut: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(decode(&cut).is_err());
        assert!(voxel_mesh(&g, &[[0, 0, 0]]).is_err());
    }
}
