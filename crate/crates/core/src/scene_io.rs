//! On-disk formats: camera text files, PNG images, scene directories and
//! the IMPI plane-stack container.
//!
//! Scene layout:
//!
//! ```text
//! scene/images/NNN.png   8-bit RGB
//! scene/cams/NNN.txt     camera file
//! scene/split.txt        optional; `train: i j …` and `test: …`
//! ```
//!
//! Camera file (tokens, not columns; `image_size` is optional):
//!
//! ```text
//! extrinsic
//! r00 r01 r02 t0
//! r10 r11 r12 t1
//! r20 r21 r22 t2
//! 0 0 0 1
//! intrinsic
//! fx 0 cx
//! 0 fy cy
//! 0 0 1
//! depth_range
//! z_near z_far
//! image_size
//! width height
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use nalgebra::Matrix4;

use crate::error::{Error, Result};
use crate::geometry::{Camera, DepthSampling, Intrinsics, RigidTransform};
use crate::image::{to_u8, Image, RgbImage};
use crate::mpi::{MultiplaneImage, CHANNELS};
use crate::scene::{Scene, View};

/// Orthonormality tolerance for rotations read from camera files.
pub const CAMERA_ROTATION_TOLERANCE: f64 = 1e-4;

pub const MPI_MAGIC: &[u8; 4] = b"IMPI";
pub const MPI_VERSION: u32 = 1;
/// Magic, version, W, H, D, 9 + 16 + 2 camera values.
const MPI_HEADER_BYTES: usize = 4 + 4 * 4 + 27 * 8;

/// Camera file contents before the image size is settled.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFile {
    pub camera: Camera,
    /// Whether `image_size` was present; otherwise the size was inferred as
    /// `round(2 cx) × round(2 cy)`.
    pub explicit_size: bool,
}

/// Parses a camera file's text. `path` is used only in error messages.
pub fn parse_camera_file(text: &str, path: &Path) -> Result<CameraFile> {
    let err = |line: usize, message: String| Error::CameraParse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let tokens: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
        .collect();
    let last_line = text.lines().count().max(1);

    let mut extrinsic: Option<(usize, Vec<f64>)> = None;
    let mut intrinsic: Option<(usize, Vec<f64>)> = None;
    let mut range: Option<(usize, Vec<f64>)> = None;
    let mut size: Option<(usize, Vec<f64>)> = None;
    let mut pos = 0;
    while pos < tokens.len() {
        let (line, key) = tokens[pos];
        pos += 1;
        let (slot, count) = match key {
            "extrinsic" => (&mut extrinsic, 16),
            "intrinsic" => (&mut intrinsic, 9),
            "depth_range" => (&mut range, 2),
            "image_size" => (&mut size, 2),
            other => return Err(err(line, format!("unexpected token `{other}`"))),
        };
        if slot.is_some() {
            return Err(err(line, format!("duplicate `{key}` section")));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let Some(&(l, tok)) = tokens.get(pos) else {
                return Err(err(
                    last_line,
                    format!("`{key}` needs {count} numbers, found {}", values.len()),
                ));
            };
            let v: f64 = tok
                .parse()
                .map_err(|_| err(l, format!("`{key}`: expected a number, found `{tok}`")))?;
            if !v.is_finite() {
                return Err(err(l, format!("`{key}`: non-finite value `{tok}`")));
            }
            values.push(v);
            pos += 1;
        }
        *slot = Some((line, values));
    }
    let missing = |name: &str| err(last_line, format!("missing `{name}` section"));
    let (e_line, e) = extrinsic.ok_or_else(|| missing("extrinsic"))?;
    let (k_line, k) = intrinsic.ok_or_else(|| missing("intrinsic"))?;
    let (r_line, r) = range.ok_or_else(|| missing("depth_range"))?;

    let world_to_camera =
        RigidTransform::from_matrix4(&Matrix4::from_row_slice(&e), CAMERA_ROTATION_TOLERANCE)
            .map_err(|x| err(e_line, x.to_string()))?;
    if k[1] != 0.0 || k[3] != 0.0 || k[6] != 0.0 || k[7] != 0.0 || k[8] != 1.0 {
        return Err(err(
            k_line,
            "intrinsic matrix must have the form [fx 0 cx; 0 fy cy; 0 0 1]".into(),
        ));
    }
    let (fx, cx, fy, cy) = (k[0], k[2], k[4], k[5]);
    let (width, height, explicit_size) = match size {
        Some((line, s)) => {
            let ok = |v: f64| v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64;
            if !(ok(s[0]) && ok(s[1])) {
                return Err(err(line, format!("image_size must be positive integers, got {s:?}")));
            }
            (s[0] as usize, s[1] as usize, true)
        }
        None => {
            let (w, h) = ((2.0 * cx).round(), (2.0 * cy).round());
            if !(w >= 1.0 && h >= 1.0) {
                return Err(err(
                    k_line,
                    "cannot infer image size from the principal point; add an image_size section"
                        .into(),
                ));
            }
            (w as usize, h as usize, false)
        }
    };
    let intrinsics = Intrinsics::new(fx, fy, cx, cy, width, height).map_err(|x| err(k_line, x.to_string()))?;
    let camera = Camera::new(intrinsics, world_to_camera, r[0], r[1]).map_err(|x| err(r_line, x.to_string()))?;
    Ok(CameraFile {
        camera,
        explicit_size,
    })
}

/// Parses camera text, inferring the image size when it is not given.
pub fn parse_camera(text: &str) -> Result<Camera> {
    parse_camera_file(text, Path::new("<camera>")).map(|c| c.camera)
}

pub fn read_camera(path: &Path) -> Result<Camera> {
    read_camera_file(path).map(|c| c.camera)
}

fn read_camera_file(path: &Path) -> Result<CameraFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_camera_file(&text, path)
}

/// Camera text including `image_size`; floats use the shortest form that
/// parses back to the same value.
pub fn format_camera(camera: &Camera) -> String {
    let m = camera.world_to_camera.to_matrix4();
    let k = &camera.intrinsics;
    let mut out = String::from("extrinsic\n");
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{:?}", m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out.push_str("intrinsic\n");
    out.push_str(&format!("{:?} 0.0 {:?}\n0.0 {:?} {:?}\n0.0 0.0 1.0\n", k.fx, k.cx, k.fy, k.cy));
    out.push_str(&format!("depth_range\n{:?} {:?}\n", camera.z_near, camera.z_far));
    out.push_str(&format!("image_size\n{} {}\n", k.width, k.height));
    out
}

pub fn write_camera(path: &Path, camera: &Camera) -> Result<()> {
    fs::write(path, format_camera(camera)).map_err(|e| Error::io(path, e))
}

/// Reads a PNG as RGB in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    Image::from_vec(w as usize, h as usize, 3, data)
}

/// Writes an RGB image in `[0, 1]` as 8-bit PNG.
pub fn write_image(path: &Path, image: &RgbImage) -> Result<()> {
    if image.channels != 3 {
        return Err(Error::ShapeMismatch(format!(
            "expected an RGB image, got {} channels",
            image.channels
        )));
    }
    let bytes: Vec<u8> = image.data.iter().map(|&v| to_u8(v)).collect();
    let buf = ImageBuffer::<Rgb<u8>, _>::from_raw(image.width as u32, image.height as u32, bytes)
        .expect("buffer length matches image shape");
    buf.save_with_format(path, ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a single-channel map as 16-bit PNG, mapping `[lo, hi]` linearly
/// onto `[0, 65535]` with clamping.
pub fn write_gray16(path: &Path, values: &Image<f32>, lo: f64, hi: f64) -> Result<()> {
    if values.channels != 1 {
        return Err(Error::ShapeMismatch(format!(
            "expected a single-channel image, got {} channels",
            values.channels
        )));
    }
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("empty normalization range [{lo}, {hi}]")));
    }
    let px: Vec<u16> = values
        .data
        .iter()
        .map(|&v| ((v as f64 - lo) / (hi - lo) * 65535.0).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(values.width as u32, values.height as u32, px)
        .expect("buffer length matches image shape");
    buf.save_with_format(path, ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Numeric file stems in `dir` with the given extension, sorted by value.
fn numbered_files(dir: &Path, ext: &str) -> Result<Vec<(u64, String)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if let Ok(n) = stem.parse::<u64>() {
            out.push((n, stem.to_string()));
        }
    }
    out.sort();
    Ok(out)
}

fn parse_split(text: &str, path: &Path, views: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let err = |line: usize, message: String| Error::Scene {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut train = None;
    let mut test = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| err(line_no, format!("expected `train:` or `test:`, found `{line}`")))?;
        let indices = rest
            .split_whitespace()
            .map(|t| {
                let i: usize = t.parse().map_err(|_| err(line_no, format!("bad view index `{t}`")))?;
                if i >= views {
                    return Err(err(line_no, format!("view index {i} out of range ({views} views)")));
                }
                Ok(i)
            })
            .collect::<Result<Vec<_>>>()?;
        let slot = match key.trim() {
            "train" => &mut train,
            "test" => &mut test,
            other => return Err(err(line_no, format!("unknown split `{other}`"))),
        };
        if slot.is_some() {
            return Err(err(line_no, format!("duplicate `{}` line", key.trim())));
        }
        *slot = Some(indices);
    }
    let train = train.ok_or_else(|| err(1, "missing `train:` line".into()))?;
    // Without a test line, every view not used for training is held out.
    let test = test.unwrap_or_else(|| (0..views).filter(|i| !train.contains(i)).collect());
    Ok((train, test))
}

/// Loads `images/NNN.png` + `cams/NNN.txt` pairs and the optional split.
pub fn load_scene(root: &Path) -> Result<Scene> {
    let scene_err = |message: String| Error::Scene {
        path: root.to_path_buf(),
        message,
    };
    let (img_dir, cam_dir) = (root.join("images"), root.join("cams"));
    for dir in [&img_dir, &cam_dir] {
        if !dir.is_dir() {
            return Err(scene_err(format!("missing directory {}", dir.display())));
        }
    }
    let images = numbered_files(&img_dir, "png")?;
    let cams = numbered_files(&cam_dir, "txt")?;
    if images.is_empty() && cams.is_empty() {
        return Err(scene_err("no views found".into()));
    }
    for (n, stem) in &images {
        if !cams.iter().any(|(m, _)| m == n) {
            return Err(scene_err(format!("view {stem} has an image but no camera file")));
        }
    }
    for (n, stem) in &cams {
        if !images.iter().any(|(m, _)| m == n) {
            return Err(scene_err(format!("view {stem} has a camera file but no image")));
        }
    }
    let mut views = Vec::with_capacity(images.len());
    for (n, stem) in &images {
        let image_path = img_dir.join(format!("{stem}.png"));
        let cam_stem = &cams.iter().find(|(m, _)| m == n).unwrap().1;
        let cam_path = cam_dir.join(format!("{cam_stem}.txt"));
        let image = read_image(&image_path)?;
        let CameraFile {
            mut camera,
            explicit_size,
        } = read_camera_file(&cam_path)?;
        let k = &mut camera.intrinsics;
        if explicit_size && (k.width, k.height) != (image.width, image.height) {
            return Err(scene_err(format!(
                "view {stem}: image is {}x{} but the camera declares {}x{}",
                image.width, image.height, k.width, k.height
            )));
        }
        k.width = image.width;
        k.height = image.height;
        views.push(View {
            name: stem.clone(),
            camera,
            image,
        });
    }
    let split_path = root.join("split.txt");
    let scene = if split_path.exists() {
        let text = fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
        let (train, test) = parse_split(&text, &split_path, views.len())?;
        Scene { views, train, test }
    } else {
        Scene::all_train(views)
    };
    scene.validate().map_err(|e| scene_err(e.to_string()))?;
    Ok(scene)
}

fn index_list(indices: &[usize]) -> String {
    indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

/// Writes a scene directory. Views are renumbered `000, 001, …` in order.
pub fn write_scene(root: &Path, scene: &Scene) -> Result<()> {
    scene.validate()?;
    let (img_dir, cam_dir) = (root.join("images"), root.join("cams"));
    for dir in [root, &img_dir, &cam_dir] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let width = scene.views.len().saturating_sub(1).to_string().len().max(3);
    for (i, view) in scene.views.iter().enumerate() {
        let stem = format!("{i:0width$}");
        write_image(&img_dir.join(format!("{stem}.png")), &view.image)?;
        write_camera(&cam_dir.join(format!("{stem}.txt")), &view.camera)?;
    }
    let split = format!("train: {}\ntest: {}\n", index_list(&scene.train), index_list(&scene.test));
    let split_path = root.join("split.txt");
    fs::write(&split_path, split).map_err(|e| Error::io(&split_path, e))
}

/// Serializes a plane stack in the IMPI format.
pub fn encode_mpi(mpi: &MultiplaneImage) -> Vec<u8> {
    let cam = mpi.reference();
    let k = cam.intrinsics.matrix();
    let e = cam.world_to_camera.to_matrix4();
    let planes = mpi.planes();
    let mut out = Vec::with_capacity(MPI_HEADER_BYTES + 8 * mpi.plane_count() + 4 * planes.len());
    out.extend_from_slice(MPI_MAGIC);
    for v in [MPI_VERSION, mpi.width() as u32, mpi.height() as u32, mpi.plane_count() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for r in 0..3 {
        for c in 0..3 {
            out.extend_from_slice(&k[(r, c)].to_le_bytes());
        }
    }
    for r in 0..4 {
        for c in 0..4 {
            out.extend_from_slice(&e[(r, c)].to_le_bytes());
        }
    }
    out.extend_from_slice(&cam.z_near.to_le_bytes());
    out.extend_from_slice(&cam.z_far.to_le_bytes());
    for d in mpi.sampling().depths() {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in planes {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses IMPI bytes; `path` is used only in error messages.
pub fn decode_mpi(bytes: &[u8], path: &Path) -> Result<MultiplaneImage> {
    let path_buf = || path.to_path_buf();
    let malformed = |message: String| Error::MalformedMpi {
        path: path_buf(),
        message,
    };
    let truncated = |expected: usize| Error::Truncated {
        path: path_buf(),
        expected: expected as u64,
        found: bytes.len() as u64,
    };
    if bytes.len() < 4 || &bytes[..4] != MPI_MAGIC {
        return Err(Error::BadMagic { path: path_buf() });
    }
    if bytes.len() < 8 {
        return Err(truncated(MPI_HEADER_BYTES));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != MPI_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path_buf(),
            version,
        });
    }
    if bytes.len() < MPI_HEADER_BYTES {
        return Err(truncated(MPI_HEADER_BYTES));
    }
    let (w, h, d) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    if w == 0 || h == 0 || d == 0 {
        return Err(malformed(format!("zero dimension {w}x{h}x{d}")));
    }
    let payload = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(d))
        .and_then(|n| n.checked_mul(CHANNELS * 4))
        .and_then(|n| n.checked_add(MPI_HEADER_BYTES + 8 * d))
        .ok_or_else(|| malformed(format!("dimensions {w}x{h}x{d} overflow")))?;
    if bytes.len() < payload {
        return Err(truncated(payload));
    }
    if bytes.len() > payload {
        return Err(malformed(format!(
            "{} trailing bytes after the payload",
            bytes.len() - payload
        )));
    }
    let mut o = 20;
    let mut next = || {
        let v = f64_at(o);
        o += 8;
        v
    };
    let k: Vec<f64> = (0..9).map(|_| next()).collect();
    let e: Vec<f64> = (0..16).map(|_| next()).collect();
    let (z_near, z_far) = (next(), next());
    let depths: Vec<f64> = (0..d).map(|_| next()).collect();
    if k[1] != 0.0 || k[3] != 0.0 || k[6] != 0.0 || k[7] != 0.0 || k[8] != 1.0 {
        return Err(malformed("intrinsic matrix is not [fx 0 cx; 0 fy cy; 0 0 1]".into()));
    }
    let intrinsics = Intrinsics::new(k[0], k[4], k[2], k[5], w, h).map_err(|x| malformed(x.to_string()))?;
    let pose = RigidTransform::from_matrix4(&Matrix4::from_row_slice(&e), CAMERA_ROTATION_TOLERANCE)
        .map_err(|x| malformed(x.to_string()))?;
    let camera = Camera::new(intrinsics, pose, z_near, z_far).map_err(|x| malformed(x.to_string()))?;
    let sampling = DepthSampling::from_depths(depths).map_err(|x| malformed(x.to_string()))?;
    let start = MPI_HEADER_BYTES + 8 * d;
    let planes: Vec<f32> = bytes[start..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    MultiplaneImage::new(camera, sampling, planes).map_err(|x| malformed(x.to_string()))
}

pub fn save_mpi(mpi: &MultiplaneImage, path: &Path) -> Result<()> {
    fs::write(path, encode_mpi(mpi)).map_err(|e| Error::io(path, e))
}

pub fn load_mpi(path: &Path) -> Result<MultiplaneImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mpi(&bytes, path)
}

/// `root/name`, or an error if it exists and `force` is false.
pub fn output_path(root: &Path, name: &str, force: bool) -> Result<PathBuf> {
    let p = root.join(name);
    if p.exists() && !force {
        return Err(Error::InvalidArgument(format!(
            "{} already exists (use --force to overwrite)",
            p.display()
        )));
    }
    Ok(p)
}
