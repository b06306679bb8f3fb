//! Model file format: little-endian binary, versioned.
//!
//! ```text
//! magic   4 bytes  "FSRM"
//! version u16      1
//! team    u8       0 = black, 1 = white
//! role    u8       0 = goal, 1 = defense, 2 = midfield, 3 = striker
//! input_w u32      regressor input width (along-rod px)
//! input_h u32      regressor input height (across-rod px)
//! n_conv  u8       number of conv blocks
//! per conv block: out_c, in_c, kh, kw   (4 × u32)
//! head: out, in                          (2 × u32)
//! params: raw f32 little-endian, canonical order
//!         (conv1 w, conv1 b, ..., head w, head b)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array4};

use super::{Conv2d, Linear, NnError, RegressorModel, HEAD_OUT, KERNEL};
use crate::rods::{Role, RodId, Team};

pub const MODEL_MAGIC: [u8; 4] = *b"FSRM";
pub const MODEL_FORMAT_VERSION: u16 = 1;

fn team_code(team: Team) -> u8 {
    match team {
        Team::Black => 0,
        Team::White => 1,
    }
}

fn role_code(role: Role) -> u8 {
    match role {
        Role::Goal => 0,
        Role::Defense => 1,
        Role::Midfield => 2,
        Role::Striker => 3,
    }
}

fn decode_rod(team: u8, role: u8) -> Result<RodId, NnError> {
    let team = match team {
        0 => Team::Black,
        1 => Team::White,
        other => return Err(NnError::BadModelFile(format!("unknown team code {other}"))),
    };
    let role = match role {
        0 => Role::Goal,
        1 => Role::Defense,
        2 => Role::Midfield,
        3 => Role::Striker,
        other => return Err(NnError::BadModelFile(format!("unknown role code {other}"))),
    };
    Ok(RodId::new(team, role))
}

fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>, NnError> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn save_model(model: &RegressorModel<f32>, path: &Path) -> Result<(), NnError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[team_code(model.rod.team), role_code(model.rod.role)])?;
    w.write_all(&(model.input_w as u32).to_le_bytes())?;
    w.write_all(&(model.input_h as u32).to_le_bytes())?;
    w.write_all(&[model.convs.len() as u8])?;
    for c in &model.convs {
        let (oc, ic, kh, kw) = c.weight.dim();
        for d in [oc, ic, kh, kw] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    let (ho, hi) = model.head.weight.dim();
    w.write_all(&(ho as u32).to_le_bytes())?;
    w.write_all(&(hi as u32).to_le_bytes())?;
    for slice in model.param_slices() {
        write_f32s(&mut w, slice)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<RegressorModel<f32>, NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MODEL_MAGIC {
        return Err(NnError::BadModelFile("bad magic".into()));
    }
    let mut ver = [0u8; 2];
    r.read_exact(&mut ver)?;
    let version = u16::from_le_bytes(ver);
    if version != MODEL_FORMAT_VERSION {
        return Err(NnError::BadModelFile(format!("unsupported version {version}")));
    }
    let mut tr = [0u8; 2];
    r.read_exact(&mut tr)?;
    let rod = decode_rod(tr[0], tr[1])?;
    let input_w = read_u32(&mut r)? as usize;
    let input_h = read_u32(&mut r)? as usize;
    let mut nc = [0u8; 1];
    r.read_exact(&mut nc)?;
    let n_conv = nc[0] as usize;
    if n_conv == 0 || n_conv > 16 {
        return Err(NnError::BadModelFile(format!("implausible conv count {n_conv}")));
    }
    let mut conv_dims = Vec::with_capacity(n_conv);
    for _ in 0..n_conv {
        let oc = read_u32(&mut r)? as usize;
        let ic = read_u32(&mut r)? as usize;
        let kh = read_u32(&mut r)? as usize;
        let kw = read_u32(&mut r)? as usize;
        if kh != KERNEL || kw != KERNEL {
            return Err(NnError::BadModelFile(format!("unsupported kernel {kh}x{kw}")));
        }
        conv_dims.push((oc, ic));
    }
    let head_out = read_u32(&mut r)? as usize;
    let head_in = read_u32(&mut r)? as usize;
    if head_out != HEAD_OUT {
        return Err(NnError::BadModelFile(format!("head output dim {head_out}, expected {HEAD_OUT}")));
    }

    let mut convs = Vec::with_capacity(n_conv);
    for &(oc, ic) in &conv_dims {
        let wv = read_f32s(&mut r, oc * ic * KERNEL * KERNEL)?;
        let bv = read_f32s(&mut r, oc)?;
        convs.push(Conv2d {
            weight: Array4::from_shape_vec((oc, ic, KERNEL, KERNEL), wv)
                .map_err(|e| NnError::BadModelFile(e.to_string()))?,
            bias: Array1::from_vec(bv),
        });
    }
    let wv = read_f32s(&mut r, head_out * head_in)?;
    let bv = read_f32s(&mut r, head_out)?;
    let head = Linear {
        weight: Array2::from_shape_vec((head_out, head_in), wv)
            .map_err(|e| NnError::BadModelFile(e.to_string()))?,
        bias: Array1::from_vec(bv),
    };
    let mut tail = Vec::new();
    r.read_to_end(&mut tail)?;
    if !tail.is_empty() {
        return Err(NnError::BadModelFile(format!("{} trailing bytes", tail.len())));
    }
    let model = RegressorModel { rod, input_w, input_h, convs, head };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bit_exact() {
        let rod = RodId::new(Team::White, Role::Midfield);
        let model: RegressorModel<f32> = RegressorModel::init(rod, 64, 32, 21).unwrap();
        let dir = std::env::temp_dir().join(format!("foostate-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.fsrm");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, model);
        // saving the loaded model reproduces the same bytes
        let path2 = dir.join("m2.fsrm");
        save_model(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = std::env::temp_dir().join(format!("foostate-badmodel-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.fsrm");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(load_model(&path).is_err());

        let rod = RodId::new(Team::Black, Role::Goal);
        let model: RegressorModel<f32> = RegressorModel::init(rod, 32, 16, 0).unwrap();
        let good = dir.join("good.fsrm");
        save_model(&model, &good).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_model(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
