//! Binary containers for trained models and online checkpoints.
//!
//! Layout (little endian): 8-byte magic, `u32` format version, then the
//! payload. Matrices are written column by column as raw `f64` bits, so a
//! save/load cycle is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ShapeBuilder};

use crate::error::{Error, Result};
use crate::online_learning::{LambdaPolicy, OnlineState};
use crate::sparse_coding::{CodingConfig, Dictionary};
use crate::supervised_pretrain::DiscriminativeModel;

pub const MODEL_MAGIC: &[u8; 8] = b"DCTADMDL";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DCTADCKP";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound on any stored dimension; guards allocation on corrupt input.
const MAX_DIM: u64 = 1 << 24;

fn write_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> Result<()> {
    for col in m.columns() {
        for &v in col {
            w.write_f64::<LE>(v)?;
        }
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut data = vec![0.0; rows * cols];
    r.read_f64_into::<LE>(&mut data)?;
    Array2::from_shape_vec((rows, cols).f(), data)
        .map(|a| a.as_standard_layout().into_owned())
        .map_err(|e| Error::Format(e.to_string()))
}

fn read_dim<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let v = r.read_u64::<LE>()?;
    if v == 0 || v > MAX_DIM {
        return Err(Error::Format(format!("implausible {what} {v}")));
    }
    Ok(v as usize)
}

fn write_header<W: Write>(w: &mut W, magic: &[u8; 8]) -> Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LE>(FORMAT_VERSION)?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut found = [0u8; 8];
    r.read_exact(&mut found)?;
    if &found != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&found),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.read_u32::<LE>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

fn write_model_body<W: Write>(w: &mut W, model: &DiscriminativeModel) -> Result<()> {
    let (m, n, c) = (model.signal_dim(), model.n_atoms(), model.n_classes());
    for d in [m, n, c, model.coding.sparsity] {
        w.write_u64::<LE>(d as u64)?;
    }
    w.write_f64::<LE>(model.coding.residual_tol)?;
    write_matrix(w, &model.dictionary.atoms().to_owned())?;
    write_matrix(w, &model.classifier)?;
    write_matrix(w, &model.consistency)?;
    for &k in &model.class_of_atom {
        w.write_u64::<LE>(k as u64)?;
    }
    Ok(())
}

fn read_model_body<R: Read>(r: &mut R) -> Result<DiscriminativeModel> {
    let m = read_dim(r, "signal dimension")?;
    let n = read_dim(r, "atom count")?;
    let c = read_dim(r, "class count")?;
    let sparsity = read_dim(r, "sparsity")?;
    let residual_tol = r.read_f64::<LE>()?;
    let atoms = read_matrix(r, m, n)?;
    let classifier = read_matrix(r, c, n)?;
    let consistency = read_matrix(r, n, n)?;
    let mut class_of_atom = Vec::with_capacity(n);
    for _ in 0..n {
        class_of_atom.push(r.read_u64::<LE>()? as usize);
    }
    DiscriminativeModel::new(
        Dictionary::unnormalized(atoms)?,
        classifier,
        consistency,
        class_of_atom,
        CodingConfig {
            sparsity,
            residual_tol,
        },
    )
}

fn expect_end<R: Read>(r: &mut R) -> Result<()> {
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(())
}

fn truncated(e: Error) -> Error {
    match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Format("container is truncated".into())
        }
        other => other,
    }
}

pub fn encode_model(model: &DiscriminativeModel) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_header(&mut buf, MODEL_MAGIC)?;
    write_model_body(&mut buf, model)?;
    Ok(buf)
}

pub fn decode_model(bytes: &[u8]) -> Result<DiscriminativeModel> {
    let mut r = bytes;
    let model = (|| {
        read_header(&mut r, MODEL_MAGIC)?;
        read_model_body(&mut r)
    })()
    .map_err(truncated)?;
    expect_end(&mut r)?;
    Ok(model)
}

pub fn save_model(model: &DiscriminativeModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<DiscriminativeModel> {
    decode_model(&std::fs::read(path)?)
}

pub fn encode_checkpoint(state: &OnlineState) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_header(&mut buf, CHECKPOINT_MAGIC)?;
    write_model_body(&mut buf, state.model())?;
    buf.write_f64::<LE>(state.phi())?;
    let (tag, l1, l2) = match state.policy() {
        LambdaPolicy::GramNorm => (0u8, 0.0, 0.0),
        LambdaPolicy::ModelNorms => (1, 0.0, 0.0),
        LambdaPolicy::Fixed { lambda1, lambda2 } => (2, lambda1, lambda2),
    };
    buf.write_u8(tag)?;
    buf.write_f64::<LE>(l1)?;
    buf.write_f64::<LE>(l2)?;
    buf.write_u64::<LE>(state.samples_seen())?;
    buf.write_u64::<LE>(state.updates_since_check())?;
    write_matrix(&mut buf, &state.gram().to_owned())?;
    write_matrix(&mut buf, &state.gram_inv().to_owned())?;
    for &v in state.spectral_hint() {
        buf.write_f64::<LE>(v)?;
    }
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<OnlineState> {
    let mut r = bytes;
    let state = (|| {
        read_header(&mut r, CHECKPOINT_MAGIC)?;
        let model = read_model_body(&mut r)?;
        let n = model.n_atoms();
        let phi = r.read_f64::<LE>()?;
        let tag = r.read_u8()?;
        let (l1, l2) = (r.read_f64::<LE>()?, r.read_f64::<LE>()?);
        let policy = match tag {
            0 => LambdaPolicy::GramNorm,
            1 => LambdaPolicy::ModelNorms,
            2 => LambdaPolicy::Fixed {
                lambda1: l1,
                lambda2: l2,
            },
            t => return Err(Error::Format(format!("unknown lambda policy tag {t}"))),
        };
        let samples_seen = r.read_u64::<LE>()?;
        let updates_since_check = r.read_u64::<LE>()?;
        let gram = read_matrix(&mut r, n, n)?;
        let gram_inv = read_matrix(&mut r, n, n)?;
        let mut hint = vec![0.0; n];
        r.read_f64_into::<LE>(&mut hint)?;
        OnlineState::from_parts(
            model,
            gram,
            gram_inv,
            phi,
            policy,
            samples_seen,
            updates_since_check,
            Array1::from(hint),
        )
    })()
    .map_err(truncated)?;
    expect_end(&mut r)?;
    Ok(state)
}

pub fn save_checkpoint(state: &OnlineState, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(state)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<OnlineState> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sparse_coding::batch_code;
    use rand_distr::{Distribution, StandardNormal};

    fn model(seed: u64) -> DiscriminativeModel {
        let mut r = rng::seeded(seed);
        let mut g =
            |rows, cols| Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut r));
        let d = Dictionary::normalized(g(5, 6)).unwrap();
        DiscriminativeModel::new(
            d,
            g(3, 6),
            g(6, 6),
            vec![0, 0, 1, 1, 2, 2],
            CodingConfig {
                sparsity: 2,
                residual_tol: 1e-7,
            },
        )
        .unwrap()
    }

    fn state() -> OnlineState {
        let m = model(1);
        let mut r = rng::seeded(2);
        let y = Array2::from_shape_fn((5, 40), |_| StandardNormal.sample(&mut r));
        let x = batch_code(&m.dictionary, y.view(), &m.coding).unwrap();
        let mut st = OnlineState::init(
            m,
            &x,
            0.9,
            LambdaPolicy::Fixed {
                lambda1: 0.5,
                lambda2: 2.0,
            },
        )
        .unwrap();
        for k in 0..10 {
            st.toddler_step(y.column(k)).unwrap();
        }
        st
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let m = model(3);
        let bytes = encode_model(&m).unwrap();
        assert_eq!(&bytes[..8], MODEL_MAGIC);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back).unwrap(), bytes);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let st = state();
        let bytes = encode_checkpoint(&st).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, st);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let mut a = state();
        let mut b = decode_checkpoint(&encode_checkpoint(&a).unwrap()).unwrap();
        let mut r = rng::seeded(8);
        for _ in 0..5 {
            let y = Array1::from_shape_fn(5, |_| StandardNormal.sample(&mut r));
            assert_eq!(
                a.toddler_step(y.view()).unwrap(),
                b.toddler_step(y.view()).unwrap()
            );
        }
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let bytes = encode_model(&model(4)).unwrap();
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_model(&extra), Err(Error::Format(_))));
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(matches!(
            decode_model(&wrong_version),
            Err(Error::Format(_))
        ));
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
        let mut huge = bytes;
        huge[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_model(&huge), Err(Error::Format(_))));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let st = state();
        save_model(st.model(), &dir.path().join("m.bin")).unwrap();
        save_checkpoint(&st, &dir.path().join("c.bin")).unwrap();
        assert_eq!(&load_model(&dir.path().join("m.bin")).unwrap(), st.model());
        assert_eq!(load_checkpoint(&dir.path().join("c.bin")).unwrap(), st);
    }
}
