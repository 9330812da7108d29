//! Named-tensor checkpoint container.
//!
//! Layout: a UTF-8 text header, then raw little-endian `f32` payloads.
//!
//! ```text
//! select-rank-checkpoint 1
//! config <key> <value>
//! param <name> <dim>x<dim>... <byte offset>
//! end
//! <payload bytes>
//! ```
//!
//! Offsets are relative to the first payload byte and follow header order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "select-rank-checkpoint 1";

pub fn write_checkpoint<W: Write>(
    mut w: W,
    config: &BTreeMap<String, String>,
    store: &ParameterStore,
) -> Result<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    for (k, v) in config {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(Error::Checkpoint(format!("config entry {k:?} not representable")));
        }
        header.push_str(&format!("config {k} {v}\n"));
    }
    let mut offset = 0usize;
    for p in store.iter() {
        if p.name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("parameter name {:?} has whitespace", p.name)));
        }
        let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("param {} {} {}\n", p.name, dims.join("x"), offset));
        offset += 4 * p.value.numel();
    }
    header.push_str("end\n");
    w.write_all(header.as_bytes())?;
    let mut payload = Vec::with_capacity(offset);
    for p in store.iter() {
        for &v in p.value.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(BTreeMap<String, String>, ParameterStore)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let end_marker = b"\nend\n";
    let header_end = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?
        + end_marker.len();
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let payload = &bytes[header_end..];

    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        _ => return Err(Error::Checkpoint("bad magic line".into())),
    }
    let mut config = BTreeMap::new();
    let mut store = ParameterStore::new();
    for (lineno, line) in lines {
        let bad = |msg: &str| Error::parse("checkpoint", lineno + 1, msg);
        if line == "end" {
            break;
        }
        let mut parts = line.splitn(3, ' ');
        match parts.next() {
            Some("config") => {
                let key = parts.next().ok_or_else(|| bad("config without key"))?;
                let value = parts.next().unwrap_or("");
                config.insert(key.to_string(), value.to_string());
            }
            Some("param") => {
                let name = parts.next().ok_or_else(|| bad("param without name"))?;
                let rest = parts.next().ok_or_else(|| bad("param without shape"))?;
                let (dims, off) = rest.split_once(' ').ok_or_else(|| bad("param without offset"))?;
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("bad shape"))?;
                let offset: usize = off.parse().map_err(|_| bad("bad offset"))?;
                let numel: usize = shape.iter().product();
                let chunk = payload
                    .get(offset..offset + 4 * numel)
                    .ok_or_else(|| bad("payload truncated"))?;
                let data = chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                    .collect();
                store.insert(name, Tensor::new(shape, data)?)?;
            }
            _ => return Err(bad("unknown header record")),
        }
    }
    Ok((config, store))
}

pub fn save_checkpoint(path: &Path, config: &BTreeMap<String, String>, store: &ParameterStore) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, config, store)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(BTreeMap<String, String>, ParameterStore)> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_exact_after_f32_narrowing(
            values in proptest::collection::vec(-1e6f64..1e6, 1..40),
            cols in 1usize..4,
        ) {
            let rows = values.len();
            let mut store = ParameterStore::new();
            store.insert("a.weight", Tensor::vector(values.clone()).unwrap()).unwrap();
            store.insert("b", Tensor::matrix(rows, cols, vec![0.25; rows * cols]).unwrap()).unwrap();
            let mut config = BTreeMap::new();
            config.insert("d_model".to_string(), "16".to_string());
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &config, &store).unwrap();
            let (cfg, loaded) = read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(cfg, config);
            for (a, b) in store.iter().zip(loaded.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(a.value.shape(), b.value.shape());
                for (x, y) in a.value.data().iter().zip(b.value.data()) {
                    prop_assert_eq!((*x as f32) as f64, *y);
                }
            }
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &BTreeMap::new(), &store).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
